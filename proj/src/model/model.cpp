#include "somnonet/model/model.hpp"

#include "somnonet/errors.hpp"
#include "somnonet/nn/ops.hpp"
#include "somnonet/rng.hpp"

#include <algorithm>

namespace somnonet::model {

using nn::Mode;
using nn::Tensor;

std::string_view group_name(Group group)
{
    switch (group) {
    case Group::encoder:
        return "encoder";
    case Group::sequence:
        return "sequence";
    case Group::classifier:
        return "classifier";
    }
    return "?";
}

namespace {

template <class T>
void add_conv(std::vector<NamedTensor<T>>& out, const std::string& prefix,
              const nn::Conv1dParams<T>& p, Group g)
{
    out.push_back({prefix + ".weight", p.weight, g, false});
    out.push_back({prefix + ".bias", p.bias, g, false});
}

template <class T>
void add_bn(std::vector<NamedTensor<T>>& out, const std::string& prefix,
            const nn::BatchNormParams<T>& p, Group g)
{
    out.push_back({prefix + ".gamma", p.gamma, g, false});
    out.push_back({prefix + ".beta", p.beta, g, false});
    out.push_back({prefix + ".running_mean", p.running_mean, g, true});
    out.push_back({prefix + ".running_var", p.running_var, g, true});
}

template <class T>
void add_gru(std::vector<NamedTensor<T>>& out, const std::string& prefix, const nn::GruParams<T>& p,
             Group g)
{
    out.push_back({prefix + ".weight_ih", p.weight_ih, g, false});
    out.push_back({prefix + ".weight_hh", p.weight_hh, g, false});
    out.push_back({prefix + ".bias_ih", p.bias_ih, g, false});
    out.push_back({prefix + ".bias_hh", p.bias_hh, g, false});
}

template <class T>
void add_bigru(std::vector<NamedTensor<T>>& out, const std::string& prefix,
               const BiGruParams<T>& p, Group g)
{
    add_gru(out, prefix + ".fwd", p.fwd, g);
    add_gru(out, prefix + ".bwd", p.bwd, g);
}

template <class T>
BiGruParams<T> make_bigru(std::size_t in, std::size_t hidden, Rng& rng)
{
    BiGruParams<T> p;
    p.fwd = nn::make_gru<T>(in, hidden, rng);
    p.bwd = nn::make_gru<T>(in, hidden, rng);
    return p;
}

template <class T>
std::vector<McfemBlock<T>> make_encoder(const ModelConfig& cfg, Rng& rng)
{
    std::vector<McfemBlock<T>> out;
    for (const auto& bc : cfg.blocks()) {
        McfemBlock<T> b;
        b.config = bc;
        for (std::size_t i = 0; i < bc.dilations.size(); ++i) {
            b.branch.push_back(nn::make_conv1d<T>(bc.in_ch, bc.branch_ch, bc.kernel_size, rng));
            b.branch_bn.push_back(nn::make_batchnorm<T>(bc.branch_ch));
        }
        b.fuse = nn::make_conv1d<T>(bc.branch_ch * bc.dilations.size(), bc.out_ch, 1, rng);
        b.fuse_bn = nn::make_batchnorm<T>(bc.out_ch);
        out.push_back(std::move(b));
    }
    return out;
}

template <class T>
std::vector<nn::LinearParams<T>> make_classifier(const ModelConfig& cfg, Rng& rng)
{
    std::vector<nn::LinearParams<T>> out;
    const std::size_t in = cfg.classifier_input();
    for (std::size_t i = 0; i + 1 < cfg.classifier_layers; ++i) {
        out.push_back(nn::make_linear<T>(in, in, rng));
    }
    out.push_back(nn::make_linear<T>(in, cfg.n_classes, rng));
    return out;
}

template <class T>
nn::Conv1dParams<T> copy(const nn::Conv1dParams<T>& p)
{
    return {p.weight.clone(), p.bias.clone()};
}

template <class T>
nn::BatchNormParams<T> copy(const nn::BatchNormParams<T>& p)
{
    nn::BatchNormParams<T> out = p;
    out.gamma = p.gamma.clone();
    out.beta = p.beta.clone();
    out.running_mean = p.running_mean.clone();
    out.running_var = p.running_var.clone();
    return out;
}

template <class T>
std::vector<McfemBlock<T>> copy_encoder(const std::vector<McfemBlock<T>>& src)
{
    std::vector<McfemBlock<T>> out;
    for (const auto& b : src) {
        McfemBlock<T> c;
        c.config = b.config;
        for (const auto& p : b.branch) {
            c.branch.push_back(copy(p));
        }
        for (const auto& p : b.branch_bn) {
            c.branch_bn.push_back(copy(p));
        }
        c.fuse = copy(b.fuse);
        c.fuse_bn = copy(b.fuse_bn);
        out.push_back(std::move(c));
    }
    return out;
}

void check_encoder_compatible(const ModelConfig& parent, const ModelConfig& child)
{
    if (parent.branch_channels != child.branch_channels ||
        parent.block_channels != child.block_channels || parent.dilations != child.dilations ||
        parent.kernel_size != child.kernel_size || parent.feature_dim != child.feature_dim ||
        parent.pool_window != child.pool_window || parent.pool_stride != child.pool_stride) {
        throw ConfigError("encoder dimensions differ from the parent model");
    }
}

template <class T>
Model<T> derive(const Model<T>& parent, ModelConfig cfg, Arch arch, std::uint64_t seed)
{
    cfg.arch = arch;
    validate(cfg);
    check_encoder_compatible(parent.config, cfg);
    cfg.input_mean = parent.config.input_mean;
    cfg.input_std = parent.config.input_std;
    cfg.n_chunks = parent.config.n_chunks;
    Rng rng(seed);
    Model<T> m;
    m.config = cfg;
    m.encoder = copy_encoder(parent.encoder);
    if (arch == Arch::nano) {
        m.compact = make_bigru<T>(cfg.feature_dim, cfg.nano_hidden, rng);
    }
    m.classifier = make_classifier<T>(cfg, rng);
    m.freeze_encoder();
    return m;
}

template <class T>
Tensor<T> run_bigru_stack(const Tensor<T>& x, const std::vector<BiGruParams<T>>& layers)
{
    Tensor<T> h = x;
    for (const auto& l : layers) {
        h = nn::bigru(h, l.fwd, l.bwd);
    }
    return h;
}

} // namespace

template <class T>
std::vector<NamedTensor<T>> Model<T>::tensors() const
{
    std::vector<NamedTensor<T>> out;
    for (std::size_t b = 0; b < encoder.size(); ++b) {
        const std::string prefix = "encoder.b" + std::to_string(b);
        const auto& blk = encoder[b];
        for (std::size_t i = 0; i < blk.branch.size(); ++i) {
            const std::string bp = prefix + ".branch" + std::to_string(i);
            add_conv(out, bp + ".conv", blk.branch[i], Group::encoder);
            add_bn(out, bp + ".bn", blk.branch_bn[i], Group::encoder);
        }
        add_conv(out, prefix + ".fuse.conv", blk.fuse, Group::encoder);
        add_bn(out, prefix + ".fuse.bn", blk.fuse_bn, Group::encoder);
    }
    if (local) {
        add_bigru(out, "local", *local, Group::sequence);
    }
    for (std::size_t l = 0; l < global.size(); ++l) {
        add_bigru(out, "global.l" + std::to_string(l), global[l], Group::sequence);
    }
    if (compact) {
        add_bigru(out, "compact", *compact, Group::sequence);
    }
    for (std::size_t l = 0; l < classifier.size(); ++l) {
        const std::string p = "classifier.l" + std::to_string(l);
        out.push_back({p + ".weight", classifier[l].weight, Group::classifier, false});
        out.push_back({p + ".bias", classifier[l].bias, Group::classifier, false});
    }
    std::sort(out.begin(), out.end(),
              [](const NamedTensor<T>& a, const NamedTensor<T>& b) { return a.name < b.name; });
    return out;
}

template <class T>
std::vector<Tensor<T>> Model<T>::trainable() const
{
    std::vector<Tensor<T>> out;
    for (const auto& nt : tensors()) {
        if (nt.buffer || (encoder_frozen && nt.group == Group::encoder)) {
            continue;
        }
        out.push_back(nt.tensor);
    }
    return out;
}

template <class T>
void Model<T>::freeze_encoder()
{
    encoder_frozen = true;
    for (auto& nt : tensors()) {
        if (nt.group == Group::encoder) {
            nt.tensor.set_requires_grad(false);
        }
    }
}

template <class T>
Model<T> build_somnonet(const ModelConfig& in_cfg, std::uint64_t seed)
{
    ModelConfig cfg = in_cfg;
    cfg.arch = Arch::somnonet;
    validate(cfg);
    Rng rng(seed);
    Model<T> m;
    m.config = cfg;
    m.encoder = make_encoder<T>(cfg, rng);
    m.local = make_bigru<T>(cfg.feature_dim, cfg.local_hidden, rng);
    std::size_t in = 2 * cfg.local_hidden;
    for (std::size_t l = 0; l < cfg.global_layers; ++l) {
        m.global.push_back(make_bigru<T>(in, cfg.global_hidden, rng));
        in = 2 * cfg.global_hidden;
    }
    m.classifier = make_classifier<T>(cfg, rng);
    return m;
}

template <class T>
Model<T> build_nano(const Model<T>& parent, ModelConfig cfg, std::uint64_t seed)
{
    return derive(parent, std::move(cfg), Arch::nano, seed);
}

template <class T>
Model<T> build_linear_head(const Model<T>& parent, ModelConfig cfg, std::uint64_t seed)
{
    return derive(parent, std::move(cfg), Arch::linear_head, seed);
}

template <class T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed)
{
    if (cfg.arch == Arch::somnonet) {
        return build_somnonet<T>(cfg, seed);
    }
    ModelConfig parent_cfg = cfg;
    parent_cfg.arch = Arch::somnonet;
    validate(parent_cfg);
    Model<T> parent;
    parent.config = parent_cfg;
    Rng rng(seed);
    parent.encoder = make_encoder<T>(parent_cfg, rng);
    return derive(parent, cfg, cfg.arch, seed + 1);
}

template <class T>
Tensor<T> chunk_batch(const ModelConfig& cfg, std::span<const std::span<const float>> epochs)
{
    const std::size_t n = cfg.n_chunks;
    if (epochs.empty()) {
        throw ShapeError("chunk_batch: no epochs");
    }
    const std::size_t s = epochs.front().size();
    if (s % n != 0) {
        throw ShapeError("chunk_batch: epoch of " + std::to_string(s) +
                         " samples does not split into " + std::to_string(n) +
                         " chunks (remainder " + std::to_string(s % n) + ")");
    }
    std::vector<T> values;
    values.reserve(epochs.size() * s);
    const double inv = 1.0 / cfg.input_std;
    for (const auto& e : epochs) {
        if (e.size() != s) {
            throw ShapeError("chunk_batch: epochs differ in length");
        }
        for (float v : e) {
            values.push_back(static_cast<T>((static_cast<double>(v) - cfg.input_mean) * inv));
        }
    }
    return Tensor<T>({epochs.size() * n, 1, s / n}, std::move(values));
}

template <class T>
Tensor<T> encode(Model<T>& model, const Tensor<T>& chunks, Mode mode)
{
    const std::size_t n = model.config.n_chunks;
    if (chunks.rank() != 3 || chunks.dim(1) != 1 || chunks.dim(0) % n != 0) {
        throw ShapeError("encode: expected [F*" + std::to_string(n) + ", 1, S], got " +
                         nn::shape_string(chunks.shape()));
    }
    if (model.encoder_frozen) {
        mode = Mode::eval;
    }
    Tensor<T> h = chunks;
    for (auto& blk : model.encoder) {
        std::vector<Tensor<T>> parts;
        for (std::size_t i = 0; i < blk.branch.size(); ++i) {
            nn::ConvOptions opt{blk.config.dilations[i], 1, nn::Padding::same};
            parts.push_back(nn::relu6(nn::batchnorm(nn::conv1d(h, blk.branch[i], opt),
                                                    blk.branch_bn[i], mode)));
        }
        Tensor<T> c = parts.size() == 1 ? parts.front() : nn::concat(parts, 1);
        h = nn::relu6(nn::batchnorm(nn::conv1d(c, blk.fuse, {}), blk.fuse_bn, mode));
        h = nn::pool1d(h, nn::PoolKind::max, blk.config.pool_window, blk.config.pool_stride);
    }
    h = nn::pool1d(h, nn::PoolKind::global_avg);
    const std::size_t frames = chunks.dim(0) / n;
    return nn::reshape(h, {frames, n, model.config.feature_dim});
}

template <class T>
Tensor<T> classify(const Model<T>& model, const Tensor<T>& x)
{
    Tensor<T> h = x;
    for (std::size_t l = 0; l < model.classifier.size(); ++l) {
        if (l > 0) {
            h = nn::relu6(h);
        }
        h = nn::linear(h, model.classifier[l]);
    }
    return h;
}

template <class T>
Tensor<T> decode(const Model<T>& model, const Tensor<T>& features,
                 std::span<const std::size_t> frames, std::size_t window_len)
{
    const auto& cfg = model.config;
    if (features.rank() != 3 || features.dim(1) != cfg.n_chunks ||
        features.dim(2) != cfg.feature_dim) {
        throw ShapeError("decode: expected features [F, " + std::to_string(cfg.n_chunks) + ", " +
                         std::to_string(cfg.feature_dim) + "], got " +
                         nn::shape_string(features.shape()));
    }
    if (window_len == 0 || frames.empty() || frames.size() % window_len != 0) {
        throw ShapeError("decode: " + std::to_string(frames.size()) +
                         " frame indices do not form windows of " + std::to_string(window_len));
    }
    const std::size_t b = frames.size() / window_len;
    switch (cfg.arch) {
    case Arch::somnonet: {
        Tensor<T> local = nn::bigru(features, model.local->fwd, model.local->bwd);
        Tensor<T> f_local = nn::mean_axis(local, 1);
        Tensor<T> seq = nn::reshape(nn::take_rows(f_local, frames),
                                    {b, window_len, 2 * cfg.local_hidden});
        return classify(model, run_bigru_stack(seq, model.global));
    }
    case Arch::nano: {
        const std::size_t n = cfg.n_chunks;
        Tensor<T> seq = nn::reshape(nn::take_rows(features, frames),
                                    {b, window_len * n, cfg.feature_dim});
        Tensor<T> h = nn::bigru(seq, model.compact->fwd, model.compact->bwd);
        h = nn::reshape(h, {b * window_len, n, 2 * cfg.nano_hidden});
        h = nn::reshape(nn::mean_axis(h, 1), {b, window_len, 2 * cfg.nano_hidden});
        return classify(model, h);
    }
    case Arch::linear_head: {
        Tensor<T> pooled = nn::mean_axis(features, 1);
        Tensor<T> x = nn::reshape(nn::take_rows(pooled, frames), {b, window_len, cfg.feature_dim});
        return classify(model, x);
    }
    }
    throw ConfigError("decode: unknown architecture");
}

template <class T>
Tensor<T> forward_window(Model<T>& model, std::span<const std::span<const float>> epochs)
{
    nn::NoGradGuard guard;
    Tensor<T> features = encode(model, chunk_batch<T>(model.config, epochs), Mode::eval);
    std::vector<std::size_t> frames(epochs.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        frames[i] = i;
    }
    Tensor<T> logits = decode(model, features, frames, frames.size());
    return nn::reshape(logits, {frames.size(), model.config.n_classes});
}

std::size_t ParamReport::total() const
{
    std::size_t n = 0;
    for (const auto& g : groups) {
        n += g.count;
    }
    return n;
}

std::size_t ParamReport::trainable() const
{
    std::size_t n = 0;
    for (const auto& g : groups) {
        n += g.frozen ? 0 : g.count;
    }
    return n;
}

std::size_t ParamReport::group(Group g) const
{
    for (const auto& gc : groups) {
        if (gc.group == g) {
            return gc.count;
        }
    }
    return 0;
}

template <class T>
ParamReport param_report(std::span<const NamedTensor<T>> tensors, bool encoder_frozen)
{
    ParamReport report;
    for (Group g : {Group::encoder, Group::sequence, Group::classifier}) {
        GroupCount gc{g, 0, encoder_frozen && g == Group::encoder};
        bool present = false;
        for (const auto& nt : tensors) {
            if (nt.group == g && !nt.buffer) {
                gc.count += nt.tensor.size();
                present = true;
            }
        }
        if (present) {
            report.groups.push_back(gc);
        }
    }
    return report;
}

template <class T>
ParamReport param_report(const Model<T>& model)
{
    const auto tensors = model.tensors();
    return param_report<T>(std::span<const NamedTensor<T>>(tensors), model.encoder_frozen);
}

double compression_ratio(const ParamReport& small, const ParamReport& large)
{
    return static_cast<double>(small.total()) / static_cast<double>(large.total());
}

#define SOMNONET_INSTANTIATE(T)                                                                  \
    template struct Model<T>;                                                                    \
    template Model<T> build_somnonet<T>(const ModelConfig&, std::uint64_t);                      \
    template Model<T> build_nano<T>(const Model<T>&, ModelConfig, std::uint64_t);                \
    template Model<T> build_linear_head<T>(const Model<T>&, ModelConfig, std::uint64_t);         \
    template Model<T> build_model<T>(const ModelConfig&, std::uint64_t);                         \
    template Tensor<T> chunk_batch<T>(const ModelConfig&, std::span<const std::span<const float>>); \
    template Tensor<T> encode<T>(Model<T>&, const Tensor<T>&, Mode);                             \
    template Tensor<T> decode<T>(const Model<T>&, const Tensor<T>&, std::span<const std::size_t>, \
                                 std::size_t);                                                   \
    template Tensor<T> classify<T>(const Model<T>&, const Tensor<T>&);                           \
    template Tensor<T> forward_window<T>(Model<T>&, std::span<const std::span<const float>>);    \
    template ParamReport param_report<T>(std::span<const NamedTensor<T>>, bool);                 \
    template ParamReport param_report<T>(const Model<T>&);

SOMNONET_INSTANTIATE(float)
SOMNONET_INSTANTIATE(double)

#undef SOMNONET_INSTANTIATE

} // namespace somnonet::model
