#include "somnonet/attribution/attribution.hpp"

#include "somnonet/errors.hpp"
#include "somnonet/nn/ops.hpp"
#include "somnonet/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace somnonet::attribution {

using data::SleepStage;
using model::Model;
using nn::Tensor;

std::string_view method_name(Method method)
{
    switch (method) {
    case Method::voting:
        return "voting";
    case Method::feature_forward:
        return "forward";
    case Method::feature_backward:
        return "backward";
    case Method::sequence:
        return "sequence";
    }
    return "?";
}

Method method_from_name(std::string_view name)
{
    for (Method m : {Method::voting, Method::feature_forward, Method::feature_backward,
                     Method::sequence}) {
        if (method_name(m) == name) {
            return m;
        }
    }
    throw ConfigError("unknown attribution method \"" + std::string(name) +
                      "\" (expected voting, forward, backward or sequence)");
}

std::size_t argmax(std::span<const double> values)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return best;
}

namespace {

template <class T>
void check_f_set(const Model<T>& model, const Tensor<T>& f_set)
{
    if (f_set.rank() != 2 || f_set.dim(1) != model.config.feature_dim) {
        throw ShapeError("f_set must be [N, " + std::to_string(model.config.feature_dim) +
                         "], got " + nn::shape_string(f_set.shape()));
    }
}

template <class T>
void require_feature_classifier(const Model<T>& head, const char* method)
{
    if (head.config.arch != model::Arch::linear_head) {
        throw UsageError(std::string(method) +
                         " attribution needs a classifier applied directly to chunk features "
                         "(a linear-head checkpoint); this model has a " +
                         std::string(model::arch_name(head.config.arch)) + " head");
    }
}

template <class T>
void check_finite(const Model<T>& m)
{
    for (const auto& nt : m.tensors()) {
        for (T v : nt.tensor.data()) {
            if (!std::isfinite(static_cast<double>(v))) {
                throw NumericError("parameter " + nt.name + " is not finite");
            }
        }
    }
}

template <class T>
AttributionVector input_times_gradient(const Tensor<T>& f_set, const Tensor<T>& leaf,
                                       bool negate_gradient)
{
    const std::size_t n = f_set.dim(0);
    const std::size_t l = f_set.dim(1);
    const auto f = f_set.data();
    const auto g = leaf.grad();
    AttributionVector att;
    att.scores.assign(n, 0.0);
    if (g.empty()) {
        return att;
    }
    const double sign = negate_gradient ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < l; ++j) {
            acc += static_cast<double>(f[i * l + j]) * static_cast<double>(g[i * l + j]);
        }
        att.scores[i] = sign * acc / static_cast<double>(l);
    }
    return att;
}

std::string fmt(const char* pattern, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), pattern, v);
    return buf;
}

} // namespace

template <class T>
VotingResult voting_head(const Model<T>& head, const Tensor<T>& f_set)
{
    nn::NoGradGuard guard;
    if (f_set.rank() != 2 || head.config.classifier_input() != f_set.dim(1)) {
        throw ShapeError("voting head: classifier takes " +
                         std::to_string(head.config.classifier_input()) +
                         " inputs, chunk features are " + nn::shape_string(f_set.shape()));
    }
    const std::size_t n = f_set.dim(0);
    const std::size_t c = head.config.n_classes;
    VotingResult out;
    if (head.classifier.size() == 1) {
        // Per-class dot products: classes with identical weights then tie exactly, which
        // blocked matrix products do not guarantee.
        const std::size_t l = f_set.dim(1);
        const auto f = f_set.data();
        const auto w = head.classifier[0].weight.data();
        const auto b = head.classifier[0].bias.data();
        out.chunk_logits.resize(n * c);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                double z = b[j];
                for (std::size_t k = 0; k < l; ++k) {
                    z += static_cast<double>(w[j * l + k]) * static_cast<double>(f[i * l + k]);
                }
                out.chunk_logits[i * c + j] = z;
            }
        }
    } else {
        const Tensor<T> logits = model::classify(head, f_set);
        out.chunk_logits.assign(logits.data().begin(), logits.data().end());
    }
    out.frame_logits.assign(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out.frame_logits[j] += out.chunk_logits[i * c + j];
        }
    }
    for (double& v : out.frame_logits) {
        v /= static_cast<double>(n);
    }
    const std::size_t pred = argmax(out.frame_logits);
    out.predicted = data::kAllStages[pred];
    out.attribution.method = Method::voting;
    out.attribution.predicted = out.predicted;
    for (std::size_t i = 0; i < n; ++i) {
        out.attribution.scores.push_back(out.chunk_logits[i * c + pred] / static_cast<double>(n));
    }
    return out;
}

VotingResult voting_predict(Model<float>& head, std::span<const float> epoch)
{
    nn::NoGradGuard guard;
    const std::span<const float> views[1] = {epoch};
    const Tensor<float> features = model::encode(
        head, model::chunk_batch<float>(head.config, std::span(views)), nn::Mode::eval);
    const std::size_t n = head.config.n_chunks;
    return voting_head(head, nn::reshape(features, {n, head.config.feature_dim}));
}

template <class T>
ForwardResult feature_forward(const Model<T>& head, const Tensor<T>& f_set, SleepStage pred)
{
    require_feature_classifier(head, "forward");
    if (head.classifier.size() != 1) {
        throw UsageError("forward attribution needs a single linear classifier layer; use the "
                         "backward head for deeper classifiers");
    }
    check_f_set(head, f_set);
    if (!data::is_scored(pred)) {
        throw UsageError("forward attribution needs a scored class");
    }
    const std::size_t n = f_set.dim(0);
    const std::size_t l = f_set.dim(1);
    const std::size_t p = static_cast<std::size_t>(data::stage_index(pred));
    const auto f = f_set.data();
    const auto w = head.classifier[0].weight.data();

    ForwardResult out;
    out.global.rows = 1;
    out.global.cols = l;
    out.global.values.assign(l, 0.0);
    out.attribution.method = Method::feature_forward;
    out.attribution.predicted = pred;
    out.attribution.scores.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < l; ++j) {
            const double fij = static_cast<double>(f[i * l + j]);
            dot += fij * static_cast<double>(w[p * l + j]);
            out.global.values[j] += fij;
        }
        out.attribution.scores[i] = dot / static_cast<double>(n);
    }
    for (std::size_t j = 0; j < l; ++j) {
        out.global.values[j] = out.global.values[j] / static_cast<double>(n) *
                               static_cast<double>(w[p * l + j]);
    }
    out.bias = static_cast<double>(head.classifier[0].bias.data()[p]);
    nn::NoGradGuard guard;
    out.logit = static_cast<double>(model::classify(head, nn::mean_axis(f_set, 0)).data()[p]);
    return out;
}

template <class T>
HeadFunction<T> frame_head(const Model<T>& model)
{
    const Model<T>* m = &model;
    if (model.config.arch == model::Arch::linear_head) {
        return [m](const Tensor<T>& f_set) {
            return model::classify(*m, nn::mean_axis(f_set, 0));
        };
    }
    return [m](const Tensor<T>& f_set) {
        const std::size_t frames[1] = {0};
        const Tensor<T> features = nn::reshape(f_set, {1, f_set.dim(0), f_set.dim(1)});
        return nn::reshape(model::decode(*m, features, std::span(frames), 1),
                           {m->config.n_classes});
    };
}

template <class T>
AttributionVector feature_backward(const HeadFunction<T>& head, const Tensor<T>& f_set,
                                   SleepStage pred, bool negate_gradient)
{
    if (f_set.rank() != 2) {
        throw ShapeError("f_set must be [N, L], got " + nn::shape_string(f_set.shape()));
    }
    if (!data::is_scored(pred)) {
        throw UsageError("backward attribution needs a scored class");
    }
    Tensor<T> leaf = f_set.detach();
    leaf.set_requires_grad(true);
    const Tensor<T> logits = head(leaf);
    const std::size_t p = static_cast<std::size_t>(data::stage_index(pred));
    if (p >= logits.size()) {
        throw ShapeError("head returned " + std::to_string(logits.size()) + " logits");
    }
    if (!logits.requires_grad()) {
        throw UsageError("backward attribution needs a head that is differentiable in f_set");
    }
    nn::backward(nn::element(logits, p));
    AttributionVector att = input_times_gradient(f_set, leaf, negate_gradient);
    att.method = Method::feature_backward;
    att.predicted = pred;
    return att;
}

template <class T>
AttributionVector sequence_attribution(const Model<T>& model, const Tensor<T>& window_features,
                                       std::size_t t, bool negate_gradient)
{
    check_finite(model);
    const auto& cfg = model.config;
    if (window_features.rank() != 3 || window_features.dim(1) != cfg.n_chunks ||
        window_features.dim(2) != cfg.feature_dim) {
        throw ShapeError("window features must be [M, N, L], got " +
                         nn::shape_string(window_features.shape()));
    }
    const std::size_t m = window_features.dim(0);
    if (t >= m) {
        throw ShapeError("frame " + std::to_string(t) + " outside a window of " +
                         std::to_string(m));
    }
    const std::size_t n = cfg.n_chunks;
    const std::size_t l = cfg.feature_dim;
    const std::size_t frame_size = n * l;
    const auto all = window_features.data();

    std::vector<Tensor<T>> parts;
    Tensor<T> leaf;
    Tensor<T> f_set;
    for (std::size_t j = 0; j < m; ++j) {
        Tensor<T> frame({1, n, l}, std::vector<T>(all.begin() + j * frame_size,
                                                  all.begin() + (j + 1) * frame_size));
        if (j == t) {
            f_set = nn::reshape(frame.detach(), {n, l});
            frame.set_requires_grad(true);
            leaf = frame;
        }
        parts.push_back(frame);
    }
    const Tensor<T> features = m == 1 ? parts.front() : nn::concat(parts, 0);
    std::vector<std::size_t> frames(m);
    std::iota(frames.begin(), frames.end(), std::size_t{0});
    const Tensor<T> logits = model::decode(model, features, frames, m);
    const auto lv = logits.data();
    std::vector<double> row(cfg.n_classes);
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        row[c] = static_cast<double>(lv[t * cfg.n_classes + c]);
        if (!std::isfinite(row[c])) {
            throw NumericError("non-finite logit in sequence attribution");
        }
    }
    const std::size_t pred = argmax(row);
    nn::backward(nn::element(logits, t * cfg.n_classes + pred));

    AttributionVector att = input_times_gradient(f_set, leaf, negate_gradient);
    att.method = Method::sequence;
    att.predicted = data::kAllStages[pred];
    return att;
}

AttributionVector attribute_epoch(Model<float>& model, const data::Recording& rec,
                                  std::size_t epoch, Method method, bool negate_gradient)
{
    if (epoch >= rec.size()) {
        throw ConfigError("epoch " + std::to_string(epoch) + " outside a recording of " +
                          std::to_string(rec.size()));
    }
    const auto& cfg = model.config;
    auto encode_frames = [&](std::size_t lo, std::size_t hi) {
        nn::NoGradGuard guard;
        std::vector<std::span<const float>> views;
        for (std::size_t i = lo; i < hi; ++i) {
            views.emplace_back(rec.epochs[i]);
        }
        return model::encode(model, model::chunk_batch<float>(cfg, views), nn::Mode::eval);
    };

    AttributionVector att;
    switch (method) {
    case Method::voting: {
        require_feature_classifier(model, "voting");
        att = voting_predict(model, rec.epochs[epoch]).attribution;
        break;
    }
    case Method::feature_forward: {
        require_feature_classifier(model, "forward");
        const Tensor<float> f_set =
            nn::reshape(encode_frames(epoch, epoch + 1), {cfg.n_chunks, cfg.feature_dim});
        std::vector<double> logits;
        {
            nn::NoGradGuard guard;
            const Tensor<float> c = model::classify(model, nn::mean_axis(f_set, 0));
            logits.assign(c.data().begin(), c.data().end());
        }
        att = feature_forward(model, f_set, data::kAllStages[argmax(logits)]).attribution;
        break;
    }
    case Method::feature_backward: {
        const Tensor<float> f_set =
            nn::reshape(encode_frames(epoch, epoch + 1), {cfg.n_chunks, cfg.feature_dim});
        const auto head = frame_head(model);
        std::vector<double> logits;
        {
            nn::NoGradGuard guard;
            const Tensor<float> c = head(f_set);
            logits.assign(c.data().begin(), c.data().end());
        }
        att = feature_backward(head, f_set, data::kAllStages[argmax(logits)], negate_gradient);
        break;
    }
    case Method::sequence: {
        const auto w = train::place_window(epoch, rec.size(), cfg.context_frames);
        att = sequence_attribution(model, encode_frames(w.start, w.start + w.length), w.position,
                                   negate_gradient);
        break;
    }
    }
    att.epoch_index = epoch;
    return att;
}

std::vector<double> normalize_scores(std::span<const double> scores)
{
    std::vector<double> out(scores.size(), 0.5);
    if (scores.empty()) {
        return out;
    }
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    if (*hi > *lo) {
        for (std::size_t i = 0; i < scores.size(); ++i) {
            out[i] = (scores[i] - *lo) / (*hi - *lo);
        }
    }
    return out;
}

std::string heatmap_csv(const AttributionVector& att, std::size_t samples_per_chunk)
{
    const auto norm = normalize_scores(att.scores);
    std::string out = "chunk_index,start_sample,end_sample,score,normalized_score\n";
    char line[160];
    for (std::size_t i = 0; i < att.scores.size(); ++i) {
        std::snprintf(line, sizeof(line), "%zu,%zu,%zu,%.17g,%.17g\n", i, i * samples_per_chunk,
                      (i + 1) * samples_per_chunk, att.scores[i], norm[i]);
        out += line;
    }
    return out;
}

std::string heatmap_svg(const AttributionVector& att, std::span<const float> epoch)
{
    constexpr double width = 1200.0;
    constexpr double height = 160.0;
    const std::size_t n = att.scores.size();
    const auto norm = normalize_scores(att.scores);
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"1200\" height=\"160\" "
                      "viewBox=\"0 0 1200 160\">\n";
    out += "<rect x=\"0\" y=\"0\" width=\"1200\" height=\"160\" fill=\"#ffffff\"/>\n";
    const double band = n ? width / static_cast<double>(n) : width;
    for (std::size_t i = 0; i < n; ++i) {
        out += "<rect x=\"" + fmt("%.3f", band * static_cast<double>(i)) + "\" y=\"0\" width=\"" +
               fmt("%.3f", band) + "\" height=\"160\" fill=\"#b2182b\" fill-opacity=\"" +
               fmt("%.4f", norm[i]) + "\"/>\n";
    }
    if (!epoch.empty()) {
        float peak = 0.0f;
        for (float v : epoch) {
            peak = std::max(peak, std::abs(v));
        }
        const double scale = peak > 0.0f ? (height * 0.45) / peak : 0.0;
        const std::size_t stride = std::max<std::size_t>(1, epoch.size() / 1200);
        out += "<polyline fill=\"none\" stroke=\"#000000\" stroke-width=\"0.8\" points=\"";
        for (std::size_t s = 0; s < epoch.size(); s += stride) {
            const double x = width * static_cast<double>(s) / static_cast<double>(epoch.size());
            const double y = height / 2.0 - scale * static_cast<double>(epoch[s]);
            out += fmt("%.2f", x) + "," + fmt("%.2f", y) + " ";
        }
        out += "\"/>\n";
    }
    out += "<text x=\"6\" y=\"14\" font-family=\"monospace\" font-size=\"12\">epoch " +
           std::to_string(att.epoch_index) + " " + std::string(method_name(att.method)) +
           " predicted " + std::string(data::stage_name(att.predicted)) + "</text>\n";
    out += "</svg>\n";
    return out;
}

std::filesystem::path export_heatmap(const AttributionVector& att, std::span<const float> epoch,
                                     const std::filesystem::path& dir,
                                     const std::string& recording_name)
{
    for (double s : att.scores) {
        if (!std::isfinite(s)) {
            throw NumericError("attribution scores must be finite");
        }
    }
    if (att.scores.empty()) {
        throw UsageError("attribution vector is empty");
    }
    const std::size_t per_chunk = epoch.size() / att.scores.size();
    const std::string stem = recording_name + "_" + std::to_string(att.epoch_index) + "_" +
                             std::string(method_name(att.method));
    std::filesystem::create_directories(dir);
    const auto csv_path = dir / (stem + ".csv");
    const auto svg_path = dir / (stem + ".svg");
    for (const auto& [path, text] :
         {std::pair{csv_path, heatmap_csv(att, per_chunk)}, std::pair{svg_path, heatmap_svg(att, epoch)}}) {
        std::ofstream out(path, std::ios::trunc | std::ios::binary);
        if (!out) {
            throw std::runtime_error("cannot open " + path.string() + " for writing");
        }
        out << text;
        if (!out) {
            throw std::runtime_error("write failed for " + path.string());
        }
    }
    return csv_path;
}

std::vector<std::size_t> top_chunks(std::span<const double> scores, std::size_t k)
{
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(std::min(k, order.size()));
    return order;
}

double localization_iou(std::span<const double> scores, std::size_t k,
                        std::span<const data::RhythmSpan> spans, std::string_view tag,
                        std::size_t samples_per_epoch)
{
    if (scores.empty() || samples_per_epoch % scores.size() != 0) {
        throw ShapeError("scores do not tile the epoch");
    }
    const std::size_t per_chunk = samples_per_epoch / scores.size();
    std::vector<char> picked(samples_per_epoch, 0);
    for (std::size_t c : top_chunks(scores, k)) {
        std::fill(picked.begin() + c * per_chunk, picked.begin() + (c + 1) * per_chunk, 1);
    }
    std::vector<char> truth(samples_per_epoch, 0);
    for (const auto& s : spans) {
        if (s.tag == tag) {
            std::fill(truth.begin() + std::min<std::size_t>(s.start_sample, samples_per_epoch),
                      truth.begin() + std::min<std::size_t>(s.end_sample, samples_per_epoch), 1);
        }
    }
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (std::size_t i = 0; i < samples_per_epoch; ++i) {
        inter += (picked[i] && truth[i]) ? 1 : 0;
        uni += (picked[i] || truth[i]) ? 1 : 0;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

#define SOMNONET_INSTANTIATE(T)                                                                  \
    template VotingResult voting_head<T>(const Model<T>&, const Tensor<T>&);                     \
    template ForwardResult feature_forward<T>(const Model<T>&, const Tensor<T>&, SleepStage);    \
    template HeadFunction<T> frame_head<T>(const Model<T>&);                                     \
    template AttributionVector feature_backward<T>(const HeadFunction<T>&, const Tensor<T>&,     \
                                                   SleepStage, bool);                            \
    template AttributionVector sequence_attribution<T>(const Model<T>&, const Tensor<T>&,        \
                                                       std::size_t, bool);

SOMNONET_INSTANTIATE(float)
SOMNONET_INSTANTIATE(double)

#undef SOMNONET_INSTANTIATE

} // namespace somnonet::attribution
