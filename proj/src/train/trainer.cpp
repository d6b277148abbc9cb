#include "somnonet/train/trainer.hpp"

#include "common/parse.hpp"
#include "somnonet/errors.hpp"
#include "somnonet/nn/ops.hpp"
#include "somnonet/rng.hpp"
#include "somnonet/train/loss.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace somnonet::train {

using data::Recording;
using data::SleepStage;
using model::Model;
using nn::Tensor;

namespace {

constexpr std::size_t kEvalBatch = 64;
constexpr std::size_t kEncodeBlock = 64;

std::vector<std::span<const float>> epoch_views(const Recording& rec, std::size_t lo,
                                                std::size_t hi)
{
    std::vector<std::span<const float>> out;
    for (std::size_t i = lo; i < hi; ++i) {
        out.emplace_back(rec.epochs[i]);
    }
    return out;
}

struct Block {
    std::size_t recording = 0;
    std::vector<std::size_t> targets;
};

std::vector<Block> make_blocks(std::span<const Recording> recs, std::size_t batch, Rng& rng)
{
    std::vector<Block> blocks;
    for (std::size_t r = 0; r < recs.size(); ++r) {
        std::vector<std::size_t> scored;
        for (std::size_t t = 0; t < recs[r].size(); ++t) {
            if (data::is_scored(recs[r].labels[t])) {
                scored.push_back(t);
            }
        }
        // A random phase keeps block boundaries from repeating across epochs.
        std::size_t first = std::min(rng.index(batch), scored.size());
        std::size_t begin = 0;
        std::size_t end = first;
        while (begin < scored.size()) {
            if (end > begin) {
                blocks.push_back({r, std::vector<std::size_t>(scored.begin() + begin,
                                                              scored.begin() + end)});
            }
            begin = end;
            end = std::min(scored.size(), begin + batch);
        }
    }
    rng.shuffle(blocks);
    return blocks;
}

struct Snapshot {
    std::vector<std::vector<float>> values;
};

Snapshot take_snapshot(const Model<float>& m)
{
    Snapshot s;
    for (const auto& nt : m.tensors()) {
        const auto d = nt.tensor.data();
        s.values.emplace_back(d.begin(), d.end());
    }
    return s;
}

void restore_snapshot(Model<float>& m, const Snapshot& s)
{
    const auto named = m.tensors();
    for (std::size_t i = 0; i < named.size(); ++i) {
        auto dst = nn::Tensor<float>(named[i].tensor).data();
        std::copy(s.values[i].begin(), s.values[i].end(), dst.begin());
    }
}

struct BatchLoss {
    Tensor<float> loss;
    std::size_t scored = 0;
};

// Forward pass of one block of targets from one recording.
BatchLoss block_loss(Model<float>& model, const Recording& rec, const std::vector<std::size_t>& targets,
                     const Tensor<float>* cached_features, const TrainConfig& cfg,
                     std::span<const double> class_weights)
{
    const auto& mc = model.config;
    const std::size_t n = rec.size();
    const WindowPlacement first = place_window(targets.front(), n, mc.context_frames);
    const WindowPlacement last = place_window(targets.back(), n, mc.context_frames);
    const std::size_t m = first.length;
    std::size_t lo = 0;
    Tensor<float> features;
    if (cached_features) {
        features = *cached_features;
    } else {
        lo = first.start;
        const auto views = epoch_views(rec, lo, last.start + last.length);
        features = model::encode(model, model::chunk_batch<float>(mc, views), nn::Mode::train);
    }

    std::vector<std::size_t> frames;
    frames.reserve(targets.size() * m);
    std::vector<std::size_t> centre_rows;
    std::vector<SleepStage> labels;
    for (std::size_t b = 0; b < targets.size(); ++b) {
        const WindowPlacement w = place_window(targets[b], n, mc.context_frames);
        for (std::size_t j = 0; j < m; ++j) {
            frames.push_back(w.start + j - lo);
            if (cfg.all_frames_loss) {
                labels.push_back(rec.labels[w.start + j]);
            }
        }
        centre_rows.push_back(b * m + w.position);
        if (!cfg.all_frames_loss) {
            labels.push_back(rec.labels[targets[b]]);
        }
    }
    Tensor<float> logits = model::decode(model, features, frames, m);
    logits = nn::reshape(logits, {targets.size() * m, mc.n_classes});
    if (!cfg.all_frames_loss) {
        logits = nn::take_rows(logits, std::span<const std::size_t>(centre_rows));
    }
    std::size_t scored = 0;
    for (auto l : labels) {
        scored += data::is_scored(l) ? 1 : 0;
    }
    return {cross_entropy(logits, std::span<const SleepStage>(labels), class_weights), scored};
}

EvalResult evaluate_impl(Model<float>& model, std::span<const Recording> recs,
                         const std::vector<Tensor<float>>* cached, std::size_t threads)
{
    if (recs.empty()) {
        throw ConfigError("evaluation set is empty");
    }
    const auto& mc = model.config;
    EvalResult result;
    result.recordings.resize(recs.size());
    std::vector<double> loss_sum(recs.size(), 0.0);
    std::vector<std::size_t> correct(recs.size(), 0);
    std::vector<std::size_t> scored(recs.size(), 0);

    auto run_one = [&](std::size_t r) {
        nn::NoGradGuard guard;
        const Recording& rec = recs[r];
        const std::size_t n = rec.size();
        auto& out = result.recordings[r];
        if (n == 0) {
            return;
        }
        Tensor<float> features = cached ? (*cached)[r] : recording_features(model, rec);
        out.logits.assign(n * mc.n_classes, 0.0f);
        out.predicted.assign(n, SleepStage::W);
        for (std::size_t begin = 0; begin < n; begin += kEvalBatch) {
            const std::size_t end = std::min(n, begin + kEvalBatch);
            std::vector<std::size_t> frames;
            std::vector<std::size_t> positions;
            std::size_t m = 0;
            for (std::size_t t = begin; t < end; ++t) {
                const WindowPlacement w = place_window(t, n, mc.context_frames);
                m = w.length;
                for (std::size_t j = 0; j < w.length; ++j) {
                    frames.push_back(w.start + j);
                }
                positions.push_back(w.position);
            }
            const Tensor<float> logits = model::decode(model, features, frames, m);
            const auto lv = logits.data();
            for (std::size_t b = 0; b < positions.size(); ++b) {
                const std::size_t t = begin + b;
                const float* row = lv.data() + (b * m + positions[b]) * mc.n_classes;
                std::copy(row, row + mc.n_classes, out.logits.begin() + t * mc.n_classes);
                const std::size_t arg =
                    static_cast<std::size_t>(std::max_element(row, row + mc.n_classes) - row);
                out.predicted[t] = data::kAllStages[arg];
                if (data::is_scored(rec.labels[t])) {
                    const std::size_t y = data::stage_index(rec.labels[t]);
                    const float peak = row[arg];
                    double z = 0.0;
                    for (std::size_t j = 0; j < mc.n_classes; ++j) {
                        z += std::exp(static_cast<double>(row[j] - peak));
                    }
                    loss_sum[r] += std::log(z) - static_cast<double>(row[y] - peak);
                    correct[r] += arg == y ? 1 : 0;
                    scored[r] += 1;
                }
            }
        }
    };

    const std::size_t workers = std::min(threads == 0 ? thread_count_from_env() : threads,
                                         recs.size());
    if (workers <= 1) {
        for (std::size_t r = 0; r < recs.size(); ++r) {
            run_one(r);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t r = next++; r < recs.size(); r = next++) {
                    try {
                        run_one(r);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) {
                            failure = std::current_exception();
                        }
                    }
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
        if (failure) {
            std::rethrow_exception(failure);
        }
    }

    double total_loss = 0.0;
    std::size_t total_correct = 0;
    for (std::size_t r = 0; r < recs.size(); ++r) {
        total_loss += loss_sum[r];
        total_correct += correct[r];
        result.scored += scored[r];
    }
    if (result.scored > 0) {
        result.loss = total_loss / static_cast<double>(result.scored);
        result.accuracy = static_cast<double>(total_correct) / static_cast<double>(result.scored);
    }
    return result;
}

} // namespace

void validate(const TrainConfig& cfg)
{
    if (cfg.batch_size == 0 || cfg.max_epochs == 0 || cfg.lr_period_epochs == 0) {
        throw ConfigError("batch_size, max_epochs and lr_period_epochs must be positive");
    }
    validate(LrSchedule{cfg.base_lr, cfg.max_lr, 2});
    if (cfg.optimizer.weight_decay < 0.0 || cfg.optimizer.eps <= 0.0 ||
        !(cfg.optimizer.beta1 >= 0.0 && cfg.optimizer.beta1 < 1.0) ||
        !(cfg.optimizer.beta2 >= 0.0 && cfg.optimizer.beta2 < 1.0)) {
        throw ConfigError("optimizer hyperparameters out of range");
    }
}

bool apply_setting(TrainConfig& cfg, std::string_view key, std::string_view value)
{
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_int;
    if (key == "batch_size") {
        cfg.batch_size = parse_int<std::size_t>(key, value);
    } else if (key == "max_epochs") {
        cfg.max_epochs = parse_int<std::size_t>(key, value);
    } else if (key == "patience") {
        cfg.patience = parse_int<std::size_t>(key, value);
    } else if (key == "seed") {
        cfg.seed = parse_int<std::uint64_t>(key, value);
    } else if (key == "class_weighting") {
        cfg.class_weighting = parse_bool(key, value);
    } else if (key == "all_frames_loss") {
        cfg.all_frames_loss = parse_bool(key, value);
    } else if (key == "standardize") {
        cfg.standardize = parse_bool(key, value);
    } else if (key == "base_lr") {
        cfg.base_lr = parse_double(key, value);
    } else if (key == "max_lr") {
        cfg.max_lr = parse_double(key, value);
    } else if (key == "lr_period_epochs") {
        cfg.lr_period_epochs = parse_int<std::size_t>(key, value);
    } else if (key == "beta1") {
        cfg.optimizer.beta1 = parse_double(key, value);
    } else if (key == "beta2") {
        cfg.optimizer.beta2 = parse_double(key, value);
    } else if (key == "eps") {
        cfg.optimizer.eps = parse_double(key, value);
    } else if (key == "weight_decay") {
        cfg.optimizer.weight_decay = parse_double(key, value);
    } else if (key == "max_seconds") {
        cfg.max_seconds = parse_double(key, value);
    } else {
        return false;
    }
    return true;
}

std::string history_csv(const History& history)
{
    std::string out = "epoch,train_loss,val_loss,val_acc,lr\n";
    char line[160];
    for (const auto& e : history.epochs) {
        std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss,
                      e.val_loss, e.val_acc, e.lr);
        out += line;
    }
    return out;
}

WindowPlacement place_window(std::size_t target, std::size_t n_frames, std::size_t context)
{
    if (target >= n_frames) {
        throw ShapeError("window target " + std::to_string(target) + " outside " +
                         std::to_string(n_frames) + " frames");
    }
    WindowPlacement w;
    w.length = std::min(context, n_frames);
    const std::size_t half = w.length / 2;
    w.start = target < half ? 0 : std::min(target - half, n_frames - w.length);
    w.position = target - w.start;
    return w;
}

std::pair<double, double> sample_moments(std::span<const Recording> recordings)
{
    double sum = 0.0;
    double count = 0.0;
    for (const auto& rec : recordings) {
        for (const auto& e : rec.epochs) {
            for (float v : e) {
                sum += v;
            }
            count += static_cast<double>(e.size());
        }
    }
    if (count == 0.0) {
        return {0.0, 1.0};
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (const auto& rec : recordings) {
        for (const auto& e : rec.epochs) {
            for (float v : e) {
                sq += (v - mean) * (v - mean);
            }
        }
    }
    const double sd = std::sqrt(sq / count);
    return {mean, sd > 0.0 ? sd : 1.0};
}

std::vector<double> inverse_frequency_weights(std::span<const Recording> recordings)
{
    std::vector<double> counts(data::kNumStages, 0.0);
    double total = 0.0;
    for (const auto& rec : recordings) {
        for (auto l : rec.labels) {
            if (data::is_scored(l)) {
                counts[data::stage_index(l)] += 1.0;
                total += 1.0;
            }
        }
    }
    std::vector<double> w(data::kNumStages, 0.0);
    for (std::size_t c = 0; c < w.size(); ++c) {
        if (counts[c] > 0.0) {
            w[c] = total / (static_cast<double>(w.size()) * counts[c]);
        }
    }
    return w;
}

Tensor<float> recording_features(Model<float>& model, const Recording& rec)
{
    nn::NoGradGuard guard;
    if (rec.size() == 0) {
        throw ShapeError("recording has no epochs");
    }
    std::vector<Tensor<float>> parts;
    for (std::size_t begin = 0; begin < rec.size(); begin += kEncodeBlock) {
        const std::size_t end = std::min(rec.size(), begin + kEncodeBlock);
        const auto views = epoch_views(rec, begin, end);
        parts.push_back(model::encode(model, model::chunk_batch<float>(model.config, views),
                                      nn::Mode::eval));
    }
    return parts.size() == 1 ? parts.front() : nn::concat(parts, 0);
}

History train(Model<float>& model, std::span<const Recording> train_set,
              std::span<const Recording> validation_set, const TrainConfig& cfg)
{
    validate(cfg);
    std::size_t train_scored = 0;
    for (const auto& rec : train_set) {
        data::validate(rec);
        for (auto l : rec.labels) {
            train_scored += data::is_scored(l) ? 1 : 0;
        }
    }
    std::size_t val_scored = 0;
    for (const auto& rec : validation_set) {
        data::validate(rec);
        for (auto l : rec.labels) {
            val_scored += data::is_scored(l) ? 1 : 0;
        }
    }
    if (train_scored == 0 || val_scored == 0) {
        throw ConfigError("training and validation splits must both contain scored epochs");
    }

    const auto started = std::chrono::steady_clock::now();
    const bool frozen = model.encoder_frozen;
    if (cfg.standardize && !frozen) {
        const auto [mean, sd] = sample_moments(train_set);
        model.config.input_mean = mean;
        model.config.input_std = sd;
    }
    const std::vector<double> weights =
        cfg.class_weighting ? inverse_frequency_weights(train_set) : std::vector<double>{};

    std::vector<Tensor<float>> train_features;
    std::vector<Tensor<float>> val_features;
    if (frozen) {
        for (const auto& rec : train_set) {
            train_features.push_back(recording_features(model, rec));
        }
        for (const auto& rec : validation_set) {
            val_features.push_back(recording_features(model, rec));
        }
    }

    Rng rng(cfg.seed);
    auto state = make_optim_state(model.trainable(), cfg.optimizer);
    LrSchedule sched{cfg.base_lr, cfg.max_lr, 2};
    std::uint64_t step = 0;
    EarlyStopping stopper(cfg.patience);
    Snapshot best = take_snapshot(model);
    History history;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto blocks = make_blocks(train_set, cfg.batch_size, rng);
        if (epoch == 1) {
            sched.period_steps = std::max<std::uint64_t>(2, cfg.lr_period_epochs * blocks.size());
        }
        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        double lr = sched.base_lr;
        for (const auto& blk : blocks) {
            const Tensor<float>* cached = frozen ? &train_features[blk.recording] : nullptr;
            BatchLoss bl = block_loss(model, train_set[blk.recording], blk.targets, cached, cfg,
                                      weights);
            if (bl.scored == 0) {
                continue;
            }
            loss_sum += static_cast<double>(bl.loss.item()) * static_cast<double>(bl.scored);
            loss_count += bl.scored;
            nn::backward(bl.loss);
            lr = cyclic_lr(step++, sched);
            adamw_step(state, lr);
            zero_grad(state);
        }

        const EvalResult val =
            evaluate_impl(model, validation_set, frozen ? &val_features : nullptr, 1);
        if (!std::isfinite(val.loss)) {
            throw NumericError("validation loss is not finite at epoch " + std::to_string(epoch));
        }
        EpochRecord record{epoch, loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0,
                           val.loss, val.accuracy, lr};
        history.epochs.push_back(record);
        if (stopper.update(val.loss)) {
            best = take_snapshot(model);
        }
        if (cfg.on_epoch) {
            cfg.on_epoch(record);
        }
        if (stopper.should_stop()) {
            history.stopped_early = true;
            break;
        }
        if (cfg.max_seconds > 0.0) {
            const double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            if (elapsed >= cfg.max_seconds) {
                history.hit_time_limit = true;
                break;
            }
        }
    }
    restore_snapshot(model, best);
    history.best_epoch = stopper.best_epoch();
    history.best_val_loss = stopper.best_loss();
    return history;
}

Model<float> train_nano(const Model<float>& parent, std::span<const Recording> train_set,
                        std::span<const Recording> validation_set, const TrainConfig& cfg,
                        const model::ModelConfig& nano_cfg, History* history)
{
    Model<float> nano = model::build_nano(parent, nano_cfg, cfg.seed);
    History h = train(nano, train_set, validation_set, cfg);
    if (history) {
        *history = std::move(h);
    }
    return nano;
}

Model<float> train_linear_head(const Model<float>& parent, std::span<const Recording> train_set,
                               std::span<const Recording> validation_set, const TrainConfig& cfg,
                               const model::ModelConfig& head_cfg, History* history)
{
    Model<float> head = model::build_linear_head(parent, head_cfg, cfg.seed);
    History h = train(head, train_set, validation_set, cfg);
    if (history) {
        *history = std::move(h);
    }
    return head;
}

EvalResult evaluate(Model<float>& model, std::span<const Recording> recordings,
                    std::size_t threads)
{
    return evaluate_impl(model, recordings, nullptr, threads);
}

std::vector<SleepStage> EvalResult::all_predictions() const
{
    std::vector<SleepStage> out;
    for (const auto& r : recordings) {
        out.insert(out.end(), r.predicted.begin(), r.predicted.end());
    }
    return out;
}

std::vector<SleepStage> all_labels(std::span<const Recording> recordings)
{
    std::vector<SleepStage> out;
    for (const auto& r : recordings) {
        out.insert(out.end(), r.labels.begin(), r.labels.end());
    }
    return out;
}

std::size_t thread_count_from_env()
{
    const char* env = std::getenv("SOMNONET_THREADS");
    if (!env || !*env) {
        return 1;
    }
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
        return 1;
    }
    return static_cast<std::size_t>(v);
}

} // namespace somnonet::train
