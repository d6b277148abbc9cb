#include "somnonet/attribution/attribution.hpp"
#include "somnonet/data/ssef.hpp"
#include "somnonet/data/synthetic.hpp"
#include "somnonet/errors.hpp"
#include "somnonet/metrics/metrics.hpp"
#include "somnonet/model/io.hpp"
#include "somnonet/train/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace somnonet;

namespace {

// Bad flags or settings; reported with exit code 2.
struct CliUsage : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<data::Recording> read_all(const std::vector<std::string>& paths)
{
    std::vector<data::Recording> out;
    for (const auto& p : paths) {
        out.push_back(data::read_ssef(p));
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    out << text;
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw CliUsage("cannot open config file " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

struct Settings {
    std::string config_file;
    std::vector<std::string> overrides;
};

// Config file first, then --set pairs; training keys win over model keys.
void apply_settings(const Settings& s, train::TrainConfig& tc, model::ModelConfig* mc)
{
    auto apply = [&](std::string_view key, std::string_view value) {
        if (train::apply_setting(tc, key, value)) {
            return;
        }
        if (!mc) {
            throw ConfigError("unknown setting \"" + std::string(key) + "\"");
        }
        model::apply_setting(*mc, key, value);
    };
    std::string text;
    if (!s.config_file.empty()) {
        text = read_text(s.config_file);
    }
    for (const auto& o : s.overrides) {
        text += "\n" + o;
    }
    std::string_view view(text);
    std::size_t start = 0;
    while (start <= view.size()) {
        std::size_t end = view.find('\n', start);
        if (end == std::string_view::npos) {
            end = view.size();
        }
        std::string_view line = view.substr(start, end - start);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
            line.remove_suffix(1);
        }
        while (!line.empty() && line.front() == ' ') {
            line.remove_prefix(1);
        }
        if (!line.empty() && line.front() != '#') {
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) {
                throw ConfigError("expected key=value, got \"" + std::string(line) + "\"");
            }
            apply(line.substr(0, eq), line.substr(eq + 1));
        }
        start = end + 1;
    }
}

void print_report(const char* label, const model::ParamReport& r)
{
    std::printf("%s parameters: total %zu", label, r.total());
    for (const auto& g : r.groups) {
        std::printf(", %s %zu%s", std::string(model::group_name(g.group)).c_str(), g.count,
                    g.frozen ? " (frozen)" : "");
    }
    std::printf(", trainable %zu\n", r.trainable());
}

void print_epoch(const train::EpochRecord& e)
{
    std::printf("epoch %zu  train_loss %.4f  val_loss %.4f  val_acc %.4f  lr %.6f\n", e.epoch,
                e.train_loss, e.val_loss, e.val_acc, e.lr);
    std::fflush(stdout);
}

void print_metrics(const char* label, const metrics::StageMetrics& m)
{
    std::printf("%s: OA %.4f  MF1 %.4f  kappa %.4f\n", label, m.overall_accuracy, m.macro_f1,
                m.kappa);
}

metrics::StageMetrics score(model::Model<float>& m, const std::vector<data::Recording>& recs)
{
    const auto result = train::evaluate(m, recs);
    const auto labels = train::all_labels(recs);
    const auto preds = result.all_predictions();
    return metrics::stage_metrics(metrics::confusion(preds, labels));
}

std::vector<std::size_t> parse_epoch_list(const std::string& text, std::size_t n)
{
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    auto number = [&](const std::string& s) -> std::size_t {
        std::size_t pos = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(s, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != s.size() || s.empty()) {
            throw CliUsage("bad epoch index \"" + s + "\"");
        }
        return v;
    };
    while (std::getline(ss, item, ',')) {
        const auto dash = item.find('-');
        if (dash == std::string::npos) {
            out.push_back(number(item));
        } else {
            const std::size_t lo = number(item.substr(0, dash));
            const std::size_t hi = number(item.substr(dash + 1));
            if (hi < lo) {
                throw CliUsage("empty epoch range \"" + item + "\"");
            }
            for (std::size_t i = lo; i <= hi; ++i) {
                out.push_back(i);
            }
        }
    }
    for (std::size_t e : out) {
        if (e >= n) {
            throw CliUsage("epoch " + std::to_string(e) + " outside a recording of " +
                           std::to_string(n) + " epochs");
        }
    }
    return out;
}

std::size_t scored_count(const std::vector<data::Recording>& recs)
{
    std::size_t n = 0;
    for (const auto& r : recs) {
        for (auto l : r.labels) {
            n += data::is_scored(l) ? 1 : 0;
        }
    }
    return n;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Single-channel EEG sleep staging: synthesis, training, compression, "
                 "evaluation and attribution."};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic rhythm-labelled recording");
    data::SyntheticSpec spec;
    std::string synth_out;
    std::string class_mix = "0.2,0.2,0.2,0.2,0.2";
    synth->add_option("--subjects", spec.n_subjects, "Number of subjects");
    synth->add_option("--epochs", spec.epochs_per_subject, "Epochs per subject");
    synth->add_option("--rate", spec.sampling_rate_hz, "Sampling rate in Hz");
    synth->add_option("--epoch-len", spec.epoch_len_s, "Epoch length in seconds");
    synth->add_option("--seed", spec.rng_seed, "Random seed");
    synth->add_option("--class-mix", class_mix, "Stage probabilities W,N1,N2,N3,R");
    synth->add_option("--noise-sigma", spec.noise_sigma, "Background noise level in microvolts");
    synth->add_option("--persistence", spec.persistence,
                      "Probability that an epoch keeps the previous stage");
    synth->add_option("-o,--output", synth_out, "Output SSEF path")->required();

    // Shared training flags.
    train::TrainConfig tc;
    Settings settings;
    std::vector<std::string> train_files;
    std::vector<std::string> val_files;
    std::string output;
    std::string history_path;
    auto add_training_flags = [&](CLI::App* cmd) {
        cmd->add_option("--train", train_files, "Training SSEF files")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--val", val_files, "Validation SSEF files")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("-o,--output", output, "Checkpoint path (config sidecar gets .cfg)")
            ->required();
        cmd->add_option("--history", history_path,
                        "Training history CSV (default: <output>.history.csv)");
        cmd->add_option("--batch-size", tc.batch_size, "Windows per mini-batch");
        cmd->add_option("--max-epochs", tc.max_epochs, "Maximum number of epochs");
        cmd->add_option("--patience", tc.patience,
                        "Stop after this many epochs without a new best validation loss");
        cmd->add_option("--seed", tc.seed, "Random seed");
        cmd->add_option("--config", settings.config_file, "key=value settings file");
        cmd->add_option("--set", settings.overrides, "key=value setting override (repeatable)");
    };

    auto* train_cmd = app.add_subcommand("train", "Train a SomnoNet or a linear feature head");
    add_training_flags(train_cmd);
    std::string arch = "somnonet";
    std::string encoder_from;
    train_cmd->add_option("--arch", arch, "Architecture")
        ->check(CLI::IsMember({"somnonet", "linear-head"}));
    train_cmd->add_option("--encoder-from", encoder_from,
                          "SomnoNet checkpoint whose frozen encoder feeds the linear head")
        ->check(CLI::ExistingFile);

    auto* distill = app.add_subcommand("distill-nano",
                                       "Train a Nano on the frozen encoder of a SomnoNet");
    add_training_flags(distill);
    std::string parent_path;
    distill->add_option("--parent", parent_path, "Parent SomnoNet checkpoint")
        ->required()
        ->check(CLI::ExistingFile);

    auto* eval = app.add_subcommand("eval", "Sliding-window evaluation with staging metrics");
    std::string model_path;
    std::vector<std::string> data_files;
    std::string metrics_out;
    std::string metrics_csv_out;
    std::string confusion_out;
    bool absent_as_zero = false;
    eval->add_option("--model", model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", data_files, "SSEF files")->required()->check(CLI::ExistingFile);
    eval->add_option("--metrics-out", metrics_out, "Metrics JSON path");
    eval->add_option("--metrics-csv", metrics_csv_out, "Metrics CSV path (header and one row)");
    eval->add_option("--confusion-out", confusion_out, "Confusion matrix CSV path");
    eval->add_flag("--mf1-absent-as-zero", absent_as_zero,
                   "Average F1 over all five classes, absent ones counting as 0");

    auto* attribute = app.add_subcommand("attribute", "Per-chunk attribution heatmaps");
    std::string method = "sequence";
    std::string epoch_list = "0";
    std::string data_file;
    std::string out_dir = ".";
    std::string rec_name;
    bool negate_gradient = false;
    attribute->add_option("--model", model_path, "Checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    attribute->add_option("--data", data_file, "SSEF file")->required()->check(CLI::ExistingFile);
    attribute->add_option("--method", method, "Attribution head")
        ->check(CLI::IsMember({"voting", "forward", "backward", "sequence"}));
    attribute->add_option("--epochs", epoch_list, "Epoch indices, e.g. 0,4,10-12");
    attribute->add_option("--out-dir", out_dir, "Output directory");
    attribute->add_option("--name", rec_name, "Recording name in file names (default: file stem)");
    attribute->add_flag("--paper-sign", negate_gradient, "Negate the gradient (literal sign convention)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*synth) {
            const auto mix = CLI::detail::split(class_mix, ',');
            if (mix.size() != data::kNumStages) {
                throw CliUsage("--class-mix needs five comma-separated probabilities");
            }
            for (std::size_t i = 0; i < mix.size(); ++i) {
                try {
                    std::size_t pos = 0;
                    spec.class_mix[i] = std::stod(mix[i], &pos);
                    if (pos != mix[i].size()) {
                        throw std::invalid_argument(mix[i]);
                    }
                } catch (const std::exception&) {
                    throw CliUsage("bad --class-mix entry \"" + mix[i] + "\"");
                }
            }
            try {
                data::validate(spec);
            } catch (const ConfigError& e) {
                throw CliUsage(e.what());
            }
            const auto rec = data::generate_synthetic(spec);
            data::write_ssef(rec, synth_out);
            std::size_t counts[data::kNumStages] = {};
            for (auto l : rec.labels) {
                counts[data::stage_index(l)] += 1;
            }
            std::printf("wrote %s: %zu epochs at %u Hz", synth_out.c_str(), rec.size(),
                        rec.sampling_rate_hz);
            for (std::size_t k = 0; k < data::kNumStages; ++k) {
                std::printf(", %s %zu", std::string(data::stage_name(data::kAllStages[k])).c_str(),
                            counts[k]);
            }
            std::printf("\n");
            return 0;
        }

        if (*train_cmd || *distill) {
            model::ModelConfig mc;
            try {
                apply_settings(settings, tc, &mc);
                train::validate(tc);
                model::validate(mc);
            } catch (const ConfigError& e) {
                throw CliUsage(e.what());
            }
            if (history_path.empty()) {
                history_path = output + ".history.csv";
            }
            const auto train_set = read_all(train_files);
            const auto val_set = read_all(val_files);
            tc.on_epoch = print_epoch;

            model::Model<float> result;
            train::History history;
            if (*train_cmd) {
                std::printf("training %s: batch size %zu, max epochs %zu, patience %zu\n",
                            arch.c_str(), tc.batch_size, tc.max_epochs, tc.patience);
                if (arch == "somnonet") {
                    if (!encoder_from.empty()) {
                        throw CliUsage("--encoder-from only applies to --arch linear-head");
                    }
                    result = model::build_somnonet<float>(mc, tc.seed);
                    history = train::train(result, train_set, val_set, tc);
                } else {
                    if (encoder_from.empty()) {
                        throw CliUsage("--arch linear-head needs --encoder-from");
                    }
                    const auto parent = model::load_model(encoder_from);
                    result = train::train_linear_head(parent, train_set, val_set, tc, mc, &history);
                }
            } else {
                const auto parent = model::load_model(parent_path);
                if (parent.config.arch != model::Arch::somnonet) {
                    throw std::runtime_error("parent checkpoint is a " +
                                             std::string(model::arch_name(parent.config.arch)) +
                                             " model, distillation needs a somnonet");
                }
                result = train::train_nano(parent, train_set, val_set, tc, mc, &history);
                const auto pr = model::param_report(parent);
                const auto nr = model::param_report(result);
                print_report("parent", pr);
                print_report("nano", nr);
                std::printf("compression ratio (nano/parent) %.4f, trainable/parent sequence "
                            "%.4f\n",
                            model::compression_ratio(nr, pr),
                            static_cast<double>(nr.trainable()) /
                                static_cast<double>(pr.group(model::Group::sequence)));
            }
            model::save_model(result, output);
            write_text(history_path, train::history_csv(history));
            std::printf("best epoch %zu, validation loss %.4f\n", history.best_epoch,
                        history.best_val_loss);
            print_metrics("best validation", score(result, val_set));
            return 0;
        }

        if (*eval) {
            auto m = model::load_model(model_path);
            const auto recs = read_all(data_files);
            if (scored_count(recs) == 0) {
                std::fprintf(stderr, "error: the test set has no scored epochs\n");
                return 1;
            }
            const auto result = train::evaluate(m, recs);
            const auto cm =
                metrics::confusion(result.all_predictions(), train::all_labels(recs));
            const auto sm = metrics::stage_metrics(cm, absent_as_zero);
            const std::string json = metrics::metrics_json(sm, cm);
            std::printf("%s", json.c_str());
            if (!metrics_out.empty()) {
                write_text(metrics_out, json);
            }
            if (!metrics_csv_out.empty()) {
                write_text(metrics_csv_out,
                           metrics::metrics_csv_header() + metrics::metrics_csv_row(sm));
            }
            if (!confusion_out.empty()) {
                write_text(confusion_out, metrics::confusion_csv(cm));
            }
            return 0;
        }

        if (*attribute) {
            auto m = model::load_model(model_path);
            const auto rec = data::read_ssef(data_file);
            const auto epochs = parse_epoch_list(epoch_list, rec.size());
            const auto which = attribution::method_from_name(method);
            if (rec_name.empty()) {
                rec_name = fs::path(data_file).stem().string();
            }
            for (std::size_t e : epochs) {
                const auto att = attribution::attribute_epoch(m, rec, e, which, negate_gradient);
                const auto path = attribution::export_heatmap(att, rec.epochs[e], out_dir, rec_name);
                std::printf("epoch %zu predicted %s -> %s\n", e,
                            std::string(data::stage_name(att.predicted)).c_str(),
                            path.string().c_str());
            }
            return 0;
        }
    } catch (const CliUsage& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
