#include "somnonet/data/synthetic.hpp"

#include "somnonet/errors.hpp"
#include "somnonet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace somnonet::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Paul Kellet's pink filter, zero-mean and rescaled to the requested sigma.
void add_pink_noise(std::vector<double>& x, double sigma, Rng& rng)
{
    double b[7] = {0, 0, 0, 0, 0, 0, 0};
    std::vector<double> pink(x.size());
    const std::size_t warmup = 2048;
    for (std::size_t i = 0; i < warmup + x.size(); ++i) {
        const double white = rng.normal();
        b[0] = 0.99886 * b[0] + white * 0.0555179;
        b[1] = 0.99332 * b[1] + white * 0.0750759;
        b[2] = 0.96900 * b[2] + white * 0.1538520;
        b[3] = 0.86650 * b[3] + white * 0.3104856;
        b[4] = 0.55000 * b[4] + white * 0.5329522;
        b[5] = -0.7616 * b[5] - white * 0.0168980;
        const double out = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + white * 0.5362;
        b[6] = white * 0.115926;
        if (i >= warmup) {
            pink[i - warmup] = out;
        }
    }
    const double mean = std::accumulate(pink.begin(), pink.end(), 0.0) / static_cast<double>(pink.size());
    double var = 0.0;
    for (double v : pink) {
        var += (v - mean) * (v - mean);
    }
    const double sd = std::sqrt(var / static_cast<double>(pink.size()));
    const double gain = sd > 0.0 ? sigma / sd : 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] += (pink[i] - mean) * gain;
    }
}

enum class Envelope { tukey, hann };

// Sum of `components` sinusoids drawn from [f_lo, f_hi] Hz with random phases; peak
// amplitude of the sum is at most `amplitude`.
void add_oscillation(std::vector<double>& x, std::size_t begin, std::size_t end, double rate,
                     double f_lo, double f_hi, double amplitude, int components,
                     Envelope envelope, Rng& rng)
{
    std::vector<double> freq(components), phase(components), weight(components);
    double total = 0.0;
    for (int k = 0; k < components; ++k) {
        freq[k] = rng.uniform(f_lo, f_hi);
        phase[k] = rng.uniform(0.0, kTwoPi);
        weight[k] = rng.uniform(0.5, 1.0);
        total += weight[k];
    }
    const std::size_t n = end - begin;
    const double ramp = std::min(0.1 * rate, static_cast<double>(n) / 4.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(begin + i) / rate;
        double v = 0.0;
        for (int k = 0; k < components; ++k) {
            v += weight[k] / total * std::sin(kTwoPi * freq[k] * t + phase[k]);
        }
        double env = 1.0;
        const double pos = static_cast<double>(i);
        if (envelope == Envelope::hann) {
            env = 0.5 - 0.5 * std::cos(kTwoPi * (pos + 0.5) / static_cast<double>(n));
        } else if (ramp > 0.0) {
            const double edge = std::min(pos + 0.5, static_cast<double>(n) - pos - 0.5);
            if (edge < ramp) {
                env = 0.5 - 0.5 * std::cos(std::numbers::pi * edge / ramp);
            }
        }
        x[begin + i] += amplitude * env * v;
    }
}

// Splits `total` into `parts` integers, each at least `minimum`.
std::vector<std::size_t> random_composition(std::size_t total, std::size_t parts,
                                            std::size_t minimum, Rng& rng)
{
    std::vector<std::size_t> out(parts, minimum);
    for (std::size_t left = total - parts * minimum; left > 0; --left) {
        ++out[rng.index(parts)];
    }
    return out;
}

struct SecondSpan {
    std::size_t begin;
    std::size_t end;
};

// Places `bursts` non-overlapping whole-second spans covering `covered` of `length`
// seconds, separated by at least one second.
std::vector<SecondSpan> place_bursts(std::size_t length, std::size_t covered, std::size_t bursts,
                                     Rng& rng)
{
    bursts = std::max<std::size_t>(1, std::min(bursts, covered));
    while (bursts > 1 && length - covered < bursts - 1) {
        --bursts;
    }
    const auto sizes = random_composition(covered, bursts, 1, rng);
    // gaps[0] before the first burst, gaps[bursts] after the last; inner gaps >= 1
    const std::size_t free = length - covered;
    std::vector<std::size_t> gaps(bursts + 1, 0);
    for (std::size_t g = 1; g < bursts; ++g) {
        gaps[g] = 1;
    }
    for (std::size_t left = free - (bursts - 1); left > 0; --left) {
        ++gaps[rng.index(bursts + 1)];
    }
    std::vector<SecondSpan> spans;
    std::size_t cursor = 0;
    for (std::size_t b = 0; b < bursts; ++b) {
        cursor += gaps[b];
        spans.push_back({cursor, cursor + sizes[b]});
        cursor += sizes[b];
    }
    return spans;
}

std::vector<SecondSpan> complement(const std::vector<SecondSpan>& spans, std::size_t length)
{
    std::vector<SecondSpan> out;
    std::size_t cursor = 0;
    for (const auto& s : spans) {
        if (s.begin > cursor) {
            out.push_back({cursor, s.begin});
        }
        cursor = s.end;
    }
    if (cursor < length) {
        out.push_back({cursor, length});
    }
    return out;
}

SleepStage draw_stage(const std::array<double, kNumStages>& mix, Rng& rng)
{
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t c = 0; c < kNumStages; ++c) {
        if (mix[c] > 0.0) {
            last_positive = c;
        }
        acc += mix[c];
        if (u < acc && mix[c] > 0.0) {
            return static_cast<SleepStage>(c);
        }
    }
    return static_cast<SleepStage>(last_positive);
}

struct EpochSynth {
    std::vector<float> samples;
    std::vector<RhythmSpan> spans;
};

EpochSynth synthesize_epoch(SleepStage stage, const SyntheticSpec& spec, Rng& rng)
{
    const double rate = spec.sampling_rate_hz;
    const std::size_t length_s = spec.epoch_len_s;
    const std::size_t n = static_cast<std::size_t>(spec.sampling_rate_hz) * length_s;
    std::vector<double> x(n, 0.0);
    std::vector<RhythmSpan> spans;
    add_pink_noise(x, spec.noise_sigma, rng);

    auto to_samples = [&](std::size_t sec) { return sec * spec.sampling_rate_hz; };
    auto annotate = [&](std::size_t b, std::size_t e, const char* tag) {
        spans.push_back(RhythmSpan{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(e), tag});
    };
    auto add_alpha = [&](const SecondSpan& s) {
        add_oscillation(x, to_samples(s.begin), to_samples(s.end), rate, 8.0, 13.0,
                        rng.uniform(20.0, 50.0), 3, Envelope::tukey, rng);
        annotate(to_samples(s.begin), to_samples(s.end), kTagAlpha);
    };
    auto add_lamf = [&](std::size_t b, std::size_t e) {
        add_oscillation(x, b, e, rate, 4.0, 7.0, rng.uniform(10.0, 20.0), 3, Envelope::tukey, rng);
        annotate(b, e, kTagLamf);
    };

    switch (stage) {
    case SleepStage::W: {
        const std::size_t minimum = length_s / 2 + 1;
        const auto target = static_cast<std::size_t>(
            std::llround(rng.uniform(0.52, 0.60) * static_cast<double>(length_s)));
        const std::size_t covered = std::min(length_s, std::max(minimum, target));
        for (const auto& s : place_bursts(length_s, covered, 1 + rng.index(3), rng)) {
            add_alpha(s);
        }
        break;
    }
    case SleepStage::N1: {
        const std::size_t maximum = (length_s - 1) / 2;
        const auto target = static_cast<std::size_t>(
            std::llround(rng.uniform(0.10, 0.40) * static_cast<double>(length_s)));
        const std::size_t covered = std::max<std::size_t>(1, std::min(maximum, target));
        const auto alpha = maximum == 0 ? std::vector<SecondSpan>{}
                                        : place_bursts(length_s, covered, 1 + rng.index(2), rng);
        for (const auto& s : alpha) {
            add_alpha(s);
        }
        for (const auto& s : complement(alpha, length_s)) {
            add_lamf(to_samples(s.begin), to_samples(s.end));
        }
        break;
    }
    case SleepStage::N2: {
        const std::size_t count = 2 + rng.index(3);
        std::vector<std::pair<std::size_t, std::size_t>> placed;
        for (std::size_t attempt = 0; placed.size() < count && attempt < 1000; ++attempt) {
            const auto len = static_cast<std::size_t>(rng.uniform(0.5, 1.5) * rate);
            if (len == 0 || len >= n) {
                continue;
            }
            const std::size_t b = rng.index(n - len);
            const std::size_t e = b + len;
            const bool clash = std::any_of(placed.begin(), placed.end(), [&](const auto& p) {
                return b < p.second + static_cast<std::size_t>(rate / 2) &&
                       p.first < e + static_cast<std::size_t>(rate / 2);
            });
            if (!clash) {
                placed.emplace_back(b, e);
            }
        }
        std::sort(placed.begin(), placed.end());
        for (const auto& [b, e] : placed) {
            add_oscillation(x, b, e, rate, 12.0, 14.0, rng.uniform(20.0, 40.0), 1, Envelope::hann,
                            rng);
            annotate(b, e, kTagSpindle);
        }
        break;
    }
    case SleepStage::N3: {
        const auto target = static_cast<std::size_t>(
            std::llround(rng.uniform(0.30, 0.60) * static_cast<double>(length_s)));
        const std::size_t covered = std::clamp<std::size_t>(target, 1, length_s);
        for (const auto& s : place_bursts(length_s, covered, 1 + rng.index(2), rng)) {
            add_oscillation(x, to_samples(s.begin), to_samples(s.end), rate, 0.5, 2.0,
                            rng.uniform(75.0, 150.0), 2, Envelope::tukey, rng);
            annotate(to_samples(s.begin), to_samples(s.end), kTagSlowWave);
        }
        break;
    }
    case SleepStage::R:
        add_lamf(0, n);
        break;
    case SleepStage::excluded:
        break;
    }

    EpochSynth out;
    out.samples.resize(n);
    std::transform(x.begin(), x.end(), out.samples.begin(),
                   [](double v) { return static_cast<float>(v); });
    out.spans = std::move(spans);
    return out;
}

} // namespace

void validate(const SyntheticSpec& spec)
{
    if (spec.sampling_rate_hz == 0 || spec.epoch_len_s == 0) {
        throw ConfigError("sampling rate and epoch length must be positive");
    }
    if (spec.epoch_len_s < 3) {
        throw ConfigError("epoch length must be at least 3 s to place rhythm bursts");
    }
    double total = 0.0;
    for (double p : spec.class_mix) {
        if (!(p >= 0.0)) {
            throw ConfigError("class mix entries must be non-negative");
        }
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("class mix sums to " + std::to_string(total) + ", expected 1");
    }
    if (!(spec.noise_sigma >= 0.0)) {
        throw ConfigError("noise sigma must be non-negative");
    }
    if (!(spec.persistence >= 0.0 && spec.persistence <= 1.0)) {
        throw ConfigError("persistence must lie in [0, 1]");
    }
}

Recording generate_synthetic(const SyntheticSpec& spec)
{
    validate(spec);
    Rng rng(spec.rng_seed);
    Recording rec;
    rec.sampling_rate_hz = spec.sampling_rate_hz;
    rec.epoch_len_s = spec.epoch_len_s;
    const std::size_t total = spec.n_subjects * spec.epochs_per_subject;
    rec.epochs.reserve(total);
    rec.labels.reserve(total);
    rec.rhythm_annotations.reserve(total);
    for (std::size_t s = 0; s < spec.n_subjects; ++s) {
        SleepStage stage = draw_stage(spec.class_mix, rng);
        for (std::size_t e = 0; e < spec.epochs_per_subject; ++e) {
            if (e > 0 && rng.uniform() >= spec.persistence) {
                stage = draw_stage(spec.class_mix, rng);
            }
            auto epoch = synthesize_epoch(stage, spec, rng);
            rec.epochs.push_back(std::move(epoch.samples));
            rec.labels.push_back(stage);
            rec.rhythm_annotations.push_back(std::move(epoch.spans));
        }
    }
    return rec;
}

double tag_coverage(const Recording& rec, std::size_t epoch, const char* tag)
{
    const std::size_t n = rec.samples_per_epoch();
    if (rec.rhythm_annotations.empty() || n == 0) {
        return 0.0;
    }
    std::vector<bool> covered(n, false);
    for (const auto& span : rec.rhythm_annotations.at(epoch)) {
        if (span.tag == tag) {
            for (std::size_t i = span.start_sample; i < span.end_sample && i < n; ++i) {
                covered[i] = true;
            }
        }
    }
    return static_cast<double>(std::count(covered.begin(), covered.end(), true)) /
           static_cast<double>(n);
}

} // namespace somnonet::data
