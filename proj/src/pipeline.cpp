#include "stimcal/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "json.hpp"
#include "stimcal/correlation.hpp"
#include "stimcal/quadrature.hpp"

namespace stimcal {
namespace {

using nlohmann::json;

const char* pulse_shape_name(PulseShape s) {
    switch (s) {
        case PulseShape::gaussian: return "gaussian";
        case PulseShape::rectangular: return "rectangular";
        case PulseShape::one_sided_exponential: return "one_sided_exponential";
    }
    return "?";
}

PulseShape pulse_shape_from(const std::string& s) {
    if (s == "gaussian") return PulseShape::gaussian;
    if (s == "rectangular") return PulseShape::rectangular;
    if (s == "one_sided_exponential") return PulseShape::one_sided_exponential;
    throw UsageError("config: unknown pulse_shape '" + s +
                     "' (gaussian | rectangular | one_sided_exponential)");
}

const char* charge_model_name(ChargeModel m) {
    return m == ChargeModel::deterministic ? "deterministic" : "exponential_gain";
}

ChargeModel charge_model_from(const std::string& s) {
    if (s == "deterministic") return ChargeModel::deterministic;
    if (s == "exponential_gain") return ChargeModel::exponential_gain;
    throw UsageError("config: unknown charge_model '" + s +
                     "' (deterministic | exponential_gain)");
}

DetectorModel parse_detector(const json& j) {
    DetectorModel d;
    d.eta = j.at("eta").get<double>();
    d.pulse_width = j.at("pulse_width_s").get<double>();
    d.pulse_shape = pulse_shape_from(j.value("pulse_shape", std::string("rectangular")));
    d.charge_mean = j.value("charge_mean_e", 1.0);
    d.charge_model = charge_model_from(j.value("charge_model", std::string("deterministic")));
    d.dark_rate = j.value("dark_rate_per_s", 0.0);
    return d;
}

json detector_json(const DetectorModel& d) {
    return json{{"eta", d.eta},
                {"pulse_width_s", d.pulse_width},
                {"pulse_shape", pulse_shape_name(d.pulse_shape)},
                {"charge_mean_e", d.charge_mean},
                {"charge_model", charge_model_name(d.charge_model)},
                {"dark_rate_per_s", d.dark_rate}};
}

Rect parse_rect(const json& j, const char* suffix) {
    Rect r;
    r.x_lo = j.at(std::string("x_lo") + suffix).get<double>();
    r.x_hi = j.at(std::string("x_hi") + suffix).get<double>();
    r.y_lo = j.at(std::string("y_lo") + suffix).get<double>();
    r.y_hi = j.at(std::string("y_hi") + suffix).get<double>();
    return r;
}

json rect_json(const Rect& r, const char* suffix) {
    json j;
    j[std::string("x_lo") + suffix] = r.x_lo;
    j[std::string("x_hi") + suffix] = r.x_hi;
    j[std::string("y_lo") + suffix] = r.y_lo;
    j[std::string("y_hi") + suffix] = r.y_hi;
    return j;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw UsageError(std::string("config: invalid JSON: ") + e.what());
    }
    try {
        RunConfig c;
        const json& optics = j.at("optics");
        c.optics.wavelength_m = optics.at("wavelength_m").get<double>();
        c.optics.focal_length_m = optics.at("focal_length_m").get<double>();
        c.optics.crystal_length_m = optics.at("crystal_length_m").get<double>();
        c.optics.central_angle_rad = optics.at("central_angle_rad").get<double>();

        const json& gain = j.at("gain");
        c.gain_peak = gain.at("peak_gain").get<double>();
        c.gain_momentum_bandwidth_per_m = gain.at("momentum_bandwidth_per_m").get<double>();
        c.gain_frequency_bandwidth_rad_per_s =
            gain.at("frequency_bandwidth_rad_per_s").get<double>();
        c.gain_phase_rad = gain.value("phase_rad", 0.0);

        const json& seed = j.at("seed_beam");
        c.seed.profile = seed.value("profile", std::string("gaussian"));
        c.seed.center_frequency_detuning_rad_per_s =
            seed.value("center_frequency_detuning_rad_per_s", 0.0);
        if (c.seed.profile == "gaussian") {
            c.seed.total_flux_per_s = seed.at("total_flux_per_s").get<double>();
            c.seed.momentum_width_per_m = seed.at("momentum_width_per_m").get<double>();
        } else if (c.seed.profile == "tabulated") {
            c.seed.q_grid = parse_rect(seed.at("q_grid"), "_per_m");
            c.seed.rows = seed.at("rows").get<int>();
            c.seed.cols = seed.at("cols").get<int>();
            c.seed.values = seed.at("values_per_s_m2").get<std::vector<double>>();
        } else {
            throw UsageError("config: seed_beam.profile must be 'gaussian' or 'tabulated'");
        }

        const json& detectors = j.at("detectors");
        c.detector1 = parse_detector(detectors.at("arm1"));
        c.detector2 = parse_detector(detectors.at("arm2"));

        const json& plan = j.at("plan");
        c.duration_s = plan.at("duration_s").get<double>();
        c.rng_seed = plan.at("rng_seed").get<std::uint64_t>();
        c.sample_rate_hz = plan.at("sample_rate_hz").get<double>();

        if (j.contains("regions")) {
            const json& regions = j.at("regions");
            c.regions_auto = regions.value("auto", true);
            if (!c.regions_auto) {
                c.region1_m = parse_rect(regions.at("arm1"), "_m");
                c.region2_m = parse_rect(regions.at("arm2"), "_m");
            }
        }
        if (j.contains("estimation"))
            c.detrend_per_block = j.at("estimation").value("detrend_per_block", false);
        if (j.contains("outputs")) {
            const json& outputs = j.at("outputs");
            c.outputs.write_traces = outputs.value("write_traces", false);
            c.outputs.write_events = outputs.value("write_events", false);
            c.outputs.write_covariance_csv = outputs.value("write_covariance_csv", true);
            c.outputs.write_c22_csv = outputs.value("write_c22_csv", false);
        }
        return c;
    } catch (const json::exception& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("config: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string canonical_config_json(const RunConfig& c) {
    json j;
    j["optics"] = {{"wavelength_m", c.optics.wavelength_m},
                   {"focal_length_m", c.optics.focal_length_m},
                   {"crystal_length_m", c.optics.crystal_length_m},
                   {"central_angle_rad", c.optics.central_angle_rad}};
    j["gain"] = {{"peak_gain", c.gain_peak},
                 {"momentum_bandwidth_per_m", c.gain_momentum_bandwidth_per_m},
                 {"frequency_bandwidth_rad_per_s", c.gain_frequency_bandwidth_rad_per_s},
                 {"phase_rad", c.gain_phase_rad}};
    j["seed_beam"] = {{"profile", c.seed.profile},
                      {"center_frequency_detuning_rad_per_s",
                       c.seed.center_frequency_detuning_rad_per_s}};
    if (c.seed.profile == "gaussian") {
        j["seed_beam"]["total_flux_per_s"] = c.seed.total_flux_per_s;
        j["seed_beam"]["momentum_width_per_m"] = c.seed.momentum_width_per_m;
    } else {
        j["seed_beam"]["q_grid"] = rect_json(c.seed.q_grid, "_per_m");
        j["seed_beam"]["rows"] = c.seed.rows;
        j["seed_beam"]["cols"] = c.seed.cols;
        j["seed_beam"]["values_per_s_m2"] = c.seed.values;
    }
    j["detectors"] = {{"arm1", detector_json(c.detector1)}, {"arm2", detector_json(c.detector2)}};
    j["plan"] = {{"duration_s", c.duration_s},
                 {"rng_seed", c.rng_seed},
                 {"sample_rate_hz", c.sample_rate_hz}};
    j["regions"]["auto"] = c.regions_auto;
    if (!c.regions_auto) {
        j["regions"]["arm1"] = rect_json(c.region1_m, "_m");
        j["regions"]["arm2"] = rect_json(c.region2_m, "_m");
    }
    j["estimation"] = {{"detrend_per_block", c.detrend_per_block}};
    j["outputs"] = {{"write_traces", c.outputs.write_traces},
                    {"write_events", c.outputs.write_events},
                    {"write_covariance_csv", c.outputs.write_covariance_csv},
                    {"write_c22_csv", c.outputs.write_c22_csv}};
    return j.dump(2);
}

std::uint64_t fnv1a_hash(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

struct DerivedEstimationSetup {
    std::int64_t total_samples = 0;
    std::int64_t trim_samples = 0;
    int max_lag_bins = 0;
    double max_lag_s = 0.0;
    double plateau_halfwidth = 0.0;
    double integration_halfwidth = 0.0;
    int segment_samples = 0;
    int segments_per_block = 0;
    std::int64_t n_blocks = 0;
};

DerivedEstimationSetup derive_estimation_setup(const DetectorModel& det1,
                                               const DetectorModel& det2, double fs,
                                               double duration) {
    DerivedEstimationSetup s;
    const double tau1 = det1.pulse_width;
    const double tau2 = det2.pulse_width;
    const double tau_max = std::max(tau1, tau2);
    s.max_lag_s = std::max(10.0 * tau_max, 7.0 * (tau1 + tau2));
    s.max_lag_bins = std::max(1, static_cast<int>(std::llround(s.max_lag_s * fs)));
    s.plateau_halfwidth = 0.5 * std::min(tau1, tau2);
    s.integration_halfwidth = 6.0 * (tau1 + tau2);
    s.total_samples = std::llround(duration * fs);
    const int support1 = pulse_kernel(det1, fs).support_samples();
    const int support2 = pulse_kernel(det2, fs).support_samples();
    s.trim_samples = std::max(support1, support2);
    const std::int64_t trimmed = s.total_samples - 2 * s.trim_samples;
    if (trimmed < 4 * (s.max_lag_bins + 1))
        throw UsageError("run too short: the edge-trimmed trace does not cover the lag range");
    s.segment_samples = static_cast<int>(
        std::min<std::int64_t>(trimmed, default_segment_samples(s.max_lag_bins)));
    const double seg_time = s.segment_samples / fs;
    const double block_target =
        std::max({100.0 * tau_max, duration / 256.0, seg_time});
    s.segments_per_block = static_cast<int>(
        std::clamp<std::int64_t>(std::llround(block_target / seg_time), 1, 1 << 20));
    const std::int64_t block_samples =
        static_cast<std::int64_t>(s.segment_samples) * s.segments_per_block;
    s.n_blocks = trimmed / block_samples + (trimmed % block_samples >= 2 ? 1 : 0);
    return s;
}

}  // namespace

std::vector<std::string> validate_run_config(const RunConfig& c) {
    std::vector<std::string> warnings;
    c.optics.validate();
    c.detector1.validate();
    c.detector2.validate();
    if (!(c.duration_s > 0.0)) throw UsageError("config: plan.duration_s must be positive");
    if (!(c.sample_rate_hz > 0.0))
        throw UsageError("config: plan.sample_rate_hz must be positive");
    if (!(c.gain_peak >= 0.0))
        throw UsageError("config: gain.peak_gain must be >= 0");
    if (c.gain_peak > 0.1)
        throw UsageError("config: gain.peak_gain exceeds 0.1; calibration runs require the "
                         "small-gain regime G <= 0.1");
    if (!(c.gain_momentum_bandwidth_per_m > 0.0) ||
        !(c.gain_frequency_bandwidth_rad_per_s > 0.0))
        throw UsageError("config: gain bandwidths must be positive");

    const double tau_coh = 1.0 / c.gain_frequency_bandwidth_rad_per_s;
    for (const auto& [det, name] :
         {std::pair{&c.detector1, "arm1"}, std::pair{&c.detector2, "arm2"}}) {
        if (det->pulse_width < 100.0 * tau_coh)
            throw UsageError(std::string("config: detectors.") + name +
                             ".pulse_width_s violates tau_p >= 100 * tau_coh (the estimators "
                             "assume the pulse averages over the coherence time)");
        if (c.sample_rate_hz * det->pulse_width < 20.0 - 1e-9)
            throw UsageError(std::string("config: detectors.") + name +
                             ".pulse_width_s undersampled; need sample_rate_hz * pulse_width_s "
                             ">= 20");
    }

    if (c.seed.profile == "gaussian") {
        if (!(c.seed.total_flux_per_s > 0.0))
            throw UsageError("config: seed_beam.total_flux_per_s must be positive");
        if (!(c.seed.momentum_width_per_m > 0.0))
            throw UsageError("config: seed_beam.momentum_width_per_m must be positive");
        // Analog-regime heuristic; the true per-mode occupation depends on
        // the (unmodeled) seed linewidth.
        const double photons_per_pulse =
            c.seed.total_flux_per_s * std::min(c.detector1.pulse_width, c.detector2.pulse_width);
        if (photons_per_pulse < 10.0)
            warnings.push_back(
                "seed flux yields fewer than 10 photons per detector resolution time; the "
                "coherent-seed (analog) regime assumption is marginal");
    }
    if (!c.regions_auto) {
        c.region1_m.validate();
        c.region2_m.validate();
    }

    derive_estimation_setup(c.detector1, c.detector2, c.sample_rate_hz, c.duration_s);
    return warnings;
}

TheorySetup compute_theory(const RunConfig& c) {
    TheorySetup t;
    t.gain = GainModel::for_geometry(c.gain_peak, c.gain_momentum_bandwidth_per_m,
                                     c.gain_frequency_bandwidth_rad_per_s, c.gain_phase_rad,
                                     c.optics);
    const double q_center = center_momentum(c.optics);
    if (c.seed.profile == "gaussian") {
        t.seed = SeedBeam::gaussian({q_center, 0.0}, c.seed.momentum_width_per_m,
                                    c.seed.total_flux_per_s,
                                    c.seed.center_frequency_detuning_rad_per_s);
    } else {
        t.seed = SeedBeam::tabulated(c.seed.q_grid, c.seed.rows, c.seed.cols, c.seed.values,
                                     c.seed.center_frequency_detuning_rad_per_s);
    }
    if (c.regions_auto) {
        t.region1 = default_region(c.optics, t.seed, Arm::arm1);
        t.region2 = default_region(c.optics, t.seed, Arm::arm2);
    } else {
        t.region1 = {Arm::arm1, c.region1_m};
        t.region2 = {Arm::arm2, c.region2_m};
    }
    t.coverage1 = seed_coverage(c.optics, t.seed, t.region1);
    t.coverage2 = seed_coverage(c.optics, t.seed, t.region2);
    if (t.coverage1 < 0.999 || t.coverage2 < 0.999)
        throw UsageError("config: detection regions capture less than 99.9% of the seed "
                         "image; enlarge the region extents (they must dwarf the seed spot)");
    t.stats = compute_flux_statistics(t.gain, c.optics, t.seed, t.region1, t.region2);
    return t;
}

void write_manifest(const std::string& path, const RunManifest& m) {
    json j;
    j["code_version"] = m.code_version;
    j["config_hash_fnv1a64"] = m.config_hash;
    j["rng_seed"] = m.rng_seed;
    j["bootstrap_seed"] = m.bootstrap_seed;
    j["timestamp_utc"] = m.timestamp_utc;
    j["artifacts"] = m.artifacts;
    std::ofstream out(path);
    if (!out) throw UsageError("write_manifest: cannot open " + path);
    out << j.dump(2) << "\n";
}

namespace {

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Keeps the exported event files sorted across the tiny jitter overlap at
// segment boundaries: events above the safety watermark are held back and
// merged with the next segment.
class SortedEventFileSink {
public:
    SortedEventFileSink(const std::string& path, Arm arm) : writer_(path), arm_(arm) {}

    void feed(const PhotonEventStream& s, double t_safe) {
        std::size_t i = 0;
        std::size_t c = 0;
        auto emit_carry = [&]() {
            writer_.write(carry_[c].first, arm_, carry_[c].second);
            ++c;
        };
        while (i < s.size() && s.times[i] < t_safe) {
            while (c < carry_.size() && carry_[c].first <= s.times[i]) emit_carry();
            writer_.write(s.times[i], arm_, s.tags[i]);
            ++i;
        }
        while (c < carry_.size() && carry_[c].first < t_safe) emit_carry();
        std::vector<std::pair<double, EventTag>> next;
        for (; c < carry_.size(); ++c) next.push_back(carry_[c]);
        for (; i < s.size(); ++i) next.emplace_back(s.times[i], s.tags[i]);
        std::sort(next.begin(), next.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        carry_ = std::move(next);
    }

    void finish() {
        for (const auto& [t, tag] : carry_) writer_.write(t, arm_, tag);
        carry_.clear();
        writer_.close();
    }

private:
    EventFileWriter writer_;
    Arm arm_;
    std::vector<std::pair<double, EventTag>> carry_;
};

// Aligns the two synthesizers' output streams, trims one pulse support from
// both trace ends, and feeds equal-length spans to the covariance
// accumulator.
class TrimmedPairFeeder {
public:
    TrimmedPairFeeder(PairCovarianceAccumulator& acc, std::int64_t trim, std::int64_t total)
        : acc_(acc), trim_(trim), total_(total) {}

    void push(int which, std::int64_t first, std::span<const double> samples) {
        const std::int64_t lo = std::max(first, trim_);
        const std::int64_t hi =
            std::min<std::int64_t>(first + static_cast<std::int64_t>(samples.size()),
                                   total_ - trim_);
        if (hi > lo) {
            auto& fifo = fifo_[which];
            fifo.insert(fifo.end(), samples.begin() + (lo - first), samples.begin() + (hi - first));
        }
        drain();
    }

private:
    void drain() {
        const std::size_t n = std::min(fifo_[0].size() - used_[0], fifo_[1].size() - used_[1]);
        if (n == 0) return;
        acc_.consume(std::span<const double>(fifo_[0].data() + used_[0], n),
                     std::span<const double>(fifo_[1].data() + used_[1], n));
        used_[0] += n;
        used_[1] += n;
        for (int w = 0; w < 2; ++w) {
            if (used_[w] > (std::size_t{1} << 20)) {
                fifo_[w].erase(fifo_[w].begin(),
                               fifo_[w].begin() + static_cast<std::ptrdiff_t>(used_[w]));
                used_[w] = 0;
            }
        }
    }

    PairCovarianceAccumulator& acc_;
    std::int64_t trim_, total_;
    std::vector<double> fifo_[2];
    std::size_t used_[2] = {0, 0};
};

}  // namespace

std::vector<std::string> emit_plot_data(const CalibrationReport& report,
                                        const PairCovariance& covariance,
                                        const EstimationResult& estimation,
                                        const OutputOptions& outputs,
                                        const std::string& out_dir) {
    std::vector<std::string> artifacts;
    namespace fs = std::filesystem;
    if (outputs.write_covariance_csv) {
        write_covariance_csv((fs::path(out_dir) / "covariance_c11.csv").string(),
                             covariance.c11, estimation.c11_se);
        artifacts.push_back("covariance_c11.csv");
        write_covariance_csv((fs::path(out_dir) / "covariance_c12.csv").string(),
                             covariance.c12, estimation.c12_se);
        artifacts.push_back("covariance_c12.csv");
        if (outputs.write_c22_csv) {
            write_covariance_csv((fs::path(out_dir) / "covariance_c22.csv").string(),
                                 covariance.c22, estimation.c22_se);
            artifacts.push_back("covariance_c22.csv");
        }
    }
    write_summary_csv((fs::path(out_dir) / "summary.csv").string(), report);
    artifacts.push_back("summary.csv");
    return artifacts;
}

RunArtifacts run_calibration(const RunConfig& config, const std::string& out_dir) {
    RunArtifacts out;
    out.warnings = validate_run_config(config);

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    const TheorySetup theory = compute_theory(config);
    if (!(theory.stats.pair_rate > 0.0))
        throw UsageError("run_calibration: zero pair rate (peak_gain = 0 produces no "
                         "down-conversion); the calibration is degenerate");

    SimulationPlan plan;
    plan.duration = config.duration_s;
    plan.pair_rate = theory.stats.pair_rate;
    plan.seed_rate = config.seed.profile == "gaussian" ? config.seed.total_flux_per_s
                                                       : theory.seed.total_flux;
    plan.coherence_time = theory.stats.coherence_time;
    plan.rng_seed = config.rng_seed;
    plan.eta1 = config.detector1.eta;
    plan.eta2 = config.detector2.eta;
    plan.dark_rate1 = config.detector1.dark_rate;
    plan.dark_rate2 = config.detector2.dark_rate;

    const double fs_hz = config.sample_rate_hz;
    const DerivedEstimationSetup setup =
        derive_estimation_setup(config.detector1, config.detector2, fs_hz, config.duration_s);

    AccumulatorConfig acc_cfg{fs_hz, setup.max_lag_bins, setup.segment_samples,
                              setup.segments_per_block};
    PairCovarianceAccumulator accumulator(acc_cfg);
    TrimmedPairFeeder feeder(accumulator, setup.trim_samples, setup.total_samples);

    const std::uint64_t charge_seed1 =
        substream(plan.rng_seed, StreamId::charges_arm1, 0).next_u64();
    const std::uint64_t charge_seed2 =
        substream(plan.rng_seed, StreamId::charges_arm2, 0).next_u64();

    std::unique_ptr<TraceFileWriter> trace_writer1, trace_writer2;
    if (config.outputs.write_traces) {
        trace_writer1 = std::make_unique<TraceFileWriter>(
            (fs::path(out_dir) / "trace_arm1.trc").string(), fs_hz, 0.0,
            static_cast<std::uint64_t>(setup.total_samples));
        trace_writer2 = std::make_unique<TraceFileWriter>(
            (fs::path(out_dir) / "trace_arm2.trc").string(), fs_hz, 0.0,
            static_cast<std::uint64_t>(setup.total_samples));
    }

    StreamingSynthesizer synth1(config.detector1, fs_hz, setup.total_samples, charge_seed1,
                                [&](std::int64_t first, std::span<const double> block) {
                                    if (trace_writer1) trace_writer1->write(block);
                                    feeder.push(0, first, block);
                                });
    StreamingSynthesizer synth2(config.detector2, fs_hz, setup.total_samples, charge_seed2,
                                [&](std::int64_t first, std::span<const double> block) {
                                    if (trace_writer2) trace_writer2->write(block);
                                    feeder.push(1, first, block);
                                });

    // Diagnostic count windows: wide enough for at most ~2e7 of them, always
    // far above the coherence time.
    const double count_window =
        std::max(config.duration_s / 2.0e7, 1000.0 * plan.coherence_time);
    WindowedCountAccumulator counter(
        count_window, config.duration_s,
        std::round(plan.eta1 * plan.pair_rate * count_window),
        std::round(plan.eta2 * (plan.seed_rate + plan.pair_rate) * count_window));

    std::unique_ptr<SortedEventFileSink> event_sink1, event_sink2;
    if (config.outputs.write_events) {
        event_sink1 = std::make_unique<SortedEventFileSink>(
            (fs::path(out_dir) / "events_arm1.evt").string(), Arm::arm1);
        event_sink2 = std::make_unique<SortedEventFileSink>(
            (fs::path(out_dir) / "events_arm2.evt").string(), Arm::arm2);
    }

    SegmentedEventGenerator generator(plan);
    Rng thin_rng1 = substream(plan.rng_seed, StreamId::thinning_arm1, 0);
    Rng thin_rng2 = substream(plan.rng_seed, StreamId::thinning_arm2, 0);

    std::uint64_t raw_count1 = 0, raw_count2 = 0;
    std::uint64_t detected_count1 = 0, detected_count2 = 0;

    for (int k = 0; k < generator.segment_count(); ++k) {
        const auto [t0, t1] = generator.window(k);
        const ClusterPhotons clusters = generator.generate_clusters(k);
        const PhotonEventStream background = generator.generate_background(k);
        raw_count1 += clusters.arm1.size();
        raw_count2 += clusters.arm2.size() + background.size();

        PhotonEventStream detected1 = thin_detection(clusters.arm1, plan.eta1, thin_rng1);
        PhotonEventStream arm2_raw = merge_streams(clusters.arm2, background);
        PhotonEventStream detected2 = thin_detection(arm2_raw, plan.eta2, thin_rng2);
        if (plan.dark_rate1 > 0.0)
            detected1 = merge_streams(detected1, generator.generate_dark(k, Arm::arm1));
        if (plan.dark_rate2 > 0.0)
            detected2 = merge_streams(detected2, generator.generate_dark(k, Arm::arm2));
        detected_count1 += detected1.size();
        detected_count2 += detected2.size();

        counter.add(Arm::arm1, detected1.times);
        counter.add(Arm::arm2, detected2.times);
        for (double t : detected1.times) synth1.add_event(t);
        for (double t : detected2.times) synth2.add_event(t);

        const double t_safe = t1 - plan.boundary_margin();
        synth1.advance_watermark(t_safe);
        synth2.advance_watermark(t_safe);
        counter.advance(t_safe);
        if (event_sink1) event_sink1->feed(detected1, t_safe);
        if (event_sink2) event_sink2->feed(detected2, t_safe);
    }
    synth1.finish();
    synth2.finish();
    if (event_sink1) event_sink1->finish();
    if (event_sink2) event_sink2->finish();
    if (trace_writer1) trace_writer1->close();
    if (trace_writer2) trace_writer2->close();

    const CountWindowStatistics counts = counter.finalize();
    PairCovariance covariance = accumulator.finalize();

    EstimationOptions est_opt;
    est_opt.plateau_halfwidth = setup.plateau_halfwidth;
    est_opt.integration_halfwidth = setup.integration_halfwidth;
    est_opt.per_lag_uncertainties = true;
    est_opt.detrend_per_block = config.detrend_per_block;
    const EstimationResult estimation = estimate_calibration(covariance, est_opt);

    CalibrationReport& report = out.report;
    report.source = "simulate";
    report.eta_ratio = estimation.eta_ratio;
    report.eta_q_integral = estimation.eta_q_integral;
    report.mean_current_1 = estimation.mean_i1;
    report.mean_current_2 = estimation.mean_i2;
    report.integration_window = setup.integration_halfwidth;
    report.plateau_halfwidth = setup.plateau_halfwidth;
    report.n_blocks = estimation.n_blocks;
    report.n_samples = estimation.n_samples;
    report.has_theory = true;
    report.theory = theory.stats;

    auto& diag = report.diagnostics;
    const double T = counts.window;
    diag["count_window_s"] = T;
    diag["count_windows"] = static_cast<double>(counts.n_windows);
    diag["fano_arm1"] = counts.fano1.value;
    diag["fano_arm1_se"] = counts.fano1.std_error;
    diag["excess_rate_arm2_per_s"] = counts.excess2.value / T;
    diag["excess_rate_arm2_se_per_s"] = counts.excess2.std_error / T;
    diag["excess_rate_arm2_expected_per_s"] =
        2.0 * plan.eta2 * plan.eta2 * plan.pair_rate;
    diag["count_cov_rate_per_s"] = counts.covariance.value / T;
    diag["count_cov_rate_se_per_s"] = counts.covariance.std_error / T;
    diag["count_cov_rate_expected_per_s"] =
        2.0 * plan.eta1 * plan.eta2 * plan.pair_rate;
    const double eta2q2 = plan.eta2 * config.detector2.charge_mean;
    diag["factor2_check"] = estimation.factor2.value / eta2q2;
    diag["factor2_check_se"] = estimation.factor2.uncertainty / eta2q2;
    diag["raw_rate_arm1_per_s"] = static_cast<double>(raw_count1) / plan.duration;
    diag["raw_rate_arm2_per_s"] = static_cast<double>(raw_count2) / plan.duration;
    diag["raw_rate_arm1_rel_err"] =
        static_cast<double>(raw_count1) / plan.duration / theory.stats.mean_flux_1 - 1.0;
    diag["raw_rate_arm2_rel_err"] =
        static_cast<double>(raw_count2) / plan.duration / theory.stats.mean_flux_2 - 1.0;
    diag["detected_rate_arm1_per_s"] = static_cast<double>(detected_count1) / plan.duration;
    diag["detected_rate_arm2_per_s"] = static_cast<double>(detected_count2) / plan.duration;
    diag["mean_current_1_expected_e_per_s"] =
        config.detector1.charge_mean * (plan.eta1 * plan.pair_rate + plan.dark_rate1);
    diag["mean_current_2_expected_e_per_s"] =
        config.detector2.charge_mean *
        (plan.eta2 * (plan.seed_rate + plan.pair_rate) + plan.dark_rate2);
    diag["seed_coverage_arm1"] = theory.coverage1;
    diag["seed_coverage_arm2"] = theory.coverage2;
    diag["flux_difference_vs_seed_rel"] =
        (theory.stats.mean_flux_2 - theory.stats.mean_flux_1 - plan.seed_rate) /
        plan.seed_rate;
    if (config.detrend_per_block) diag["detrend_per_block"] = 1.0;

    RunManifest& manifest = out.manifest;
    manifest.code_version = kCodeVersion;
    manifest.config_hash = fnv1a_hash(canonical_config_json(config));
    manifest.rng_seed = plan.rng_seed;
    manifest.bootstrap_seed = est_opt.bootstrap_seed;
    manifest.timestamp_utc = utc_timestamp();

    write_report_text((fs::path(out_dir) / "report.txt").string(), report);
    manifest.artifacts.push_back("report.txt");
    write_report_kv((fs::path(out_dir) / "report.kv").string(), report);
    manifest.artifacts.push_back("report.kv");
    const std::vector<std::string> plot_files =
        emit_plot_data(report, covariance, estimation, config.outputs, out_dir);
    manifest.artifacts.insert(manifest.artifacts.end(), plot_files.begin(), plot_files.end());
    if (config.outputs.write_traces) {
        manifest.artifacts.push_back("trace_arm1.trc");
        manifest.artifacts.push_back("trace_arm2.trc");
    }
    if (config.outputs.write_events) {
        manifest.artifacts.push_back("events_arm1.evt");
        manifest.artifacts.push_back("events_arm2.evt");
    }
    write_manifest((fs::path(out_dir) / "manifest.json").string(), manifest);
    return out;
}

CalibrationReport analyze_traces(const std::string& trace1_path,
                                 const std::string& trace2_path, const RunConfig& config,
                                 const AnalyzeOptions& options) {
    TraceFileReader reader1(trace1_path);
    TraceFileReader reader2(trace2_path);
    if (reader1.info().sample_rate != reader2.info().sample_rate)
        throw UsageError("analyze_traces: sample rates differ between the two trace files "
                         "(alignment error)");
    if (reader1.info().start_time != reader2.info().start_time)
        throw UsageError("analyze_traces: start times differ (alignment error)");
    if (reader1.info().count != reader2.info().count)
        throw UsageError("analyze_traces: sample counts differ (alignment error)");
    if (reader1.info().count == 0) throw UsageError("analyze_traces: empty traces");

    const double fs_hz = reader1.info().sample_rate;
    const double duration = static_cast<double>(reader1.info().count) / fs_hz;
    const DerivedEstimationSetup setup =
        derive_estimation_setup(config.detector1, config.detector2, fs_hz, duration);

    AccumulatorConfig acc_cfg{fs_hz, setup.max_lag_bins, setup.segment_samples,
                              setup.segments_per_block};
    PairCovarianceAccumulator accumulator(acc_cfg);
    TrimmedPairFeeder feeder(accumulator, setup.trim_samples,
                             static_cast<std::int64_t>(reader1.info().count));

    std::vector<double> buf1(65536), buf2(65536);
    std::int64_t position = 0;
    for (;;) {
        const std::size_t got1 = reader1.read(buf1);
        if (got1 == 0) break;
        const std::size_t got2 = reader2.read(std::span<double>(buf2.data(), got1));
        if (got2 != got1) throw UsageError("analyze_traces: trace lengths diverged mid-read");
        feeder.push(0, position, std::span<const double>(buf1.data(), got1));
        feeder.push(1, position, std::span<const double>(buf2.data(), got2));
        position += static_cast<std::int64_t>(got1);
    }

    PairCovariance covariance = accumulator.finalize();
    EstimationOptions est_opt;
    est_opt.plateau_halfwidth = setup.plateau_halfwidth;
    est_opt.integration_halfwidth = setup.integration_halfwidth;
    est_opt.per_lag_uncertainties = true;
    est_opt.detrend_per_block = config.detrend_per_block;
    est_opt.bootstrap_seed = options.bootstrap_seed;
    const EstimationResult estimation = estimate_calibration(covariance, est_opt);

    CalibrationReport report;
    report.source = "analyze";
    report.eta_ratio = estimation.eta_ratio;
    report.eta_q_integral = estimation.eta_q_integral;
    report.mean_current_1 = estimation.mean_i1;
    report.mean_current_2 = estimation.mean_i2;
    report.integration_window = setup.integration_halfwidth;
    report.plateau_halfwidth = setup.plateau_halfwidth;
    report.n_blocks = estimation.n_blocks;
    report.n_samples = estimation.n_samples;
    if (config.detrend_per_block) report.diagnostics["detrend_per_block"] = 1.0;

    if (!options.out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(options.out_dir);
        write_report_text((fs::path(options.out_dir) / "report.txt").string(), report);
        write_report_kv((fs::path(options.out_dir) / "report.kv").string(), report);
        OutputOptions plot_opts;
        plot_opts.write_covariance_csv = options.write_covariance_csv;
        plot_opts.write_c22_csv = options.write_c22_csv;
        emit_plot_data(report, covariance, estimation, plot_opts, options.out_dir);
    }
    return report;
}

}  // namespace stimcal
