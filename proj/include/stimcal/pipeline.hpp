#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stimcal/event_simulator.hpp"
#include "stimcal/field_statistics.hpp"
#include "stimcal/photocurrent.hpp"
#include "stimcal/report.hpp"

namespace stimcal {

struct SeedBeamConfig {
    std::string profile = "gaussian";  // "gaussian" or "tabulated"
    double total_flux_per_s = 0.0;
    double center_frequency_detuning_rad_per_s = 0.0;
    // gaussian profile
    double momentum_width_per_m = 0.0;
    // tabulated profile
    Rect q_grid;
    int rows = 0, cols = 0;
    std::vector<double> values;
};

struct OutputOptions {
    bool write_traces = false;
    bool write_events = false;
    bool write_covariance_csv = true;
    bool write_c22_csv = false;
};

// One run configuration as read from the JSON config file. Every physical
// quantity carries its unit in the key name.
struct RunConfig {
    OpticsGeometry optics;
    double gain_peak = 0.0;
    double gain_momentum_bandwidth_per_m = 0.0;
    double gain_frequency_bandwidth_rad_per_s = 0.0;
    double gain_phase_rad = 0.0;
    SeedBeamConfig seed;
    DetectorModel detector1, detector2;
    double duration_s = 0.0;
    std::uint64_t rng_seed = 0;
    double sample_rate_hz = 0.0;
    bool regions_auto = true;
    Rect region1_m, region2_m;
    bool detrend_per_block = false;
    OutputOptions outputs;
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);
std::string canonical_config_json(const RunConfig& config);

// Checks the documented cross-field rules. Violations throw UsageError with
// the rule spelled out; soft conditions come back as warning strings.
std::vector<std::string> validate_run_config(const RunConfig& config);

struct RunManifest {
    std::string code_version;
    std::uint64_t config_hash = 0;
    std::uint64_t rng_seed = 0;
    std::uint64_t bootstrap_seed = 0;
    std::string timestamp_utc;
    std::vector<std::string> artifacts;  // paths relative to the output directory
};

void write_manifest(const std::string& path, const RunManifest& manifest);

std::uint64_t fnv1a_hash(const std::string& bytes);

struct TheorySetup {
    GainModel gain;
    SeedBeam seed;
    DetectionRegion region1, region2;
    FluxStatistics stats;
    double coverage1 = 0.0, coverage2 = 0.0;
};

// Builds gain/seed/regions from the config, enforces the seed-coverage
// invariant, and evaluates the flux statistics.
TheorySetup compute_theory(const RunConfig& config);

struct RunArtifacts {
    CalibrationReport report;
    RunManifest manifest;
    std::vector<std::string> warnings;
};

// Full pipeline: theory -> event simulation -> trace synthesis ->
// correlation estimation -> report + artifacts in out_dir.
RunArtifacts run_calibration(const RunConfig& config, const std::string& out_dir);

struct AnalyzeOptions {
    std::string out_dir;
    bool write_covariance_csv = true;
    bool write_c22_csv = false;
    std::uint64_t bootstrap_seed = kDefaultBootstrapSeed;
};

// Estimation-only pipeline on two imported trace files. Detector pulse
// parameters are taken from the config; the traces supply the samples.
CalibrationReport analyze_traces(const std::string& trace1_path,
                                 const std::string& trace2_path, const RunConfig& config,
                                 const AnalyzeOptions& options);

// Writes lag-domain covariance CSVs and the summary table; returns the
// artifact file names.
std::vector<std::string> emit_plot_data(const CalibrationReport& report,
                                        const PairCovariance& covariance,
                                        const EstimationResult& estimation,
                                        const OutputOptions& outputs,
                                        const std::string& out_dir);

// Built-in oracle suite: quick self-checks of the numerical machinery.
// Returns true when every check passes; prints one line per check unless
// quiet.
bool run_selftest(bool quiet);

}  // namespace stimcal
