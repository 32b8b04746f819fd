#pragma once

#include <map>
#include <string>
#include <vector>

#include "stimcal/correlation.hpp"
#include "stimcal/field_statistics.hpp"

namespace stimcal {

inline constexpr const char* kCodeVersion = "stimcal 1.0.0";

// Results of one calibration estimation, plus named scalar diagnostics.
// Serialized both as a human-readable text report and as a machine-readable
// key-value file; both forms are deterministic for a fixed run.
struct CalibrationReport {
    std::string source;  // "simulate" or "analyze"
    ValueWithUncertainty eta_ratio;       // ratio estimator
    ValueWithUncertainty eta_q_integral;  // gain-robust integral estimator
    double mean_current_1 = 0.0;          // e/s
    double mean_current_2 = 0.0;
    double integration_window = 0.0;   // s, half-width of the lag integral
    double plateau_halfwidth = 0.0;    // s
    int n_blocks = 0;
    std::int64_t n_samples = 0;
    std::map<std::string, double> diagnostics;

    bool has_theory = false;
    FluxStatistics theory;
};

void write_report_text(const std::string& path, const CalibrationReport& report);
void write_report_kv(const std::string& path, const CalibrationReport& report);

// Parses a "key = value" file back into a map (used by tests and tooling).
std::map<std::string, std::string> read_kv_file(const std::string& path);

// Lag-domain covariance CSV: columns lag_s,value,std_error (std_error column
// written as empty when unavailable).
void write_covariance_csv(const std::string& path, const CorrelationFunction& cf,
                          const std::vector<double>& std_errors);

// Summary table CSV: key,value rows mirroring the kv report.
void write_summary_csv(const std::string& path, const CalibrationReport& report);

}  // namespace stimcal
