#include "stimcal/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace stimcal {
namespace {

struct FileHandle {
    std::FILE* f;
    explicit FileHandle(const std::string& path, const char* what) {
        f = std::fopen(path.c_str(), "w");
        if (!f) throw UsageError(std::string(what) + ": cannot open " + path);
    }
    ~FileHandle() {
        if (f) std::fclose(f);
    }
};

// One fixed ordering for the scalar fields shared by the kv report and the
// summary CSV.
std::vector<std::pair<std::string, double>> scalar_fields(const CalibrationReport& r) {
    std::vector<std::pair<std::string, double>> out = {
        {"eta2_ratio_estimate", r.eta_ratio.value},
        {"eta2_ratio_uncertainty", r.eta_ratio.uncertainty},
        {"eta2_q2_integral_estimate", r.eta_q_integral.value},
        {"eta2_q2_integral_uncertainty", r.eta_q_integral.uncertainty},
        {"mean_current_1_e_per_s", r.mean_current_1},
        {"mean_current_2_e_per_s", r.mean_current_2},
        {"integration_window_s", r.integration_window},
        {"plateau_halfwidth_s", r.plateau_halfwidth},
        {"n_blocks", static_cast<double>(r.n_blocks)},
        {"n_samples", static_cast<double>(r.n_samples)},
    };
    if (r.has_theory) {
        out.emplace_back("theory_mean_flux_1_per_s", r.theory.mean_flux_1);
        out.emplace_back("theory_mean_flux_2_per_s", r.theory.mean_flux_2);
        out.emplace_back("theory_pair_rate_per_s", r.theory.pair_rate);
        out.emplace_back("theory_excess_noise_2_per_s", r.theory.excess_noise_2);
        out.emplace_back("theory_cross_strength_per_s", r.theory.cross_strength);
        out.emplace_back("theory_coherence_time_s", r.theory.coherence_time);
    }
    for (const auto& [key, value] : r.diagnostics) out.emplace_back("diag_" + key, value);
    return out;
}

}  // namespace

void write_report_text(const std::string& path, const CalibrationReport& r) {
    FileHandle fh(path, "write_report_text");
    std::FILE* f = fh.f;
    std::fprintf(f, "stimulated-PDC analog calibration report (%s)\n", r.source.c_str());
    std::fprintf(f, "=================================================\n\n");
    std::fprintf(f, "quantum efficiency estimates\n");
    std::fprintf(f, "  ratio estimator      eta2        = %.6g +- %.3g\n", r.eta_ratio.value,
                 r.eta_ratio.uncertainty);
    std::fprintf(f, "  integral estimator   eta2*<q2>   = %.6g +- %.3g (e)\n",
                 r.eta_q_integral.value, r.eta_q_integral.uncertainty);
    std::fprintf(f, "\nmean currents\n");
    std::fprintf(f, "  <i1> = %.6g e/s\n", r.mean_current_1);
    std::fprintf(f, "  <i2> = %.6g e/s\n", r.mean_current_2);
    std::fprintf(f, "\nestimation windows\n");
    std::fprintf(f, "  lag integration half-width = %.6g s\n", r.integration_window);
    std::fprintf(f, "  ratio plateau half-width   = %.6g s\n", r.plateau_halfwidth);
    std::fprintf(f, "  bootstrap blocks           = %d\n", r.n_blocks);
    std::fprintf(f, "  samples used               = %lld\n",
                 static_cast<long long>(r.n_samples));
    if (r.has_theory) {
        std::fprintf(f, "\ntheory (quadrature)\n");
        std::fprintf(f, "  <F1>        = %.9g photons/s\n", r.theory.mean_flux_1);
        std::fprintf(f, "  <F2>        = %.9g photons/s\n", r.theory.mean_flux_2);
        std::fprintf(f, "  pair rate   = %.9g photons/s\n", r.theory.pair_rate);
        std::fprintf(f, "  excess(2)   = %.9g photons/s\n", r.theory.excess_noise_2);
        std::fprintf(f, "  cross       = %.9g photons/s\n", r.theory.cross_strength);
        std::fprintf(f, "  tau_coh     = %.9g s\n", r.theory.coherence_time);
    }
    if (!r.diagnostics.empty()) {
        std::fprintf(f, "\ndiagnostics\n");
        for (const auto& [key, value] : r.diagnostics)
            std::fprintf(f, "  %-36s = %.9g\n", key.c_str(), value);
    }
}

void write_report_kv(const std::string& path, const CalibrationReport& r) {
    FileHandle fh(path, "write_report_kv");
    std::fprintf(fh.f, "source = %s\n", r.source.c_str());
    for (const auto& [key, value] : scalar_fields(r))
        std::fprintf(fh.f, "%s = %.17g\n", key.c_str(), value);
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("read_kv_file: cannot open " + path);
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) continue;
        out[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return out;
}

void write_covariance_csv(const std::string& path, const CorrelationFunction& cf,
                          const std::vector<double>& std_errors) {
    FileHandle fh(path, "write_covariance_csv");
    std::fprintf(fh.f, "lag_s,value,std_error\n");
    const bool have_se = std_errors.size() == cf.values.size();
    for (int i = 0; i < cf.size() && i < static_cast<int>(cf.values.size()); ++i) {
        if (have_se)
            std::fprintf(fh.f, "%.17g,%.17g,%.17g\n", cf.lag_of(i),
                         cf.values[static_cast<std::size_t>(i)],
                         std_errors[static_cast<std::size_t>(i)]);
        else
            std::fprintf(fh.f, "%.17g,%.17g,\n", cf.lag_of(i),
                         cf.values[static_cast<std::size_t>(i)]);
    }
}

void write_summary_csv(const std::string& path, const CalibrationReport& r) {
    FileHandle fh(path, "write_summary_csv");
    std::fprintf(fh.f, "key,value\n");
    std::fprintf(fh.f, "source,%s\n", r.source.c_str());
    for (const auto& [key, value] : scalar_fields(r))
        std::fprintf(fh.f, "%s,%.17g\n", key.c_str(), value);
}

}  // namespace stimcal
