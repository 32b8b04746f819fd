#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "CLI11.hpp"
#include "stimcal/pipeline.hpp"

namespace {

std::string default_out_dir() {
    if (const char* env = std::getenv("STIMCAL_OUT_DIR")) return env;
    return "stimcal_out";
}

void apply_overrides(stimcal::RunConfig& config, std::uint64_t* seed, double* duration) {
    if (seed) config.rng_seed = *seed;
    if (duration) config.duration_s = *duration;
}

void print_report_summary(const stimcal::CalibrationReport& r) {
    std::printf("eta2 (ratio estimator)       = %.6g +- %.3g\n", r.eta_ratio.value,
                r.eta_ratio.uncertainty);
    std::printf("eta2*<q2> (integral estimator) = %.6g +- %.3g e\n", r.eta_q_integral.value,
                r.eta_q_integral.uncertainty);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stimcal: analog-detector calibration with stimulated parametric "
                 "down-conversion (Monte Carlo + correlation estimators)"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = default_out_dir();
    std::string trace1_path, trace2_path;
    bool quiet = false;
    std::uint64_t seed_override = 0;
    bool have_seed = false;
    double duration_override = 0.0;
    bool have_duration = false;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        if (needs_config)
            cmd->add_option("--config", config_path, "run configuration (JSON)")->required();
        cmd->add_option("--out", out_dir, "output directory (default: $STIMCAL_OUT_DIR)");
        cmd->add_flag("--quiet", quiet, "suppress console output");
        cmd->add_option("--seed", seed_override, "override plan.rng_seed")
            ->each([&](const std::string&) { have_seed = true; });
        cmd->add_option("--duration-s", duration_override, "override plan.duration_s")
            ->each([&](const std::string&) { have_duration = true; });
    };

    CLI::App* simulate = app.add_subcommand("simulate", "full pipeline: theory, events, traces, estimation");
    add_common(simulate, true);

    CLI::App* analyze = app.add_subcommand("analyze", "estimation-only pipeline on trace files");
    add_common(analyze, true);
    analyze->add_option("--trace1", trace1_path, "detector-1 trace file")->required();
    analyze->add_option("--trace2", trace2_path, "detector-2 trace file")->required();

    CLI::App* theory = app.add_subcommand("theory", "flux statistics only (quadrature)");
    add_common(theory, true);

    CLI::App* selftest = app.add_subcommand("selftest", "built-in oracle suite");
    selftest->add_flag("--quiet", quiet, "suppress console output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (simulate->parsed()) {
            stimcal::RunConfig config = stimcal::load_run_config(config_path);
            apply_overrides(config, have_seed ? &seed_override : nullptr,
                            have_duration ? &duration_override : nullptr);
            const stimcal::RunArtifacts artifacts = stimcal::run_calibration(config, out_dir);
            for (const std::string& w : artifacts.warnings)
                std::fprintf(stderr, "warning: %s\n", w.c_str());
            if (!quiet) {
                print_report_summary(artifacts.report);
                std::printf("artifacts written to %s\n", out_dir.c_str());
            }
        } else if (analyze->parsed()) {
            stimcal::RunConfig config = stimcal::load_run_config(config_path);
            stimcal::AnalyzeOptions options;
            options.out_dir = out_dir;
            const stimcal::CalibrationReport report =
                stimcal::analyze_traces(trace1_path, trace2_path, config, options);
            if (!quiet) {
                print_report_summary(report);
                std::printf("artifacts written to %s\n", out_dir.c_str());
            }
        } else if (theory->parsed()) {
            stimcal::RunConfig config = stimcal::load_run_config(config_path);
            apply_overrides(config, have_seed ? &seed_override : nullptr,
                            have_duration ? &duration_override : nullptr);
            stimcal::validate_run_config(config);
            const stimcal::TheorySetup setup = stimcal::compute_theory(config);
            if (!quiet) {
                std::printf("mean_flux_1_per_s = %.9g\n", setup.stats.mean_flux_1);
                std::printf("mean_flux_2_per_s = %.9g\n", setup.stats.mean_flux_2);
                std::printf("pair_rate_per_s = %.9g\n", setup.stats.pair_rate);
                std::printf("excess_noise_2_per_s = %.9g\n", setup.stats.excess_noise_2);
                std::printf("cross_strength_per_s = %.9g\n", setup.stats.cross_strength);
                std::printf("coherence_time_s = %.9g\n", setup.stats.coherence_time);
                std::printf("seed_coverage_arm1 = %.9g\n", setup.coverage1);
                std::printf("seed_coverage_arm2 = %.9g\n", setup.coverage2);
            }
        } else if (selftest->parsed()) {
            return stimcal::run_selftest(quiet) ? 0 : 1;
        }
    } catch (const stimcal::UsageError& e) {
        std::fprintf(stderr, "error (validation): %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
