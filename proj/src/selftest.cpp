#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "stimcal/correlation.hpp"
#include "stimcal/event_simulator.hpp"
#include "stimcal/field_statistics.hpp"
#include "stimcal/optics_gain.hpp"
#include "stimcal/photocurrent.hpp"
#include "stimcal/pipeline.hpp"
#include "stimcal/quadrature.hpp"
#include "stimcal/rng.hpp"

namespace stimcal {
namespace {

struct Check {
    const char* name;
    std::function<bool(std::string&)> run;
};

OpticsGeometry selftest_geometry() { return {532e-9, 0.1, 5e-3, 0.05}; }

bool check_unitarity_grids(std::string& msg) {
    const OpticsGeometry geom = selftest_geometry();
    Rng rng(42);
    for (double g : {0.0, 0.01, 0.1}) {
        const GainModel model = GainModel::for_geometry(g, 1e4, 1e12, 0.3, geom);
        std::vector<std::pair<Vec2, double>> grid;
        for (int i = 0; i < 1000; ++i)
            grid.push_back({{(rng.uniform01() - 0.5) * 4e5, (rng.uniform01() - 0.5) * 4e5},
                            (rng.uniform01() - 0.5) * 4e12});
        const double violation = check_unitarity(model, grid);
        if (violation > 1e-12) {
            msg = "violation " + std::to_string(violation) + " at G=" + std::to_string(g);
            return false;
        }
    }
    return true;
}

bool check_far_field(std::string& msg) {
    OpticsGeometry geom = selftest_geometry();
    geom.wavelength_m = 0.5e-6;
    const Vec2 q = far_field_map(geom, {1e-3, 0.0});
    if (std::abs(q.x - 1.2566370614359172e5) > 1e-6 * 1.26e5 || q.y != 0.0) {
        msg = "q = " + std::to_string(q.x);
        return false;
    }
    const Vec2 q2 = far_field_map(geom, {2e-3, 0.0});
    if (std::abs(q2.x - 2.0 * q.x) > 1e-9 * q2.x) {
        msg = "linearity broken";
        return false;
    }
    return true;
}

bool check_quadrature(std::string& msg) {
    // Isotropic gaussian over a centered box, against the erf closed form.
    const double s = 1.7;
    const auto f = [s](double x, double y) {
        return std::exp(-(x * x + y * y) / (2 * s * s)) / (2 * M_PI * s * s);
    };
    const double half = 5.0 * s;
    const QuadratureResult r = integrate_2d(f, {-half, half, -half, half}, 1e-8);
    const double edge = std::erf(half / (s * std::sqrt(2.0)));
    const double expected = edge * edge;
    if (std::abs(r.value - expected) > 1e-7 * expected) {
        msg = "got " + std::to_string(r.value) + " expected " + std::to_string(expected);
        return false;
    }
    return true;
}

bool check_flux_identity(std::string& msg) {
    const OpticsGeometry geom = selftest_geometry();
    const GainModel gain = GainModel::for_geometry(0.01, 2e4, 1e12, 0.0, geom);
    const SeedBeam seed = SeedBeam::gaussian({center_momentum(geom), 0.0}, 1e4, 1e8, 0.0);
    const DetectionRegion r1 = default_region(geom, seed, Arm::arm1);
    const DetectionRegion r2 = default_region(geom, seed, Arm::arm2);
    const FluxStatistics stats = compute_flux_statistics(gain, geom, seed, r1, r2);
    const double diff = stats.mean_flux_2 - stats.mean_flux_1 - seed.total_flux;
    if (std::abs(diff) > 1e-5 * seed.total_flux) {
        msg = "F2 - F1 - S = " + std::to_string(diff);
        return false;
    }
    if (std::abs(stats.cross_strength - 2.0 * stats.mean_flux_1) >
        1e-5 * stats.cross_strength) {
        msg = "cross != 2 F1";
        return false;
    }
    return true;
}

bool check_poisson_counts(std::string& msg) {
    SimulationPlan plan;
    plan.duration = 1.0;
    plan.pair_rate = 1e5;
    plan.seed_rate = 3e5;
    plan.coherence_time = 1e-9;
    plan.rng_seed = 7;
    auto [arm1, arm2] = generate_pair_events(plan);
    const double n1 = static_cast<double>(arm1.size());
    if (std::abs(n1 - 1e5) > 5.0 * std::sqrt(1e5)) {
        msg = "arm1 count " + std::to_string(arm1.size());
        return false;
    }
    if (std::abs(static_cast<double>(arm2.size()) - 2e5) > 5.0 * std::sqrt(2e5)) {
        msg = "arm2 count " + std::to_string(arm2.size());
        return false;
    }
    Rng rng(11);
    const PhotonEventStream kept = thin_detection(arm2, 0.5, rng);
    if (std::abs(static_cast<double>(kept.size()) - 0.5 * arm2.size()) >
        5.0 * std::sqrt(0.25 * arm2.size())) {
        msg = "thinned count " + std::to_string(kept.size());
        return false;
    }
    return true;
}

bool check_campbell(std::string& msg) {
    SimulationPlan plan;
    plan.duration = 0.05;
    plan.pair_rate = 0.0;
    plan.seed_rate = 2e6;
    plan.coherence_time = 1e-9;
    plan.rng_seed = 13;
    const PhotonEventStream events = generate_seed_background(plan);
    DetectorModel det;
    det.pulse_width = 1e-6;
    det.pulse_shape = PulseShape::rectangular;
    const double fs = 5e7;
    const CurrentTrace trace = synthesize_trace(events, det, fs, 99, plan.duration);
    double mean = 0.0;
    for (double v : trace.samples) mean += v;
    mean /= static_cast<double>(trace.samples.size());
    // Campbell: <i> = q * rate; se ~ sqrt(q^2 rate int f^2 * tau_corr)/T
    const double se = std::sqrt(plan.seed_rate / det.pulse_width * 2.0 * det.pulse_width /
                                plan.duration);
    if (std::abs(mean - plan.seed_rate) > 5.0 * se) {
        msg = "trace mean " + std::to_string(mean) + " expected " + std::to_string(plan.seed_rate);
        return false;
    }
    return true;
}

bool check_determinism(std::string& msg) {
    SimulationPlan plan;
    plan.duration = 0.02;
    plan.pair_rate = 1e5;
    plan.seed_rate = 1e6;
    plan.coherence_time = 1e-10;
    plan.rng_seed = 2024;
    std::uint64_t hashes[2];
    for (int round = 0; round < 2; ++round) {
        auto [arm1, arm2] = generate_pair_events(plan);
        const PhotonEventStream bg = generate_seed_background(plan);
        const PhotonEventStream merged = merge_streams(arm2, bg);
        std::string bytes(reinterpret_cast<const char*>(merged.times.data()),
                          merged.times.size() * sizeof(double));
        bytes.append(reinterpret_cast<const char*>(arm1.times.data()),
                     arm1.times.size() * sizeof(double));
        hashes[round] = fnv1a_hash(bytes);
    }
    if (hashes[0] != hashes[1]) {
        msg = "hashes differ";
        return false;
    }
    return true;
}

}  // namespace

bool run_selftest(bool quiet) {
    const std::vector<Check> checks = {
        {"unitarity identities on randomized grids", check_unitarity_grids},
        {"far-field momentum mapping", check_far_field},
        {"adaptive quadrature vs closed form", check_quadrature},
        {"flux statistics identities", check_flux_identity},
        {"poisson cluster counting bands", check_poisson_counts},
        {"campbell mean of synthesized trace", check_campbell},
        {"generation determinism", check_determinism},
    };
    bool all_ok = true;
    for (const Check& c : checks) {
        std::string msg;
        bool ok = false;
        try {
            ok = c.run(msg);
        } catch (const std::exception& e) {
            msg = e.what();
        }
        if (!quiet || !ok)
            std::printf("[%s] %s%s%s\n", ok ? "PASS" : "FAIL", c.name,
                        msg.empty() ? "" : ": ", msg.c_str());
        all_ok = all_ok && ok;
    }
    if (!quiet) std::printf("selftest: %s\n", all_ok ? "all checks passed" : "FAILURES");
    return all_ok;
}

}  // namespace stimcal
