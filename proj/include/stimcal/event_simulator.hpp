#pragma once

#include <cstdint>
#include <utility>

#include "stimcal/event_stream.hpp"
#include "stimcal/rng.hpp"

namespace stimcal {

// Rates and detection parameters for one Monte Carlo run. Every pair event
// sends one photon to arm 1 and a bunched pair (down-converted photon plus
// the seed photon that stimulated it) to arm 2; the remaining seed flux is
// an independent Poisson background on arm 2, so the arm means are
// pair_rate and seed_rate + pair_rate.
struct SimulationPlan {
    double duration = 0.0;        // s
    double pair_rate = 0.0;       // R_pair, photons/s
    double seed_rate = 0.0;       // S, photons/s
    double coherence_time = 0.0;  // tau_coh, s
    std::uint64_t rng_seed = 0;
    double eta1 = 1.0;
    double eta2 = 1.0;
    double dark_rate1 = 0.0;  // detector-side uncorrelated events/s
    double dark_rate2 = 0.0;

    void validate() const;

    // Photons never stray farther than this from their cluster epoch (the
    // jitter draw is clamped at 64 scale lengths, e^-64 tail mass).
    double boundary_margin() const { return 32.0 * coherence_time; }
};

struct ClusterPhotons {
    PhotonEventStream arm1;  // tag pair
    PhotonEventStream arm2;  // tags pair and seed_bunched
};

// Generates the run window-by-window. Each (plan, segment) pair draws from
// its own RNG substream, so segments are independent, reproducible, and can
// be produced in any order; restarting the exponential-gap walk at each
// window boundary is exact for a homogeneous Poisson process. Events stay
// within [t0 - margin, t1 + margin) of their segment and are sorted within
// the segment.
class SegmentedEventGenerator {
public:
    SegmentedEventGenerator(const SimulationPlan& plan, double segment_duration = 0.0);

    int segment_count() const { return segment_count_; }
    std::pair<double, double> window(int index) const;

    ClusterPhotons generate_clusters(int index) const;
    PhotonEventStream generate_background(int index) const;
    PhotonEventStream generate_dark(int index, Arm arm) const;

    const SimulationPlan& plan() const { return plan_; }

private:
    SimulationPlan plan_;
    double segment_duration_ = 0.0;
    int segment_count_ = 0;
};

// Bernoulli detection thinning: each event survives independently with
// probability eta; order and tags are preserved.
PhotonEventStream thin_detection(const PhotonEventStream& stream, double eta, Rng& rng);
PhotonEventStream thin_detection(const PhotonEventStream& stream, double eta,
                                 std::uint64_t seed);

// Whole-run in-memory generation (cluster photons only; no background).
std::pair<PhotonEventStream, PhotonEventStream> generate_pair_events(const SimulationPlan& plan);

// Whole-run arm-2 coherent background at rate seed_rate - pair_rate.
PhotonEventStream generate_seed_background(const SimulationPlan& plan);

// Appends a segment stream to an accumulating stream, restoring sortedness
// across the tiny jitter overlap at segment boundaries.
void append_sorted(PhotonEventStream& acc, const PhotonEventStream& segment);

}  // namespace stimcal
