#include "stimcal/event_simulator.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace stimcal {
namespace {

constexpr double kJitterClampScales = 64.0;

double clamped_jitter(Rng& rng, double scale) {
    const double j = rng.laplace(scale);
    const double limit = kJitterClampScales * scale;
    return std::clamp(j, -limit, limit);
}

// Sorts (times, tags) jointly by time. Segment lists are small and nearly
// sorted already.
void sort_stream(PhotonEventStream& s) {
    const std::size_t n = s.size();
    if (n < 2) return;
    std::vector<std::uint32_t> order(n);
    for (std::uint32_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::uint32_t a, std::uint32_t b) { return s.times[a] < s.times[b]; });
    std::vector<double> times(n);
    std::vector<EventTag> tags(n);
    for (std::size_t i = 0; i < n; ++i) {
        times[i] = s.times[order[i]];
        tags[i] = s.tags[order[i]];
    }
    s.times = std::move(times);
    s.tags = std::move(tags);
}

PhotonEventStream poisson_stream(Rng rng, Arm arm, EventTag tag, double rate,
                                 double t0, double t1) {
    PhotonEventStream out;
    out.arm = arm;
    if (rate <= 0.0) return out;
    const double mean_gap = 1.0 / rate;
    double t = t0 + rng.exponential(mean_gap);
    while (t < t1) {
        out.append(t, tag);
        t += rng.exponential(mean_gap);
    }
    return out;
}

}  // namespace

void SimulationPlan::validate() const {
    if (!(duration > 0.0)) throw UsageError("SimulationPlan: duration must be positive");
    if (!(pair_rate >= 0.0) || !std::isfinite(pair_rate))
        throw UsageError("SimulationPlan: pair_rate must be finite and >= 0");
    if (!(seed_rate >= pair_rate))
        throw UsageError("SimulationPlan: seed_rate must be >= pair_rate "
                         "(arm-2 background rate would be negative)");
    if (!(coherence_time > 0.0))
        throw UsageError("SimulationPlan: coherence_time must be positive");
    if (!(eta1 >= 0.0) || eta1 > 1.0 || !(eta2 >= 0.0) || eta2 > 1.0)
        throw UsageError("SimulationPlan: quantum efficiencies must lie in [0, 1]");
    if (!(dark_rate1 >= 0.0) || !(dark_rate2 >= 0.0))
        throw UsageError("SimulationPlan: dark rates must be >= 0");
}

SegmentedEventGenerator::SegmentedEventGenerator(const SimulationPlan& plan,
                                                 double segment_duration)
    : plan_(plan) {
    plan_.validate();
    if (segment_duration <= 0.0) {
        // Aim for roughly two million events per segment to bound memory.
        const double total_rate = plan_.seed_rate + plan_.pair_rate +
                                  plan_.dark_rate1 + plan_.dark_rate2;
        segment_duration = total_rate > 0.0 ? 2.0e6 / total_rate : plan_.duration;
        segment_duration = std::clamp(segment_duration, 1e-3, plan_.duration);
    }
    segment_duration_ = segment_duration;
    segment_count_ = static_cast<int>(std::ceil(plan_.duration / segment_duration_ - 1e-12));
    segment_count_ = std::max(segment_count_, 1);
}

std::pair<double, double> SegmentedEventGenerator::window(int index) const {
    if (index < 0 || index >= segment_count_)
        throw UsageError("SegmentedEventGenerator: segment index out of range");
    const double t0 = index * segment_duration_;
    const double t1 = std::min(plan_.duration, t0 + segment_duration_);
    return {t0, t1};
}

ClusterPhotons SegmentedEventGenerator::generate_clusters(int index) const {
    const auto [t0, t1] = window(index);
    ClusterPhotons out;
    out.arm1.arm = Arm::arm1;
    out.arm2.arm = Arm::arm2;
    if (plan_.pair_rate <= 0.0) return out;

    Rng rng = substream(plan_.rng_seed, StreamId::cluster_epochs, static_cast<std::uint64_t>(index));
    const double mean_gap = 1.0 / plan_.pair_rate;
    const double scale = 0.5 * plan_.coherence_time;
    double epoch = t0 + rng.exponential(mean_gap);
    while (epoch < t1) {
        const double j1 = clamped_jitter(rng, scale);
        const double j2 = clamped_jitter(rng, scale);
        const double j3 = clamped_jitter(rng, scale);
        const double ta = epoch + j1;
        const double tb = epoch + j2;
        const double tc = epoch + j3;
        if (ta >= 0.0 && ta <= plan_.duration) out.arm1.append(ta, EventTag::pair);
        if (tb >= 0.0 && tb <= plan_.duration) out.arm2.append(tb, EventTag::pair);
        if (tc >= 0.0 && tc <= plan_.duration) out.arm2.append(tc, EventTag::seed_bunched);
        epoch += rng.exponential(mean_gap);
    }
    sort_stream(out.arm1);
    sort_stream(out.arm2);
    return out;
}

PhotonEventStream SegmentedEventGenerator::generate_background(int index) const {
    const auto [t0, t1] = window(index);
    return poisson_stream(
        substream(plan_.rng_seed, StreamId::background, static_cast<std::uint64_t>(index)),
        Arm::arm2, EventTag::seed_background, plan_.seed_rate - plan_.pair_rate, t0, t1);
}

PhotonEventStream SegmentedEventGenerator::generate_dark(int index, Arm arm) const {
    const auto [t0, t1] = window(index);
    const bool first = arm == Arm::arm1;
    return poisson_stream(
        substream(plan_.rng_seed, first ? StreamId::dark_arm1 : StreamId::dark_arm2,
                  static_cast<std::uint64_t>(index)),
        arm, EventTag::seed_background, first ? plan_.dark_rate1 : plan_.dark_rate2, t0, t1);
}

PhotonEventStream thin_detection(const PhotonEventStream& stream, double eta, Rng& rng) {
    if (!(eta >= 0.0) || eta > 1.0)
        throw UsageError("thin_detection: eta must lie in [0, 1]");
    PhotonEventStream out;
    out.arm = stream.arm;
    if (eta == 0.0) return out;
    if (eta == 1.0) return stream;
    out.times.reserve(static_cast<std::size_t>(stream.size() * eta * 1.05) + 16);
    out.tags.reserve(out.times.capacity());
    for (std::size_t i = 0; i < stream.size(); ++i)
        if (rng.bernoulli(eta)) out.append(stream.times[i], stream.tags[i]);
    return out;
}

PhotonEventStream thin_detection(const PhotonEventStream& stream, double eta,
                                 std::uint64_t seed) {
    Rng rng(seed);
    return thin_detection(stream, eta, rng);
}

void append_sorted(PhotonEventStream& acc, const PhotonEventStream& segment) {
    if (segment.size() == 0) return;
    if (acc.size() == 0) {
        acc = segment;
        return;
    }
    if (acc.arm != segment.arm) throw UsageError("append_sorted: arms differ");
    // Segment windows overlap by at most the jitter margin, so only a
    // handful of tail events can be out of order.
    PhotonEventStream seg = segment;
    while (acc.size() > 0 && acc.times.back() > seg.times.front()) {
        const double t = acc.times.back();
        const EventTag tag = acc.tags.back();
        acc.times.pop_back();
        acc.tags.pop_back();
        const auto pos = std::lower_bound(seg.times.begin(), seg.times.end(), t);
        const auto idx = pos - seg.times.begin();
        seg.times.insert(pos, t);
        seg.tags.insert(seg.tags.begin() + idx, tag);
    }
    acc.times.insert(acc.times.end(), seg.times.begin(), seg.times.end());
    acc.tags.insert(acc.tags.end(), seg.tags.begin(), seg.tags.end());
}

std::pair<PhotonEventStream, PhotonEventStream> generate_pair_events(
    const SimulationPlan& plan) {
    SegmentedEventGenerator gen(plan);
    PhotonEventStream arm1;
    arm1.arm = Arm::arm1;
    PhotonEventStream arm2;
    arm2.arm = Arm::arm2;
    for (int k = 0; k < gen.segment_count(); ++k) {
        const ClusterPhotons photons = gen.generate_clusters(k);
        append_sorted(arm1, photons.arm1);
        append_sorted(arm2, photons.arm2);
    }
    return {std::move(arm1), std::move(arm2)};
}

PhotonEventStream generate_seed_background(const SimulationPlan& plan) {
    SegmentedEventGenerator gen(plan);
    PhotonEventStream out;
    out.arm = Arm::arm2;
    for (int k = 0; k < gen.segment_count(); ++k) append_sorted(out, gen.generate_background(k));
    return out;
}

}  // namespace stimcal
