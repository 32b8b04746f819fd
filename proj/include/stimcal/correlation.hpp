#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "stimcal/event_stream.hpp"
#include "stimcal/photocurrent.hpp"

namespace stimcal {

enum class BiasMode : std::uint8_t { unbiased, biased_normalization };

// Lag-indexed covariance estimate. values[i] is the covariance at lag
// (i - max_lag_bins) / sample_rate; pair_counts[i] is the number of sample
// pairs that entered that lag.
struct CorrelationFunction {
    double lag_step = 0.0;  // s
    int max_lag_bins = 0;
    std::vector<double> values;
    std::vector<std::int64_t> pair_counts;
    std::int64_t n_samples_used = 0;
    BiasMode estimator_bias_mode = BiasMode::unbiased;

    int size() const { return 2 * max_lag_bins + 1; }
    double lag_of(int index) const { return (index - max_lag_bins) * lag_step; }
    double value_at(int lag_bins) const { return values[static_cast<std::size_t>(lag_bins + max_lag_bins)]; }
};

// Raw within-segment pair sums for one bootstrap block. Together with the
// per-block sample sums these reconstruct the global-mean-subtracted,
// per-lag-unbiased covariance for any resampled set of blocks.
struct BlockSums {
    std::vector<double> r_aa, r_bb;  // lags 0..M
    std::vector<double> r_ab;        // lags -M..M, index k -> lag k - M
    std::vector<double> pref_a, pref_b, suff_a, suff_b;  // index t-1 for t = 1..M
    std::vector<std::int64_t> pair_count;  // per |lag|, 0..M
    double sum_a = 0.0, sum_b = 0.0;
    std::int64_t n_samples = 0;
};

struct AccumulatorConfig {
    double sample_rate = 0.0;
    int max_lag_bins = 0;
    int segment_samples = 0;
    int segments_per_block = 1;
};

// Picks the default segment length for a given lag range: the largest L
// with L + M + 1 <= N for a power-of-two FFT size N >= 2^18.
int default_segment_samples(int max_lag_bins);

struct PairCovariance {
    AccumulatorConfig config;
    std::vector<BlockSums> blocks;
    CorrelationFunction c11, c22, c12;
    double mean_a = 0.0, mean_b = 0.0;
    std::int64_t n_samples = 0;
};

// Streaming two-channel covariance estimator: consumes aligned sample spans,
// splits them into fixed segments, accumulates cross-spectra per block with
// zero-padded FFTs (no circular wrap-around), and keeps per-block partial
// sums so that mean subtraction and the block bootstrap are exact.
class PairCovarianceAccumulator {
public:
    explicit PairCovarianceAccumulator(const AccumulatorConfig& config);
    ~PairCovarianceAccumulator();
    PairCovarianceAccumulator(const PairCovarianceAccumulator&) = delete;
    PairCovarianceAccumulator& operator=(const PairCovarianceAccumulator&) = delete;

    void consume(std::span<const double> a, std::span<const double> b);
    PairCovariance finalize();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct CombinedCovariance {
    CorrelationFunction c11, c22, c12;
    double mean_a = 0.0, mean_b = 0.0;
    std::int64_t n_samples = 0;
};

// Combines a multiset of blocks (indices may repeat, as in a bootstrap
// resample) into covariance estimates. With per_block_means, each block is
// mean-subtracted with its own mean before the pair-count-weighted average
// (slow-drift handling); default is the global mean.
CombinedCovariance combine_blocks(const AccumulatorConfig& config,
                                  const std::vector<BlockSums>& blocks,
                                  std::span<const int> indices,
                                  bool per_block_means = false);

// Mean-subtracted covariance of two aligned traces. Preconditions: equal
// sample rates, start times and lengths; max_lag < duration / 2.
PairCovariance estimate_covariance(const CurrentTrace& a, const CurrentTrace& b,
                                   double max_lag);

inline constexpr std::uint64_t kDefaultBootstrapSeed = 0x57a7b007c0ffee01ULL;

struct ValueWithUncertainty {
    double value = 0.0;
    double uncertainty = 0.0;
};

struct EstimationOptions {
    double plateau_halfwidth = 0.0;      // s; ratio estimator averages |tau| <= this
    double integration_halfwidth = 0.0;  // s; lag window of the integral estimator
    int bootstrap_resamples = 200;
    std::uint64_t bootstrap_seed = kDefaultBootstrapSeed;
    bool per_lag_uncertainties = false;
    bool detrend_per_block = false;  // block-local mean subtraction
};

struct EstimationResult {
    ValueWithUncertainty eta_ratio;       // (1/2) <c12>/<c11> over the plateau
    ValueWithUncertainty eta_q_integral;  // (1/2) int c12 dtau / mean_i1
    ValueWithUncertainty factor2;         // int c12 dtau / mean_i1
    double mean_i1 = 0.0, mean_i2 = 0.0;
    std::vector<double> c11_se, c12_se, c22_se;  // per lag, when requested
    int n_blocks = 0;
    std::int64_t n_samples = 0;
};

// Point estimates from the full data; uncertainties are standard deviations
// over fixed-block bootstrap resamples (each resample recomputes means,
// covariances and both estimators from the resampled block sums).
EstimationResult estimate_calibration(const PairCovariance& pc, const EstimationOptions& opt);

ValueWithUncertainty estimate_eta_ratio(const PairCovariance& pc, const EstimationOptions& opt);
ValueWithUncertainty estimate_eta_integral(const PairCovariance& pc, const EstimationOptions& opt);

struct MomentEstimate {
    double value = 0.0;
    double std_error = 0.0;
};

struct CountWindowStatistics {
    std::int64_t n_windows = 0;
    double window = 0.0;  // s
    MomentEstimate mean1, var1, fano1, excess1;  // excess = var - mean
    MomentEstimate mean2, var2, fano2, excess2;
    MomentEstimate covariance;
};

// Streaming paired window counter. Events may arrive slightly out of order
// (bounded by the generator's segment margin); advance() closes windows that
// can no longer receive events. shift1/shift2 are integer centering offsets
// that only condition the moment arithmetic.
class WindowedCountAccumulator {
public:
    WindowedCountAccumulator(double window, double duration, double shift1 = 0.0,
                             double shift2 = 0.0);

    void add(Arm arm, std::span<const double> times);
    void advance(double t_safe);
    CountWindowStatistics finalize();  // throws UsageError below 100 windows

private:
    void close_through(std::int64_t last_index);

    double window_;
    std::int64_t n_windows_;
    double shift1_, shift2_;
    std::vector<std::uint32_t> counts1_, counts2_;  // ring over open windows
    std::int64_t ring_base_ = 0;   // window index of ring slot 0
    std::size_t ring_head_ = 0;    // slot of window ring_base_
    std::int64_t closed_ = 0;      // windows already folded into moments
    // shifted raw power sums over closed windows
    double su_ = 0, su2_ = 0, su3_ = 0, su4_ = 0;
    double sv_ = 0, sv2_ = 0, sv3_ = 0, sv4_ = 0;
    double suv_ = 0, su2v_ = 0, suv2_ = 0, su2v2_ = 0;
};

// Bins both streams into aligned windows of the given length and returns
// count moments with asymptotic standard errors.
CountWindowStatistics windowed_count_statistics(const PhotonEventStream& events1,
                                                const PhotonEventStream& events2,
                                                double window, double duration);

}  // namespace stimcal
