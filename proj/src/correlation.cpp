#include "stimcal/correlation.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <limits>

#include "stimcal/rng.hpp"

namespace stimcal {
namespace {

std::int64_t next_pow2(std::int64_t n) {
    std::int64_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

BlockSums make_block(int max_lag_bins) {
    BlockSums b;
    b.r_aa.assign(static_cast<std::size_t>(max_lag_bins) + 1, 0.0);
    b.r_bb.assign(static_cast<std::size_t>(max_lag_bins) + 1, 0.0);
    b.r_ab.assign(2 * static_cast<std::size_t>(max_lag_bins) + 1, 0.0);
    b.pref_a.assign(static_cast<std::size_t>(max_lag_bins), 0.0);
    b.pref_b.assign(static_cast<std::size_t>(max_lag_bins), 0.0);
    b.suff_a.assign(static_cast<std::size_t>(max_lag_bins), 0.0);
    b.suff_b.assign(static_cast<std::size_t>(max_lag_bins), 0.0);
    b.pair_count.assign(static_cast<std::size_t>(max_lag_bins) + 1, 0);
    return b;
}

void add_block(BlockSums& acc, const BlockSums& b) {
    auto add = [](auto& dst, const auto& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    };
    add(acc.r_aa, b.r_aa);
    add(acc.r_bb, b.r_bb);
    add(acc.r_ab, b.r_ab);
    add(acc.pref_a, b.pref_a);
    add(acc.pref_b, b.pref_b);
    add(acc.suff_a, b.suff_a);
    add(acc.suff_b, b.suff_b);
    add(acc.pair_count, b.pair_count);
    acc.sum_a += b.sum_a;
    acc.sum_b += b.sum_b;
    acc.n_samples += b.n_samples;
}

}  // namespace

int default_segment_samples(int max_lag_bins) {
    std::int64_t n = std::int64_t{1} << 18;
    while (n < 4 * (static_cast<std::int64_t>(max_lag_bins) + 1)) n <<= 1;
    return static_cast<int>(n - max_lag_bins - 1);
}

struct PairCovarianceAccumulator::Impl {
    AccumulatorConfig cfg;
    int fft_size = 0;
    int spec_size = 0;
    fftw_plan fwd = nullptr;
    fftw_plan inv = nullptr;
    double* real_buf = nullptr;        // fft_size
    fftw_complex* complex_buf = nullptr;  // spec_size

    std::vector<std::complex<double>> spec_a;
    std::vector<double> acc_aa, acc_bb;
    std::vector<std::complex<double>> acc_ab;

    std::vector<double> seg_a, seg_b;
    int seg_fill = 0;
    BlockSums cur;
    int segs_in_block = 0;
    bool block_dirty = false;
    std::vector<BlockSums> blocks;

    explicit Impl(const AccumulatorConfig& config) : cfg(config) {
        if (!(cfg.sample_rate > 0.0))
            throw UsageError("PairCovarianceAccumulator: sample_rate must be positive");
        if (cfg.max_lag_bins < 1)
            throw UsageError("PairCovarianceAccumulator: max_lag_bins must be >= 1");
        if (cfg.segment_samples < 2)
            throw UsageError("PairCovarianceAccumulator: segment_samples must be >= 2");
        if (cfg.segments_per_block < 1)
            throw UsageError("PairCovarianceAccumulator: segments_per_block must be >= 1");

        fft_size = static_cast<int>(
            next_pow2(static_cast<std::int64_t>(cfg.segment_samples) + cfg.max_lag_bins + 1));
        spec_size = fft_size / 2 + 1;
        real_buf = fftw_alloc_real(static_cast<std::size_t>(fft_size));
        complex_buf = fftw_alloc_complex(static_cast<std::size_t>(spec_size));
        // FFTW_ESTIMATE keeps planning deterministic (no timing-dependent
        // algorithm choice), which the byte-identical-output contract needs.
        fwd = fftw_plan_dft_r2c_1d(fft_size, real_buf, complex_buf, FFTW_ESTIMATE);
        inv = fftw_plan_dft_c2r_1d(fft_size, complex_buf, real_buf, FFTW_ESTIMATE);
        if (!fwd || !inv) throw UsageError("PairCovarianceAccumulator: FFT planning failed");

        spec_a.resize(static_cast<std::size_t>(spec_size));
        acc_aa.assign(static_cast<std::size_t>(spec_size), 0.0);
        acc_bb.assign(static_cast<std::size_t>(spec_size), 0.0);
        acc_ab.assign(static_cast<std::size_t>(spec_size), {0.0, 0.0});
        seg_a.resize(static_cast<std::size_t>(cfg.segment_samples));
        seg_b.resize(static_cast<std::size_t>(cfg.segment_samples));
        cur = make_block(cfg.max_lag_bins);
    }

    ~Impl() {
        if (fwd) fftw_destroy_plan(fwd);
        if (inv) fftw_destroy_plan(inv);
        if (real_buf) fftw_free(real_buf);
        if (complex_buf) fftw_free(complex_buf);
    }

    void forward_fft(const double* data, int len, std::complex<double>* out) {
        std::memcpy(real_buf, data, sizeof(double) * static_cast<std::size_t>(len));
        std::memset(real_buf + len, 0, sizeof(double) * static_cast<std::size_t>(fft_size - len));
        fftw_execute(fwd);
        std::memcpy(out, complex_buf, sizeof(fftw_complex) * static_cast<std::size_t>(spec_size));
    }

    void partial_sums(const double* data, int len, double& sum, std::vector<double>& pref,
                      std::vector<double>& suff) {
        const int m = cfg.max_lag_bins;
        const int top = std::min(m, len);
        double total = 0.0;
        for (int i = 0; i < len; ++i) total += data[i];
        double run = 0.0;
        for (int t = 1; t <= top; ++t) {
            run += data[t - 1];
            pref[static_cast<std::size_t>(t - 1)] += run;
        }
        for (int t = top + 1; t <= m; ++t) pref[static_cast<std::size_t>(t - 1)] += total;
        run = 0.0;
        for (int t = 1; t <= top; ++t) {
            run += data[len - t];
            suff[static_cast<std::size_t>(t - 1)] += run;
        }
        for (int t = top + 1; t <= m; ++t) suff[static_cast<std::size_t>(t - 1)] += total;
        sum += total;
    }

    void process_segment(int len) {
        partial_sums(seg_a.data(), len, cur.sum_a, cur.pref_a, cur.suff_a);
        partial_sums(seg_b.data(), len, cur.sum_b, cur.pref_b, cur.suff_b);
        cur.n_samples += len;
        for (int t = 0; t <= cfg.max_lag_bins; ++t)
            cur.pair_count[static_cast<std::size_t>(t)] += std::max(0, len - t);

        forward_fft(seg_a.data(), len, spec_a.data());
        forward_fft(seg_b.data(), len, reinterpret_cast<std::complex<double>*>(complex_buf));
        const auto* spec_b = reinterpret_cast<const std::complex<double>*>(complex_buf);
        for (int i = 0; i < spec_size; ++i) {
            const std::complex<double> av = spec_a[static_cast<std::size_t>(i)];
            const std::complex<double> bv = spec_b[i];
            acc_aa[static_cast<std::size_t>(i)] += std::norm(av);
            acc_bb[static_cast<std::size_t>(i)] += std::norm(bv);
            acc_ab[static_cast<std::size_t>(i)] += std::conj(av) * bv;
        }
        block_dirty = true;
        if (++segs_in_block >= cfg.segments_per_block) close_block();
    }

    void inverse_into(const std::complex<double>* spec, std::vector<double>& lags_pos,
                      std::vector<double>* lags_neg) {
        std::memcpy(complex_buf, spec, sizeof(fftw_complex) * static_cast<std::size_t>(spec_size));
        fftw_execute(inv);
        const double scale = 1.0 / fft_size;
        const int m = cfg.max_lag_bins;
        for (int k = 0; k <= m; ++k) lags_pos[static_cast<std::size_t>(k)] += real_buf[k] * scale;
        if (lags_neg)
            for (int k = 1; k <= m; ++k)
                (*lags_neg)[static_cast<std::size_t>(k - 1)] += real_buf[fft_size - k] * scale;
    }

    void close_block() {
        if (!block_dirty) return;
        const int m = cfg.max_lag_bins;
        std::vector<std::complex<double>> scratch(static_cast<std::size_t>(spec_size));
        for (int i = 0; i < spec_size; ++i) scratch[static_cast<std::size_t>(i)] = acc_aa[static_cast<std::size_t>(i)];
        inverse_into(scratch.data(), cur.r_aa, nullptr);
        for (int i = 0; i < spec_size; ++i) scratch[static_cast<std::size_t>(i)] = acc_bb[static_cast<std::size_t>(i)];
        inverse_into(scratch.data(), cur.r_bb, nullptr);

        // r_ab holds lag -M..M; positive lags at [M..2M], negative below.
        std::vector<double> pos(static_cast<std::size_t>(m) + 1, 0.0);
        std::vector<double> neg(static_cast<std::size_t>(m), 0.0);
        inverse_into(acc_ab.data(), pos, &neg);
        for (int k = 0; k <= m; ++k) cur.r_ab[static_cast<std::size_t>(m + k)] += pos[static_cast<std::size_t>(k)];
        for (int k = 1; k <= m; ++k) cur.r_ab[static_cast<std::size_t>(m - k)] += neg[static_cast<std::size_t>(k - 1)];

        blocks.push_back(std::move(cur));
        cur = make_block(m);
        std::fill(acc_aa.begin(), acc_aa.end(), 0.0);
        std::fill(acc_bb.begin(), acc_bb.end(), 0.0);
        std::fill(acc_ab.begin(), acc_ab.end(), std::complex<double>{0.0, 0.0});
        segs_in_block = 0;
        block_dirty = false;
    }
};

PairCovarianceAccumulator::PairCovarianceAccumulator(const AccumulatorConfig& config)
    : impl_(std::make_unique<Impl>(config)) {}

PairCovarianceAccumulator::~PairCovarianceAccumulator() = default;

void PairCovarianceAccumulator::consume(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw UsageError("PairCovarianceAccumulator: unequal span lengths");
    std::size_t off = 0;
    while (off < a.size()) {
        const int room = impl_->cfg.segment_samples - impl_->seg_fill;
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(room), a.size() - off);
        std::memcpy(impl_->seg_a.data() + impl_->seg_fill, a.data() + off, take * sizeof(double));
        std::memcpy(impl_->seg_b.data() + impl_->seg_fill, b.data() + off, take * sizeof(double));
        impl_->seg_fill += static_cast<int>(take);
        off += take;
        if (impl_->seg_fill == impl_->cfg.segment_samples) {
            impl_->process_segment(impl_->seg_fill);
            impl_->seg_fill = 0;
        }
    }
}

PairCovariance PairCovarianceAccumulator::finalize() {
    if (impl_->seg_fill >= 2) {
        impl_->process_segment(impl_->seg_fill);
        impl_->seg_fill = 0;
    }
    impl_->close_block();
    if (impl_->blocks.empty())
        throw UsageError("PairCovarianceAccumulator: no data consumed");

    PairCovariance pc;
    pc.config = impl_->cfg;
    pc.blocks = std::move(impl_->blocks);
    std::vector<int> all(pc.blocks.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    CombinedCovariance combined = combine_blocks(pc.config, pc.blocks, all);
    pc.c11 = std::move(combined.c11);
    pc.c22 = std::move(combined.c22);
    pc.c12 = std::move(combined.c12);
    pc.mean_a = combined.mean_a;
    pc.mean_b = combined.mean_b;
    pc.n_samples = combined.n_samples;
    return pc;
}

namespace {
CombinedCovariance combined_from_sums(const AccumulatorConfig& config, const BlockSums& acc);
}

CombinedCovariance combine_blocks(const AccumulatorConfig& config,
                                  const std::vector<BlockSums>& blocks,
                                  std::span<const int> indices, bool per_block_means) {
    if (indices.empty()) throw UsageError("combine_blocks: empty index set");
    const int m = config.max_lag_bins;
    BlockSums acc = make_block(m);
    for (int idx : indices) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= blocks.size())
            throw UsageError("combine_blocks: block index out of range");
        add_block(acc, blocks[static_cast<std::size_t>(idx)]);
    }
    if (acc.n_samples == 0) throw UsageError("combine_blocks: no samples");

    if (!per_block_means) return combined_from_sums(config, acc);

    // Drift handling: covariance per block with the block's own mean, then a
    // pair-count-weighted average across blocks.
    CombinedCovariance out = combined_from_sums(config, acc);  // counts, means, layout
    std::vector<double> w11(out.c11.values.size(), 0.0);
    std::vector<double> w22(out.c22.values.size(), 0.0);
    std::vector<double> w12(out.c12.values.size(), 0.0);
    for (int idx : indices) {
        const BlockSums& b = blocks[static_cast<std::size_t>(idx)];
        if (b.n_samples == 0) continue;
        const CombinedCovariance cb = combined_from_sums(config, b);
        for (std::size_t i = 0; i < w11.size(); ++i) {
            const double n_pairs = static_cast<double>(cb.c11.pair_counts[i]);
            w11[i] += cb.c11.values[i] * n_pairs;
            w22[i] += cb.c22.values[i] * n_pairs;
            w12[i] += cb.c12.values[i] * n_pairs;
        }
    }
    for (std::size_t i = 0; i < w11.size(); ++i) {
        const double n_pairs = static_cast<double>(out.c11.pair_counts[i]);
        out.c11.values[i] = n_pairs > 0 ? w11[i] / n_pairs : 0.0;
        out.c22.values[i] = n_pairs > 0 ? w22[i] / n_pairs : 0.0;
        out.c12.values[i] = n_pairs > 0 ? w12[i] / n_pairs : 0.0;
    }
    return out;
}

namespace {

CombinedCovariance combined_from_sums(const AccumulatorConfig& config, const BlockSums& acc) {
    const int m = config.max_lag_bins;
    const double mu_a = acc.sum_a / static_cast<double>(acc.n_samples);
    const double mu_b = acc.sum_b / static_cast<double>(acc.n_samples);

    CombinedCovariance out;
    out.mean_a = mu_a;
    out.mean_b = mu_b;
    out.n_samples = acc.n_samples;

    auto init_cf = [&](CorrelationFunction& cf) {
        cf.lag_step = 1.0 / config.sample_rate;
        cf.max_lag_bins = m;
        cf.values.assign(static_cast<std::size_t>(2 * m + 1), 0.0);
        cf.pair_counts.assign(static_cast<std::size_t>(2 * m + 1), 0);
        cf.n_samples_used = acc.n_samples;
        cf.estimator_bias_mode = BiasMode::unbiased;
    };
    init_cf(out.c11);
    init_cf(out.c22);
    init_cf(out.c12);

    for (int t = 0; t <= m; ++t) {
        const std::int64_t n_pairs = acc.pair_count[static_cast<std::size_t>(t)];
        const std::size_t ip = static_cast<std::size_t>(m + t);
        const std::size_t in = static_cast<std::size_t>(m - t);
        out.c11.pair_counts[ip] = out.c11.pair_counts[in] = n_pairs;
        out.c22.pair_counts[ip] = out.c22.pair_counts[in] = n_pairs;
        out.c12.pair_counts[ip] = out.c12.pair_counts[in] = n_pairs;
        if (n_pairs <= 0) continue;
        const double nd = static_cast<double>(n_pairs);
        const double pref_a = t > 0 ? acc.pref_a[static_cast<std::size_t>(t - 1)] : 0.0;
        const double pref_b = t > 0 ? acc.pref_b[static_cast<std::size_t>(t - 1)] : 0.0;
        const double suff_a = t > 0 ? acc.suff_a[static_cast<std::size_t>(t - 1)] : 0.0;
        const double suff_b = t > 0 ? acc.suff_b[static_cast<std::size_t>(t - 1)] : 0.0;

        // Sum over pairs (x_i, y_{i+t}) of (x_i - mu_x)(y_{i+t} - mu_y),
        // expanded so only within-segment raw sums are needed.
        const double caa = (acc.r_aa[static_cast<std::size_t>(t)] -
                            mu_a * (acc.sum_a - suff_a) - mu_a * (acc.sum_a - pref_a) +
                            nd * mu_a * mu_a) / nd;
        const double cbb = (acc.r_bb[static_cast<std::size_t>(t)] -
                            mu_b * (acc.sum_b - suff_b) - mu_b * (acc.sum_b - pref_b) +
                            nd * mu_b * mu_b) / nd;
        const double cab_pos = (acc.r_ab[ip] - mu_b * (acc.sum_a - suff_a) -
                                mu_a * (acc.sum_b - pref_b) + nd * mu_a * mu_b) / nd;
        const double cab_neg = (acc.r_ab[in] - mu_b * (acc.sum_a - pref_a) -
                                mu_a * (acc.sum_b - suff_b) + nd * mu_a * mu_b) / nd;

        out.c11.values[ip] = out.c11.values[in] = caa;
        out.c22.values[ip] = out.c22.values[in] = cbb;
        out.c12.values[ip] = cab_pos;
        out.c12.values[in] = cab_neg;
    }
    return out;
}

}  // namespace

PairCovariance estimate_covariance(const CurrentTrace& a, const CurrentTrace& b,
                                   double max_lag) {
    if (a.sample_rate != b.sample_rate)
        throw UsageError("estimate_covariance: sample rates differ (misaligned traces)");
    if (a.start_time != b.start_time)
        throw UsageError("estimate_covariance: start times differ (misaligned traces)");
    if (a.samples.size() != b.samples.size())
        throw UsageError("estimate_covariance: trace lengths differ");
    if (a.samples.empty()) throw UsageError("estimate_covariance: empty traces");
    const double duration = a.duration();
    if (!(max_lag > 0.0)) throw UsageError("estimate_covariance: max_lag must be positive");
    if (max_lag >= 0.5 * duration)
        throw UsageError("estimate_covariance: max_lag must be below duration / 2");

    AccumulatorConfig cfg;
    cfg.sample_rate = a.sample_rate;
    cfg.max_lag_bins = std::max(1, static_cast<int>(std::llround(max_lag * a.sample_rate)));
    cfg.segment_samples = static_cast<int>(std::min<std::int64_t>(
        static_cast<std::int64_t>(a.samples.size()), default_segment_samples(cfg.max_lag_bins)));
    cfg.segments_per_block = 1;

    PairCovarianceAccumulator acc(cfg);
    acc.consume(a.samples, b.samples);
    return acc.finalize();
}

namespace {

double plateau_mean(const CorrelationFunction& c, int plateau_bins) {
    double sum = 0.0;
    int n = 0;
    for (int k = -plateau_bins; k <= plateau_bins; ++k) {
        sum += c.value_at(k);
        ++n;
    }
    return sum / n;
}

double lag_integral(const CorrelationFunction& c, int window_bins) {
    // Trapezoidal rule over |tau| <= window_bins * lag_step.
    double sum = 0.0;
    for (int k = -window_bins; k <= window_bins; ++k) {
        const double w = (k == -window_bins || k == window_bins) ? 0.5 : 1.0;
        sum += w * c.value_at(k);
    }
    return sum * c.lag_step;
}

struct Welford {
    double mean = 0.0, m2 = 0.0;
    std::int64_t n = 0;
    void add(double x) {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }
    double sd() const { return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0; }
};

}  // namespace

EstimationResult estimate_calibration(const PairCovariance& pc, const EstimationOptions& opt) {
    const double fs = pc.config.sample_rate;
    const int m = pc.config.max_lag_bins;
    const int plateau_bins =
        static_cast<int>(std::floor(opt.plateau_halfwidth * fs + 1e-9));
    if (plateau_bins < 0 || plateau_bins > m)
        throw UsageError("estimate_calibration: plateau halfwidth outside the lag range");
    const int window_bins =
        static_cast<int>(std::llround(opt.integration_halfwidth * fs));
    if (window_bins < 1 || window_bins > m)
        throw UsageError("estimate_calibration: integration window clipped; need max_lag >= " +
                         std::to_string(opt.integration_halfwidth) + " s on both sides");
    if (pc.blocks.size() < 8)
        throw UsageError("estimate_calibration: need at least 8 blocks for bootstrap "
                         "uncertainties (trace too short for the block length)");

    // With drift handling enabled the point estimates are recombined with
    // block-local means; otherwise the finalize-time combination is reused.
    CombinedCovariance detrended;
    const CorrelationFunction* c11 = &pc.c11;
    const CorrelationFunction* c12 = &pc.c12;
    double mean_a = pc.mean_a;
    double mean_b = pc.mean_b;
    if (opt.detrend_per_block) {
        std::vector<int> all(pc.blocks.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
        detrended = combine_blocks(pc.config, pc.blocks, all, true);
        c11 = &detrended.c11;
        c12 = &detrended.c12;
        mean_a = detrended.mean_a;
        mean_b = detrended.mean_b;
    }

    const double c11_plateau = plateau_mean(*c11, plateau_bins);
    if (!(c11_plateau > 0.0))
        throw UsageError("estimate_calibration: detector-1 auto-covariance plateau is "
                         "consistent with zero (degenerate input)");
    if (!(mean_a > 0.0))
        throw UsageError("estimate_calibration: mean current of detector 1 must be positive");

    EstimationResult result;
    result.n_blocks = static_cast<int>(pc.blocks.size());
    result.n_samples = pc.n_samples;
    result.mean_i1 = mean_a;
    result.mean_i2 = mean_b;
    result.eta_ratio.value = 0.5 * plateau_mean(*c12, plateau_bins) / c11_plateau;
    const double integral = lag_integral(*c12, window_bins);
    result.factor2.value = integral / mean_a;
    result.eta_q_integral.value = 0.5 * result.factor2.value;

    // Fixed-block bootstrap: every resample rebuilds means and covariances
    // from the resampled block sums, so the means' sampling noise is
    // propagated into both estimators.
    Rng rng = substream(opt.bootstrap_seed, StreamId::bootstrap, 0);
    const int n_blocks = result.n_blocks;
    Welford ratio_w, integral_w, factor2_w;
    std::vector<Welford> c11_w, c12_w, c22_w;
    if (opt.per_lag_uncertainties) {
        c11_w.resize(static_cast<std::size_t>(2 * m + 1));
        c12_w.resize(static_cast<std::size_t>(2 * m + 1));
        c22_w.resize(static_cast<std::size_t>(2 * m + 1));
    }
    std::vector<int> indices(static_cast<std::size_t>(n_blocks));
    for (int r = 0; r < opt.bootstrap_resamples; ++r) {
        for (auto& idx : indices)
            idx = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(n_blocks));
        const CombinedCovariance cc =
            combine_blocks(pc.config, pc.blocks, indices, opt.detrend_per_block);
        const double c11p = plateau_mean(cc.c11, plateau_bins);
        if (c11p > 0.0) ratio_w.add(0.5 * plateau_mean(cc.c12, plateau_bins) / c11p);
        if (cc.mean_a > 0.0) {
            const double f2 = lag_integral(cc.c12, window_bins) / cc.mean_a;
            factor2_w.add(f2);
            integral_w.add(0.5 * f2);
        }
        if (opt.per_lag_uncertainties) {
            for (int i = 0; i < 2 * m + 1; ++i) {
                c11_w[static_cast<std::size_t>(i)].add(cc.c11.values[static_cast<std::size_t>(i)]);
                c12_w[static_cast<std::size_t>(i)].add(cc.c12.values[static_cast<std::size_t>(i)]);
                c22_w[static_cast<std::size_t>(i)].add(cc.c22.values[static_cast<std::size_t>(i)]);
            }
        }
    }
    result.eta_ratio.uncertainty = ratio_w.sd();
    result.eta_q_integral.uncertainty = integral_w.sd();
    result.factor2.uncertainty = factor2_w.sd();
    if (opt.per_lag_uncertainties) {
        result.c11_se.resize(c11_w.size());
        result.c12_se.resize(c12_w.size());
        result.c22_se.resize(c22_w.size());
        for (std::size_t i = 0; i < c11_w.size(); ++i) {
            result.c11_se[i] = c11_w[i].sd();
            result.c12_se[i] = c12_w[i].sd();
            result.c22_se[i] = c22_w[i].sd();
        }
    }
    return result;
}

ValueWithUncertainty estimate_eta_ratio(const PairCovariance& pc, const EstimationOptions& opt) {
    return estimate_calibration(pc, opt).eta_ratio;
}

ValueWithUncertainty estimate_eta_integral(const PairCovariance& pc,
                                           const EstimationOptions& opt) {
    return estimate_calibration(pc, opt).eta_q_integral;
}

WindowedCountAccumulator::WindowedCountAccumulator(double window, double duration,
                                                   double shift1, double shift2)
    : window_(window), shift1_(shift1), shift2_(shift2) {
    if (!(window > 0.0)) throw UsageError("WindowedCountAccumulator: window must be positive");
    if (!(duration >= window))
        throw UsageError("WindowedCountAccumulator: duration shorter than one window");
    n_windows_ = static_cast<std::int64_t>(std::floor(duration / window + 1e-9));
    counts1_.assign(std::size_t{1} << 16, 0);
    counts2_.assign(std::size_t{1} << 16, 0);
}

void WindowedCountAccumulator::add(Arm arm, std::span<const double> times) {
    auto& counts = arm == Arm::arm1 ? counts1_ : counts2_;
    for (double t : times) {
        const std::int64_t idx = static_cast<std::int64_t>(t / window_);
        if (idx >= n_windows_ || idx < 0) continue;  // tail beyond the last full window
        if (idx < ring_base_)
            throw UsageError("WindowedCountAccumulator: event for an already closed window");
        while (idx - ring_base_ >= static_cast<std::int64_t>(counts1_.size())) {
            // Grow both rings, unrolling so slot 0 is ring_base_ again.
            const std::size_t old = counts1_.size();
            std::vector<std::uint32_t> n1(old * 2, 0), n2(old * 2, 0);
            for (std::size_t i = 0; i < old; ++i) {
                n1[i] = counts1_[(ring_head_ + i) & (old - 1)];
                n2[i] = counts2_[(ring_head_ + i) & (old - 1)];
            }
            counts1_ = std::move(n1);
            counts2_ = std::move(n2);
            ring_head_ = 0;
        }
        const std::size_t slot =
            (ring_head_ + static_cast<std::size_t>(idx - ring_base_)) & (counts.size() - 1);
        ++counts[slot];
    }
}

void WindowedCountAccumulator::close_through(std::int64_t last_index) {
    while (ring_base_ <= last_index && ring_base_ < n_windows_) {
        const std::size_t slot = ring_head_ & (counts1_.size() - 1);
        const double u = static_cast<double>(counts1_[slot]) - shift1_;
        const double v = static_cast<double>(counts2_[slot]) - shift2_;
        counts1_[slot] = 0;
        counts2_[slot] = 0;
        su_ += u;
        su2_ += u * u;
        su3_ += u * u * u;
        su4_ += u * u * u * u;
        sv_ += v;
        sv2_ += v * v;
        sv3_ += v * v * v;
        sv4_ += v * v * v * v;
        suv_ += u * v;
        su2v_ += u * u * v;
        suv2_ += u * v * v;
        su2v2_ += u * u * v * v;
        ring_head_ = (ring_head_ + 1) & (counts1_.size() - 1);
        ++ring_base_;
        ++closed_;
    }
}

void WindowedCountAccumulator::advance(double t_safe) {
    close_through(static_cast<std::int64_t>(std::floor(t_safe / window_)) - 1);
}

namespace {

struct ArmMoments {
    double mean, m2, m3, m4, var_unbiased;
};

ArmMoments central_moments(double s1, double s2, double s3, double s4, double n,
                           double shift) {
    const double a1 = s1 / n;
    const double a2 = s2 / n;
    const double a3 = s3 / n;
    const double a4 = s4 / n;
    ArmMoments m;
    m.mean = shift + a1;
    m.m2 = a2 - a1 * a1;
    m.m3 = a3 - 3.0 * a1 * a2 + 2.0 * a1 * a1 * a1;
    m.m4 = a4 - 4.0 * a1 * a3 + 6.0 * a1 * a1 * a2 - 3.0 * a1 * a1 * a1 * a1;
    m.var_unbiased = n > 1 ? m.m2 * n / (n - 1.0) : 0.0;
    return m;
}

// var - mean, with Cov(mean_hat, var_hat) ~ m3/n entering the error.
MomentEstimate excess_estimate(const ArmMoments& m, double n) {
    MomentEstimate e;
    e.value = m.var_unbiased - m.mean;
    const double var_of_var = (m.m4 - m.m2 * m.m2 * (n - 3.0) / (n - 1.0)) / n;
    const double var_of_mean = m.m2 / n;
    const double cov_mean_var = m.m3 / n;
    e.std_error = std::sqrt(std::max(var_of_var + var_of_mean - 2.0 * cov_mean_var, 0.0));
    return e;
}

MomentEstimate fano_estimate(const ArmMoments& m, double n) {
    MomentEstimate f;
    if (!(m.mean > 0.0)) return {0.0, std::numeric_limits<double>::infinity()};
    f.value = m.var_unbiased / m.mean;
    const double var_of_var = (m.m4 - m.m2 * m.m2 * (n - 3.0) / (n - 1.0)) / n;
    const double var_of_mean = m.m2 / n;
    const double cov_mean_var = m.m3 / n;
    const double v = var_of_var / (m.mean * m.mean) +
                     m.var_unbiased * m.var_unbiased * var_of_mean /
                         (m.mean * m.mean * m.mean * m.mean) -
                     2.0 * m.var_unbiased * cov_mean_var / (m.mean * m.mean * m.mean);
    f.std_error = std::sqrt(std::max(v, 0.0));
    return f;
}

}  // namespace

CountWindowStatistics WindowedCountAccumulator::finalize() {
    close_through(n_windows_ - 1);
    if (closed_ < 100)
        throw UsageError("WindowedCountAccumulator: fewer than 100 windows");

    const double n = static_cast<double>(closed_);
    const ArmMoments m1 = central_moments(su_, su2_, su3_, su4_, n, shift1_);
    const ArmMoments m2 = central_moments(sv_, sv2_, sv3_, sv4_, n, shift2_);

    CountWindowStatistics s;
    s.n_windows = closed_;
    s.window = window_;
    s.mean1 = {m1.mean, std::sqrt(m1.m2 / n)};
    s.mean2 = {m2.mean, std::sqrt(m2.m2 / n)};
    s.var1 = {m1.var_unbiased,
              std::sqrt(std::max((m1.m4 - m1.m2 * m1.m2 * (n - 3.0) / (n - 1.0)) / n, 0.0))};
    s.var2 = {m2.var_unbiased,
              std::sqrt(std::max((m2.m4 - m2.m2 * m2.m2 * (n - 3.0) / (n - 1.0)) / n, 0.0))};
    s.fano1 = fano_estimate(m1, n);
    s.fano2 = fano_estimate(m2, n);
    s.excess1 = excess_estimate(m1, n);
    s.excess2 = excess_estimate(m2, n);

    const double a1 = su_ / n, b1 = sv_ / n;
    const double c11 = suv_ / n;
    const double c21 = su2v_ / n;
    const double c12 = suv2_ / n;
    const double c22 = su2v2_ / n;
    const double cov_pop = c11 - a1 * b1;
    // central E[(u - ubar)^2 (v - vbar)^2] from shifted raw moments
    const double m22 = c22 - 2.0 * b1 * c21 - 2.0 * a1 * c12 + b1 * b1 * m1.m2 +
                       a1 * a1 * m2.m2 + 4.0 * a1 * b1 * c11 - a1 * a1 * b1 * b1;
    s.covariance = {n > 1 ? cov_pop * n / (n - 1.0) : 0.0,
                    std::sqrt(std::max((m22 - cov_pop * cov_pop) / n, 0.0))};
    return s;
}

CountWindowStatistics windowed_count_statistics(const PhotonEventStream& events1,
                                                const PhotonEventStream& events2,
                                                double window, double duration) {
    if (events1.arm == events2.arm)
        throw UsageError("windowed_count_statistics: need one stream per arm");
    const double n_windows = std::floor(duration / window + 1e-9);
    const double shift1 = n_windows > 0 ? std::round(events1.size() / n_windows) : 0.0;
    const double shift2 = n_windows > 0 ? std::round(events2.size() / n_windows) : 0.0;
    WindowedCountAccumulator acc(window, duration, shift1, shift2);
    acc.add(events1.arm == Arm::arm1 ? Arm::arm1 : Arm::arm2, events1.times);
    acc.add(events2.arm == Arm::arm1 ? Arm::arm1 : Arm::arm2, events2.times);
    return acc.finalize();
}

}  // namespace stimcal
