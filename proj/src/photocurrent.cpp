#include "stimcal/photocurrent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "stimcal/rng.hpp"

namespace stimcal {
namespace {

constexpr std::int64_t kBlockSamples = 65536;

void put_u32_le(unsigned char* out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out[i] = static_cast<unsigned char>(v >> (8 * i));
}

void put_u64_le(unsigned char* out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>(v >> (8 * i));
}

std::uint32_t get_u32_le(const unsigned char* in) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64_le(const unsigned char* in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
    return v;
}

void put_f64_le(unsigned char* out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u64_le(out, bits);
}

double get_f64_le(const unsigned char* in) {
    const std::uint64_t bits = get_u64_le(in);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

}  // namespace

void DetectorModel::validate() const {
    if (!(eta >= 0.0) || eta > 1.0)
        throw UsageError("DetectorModel: eta must lie in [0, 1]");
    if (!(pulse_width > 0.0)) throw UsageError("DetectorModel: pulse_width must be positive");
    if (!(charge_mean > 0.0)) throw UsageError("DetectorModel: charge_mean must be positive");
    if (!(dark_rate >= 0.0)) throw UsageError("DetectorModel: dark_rate must be >= 0");
}

PulseKernel pulse_kernel(const DetectorModel& model, double sample_rate) {
    model.validate();
    if (!(sample_rate > 0.0)) throw UsageError("pulse_kernel: sample_rate must be positive");
    if (sample_rate * model.pulse_width < 20.0 - 1e-9)
        throw UsageError("pulse_kernel: undersampled pulse; need sample_rate * pulse_width >= 20 "
                         "so the response is resolved by at least 20 samples");

    const double dt = 1.0 / sample_rate;
    const double tau = model.pulse_width;
    PulseKernel kernel;
    kernel.sample_rate = sample_rate;

    switch (model.pulse_shape) {
        case PulseShape::rectangular: {
            const double n_exact = tau * sample_rate;
            const std::int64_t n = std::abs(n_exact - std::round(n_exact)) < 1e-6
                                       ? std::llround(n_exact)
                                       : static_cast<std::int64_t>(std::ceil(n_exact));
            kernel.start_offset = 0.0;
            kernel.samples.assign(static_cast<std::size_t>(n), 1.0);
            break;
        }
        case PulseShape::gaussian: {
            const double sigma = tau;
            const std::int64_t n = std::llround(12.0 * sigma * sample_rate) + 1;
            kernel.start_offset = -6.0 * sigma;
            kernel.samples.resize(static_cast<std::size_t>(n));
            for (std::int64_t j = 0; j < n; ++j) {
                const double t = kernel.start_offset + j * dt;
                kernel.samples[static_cast<std::size_t>(j)] =
                    std::exp(-0.5 * t * t / (sigma * sigma));
            }
            break;
        }
        case PulseShape::one_sided_exponential: {
            const std::int64_t n = std::llround(21.0 * tau * sample_rate) + 1;
            kernel.start_offset = 0.0;
            kernel.samples.resize(static_cast<std::size_t>(n));
            for (std::int64_t j = 0; j < n; ++j)
                kernel.samples[static_cast<std::size_t>(j)] = std::exp(-(j * dt) / tau);
            break;
        }
    }

    double sum = 0.0;
    for (double v : kernel.samples) sum += v;
    const double scale = sample_rate / sum;  // unit discrete area: sum * dt == 1
    for (double& v : kernel.samples) v *= scale;
    return kernel;
}

double charge_for_event(const DetectorModel& model, std::uint64_t charge_seed, double time) {
    if (model.charge_model == ChargeModel::deterministic) return model.charge_mean;
    std::uint64_t bits;
    std::memcpy(&bits, &time, sizeof bits);
    const std::uint64_t h = event_hash(charge_seed, bits);
    const double u = (static_cast<double>(h >> 11) + 1.0) * 0x1.0p-53;
    return -model.charge_mean * std::log(u);
}

namespace {

// Adds q * f(n/fs - t) for all affected samples n. With phi the fractional
// part of the kernel origin, sample m receives
//   q * (phi * k[m-1] + (1-phi) * k[m]),
// the linear interpolation of the kernel at fractional offset; the summed
// deposit is exactly q * sum(k) for any phi.
template <typename Acc>
void deposit_kernel(const PulseKernel& kernel, double time, double charge, Acc&& add) {
    const double a = (time + kernel.start_offset) * kernel.sample_rate;
    const double floor_a = std::floor(a);
    const std::int64_t n_first = static_cast<std::int64_t>(floor_a);
    const double phi = a - floor_a;
    const int len = kernel.length();
    const double w_prev = charge * phi;
    const double w_cur = charge * (1.0 - phi);
    for (int m = 0; m <= len; ++m) {
        const double prev = m > 0 ? kernel.samples[static_cast<std::size_t>(m - 1)] : 0.0;
        const double cur = m < len ? kernel.samples[static_cast<std::size_t>(m)] : 0.0;
        add(n_first + m, w_prev * prev + w_cur * cur);
    }
}

}  // namespace

CurrentTrace synthesize_trace(const PhotonEventStream& events, const DetectorModel& model,
                              double sample_rate, std::uint64_t charge_seed,
                              double duration) {
    if (!(duration > 0.0)) throw UsageError("synthesize_trace: duration must be positive");
    if (!events.times.empty() &&
        (events.times.front() < 0.0 || events.times.back() > duration))
        throw UsageError("synthesize_trace: events outside [0, duration]");
    const PulseKernel kernel = pulse_kernel(model, sample_rate);

    CurrentTrace trace;
    trace.sample_rate = sample_rate;
    trace.start_time = 0.0;
    const std::int64_t n = std::llround(duration * sample_rate);
    trace.samples.assign(static_cast<std::size_t>(n), 0.0);

    for (double t : events.times) {
        const double q = charge_for_event(model, charge_seed, t);
        deposit_kernel(kernel, t, q, [&](std::int64_t idx, double v) {
            if (idx >= 0 && idx < n) trace.samples[static_cast<std::size_t>(idx)] += v;
        });
    }
    return trace;
}

StreamingSynthesizer::StreamingSynthesizer(const DetectorModel& model, double sample_rate,
                                           std::int64_t total_samples,
                                           std::uint64_t charge_seed, Sink sink)
    : model_(model),
      kernel_(pulse_kernel(model, sample_rate)),
      sample_rate_(sample_rate),
      total_samples_(total_samples),
      charge_seed_(charge_seed),
      sink_(std::move(sink)),
      front_(kBlockSamples, 0.0),
      back_(kBlockSamples, 0.0) {
    if (kernel_.support_samples() > kBlockSamples)
        throw UsageError("StreamingSynthesizer: pulse support exceeds the block size");
}

void StreamingSynthesizer::emit_front_block() {
    if (base_index_ < total_samples_) {
        const std::int64_t count = std::min<std::int64_t>(kBlockSamples, total_samples_ - base_index_);
        sink_(base_index_, std::span<const double>(front_.data(), static_cast<std::size_t>(count)));
    }
    std::swap(front_, back_);
    std::fill(back_.begin(), back_.end(), 0.0);
    base_index_ += kBlockSamples;
}

void StreamingSynthesizer::deposit(double time, double charge) {
    deposit_kernel(kernel_, time, charge, [&](std::int64_t idx, double v) {
        if (idx < 0 || idx >= total_samples_) return;
        while (idx >= base_index_ + 2 * kBlockSamples) emit_front_block();
        if (idx < base_index_)
            throw UsageError("StreamingSynthesizer: event arrived after its samples were flushed");
        const std::int64_t off = idx - base_index_;
        if (off < kBlockSamples)
            front_[static_cast<std::size_t>(off)] += v;
        else
            back_[static_cast<std::size_t>(off - kBlockSamples)] += v;
    });
}

void StreamingSynthesizer::add_event(double time) {
    deposit(time, charge_for_event(model_, charge_seed_, time));
}

void StreamingSynthesizer::advance_watermark(double t_safe) {
    const std::int64_t limit =
        static_cast<std::int64_t>(std::floor((t_safe + kernel_.start_offset) * sample_rate_)) - 1;
    while (base_index_ + kBlockSamples <= limit && base_index_ < total_samples_)
        emit_front_block();
}

void StreamingSynthesizer::finish() {
    if (finished_) return;
    finished_ = true;
    while (base_index_ < total_samples_) emit_front_block();
}

TraceFileWriter::TraceFileWriter(const std::string& path, double sample_rate,
                                 double start_time, std::uint64_t sample_count)
    : path_(path), promised_(sample_count) {
    file_ = std::fopen(path.c_str(), "wb");
    if (!file_) throw UsageError("TraceFileWriter: cannot open " + path);
    unsigned char header[40];
    std::memcpy(header, kTraceFileMagic, 8);
    put_u32_le(header + 8, kTraceFileVersion);
    put_u32_le(header + 12, 0);
    put_f64_le(header + 16, sample_rate);
    put_f64_le(header + 24, start_time);
    put_u64_le(header + 32, sample_count);
    if (std::fwrite(header, 1, sizeof header, file_) != sizeof header)
        throw UsageError("TraceFileWriter: short write on header of " + path);
}

TraceFileWriter::~TraceFileWriter() {
    if (file_) std::fclose(file_);
}

void TraceFileWriter::write(std::span<const double> samples) {
    std::vector<unsigned char> buf(samples.size() * 8);
    for (std::size_t i = 0; i < samples.size(); ++i) put_f64_le(buf.data() + 8 * i, samples[i]);
    if (std::fwrite(buf.data(), 1, buf.size(), file_) != buf.size())
        throw UsageError("TraceFileWriter: short write on " + path_);
    written_ += samples.size();
}

void TraceFileWriter::close() {
    if (!file_) return;
    if (std::fclose(file_) != 0) throw UsageError("TraceFileWriter: close failed for " + path_);
    file_ = nullptr;
    if (written_ != promised_)
        throw UsageError("TraceFileWriter: sample count mismatch on " + path_);
}

void write_trace_file(const std::string& path, const CurrentTrace& trace) {
    TraceFileWriter writer(path, trace.sample_rate, trace.start_time, trace.samples.size());
    writer.write(trace.samples);
    writer.close();
}

TraceFileReader::TraceFileReader(const std::string& path) : path_(path) {
    file_ = std::fopen(path.c_str(), "rb");
    if (!file_) throw UsageError("TraceFileReader: cannot open " + path);
    unsigned char header[40];
    const std::size_t got = std::fread(header, 1, sizeof header, file_);
    if (got != sizeof header) throw FormatError("trace file: truncated header", got);
    if (std::memcmp(header, kTraceFileMagic, 8) != 0)
        throw FormatError("trace file: bad magic", 0);
    if (get_u32_le(header + 8) != kTraceFileVersion)
        throw FormatError("trace file: unsupported version", 8);
    info_.sample_rate = get_f64_le(header + 16);
    info_.start_time = get_f64_le(header + 24);
    info_.count = get_u64_le(header + 32);
    remaining_ = info_.count;
    if (!(info_.sample_rate > 0.0)) throw FormatError("trace file: invalid sample rate", 16);
}

TraceFileReader::~TraceFileReader() {
    if (file_) std::fclose(file_);
}

std::size_t TraceFileReader::read(std::span<double> out) {
    const std::size_t want =
        static_cast<std::size_t>(std::min<std::uint64_t>(out.size(), remaining_));
    if (want == 0) return 0;
    std::vector<unsigned char> buf(want * 8);
    const std::size_t got_bytes = std::fread(buf.data(), 1, buf.size(), file_);
    if (got_bytes != buf.size()) {
        const std::uint64_t offset = 40 + (info_.count - remaining_) * 8 + got_bytes;
        throw FormatError("trace file: truncated samples", offset);
    }
    for (std::size_t i = 0; i < want; ++i) out[i] = get_f64_le(buf.data() + 8 * i);
    remaining_ -= want;
    return want;
}

CurrentTrace read_trace_file(const std::string& path) {
    TraceFileReader reader(path);
    CurrentTrace trace;
    trace.sample_rate = reader.info().sample_rate;
    trace.start_time = reader.info().start_time;
    trace.samples.resize(static_cast<std::size_t>(reader.info().count));
    std::size_t have = 0;
    while (have < trace.samples.size()) {
        const std::size_t got =
            reader.read(std::span<double>(trace.samples.data() + have, trace.samples.size() - have));
        if (got == 0) break;
        have += got;
    }
    return trace;
}

void write_trace_csv(const std::string& path, const CurrentTrace& trace) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw UsageError("write_trace_csv: cannot open " + path);
    std::fprintf(f, "time_s,current_e_per_s\n");
    for (std::size_t i = 0; i < trace.samples.size(); ++i)
        std::fprintf(f, "%.17g,%.17g\n", trace.start_time + i / trace.sample_rate,
                     trace.samples[i]);
    std::fclose(f);
}

}  // namespace stimcal
