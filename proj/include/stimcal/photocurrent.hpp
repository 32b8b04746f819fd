#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stimcal/event_stream.hpp"

namespace stimcal {

enum class PulseShape : std::uint8_t { gaussian, rectangular, one_sided_exponential };
enum class ChargeModel : std::uint8_t { deterministic, exponential_gain };

// Analog detector: quantum efficiency, unit-area pulse response of
// characteristic width tau_p, and the per-event charge statistics.
// Width convention: the rectangular pulse spans [0, tau_p); the gaussian has
// standard deviation tau_p (truncated at +-6); the one-sided exponential has
// decay constant tau_p. Charges are in units of the elementary charge;
// exponential_gain draws give <q^2> = 2 <q>^2.
struct DetectorModel {
    double eta = 1.0;
    double pulse_width = 0.0;  // tau_p, s
    PulseShape pulse_shape = PulseShape::rectangular;
    double charge_mean = 1.0;  // <q>, units of e
    ChargeModel charge_model = ChargeModel::deterministic;
    double dark_rate = 0.0;  // uncorrelated detector-side events/s

    void validate() const;
    double charge_second_moment() const {
        return (charge_model == ChargeModel::exponential_gain ? 2.0 : 1.0) *
               charge_mean * charge_mean;
    }
};

// Discretized pulse response. samples[j] approximates f(start_offset + j/fs)
// and is rescaled so that sum(samples) / fs == 1 exactly.
struct PulseKernel {
    std::vector<double> samples;
    double start_offset = 0.0;  // time of samples[0] relative to the event
    double sample_rate = 0.0;

    int length() const { return static_cast<int>(samples.size()); }
    // Number of samples an event can touch, including the interpolation tap.
    int support_samples() const { return length() + 1; }
};

// Requires sample_rate * pulse_width >= 20 so the pulse is well resolved.
PulseKernel pulse_kernel(const DetectorModel& model, double sample_rate);

// Per-event charge. Hashing the event time keeps the assignment stable
// under stream merging and chunking.
double charge_for_event(const DetectorModel& model, std::uint64_t charge_seed, double time);

struct CurrentTrace {
    double sample_rate = 0.0;  // Hz
    double start_time = 0.0;   // s
    std::vector<double> samples;  // current in e/s

    double duration() const { return samples.size() / sample_rate; }
};

// Builds the full trace in memory: i(t) = sum_n q_n f(t - t_n) over
// [0, duration]. Events must lie inside [0, duration].
CurrentTrace synthesize_trace(const PhotonEventStream& events, const DetectorModel& model,
                              double sample_rate, std::uint64_t charge_seed,
                              double duration);

// Streaming pulse deposition for runs whose traces do not fit in memory.
// Events arrive in time order (up to the declared slack); completed sample
// blocks are handed to the sink as contiguous spans covering [0, total)
// without gaps.
class StreamingSynthesizer {
public:
    using Sink = std::function<void(std::int64_t first_index, std::span<const double>)>;

    StreamingSynthesizer(const DetectorModel& model, double sample_rate,
                         std::int64_t total_samples, std::uint64_t charge_seed, Sink sink);

    void add_event(double time);
    // Declares that all later events have time >= t_safe; flushes what this
    // makes final.
    void advance_watermark(double t_safe);
    void finish();

private:
    void emit_front_block();
    void deposit(double time, double charge);

    DetectorModel model_;
    PulseKernel kernel_;
    double sample_rate_;
    std::int64_t total_samples_;
    std::uint64_t charge_seed_;
    Sink sink_;
    std::vector<double> front_;
    std::vector<double> back_;
    std::int64_t base_index_ = 0;  // global index of front_[0]
    bool finished_ = false;
};

// Trace file: 40-byte little-endian header (8-byte magic, u32 version, u32
// reserved, f64 sample_rate, f64 start_time, u64 count) followed by count
// f64 samples. Round-trips are bit-exact.
inline constexpr char kTraceFileMagic[8] = {'S', 'T', 'I', 'M', 'C', 'A', 'L', 'T'};
inline constexpr std::uint32_t kTraceFileVersion = 1;

class TraceFileWriter {
public:
    TraceFileWriter(const std::string& path, double sample_rate, double start_time,
                    std::uint64_t sample_count);
    ~TraceFileWriter();
    TraceFileWriter(const TraceFileWriter&) = delete;
    TraceFileWriter& operator=(const TraceFileWriter&) = delete;

    void write(std::span<const double> samples);
    void close();  // verifies the promised sample count was written

private:
    std::string path_;
    std::FILE* file_ = nullptr;
    std::uint64_t promised_ = 0;
    std::uint64_t written_ = 0;
};

void write_trace_file(const std::string& path, const CurrentTrace& trace);
CurrentTrace read_trace_file(const std::string& path);

struct TraceFileInfo {
    double sample_rate = 0.0;
    double start_time = 0.0;
    std::uint64_t count = 0;
};

// Header-only read plus sequential sample access, for files too large to
// load at once.
class TraceFileReader {
public:
    explicit TraceFileReader(const std::string& path);
    ~TraceFileReader();
    TraceFileReader(const TraceFileReader&) = delete;
    TraceFileReader& operator=(const TraceFileReader&) = delete;

    const TraceFileInfo& info() const { return info_; }
    // Reads up to max_samples; returns the number read (0 at end).
    std::size_t read(std::span<double> out);

private:
    std::string path_;
    std::FILE* file_ = nullptr;
    TraceFileInfo info_;
    std::uint64_t remaining_ = 0;
};

void write_trace_csv(const std::string& path, const CurrentTrace& trace);

}  // namespace stimcal
