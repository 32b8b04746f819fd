#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stimcal/common.hpp"
#include "stimcal/errors.hpp"

namespace stimcal {

enum class EventTag : std::uint8_t {
    pair = 0,             // down-converted photon of a pair
    seed_bunched = 1,     // seed photon that stimulated a pair (arm 2)
    seed_background = 2,  // un-bunched seed photon, dark count
};

// Time-tagged photon arrivals on one arm, sorted ascending.
struct PhotonEventStream {
    Arm arm = Arm::arm1;
    std::vector<double> times;   // seconds
    std::vector<EventTag> tags;  // parallel to times

    std::size_t size() const { return times.size(); }

    void append(double t, EventTag tag) {
        times.push_back(t);
        tags.push_back(tag);
    }

    // Checks the stream invariants: parallel arrays, sorted times inside
    // [0, duration], and arm-1 streams carrying only pair tags.
    void validate(double duration) const;
};

// Merge two sorted streams of the same arm into one sorted stream.
PhotonEventStream merge_streams(const PhotonEventStream& a, const PhotonEventStream& b);

// Binary event file: 16-byte header (12-byte magic + u32 version), then one
// 10-byte little-endian record per event: f64 arrival time, u8 arm, u8 tag.
inline constexpr char kEventFileMagic[12] = {'S', 'T', 'I', 'M', 'C', 'A',
                                             'L', '.', 'E', 'V', 'T', 'S'};
inline constexpr std::uint32_t kEventFileVersion = 1;

class EventFileWriter {
public:
    explicit EventFileWriter(const std::string& path);
    ~EventFileWriter();
    EventFileWriter(const EventFileWriter&) = delete;
    EventFileWriter& operator=(const EventFileWriter&) = delete;

    void write(double time, Arm arm, EventTag tag);
    void write_stream(const PhotonEventStream& stream);
    std::uint64_t records_written() const { return records_; }
    void close();

private:
    std::string path_;
    std::FILE* file_ = nullptr;
    std::uint64_t records_ = 0;
};

struct EventRecord {
    double time;
    Arm arm;
    EventTag tag;
};

// Reads a whole event file; throws FormatError with the offending byte
// offset on a bad header, truncated record, or invalid arm/tag byte.
std::vector<EventRecord> read_event_file(const std::string& path);

// Splits flat records into per-arm streams (records must be time-sorted).
std::pair<PhotonEventStream, PhotonEventStream> split_by_arm(
    const std::vector<EventRecord>& records);

}  // namespace stimcal
