#include "stimcal/event_stream.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>

namespace stimcal {
namespace {

void put_u32_le(unsigned char* out, std::uint32_t v) {
    out[0] = static_cast<unsigned char>(v);
    out[1] = static_cast<unsigned char>(v >> 8);
    out[2] = static_cast<unsigned char>(v >> 16);
    out[3] = static_cast<unsigned char>(v >> 24);
}

std::uint32_t get_u32_le(const unsigned char* in) {
    return static_cast<std::uint32_t>(in[0]) | (static_cast<std::uint32_t>(in[1]) << 8) |
           (static_cast<std::uint32_t>(in[2]) << 16) | (static_cast<std::uint32_t>(in[3]) << 24);
}

void put_f64_le(unsigned char* out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>(bits >> (8 * i));
}

double get_f64_le(const unsigned char* in) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(in[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

}  // namespace

void PhotonEventStream::validate(double duration) const {
    if (times.size() != tags.size())
        throw UsageError("PhotonEventStream: times/tags length mismatch");
    double prev = -1.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double t = times[i];
        if (!(t >= 0.0) || t > duration)
            throw UsageError("PhotonEventStream: event time outside [0, duration]");
        if (t < prev) throw UsageError("PhotonEventStream: times not sorted");
        prev = t;
        if (arm == Arm::arm1 && tags[i] != EventTag::pair)
            throw UsageError("PhotonEventStream: arm-1 stream carries a non-pair tag");
    }
}

PhotonEventStream merge_streams(const PhotonEventStream& a, const PhotonEventStream& b) {
    if (a.arm != b.arm) throw UsageError("merge_streams: arms differ");
    PhotonEventStream out;
    out.arm = a.arm;
    out.times.reserve(a.size() + b.size());
    out.tags.reserve(a.size() + b.size());
    std::size_t i = 0, j = 0;
    while (i < a.size() || j < b.size()) {
        const bool take_a = j >= b.size() || (i < a.size() && a.times[i] <= b.times[j]);
        if (take_a) {
            out.append(a.times[i], a.tags[i]);
            ++i;
        } else {
            out.append(b.times[j], b.tags[j]);
            ++j;
        }
    }
    return out;
}

EventFileWriter::EventFileWriter(const std::string& path) : path_(path) {
    file_ = std::fopen(path.c_str(), "wb");
    if (!file_) throw UsageError("EventFileWriter: cannot open " + path);
    unsigned char header[16];
    std::memcpy(header, kEventFileMagic, 12);
    put_u32_le(header + 12, kEventFileVersion);
    if (std::fwrite(header, 1, sizeof header, file_) != sizeof header)
        throw UsageError("EventFileWriter: short write on header of " + path);
}

EventFileWriter::~EventFileWriter() {
    if (file_) std::fclose(file_);
}

void EventFileWriter::write(double time, Arm arm, EventTag tag) {
    unsigned char rec[10];
    put_f64_le(rec, time);
    rec[8] = static_cast<unsigned char>(arm);
    rec[9] = static_cast<unsigned char>(tag);
    if (std::fwrite(rec, 1, sizeof rec, file_) != sizeof rec)
        throw UsageError("EventFileWriter: short write on " + path_);
    ++records_;
}

void EventFileWriter::write_stream(const PhotonEventStream& stream) {
    for (std::size_t i = 0; i < stream.size(); ++i)
        write(stream.times[i], stream.arm, stream.tags[i]);
}

void EventFileWriter::close() {
    if (file_) {
        if (std::fclose(file_) != 0)
            throw UsageError("EventFileWriter: close failed for " + path_);
        file_ = nullptr;
    }
}

std::vector<EventRecord> read_event_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw UsageError("read_event_file: cannot open " + path);
    struct Closer {
        std::FILE* f;
        ~Closer() { std::fclose(f); }
    } closer{f};

    unsigned char header[16];
    if (std::fread(header, 1, sizeof header, f) != sizeof header)
        throw FormatError("event file: truncated header", 0);
    if (std::memcmp(header, kEventFileMagic, 12) != 0)
        throw FormatError("event file: bad magic", 0);
    if (get_u32_le(header + 12) != kEventFileVersion)
        throw FormatError("event file: unsupported version", 12);

    std::vector<EventRecord> records;
    unsigned char rec[10];
    std::uint64_t offset = 16;
    for (;;) {
        const std::size_t got = std::fread(rec, 1, sizeof rec, f);
        if (got == 0) break;
        if (got != sizeof rec)
            throw FormatError("event file: truncated record", offset + got);
        const unsigned char arm_byte = rec[8];
        const unsigned char tag_byte = rec[9];
        if (arm_byte != 1 && arm_byte != 2)
            throw FormatError("event file: invalid arm byte", offset + 8);
        if (tag_byte > 2) throw FormatError("event file: invalid tag byte", offset + 9);
        records.push_back({get_f64_le(rec), static_cast<Arm>(arm_byte),
                           static_cast<EventTag>(tag_byte)});
        offset += sizeof rec;
    }
    return records;
}

std::pair<PhotonEventStream, PhotonEventStream> split_by_arm(
    const std::vector<EventRecord>& records) {
    PhotonEventStream s1;
    s1.arm = Arm::arm1;
    PhotonEventStream s2;
    s2.arm = Arm::arm2;
    for (const EventRecord& r : records)
        (r.arm == Arm::arm1 ? s1 : s2).append(r.time, r.tag);
    return {std::move(s1), std::move(s2)};
}

}  // namespace stimcal
