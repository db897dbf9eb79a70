#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rhsim {

// Simulated time in nanoseconds.
using SimTime = int64_t;

constexpr SimTime kNsPerSec = 1'000'000'000;

inline double to_seconds(SimTime t) { return static_cast<double>(t) / kNsPerSec; }
inline SimTime from_seconds(double s) { return static_cast<SimTime>(s * kNsPerSec); }

constexpr uint32_t kPageBytes = 4096;
constexpr uint32_t kPageBits = kPageBytes * 8; // 32768 bit offsets per page

enum class Technique : uint8_t { double_sided, single_sided, one_location, none };

inline const char* technique_name(Technique t) {
    switch (t) {
        case Technique::double_sided: return "double_sided";
        case Technique::single_sided: return "single_sided";
        case Technique::one_location: return "one_location";
        default: return "none";
    }
}

// A committed bit flip. Direction: zero_to_one=true means the cell went 0 -> 1.
struct FlipRecord {
    uint64_t frame = 0;        // 4 KiB physical frame index
    uint32_t bit_offset = 0;   // 0..32767 within the page
    bool zero_to_one = false;
    Technique technique = Technique::none;
    SimTime time_ns = 0;
    uint32_t bank = 0; // global bank id, kept for audits
    uint32_t row = 0;

    bool operator==(const FlipRecord&) const = default;
};

// Aggregated slice of an access trace: a steady-rate burst of memory requests
// by one process. Detectors scale counts to their own window lengths.
struct TraceSummary {
    SimTime start_ns = 0;
    SimTime duration_ns = 0;
    uint32_t pid = 0;
    bool enclave = false;
    uint64_t misses = 0; // uncached accesses during the burst
    struct RowTouch {
        uint32_t bank;
        uint32_t row;
        uint64_t count;
    };
    std::vector<RowTouch> rows;
};

// One record of a fine-grained access trace, for tests and small scenarios.
struct TraceRecord {
    SimTime time_ns = 0;
    uint32_t pid = 0;
    bool enclave = false;
    uint64_t phys_addr = 0;
    bool miss = true;
};

} // namespace rhsim
