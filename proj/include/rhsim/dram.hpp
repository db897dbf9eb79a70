#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "rhsim/rng.hpp"
#include "rhsim/types.hpp"

namespace rhsim::dram {

enum class RefreshMode : uint8_t { normal, double_rate };

struct DramGeometry {
    uint32_t channels = 2;
    uint32_t ranks = 2;
    uint32_t banks_total = 64;      // 32 for DDR3 dual-channel dual-rank, 64 for DDR4
    uint32_t rows_per_bank = 24576; // 2^14 .. 2^16
    uint32_t row_size = 8192;       // bytes
    SimTime refresh_window_ns = 64'000'000;
    RefreshMode refresh_mode = RefreshMode::normal;

    uint64_t capacity() const {
        return static_cast<uint64_t>(row_size) * rows_per_bank * banks_total;
    }
    uint32_t banks_per_rank() const { return banks_total / (channels * ranks); }
    SimTime effective_refresh_window() const {
        return refresh_mode == RefreshMode::double_rate ? refresh_window_ns / 2
                                                        : refresh_window_ns;
    }
    uint32_t row_bits() const { return row_size * 8; }
    uint64_t frames_per_row() const { return row_size / kPageBytes; }
    uint64_t total_rows() const { return static_cast<uint64_t>(rows_per_bank) * banks_total; }

    void validate() const;
};

enum class PagePolicy : uint8_t { open_page, closed_page, adaptive };

struct ControllerPolicy {
    PagePolicy page_policy = PagePolicy::adaptive;
    SimTime close_timeout_ns = 200; // adaptive only
    bool combine_enabled = true;
    uint32_t combine_window = 4; // w=1 behaves like combining off
    bool para_enabled = false;
    double para_probability = 0.0;
    bool trr_enabled = false;
    uint32_t trr_radius = 1;
    uint64_t trr_trigger = 32768;
    bool mac_enabled = false;
    uint64_t mac_max_activations = 0;

    void validate() const;
};

struct DramLocation {
    uint32_t channel = 0;
    uint32_t rank = 0;
    uint32_t bank = 0; // within rank
    uint32_t row = 0;
    uint32_t column = 0;

    bool operator==(const DramLocation&) const = default;
};

// Bit-sliced address map with a DRAMA-like XOR on the bank bits:
//   column = addr[0:13), bank_sel = addr[13:13+b) ^ addr[17:17+b),
//   row = addr[13+b:...).
// Bijective over (bank, row, column); see unmap_location for the inverse.
DramLocation map_address(uint64_t phys_addr, const DramGeometry& g);
uint64_t unmap_location(const DramLocation& loc, const DramGeometry& g);

inline uint32_t global_bank(const DramLocation& loc, const DramGeometry& g) {
    return (loc.channel * g.ranks + loc.rank) * g.banks_per_rank() + loc.bank;
}
uint64_t row_base_address(uint32_t global_bank, uint32_t row, const DramGeometry& g);

// -------------------------------------------------------------------------
// Cell vulnerability map

struct VulnCell {
    uint32_t bit_in_row; // 0 .. row_bits-1
    double threshold;    // adjacent activations needed to flip
    bool anti;           // anti cell flips 0 -> 1, true cell flips 1 -> 0
};

struct CellMapParams {
    uint64_t seed = 1;
    double density = 0.8;       // fraction of cells with a finite threshold
    double mu = 16.2;           // log-normal location of thresholds
    double sigma = 1.0;         // log-normal shape
    double anti_fraction = 0.53; // fraction of vulnerable cells that are anti cells
};

// Per-row vulnerable cells, generated lazily in increasing threshold order so
// that only the sub-threshold prefix a query needs is ever materialized.
// Regeneration from the same (seed, params) yields an identical map.
class CellVulnMap {
public:
    CellVulnMap(const CellMapParams& params, const DramGeometry& geometry);

    // Cells with threshold <= limit, sorted ascending by threshold.
    std::span<const VulnCell> cells_below(uint32_t global_bank, uint32_t row, double limit);

    // Every finite-threshold cell of the row. Intended for small geometries.
    std::span<const VulnCell> all_cells(uint32_t global_bank, uint32_t row);

    const CellMapParams& params() const { return params_; }
    void clear_cache() { rows_.clear(); }

private:
    struct RowGen {
        Rng rng;
        double gamma = 0.0;   // cumulative Exp(1) arrivals
        double quantile = 0.0; // current position in probability space
        uint32_t emitted = 0;
        bool exhausted = false;
        uint64_t perm_keys[4] {};
        std::vector<VulnCell> cells;
    };

    RowGen& row_state(uint32_t global_bank, uint32_t row);
    void extend(RowGen& s, double quantile_limit);
    double threshold_quantile(double p) const;

    CellMapParams params_;
    uint32_t row_bits_;
    uint32_t perm_bits_;
    std::unordered_map<uint64_t, RowGen> rows_;
};

// -------------------------------------------------------------------------
// Page content backend. The DRAM model commits flips through this interface;
// the OS model supplies frame contents in full scenarios.

class PageContent {
public:
    virtual ~PageContent() = default;
    virtual bool read_bit(uint64_t frame, uint32_t bit_offset) = 0;
    virtual void write_bit(uint64_t frame, uint32_t bit_offset, bool value) = 0;
};

// Deterministic pseudo-random pristine content with a flip overlay. Used by
// standalone DRAM/hammer runs; reset() models rewriting a page.
class SeededPageContent : public PageContent {
public:
    explicit SeededPageContent(uint64_t seed) : seed_(seed) {}

    bool read_bit(uint64_t frame, uint32_t bit_offset) override;
    void write_bit(uint64_t frame, uint32_t bit_offset, bool value) override;

    bool pristine_bit(uint64_t frame, uint32_t bit_offset) const;
    void reset(uint64_t frame);
    void reset_all() { overlay_.clear(); }

private:
    uint64_t seed_;
    std::unordered_map<uint64_t, bool> overlay_; // key = frame * kPageBits + offset
};

// -------------------------------------------------------------------------
// DRAM state

enum class AccessKind : uint8_t { row_hit, row_conflict, row_open };

struct AccessResult {
    AccessKind kind;
    SimTime latency_ns;
};

constexpr SimTime kRowHitLatency = 50;
constexpr SimTime kRowConflictLatency = 100; // 200% of a row hit
constexpr SimTime kRowOpenLatency = 100;     // activation after precharge

class DramState {
public:
    DramState(const DramGeometry& geometry, const ControllerPolicy& policy,
              const CellMapParams& cells, uint64_t rng_seed, PageContent* content);

    // Per-access path. Processes due refreshes, then serves one request.
    // Does not advance the clock; callers charge access costs via advance().
    AccessResult access(uint64_t phys_addr);

    void advance(SimTime dt);

    // Advances the clock by `elapsed`, firing staggered per-row refreshes.
    // Returns the flips committed while advancing.
    std::vector<FlipRecord> tick(SimTime elapsed);

    // Batched hammer loop: `rounds` iterations over `addresses` with the given
    // per-round cost, activation counts scaled by `activation_scale`.
    // Equivalent to the per-access path (exactly, for para-off configs), in
    // O(windows) instead of O(rounds).
    std::vector<FlipRecord> hammer_rows(const std::vector<uint64_t>& addresses,
                                        uint64_t rounds, SimTime round_cost_ns,
                                        double activation_scale);

    SimTime now() const { return clock_; }
    const DramGeometry& geometry() const { return geometry_; }
    const ControllerPolicy& policy() const { return policy_; }
    CellVulnMap& cells() { return cells_; }
    PageContent* content() { return content_; }

    const std::vector<FlipRecord>& committed_flips() const { return committed_; }
    uint64_t activations(uint32_t global_bank, uint32_t row) const;

    void set_technique(Technique t) { technique_ = t; }
    // Calibrated per-technique multiplier applied to disturbance exposure.
    void set_activation_scale(double s) { activation_scale_ = s; }
    double activation_scale() const { return activation_scale_; }
    void halt() { halted_ = true; }
    bool halted() const { return halted_; }

    // Simulated refresh of a row: clears the disturbance its neighbors have
    // accumulated against it (ANVIL-style mitigation hook).
    void refresh_rows(uint32_t global_bank, uint32_t row_lo, uint32_t row_hi);

private:
    struct BankState {
        std::optional<uint32_t> open_row;
        SimTime last_access = 0;
        std::optional<uint32_t> run_row; // combining run
        uint32_t run_len = 0;
    };
    struct LedgerEntry {
        uint64_t count = 0;          // activations since this row's last refresh
        uint64_t clear_low = 0;      // count at last refresh of row-1
        uint64_t clear_high = 0;     // count at last refresh of row+1
        uint64_t last_trigger = 0;   // TRR/MAC bookkeeping
        SimTime next_refresh = 0;
    };

    uint64_t ledger_key(uint32_t bank, uint32_t row) const {
        return static_cast<uint64_t>(bank) * geometry_.rows_per_bank + row;
    }
    SimTime refresh_phase(uint32_t row) const;
    SimTime next_refresh_after(uint32_t row, SimTime t) const;

    void process_refreshes_until(SimTime t);
    void note_activation(uint32_t bank, uint32_t row);
    void close_row(uint32_t bank, SimTime t);
    void para_maybe_refresh_neighbors(uint32_t bank, uint32_t row);
    void clear_victim(uint32_t bank, uint32_t victim_row);
    void evaluate_aggressor(uint32_t bank, uint32_t row, LedgerEntry& e, SimTime at,
                            double scale);
    void flip_victim_cells(uint32_t bank, uint32_t victim_row, double exposure, SimTime at);

    DramGeometry geometry_;
    ControllerPolicy policy_;
    CellVulnMap cells_;
    Rng rng_;
    PageContent* content_;
    SimTime clock_ = 0;
    std::vector<BankState> banks_;
    std::map<uint64_t, LedgerEntry> ledger_; // ordered for deterministic iteration
    std::vector<FlipRecord> committed_;
    Technique technique_ = Technique::none;
    double activation_scale_ = 1.0;
    bool halted_ = false;
};

} // namespace rhsim::dram
