#include "rhsim/dram.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace rhsim::dram {

namespace {

uint32_t log2_exact(uint64_t v, const char* what) {
    if (v == 0 || (v & (v - 1)) != 0)
        throw std::invalid_argument(std::string(what) + " must be a power of two");
    return static_cast<uint32_t>(std::countr_zero(v));
}

} // namespace

void DramGeometry::validate() const {
    if (channels == 0 || ranks == 0 || banks_total == 0 || rows_per_bank == 0)
        throw std::invalid_argument("dram geometry: counts must be positive");
    if (banks_total % (channels * ranks) != 0)
        throw std::invalid_argument("dram geometry: banks_total must equal channels*ranks*banks_per_rank");
    log2_exact(banks_total, "banks_total");
    if (row_size < kPageBytes)
        throw std::invalid_argument("dram geometry: row_size must be at least one page");
    log2_exact(row_size, "row_size");
    if (refresh_window_ns <= 0)
        throw std::invalid_argument("dram geometry: refresh_window must be positive");
}

void ControllerPolicy::validate() const {
    if (para_enabled && (para_probability < 0.0 || para_probability > 1.0))
        throw std::invalid_argument("para probability must be within [0,1]");
    if (mac_enabled && mac_max_activations == 0)
        throw std::invalid_argument("mac max_activations must be positive");
    if (combine_enabled && combine_window == 0)
        throw std::invalid_argument("combine window must be positive");
    if (page_policy == PagePolicy::adaptive && close_timeout_ns <= 0)
        throw std::invalid_argument("adaptive close_timeout must be positive");
}

DramLocation map_address(uint64_t phys_addr, const DramGeometry& g) {
    if (phys_addr >= g.capacity())
        throw std::out_of_range("physical address beyond DRAM capacity");
    const uint32_t col_bits = log2_exact(g.row_size, "row_size");
    const uint32_t bank_bits = log2_exact(g.banks_total, "banks_total");
    const uint64_t bank_mask = g.banks_total - 1;

    const uint32_t column = static_cast<uint32_t>(phys_addr & (g.row_size - 1));
    const uint64_t sel = (phys_addr >> col_bits) & bank_mask;
    const uint64_t xv = (phys_addr >> (col_bits + 4)) & bank_mask;
    const uint32_t gbank = static_cast<uint32_t>(sel ^ xv);
    const uint32_t row = static_cast<uint32_t>(phys_addr >> (col_bits + bank_bits));

    const uint32_t bpr = g.banks_per_rank();
    DramLocation loc;
    loc.channel = gbank / (g.ranks * bpr);
    loc.rank = (gbank / bpr) % g.ranks;
    loc.bank = gbank % bpr;
    loc.row = row;
    loc.column = column;
    return loc;
}

uint64_t unmap_location(const DramLocation& loc, const DramGeometry& g) {
    const uint32_t col_bits = log2_exact(g.row_size, "row_size");
    const uint32_t bank_bits = log2_exact(g.banks_total, "banks_total");
    if (loc.row >= g.rows_per_bank || loc.column >= g.row_size)
        throw std::out_of_range("dram location out of geometry bounds");
    const uint32_t gbank = global_bank(loc, g);
    if (gbank >= g.banks_total)
        throw std::out_of_range("dram location out of geometry bounds");

    // Recover the bank-selector bits: sel[i] = bank[i] ^ addrbit(col_bits+4+i).
    // That source bit is a selector bit itself when its index falls below
    // col_bits+bank_bits, so solve from the top selector bit down.
    uint64_t sel = 0;
    const uint64_t row64 = loc.row;
    for (int i = static_cast<int>(bank_bits) - 1; i >= 0; --i) {
        const uint32_t j = col_bits + 4 + static_cast<uint32_t>(i);
        uint64_t src;
        if (j >= col_bits + bank_bits) {
            src = (row64 >> (j - col_bits - bank_bits)) & 1;
        } else {
            src = (sel >> (j - col_bits)) & 1;
        }
        const uint64_t bit = ((gbank >> i) & 1) ^ src;
        sel |= bit << i;
    }
    return (row64 << (col_bits + bank_bits)) | (sel << col_bits) | loc.column;
}

uint64_t row_base_address(uint32_t gbank, uint32_t row, const DramGeometry& g) {
    const uint32_t bpr = g.banks_per_rank();
    DramLocation loc;
    loc.channel = gbank / (g.ranks * bpr);
    loc.rank = (gbank / bpr) % g.ranks;
    loc.bank = gbank % bpr;
    loc.row = row;
    loc.column = 0;
    return unmap_location(loc, g);
}

// ---------------------------------------------------------------------------
// CellVulnMap

namespace {

// Balanced Feistel network over 2^bits values (bits even); used with cycle
// walking as a per-row permutation so vulnerable-cell positions are distinct
// without materializing the row.
uint64_t feistel_permute(uint64_t x, uint32_t bits, const uint64_t keys[4]) {
    const uint32_t half = bits / 2;
    const uint64_t mask = (1ULL << half) - 1;
    uint64_t lo = x & mask;
    uint64_t hi = (x >> half) & mask;
    for (int r = 0; r < 4; ++r) {
        uint64_t f = keys[r] ^ (lo * 0x9e3779b97f4a7c15ULL);
        f ^= f >> 29;
        f *= 0xbf58476d1ce4e5b9ULL;
        f ^= f >> 32;
        const uint64_t tmp = hi ^ (f & mask);
        hi = lo;
        lo = tmp;
    }
    return (hi << half) | lo;
}

} // namespace

CellVulnMap::CellVulnMap(const CellMapParams& params, const DramGeometry& geometry)
    : params_(params), row_bits_(geometry.row_bits()) {
    if (params_.density < 0.0 || params_.density > 1.0)
        throw std::invalid_argument("cell density must be within [0,1]");
    perm_bits_ = 2;
    while ((1u << perm_bits_) < row_bits_)
        perm_bits_ += 2;
}

double CellVulnMap::threshold_quantile(double p) const {
    return std::exp(params_.mu + params_.sigma * normal_quantile(p));
}

CellVulnMap::RowGen& CellVulnMap::row_state(uint32_t gbank, uint32_t row) {
    const uint64_t key = (static_cast<uint64_t>(gbank) << 32) | row;
    auto it = rows_.find(key);
    if (it != rows_.end())
        return it->second;
    RowGen s;
    uint64_t seed = hash_label(params_.seed, "cellmap");
    seed = hash_combine(seed, gbank);
    seed = hash_combine(seed, row);
    s.rng = Rng(seed);
    for (auto& k : s.perm_keys)
        k = s.rng.next_u64();
    if (params_.density > 0.0) {
        s.gamma = s.rng.next_exponential();
        s.quantile = s.gamma / (static_cast<double>(row_bits_) * params_.density);
    } else {
        s.exhausted = true;
    }
    return rows_.emplace(key, std::move(s)).first->second;
}

void CellVulnMap::extend(RowGen& s, double quantile_limit) {
    while (!s.exhausted && s.quantile <= quantile_limit) {
        if (s.quantile > 1.0 || s.emitted >= row_bits_) {
            s.exhausted = true;
            break;
        }
        VulnCell cell;
        uint64_t pos = s.emitted;
        do {
            pos = feistel_permute(pos, perm_bits_, s.perm_keys);
        } while (pos >= row_bits_);
        cell.bit_in_row = static_cast<uint32_t>(pos);
        cell.threshold = threshold_quantile(s.quantile);
        cell.anti = s.rng.next_bool(params_.anti_fraction);
        s.cells.push_back(cell);
        ++s.emitted;
        s.gamma += s.rng.next_exponential();
        s.quantile = s.gamma / (static_cast<double>(row_bits_) * params_.density);
    }
}

std::span<const VulnCell> CellVulnMap::cells_below(uint32_t gbank, uint32_t row, double limit) {
    if (limit <= 0.0 || params_.density <= 0.0)
        return {};
    RowGen& s = row_state(gbank, row);
    const double q = normal_cdf((std::log(limit) - params_.mu) / params_.sigma);
    extend(s, q);
    auto it = std::upper_bound(s.cells.begin(), s.cells.end(), limit,
                               [](double v, const VulnCell& c) { return v < c.threshold; });
    return {s.cells.data(), static_cast<size_t>(it - s.cells.begin())};
}

std::span<const VulnCell> CellVulnMap::all_cells(uint32_t gbank, uint32_t row) {
    if (params_.density <= 0.0)
        return {};
    RowGen& s = row_state(gbank, row);
    extend(s, 1.0);
    return {s.cells.data(), s.cells.size()};
}

// ---------------------------------------------------------------------------
// SeededPageContent

bool SeededPageContent::pristine_bit(uint64_t frame, uint32_t bit_offset) const {
    return (hash_combine(hash_combine(seed_, frame), bit_offset) & 1) != 0;
}

bool SeededPageContent::read_bit(uint64_t frame, uint32_t bit_offset) {
    const uint64_t key = frame * kPageBits + bit_offset;
    auto it = overlay_.find(key);
    if (it != overlay_.end())
        return it->second;
    return pristine_bit(frame, bit_offset);
}

void SeededPageContent::write_bit(uint64_t frame, uint32_t bit_offset, bool value) {
    overlay_[frame * kPageBits + bit_offset] = value;
}

void SeededPageContent::reset(uint64_t frame) {
    const uint64_t lo = frame * kPageBits;
    for (uint32_t i = 0; i < kPageBits; ++i)
        overlay_.erase(lo + i);
}

// ---------------------------------------------------------------------------
// DramState

DramState::DramState(const DramGeometry& geometry, const ControllerPolicy& policy,
                     const CellMapParams& cells, uint64_t rng_seed, PageContent* content)
    : geometry_(geometry), policy_(policy), cells_(cells, geometry),
      rng_(hash_label(rng_seed, "dram")), content_(content) {
    geometry_.validate();
    policy_.validate();
    banks_.resize(geometry_.banks_total);
}

SimTime DramState::refresh_phase(uint32_t row) const {
    const SimTime w = geometry_.effective_refresh_window();
    return static_cast<SimTime>((static_cast<__int128>(row) * w) / geometry_.rows_per_bank);
}

SimTime DramState::next_refresh_after(uint32_t row, SimTime t) const {
    const SimTime w = geometry_.effective_refresh_window();
    const SimTime phase = refresh_phase(row);
    if (t < phase)
        return phase;
    const SimTime k = (t - phase) / w + 1;
    return phase + k * w;
}

uint64_t DramState::activations(uint32_t gbank, uint32_t row) const {
    auto it = ledger_.find(ledger_key(gbank, row));
    return it == ledger_.end() ? 0 : it->second.count;
}

void DramState::clear_victim(uint32_t gbank, uint32_t victim_row) {
    if (victim_row >= geometry_.rows_per_bank)
        return;
    // The victim's refresh wipes the disturbance accumulated against it;
    // record that on each adjacent aggressor's ledger entry.
    if (victim_row + 1 < geometry_.rows_per_bank) {
        auto it = ledger_.find(ledger_key(gbank, victim_row + 1));
        if (it != ledger_.end())
            it->second.clear_low = it->second.count;
    }
    if (victim_row > 0) {
        auto it = ledger_.find(ledger_key(gbank, victim_row - 1));
        if (it != ledger_.end())
            it->second.clear_high = it->second.count;
    }
}

void DramState::para_maybe_refresh_neighbors(uint32_t gbank, uint32_t row) {
    if (!policy_.para_enabled)
        return;
    if (rng_.next_bool(policy_.para_probability)) {
        if (row > 0)
            clear_victim(gbank, row - 1);
        clear_victim(gbank, row + 1);
    }
}

void DramState::note_activation(uint32_t gbank, uint32_t row) {
    auto [it, created] = ledger_.try_emplace(ledger_key(gbank, row));
    LedgerEntry& e = it->second;
    if (created)
        e.next_refresh = next_refresh_after(row, clock_);
    e.count++;
    const uint64_t trigger = policy_.mac_enabled ? policy_.mac_max_activations
                                                 : (policy_.trr_enabled ? policy_.trr_trigger : 0);
    if (trigger > 0 && e.count - e.last_trigger >= trigger) {
        e.last_trigger = e.count;
        const uint32_t radius = policy_.trr_enabled ? std::max(1u, policy_.trr_radius) : 1;
        for (uint32_t d = 1; d <= radius; ++d) {
            if (row >= d)
                clear_victim(gbank, row - d);
            clear_victim(gbank, row + d);
        }
    }
}

void DramState::flip_victim_cells(uint32_t gbank, uint32_t victim_row, double exposure,
                                  SimTime at) {
    if (victim_row >= geometry_.rows_per_bank || exposure < 1.0)
        return;
    const uint64_t base_frame = row_base_address(gbank, victim_row, geometry_) / kPageBytes;
    for (const VulnCell& cell : cells_.cells_below(gbank, victim_row, exposure)) {
        const uint64_t frame = base_frame + cell.bit_in_row / kPageBits;
        const uint32_t offset = cell.bit_in_row % kPageBits;
        const bool source = !cell.anti; // true cells drain 1 -> 0, anti cells 0 -> 1
        if (content_->read_bit(frame, offset) == source) {
            content_->write_bit(frame, offset, !source);
            committed_.push_back(FlipRecord{frame, offset, cell.anti, technique_, at,
                                            gbank, victim_row});
        }
    }
}

void DramState::evaluate_aggressor(uint32_t gbank, uint32_t row, LedgerEntry& e, SimTime at,
                                   double scale) {
    const double exp_low = static_cast<double>(e.count - std::min(e.count, e.clear_low)) * scale;
    const double exp_high = static_cast<double>(e.count - std::min(e.count, e.clear_high)) * scale;
    if (row > 0)
        flip_victim_cells(gbank, row - 1, exp_low, at);
    flip_victim_cells(gbank, row + 1, exp_high, at);
}

void DramState::process_refreshes_until(SimTime t) {
    for (;;) {
        auto best = ledger_.end();
        for (auto it = ledger_.begin(); it != ledger_.end(); ++it) {
            if (it->second.next_refresh > t)
                continue;
            if (best == ledger_.end() || it->second.next_refresh < best->second.next_refresh)
                best = it;
        }
        if (best == ledger_.end())
            return;
        const uint64_t key = best->first;
        const uint32_t gbank = static_cast<uint32_t>(key / geometry_.rows_per_bank);
        const uint32_t row = static_cast<uint32_t>(key % geometry_.rows_per_bank);
        const SimTime at = best->second.next_refresh;
        evaluate_aggressor(gbank, row, best->second, at, activation_scale_);
        BankState& bs = banks_[gbank];
        if (bs.open_row && *bs.open_row == row) {
            const bool stale = policy_.page_policy == PagePolicy::adaptive &&
                               at - bs.last_access > policy_.close_timeout_ns;
            if (stale) {
                bs.open_row.reset();
            } else {
                para_maybe_refresh_neighbors(gbank, row);
                bs.open_row.reset();
                bs.run_row.reset();
                bs.run_len = 0;
            }
        }
        ledger_.erase(best);
    }
}

void DramState::refresh_rows(uint32_t gbank, uint32_t row_lo, uint32_t row_hi) {
    for (uint32_t r = row_lo; r <= row_hi && r < geometry_.rows_per_bank; ++r)
        clear_victim(gbank, r);
}

void DramState::advance(SimTime dt) {
    if (dt < 0)
        throw std::invalid_argument("cannot advance simulated time backwards");
    clock_ += dt;
}

std::vector<FlipRecord> DramState::tick(SimTime elapsed) {
    if (halted_)
        throw std::runtime_error("memory controller is locked");
    if (elapsed < 0)
        throw std::invalid_argument("tick requires elapsed >= 0");
    const size_t mark = committed_.size();
    clock_ += elapsed;
    process_refreshes_until(clock_);
    return {committed_.begin() + mark, committed_.end()};
}

namespace {

// Stateless per-request core shared by the per-access path and the batched
// hammer path. `bs` carries the bank's combining run and open-row state.
struct StepOutcome {
    AccessKind kind = AccessKind::row_hit;
    bool activation = false;
    bool closed_prev = false; // a row was closed before/by this request
    uint32_t closed_row = 0;
    bool closed_after = false; // closed-page policy closed the row afterwards
};

template <typename BankStateT>
StepOutcome step_request_impl(BankStateT& bs, const ControllerPolicy& p, uint32_t row,
                              SimTime t) {
    StepOutcome out;
    if (p.page_policy == PagePolicy::adaptive && bs.open_row &&
        t - bs.last_access > p.close_timeout_ns) {
        out.closed_prev = true;
        out.closed_row = *bs.open_row;
        bs.open_row.reset();
    }
    const uint32_t w = p.combine_enabled ? std::max(1u, p.combine_window) : 1;
    const bool new_run = !(bs.run_row && *bs.run_row == row && bs.run_len < w);
    if (new_run) {
        bs.run_row = row;
        bs.run_len = 1;
    } else {
        bs.run_len++;
    }
    if (bs.open_row && *bs.open_row == row) {
        out.kind = AccessKind::row_hit;
    } else if (!new_run) {
        // Coalesced with the previous same-row requests; rides their activation.
        out.kind = AccessKind::row_hit;
    } else {
        if (bs.open_row) {
            out.kind = AccessKind::row_conflict;
            out.closed_prev = true;
            out.closed_row = *bs.open_row;
        } else {
            out.kind = AccessKind::row_open;
        }
        out.activation = true;
        bs.open_row = row;
        if (p.page_policy == PagePolicy::closed_page) {
            out.closed_after = true;
            bs.open_row.reset();
        }
    }
    bs.last_access = t;
    return out;
}

} // namespace

AccessResult DramState::access(uint64_t phys_addr) {
    if (halted_)
        throw std::runtime_error("memory controller is locked");
    process_refreshes_until(clock_);
    const DramLocation loc = map_address(phys_addr, geometry_);
    const uint32_t gbank = global_bank(loc, geometry_);
    BankState& bs = banks_[gbank];
    const StepOutcome out = step_request_impl(bs, policy_, loc.row, clock_);
    if (out.closed_prev)
        para_maybe_refresh_neighbors(gbank, out.closed_row);
    if (out.activation)
        note_activation(gbank, loc.row);
    if (out.closed_after)
        para_maybe_refresh_neighbors(gbank, loc.row);
    switch (out.kind) {
        case AccessKind::row_hit: return {out.kind, kRowHitLatency};
        case AccessKind::row_conflict: return {out.kind, kRowConflictLatency};
        default: return {out.kind, kRowOpenLatency};
    }
}

// ---------------------------------------------------------------------------
// Batched hammer path.
//
// The request stream of a hammer loop is periodic per bank, so activations and
// closes are advanced in whole-round blocks using a cycle decomposition of the
// per-request state machine, and refresh events are processed at their exact
// staggered times. For para-off configurations the result is identical to
// issuing every access through access().

namespace {

struct StreamState {
    int64_t run_row = -1;
    uint32_t run_len = 0;
    int64_t open_row = -1;

    bool operator==(const StreamState&) const = default;
};

struct SimBankState {
    std::optional<uint32_t> open_row;
    SimTime last_access = 0;
    std::optional<uint32_t> run_row;
    uint32_t run_len = 0;
};

struct RoundOutcome {
    std::vector<uint8_t> act;          // per pattern entry
    std::vector<uint32_t> closed_rows; // close events during the round
    StreamState end;
};

struct PatternEntry {
    uint32_t row;
    SimTime offset;
};

// Simulates one whole round from a round-boundary state. Gaps between requests
// are pattern constants, so the outcome depends only on `st`.
RoundOutcome simulate_round(const StreamState& st, const std::vector<PatternEntry>& pat,
                            const ControllerPolicy& pol, SimTime period) {
    SimBankState bs;
    if (st.open_row >= 0)
        bs.open_row = static_cast<uint32_t>(st.open_row);
    if (st.run_row >= 0)
        bs.run_row = static_cast<uint32_t>(st.run_row);
    bs.run_len = st.run_len;
    bs.last_access = pat.back().offset - period; // previous round's final request

    RoundOutcome out;
    out.act.resize(pat.size());
    for (size_t j = 0; j < pat.size(); ++j) {
        const StepOutcome so = step_request_impl(bs, pol, pat[j].row, pat[j].offset);
        out.act[j] = so.activation;
        if (so.closed_prev)
            out.closed_rows.push_back(so.closed_row);
        if (so.closed_after)
            out.closed_rows.push_back(pat[j].row);
    }
    out.end.open_row = bs.open_row ? static_cast<int64_t>(*bs.open_row) : -1;
    out.end.run_row = bs.run_row ? static_cast<int64_t>(*bs.run_row) : -1;
    out.end.run_len = bs.run_len;
    return out;
}

struct Chain {
    std::vector<RoundOutcome> rounds;
    size_t cycle_start = 0; // rounds[cycle_start..] repeat forever
};

Chain build_chain(StreamState st, const std::vector<PatternEntry>& pat,
                  const ControllerPolicy& pol, SimTime period) {
    Chain chain;
    std::vector<StreamState> seen;
    seen.push_back(st);
    for (;;) {
        RoundOutcome ro = simulate_round(st, pat, pol, period);
        st = ro.end;
        chain.rounds.push_back(std::move(ro));
        auto it = std::find(seen.begin(), seen.end(), st);
        if (it != seen.end()) {
            chain.cycle_start = static_cast<size_t>(it - seen.begin());
            return chain;
        }
        seen.push_back(st);
    }
}

} // namespace

std::vector<FlipRecord> DramState::hammer_rows(const std::vector<uint64_t>& addresses,
                                               uint64_t rounds, SimTime round_cost_ns,
                                               double activation_scale) {
    if (halted_)
        throw std::runtime_error("memory controller is locked");
    const size_t mark = committed_.size();
    if (addresses.empty() || rounds == 0)
        return {};
    const size_t n = addresses.size();
    const SimTime spacing = std::max<SimTime>(1, round_cost_ns / static_cast<SimTime>(n));
    const SimTime period = spacing * static_cast<SimTime>(n);
    const SimTime t0 = clock_;
    const SimTime t_end = t0 + static_cast<SimTime>(rounds) * period;
    const SimTime last_access_time = t_end - spacing;
    const SimTime w_eff = geometry_.effective_refresh_window();

    activation_scale_ = activation_scale;
    process_refreshes_until(t0);

    // Group requests by bank, preserving intra-round order.
    std::map<uint32_t, std::vector<PatternEntry>> pats;
    for (size_t i = 0; i < n; ++i) {
        const DramLocation loc = map_address(addresses[i], geometry_);
        pats[global_bank(loc, geometry_)].push_back(
            {loc.row, static_cast<SimTime>(i) * spacing});
    }

    struct BankCursor {
        std::vector<PatternEntry> pat;
        uint64_t k = 0; // next round
        size_t j = 0;   // next request within round k
        std::map<uint32_t, uint64_t> closes; // close events since each row's refresh
    };
    std::map<uint32_t, BankCursor> cursors;
    for (auto& [b, pat] : pats)
        cursors[b].pat = std::move(pat);

    // Refresh events of hammered rows that the loop itself would process.
    struct Ev {
        SimTime t;
        uint32_t bank;
        uint32_t row;
        bool operator<(const Ev& o) const {
            return t != o.t ? t < o.t : (bank != o.bank ? bank < o.bank : row < o.row);
        }
    };
    std::vector<Ev> events;
    for (auto& [b, cur] : cursors) {
        std::vector<uint32_t> rows;
        for (auto& pe : cur.pat)
            rows.push_back(pe.row);
        std::sort(rows.begin(), rows.end());
        rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
        for (uint32_t r : rows)
            for (SimTime s = next_refresh_after(r, t0); s <= last_access_time; s += w_eff)
                events.push_back({s, b, r});
    }
    std::sort(events.begin(), events.end());

    // Advances one bank's request stream so that every request strictly before
    // t_limit is accounted for.
    auto touch_entry = [&](uint32_t bank, uint32_t row, uint64_t added, SimTime block_start) {
        if (added == 0)
            return;
        auto [it, created] = ledger_.try_emplace(ledger_key(bank, row));
        if (created || it->second.count == 0)
            it->second.next_refresh = next_refresh_after(row, block_start);
        it->second.count += added;
    };

    auto advance_bank_to = [&](uint32_t bank, SimTime t_limit) {
        BankCursor& cur = cursors[bank];
        BankState& bs = banks_[bank];
        const auto& pat = cur.pat;
        const SimTime off_last = pat.back().offset;
        for (;;) {
            const SimTime round_start = t0 + static_cast<SimTime>(cur.k) * period;
            if (cur.k >= rounds)
                return;
            if (cur.j == 0 && round_start + off_last < t_limit) {
                // Whole rounds fit; count how many, then bulk-advance.
                const uint64_t fit =
                    static_cast<uint64_t>((t_limit - 1 - off_last - t0) / period) + 1;
                const uint64_t m = std::min<uint64_t>(fit - cur.k, rounds - cur.k);
                if (m >= 4) {
                    StreamState st;
                    st.open_row = bs.open_row ? static_cast<int64_t>(*bs.open_row) : -1;
                    st.run_row = bs.run_row ? static_cast<int64_t>(*bs.run_row) : -1;
                    st.run_len = bs.run_len;
                    Chain chain = build_chain(st, pat, policy_, period);
                    const size_t pre = chain.cycle_start;
                    const size_t cyc = chain.rounds.size() - pre;
                    std::map<uint32_t, uint64_t> act_added, close_added;
                    auto add_round = [&](const RoundOutcome& ro, uint64_t times) {
                        for (size_t j = 0; j < pat.size(); ++j)
                            if (ro.act[j])
                                act_added[pat[j].row] += times;
                        for (uint32_t cr : ro.closed_rows)
                            close_added[cr] += times;
                    };
                    uint64_t remaining = m;
                    size_t idx = 0;
                    StreamState end_state = st;
                    while (remaining > 0 && idx < pre) {
                        add_round(chain.rounds[idx], 1);
                        end_state = chain.rounds[idx].end;
                        ++idx;
                        --remaining;
                    }
                    if (remaining > 0) {
                        const uint64_t full_cycles = remaining / cyc;
                        if (full_cycles > 0)
                            for (size_t c = 0; c < cyc; ++c)
                                add_round(chain.rounds[pre + c], full_cycles);
                        uint64_t rem = remaining % cyc;
                        for (size_t c = 0; c < rem; ++c)
                            add_round(chain.rounds[pre + c], 1);
                        const size_t last_idx =
                            rem > 0 ? pre + rem - 1 : (full_cycles > 0 ? pre + cyc - 1 : idx - 1);
                        end_state = chain.rounds[last_idx].end;
                    }
                    for (auto& [row, added] : act_added)
                        touch_entry(bank, row, added, round_start);
                    for (auto& [row, added] : close_added)
                        cur.closes[row] += added;
                    bs.open_row.reset();
                    if (end_state.open_row >= 0)
                        bs.open_row = static_cast<uint32_t>(end_state.open_row);
                    bs.run_row.reset();
                    if (end_state.run_row >= 0)
                        bs.run_row = static_cast<uint32_t>(end_state.run_row);
                    bs.run_len = end_state.run_len;
                    cur.k += m;
                    bs.last_access =
                        t0 + static_cast<SimTime>(cur.k - 1) * period + off_last;
                    continue;
                }
            }
            // Per-request path for partial rounds and short stretches.
            const SimTime t_req = round_start + pat[cur.j].offset;
            if (t_req >= t_limit)
                return;
            const StepOutcome so = step_request_impl(bs, policy_, pat[cur.j].row, t_req);
            if (so.closed_prev)
                cur.closes[so.closed_row]++;
            if (so.activation)
                touch_entry(bank, pat[cur.j].row, 1, t_req);
            if (so.closed_after)
                cur.closes[pat[cur.j].row]++;
            if (++cur.j == pat.size()) {
                cur.j = 0;
                cur.k++;
            }
        }
    };

    auto eval_event = [&](const Ev& ev) {
        auto it = ledger_.find(ledger_key(ev.bank, ev.row));
        BankCursor& cur = cursors[ev.bank];
        if (it != ledger_.end() && it->second.count > 0) {
            LedgerEntry& e = it->second;
            const uint64_t trigger =
                policy_.mac_enabled ? policy_.mac_max_activations
                                    : (policy_.trr_enabled ? policy_.trr_trigger : 0);
            uint64_t exposure = e.count;
            if (trigger > 0)
                exposure = e.count % trigger;
            double exp_low = static_cast<double>(exposure);
            double exp_high = exp_low;
            if (policy_.para_enabled && policy_.para_probability > 0.0) {
                const uint64_t closes = cur.closes[ev.row];
                auto para_fraction = [&](uint64_t nclose) {
                    if (nclose == 0)
                        return 1.0;
                    const double p = policy_.para_probability;
                    const double mean = static_cast<double>(nclose) * p;
                    uint64_t k;
                    if (p >= 1.0) {
                        k = nclose;
                    } else if (mean < 30.0) {
                        // inversion sampling of the thinned event count
                        const double u = rng_.next_double();
                        double cum = std::exp(-mean);
                        double term = cum;
                        k = 0;
                        while (u > cum && k < nclose) {
                            ++k;
                            term *= mean / static_cast<double>(k);
                            cum += term;
                        }
                    } else {
                        const double z = rng_.next_normal();
                        const double val = mean + z * std::sqrt(mean * (1.0 - p));
                        k = static_cast<uint64_t>(std::clamp(
                            val, 0.0, static_cast<double>(nclose)));
                    }
                    if (k == 0)
                        return 1.0;
                    const double u = rng_.next_double();
                    return 1.0 - std::pow(u, 1.0 / static_cast<double>(k));
                };
                exp_low = std::min(exp_low, std::ceil(static_cast<double>(e.count) *
                                                      para_fraction(closes)));
                exp_high = std::min(exp_high, std::ceil(static_cast<double>(e.count) *
                                                        para_fraction(closes)));
            }
            if (ev.row > 0)
                flip_victim_cells(ev.bank, ev.row - 1, exp_low * activation_scale_, ev.t);
            flip_victim_cells(ev.bank, ev.row + 1, exp_high * activation_scale_, ev.t);
            e.count = 0;
            e.clear_low = e.clear_high = 0;
            e.last_trigger = 0;
            ledger_.erase(it);
        }
        cur.closes[ev.row] = 0;
        BankState& bs = banks_[ev.bank];
        if (bs.open_row && *bs.open_row == ev.row) {
            const bool stale = policy_.page_policy == PagePolicy::adaptive &&
                               ev.t - bs.last_access > policy_.close_timeout_ns;
            if (!stale) {
                if (policy_.para_enabled && rng_.next_bool(policy_.para_probability)) {
                    if (ev.row > 0)
                        clear_victim(ev.bank, ev.row - 1);
                    clear_victim(ev.bank, ev.row + 1);
                }
                bs.run_row.reset();
                bs.run_len = 0;
            }
            bs.open_row.reset();
        }
    };

    for (const Ev& ev : events) {
        advance_bank_to(ev.bank, ev.t);
        eval_event(ev);
    }
    for (auto& [b, cur] : cursors)
        advance_bank_to(b, t_end);

    clock_ = t_end;
    return {committed_.begin() + mark, committed_.end()};
}

} // namespace rhsim::dram
