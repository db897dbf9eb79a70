#include "doctest.h"

#include <set>
#include <unordered_set>

#include "rhsim/dram.hpp"

using namespace rhsim;
using namespace rhsim::dram;

namespace {

DramGeometry small_geometry() {
    DramGeometry g;
    g.channels = 1;
    g.ranks = 1;
    g.banks_total = 4;
    g.rows_per_bank = 64;
    g.row_size = 8192;
    g.refresh_window_ns = 3'000'000; // scaled down so tests cover many windows
    return g;
}

CellMapParams test_cells(double density = 0.5, double mu = 8.0, double sigma = 1.0) {
    CellMapParams p;
    p.seed = 99;
    p.density = density;
    p.mu = mu;
    p.sigma = sigma;
    return p;
}

} // namespace

TEST_CASE("address map basics") {
    DramGeometry g; // default 16-ish GiB worth of geometry
    auto loc = map_address(0, g);
    CHECK(loc.channel == 0);
    CHECK(loc.rank == 0);
    CHECK(loc.bank == 0);
    CHECK(loc.row == 0);
    CHECK(loc.column == 0);

    // column bits do not influence (bank, row)
    auto a = map_address(0x123456 & ~uint64_t(g.row_size - 1), g);
    auto b = map_address((0x123456 & ~uint64_t(g.row_size - 1)) | 0x7ff, g);
    CHECK(a.row == b.row);
    CHECK(a.bank == b.bank);
    CHECK(a.channel == b.channel);
    CHECK(a.rank == b.rank);
    CHECK(b.column == 0x7ff);

    CHECK_THROWS_AS(map_address(g.capacity(), g), std::out_of_range);
}

TEST_CASE("address map is bijective over a 1 MiB sweep") {
    DramGeometry g;
    std::unordered_set<uint64_t> seen;
    seen.reserve(1 << 20);
    for (uint64_t addr = 0; addr < (1 << 20); ++addr) {
        auto loc = map_address(addr, g);
        uint64_t key = ((static_cast<uint64_t>(global_bank(loc, g)) * g.rows_per_bank +
                         loc.row) << 13) | loc.column;
        CHECK(seen.insert(key).second);
        CHECK(unmap_location(loc, g) == addr);
    }
    CHECK(seen.size() == (1 << 20));
}

TEST_CASE("unmap inverts map for DDR3-style 32-bank geometry") {
    DramGeometry g;
    g.banks_total = 32;
    g.rows_per_bank = 32768;
    Rng rng = seeded_rng(7);
    for (int i = 0; i < 20000; ++i) {
        uint64_t addr = rng.next_below(g.capacity());
        auto loc = map_address(addr, g);
        CHECK(unmap_location(loc, g) == addr);
    }
}

TEST_CASE("cell map regenerates identically and respects density") {
    DramGeometry g = small_geometry();
    CellMapParams p = test_cells(0.37);

    CellVulnMap m1(p, g);
    CellVulnMap m2(p, g);
    auto c1 = m1.all_cells(2, 10);
    auto c2 = m2.all_cells(2, 10);
    REQUIRE(c1.size() == c2.size());
    for (size_t i = 0; i < c1.size(); ++i) {
        CHECK(c1[i].bit_in_row == c2[i].bit_in_row);
        CHECK(c1[i].threshold == c2[i].threshold);
        CHECK(c1[i].anti == c2[i].anti);
    }

    // density: fraction of finite-threshold cells over many rows
    uint64_t cells = 0, bits = 0;
    std::set<uint32_t> positions;
    for (uint32_t row = 0; row < 40; ++row) {
        auto cs = m1.all_cells(1, row);
        cells += cs.size();
        bits += g.row_bits();
        positions.clear();
        for (auto& c : cs)
            positions.insert(c.bit_in_row);
        CHECK(positions.size() == cs.size()); // positions distinct within a row
        for (size_t i = 1; i < cs.size(); ++i)
            CHECK(cs[i].threshold >= cs[i - 1].threshold);
    }
    double fraction = double(cells) / double(bits);
    CHECK(fraction == doctest::Approx(0.37).epsilon(0.02));
}

TEST_CASE("cells_below prefix is consistent with full enumeration") {
    DramGeometry g = small_geometry();
    CellVulnMap lazy(test_cells(), g);
    CellVulnMap full(test_cells(), g);
    auto all = full.all_cells(0, 5);
    for (double limit : {50.0, 500.0, 5000.0, 1e6}) {
        auto below = lazy.cells_below(0, 5, limit);
        size_t expect = 0;
        while (expect < all.size() && all[expect].threshold <= limit)
            ++expect;
        REQUIRE(below.size() == expect);
        for (size_t i = 0; i < below.size(); ++i)
            CHECK(below[i].bit_in_row == all[i].bit_in_row);
    }
}

TEST_CASE("access latencies and row-buffer behavior") {
    DramGeometry g = small_geometry();
    CellMapParams cells = test_cells(0.0);
    SeededPageContent content(1);

    SUBCASE("open page keeps the row open") {
        ControllerPolicy pol;
        pol.page_policy = PagePolicy::open_page;
        pol.combine_enabled = false;
        DramState st(g, pol, cells, 1, &content);
        uint64_t addr = row_base_address(1, 7, g);
        auto r1 = st.access(addr);
        CHECK(r1.kind == AccessKind::row_open);
        auto r2 = st.access(addr + 64);
        CHECK(r2.kind == AccessKind::row_hit);
        CHECK(r2.latency_ns == 50);
        CHECK(st.activations(1, 7) == 1);

        // conflicting row in the same bank: double latency
        auto r3 = st.access(row_base_address(1, 9, g));
        CHECK(r3.kind == AccessKind::row_conflict);
        CHECK(r3.latency_ns == 100);
        CHECK(r3.latency_ns == 2 * r2.latency_ns);
    }

    SUBCASE("closed page reactivates on every access") {
        ControllerPolicy pol;
        pol.page_policy = PagePolicy::closed_page;
        pol.combine_enabled = false;
        DramState st(g, pol, cells, 1, &content);
        uint64_t addr = row_base_address(0, 3, g);
        st.access(addr);
        st.advance(300);
        st.access(addr);
        CHECK(st.activations(0, 3) == 2);
    }

    SUBCASE("adaptive closes after the timeout") {
        ControllerPolicy pol;
        pol.page_policy = PagePolicy::adaptive;
        pol.close_timeout_ns = 200;
        pol.combine_enabled = false;
        DramState st(g, pol, cells, 1, &content);
        uint64_t addr = row_base_address(0, 3, g);
        st.access(addr);
        st.advance(100); // within timeout: row still open
        CHECK(st.access(addr).kind == AccessKind::row_hit);
        st.advance(300); // beyond timeout: closed, reopens
        CHECK(st.access(addr).kind == AccessKind::row_open);
        CHECK(st.activations(0, 3) == 2);
    }

    SUBCASE("combining merges same-row bursts") {
        ControllerPolicy pol;
        pol.page_policy = PagePolicy::closed_page;
        pol.combine_enabled = true;
        pol.combine_window = 10;
        DramState st(g, pol, cells, 1, &content);
        uint64_t addr = row_base_address(0, 3, g);
        for (int i = 0; i < 10; ++i) {
            st.access(addr);
            st.advance(300);
        }
        CHECK(st.activations(0, 3) == 1);

        // window of 1 behaves like combining off
        ControllerPolicy pol1 = pol;
        pol1.combine_window = 1;
        DramState st1(g, pol1, cells, 1, &content);
        for (int i = 0; i < 10; ++i) {
            st1.access(addr);
            st1.advance(300);
        }
        CHECK(st1.activations(0, 3) == 10);
    }
}

TEST_CASE("tick commits flips per threshold and orientation") {
    DramGeometry g = small_geometry();
    ControllerPolicy pol;
    pol.page_policy = PagePolicy::closed_page;
    pol.combine_enabled = false;
    CellMapParams cells = test_cells(0.6, 5.0, 0.8); // low thresholds
    SeededPageContent content(5);
    DramState st(g, pol, cells, 2, &content);

    SUBCASE("zero activations, no flips") {
        auto flips = st.tick(g.refresh_window_ns * 2);
        CHECK(flips.empty());
    }

    SUBCASE("hammering one row flips matching vulnerable neighbors") {
        const uint32_t bank = 2, row = 20;
        uint64_t addr = row_base_address(bank, row, g);
        for (int i = 0; i < 4000; ++i) {
            st.access(addr);
            st.advance(300);
        }
        auto flips = st.tick(g.refresh_window_ns * 2);
        REQUIRE(!flips.empty());
        uint64_t acts_per_window = 0; // reconstruct a bound: every access activated
        (void)acts_per_window;
        for (auto& f : flips) {
            CHECK(f.bank == bank);
            CHECK((f.row == row - 1 || f.row == row + 1));
            // orientation respected: committed value differs from source
            bool now = content.read_bit(f.frame, f.bit_offset);
            CHECK(now == f.zero_to_one); // anti cells end at 1, true cells at 0
        }

        // a second identical hammer run on a fresh state yields identical flips
        SeededPageContent content2(5);
        DramState st2(g, pol, cells, 2, &content2);
        for (int i = 0; i < 4000; ++i) {
            st2.access(addr);
            st2.advance(300);
        }
        auto flips2 = st2.tick(g.refresh_window_ns * 2);
        REQUIRE(flips2.size() == flips.size());
        for (size_t i = 0; i < flips.size(); ++i)
            CHECK(flips[i] == flips2[i]);
    }
}

TEST_CASE("infinite-threshold cells never flip") {
    DramGeometry g = small_geometry();
    ControllerPolicy pol;
    pol.page_policy = PagePolicy::closed_page;
    pol.combine_enabled = false;
    CellMapParams cells = test_cells(0.0); // no vulnerable cells at all
    SeededPageContent content(5);
    DramState st(g, pol, cells, 2, &content);
    uint64_t addr = row_base_address(0, 8, g);
    for (int i = 0; i < 50000; ++i) {
        st.access(addr);
        st.advance(300);
    }
    auto flips = st.tick(g.refresh_window_ns * 4);
    CHECK(flips.empty());
}

TEST_CASE("one open row per bank at any instant") {
    DramGeometry g = small_geometry();
    ControllerPolicy pol;
    pol.page_policy = PagePolicy::open_page;
    pol.combine_enabled = false;
    SeededPageContent content(1);
    DramState st(g, pol, test_cells(0.0), 3, &content);
    // interleave rows within one bank; every switch must be a conflict,
    // which is only possible if at most one row is open
    uint64_t a = row_base_address(3, 10, g);
    uint64_t b = row_base_address(3, 12, g);
    st.access(a);
    for (int i = 0; i < 100; ++i) {
        auto r = st.access(i % 2 ? a : b);
        CHECK(r.kind == AccessKind::row_conflict);
        st.advance(300);
    }
}

TEST_CASE("open-page single-address trace: one activation per refresh window") {
    DramGeometry g = small_geometry();
    ControllerPolicy pol;
    pol.page_policy = PagePolicy::open_page;
    pol.combine_enabled = false;
    SeededPageContent content(1);
    DramState st(g, pol, test_cells(0.0), 3, &content);
    const uint32_t bank = 1, row = 30;
    uint64_t addr = row_base_address(bank, row, g);
    // run for ~5 refresh windows, counting activations via a shadow counter:
    // each row_open result is one activation
    uint64_t activations = 0;
    SimTime horizon = 5 * g.refresh_window_ns;
    while (st.now() < horizon) {
        auto r = st.access(addr);
        if (r.kind == AccessKind::row_open)
            ++activations;
        st.advance(300);
    }
    // first activation plus one re-open per refresh of that row
    CHECK(activations >= 4);
    CHECK(activations <= 6);
}

TEST_CASE("PARA p=1 prevents all flips, p=0 equals para off") {
    DramGeometry g = small_geometry();
    CellMapParams cells = test_cells(0.6, 5.0, 0.8);

    auto run = [&](bool para, double p) {
        ControllerPolicy pol;
        pol.page_policy = PagePolicy::closed_page;
        pol.combine_enabled = false;
        pol.para_enabled = para;
        pol.para_probability = p;
        SeededPageContent content(5);
        DramState st(g, pol, cells, 2, &content);
        uint64_t addr = row_base_address(2, 20, g);
        for (int i = 0; i < 4000; ++i) {
            st.access(addr);
            st.advance(300);
        }
        st.tick(g.refresh_window_ns * 2);
        return st.committed_flips();
    };

    auto off = run(false, 0.0);
    auto p0 = run(true, 0.0);
    auto p1 = run(true, 1.0);
    CHECK(!off.empty());
    CHECK(p0.size() == off.size());
    CHECK(p1.empty());
}

TEST_CASE("batched hammer path equals the per-access path") {
    DramGeometry g = small_geometry();
    CellMapParams cells = test_cells(0.6, 6.5, 1.0);

    auto run_per_access = [&](const ControllerPolicy& pol, std::vector<uint64_t> addrs,
                              uint64_t rounds, SimTime round_cost) {
        SeededPageContent content(5);
        DramState st(g, pol, cells, 2, &content);
        SimTime spacing = std::max<SimTime>(1, round_cost / SimTime(addrs.size()));
        for (uint64_t r = 0; r < rounds; ++r)
            for (uint64_t a : addrs) {
                st.access(a);
                st.advance(spacing);
            }
        st.tick(g.effective_refresh_window());
        return st.committed_flips();
    };
    auto run_batched = [&](const ControllerPolicy& pol, std::vector<uint64_t> addrs,
                           uint64_t rounds, SimTime round_cost) {
        SeededPageContent content(5);
        DramState st(g, pol, cells, 2, &content);
        st.hammer_rows(addrs, rounds, round_cost, 1.0);
        st.tick(g.effective_refresh_window());
        return st.committed_flips();
    };

    auto check_equal = [&](const ControllerPolicy& pol, std::vector<uint64_t> addrs,
                           uint64_t rounds, SimTime round_cost) {
        auto a = run_per_access(pol, addrs, rounds, round_cost);
        auto b = run_batched(pol, addrs, rounds, round_cost);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i)
            CHECK(a[i] == b[i]);
        return a.size();
    };

    uint64_t one = row_base_address(2, 20, g);
    uint64_t ds1 = row_base_address(1, 30, g);
    uint64_t ds2 = row_base_address(1, 32, g);
    std::vector<uint64_t> multi = {row_base_address(0, 5, g), row_base_address(1, 9, g),
                                   row_base_address(2, 47, g), row_base_address(3, 33, g),
                                   row_base_address(0, 21, g)};

    size_t total = 0;
    for (PagePolicy pp : {PagePolicy::closed_page, PagePolicy::adaptive, PagePolicy::open_page}) {
        for (bool combine : {false, true}) {
            ControllerPolicy pol;
            pol.page_policy = pp;
            pol.combine_enabled = combine;
            pol.combine_window = 4;
            total += check_equal(pol, {one}, 60000, 300);
            total += check_equal(pol, {ds1, ds2}, 60000, 300);
            total += check_equal(pol, multi, 24000, 300);
        }
    }
    // MAC with a single aggressor
    ControllerPolicy mac;
    mac.page_policy = PagePolicy::closed_page;
    mac.combine_enabled = false;
    mac.mac_enabled = true;
    mac.mac_max_activations = 1500;
    total += check_equal(mac, {one}, 60000, 300);

    // double refresh rate
    DramGeometry gd = g;
    gd.refresh_mode = RefreshMode::double_rate;
    CHECK(gd.effective_refresh_window() == g.refresh_window_ns / 2);

    CHECK(total > 0); // the comparison exercised real flips
}

TEST_CASE("double refresh yields a subset of normal-mode flips") {
    DramGeometry g = small_geometry();
    CellMapParams cells = test_cells(0.6, 6.0, 1.2);
    auto run = [&](RefreshMode mode) {
        DramGeometry gg = g;
        gg.refresh_mode = mode;
        ControllerPolicy pol;
        pol.page_policy = PagePolicy::closed_page;
        pol.combine_enabled = false;
        SeededPageContent content(5);
        DramState st(gg, pol, cells, 2, &content);
        st.hammer_rows({row_base_address(2, 20, g)}, 60000, 300, 1.0);
        st.tick(g.refresh_window_ns);
        return st.committed_flips();
    };
    auto normal = run(RefreshMode::normal);
    auto dbl = run(RefreshMode::double_rate);
    CHECK(dbl.size() <= normal.size());
    // every flip under double refresh also happens under normal refresh
    std::set<std::pair<uint64_t, uint32_t>> normal_set;
    for (auto& f : normal)
        normal_set.insert({f.frame, f.bit_offset});
    for (auto& f : dbl)
        CHECK(normal_set.count({f.frame, f.bit_offset}) == 1);
}

TEST_CASE("halted state rejects memory operations") {
    DramGeometry g = small_geometry();
    ControllerPolicy pol;
    SeededPageContent content(1);
    DramState st(g, pol, test_cells(0.0), 3, &content);
    st.halt();
    CHECK_THROWS_AS(st.access(0), std::runtime_error);
    CHECK_THROWS_AS(st.tick(100), std::runtime_error);
    CHECK_THROWS_AS(st.hammer_rows({0}, 10, 300, 1.0), std::runtime_error);
}
