#include <doctest.h>

#include <random>
#include <set>

#include "bwm/dataset.hpp"
#include "helpers.hpp"

using namespace bwm;
using namespace bwm::data;

TEST_SUITE_BEGIN("data");

TEST_CASE("soh_of divides by the cycle-2 reference") {
    auto cell = testutil::make_test_cell("c", 1, 3);
    cell.reference_capacity = 1.1;
    cell.cycles[0].discharge_capacity = 1.1;
    cell.cycles[1].discharge_capacity = 0.99;
    cell.cycles[2].discharge_capacity = 1.155;
    CHECK(soh_of(cell.cycles[0], cell) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(soh_of(cell.cycles[1], cell) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(soh_of(cell.cycles[2], cell) == doctest::Approx(1.05).epsilon(1e-12));
}

TEST_CASE("classify_stage bands with inclusive healthier floor") {
    CHECK(classify_stage(0.97) == AgingStage::Stage1);
    CHECK(classify_stage(0.93) == AgingStage::Stage2);
    CHECK(classify_stage(0.95) == AgingStage::Stage1);
    CHECK(classify_stage(0.90) == AgingStage::Stage2);
    CHECK(classify_stage(0.85) == AgingStage::Stage3);
    CHECK(classify_stage(0.80) == AgingStage::Stage4);
}

TEST_CASE("classify_stage agrees with a brute-force range table on 10k draws") {
    // Independent oracle: explicit interval list probed linearly.
    struct Range { double lo, hi; AgingStage s; };
    const Range table[] = {{0.95, 1e9, AgingStage::Stage1},
                           {0.90, 0.95, AgingStage::Stage2},
                           {0.85, 0.90, AgingStage::Stage3},
                           {-1e9, 0.85, AgingStage::Stage4}};
    std::mt19937_64 rng(123);
    for (int i = 0; i < 10000; ++i) {
        const double soh = 0.5 + 0.7 * static_cast<double>(rng() >> 11) * 0x1.0p-53;
        AgingStage expected = AgingStage::Stage4;
        for (const auto& r : table)
            if (soh >= r.lo && soh < r.hi) { expected = r.s; break; }
        CHECK(classify_stage(soh) == expected);
    }
}

TEST_CASE("canonicalize_series pads, truncates, preserves") {
    std::vector<float> v(1200, 1.0f), c(1200, -1.0f), t(1200, 30.0f);
    SUBCASE("truncation keeps the first 1000") {
        v[999] = 42.0f;
        auto s = canonicalize_series(v, c, t, 1000);
        CHECK(s.padded_size() == 1000);
        CHECK(s.length == 1000);
        CHECK(s.voltage[999] == 42.0f);
    }
    SUBCASE("padding zero-fills and records the true count") {
        v.resize(700); c.resize(700); t.resize(700);
        auto s = canonicalize_series(v, c, t, 1000);
        CHECK(s.length == 700);
        CHECK(s.voltage[699] == 1.0f);
        CHECK(s.voltage[700] == 0.0f);
        CHECK(s.current[999] == 0.0f);
    }
    SUBCASE("exact length is unchanged") {
        v.resize(1000); c.resize(1000); t.resize(1000);
        auto s = canonicalize_series(v, c, t, 1000);
        CHECK(s.length == 1000);
        CHECK(s.voltage[0] == 1.0f);
    }
    SUBCASE("empty series rejected") {
        std::vector<float> e;
        CHECK_THROWS_AS(canonicalize_series(e, e, e, 1000), ConfigError);
    }
}

TEST_CASE("build_windows count formula") {
    SUBCASE("N=169 W=30 H=80 -> 59") {
        auto cell = testutil::make_test_cell("c", 1, 169);
        CHECK(build_windows(cell, 30, 80).size() == 59);
    }
    SUBCASE("N=110 -> 0") {
        auto cell = testutil::make_test_cell("c", 1, 110);
        CHECK(build_windows(cell, 30, 80).empty());
    }
    SUBCASE("N=111 -> 1") {
        auto cell = testutil::make_test_cell("c", 1, 111);
        auto ws = build_windows(cell, 30, 80);
        REQUIRE(ws.size() == 1);
        CHECK(ws[0].anchor == 31);
    }
}

TEST_CASE("build_windows property: count is max(0, N-W-H); targets are real cycles") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        const int w = 1 + static_cast<int>(rng() % 8);
        const int h = 1 + static_cast<int>(rng() % 8);
        const int n = 1 + static_cast<int>(rng() % 40);
        auto cell = testutil::make_test_cell("c", 1, n, 8);
        auto ws = build_windows(cell, w, h);
        CHECK(static_cast<int>(ws.size()) == std::max(0, n - w - h));
        for (const auto& win : ws) {
            auto fut = win.soh_future();
            REQUIRE(static_cast<int>(fut.size()) == h);
            for (int k = 1; k <= h; ++k)
                CHECK(fut[static_cast<size_t>(k - 1)] ==
                      doctest::Approx(
                          soh_of(cell.cycles[static_cast<size_t>(win.anchor - 1 + k)], cell))
                          .epsilon(1e-15));
        }
    }
}

TEST_CASE("stratified_split exact sizes, disjoint, deterministic") {
    std::vector<CellRecord> cells;
    std::mt19937_64 rng(5);
    for (int i = 0; i < 138; ++i) {
        const int n = 120 + static_cast<int>(rng() % 300);
        const double fade = (0.05 + 0.25 * static_cast<double>(rng() >> 11) * 0x1.0p-53) / n;
        char id[16];
        std::snprintf(id, sizeof(id), "c%03d", i);
        cells.push_back(testutil::make_test_cell(id, i % 3 + 1, n, 8, 1.1, fade));
    }
    auto split = stratified_split(cells, 110, 14, 14, 7);
    CHECK(split.train.size() == 110);
    CHECK(split.val.size() == 14);
    CHECK(split.test.size() == 14);
    std::set<std::string> all;
    for (const auto& v : {split.train, split.val, split.test}) all.insert(v.begin(), v.end());
    CHECK(all.size() == 138);

    auto again = stratified_split(cells, 110, 14, 14, 7);
    CHECK(split.train == again.train);
    CHECK(split.val == again.val);
    CHECK(split.test == again.test);

    CHECK_THROWS_AS(stratified_split(cells, 110, 14, 13, 7), ConfigError);
}

TEST_CASE("stratified_split spreads depth buckets across partitions") {
    // Min SOH 0.80 / 0.90 / 0.95 with sizes (1,1,1): each partition draws
    // from a distinct depth bucket.
    std::vector<CellRecord> cells;
    cells.push_back(testutil::make_test_cell("deep", 1, 100, 8, 1.1, 0.20 / 100));
    cells.push_back(testutil::make_test_cell("mid", 2, 100, 8, 1.1, 0.10 / 100));
    cells.push_back(testutil::make_test_cell("shallow", 3, 100, 8, 1.1, 0.05 / 100));
    auto split = stratified_split(cells, 1, 1, 1, 3);
    CHECK(split.train.size() == 1);
    CHECK(split.val.size() == 1);
    CHECK(split.test.size() == 1);
    std::set<std::string> all{split.train[0], split.val[0], split.test[0]};
    CHECK(all.size() == 3);
}

TEST_CASE("inverse_frequency_weights balances stage totals") {
    auto add_cells_at_soh = [](std::vector<CellRecord>& store, double soh, int copies) {
        for (int i = 0; i < copies; ++i) {
            auto cell = testutil::make_test_cell("w" + std::to_string(store.size()), 1, 3, 8);
            cell.cycles[1].discharge_capacity = cell.reference_capacity * soh;
            store.push_back(std::move(cell));
        }
    };
    std::vector<CellRecord> store;
    store.reserve(100);
    add_cells_at_soh(store, 0.97, 83); // Stage1
    add_cells_at_soh(store, 0.93, 11); // Stage2
    add_cells_at_soh(store, 0.87, 6);  // Stage3
    std::vector<Window> windows;
    for (auto& c : store) windows.push_back(Window{&c, 2, 1, 1});

    auto weights = inverse_frequency_weights(windows);
    double s1 = 0, s2 = 0, s3 = 0, total = 0;
    for (size_t i = 0; i < windows.size(); ++i) {
        CHECK(weights[i] > 0.0);
        total += weights[i];
        const auto stage = classify_stage(windows[i].soh_now());
        if (stage == AgingStage::Stage1) s1 += weights[i];
        if (stage == AgingStage::Stage2) s2 += weights[i];
        if (stage == AgingStage::Stage3) s3 += weights[i];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s1 == doctest::Approx(1.0 / 3).epsilon(1e-9));
    CHECK(s2 == doctest::Approx(1.0 / 3).epsilon(1e-9));
    CHECK(s3 == doctest::Approx(1.0 / 3).epsilon(1e-9));
}

TEST_CASE("inverse_frequency_weights degenerate cases") {
    std::vector<CellRecord> store;
    for (int i = 0; i < 3; ++i)
        store.push_back(testutil::make_test_cell("u" + std::to_string(i), 1, 3, 8));
    std::vector<Window> windows;
    for (auto& c : store) windows.push_back(Window{&c, 2, 1, 1});
    auto weights = inverse_frequency_weights(windows); // all Stage1
    for (double w : weights) CHECK(w == doctest::Approx(1.0 / 3).epsilon(1e-12));

    // counts {S1: 2, S2: 1} -> the S2 window weighs twice each S1 window
    store[2].cycles[1].discharge_capacity = store[2].reference_capacity * 0.93;
    windows.clear();
    for (auto& c : store) windows.push_back(Window{&c, 2, 1, 1});
    weights = inverse_frequency_weights(windows);
    CHECK(weights[2] == doctest::Approx(2.0 * weights[0]).epsilon(1e-12));
    CHECK(weights[0] == doctest::Approx(weights[1]).epsilon(1e-12));
}

namespace {

std::string series_header() { return "cycle\tt\tvoltage\tcurrent\ttemperature\n"; }

std::string series_rows(int cycle, int len, double v0 = 3.3) {
    std::string out;
    for (int t = 0; t < len; ++t) {
        const bool charging = t < len / 3;
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%d\t%d\t%.6g\t%.6g\t%.6g\n", cycle, t, v0 - 0.001 * t,
                      charging ? 4.0 : -4.0, 30.0);
        out += buf;
    }
    return out;
}

} // namespace

TEST_CASE("load_dataset drops cycle 1 and sets the reference capacity") {
    testutil::TempDir dir("load");
    std::string series = series_header();
    std::string summary = "cycle\tdischarge_capacity\tinternal_resistance\n";
    for (int cyc = 1; cyc <= 200; ++cyc) {
        series += series_rows(cyc, 12);
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%d\t%.9g\t%.9g\n", cyc, cyc == 2 ? 1.1 : 1.1 - 1e-4 * cyc,
                      0.016);
        summary += buf;
    }
    testutil::write_file(dir.path() / "cellA.series", series);
    testutil::write_file(dir.path() / "cellA.summary", summary);
    testutil::write_file(dir.path() / "manifest.tsv",
                         "cell_id\tbatch_id\tfile\ncellA\t1\tcellA.series\n");

    LoadOptions opts;
    opts.t_max = 16;
    auto result = load_dataset(dir.path(), opts);
    REQUIRE(result.cells.size() == 1);
    const auto& cell = result.cells[0];
    CHECK(cell.retained_count() == 199);
    CHECK(cell.cycles.front().cycle_index == 2);
    CHECK(cell.reference_capacity == doctest::Approx(1.1).epsilon(1e-12));
    CHECK(cell.cycles[0].series.length == 12);
    CHECK(cell.cycles[0].mean_charge_current == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("load_dataset rejects malformed cells with diagnostics") {
    testutil::TempDir dir("reject");
    testutil::write_file(dir.path() / "good.series", series_header() + series_rows(2, 12));
    testutil::write_file(dir.path() / "good.summary",
                         "cycle\tdischarge_capacity\tinternal_resistance\n2\t1.1\t0.016\n");
    // missing column in the header
    testutil::write_file(dir.path() / "badcols.series", "cycle\tt\tvoltage\tcurrent\n2\t0\t3.3\t-4\n");
    testutil::write_file(dir.path() / "badcols.summary",
                         "cycle\tdischarge_capacity\tinternal_resistance\n2\t1.1\t0.016\n");
    // non-monotone cycle indices
    testutil::write_file(dir.path() / "order.series", series_header() + series_rows(2, 12) +
                                                          series_rows(5, 12) + series_rows(3, 12));
    testutil::write_file(
        dir.path() / "order.summary",
        "cycle\tdischarge_capacity\tinternal_resistance\n2\t1.1\t0.016\n5\t1.09\t0.016\n3\t1.08\t0.016\n");
    // non-positive capacity
    testutil::write_file(dir.path() / "cap.series", series_header() + series_rows(2, 12));
    testutil::write_file(dir.path() / "cap.summary",
                         "cycle\tdischarge_capacity\tinternal_resistance\n2\t0\t0.016\n");
    testutil::write_file(dir.path() / "manifest.tsv",
                         "cell_id\tbatch_id\tfile\n"
                         "good\t1\tgood.series\n"
                         "badcols\t1\tbadcols.series\n"
                         "order\t2\torder.series\n"
                         "cap\t3\tcap.series\n");

    LoadOptions opts;
    opts.t_max = 16;
    auto result = load_dataset(dir.path(), opts);
    CHECK(result.cells.size() == 1);
    CHECK(result.cells[0].cell_id == "good");
    REQUIRE(result.rejected.size() == 3);
    for (const auto& rej : result.rejected) {
        CHECK(!rej.cell_id.empty());
        CHECK(!rej.reason.empty());
    }
}

TEST_CASE("load_dataset honours the exclusion list and empty directories") {
    testutil::TempDir dir("excl");
    SUBCASE("empty directory -> empty list") {
        auto result = load_dataset(dir.path());
        CHECK(result.cells.empty());
        CHECK(result.rejected.empty());
    }
    SUBCASE("excluded cells are skipped") {
        testutil::write_file(dir.path() / "a.series", series_header() + series_rows(2, 12));
        testutil::write_file(dir.path() / "a.summary",
                             "cycle\tdischarge_capacity\tinternal_resistance\n2\t1.1\t0.016\n");
        testutil::write_file(dir.path() / "manifest.tsv", "cell_id\tbatch_id\tfile\na\t1\ta.series\n");
        testutil::write_file(dir.path() / "exclude.txt", "a\n");
        LoadOptions opts;
        opts.t_max = 16;
        auto result = load_dataset(dir.path(), opts);
        CHECK(result.cells.empty());
        REQUIRE(result.excluded.size() == 1);
        CHECK(result.excluded[0] == "a");
    }
}

TEST_SUITE_END();
