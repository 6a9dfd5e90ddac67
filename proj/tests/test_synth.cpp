#include <doctest.h>

#include <cmath>
#include <set>

#include "bwm/dataset.hpp"
#include "bwm/loss.hpp"
#include "bwm/synth.hpp"
#include "helpers.hpp"

using namespace bwm;
using namespace bwm::synth;

TEST_SUITE_BEGIN("synth");

namespace {

SynthCellParams clean_params() {
    SynthCellParams p;
    p.lifetime_cycles = 150;
    p.knee_fraction = 0.9;
    p.base_fade_rate = 1e-3;
    p.knee_fade_rate = 3e-3;
    p.noise_sd = 0.0;
    p.base_timesteps = 64;
    p.seed = 11;
    return p;
}

} // namespace

TEST_CASE("resistance follows the SPM law exactly on clean cells") {
    auto cell = generate_cell(clean_params());
    // SOH at retained position 101 is 1 - 0.001*100 = 0.9 (pre-knee).
    const auto& cyc = cell.cycles[100];
    const double soh = data::soh_of(cyc, cell);
    CHECK(soh == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(cyc.internal_resistance / cell.initial_resistance ==
          doctest::Approx(std::pow(1.0 / 0.9, 0.75)).epsilon(1e-12));
    CHECK(cyc.internal_resistance / cell.initial_resistance == doctest::Approx(1.0822).epsilon(1e-4));

    // Round trip through the SPM inversion recovers SOH at every cycle.
    for (const auto& c : cell.cycles) {
        const double s = data::soh_of(c, cell);
        const double s_ir = loss::soh_from_resistance(c.internal_resistance,
                                                      cell.initial_resistance, 0.75);
        CHECK(std::abs(s_ir - s) < 1e-9);
    }
}

TEST_CASE("clean cells are nonincreasing in SOH and discharge duration") {
    auto cell = generate_cell(clean_params());
    for (size_t j = 1; j < cell.cycles.size(); ++j) {
        CHECK(cell.cycles[j].discharge_capacity <= cell.cycles[j - 1].discharge_capacity);
        CHECK(cell.cycles[j].series.length <= cell.cycles[j - 1].series.length);
    }
}

TEST_CASE("fade accelerates after the knee") {
    auto p = clean_params();
    p.lifetime_cycles = 300;
    p.knee_fraction = 0.7; // knee at cycle 210
    p.base_fade_rate = 4e-4;
    p.knee_fade_rate = 2e-3;
    auto cell = generate_cell(p);
    auto soh_at = [&](int j) { return data::soh_of(cell.cycles[static_cast<size_t>(j)], cell); };
    const double pre_slope = soh_at(100) - soh_at(101);
    const double post_slope = soh_at(250) - soh_at(251);
    CHECK(post_slope > pre_slope);
    CHECK(pre_slope == doctest::Approx(4e-4).epsilon(1e-6));
    CHECK(post_slope == doctest::Approx(2e-3).epsilon(1e-6));
}

TEST_CASE("generate_cell validates parameter invariants") {
    auto p = clean_params();
    p.knee_fade_rate = p.base_fade_rate; // not strictly larger
    CHECK_THROWS_AS(generate_cell(p), ConfigError);
    p = clean_params();
    p.knee_fraction = 1.0;
    CHECK_THROWS_AS(generate_cell(p), ConfigError);
    p = clean_params();
    p.gamma = 0.0;
    CHECK_THROWS_AS(generate_cell(p), ConfigError);
}

TEST_CASE("fleets are deterministic and span all three batches") {
    FleetParams fp;
    fp.n_cells = 30;
    fp.base_timesteps = 48;
    fp.lifetime_range = {120, 200};
    fp.seed = 7;
    auto a = generate_fleet(fp);
    auto b = generate_fleet(fp);
    REQUIRE(a.size() == 30);
    std::set<int> batches;
    for (size_t i = 0; i < a.size(); ++i) {
        batches.insert(a[i].batch_id);
        CHECK(a[i].cell_id == b[i].cell_id);
        REQUIRE(a[i].retained_count() == b[i].retained_count());
        CHECK(a[i].cycles.back().discharge_capacity == b[i].cycles.back().discharge_capacity);
        CHECK(a[i].cycles.back().internal_resistance == b[i].cycles.back().internal_resistance);
        CHECK(a[i].cycles.back().series.voltage == b[i].cycles.back().series.voltage);
    }
    CHECK(batches == std::set<int>{1, 2, 3});
}

TEST_CASE("short cells survive ingestion with zero windows") {
    FleetParams fp;
    fp.n_cells = 6;
    fp.base_timesteps = 48;
    fp.lifetime_range = {80, 130}; // below W+H+1 = 111 is possible
    fp.seed = 3;
    auto fleet = generate_fleet(fp);
    bool any_short = false;
    for (const auto& c : fleet) any_short = any_short || c.retained_count() < 111;
    CHECK(any_short);

    testutil::TempDir dir("short");
    data::export_fleet(fleet, dir.path());
    data::LoadOptions opts;
    opts.t_max = 48;
    auto loaded = data::load_dataset(dir.path(), opts);
    CHECK(loaded.rejected.empty());
    REQUIRE(loaded.cells.size() == fleet.size());
    for (const auto& c : loaded.cells)
        if (c.retained_count() < 111) CHECK(data::build_windows(c, 30, 80).empty());
}

TEST_CASE("export and ingestion round-trip a fleet") {
    FleetParams fp;
    fp.n_cells = 3;
    fp.base_timesteps = 40;
    fp.lifetime_range = {60, 90};
    fp.noise_sd = 0.003;
    fp.seed = 21;
    auto fleet = generate_fleet(fp);

    testutil::TempDir dir("roundtrip");
    data::export_fleet(fleet, dir.path());
    data::LoadOptions opts;
    opts.t_max = 40;
    auto loaded = data::load_dataset(dir.path(), opts);
    REQUIRE(loaded.cells.size() == fleet.size());

    // load_dataset sorts by cell_id; map back for comparison
    for (const auto& orig : fleet) {
        const auto* got = data::find_cell(loaded.cells, orig.cell_id);
        REQUIRE(got != nullptr);
        CHECK(got->batch_id == orig.batch_id);
        REQUIRE(got->retained_count() == orig.retained_count());
        CHECK(got->reference_capacity == doctest::Approx(orig.reference_capacity).epsilon(1e-15));
        for (int j = 0; j < orig.retained_count(); ++j) {
            const auto& a = orig.cycles[static_cast<size_t>(j)];
            const auto& b = got->cycles[static_cast<size_t>(j)];
            CHECK(a.cycle_index == b.cycle_index);
            CHECK(a.discharge_capacity == b.discharge_capacity); // %.17g exact
            CHECK(a.internal_resistance == b.internal_resistance);
            REQUIRE(a.series.length == b.series.length);
            CHECK(a.series.voltage == b.series.voltage); // %.9g float exact
            CHECK(a.series.current == b.series.current);
            CHECK(a.mean_charge_current == doctest::Approx(b.mean_charge_current).epsilon(1e-12));
        }
    }
}

TEST_CASE("synth export is byte-deterministic") {
    FleetParams fp;
    fp.n_cells = 2;
    fp.base_timesteps = 32;
    fp.lifetime_range = {50, 70};
    fp.seed = 9;
    testutil::TempDir d1("det1"), d2("det2");
    data::export_fleet(generate_fleet(fp), d1.path());
    data::export_fleet(generate_fleet(fp), d2.path());
    for (const auto& entry : std::filesystem::directory_iterator(d1.path())) {
        const auto name = entry.path().filename();
        CHECK(testutil::read_file(entry.path()) == testutil::read_file(d2.path() / name));
    }
}

TEST_SUITE_END();
