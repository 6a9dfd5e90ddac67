#include <doctest.h>

#include <cmath>

#include "bwm/dataset.hpp"
#include "bwm/synth.hpp"
#include "bwm/train.hpp"
#include "helpers.hpp"

using namespace bwm;
using namespace bwm::train;

TEST_SUITE_BEGIN("train");

namespace {

net::NetConfig tiny_net() {
    net::NetConfig c;
    c.d = 16;
    c.w = 6;
    c.horizon = 4;
    c.patch_len = 3;
    c.patch_stride = 3;
    c.layers = 1;
    c.heads = 2;
    c.ff_width = 32;
    c.t_max = 32;
    c.conv_channels = {4, 6, 8};
    c.conv_kernels = {3, 3, 3};
    c.transition_hidden = 16;
    c.head_hidden = 16;
    c.lstm_hidden = 8;
    return c;
}

std::vector<data::CellRecord> tiny_fleet(int n_cells, int lifetime, uint64_t seed) {
    synth::FleetParams fp;
    fp.n_cells = n_cells;
    fp.base_timesteps = 32;
    fp.lifetime_range = {lifetime, lifetime};
    fp.eol_soh_range = {0.82, 0.9};
    fp.noise_sd = 0.004;
    fp.seed = seed;
    return synth::generate_fleet(fp);
}

data::SplitAssignment manual_split(const std::vector<data::CellRecord>& cells, size_t n_train,
                                   size_t n_val) {
    data::SplitAssignment s;
    for (size_t i = 0; i < cells.size(); ++i) {
        if (i < n_train) s.train.push_back(cells[i].cell_id);
        else if (i < n_train + n_val) s.val.push_back(cells[i].cell_id);
        else s.test.push_back(cells[i].cell_id);
    }
    return s;
}

} // namespace

TEST_CASE("clip_gradients scales only above the threshold") {
    SUBCASE("below the cap: untouched") {
        auto g = torch::tensor(std::vector<double>{0.3, 0.4}, torch::kFloat64); // norm 0.5
        auto orig = g.clone();
        CHECK(clip_gradients({g}, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(torch::equal(g, orig));
    }
    SUBCASE("above the cap: rescaled to the cap within 1e-9") {
        auto a = torch::tensor(std::vector<double>{1.2, 0.9}, torch::kFloat64);
        auto b = torch::tensor(std::vector<double>{0.8, 0.6, 0.557117692790261}, torch::kFloat64);
        const double pre = clip_gradients({a, b}, 1.0);
        CHECK(pre > 1.0);
        const double post = std::sqrt(a.square().sum().item<double>() +
                                      b.square().sum().item<double>());
        CHECK(std::abs(post - 1.0) < 1e-9);
        // direction preserved
        CHECK(a[0].item<double>() / a[1].item<double>() == doctest::Approx(1.2 / 0.9).epsilon(1e-12));
    }
    SUBCASE("norm exactly 2 halves every entry") {
        auto g = torch::tensor(std::vector<double>{2.0}, torch::kFloat64);
        clip_gradients({g}, 1.0);
        CHECK(g[0].item<double>() == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("zero gradients unchanged") {
        auto g = torch::zeros({4}, torch::kFloat64);
        CHECK(clip_gradients({g}, 1.0) == 0.0);
        CHECK(g.abs().max().item<double>() == 0.0);
    }
}

TEST_CASE("early_stop_check counts epochs since the best value") {
    CHECK(!early_stop_check({0.02, 0.019, 0.018}, 15));
    {
        // best at epoch 3, now epoch 18 -> stop
        std::vector<double> curve{0.03, 0.02, 0.01};
        for (int e = 4; e <= 18; ++e) curve.push_back(0.011);
        CHECK(curve.size() == 18);
        CHECK(early_stop_check(curve, 15));
        curve.pop_back(); // now epoch 17 -> continue
        CHECK(!early_stop_check(curve, 15));
    }
    SUBCASE("ties do not count as improvement") {
        CHECK(early_stop_check({0.01, 0.01, 0.01}, 2));
        CHECK(!early_stop_check({0.01, 0.01, 0.009}, 2));
    }
    CHECK_THROWS_AS(early_stop_check({}, 3), ConfigError);
}

TEST_CASE("training config validation") {
    TrainConfig cfg;
    cfg.max_epochs = 1;
    cfg.patience = 0; // boundary: a single-epoch run
    CHECK_NOTHROW(cfg.validate());
    cfg.patience = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("max_epochs 1 runs exactly one epoch") {
    auto fleet = tiny_fleet(3, 20, 31);
    auto split = manual_split(fleet, 1, 1);
    TrainConfig cfg;
    cfg.variant = net::Variant::Wm;
    cfg.max_epochs = 1;
    cfg.patience = 0;
    cfg.batch_size = 8;
    cfg.seed = 5;
    auto result = train_joint(fleet, split, tiny_net(), cfg);
    CHECK(result.history.epochs.size() == 1);
    CHECK(result.history.phases[0].best_epoch == 1);
}

TEST_CASE("memorization: five windows reach L_data below 1e-4 in 200 epochs") {
    // One train cell with exactly W+H+5 retained cycles -> 5 windows.
    auto fleet = tiny_fleet(2, 15, 77);
    auto split = manual_split(fleet, 1, 1);
    const auto cfg_net = tiny_net();
    {
        const auto train_cells = data::select_cells(fleet, split.train);
        CHECK(data::build_windows(train_cells, 6, 4).size() == 5);
    }
    TrainConfig cfg;
    cfg.variant = net::Variant::Wm;
    cfg.max_epochs = 200;
    cfg.patience = 199;
    cfg.learning_rate = 5e-3;
    cfg.batch_size = 32;
    cfg.seed = 9;
    auto result = train_joint(fleet, split, cfg_net, cfg);
    double min_data = 1e9;
    for (const auto& e : result.history.epochs) min_data = std::min(min_data, e.l_data);
    CHECK(min_data < 1e-4);

    SUBCASE("clipped gradient norms never exceed the cap") {
        for (const auto& e : result.history.epochs) CHECK(e.grad_norm_max <= 1.0 + 1e-6);
    }
}

TEST_CASE("returned parameters correspond to the best validation epoch") {
    auto fleet = tiny_fleet(4, 24, 13);
    auto split = manual_split(fleet, 2, 1);
    TrainConfig cfg;
    cfg.variant = net::Variant::Wm;
    cfg.max_epochs = 6;
    cfg.patience = 5;
    cfg.batch_size = 16;
    cfg.seed = 21;
    auto result = train_joint(fleet, split, tiny_net(), cfg);

    double best = 1e9;
    for (const auto& e : result.history.epochs) best = std::min(best, e.val_mae);
    CHECK(result.history.phases[0].best_val_mae == best);

    const auto val_cells = data::select_cells(fleet, split.val);
    auto val_windows = data::build_windows(val_cells, 6, 4);
    batch::BatchBuilder builder(val_windows, tiny_net(), 0.75);
    CHECK(validation_mae(result.model, builder) == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("no validation improvement stops after patience epochs") {
    auto fleet = tiny_fleet(3, 20, 55);
    auto split = manual_split(fleet, 1, 1);
    TrainConfig cfg;
    cfg.variant = net::Variant::Wm;
    cfg.max_epochs = 30;
    cfg.patience = 3;
    cfg.learning_rate = 1e-30; // parameters never move measurably: ties only
    cfg.batch_size = 8;
    cfg.seed = 3;
    auto result = train_joint(fleet, split, tiny_net(), cfg);
    CHECK(result.history.epochs.size() == 4); // best at 1, stop after 1 + patience
    CHECK(result.history.phases[0].best_epoch == 1);
}

TEST_CASE("full determinism: identical seeds give identical histories and parameters") {
    auto fleet = tiny_fleet(4, 22, 101);
    auto split = manual_split(fleet, 2, 1);
    TrainConfig cfg;
    cfg.variant = net::Variant::Piwm;
    cfg.max_epochs = 3;
    cfg.patience = 2;
    cfg.batch_size = 16;
    cfg.seed = 42;
    auto a = train_joint(fleet, split, tiny_net(), cfg);
    auto b = train_joint(fleet, split, tiny_net(), cfg);
    REQUIRE(a.history.epochs.size() == b.history.epochs.size());
    for (size_t i = 0; i < a.history.epochs.size(); ++i) {
        CHECK(a.history.epochs[i].l_data == b.history.epochs[i].l_data);
        CHECK(a.history.epochs[i].l_phys == b.history.epochs[i].l_phys);
        CHECK(a.history.epochs[i].val_mae == b.history.epochs[i].val_mae);
    }
    auto pa = net::named_parameter_map(a.model);
    auto pb = net::named_parameter_map(b.model);
    for (const auto& [name, t] : pa) CHECK(torch::equal(t, pb.at(name)));
}

TEST_CASE("training on an empty split is a configuration error") {
    auto fleet = tiny_fleet(3, 9, 5); // too short for W+H+1 = 11
    auto split = manual_split(fleet, 1, 1);
    TrainConfig cfg;
    cfg.variant = net::Variant::Wm;
    cfg.max_epochs = 2;
    cfg.patience = 1;
    CHECK_THROWS_AS(train_joint(fleet, split, tiny_net(), cfg), ConfigError);
}

TEST_CASE("batch-staged run: three phases, strict isolation, ewc active from phase 2") {
    auto fleet = tiny_fleet(8, 26, 501); // batches 1,2,3,1,2,3,1,2
    auto split = manual_split(fleet, 6, 1);

    TrainConfig cfg;
    cfg.variant = net::Variant::PiwmEwc;
    cfg.max_epochs = 4;
    cfg.patience = 3;
    cfg.fisher_epoch = 2;
    cfg.batch_size = 16;
    cfg.seed = 77;

    bool isolation_ok = true;
    cfg.batch_observer = [&](int phase, int, const std::vector<const data::Window*>& sampled) {
        for (const auto* w : sampled)
            if (w->batch_id() != phase) isolation_ok = false;
    };
    auto result = train_batch_staged(fleet, split, tiny_net(), cfg);
    CHECK(isolation_ok);
    REQUIRE(result.history.phases.size() == 3);
    for (const auto& p : result.history.phases) {
        CHECK(!p.skipped);
        CHECK(p.fisher_captured_epoch == 2);
    }
    REQUIRE(result.fishers.size() == 3);
    for (const auto& f : result.fishers)
        for (const auto& [name, t] : f.fisher) CHECK(t.min().item<double>() >= 0.0);

    // EWC term appears only after the first phase and is strictly positive
    // once anchors drift.
    double phase1_ewc = 0, later_ewc = 0;
    for (const auto& e : result.history.epochs) {
        if (e.phase == 1) phase1_ewc += e.l_ewc;
        else later_ewc += e.l_ewc;
    }
    CHECK(phase1_ewc == 0.0);
    CHECK(later_ewc > 0.0);
}

TEST_CASE("a batch with no windows is skipped with a warning") {
    auto fleet = tiny_fleet(4, 26, 601); // batches 1,2,3,1
    // train only on cells from batches 1 and 2
    data::SplitAssignment split;
    split.train = {fleet[0].cell_id, fleet[1].cell_id};
    split.val = {fleet[2].cell_id};
    split.test = {fleet[3].cell_id};

    TrainConfig cfg;
    cfg.variant = net::Variant::PiwmEwc;
    cfg.max_epochs = 2;
    cfg.patience = 1;
    cfg.fisher_epoch = 1;
    cfg.batch_size = 8;
    cfg.seed = 11;
    auto result = train_batch_staged(fleet, split, tiny_net(), cfg);
    REQUIRE(result.history.phases.size() == 3);
    CHECK(!result.history.phases[0].skipped);
    CHECK(!result.history.phases[1].skipped);
    CHECK(result.history.phases[2].skipped);
}

TEST_CASE("fisher capture falls back to post-convergence when fisher_epoch is never reached") {
    auto fleet = tiny_fleet(4, 26, 701);
    auto split = manual_split(fleet, 3, 1);
    TrainConfig cfg;
    cfg.variant = net::Variant::PiwmEwc;
    cfg.max_epochs = 3;
    cfg.patience = 2;
    cfg.fisher_epoch = 9999; // beyond any epoch this run can reach
    cfg.batch_size = 16;
    cfg.seed = 19;
    auto result = train_batch_staged(fleet, split, tiny_net(), cfg);
    for (const auto& p : result.history.phases)
        if (!p.skipped) CHECK(p.fisher_captured_epoch == p.epochs_run);
}

TEST_SUITE_END();
