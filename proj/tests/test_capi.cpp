#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>

#include "bwm_c.h"
#include "helpers.hpp"

TEST_SUITE_BEGIN("capi");

namespace {

bwm_synth_opts tiny_synth() {
    bwm_synth_opts o;
    bwm_synth_opts_init(&o);
    o.cells = 6;
    o.seed = 7;
    o.timesteps = 32;
    o.lifetime_min = 20;
    o.lifetime_max = 26;
    return o;
}

bwm_train_opts tiny_train(const char* variant) {
    bwm_train_opts o;
    bwm_train_opts_init(&o);
    o.variant = variant;
    o.seed = 7;
    o.max_epochs = 2;
    o.patience = 1;
    o.batch_size = 16;
    o.d = 16;
    o.w = 6;
    o.horizon = 4;
    o.patch_len = 3;
    o.patch_stride = 3;
    o.layers = 1;
    o.heads = 2;
    o.ff_width = 32;
    o.t_max = 32;
    return o;
}

} // namespace

TEST_CASE("version and last-error plumbing") {
    CHECK(std::strlen(bwm_version()) > 0);
    CHECK(bwm_synth_generate(nullptr, nullptr) == BWM_E_CONFIG);
    CHECK(std::strlen(bwm_last_error()) > 0);
}

TEST_CASE("synth generation is byte-deterministic through the C API") {
    testutil::TempDir d1("capi_s1"), d2("capi_s2");
    auto opts = tiny_synth();
    REQUIRE(bwm_synth_generate(&opts, d1.path().c_str()) == BWM_OK);
    REQUIRE(bwm_synth_generate(&opts, d2.path().c_str()) == BWM_OK);
    int files = 0;
    for (const auto& entry : std::filesystem::directory_iterator(d1.path())) {
        ++files;
        CHECK(testutil::read_file(entry.path()) ==
              testutil::read_file(d2.path() / entry.path().filename()));
    }
    CHECK(files == 1 + 2 * 6); // manifest + series/summary per cell
}

TEST_CASE("train, eval, rollout and pca through the C API") {
    testutil::TempDir root("capi_flow");
    const auto data_dir = root.path() / "data";
    auto sopts = tiny_synth();
    REQUIRE(bwm_synth_generate(&sopts, data_dir.c_str()) == BWM_OK);

    const auto run_dir = root.path() / "run_wm";
    auto topts = tiny_train("wm");
    REQUIRE(bwm_train_run(&topts, data_dir.c_str(), run_dir.c_str()) == BWM_OK);
    for (const char* f : {"checkpoint.bwm", "metrics.txt", "history.tsv", "phases.tsv",
                          "manifest.json", "split.json", "heatmap.tsv", "pca.tsv"})
        CHECK(std::filesystem::exists(run_dir / f));

    SUBCASE("run directories are immutable") {
        CHECK(bwm_train_run(&topts, data_dir.c_str(), run_dir.c_str()) == BWM_E_CONFIG);
        CHECK(std::string(bwm_last_error()).find("manifest") != std::string::npos);
    }

    SUBCASE("eval honours the checkpoint horizon") {
        const auto eval_dir = root.path() / "eval";
        REQUIRE(bwm_eval_run((run_dir / "checkpoint.bwm").c_str(), data_dir.c_str(),
                             eval_dir.c_str(), "1,2,4") == BWM_OK);
        CHECK(std::filesystem::exists(eval_dir / "metrics.txt"));

        const auto bad_dir = root.path() / "eval_bad";
        CHECK(bwm_eval_run((run_dir / "checkpoint.bwm").c_str(), data_dir.c_str(),
                           bad_dir.c_str(), "200") == BWM_E_CONFIG);
        CHECK(std::string(bwm_last_error()).find("horizon") != std::string::npos);
    }

    SUBCASE("model handle rollout") {
        bwm_model* model = bwm_model_open((run_dir / "checkpoint.bwm").c_str());
        REQUIRE(model != nullptr);
        CHECK(std::string(bwm_model_variant(model)) == "wm");
        const int h = bwm_model_horizon(model);
        CHECK(h == 4);
        std::vector<double> pred(4), truth(4);
        REQUIRE(bwm_model_rollout(model, data_dir.c_str(), "b1c000", 10, pred.data(), truth.data(),
                                  4) == BWM_OK);
        for (int i = 0; i < 4; ++i) {
            CHECK(std::isfinite(pred[static_cast<size_t>(i)]));
            CHECK(truth[static_cast<size_t>(i)] > 0.5);
        }
        CHECK(bwm_model_rollout(model, data_dir.c_str(), "nosuchcell", 10, pred.data(),
                                truth.data(), 4) == BWM_E_CONFIG);
        CHECK(bwm_model_rollout(model, data_dir.c_str(), "b1c000", 1, pred.data(), truth.data(),
                                4) == BWM_E_CONFIG); // anchor below W+1
        bwm_model_close(model);
    }

    SUBCASE("pca export") {
        const auto pca_file = root.path() / "pca_out.tsv";
        REQUIRE(bwm_pca_run((run_dir / "checkpoint.bwm").c_str(), data_dir.c_str(),
                            pca_file.c_str()) == BWM_OK);
        const auto text = testutil::read_file(pca_file);
        CHECK(text.rfind("pc1\tpc2\tsoh\tcell_id\n", 0) == 0);
    }
}

TEST_CASE("trajectory requests against the lstm control are unsupported") {
    testutil::TempDir root("capi_lstm");
    const auto data_dir = root.path() / "data";
    auto sopts = tiny_synth();
    REQUIRE(bwm_synth_generate(&sopts, data_dir.c_str()) == BWM_OK);

    const auto run_dir = root.path() / "run_lstm";
    auto topts = tiny_train("lstm");
    REQUIRE(bwm_train_run(&topts, data_dir.c_str(), run_dir.c_str()) == BWM_OK);

    bwm_model* model = bwm_model_open((run_dir / "checkpoint.bwm").c_str());
    REQUIRE(model != nullptr);
    CHECK(std::string(bwm_model_variant(model)) == "lstm");
    std::vector<double> pred(4), truth(4);
    CHECK(bwm_model_rollout(model, data_dir.c_str(), "b1c000", 10, pred.data(), truth.data(), 4) ==
          BWM_E_UNSUPPORTED);
    CHECK(std::string(bwm_last_error()).find("trajectory") != std::string::npos);
    bwm_model_close(model);
}

TEST_CASE("unknown variants are configuration errors listing the valid names") {
    testutil::TempDir root("capi_var");
    const auto data_dir = root.path() / "data";
    auto sopts = tiny_synth();
    REQUIRE(bwm_synth_generate(&sopts, data_dir.c_str()) == BWM_OK);
    auto topts = tiny_train("resnet");
    CHECK(bwm_train_run(&topts, data_dir.c_str(), (root.path() / "r").c_str()) == BWM_E_CONFIG);
    const std::string msg = bwm_last_error();
    for (const char* name : {"piwm", "wm", "cnn-patchtst", "piwm-ewc", "lstm"})
        CHECK(msg.find(name) != std::string::npos);
}

TEST_SUITE_END();
