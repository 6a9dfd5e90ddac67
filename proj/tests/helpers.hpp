#pragma once

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bwm/dataset.hpp"
#include "bwm/types.hpp"

namespace testutil {

// Fabricates a cell with a linear capacity fade and tiny constant-shape
// series; enough structure for window/split/loss plumbing tests.
inline bwm::data::CellRecord make_test_cell(const std::string& id, int batch_id, int n_cycles,
                                            int t_max = 16, double cap0 = 1.1,
                                            double fade = 5e-4, double r0 = 0.016,
                                            double charge_current = 4.0) {
    bwm::data::CellRecord cell;
    cell.cell_id = id;
    cell.batch_id = batch_id;
    for (int j = 0; j < n_cycles; ++j) {
        bwm::data::CycleRecord rec;
        rec.cycle_index = j + 2;
        const int len = t_max - 2;
        std::vector<float> v(static_cast<size_t>(len)), i(static_cast<size_t>(len)),
            t(static_cast<size_t>(len));
        for (int k = 0; k < len; ++k) {
            const bool charging = k < len / 3;
            v[static_cast<size_t>(k)] = charging ? 3.5f : 3.3f - 0.001f * static_cast<float>(k);
            i[static_cast<size_t>(k)] = charging ? static_cast<float>(charge_current) : -4.0f;
            t[static_cast<size_t>(k)] = 30.0f;
        }
        rec.series = bwm::data::canonicalize_series(v, i, t, t_max);
        rec.discharge_capacity = cap0 * (1.0 - fade * j);
        const double soh = rec.discharge_capacity / cap0;
        rec.internal_resistance = r0 * std::pow(1.0 / soh, 0.75);
        rec.mean_charge_current = charge_current;
        cell.cycles.push_back(std::move(rec));
    }
    cell.reference_capacity = cell.cycles.front().discharge_capacity;
    cell.initial_resistance = cell.cycles.front().internal_resistance;
    return cell;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("bwm_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::filesystem::create_directories(p.parent_path());
    FILE* f = std::fopen(p.c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
}

inline std::string read_file(const std::filesystem::path& p) {
    FILE* f = std::fopen(p.c_str(), "rb");
    REQUIRE(f != nullptr);
    std::string out;
    char buf[4096];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) out.append(buf, n);
    std::fclose(f);
    return out;
}

} // namespace testutil
