#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace bwm {

// Error taxonomy shared by library, C API (as codes) and CLI (as exit codes).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnsupportedOperation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace data {

// One cycle's raw measurement channels, canonicalized to a fixed number of
// timesteps. Padded tail entries are zero; `length` keeps the true count.
struct CycleSeries {
    std::vector<float> voltage;
    std::vector<float> current;      // signed, discharge negative
    std::vector<float> temperature;  // degrees Celsius
    int length = 0;                  // true sample count before padding

    int padded_size() const { return static_cast<int>(voltage.size()); }
};

struct CycleRecord {
    int cycle_index = 0;
    CycleSeries series;
    double discharge_capacity = 0.0;  // Ah
    double internal_resistance = 0.0; // Ohm
    double mean_charge_current = 0.0; // A, mean of current samples > 0
};

struct CellRecord {
    std::string cell_id;
    int batch_id = 0; // {1,2,3}
    std::vector<CycleRecord> cycles; // strictly increasing cycle_index, cycle 1 absent
    double reference_capacity = 0.0; // capacity of first retained cycle
    double initial_resistance = 0.0; // R0

    int retained_count() const { return static_cast<int>(cycles.size()); }
};

enum class AgingStage { Stage1 = 1, Stage2 = 2, Stage3 = 3, Stage4 = 4 };

// A training sample. Series are not copied: the window references its cell
// and the anchor position among retained cycles (1-based, inputs end at the
// anchor, targets start right after it).
struct Window {
    const CellRecord* cell = nullptr;
    int anchor = 0; // position p in [W+1, N-H], 1-based over retained cycles
    int w = 0;
    int horizon = 0;

    const std::string& cell_id() const { return cell->cell_id; }
    int batch_id() const { return cell->batch_id; }
    const CycleRecord& input_cycle(int i) const { // i in [0, w)
        return cell->cycles[static_cast<size_t>(anchor - w + i)];
    }
    const CycleRecord& anchor_cycle() const { return cell->cycles[static_cast<size_t>(anchor - 1)]; }
    const CycleRecord& future_cycle(int h) const { // h in [1, horizon]
        return cell->cycles[static_cast<size_t>(anchor - 1 + h)];
    }

    double action() const { return anchor_cycle().mean_charge_current; }
    double soh_now() const;
    std::vector<double> soh_future() const;
    double resistance_last() const { return anchor_cycle().internal_resistance; }
    double resistance_initial() const { return cell->initial_resistance; }
};

struct SplitAssignment {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
    uint64_t seed = 0;
};

} // namespace data
} // namespace bwm
