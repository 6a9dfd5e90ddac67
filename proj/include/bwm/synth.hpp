#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bwm/types.hpp"

namespace bwm::synth {

// Parameters of one synthetic LFP-like cell. Resistance follows
// R(k) = R0 * (1/SOH(k))^gamma exactly, so the SPM inversion has a
// known-zero optimum on clean data.
struct SynthCellParams {
    std::string cell_id = "b1c000";
    int batch_id = 1;
    int lifetime_cycles = 300;    // retained cycles (indices 2..lifetime+1)
    double knee_fraction = 0.7;   // fraction of life where fade accelerates
    double base_fade_rate = 4e-4; // SOH per cycle before the knee
    double knee_fade_rate = 1.6e-3;
    double gamma = 0.75;
    double charge_current = 4.0;  // A
    double noise_sd = 0.0;        // SOH noise (bounded uniform)
    double r0 = 0.016;            // Ohm
    int base_timesteps = 1000;    // raw series length at SOH 1
    uint64_t seed = 1;

    void validate() const;
};

data::CellRecord generate_cell(const SynthCellParams& params);

struct FleetParams {
    int n_cells = 30;
    int base_timesteps = 1000;
    std::array<int, 2> lifetime_range{150, 600};
    std::array<double, 2> knee_fraction_range{0.55, 0.8};
    std::array<double, 2> eol_soh_range{0.76, 0.88};
    std::array<double, 2> charge_current_range{1.5, 5.5};
    std::array<double, 2> r0_range{0.012, 0.020};
    double gamma = 0.75;
    double noise_sd = 0.004;
    uint64_t seed = 1;
};

// Cells with varied lifetimes and charge currents across three synthetic
// batch ids; deterministic for a fixed seed. Faster charging shortens life.
std::vector<data::CellRecord> generate_fleet(const FleetParams& params);

} // namespace bwm::synth
