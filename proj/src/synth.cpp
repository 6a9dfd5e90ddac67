#include "bwm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bwm/dataset.hpp"

namespace bwm::synth {

void SynthCellParams::validate() const {
    if (!(knee_fade_rate > base_fade_rate && base_fade_rate > 0.0))
        throw ConfigError("synth: need knee_fade_rate > base_fade_rate > 0");
    if (!(knee_fraction > 0.0 && knee_fraction < 1.0))
        throw ConfigError("synth: knee_fraction must be in (0, 1)");
    if (!(gamma > 0.0)) throw ConfigError("synth: gamma must be positive");
    if (lifetime_cycles < 1) throw ConfigError("synth: lifetime_cycles must be >= 1");
    if (base_timesteps < 8) throw ConfigError("synth: base_timesteps must be >= 8");
    if (r0 <= 0.0) throw ConfigError("synth: r0 must be positive");
    if (noise_sd < 0.0) throw ConfigError("synth: noise_sd must be nonnegative");
}

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
    // Fixed 53-bit mapping; avoids distribution objects so draws are
    // identical across standard libraries.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

double smoothstep(double x) { return x * x * (3.0 - 2.0 * x); }

} // namespace

data::CellRecord generate_cell(const SynthCellParams& p) {
    p.validate();
    std::mt19937_64 rng(p.seed);

    const int n = p.lifetime_cycles;
    const int knee_at = static_cast<int>(std::lround(p.knee_fraction * n));

    // Piecewise-linear clean fade plus bounded uniform noise. The recorded
    // SOH is renormalized by the first retained cycle, so soh[0] == 1 always.
    std::vector<double> clean(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
        const double pre = std::min(j, knee_at) * p.base_fade_rate;
        const double post = std::max(0, j - knee_at) * p.knee_fade_rate;
        clean[static_cast<size_t>(j)] = 1.0 - pre - post;
    }
    const double amp = p.noise_sd * std::sqrt(3.0); // uniform(-amp, amp) has sd = noise_sd
    std::vector<double> q(static_cast<size_t>(n));
    constexpr double kNominalAh = 1.1;
    for (int j = 0; j < n; ++j) {
        const double noisy = clean[static_cast<size_t>(j)] + (amp > 0.0 ? uniform(rng, -amp, amp) : 0.0);
        q[static_cast<size_t>(j)] = kNominalAh * std::max(noisy, 0.05);
    }

    const bool ripple = p.noise_sd > 0.0;
    const double i_dis = 4.0; // constant-current discharge
    // Charge current as stored in float samples, so the derived I_mean is
    // exact and the ohmic-drop identity holds bit-tight on clean cells.
    const double i_chg = static_cast<double>(static_cast<float>(p.charge_current));
    const int charge_len = std::max(2, static_cast<int>(std::lround(0.3 * p.base_timesteps)));
    const double cell_flavor = uniform(rng, -1.0, 1.0); // per-cell plateau character

    data::CellRecord cell;
    cell.cell_id = p.cell_id;
    cell.batch_id = p.batch_id;
    cell.reference_capacity = q[0];
    cell.initial_resistance = p.r0;
    cell.cycles.reserve(static_cast<size_t>(n));

    for (int j = 0; j < n; ++j) {
        const double soh = q[static_cast<size_t>(j)] / q[0];
        const double soh_clean = clean[static_cast<size_t>(j)];
        const double resistance = p.r0 * std::pow(1.0 / soh, p.gamma);

        // Discharge duration shrinks with (clean) SOH, monotone when noise-free.
        const int discharge_len =
            std::max(8, static_cast<int>(std::lround(0.7 * p.base_timesteps * std::min(soh_clean, 1.1))));
        const int len = charge_len + discharge_len;

        std::vector<float> v(static_cast<size_t>(len));
        std::vector<float> i(static_cast<size_t>(len));
        std::vector<float> temp(static_cast<size_t>(len));

        // Plateau level carries the SOH signal; the within-discharge drop is
        // exactly I_mean * R(k), so the ohmic-drop check is zero on clean data.
        const double v_start = 3.32 - 0.25 * (1.0 - soh) + 0.02 * cell_flavor;
        const double drop = i_chg * resistance;
        const double t_base = 30.0 + 0.8 * (p.charge_current / 4.0) + 2.0 * (1.0 - soh);
        for (int t = 0; t < len; ++t) {
            double volt, curr;
            if (t < charge_len) {
                // CC charge rides above the discharge-start voltage so the
                // cycle minimum always falls inside the discharge segment.
                const double x = static_cast<double>(t) / charge_len;
                volt = v_start + 0.02 + 0.23 * x;
                curr = i_chg;
            } else {
                const double x = static_cast<double>(t - charge_len) / (discharge_len - 1);
                volt = v_start - drop * smoothstep(x);
                curr = -i_dis;
            }
            const double tcel = t_base + 1.2 * std::sin(3.14159265358979 * t / len);
            v[static_cast<size_t>(t)] = static_cast<float>(volt + (ripple ? uniform(rng, -0.002, 0.002) : 0.0));
            i[static_cast<size_t>(t)] = static_cast<float>(curr + (ripple ? uniform(rng, -0.01, 0.01) : 0.0));
            temp[static_cast<size_t>(t)] = static_cast<float>(tcel + (ripple ? uniform(rng, -0.05, 0.05) : 0.0));
        }

        data::CycleRecord rec;
        rec.cycle_index = j + 2; // cycle 1 is never generated
        rec.series = data::canonicalize_series(v, i, temp, p.base_timesteps);
        rec.discharge_capacity = q[static_cast<size_t>(j)];
        rec.internal_resistance = resistance;
        rec.mean_charge_current = [&] {
            double sum = 0.0;
            long cnt = 0;
            for (int t = 0; t < rec.series.length; ++t)
                if (rec.series.current[static_cast<size_t>(t)] > 0.0f) {
                    sum += rec.series.current[static_cast<size_t>(t)];
                    ++cnt;
                }
            return cnt > 0 ? sum / static_cast<double>(cnt) : 0.0;
        }();
        cell.cycles.push_back(std::move(rec));
    }
    return cell;
}

std::vector<data::CellRecord> generate_fleet(const FleetParams& fp) {
    if (fp.n_cells < 1) throw ConfigError("synth: n_cells must be >= 1");
    std::mt19937_64 rng(fp.seed);

    std::vector<data::CellRecord> fleet;
    fleet.reserve(static_cast<size_t>(fp.n_cells));
    for (int idx = 0; idx < fp.n_cells; ++idx) {
        SynthCellParams p;
        p.batch_id = idx % 3 + 1;
        {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "b%dc%03d", p.batch_id, idx);
            p.cell_id = buf;
        }
        p.charge_current = uniform(rng, fp.charge_current_range[0], fp.charge_current_range[1]);
        // Faster charging shortens life; jitter keeps the coupling loose.
        const double span = fp.charge_current_range[1] - fp.charge_current_range[0];
        const double fast = span > 0.0 ? (p.charge_current - fp.charge_current_range[0]) / span : 0.5;
        const double life_mix = std::clamp(1.0 - fast + uniform(rng, -0.25, 0.25), 0.0, 1.0);
        p.lifetime_cycles = fp.lifetime_range[0] +
            static_cast<int>(std::lround(life_mix * (fp.lifetime_range[1] - fp.lifetime_range[0])));
        p.knee_fraction = uniform(rng, fp.knee_fraction_range[0], fp.knee_fraction_range[1]);
        const double eol = uniform(rng, fp.eol_soh_range[0], fp.eol_soh_range[1]);
        const double total_drop = 1.0 - eol;
        p.base_fade_rate = 0.35 * total_drop / (p.knee_fraction * p.lifetime_cycles);
        p.knee_fade_rate = 0.65 * total_drop / ((1.0 - p.knee_fraction) * p.lifetime_cycles);
        p.gamma = fp.gamma;
        p.noise_sd = fp.noise_sd;
        p.r0 = uniform(rng, fp.r0_range[0], fp.r0_range[1]);
        p.base_timesteps = fp.base_timesteps;
        p.seed = rng();
        fleet.push_back(generate_cell(p));
    }
    return fleet;
}

} // namespace bwm::synth
