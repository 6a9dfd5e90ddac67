#include "bwm/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace bwm::data {

double soh_of(const CycleRecord& cycle, const CellRecord& cell) {
    if (cell.reference_capacity <= 0.0)
        throw ConfigError("soh_of: reference capacity must be positive for cell " + cell.cell_id);
    return cycle.discharge_capacity / cell.reference_capacity;
}

double Window::soh_now() const { return soh_of(anchor_cycle(), *cell); }

std::vector<double> Window::soh_future() const {
    std::vector<double> out(static_cast<size_t>(horizon));
    for (int h = 1; h <= horizon; ++h)
        out[static_cast<size_t>(h - 1)] = soh_of(future_cycle(h), *cell);
    return out;
}

AgingStage classify_stage(double soh) {
    if (soh >= 0.95) return AgingStage::Stage1;
    if (soh >= 0.90) return AgingStage::Stage2;
    if (soh >= 0.85) return AgingStage::Stage3;
    return AgingStage::Stage4;
}

const char* stage_name(AgingStage s) {
    switch (s) {
        case AgingStage::Stage1: return "stage1";
        case AgingStage::Stage2: return "stage2";
        case AgingStage::Stage3: return "stage3";
        case AgingStage::Stage4: return "stage4";
    }
    return "unknown";
}

CycleSeries canonicalize_series(const std::vector<float>& voltage,
                                const std::vector<float>& current,
                                const std::vector<float>& temperature,
                                int t_max) {
    if (voltage.empty())
        throw ConfigError("canonicalize_series: empty series");
    if (voltage.size() != current.size() || voltage.size() != temperature.size())
        throw ConfigError("canonicalize_series: channel lengths differ");
    if (t_max < 1)
        throw ConfigError("canonicalize_series: t_max must be >= 1");

    CycleSeries s;
    const int raw = static_cast<int>(voltage.size());
    s.length = std::min(raw, t_max);
    s.voltage.assign(static_cast<size_t>(t_max), 0.0f);
    s.current.assign(static_cast<size_t>(t_max), 0.0f);
    s.temperature.assign(static_cast<size_t>(t_max), 0.0f);
    std::copy_n(voltage.begin(), s.length, s.voltage.begin());
    std::copy_n(current.begin(), s.length, s.current.begin());
    std::copy_n(temperature.begin(), s.length, s.temperature.begin());
    return s;
}

std::vector<Window> build_windows(const CellRecord& cell, int w, int horizon) {
    if (w < 1 || horizon < 1)
        throw ConfigError("build_windows: W and H must be >= 1");
    std::vector<Window> out;
    const int n = cell.retained_count();
    // anchors p = W+1 .. N-H over retained positions; count = max(0, N-W-H)
    for (int p = w + 1; p <= n - horizon; ++p)
        out.push_back(Window{&cell, p, w, horizon});
    return out;
}

std::vector<Window> build_windows(const std::vector<const CellRecord*>& cells, int w, int horizon) {
    std::vector<Window> out;
    for (const CellRecord* c : cells) {
        auto ws = build_windows(*c, w, horizon);
        out.insert(out.end(), ws.begin(), ws.end());
    }
    return out;
}

namespace {

double min_soh(const CellRecord& cell) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& c : cell.cycles) m = std::min(m, soh_of(c, cell));
    return m;
}

} // namespace

SplitAssignment stratified_split(const std::vector<CellRecord>& cells,
                                 int n_train, int n_val, int n_test,
                                 uint64_t seed) {
    const int n = static_cast<int>(cells.size());
    if (n_train < 0 || n_val < 0 || n_test < 0 || n_train + n_val + n_test != n)
        throw ConfigError("stratified_split: partition sizes must sum to the cell count (" +
                          std::to_string(n) + ")");

    // Order by minimum SOH reached (deepest degradation first), then id.
    std::vector<int> order(cells.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> depth(cells.size());
    for (size_t i = 0; i < cells.size(); ++i) depth[i] = min_soh(cells[i]);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (depth[static_cast<size_t>(a)] != depth[static_cast<size_t>(b)])
            return depth[static_cast<size_t>(a)] < depth[static_cast<size_t>(b)];
        return cells[static_cast<size_t>(a)].cell_id < cells[static_cast<size_t>(b)].cell_id;
    });

    constexpr int kBuckets = 4;
    const std::array<int, 3> sizes{n_train, n_val, n_test};
    std::array<std::vector<int>, kBuckets> bucket;
    for (int b = 0; b < kBuckets; ++b) {
        const int lo = b * n / kBuckets, hi = (b + 1) * n / kBuckets;
        bucket[static_cast<size_t>(b)].assign(order.begin() + lo, order.begin() + hi);
    }

    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    for (auto& cellsInBucket : bucket) std::shuffle(cellsInBucket.begin(), cellsInBucket.end(), rng);

    // Largest-remainder allocation per bucket, then a correction pass so the
    // partition totals match exactly.
    int alloc[kBuckets][3] = {};
    double quota[kBuckets][3] = {};
    for (int b = 0; b < kBuckets; ++b) {
        const int nb = static_cast<int>(bucket[static_cast<size_t>(b)].size());
        int assigned = 0;
        std::array<double, 3> frac{};
        for (int p = 0; p < 3; ++p) {
            quota[b][p] = n > 0 ? static_cast<double>(nb) * sizes[static_cast<size_t>(p)] / n : 0.0;
            alloc[b][p] = static_cast<int>(std::floor(quota[b][p]));
            frac[static_cast<size_t>(p)] = quota[b][p] - alloc[b][p];
            assigned += alloc[b][p];
        }
        for (int r = assigned; r < nb; ++r) {
            int best = 0;
            for (int p = 1; p < 3; ++p)
                if (frac[static_cast<size_t>(p)] > frac[static_cast<size_t>(best)]) best = p;
            alloc[b][best] += 1;
            frac[static_cast<size_t>(best)] = -1.0;
        }
    }
    std::array<int, 3> total{};
    for (int b = 0; b < kBuckets; ++b)
        for (int p = 0; p < 3; ++p) total[static_cast<size_t>(p)] += alloc[b][p];
    for (;;) {
        int surplus = -1, deficit = -1;
        for (int p = 0; p < 3; ++p) {
            if (surplus < 0 && total[static_cast<size_t>(p)] > sizes[static_cast<size_t>(p)]) surplus = p;
            if (deficit < 0 && total[static_cast<size_t>(p)] < sizes[static_cast<size_t>(p)]) deficit = p;
        }
        if (surplus < 0 && deficit < 0) break;
        int bestB = -1;
        double bestOver = -std::numeric_limits<double>::infinity();
        for (int b = 0; b < kBuckets; ++b) {
            if (alloc[b][surplus] <= 0) continue;
            const double over = alloc[b][surplus] - quota[b][surplus];
            if (over > bestOver) { bestOver = over; bestB = b; }
        }
        alloc[bestB][surplus] -= 1;
        alloc[bestB][deficit] += 1;
        total[static_cast<size_t>(surplus)] -= 1;
        total[static_cast<size_t>(deficit)] += 1;
    }

    SplitAssignment out;
    out.seed = seed;
    for (int b = 0; b < kBuckets; ++b) {
        size_t pos = 0;
        for (int p = 0; p < 3; ++p) {
            auto* dst = p == 0 ? &out.train : (p == 1 ? &out.val : &out.test);
            for (int i = 0; i < alloc[b][p]; ++i, ++pos)
                dst->push_back(cells[static_cast<size_t>(bucket[static_cast<size_t>(b)][pos])].cell_id);
        }
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::vector<double> inverse_frequency_weights(const std::vector<Window>& windows) {
    if (windows.empty())
        throw ConfigError("inverse_frequency_weights: need at least one window");
    std::array<long, 4> counts{};
    std::vector<int> stage(windows.size());
    for (size_t i = 0; i < windows.size(); ++i) {
        stage[i] = static_cast<int>(classify_stage(windows[i].soh_now())) - 1;
        counts[static_cast<size_t>(stage[i])] += 1;
    }
    std::vector<double> w(windows.size());
    double sum = 0.0;
    for (size_t i = 0; i < windows.size(); ++i) {
        w[i] = 1.0 / static_cast<double>(counts[static_cast<size_t>(stage[i])]);
        sum += w[i];
    }
    for (double& x : w) x /= sum;
    return w;
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    size_t start = 0;
    while (true) {
        const size_t tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Iterates lines without copying; tolerates a missing trailing newline.
template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
    size_t start = 0;
    while (start < text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!line.empty()) fn(line);
        start = end + 1;
    }
}

struct RawCycle {
    std::vector<float> v, i, t;
};

double mean_positive(const std::vector<float>& current, int length) {
    double sum = 0.0;
    long n = 0;
    for (int k = 0; k < length; ++k)
        if (current[static_cast<size_t>(k)] > 0.0f) { sum += current[static_cast<size_t>(k)]; ++n; }
    return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

CellRecord parse_cell(const std::filesystem::path& root, const std::string& cell_id,
                      int batch_id, const std::string& series_file, int t_max) {
    const std::string series_text = read_file(root / series_file);
    const std::string summary_text = read_file(root / (cell_id + ".summary"));

    std::map<int, RawCycle> raw;
    bool header_ok = false;
    bool bad_row = false;
    for_each_line(series_text, [&](std::string_view line) {
        if (bad_row) return;
        auto cols = split_tabs(line);
        if (!header_ok) {
            if (cols.size() != 5 || cols[0] != "cycle" || cols[1] != "t" || cols[2] != "voltage" ||
                cols[3] != "current" || cols[4] != "temperature")
                throw ConfigError("missing or malformed series columns");
            header_ok = true;
            return;
        }
        int cyc = 0;
        int t = 0;
        float v, i, temp;
        if (cols.size() != 5 || !parse_number(cols[0], cyc) || !parse_number(cols[1], t) ||
            !parse_number(cols[2], v) || !parse_number(cols[3], i) || !parse_number(cols[4], temp)) {
            bad_row = true;
            return;
        }
        auto& rc = raw[cyc];
        rc.v.push_back(v);
        rc.i.push_back(i);
        rc.t.push_back(temp);
    });
    if (!header_ok) throw ConfigError("missing or malformed series columns");
    if (bad_row) throw ConfigError("unparseable series row");

    struct SummaryRow { int cycle; double qd, ir; };
    std::vector<SummaryRow> summary;
    header_ok = false;
    for_each_line(summary_text, [&](std::string_view line) {
        auto cols = split_tabs(line);
        if (!header_ok) {
            if (cols.size() != 3 || cols[0] != "cycle" || cols[1] != "discharge_capacity" ||
                cols[2] != "internal_resistance")
                throw ConfigError("missing or malformed summary columns");
            header_ok = true;
            return;
        }
        SummaryRow row{};
        if (cols.size() != 3 || !parse_number(cols[0], row.cycle) || !parse_number(cols[1], row.qd) ||
            !parse_number(cols[2], row.ir))
            throw ConfigError("unparseable summary row");
        summary.push_back(row);
    });
    if (!header_ok) throw ConfigError("missing or malformed summary columns");

    CellRecord cell;
    cell.cell_id = cell_id;
    cell.batch_id = batch_id;
    int prev_cycle = std::numeric_limits<int>::min();
    for (const auto& row : summary) {
        if (row.cycle == 1) continue; // cycle 1 excluded
        if (row.cycle <= prev_cycle)
            throw ConfigError("non-monotone cycle indices");
        prev_cycle = row.cycle;
        if (row.qd <= 0.0) throw ConfigError("non-positive discharge capacity at cycle " +
                                             std::to_string(row.cycle));
        if (row.ir <= 0.0) throw ConfigError("non-positive internal resistance at cycle " +
                                             std::to_string(row.cycle));
        auto it = raw.find(row.cycle);
        if (it == raw.end() || it->second.v.empty())
            throw ConfigError("no series samples for cycle " + std::to_string(row.cycle));

        CycleRecord rec;
        rec.cycle_index = row.cycle;
        rec.series = canonicalize_series(it->second.v, it->second.i, it->second.t, t_max);
        rec.discharge_capacity = row.qd;
        rec.internal_resistance = row.ir;
        rec.mean_charge_current = mean_positive(rec.series.current, rec.series.length);
        cell.cycles.push_back(std::move(rec));
    }
    if (cell.cycles.empty()) throw ConfigError("no retained cycles");
    cell.reference_capacity = cell.cycles.front().discharge_capacity;
    cell.initial_resistance = cell.cycles.front().internal_resistance;
    return cell;
}

} // namespace

LoadResult load_dataset(const std::filesystem::path& root, const LoadOptions& opts) {
    if (!std::filesystem::is_directory(root))
        throw IoError("dataset root is not a directory: " + root.string());

    LoadResult result;
    const auto manifest_path = root / "manifest.tsv";
    if (!std::filesystem::exists(manifest_path))
        return result; // empty directory -> empty list

    std::vector<std::string> exclude;
    const auto exclude_path = root / "exclude.txt";
    if (std::filesystem::exists(exclude_path)) {
        const std::string text = read_file(exclude_path);
        for_each_line(text, [&](std::string_view line) { exclude.emplace_back(line); });
    }

    struct Entry { std::string cell_id; int batch_id; std::string file; };
    std::vector<Entry> entries;
    bool header_ok = false;
    const std::string manifest_text = read_file(manifest_path);
    for_each_line(manifest_text, [&](std::string_view line) {
        auto cols = split_tabs(line);
        if (!header_ok) {
            if (cols.size() != 3 || cols[0] != "cell_id" || cols[1] != "batch_id" || cols[2] != "file")
                throw ConfigError("manifest.tsv: expected columns cell_id, batch_id, file");
            header_ok = true;
            return;
        }
        Entry e;
        e.cell_id = std::string(cols.size() > 0 ? cols[0] : "");
        if (cols.size() != 3 || !parse_number(cols[1], e.batch_id))
            throw ConfigError("manifest.tsv: unparseable row for cell " + e.cell_id);
        e.file = std::string(cols[2]);
        entries.push_back(std::move(e));
    });

    for (const auto& e : entries) {
        if (std::find(exclude.begin(), exclude.end(), e.cell_id) != exclude.end()) {
            result.excluded.push_back(e.cell_id);
            continue;
        }
        try {
            result.cells.push_back(parse_cell(root, e.cell_id, e.batch_id, e.file, opts.t_max));
        } catch (const std::exception& ex) {
            result.rejected.push_back({e.cell_id, ex.what()});
        }
    }
    std::sort(result.cells.begin(), result.cells.end(),
              [](const CellRecord& a, const CellRecord& b) { return a.cell_id < b.cell_id; });
    return result;
}

namespace {

void append_number(std::string& out, double v, int precision) {
    char buf[40];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, precision);
    out.append(buf, ptr);
}

} // namespace

void export_fleet(const std::vector<CellRecord>& cells, const std::filesystem::path& root) {
    std::filesystem::create_directories(root);

    std::vector<const CellRecord*> ordered;
    for (const auto& c : cells) ordered.push_back(&c);
    std::sort(ordered.begin(), ordered.end(),
              [](const CellRecord* a, const CellRecord* b) { return a->cell_id < b->cell_id; });

    std::string manifest = "cell_id\tbatch_id\tfile\n";
    for (const CellRecord* c : ordered) {
        manifest += c->cell_id;
        manifest += '\t';
        manifest += std::to_string(c->batch_id);
        manifest += '\t';
        manifest += c->cell_id + ".series\n";
    }
    {
        std::ofstream out(root / "manifest.tsv", std::ios::binary);
        if (!out) throw IoError("cannot write manifest.tsv");
        out << manifest;
    }

    for (const CellRecord* c : ordered) {
        std::string series = "cycle\tt\tvoltage\tcurrent\ttemperature\n";
        series.reserve(series.size() + static_cast<size_t>(c->retained_count()) * 40u);
        std::string summary = "cycle\tdischarge_capacity\tinternal_resistance\n";
        for (const auto& cyc : c->cycles) {
            for (int t = 0; t < cyc.series.length; ++t) {
                series += std::to_string(cyc.cycle_index);
                series += '\t';
                series += std::to_string(t);
                series += '\t';
                append_number(series, cyc.series.voltage[static_cast<size_t>(t)], 9);
                series += '\t';
                append_number(series, cyc.series.current[static_cast<size_t>(t)], 9);
                series += '\t';
                append_number(series, cyc.series.temperature[static_cast<size_t>(t)], 9);
                series += '\n';
            }
            summary += std::to_string(cyc.cycle_index);
            summary += '\t';
            append_number(summary, cyc.discharge_capacity, 17);
            summary += '\t';
            append_number(summary, cyc.internal_resistance, 17);
            summary += '\n';
        }
        std::ofstream sf(root / (c->cell_id + ".series"), std::ios::binary);
        if (!sf) throw IoError("cannot write series file for " + c->cell_id);
        sf << series;
        std::ofstream mf(root / (c->cell_id + ".summary"), std::ios::binary);
        if (!mf) throw IoError("cannot write summary file for " + c->cell_id);
        mf << summary;
    }
}

const CellRecord* find_cell(const std::vector<CellRecord>& cells, const std::string& cell_id) {
    for (const auto& c : cells)
        if (c.cell_id == cell_id) return &c;
    return nullptr;
}

std::vector<const CellRecord*> select_cells(const std::vector<CellRecord>& cells,
                                            const std::vector<std::string>& ids) {
    std::vector<const CellRecord*> out;
    for (const auto& id : ids) {
        const CellRecord* c = find_cell(cells, id);
        if (!c) throw ConfigError("unknown cell_id in split: " + id);
        out.push_back(c);
    }
    return out;
}

} // namespace bwm::data
