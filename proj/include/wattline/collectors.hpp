#pragma once

// Per-node measurement sources, all rooted at a configurable filesystem
// prefix so production trees and test fixtures read identically:
//   <fs_root>/sys/fs/cgroup/...          workload accounting (cgroup v2)
//   <fs_root>/sys/class/powercap/...     RAPL energy counters
//   <fs_root>/proc/{stat,meminfo}        node totals
//   <fs_root>/ipmi/...                   IPMI-DCMI replay file (file mode)
//   <fs_root>/gpu/workload_map           workload id -> GPU index map

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "wattline/attribution.hpp"
#include "wattline/util.hpp"

namespace wattline {

struct CollectionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Per-run warning counter for entries skipped as unreadable/malformed.
struct CollectionStats {
    int skipped = 0;
};

struct UsageSample {
    std::string workload_id;
    double cpu_time_seconds = 0;  // cumulative
    double memory_bytes = 0;      // instantaneous
    int64_t timestamp_ms = 0;
};

struct EnergyCounter {
    RaplDomain domain = RaplDomain::cpu_package;
    int socket_index = 0;
    double energy_microjoules = 0;
    double max_range_microjoules = 0;
    int64_t timestamp_ms = 0;
};

struct NodePowerReading {
    double watts = 0;
    // source is always the IPMI-DCMI interface
    int64_t timestamp_ms = 0;
};

struct GpuMapEntry {
    std::string workload_id;
    int gpu_index = 0;
    std::string gpu_uuid;
};

enum class CgroupLayout { slurm };

inline std::optional<CgroupLayout> cgroup_layout_from_string(std::string_view s) {
    if (s == "slurm") return CgroupLayout::slurm;
    return std::nullopt;
}

namespace detail {

inline std::optional<double> read_number_file(const std::filesystem::path& p) {
    auto text = util::read_text_file(p);
    if (!text) return std::nullopt;
    return util::parse_double(util::trim(*text));
}

// cgroup v2 cpu.stat: line "usage_usec <n>"
inline std::optional<double> parse_cpu_stat_usage_seconds(std::string_view text) {
    for (const auto& line : util::split(text, '\n')) {
        auto fields = util::split_ws(line);
        if (fields.size() == 2 && fields[0] == "usage_usec") {
            auto v = util::parse_double(fields[1]);
            if (v) return *v / 1e6;
        }
    }
    return std::nullopt;
}

}  // namespace detail

// Walks the cgroup v2 tree for SLURM-style job_<id> directories. A workload
// with unreadable files is skipped and counted, never fatal.
inline std::vector<UsageSample> collect_cgroup_usage(const std::filesystem::path& fs_root,
                                                     CgroupLayout layout, int64_t timestamp_ms,
                                                     CollectionStats* stats = nullptr) {
    (void)layout;  // single layout implemented: SLURM-style job_<id> dirs
    auto root = fs_root / "sys/fs/cgroup";
    if (!std::filesystem::directory_entry(fs_root).exists())
        throw CollectionError("fs root does not exist: " + fs_root.string());
    std::vector<UsageSample> samples;
    if (!std::filesystem::directory_entry(root).exists()) return samples;
    for (auto it = std::filesystem::recursive_directory_iterator(root);
         it != std::filesystem::recursive_directory_iterator(); ++it) {
        if (!it->is_directory()) continue;
        std::string name = it->path().filename().string();
        if (!name.starts_with("job_") || name.size() == 4) continue;
        auto cpu = util::read_text_file(it->path() / "cpu.stat");
        auto mem = detail::read_number_file(it->path() / "memory.current");
        std::optional<double> cpu_seconds;
        if (cpu) cpu_seconds = detail::parse_cpu_stat_usage_seconds(*cpu);
        if (!cpu_seconds || !mem || *cpu_seconds < 0 || *mem < 0) {
            if (stats) ++stats->skipped;
            continue;
        }
        samples.push_back({name.substr(4), *cpu_seconds, *mem, timestamp_ms});
        it.disable_recursion_pending();  // job dirs do not nest
    }
    std::sort(samples.begin(), samples.end(),
              [](const UsageSample& a, const UsageSample& b) { return a.workload_id < b.workload_id; });
    return samples;
}

// Discovers powercap domains (intel-rapl:<socket> packages and their dram
// subdomains). A node without the tree legally yields an empty list.
inline std::vector<EnergyCounter> read_energy_counters(const std::filesystem::path& fs_root,
                                                       int64_t timestamp_ms) {
    auto root = fs_root / "sys/class/powercap";
    std::vector<EnergyCounter> counters;
    if (!std::filesystem::directory_entry(root).exists()) return counters;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
        if (!entry.is_directory()) continue;
        std::string dir = entry.path().filename().string();
        if (!dir.starts_with("intel-rapl:")) continue;
        auto name = util::read_text_file(entry.path() / "name");
        if (!name) continue;
        std::string kind = util::trim(*name);
        RaplDomain domain;
        if (kind.starts_with("package"))
            domain = RaplDomain::cpu_package;
        else if (kind == "dram")
            domain = RaplDomain::dram;
        else
            continue;  // core/uncore/psys are not modelled
        auto socket = util::parse_int(util::split(dir.substr(11), ':')[0]);
        if (!socket) continue;
        auto energy = detail::read_number_file(entry.path() / "energy_uj");
        auto max_range = detail::read_number_file(entry.path() / "max_energy_range_uj");
        if (!energy || !max_range || !(*max_range > 0) || *energy < 0 || *energy > *max_range)
            continue;
        counters.push_back(
            {domain, static_cast<int>(*socket), *energy, *max_range, timestamp_ms});
    }
    std::sort(counters.begin(), counters.end(), [](const EnergyCounter& a, const EnergyCounter& b) {
        if (a.socket_index != b.socket_index) return a.socket_index < b.socket_index;
        return static_cast<int>(a.domain) < static_cast<int>(b.domain);
    });
    return counters;
}

// Difference of two reads of the same counter, unwrapping a single overflow
// of the counter's max range (scrape intervals are far below wrap periods).
inline double counter_delta(const EnergyCounter& prev, const EnergyCounter& curr) {
    if (prev.domain != curr.domain || prev.socket_index != curr.socket_index)
        throw ContractError("counter_delta across different domains/sockets");
    if (curr.timestamp_ms <= prev.timestamp_ms)
        throw ContractError("counter_delta requires curr after prev");
    double delta = curr.energy_microjoules - prev.energy_microjoules;
    if (delta < 0) delta += prev.max_range_microjoules;
    return delta;
}

inline std::optional<double> parse_ipmi_watts(std::string_view text) {
    // "Instantaneous power reading:     250 Watts"
    static constexpr std::string_view kNeedle = "Instantaneous power reading:";
    size_t pos = text.find(kNeedle);
    if (pos == std::string_view::npos) return std::nullopt;
    size_t i = pos + kNeedle.size();
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
    size_t digits = i;
    while (digits < text.size() && std::isdigit(static_cast<unsigned char>(text[digits]))) ++digits;
    if (digits == i) return std::nullopt;
    auto value = util::parse_int(text.substr(i, digits - i));
    size_t unit = digits;
    while (unit < text.size() && (text[unit] == ' ' || text[unit] == '\t')) ++unit;
    if (!value || text.substr(unit, 5) != "Watts") return std::nullopt;
    return static_cast<double>(*value);
}

// Node power via IPMI-DCMI. The underlying source (external command or a
// replay file) is invoked at most once per minimum interval; the cached
// result is served in between. IPMI is too slow for per-scrape invocation.
class IpmiPowerSource {
public:
    enum class Mode { command, file };

    struct Options {
        Mode mode = Mode::file;
        std::string command;          // command mode: run via shell, read stdout
        std::filesystem::path file;   // file mode: fixture/replay file
        int64_t min_interval_ms = 10'000;
        Clock clock = system_clock_ms();
    };

    explicit IpmiPowerSource(Options opts) : opts_(std::move(opts)) {}

    std::optional<NodePowerReading> read() {
        std::lock_guard<std::mutex> g(mutex_);
        int64_t now = opts_.clock();
        if (last_attempt_ms_ >= 0 && now - last_attempt_ms_ < opts_.min_interval_ms)
            return cached_;
        last_attempt_ms_ = now;
        ++invocations_;
        cached_.reset();
        if (auto text = fetch()) {
            if (auto watts = parse_ipmi_watts(*text)) cached_ = NodePowerReading{*watts, now};
        }
        return cached_;
    }

    int invocations() const { return invocations_; }

private:
    std::optional<std::string> fetch() {
        if (opts_.mode == Mode::file) return util::read_text_file(opts_.file);
        FILE* pipe = popen(opts_.command.c_str(), "r");
        if (!pipe) return std::nullopt;
        std::string out;
        char buf[512];
        size_t n;
        while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) out.append(buf, n);
        int rc = pclose(pipe);
        if (rc != 0) return std::nullopt;
        return out;
    }

    Options opts_;
    std::mutex mutex_;
    std::optional<NodePowerReading> cached_;
    int64_t last_attempt_ms_ = -1;
    int invocations_ = 0;
};

// Fixture rows: "workload_id gpu_index gpu_uuid". Duplicate
// (workload, index) pairs and malformed rows are dropped with a warning.
inline std::vector<GpuMapEntry> collect_gpu_map(const std::filesystem::path& map_file,
                                                CollectionStats* stats = nullptr) {
    std::vector<GpuMapEntry> entries;
    auto text = util::read_text_file(map_file);
    if (!text) return entries;
    for (const auto& line : util::split(*text, '\n')) {
        if (util::trim(line).empty()) continue;
        auto fields = util::split_ws(line);
        std::optional<int64_t> index;
        if (fields.size() == 3) index = util::parse_int(fields[1]);
        if (fields.size() != 3 || !index || *index < 0) {
            if (stats) ++stats->skipped;
            continue;
        }
        bool duplicate = false;
        for (const auto& e : entries)
            if (e.workload_id == fields[0] && e.gpu_index == *index) duplicate = true;
        if (duplicate) {
            if (stats) ++stats->skipped;
            continue;
        }
        entries.push_back({fields[0], static_cast<int>(*index), fields[2]});
    }
    return entries;
}

struct NodeTotals {
    double cpu_seconds = 0;  // cumulative busy time
    double memory_bytes = 0;
};

// Node totals from proc-style fixture files. Busy jiffies at USER_HZ=100;
// memory in use = MemTotal - MemAvailable.
inline std::optional<NodeTotals> read_node_totals(const std::filesystem::path& fs_root) {
    auto stat = util::read_text_file(fs_root / "proc/stat");
    auto meminfo = util::read_text_file(fs_root / "proc/meminfo");
    if (!stat || !meminfo) return std::nullopt;
    NodeTotals totals;
    bool have_cpu = false;
    for (const auto& line : util::split(*stat, '\n')) {
        auto fields = util::split_ws(line);
        if (fields.size() >= 8 && fields[0] == "cpu") {
            // user nice system idle iowait irq softirq steal -> busy excludes
            // idle and iowait
            double busy = 0;
            static const size_t busy_fields[] = {1, 2, 3, 6, 7, 8};
            for (size_t idx : busy_fields) {
                if (idx >= fields.size()) continue;
                auto v = util::parse_double(fields[idx]);
                if (!v) return std::nullopt;
                busy += *v;
            }
            totals.cpu_seconds = busy / 100.0;
            have_cpu = true;
            break;
        }
    }
    std::optional<double> mem_total, mem_avail;
    for (const auto& line : util::split(*meminfo, '\n')) {
        auto fields = util::split_ws(line);
        if (fields.size() >= 2 && fields[0] == "MemTotal:") mem_total = util::parse_double(fields[1]);
        if (fields.size() >= 2 && fields[0] == "MemAvailable:")
            mem_avail = util::parse_double(fields[1]);
    }
    if (!have_cpu || !mem_total || !mem_avail) return std::nullopt;
    totals.memory_bytes = (*mem_total - *mem_avail) * 1024.0;
    if (totals.memory_bytes < 0) totals.memory_bytes = 0;
    return totals;
}

}  // namespace wattline
