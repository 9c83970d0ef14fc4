#pragma once

// Deterministic synthetic-cluster generator. Produces, from a seeded spec:
//   - per-node fixture trees in the exporter's on-disk formats (cgroup,
//     powercap, proc, ipmi, gpu map) at the first scrape instant,
//   - a line-delimited JSON manifest carrying the full per-instant ground
//     truth (the same quantized values the fixture files go through, plus
//     per-job attributed watts), which the scrape driver replays and tests
//     use as their oracle,
//   - the accounting export the registry ingests.
//
// The forward model synthesizes node power from per-job activity, so the
// attribution pipeline can be checked against known shares. All file-format
// quantization (integer microseconds, jiffies, microjoules, watts) happens
// here once; the manifest stores the quantized values.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "wattline/attribution.hpp"
#include "wattline/mock_tsdb.hpp"
#include "wattline/store.hpp"
#include "wattline/util.hpp"

namespace wattline::sim {

struct ClusterSpec {
    int node_count = 4;
    int sockets_per_node = 2;
    int cores_per_node = 32;
    int memory_per_node_gib = 256;
    int job_rate_per_day = 100;
    double mean_job_duration_s = 600;
    double short_job_fraction = 0.1;
    int short_job_cutoff_s = 60;
    int user_count = 2;
    int project_count = 2;
    double gpu_job_fraction = 0.0;
    int gpus_per_node = 4;
    uint64_t seed = 42;
    int scrape_interval_s = 15;
    int64_t duration_s = 3600;
    int64_t start_ms = 1754006400000;  // 2026-08-01T00:00:00Z
    // group name -> profile; assigned to nodes round-robin in name order
    std::map<std::string, HardwareProfile> profiles = {{"intel", HardwareProfile{}}};

    void validate() const {
        if (node_count < 1 || sockets_per_node < 1 || cores_per_node < 1)
            throw ContractError("node shape fields must be positive");
        if (job_rate_per_day < 0) throw ContractError("job_rate_per_day must be >= 0");
        if (mean_job_duration_s <= 0) throw ContractError("mean_job_duration_s must be > 0");
        if (short_job_fraction < 0 || short_job_fraction > 1)
            throw ContractError("short_job_fraction must be in [0,1]");
        if (user_count < 1 || project_count < 1)
            throw ContractError("user_count and project_count must be >= 1");
        if (scrape_interval_s < 1 || duration_s < scrape_interval_s)
            throw ContractError("scrape interval/duration invalid");
        if (profiles.empty()) throw ContractError("at least one hardware profile group");
        for (const auto& [name, profile] : profiles) {
            profile.validate();
            if (profile.ipmi_includes_gpu)
                throw ContractError("gpu-inclusive IPMI profiles are not simulated");
        }
    }

    int instant_count() const {
        return static_cast<int>(duration_s / scrape_interval_s) + 1;
    }
    int64_t instant_ms(int i) const { return start_ms + int64_t(i) * scrape_interval_s * 1000; }
};

inline ClusterSpec load_cluster_spec(const std::filesystem::path& path) {
    YAML::Node root = YAML::LoadFile(path.string());
    ClusterSpec spec;
    static const std::set<std::string> known = {
        "node_count", "sockets_per_node", "cores_per_node", "memory_per_node_gib",
        "job_rate_per_day", "mean_job_duration_s", "short_job_fraction", "short_job_cutoff_s",
        "user_count", "project_count", "gpu_job_fraction", "gpus_per_node", "seed",
        "scrape_interval_s", "duration_s", "start_time", "profiles"};
    for (const auto& kv : root) {
        std::string key = kv.first.as<std::string>();
        if (!known.count(key)) throw std::runtime_error("unknown spec key: " + key);
    }
    auto get_int = [&](const char* key, auto fallback) {
        return root[key] ? root[key].as<int64_t>() : fallback;
    };
    spec.node_count = static_cast<int>(get_int("node_count", spec.node_count));
    spec.sockets_per_node = static_cast<int>(get_int("sockets_per_node", spec.sockets_per_node));
    spec.cores_per_node = static_cast<int>(get_int("cores_per_node", spec.cores_per_node));
    spec.memory_per_node_gib =
        static_cast<int>(get_int("memory_per_node_gib", spec.memory_per_node_gib));
    spec.job_rate_per_day = static_cast<int>(get_int("job_rate_per_day", spec.job_rate_per_day));
    if (root["mean_job_duration_s"])
        spec.mean_job_duration_s = root["mean_job_duration_s"].as<double>();
    if (root["short_job_fraction"])
        spec.short_job_fraction = root["short_job_fraction"].as<double>();
    spec.short_job_cutoff_s =
        static_cast<int>(get_int("short_job_cutoff_s", spec.short_job_cutoff_s));
    spec.user_count = static_cast<int>(get_int("user_count", spec.user_count));
    spec.project_count = static_cast<int>(get_int("project_count", spec.project_count));
    if (root["gpu_job_fraction"]) spec.gpu_job_fraction = root["gpu_job_fraction"].as<double>();
    spec.gpus_per_node = static_cast<int>(get_int("gpus_per_node", spec.gpus_per_node));
    spec.seed = root["seed"] ? root["seed"].as<uint64_t>() : spec.seed;
    spec.scrape_interval_s =
        static_cast<int>(get_int("scrape_interval_s", spec.scrape_interval_s));
    spec.duration_s = get_int("duration_s", spec.duration_s);
    if (root["start_time"]) {
        auto parsed = util::parse_iso8601_ms(root["start_time"].as<std::string>());
        if (!parsed) throw std::runtime_error("start_time must be ISO-8601");
        spec.start_ms = *parsed;
    }
    if (root["profiles"]) {
        spec.profiles.clear();
        for (const auto& kv : root["profiles"]) {
            HardwareProfile profile;
            profile.has_rapl_cpu = false;
            profile.has_rapl_dram = false;
            auto node = kv.second;
            if (node["rapl_domains"])
                for (const auto& d : node["rapl_domains"]) {
                    auto domain = rapl_domain_from_string(d.as<std::string>());
                    if (!domain) throw std::runtime_error("unknown rapl domain in spec");
                    if (*domain == RaplDomain::cpu_package) profile.has_rapl_cpu = true;
                    if (*domain == RaplDomain::dram) profile.has_rapl_dram = true;
                }
            if (node["network_fraction"])
                profile.network_fraction = node["network_fraction"].as<double>();
            if (node["storage_fraction"])
                profile.storage_fraction = node["storage_fraction"].as<double>();
            spec.profiles[kv.first.as<std::string>()] = profile;
        }
    }
    spec.validate();
    return spec;
}

// ---- manifest ---------------------------------------------------------------

struct JobTruth {
    std::string uuid;
    std::string node;
    std::string user;
    std::string project;
    int64_t start_ms = 0;
    int64_t end_ms = 0;      // may exceed the simulated window (job still running)
    bool running_at_end = false;
    bool short_job = false;
    int alloc_cpus = 0;
    int64_t alloc_memory_bytes = 0;
    std::vector<int> gpu_indices;
    double cpu_rate_cores = 0;   // model rate, constant while running
    int64_t memory_bytes = 0;    // model footprint, constant while running
    // quantized per-instant series over the exposed scrape instants
    std::vector<int64_t> t_ms;
    std::vector<int64_t> cpu_usec;     // cumulative, as written to cpu.stat
    std::vector<int64_t> mem_bytes;    // as written to memory.current
    // attributed watts for the interval ending at t_ms[k]; index 0 unused (no
    // preceding interval) and stored as 0
    std::vector<double> true_watts;
};

struct NodeTruth {
    std::string name;
    std::string group;
    HardwareProfile profile;
    std::vector<int64_t> t_ms;
    std::vector<int64_t> ipmi_watts;
    std::vector<int64_t> cpu_jiffies;      // cumulative busy jiffies (USER_HZ 100)
    std::vector<int64_t> mem_used_kb;
    // "domain:socket" -> cumulative microjoule counter per instant
    std::map<std::string, std::vector<int64_t>> rapl_uj;
    int64_t rapl_max_range_uj = 0;
    // residual watts not attributed to any job, per interval (index 0 unused)
    std::vector<double> idle_floor_watts;
};

struct TraceManifest {
    ClusterSpec spec;
    std::vector<JobTruth> jobs;
    std::vector<NodeTruth> nodes;
};

// ---- deterministic sampling -------------------------------------------------

namespace detail {

inline double unit_double(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);  // [0,1)
}

inline int64_t range_int(std::mt19937_64& rng, int64_t lo, int64_t hi) {  // inclusive
    return lo + static_cast<int64_t>(rng() % static_cast<uint64_t>(hi - lo + 1));
}

inline double exp_sample(std::mt19937_64& rng, double mean) {
    double u = unit_double(rng);
    return -mean * std::log(1.0 - u);
}

}  // namespace detail

// ---- generator ----------------------------------------------------------------

class ClusterGenerator {
public:
    explicit ClusterGenerator(ClusterSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

    TraceManifest generate() {
        std::mt19937_64 rng(spec_.seed);
        TraceManifest manifest;
        manifest.spec = spec_;
        manifest.nodes.resize(spec_.node_count);
        std::vector<std::string> groups;
        for (const auto& [name, _] : spec_.profiles) groups.push_back(name);
        for (int n = 0; n < spec_.node_count; ++n) {
            auto& node = manifest.nodes[n];
            node.name = node_name(n);
            node.group = groups[n % groups.size()];
            node.profile = spec_.profiles.at(node.group);
            node.rapl_max_range_uj = int64_t(1) << 62;
        }
        sample_jobs(rng, manifest);
        synthesize_series(rng, manifest);
        return manifest;
    }

    std::string node_name(int index) const {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "node-%03d", index);
        return buf;
    }

private:
    void sample_jobs(std::mt19937_64& rng, TraceManifest& manifest) {
        int64_t day_s = spec_.duration_s;
        int shorts = static_cast<int>(std::lround(spec_.short_job_fraction *
                                                  spec_.job_rate_per_day));
        for (int i = 0; i < spec_.job_rate_per_day; ++i) {
            JobTruth job;
            job.uuid = std::to_string(100000 + i);
            int node_idx = static_cast<int>(rng() % spec_.node_count);
            job.node = manifest.nodes[node_idx].name;
            job.user = "user" + std::to_string(rng() % spec_.user_count);
            job.project = "proj" + std::to_string(rng() % spec_.project_count);
            int64_t start_s = detail::range_int(rng, 0, day_s - 1);
            bool is_short = i < shorts;
            int64_t duration_s;
            if (is_short) {
                duration_s = detail::range_int(rng, 5, spec_.short_job_cutoff_s - 5);
            } else {
                duration_s = std::llround(detail::exp_sample(rng, spec_.mean_job_duration_s));
                int64_t floor = spec_.short_job_cutoff_s + 30;
                if (duration_s < floor) duration_s = floor;
                if (duration_s > 6 * 3600) duration_s = 6 * 3600;
            }
            job.start_ms = spec_.start_ms + start_s * 1000;
            job.end_ms = job.start_ms + duration_s * 1000;
            int64_t sim_end = spec_.start_ms + spec_.duration_s * 1000;
            job.running_at_end = job.end_ms > sim_end;
            // a job with no recorded end is not yet known to be short
            job.short_job = duration_s < spec_.short_job_cutoff_s && !job.running_at_end;
            job.alloc_cpus = static_cast<int>(detail::range_int(rng, 1, 8));
            job.alloc_memory_bytes = detail::range_int(rng, 1, 8) << 30;
            job.cpu_rate_cores = job.alloc_cpus * (0.2 + 0.75 * detail::unit_double(rng));
            job.memory_bytes = (job.alloc_memory_bytes / 16) * detail::range_int(rng, 4, 12);
            if (detail::unit_double(rng) < spec_.gpu_job_fraction) {
                int count = static_cast<int>(detail::range_int(rng, 1, 2));
                for (int g = 0; g < count && g < spec_.gpus_per_node; ++g)
                    job.gpu_indices.push_back(static_cast<int>(
                        detail::range_int(rng, 0, spec_.gpus_per_node - 1)));
                std::sort(job.gpu_indices.begin(), job.gpu_indices.end());
                job.gpu_indices.erase(
                    std::unique(job.gpu_indices.begin(), job.gpu_indices.end()),
                    job.gpu_indices.end());
            }
            manifest.jobs.push_back(std::move(job));
        }
    }

    // cumulative cpu microseconds of a job at wall time t
    static int64_t job_cpu_usec_at(const JobTruth& job, int64_t t_ms) {
        int64_t upto = std::min(t_ms, job.end_ms);
        if (upto <= job.start_ms) return 0;
        double elapsed_ms = static_cast<double>(upto - job.start_ms);
        return std::llround(job.cpu_rate_cores * elapsed_ms * 1000.0);
    }

    void synthesize_series(std::mt19937_64& rng, TraceManifest& manifest) {
        const int instants = spec_.instant_count();
        const double dt_s = spec_.scrape_interval_s;
        const int64_t os_baseline_bytes = int64_t(2) << 30;

        std::map<std::string, std::vector<size_t>> jobs_by_node;
        for (size_t j = 0; j < manifest.jobs.size(); ++j)
            jobs_by_node[manifest.jobs[j].node].push_back(j);

        for (auto& node : manifest.nodes) {
            const auto& job_indices = jobs_by_node[node.name];
            // per-socket random counter offsets for texture
            std::vector<std::string> domains;
            for (int s = 0; s < spec_.sockets_per_node; ++s) {
                if (node.profile.has_rapl_cpu)
                    domains.push_back("cpu_package:" + std::to_string(s));
                if (node.profile.has_rapl_dram) domains.push_back("dram:" + std::to_string(s));
            }
            std::map<std::string, int64_t> counters;
            for (const auto& d : domains)
                counters[d] = detail::range_int(rng, 0, int64_t(1) << 40);

            double busy_seconds = 0;  // cumulative node busy cpu time
            const double idle_rate = 0.08;

            for (int i = 0; i < instants; ++i) {
                int64_t t = spec_.instant_ms(i);
                int64_t t_prev = i > 0 ? spec_.instant_ms(i - 1) : t;
                node.t_ms.push_back(t);

                // activity during the interval (t_prev, t]
                double interval_core_seconds = 0;
                int64_t mem_now = 0;
                for (size_t j : job_indices) {
                    auto& job = manifest.jobs[j];
                    if (i > 0) {
                        int64_t d_us = job_cpu_usec_at(job, t) - job_cpu_usec_at(job, t_prev);
                        interval_core_seconds += static_cast<double>(d_us) / 1e6;
                    }
                    if (job.start_ms <= t && t < job.end_ms) mem_now += job.memory_bytes;
                }
                busy_seconds += interval_core_seconds + (i > 0 ? idle_rate * dt_s : 0.0);
                node.cpu_jiffies.push_back(std::llround(busy_seconds * 100.0));
                int64_t used_kb = (mem_now + os_baseline_bytes + 1023) / 1024;
                node.mem_used_kb.push_back(used_kb);

                // power model: node power follows CPU activity and memory
                double busy_rate = i > 0 ? interval_core_seconds / dt_s + idle_rate : idle_rate;
                double p_cpu = 35.0 * spec_.sockets_per_node + 11.0 * busy_rate;
                double p_dram = 6.0 * spec_.sockets_per_node +
                                1.5 * (static_cast<double>(mem_now) / double(int64_t(1) << 30));
                for (const auto& d : domains) {
                    bool is_dram = d.rfind("dram", 0) == 0;
                    double watts = (is_dram ? p_dram : p_cpu) / spec_.sockets_per_node;
                    if (i > 0) counters[d] += std::llround(watts * dt_s * 1e6);
                    node.rapl_uj[d].push_back(counters[d]);
                }
                node.ipmi_watts.push_back(
                    std::llround(1.22 * (p_cpu + p_dram) + 55.0));
            }

            // job exposure instants + quantized series
            for (size_t j : job_indices) {
                auto& job = manifest.jobs[j];
                for (int i = 0; i < instants; ++i) {
                    int64_t t = spec_.instant_ms(i);
                    if (job.start_ms <= t && t < job.end_ms) {
                        job.t_ms.push_back(t);
                        job.cpu_usec.push_back(job_cpu_usec_at(job, t));
                        job.mem_bytes.push_back(job.memory_bytes);
                        job.true_watts.push_back(0.0);  // filled below
                    }
                }
            }

            attribute_truth(node, manifest, job_indices);
        }
    }

    // Per-interval ground-truth attribution from the quantized series; the
    // same arithmetic the registry reconstructs from scraped data.
    void attribute_truth(NodeTruth& node, TraceManifest& manifest,
                         const std::vector<size_t>& job_indices) {
        const int instants = static_cast<int>(node.t_ms.size());
        node.idle_floor_watts.assign(instants, 0.0);

        for (int i = 1; i < instants; ++i) {
            int64_t t_prev = node.t_ms[i - 1];
            int64_t t = node.t_ms[i];
            double dt_s = static_cast<double>(t - t_prev) / 1000.0;

            NodeSnapshot snapshot;
            snapshot.timestamp_ms = t;
            snapshot.p_ipmi_watts = static_cast<double>(node.ipmi_watts[i]);
            snapshot.node_cpu_time_rate =
                static_cast<double>(node.cpu_jiffies[i] - node.cpu_jiffies[i - 1]) / 100.0 / dt_s;
            snapshot.node_memory_bytes = static_cast<double>(node.mem_used_kb[i]) * 1024.0;

            double rapl_cpu = 0, rapl_dram = 0;
            for (const auto& [domain, series] : node.rapl_uj) {
                double watts =
                    static_cast<double>(series[i] - series[i - 1]) / dt_s / 1e6;
                if (domain.rfind("dram", 0) == 0)
                    rapl_dram += watts;
                else
                    rapl_cpu += watts;
            }
            if (node.profile.has_rapl_cpu) snapshot.p_rapl_cpu_watts = rapl_cpu;
            if (node.profile.has_rapl_dram) snapshot.p_rapl_dram_watts = rapl_dram;

            std::vector<std::pair<size_t, size_t>> participating;  // (job idx, series pos)
            for (size_t j : job_indices) {
                auto& job = manifest.jobs[j];
                auto it = std::lower_bound(job.t_ms.begin(), job.t_ms.end(), t);
                if (it == job.t_ms.end() || *it != t) continue;
                size_t pos = static_cast<size_t>(it - job.t_ms.begin());
                if (pos == 0 || job.t_ms[pos - 1] != t_prev) continue;  // needs both ends
                WorkloadShare share;
                share.workload_id = job.uuid;
                share.cpu_time_rate =
                    static_cast<double>(job.cpu_usec[pos] - job.cpu_usec[pos - 1]) / 1e6 / dt_s;
                share.memory_bytes = static_cast<double>(job.mem_bytes[pos]);
                snapshot.workloads.push_back(std::move(share));
                participating.emplace_back(j, pos);
            }

            double attributed = 0;
            if (!snapshot.workloads.empty()) {
                HardwareProfile profile = node.profile;
                auto result = attribute_power(snapshot, profile);
                for (size_t k = 0; k < participating.size(); ++k) {
                    auto [j, pos] = participating[k];
                    manifest.jobs[j].true_watts[pos] = result.attributions[k].watts;
                    attributed += result.attributions[k].watts;
                }
            }
            node.idle_floor_watts[i] = snapshot.p_ipmi_watts - attributed;
        }
    }

    ClusterSpec spec_;
};

// ---- fixture tree writing -----------------------------------------------------

namespace detail {

struct NodeLiveState {
    std::set<std::string> live_jobs;
    std::string gpu_map;
    bool first = true;
};

inline void write_node_instant(const std::filesystem::path& node_root, const NodeTruth& node,
                               const TraceManifest& manifest,
                               const std::vector<size_t>& job_indices, int instant,
                               NodeLiveState* state) {
    int64_t t = node.t_ms[instant];
    util::write_text_file(node_root / "ipmi/dcmi_power",
                          "Instantaneous power reading:     " +
                              std::to_string(node.ipmi_watts[instant]) + " Watts\n");
    util::write_text_file(node_root / "proc/stat",
                          "cpu  " + std::to_string(node.cpu_jiffies[instant]) +
                              " 0 0 100000000 0 0 0 0 0 0\n");
    int64_t total_kb = int64_t(manifest.spec.memory_per_node_gib) * 1024 * 1024;
    util::write_text_file(node_root / "proc/meminfo",
                          "MemTotal:       " + std::to_string(total_kb) +
                              " kB\nMemAvailable:   " +
                              std::to_string(total_kb - node.mem_used_kb[instant]) + " kB\n");
    for (const auto& [domain, series] : node.rapl_uj) {
        auto parts = util::split(domain, ':');
        bool is_dram = parts[0] == "dram";
        std::filesystem::path dir =
            node_root / "sys/class/powercap" /
            (is_dram ? "intel-rapl:" + parts[1] + ":0" : "intel-rapl:" + parts[1]);
        util::write_text_file(dir / "energy_uj", std::to_string(series[instant]) + "\n");
    }
    // cgroup job dirs: create/update live jobs, drop ended ones; the gpu map
    // tracks the live gpu jobs
    std::set<std::string> now_live;
    std::string gpu_map;
    auto scope = node_root / "sys/fs/cgroup/system.slice/slurmstepd.scope";
    for (size_t j : job_indices) {
        const auto& job = manifest.jobs[j];
        auto it = std::lower_bound(job.t_ms.begin(), job.t_ms.end(), t);
        if (it == job.t_ms.end() || *it != t) continue;
        size_t pos = static_cast<size_t>(it - job.t_ms.begin());
        auto dir = scope / ("job_" + job.uuid);
        bool fresh = !state || state->first || !state->live_jobs.count(job.uuid);
        if (fresh) std::filesystem::create_directories(dir);
        util::write_text_file(dir / "cpu.stat",
                              "usage_usec " + std::to_string(job.cpu_usec[pos]) + "\n");
        util::write_text_file(dir / "memory.current",
                              std::to_string(job.mem_bytes[pos]) + "\n");
        now_live.insert(job.uuid);
        for (int idx : job.gpu_indices)
            gpu_map += job.uuid + " " + std::to_string(idx) + " GPU-" + job.uuid + "-" +
                       std::to_string(idx) + "\n";
    }
    if (state) {
        for (const auto& uuid : state->live_jobs)
            if (!now_live.count(uuid)) {
                std::error_code ec;
                std::filesystem::remove_all(scope / ("job_" + uuid), ec);
            }
        if (state->first || gpu_map != state->gpu_map)
            util::write_text_file(node_root / "gpu/workload_map", gpu_map);
        state->live_jobs = std::move(now_live);
        state->gpu_map = std::move(gpu_map);
        state->first = false;
    } else {
        util::write_text_file(node_root / "gpu/workload_map", gpu_map);
    }
}

}  // namespace detail

// Writes the initial fixture tree (first scrape instant) for every node plus
// static per-node files. The scrape driver advances the trees through later
// instants from the manifest.
inline void write_fixture_trees(const TraceManifest& manifest,
                                const std::filesystem::path& out_dir) {
    std::map<std::string, std::vector<size_t>> jobs_by_node;
    for (size_t j = 0; j < manifest.jobs.size(); ++j)
        jobs_by_node[manifest.jobs[j].node].push_back(j);
    for (const auto& node : manifest.nodes) {
        auto root = out_dir / "nodes" / node.name;
        std::filesystem::create_directories(root / "sys/fs/cgroup/system.slice/slurmstepd.scope");
        std::filesystem::create_directories(root / "proc");
        std::filesystem::create_directories(root / "ipmi");
        std::filesystem::create_directories(root / "gpu");
        for (const auto& [domain, _] : node.rapl_uj) {
            auto parts = util::split(domain, ':');
            bool is_dram = parts[0] == "dram";
            std::filesystem::path dir =
                root / "sys/class/powercap" /
                (is_dram ? "intel-rapl:" + parts[1] + ":0" : "intel-rapl:" + parts[1]);
            std::filesystem::create_directories(dir);
            util::write_text_file(dir / "name", is_dram ? "dram\n" : "package-" + parts[1] + "\n");
            util::write_text_file(dir / "max_energy_range_uj",
                                  std::to_string(node.rapl_max_range_uj) + "\n");
        }
        detail::write_node_instant(root, node, manifest, jobs_by_node[node.name], 0, nullptr);
    }
}

// ---- manifest serialization ---------------------------------------------------

inline nlohmann::json spec_json(const ClusterSpec& spec) {
    nlohmann::json profiles = nlohmann::json::object();
    for (const auto& [name, p] : spec.profiles) {
        nlohmann::json domains = nlohmann::json::array();
        if (p.has_rapl_cpu) domains.push_back("cpu_package");
        if (p.has_rapl_dram) domains.push_back("dram");
        profiles[name] = {{"rapl_domains", domains},
                          {"network_fraction", p.network_fraction},
                          {"storage_fraction", p.storage_fraction}};
    }
    return {
        {"type", "spec"},
        {"node_count", spec.node_count},
        {"sockets_per_node", spec.sockets_per_node},
        {"cores_per_node", spec.cores_per_node},
        {"memory_per_node_gib", spec.memory_per_node_gib},
        {"job_rate_per_day", spec.job_rate_per_day},
        {"mean_job_duration_s", spec.mean_job_duration_s},
        {"short_job_fraction", spec.short_job_fraction},
        {"short_job_cutoff_s", spec.short_job_cutoff_s},
        {"user_count", spec.user_count},
        {"project_count", spec.project_count},
        {"gpu_job_fraction", spec.gpu_job_fraction},
        {"gpus_per_node", spec.gpus_per_node},
        {"seed", spec.seed},
        {"scrape_interval_s", spec.scrape_interval_s},
        {"duration_s", spec.duration_s},
        {"start_ms", spec.start_ms},
        {"profiles", profiles},
    };
}

inline void write_manifest(const TraceManifest& manifest, const std::filesystem::path& path) {
    std::string out;
    out += spec_json(manifest.spec).dump() + "\n";
    for (const auto& node : manifest.nodes) {
        nlohmann::json rapl = nlohmann::json::object();
        for (const auto& [domain, series] : node.rapl_uj) rapl[domain] = series;
        nlohmann::json j = {
            {"type", "node_series"},
            {"node", node.name},
            {"group", node.group},
            {"rapl_max_range_uj", node.rapl_max_range_uj},
            {"t_ms", node.t_ms},
            {"ipmi_watts", node.ipmi_watts},
            {"cpu_jiffies", node.cpu_jiffies},
            {"mem_used_kb", node.mem_used_kb},
            {"rapl_uj", rapl},
            {"idle_floor_watts", node.idle_floor_watts},
        };
        out += j.dump() + "\n";
    }
    for (const auto& job : manifest.jobs) {
        nlohmann::json j = {
            {"type", "job"},
            {"uuid", job.uuid},
            {"node", job.node},
            {"user", job.user},
            {"project", job.project},
            {"start_ms", job.start_ms},
            {"end_ms", job.end_ms},
            {"running_at_end", job.running_at_end},
            {"short_job", job.short_job},
            {"alloc_cpus", job.alloc_cpus},
            {"alloc_memory_bytes", job.alloc_memory_bytes},
            {"gpu_indices", job.gpu_indices},
            {"cpu_rate_cores", job.cpu_rate_cores},
            {"memory_bytes", job.memory_bytes},
            {"t_ms", job.t_ms},
            {"cpu_usec", job.cpu_usec},
            {"mem_bytes", job.mem_bytes},
            {"true_watts", job.true_watts},
        };
        out += j.dump() + "\n";
    }
    util::write_text_file(path, out);
}

inline TraceManifest load_manifest(const std::filesystem::path& path) {
    auto text = util::read_text_file(path);
    if (!text) throw std::runtime_error("cannot read manifest: " + path.string());
    TraceManifest manifest;
    for (const auto& line : util::split(*text, '\n')) {
        if (util::trim(line).empty()) continue;
        auto j = nlohmann::json::parse(line);
        std::string type = j.value("type", "");
        if (type == "spec") {
            auto& spec = manifest.spec;
            spec.node_count = j["node_count"];
            spec.sockets_per_node = j["sockets_per_node"];
            spec.cores_per_node = j["cores_per_node"];
            spec.memory_per_node_gib = j["memory_per_node_gib"];
            spec.job_rate_per_day = j["job_rate_per_day"];
            spec.mean_job_duration_s = j["mean_job_duration_s"];
            spec.short_job_fraction = j["short_job_fraction"];
            spec.short_job_cutoff_s = j["short_job_cutoff_s"];
            spec.user_count = j["user_count"];
            spec.project_count = j["project_count"];
            spec.gpu_job_fraction = j["gpu_job_fraction"];
            spec.gpus_per_node = j["gpus_per_node"];
            spec.seed = j["seed"];
            spec.scrape_interval_s = j["scrape_interval_s"];
            spec.duration_s = j["duration_s"];
            spec.start_ms = j["start_ms"];
            spec.profiles.clear();
            for (const auto& [name, p] : j["profiles"].items()) {
                HardwareProfile profile;
                profile.has_rapl_cpu = false;
                profile.has_rapl_dram = false;
                for (const auto& d : p["rapl_domains"]) {
                    if (d == "cpu_package") profile.has_rapl_cpu = true;
                    if (d == "dram") profile.has_rapl_dram = true;
                }
                profile.network_fraction = p["network_fraction"];
                profile.storage_fraction = p["storage_fraction"];
                spec.profiles[name] = profile;
            }
        } else if (type == "node_series") {
            NodeTruth node;
            node.name = j["node"];
            node.group = j["group"];
            node.rapl_max_range_uj = j["rapl_max_range_uj"];
            node.t_ms = j["t_ms"].get<std::vector<int64_t>>();
            node.ipmi_watts = j["ipmi_watts"].get<std::vector<int64_t>>();
            node.cpu_jiffies = j["cpu_jiffies"].get<std::vector<int64_t>>();
            node.mem_used_kb = j["mem_used_kb"].get<std::vector<int64_t>>();
            for (const auto& [domain, series] : j["rapl_uj"].items())
                node.rapl_uj[domain] = series.get<std::vector<int64_t>>();
            node.idle_floor_watts = j["idle_floor_watts"].get<std::vector<double>>();
            manifest.nodes.push_back(std::move(node));
        } else if (type == "job") {
            JobTruth job;
            job.uuid = j["uuid"];
            job.node = j["node"];
            job.user = j["user"];
            job.project = j["project"];
            job.start_ms = j["start_ms"];
            job.end_ms = j["end_ms"];
            job.running_at_end = j["running_at_end"];
            job.short_job = j["short_job"];
            job.alloc_cpus = j["alloc_cpus"];
            job.alloc_memory_bytes = j["alloc_memory_bytes"];
            job.gpu_indices = j["gpu_indices"].get<std::vector<int>>();
            job.cpu_rate_cores = j["cpu_rate_cores"];
            job.memory_bytes = j["memory_bytes"];
            job.t_ms = j["t_ms"].get<std::vector<int64_t>>();
            job.cpu_usec = j["cpu_usec"].get<std::vector<int64_t>>();
            job.mem_bytes = j["mem_bytes"].get<std::vector<int64_t>>();
            job.true_watts = j["true_watts"].get<std::vector<double>>();
            manifest.jobs.push_back(std::move(job));
        }
    }
    for (auto& node : manifest.nodes)
        if (manifest.spec.profiles.count(node.group))
            node.profile = manifest.spec.profiles.at(node.group);
    return manifest;
}

// accounting export in the sacct-style format the registry ingests; jobs
// still running at the end of the window have an empty end field
inline std::string accounting_export(const TraceManifest& manifest) {
    std::string out;
    for (const auto& job : manifest.jobs) {
        std::string gpus;
        for (size_t i = 0; i < job.gpu_indices.size(); ++i) {
            if (i) gpus += ",";
            gpus += std::to_string(job.gpu_indices[i]);
        }
        out += job.uuid + "|" + job.user + "|" + job.project + "|" +
               util::format_iso8601(job.start_ms) + "|" +
               (job.running_at_end ? "" : util::format_iso8601(job.end_ms)) + "|" +
               std::to_string(job.alloc_cpus) + "|" + std::to_string(job.alloc_memory_bytes) +
               "|" + gpus + "\n";
    }
    return out;
}

// generate + write everything under out_dir; same seed, byte-identical output
inline TraceManifest generate_cluster(const ClusterSpec& spec,
                                      const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    ClusterGenerator generator(spec);
    auto manifest = generator.generate();
    write_fixture_trees(manifest, out_dir);
    write_manifest(manifest, out_dir / "manifest.jsonl");
    util::write_text_file(out_dir / "accounting.psv", accounting_export(manifest));
    return manifest;
}

// loads manifest ground-truth series into a mock TSDB (per-job counters and
// gauges plus the attributed watt series), for gate/no-leak harnesses
inline void manifest_to_tsdb(const TraceManifest& manifest, MockTsdb& tsdb) {
    for (const auto& job : manifest.jobs) {
        LabelSet labels{{"workload_id", job.uuid}, {"instance", job.node}, {"user", job.user}};
        for (size_t k = 0; k < job.t_ms.size(); ++k) {
            tsdb.push_sample("wattline_cpu_seconds_total", labels, job.t_ms[k],
                             static_cast<double>(job.cpu_usec[k]) / 1e6);
            tsdb.push_sample("wattline_memory_bytes", labels, job.t_ms[k],
                             static_cast<double>(job.mem_bytes[k]));
            if (k > 0)
                tsdb.push_sample("wattline_workload_power_watts", labels, job.t_ms[k],
                                 job.true_watts[k]);
        }
    }
    for (const auto& node : manifest.nodes) {
        LabelSet labels{{"instance", node.name}};
        for (size_t k = 0; k < node.t_ms.size(); ++k)
            tsdb.push_sample("wattline_node_power_watts", labels, node.t_ms[k],
                             static_cast<double>(node.ipmi_watts[k]));
    }
}

}  // namespace wattline::sim
