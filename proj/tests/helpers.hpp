#pragma once

// Shared test scaffolding: self-cleaning temp dirs and node fixture writers.

#include <filesystem>
#include <random>
#include <string>

#include "wattline/util.hpp"

namespace testutil {

class TempDir {
public:
    TempDir() {
        auto base = std::filesystem::temp_directory_path();
        std::mt19937_64 rng(std::random_device{}());
        path_ = base / ("wattline-test-" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, std::string_view content) {
    std::filesystem::create_directories(p.parent_path());
    wattline::util::write_text_file(p, content);
}

inline void write_job_cgroup(const std::filesystem::path& fs_root, const std::string& job_id,
                             int64_t usage_usec, int64_t memory_bytes) {
    auto dir = fs_root / "sys/fs/cgroup/system.slice/slurmstepd.scope" / ("job_" + job_id);
    write_file(dir / "cpu.stat", "usage_usec " + std::to_string(usage_usec) + "\n");
    write_file(dir / "memory.current", std::to_string(memory_bytes) + "\n");
}

inline void write_rapl_domain(const std::filesystem::path& fs_root, const std::string& dir_name,
                              const std::string& name, int64_t energy_uj,
                              int64_t max_range_uj = 262143328850) {
    auto dir = fs_root / "sys/class/powercap" / dir_name;
    write_file(dir / "name", name + "\n");
    write_file(dir / "energy_uj", std::to_string(energy_uj) + "\n");
    write_file(dir / "max_energy_range_uj", std::to_string(max_range_uj) + "\n");
}

inline void write_proc_totals(const std::filesystem::path& fs_root, int64_t busy_jiffies,
                              int64_t mem_total_kb, int64_t mem_available_kb) {
    write_file(fs_root / "proc/stat",
               "cpu  " + std::to_string(busy_jiffies) + " 0 0 1000000 0 0 0 0 0 0\n");
    write_file(fs_root / "proc/meminfo", "MemTotal:       " + std::to_string(mem_total_kb) +
                                             " kB\nMemAvailable:   " +
                                             std::to_string(mem_available_kb) + " kB\n");
}

inline void write_ipmi_power(const std::filesystem::path& fs_root, int watts) {
    write_file(fs_root / "ipmi/dcmi_power", "Instantaneous power reading:     " +
                                                std::to_string(watts) + " Watts\n");
}

}  // namespace testutil
