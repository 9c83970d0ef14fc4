#pragma once

// Splits measured node power among the workloads running on the node and
// integrates the resulting power series to energy. The split distributes the
// serviceable node power between a CPU term (weighted by the RAPL package
// share and the workload's CPU-time share) and a DRAM term (weighted by the
// RAPL dram share and the workload's memory share), plus an equal per-job
// network share. Whatever the shares do not cover stays unattributed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wattline/metrics.hpp"
#include "wattline/util.hpp"

namespace wattline {

enum class RaplDomain { cpu_package, dram };

inline std::string_view to_string(RaplDomain d) {
    return d == RaplDomain::cpu_package ? "cpu_package" : "dram";
}

inline std::optional<RaplDomain> rapl_domain_from_string(std::string_view s) {
    if (s == "cpu_package") return RaplDomain::cpu_package;
    if (s == "dram") return RaplDomain::dram;
    return std::nullopt;
}

// Which power sources a node group has and how the split is specialized.
struct HardwareProfile {
    bool has_rapl_cpu = true;
    bool has_rapl_dram = true;
    bool ipmi_includes_gpu = false;
    double network_fraction = 0.10;
    double storage_fraction = 0.0;

    void validate() const {
        if (network_fraction < 0 || network_fraction >= 1)
            throw ContractError("network_fraction must be in [0,1)");
        if (storage_fraction < 0 || storage_fraction >= 1)
            throw ContractError("storage_fraction must be in [0,1)");
        if (network_fraction + storage_fraction >= 1)
            throw ContractError("network_fraction + storage_fraction must be < 1");
    }
};

struct WorkloadShare {
    std::string workload_id;
    double cpu_time_rate = 0;  // cores of CPU time per second
    double memory_bytes = 0;
};

// Everything measured on one node at one instant.
struct NodeSnapshot {
    int64_t timestamp_ms = 0;
    double p_ipmi_watts = 0;
    std::optional<double> p_rapl_cpu_watts;
    std::optional<double> p_rapl_dram_watts;
    std::optional<double> p_gpu_watts;
    double node_cpu_time_rate = 0;
    double node_memory_bytes = 0;
    std::vector<WorkloadShare> workloads;

    void validate() const {
        auto check = [](double v, const char* what) {
            if (!(v >= 0) || !std::isfinite(v))
                throw ContractError(std::string("negative or non-finite ") + what);
        };
        check(p_ipmi_watts, "p_ipmi_watts");
        if (p_rapl_cpu_watts) check(*p_rapl_cpu_watts, "p_rapl_cpu_watts");
        if (p_rapl_dram_watts) check(*p_rapl_dram_watts, "p_rapl_dram_watts");
        if (p_gpu_watts) check(*p_gpu_watts, "p_gpu_watts");
        check(node_cpu_time_rate, "node_cpu_time_rate");
        check(node_memory_bytes, "node_memory_bytes");
        double sum_t = 0, sum_m = 0;
        for (const auto& w : workloads) {
            if (w.workload_id.empty()) throw ContractError("workload_id empty in snapshot");
            check(w.cpu_time_rate, "workload cpu_time_rate");
            check(w.memory_bytes, "workload memory_bytes");
            sum_t += w.cpu_time_rate;
            sum_m += w.memory_bytes;
        }
        const double eps = 1e-6;
        if (sum_t > node_cpu_time_rate * (1 + eps) + 1e-12)
            throw ContractError("workload cpu time exceeds node total");
        if (sum_m > node_memory_bytes * (1 + eps) + 1e-12)
            throw ContractError("workload memory exceeds node total");
    }
};

struct AttributedPower {
    std::string workload_id;
    double watts = 0;
    double cpu_watts = 0;
    double dram_watts = 0;
    double network_watts = 0;
};

struct AttributionResult {
    std::vector<AttributedPower> attributions;
    // power not covered by any workload share (idle floor, storage fraction)
    double unattributed_watts = 0;
};

inline AttributionResult attribute_power(const NodeSnapshot& snapshot,
                                         const HardwareProfile& profile) {
    profile.validate();
    snapshot.validate();
    if (profile.has_rapl_cpu != snapshot.p_rapl_cpu_watts.has_value() ||
        profile.has_rapl_dram != snapshot.p_rapl_dram_watts.has_value())
        throw ContractError("profile/snapshot RAPL domain mismatch");
    if (profile.ipmi_includes_gpu && !snapshot.p_gpu_watts.has_value())
        throw ContractError("profile expects GPU power but snapshot carries none");

    double p_base = snapshot.p_ipmi_watts;
    if (profile.ipmi_includes_gpu) p_base = std::max(0.0, p_base - *snapshot.p_gpu_watts);
    const double serviceable =
        (1.0 - profile.network_fraction - profile.storage_fraction) * p_base;
    const size_t n_jobs = snapshot.workloads.size();

    AttributionResult result;
    if (n_jobs == 0) {
        result.unattributed_watts = p_base;
        return result;
    }

    const double rapl_cpu = snapshot.p_rapl_cpu_watts.value_or(0.0);
    const double rapl_dram = snapshot.p_rapl_dram_watts.value_or(0.0);
    const double rapl_sum = rapl_cpu + rapl_dram;
    // Degenerate RAPL split (dram domain absent or both counters zero):
    // the whole serviceable power goes through the CPU-time share.
    const bool split_by_rapl = profile.has_rapl_cpu && profile.has_rapl_dram && rapl_sum > 0;
    const double cpu_fraction = split_by_rapl ? rapl_cpu / rapl_sum : 1.0;
    const double dram_fraction = split_by_rapl ? rapl_dram / rapl_sum : 0.0;

    const double network_per_job = profile.network_fraction * p_base / static_cast<double>(n_jobs);
    double attributed_sum = 0;
    result.attributions.reserve(n_jobs);
    for (const auto& w : snapshot.workloads) {
        AttributedPower a;
        a.workload_id = w.workload_id;
        if (snapshot.node_cpu_time_rate > 0)
            a.cpu_watts = serviceable * cpu_fraction * (w.cpu_time_rate / snapshot.node_cpu_time_rate);
        if (snapshot.node_memory_bytes > 0)
            a.dram_watts = serviceable * dram_fraction * (w.memory_bytes / snapshot.node_memory_bytes);
        a.network_watts = network_per_job;
        a.watts = a.cpu_watts + a.dram_watts + a.network_watts;
        attributed_sum += a.watts;
        result.attributions.push_back(std::move(a));
    }
    result.unattributed_watts = std::max(0.0, p_base - attributed_sum);
    return result;
}

struct EnergyTotals {
    double joules = 0;
    double kwh = 0;
};

// Trapezoidal rule over a watts series; exact for piecewise-linear power.
inline EnergyTotals integrate_energy(const TimeSeries& series) {
    const auto& pts = series.points();
    for (const auto& [ts, w] : pts)
        if (!(w >= 0) || std::isnan(w))
            throw ContractError("negative power value in energy integration");
    EnergyTotals totals;
    if (pts.size() < 2) return totals;
    for (size_t i = 1; i < pts.size(); ++i) {
        double dt_s = static_cast<double>(pts[i].first - pts[i - 1].first) / 1000.0;
        totals.joules += 0.5 * (pts[i].second + pts[i - 1].second) * dt_s;
    }
    totals.kwh = totals.joules / 3.6e6;
    return totals;
}

// --- recording-rule generation ---------------------------------------------

// Role -> metric family name used when expanding the rule templates.
using RuleNaming = std::map<std::string, std::string>;

inline RuleNaming default_rule_naming() {
    return {
        {"ipmi_power", "wattline_node_power_watts"},
        {"rapl_energy", "wattline_rapl_energy_microjoules_total"},
        {"workload_cpu", "wattline_cpu_seconds_total"},
        {"node_cpu", "wattline_node_cpu_seconds_total"},
        {"workload_memory", "wattline_memory_bytes"},
        {"node_memory", "wattline_node_memory_bytes"},
        {"gpu_power", "wattline_gpu_power_watts"},
    };
}

struct RuleGenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline const std::string& rule_name(const RuleNaming& naming, const std::string& role) {
    auto it = naming.find(role);
    if (it == naming.end() || it->second.empty())
        throw RuleGenerationError("naming map missing required family for role '" + role + "'");
    return it->second;
}

}  // namespace detail

// Emits a TSDB rule group (groups -> rules -> record/expr) that materializes
// the per-workload power split over the exporter's families: rate() over the
// CPU-seconds counters for the time shares, instantaneous gauges for the
// memory shares, an equal split of the network fraction.
inline std::string generate_rule_expression(const HardwareProfile& profile,
                                            const RuleNaming& naming = default_rule_naming()) {
    profile.validate();
    const std::string ipmi = detail::rule_name(naming, "ipmi_power");
    const std::string workload_cpu = detail::rule_name(naming, "workload_cpu");
    const std::string node_cpu = detail::rule_name(naming, "node_cpu");
    const std::string serviceable = util::format_double(
        1.0 - profile.network_fraction - profile.storage_fraction);
    const std::string network = util::format_double(profile.network_fraction);

    std::string base = ipmi + "{source=\"ipmi_dcmi\"}";
    if (profile.ipmi_includes_gpu) {
        const std::string gpu = detail::rule_name(naming, "gpu_power");
        base = "(" + base + " - on(instance) sum by (instance) (" + gpu + "))";
    }

    const std::string cpu_share = "(rate(" + workload_cpu +
                                  "[2m]) / on(instance) group_left() rate(" + node_cpu + "[2m]))";
    const std::string per_job_network = "(" + network + " * " + base +
                                        " / on(instance) group_left() count by (instance) (" +
                                        workload_cpu + "))";

    std::string expr;
    if (profile.has_rapl_cpu && profile.has_rapl_dram) {
        const std::string rapl = detail::rule_name(naming, "rapl_energy");
        const std::string workload_mem = detail::rule_name(naming, "workload_memory");
        const std::string node_mem = detail::rule_name(naming, "node_memory");
        const std::string rapl_cpu =
            "sum by (instance) (rate(" + rapl + "{domain=\"cpu_package\"}[2m]))";
        const std::string rapl_dram =
            "sum by (instance) (rate(" + rapl + "{domain=\"dram\"}[2m]))";
        const std::string rapl_sum = "(" + rapl_cpu + " + " + rapl_dram + ")";
        const std::string mem_share =
            "(" + workload_mem + " / on(instance) group_left() " + node_mem + ")";
        expr = "  " + serviceable + " * " + base + " * on(instance) group_left() (" + rapl_cpu +
               " / " + rapl_sum + ")\n" + "  * " + cpu_share + "\n" + "+ " + serviceable + " * " +
               base + " * on(instance) group_left() (" + rapl_dram + " / " + rapl_sum + ")\n" +
               "  * " + mem_share + "\n" + "+ " + per_job_network;
    } else {
        // single-domain (or no-dram) node group: the whole serviceable power
        // follows the CPU-time share
        expr = "  " + serviceable + " * " + base + " * " + cpu_share + "\n+ " + per_job_network;
    }

    std::string out;
    out += "groups:\n";
    out += "  - name: wattline-power-attribution\n";
    out += "    rules:\n";
    out += "      - record: wattline:workload_power_watts\n";
    out += "        expr: |\n";
    size_t pos = 0;
    while (pos <= expr.size()) {
        size_t nl = expr.find('\n', pos);
        std::string line = nl == std::string::npos ? expr.substr(pos) : expr.substr(pos, nl - pos);
        out += "          " + line + "\n";
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    return out;
}

}  // namespace wattline
