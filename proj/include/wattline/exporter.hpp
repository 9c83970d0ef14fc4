#pragma once

// The per-node exporter: assembles enabled collectors into one exposition
// snapshot and serves it over HTTP. A failing collector degrades to its
// *_collector_success 0 flag; a scrape never returns a 500 for partial
// failure.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "wattline/collectors.hpp"
#include "wattline/metrics.hpp"
#include "wattline/service.hpp"

namespace wattline {

struct ExporterOptions {
    std::filesystem::path fs_root;
    bool collect_cgroup = true;
    bool collect_rapl = true;
    bool collect_ipmi = true;
    bool collect_gpumap = true;
    CgroupLayout layout = CgroupLayout::slurm;
    std::optional<IpmiPowerSource::Options> ipmi_source;  // default: file replay under fs_root
    std::optional<BasicAuthCredentials> auth;
    Clock clock = system_clock_ms();
};

class Exporter {
public:
    explicit Exporter(ExporterOptions opts) : opts_(std::move(opts)) {
        auto ipmi_opts = opts_.ipmi_source.value_or(IpmiPowerSource::Options{
            .mode = IpmiPowerSource::Mode::file, .file = opts_.fs_root / "ipmi/dcmi_power"});
        ipmi_opts.clock = opts_.clock;
        ipmi_ = std::make_unique<IpmiPowerSource>(std::move(ipmi_opts));
    }

    // One atomic snapshot of every enabled collector.
    std::vector<MetricFamily> collect() {
        std::vector<MetricFamily> families;
        int64_t now = opts_.clock();
        if (opts_.collect_cgroup) collect_cgroup(families, now);
        if (opts_.collect_rapl) collect_rapl(families, now);
        if (opts_.collect_ipmi) collect_ipmi(families);
        if (opts_.collect_gpumap) collect_gpumap(families);
        return families;
    }

    std::string scrape() { return render_exposition(collect()); }

    void register_routes(httplib::Server& server) {
        server.Get("/metrics", [this](const httplib::Request& req, httplib::Response& res) {
            if (opts_.auth && !check_basic_auth(req, *opts_.auth)) {
                respond_unauthorized(res);
                return;
            }
            res.set_content(scrape(), "text/plain; version=0.0.4");
        });
        server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("ok", "text/plain");
        });
    }

    IpmiPowerSource& ipmi_source() { return *ipmi_; }

private:
    static MetricFamily success_family(const std::string& collector, bool ok) {
        MetricFamily f("wattline_" + collector + "_collector_success", MetricKind::gauge,
                       "Whether the " + collector + " collector succeeded.");
        f.add(ok ? 1.0 : 0.0);
        return f;
    }

    void collect_cgroup(std::vector<MetricFamily>& out, int64_t now) {
        MetricFamily cpu("wattline_cpu_seconds_total", MetricKind::counter,
                         "Cumulative CPU time of each workload.");
        MetricFamily mem("wattline_memory_bytes", MetricKind::gauge,
                         "Current memory usage of each workload.");
        MetricFamily node_cpu("wattline_node_cpu_seconds_total", MetricKind::counter,
                              "Cumulative busy CPU time of the node.");
        MetricFamily node_mem("wattline_node_memory_bytes", MetricKind::gauge,
                              "Memory in use on the node.");
        bool ok = true;
        try {
            CollectionStats stats;
            for (const auto& s :
                 collect_cgroup_usage(opts_.fs_root, opts_.layout, now, &stats)) {
                cpu.add(s.cpu_time_seconds, LabelSet{{"workload_id", s.workload_id}});
                mem.add(s.memory_bytes, LabelSet{{"workload_id", s.workload_id}});
            }
            if (auto totals = read_node_totals(opts_.fs_root)) {
                node_cpu.add(totals->cpu_seconds);
                node_mem.add(totals->memory_bytes);
            } else {
                ok = false;
            }
        } catch (const std::exception&) {
            ok = false;
        }
        out.push_back(std::move(cpu));
        out.push_back(std::move(mem));
        out.push_back(std::move(node_cpu));
        out.push_back(std::move(node_mem));
        out.push_back(success_family("cgroup", ok));
    }

    void collect_rapl(std::vector<MetricFamily>& out, int64_t now) {
        MetricFamily energy("wattline_rapl_energy_microjoules_total", MetricKind::counter,
                            "RAPL energy counter per domain and socket.");
        MetricFamily available("wattline_rapl_available", MetricKind::gauge,
                               "Whether RAPL counters are present on this node.");
        bool ok = true;
        size_t count = 0;
        try {
            for (const auto& c : read_energy_counters(opts_.fs_root, now)) {
                energy.add(c.energy_microjoules,
                           LabelSet{{"domain", std::string(to_string(c.domain))},
                                    {"socket", std::to_string(c.socket_index)}});
                ++count;
            }
        } catch (const std::exception&) {
            ok = false;
        }
        available.add(count > 0 ? 1.0 : 0.0);
        out.push_back(std::move(energy));
        out.push_back(std::move(available));
        out.push_back(success_family("rapl", ok));
    }

    void collect_ipmi(std::vector<MetricFamily>& out) {
        MetricFamily power("wattline_node_power_watts", MetricKind::gauge,
                           "Instantaneous whole-node power.");
        MetricFamily available("wattline_ipmi_available", MetricKind::gauge,
                               "Whether the IPMI power reading is current.");
        auto reading = ipmi_->read();
        if (reading) power.add(reading->watts, LabelSet{{"source", "ipmi_dcmi"}});
        available.add(reading ? 1.0 : 0.0);
        out.push_back(std::move(power));
        out.push_back(std::move(available));
        out.push_back(success_family("ipmi", reading.has_value()));
    }

    void collect_gpumap(std::vector<MetricFamily>& out) {
        MetricFamily map("wattline_workload_gpu", MetricKind::gauge,
                         "Map of workload id to GPU index and UUID.");
        bool ok = true;
        try {
            for (const auto& e : collect_gpu_map(opts_.fs_root / "gpu/workload_map")) {
                map.add(1.0, LabelSet{{"workload_id", e.workload_id},
                                      {"gpu_index", std::to_string(e.gpu_index)},
                                      {"gpu_uuid", e.gpu_uuid}});
            }
        } catch (const std::exception&) {
            ok = false;
        }
        out.push_back(std::move(map));
        out.push_back(success_family("gpumap", ok));
    }

    ExporterOptions opts_;
    std::unique_ptr<IpmiPowerSource> ipmi_;
};

}  // namespace wattline
