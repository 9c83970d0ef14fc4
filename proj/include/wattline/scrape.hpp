#pragma once

// Scrape driver: polls every exporter endpoint each cycle, parses the
// exposition payload, stamps samples with the cycle timestamp and an
// instance label, and pushes them into the mock TSDB. In replay mode a
// fixture advancer moves every node's on-disk tree to the next simulated
// instant before the cycle runs, so a full day replays as fast as the
// machine allows. One endpoint being down is recorded and never stalls the
// other targets.

#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "wattline/metrics.hpp"
#include "wattline/sim.hpp"
#include "wattline/util.hpp"

namespace wattline::sim {

struct ScrapeTarget {
    std::string instance;  // value of the instance label
    std::string host;
    int port = 0;
};

struct ScrapeReport {
    int cycles = 0;
    int64_t scrapes_attempted = 0;
    int64_t scrapes_failed = 0;
    int64_t samples_pushed = 0;
    int64_t parse_errors = 0;
    int64_t roundtrip_failures = 0;
    double max_scrape_ms = 0;
    double total_scrape_ms = 0;

    double mean_scrape_ms() const {
        return scrapes_attempted ? total_scrape_ms / static_cast<double>(scrapes_attempted) : 0;
    }
};

// targets file: one "instance url" row per exporter
inline std::vector<ScrapeTarget> load_targets(const std::filesystem::path& path) {
    auto text = util::read_text_file(path);
    if (!text) throw std::runtime_error("cannot read targets file: " + path.string());
    std::vector<ScrapeTarget> targets;
    for (const auto& line : util::split(*text, '\n')) {
        auto fields = util::split_ws(line);
        if (fields.empty() || fields[0][0] == '#') continue;
        if (fields.size() != 2) throw std::runtime_error("targets row must be 'instance url'");
        std::string url = fields[1];
        size_t scheme = url.find("://");
        std::string hostport = scheme == std::string::npos ? url : url.substr(scheme + 3);
        size_t slash = hostport.find('/');
        if (slash != std::string::npos) hostport = hostport.substr(0, slash);
        size_t colon = hostport.rfind(':');
        if (colon == std::string::npos) throw std::runtime_error("target url needs a port");
        auto port = util::parse_int(hostport.substr(colon + 1));
        if (!port) throw std::runtime_error("bad port in target url");
        targets.push_back(
            {fields[0], hostport.substr(0, colon), static_cast<int>(*port)});
    }
    return targets;
}

// Advances per-node fixture trees through the manifest's instants.
class FixtureAdvancer {
public:
    FixtureAdvancer(const TraceManifest& manifest, std::filesystem::path fixtures_dir)
        : manifest_(manifest), fixtures_dir_(std::move(fixtures_dir)) {
        for (const auto& node : manifest_.nodes) jobs_by_node_[node.name];
        for (size_t j = 0; j < manifest_.jobs.size(); ++j)
            jobs_by_node_[manifest_.jobs[j].node].push_back(j);
        state_.resize(manifest_.nodes.size());
        for (size_t n = 0; n < manifest_.nodes.size(); ++n)
            node_index_[manifest_.nodes[n].name] = n;
    }

    int instants() const { return static_cast<int>(manifest_.spec.instant_count()); }
    int64_t instant_ms(int i) const { return manifest_.spec.instant_ms(i); }

    // One driver worker owns one node's tree, so per-node state needs no lock.
    void advance(const std::string& instance, int instant) {
        auto it = node_index_.find(instance);
        if (it == node_index_.end()) return;  // target not simulated
        const auto& node = manifest_.nodes[it->second];
        detail::write_node_instant(fixtures_dir_ / "nodes" / node.name, node, manifest_,
                                   jobs_by_node_.at(node.name), instant,
                                   &live_jobs_[it->second]);
    }

private:
    const TraceManifest& manifest_;
    std::filesystem::path fixtures_dir_;
    std::map<std::string, std::vector<size_t>> jobs_by_node_;
    std::map<std::string, size_t> node_index_;
    std::vector<std::set<std::string>> live_jobs_;
};

class ScrapeDriver {
public:
    struct Options {
        std::vector<ScrapeTarget> targets;
        std::string tsdb_push_host;  // admin listener host
        int tsdb_push_port = 0;
        int interval_s = 15;
        bool verify_roundtrip = false;
        // replay mode: advance fixtures per (node index, instant) and stamp
        // samples with simulated time
        FixtureAdvancer* advancer = nullptr;
        // live mode sleeps interval_s between cycles; replay mode never sleeps
        bool live_pacing = false;
        Clock clock = system_clock_ms();
    };

    explicit ScrapeDriver(Options opts) : opts_(std::move(opts)) {}

    // Runs the given number of cycles (replay mode derives it from the
    // manifest when cycles < 0).
    ScrapeReport run(int cycles = -1) {
        if (cycles < 0 && opts_.advancer) cycles = opts_.advancer->instants();
        if (cycles < 0) throw ContractError("cycle count required without a fixture advancer");
        ScrapeReport report;
        size_t n = opts_.targets.size();
        std::vector<std::thread> workers;
        std::vector<ScrapeReport> worker_reports(n);
        // one worker per target; targets advance their own node's fixtures,
        // so they never contend and an endpoint being down stays isolated
        for (size_t w = 0; w < n; ++w) {
            workers.emplace_back([this, w, cycles, &worker_reports] {
                run_worker(w, cycles, worker_reports[w]);
            });
        }
        for (auto& t : workers) t.join();
        for (const auto& r : worker_reports) {
            report.scrapes_attempted += r.scrapes_attempted;
            report.scrapes_failed += r.scrapes_failed;
            report.samples_pushed += r.samples_pushed;
            report.parse_errors += r.parse_errors;
            report.roundtrip_failures += r.roundtrip_failures;
            report.max_scrape_ms = std::max(report.max_scrape_ms, r.max_scrape_ms);
            report.total_scrape_ms += r.total_scrape_ms;
        }
        report.cycles = cycles;
        return report;
    }

private:
    void run_worker(size_t target_index, int cycles, ScrapeReport& report) {
        const auto& target = opts_.targets[target_index];
        httplib::Client exporter(target.host, target.port);
        exporter.set_connection_timeout(5, 0);
        exporter.set_read_timeout(10, 0);
        exporter.set_keep_alive(true);
        httplib::Client tsdb(opts_.tsdb_push_host, opts_.tsdb_push_port);
        tsdb.set_keep_alive(true);

        for (int cycle = 0; cycle < cycles; ++cycle) {
            int64_t stamp;
            if (opts_.advancer) {
                opts_.advancer->advance(target.instance, cycle);
                stamp = opts_.advancer->instant_ms(cycle);
            } else {
                stamp = opts_.clock();
            }
            ++report.scrapes_attempted;
            auto begin = std::chrono::steady_clock::now();
            auto res = exporter.Get("/metrics");
            double elapsed_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - begin)
                    .count();
            report.total_scrape_ms += elapsed_ms;
            report.max_scrape_ms = std::max(report.max_scrape_ms, elapsed_ms);
            if (!res || res->status != 200) {
                ++report.scrapes_failed;
                continue;
            }
            std::vector<MetricFamily> families;
            try {
                families = parse_exposition(res->body);
            } catch (const ParseError&) {
                ++report.parse_errors;
                continue;
            }
            if (opts_.verify_roundtrip && render_exposition(families) != res->body)
                ++report.roundtrip_failures;

            nlohmann::json batch = nlohmann::json::array();
            for (const auto& family : families) {
                for (const auto& sample : family.samples()) {
                    if (std::isnan(sample.value)) continue;
                    nlohmann::json labels = nlohmann::json::object();
                    for (const auto& [k, v] : sample.labels) labels[k] = v;
                    labels["instance"] = target.instance;
                    batch.push_back({{"name", sample.name},
                                     {"labels", labels},
                                     {"ts_ms", sample.timestamp_ms.value_or(stamp)},
                                     {"value", sample.value}});
                }
            }
            auto push = tsdb.Post("/api/v1/push", batch.dump(), "application/json");
            if (push && push->status == 200) {
                auto body = nlohmann::json::parse(push->body, nullptr, false);
                if (!body.is_discarded()) report.samples_pushed += body.value("accepted", 0);
            }
            if (opts_.live_pacing && !opts_.advancer)
                std::this_thread::sleep_for(std::chrono::seconds(opts_.interval_s));
        }
    }

    Options opts_;
};

}  // namespace wattline::sim
