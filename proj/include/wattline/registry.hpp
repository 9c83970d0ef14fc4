#pragma once

// The API server: ingests workloads from resource-manager accounting into
// the unified store, recomputes per-unit aggregates from raw TSDB range
// data, purges short-lived series, answers ownership queries and serves the
// JSON API. Aggregation happens in-process: raw counters and gauges are
// fetched per node, turned into per-interval rates, attributed with the
// power split and integrated, so no expression engine is needed TSDB-side.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "wattline/attribution.hpp"
#include "wattline/emissions.hpp"
#include "wattline/metrics.hpp"
#include "wattline/selector.hpp"
#include "wattline/service.hpp"
#include "wattline/store.hpp"

namespace wattline {

// ---- resource-manager adapter ----------------------------------------------

struct AccountingParseResult {
    std::vector<WorkloadUnit> units;
    int errors = 0;
};

// sacct-style export, pipe-separated:
// uuid|user|project|start_iso8601|end_iso8601|alloc_cpus|alloc_mem_bytes|gpu_indices(csv)
// end empty while the job is still running.
inline AccountingParseResult parse_slurm_accounting(std::string_view text,
                                                    const std::string& cluster_id) {
    AccountingParseResult result;
    for (const auto& raw : util::split(text, '\n')) {
        std::string line = util::trim(raw);
        if (line.empty() || line[0] == '#') continue;
        auto fields = util::split(line, '|');
        if (fields.size() != 8) {
            ++result.errors;
            continue;
        }
        WorkloadUnit unit;
        unit.uuid = util::trim(fields[0]);
        unit.cluster_id = cluster_id;
        unit.resource_manager = ResourceManager::slurm;
        unit.user = util::trim(fields[1]);
        unit.project = util::trim(fields[2]);
        auto start = util::parse_iso8601_ms(util::trim(fields[3]));
        auto cpus = util::parse_int(util::trim(fields[5]));
        auto mem = util::parse_int(util::trim(fields[6]));
        std::string end_text = util::trim(fields[4]);
        std::optional<int64_t> end;
        if (!end_text.empty() && end_text != "Unknown") {
            end = util::parse_iso8601_ms(end_text);
            if (!end) {
                ++result.errors;
                continue;
            }
        }
        if (unit.uuid.empty() || unit.user.empty() || !start || !cpus || !mem || *cpus < 0 ||
            *mem < 0 || (end && *end < *start)) {
            ++result.errors;
            continue;
        }
        unit.created_at = *start;
        unit.started_at = *start;
        unit.ended_at = end;
        unit.alloc_cpus = static_cast<int>(*cpus);
        unit.alloc_memory_bytes = *mem;
        for (const auto& g : util::split(util::trim(fields[7]), ','))
            if (auto idx = util::parse_int(util::trim(g))) unit.gpu_indices.push_back(static_cast<int>(*idx));
        result.units.push_back(std::move(unit));
    }
    return result;
}

// ---- TSDB range client -------------------------------------------------------

struct TsdbUnavailableError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class TsdbClient {
public:
    struct Options {
        std::string base_url;             // query endpoints
        std::string admin_url;            // series-delete endpoint (may equal base)
        int attempts = 3;
        int backoff_ms = 100;
    };

    explicit TsdbClient(Options opts) : opts_(std::move(opts)) {}

    const std::string& base_url() const { return opts_.base_url; }

    std::vector<TimeSeries> query_range(const std::string& selector, int64_t start_ms,
                                        int64_t end_ms) const {
        std::string path = "/api/v1/query_range?query=" + url_encode(selector) +
                           "&start=" + format_seconds(start_ms) + "&end=" + format_seconds(end_ms) +
                           "&step=15";
        auto body = get_with_retry(opts_.base_url, path);
        auto parsed = nlohmann::json::parse(body, nullptr, false);
        if (parsed.is_discarded() || parsed.value("status", "") != "success")
            throw TsdbUnavailableError("malformed TSDB response for " + selector);
        std::vector<TimeSeries> out;
        for (const auto& item : parsed["data"]["result"]) {
            LabelSet labels;
            for (const auto& [k, v] : item["metric"].items()) labels.set(k, v.get<std::string>());
            TimeSeries series(labels);
            for (const auto& point : item["values"]) {
                int64_t ts = static_cast<int64_t>(std::llround(point[0].get<double>() * 1000.0));
                auto value = util::parse_double(point[1].get<std::string>());
                if (value) series.append(ts, *value);
            }
            out.push_back(std::move(series));
        }
        return out;
    }

    void delete_series(const std::string& selector) const {
        std::string path = "/api/v1/admin/tsdb/delete_series?match[]=" + url_encode(selector);
        auto [host, prefix] = split_url(opts_.admin_url.empty() ? opts_.base_url : opts_.admin_url);
        httplib::Client client(host);
        client.set_connection_timeout(5, 0);
        auto res = client.Post(prefix + path);
        if (!res || (res->status != 200 && res->status != 204))
            throw TsdbUnavailableError("series delete failed for " + selector);
    }

    static std::string url_encode(std::string_view s) {
        static const char* hex = "0123456789ABCDEF";
        std::string out;
        for (unsigned char c : s) {
            if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~')
                out.push_back(static_cast<char>(c));
            else {
                out.push_back('%');
                out.push_back(hex[c >> 4]);
                out.push_back(hex[c & 15]);
            }
        }
        return out;
    }

private:
    static std::string format_seconds(int64_t ms) {
        return util::format_double(static_cast<double>(ms) / 1000.0);
    }

    static std::pair<std::string, std::string> split_url(const std::string& url) {
        size_t scheme = url.find("://");
        if (scheme == std::string::npos) return {url, ""};
        size_t slash = url.find('/', scheme + 3);
        if (slash == std::string::npos) return {url, ""};
        return {url.substr(0, slash), url.substr(slash)};
    }

    std::string get_with_retry(const std::string& base, const std::string& path) const {
        auto [host, prefix] = split_url(base);
        std::string last_error;
        for (int attempt = 0; attempt < std::max(1, opts_.attempts); ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(std::chrono::milliseconds(opts_.backoff_ms));
            httplib::Client client(host);
            client.set_connection_timeout(5, 0);
            client.set_read_timeout(30, 0);
            auto res = client.Get(prefix + path);
            if (res && res->status == 200) return res->body;
            last_error = res ? "status " + std::to_string(res->status) : "connection failed";
        }
        throw TsdbUnavailableError("TSDB unreachable after retries: " + last_error);
    }

    Options opts_;
};

// ---- aggregation ------------------------------------------------------------

struct RegistryOptions {
    std::string cluster_id = "cluster";
    std::filesystem::path accounting_file;
    HardwareProfile profile;
    std::string emission_region;
    int64_t purge_cutoff_seconds = 0;  // 0 disables purging
    std::optional<BasicAuthCredentials> auth;
    Clock clock = system_clock_ms();
};

class Registry {
public:
    Registry(std::shared_ptr<Store> store, std::shared_ptr<TsdbClient> tsdb,
             std::shared_ptr<EmissionFactorSource> factors, RegistryOptions opts)
        : store_(std::move(store)),
          tsdb_(std::move(tsdb)),
          factors_(std::move(factors)),
          opts_(std::move(opts)) {}

    Store& store() { return *store_; }
    const RegistryOptions& options() const { return opts_; }

    // ---- ingest ----

    struct IngestReport {
        int upserts = 0;
        int errors = 0;
    };

    IngestReport ingest_accounting(std::string_view text) {
        auto parsed = parse_slurm_accounting(text, opts_.cluster_id);
        IngestReport report;
        report.errors = parsed.errors;
        for (const auto& unit : parsed.units) {
            store_->upsert_unit(unit);
            ++report.upserts;
        }
        return report;
    }

    IngestReport ingest_from_file() {
        auto text = util::read_text_file(opts_.accounting_file);
        if (!text)
            throw std::runtime_error("accounting file unreadable: " +
                                     opts_.accounting_file.string());
        return ingest_accounting(*text);
    }

    // ---- aggregation ----

    // Recomputes and persists the aggregate of every known unit from raw
    // TSDB data. Per-node series are fetched once and shared by all units
    // of that node.
    int aggregate_all() {
        auto units = store_->list_units();
        if (units.empty()) return 0;
        int64_t now = opts_.clock();
        std::map<std::string, NodePowerSeries> node_cache;
        int updated = 0;
        for (const auto& unit : units) {
            auto agg = aggregate_unit(unit, now, &node_cache);
            store_->upsert_unit_aggregate(unit.cluster_id, unit.uuid, agg);
            ++updated;
        }
        return updated;
    }

    AggregateMetrics aggregate_unit(const WorkloadUnit& unit) {
        return aggregate_unit(unit, opts_.clock(), nullptr);
    }

    AggregateMetrics aggregate_scope(AggregateScope scope, const std::string& key,
                                     int64_t window_start, int64_t window_end) {
        AggregateMetrics total;
        total.scope = scope;
        total.key = key;
        total.window_start = window_start;
        total.window_end = window_end;
        auto rows = store_->unit_aggregates_for(scope, key, window_start, window_end);
        double weight_sum = 0;
        double cpu_frac_weighted = 0, mem_frac_weighted = 0, gpu_frac_weighted = 0;
        bool any_gpu = false;
        int64_t now = opts_.clock();
        for (const auto& row : rows) {
            total.total_cpu_time_seconds += row.metrics.total_cpu_time_seconds;
            total.total_energy_kwh += row.metrics.total_energy_kwh;
            total.total_emissions_grams += row.metrics.total_emissions_grams;
            double weight =
                static_cast<double>(row.unit.ended_at.value_or(now) - row.unit.started_at);
            if (weight <= 0) weight = 1;
            weight_sum += weight;
            cpu_frac_weighted += weight * row.metrics.avg_cpu_usage_fraction;
            mem_frac_weighted += weight * row.metrics.avg_memory_usage_fraction;
            if (row.metrics.avg_gpu_usage_fraction) {
                any_gpu = true;
                gpu_frac_weighted += weight * *row.metrics.avg_gpu_usage_fraction;
            }
        }
        if (weight_sum > 0) {
            total.avg_cpu_usage_fraction = cpu_frac_weighted / weight_sum;
            total.avg_memory_usage_fraction = mem_frac_weighted / weight_sum;
            if (any_gpu) total.avg_gpu_usage_fraction = gpu_frac_weighted / weight_sum;
        }
        total.no_data = rows.empty();
        return total;
    }

    // ---- purge ----

    struct PurgeReport {
        std::vector<std::string> issued;  // delete selectors sent this run
        int retried = 0;
        int failed = 0;
    };

    PurgeReport purge_short_workloads() {
        PurgeReport report;
        if (opts_.purge_cutoff_seconds <= 0) return report;
        std::vector<std::pair<WorkloadUnit, std::string>> work;
        for (auto& selector : retry_queue_) {
            work.emplace_back(WorkloadUnit{}, selector);
            ++report.retried;
        }
        retry_queue_.clear();
        for (const auto& unit : store_->units_to_purge(opts_.purge_cutoff_seconds))
            work.emplace_back(unit, "{workload_id=\"" + unit.uuid + "\"}");
        for (auto& [unit, selector] : work) {
            try {
                tsdb_->delete_series(selector);
                report.issued.push_back(selector);
                if (!unit.uuid.empty()) store_->mark_purged(unit.cluster_id, unit.uuid);
            } catch (const TsdbUnavailableError&) {
                retry_queue_.push_back(selector);
                ++report.failed;
            }
        }
        return report;
    }

    // ---- ownership ----

    bool ownership(const std::string& user, const std::string& cluster_id,
                   const std::string& uuid) const {
        auto unit = store_->find_unit(cluster_id, uuid);
        return unit && unit->user == user;
    }

    // ---- HTTP API ----

    void register_routes(httplib::Server& server) {
        auto authorized = [this](const httplib::Request& req, httplib::Response& res) {
            if (opts_.auth && !check_basic_auth(req, *opts_.auth)) {
                respond_unauthorized(res);
                return false;
            }
            return true;
        };

        server.Get("/api/v1/units", [this, authorized](const httplib::Request& req,
                                                       httplib::Response& res) {
            if (!authorized(req, res)) return;
            Store::UnitFilter filter;
            if (req.has_param("user")) filter.user = req.get_param_value("user");
            if (req.has_param("project")) filter.project = req.get_param_value("project");
            if (auto v = util::parse_int(req.get_param_value("start"))) filter.overlap_start = *v;
            if (auto v = util::parse_int(req.get_param_value("end"))) filter.overlap_end = *v;
            nlohmann::json units = nlohmann::json::array();
            for (const auto& u : store_->list_units(filter)) units.push_back(unit_json(u));
            res.set_content(nlohmann::json{{"units", units}}.dump(), "application/json");
        });

        server.Get(R"(/api/v1/usage/(unit|user|project))",
                   [this, authorized](const httplib::Request& req, httplib::Response& res) {
                       if (!authorized(req, res)) return;
                       auto scope = aggregate_scope_from_string(req.matches[1].str());
                       std::string key = req.get_param_value("key");
                       if (!scope || key.empty()) {
                           res.status = 400;
                           res.set_content(R"({"error":"missing scope or key"})",
                                           "application/json");
                           return;
                       }
                       int64_t start = util::parse_int(req.get_param_value("start")).value_or(0);
                       int64_t end =
                           util::parse_int(req.get_param_value("end")).value_or(opts_.clock());
                       AggregateMetrics agg;
                       if (*scope == AggregateScope::unit) {
                           auto stored = store_->unit_aggregate(opts_.cluster_id, key);
                           if (!stored) {
                               agg.scope = AggregateScope::unit;
                               agg.key = key;
                               agg.no_data = true;
                           } else {
                               agg = *stored;
                           }
                       } else {
                           agg = aggregate_scope(*scope, key, start, end);
                       }
                       res.set_content(aggregate_json(agg).dump(), "application/json");
                   });

        server.Get("/api/v1/verify", [this, authorized](const httplib::Request& req,
                                                        httplib::Response& res) {
            if (!authorized(req, res)) return;
            std::string user = req.get_param_value("user");
            std::string cluster = req.get_param_value("cluster");
            if (cluster.empty()) cluster = opts_.cluster_id;
            std::string uuid = req.get_param_value("uuid");
            bool owner = !user.empty() && !uuid.empty() && ownership(user, cluster, uuid);
            res.status = owner ? 200 : 403;
            res.set_content(nlohmann::json{{"owner", owner}}.dump(), "application/json");
        });

        server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("ok", "text/plain");
        });
    }

    static nlohmann::json unit_json(const WorkloadUnit& u) {
        nlohmann::json j = {
            {"uuid", u.uuid},
            {"cluster_id", u.cluster_id},
            {"resource_manager", std::string(to_string(u.resource_manager))},
            {"user", u.user},
            {"project", u.project},
            {"created_at", u.created_at},
            {"started_at", u.started_at},
            {"alloc_cpus", u.alloc_cpus},
            {"alloc_memory_bytes", u.alloc_memory_bytes},
            {"gpu_indices", u.gpu_indices},
            {"purged", u.purged},
        };
        if (u.ended_at) j["ended_at"] = *u.ended_at;
        return j;
    }

    static nlohmann::json aggregate_json(const AggregateMetrics& a) {
        nlohmann::json j = {
            {"scope", std::string(to_string(a.scope))},
            {"key", a.key},
            {"window_start", a.window_start},
            {"window_end", a.window_end},
            {"total_cpu_time_seconds", a.total_cpu_time_seconds},
            {"avg_cpu_usage_fraction", a.avg_cpu_usage_fraction},
            {"avg_memory_usage_fraction", a.avg_memory_usage_fraction},
            {"total_energy_kwh", a.total_energy_kwh},
            {"total_emissions_grams", a.total_emissions_grams},
            {"no_data", a.no_data},
        };
        if (a.avg_gpu_usage_fraction) j["avg_gpu_usage_fraction"] = *a.avg_gpu_usage_fraction;
        return j;
    }

private:
    // all raw series of one node over one window, aligned per scrape instant
    struct NodePowerSeries {
        // per-workload attributed watts: workload_id -> series
        std::map<std::string, TimeSeries> workload_watts;
        // per-workload cumulative cpu seconds and memory gauges
        std::map<std::string, TimeSeries> workload_cpu;
        std::map<std::string, TimeSeries> workload_memory;
        bool valid = false;
    };

    AggregateMetrics aggregate_unit(const WorkloadUnit& unit, int64_t now,
                                    std::map<std::string, NodePowerSeries>* cache) {
        AggregateMetrics agg;
        agg.scope = AggregateScope::unit;
        agg.key = unit.uuid;
        agg.window_start = unit.started_at;
        agg.window_end = unit.ended_at.value_or(now);

        auto unit_cpu = tsdb_->query_range(
            "wattline_cpu_seconds_total{workload_id=\"" + unit.uuid + "\"}", unit.started_at,
            agg.window_end);
        if (unit_cpu.empty() || unit_cpu[0].points().empty()) {
            agg.no_data = true;
            return agg;
        }
        const std::string* instance = unit_cpu[0].labels().get("instance");
        std::string node = instance ? *instance : "";

        NodePowerSeries local;
        NodePowerSeries* series = &local;
        if (cache) series = &(*cache)[node];
        if (!series->valid) *series = build_node_series(node, now);

        auto watts_it = series->workload_watts.find(unit.uuid);
        auto cpu_it = series->workload_cpu.find(unit.uuid);
        if (watts_it == series->workload_watts.end() || cpu_it == series->workload_cpu.end() ||
            cpu_it->second.points().empty()) {
            agg.no_data = true;
            return agg;
        }

        // energy + emissions over the unit's attributed power
        TimeSeries unit_watts = slice(watts_it->second, unit.started_at, agg.window_end);
        auto energy = integrate_energy(unit_watts);
        agg.total_energy_kwh = energy.kwh;
        if (factors_ && !opts_.emission_region.empty()) {
            auto factor = factors_->get(opts_.emission_region);
            agg.total_emissions_grams =
                integrate_emissions(unit_watts, [&](int64_t) { return factor.grams_per_kwh; });
        }

        // cpu time from the cumulative counter
        TimeSeries unit_cpu_series = slice(cpu_it->second, unit.started_at, agg.window_end);
        if (!unit_cpu_series.points().empty()) {
            double first = unit_cpu_series.points().front().second;
            double last = unit_cpu_series.points().back().second;
            agg.total_cpu_time_seconds = std::max(0.0, last - first);
        }
        double wall_s = static_cast<double>(agg.window_end - agg.window_start) / 1000.0;
        if (unit.alloc_cpus > 0 && wall_s > 0)
            agg.avg_cpu_usage_fraction =
                agg.total_cpu_time_seconds / (unit.alloc_cpus * wall_s);

        auto mem_it = series->workload_memory.find(unit.uuid);
        if (mem_it != series->workload_memory.end() && unit.alloc_memory_bytes > 0) {
            TimeSeries mem = slice(mem_it->second, unit.started_at, agg.window_end);
            if (!mem.points().empty()) {
                double sum = 0;
                for (const auto& [ts, v] : mem.points()) sum += v;
                agg.avg_memory_usage_fraction =
                    sum / static_cast<double>(mem.points().size()) /
                    static_cast<double>(unit.alloc_memory_bytes);
            }
        }
        return agg;
    }

    static TimeSeries slice(const TimeSeries& series, int64_t start_ms, int64_t end_ms) {
        TimeSeries out(series.labels());
        for (const auto& [ts, v] : series.points())
            if (ts >= start_ms && ts <= end_ms) out.append(ts, v);
        return out;
    }

    // counter increase with Prometheus reset semantics
    static double counter_increase(double prev, double curr) {
        if (curr >= prev) return curr - prev;
        return curr;
    }

    // Rebuilds per-interval node snapshots from raw series and attributes
    // power. The sample timestamped at instant t_i carries the average over
    // (t_{i-1}, t_i]; a workload needs counter points at both interval ends
    // to appear in that interval.
    NodePowerSeries build_node_series(const std::string& node, int64_t now) {
        NodePowerSeries out;
        out.valid = true;
        std::string bare_sel = node.empty() ? "" : "{instance=\"" + node + "\"}";
        auto fetch = [&](const std::string& name) {
            return tsdb_->query_range(name + bare_sel, 0, now);
        };
        auto ipmi = fetch("wattline_node_power_watts");
        auto node_cpu = fetch("wattline_node_cpu_seconds_total");
        auto node_mem = fetch("wattline_node_memory_bytes");
        auto rapl = fetch("wattline_rapl_energy_microjoules_total");
        auto workloads_cpu = fetch("wattline_cpu_seconds_total");
        auto workloads_mem = fetch("wattline_memory_bytes");
        std::vector<TimeSeries> gpu;
        if (opts_.profile.ipmi_includes_gpu) gpu = fetch("wattline_gpu_power_watts");
        if (ipmi.empty() || node_cpu.empty() || node_mem.empty()) return out;

        for (const auto& s : workloads_cpu) {
            const std::string* id = s.labels().get("workload_id");
            if (id) out.workload_cpu[*id] = s;
        }
        for (const auto& s : workloads_mem) {
            const std::string* id = s.labels().get("workload_id");
            if (id) out.workload_memory[*id] = s;
        }

        auto value_at = [](const TimeSeries& s, int64_t ts) -> std::optional<double> {
            const auto& pts = s.points();
            auto it = std::lower_bound(
                pts.begin(), pts.end(), ts,
                [](const std::pair<int64_t, double>& p, int64_t t) { return p.first < t; });
            if (it == pts.end() || it->first != ts) return std::nullopt;
            return it->second;
        };

        const auto& instants = ipmi[0].points();
        for (size_t i = 1; i < instants.size(); ++i) {
            int64_t t_prev = instants[i - 1].first;
            int64_t t_curr = instants[i].first;
            double dt_s = static_cast<double>(t_curr - t_prev) / 1000.0;
            if (dt_s <= 0) continue;

            NodeSnapshot snapshot;
            snapshot.timestamp_ms = t_curr;
            snapshot.p_ipmi_watts = instants[i].second;

            auto nc_prev = value_at(node_cpu[0], t_prev);
            auto nc_curr = value_at(node_cpu[0], t_curr);
            auto nm_curr = value_at(node_mem[0], t_curr);
            if (!nc_prev || !nc_curr || !nm_curr) continue;
            snapshot.node_cpu_time_rate = counter_increase(*nc_prev, *nc_curr) / dt_s;
            snapshot.node_memory_bytes = *nm_curr;

            double rapl_cpu = 0, rapl_dram = 0;
            bool have_cpu = false, have_dram = false;
            for (const auto& s : rapl) {
                auto prev = value_at(s, t_prev);
                auto curr = value_at(s, t_curr);
                if (!prev || !curr) continue;
                double watts = counter_increase(*prev, *curr) / dt_s / 1e6;
                const std::string* domain = s.labels().get("domain");
                if (domain && *domain == "dram") {
                    rapl_dram += watts;
                    have_dram = true;
                } else if (domain && *domain == "cpu_package") {
                    rapl_cpu += watts;
                    have_cpu = true;
                }
            }
            if (have_cpu) snapshot.p_rapl_cpu_watts = rapl_cpu;
            if (have_dram) snapshot.p_rapl_dram_watts = rapl_dram;

            for (const auto& [id, cpu_series] : out.workload_cpu) {
                auto prev = value_at(cpu_series, t_prev);
                auto curr = value_at(cpu_series, t_curr);
                if (!prev || !curr) continue;
                WorkloadShare share;
                share.workload_id = id;
                share.cpu_time_rate = counter_increase(*prev, *curr) / dt_s;
                auto mem_series = out.workload_memory.find(id);
                if (mem_series != out.workload_memory.end())
                    if (auto m = value_at(mem_series->second, t_curr)) share.memory_bytes = *m;
                snapshot.workloads.push_back(std::move(share));
            }
            if (snapshot.workloads.empty()) continue;

            // tolerate counter jitter against node totals
            double sum_t = 0, sum_m = 0;
            for (const auto& w : snapshot.workloads) {
                sum_t += w.cpu_time_rate;
                sum_m += w.memory_bytes;
            }
            snapshot.node_cpu_time_rate = std::max(snapshot.node_cpu_time_rate, sum_t);
            snapshot.node_memory_bytes = std::max(snapshot.node_memory_bytes, sum_m);

            // RAPL domains are discovered per node; the configured profile
            // governs the gpu treatment and the fraction split.
            HardwareProfile profile = opts_.profile;
            profile.has_rapl_cpu = snapshot.p_rapl_cpu_watts.has_value();
            profile.has_rapl_dram = snapshot.p_rapl_dram_watts.has_value();
            if (profile.ipmi_includes_gpu) {
                std::optional<double> gpu_watts;
                for (const auto& s : gpu)
                    if (auto v = value_at(s, t_curr)) gpu_watts = gpu_watts.value_or(0.0) + *v;
                if (gpu_watts)
                    snapshot.p_gpu_watts = gpu_watts;
                else
                    profile.ipmi_includes_gpu = false;
            }
            auto result = attribute_power(snapshot, profile);
            for (const auto& a : result.attributions)
                out.workload_watts[a.workload_id].append(t_curr, a.watts);
        }
        return out;
    }

    std::shared_ptr<Store> store_;
    std::shared_ptr<TsdbClient> tsdb_;
    std::shared_ptr<EmissionFactorSource> factors_;
    RegistryOptions opts_;
    std::vector<std::string> retry_queue_;
};

}  // namespace wattline
