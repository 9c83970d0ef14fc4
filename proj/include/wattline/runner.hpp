#pragma once

// Builds and runs a configured service (exporter | registry | gate): HTTP
// listener plus, for the registry, the single writer task that ingests,
// aggregates, purges and backs up on its configured intervals. Stopping
// lets the writer finish its current cycle and drains in-flight requests.

#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <thread>

#include "wattline/config.hpp"
#include "wattline/emissions.hpp"
#include "wattline/exporter.hpp"
#include "wattline/gate.hpp"
#include "wattline/registry.hpp"
#include "wattline/service.hpp"

namespace wattline {

struct ServiceStartError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class ServiceRuntime {
public:
    virtual ~ServiceRuntime() = default;
    virtual int port() const = 0;
    virtual void request_stop() = 0;
};

namespace detail {

class ExporterRuntime : public ServiceRuntime {
public:
    ExporterRuntime(const StackConfig& config, Clock clock, int port_override) {
        const auto& cfg = *config.exporter;
        ExporterOptions opts;
        opts.fs_root = cfg.fs_root;
        opts.collect_cgroup = cfg.collector_cgroup;
        opts.collect_rapl = cfg.collector_rapl;
        opts.collect_ipmi = cfg.collector_ipmi;
        opts.collect_gpumap = cfg.collector_gpumap;
        IpmiPowerSource::Options ipmi;
        ipmi.mode = cfg.ipmi_mode == "command" ? IpmiPowerSource::Mode::command
                                               : IpmiPowerSource::Mode::file;
        ipmi.command = cfg.ipmi_command;
        ipmi.file = cfg.ipmi_file.empty() ? cfg.fs_root / "ipmi/dcmi_power" : cfg.ipmi_file;
        ipmi.min_interval_ms = cfg.ipmi_min_interval_seconds * 1000;
        opts.ipmi_source = std::move(ipmi);
        opts.auth = config.shared.basic_auth;
        opts.clock = std::move(clock);
        exporter_ = std::make_unique<Exporter>(std::move(opts));
        exporter_->register_routes(http_.server());
        auto listen = parse_listen_address(cfg.listen_address);
        try {
            port_ = http_.start(listen->host, port_override >= 0 ? port_override : listen->port);
        } catch (const std::exception& e) {
            throw ServiceStartError(e.what());
        }
    }

    int port() const override { return port_; }
    void request_stop() override { http_.stop(); }

private:
    std::unique_ptr<Exporter> exporter_;
    HttpService http_;
    int port_ = -1;
};

class RegistryRuntime : public ServiceRuntime {
public:
    RegistryRuntime(const StackConfig& config, Clock clock, int port_override) : clock_(clock) {
        const auto& cfg = *config.registry;
        store_ = std::make_shared<Store>(cfg.db_path);
        std::shared_ptr<TsdbClient> tsdb;
        if (!cfg.tsdb_url.empty())
            tsdb = std::make_shared<TsdbClient>(TsdbClient::Options{
                .base_url = cfg.tsdb_url,
                .admin_url = cfg.tsdb_admin_url.empty() ? cfg.tsdb_url : cfg.tsdb_admin_url});
        std::shared_ptr<EmissionFactorSource> factors;
        if (!cfg.emissions.static_table.empty() || !cfg.emissions.realtime_url.empty()) {
            EmissionFactorSource::Options fopts;
            fopts.realtime_base_url = cfg.emissions.realtime_url;
            if (!cfg.emissions.static_table.empty())
                fopts.static_table = StaticFactorTable::load(cfg.emissions.static_table);
            fopts.cache_ttl_ms = cfg.emissions.cache_ttl_seconds * 1000;
            fopts.clock = clock_;
            factors = std::make_shared<EmissionFactorSource>(std::move(fopts));
        }
        RegistryOptions ropts;
        ropts.cluster_id = cfg.cluster_id;
        ropts.accounting_file = cfg.accounting_file;
        ropts.profile = cfg.profile;
        ropts.emission_region = cfg.emissions.region;
        ropts.purge_cutoff_seconds = cfg.purge_cutoff_seconds;
        ropts.auth = config.shared.basic_auth;
        ropts.clock = clock_;
        registry_ = std::make_unique<Registry>(store_, tsdb, factors, ropts);
        registry_->register_routes(http_.server());
        auto listen = parse_listen_address(cfg.listen_address);
        try {
            port_ = http_.start(listen->host, port_override >= 0 ? port_override : listen->port);
        } catch (const std::exception& e) {
            throw ServiceStartError(e.what());
        }
        if (tsdb || !cfg.accounting_file.empty()) start_writer(cfg);
    }

    ~RegistryRuntime() override { request_stop(); }

    int port() const override { return port_; }

    void request_stop() override {
        {
            std::lock_guard<std::mutex> g(mutex_);
            stop_ = true;
        }
        cv_.notify_all();
        if (writer_.joinable()) writer_.join();  // current cycle completes
        http_.stop();
    }

private:
    void start_writer(const RegistryConfig& cfg) {
        writer_ = std::thread([this, cfg] {
            IntervalGate ingest(cfg.ingest_interval_seconds * 1000);
            IntervalGate aggregate(cfg.aggregation_interval_seconds * 1000);
            IntervalGate backup(cfg.backup_interval_seconds * 1000);
            while (true) {
                {
                    std::unique_lock<std::mutex> lock(mutex_);
                    if (stop_) return;
                }
                int64_t now = clock_();
                try {
                    if (!cfg.accounting_file.empty() && ingest.due(now))
                        registry_->ingest_from_file();
                    if (aggregate.due(now)) {
                        registry_->aggregate_all();
                        registry_->purge_short_workloads();
                    }
                    if (!cfg.backup_dir.empty() && backup.due(now)) {
                        std::filesystem::create_directories(cfg.backup_dir);
                        store_->backup_to(cfg.backup_dir /
                                          ("wattline-" + std::to_string(now) + ".db"));
                    }
                } catch (const std::exception&) {
                    // run-level failure: the next interval retries
                }
                std::unique_lock<std::mutex> lock(mutex_);
                cv_.wait_for(lock, std::chrono::milliseconds(200), [this] { return stop_; });
                if (stop_) return;
            }
        });
    }

    std::shared_ptr<Store> store_;
    std::unique_ptr<Registry> registry_;
    HttpService http_;
    std::thread writer_;
    std::mutex mutex_;
    std::condition_variable cv_;
    bool stop_ = false;
    Clock clock_;
    int port_ = -1;
};

class GateRuntime : public ServiceRuntime {
public:
    GateRuntime(const StackConfig& config, int port_override) {
        const auto& cfg = *config.gate;
        auto pool = std::make_shared<BackendPool>(cfg.backends,
                                                  *balance_strategy_from_string(cfg.strategy));
        OwnershipVerifier::Options vopts;
        vopts.registry_url = cfg.registry_url;
        vopts.store_path = cfg.registry_store;
        vopts.cluster_id = cfg.cluster_id;
        if (const char* user = std::getenv("WATTLINE_GATE_REGISTRY_USER"))
            vopts.registry_user = user;
        if (const char* pass = std::getenv("WATTLINE_GATE_REGISTRY_PASSWORD"))
            vopts.registry_password = pass;
        auto verifier = std::make_shared<OwnershipVerifier>(std::move(vopts));
        GateOptions gopts;
        gopts.id_label = cfg.id_label;
        gopts.timeout_seconds = static_cast<int>(cfg.timeout_seconds);
        gopts.metric_allowlist.insert(cfg.metric_allowlist.begin(), cfg.metric_allowlist.end());
        gate_ = std::make_unique<AccessGate>(pool, verifier, std::move(gopts));
        gate_->register_routes(http_.server());
        auto listen = parse_listen_address(cfg.listen_address);
        try {
            port_ = http_.start(listen->host, port_override >= 0 ? port_override : listen->port);
        } catch (const std::exception& e) {
            throw ServiceStartError(e.what());
        }
    }

    int port() const override { return port_; }
    void request_stop() override { http_.stop(); }

private:
    std::unique_ptr<AccessGate> gate_;
    HttpService http_;
    int port_ = -1;
};

}  // namespace detail

// Starts the named service. Throws ConfigError when the section is missing,
// ServiceStartError when startup (binding, files) fails.
inline std::unique_ptr<ServiceRuntime> run_service(const std::string& name,
                                                   const StackConfig& config,
                                                   Clock clock = system_clock_ms(),
                                                   int port_override = -1) {
    if (name == "exporter") {
        if (!config.exporter) throw ConfigError("config has no exporter section");
        return std::make_unique<detail::ExporterRuntime>(config, std::move(clock), port_override);
    }
    if (name == "registry") {
        if (!config.registry) throw ConfigError("config has no registry section");
        return std::make_unique<detail::RegistryRuntime>(config, std::move(clock), port_override);
    }
    if (name == "gate") {
        if (!config.gate) throw ConfigError("config has no gate section");
        return std::make_unique<detail::GateRuntime>(config, port_override);
    }
    throw ConfigError("unknown service '" + name + "' (expected exporter|registry|gate)");
}

}  // namespace wattline
