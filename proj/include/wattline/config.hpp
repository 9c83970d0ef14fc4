#pragma once

// Single-file YAML configuration for the whole stack; each service reads its
// own section. Loading is strict (unknown keys are errors, types are
// checked with the offending key path in the message) and side-effect-free.

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "wattline/attribution.hpp"
#include "wattline/gate.hpp"
#include "wattline/service.hpp"
#include "wattline/util.hpp"

namespace wattline {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SharedConfig {
    std::string log_level = "info";
    std::optional<BasicAuthCredentials> basic_auth;
};

struct ExporterConfig {
    std::string listen_address = "0.0.0.0:9010";
    std::filesystem::path fs_root = "/";
    bool collector_cgroup = true;
    bool collector_rapl = true;
    bool collector_ipmi = true;
    bool collector_gpumap = true;
    std::string ipmi_mode = "file";  // file | command
    std::string ipmi_command = "ipmi-dcmi --get-system-power-statistics";
    std::filesystem::path ipmi_file;  // default <fs_root>/ipmi/dcmi_power
    int64_t ipmi_min_interval_seconds = 10;
    // accepted for deployment tooling; termination happens in front of us
    std::string tls_cert_file;
    std::string tls_key_file;
};

struct EmissionsConfig {
    std::filesystem::path static_table;
    std::string realtime_url;
    std::string region;
    int64_t cache_ttl_seconds = 300;
};

struct RegistryConfig {
    std::string listen_address = "127.0.0.1:9020";
    std::string cluster_id = "cluster";
    std::filesystem::path db_path = "wattline.db";
    std::filesystem::path accounting_file;
    std::string tsdb_url;
    std::string tsdb_admin_url;
    int64_t ingest_interval_seconds = 60;
    int64_t aggregation_interval_seconds = 300;
    int64_t purge_cutoff_seconds = 0;
    int64_t backup_interval_seconds = 0;
    std::filesystem::path backup_dir;
    EmissionsConfig emissions;
    HardwareProfile profile;
};

struct GateConfig {
    std::string listen_address = "127.0.0.1:9030";
    std::vector<std::string> backends;
    std::string strategy = "round_robin";
    std::string id_label = "workload_id";
    std::string registry_url;
    std::filesystem::path registry_store;
    std::string cluster_id = "cluster";
    int64_t timeout_seconds = 30;
    std::vector<std::string> metric_allowlist;
    std::string tls_cert_file;
    std::string tls_key_file;
};

struct StackConfig {
    SharedConfig shared;
    std::optional<ExporterConfig> exporter;
    std::optional<RegistryConfig> registry;
    std::optional<GateConfig> gate;
};

namespace detail {

inline void check_keys(const YAML::Node& node, const std::string& path,
                       const std::set<std::string>& known) {
    if (!node.IsMap()) throw ConfigError(path + ": expected a mapping");
    for (const auto& kv : node) {
        std::string key = kv.first.as<std::string>();
        if (!known.count(key)) throw ConfigError("unknown key " + path + "." + key);
    }
}

template <typename T>
T get_as(const YAML::Node& node, const std::string& path, const T& fallback) {
    if (!node) return fallback;
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError("type mismatch at " + path);
    }
}

inline void require_listen_address(const std::string& value, const std::string& path) {
    if (!parse_listen_address(value))
        throw ConfigError(path + ": not a host:port listen address: '" + value + "'");
}

inline void require_url(const std::string& value, const std::string& path) {
    if (value.empty()) return;
    if (value.rfind("http://", 0) != 0 && value.rfind("https://", 0) != 0)
        throw ConfigError(path + ": not an http(s) URL: '" + value + "'");
}

inline std::optional<BasicAuthCredentials> parse_basic_auth(const YAML::Node& node,
                                                            const std::string& path) {
    if (!node) return std::nullopt;
    check_keys(node, path, {"username", "password_hash"});
    BasicAuthCredentials creds;
    creds.username = get_as<std::string>(node["username"], path + ".username", "");
    creds.password_hash = get_as<std::string>(node["password_hash"], path + ".password_hash", "");
    if (creds.username.empty() || creds.password_hash.find('$') == std::string::npos)
        throw ConfigError(path + ": username and salted password_hash required");
    return creds;
}

inline HardwareProfile parse_profile(const YAML::Node& node, const std::string& path) {
    HardwareProfile profile;
    if (!node) return profile;
    check_keys(node, path,
               {"rapl_domains", "ipmi_includes_gpu", "network_fraction", "storage_fraction"});
    if (node["rapl_domains"]) {
        profile.has_rapl_cpu = false;
        profile.has_rapl_dram = false;
        for (const auto& d : node["rapl_domains"]) {
            auto domain = rapl_domain_from_string(d.as<std::string>());
            if (!domain) throw ConfigError(path + ".rapl_domains: unknown domain");
            if (*domain == RaplDomain::cpu_package) profile.has_rapl_cpu = true;
            if (*domain == RaplDomain::dram) profile.has_rapl_dram = true;
        }
    }
    profile.ipmi_includes_gpu =
        get_as<bool>(node["ipmi_includes_gpu"], path + ".ipmi_includes_gpu", false);
    profile.network_fraction =
        get_as<double>(node["network_fraction"], path + ".network_fraction", 0.10);
    profile.storage_fraction =
        get_as<double>(node["storage_fraction"], path + ".storage_fraction", 0.0);
    profile.validate();
    return profile;
}

}  // namespace detail

inline HardwareProfile load_profile_yaml(const std::filesystem::path& path) {
    YAML::Node root = YAML::LoadFile(path.string());
    return detail::parse_profile(root, "profile");
}

inline StackConfig parse_config(const YAML::Node& root) {
    using detail::check_keys;
    using detail::get_as;
    StackConfig config;
    check_keys(root, "config", {"shared", "exporter", "registry", "gate"});

    if (root["shared"]) {
        auto node = root["shared"];
        check_keys(node, "shared", {"log_level", "basic_auth"});
        config.shared.log_level = get_as<std::string>(node["log_level"], "shared.log_level",
                                                      config.shared.log_level);
        config.shared.basic_auth = detail::parse_basic_auth(node["basic_auth"], "shared.basic_auth");
    }

    if (root["exporter"]) {
        auto node = root["exporter"];
        check_keys(node, "exporter",
                   {"listen_address", "fs_root", "collectors", "ipmi", "tls_cert_file",
                    "tls_key_file"});
        ExporterConfig exporter;
        exporter.listen_address = get_as<std::string>(node["listen_address"],
                                                      "exporter.listen_address",
                                                      exporter.listen_address);
        detail::require_listen_address(exporter.listen_address, "exporter.listen_address");
        exporter.fs_root =
            get_as<std::string>(node["fs_root"], "exporter.fs_root", exporter.fs_root.string());
        if (node["collectors"]) {
            auto c = node["collectors"];
            check_keys(c, "exporter.collectors", {"cgroup", "rapl", "ipmi", "gpumap"});
            exporter.collector_cgroup = get_as<bool>(c["cgroup"], "exporter.collectors.cgroup", true);
            exporter.collector_rapl = get_as<bool>(c["rapl"], "exporter.collectors.rapl", true);
            exporter.collector_ipmi = get_as<bool>(c["ipmi"], "exporter.collectors.ipmi", true);
            exporter.collector_gpumap =
                get_as<bool>(c["gpumap"], "exporter.collectors.gpumap", true);
        }
        if (node["ipmi"]) {
            auto i = node["ipmi"];
            check_keys(i, "exporter.ipmi", {"mode", "command", "file", "min_interval_seconds"});
            exporter.ipmi_mode = get_as<std::string>(i["mode"], "exporter.ipmi.mode", "file");
            if (exporter.ipmi_mode != "file" && exporter.ipmi_mode != "command")
                throw ConfigError("exporter.ipmi.mode must be 'file' or 'command'");
            exporter.ipmi_command =
                get_as<std::string>(i["command"], "exporter.ipmi.command", exporter.ipmi_command);
            exporter.ipmi_file = get_as<std::string>(i["file"], "exporter.ipmi.file", "");
            exporter.ipmi_min_interval_seconds =
                get_as<int64_t>(i["min_interval_seconds"], "exporter.ipmi.min_interval_seconds",
                                exporter.ipmi_min_interval_seconds);
        }
        exporter.tls_cert_file =
            get_as<std::string>(node["tls_cert_file"], "exporter.tls_cert_file", "");
        exporter.tls_key_file =
            get_as<std::string>(node["tls_key_file"], "exporter.tls_key_file", "");
        config.exporter = std::move(exporter);
    }

    if (root["registry"]) {
        auto node = root["registry"];
        check_keys(node, "registry",
                   {"listen_address", "cluster_id", "db_path", "accounting_file", "tsdb_url",
                    "tsdb_admin_url", "ingest_interval_seconds", "aggregation_interval_seconds",
                    "purge_cutoff_seconds", "backup_interval_seconds", "backup_dir", "emissions",
                    "profile"});
        RegistryConfig registry;
        registry.listen_address = get_as<std::string>(node["listen_address"],
                                                      "registry.listen_address",
                                                      registry.listen_address);
        detail::require_listen_address(registry.listen_address, "registry.listen_address");
        registry.cluster_id =
            get_as<std::string>(node["cluster_id"], "registry.cluster_id", registry.cluster_id);
        registry.db_path = get_as<std::string>(node["db_path"], "registry.db_path",
                                               registry.db_path.string());
        registry.accounting_file =
            get_as<std::string>(node["accounting_file"], "registry.accounting_file", "");
        registry.tsdb_url = get_as<std::string>(node["tsdb_url"], "registry.tsdb_url", "");
        detail::require_url(registry.tsdb_url, "registry.tsdb_url");
        registry.tsdb_admin_url =
            get_as<std::string>(node["tsdb_admin_url"], "registry.tsdb_admin_url", "");
        detail::require_url(registry.tsdb_admin_url, "registry.tsdb_admin_url");
        registry.ingest_interval_seconds =
            get_as<int64_t>(node["ingest_interval_seconds"], "registry.ingest_interval_seconds",
                            registry.ingest_interval_seconds);
        registry.aggregation_interval_seconds = get_as<int64_t>(
            node["aggregation_interval_seconds"], "registry.aggregation_interval_seconds",
            registry.aggregation_interval_seconds);
        registry.purge_cutoff_seconds =
            get_as<int64_t>(node["purge_cutoff_seconds"], "registry.purge_cutoff_seconds",
                            registry.purge_cutoff_seconds);
        registry.backup_interval_seconds =
            get_as<int64_t>(node["backup_interval_seconds"], "registry.backup_interval_seconds",
                            registry.backup_interval_seconds);
        registry.backup_dir = get_as<std::string>(node["backup_dir"], "registry.backup_dir", "");
        if (node["emissions"]) {
            auto e = node["emissions"];
            check_keys(e, "registry.emissions",
                       {"static_table", "realtime_url", "region", "cache_ttl_seconds"});
            registry.emissions.static_table =
                get_as<std::string>(e["static_table"], "registry.emissions.static_table", "");
            registry.emissions.realtime_url =
                get_as<std::string>(e["realtime_url"], "registry.emissions.realtime_url", "");
            detail::require_url(registry.emissions.realtime_url,
                                "registry.emissions.realtime_url");
            registry.emissions.region =
                get_as<std::string>(e["region"], "registry.emissions.region", "");
            registry.emissions.cache_ttl_seconds =
                get_as<int64_t>(e["cache_ttl_seconds"], "registry.emissions.cache_ttl_seconds",
                                registry.emissions.cache_ttl_seconds);
        }
        registry.profile = detail::parse_profile(node["profile"], "registry.profile");
        config.registry = std::move(registry);
    }

    if (root["gate"]) {
        auto node = root["gate"];
        check_keys(node, "gate",
                   {"listen_address", "backends", "strategy", "id_label", "registry_url",
                    "registry_store", "cluster_id", "timeout_seconds", "metric_allowlist",
                    "tls_cert_file", "tls_key_file"});
        GateConfig gate;
        gate.listen_address = get_as<std::string>(node["listen_address"], "gate.listen_address",
                                                  gate.listen_address);
        detail::require_listen_address(gate.listen_address, "gate.listen_address");
        if (node["backends"])
            for (const auto& b : node["backends"]) {
                std::string url = b.as<std::string>();
                detail::require_url(url, "gate.backends");
                gate.backends.push_back(url);
            }
        gate.strategy = get_as<std::string>(node["strategy"], "gate.strategy", gate.strategy);
        if (!balance_strategy_from_string(gate.strategy))
            throw ConfigError("gate.strategy must be round_robin or least_connection");
        gate.id_label = get_as<std::string>(node["id_label"], "gate.id_label", gate.id_label);
        gate.registry_url = get_as<std::string>(node["registry_url"], "gate.registry_url", "");
        detail::require_url(gate.registry_url, "gate.registry_url");
        gate.registry_store =
            get_as<std::string>(node["registry_store"], "gate.registry_store", "");
        gate.cluster_id = get_as<std::string>(node["cluster_id"], "gate.cluster_id",
                                              gate.cluster_id);
        gate.timeout_seconds = get_as<int64_t>(node["timeout_seconds"], "gate.timeout_seconds",
                                               gate.timeout_seconds);
        if (node["metric_allowlist"])
            for (const auto& m : node["metric_allowlist"])
                gate.metric_allowlist.push_back(m.as<std::string>());
        gate.tls_cert_file = get_as<std::string>(node["tls_cert_file"], "gate.tls_cert_file", "");
        gate.tls_key_file = get_as<std::string>(node["tls_key_file"], "gate.tls_key_file", "");
        if (gate.backends.empty()) throw ConfigError("gate.backends must list at least one URL");
        if (gate.registry_url.empty() && gate.registry_store.empty())
            throw ConfigError("gate needs registry_url or registry_store");
        config.gate = std::move(gate);
    }

    return config;
}

inline StackConfig load_config(const std::filesystem::path& path) {
    YAML::Node root;
    try {
        root = YAML::LoadFile(path.string());
    } catch (const YAML::Exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
    return parse_config(root);
}

// canonical re-rendering of a loaded config (secrets stay hashed)
inline std::string normalized_config_yaml(const StackConfig& config) {
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "shared" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "log_level" << YAML::Value << config.shared.log_level;
    if (config.shared.basic_auth) {
        out << YAML::Key << "basic_auth" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "username" << YAML::Value << config.shared.basic_auth->username;
        out << YAML::Key << "password_hash" << YAML::Value
            << config.shared.basic_auth->password_hash;
        out << YAML::EndMap;
    }
    out << YAML::EndMap;
    if (config.exporter) {
        const auto& e = *config.exporter;
        out << YAML::Key << "exporter" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "listen_address" << YAML::Value << e.listen_address;
        out << YAML::Key << "fs_root" << YAML::Value << e.fs_root.string();
        out << YAML::Key << "collectors" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "cgroup" << YAML::Value << e.collector_cgroup;
        out << YAML::Key << "rapl" << YAML::Value << e.collector_rapl;
        out << YAML::Key << "ipmi" << YAML::Value << e.collector_ipmi;
        out << YAML::Key << "gpumap" << YAML::Value << e.collector_gpumap;
        out << YAML::EndMap;
        out << YAML::Key << "ipmi" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "mode" << YAML::Value << e.ipmi_mode;
        out << YAML::Key << "command" << YAML::Value << e.ipmi_command;
        out << YAML::Key << "file" << YAML::Value << e.ipmi_file.string();
        out << YAML::Key << "min_interval_seconds" << YAML::Value << e.ipmi_min_interval_seconds;
        out << YAML::EndMap;
        out << YAML::EndMap;
    }
    if (config.registry) {
        const auto& r = *config.registry;
        out << YAML::Key << "registry" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "listen_address" << YAML::Value << r.listen_address;
        out << YAML::Key << "cluster_id" << YAML::Value << r.cluster_id;
        out << YAML::Key << "db_path" << YAML::Value << r.db_path.string();
        out << YAML::Key << "accounting_file" << YAML::Value << r.accounting_file.string();
        out << YAML::Key << "tsdb_url" << YAML::Value << r.tsdb_url;
        out << YAML::Key << "tsdb_admin_url" << YAML::Value << r.tsdb_admin_url;
        out << YAML::Key << "ingest_interval_seconds" << YAML::Value << r.ingest_interval_seconds;
        out << YAML::Key << "aggregation_interval_seconds" << YAML::Value
            << r.aggregation_interval_seconds;
        out << YAML::Key << "purge_cutoff_seconds" << YAML::Value << r.purge_cutoff_seconds;
        out << YAML::Key << "backup_interval_seconds" << YAML::Value << r.backup_interval_seconds;
        out << YAML::Key << "backup_dir" << YAML::Value << r.backup_dir.string();
        out << YAML::Key << "emissions" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "static_table" << YAML::Value << r.emissions.static_table.string();
        out << YAML::Key << "realtime_url" << YAML::Value << r.emissions.realtime_url;
        out << YAML::Key << "region" << YAML::Value << r.emissions.region;
        out << YAML::Key << "cache_ttl_seconds" << YAML::Value << r.emissions.cache_ttl_seconds;
        out << YAML::EndMap;
        out << YAML::Key << "profile" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "rapl_domains" << YAML::Value << YAML::BeginSeq;
        if (r.profile.has_rapl_cpu) out << "cpu_package";
        if (r.profile.has_rapl_dram) out << "dram";
        out << YAML::EndSeq;
        out << YAML::Key << "ipmi_includes_gpu" << YAML::Value << r.profile.ipmi_includes_gpu;
        out << YAML::Key << "network_fraction" << YAML::Value << r.profile.network_fraction;
        out << YAML::Key << "storage_fraction" << YAML::Value << r.profile.storage_fraction;
        out << YAML::EndMap;
        out << YAML::EndMap;
    }
    if (config.gate) {
        const auto& g = *config.gate;
        out << YAML::Key << "gate" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "listen_address" << YAML::Value << g.listen_address;
        out << YAML::Key << "backends" << YAML::Value << g.backends;
        out << YAML::Key << "strategy" << YAML::Value << g.strategy;
        out << YAML::Key << "id_label" << YAML::Value << g.id_label;
        out << YAML::Key << "registry_url" << YAML::Value << g.registry_url;
        out << YAML::Key << "registry_store" << YAML::Value << g.registry_store.string();
        out << YAML::Key << "cluster_id" << YAML::Value << g.cluster_id;
        out << YAML::Key << "timeout_seconds" << YAML::Value << g.timeout_seconds;
        out << YAML::Key << "metric_allowlist" << YAML::Value << g.metric_allowlist;
        out << YAML::EndMap;
    }
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

// fires when its interval has elapsed since the last firing; drives the
// registry writer cycle and the punctual backup schedule
class IntervalGate {
public:
    explicit IntervalGate(int64_t interval_ms) : interval_ms_(interval_ms) {}

    bool due(int64_t now_ms) {
        if (interval_ms_ <= 0) return false;
        if (last_ms_ >= 0 && now_ms - last_ms_ < interval_ms_) return false;
        last_ms_ = now_ms;
        return true;
    }

private:
    int64_t interval_ms_;
    int64_t last_ms_ = -1;
};

}  // namespace wattline
