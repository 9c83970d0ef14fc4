// Service entrypoints and operator utilities for the wattline stack.
//
//   wattline exporter|registry|gate --config <file> [overrides]
//   wattline rules --profile <file>
//   wattline hash-password --password <pw> [--salt <hex>]
//
// Exit codes: 0 clean shutdown, 1 configuration error, 2 runtime fatal.

#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <random>
#include <thread>

#include <CLI11.hpp>

#include "wattline/config.hpp"
#include "wattline/runner.hpp"

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop = true; }

int run_service_command(const std::string& name, const std::string& config_path,
                        const std::function<void(wattline::StackConfig&)>& apply_overrides) {
    wattline::StackConfig config;
    try {
        if (!config_path.empty()) config = wattline::load_config(config_path);
        if (name == "exporter" && !config.exporter) config.exporter.emplace();
        apply_overrides(config);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    std::unique_ptr<wattline::ServiceRuntime> runtime;
    try {
        runtime = wattline::run_service(name, config);
    } catch (const wattline::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "startup error: " << e.what() << "\n";
        return 2;
    }
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    std::cerr << name << " listening on port " << runtime->port() << "\n";
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    std::cerr << "shutting down\n";
    runtime->request_stop();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"wattline: per-workload energy and emissions monitoring stack"};
    app.require_subcommand(1);

    std::string config_path;

    auto* exporter = app.add_subcommand("exporter", "run the per-node metrics exporter");
    std::string listen_override, fs_root_override;
    bool cgroup_on = true, rapl_on = true, ipmi_on = true, gpumap_on = true;
    bool cgroup_set = false, rapl_set = false, ipmi_set = false, gpumap_set = false;
    exporter->add_option("--config", config_path, "stack config file");
    exporter->add_option("--web.listen-address", listen_override, "host:port to listen on");
    exporter->add_option("--path.fs-root", fs_root_override, "filesystem prefix for all sources");
    exporter->add_flag("--collector.cgroup,!--no-collector.cgroup", cgroup_on)
        ->each([&](const std::string&) { cgroup_set = true; });
    exporter->add_flag("--collector.rapl,!--no-collector.rapl", rapl_on)
        ->each([&](const std::string&) { rapl_set = true; });
    exporter->add_flag("--collector.ipmi,!--no-collector.ipmi", ipmi_on)
        ->each([&](const std::string&) { ipmi_set = true; });
    exporter->add_flag("--collector.gpumap,!--no-collector.gpumap", gpumap_on)
        ->each([&](const std::string&) { gpumap_set = true; });

    auto* registry = app.add_subcommand("registry", "run the workload registry API server");
    registry->add_option("--config", config_path, "stack config file")->required();

    auto* gate = app.add_subcommand("gate", "run the ownership-enforcing query gate");
    gate->add_option("--config", config_path, "stack config file")->required();

    auto* rules = app.add_subcommand("rules", "print TSDB recording rules for a hardware profile");
    std::string profile_path;
    rules->add_option("--profile", profile_path, "hardware profile YAML")->required();

    auto* hash = app.add_subcommand("hash-password", "hash a basic-auth password for the config");
    std::string password, salt;
    hash->add_option("--password", password, "plaintext password")->required();
    hash->add_option("--salt", salt, "hex salt (random when omitted)");

    CLI11_PARSE(app, argc, argv);

    if (rules->parsed()) {
        try {
            auto profile = wattline::load_profile_yaml(profile_path);
            std::cout << wattline::generate_rule_expression(profile);
            return 0;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        }
    }
    if (hash->parsed()) {
        if (salt.empty()) {
            std::mt19937_64 rng(std::random_device{}());
            char buf[17];
            std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(rng()));
            salt = buf;
        }
        std::cout << wattline::util::make_password_hash(password, salt) << "\n";
        return 0;
    }
    if (exporter->parsed()) {
        return run_service_command("exporter", config_path, [&](wattline::StackConfig& config) {
            auto& cfg = *config.exporter;
            if (!listen_override.empty()) cfg.listen_address = listen_override;
            if (!fs_root_override.empty()) cfg.fs_root = fs_root_override;
            if (cgroup_set) cfg.collector_cgroup = cgroup_on;
            if (rapl_set) cfg.collector_rapl = rapl_on;
            if (ipmi_set) cfg.collector_ipmi = ipmi_on;
            if (gpumap_set) cfg.collector_gpumap = gpumap_on;
            if (!wattline::parse_listen_address(cfg.listen_address))
                throw wattline::ConfigError("invalid --web.listen-address");
        });
    }
    if (registry->parsed()) return run_service_command("registry", config_path, [](auto&) {});
    if (gate->parsed()) return run_service_command("gate", config_path, [](auto&) {});
    return 0;
}
