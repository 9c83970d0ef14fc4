// Synthetic-cluster tooling: deterministic fixture/trace generation, the
// mock TSDB service, and the scrape driver.
//
//   wattline-sim generate --spec <file> --out <dir>
//   wattline-sim tsdb [--load <manifest>] [--listen h:p] [--admin-listen h:p]
//   wattline-sim scrape --targets <file> --interval 15 --tsdb <admin-url>
//                       [--manifest <file> --fixtures <dir>] [--cycles N]

#include <atomic>
#include <csignal>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "wattline/mock_tsdb.hpp"
#include "wattline/scrape.hpp"
#include "wattline/service.hpp"
#include "wattline/sim.hpp"

namespace {

std::atomic<bool> g_stop{false};
void handle_signal(int) { g_stop = true; }

}  // namespace

int main(int argc, char** argv) {
    using namespace wattline;
    CLI::App app{"wattline-sim: synthetic cluster generator, mock TSDB, scrape driver"};
    app.require_subcommand(1);

    auto* generate = app.add_subcommand("generate", "write fixture trees, manifest, accounting");
    std::string spec_path, out_dir;
    generate->add_option("--spec", spec_path, "cluster spec YAML")->required();
    generate->add_option("--out", out_dir, "output directory")->required();

    auto* tsdb_cmd = app.add_subcommand("tsdb", "serve the mock TSDB");
    std::string load_manifest_path;
    std::string listen = "127.0.0.1:9090";
    std::string admin_listen = "127.0.0.1:9091";
    tsdb_cmd->add_option("--load", load_manifest_path, "manifest to preload series from");
    tsdb_cmd->add_option("--listen", listen, "query listener host:port");
    tsdb_cmd->add_option("--admin-listen", admin_listen,
                         "admin listener (push, delete, counters) host:port");

    auto* scrape = app.add_subcommand("scrape", "poll exporters and push into the mock TSDB");
    std::string targets_path, tsdb_url, manifest_path, fixtures_dir;
    int interval_s = 15;
    int cycles = -1;
    bool verify_roundtrip = false;
    bool live = false;
    scrape->add_option("--targets", targets_path, "file of 'instance url' rows")->required();
    scrape->add_option("--interval", interval_s, "scrape interval in (simulated) seconds");
    scrape->add_option("--tsdb", tsdb_url, "mock TSDB admin URL to push samples to")->required();
    scrape->add_option("--manifest", manifest_path, "replay mode: manifest with ground truth");
    scrape->add_option("--fixtures", fixtures_dir, "replay mode: fixture root to advance");
    scrape->add_option("--cycles", cycles, "number of cycles (replay default: all instants)");
    scrape->add_flag("--verify-roundtrip", verify_roundtrip,
                     "re-render each payload and require byte identity");
    scrape->add_flag("--live", live, "pace cycles in real time");

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) {
            auto spec = sim::load_cluster_spec(spec_path);
            auto manifest = sim::generate_cluster(spec, out_dir);
            std::cout << "nodes=" << manifest.nodes.size() << " jobs=" << manifest.jobs.size()
                      << " instants=" << spec.instant_count() << " out=" << out_dir << "\n";
            return 0;
        }
        if (tsdb_cmd->parsed()) {
            MockTsdb tsdb;
            if (!load_manifest_path.empty()) {
                auto manifest = sim::load_manifest(load_manifest_path);
                sim::manifest_to_tsdb(manifest, tsdb);
                std::cerr << "loaded " << tsdb.series_count() << " series, "
                          << tsdb.sample_count() << " samples\n";
            }
            HttpService query_service, admin_service;
            tsdb.register_query_routes(query_service.server());
            tsdb.register_admin_routes(admin_service.server());
            auto q = parse_listen_address(listen);
            auto a = parse_listen_address(admin_listen);
            if (!q || !a) throw std::runtime_error("bad listen address");
            int qport = query_service.start(q->host, q->port);
            int aport = admin_service.start(a->host, a->port);
            std::cerr << "mock tsdb: queries on " << qport << ", admin on " << aport << "\n";
            std::signal(SIGINT, handle_signal);
            std::signal(SIGTERM, handle_signal);
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            return 0;
        }
        if (scrape->parsed()) {
            sim::ScrapeDriver::Options opts;
            opts.targets = sim::load_targets(targets_path);
            auto push = parse_listen_address(
                tsdb_url.rfind("http://", 0) == 0 ? tsdb_url.substr(7) : tsdb_url);
            if (!push) throw std::runtime_error("bad --tsdb url (need host:port)");
            opts.tsdb_push_host = push->host;
            opts.tsdb_push_port = push->port;
            opts.interval_s = interval_s;
            opts.verify_roundtrip = verify_roundtrip;
            opts.live_pacing = live;
            std::optional<sim::TraceManifest> manifest;
            std::optional<sim::FixtureAdvancer> advancer;
            if (!manifest_path.empty()) {
                if (fixtures_dir.empty())
                    throw std::runtime_error("--manifest needs --fixtures");
                manifest = sim::load_manifest(manifest_path);
                advancer.emplace(*manifest, fixtures_dir);
                opts.advancer = &*advancer;
            }
            sim::ScrapeDriver driver(std::move(opts));
            auto report = driver.run(cycles);
            nlohmann::json j = {
                {"cycles", report.cycles},
                {"scrapes_attempted", report.scrapes_attempted},
                {"scrapes_failed", report.scrapes_failed},
                {"samples_pushed", report.samples_pushed},
                {"parse_errors", report.parse_errors},
                {"roundtrip_failures", report.roundtrip_failures},
                {"max_scrape_ms", report.max_scrape_ms},
                {"mean_scrape_ms", report.mean_scrape_ms()},
            };
            std::cout << j.dump(2) << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
