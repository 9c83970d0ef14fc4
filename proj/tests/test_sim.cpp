#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "wattline/exporter.hpp"
#include "wattline/registry.hpp"
#include "wattline/scrape.hpp"
#include "wattline/sim.hpp"

using namespace wattline;
using namespace wattline::sim;
using testutil::TempDir;

namespace {

ClusterSpec small_spec() {
    ClusterSpec spec;
    spec.node_count = 2;
    spec.sockets_per_node = 2;
    spec.job_rate_per_day = 30;
    spec.mean_job_duration_s = 120;
    spec.short_job_fraction = 0.2;
    spec.user_count = 2;
    spec.duration_s = 600;  // 10 simulated minutes
    spec.scrape_interval_s = 15;
    spec.seed = 7;
    return spec;
}

std::string tree_digest(const std::filesystem::path& root) {
    std::vector<std::string> entries;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
        std::string item = std::filesystem::relative(e.path(), root).string();
        if (e.is_regular_file()) item += "=" + *util::read_text_file(e.path());
        entries.push_back(std::move(item));
    }
    std::sort(entries.begin(), entries.end());
    std::string all;
    for (const auto& e : entries) all += e + "\n";
    return util::sha256_hex(all);
}

}  // namespace

TEST_CASE("generator determinism: same seed, identical bytes") {
    TempDir a, b;
    auto spec = small_spec();
    generate_cluster(spec, a.path());
    generate_cluster(spec, b.path());
    REQUIRE(tree_digest(a.path()) == tree_digest(b.path()));

    TempDir c;
    auto other = spec;
    other.seed = 8;
    generate_cluster(other, c.path());
    REQUIRE(tree_digest(a.path()) != tree_digest(c.path()));
}

TEST_CASE("generator: zero job rate leaves idle nodes with empty cgroup trees") {
    TempDir dir;
    auto spec = small_spec();
    spec.job_rate_per_day = 0;
    auto manifest = generate_cluster(spec, dir.path());
    REQUIRE(manifest.jobs.empty());
    for (const auto& node : manifest.nodes) {
        auto scope =
            dir.path() / "nodes" / node.name / "sys/fs/cgroup/system.slice/slurmstepd.scope";
        REQUIRE(std::filesystem::is_empty(scope));
        for (int64_t w : node.ipmi_watts) REQUIRE(w > 0);  // idle power only
    }
}

TEST_CASE("generator: manifest job count and per-node share bound") {
    TempDir dir;
    auto spec = small_spec();
    spec.job_rate_per_day = 50;
    auto manifest = generate_cluster(spec, dir.path());
    REQUIRE(manifest.jobs.size() == 50);

    // at every instant the reconstructed job cpu rates stay within the node
    // total
    for (const auto& node : manifest.nodes) {
        for (size_t i = 1; i < node.t_ms.size(); ++i) {
            double dt_s = static_cast<double>(node.t_ms[i] - node.t_ms[i - 1]) / 1000.0;
            double node_rate =
                static_cast<double>(node.cpu_jiffies[i] - node.cpu_jiffies[i - 1]) / 100.0 / dt_s;
            double sum = 0;
            for (const auto& job : manifest.jobs) {
                if (job.node != node.name) continue;
                auto it = std::lower_bound(job.t_ms.begin(), job.t_ms.end(), node.t_ms[i]);
                if (it == job.t_ms.end() || *it != node.t_ms[i]) continue;
                size_t pos = static_cast<size_t>(it - job.t_ms.begin());
                if (pos == 0 || job.t_ms[pos - 1] != node.t_ms[i - 1]) continue;
                sum += static_cast<double>(job.cpu_usec[pos] - job.cpu_usec[pos - 1]) / 1e6 / dt_s;
            }
            REQUIRE(sum <= node_rate * (1 + 1e-6));
        }
    }
}

TEST_CASE("ground-truth closure: node power equals idle floor plus job watts") {
    TempDir dir;
    auto manifest = generate_cluster(small_spec(), dir.path());
    for (const auto& node : manifest.nodes) {
        for (size_t i = 1; i < node.t_ms.size(); ++i) {
            double sum = 0;
            for (const auto& job : manifest.jobs) {
                if (job.node != node.name) continue;
                auto it = std::lower_bound(job.t_ms.begin(), job.t_ms.end(), node.t_ms[i]);
                if (it == job.t_ms.end() || *it != node.t_ms[i]) continue;
                sum += job.true_watts[static_cast<size_t>(it - job.t_ms.begin())];
            }
            double closure = node.idle_floor_watts[i] + sum;
            REQUIRE_THAT(closure, Catch::Matchers::WithinRel(
                                      static_cast<double>(node.ipmi_watts[i]), 1e-9));
            REQUIRE(node.idle_floor_watts[i] >= -1e-9);
        }
    }
}

TEST_CASE("manifest round trip preserves the ground truth") {
    TempDir dir;
    auto manifest = generate_cluster(small_spec(), dir.path());
    auto loaded = load_manifest(dir.path() / "manifest.jsonl");
    REQUIRE(loaded.jobs.size() == manifest.jobs.size());
    REQUIRE(loaded.nodes.size() == manifest.nodes.size());
    REQUIRE(loaded.spec.seed == manifest.spec.seed);
    for (size_t j = 0; j < manifest.jobs.size(); ++j) {
        REQUIRE(loaded.jobs[j].uuid == manifest.jobs[j].uuid);
        REQUIRE(loaded.jobs[j].cpu_usec == manifest.jobs[j].cpu_usec);
        REQUIRE(loaded.jobs[j].true_watts == manifest.jobs[j].true_watts);
    }
    REQUIRE(loaded.nodes[0].rapl_uj == manifest.nodes[0].rapl_uj);
}

TEST_CASE("spec file: load, defaults, unknown keys") {
    TempDir dir;
    auto path = dir.path() / "cluster.yaml";
    testutil::write_file(path,
                         "node_count: 3\njob_rate_per_day: 10\nduration_s: 300\n"
                         "profiles:\n  amd: { rapl_domains: [cpu_package] }\n");
    auto spec = load_cluster_spec(path);
    REQUIRE(spec.node_count == 3);
    REQUIRE(spec.scrape_interval_s == 15);  // default
    REQUIRE(spec.profiles.count("amd") == 1);
    REQUIRE_FALSE(spec.profiles.at("amd").has_rapl_dram);

    testutil::write_file(path, "node_count: 3\nscrap_interval: 10\n");
    REQUIRE_THROWS_WITH(load_cluster_spec(path),
                        Catch::Matchers::ContainsSubstring("scrap_interval"));
}

TEST_CASE("accounting export matches manifest jobs") {
    TempDir dir;
    auto manifest = generate_cluster(small_spec(), dir.path());
    auto text = util::read_text_file(dir.path() / "accounting.psv");
    REQUIRE(text.has_value());
    auto parsed = parse_slurm_accounting(*text, "sim");
    REQUIRE(parsed.errors == 0);
    REQUIRE(parsed.units.size() == manifest.jobs.size());
    int running = 0;
    for (const auto& u : parsed.units)
        if (!u.ended_at) ++running;
    int expected_running = 0;
    for (const auto& j : manifest.jobs)
        if (j.running_at_end) ++expected_running;
    REQUIRE(running == expected_running);
}

namespace {

struct SimStack {
    TempDir dir;
    TraceManifest manifest;
    std::vector<std::unique_ptr<Exporter>> exporters;
    std::vector<std::unique_ptr<HttpService>> exporter_services;
    MockTsdb tsdb;
    HttpService tsdb_query;
    HttpService tsdb_admin;
    std::vector<ScrapeTarget> targets;

    explicit SimStack(const ClusterSpec& spec) {
        manifest = generate_cluster(spec, dir.path());
        for (const auto& node : manifest.nodes) {
            ExporterOptions opts;
            opts.fs_root = dir.path() / "nodes" / node.name;
            opts.ipmi_source = IpmiPowerSource::Options{
                .mode = IpmiPowerSource::Mode::file,
                .file = opts.fs_root / "ipmi/dcmi_power",
                .min_interval_ms = 0};
            exporters.push_back(std::make_unique<Exporter>(std::move(opts)));
            auto service = std::make_unique<HttpService>();
            exporters.back()->register_routes(service->server());
            int port = service->start("127.0.0.1", 0);
            targets.push_back({node.name, "127.0.0.1", port});
            exporter_services.push_back(std::move(service));
        }
        tsdb.register_query_routes(tsdb_query.server());
        tsdb.register_admin_routes(tsdb_admin.server());
        tsdb_query.start("127.0.0.1", 0);
        tsdb_admin.start("127.0.0.1", 0);
    }

    ScrapeDriver::Options driver_options(FixtureAdvancer* advancer) {
        return {.targets = targets,
                .tsdb_push_host = "127.0.0.1",
                .tsdb_push_port = tsdb_admin.port(),
                .interval_s = manifest.spec.scrape_interval_s,
                .verify_roundtrip = true,
                .advancer = advancer};
    }
};

}  // namespace

TEST_CASE("scrape cycles fill the mock TSDB with exactly one point per series per cycle") {
    auto spec = small_spec();
    spec.job_rate_per_day = 0;  // node-level series only, exact counting
    spec.duration_s = 60 * 15;  // 60 intervals
    SimStack stack(spec);
    FixtureAdvancer advancer(stack.manifest, stack.dir.path());
    ScrapeDriver driver(stack.driver_options(&advancer));
    auto report = driver.run();
    REQUIRE(report.cycles == 61);
    REQUIRE(report.scrapes_failed == 0);
    REQUIRE(report.parse_errors == 0);
    REQUIRE(report.roundtrip_failures == 0);
    // every exposed sample appears exactly once
    REQUIRE(stack.tsdb.counters().duplicate_samples == 0);
    REQUIRE(static_cast<int64_t>(stack.tsdb.sample_count()) == report.samples_pushed);
    auto ipmi = stack.tsdb.select(*parse_plain_selector("wattline_node_power_watts"), INT64_MIN,
                                  INT64_MAX);
    REQUIRE(ipmi.size() == 2);  // one per node
    REQUIRE(ipmi[0].points.size() == 61);
    REQUIRE(ipmi[1].points.size() == 61);
}

TEST_CASE("one exporter down: its failures recorded, other targets unaffected") {
    auto spec = small_spec();
    spec.job_rate_per_day = 0;
    spec.duration_s = 10 * 15;
    SimStack stack(spec);
    stack.exporter_services[0]->stop();  // node-000 goes dark
    FixtureAdvancer advancer(stack.manifest, stack.dir.path());
    ScrapeDriver driver(stack.driver_options(&advancer));
    auto report = driver.run();
    REQUIRE(report.cycles == 11);
    REQUIRE(report.scrapes_failed == 11);
    auto ipmi = stack.tsdb.select(*parse_plain_selector(
                                      "wattline_node_power_watts{instance=\"node-001\"}"),
                                  INT64_MIN, INT64_MAX);
    REQUIRE(ipmi.size() == 1);
    REQUIRE(ipmi[0].points.size() == 11);
    auto dark = stack.tsdb.select(*parse_plain_selector(
                                      "wattline_node_power_watts{instance=\"node-000\"}"),
                                  INT64_MIN, INT64_MAX);
    REQUIRE(dark.empty());
}

TEST_CASE("manifest_to_tsdb loads per-job truth series") {
    TempDir dir;
    auto manifest = generate_cluster(small_spec(), dir.path());
    MockTsdb tsdb;
    manifest_to_tsdb(manifest, tsdb);
    const auto& job = manifest.jobs.front();
    auto cpu = tsdb.select(
        *parse_plain_selector("wattline_cpu_seconds_total{workload_id=\"" + job.uuid + "\"}"),
        INT64_MIN, INT64_MAX);
    if (job.t_ms.empty()) {
        REQUIRE(cpu.empty());
    } else {
        REQUIRE(cpu.size() == 1);
        REQUIRE(cpu[0].points.size() == job.t_ms.size());
    }
}

TEST_CASE("targets file parsing") {
    TempDir dir;
    testutil::write_file(dir.path() / "targets", "# comment\nnode-0 http://127.0.0.1:9100\n");
    auto targets = load_targets(dir.path() / "targets");
    REQUIRE(targets.size() == 1);
    REQUIRE(targets[0].instance == "node-0");
    REQUIRE(targets[0].port == 9100);
    testutil::write_file(dir.path() / "targets", "bad-row\n");
    REQUIRE_THROWS(load_targets(dir.path() / "targets"));
}
