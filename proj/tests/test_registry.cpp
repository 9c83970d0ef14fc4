#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <thread>

#include "helpers.hpp"
#include "wattline/mock_tsdb.hpp"
#include "wattline/registry.hpp"

using namespace wattline;
using testutil::TempDir;

namespace {

constexpr const char* kAccounting =
    "1001|alice|proj-a|2026-08-01T08:00:00|2026-08-01T09:00:00|4|8589934592|\n"
    "1002|bob|proj-a|2026-08-01T08:30:00|2026-08-01T08:30:30|2|4294967296|0,1\n"
    "1003|alice|proj-b|2026-08-01T10:00:00||8|17179869184|\n";

struct RegistryFixture {
    TempDir dir;
    MockTsdb tsdb;
    HttpService query_service;
    HttpService admin_service;
    std::shared_ptr<Store> store;
    std::shared_ptr<TsdbClient> client;
    std::shared_ptr<EmissionFactorSource> factors;
    std::unique_ptr<Registry> registry;

    explicit RegistryFixture(int64_t cutoff_seconds = 60, int64_t fake_now = 1754038800000) {
        tsdb.register_query_routes(query_service.server());
        tsdb.register_admin_routes(admin_service.server());
        int qport = query_service.start("127.0.0.1", 0);
        int aport = admin_service.start("127.0.0.1", 0);
        store = std::make_shared<Store>(dir.path() / "units.db");
        client = std::make_shared<TsdbClient>(
            TsdbClient::Options{.base_url = "http://127.0.0.1:" + std::to_string(qport),
                                .admin_url = "http://127.0.0.1:" + std::to_string(aport),
                                .attempts = 2,
                                .backoff_ms = 1});
        factors = std::make_shared<EmissionFactorSource>(EmissionFactorSource::Options{
            .static_table = StaticFactorTable::parse("region,grams_per_kwh\nFR,50.0\n", 0)});
        RegistryOptions opts;
        opts.cluster_id = "test";
        opts.emission_region = "FR";
        opts.purge_cutoff_seconds = cutoff_seconds;
        opts.clock = [fake_now] { return fake_now; };
        registry = std::make_unique<Registry>(store, client, factors, opts);
    }
};

}  // namespace

TEST_CASE("accounting parse: rows, running jobs, gpu indices") {
    auto result = parse_slurm_accounting(kAccounting, "c1");
    REQUIRE(result.units.size() == 3);
    REQUIRE(result.errors == 0);
    REQUIRE(result.units[0].user == "alice");
    REQUIRE(result.units[0].ended_at.has_value());
    REQUIRE(*result.units[0].ended_at - result.units[0].started_at == 3600 * 1000);
    REQUIRE(result.units[1].gpu_indices == std::vector<int>{0, 1});
    REQUIRE_FALSE(result.units[2].ended_at.has_value());
    REQUIRE(result.units[2].alloc_cpus == 8);
}

TEST_CASE("accounting parse: malformed rows skipped with count") {
    auto result = parse_slurm_accounting("bad row\n1001|u|p|2026-08-01T08:00:00||1|100|\n", "c");
    REQUIRE(result.units.size() == 1);
    REQUIRE(result.errors == 1);
    auto bad_date = parse_slurm_accounting("1|u|p|noniso||1|100|\n", "c");
    REQUIRE(bad_date.units.empty());
    REQUIRE(bad_date.errors == 1);
}

TEST_CASE("ingest: upserts and idempotency") {
    RegistryFixture fx;
    auto first = fx.registry->ingest_accounting(kAccounting);
    REQUIRE(first.upserts == 3);
    REQUIRE(fx.store->unit_count() == 3);
    auto second = fx.registry->ingest_accounting(kAccounting);
    REQUIRE(second.upserts == 3);
    REQUIRE(fx.store->unit_count() == 3);
    auto units_a = fx.store->list_units();
    fx.registry->ingest_accounting(kAccounting);
    auto units_b = fx.store->list_units();
    REQUIRE(units_a.size() == units_b.size());
    for (size_t i = 0; i < units_a.size(); ++i) {
        REQUIRE(units_a[i].uuid == units_b[i].uuid);
        REQUIRE(units_a[i].user == units_b[i].user);
        REQUIRE(units_a[i].started_at == units_b[i].started_at);
        REQUIRE(units_a[i].ended_at == units_b[i].ended_at);
    }
}

TEST_CASE("ingest: running unit updated in place once it ends") {
    RegistryFixture fx;
    fx.registry->ingest_accounting("42|alice|p|2026-08-01T08:00:00||4|1024|\n");
    auto running = fx.store->find_unit("test", "42");
    REQUIRE_FALSE(running->ended_at.has_value());
    fx.registry->ingest_accounting(
        "42|alice|p|2026-08-01T08:00:00|2026-08-01T08:45:00|4|1024|\n");
    REQUIRE(fx.store->unit_count() == 1);
    auto ended = fx.store->find_unit("test", "42");
    REQUIRE(ended->ended_at.has_value());
}

TEST_CASE("aggregate_unit: constant attributed power through the pipeline") {
    int64_t t0 = 1754035200000;  // 2026-08-01T08:00:00Z
    RegistryFixture fx(60, t0 + 7'200'000);
    // one fully-occupying job: attribution must return the whole 100 W
    for (int i = 0; i <= 61; ++i) {
        int64_t ts = t0 + static_cast<int64_t>(i) * 60'000;
        LabelSet node{{"instance", "n1"}};
        fx.tsdb.push_sample("wattline_node_power_watts", node, ts, 100.0);
        fx.tsdb.push_sample("wattline_node_cpu_seconds_total", node, ts, 4.0 * 60.0 * i);
        fx.tsdb.push_sample("wattline_node_memory_bytes", node, ts, 8e9);
        LabelSet rapl_cpu{{"instance", "n1"}, {"domain", "cpu_package"}, {"socket", "0"}};
        LabelSet rapl_dram{{"instance", "n1"}, {"domain", "dram"}, {"socket", "0"}};
        fx.tsdb.push_sample("wattline_rapl_energy_microjoules_total", rapl_cpu, ts, 60e6 * i);
        fx.tsdb.push_sample("wattline_rapl_energy_microjoules_total", rapl_dram, ts, 15e6 * i);
        LabelSet job{{"instance", "n1"}, {"workload_id", "9000"}};
        fx.tsdb.push_sample("wattline_cpu_seconds_total", job, ts, 4.0 * 60.0 * i);
        fx.tsdb.push_sample("wattline_memory_bytes", job, ts, 8e9);
    }
    WorkloadUnit unit;
    unit.uuid = "9000";
    unit.cluster_id = "test";
    unit.user = "alice";
    unit.project = "p";
    unit.created_at = t0;
    unit.started_at = t0;
    unit.ended_at = t0 + 61 * 60'000;
    unit.alloc_cpus = 4;
    unit.alloc_memory_bytes = 8'000'000'000;
    fx.store->upsert_unit(unit);

    auto agg = fx.registry->aggregate_unit(unit);
    REQUIRE_FALSE(agg.no_data);
    // 100 W over the 3600 s covered by watt samples (instants 1..61)
    REQUIRE_THAT(agg.total_energy_kwh, Catch::Matchers::WithinRel(0.1, 1e-9));
    REQUIRE_THAT(agg.total_emissions_grams, Catch::Matchers::WithinRel(5.0, 1e-9));
    // counter advanced 4 cores * 3660 s between first and last sample
    REQUIRE_THAT(agg.total_cpu_time_seconds, Catch::Matchers::WithinRel(4.0 * 3660.0, 1e-9));
    REQUIRE_THAT(agg.avg_cpu_usage_fraction, Catch::Matchers::WithinRel(1.0, 1e-9));
}

TEST_CASE("aggregate_unit: no series yields zeroed no_data aggregate") {
    RegistryFixture fx;
    WorkloadUnit unit;
    unit.uuid = "ghost";
    unit.cluster_id = "test";
    unit.user = "alice";
    unit.project = "p";
    unit.started_at = 1000;
    unit.ended_at = 2000;
    auto agg = fx.registry->aggregate_unit(unit);
    REQUIRE(agg.no_data);
    REQUIRE(agg.total_energy_kwh == 0.0);
    REQUIRE(agg.total_emissions_grams == 0.0);
}

TEST_CASE("aggregate_scope: additivity over a user's units") {
    RegistryFixture fx;
    fx.registry->ingest_accounting(kAccounting);
    AggregateMetrics a;
    a.key = "1001";
    a.window_start = 0;
    a.window_end = 10;
    a.total_energy_kwh = 0.1;
    a.total_emissions_grams = 5.0;
    a.total_cpu_time_seconds = 100;
    a.avg_cpu_usage_fraction = 0.5;
    fx.store->upsert_unit_aggregate("test", "1001", a);
    AggregateMetrics b = a;
    b.key = "1003";
    b.total_energy_kwh = 0.2;
    b.total_emissions_grams = 10.0;
    fx.store->upsert_unit_aggregate("test", "1003", b);

    auto user_total =
        fx.registry->aggregate_scope(AggregateScope::user, "alice", 0, 1854038800000);
    REQUIRE_THAT(user_total.total_energy_kwh, Catch::Matchers::WithinRel(0.3, 1e-12));
    REQUIRE_THAT(user_total.total_emissions_grams, Catch::Matchers::WithinRel(15.0, 1e-12));

    auto unknown = fx.registry->aggregate_scope(AggregateScope::user, "nobody", 0, 1854038800000);
    REQUIRE(unknown.no_data);
    REQUIRE(unknown.total_energy_kwh == 0.0);

    auto empty_window = fx.registry->aggregate_scope(AggregateScope::user, "alice", 0, 1);
    REQUIRE(empty_window.total_energy_kwh == 0.0);
}

TEST_CASE("property: user aggregate equals the sum of that user's unit aggregates") {
    RegistryFixture fx;
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::string> users = {"u1", "u2", "u3"};
    std::map<std::string, double> expected_kwh;
    for (int i = 0; i < 60; ++i) {
        WorkloadUnit u;
        u.uuid = "unit-" + std::to_string(i);
        u.cluster_id = "test";
        u.user = users[rng() % users.size()];
        u.project = "p";
        u.created_at = 1000;
        u.started_at = 1000;
        u.ended_at = 1000 + static_cast<int64_t>(rng() % 100'000) + 1;
        fx.store->upsert_unit(u);
        AggregateMetrics m;
        m.key = u.uuid;
        m.total_energy_kwh = unit(rng);
        m.total_emissions_grams = m.total_energy_kwh * 50;
        fx.store->upsert_unit_aggregate("test", u.uuid, m);
        expected_kwh[u.user] += m.total_energy_kwh;
    }
    for (const auto& [user, kwh] : expected_kwh) {
        auto agg = fx.registry->aggregate_scope(AggregateScope::user, user, 0, 10'000'000);
        REQUIRE_THAT(agg.total_energy_kwh, Catch::Matchers::WithinRel(kwh, 1e-9));
    }
}

TEST_CASE("purge: short unit triggers one delete request") {
    RegistryFixture fx(60);
    fx.registry->ingest_accounting(kAccounting);  // 1002 lasted 30 s
    auto report = fx.registry->purge_short_workloads();
    REQUIRE(report.issued == std::vector<std::string>{"{workload_id=\"1002\"}"});
    REQUIRE(fx.tsdb.deleted_selectors() == report.issued);
    // unit row retained, marked purged
    auto unit = fx.store->find_unit("test", "1002");
    REQUIRE(unit.has_value());
    REQUIRE(unit->purged);
    // second run: nothing left to purge
    REQUIRE(fx.registry->purge_short_workloads().issued.empty());
}

TEST_CASE("purge: cutoff zero disables deletions") {
    RegistryFixture fx(0);
    fx.registry->ingest_accounting(kAccounting);
    REQUIRE(fx.registry->purge_short_workloads().issued.empty());
}

TEST_CASE("purge: failed delete is queued for retry, not dropped") {
    RegistryFixture fx(60);
    fx.registry->ingest_accounting(kAccounting);
    fx.admin_service.stop();  // delete endpoint down
    auto report = fx.registry->purge_short_workloads();
    REQUIRE(report.failed == 1);
    REQUIRE(report.issued.empty());
    auto unit = fx.store->find_unit("test", "1002");
    REQUIRE_FALSE(unit->purged);
}

TEST_CASE("property: purge never touches units at or above the cutoff") {
    RegistryFixture fx(120);
    std::mt19937_64 rng(31);
    std::set<std::string> short_ids;
    for (int i = 0; i < 200; ++i) {
        WorkloadUnit u;
        u.uuid = "p" + std::to_string(i);
        u.cluster_id = "test";
        u.user = "u";
        u.project = "p";
        u.created_at = 0;
        u.started_at = 0;
        int64_t duration = static_cast<int64_t>(rng() % 240'000);
        u.ended_at = duration;
        if (duration < 120'000) short_ids.insert(u.uuid);
        fx.store->upsert_unit(u);
    }
    auto report = fx.registry->purge_short_workloads();
    REQUIRE(report.issued.size() == short_ids.size());
    for (const auto& selector : report.issued) {
        bool is_short = false;
        for (const auto& id : short_ids)
            if (selector == "{workload_id=\"" + id + "\"}") is_short = true;
        REQUIRE(is_short);
    }
}

TEST_CASE("ownership trichotomy") {
    RegistryFixture fx;
    fx.registry->ingest_accounting(kAccounting);
    REQUIRE(fx.registry->ownership("alice", "test", "1001"));
    REQUIRE_FALSE(fx.registry->ownership("bob", "test", "1001"));
    REQUIRE_FALSE(fx.registry->ownership("alice", "test", "no-such-unit"));
    REQUIRE_FALSE(fx.registry->ownership("alice", "other-cluster", "1001"));
    // repeated calls agree
    for (int i = 0; i < 5; ++i) REQUIRE(fx.registry->ownership("alice", "test", "1001"));
}

TEST_CASE("backup: restore yields identical query results") {
    RegistryFixture fx;
    fx.registry->ingest_accounting(kAccounting);
    auto dest = fx.dir.path() / "snapshot.db";
    fx.store->backup_to(dest);
    Store restored(dest);
    REQUIRE(restored.unit_count() == fx.store->unit_count());
    auto original = fx.store->list_units();
    auto copy = restored.list_units();
    for (size_t i = 0; i < original.size(); ++i) {
        REQUIRE(original[i].uuid == copy[i].uuid);
        REQUIRE(original[i].user == copy[i].user);
    }
}

TEST_CASE("backup during concurrent ingest is a consistent snapshot") {
    RegistryFixture fx;
    std::atomic<bool> stop{false};
    std::thread writer([&] {
        int i = 0;
        while (!stop) {
            WorkloadUnit u;
            u.uuid = "w" + std::to_string(i++);
            u.cluster_id = "test";
            u.user = "u";
            u.project = "p";
            fx.store->upsert_unit(u);
        }
    });
    for (int i = 0; i < 5; ++i) {
        auto dest = fx.dir.path() / ("snap" + std::to_string(i) + ".db");
        fx.store->backup_to(dest);
        Store snapshot(dest);
        REQUIRE(snapshot.unit_count() >= 0);  // opens cleanly, no corruption
    }
    stop = true;
    writer.join();
}

TEST_CASE("HTTP API: units, usage, verify") {
    RegistryFixture fx;
    fx.registry->ingest_accounting(kAccounting);
    AggregateMetrics a;
    a.key = "1001";
    a.total_energy_kwh = 0.25;
    fx.store->upsert_unit_aggregate("test", "1001", a);

    HttpService api;
    fx.registry->register_routes(api.server());
    int port = api.start("127.0.0.1", 0);
    httplib::Client http("127.0.0.1", port);

    SECTION("unit list with user filter") {
        auto res = http.Get("/api/v1/units?user=alice");
        REQUIRE(res->status == 200);
        auto body = nlohmann::json::parse(res->body);
        REQUIRE(body["units"].size() == 2);
        for (const auto& u : body["units"]) REQUIRE(u["user"] == "alice");
    }
    SECTION("unit usage") {
        auto res = http.Get("/api/v1/usage/unit?key=1001");
        REQUIRE(res->status == 200);
        auto body = nlohmann::json::parse(res->body);
        REQUIRE(body["total_energy_kwh"] == 0.25);
        REQUIRE(body["scope"] == "unit");
    }
    SECTION("user usage sums units") {
        auto res = http.Get("/api/v1/usage/user?key=alice&start=0&end=1854038800000");
        REQUIRE(res->status == 200);
        REQUIRE(nlohmann::json::parse(res->body)["total_energy_kwh"] == 0.25);
    }
    SECTION("verify owner / non-owner / unknown") {
        REQUIRE(http.Get("/api/v1/verify?user=alice&cluster=test&uuid=1001")->status == 200);
        REQUIRE(http.Get("/api/v1/verify?user=bob&cluster=test&uuid=1001")->status == 403);
        REQUIRE(http.Get("/api/v1/verify?user=alice&cluster=test&uuid=zzz")->status == 403);
    }
    SECTION("health") { REQUIRE(http.Get("/health")->status == 200); }
}

TEST_CASE("HTTP API: basic auth when configured") {
    RegistryFixture fx;
    RegistryOptions opts = fx.registry->options();
    opts.auth = BasicAuthCredentials{"api", util::make_password_hash("secret", "ab")};
    Registry secured(fx.store, fx.client, fx.factors, opts);
    HttpService api;
    secured.register_routes(api.server());
    int port = api.start("127.0.0.1", 0);
    httplib::Client anon("127.0.0.1", port);
    REQUIRE(anon.Get("/api/v1/units")->status == 401);
    httplib::Client authed("127.0.0.1", port);
    authed.set_basic_auth("api", "secret");
    REQUIRE(authed.Get("/api/v1/units")->status == 200);
}
