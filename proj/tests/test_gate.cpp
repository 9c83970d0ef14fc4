#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <map>
#include <thread>

#include "helpers.hpp"
#include "wattline/gate.hpp"
#include "wattline/mock_tsdb.hpp"
#include "wattline/registry.hpp"

using namespace wattline;
using testutil::TempDir;

TEST_CASE("extract: plain equality matcher") {
    auto inspection = extract_workload_ids("cpu_usage{uuid=\"123\"}", "uuid");
    REQUIRE(inspection.workload_ids == std::set<std::string>{"123"});
    REQUIRE(inspection.metric_names == std::set<std::string>{"cpu_usage"});
    REQUIRE_FALSE(inspection.non_verifiable);
    REQUIRE(inspection.selectors_without_id == 0);
}

TEST_CASE("extract: union across selectors") {
    auto inspection = extract_workload_ids("a{uuid=\"1\"} + b{uuid=\"2\"}", "uuid");
    REQUIRE(inspection.workload_ids == std::set<std::string>{"1", "2"});
    REQUIRE(inspection.selectors.size() == 2);
}

TEST_CASE("extract: selector without the id label is recorded") {
    auto inspection = extract_workload_ids("up{job=\"node\"}", "uuid");
    REQUIRE(inspection.workload_ids.empty());
    REQUIRE(inspection.selectors_without_id == 1);
}

TEST_CASE("extract: regex and negative matchers mark non-verifiable") {
    REQUIRE(extract_workload_ids("x{uuid=~\"1.*\"}", "uuid").non_verifiable);
    REQUIRE(extract_workload_ids("x{uuid!=\"1\"}", "uuid").non_verifiable);
    REQUIRE(extract_workload_ids("x{uuid!~\"1\"}", "uuid").non_verifiable);
    REQUIRE_FALSE(extract_workload_ids("x{other=~\"1.*\",uuid=\"2\"}", "uuid").non_verifiable);
}

TEST_CASE("extract: quoted braces and escapes do not confuse the tokenizer") {
    auto inspection = extract_workload_ids("x{uuid=\"a\\\"b{}\",job=\"n\"}", "uuid");
    REQUIRE(inspection.workload_ids == std::set<std::string>{"a\"b{}"});
}

TEST_CASE("extract: unbalanced braces or quotes raise inspection errors") {
    REQUIRE_THROWS_AS(extract_workload_ids("x{uuid=\"1\"", "uuid"), InspectionError);
    REQUIRE_THROWS_AS(extract_workload_ids("x}", "uuid"), InspectionError);
    REQUIRE_THROWS_AS(extract_workload_ids("x{uuid=\"unterminated}", "uuid"), InspectionError);
    REQUIRE_THROWS_AS(extract_workload_ids("x{uuid=}", "uuid"), InspectionError);
}

TEST_CASE("extract: bare metric query") {
    auto inspection = extract_workload_ids("  up  ", "uuid");
    REQUIRE(inspection.bare_metric == "up");
    REQUIRE(inspection.selectors.empty());
}

namespace {

// ownership table: id -> owner
auto table_owns(std::map<std::string, std::string> table) {
    return [table = std::move(table)](const std::string& user, const std::string& id) {
        auto it = table.find(id);
        return it != table.end() && it->second == user;
    };
}

}  // namespace

TEST_CASE("authorize: owner allowed, non-owner and unknowns denied") {
    auto owns = table_owns({{"123", "alice"}});
    auto own_query = extract_workload_ids("cpu{workload_id=\"123\"}", "workload_id");
    REQUIRE(authorize("alice", own_query, owns, {}).allow);
    auto deny = authorize("bob", own_query, owns, {});
    REQUIRE_FALSE(deny.allow);
    REQUIRE(deny.reason == "not-owner");
    auto unknown = extract_workload_ids("cpu{workload_id=\"999\"}", "workload_id");
    REQUIRE_FALSE(authorize("alice", unknown, owns, {}).allow);
}

TEST_CASE("authorize: deny-by-default paths") {
    auto owns = table_owns({{"123", "alice"}});
    SECTION("missing user header") {
        auto q = extract_workload_ids("cpu{workload_id=\"123\"}", "workload_id");
        auto d = authorize("", q, owns, {});
        REQUIRE_FALSE(d.allow);
        REQUIRE(d.reason == "missing-user-header");
    }
    SECTION("no workload selector") {
        auto d = authorize("alice", extract_workload_ids("up", "workload_id"), owns, {});
        REQUIRE_FALSE(d.allow);
        REQUIRE(d.reason == "no-workload-selector");
    }
    SECTION("selector without id label") {
        auto d = authorize("alice", extract_workload_ids("up{job=\"n\"}", "workload_id"), owns, {});
        REQUIRE_FALSE(d.allow);
        REQUIRE(d.reason == "no-workload-selector");
    }
    SECTION("non-verifiable matcher") {
        auto d = authorize("alice", extract_workload_ids("cpu{workload_id=~\".*\"}", "workload_id"),
                           owns, {});
        REQUIRE_FALSE(d.allow);
        REQUIRE(d.reason == "non-verifiable-matcher");
    }
    SECTION("empty query") {
        REQUIRE_FALSE(authorize("alice", extract_workload_ids("", "workload_id"), owns, {}).allow);
    }
}

TEST_CASE("authorize: allowlist escape hatch") {
    auto owns = table_owns({{"123", "alice"}});
    std::set<std::string> allowlist{"up", "node_info"};
    REQUIRE(authorize("alice", extract_workload_ids("up", "workload_id"), owns, allowlist).allow);
    REQUIRE(authorize("alice", extract_workload_ids("up{job=\"n\"}", "workload_id"), owns,
                      allowlist)
                .allow);
    // mixed: owned selector plus allowlisted selector
    auto mixed = extract_workload_ids("cpu{workload_id=\"123\"} + up{job=\"n\"}", "workload_id");
    REQUIRE(authorize("alice", mixed, owns, allowlist).allow);
    // mixed with non-allowlisted extra selector stays denied
    auto bad = extract_workload_ids("cpu{workload_id=\"123\"} + secret{job=\"n\"}", "workload_id");
    REQUIRE_FALSE(authorize("alice", bad, owns, allowlist).allow);
}

TEST_CASE("authorize: registry failure fails closed with 502") {
    auto broken = [](const std::string&, const std::string&) -> bool {
        throw GateBackendError("registry down");
    };
    auto q = extract_workload_ids("cpu{workload_id=\"1\"}", "workload_id");
    auto d = authorize("alice", q, broken, {});
    REQUIRE_FALSE(d.allow);
    REQUIRE(d.status == 502);
    REQUIRE(d.reason == "registry-unavailable");
}

TEST_CASE("backend pool: round robin cycles in order") {
    BackendPool pool({"http://a", "http://b"}, BalanceStrategy::round_robin);
    std::vector<std::string> order;
    for (int i = 0; i < 4; ++i) order.push_back(pool.select().url());
    REQUIRE(order == std::vector<std::string>{"http://a", "http://b", "http://a", "http://b"});
}

TEST_CASE("backend pool: round robin fairness over many requests") {
    BackendPool pool({"http://a", "http://b", "http://c"}, BalanceStrategy::round_robin);
    std::map<std::string, int> counts;
    for (int i = 0; i < 300; ++i) counts[pool.select().url()]++;
    REQUIRE(counts["http://a"] == 100);
    REQUIRE(counts["http://b"] == 100);
    REQUIRE(counts["http://c"] == 100);
}

TEST_CASE("backend pool: least connection picks minimum, ties by order") {
    BackendPool pool({"http://a", "http://b"}, BalanceStrategy::least_connection);
    auto lease_a = pool.select();  // a: 1, b: 0
    REQUIRE(lease_a.url() == "http://a");
    auto lease_b = pool.select();  // b has fewer in flight
    REQUIRE(lease_b.url() == "http://b");
    auto lease_tie = pool.select();  // tie 1-1 resolves to list order
    REQUIRE(lease_tie.url() == "http://a");
}

TEST_CASE("backend pool: skips unhealthy backends and errors when none left") {
    BackendPool pool({"http://a", "http://b"}, BalanceStrategy::round_robin);
    pool.set_healthy("http://a", false);
    for (int i = 0; i < 3; ++i) REQUIRE(pool.select().url() == "http://b");
    pool.set_healthy("http://b", false);
    REQUIRE_THROWS_AS(pool.select(), NoBackendError);
}

TEST_CASE("backend pool: in_flight returns to zero under concurrent load") {
    BackendPool pool({"http://a", "http://b"}, BalanceStrategy::least_connection);
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t)
        threads.emplace_back([&] {
            for (int i = 0; i < 500; ++i) {
                auto lease = pool.select();
                (void)lease;
            }
        });
    for (auto& t : threads) t.join();
    REQUIRE(pool.total_in_flight() == 0);
}

namespace {

struct GateFixture {
    TempDir dir;
    MockTsdb tsdb;
    HttpService backend;
    std::shared_ptr<Store> store;
    HttpService gate_service;
    int gate_port = 0;

    explicit GateFixture(GateOptions opts = {}) {
        tsdb.register_query_routes(backend.server());
        int backend_port = backend.start("127.0.0.1", 0);
        store = std::make_shared<Store>(dir.path() / "registry.db");
        WorkloadUnit unit;
        unit.uuid = "123";
        unit.cluster_id = "sim";
        unit.user = "alice";
        unit.project = "p";
        store->upsert_unit(unit);
        store.reset();  // direct-mode verifier reopens the file

        auto pool = std::make_shared<BackendPool>(
            std::vector<std::string>{"http://127.0.0.1:" + std::to_string(backend_port)},
            BalanceStrategy::round_robin);
        auto verifier = std::make_shared<OwnershipVerifier>(OwnershipVerifier::Options{
            .store_path = dir.path() / "registry.db", .cluster_id = "sim"});
        gate = std::make_unique<AccessGate>(pool, verifier, std::move(opts));
        gate->register_routes(gate_service.server());
        gate_port = gate_service.start("127.0.0.1", 0);
        tsdb.push_sample("cpu", LabelSet{{"workload_id", "123"}}, 1000, 1.0);
    }

    std::unique_ptr<AccessGate> gate;
};

}  // namespace

TEST_CASE("proxy: authorized query reaches the backend verbatim") {
    GateFixture fx;
    httplib::Client client("127.0.0.1", fx.gate_port);
    httplib::Headers headers{{kUserHeader, "alice"}};
    auto res = client.Get("/api/v1/query_range?query=" +
                              TsdbClient::url_encode("cpu{workload_id=\"123\"}") +
                              "&start=0&end=10",
                          headers);
    REQUIRE(res);
    REQUIRE(res->status == 200);
    auto body = nlohmann::json::parse(res->body);
    REQUIRE(body["status"] == "success");
    REQUIRE(body["data"]["result"].size() == 1);
    REQUIRE(fx.tsdb.counters().query_range == 1);
}

TEST_CASE("proxy: denied query never reaches a backend") {
    GateFixture fx;
    httplib::Client client("127.0.0.1", fx.gate_port);
    httplib::Headers bob{{kUserHeader, "bob"}};
    auto res = client.Get("/api/v1/query_range?query=" +
                              TsdbClient::url_encode("cpu{workload_id=\"123\"}") +
                              "&start=0&end=10",
                          bob);
    REQUIRE(res->status == 403);
    REQUIRE(nlohmann::json::parse(res->body)["reason"] == "not-owner");
    REQUIRE(fx.tsdb.counters().query_range == 0);
    REQUIRE(fx.tsdb.counters().query == 0);
}

TEST_CASE("proxy: malformed query answers 400") {
    GateFixture fx;
    httplib::Client client("127.0.0.1", fx.gate_port);
    httplib::Headers alice{{kUserHeader, "alice"}};
    auto res = client.Get("/api/v1/query?query=" + TsdbClient::url_encode("cpu{workload_id=\"1"),
                          alice);
    REQUIRE(res->status == 400);
    REQUIRE(fx.tsdb.counters().query == 0);
}

TEST_CASE("proxy: POST form queries work end to end") {
    GateFixture fx;
    httplib::Client client("127.0.0.1", fx.gate_port);
    httplib::Headers alice{{kUserHeader, "alice"}};
    httplib::Params params{{"query", "cpu{workload_id=\"123\"}"}, {"start", "0"}, {"end", "10"}};
    auto res = client.Post("/api/v1/query_range", alice, params);
    REQUIRE(res);
    REQUIRE(res->status == 200);
    REQUIRE(nlohmann::json::parse(res->body)["data"]["result"].size() == 1);
}

TEST_CASE("proxy: all backends down answers 503") {
    TempDir dir;
    {
        Store store(dir.path() / "registry.db");
        WorkloadUnit unit;
        unit.uuid = "123";
        unit.cluster_id = "sim";
        unit.user = "alice";
        unit.project = "p";
        store.upsert_unit(unit);
    }
    auto pool = std::make_shared<BackendPool>(std::vector<std::string>{"http://127.0.0.1:9"},
                                              BalanceStrategy::round_robin);
    pool->set_healthy("http://127.0.0.1:9", false);
    auto verifier = std::make_shared<OwnershipVerifier>(
        OwnershipVerifier::Options{.store_path = dir.path() / "registry.db", .cluster_id = "sim"});
    AccessGate gate(pool, verifier, {});
    HttpService service;
    gate.register_routes(service.server());
    int port = service.start("127.0.0.1", 0);
    httplib::Client client("127.0.0.1", port);
    httplib::Headers alice{{kUserHeader, "alice"}};
    auto res = client.Get("/api/v1/query?query=" +
                              TsdbClient::url_encode("cpu{workload_id=\"123\"}"),
                          alice);
    REQUIRE(res->status == 503);
}

TEST_CASE("ownership verifier: HTTP mode against the registry API") {
    TempDir dir;
    auto store = std::make_shared<Store>(dir.path() / "registry.db");
    WorkloadUnit unit;
    unit.uuid = "77";
    unit.cluster_id = "sim";
    unit.user = "alice";
    unit.project = "p";
    store->upsert_unit(unit);
    auto tsdb_client = std::make_shared<TsdbClient>(TsdbClient::Options{.base_url = "http://127.0.0.1:9"});
    RegistryOptions opts;
    opts.cluster_id = "sim";
    Registry registry(store, tsdb_client, nullptr, opts);
    HttpService api;
    registry.register_routes(api.server());
    int port = api.start("127.0.0.1", 0);

    OwnershipVerifier verifier({.registry_url = "http://127.0.0.1:" + std::to_string(port),
                                .cluster_id = "sim"});
    REQUIRE(verifier.owns("alice", "77"));
    REQUIRE_FALSE(verifier.owns("bob", "77"));
    api.stop();
    REQUIRE_THROWS_AS(verifier.owns("alice", "77"), GateBackendError);
}
