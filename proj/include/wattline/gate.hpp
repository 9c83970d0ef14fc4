#pragma once

// Ownership-enforcing reverse proxy in front of one or more TSDB backends.
// Every query is inspected for workload-id selectors and checked against the
// registry before any byte reaches a backend; anything that cannot be proven
// to touch only the requester's workloads is denied. Balancing is
// round-robin or least-connection over the healthy backends.

#include <atomic>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "wattline/selector.hpp"
#include "wattline/service.hpp"
#include "wattline/store.hpp"

namespace wattline {

inline constexpr const char* kUserHeader = "X-Grafana-User";

struct QueryInspection {
    struct SelectorInfo {
        std::string metric;            // may be empty (bare matcher block)
        std::set<std::string> ids;     // equality-matched id-label values
        bool has_id_matcher = false;   // any matcher on the id label at all
    };

    std::string raw_query;
    std::set<std::string> workload_ids;
    std::set<std::string> metric_names;
    std::vector<SelectorInfo> selectors;
    std::optional<std::string> bare_metric;
    // a regex or negative matcher on the id label defeats verification
    bool non_verifiable = false;
    int selectors_without_id = 0;
};

inline QueryInspection extract_workload_ids(const std::string& query,
                                            const std::string& id_label) {
    QueryInspection inspection;
    inspection.raw_query = query;
    auto scan = scan_query(query);
    inspection.bare_metric = scan.bare_metric;
    if (scan.bare_metric) inspection.metric_names.insert(*scan.bare_metric);
    for (const auto& block : scan.blocks) {
        QueryInspection::SelectorInfo info;
        info.metric = block.metric;
        if (!block.metric.empty()) inspection.metric_names.insert(block.metric);
        for (const auto& m : block.matchers) {
            if (m.label != id_label) continue;
            info.has_id_matcher = true;
            if (m.op == MatcherOp::eq) {
                info.ids.insert(m.value);
                inspection.workload_ids.insert(m.value);
            } else {
                inspection.non_verifiable = true;
            }
        }
        if (!info.has_id_matcher) ++inspection.selectors_without_id;
        inspection.selectors.push_back(std::move(info));
    }
    return inspection;
}

// ---- ownership backends -----------------------------------------------------

struct GateBackendError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Answers "does this user own this workload" either via the registry HTTP
// API or by reading the registry's store file directly when a path is
// configured.
class OwnershipVerifier {
public:
    struct Options {
        std::string registry_url;  // HTTP mode
        std::string registry_user;
        std::string registry_password;
        std::filesystem::path store_path;  // direct mode, wins when set
        std::string cluster_id;
    };

    explicit OwnershipVerifier(Options opts) : opts_(std::move(opts)) {
        if (!opts_.store_path.empty()) {
            if (!std::filesystem::exists(opts_.store_path))
                throw GateBackendError("registry store not found: " + opts_.store_path.string());
            store_ = std::make_unique<Store>(opts_.store_path);
        }
    }

    bool owns(const std::string& user, const std::string& workload_id) const {
        if (store_) {
            auto unit = store_->find_unit(opts_.cluster_id, workload_id);
            return unit && unit->user == user;
        }
        size_t scheme = opts_.registry_url.find("://");
        std::string host = opts_.registry_url;
        std::string prefix;
        if (scheme != std::string::npos) {
            size_t slash = opts_.registry_url.find('/', scheme + 3);
            if (slash != std::string::npos) {
                host = opts_.registry_url.substr(0, slash);
                prefix = opts_.registry_url.substr(slash);
            }
        }
        httplib::Client client(host);
        client.set_connection_timeout(5, 0);
        client.set_read_timeout(5, 0);
        if (!opts_.registry_user.empty())
            client.set_basic_auth(opts_.registry_user, opts_.registry_password);
        std::string path = prefix + "/api/v1/verify?user=" + url_encode(user) +
                           "&cluster=" + url_encode(opts_.cluster_id) +
                           "&uuid=" + url_encode(workload_id);
        auto res = client.Get(path);
        if (!res) throw GateBackendError("registry unreachable");
        if (res->status == 200) return true;
        if (res->status == 403) return false;
        throw GateBackendError("registry verify returned " + std::to_string(res->status));
    }

private:
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

    Options opts_;
    std::unique_ptr<Store> store_;
};

// ---- authorization -----------------------------------------------------------

struct GateDecision {
    bool allow = false;
    std::string reason;
    int status = 403;
};

// Deny-by-default authorization. Allowed only when every selector either
// names the requester's own workloads via plain equality matchers or carries
// an allowlisted metric; bare-metric queries must be allowlisted. Registry
// failures fail closed.
template <typename OwnsFn>
GateDecision authorize(const std::string& user, const QueryInspection& inspection,
                       OwnsFn&& owns, const std::set<std::string>& metric_allowlist) {
    if (user.empty()) return {false, "missing-user-header", 403};
    if (inspection.non_verifiable) return {false, "non-verifiable-matcher", 403};
    if (inspection.selectors.empty()) {
        if (inspection.bare_metric && metric_allowlist.count(*inspection.bare_metric))
            return {true, "", 200};
        return {false, "no-workload-selector", 403};
    }
    for (const auto& selector : inspection.selectors) {
        if (selector.ids.empty()) {
            if (!selector.metric.empty() && metric_allowlist.count(selector.metric)) continue;
            return {false, "no-workload-selector", 403};
        }
        for (const auto& id : selector.ids) {
            bool owner;
            try {
                owner = owns(user, id);
            } catch (const std::exception&) {
                return {false, "registry-unavailable", 502};
            }
            if (!owner) return {false, "not-owner", 403};
        }
    }
    return {true, "", 200};
}

// ---- backend pool -------------------------------------------------------------

enum class BalanceStrategy { round_robin, least_connection };

inline std::optional<BalanceStrategy> balance_strategy_from_string(std::string_view s) {
    if (s == "round_robin") return BalanceStrategy::round_robin;
    if (s == "least_connection") return BalanceStrategy::least_connection;
    return std::nullopt;
}

struct NoBackendError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class BackendPool {
public:
    struct Backend {
        std::string url;
        std::atomic<bool> healthy{true};
        std::atomic<int> in_flight{0};

        explicit Backend(std::string u) : url(std::move(u)) {}
    };

    // RAII lease: selection increments in_flight, destruction decrements.
    class Lease {
    public:
        explicit Lease(Backend* backend) : backend_(backend) { ++backend_->in_flight; }
        ~Lease() {
            if (backend_) --backend_->in_flight;
        }
        Lease(Lease&& o) noexcept : backend_(o.backend_) { o.backend_ = nullptr; }
        Lease(const Lease&) = delete;
        const std::string& url() const { return backend_->url; }
        void mark_unhealthy() { backend_->healthy = false; }

    private:
        Backend* backend_;
    };

    BackendPool(std::vector<std::string> urls, BalanceStrategy strategy) : strategy_(strategy) {
        if (urls.empty()) throw ContractError("backend pool needs at least one backend");
        for (auto& url : urls) backends_.push_back(std::make_unique<Backend>(std::move(url)));
    }

    Lease select() {
        if (strategy_ == BalanceStrategy::round_robin) {
            size_t n = backends_.size();
            for (size_t attempt = 0; attempt < n; ++attempt) {
                size_t idx = cursor_.fetch_add(1) % n;
                if (backends_[idx]->healthy) return Lease(backends_[idx].get());
            }
            throw NoBackendError("no healthy backend");
        }
        Backend* best = nullptr;
        for (auto& backend : backends_) {
            if (!backend->healthy) continue;
            if (!best || backend->in_flight.load() < best->in_flight.load())
                best = backend.get();  // ties keep the earlier backend
        }
        if (!best) throw NoBackendError("no healthy backend");
        return Lease(best);
    }

    void set_healthy(const std::string& url, bool healthy) {
        for (auto& backend : backends_)
            if (backend->url == url) backend->healthy = healthy;
    }

    int total_in_flight() const {
        int total = 0;
        for (const auto& backend : backends_) total += backend->in_flight.load();
        return total;
    }

    std::vector<std::pair<std::string, bool>> health_snapshot() const {
        std::vector<std::pair<std::string, bool>> out;
        for (const auto& backend : backends_)
            out.emplace_back(backend->url, backend->healthy.load());
        return out;
    }

private:
    std::vector<std::unique_ptr<Backend>> backends_;
    BalanceStrategy strategy_;
    std::atomic<size_t> cursor_{0};
};

// ---- the proxy ---------------------------------------------------------------

struct GateOptions {
    std::string id_label = "workload_id";
    std::set<std::string> metric_allowlist;
    int timeout_seconds = 30;
};

class AccessGate {
public:
    AccessGate(std::shared_ptr<BackendPool> pool, std::shared_ptr<OwnershipVerifier> verifier,
               GateOptions opts)
        : pool_(std::move(pool)), verifier_(std::move(verifier)), opts_(std::move(opts)) {}

    void register_routes(httplib::Server& server) {
        auto handler = [this](const httplib::Request& req, httplib::Response& res) {
            handle(req, res);
        };
        server.Get("/api/v1/query", handler);
        server.Post("/api/v1/query", handler);
        server.Get("/api/v1/query_range", handler);
        server.Post("/api/v1/query_range", handler);
        server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("ok", "text/plain");
        });
    }

private:
    static void deny(httplib::Response& res, const GateDecision& decision) {
        res.status = decision.status;
        res.set_content(nlohmann::json{{"status", "denied"}, {"reason", decision.reason}}.dump(),
                        "application/json");
    }

    void handle(const httplib::Request& req, httplib::Response& res) {
        std::string user = req.get_header_value(kUserHeader);
        std::string query = req.get_param_value("query");
        QueryInspection inspection;
        try {
            inspection = extract_workload_ids(query, opts_.id_label);
        } catch (const InspectionError& e) {
            res.status = 400;
            res.set_content(
                nlohmann::json{{"status", "error"}, {"error", e.what()}}.dump(),
                "application/json");
            return;
        }
        auto decision = authorize(
            user, inspection,
            [this](const std::string& u, const std::string& id) { return verifier_->owns(u, id); },
            opts_.metric_allowlist);
        if (!decision.allow) {
            deny(res, decision);
            return;
        }
        try {
            auto lease = pool_->select();
            forward(lease, req, res);
        } catch (const NoBackendError&) {
            res.status = 503;
            res.set_content(R"({"status":"error","error":"no healthy backend"})",
                            "application/json");
        }
    }

    // forwards method, path, query params and body verbatim; relays the
    // backend response
    void forward(BackendPool::Lease& lease, const httplib::Request& req, httplib::Response& res) {
        size_t scheme = lease.url().find("://");
        std::string host = lease.url();
        if (scheme != std::string::npos) {
            size_t slash = host.find('/', scheme + 3);
            if (slash != std::string::npos) host = host.substr(0, slash);
        }
        httplib::Client client(host);
        client.set_connection_timeout(opts_.timeout_seconds, 0);
        client.set_read_timeout(opts_.timeout_seconds, 0);

        // req.target carries the original path + query string untouched
        std::string target = req.target.empty() ? req.path : req.target;
        httplib::Result result;
        if (req.method == "POST") {
            std::string content_type = req.get_header_value("Content-Type");
            if (content_type.empty()) content_type = "application/x-www-form-urlencoded";
            result = client.Post(target, req.body, content_type);
        } else {
            result = client.Get(target);
        }
        if (!result) {
            if (result.error() == httplib::Error::ConnectionTimeout ||
                result.error() == httplib::Error::Read) {
                res.status = 504;
                res.set_content(R"({"status":"error","error":"backend timeout"})",
                                "application/json");
            } else {
                lease.mark_unhealthy();
                res.status = 502;
                res.set_content(R"({"status":"error","error":"backend unreachable"})",
                                "application/json");
            }
            return;
        }
        res.status = result->status;
        std::string content_type = result->get_header_value("Content-Type");
        res.set_content(result->body,
                        content_type.empty() ? "application/json" : content_type);
    }

    std::shared_ptr<BackendPool> pool_;
    std::shared_ptr<OwnershipVerifier> verifier_;
    GateOptions opts_;
};

}  // namespace wattline
