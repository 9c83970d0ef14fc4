#pragma once

// Mock TSDB: stores raw series in memory and answers label-matcher queries
// over a Prometheus-compatible HTTP surface. No expression evaluation beyond
// matcher filtering; everything else answers 422. Admin operations (series
// deletion, request counters, sample push) live on a separate listener so a
// user-facing proxy never has to route them.

#include <atomic>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "wattline/metrics.hpp"
#include "wattline/selector.hpp"
#include "wattline/util.hpp"

namespace wattline {

class MockTsdb {
public:
    struct Counters {
        std::atomic<int64_t> query{0};
        std::atomic<int64_t> query_range{0};
        std::atomic<int64_t> push{0};
        std::atomic<int64_t> deletes{0};
        std::atomic<int64_t> rejected{0};
        std::atomic<int64_t> duplicate_samples{0};
    };

    // ---- in-process API -----------------------------------------------

    size_t push_sample(const std::string& name, const LabelSet& labels, int64_t ts_ms,
                       double value) {
        LabelSet full = labels;
        full.set("__name__", name);
        std::unique_lock lock(mutex_);
        auto& series = series_[fingerprint(full)];
        if (series.points.empty()) series.labels = full;
        if (!series.points.empty() && ts_ms <= series.points.back().first) {
            ++counters_.duplicate_samples;
            return 0;
        }
        series.points.emplace_back(ts_ms, value);
        ++total_samples_;
        return 1;
    }

    struct Matched {
        LabelSet labels;
        std::vector<std::pair<int64_t, double>> points;
    };

    std::vector<Matched> select(const SelectorBlock& selector, int64_t start_ms,
                                int64_t end_ms) const {
        std::shared_lock lock(mutex_);
        std::vector<Matched> out;
        for (const auto& [fp, series] : series_) {
            if (!matches(series.labels, selector)) continue;
            Matched m;
            m.labels = series.labels;
            for (const auto& p : series.points)
                if (p.first >= start_ms && p.first <= end_ms) m.points.push_back(p);
            if (!m.points.empty()) out.push_back(std::move(m));
        }
        return out;
    }

    size_t delete_series(const SelectorBlock& selector) {
        std::unique_lock lock(mutex_);
        deleted_selectors_.push_back(render_selector(selector));
        size_t removed = 0;
        for (auto it = series_.begin(); it != series_.end();) {
            if (matches(it->second.labels, selector)) {
                total_samples_ -= it->second.points.size();
                it = series_.erase(it);
                ++removed;
            } else {
                ++it;
            }
        }
        ++counters_.deletes;
        return removed;
    }

    size_t series_count() const {
        std::shared_lock lock(mutex_);
        return series_.size();
    }
    size_t sample_count() const {
        std::shared_lock lock(mutex_);
        return total_samples_;
    }
    std::vector<std::string> deleted_selectors() const {
        std::shared_lock lock(mutex_);
        return deleted_selectors_;
    }
    const Counters& counters() const { return counters_; }

    // ---- HTTP surface ---------------------------------------------------

    void register_query_routes(httplib::Server& server) {
        auto handle_range = [this](const httplib::Request& req, httplib::Response& res) {
            ++counters_.query_range;
            auto query = param(req, "query");
            auto start = util::parse_double(param(req, "start"));
            auto end = util::parse_double(param(req, "end"));
            if (!start || !end) {
                res.status = 400;
                res.set_content(error_json("missing or malformed start/end"), "application/json");
                return;
            }
            auto selector = parse_supported(query, res);
            if (!selector) return;
            auto matched =
                select(*selector, static_cast<int64_t>(std::llround(*start * 1000.0)),
                       static_cast<int64_t>(std::llround(*end * 1000.0)));
            nlohmann::json result = nlohmann::json::array();
            for (const auto& m : matched) {
                nlohmann::json values = nlohmann::json::array();
                for (const auto& [ts, v] : m.points)
                    values.push_back({static_cast<double>(ts) / 1000.0, util::format_double(v)});
                result.push_back({{"metric", labels_json(m.labels)}, {"values", values}});
            }
            nlohmann::json body = {
                {"status", "success"},
                {"data", {{"resultType", "matrix"}, {"result", result}}}};
            res.set_content(body.dump(), "application/json");
        };
        auto handle_instant = [this](const httplib::Request& req, httplib::Response& res) {
            ++counters_.query;
            auto query = param(req, "query");
            auto selector = parse_supported(query, res);
            if (!selector) return;
            int64_t time_ms = INT64_MAX;
            if (auto t = util::parse_double(param(req, "time")))
                time_ms = static_cast<int64_t>(std::llround(*t * 1000.0));
            auto matched = select(*selector, INT64_MIN, time_ms);
            nlohmann::json result = nlohmann::json::array();
            for (const auto& m : matched) {
                const auto& [ts, v] = m.points.back();
                result.push_back(
                    {{"metric", labels_json(m.labels)},
                     {"value", {static_cast<double>(ts) / 1000.0, util::format_double(v)}}});
            }
            nlohmann::json body = {
                {"status", "success"},
                {"data", {{"resultType", "vector"}, {"result", result}}}};
            res.set_content(body.dump(), "application/json");
        };
        server.Get("/api/v1/query_range", handle_range);
        server.Post("/api/v1/query_range", handle_range);
        server.Get("/api/v1/query", handle_instant);
        server.Post("/api/v1/query", handle_instant);
        server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("ok", "text/plain");
        });
    }

    void register_admin_routes(httplib::Server& server) {
        server.Post("/api/v1/admin/tsdb/delete_series",
                    [this](const httplib::Request& req, httplib::Response& res) {
                        auto match = param(req, "match[]");
                        auto selector = parse_plain_selector(match);
                        if (!selector) {
                            res.status = 422;
                            res.set_content(error_json("unsupported delete selector"),
                                            "application/json");
                            return;
                        }
                        delete_series(*selector);
                        res.status = 204;
                    });
        server.Post("/api/v1/push", [this](const httplib::Request& req, httplib::Response& res) {
            ++counters_.push;
            auto body = nlohmann::json::parse(req.body, nullptr, false);
            if (body.is_discarded() || !body.is_array()) {
                res.status = 400;
                res.set_content(error_json("push body must be a JSON array"), "application/json");
                return;
            }
            size_t accepted = 0;
            for (const auto& item : body) {
                if (!item.contains("name") || !item.contains("ts_ms") || !item.contains("value"))
                    continue;
                LabelSet labels;
                if (item.contains("labels"))
                    for (const auto& [k, v] : item["labels"].items())
                        labels.set(k, v.get<std::string>());
                accepted += push_sample(item["name"].get<std::string>(), labels,
                                        item["ts_ms"].get<int64_t>(), item["value"].get<double>());
            }
            res.set_content(nlohmann::json{{"accepted", accepted}}.dump(), "application/json");
        });
        server.Get("/api/v1/admin/counters",
                   [this](const httplib::Request&, httplib::Response& res) {
                       nlohmann::json body = {
                           {"query", counters_.query.load()},
                           {"query_range", counters_.query_range.load()},
                           {"push", counters_.push.load()},
                           {"deletes", counters_.deletes.load()},
                           {"rejected", counters_.rejected.load()},
                           {"duplicate_samples", counters_.duplicate_samples.load()},
                           {"series", series_count()},
                           {"samples", sample_count()},
                           {"deleted_selectors", deleted_selectors()},
                       };
                       res.set_content(body.dump(), "application/json");
                   });
        server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("ok", "text/plain");
        });
    }

private:
    struct StoredSeries {
        LabelSet labels;
        std::vector<std::pair<int64_t, double>> points;
    };

    static std::string param(const httplib::Request& req, const std::string& key) {
        if (req.has_param(key)) return req.get_param_value(key);
        return "";
    }

    static std::string error_json(const std::string& message) {
        return nlohmann::json{{"status", "error"}, {"error", message}}.dump();
    }

    std::optional<SelectorBlock> parse_supported(const std::string& query,
                                                 httplib::Response& res) {
        auto selector = parse_plain_selector(query);
        if (!selector) {
            ++counters_.rejected;
            res.status = 422;
            res.set_content(
                error_json("only plain label-matcher selectors are supported: '" + query + "'"),
                "application/json");
            return std::nullopt;
        }
        for (const auto& m : selector->matchers) {
            if (m.op != MatcherOp::eq) {
                ++counters_.rejected;
                res.status = 422;
                res.set_content(error_json("only '=' matchers are supported"), "application/json");
                return std::nullopt;
            }
        }
        return selector;
    }

    static std::string fingerprint(const LabelSet& labels) {
        std::string fp;
        for (const auto& [k, v] : labels) {
            fp += k;
            fp += '\x1f';
            fp += v;
            fp += '\x1e';
        }
        return fp;
    }

    static bool matches(const LabelSet& labels, const SelectorBlock& selector) {
        if (!selector.metric.empty()) {
            const std::string* name = labels.get("__name__");
            if (!name || *name != selector.metric) return false;
        }
        for (const auto& m : selector.matchers) {
            const std::string* v = labels.get(m.label);
            const std::string actual = v ? *v : "";
            if (actual != m.value) return false;
        }
        return true;
    }

    static std::string render_selector(const SelectorBlock& selector) {
        std::string out = selector.metric + "{";
        bool first = true;
        for (const auto& m : selector.matchers) {
            if (!first) out += ",";
            first = false;
            out += m.label + "=\"" + m.value + "\"";
        }
        return out + "}";
    }

    static nlohmann::json labels_json(const LabelSet& labels) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : labels) j[k] = v;
        return j;
    }

    mutable std::shared_mutex mutex_;
    std::map<std::string, StoredSeries> series_;
    std::vector<std::string> deleted_selectors_;
    size_t total_samples_ = 0;
    Counters counters_;
};

}  // namespace wattline
