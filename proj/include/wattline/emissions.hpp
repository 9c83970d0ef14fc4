#pragma once

// Emission factors (gCO2eq per kWh) from a static region table or a
// real-time provider endpoint, with TTL caching and realtime -> static
// fallback, plus the energy -> emissions conversion.

#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "wattline/attribution.hpp"
#include "wattline/util.hpp"

namespace wattline {

enum class FactorProvider { static_table, realtime };

inline std::string_view to_string(FactorProvider p) {
    return p == FactorProvider::static_table ? "static" : "realtime";
}

struct EmissionFactor {
    std::string region;
    double grams_per_kwh = 0;
    int64_t timestamp_ms = 0;
    FactorProvider provider = FactorProvider::static_table;
};

// Two-column file: header "region,grams_per_kwh", one row per region.
class StaticFactorTable {
public:
    StaticFactorTable() = default;

    static StaticFactorTable parse(std::string_view text, int64_t loaded_at_ms) {
        StaticFactorTable table;
        table.loaded_at_ms_ = loaded_at_ms;
        int line_no = 0;
        size_t pos = 0;
        while (pos <= text.size()) {
            size_t nl = text.find('\n', pos);
            std::string line = util::trim(
                nl == std::string_view::npos ? text.substr(pos) : text.substr(pos, nl - pos));
            ++line_no;
            if (line_no == 1) {
                if (line != "region,grams_per_kwh")
                    throw ParseError(1, "expected header 'region,grams_per_kwh'");
            } else if (!line.empty()) {
                auto parts = util::split(line, ',');
                if (parts.size() != 2) throw ParseError(line_no, "expected 'region,value'");
                std::string region = util::trim(parts[0]);
                auto value = util::parse_double(util::trim(parts[1]));
                if (region.empty() || !value || !(*value >= 0))
                    throw ParseError(line_no, "malformed factor row");
                if (table.factors_.count(region))
                    throw ParseError(line_no, "duplicate region " + region);
                table.factors_[region] = *value;
            }
            if (nl == std::string_view::npos) break;
            pos = nl + 1;
        }
        return table;
    }

    static StaticFactorTable load(const std::filesystem::path& path,
                                  int64_t loaded_at_ms = now_ms()) {
        auto text = util::read_text_file(path);
        if (!text) throw std::runtime_error("cannot read factor table: " + path.string());
        return parse(*text, loaded_at_ms);
    }

    EmissionFactor lookup(const std::string& region) const {
        auto it = factors_.find(region);
        if (it == factors_.end()) {
            std::string known;
            for (const auto& [r, _] : factors_) {
                if (!known.empty()) known += ", ";
                known += r;
            }
            throw NotFoundError("unknown region '" + region + "' (known: " + known + ")");
        }
        return EmissionFactor{region, it->second, loaded_at_ms_, FactorProvider::static_table};
    }

    bool empty() const { return factors_.empty(); }

private:
    std::map<std::string, double> factors_;
    int64_t loaded_at_ms_ = 0;
};

struct FactorUnavailableError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Realtime provider with per-region TTL cache and fallback to the static
// table. The fallback chain is realtime -> static -> error, observable via
// EmissionFactor::provider.
class EmissionFactorSource {
public:
    struct Options {
        std::string realtime_base_url;  // empty -> static only
        std::optional<StaticFactorTable> static_table;
        int64_t cache_ttl_ms = 300'000;
        Clock clock = system_clock_ms();
        std::string bearer_token;  // WATTLINE_EMISSION_TOKEN when set
    };

    explicit EmissionFactorSource(Options opts) : opts_(std::move(opts)) {
        if (opts_.bearer_token.empty())
            if (const char* tok = std::getenv("WATTLINE_EMISSION_TOKEN")) opts_.bearer_token = tok;
    }

    EmissionFactor get(const std::string& region) {
        if (opts_.realtime_base_url.empty()) return static_lookup(region);

        auto region_lock = lock_for(region);
        std::lock_guard<std::mutex> fetch_guard(*region_lock);
        int64_t now = opts_.clock();
        {
            std::lock_guard<std::mutex> g(mutex_);
            auto it = cache_.find(region);
            if (it != cache_.end() && now - it->second.timestamp_ms < opts_.cache_ttl_ms)
                return it->second;
        }
        if (auto fresh = fetch(region, now)) {
            std::lock_guard<std::mutex> g(mutex_);
            cache_[region] = *fresh;
            return *fresh;
        }
        return static_lookup(region);
    }

private:
    EmissionFactor static_lookup(const std::string& region) {
        if (!opts_.static_table || opts_.static_table->empty())
            throw FactorUnavailableError("no realtime factor for '" + region +
                                         "' and no static table configured");
        return opts_.static_table->lookup(region);
    }

    std::shared_ptr<std::mutex> lock_for(const std::string& region) {
        std::lock_guard<std::mutex> g(mutex_);
        auto& slot = region_locks_[region];
        if (!slot) slot = std::make_shared<std::mutex>();
        return slot;
    }

    std::optional<EmissionFactor> fetch(const std::string& region, int64_t now) {
        // split "<scheme>://<host>[:port]<path-prefix>"
        std::string base = opts_.realtime_base_url;
        std::string prefix;
        size_t scheme = base.find("://");
        if (scheme != std::string::npos) {
            size_t slash = base.find('/', scheme + 3);
            if (slash != std::string::npos) {
                prefix = base.substr(slash);
                base = base.substr(0, slash);
            }
        }
        try {
            httplib::Client client(base);
            client.set_connection_timeout(5, 0);
            client.set_read_timeout(5, 0);
            httplib::Headers headers;
            if (!opts_.bearer_token.empty())
                headers.emplace("Authorization", "Bearer " + opts_.bearer_token);
            auto res = client.Get(prefix + "/latest?region=" + region, headers);
            if (!res || res->status != 200) return std::nullopt;
            auto body = nlohmann::json::parse(res->body, nullptr, false);
            if (body.is_discarded() || !body.contains("region") ||
                !body.contains("carbon_intensity") || !body["carbon_intensity"].is_number())
                return std::nullopt;
            double value = body["carbon_intensity"].get<double>();
            if (!(value >= 0)) return std::nullopt;
            return EmissionFactor{region, value, now, FactorProvider::realtime};
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }

    Options opts_;
    std::mutex mutex_;
    std::map<std::string, EmissionFactor> cache_;
    std::map<std::string, std::shared_ptr<std::mutex>> region_locks_;
};

inline double compute_emissions(double energy_kwh, const EmissionFactor& factor) {
    if (!(energy_kwh >= 0) || !std::isfinite(energy_kwh))
        throw ContractError("energy_kwh must be finite and non-negative");
    if (!(factor.grams_per_kwh >= 0) || !std::isfinite(factor.grams_per_kwh))
        throw ContractError("grams_per_kwh must be finite and non-negative");
    return energy_kwh * factor.grams_per_kwh;
}

// Emissions of a power series under a time-varying factor: each inter-sample
// energy increment is priced at the factor in force at the interval start.
template <typename FactorAt>
double integrate_emissions(const TimeSeries& watts, FactorAt&& factor_at) {
    const auto& pts = watts.points();
    double grams = 0;
    for (size_t i = 1; i < pts.size(); ++i) {
        TimeSeries segment;
        segment.append(pts[i - 1].first, pts[i - 1].second);
        segment.append(pts[i].first, pts[i].second);
        grams += integrate_energy(segment).kwh * factor_at(pts[i - 1].first);
    }
    return grams;
}

}  // namespace wattline
