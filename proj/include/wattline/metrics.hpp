#pragma once

// Core metric types and the text exposition wire format (v0.0.4) shared by
// every service: the exporter renders it, the scrape driver parses it back.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "wattline/util.hpp"

namespace wattline {

inline bool valid_label_name(std::string_view s) {
    if (s.empty()) return false;
    auto head = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; };
    if (!head(s[0])) return false;
    for (char c : s.substr(1))
        if (!head(c) && !std::isdigit(static_cast<unsigned char>(c))) return false;
    return true;
}

inline bool valid_metric_name(std::string_view s) {
    if (s.empty()) return false;
    auto head = [](char c) {
        return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == ':';
    };
    if (!head(s[0])) return false;
    for (char c : s.substr(1))
        if (!head(c) && !std::isdigit(static_cast<unsigned char>(c))) return false;
    return true;
}

// Ordered set of name/value pairs; kept sorted by name (canonical form),
// names unique and matching [a-zA-Z_][a-zA-Z0-9_]*.
class LabelSet {
public:
    using Pair = std::pair<std::string, std::string>;

    LabelSet() = default;
    LabelSet(std::initializer_list<Pair> init) {
        for (const auto& p : init) set(p.first, p.second);
    }

    void set(std::string name, std::string value) {
        if (!valid_label_name(name)) throw ContractError("invalid label name: " + name);
        auto it = std::lower_bound(pairs_.begin(), pairs_.end(), name,
                                   [](const Pair& p, const std::string& n) { return p.first < n; });
        if (it != pairs_.end() && it->first == name)
            it->second = std::move(value);
        else
            pairs_.insert(it, Pair{std::move(name), std::move(value)});
    }

    const std::string* get(std::string_view name) const {
        for (const auto& p : pairs_)
            if (p.first == name) return &p.second;
        return nullptr;
    }

    bool empty() const { return pairs_.empty(); }
    size_t size() const { return pairs_.size(); }
    auto begin() const { return pairs_.begin(); }
    auto end() const { return pairs_.end(); }
    const std::vector<Pair>& pairs() const { return pairs_; }

    bool operator==(const LabelSet& o) const = default;
    auto operator<=>(const LabelSet& o) const = default;

private:
    std::vector<Pair> pairs_;
};

struct Sample {
    std::string name;
    LabelSet labels;
    double value = 0;
    std::optional<int64_t> timestamp_ms;

    Sample() = default;
    Sample(std::string n, LabelSet l, double v, std::optional<int64_t> ts = std::nullopt)
        : name(std::move(n)), labels(std::move(l)), value(v), timestamp_ms(ts) {
        if (name.empty()) throw ContractError("sample metric name empty");
        if (std::isinf(value)) throw ContractError("sample value must be finite or NaN: " + name);
    }

    bool operator==(const Sample& o) const {
        bool val_eq = (std::isnan(value) && std::isnan(o.value)) || value == o.value;
        return name == o.name && labels == o.labels && val_eq && timestamp_ms == o.timestamp_ms;
    }
};

enum class MetricKind { counter, gauge };

inline std::string_view to_string(MetricKind k) {
    return k == MetricKind::counter ? "counter" : "gauge";
}

class MetricFamily {
public:
    MetricFamily() = default;
    MetricFamily(std::string name, MetricKind kind, std::string help)
        : name_(std::move(name)), kind_(kind), help_(std::move(help)) {
        if (name_.empty()) throw ContractError("metric family name empty");
    }

    const std::string& name() const { return name_; }
    MetricKind kind() const { return kind_; }
    const std::string& help() const { return help_; }
    const std::vector<Sample>& samples() const { return samples_; }

    void add(Sample s) {
        if (!s.name.starts_with(name_))
            throw ContractError("sample name '" + s.name + "' does not extend family '" + name_ +
                                "'");
        if (kind_ == MetricKind::counter && s.value < 0)
            throw ContractError("negative counter sample in family " + name_);
        samples_.push_back(std::move(s));
    }

    void add(double value, LabelSet labels = {}, std::optional<int64_t> ts = std::nullopt) {
        add(Sample(name_, std::move(labels), value, ts));
    }

    bool operator==(const MetricFamily& o) const {
        return name_ == o.name_ && kind_ == o.kind_ && help_ == o.help_ && samples_ == o.samples_;
    }

private:
    std::string name_;
    MetricKind kind_ = MetricKind::gauge;
    std::string help_;
    std::vector<Sample> samples_;
};

// Raw TSDB exchange unit: one labelled series of (timestamp, value) points,
// timestamps strictly increasing.
class TimeSeries {
public:
    using Point = std::pair<int64_t, double>;

    TimeSeries() = default;
    explicit TimeSeries(LabelSet labels) : labels_(std::move(labels)) {}

    void append(int64_t ts_ms, double value) {
        if (!points_.empty() && ts_ms <= points_.back().first)
            throw ContractError("time series timestamps must be strictly increasing");
        points_.emplace_back(ts_ms, value);
    }

    const LabelSet& labels() const { return labels_; }
    LabelSet& labels() { return labels_; }
    const std::vector<Point>& points() const { return points_; }
    bool empty() const { return points_.empty(); }

    bool operator==(const TimeSeries& o) const = default;

private:
    LabelSet labels_;
    std::vector<Point> points_;
};

struct RenderError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void escape_label_value(const std::string& v, std::string& out) {
    for (char c : v) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '"': out += "\\\""; break;
            case '\n': out += "\\n"; break;
            default: out.push_back(c);
        }
    }
}

inline void escape_help(const std::string& v, std::string& out) {
    for (char c : v) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            default: out.push_back(c);
        }
    }
}

inline bool sample_order(const Sample& a, const Sample& b) {
    if (a.labels != b.labels) return a.labels < b.labels;
    return a.timestamp_ms < b.timestamp_ms;
}

}  // namespace detail

// Canonical form: families sorted by name, samples by label order. Duplicate
// family names are rejected.
inline std::vector<MetricFamily> canonicalize(std::vector<MetricFamily> families) {
    std::sort(families.begin(), families.end(),
              [](const MetricFamily& a, const MetricFamily& b) { return a.name() < b.name(); });
    for (size_t i = 1; i < families.size(); ++i)
        if (families[i].name() == families[i - 1].name())
            throw ContractError("duplicate metric family: " + families[i].name());
    std::vector<MetricFamily> out;
    out.reserve(families.size());
    for (auto& f : families) {
        MetricFamily cf(f.name(), f.kind(), f.help());
        auto samples = f.samples();
        std::stable_sort(samples.begin(), samples.end(), detail::sample_order);
        for (auto& s : samples) cf.add(std::move(s));
        out.push_back(std::move(cf));
    }
    return out;
}

// Text exposition format v0.0.4. NaN samples are held in memory but never
// written to the wire.
inline std::string render_exposition(const std::vector<MetricFamily>& families) {
    auto canon = canonicalize(families);
    std::string out;
    for (const auto& f : canon) {
        if (!valid_metric_name(f.name()))
            throw RenderError("invalid metric name: '" + f.name() + "'");
        out += "# HELP " + f.name() + " ";
        detail::escape_help(f.help(), out);
        out += "\n# TYPE " + f.name() + " ";
        out += to_string(f.kind());
        out += "\n";
        for (const auto& s : f.samples()) {
            if (std::isnan(s.value)) continue;
            if (!valid_metric_name(s.name))
                throw RenderError("invalid metric name: '" + s.name + "'");
            out += s.name;
            if (!s.labels.empty()) {
                out += "{";
                bool first = true;
                for (const auto& [k, v] : s.labels) {
                    if (!valid_label_name(k)) throw RenderError("invalid label name: '" + k + "'");
                    if (!first) out += ",";
                    first = false;
                    out += k;
                    out += "=\"";
                    detail::escape_label_value(v, out);
                    out += "\"";
                }
                out += "}";
            }
            out += " ";
            out += util::format_double(s.value);
            if (s.timestamp_ms) {
                out += " ";
                out += std::to_string(*s.timestamp_ms);
            }
            out += "\n";
        }
    }
    return out;
}

namespace detail {

struct ExpositionParser {
    std::map<std::string, std::string> helps;
    std::map<std::string, MetricKind> kinds;
    std::map<std::string, std::vector<Sample>> samples;
    std::vector<std::string> order;  // family first-appearance order

    void touch(const std::string& name) {
        if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
    }

    static size_t skip_spaces(std::string_view s, size_t i) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        return i;
    }

    void parse_comment(std::string_view line, int line_no) {
        // "# HELP name text" | "# TYPE name kind" | anything else ignored
        size_t i = skip_spaces(line, 1);
        size_t word_end = i;
        while (word_end < line.size() && line[word_end] != ' ' && line[word_end] != '\t') ++word_end;
        std::string_view word = line.substr(i, word_end - i);
        if (word != "HELP" && word != "TYPE") return;  // ordinary comment
        i = skip_spaces(line, word_end);
        size_t name_end = i;
        while (name_end < line.size() && line[name_end] != ' ' && line[name_end] != '\t') ++name_end;
        std::string name(line.substr(i, name_end - i));
        if (!valid_metric_name(name)) throw ParseError(line_no, "invalid metric name in # " + std::string(word));
        // text after the single separating space is verbatim (help may lead
        // with spaces)
        std::string rest;
        if (name_end < line.size()) rest = std::string(line.substr(name_end + 1));
        touch(name);
        if (word == "HELP") {
            std::string help;
            for (size_t k = 0; k < rest.size(); ++k) {
                if (rest[k] == '\\' && k + 1 < rest.size()) {
                    char n = rest[k + 1];
                    if (n == '\\') { help.push_back('\\'); ++k; continue; }
                    if (n == 'n') { help.push_back('\n'); ++k; continue; }
                }
                help.push_back(rest[k]);
            }
            helps[name] = help;
        } else {
            std::string kind = util::trim(rest);
            if (kind == "counter")
                kinds[name] = MetricKind::counter;
            else if (kind == "gauge")
                kinds[name] = MetricKind::gauge;
            else
                throw ParseError(line_no, "unknown metric type '" + kind + "'");
        }
    }

    void parse_sample(std::string_view line, int line_no) {
        size_t i = 0;
        size_t name_end = i;
        while (name_end < line.size() && line[name_end] != '{' && line[name_end] != ' ' &&
               line[name_end] != '\t')
            ++name_end;
        std::string name(line.substr(0, name_end));
        if (!valid_metric_name(name)) throw ParseError(line_no, "invalid metric name");
        LabelSet labels;
        i = name_end;
        if (i < line.size() && line[i] == '{') {
            ++i;
            while (true) {
                i = skip_spaces(line, i);
                if (i >= line.size()) throw ParseError(line_no, "unterminated label set");
                if (line[i] == '}') { ++i; break; }
                size_t ln_end = i;
                while (ln_end < line.size() && line[ln_end] != '=') ++ln_end;
                if (ln_end >= line.size()) throw ParseError(line_no, "label without '='");
                std::string lname(util::trim(line.substr(i, ln_end - i)));
                if (!valid_label_name(lname)) throw ParseError(line_no, "invalid label name");
                i = ln_end + 1;
                if (i >= line.size() || line[i] != '"')
                    throw ParseError(line_no, "label value must be quoted");
                ++i;
                std::string value;
                bool closed = false;
                while (i < line.size()) {
                    char c = line[i];
                    if (c == '\\' && i + 1 < line.size()) {
                        char n = line[i + 1];
                        if (n == '\\') { value.push_back('\\'); i += 2; continue; }
                        if (n == '"') { value.push_back('"'); i += 2; continue; }
                        if (n == 'n') { value.push_back('\n'); i += 2; continue; }
                        value.push_back(c);
                        ++i;
                        continue;
                    }
                    if (c == '"') { closed = true; ++i; break; }
                    value.push_back(c);
                    ++i;
                }
                if (!closed) throw ParseError(line_no, "unterminated label value");
                if (labels.get(lname)) throw ParseError(line_no, "duplicate label " + lname);
                labels.set(lname, value);
                i = skip_spaces(line, i);
                if (i < line.size() && line[i] == ',') { ++i; continue; }
                if (i < line.size() && line[i] == '}') { ++i; break; }
                throw ParseError(line_no, "expected ',' or '}' in label set");
            }
        }
        i = skip_spaces(line, i);
        size_t val_end = i;
        while (val_end < line.size() && line[val_end] != ' ' && line[val_end] != '\t') ++val_end;
        auto value = util::parse_double(line.substr(i, val_end - i));
        if (!value) throw ParseError(line_no, "missing or malformed sample value");
        if (std::isinf(*value)) throw ParseError(line_no, "infinite sample value");
        std::optional<int64_t> ts;
        i = skip_spaces(line, val_end);
        if (i < line.size()) {
            size_t ts_end = i;
            while (ts_end < line.size() && line[ts_end] != ' ' && line[ts_end] != '\t') ++ts_end;
            auto parsed = util::parse_int(line.substr(i, ts_end - i));
            if (!parsed) throw ParseError(line_no, "malformed timestamp");
            ts = *parsed;
            if (skip_spaces(line, ts_end) != line.size())
                throw ParseError(line_no, "trailing garbage after timestamp");
        }
        touch(name);
        samples[name].emplace_back(name, std::move(labels), *value, ts);
    }

    std::vector<MetricFamily> finish() {
        std::vector<MetricFamily> out;
        for (const auto& name : order) {
            auto kit = kinds.find(name);
            MetricKind kind = kit != kinds.end() ? kit->second : MetricKind::gauge;
            auto hit = helps.find(name);
            MetricFamily f(name, kind, hit != helps.end() ? hit->second : "");
            auto sit = samples.find(name);
            if (sit != samples.end())
                for (auto& s : sit->second) {
                    if (kind == MetricKind::counter && s.value < 0)
                        throw ParseError("negative counter sample for " + name);
                    f.add(std::move(s));
                }
            out.push_back(std::move(f));
        }
        return out;
    }
};

}  // namespace detail

// Inverse of render_exposition on valid input. Comment lines other than
// HELP/TYPE are ignored; malformed lines raise ParseError with line number.
inline std::vector<MetricFamily> parse_exposition(std::string_view text) {
    detail::ExpositionParser p;
    int line_no = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        std::string_view line =
            nl == std::string_view::npos ? text.substr(pos) : text.substr(pos, nl - pos);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        std::string_view stripped = line;
        size_t b = stripped.find_first_not_of(" \t");
        if (b != std::string_view::npos) {
            stripped.remove_prefix(b);
            if (stripped[0] == '#')
                p.parse_comment(stripped, line_no);
            else
                p.parse_sample(stripped, line_no);
        }
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    return p.finish();
}

}  // namespace wattline
