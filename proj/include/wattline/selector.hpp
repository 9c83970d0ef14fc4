#pragma once

// Tokenizer for TSDB expression strings. No full expression parse: it
// locates `{...}` selector blocks, splits their matchers respecting quoted
// strings and escapes, and records the metric name attached to each block.

#include <cctype>
#include <optional>
#include <string>
#include <vector>

#include "wattline/util.hpp"

namespace wattline {

struct InspectionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class MatcherOp { eq, ne, re, nre };

struct LabelMatcher {
    std::string label;
    MatcherOp op = MatcherOp::eq;
    std::string value;
};

struct SelectorBlock {
    std::string metric;  // identifier preceding '{', may be empty
    std::vector<LabelMatcher> matchers;
};

struct QueryScan {
    std::vector<SelectorBlock> blocks;
    // set when the whole query is one bare metric identifier
    std::optional<std::string> bare_metric;
};

namespace detail {

inline bool ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == ':';
}

inline size_t scan_quoted(std::string_view s, size_t i) {
    // returns index past the closing quote; s[i] is the opening quote
    char quote = s[i];
    ++i;
    while (i < s.size()) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            i += 2;
            continue;
        }
        if (s[i] == quote) return i + 1;
        ++i;
    }
    throw InspectionError("unterminated quoted string");
}

inline std::string unescape_matcher_value(std::string_view raw) {
    std::string out;
    for (size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] == '\\' && i + 1 < raw.size()) {
            char n = raw[i + 1];
            if (n == '\\' || n == '"' || n == '\'') {
                out.push_back(n);
                ++i;
                continue;
            }
            if (n == 'n') {
                out.push_back('\n');
                ++i;
                continue;
            }
        }
        out.push_back(raw[i]);
    }
    return out;
}

// parses the inside of one {...} block starting just past '{'; returns index
// past the closing '}'
inline size_t scan_matcher_block(std::string_view s, size_t i, SelectorBlock& block) {
    while (true) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        if (i >= s.size()) throw InspectionError("unbalanced braces in selector");
        if (s[i] == '}') return i + 1;
        size_t name_start = i;
        while (i < s.size() && ident_char(s[i])) ++i;
        if (i == name_start) throw InspectionError("expected label name in selector");
        LabelMatcher m;
        m.label = std::string(s.substr(name_start, i - name_start));
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        if (i < s.size() && s[i] == '=' && i + 1 < s.size() && s[i + 1] == '~') {
            m.op = MatcherOp::re;
            i += 2;
        } else if (i < s.size() && s[i] == '=') {
            m.op = MatcherOp::eq;
            ++i;
        } else if (i + 1 < s.size() && s[i] == '!' && s[i + 1] == '=') {
            m.op = MatcherOp::ne;
            i += 2;
        } else if (i + 1 < s.size() && s[i] == '!' && s[i + 1] == '~') {
            m.op = MatcherOp::nre;
            i += 2;
        } else {
            throw InspectionError("expected matcher operator after label '" + m.label + "'");
        }
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        if (i >= s.size() || (s[i] != '"' && s[i] != '\''))
            throw InspectionError("matcher value must be a quoted string");
        size_t value_start = i + 1;
        size_t value_end = scan_quoted(s, i);
        m.value = unescape_matcher_value(s.substr(value_start, value_end - value_start - 1));
        block.matchers.push_back(std::move(m));
        i = value_end;
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        if (i < s.size() && s[i] == ',') {
            ++i;
            continue;
        }
        if (i < s.size() && s[i] == '}') return i + 1;
        throw InspectionError("expected ',' or '}' in selector");
    }
}

}  // namespace detail

// Scans an arbitrary expression string for selector blocks. Throws
// InspectionError on unbalanced braces or quotes.
inline QueryScan scan_query(std::string_view query) {
    QueryScan scan;
    size_t i = 0;
    while (i < query.size()) {
        char c = query[i];
        if (c == '"' || c == '\'') {
            i = detail::scan_quoted(query, i);
            continue;
        }
        if (c == '}') throw InspectionError("unbalanced '}' in query");
        if (c == '{') {
            SelectorBlock block;
            // metric name directly preceding the brace
            size_t back = i;
            while (back > 0 && detail::ident_char(query[back - 1])) --back;
            block.metric = std::string(query.substr(back, i - back));
            i = detail::scan_matcher_block(query, i + 1, block);
            scan.blocks.push_back(std::move(block));
            continue;
        }
        ++i;
    }
    std::string trimmed = util::trim(query);
    if (scan.blocks.empty() && !trimmed.empty()) {
        bool bare = true;
        for (char c : trimmed)
            if (!detail::ident_char(c)) bare = false;
        if (bare && !std::isdigit(static_cast<unsigned char>(trimmed[0])))
            scan.bare_metric = trimmed;
    }
    return scan;
}

// Strict form for the mock TSDB: the whole string must be one selector
// (optional metric name, optional matcher block), nothing else.
inline std::optional<SelectorBlock> parse_plain_selector(std::string_view s) {
    std::string trimmed = util::trim(s);
    if (trimmed.empty()) return std::nullopt;
    size_t i = 0;
    SelectorBlock block;
    while (i < trimmed.size() && detail::ident_char(trimmed[i])) ++i;
    block.metric = trimmed.substr(0, i);
    if (i == trimmed.size()) return block;
    if (trimmed[i] != '{') return std::nullopt;
    size_t end;
    try {
        end = detail::scan_matcher_block(trimmed, i + 1, block);
    } catch (const InspectionError&) {
        return std::nullopt;
    }
    if (end != trimmed.size()) return std::nullopt;
    return block;
}

}  // namespace wattline
