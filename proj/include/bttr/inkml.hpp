#pragma once

#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "bttr/raster.hpp"

namespace bttr {

struct InkmlParseError : std::runtime_error {
    std::size_t byte_offset;
    InkmlParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (byte " + std::to_string(offset) + ")"), byte_offset(offset) {}
};

struct InkmlFile {
    StrokeSet strokes;
    std::string truth;      // LaTeX ground truth, verbatim
    bool has_truth = false;
};

namespace detail {

inline std::string decode_entities(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size();) {
        if (s[i] == '&') {
            if (s.compare(i, 4, "&lt;") == 0) { out += '<'; i += 4; continue; }
            if (s.compare(i, 4, "&gt;") == 0) { out += '>'; i += 4; continue; }
            if (s.compare(i, 5, "&amp;") == 0) { out += '&'; i += 5; continue; }
            if (s.compare(i, 6, "&quot;") == 0) { out += '"'; i += 6; continue; }
            if (s.compare(i, 6, "&apos;") == 0) { out += '\''; i += 6; continue; }
        }
        out += s[i++];
    }
    return out;
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// Parses "x1 y1 [pressure...], x2 y2, ..." trace content.
inline Stroke parse_trace_points(const std::string& body, std::size_t base_offset) {
    Stroke stroke;
    std::size_t pos = 0;
    while (pos <= body.size()) {
        std::size_t comma = body.find(',', pos);
        std::string part = body.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        std::string t = trim(part);
        if (!t.empty()) {
            const char* p = t.c_str();
            char* end = nullptr;
            double x = std::strtod(p, &end);
            if (end == p) throw InkmlParseError("bad coordinate in trace", base_offset + pos);
            const char* p2 = end;
            double y = std::strtod(p2, &end);
            if (end == p2) throw InkmlParseError("trace point missing y coordinate", base_offset + pos);
            if (!std::isfinite(x) || !std::isfinite(y))
                throw InkmlParseError("non-finite trace coordinate", base_offset + pos);
            stroke.push_back({static_cast<real>(x), static_cast<real>(y)});
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return stroke;
}

}  // namespace detail

// Lightweight InkML reader: extracts <trace> polylines in document order and
// the <annotation type="truth"> string. Truth may legitimately be absent; the
// caller checks has_truth.
inline InkmlFile parse_inkml(const std::string& bytes) {
    InkmlFile result;
    std::size_t pos = 0;
    while (true) {
        std::size_t open = bytes.find("<trace", pos);
        if (open == std::string::npos) break;
        // skip <traceFormat>, <traceGroup>, </trace...>
        std::size_t after = open + 6;
        if (after < bytes.size() && bytes[after] != '>' && bytes[after] != ' ' && bytes[after] != '\t' &&
            bytes[after] != '\r' && bytes[after] != '\n') {
            pos = after;
            continue;
        }
        std::size_t gt = bytes.find('>', open);
        if (gt == std::string::npos) throw InkmlParseError("unterminated <trace> tag", open);
        std::size_t close = bytes.find("</trace>", gt);
        if (close == std::string::npos) throw InkmlParseError("missing </trace>", open);
        std::string body = bytes.substr(gt + 1, close - gt - 1);
        Stroke stroke = detail::parse_trace_points(body, gt + 1);
        if (stroke.empty()) throw InkmlParseError("trace with no points", open);
        result.strokes.strokes.push_back(std::move(stroke));
        pos = close + 8;
    }

    // <annotation type="truth">...</annotation>
    std::size_t apos = 0;
    while (true) {
        std::size_t a = bytes.find("<annotation", apos);
        if (a == std::string::npos) break;
        std::size_t gt = bytes.find('>', a);
        if (gt == std::string::npos) throw InkmlParseError("unterminated <annotation> tag", a);
        std::string attrs = bytes.substr(a, gt - a);
        std::size_t end = bytes.find("</annotation>", gt);
        if (end == std::string::npos) throw InkmlParseError("missing </annotation>", a);
        if (attrs.find("type=\"truth\"") != std::string::npos || attrs.find("type='truth'") != std::string::npos) {
            result.truth = detail::decode_entities(detail::trim(bytes.substr(gt + 1, end - gt - 1)));
            result.has_truth = true;
            break;
        }
        apos = end + 13;
    }
    return result;
}

}  // namespace bttr
