#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bttr/bibatch.hpp"
#include "bttr/raster.hpp"
#include "bttr/tensor.hpp"
#include "bttr/vocab.hpp"

namespace bttr {

// ------------------------------------------------------------- stroke font
// Hand-drawn polyline glyphs in a unit box (x right, y down). Shapes only
// need to be mutually distinguishable, not pretty.

namespace synthfont {

using Poly = std::vector<Point>;

inline const std::map<std::string, std::vector<Poly>>& glyphs() {
    static const std::map<std::string, std::vector<Poly>> table = {
        {"0", {{{0.5, 0.0}, {0.15, 0.2}, {0.1, 0.5}, {0.15, 0.8}, {0.5, 1.0}, {0.85, 0.8}, {0.9, 0.5}, {0.85, 0.2}, {0.5, 0.0}}}},
        {"1", {{{0.3, 0.2}, {0.55, 0.0}, {0.55, 1.0}}}},
        {"2", {{{0.1, 0.25}, {0.3, 0.0}, {0.7, 0.0}, {0.9, 0.25}, {0.5, 0.55}, {0.1, 1.0}, {0.9, 1.0}}}},
        {"3", {{{0.1, 0.1}, {0.5, 0.0}, {0.85, 0.2}, {0.45, 0.45}}, {{0.45, 0.45}, {0.9, 0.7}, {0.5, 1.0}, {0.1, 0.9}}}},
        {"4", {{{0.7, 1.0}, {0.7, 0.0}, {0.1, 0.65}, {0.95, 0.65}}}},
        {"5", {{{0.85, 0.0}, {0.15, 0.0}, {0.12, 0.45}, {0.6, 0.4}, {0.9, 0.65}, {0.6, 1.0}, {0.1, 0.9}}}},
        {"6", {{{0.75, 0.0}, {0.3, 0.35}, {0.12, 0.7}, {0.4, 1.0}, {0.85, 0.8}, {0.6, 0.55}, {0.15, 0.68}}}},
        {"7", {{{0.1, 0.0}, {0.9, 0.0}, {0.4, 1.0}}}},
        {"8", {{{0.5, 0.48}, {0.2, 0.25}, {0.5, 0.0}, {0.8, 0.25}, {0.5, 0.48}, {0.15, 0.75}, {0.5, 1.0}, {0.85, 0.75}, {0.5, 0.48}}}},
        {"9", {{{0.85, 0.32}, {0.4, 0.45}, {0.15, 0.2}, {0.4, 0.0}, {0.85, 0.15}, {0.7, 0.65}, {0.3, 1.0}}}},
        {"a", {{{0.8, 0.35}, {0.4, 0.3}, {0.15, 0.65}, {0.4, 1.0}, {0.8, 0.9}, {0.8, 0.35}, {0.85, 1.0}}}},
        {"b", {{{0.15, 0.0}, {0.15, 1.0}, {0.6, 1.0}, {0.85, 0.75}, {0.6, 0.45}, {0.15, 0.55}}}},
        {"c", {{{0.85, 0.4}, {0.5, 0.3}, {0.15, 0.6}, {0.5, 1.0}, {0.85, 0.9}}}},
        {"n", {{{0.15, 0.3}, {0.15, 1.0}}, {{0.15, 0.5}, {0.5, 0.3}, {0.8, 0.5}, {0.8, 1.0}}}},
        {"k", {{{0.15, 0.0}, {0.15, 1.0}}, {{0.8, 0.3}, {0.15, 0.7}, {0.85, 1.0}}}},
        {"x", {{{0.1, 0.3}, {0.9, 1.0}}, {{0.9, 0.3}, {0.1, 1.0}}}},
        {"y", {{{0.1, 0.3}, {0.5, 0.75}}, {{0.9, 0.3}, {0.3, 1.0}}}},
        {"z", {{{0.1, 0.3}, {0.85, 0.3}, {0.1, 1.0}, {0.9, 1.0}}}},
        {"+", {{{0.5, 0.2}, {0.5, 0.8}}, {{0.2, 0.5}, {0.8, 0.5}}}},
        {"-", {{{0.15, 0.5}, {0.85, 0.5}}}},
        {"=", {{{0.15, 0.35}, {0.85, 0.35}}, {{0.15, 0.65}, {0.85, 0.65}}}},
    };
    return table;
}

inline std::vector<std::string> symbol_tokens() {
    std::vector<std::string> out;
    for (const auto& [tok, _] : glyphs()) out.push_back(tok);
    return out;
}

}  // namespace synthfont

// the full synthetic vocabulary: rendered glyphs plus structural markup
inline Vocab synth_vocab() {
    std::vector<std::string> tokens = {"{", "}", "^", "_", "\\frac"};
    for (const auto& t : synthfont::symbol_tokens()) tokens.push_back(t);
    return Vocab(tokens);
}

// ------------------------------------------------------------- layout tree

namespace detail {

struct Box {
    std::vector<Stroke> strokes;
    real width = 0;
    real height = 0;
    real baseline = 0;  // y of the visual center line

    void shift(real dx, real dy) {
        for (auto& s : strokes)
            for (auto& p : s) {
                p.x += dx;
                p.y += dy;
            }
        baseline += dy;
    }
    void scale_all(real f) {
        for (auto& s : strokes)
            for (auto& p : s) {
                p.x *= f;
                p.y *= f;
            }
        width *= f;
        height *= f;
        baseline *= f;
    }
};

inline Box glyph_box(const std::string& token) {
    Box b;
    const auto& g = synthfont::glyphs().at(token);
    for (const auto& poly : g) {
        Stroke s;
        for (const auto& p : poly) s.push_back({p.x * real(0.7), p.y});
        b.strokes.push_back(std::move(s));
    }
    b.width = 0.7;
    b.height = 1.0;
    b.baseline = 0.5;
    return b;
}

inline Box hcat(const std::vector<Box>& parts, real gap) {
    Box out;
    // align on baselines
    real max_above = 0, max_below = 0;
    for (const auto& p : parts) {
        max_above = std::max(max_above, p.baseline);
        max_below = std::max(max_below, p.height - p.baseline);
    }
    real x = 0;
    for (Box p : parts) {
        p.shift(x, max_above - p.baseline);
        for (auto& s : p.strokes) out.strokes.push_back(std::move(s));
        x += p.width + gap;
    }
    out.width = x - gap;
    out.height = max_above + max_below;
    out.baseline = max_above;
    return out;
}

inline Box frac_box(Box num, Box den) {
    real pad = 0.12;
    real w = std::max(num.width, den.width) + 2 * pad;
    num.shift((w - num.width) / 2, 0);
    den.shift((w - den.width) / 2, num.height + 2 * pad);
    Box out;
    out.strokes = std::move(num.strokes);
    for (auto& s : den.strokes) out.strokes.push_back(std::move(s));
    out.strokes.push_back({{0, num.height + pad}, {w, num.height + pad}});
    out.width = w;
    out.height = num.height + den.height + 4 * pad;
    out.baseline = num.height + pad;
    return out;
}

inline Box script_box(Box base, Box script, bool superscript) {
    script.scale_all(0.6);
    real gap = 0.06;
    Box out;
    real sy = superscript ? base.baseline - real(0.35) - script.height : base.baseline + real(0.35);
    script.shift(base.width + gap, sy);
    real top = std::min(real(0), sy);
    real bottom = std::max(base.height, sy + script.height);
    out.strokes = std::move(base.strokes);
    for (auto& s : script.strokes) out.strokes.push_back(std::move(s));
    out.shift(0, -top);
    out.width = base.width + gap + script.width;
    out.height = bottom - top;
    out.baseline = base.baseline - top;
    return out;
}

}  // namespace detail

// ------------------------------------------------------------- grammar

// expression tree for generated formulas
struct SynthExpr {
    enum class Kind { Atom, Binary, Frac, Sup, Sub } kind = Kind::Atom;
    std::string atom;  // Atom token or Binary operator
    std::vector<std::unique_ptr<SynthExpr>> children;

    void emit_tokens(std::vector<std::string>& out) const {
        switch (kind) {
            case Kind::Atom:
                out.push_back(atom);
                break;
            case Kind::Binary:
                children[0]->emit_tokens(out);
                out.push_back(atom);
                children[1]->emit_tokens(out);
                break;
            case Kind::Frac:
                out.push_back("\\frac");
                out.push_back("{");
                children[0]->emit_tokens(out);
                out.push_back("}");
                out.push_back("{");
                children[1]->emit_tokens(out);
                out.push_back("}");
                break;
            case Kind::Sup:
            case Kind::Sub:
                children[0]->emit_tokens(out);
                out.push_back(kind == Kind::Sup ? "^" : "_");
                out.push_back("{");
                children[1]->emit_tokens(out);
                out.push_back("}");
                break;
        }
    }

    detail::Box layout() const {
        switch (kind) {
            case Kind::Atom:
                return detail::glyph_box(atom);
            case Kind::Binary:
                return detail::hcat({children[0]->layout(), detail::glyph_box(atom), children[1]->layout()},
                                    real(0.25));
            case Kind::Frac:
                return detail::frac_box(children[0]->layout(), children[1]->layout());
            case Kind::Sup:
                return detail::script_box(children[0]->layout(), children[1]->layout(), true);
            case Kind::Sub:
                return detail::script_box(children[0]->layout(), children[1]->layout(), false);
        }
        return {};
    }
};

namespace detail {

inline std::unique_ptr<SynthExpr> make_atom(RngState& rng) {
    // operators are only emitted by Binary nodes
    static const std::vector<std::string> atoms = [] {
        std::vector<std::string> a;
        for (const auto& s : synthfont::symbol_tokens())
            if (s != "+" && s != "-" && s != "=") a.push_back(s);
        return a;
    }();
    auto e = std::make_unique<SynthExpr>();
    e->kind = SynthExpr::Kind::Atom;
    e->atom = atoms[rng.uniform_int(atoms.size())];
    return e;
}

// Token length satisfies len(d) <= 4d+3: Binary adds 2 to a depth d-1 core,
// scripts add 4, Frac is a fixed 7 over atoms.
inline std::unique_ptr<SynthExpr> gen_expr(RngState& rng, int depth) {
    if (depth <= 0) return make_atom(rng);
    switch (rng.uniform_int(6)) {
        case 0:
            return make_atom(rng);
        case 1:
        case 2: {
            auto e = std::make_unique<SynthExpr>();
            e->kind = SynthExpr::Kind::Binary;
            static const std::vector<std::string> ops = {"+", "-", "="};
            e->atom = ops[rng.uniform_int(ops.size())];
            e->children.push_back(gen_expr(rng, depth - 1));
            e->children.push_back(make_atom(rng));
            return e;
        }
        case 3: {
            auto e = std::make_unique<SynthExpr>();
            e->kind = SynthExpr::Kind::Frac;
            e->children.push_back(make_atom(rng));
            e->children.push_back(make_atom(rng));
            return e;
        }
        case 4:
        case 5: {
            auto e = std::make_unique<SynthExpr>();
            e->kind = rng.uniform_int(2) == 0 ? SynthExpr::Kind::Sub : SynthExpr::Kind::Sup;
            e->children.push_back(make_atom(rng));
            e->children.push_back(gen_expr(rng, depth - 1));
            return e;
        }
    }
    return make_atom(rng);
}

}  // namespace detail

// Renders one generated expression tree through the stroke font.
inline Sample render_synth_expr(const SynthExpr& expr, const Vocab& vocab, const RasterParams& raster) {
    std::vector<std::string> toks;
    expr.emit_tokens(toks);
    Sample s;
    for (const auto& t : toks) s.tokens.push_back(vocab.id(t));
    detail::Box box = expr.layout();
    StrokeSet strokes;
    strokes.strokes = std::move(box.strokes);
    s.image = rasterize(strokes, raster);
    return s;
}

inline std::vector<Sample> synth_generate(RngState& rng, int n, int grammar_depth,
                                          const Vocab& vocab, const RasterParams& raster = {}) {
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto expr = detail::gen_expr(rng, grammar_depth);
        Sample s = render_synth_expr(*expr, vocab, raster);
        s.id = "synth_" + std::to_string(i);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace bttr
