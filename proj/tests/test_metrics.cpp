#include <catch_amalgamated.hpp>

#include "bttr/metrics.hpp"
#include "bttr/tensor.hpp"

#include <sstream>

using namespace bttr;

namespace {

using Seq = std::vector<std::string>;

// full DP table with explicit edit-script reconstruction
int distance_with_script(const Seq& a, const Seq& b) {
    std::size_t n = a.size(), m = b.size();
    std::vector<std::vector<int>> d(n + 1, std::vector<int>(m + 1));
    for (std::size_t i = 0; i <= n; ++i) d[i][0] = static_cast<int>(i);
    for (std::size_t j = 0; j <= m; ++j) d[0][j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j)
            d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                                d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    // walk back collecting operations; the script length must equal the cost
    std::size_t i = n, j = m;
    int ops = 0;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && a[i - 1] == b[j - 1] && d[i][j] == d[i - 1][j - 1]) {
            --i;
            --j;
        } else if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1) {
            ++ops;
            --i;
            --j;
        } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
            ++ops;
            --i;
        } else {
            ++ops;
            --j;
        }
    }
    REQUIRE(ops == d[n][m]);
    return d[n][m];
}

Seq random_seq(RngState& rng, int max_len) {
    Seq s;
    int len = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_len) + 1));
    for (int i = 0; i < len; ++i)
        s.push_back(std::string(1, static_cast<char>('a' + rng.uniform_int(4))));
    return s;
}

}  // namespace

TEST_CASE("token edit distance") {
    SECTION("hand-checked cases") {
        REQUIRE(token_edit_distance({}, {}) == 0);
        REQUIRE(token_edit_distance({"x"}, {}) == 1);
        REQUIRE(token_edit_distance({}, {"x", "y"}) == 2);
        REQUIRE(token_edit_distance({"x", "^", "2"}, {"x", "^", "2"}) == 0);
        REQUIRE(token_edit_distance({"x", "^", "2"}, {"x", "_", "2"}) == 1);
        REQUIRE(token_edit_distance({"a", "b", "c"}, {"b", "c", "d"}) == 2);
        REQUIRE(token_edit_distance({"\\frac", "{", "a", "}"}, {"{", "a", "}"}) == 1);
        // tokens compare whole, not by characters
        REQUIRE(token_edit_distance({"ab"}, {"a", "b"}) == 2);
    }
    SECTION("agrees with a script-reconstructing reference") {
        RngState rng(5);
        for (int trial = 0; trial < 200; ++trial) {
            Seq a = random_seq(rng, 8), b = random_seq(rng, 8);
            REQUIRE(token_edit_distance(a, b) == distance_with_script(a, b));
        }
    }
    SECTION("metric properties on random triples") {
        RngState rng(6);
        for (int trial = 0; trial < 300; ++trial) {
            Seq a = random_seq(rng, 6), b = random_seq(rng, 6), c = random_seq(rng, 6);
            int ab = token_edit_distance(a, b);
            int ba = token_edit_distance(b, a);
            int ac = token_edit_distance(a, c);
            int cb = token_edit_distance(c, b);
            REQUIRE(ab == ba);
            REQUIRE(ab >= 0);
            REQUIRE((a == b) == (ab == 0));
            REQUIRE(ab <= ac + cb);
        }
    }
}

TEST_CASE("evaluation report") {
    std::map<std::string, Seq> refs = {
        {"e1", {"x", "^", "2"}},
        {"e2", {"a", "+", "b"}},
        {"e3", {"1"}},
        {"e4", {"y", "=", "x"}},
    };
    std::map<std::string, Seq> preds = {
        {"e1", {"x", "^", "2"}},        // distance 0
        {"e2", {"a", "-", "b"}},        // distance 1
        {"e3", {"1", "2", "3"}},        // distance 2
        {"e4", {"q", "q", "q", "q"}},   // distance 4
    };

    SECTION("rates and mean distance") {
        EvalReport rep = evaluate(preds, refs);
        REQUIRE(rep.total == 4);
        REQUIRE(rep.exprate() == Catch::Approx(0.25));
        REQUIRE(rep.le1() == Catch::Approx(0.5));
        REQUIRE(rep.le2() == Catch::Approx(0.75));
        REQUIRE(rep.mean_distance == Catch::Approx(7.0 / 4));
    }
    SECTION("rates are nested") {
        EvalReport rep = evaluate(preds, refs);
        REQUIRE(rep.exprate() <= rep.le1());
        REQUIRE(rep.le1() <= rep.le2());
        REQUIRE(rep.le2() <= 1.0);
    }
    SECTION("extra predictions are ignored, missing ones are an error") {
        auto extra = preds;
        extra["e9"] = {"z"};
        REQUIRE(evaluate(extra, refs).total == 4);
        auto sparse = preds;
        sparse.erase("e2");
        sparse.erase("e4");
        REQUIRE_THROWS_WITH(evaluate(sparse, refs), Catch::Matchers::ContainsSubstring("e2") &&
                                                        Catch::Matchers::ContainsSubstring("e4"));
    }
    SECTION("empty reference set is rejected") {
        REQUIRE_THROWS_AS(evaluate(preds, {}), ContractError);
    }
    SECTION("report printing") {
        EvalReport rep = evaluate(preds, refs);
        std::ostringstream plain, machine;
        print_report(plain, rep);
        print_report(machine, rep, true);
        REQUIRE(plain.str().find("exact match rate") != std::string::npos);
        REQUIRE(machine.str().find("exprate=0.25") != std::string::npos);
        REQUIRE(machine.str().find("total=4") != std::string::npos);
    }
}
