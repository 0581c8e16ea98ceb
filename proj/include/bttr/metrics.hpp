#pragma once

#include <algorithm>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "bttr/tensor.hpp"

namespace bttr {

// Levenshtein distance over token sequences
inline int token_edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= m; ++j) {
            int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

struct EvalReport {
    int total = 0;
    int exact = 0;     // distance 0
    int within1 = 0;   // distance <= 1
    int within2 = 0;   // distance <= 2
    real mean_distance = 0;

    real exprate() const { return total ? static_cast<real>(exact) / total : 0; }
    real le1() const { return total ? static_cast<real>(within1) / total : 0; }
    real le2() const { return total ? static_cast<real>(within2) / total : 0; }
};

// Compares predictions to references keyed by image id. Every reference id
// must be predicted; missing ids are an error listing what was absent.
inline EvalReport evaluate(const std::map<std::string, std::vector<std::string>>& predictions,
                           const std::map<std::string, std::vector<std::string>>& references) {
    if (references.empty()) throw ContractError("evaluate: no references");
    std::vector<std::string> missing;
    for (const auto& [id, ref] : references)
        if (!predictions.count(id)) missing.push_back(id);
    if (!missing.empty()) {
        std::string msg = "evaluate: missing predictions for:";
        for (const auto& id : missing) msg += " " + id;
        throw ContractError(msg);
    }
    EvalReport rep;
    long long dist_sum = 0;
    for (const auto& [id, ref] : references) {
        int d = token_edit_distance(predictions.at(id), ref);
        ++rep.total;
        if (d == 0) ++rep.exact;
        if (d <= 1) ++rep.within1;
        if (d <= 2) ++rep.within2;
        dist_sum += d;
    }
    rep.mean_distance = static_cast<real>(dist_sum) / rep.total;
    return rep;
}

inline void print_report(std::ostream& os, const EvalReport& rep, bool machine = false) {
    if (machine) {
        os << "total=" << rep.total << '\n'
           << "exprate=" << rep.exprate() << '\n'
           << "le1=" << rep.le1() << '\n'
           << "le2=" << rep.le2() << '\n'
           << "mean_distance=" << rep.mean_distance << '\n';
        return;
    }
    os << "expressions evaluated: " << rep.total << '\n'
       << "exact match rate:      " << rep.exprate() << '\n'
       << "<= 1 error rate:       " << rep.le1() << '\n'
       << "<= 2 error rate:       " << rep.le2() << '\n'
       << "mean edit distance:    " << rep.mean_distance << '\n';
}

}  // namespace bttr
