#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "bttr/model.hpp"
#include "bttr/train.hpp"

namespace bttr {

enum class Direction { L2R, R2L };

inline int start_token(Direction d) { return d == Direction::L2R ? Vocab::SOS : Vocab::EOS; }
inline int stop_token(Direction d) { return d == Direction::L2R ? Vocab::EOS : Vocab::SOS; }

struct SearchParams {
    int beam = 10;
    int max_len = 200;
    real alpha = 1.0;  // length normalization exponent
    // weight of the opposite-direction log-likelihood in the joint score:
    // +1 rewards agreement, 0 disables rescoring, -1 flips the sign for audits
    real rescore_weight = 1.0;
};

// One (possibly still growing) decoded sequence. `core` excludes the start
// and stop tokens; `logp` includes every emitted token, stop included.
struct Hypothesis {
    Direction dir = Direction::L2R;
    std::vector<int> core;
    real logp = 0;
    bool finished = false;

    real penalized(real alpha) const {
        auto len = static_cast<real>(std::max<std::size_t>(core.size(), 1));
        return logp / std::pow(len, alpha);
    }
};

namespace detail {

// deterministic ordering for equal scores: shorter first, then lexicographic
inline bool tie_before(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
}

inline bool better(const Hypothesis& a, const Hypothesis& b, real alpha) {
    real sa = a.penalized(alpha), sb = b.penalized(alpha);
    if (sa != sb) return sa > sb;
    return tie_before(a.core, b.core);
}

}  // namespace detail

// Averaged next-token log-probabilities across an ensemble: softmax each
// model's logits, average the probabilities, then take the log.
inline std::vector<real> ensemble_step(std::vector<BTTRModel*>& models, const std::vector<Memory>& memories,
                                       const std::vector<int>& prefix, std::vector<DecoderState>& states) {
    if (models.empty()) throw ContractError("ensemble_step: no models");
    if (memories.size() != models.size() || states.size() != models.size())
        throw ContractError("ensemble_step: memories/states do not match model count");
    int v = models[0]->vocab_size;
    std::vector<real> probs(static_cast<std::size_t>(v), real(0));
    for (std::size_t m = 0; m < models.size(); ++m) {
        if (models[m]->vocab_size != v) throw ContractError("ensemble_step: vocabulary size mismatch across models");
        std::vector<real> logits = models[m]->decoder.decode_step(memories[m], prefix, states[m]);
        std::vector<real> p(static_cast<std::size_t>(v));
        detail::softmax_row(logits.data(), p.data(), v);
        for (int i = 0; i < v; ++i) probs[static_cast<std::size_t>(i)] += p[static_cast<std::size_t>(i)];
    }
    std::vector<real> out(static_cast<std::size_t>(v));
    auto n = static_cast<real>(models.size());
    for (int i = 0; i < v; ++i) {
        real p = probs[static_cast<std::size_t>(i)] / n;
        out[static_cast<std::size_t>(i)] = p > 0 ? std::log(p) : kNegInf;
    }
    return out;
}

// Beam search in one direction. Returns finished hypotheses sorted best
// first; if nothing finished within max_len, the best unfinished beam entry
// is returned with finished=false.
inline std::vector<Hypothesis> beam_search(std::vector<BTTRModel*>& models, const std::vector<Memory>& memories,
                                           Direction dir, const SearchParams& params) {
    if (params.beam < 1) throw ContractError("beam_search: beam must be >= 1");
    int v = models.at(0)->vocab_size;
    int start = start_token(dir), stop = stop_token(dir);

    struct Live {
        Hypothesis hyp;
        std::vector<DecoderState> states;  // one per model
    };
    std::vector<Live> live(1);
    live[0].hyp.dir = dir;
    live[0].states.resize(models.size());

    std::vector<Hypothesis> pool;
    for (int step = 0; step < params.max_len && !live.empty(); ++step) {
        struct Cand {
            std::size_t parent;
            int token;
            real logp;
        };
        std::vector<Cand> cands;
        for (std::size_t li = 0; li < live.size(); ++li) {
            std::vector<int> prefix;
            prefix.push_back(start);
            prefix.insert(prefix.end(), live[li].hyp.core.begin(), live[li].hyp.core.end());
            std::vector<real> logprobs = ensemble_step(models, memories, prefix, live[li].states);
            for (int t = 0; t < v; ++t) {
                if (t == Vocab::PAD || t == start) continue;
                cands.push_back({li, t, live[li].hyp.logp + logprobs[static_cast<std::size_t>(t)]});
            }
        }
        std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(params.beam));
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                          [](const Cand& a, const Cand& b) { return a.logp > b.logp; });
        cands.resize(keep);

        std::vector<Live> next;
        for (const Cand& c : cands) {
            Hypothesis h = live[c.parent].hyp;
            h.logp = c.logp;
            if (c.token == stop) {
                h.finished = true;
                pool.push_back(std::move(h));
            } else {
                h.core.push_back(c.token);
                // Tensor handles share storage and decode_step never mutates
                // cached tensors in place, so copying states is cheap and safe
                next.push_back({std::move(h), live[c.parent].states});
            }
        }
        if (pool.size() >= static_cast<std::size_t>(params.beam)) break;
        live = std::move(next);
    }
    if (pool.empty()) {
        if (live.empty()) throw ContractError("beam_search: no hypotheses produced");
        auto best = std::max_element(live.begin(), live.end(), [&](const Live& a, const Live& b) {
            return detail::better(b.hyp, a.hyp, params.alpha);
        });
        pool.push_back(best->hyp);
    }
    std::sort(pool.begin(), pool.end(),
              [&](const Hypothesis& a, const Hypothesis& b) { return detail::better(a, b, params.alpha); });
    if (pool.size() > static_cast<std::size_t>(params.beam)) pool.resize(static_cast<std::size_t>(params.beam));
    return pool;
}

// Log-likelihood of reading `core` in the opposite direction: reverse it,
// wrap with that direction's start/stop, and teacher-force through the
// ensemble, summing the averaged log-probabilities of every target token.
inline real reverse_rescore(std::vector<BTTRModel*>& models, const std::vector<Memory>& memories,
                            const std::vector<int>& core, Direction original_dir) {
    Direction rev = original_dir == Direction::L2R ? Direction::R2L : Direction::L2R;
    std::vector<int> input;
    input.push_back(start_token(rev));
    input.insert(input.end(), core.rbegin(), core.rend());
    std::vector<int> targets(input.begin() + 1, input.end());
    targets.push_back(stop_token(rev));

    NoGradGuard ng;
    int v = models.at(0)->vocab_size;
    auto len = static_cast<int>(input.size());
    std::vector<real> probs(static_cast<std::size_t>(len) * v, real(0));
    for (std::size_t m = 0; m < models.size(); ++m) {
        Tensor logits = models[m]->decoder.forward_rows(memories[m], input, false);
        for (int i = 0; i < len; ++i) {
            std::vector<real> p(static_cast<std::size_t>(v));
            detail::softmax_row(logits.values().data() + static_cast<std::size_t>(i) * v, p.data(), v);
            for (int t = 0; t < v; ++t) probs[static_cast<std::size_t>(i) * v + t] += p[static_cast<std::size_t>(t)];
        }
    }
    real total = 0;
    auto n = static_cast<real>(models.size());
    for (int i = 0; i < len; ++i) {
        real p = probs[static_cast<std::size_t>(i) * v + targets[static_cast<std::size_t>(i)]] / n;
        total += p > 0 ? std::log(p) : kNegInf;
    }
    return total;
}

struct JointResult {
    Hypothesis winner;                 // core always reported left to right
    real beam_score = 0;               // penalized score from its own beam
    real reverse_score = 0;            // opposite-direction log-likelihood / len^alpha
    real final_score = -std::numeric_limits<real>::infinity();
    std::vector<Hypothesis> l2r_pool, r2l_pool;
};

// Approximate joint search: beam in each direction, rescore every finished
// candidate with the opposite direction, pick the best combined score.
inline JointResult joint_search(std::vector<BTTRModel*>& models, const std::vector<Memory>& memories,
                                const SearchParams& params) {
    JointResult out;
    out.l2r_pool = beam_search(models, memories, Direction::L2R, params);
    out.r2l_pool = beam_search(models, memories, Direction::R2L, params);

    auto consider = [&](const Hypothesis& h) {
        real beam_score = h.penalized(params.alpha);
        auto len = static_cast<real>(std::max<std::size_t>(h.core.size(), 1));
        real rev = params.rescore_weight * reverse_rescore(models, memories, h.core, h.dir) / std::pow(len, params.alpha);
        real final_score = beam_score + rev;
        std::vector<int> natural = h.core;
        if (h.dir == Direction::R2L) std::reverse(natural.begin(), natural.end());
        bool take = final_score > out.final_score ||
                    (final_score == out.final_score && detail::tie_before(natural, out.winner.core));
        if (!take) return;
        out.winner = h;
        out.winner.core = std::move(natural);
        out.beam_score = beam_score;
        out.reverse_score = rev;
        out.final_score = final_score;
    };
    for (const auto& h : out.l2r_pool) consider(h);
    for (const auto& h : out.r2l_pool) consider(h);
    return out;
}

// End to end: encode once per model (eval mode), joint search, detokenize.
inline std::string recognize(std::vector<BTTRModel*>& models, const Tensor& image, const Vocab& vocab,
                             const SearchParams& params) {
    NoGradGuard ng;
    std::vector<Memory> memories;
    for (auto* m : models) {
        auto mems = m->encoder.forward(image, {}, false);
        memories.push_back(std::move(mems.at(0)));
    }
    JointResult result = joint_search(models, memories, params);
    return vocab.detokenize(result.winner.core);
}

}  // namespace bttr
