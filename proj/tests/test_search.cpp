#include <catch_amalgamated.hpp>

#include <cmath>

#include "bttr/search.hpp"

using namespace bttr;

namespace {

ModelConfig micro_config() {
    ModelConfig cfg;
    cfg.growth_rate = 2;
    cfg.block_depth = 1;
    cfg.n_blocks = 2;
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.d_ff = 16;
    cfg.layers = 1;
    cfg.dropout = 0;
    cfg.max_len = 16;
    return cfg;
}

// a small model plus a memory derived from a random image
struct Rig {
    BTTRModel model;
    std::vector<BTTRModel*> models;
    std::vector<Memory> memories;

    Rig(int vocab, std::uint64_t seed) {
        model.init(micro_config(), vocab, seed);
        models.push_back(&model);
        RngState rng(seed + 1);
        Tensor img = rand_uniform(rng, {1, 1, 12, 16}, 0, 1);
        NoGradGuard ng;
        memories.push_back(model.encoder.forward(img, {}, false).at(0));
    }
};

// log-likelihood of emitting `core` then stopping, scored with teacher forcing
real sequence_logp(Rig& rig, const std::vector<int>& core, Direction dir) {
    std::vector<int> input;
    input.push_back(start_token(dir));
    input.insert(input.end(), core.begin(), core.end());
    std::vector<int> targets(input.begin() + 1, input.end());
    targets.push_back(stop_token(dir));
    NoGradGuard ng;
    Tensor logits = rig.model.decoder.forward_rows(rig.memories[0], input, false);
    int v = rig.model.vocab_size;
    real total = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        std::vector<real> p(static_cast<std::size_t>(v));
        detail::softmax_row(logits.values().data() + i * static_cast<std::size_t>(v), p.data(), v);
        total += std::log(p[static_cast<std::size_t>(targets[i])]);
    }
    return total;
}

// every core over non-reserved tokens with length < max_len
std::vector<std::vector<int>> all_cores(int vocab, int max_len) {
    std::vector<std::vector<int>> out = {{}};
    std::vector<std::vector<int>> frontier = {{}};
    for (int len = 1; len < max_len; ++len) {
        std::vector<std::vector<int>> next;
        for (const auto& c : frontier)
            for (int t = 3; t < vocab; ++t) {
                auto e = c;
                e.push_back(t);
                next.push_back(e);
                out.push_back(e);
            }
        frontier = std::move(next);
    }
    return out;
}

real penalized_of(real logp, std::size_t core_len, real alpha) {
    auto len = static_cast<real>(std::max<std::size_t>(core_len, 1));
    return logp / std::pow(len, alpha);
}

}  // namespace

TEST_CASE("beam width one is greedy decoding") {
    Rig rig(7, 51);
    SearchParams params;
    params.beam = 1;
    params.max_len = 10;
    auto pool = beam_search(rig.models, rig.memories, Direction::L2R, params);

    // greedy reference via repeated argmax
    std::vector<int> core;
    DecoderState state;
    for (int step = 0; step < params.max_len; ++step) {
        std::vector<int> prefix = {Vocab::SOS};
        prefix.insert(prefix.end(), core.begin(), core.end());
        auto logits = rig.model.decoder.decode_step(rig.memories[0], prefix, state);
        int best = -1;
        for (int t = 0; t < 7; ++t) {
            if (t == Vocab::PAD || t == Vocab::SOS) continue;
            if (best < 0 || logits[static_cast<std::size_t>(t)] > logits[static_cast<std::size_t>(best)]) best = t;
        }
        if (best == Vocab::EOS) break;
        core.push_back(best);
    }
    REQUIRE(pool.at(0).core == core);
}

TEST_CASE("wide beam matches exhaustive enumeration") {
    Rig rig(6, 52);
    SearchParams params;
    params.beam = 64;
    params.max_len = 4;

    for (Direction dir : {Direction::L2R, Direction::R2L}) {
        auto pool = beam_search(rig.models, rig.memories, dir, params);
        REQUIRE(!pool.empty());
        REQUIRE(pool[0].finished);

        std::vector<int> best_core;
        real best_score = -1e30;
        for (const auto& core : all_cores(6, params.max_len)) {
            real score = penalized_of(sequence_logp(rig, core, dir), core.size(), params.alpha);
            if (score > best_score) {
                best_score = score;
                best_core = core;
            }
        }
        INFO("direction " << (dir == Direction::L2R ? "L2R" : "R2L"));
        REQUIRE(pool[0].core == best_core);
        REQUIRE(pool[0].penalized(params.alpha) == Catch::Approx(best_score).margin(1e-6));
    }
}

TEST_CASE("pool scores are sorted and hypotheses finished") {
    Rig rig(8, 53);
    SearchParams params;
    params.beam = 6;
    params.max_len = 8;
    auto pool = beam_search(rig.models, rig.memories, Direction::L2R, params);
    REQUIRE(!pool.empty());
    for (std::size_t i = 0; i + 1 < pool.size(); ++i)
        REQUIRE(pool[i].penalized(params.alpha) >= pool[i + 1].penalized(params.alpha) - 1e-12);
    for (const auto& h : pool) {
        REQUIRE(h.finished);
        for (int t : h.core) REQUIRE(t >= 3);
    }
    // beam logp agrees with independent teacher-forced scoring
    for (const auto& h : pool)
        REQUIRE(h.logp == Catch::Approx(sequence_logp(rig, h.core, Direction::L2R)).margin(1e-5));
}

TEST_CASE("alpha zero removes length normalization") {
    Hypothesis h;
    h.core = {3, 4, 5, 6};
    h.logp = -2.5;
    REQUIRE(h.penalized(0.0) == Catch::Approx(-2.5));
    REQUIRE(h.penalized(1.0) == Catch::Approx(-2.5 / 4));
}

TEST_CASE("reverse rescoring equals chained conditionals") {
    Rig rig(7, 54);
    std::vector<int> core = {3, 5, 4};
    // L2R hypothesis rescored by the R2L reading of the reversed sequence
    real got = reverse_rescore(rig.models, rig.memories, core, Direction::L2R);
    std::vector<int> reversed = {4, 5, 3};
    real want = sequence_logp(rig, reversed, Direction::R2L);
    REQUIRE(got == Catch::Approx(want).margin(1e-9));
    // and symmetrically for an R2L hypothesis
    real got2 = reverse_rescore(rig.models, rig.memories, core, Direction::R2L);
    real want2 = sequence_logp(rig, reversed, Direction::L2R);
    REQUIRE(got2 == Catch::Approx(want2).margin(1e-9));
}

TEST_CASE("joint search matches an exhaustive oracle") {
    Rig rig(6, 55);
    SearchParams params;
    params.beam = 64;
    params.max_len = 4;
    JointResult result = joint_search(rig.models, rig.memories, params);

    real best = -1e30;
    std::vector<int> best_core;
    for (const auto& core : all_cores(6, params.max_len)) {
        std::vector<int> reversed(core.rbegin(), core.rend());
        real l2r = penalized_of(sequence_logp(rig, core, Direction::L2R), core.size(), params.alpha);
        real r2l = penalized_of(sequence_logp(rig, reversed, Direction::R2L), core.size(), params.alpha);
        // both direction candidates combine to the same total for this core
        real combined = l2r + r2l;
        if (combined > best) {
            best = combined;
            best_core = core;
        }
    }
    REQUIRE(result.winner.core == best_core);
    REQUIRE(result.final_score == Catch::Approx(best).margin(1e-6));
    REQUIRE(result.final_score == Catch::Approx(result.beam_score + result.reverse_score).margin(1e-9));

    // the winner's combined score dominates every pool member
    for (const auto& h : result.l2r_pool) {
        std::vector<int> reversed(h.core.rbegin(), h.core.rend());
        real combined = h.penalized(params.alpha) +
                        penalized_of(sequence_logp(rig, reversed, Direction::R2L), h.core.size(), params.alpha);
        REQUIRE(result.final_score >= combined - 1e-9);
    }
}

TEST_CASE("zero rescore weight reduces joint to the better beam winner") {
    Rig rig(6, 64);
    SearchParams params;
    params.beam = 5;
    params.max_len = 5;
    params.rescore_weight = 0;
    JointResult result = joint_search(rig.models, rig.memories, params);
    REQUIRE(result.reverse_score == 0.0);
    real l2r_best = result.l2r_pool.at(0).penalized(params.alpha);
    real r2l_best = result.r2l_pool.at(0).penalized(params.alpha);
    REQUIRE(result.final_score == Catch::Approx(std::max(l2r_best, r2l_best)).margin(1e-12));
}

TEST_CASE("ensemble") {
    SECTION("a single model reduces to plain decoding") {
        Rig rig(7, 56);
        std::vector<int> prefix = {Vocab::SOS, 3};
        std::vector<DecoderState> states(1);
        auto ens = ensemble_step(rig.models, rig.memories, prefix, states);
        DecoderState solo;
        auto logits = rig.model.decoder.decode_step(rig.memories[0], prefix, solo);
        std::vector<real> p(7);
        detail::softmax_row(logits.data(), p.data(), 7);
        for (int t = 0; t < 7; ++t)
            REQUIRE(ens[static_cast<std::size_t>(t)] == Catch::Approx(std::log(p[static_cast<std::size_t>(t)])).margin(1e-9));
    }
    SECTION("identical copies decode the same as one model") {
        Rig rig(6, 57);
        std::vector<BTTRModel*> two = {&rig.model, &rig.model};
        std::vector<Memory> mems = {rig.memories[0], rig.memories[0]};
        SearchParams params;
        params.beam = 4;
        params.max_len = 6;
        auto single = beam_search(rig.models, rig.memories, Direction::L2R, params);
        auto doubled = beam_search(two, mems, Direction::L2R, params);
        REQUIRE(single.size() == doubled.size());
        for (std::size_t i = 0; i < single.size(); ++i) {
            REQUIRE(single[i].core == doubled[i].core);
            REQUIRE(single[i].logp == Catch::Approx(doubled[i].logp).margin(1e-9));
        }
    }
    SECTION("two different models average probabilities") {
        Rig a(6, 58), b(6, 59);
        std::vector<BTTRModel*> two = {&a.model, &b.model};
        std::vector<Memory> mems = {a.memories[0], b.memories[0]};
        std::vector<int> prefix = {Vocab::SOS};
        std::vector<DecoderState> states(2);
        auto ens = ensemble_step(two, mems, prefix, states);
        DecoderState sa, sb;
        auto la = a.model.decoder.decode_step(a.memories[0], prefix, sa);
        auto lb = b.model.decoder.decode_step(b.memories[0], prefix, sb);
        std::vector<real> pa(6), pb(6);
        detail::softmax_row(la.data(), pa.data(), 6);
        detail::softmax_row(lb.data(), pb.data(), 6);
        for (int t = 0; t < 6; ++t)
            REQUIRE(ens[static_cast<std::size_t>(t)] ==
                    Catch::Approx(std::log((pa[static_cast<std::size_t>(t)] + pb[static_cast<std::size_t>(t)]) / 2))
                        .margin(1e-9));
    }
    SECTION("vocabulary mismatch is rejected") {
        Rig a(6, 60), b(7, 61);
        std::vector<BTTRModel*> two = {&a.model, &b.model};
        std::vector<Memory> mems = {a.memories[0], b.memories[0]};
        std::vector<int> prefix = {Vocab::SOS};
        std::vector<DecoderState> states(2);
        REQUIRE_THROWS_AS(ensemble_step(two, mems, prefix, states), ContractError);
    }
}

TEST_CASE("recognize produces tokenizable output") {
    Rig rig(6, 62);
    Vocab vocab;
    vocab.add("a");
    vocab.add("b");
    vocab.add("+");
    REQUIRE(vocab.size() == 6);
    RngState rng(63);
    Tensor img = rand_uniform(rng, {1, 1, 12, 16}, 0, 1);
    SearchParams params;
    params.beam = 3;
    params.max_len = 6;
    std::string text = recognize(rig.models, img, vocab, params);
    // whatever came out must round-trip through the vocabulary
    auto ids = vocab.tokenize(text);
    REQUIRE(vocab.detokenize(ids) == text);
}
