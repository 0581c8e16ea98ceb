#include <catch_amalgamated.hpp>

#include <cmath>

#include "bttr/decoder.hpp"
#include "bttr/vocab.hpp"

using namespace bttr;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.growth_rate = 4;
    cfg.block_depth = 2;
    cfg.n_blocks = 2;
    cfg.d_model = 16;
    cfg.heads = 4;
    cfg.d_ff = 32;
    cfg.layers = 2;
    cfg.dropout = 0;
    cfg.max_len = 32;
    return cfg;
}

Memory random_memory(RngState& rng, int s, int d_model) {
    Memory mem;
    mem.features = rand_uniform(rng, {s, d_model}, 0, 1);
    mem.key_mask.assign(static_cast<std::size_t>(s), 1);
    mem.grid_h = 1;
    mem.grid_w = s;
    return mem;
}

}  // namespace

TEST_CASE("word positional encoding values") {
    SECTION("position zero alternates 0 and 1") {
        auto v = word_pos_encoding(0, 8);
        for (int i = 0; i < 8; i += 2) {
            REQUIRE(v[static_cast<std::size_t>(i)] == Catch::Approx(0.0));
            REQUIRE(v[static_cast<std::size_t>(i) + 1] == Catch::Approx(1.0));
        }
    }
    SECTION("hand-computed entries at position 3, d=4") {
        auto v = word_pos_encoding(3, 4);
        REQUIRE(v[0] == Catch::Approx(std::sin(3.0)));
        REQUIRE(v[1] == Catch::Approx(std::cos(3.0)));
        REQUIRE(v[2] == Catch::Approx(std::sin(3.0 / 100.0)));
        REQUIRE(v[3] == Catch::Approx(std::cos(3.0 / 100.0)));
    }
    SECTION("table rows match the scalar function") {
        Tensor t = word_pos_encoding_table(5, 6);
        for (int p = 0; p < 5; ++p) {
            auto row = word_pos_encoding(static_cast<real>(p), 6);
            for (int i = 0; i < 6; ++i)
                REQUIRE(t.values()[static_cast<std::size_t>(p) * 6 + i] == Catch::Approx(row[static_cast<std::size_t>(i)]));
        }
    }
}

TEST_CASE("scaled dot-product attention") {
    SECTION("single key returns its value row exactly") {
        RngState rng(3);
        Tensor q = rand_uniform(rng, {2, 4}, 0, 1);
        Tensor k = rand_uniform(rng, {1, 4}, 0, 1);
        Tensor v = rand_uniform(rng, {1, 4}, 0, 1);
        Tensor out = attention(q, k, v);
        for (int r = 0; r < 2; ++r)
            for (int i = 0; i < 4; ++i)
                REQUIRE(out.values()[static_cast<std::size_t>(r) * 4 + i] ==
                        Catch::Approx(v.values()[static_cast<std::size_t>(i)]));
    }
    SECTION("matches a loop reference") {
        RngState rng(4);
        int m = 3, s = 5, dk = 4;
        Tensor q = rand_uniform(rng, {m, dk}, 0, 1);
        Tensor k = rand_uniform(rng, {s, dk}, 0, 1);
        Tensor v = rand_uniform(rng, {s, dk}, 0, 1);
        Tensor out = attention(q, k, v);
        for (int i = 0; i < m; ++i) {
            std::vector<real> scores(static_cast<std::size_t>(s));
            real mx = -1e30;
            for (int j = 0; j < s; ++j) {
                real dot = 0;
                for (int d = 0; d < dk; ++d)
                    dot += q.values()[static_cast<std::size_t>(i) * dk + d] *
                           k.values()[static_cast<std::size_t>(j) * dk + d];
                scores[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<real>(dk));
                mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
            }
            real z = 0;
            for (auto& sc : scores) {
                sc = std::exp(sc - mx);
                z += sc;
            }
            for (int d = 0; d < dk; ++d) {
                real want = 0;
                for (int j = 0; j < s; ++j)
                    want += scores[static_cast<std::size_t>(j)] / z *
                            v.values()[static_cast<std::size_t>(j) * dk + d];
                REQUIRE(out.values()[static_cast<std::size_t>(i) * dk + d] == Catch::Approx(want).margin(1e-10));
            }
        }
    }
    SECTION("masked keys receive zero weight") {
        RngState rng(5);
        Tensor q = rand_uniform(rng, {1, 4}, 0, 1);
        Tensor k = rand_uniform(rng, {3, 4}, 0, 1);
        Tensor v = rand_uniform(rng, {3, 4}, 0, 1);
        // mask out key 2; result must equal attention over keys 0..1 only
        Tensor mask = Tensor::from_values({1, 3}, {0, 0, kNegInf});
        Tensor full = attention(q, k, v, mask);
        Tensor k2 = rows(k, 0, 2), v2 = rows(v, 0, 2);
        Tensor cut = attention(q, k2, v2);
        for (int i = 0; i < 4; ++i)
            REQUIRE(full.values()[static_cast<std::size_t>(i)] ==
                    Catch::Approx(cut.values()[static_cast<std::size_t>(i)]).margin(1e-12));
    }
}

TEST_CASE("multi-head attention") {
    SECTION("one head reduces to plain attention plus projections") {
        RngState rng(6);
        MultiHeadAttention mha;
        mha.init(rng, 8, 1);
        Tensor x = rand_uniform(rng, {3, 8}, 0, 1);
        Tensor got = mha.forward(x, x, Tensor{});
        Tensor q = matmul(x, mha.wq[0]), k = matmul(x, mha.wk[0]), v = matmul(x, mha.wv[0]);
        Tensor want = matmul(attention(q, k, v), mha.wo);
        for (std::size_t i = 0; i < got.values().size(); ++i)
            REQUIRE(got.values()[i] == Catch::Approx(want.values()[i]).margin(1e-12));
    }
    SECTION("two heads equal concatenated per-head attentions projected") {
        RngState rng(7);
        MultiHeadAttention mha;
        mha.init(rng, 8, 2);
        Tensor x = rand_uniform(rng, {4, 8}, 0, 1);
        Tensor got = mha.forward(x, x, Tensor{});
        std::vector<Tensor> parts;
        for (int h = 0; h < 2; ++h)
            parts.push_back(attention(matmul(x, mha.wq[static_cast<std::size_t>(h)]),
                                      matmul(x, mha.wk[static_cast<std::size_t>(h)]),
                                      matmul(x, mha.wv[static_cast<std::size_t>(h)])));
        Tensor want = matmul(concat(parts, 1), mha.wo);
        for (std::size_t i = 0; i < got.values().size(); ++i)
            REQUIRE(got.values()[i] == Catch::Approx(want.values()[i]).margin(1e-12));
    }
}

TEST_CASE("feed-forward network") {
    SECTION("matches a loop reference") {
        RngState rng(8);
        FeedForward ffn;
        ffn.init(rng, 4, 6);
        Tensor x = rand_uniform(rng, {2, 4}, 0, 1);
        Tensor got = ffn.forward(x);
        for (int r = 0; r < 2; ++r) {
            std::vector<real> h(6, 0);
            for (int j = 0; j < 6; ++j) {
                real a = ffn.b1.values()[static_cast<std::size_t>(j)];
                for (int i = 0; i < 4; ++i)
                    a += x.values()[static_cast<std::size_t>(r) * 4 + i] *
                         ffn.w1.values()[static_cast<std::size_t>(i) * 6 + j];
                h[static_cast<std::size_t>(j)] = std::max(real(0), a);
            }
            for (int o = 0; o < 4; ++o) {
                real a = ffn.b2.values()[static_cast<std::size_t>(o)];
                for (int j = 0; j < 6; ++j)
                    a += h[static_cast<std::size_t>(j)] * ffn.w2.values()[static_cast<std::size_t>(j) * 4 + o];
                REQUIRE(got.values()[static_cast<std::size_t>(r) * 4 + o] == Catch::Approx(a).margin(1e-10));
            }
        }
    }
    SECTION("applies row-wise: permuting rows permutes outputs") {
        RngState rng(9);
        FeedForward ffn;
        ffn.init(rng, 4, 8);
        Tensor x = rand_uniform(rng, {3, 4}, 0, 1);
        std::vector<real> sw(x.values());
        for (int i = 0; i < 4; ++i) std::swap(sw[static_cast<std::size_t>(i)], sw[static_cast<std::size_t>(i) + 8]);
        Tensor y = Tensor::from_values({3, 4}, std::move(sw));
        Tensor fx = ffn.forward(x), fy = ffn.forward(y);
        for (int i = 0; i < 4; ++i) {
            REQUIRE(fx.values()[static_cast<std::size_t>(i)] ==
                    Catch::Approx(fy.values()[static_cast<std::size_t>(i) + 8]).margin(1e-12));
            REQUIRE(fx.values()[static_cast<std::size_t>(i) + 8] ==
                    Catch::Approx(fy.values()[static_cast<std::size_t>(i)]).margin(1e-12));
        }
    }
}

TEST_CASE("decoder causality") {
    ModelConfig cfg = small_config();
    RngState rng(10);
    Decoder dec;
    dec.init(rng, cfg, 9);
    Memory mem = random_memory(rng, 6, cfg.d_model);

    std::vector<int> a = {Vocab::SOS, 3, 4, 5, 6};
    std::vector<int> b = {Vocab::SOS, 3, 4, 8, 6};  // differs at position 3
    Tensor la = dec.forward_rows(mem, a, false);
    Tensor lb = dec.forward_rows(mem, b, false);
    for (int pos = 0; pos < 3; ++pos)
        for (int t = 0; t < 9; ++t)
            REQUIRE(la.values()[static_cast<std::size_t>(pos) * 9 + t] ==
                    Catch::Approx(lb.values()[static_cast<std::size_t>(pos) * 9 + t]).margin(1e-12));
    bool later_changed = false;
    for (int t = 0; t < 9; ++t)
        if (std::abs(la.values()[3 * 9 + static_cast<std::size_t>(t)] -
                     lb.values()[3 * 9 + static_cast<std::size_t>(t)]) > 1e-9)
            later_changed = true;
    REQUIRE(later_changed);
}

TEST_CASE("decoder ignores masked memory cells") {
    ModelConfig cfg = small_config();
    RngState rng(11);
    Decoder dec;
    dec.init(rng, cfg, 9);
    Memory mem = random_memory(rng, 6, cfg.d_model);
    mem.key_mask[4] = 0;
    mem.key_mask[5] = 0;
    std::vector<int> ids = {Vocab::SOS, 3, 4};
    Tensor before = dec.forward_rows(mem, ids, false);
    // rewriting the masked feature rows must not change anything
    for (int r = 4; r < 6; ++r)
        for (int d = 0; d < cfg.d_model; ++d)
            mem.features.values()[static_cast<std::size_t>(r) * cfg.d_model + d] += 17.5;
    Tensor after = dec.forward_rows(mem, ids, false);
    for (std::size_t i = 0; i < before.values().size(); ++i)
        REQUIRE(before.values()[i] == Catch::Approx(after.values()[i]).margin(1e-12));
}

TEST_CASE("incremental decoding matches the full pass") {
    ModelConfig cfg = small_config();
    RngState rng(12);
    Decoder dec;
    dec.init(rng, cfg, 12);
    Memory mem = random_memory(rng, 8, cfg.d_model);
    mem.key_mask[7] = 0;

    std::vector<int> prefix = {Vocab::SOS};
    DecoderState state;
    for (int step = 0; step < 6; ++step) {
        std::vector<real> inc = dec.decode_step(mem, prefix, state);
        Tensor full = dec.forward_rows(mem, prefix, false);
        std::size_t off = (prefix.size() - 1) * 12;
        for (int t = 0; t < 12; ++t)
            REQUIRE(inc[static_cast<std::size_t>(t)] ==
                    Catch::Approx(full.values()[off + static_cast<std::size_t>(t)]).margin(1e-5));
        prefix.push_back(3 + step);
    }
}

TEST_CASE("incremental decoding catches up over skipped positions") {
    ModelConfig cfg = small_config();
    RngState rng(13);
    Decoder dec;
    dec.init(rng, cfg, 10);
    Memory mem = random_memory(rng, 5, cfg.d_model);
    std::vector<int> prefix = {Vocab::EOS, 4, 5, 6};
    DecoderState state;
    std::vector<real> inc = dec.decode_step(mem, prefix, state);
    Tensor full = dec.forward_rows(mem, prefix, false);
    for (int t = 0; t < 10; ++t)
        REQUIRE(inc[static_cast<std::size_t>(t)] ==
                Catch::Approx(full.values()[3 * 10 + static_cast<std::size_t>(t)]).margin(1e-5));
    REQUIRE(state.length == 4);
    REQUIRE_THROWS_AS(dec.decode_step(mem, prefix, state), ContractError);
}

TEST_CASE("teacher forcing concatenates per-row logits") {
    ModelConfig cfg = small_config();
    RngState rng(14);
    Decoder dec;
    dec.init(rng, cfg, 8);
    Memory m1 = random_memory(rng, 4, cfg.d_model);
    Memory m2 = random_memory(rng, 6, cfg.d_model);
    std::vector<std::vector<int>> inputs = {{Vocab::SOS, 3, 4}, {Vocab::EOS, 4, 3}};
    Tensor batched = dec.forward_teacher_forced({&m1, &m2}, inputs, false);
    REQUIRE(batched.shape() == Shape{6, 8});
    Tensor r1 = dec.forward_rows(m1, inputs[0], false);
    Tensor r2 = dec.forward_rows(m2, inputs[1], false);
    for (int i = 0; i < 24; ++i) {
        REQUIRE(batched.values()[static_cast<std::size_t>(i)] == Catch::Approx(r1.values()[static_cast<std::size_t>(i)]));
        REQUIRE(batched.values()[static_cast<std::size_t>(i) + 24] ==
                Catch::Approx(r2.values()[static_cast<std::size_t>(i)]));
    }
}

TEST_CASE("nearly all decoder parameters receive gradient") {
    ModelConfig cfg = small_config();
    RngState rng(15);
    Decoder dec;
    dec.init(rng, cfg, 10);
    Memory mem = random_memory(rng, 5, cfg.d_model);

    std::vector<int> ids = {Vocab::SOS, 3, 4, 5};
    Tensor logits = dec.forward_rows(mem, ids, false);
    Tensor loss = sum(logits);
    std::vector<NamedParam> params;
    dec.collect(params);
    for (auto& p : params) p.tensor.zero_grad();
    backward(loss);

    std::size_t with_grad = 0, embedding_rows_hit = 0, total = 0;
    for (auto& p : params) {
        if (p.name == "decoder.embedding") {
            // only looked-up rows can have gradient
            for (int id : {Vocab::SOS, 3, 4, 5}) {
                bool row = false;
                for (int d = 0; d < cfg.d_model; ++d)
                    if (p.tensor.grad()[static_cast<std::size_t>(id) * cfg.d_model + d] != 0) row = true;
                if (row) ++embedding_rows_hit;
            }
            continue;
        }
        for (real g : p.tensor.grad()) {
            ++total;
            if (g != 0) ++with_grad;
        }
    }
    REQUIRE(embedding_rows_hit == 4);
    // dead ReLU units in the FFN can zero a few entries
    REQUIRE(with_grad >= total * 9 / 10);
}

TEST_CASE("sequences past the positional table are rejected") {
    ModelConfig cfg = small_config();
    cfg.max_len = 4;
    RngState rng(16);
    Decoder dec;
    dec.init(rng, cfg, 8);
    Memory mem = random_memory(rng, 3, cfg.d_model);
    std::vector<int> ids = {Vocab::SOS, 3, 4, 5, 6, 7};
    REQUIRE_THROWS_AS(dec.forward_rows(mem, ids, false), ContractError);
}
