#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bttr/config.hpp"
#include "bttr/encoder.hpp"
#include "bttr/gradcheck.hpp"
#include "bttr/ops.hpp"
#include "bttr/tensor.hpp"

namespace bttr {

// sinusoid at an integer word position: [sin(pos/10000^{2i/d}), cos(...)]
inline std::vector<real> word_pos_encoding(real pos, int d) {
    std::vector<real> v(static_cast<std::size_t>(d), real(0));
    for (int i = 0; 2 * i < d; ++i) {
        real freq = std::pow(real(10000), real(2 * i) / d);
        v[static_cast<std::size_t>(2 * i)] = std::sin(pos / freq);
        if (2 * i + 1 < d) v[static_cast<std::size_t>(2 * i + 1)] = std::cos(pos / freq);
    }
    return v;
}

inline Tensor word_pos_encoding_table(int max_len, int d) {
    std::vector<real> out;
    out.reserve(static_cast<std::size_t>(max_len) * d);
    for (int p = 0; p < max_len; ++p) {
        auto row = word_pos_encoding(static_cast<real>(p), d);
        out.insert(out.end(), row.begin(), row.end());
    }
    return Tensor::from_values({max_len, d}, std::move(out));
}

// [L,L] additive mask: 0 where j <= i, -inf above the diagonal
inline Tensor causal_mask(int len) {
    if (len < 1) throw DimensionError("causal_mask needs length >= 1");
    std::vector<real> m(static_cast<std::size_t>(len) * len, real(0));
    for (int i = 0; i < len; ++i)
        for (int j = i + 1; j < len; ++j) m[static_cast<std::size_t>(i) * len + j] = kNegInf;
    return Tensor::from_values({len, len}, std::move(m));
}

// additive mask over memory keys, repeated for each of m query rows
inline Tensor key_mask_tensor(const std::vector<std::uint8_t>& key_mask, int m) {
    int s = static_cast<int>(key_mask.size());
    std::vector<real> v(static_cast<std::size_t>(m) * s);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < s; ++j) v[static_cast<std::size_t>(i) * s + j] = key_mask[static_cast<std::size_t>(j)] ? real(0) : kNegInf;
    return Tensor::from_values({m, s}, std::move(v));
}

// softmax(Q K^T / sqrt(d_k) + mask) V; the scaled dot-product building block.
// attn_dropout > 0 (with rng) drops attention weights at train time.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask = {},
                        real attn_dropout = 0, RngState* rng = nullptr) {
    int d_k = q.dim(1);
    Tensor scores = scale(matmul(q, transpose(k)), real(1) / std::sqrt(static_cast<real>(d_k)));
    if (mask.defined()) scores = add(scores, mask);
    Tensor weights = softmax(scores);
    if (attn_dropout > 0 && rng)
        weights = dropout(weights, make_dropout_mask(*rng, weights.shape(), attn_dropout), attn_dropout);
    return matmul(weights, v);
}

// h scaled dot-product heads over learned subspaces, concatenated and
// projected back to d_model.
struct MultiHeadAttention {
    int heads = 0;
    std::vector<Tensor> wq, wk, wv;  // per head, [d_model, d_k]
    Tensor wo;                       // [heads*d_k, d_model]

    void init(RngState& rng, int d_model, int n_heads) {
        heads = n_heads;
        int d_k = d_model / n_heads;
        wq.clear();
        wk.clear();
        wv.clear();
        for (int h = 0; h < n_heads; ++h) {
            wq.push_back(init_linear(rng, {d_model, d_k}, d_model));
            wk.push_back(init_linear(rng, {d_model, d_k}, d_model));
            wv.push_back(init_linear(rng, {d_model, d_k}, d_model));
        }
        wo = init_linear(rng, {n_heads * d_k, d_model}, n_heads * d_k);
    }

    Tensor forward(const Tensor& q_in, const Tensor& kv_in, const Tensor& mask, real attn_dropout = 0,
                   RngState* rng = nullptr) const {
        std::vector<Tensor> head_outs;
        head_outs.reserve(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            Tensor q = matmul(q_in, wq[static_cast<std::size_t>(h)]);
            Tensor k = matmul(kv_in, wk[static_cast<std::size_t>(h)]);
            Tensor v = matmul(kv_in, wv[static_cast<std::size_t>(h)]);
            head_outs.push_back(attention(q, k, v, mask, attn_dropout, rng));
        }
        return matmul(concat(head_outs, 1), wo);
    }

    void collect(std::vector<NamedParam>& out, const std::string& prefix) {
        for (int h = 0; h < heads; ++h) {
            out.push_back({prefix + ".wq" + std::to_string(h), wq[static_cast<std::size_t>(h)]});
            out.push_back({prefix + ".wk" + std::to_string(h), wk[static_cast<std::size_t>(h)]});
            out.push_back({prefix + ".wv" + std::to_string(h), wv[static_cast<std::size_t>(h)]});
        }
        out.push_back({prefix + ".wo", wo});
    }
};

// max(0, x W1 + b1) W2 + b2, position-wise
struct FeedForward {
    Tensor w1, b1, w2, b2;

    void init(RngState& rng, int d_model, int d_ff) {
        w1 = init_linear(rng, {d_model, d_ff}, d_model);
        b1 = Tensor::zeros({d_ff}, true);
        w2 = init_linear(rng, {d_ff, d_model}, d_ff);
        b2 = Tensor::zeros({d_model}, true);
    }

    Tensor forward(const Tensor& x, real hidden_dropout = 0, RngState* rng = nullptr) const {
        Tensor h = relu(add_bias(matmul(x, w1), b1));
        if (hidden_dropout > 0 && rng)
            h = dropout(h, make_dropout_mask(*rng, h.shape(), hidden_dropout), hidden_dropout);
        return add_bias(matmul(h, w2), b2);
    }

    void collect(std::vector<NamedParam>& out, const std::string& prefix) {
        out.push_back({prefix + ".w1", w1});
        out.push_back({prefix + ".b1", b1});
        out.push_back({prefix + ".w2", w2});
        out.push_back({prefix + ".b2", b2});
    }
};

// post-norm transformer decoder layer: masked self-attention, cross-attention
// over the encoder memory, position-wise FFN, each wrapped residual+layernorm
struct DecoderLayer {
    MultiHeadAttention self_attn, cross_attn;
    FeedForward ffn;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;

    void init(RngState& rng, const ModelConfig& cfg) {
        self_attn.init(rng, cfg.d_model, cfg.heads);
        cross_attn.init(rng, cfg.d_model, cfg.heads);
        ffn.init(rng, cfg.d_model, cfg.d_ff);
        ln1_g = Tensor::ones({cfg.d_model}, true);
        ln1_b = Tensor::zeros({cfg.d_model}, true);
        ln2_g = Tensor::ones({cfg.d_model}, true);
        ln2_b = Tensor::zeros({cfg.d_model}, true);
        ln3_g = Tensor::ones({cfg.d_model}, true);
        ln3_b = Tensor::zeros({cfg.d_model}, true);
    }

    Tensor forward(Tensor x, const Tensor& mem_features, const Tensor& self_mask, const Tensor& cross_mask,
                   real p, RngState* rng) const {
        x = layernorm(add(x, self_attn.forward(x, x, self_mask, p, rng)), ln1_g, ln1_b);
        x = layernorm(add(x, cross_attn.forward(x, mem_features, cross_mask, p, rng)), ln2_g, ln2_b);
        x = layernorm(add(x, ffn.forward(x, p, rng)), ln3_g, ln3_b);
        return x;
    }

    void collect(std::vector<NamedParam>& out, const std::string& prefix) {
        self_attn.collect(out, prefix + ".self");
        cross_attn.collect(out, prefix + ".cross");
        ffn.collect(out, prefix + ".ffn");
        out.push_back({prefix + ".ln1_g", ln1_g});
        out.push_back({prefix + ".ln1_b", ln1_b});
        out.push_back({prefix + ".ln2_g", ln2_g});
        out.push_back({prefix + ".ln2_b", ln2_b});
        out.push_back({prefix + ".ln3_g", ln3_g});
        out.push_back({prefix + ".ln3_b", ln3_b});
    }
};

// cached keys/values for incremental decoding of one hypothesis
struct DecoderState {
    int length = 0;  // positions consumed so far
    // [layer][head] tensors; self caches grow with length
    std::vector<std::vector<Tensor>> self_k, self_v;
    std::vector<std::vector<Tensor>> cross_k, cross_v;
    Tensor cross_mask_row;  // [1, S]
    bool initialized = false;
};

struct Decoder {
    ModelConfig cfg;
    int vocab_size = 0;
    Tensor embedding;  // [V, d_model]
    std::vector<DecoderLayer> layers;
    Tensor out_w;  // [d_model, V] (unused when tie_embedding)
    Tensor out_b;  // [V]
    Tensor pe_table;

    void init(RngState& rng, const ModelConfig& config, int vocab) {
        cfg = config;
        vocab_size = vocab;
        embedding = init_linear(rng, {vocab, cfg.d_model}, cfg.d_model);
        layers.resize(static_cast<std::size_t>(cfg.layers));
        for (auto& l : layers) l.init(rng, cfg);
        if (!cfg.tie_embedding) out_w = init_linear(rng, {cfg.d_model, vocab}, cfg.d_model);
        out_b = Tensor::zeros({vocab}, true);
        pe_table = word_pos_encoding_table(cfg.max_len + 1, cfg.d_model);
    }

    Tensor project_out(const Tensor& x) const {
        if (cfg.tie_embedding) return add_bias(matmul(x, transpose(embedding)), out_b);
        return add_bias(matmul(x, out_w), out_b);
    }

    // embedding * sqrt(d_model) + word positional encoding (+ dropout at train)
    Tensor embed(const std::vector<int>& ids, int start_pos, real p, RngState* rng) const {
        int len = static_cast<int>(ids.size());
        if (start_pos + len > cfg.max_len + 1)
            throw ContractError("sequence length " + std::to_string(start_pos + len) +
                                " exceeds word positional encoding table (max_len=" + std::to_string(cfg.max_len) +
                                ")");
        Tensor x = scale(embedding_lookup(embedding, ids), std::sqrt(static_cast<real>(cfg.d_model)));
        x = add(x, rows(pe_table, start_pos, len));
        if (p > 0 && rng) x = dropout(x, make_dropout_mask(*rng, x.shape(), p), p);
        return x;
    }

    // one teacher-forced pass over a single sample's input ids
    Tensor forward_rows(const Memory& memory, const std::vector<int>& input_ids, bool train,
                        RngState* rng = nullptr) const {
        real p = train ? cfg.dropout : real(0);
        int len = static_cast<int>(input_ids.size());
        Tensor x = embed(input_ids, 0, p, rng);
        Tensor self_mask = causal_mask(len);
        Tensor cross_mask = key_mask_tensor(memory.key_mask, len);
        for (const auto& layer : layers) x = layer.forward(x, memory.features, self_mask, cross_mask, p, rng);
        return project_out(x);
    }

    // parallel pass over a padded batch; memories holds one entry per row
    Tensor forward_teacher_forced(const std::vector<const Memory*>& memories,
                                  const std::vector<std::vector<int>>& input_ids, bool train,
                                  RngState* rng = nullptr) const {
        if (memories.size() != input_ids.size())
            throw ContractError("forward_teacher_forced: " + std::to_string(memories.size()) + " memories vs " +
                                std::to_string(input_ids.size()) + " rows");
        std::vector<Tensor> blocks;
        blocks.reserve(memories.size());
        for (std::size_t b = 0; b < memories.size(); ++b)
            blocks.push_back(forward_rows(*memories[b], input_ids[b], train, rng));
        return concat(blocks, 0);
    }

    // incremental decoding: consumes prefix positions not yet in the state and
    // returns next-token logits. Equivalent to a full re-run within 1e-5.
    std::vector<real> decode_step(const Memory& memory, const std::vector<int>& prefix, DecoderState& state) const {
        if (prefix.empty()) throw ContractError("decode_step: prefix must start with a direction start token");
        if (static_cast<int>(prefix.size()) <= state.length)
            throw ContractError("decode_step: prefix shorter than decoded state");
        NoGradGuard ng;
        if (!state.initialized) {
            auto n_heads = static_cast<std::size_t>(cfg.heads);
            state.self_k.assign(layers.size(), std::vector<Tensor>(n_heads));
            state.self_v.assign(layers.size(), std::vector<Tensor>(n_heads));
            state.cross_k.assign(layers.size(), {});
            state.cross_v.assign(layers.size(), {});
            for (std::size_t li = 0; li < layers.size(); ++li) {
                const auto& ca = layers[li].cross_attn;
                for (int h = 0; h < ca.heads; ++h) {
                    state.cross_k[li].push_back(matmul(memory.features, ca.wk[static_cast<std::size_t>(h)]));
                    state.cross_v[li].push_back(matmul(memory.features, ca.wv[static_cast<std::size_t>(h)]));
                }
            }
            state.cross_mask_row = key_mask_tensor(memory.key_mask, 1);
            state.initialized = true;
        }

        Tensor x_last;
        for (int pos = state.length; pos < static_cast<int>(prefix.size()); ++pos) {
            Tensor x = embed({prefix[static_cast<std::size_t>(pos)]}, pos, 0, nullptr);
            for (std::size_t li = 0; li < layers.size(); ++li) {
                const DecoderLayer& layer = layers[li];
                // self-attention over the cache plus this position
                std::vector<Tensor> heads;
                for (int h = 0; h < layer.self_attn.heads; ++h) {
                    Tensor q = matmul(x, layer.self_attn.wq[static_cast<std::size_t>(h)]);
                    Tensor k_new = matmul(x, layer.self_attn.wk[static_cast<std::size_t>(h)]);
                    Tensor v_new = matmul(x, layer.self_attn.wv[static_cast<std::size_t>(h)]);
                    Tensor& kc = state.self_k[li][static_cast<std::size_t>(h)];
                    Tensor& vc = state.self_v[li][static_cast<std::size_t>(h)];
                    kc = kc.defined() ? concat({kc, k_new}, 0) : k_new;
                    vc = vc.defined() ? concat({vc, v_new}, 0) : v_new;
                    heads.push_back(attention(q, kc, vc));
                }
                Tensor sa = matmul(concat(heads, 1), layer.self_attn.wo);
                x = layernorm(add(x, sa), layer.ln1_g, layer.ln1_b);

                std::vector<Tensor> cheads;
                for (int h = 0; h < layer.cross_attn.heads; ++h) {
                    Tensor q = matmul(x, layer.cross_attn.wq[static_cast<std::size_t>(h)]);
                    cheads.push_back(attention(q, state.cross_k[li][static_cast<std::size_t>(h)],
                                               state.cross_v[li][static_cast<std::size_t>(h)],
                                               state.cross_mask_row));
                }
                Tensor cao = matmul(concat(cheads, 1), layer.cross_attn.wo);
                x = layernorm(add(x, cao), layer.ln2_g, layer.ln2_b);
                x = layernorm(add(x, layer.ffn.forward(x)), layer.ln3_g, layer.ln3_b);
            }
            x_last = x;
            state.length = pos + 1;
            if (pos + 1 == static_cast<int>(prefix.size())) {
                Tensor logits = project_out(x_last);
                return logits.values();
            }
        }
        throw ContractError("decode_step: unreachable");
    }

    void collect(std::vector<NamedParam>& out, const std::string& prefix = "decoder") {
        out.push_back({prefix + ".embedding", embedding});
        for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + ".layer" + std::to_string(i));
        if (!cfg.tie_embedding) out.push_back({prefix + ".out_w", out_w});
        out.push_back({prefix + ".out_b", out_b});
    }
};

}  // namespace bttr
