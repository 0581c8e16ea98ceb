#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bttr/config.hpp"
#include "bttr/gradcheck.hpp"
#include "bttr/ops.hpp"
#include "bttr/tensor.hpp"

namespace bttr {

// Flattened, position-encoded feature grid for one image; what the decoder's
// cross-attention sees.
struct Memory {
    Tensor features;                     // [S, d_model], positional encoding already added
    std::vector<std::uint8_t> key_mask;  // S entries, false on padding cells
    int grid_h = 0;
    int grid_w = 0;
};

// 2-D normalized sinusoidal encoding: both grid axes get a d/2-dim sinusoid at
// the normalized coordinate, concatenated (rows paired with the grid height,
// columns with the width; swap_axes flips that pairing).
inline Tensor image_pos_encoding(int grid_h, int grid_w, int d_model, bool swap_axes = false) {
    if (d_model % 4 != 0) throw ConfigError("image positional encoding needs d_model divisible by 4");
    int half = d_model / 2;
    std::vector<real> out(static_cast<std::size_t>(grid_h) * grid_w * d_model);
    for (int y = 0; y < grid_h; ++y)
        for (int x = 0; x < grid_w; ++x) {
            real xbar = static_cast<real>(y) / grid_h;
            real ybar = static_cast<real>(x) / grid_w;
            if (swap_axes) std::swap(xbar, ybar);
            real* v = out.data() + (static_cast<std::size_t>(y) * grid_w + x) * d_model;
            for (int i = 0; 2 * i < half; ++i) {
                real freq = std::pow(real(10000), real(2 * i) / half);
                v[2 * i] = std::sin(xbar / freq);
                v[2 * i + 1] = std::cos(xbar / freq);
                v[half + 2 * i] = std::sin(ybar / freq);
                v[half + 2 * i + 1] = std::cos(ybar / freq);
            }
        }
    return Tensor::from_values({grid_h * grid_w, d_model}, std::move(out));
}

struct BatchNorm {
    Tensor gamma, beta;
    std::vector<real> running_mean, running_var;
    real momentum = 0.9;

    void init(int channels) {
        gamma = Tensor::ones({channels}, true);
        beta = Tensor::zeros({channels}, true);
        running_mean.assign(static_cast<std::size_t>(channels), real(0));
        running_var.assign(static_cast<std::size_t>(channels), real(1));
    }

    Tensor forward(const Tensor& x, bool train) {
        if (!train) return batchnorm_eval(x, gamma, beta, running_mean, running_var);
        std::vector<real> m, v;
        Tensor y = batchnorm_train(x, gamma, beta, &m, &v);
        for (std::size_t i = 0; i < running_mean.size(); ++i) {
            running_mean[i] = momentum * running_mean[i] + (1 - momentum) * m[i];
            running_var[i] = momentum * running_var[i] + (1 - momentum) * v[i];
        }
        return y;
    }

    void collect(std::vector<NamedParam>& out, const std::string& prefix) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

// BN -> ReLU -> 3x3 conv producing growth_rate channels
struct DenseLayer {
    BatchNorm bn;
    Tensor conv_w;

    void init(RngState& rng, int in_channels, int growth_rate) {
        bn.init(in_channels);
        conv_w = init_linear(rng, {growth_rate, in_channels, 3, 3}, in_channels * 9);
    }
    Tensor forward(const Tensor& x, bool train) { return conv2d(relu(bn.forward(x, train)), conv_w, 1, 1); }
    void collect(std::vector<NamedParam>& out, const std::string& prefix) {
        bn.collect(out, prefix + ".bn");
        out.push_back({prefix + ".conv_w", conv_w});
    }
};

// Each layer's output is concatenated with everything before it; channel count
// grows from C to C + depth*growth_rate.
struct DenseBlock {
    std::vector<DenseLayer> layers;

    void init(RngState& rng, int in_channels, int growth_rate, int depth) {
        layers.resize(static_cast<std::size_t>(depth));
        for (int i = 0; i < depth; ++i)
            layers[static_cast<std::size_t>(i)].init(rng, in_channels + i * growth_rate, growth_rate);
    }
    Tensor forward(Tensor x, bool train) {
        for (auto& layer : layers) {
            Tensor h = layer.forward(x, train);
            x = concat({x, h}, 1);
        }
        return x;
    }
    void collect(std::vector<NamedParam>& out, const std::string& prefix) {
        for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + ".layer" + std::to_string(i));
    }
};

// 1x1 conv to floor(compression * C) channels, then 2x2 average pool stride 2
struct Transition {
    Tensor conv_w;
    int out_channels = 0;

    void init(RngState& rng, int in_channels, real compression) {
        out_channels = static_cast<int>(std::floor(compression * in_channels));
        conv_w = init_linear(rng, {out_channels, in_channels, 1, 1}, in_channels);
    }
    Tensor forward(const Tensor& x, bool /*train*/) { return avgpool2d(conv2d(x, conv_w, 1, 0)); }
    void collect(std::vector<NamedParam>& out, const std::string& prefix) {
        out.push_back({prefix + ".conv_w", conv_w});
    }
};

// DenseNet-style feature extractor with a 1x1 projection to d_model and the
// 2-D positional encoding summed on top.
struct Encoder {
    ModelConfig cfg;
    Tensor stem_w;  // 3x3 stride-2 conv to 2*growth_rate channels
    std::vector<DenseBlock> blocks;
    std::vector<Transition> transitions;
    Tensor proj_w;  // 1x1 conv to d_model
    int final_channels = 0;

    // closed-form channel counts after each stage, for shape auditing
    static std::vector<int> channel_plan(const ModelConfig& cfg) {
        std::vector<int> plan;
        int c = 2 * cfg.growth_rate;
        plan.push_back(c);
        for (int b = 0; b < cfg.n_blocks; ++b) {
            c += cfg.block_depth * cfg.growth_rate;
            plan.push_back(c);
            if (b + 1 < cfg.n_blocks) {
                c = static_cast<int>(std::floor(cfg.compression * c));
                plan.push_back(c);
            }
        }
        return plan;
    }

    int downsample_factor() const { return 1 << cfg.n_blocks; }

    void init(RngState& rng, const ModelConfig& config) {
        cfg = config;
        int c = 2 * cfg.growth_rate;
        stem_w = init_linear(rng, {c, 1, 3, 3}, 9);
        blocks.resize(static_cast<std::size_t>(cfg.n_blocks));
        transitions.resize(static_cast<std::size_t>(cfg.n_blocks - 1));
        for (int b = 0; b < cfg.n_blocks; ++b) {
            blocks[static_cast<std::size_t>(b)].init(rng, c, cfg.growth_rate, cfg.block_depth);
            c += cfg.block_depth * cfg.growth_rate;
            if (b + 1 < cfg.n_blocks) {
                transitions[static_cast<std::size_t>(b)].init(rng, c, cfg.compression);
                c = transitions[static_cast<std::size_t>(b)].out_channels;
            }
        }
        final_channels = c;
        proj_w = init_linear(rng, {cfg.d_model, c, 1, 1}, c);
    }

    // images: [B,1,H,W]; img_mask: B*H*W validity flags (empty means all valid)
    std::vector<Memory> forward(const Tensor& images, const std::vector<std::uint8_t>& img_mask, bool train) {
        int batch = images.dim(0), h = images.dim(2), w = images.dim(3);
        int f = downsample_factor();
        if (h < f || w < f)
            throw DimensionError("image " + shape_str(images.shape()) + " smaller than total downsampling factor " +
                                 std::to_string(f));
        Tensor x = conv2d(images, stem_w, 2, 1);
        for (int b = 0; b < cfg.n_blocks; ++b) {
            x = blocks[static_cast<std::size_t>(b)].forward(x, train);
            if (b + 1 < cfg.n_blocks) x = transitions[static_cast<std::size_t>(b)].forward(x, train);
        }
        x = conv2d(x, proj_w, 1, 0);

        int gh = x.dim(2), gw = x.dim(3);
        Tensor pe = image_pos_encoding(gh, gw, cfg.d_model, cfg.swap_pos_axes);

        std::vector<Memory> memories;
        memories.reserve(static_cast<std::size_t>(batch));
        for (int n = 0; n < batch; ++n) {
            Memory mem;
            mem.grid_h = gh;
            mem.grid_w = gw;
            mem.features = add(image_to_rows(x, n), pe);
            mem.key_mask = downsample_mask(img_mask, n, batch, h, w, gh, gw);
            memories.push_back(std::move(mem));
        }
        return memories;
    }

    void collect(std::vector<NamedParam>& out, const std::string& prefix = "encoder") {
        out.push_back({prefix + ".stem_w", stem_w});
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            blocks[b].collect(out, prefix + ".block" + std::to_string(b));
            if (b < transitions.size()) transitions[b].collect(out, prefix + ".transition" + std::to_string(b));
        }
        out.push_back({prefix + ".proj_w", proj_w});
    }

    std::vector<BatchNorm*> batchnorms() {
        std::vector<BatchNorm*> out;
        for (auto& b : blocks)
            for (auto& l : b.layers) out.push_back(&l.bn);
        return out;
    }

private:
    // A grid cell is valid when any input pixel in its stride footprint is
    // valid; mirrors the ceil-mode downsampling of the stem and transitions.
    std::vector<std::uint8_t> downsample_mask(const std::vector<std::uint8_t>& img_mask, int n, int batch, int h,
                                              int w, int gh, int gw) const {
        std::vector<std::uint8_t> mask(static_cast<std::size_t>(gh) * gw, 1);
        if (img_mask.empty()) return mask;
        (void)batch;
        std::vector<std::uint8_t> cur(img_mask.begin() + static_cast<std::ptrdiff_t>(n) * h * w,
                                      img_mask.begin() + static_cast<std::ptrdiff_t>(n + 1) * h * w);
        int ch = h, cw = w;
        for (int stage = 0; stage < cfg.n_blocks; ++stage) {
            int oh = (ch + 1) / 2, ow = (cw + 1) / 2;
            std::vector<std::uint8_t> next(static_cast<std::size_t>(oh) * ow, 0);
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    std::uint8_t v = 0;
                    for (int di = 0; di < 2 && !v; ++di)
                        for (int dj = 0; dj < 2 && !v; ++dj) {
                            int y = 2 * i + di, x = 2 * j + dj;
                            if (y < ch && x < cw && cur[static_cast<std::size_t>(y) * cw + x]) v = 1;
                        }
                    next[static_cast<std::size_t>(i) * ow + j] = v;
                }
            cur = std::move(next);
            ch = oh;
            cw = ow;
        }
        if (ch != gh || cw != gw) throw DimensionError("mask downsampling disagrees with feature grid");
        mask.assign(cur.begin(), cur.end());
        return mask;
    }
};

}  // namespace bttr
