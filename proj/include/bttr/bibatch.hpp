#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "bttr/raster.hpp"
#include "bttr/tensor.hpp"
#include "bttr/vocab.hpp"

namespace bttr {

struct Sample {
    std::string id;
    Bitmap image;
    std::vector<int> tokens;  // non-reserved vocab ids, no SOS/EOS
};

// One training batch with both decoding directions.
//   l2r_input  = [SOS, y1..yT, PAD...]    l2r_target = [y1..yT, EOS, PAD...]
//   r2l_input  = [EOS, yT..y1, PAD...]    r2l_target = [yT..y1, SOS, PAD...]
struct BiBatch {
    Tensor images;                       // [B, 1, H, W], padded bottom/right
    std::vector<std::uint8_t> img_mask;  // B*H*W validity flags
    int img_h = 0, img_w = 0;

    std::vector<std::vector<int>> l2r_input, l2r_target;
    std::vector<std::vector<int>> r2l_input, r2l_target;
    std::vector<std::vector<bool>> token_mask;  // true at non-PAD target positions
    int batch = 0;
    int l_max = 0;
};

inline BiBatch make_bibatch(const std::vector<Sample>& samples, int l_max) {
    if (samples.empty()) throw ContractError("make_bibatch: empty sample list");
    BiBatch b;
    b.batch = static_cast<int>(samples.size());
    b.l_max = l_max;

    int h = 0, w = 0;
    for (const auto& s : samples) {
        if (static_cast<int>(s.tokens.size()) + 1 > l_max)
            throw ContractError("sample " + (s.id.empty() ? std::string("<anon>") : s.id) + " has " +
                                std::to_string(s.tokens.size()) + " tokens, too long for L_max=" +
                                std::to_string(l_max));
        for (int id : s.tokens)
            if (Vocab::is_reserved(id))
                throw ContractError("sample " + s.id + " contains reserved token id " + std::to_string(id));
        h = std::max(h, s.image.height);
        w = std::max(w, s.image.width);
    }
    b.img_h = h;
    b.img_w = w;

    std::vector<real> imgv(static_cast<std::size_t>(b.batch) * h * w, real(0));
    b.img_mask.assign(static_cast<std::size_t>(b.batch) * h * w, 0);
    for (int i = 0; i < b.batch; ++i) {
        const Bitmap& bm = samples[static_cast<std::size_t>(i)].image;
        for (int y = 0; y < bm.height; ++y)
            for (int x = 0; x < bm.width; ++x) {
                std::size_t idx = (static_cast<std::size_t>(i) * h + y) * w + x;
                imgv[idx] = bm.at(y, x);
                b.img_mask[idx] = 1;
            }
    }
    b.images = Tensor::from_values({b.batch, 1, h, w}, std::move(imgv));

    for (const auto& s : samples) {
        const auto& y = s.tokens;
        int t = static_cast<int>(y.size());
        std::vector<int> li(l_max, Vocab::PAD), lt(l_max, Vocab::PAD);
        std::vector<int> ri(l_max, Vocab::PAD), rt(l_max, Vocab::PAD);
        std::vector<bool> mask(l_max, false);
        li[0] = Vocab::SOS;
        ri[0] = Vocab::EOS;
        for (int j = 0; j < t; ++j) {
            li[static_cast<std::size_t>(j) + 1] = y[static_cast<std::size_t>(j)];
            lt[static_cast<std::size_t>(j)] = y[static_cast<std::size_t>(j)];
            ri[static_cast<std::size_t>(j) + 1] = y[static_cast<std::size_t>(t - 1 - j)];
            rt[static_cast<std::size_t>(j)] = y[static_cast<std::size_t>(t - 1 - j)];
        }
        lt[static_cast<std::size_t>(t)] = Vocab::EOS;
        rt[static_cast<std::size_t>(t)] = Vocab::SOS;
        for (int j = 0; j <= t; ++j) mask[static_cast<std::size_t>(j)] = true;
        b.l2r_input.push_back(std::move(li));
        b.l2r_target.push_back(std::move(lt));
        b.r2l_input.push_back(std::move(ri));
        b.r2l_target.push_back(std::move(rt));
        b.token_mask.push_back(std::move(mask));
    }
    return b;
}

// Strips padding from an input row and drops the leading start symbol,
// recovering the core token sequence.
inline std::vector<int> strip_core(const std::vector<int>& input_row) {
    std::vector<int> core;
    for (std::size_t i = 1; i < input_row.size(); ++i) {
        if (input_row[i] == Vocab::PAD) break;
        core.push_back(input_row[i]);
    }
    return core;
}

}  // namespace bttr
