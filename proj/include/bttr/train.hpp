#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "bttr/bibatch.hpp"
#include "bttr/model.hpp"
#include "bttr/ops.hpp"

namespace bttr {

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// -------------------------------------------------------------------- loss

struct LossBreakdown {
    Tensor total;     // scalar, graph-connected
    real l2r = 0;     // per-direction means, for logging
    real r2l = 0;
    real token_acc = 0;
};

namespace detail {
inline std::vector<int> flatten_targets(const std::vector<std::vector<int>>& rows) {
    std::vector<int> out;
    for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
    return out;
}
}  // namespace detail

// Mean cross-entropy over valid target positions of both directions. Each
// sample's positions are weighted by 1/(2 Z L_z) with L_z its valid token
// count, which reduces to the uniform 1/(2ZL) weighting when lengths agree.
// PAD positions carry zero weight, so their logits cannot affect the value.
inline LossBreakdown bidirectional_loss(const Tensor& logits_l2r, const Tensor& logits_r2l, const BiBatch& batch) {
    int z = batch.batch, l = batch.l_max;
    if (logits_l2r.dim(0) != z * l || logits_r2l.dim(0) != z * l)
        throw DimensionError("bidirectional_loss: logits rows " + std::to_string(logits_l2r.dim(0)) +
                             " do not match batch " + std::to_string(z) + "x" + std::to_string(l));
    std::vector<real> weights(static_cast<std::size_t>(z) * l, real(0));
    std::vector<real> dir_weights(weights.size(), real(0));  // 1/(Z L_z), for per-direction logging
    bool any_valid = false;
    for (int s = 0; s < z; ++s) {
        std::int64_t lz = 0;
        for (int j = 0; j < l; ++j)
            if (batch.token_mask[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)]) ++lz;
        if (lz == 0) continue;
        any_valid = true;
        for (int j = 0; j < l; ++j)
            if (batch.token_mask[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)]) {
                weights[static_cast<std::size_t>(s) * l + j] = real(1) / (2 * static_cast<real>(z) * lz);
                dir_weights[static_cast<std::size_t>(s) * l + j] = real(1) / (static_cast<real>(z) * lz);
            }
    }
    if (!any_valid) throw ContractError("bidirectional_loss: batch has no valid target positions");

    Tensor ce_l2r = cross_entropy_rows(logits_l2r, detail::flatten_targets(batch.l2r_target));
    Tensor ce_r2l = cross_entropy_rows(logits_r2l, detail::flatten_targets(batch.r2l_target));

    LossBreakdown out;
    out.total = add(dot_const(ce_l2r, weights), dot_const(ce_r2l, weights));
    for (std::size_t i = 0; i < dir_weights.size(); ++i) {
        out.l2r += dir_weights[i] * ce_l2r.values()[i];
        out.r2l += dir_weights[i] * ce_r2l.values()[i];
    }

    // token accuracy at valid positions, both directions
    auto acc_of = [&](const Tensor& logits, const std::vector<std::vector<int>>& targets) {
        int v = logits.dim(1);
        std::int64_t correct = 0, total = 0;
        for (int s = 0; s < z; ++s)
            for (int j = 0; j < l; ++j) {
                if (!batch.token_mask[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)]) continue;
                const real* row = logits.values().data() + (static_cast<std::size_t>(s) * l + j) * v;
                int best = 0;
                for (int k = 1; k < v; ++k)
                    if (row[k] > row[best]) best = k;
                if (best == targets[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)]) ++correct;
                ++total;
            }
        return std::pair<std::int64_t, std::int64_t>{correct, total};
    };
    auto [c1, t1] = acc_of(logits_l2r, batch.l2r_target);
    auto [c2, t2] = acc_of(logits_r2l, batch.r2l_target);
    out.token_acc = static_cast<real>(c1 + c2) / static_cast<real>(t1 + t2);
    return out;
}

// ---------------------------------------------------------------- Adadelta

// per-parameter accumulators of squared gradients and squared updates
struct OptimState {
    real rho = 0.9;
    real eps = 1e-6;
    real weight_decay = 1e-4;
    std::vector<std::vector<real>> acc_grad, acc_update;

    void init(std::vector<NamedParam>& params, const ModelConfig& cfg) {
        rho = cfg.rho;
        eps = cfg.adadelta_eps;
        weight_decay = cfg.weight_decay;
        acc_grad.clear();
        acc_update.clear();
        for (auto& p : params) {
            acc_grad.emplace_back(p.tensor.numel(), real(0));
            acc_update.emplace_back(p.tensor.numel(), real(0));
        }
    }
};

// clips the global gradient norm in place; returns the pre-clip norm
inline real clip_grad_norm(std::vector<NamedParam>& params, real max_norm) {
    real sq = 0;
    for (auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (real g : p.tensor.grad()) sq += g * g;
    }
    real norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        real s = max_norm / norm;
        for (auto& p : params) {
            if (!p.tensor.has_grad()) continue;
            for (real& g : p.tensor.grad()) g *= s;
        }
    }
    return norm;
}

// standard Adadelta with the weight decay term added to the gradient
inline void adadelta_step(std::vector<NamedParam>& params, OptimState& state) {
    if (state.acc_grad.size() != params.size()) throw ContractError("optimizer state does not match parameter list");
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& t = params[pi].tensor;
        auto& vals = t.values();
        auto& eg = state.acc_grad[pi];
        auto& eu = state.acc_update[pi];
        const auto& grad = t.grad();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            real g = grad[i];
            if (std::isnan(g))
                throw NumericError("NaN gradient in parameter " + params[pi].name + " at index " +
                                   std::to_string(i) + "; step aborted");
            g += state.weight_decay * vals[i];
            eg[i] = state.rho * eg[i] + (1 - state.rho) * g * g;
            real delta = -std::sqrt((eu[i] + state.eps) / (eg[i] + state.eps)) * g;
            eu[i] = state.rho * eu[i] + (1 - state.rho) * delta * delta;
            vals[i] += delta;
        }
    }
}

// ---------------------------------------------------------------- training

struct TrainReport {
    int epoch = 0;
    real mean_loss = 0;
    real l2r_loss = 0;
    real r2l_loss = 0;
    real token_acc = 0;
    real wall_seconds = 0;
};

struct TrainResult {
    std::vector<TrainReport> reports;
    std::vector<std::vector<real>> best_params;  // snapshot of the best-loss epoch
    real best_loss = std::numeric_limits<real>::infinity();
    int best_epoch = -1;
};

// One optimizer step over an already-built BiBatch; returns the loss breakdown.
inline LossBreakdown train_step(BTTRModel& model, const BiBatch& batch, std::vector<NamedParam>& params,
                                OptimState& opt, RngState& rng) {
    auto memories = model.encoder.forward(batch.images, batch.img_mask, true);
    // L2R and R2L rows are concatenated through the batch dimension: one pass
    std::vector<const Memory*> mem_rows;
    std::vector<std::vector<int>> inputs;
    for (int i = 0; i < batch.batch; ++i) {
        mem_rows.push_back(&memories[static_cast<std::size_t>(i)]);
        inputs.push_back(batch.l2r_input[static_cast<std::size_t>(i)]);
    }
    for (int i = 0; i < batch.batch; ++i) {
        mem_rows.push_back(&memories[static_cast<std::size_t>(i)]);
        inputs.push_back(batch.r2l_input[static_cast<std::size_t>(i)]);
    }
    Tensor logits = model.decoder.forward_teacher_forced(mem_rows, inputs, true, &rng);
    int half = batch.batch * batch.l_max;
    LossBreakdown loss = bidirectional_loss(rows(logits, 0, half), rows(logits, half, half), batch);
    if (std::isnan(loss.total.item())) throw NumericError("training diverged: loss is NaN");

    for (auto& p : params) p.tensor.zero_grad();
    backward(loss.total);
    clip_grad_norm(params, model.cfg.grad_clip);
    adadelta_step(params, opt);
    return loss;
}

inline TrainResult train(BTTRModel& model, const std::vector<Sample>& dataset, int epochs, std::uint64_t seed,
                         const std::function<void(const TrainReport&)>& on_epoch = {}) {
    if (dataset.empty()) throw ContractError("train: empty dataset");
    auto params = model.params();
    OptimState opt;
    opt.init(params, model.cfg);
    RngState rng(seed);

    TrainResult result;
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        // seeded Fisher-Yates shuffle
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = rng.uniform_int(i);
            std::swap(order[i - 1], order[j]);
        }
        real loss_sum = 0, l2r_sum = 0, r2l_sum = 0, acc_sum = 0;
        int steps = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(model.cfg.batch_size)) {
            std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(model.cfg.batch_size));
            std::vector<Sample> chunk;
            int lmax = 2;
            for (std::size_t i = start; i < end; ++i) {
                chunk.push_back(dataset[order[i]]);
                lmax = std::max(lmax, static_cast<int>(dataset[order[i]].tokens.size()) + 1);
            }
            BiBatch batch = make_bibatch(chunk, lmax);
            LossBreakdown loss = train_step(model, batch, params, opt, rng);
            loss_sum += loss.total.item();
            l2r_sum += loss.l2r;
            r2l_sum += loss.r2l;
            acc_sum += loss.token_acc;
            ++steps;
        }
        TrainReport report;
        report.epoch = epoch;
        report.mean_loss = loss_sum / steps;
        report.l2r_loss = l2r_sum / steps;
        report.r2l_loss = r2l_sum / steps;
        report.token_acc = acc_sum / steps;
        report.wall_seconds =
            std::chrono::duration<real>(std::chrono::steady_clock::now() - t0).count();
        if (report.mean_loss < result.best_loss) {
            result.best_loss = report.mean_loss;
            result.best_epoch = epoch;
            result.best_params.clear();
            for (auto& p : params) result.best_params.push_back(p.tensor.values());
        }
        result.reports.push_back(report);
        if (on_epoch) on_epoch(report);
    }
    return result;
}

inline void restore_params(BTTRModel& model, const std::vector<std::vector<real>>& snapshot) {
    auto params = model.params();
    if (snapshot.size() != params.size()) throw ContractError("parameter snapshot does not match model");
    for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.values() = snapshot[i];
}

}  // namespace bttr
