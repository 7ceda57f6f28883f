#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "mnl/error.hpp"
#include "mnl/nn/dataset.hpp"
#include "mnl/nn/denoiser.hpp"
#include "mnl/nn/loss.hpp"
#include "mnl/schedule.hpp"

namespace mnl::nn {

struct TrainLogRow {
    std::int64_t step = 0;
    double loss = 0.0;
    double eps = 0.0;
    double ce = 0.0;
    double lambda = 0.0;
    double heldout = std::nan("");  // held-out ε-loss (SNS) or multi-step loss (surrogate), when evaluated
};

/// Forward-noised batch of consecutive pairs with the levels and noise that produced it.
struct NoisedPairBatch {
    torch::Tensor y;        // [B, 2C, H, W]
    torch::Tensor eps_current;
    torch::Tensor eps_cond;
    torch::Tensor levels;   // [B, 2] int64, (s1, s2) in 1..S
    torch::Tensor clean_current;
    torch::Tensor clean_previous;
};

inline torch::Tensor signal_table(const NoiseSchedule& sched) {
    std::vector<float> v;
    for (double ab : sched.alpha_bar) v.push_back(static_cast<float>(std::sqrt(ab)));
    return torch::tensor(v);
}

inline torch::Tensor noise_table(const NoiseSchedule& sched) {
    std::vector<float> v;
    for (double ab : sched.alpha_bar) v.push_back(static_cast<float>(std::sqrt(1.0 - ab)));
    return torch::tensor(v);
}

/// Draws a batch with s1, s2 ~ U{lo..hi} independently (default 1..S), using the global torch generator.
inline NoisedPairBatch sample_pair_batch(const SequenceDataset& data, const torch::Tensor& starts,
                                         std::int64_t batch, const NoiseSchedule& sched, int lo = 1, int hi = 0) {
    if (hi == 0) hi = sched.S;
    if (lo < 1 || hi > sched.S || lo > hi) throw ArgumentError("sample_pair_batch: level range outside 1..S");
    const auto pick = torch::randint(starts.size(0), {batch}, torch::kInt64);
    const auto t0 = starts.index_select(0, pick);
    NoisedPairBatch b;
    b.clean_previous = data.frames.index_select(0, t0);
    b.clean_current = data.frames.index_select(0, t0 + 1);
    b.levels = torch::randint(lo, hi + 1, {batch, 2}, torch::kInt64);
    b.eps_current = torch::randn_like(b.clean_current);
    b.eps_cond = torch::randn_like(b.clean_previous);
    const auto a = signal_table(sched), n = noise_table(sched);
    auto coef = [&](const torch::Tensor& table, int slot) {
        return table.index_select(0, b.levels.select(1, slot)).reshape({batch, 1, 1, 1});
    };
    const auto cur = coef(a, 0) * b.clean_current + coef(n, 0) * b.eps_current;
    const auto prev = coef(a, 1) * b.clean_previous + coef(n, 1) * b.eps_cond;
    b.y = stack_pair(cur, prev);
    return b;
}

inline DenoiserOutput forward_batch(DenoiserBase& model, const NoisedPairBatch& b) {
    return model.level_conditioned() ? model.forward(b.y, b.levels) : model.forward(b.y);
}

struct HeldoutMetrics {
    double eps = 0.0;
    double ce = 0.0;
    double level_mae_s1 = 0.0;
    double level_mae_s2 = 0.0;
};

/// Fixed-seed evaluation on a held-out set with levels drawn from U{lo..hi} (default 1..S);
/// restores the global generator state afterwards.
inline HeldoutMetrics evaluate_sns(DenoiserBase& model, const SequenceDataset& data, const NoiseSchedule& sched,
                                   std::int64_t batches, std::int64_t batch_size, std::uint64_t seed, int lo = 1,
                                   int hi = 0) {
    const auto starts_v = data.window_starts(2);
    if (starts_v.empty()) throw ArgumentError("evaluate_sns: held-out set has no pairs");
    const auto starts = torch::tensor(starts_v, torch::kInt64);
    torch::NoGradGuard guard;
    GeneratorStateGuard restore;
    HeldoutMetrics m;
    for (std::int64_t k = 0; k < batches; ++k) {
        torch::manual_seed(step_seed(seed, k));
        const auto b = sample_pair_batch(data, starts, batch_size, sched, lo, hi);
        const auto out = forward_batch(model, b);
        const auto terms = sns_loss_terms(out, b.eps_current, b.eps_cond, b.levels.select(1, 0),
                                          b.levels.select(1, 1), 0.0);
        m.eps += terms.eps.item<double>();
        m.ce += terms.ce.item<double>();
        if (!model.level_conditioned()) {
            const auto err = (decode_levels(out) - b.levels).abs().to(torch::kFloat64).mean(0);
            m.level_mae_s1 += err[0].item<double>();
            m.level_mae_s2 += err[1].item<double>();
        }
    }
    const auto n = static_cast<double>(batches);
    m.eps /= n;
    m.ce /= n;
    m.level_mae_s1 /= n;
    m.level_mae_s2 /= n;
    return m;
}

/// Model, optimizer and bookkeeping of an SNS training run; resumable from a checkpoint.
struct SnsTrainState {
    DenoiserConfig config;
    Denoiser model;
    std::unique_ptr<torch::optim::AdamW> optimizer;
    std::int64_t step = 0;
    double lambda = 0.1;
    std::vector<TrainLogRow> log;
};

inline std::unique_ptr<torch::optim::AdamW> make_adamw(torch::nn::Module& m, double lr, double weight_decay) {
    return std::make_unique<torch::optim::AdamW>(m.parameters(),
                                                 torch::optim::AdamWOptions(lr).weight_decay(weight_decay));
}

inline SnsTrainState init_sns_training(const DenoiserConfig& cfg, const FrameShape& shape) {
    SnsTrainState st;
    st.config = cfg;
    st.model = build_denoiser(cfg, shape);
    st.optimizer = make_adamw(*st.model, cfg.learning_rate, cfg.weight_decay);
    st.lambda = cfg.lambda;
    return st;
}

struct TrainOptions {
    const SequenceDataset* heldout = nullptr;
    std::int64_t heldout_batches = 8;
    std::function<void(const TrainLogRow&)> on_log;
    std::optional<std::int64_t> stop_at;  // halt early (still resumable) once this step count is reached
};

/// Minimizes the expected SNS loss with s1, s2 ~ U{1..S}; runs from st.step to st.config.steps.
inline void train_sns(SnsTrainState& st, const SequenceDataset& data, const NoiseSchedule& sched,
                      const TrainOptions& opts = {}) {
    const auto& cfg = st.config;
    if (cfg.S != sched.S) throw ConfigurationError("train_sns: denoiser S differs from the schedule");
    if (!(st.model->frame_shape() == data.shape)) throw ConfigurationError("train_sns: frame shape mismatch");
    const auto starts_v = data.window_starts(2);
    if (static_cast<std::int64_t>(starts_v.size()) < cfg.batch_size) {
        throw ArgumentError("train_sns: dataset has fewer pairs than one batch");
    }
    const auto starts = torch::tensor(starts_v, torch::kInt64);
    const std::int64_t end = opts.stop_at ? std::min(*opts.stop_at, cfg.steps) : cfg.steps;
    double acc_loss = 0.0, acc_eps = 0.0, acc_ce = 0.0;
    std::int64_t acc_n = 0;
    st.model->train();
    for (; st.step < end; ++st.step) {
        torch::manual_seed(step_seed(cfg.seed, st.step));
        const auto b = sample_pair_batch(data, starts, cfg.batch_size, sched);
        const auto out = forward_batch(*st.model, b);
        const auto terms =
            sns_loss_terms(out, b.eps_current, b.eps_cond, b.levels.select(1, 0), b.levels.select(1, 1), st.lambda);
        const double loss = terms.total.item<double>();
        if (!std::isfinite(loss)) throw DivergenceError("train_sns: non-finite loss", st.step);
        st.optimizer->zero_grad();
        terms.total.backward();
        st.optimizer->step();
        acc_loss += loss;
        acc_eps += terms.eps.item<double>();
        acc_ce += terms.ce.item<double>();
        ++acc_n;
        const bool last = st.step + 1 == cfg.steps;
        if ((st.step + 1) % cfg.log_every == 0 || last) {
            TrainLogRow row{st.step + 1, acc_loss / acc_n, acc_eps / acc_n, acc_ce / acc_n, st.lambda};
            if (opts.heldout && ((st.step + 1) % cfg.eval_every == 0 || last)) {
                st.model->eval();
                row.heldout = evaluate_sns(*st.model, *opts.heldout, sched, opts.heldout_batches, cfg.batch_size,
                                           cfg.seed ^ 0x5EEDULL)
                                  .eps;
                st.model->train();
            }
            if (cfg.lambda_mode == "auto" && row.ce > 0.0 && st.lambda > 0.0) {
                const double ratio = st.lambda * row.ce / row.eps;
                if (ratio > 10.0 || ratio < 0.1) st.lambda = row.eps / row.ce;
            }
            st.log.push_back(row);
            if (opts.on_log) opts.on_log(row);
            acc_loss = acc_eps = acc_ce = 0.0;
            acc_n = 0;
        }
    }
    st.model->eval();
}

}  // namespace mnl::nn
