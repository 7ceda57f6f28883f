#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "mnl/error.hpp"
#include "mnl/nn/dataset.hpp"
#include "mnl/nn/denoiser.hpp"
#include "mnl/nn/train.hpp"

// Point-estimate surrogate Ψ_θ for the Gaussian transition approximation N(x + Ψ_θ(x), σ²I).

namespace mnl::nn {

struct SurrogateConfig {
    std::string arch = "unet";  // "unet", "mlp" or "linear"
    int base_channels = 16;
    int depth = 2;
    int hidden = 64;
    int layers = 2;
    int rollout_horizon = 4;    // L
    double sigma = 0.0;
    double learning_rate = 5e-4;
    double weight_decay = 0.0;
    int batch_size = 16;
    std::int64_t steps = 1000;
    std::uint64_t seed = 0;
    std::int64_t log_every = 50;
    std::int64_t eval_every = 500;
    bool inference_noise = false;

    void validate() const {
        if (arch != "unet" && arch != "mlp" && arch != "linear") {
            throw ConfigurationError("surrogate: arch must be 'unet', 'mlp' or 'linear'");
        }
        if (base_channels <= 0 || depth <= 0 || hidden <= 0 || layers <= 0) {
            throw ConfigurationError("surrogate: channel and layer counts must be positive");
        }
        if (rollout_horizon < 1) throw ConfigurationError("surrogate: rollout_horizon must be >= 1");
        if (!(sigma >= 0.0)) throw ConfigurationError("surrogate: sigma must be >= 0");
        if (!(learning_rate > 0.0) || weight_decay < 0.0) throw ConfigurationError("surrogate: bad optimizer settings");
        if (batch_size <= 0 || steps < 0 || log_every <= 0 || eval_every <= 0) {
            throw ConfigurationError("surrogate: batch_size, steps and intervals must be positive");
        }
    }

    NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(SurrogateConfig, arch, base_channels, depth, hidden, layers,
                                                rollout_horizon, sigma, learning_rate, weight_decay, batch_size,
                                                steps, seed, log_every, eval_every, inference_noise)
};

/// Residual predictor Ψ_θ(x) ≈ x_{t+1} − x_t on [B, C, H, W] frames.
class SurrogateNet : public torch::nn::Module {
public:
    SurrogateNet(const SurrogateConfig& cfg, FrameShape shape) : arch_(cfg.arch), shape_(shape) {
        const auto d = shape.numel();
        if (arch_ == "unet") {
            unet = register_module("unet", UNet(shape.channels, shape.channels, cfg.base_channels, cfg.depth));
        } else if (arch_ == "linear") {
            linear = register_module("linear", torch::nn::Linear(d, d));
        } else {
            std::int64_t width = d;
            for (int l = 0; l < cfg.layers; ++l) {
                mlp->push_back(torch::nn::Linear(width, cfg.hidden));
                width = cfg.hidden;
            }
            register_module("mlp", mlp);
            linear = register_module("linear", torch::nn::Linear(width, d));
        }
    }

    torch::Tensor forward(const torch::Tensor& x) {
        if (x.dim() != 4 || x.size(1) != shape_.channels || x.size(2) != shape_.height || x.size(3) != shape_.width) {
            throw ArgumentError("surrogate: input must be [B, C, H, W] matching the frame shape");
        }
        if (arch_ == "unet") return unet->forward(x);
        auto h = x.reshape({x.size(0), -1});
        for (const auto& m : *mlp) h = torch::gelu(m->as<torch::nn::LinearImpl>()->forward(h));
        return linear(h).reshape(x.sizes());
    }

    const FrameShape& frame_shape() const noexcept { return shape_; }
    const std::string& arch() const noexcept { return arch_; }

    UNet unet{nullptr};
    torch::nn::Linear linear{nullptr};
    torch::nn::ModuleList mlp;

private:
    std::string arch_;
    FrameShape shape_;
};

using Surrogate = std::shared_ptr<SurrogateNet>;

inline Surrogate build_surrogate(const SurrogateConfig& cfg, const FrameShape& shape) {
    cfg.validate();
    if (cfg.arch == "unet") {
        const std::int64_t f = std::int64_t{1} << cfg.depth;
        if (shape.height % f != 0 || shape.width % f != 0) {
            throw ConfigurationError("build_surrogate: frame not divisible by 2^depth");
        }
    }
    torch::manual_seed(cfg.seed);
    return std::make_shared<SurrogateNet>(cfg, shape);
}

/// x + Ψ_θ(x), optionally plus σz drawn from `gen`. Non-finite input or output raises DivergenceError(step).
inline torch::Tensor surrogate_step(SurrogateNet& model, const torch::Tensor& x, std::int64_t step = 0,
                                    double sigma = 0.0, std::optional<at::Generator> gen = std::nullopt) {
    if (!all_finite(x)) throw DivergenceError("surrogate_step: non-finite input state", step);
    torch::NoGradGuard guard;
    auto next = x + model.forward(x.to(torch::kFloat32)).to(x.dtype());
    if (sigma > 0.0) next = next + sigma * torch::randn(next.sizes(), gen, next.options());
    if (!all_finite(next)) throw DivergenceError("surrogate_step: non-finite prediction", step);
    return next;
}

/// Multi-step residual objective, unrolled L steps from the window start:
/// (1/L) Σ_t mean‖Ψ(x̂_t) − (x_{t+1} − x̂_t) + σz‖², x̂_0 = x_0, x̂_{t+1} = x̂_t + Ψ(x̂_t).
inline torch::Tensor surrogate_loss(SurrogateNet& model, const torch::Tensor& window, double sigma) {
    const auto L = window.size(1) - 1;
    auto xh = window.select(1, 0);
    torch::Tensor loss = torch::zeros({}, window.options());
    for (std::int64_t t = 0; t < L; ++t) {
        const auto pred = model.forward(xh);
        auto target = window.select(1, t + 1) - xh;
        auto r = pred - target;
        if (sigma > 0.0) r = r + sigma * torch::randn_like(r);
        loss = loss + r.square().mean();
        xh = xh + pred;
    }
    return loss / static_cast<double>(L);
}

/// [B, L+1, C, H, W] windows starting at the given frame indices.
inline torch::Tensor gather_windows(const SequenceDataset& data, const torch::Tensor& t0, std::int64_t length) {
    std::vector<torch::Tensor> steps;
    for (std::int64_t k = 0; k < length; ++k) steps.push_back(data.frames.index_select(0, t0 + k));
    return torch::stack(steps, 1);
}

struct SurrogateTrainState {
    SurrogateConfig config;
    Surrogate model;
    std::unique_ptr<torch::optim::AdamW> optimizer;
    std::int64_t step = 0;
    std::vector<TrainLogRow> log;
};

inline SurrogateTrainState init_surrogate_training(const SurrogateConfig& cfg, const FrameShape& shape) {
    SurrogateTrainState st;
    st.config = cfg;
    st.model = build_surrogate(cfg, shape);
    st.optimizer = make_adamw(*st.model, cfg.learning_rate, cfg.weight_decay);
    return st;
}

/// Fixed-seed held-out multi-step loss (σ = 0).
inline double evaluate_surrogate(SurrogateNet& model, const SequenceDataset& data, int horizon,
                                 std::int64_t batches, std::int64_t batch_size, std::uint64_t seed) {
    const auto starts_v = data.window_starts(horizon + 1);
    if (starts_v.empty()) throw ArgumentError("evaluate_surrogate: held-out set has no windows");
    const auto starts = torch::tensor(starts_v, torch::kInt64);
    torch::NoGradGuard guard;
    GeneratorStateGuard restore;
    double acc = 0.0;
    for (std::int64_t k = 0; k < batches; ++k) {
        torch::manual_seed(step_seed(seed, k));
        const auto pick = torch::randint(starts.size(0), {batch_size}, torch::kInt64);
        acc += surrogate_loss(model, gather_windows(data, starts.index_select(0, pick), horizon + 1), 0.0)
                   .item<double>();
    }
    return acc / static_cast<double>(batches);
}

inline void train_gaussian_surrogate(SurrogateTrainState& st, const SequenceDataset& data,
                                     const TrainOptions& opts = {}) {
    const auto& cfg = st.config;
    if (!(st.model->frame_shape() == data.shape)) throw ConfigurationError("train_surrogate: frame shape mismatch");
    const auto starts_v = data.window_starts(cfg.rollout_horizon + 1);
    if (static_cast<std::int64_t>(starts_v.size()) < cfg.batch_size) {
        throw ArgumentError("train_surrogate: dataset has fewer windows than one batch");
    }
    const auto starts = torch::tensor(starts_v, torch::kInt64);
    const std::int64_t end = opts.stop_at ? std::min(*opts.stop_at, cfg.steps) : cfg.steps;
    double acc = 0.0;
    std::int64_t acc_n = 0;
    st.model->train();
    for (; st.step < end; ++st.step) {
        torch::manual_seed(step_seed(cfg.seed, st.step));
        const auto pick = torch::randint(starts.size(0), {cfg.batch_size}, torch::kInt64);
        const auto loss =
            surrogate_loss(*st.model, gather_windows(data, starts.index_select(0, pick), cfg.rollout_horizon + 1),
                           cfg.sigma);
        const double value = loss.item<double>();
        if (!std::isfinite(value)) throw DivergenceError("train_surrogate: non-finite loss", st.step);
        st.optimizer->zero_grad();
        loss.backward();
        st.optimizer->step();
        acc += value;
        ++acc_n;
        const bool last = st.step + 1 == cfg.steps;
        if ((st.step + 1) % cfg.log_every == 0 || last) {
            TrainLogRow row{st.step + 1, acc / acc_n, acc / acc_n, 0.0, 0.0};
            if (opts.heldout && ((st.step + 1) % cfg.eval_every == 0 || last)) {
                st.model->eval();
                row.heldout = evaluate_surrogate(*st.model, *opts.heldout, cfg.rollout_horizon,
                                                 opts.heldout_batches, cfg.batch_size, cfg.seed ^ 0x5EEDULL);
                st.model->train();
            }
            st.log.push_back(row);
            if (opts.on_log) opts.on_log(row);
            acc = 0.0;
            acc_n = 0;
        }
    }
    st.model->eval();
}

}  // namespace mnl::nn
