#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "mnl/error.hpp"
#include "mnl/nn/tensor.hpp"

// Multi-noise-level network Φ_θ: y = (x_t^{s1}, x_{t-1}^{s2}) stacked along channels
// → ε-pair plus two S-way noise-level logit vectors (class k ↔ level k + 1).

namespace mnl::nn {

struct DenoiserConfig {
    std::string arch = "unet";  // "unet" (level-blind) or "mlp"
    int base_channels = 32;
    int depth = 3;
    int hidden = 128;           // mlp width
    int layers = 4;             // mlp hidden layers
    bool level_conditioned = false;  // mlp only: levels are an explicit input
    double lambda = 0.1;
    std::string lambda_mode = "fixed";  // "fixed" or "auto"
    int S = 250;
    double learning_rate = 5e-4;
    double weight_decay = 1e-2;
    int batch_size = 16;
    std::int64_t steps = 1000;
    std::uint64_t seed = 0;
    std::int64_t log_every = 50;
    std::int64_t eval_every = 500;
    bool invariant_augmentation = false;

    void validate() const {
        if (arch != "unet" && arch != "mlp") throw ConfigurationError("denoiser: arch must be 'unet' or 'mlp'");
        if (base_channels <= 0 || depth <= 0 || hidden <= 0 || layers <= 0) {
            throw ConfigurationError("denoiser: channel and layer counts must be positive");
        }
        if (level_conditioned && arch != "mlp") throw ConfigurationError("denoiser: only the mlp takes levels");
        if (!(lambda >= 0.0)) throw ConfigurationError("denoiser: lambda must be >= 0");
        if (lambda_mode != "fixed" && lambda_mode != "auto") {
            throw ConfigurationError("denoiser: lambda_mode must be 'fixed' or 'auto'");
        }
        if (S < 2) throw ConfigurationError("denoiser: S must be >= 2");
        if (!(learning_rate > 0.0) || weight_decay < 0.0) throw ConfigurationError("denoiser: bad optimizer settings");
        if (batch_size <= 0 || steps < 0 || log_every <= 0 || eval_every <= 0) {
            throw ConfigurationError("denoiser: batch_size, steps and intervals must be positive");
        }
        if (invariant_augmentation) {
            throw ConfigurationError("denoiser: invariant_augmentation is not implemented (leave it false)");
        }
    }

    NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(DenoiserConfig, arch, base_channels, depth, hidden, layers,
                                                level_conditioned, lambda, lambda_mode, S, learning_rate,
                                                weight_decay, batch_size, steps, seed, log_every, eval_every,
                                                invariant_augmentation)
};

/// Φ^{(3)} split per slot, and the Φ^{(1)}, Φ^{(2)} logits [B, S].
struct DenoiserOutput {
    torch::Tensor eps_current;
    torch::Tensor eps_cond;
    torch::Tensor logits_s1;
    torch::Tensor logits_s2;
};

class DenoiserBase : public torch::nn::Module {
public:
    DenoiserBase(FrameShape shape, int S) : shape_(shape), S_(S) {}

    /// y: [B, 2C, H, W]; levels: [B, 2] int64 (required iff level_conditioned()).
    virtual DenoiserOutput forward(const torch::Tensor& y, const torch::Tensor& levels = {}) = 0;
    virtual bool level_conditioned() const noexcept { return false; }

    const FrameShape& frame_shape() const noexcept { return shape_; }
    int levels() const noexcept { return S_; }

protected:
    void check_input(const torch::Tensor& y) const {
        if (y.dim() != 4 || y.size(1) != 2 * shape_.channels || y.size(2) != shape_.height ||
            y.size(3) != shape_.width) {
            throw ArgumentError("denoiser: input must be [B, 2C, H, W] matching the frame shape");
        }
    }

    FrameShape shape_;
    int S_;
};

using Denoiser = std::shared_ptr<DenoiserBase>;

inline std::int64_t parameter_count(const torch::nn::Module& m) {
    std::int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.numel();
    return n;
}

namespace detail {

inline torch::nn::Conv2dOptions circular_conv(std::int64_t in, std::int64_t out, std::int64_t k,
                                              std::int64_t stride = 1) {
    return torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2).padding_mode(torch::kCircular);
}

inline std::int64_t groups_for(std::int64_t channels) {
    for (std::int64_t g : {8, 4, 2}) {
        if (channels % g == 0) return g;
    }
    return 1;
}

}  // namespace detail

/// GroupNorm → GELU → 3×3 conv, twice, plus a 1×1 projection when the width changes.
class ResBlockImpl : public torch::nn::Module {
public:
    ResBlockImpl(std::int64_t in, std::int64_t out)
        : norm1(register_module("norm1", torch::nn::GroupNorm(detail::groups_for(in), in))),
          conv1(register_module("conv1", torch::nn::Conv2d(detail::circular_conv(in, out, 3)))),
          norm2(register_module("norm2", torch::nn::GroupNorm(detail::groups_for(out), out))),
          conv2(register_module("conv2", torch::nn::Conv2d(detail::circular_conv(out, out, 3)))) {
        if (in != out) skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)));
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto h = conv1(torch::gelu(norm1(x)));
        h = conv2(torch::gelu(norm2(h)));
        return h + (skip ? skip(x) : x);
    }

    torch::nn::GroupNorm norm1;
    torch::nn::Conv2d conv1;
    torch::nn::GroupNorm norm2;
    torch::nn::Conv2d conv2;
    torch::nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResBlock);

/// Residual U-Net body: circular 3×3 stem, `depth` stride-2 stages doubling the width,
/// two bottleneck blocks, transposed-conv (4×4, stride 2) decoder with skip concatenation.
class UNetImpl : public torch::nn::Module {
public:
    UNetImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t base, int depth)
        : stem(register_module("stem", torch::nn::Conv2d(detail::circular_conv(in_channels, base, 3)))) {
        std::int64_t ch = base;
        for (int i = 0; i < depth; ++i) {
            enc->push_back(ResBlock(ch, ch));
            down->push_back(torch::nn::Conv2d(detail::circular_conv(ch, 2 * ch, 3, 2)));
            ch *= 2;
        }
        feature_channels = 2 * ch - base;  // pooled encoder levels base..ch/2 plus the bottleneck
        mid->push_back(ResBlock(ch, ch));
        mid->push_back(ResBlock(ch, ch));
        for (int i = 0; i < depth; ++i) {
            up->push_back(torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(ch, ch / 2, 4).stride(2).padding(1)));
            dec->push_back(ResBlock(ch, ch / 2));
            ch /= 2;
        }
        register_module("enc", enc);
        register_module("down", down);
        register_module("mid", mid);
        register_module("up", up);
        register_module("dec", dec);
        out_norm = register_module("out_norm", torch::nn::GroupNorm(detail::groups_for(base), base));
        head = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(base, out_channels, 1)));
    }

    /// Returns (output, [B, feature_channels] global averages of every encoder level and the bottleneck).
    std::pair<torch::Tensor, torch::Tensor> forward_with_features(const torch::Tensor& x) {
        auto h = stem(x);
        std::vector<torch::Tensor> skips, pooled;
        for (std::size_t i = 0; i < enc->size(); ++i) {
            h = enc[i]->as<ResBlockImpl>()->forward(h);
            skips.push_back(h);
            pooled.push_back(torch::gelu(h).mean({2, 3}));
            h = down[i]->as<torch::nn::Conv2dImpl>()->forward(h);
        }
        for (const auto& m : *mid) h = m->as<ResBlockImpl>()->forward(h);
        pooled.push_back(torch::gelu(h).mean({2, 3}));
        const auto features = torch::cat(pooled, 1);
        for (std::size_t i = 0; i < up->size(); ++i) {
            h = up[i]->as<torch::nn::ConvTranspose2dImpl>()->forward(h);
            h = torch::cat({h, skips[skips.size() - 1 - i]}, 1);
            h = dec[i]->as<ResBlockImpl>()->forward(h);
        }
        return {head(torch::gelu(out_norm(h))), features};
    }

    torch::Tensor forward(const torch::Tensor& x) { return forward_with_features(x).first; }

    std::int64_t feature_channels = 0;
    torch::nn::Conv2d stem;
    torch::nn::ModuleList enc, down, mid, up, dec;
    torch::nn::GroupNorm out_norm{nullptr};
    torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(UNet);

/// Level-blind convolutional denoiser; level heads are linear on multi-scale global-average-pooled features.
class UNetDenoiser : public DenoiserBase {
public:
    UNetDenoiser(const DenoiserConfig& cfg, FrameShape shape)
        : DenoiserBase(shape, cfg.S),
          body(register_module("body", UNet(2 * shape.channels, 2 * shape.channels, cfg.base_channels, cfg.depth))),
          head_s1(register_module("head_s1", torch::nn::Linear(body->feature_channels, cfg.S))),
          head_s2(register_module("head_s2", torch::nn::Linear(body->feature_channels, cfg.S))) {}

    DenoiserOutput forward(const torch::Tensor& y, const torch::Tensor& = {}) override {
        check_input(y);
        auto [eps, pooled] = body->forward_with_features(y);
        const auto c = shape_.channels;
        return {eps.narrow(1, 0, c), eps.narrow(1, c, c), head_s1(pooled), head_s2(pooled)};
    }

    UNet body;
    torch::nn::Linear head_s1;
    torch::nn::Linear head_s2;
};

inline constexpr int kLevelFrequencies = 8;

/// [B, 2] levels → [B, 2(1 + 2F)] features: s/S and sin/cos(π f s/S), f = 1..F.
inline torch::Tensor level_features(const torch::Tensor& levels, int S) {
    const auto u = levels.to(torch::kFloat32) / static_cast<float>(S);
    std::vector<torch::Tensor> parts{u};
    for (int f = 1; f <= kLevelFrequencies; ++f) {
        const auto a = u * static_cast<float>(std::numbers::pi * f);
        parts.push_back(torch::sin(a));
        parts.push_back(torch::cos(a));
    }
    return torch::cat(parts, 1);
}

/// Dense network on flattened frames, optionally with the levels as an explicit input.
class MlpDenoiser : public DenoiserBase {
public:
    MlpDenoiser(const DenoiserConfig& cfg, FrameShape shape)
        : DenoiserBase(shape, cfg.S), conditioned_(cfg.level_conditioned) {
        const std::int64_t in = 2 * shape.numel() + (conditioned_ ? 2 * (1 + 2 * kLevelFrequencies) : 0);
        std::int64_t width = in;
        for (int l = 0; l < cfg.layers; ++l) {
            trunk->push_back(torch::nn::Linear(width, cfg.hidden));
            width = cfg.hidden;
        }
        register_module("trunk", trunk);
        eps_out = register_module("eps_out", torch::nn::Linear(width, 2 * shape.numel()));
        head_s1 = register_module("head_s1", torch::nn::Linear(width, cfg.S));
        head_s2 = register_module("head_s2", torch::nn::Linear(width, cfg.S));
    }

    bool level_conditioned() const noexcept override { return conditioned_; }

    DenoiserOutput forward(const torch::Tensor& y, const torch::Tensor& levels = {}) override {
        check_input(y);
        const auto b = y.size(0);
        auto h = y.reshape({b, -1});
        if (conditioned_) {
            if (!levels.defined() || levels.dim() != 2 || levels.size(0) != b || levels.size(1) != 2) {
                throw ArgumentError("denoiser: level-conditioned network needs levels [B, 2]");
            }
            h = torch::cat({h, level_features(levels, S_).to(h.dtype())}, 1);
        }
        for (const auto& m : *trunk) h = torch::gelu(m->as<torch::nn::LinearImpl>()->forward(h));
        const auto eps = eps_out(h).reshape({b, 2 * shape_.channels, shape_.height, shape_.width});
        const auto c = shape_.channels;
        return {eps.narrow(1, 0, c), eps.narrow(1, c, c), head_s1(h), head_s2(h)};
    }

    torch::nn::ModuleList trunk;
    torch::nn::Linear eps_out{nullptr};
    torch::nn::Linear head_s1{nullptr};
    torch::nn::Linear head_s2{nullptr};

private:
    bool conditioned_;
};

/// Builds Φ_θ with parameters initialized from cfg.seed.
inline Denoiser build_denoiser(const DenoiserConfig& cfg, const FrameShape& shape) {
    cfg.validate();
    if (shape.channels <= 0 || shape.height <= 0 || shape.width <= 0) {
        throw ConfigurationError("build_denoiser: frame shape must be positive");
    }
    torch::manual_seed(cfg.seed);
    if (cfg.arch == "unet") {
        const std::int64_t f = std::int64_t{1} << cfg.depth;
        if (shape.height % f != 0 || shape.width % f != 0) {
            throw ConfigurationError("build_denoiser: frame " + std::to_string(shape.height) + "x" +
                                     std::to_string(shape.width) + " not divisible by 2^depth = " +
                                     std::to_string(f));
        }
        return std::make_shared<UNetDenoiser>(cfg, shape);
    }
    return std::make_shared<MlpDenoiser>(cfg, shape);
}

/// Stacks current and condition frames into the network input.
inline torch::Tensor stack_pair(const torch::Tensor& current, const torch::Tensor& cond) {
    return torch::cat({current, cond}, 1);
}

/// (ŝ1, ŝ2) = argmax of each head, ties broken toward the larger level. Returns [B, 2] int64 in 1..S.
inline torch::Tensor decode_levels(const DenoiserOutput& out) {
    auto pick = [](const torch::Tensor& logits) {
        const auto s = logits.size(1);
        const auto flipped = torch::argmax(logits.flip({1}), 1);  // first maximum of the reversed vector
        return (s - flipped).to(torch::kInt64);
    };
    return torch::stack({pick(out.logits_s1), pick(out.logits_s2)}, 1);
}

inline torch::Tensor estimate_noise_levels(DenoiserBase& model, const torch::Tensor& current,
                                           const torch::Tensor& cond) {
    if (model.level_conditioned()) {
        throw ArgumentError("estimate_noise_levels: level-conditioned networks cannot infer levels");
    }
    torch::NoGradGuard guard;
    return decode_levels(model.forward(stack_pair(current, cond)));
}

}  // namespace mnl::nn
