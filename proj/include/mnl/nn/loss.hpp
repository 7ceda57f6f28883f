#pragma once

#include <torch/torch.h>

#include "mnl/error.hpp"
#include "mnl/nn/denoiser.hpp"

namespace mnl::nn {

struct SnsLossTerms {
    torch::Tensor total;
    torch::Tensor eps;  // Σ over both slots of ‖ε − ε̂‖² / d, batch mean
    torch::Tensor ce;   // CE(logits_s1, s1) + CE(logits_s2, s2), batch mean
};

/// ε-pair squared error plus lambda·(CE₁ + CE₂). s1, s2: [B] int64 levels in 1..S.
inline SnsLossTerms sns_loss_terms(const DenoiserOutput& out, const torch::Tensor& eps_current,
                                   const torch::Tensor& eps_cond, const torch::Tensor& s1, const torch::Tensor& s2,
                                   double lambda) {
    if (!eps_current.sizes().equals(out.eps_current.sizes()) || !eps_cond.sizes().equals(out.eps_cond.sizes())) {
        throw ArgumentError("sns_loss: epsilon targets do not match the output shape");
    }
    const auto S = out.logits_s1.size(1);
    if ((s1 < 1).any().item<bool>() || (s1 > S).any().item<bool>() || (s2 < 1).any().item<bool>() ||
        (s2 > S).any().item<bool>()) {
        throw ArgumentError("sns_loss: levels must lie in 1..S");
    }
    const auto b = eps_current.size(0);
    const double d = static_cast<double>(eps_current.numel() / b);
    const auto r1 = (out.eps_current - eps_current).reshape({b, -1});
    const auto r2 = (out.eps_cond - eps_cond).reshape({b, -1});
    SnsLossTerms t;
    t.eps = ((r1.square().sum(1) + r2.square().sum(1)) / d).mean();
    t.ce = torch::nn::functional::cross_entropy(out.logits_s1, s1 - 1) +
           torch::nn::functional::cross_entropy(out.logits_s2, s2 - 1);
    t.total = t.eps + lambda * t.ce;
    return t;
}

inline torch::Tensor sns_loss(const DenoiserOutput& out, const torch::Tensor& eps_current,
                              const torch::Tensor& eps_cond, const torch::Tensor& s1, const torch::Tensor& s2,
                              double lambda) {
    return sns_loss_terms(out, eps_current, eps_cond, s1, s2, lambda).total;
}

}  // namespace mnl::nn
