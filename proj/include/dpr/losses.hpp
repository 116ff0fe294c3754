#pragma once

#include <vector>

#include <torch/torch.h>

#include "dpr/pair_select.hpp"

namespace dpr {

inline constexpr double kDefaultTemperature = 0.06;
inline constexpr double kDefaultAlpha = 1.0;

struct PixelLossResult {
    torch::Tensor loss;            // scalar
    std::int64_t contributing = 0;  // rows with a valid, non-empty positive set
    bool empty() const { return contributing == 0; }
};

/// InfoNCE-style pixel contrast of `x` ([N, D] or [B, N, D]) against `x_other`
/// ([N', D] or [B, N', D]) under `mask`, averaged over contributing rows (across the
/// batch). Rows whose positive set is empty are skipped; with none left the loss is 0.
PixelLossResult pixel_loss_one_side(const torch::Tensor& x, const torch::Tensor& x_other, const PairMask& mask,
                                    double tau = kDefaultTemperature);

/// Mean over threshold pairs of (side(x -> x') + side(x' -> x, mask^T)) / 2.
torch::Tensor pixel_loss(const torch::Tensor& x, const torch::Tensor& x_other, const std::vector<PairMask>& masks,
                         double tau = kDefaultTemperature);

/// Same reduction with separate query/target features per side, as used when targets
/// come from the momentum branch: side 1 = online1 vs target2, side 2 = online2 vs target1.
torch::Tensor pixel_loss_cross(const torch::Tensor& online1, const torch::Tensor& target2,
                               const torch::Tensor& online2, const torch::Tensor& target1,
                               const std::vector<PairMask>& masks, double tau = kDefaultTemperature);

/// Projector outputs q, q' (momentum branch) and predictor outputs k, k' (online
/// branch) for views 1 and 2, [D] or [B, D]; not required to be normalized.
struct InstanceFeatures {
    torch::Tensor q, q_prime;
    torch::Tensor k, k_prime;
};

/// -(<k, q'> + <k', q>) / 2 on unit-normalized vectors, batch mean. q and q' are
/// detached. Throws if any vector has zero norm.
torch::Tensor instance_loss(const InstanceFeatures& f);

/// l_pix + alpha * l_ins.
torch::Tensor total_loss(const torch::Tensor& l_pix, const torch::Tensor& l_ins, double alpha = kDefaultAlpha);

/// Squared L2 residual, summed over action dims and averaged over the batch.
torch::Tensor bc_loss(const torch::Tensor& predicted, const torch::Tensor& expert);

}  // namespace dpr
