#include "dpr/losses.hpp"

#include "dpr/common.hpp"

namespace dpr {

namespace F = torch::nn::functional;

PixelLossResult pixel_loss_one_side(const torch::Tensor& x, const torch::Tensor& x_other, const PairMask& mask,
                                    double tau) {
    if (!(tau > 0)) throw Error(ErrorKind::InvalidRange, "temperature must be > 0");
    const bool batched = x.dim() == 3;
    const auto q = batched ? x : x.unsqueeze(0);
    const auto k = batched ? x_other : x_other.unsqueeze(0);
    auto a = mask.a;
    auto valid = mask.valid;
    if (a.dim() == 2) {
        a = a.unsqueeze(0);
        valid = valid.unsqueeze(0);
    }
    if (q.dim() != 3 || k.dim() != 3 || q.size(0) != k.size(0) || q.size(2) != k.size(2) ||
        a.size(0) != q.size(0) || a.size(1) != q.size(1) || a.size(2) != k.size(1)) {
        throw Error(ErrorKind::ShapeMismatch, "pixel loss: features and mask shapes disagree");
    }

    const auto qn = F::normalize(q, F::NormalizeFuncOptions().dim(-1));
    const auto kn = F::normalize(k, F::NormalizeFuncOptions().dim(-1));
    const auto logits = torch::matmul(qn, kn.transpose(1, 2)) / tau;  // [B, N, N']

    const auto pos = a.logical_and(valid);
    const auto contributing = pos.any(-1);  // [B, N]
    const std::int64_t count = contributing.sum().item<std::int64_t>();
    PixelLossResult out;
    out.contributing = count;
    if (count == 0) {
        out.loss = (logits.sum() * 0.0);  // keeps the graph connected
        return out;
    }

    // Max-subtraction over the valid entries of each row.
    const auto row_max =
        logits.detach().masked_fill(valid.logical_not(), -std::numeric_limits<double>::infinity()).amax(-1, true);
    const auto shift = torch::where(torch::isfinite(row_max), row_max, torch::zeros_like(row_max));
    const auto e = torch::exp(logits - shift);
    const auto num = (e * pos.to(e.scalar_type())).sum(-1);
    const auto den = (e * valid.to(e.scalar_type())).sum(-1);
    const auto one = torch::ones_like(num);
    const auto row_loss = torch::log(torch::where(contributing, den, one)) - torch::log(torch::where(contributing, num, one));
    out.loss = (row_loss * contributing.to(row_loss.scalar_type())).sum() / static_cast<double>(count);
    return out;
}

torch::Tensor pixel_loss_cross(const torch::Tensor& online1, const torch::Tensor& target2,
                               const torch::Tensor& online2, const torch::Tensor& target1,
                               const std::vector<PairMask>& masks, double tau) {
    if (masks.empty()) throw Error(ErrorKind::ShapeMismatch, "pixel loss needs at least one mask");
    torch::Tensor total;
    for (const auto& m : masks) {
        auto side1 = pixel_loss_one_side(online1, target2, m, tau).loss;
        auto side2 = pixel_loss_one_side(online2, target1, m.transposed(), tau).loss;
        auto term = (side1 + side2) / 2.0;
        total = total.defined() ? total + term : term;
    }
    return total / static_cast<double>(masks.size());
}

torch::Tensor pixel_loss(const torch::Tensor& x, const torch::Tensor& x_other, const std::vector<PairMask>& masks,
                         double tau) {
    return pixel_loss_cross(x, x_other, x_other, x, masks, tau);
}

namespace {

torch::Tensor unit(const torch::Tensor& v, const char* name) {
    const auto norms = v.norm(2, -1, true);
    if ((norms == 0).any().item<bool>()) {
        throw Error(ErrorKind::InvalidRange, std::string("instance loss: zero-norm vector in ") + name);
    }
    return v / norms;
}

}  // namespace

torch::Tensor instance_loss(const InstanceFeatures& f) {
    const auto q = unit(f.q.detach(), "q");
    const auto qp = unit(f.q_prime.detach(), "q'");
    const auto k = unit(f.k, "k");
    const auto kp = unit(f.k_prime, "k'");
    const auto sim = ((k * qp).sum(-1) + (kp * q).sum(-1)) / 2.0;
    return -sim.mean();
}

torch::Tensor total_loss(const torch::Tensor& l_pix, const torch::Tensor& l_ins, double alpha) {
    return l_pix + alpha * l_ins;
}

torch::Tensor bc_loss(const torch::Tensor& predicted, const torch::Tensor& expert) {
    if (predicted.sizes() != expert.sizes()) {
        throw Error(ErrorKind::ShapeMismatch, "bc loss: predicted and expert actions differ in shape");
    }
    const auto diff = predicted - expert;
    if (diff.dim() <= 1) return (diff * diff).sum();
    return (diff * diff).sum(-1).mean();
}

}  // namespace dpr
