#pragma once

#include <torch/torch.h>

#include "dpr/losses.hpp"
#include "dpr/nets.hpp"

namespace dpr::testing {

/// Proprioception encoder -> cross-attention -> pooled policy head -> bc loss at small
/// widths in double precision, for finite-difference checks.
struct SmallPolicy {
    ProprioSchema schema{{"a", 2}, {"b", 3}, {"c", 1}};
    ProprioEncoder proprio{nullptr};
    CrossAttention attention{nullptr};
    PolicyHead head{nullptr};
    int channels = 6;

    explicit SmallPolicy(int heads = 1) {
        proprio = ProprioEncoder(schema, 7, 8);
        attention = CrossAttention(channels, 8, 4, heads);
        head = PolicyHead(channels + 4 + 2, 3, 9, 5);
        proprio->to(torch::kFloat64);
        attention->to(torch::kFloat64);
        head->to(torch::kFloat64);
    }

    std::vector<torch::Tensor> parameters() const {
        std::vector<torch::Tensor> out;
        for (const torch::nn::Module* m :
             std::initializer_list<const torch::nn::Module*>{proprio.get(), attention.get(), head.get()}) {
            auto p = m->parameters();
            out.insert(out.end(), p.begin(), p.end());
        }
        return out;
    }

    ProprioBatch batch(const std::vector<torch::Tensor>& states) const {
        ProprioBatch b;
        for (std::size_t i = 0; i < schema.size(); ++i) b.emplace_back(schema[i].name, states[i]);
        return b;
    }

    /// z: [B, T, channels]; states: one [B, dim] per slot; goal [B, 2]; target [B, 3].
    torch::Tensor loss(const torch::Tensor& z, const std::vector<torch::Tensor>& states, const torch::Tensor& goal,
                       const torch::Tensor& target) {
        const auto fused = attention(z, proprio(batch(states))).mean(1);
        const auto action = head(torch::cat({z.mean(1), fused, goal}, -1));
        return bc_loss(action, target);
    }

    /// Random double-precision inputs for `batch` samples with `tokens` visual tokens.
    std::vector<torch::Tensor> random_inputs(std::int64_t batch_size, std::int64_t tokens) const {
        std::vector<torch::Tensor> in{torch::randn({batch_size, tokens, channels}, torch::kFloat64)};
        for (const auto& s : schema) in.push_back(torch::randn({batch_size, s.dim}, torch::kFloat64));
        in.push_back(torch::randn({batch_size, 2}, torch::kFloat64));
        in.push_back(torch::randn({batch_size, 3}, torch::kFloat64));
        return in;
    }

    /// Loss as a function of the flat input list produced by random_inputs().
    torch::Tensor loss_of(const std::vector<torch::Tensor>& in) {
        const std::vector<torch::Tensor> states(in.begin() + 1, in.begin() + 1 + static_cast<long>(schema.size()));
        return loss(in[0], states, in[in.size() - 2], in.back());
    }
};

}  // namespace dpr::testing
