#include "dpr/nets.hpp"

#include <cmath>

#include "dpr/common.hpp"

namespace dpr {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv3x3(int in, int out, int stride) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false));
}

nn::GroupNorm group_norm(int groups, int channels) {
    return nn::GroupNorm(nn::GroupNormOptions(std::min(groups, channels), channels));
}

class BasicBlockImpl : public nn::Module {
public:
    BasicBlockImpl(int in, int out, int stride, int groups)
        : conv1_(register_module("conv1", conv3x3(in, out, stride))),
          norm1_(register_module("norm1", group_norm(groups, out))),
          conv2_(register_module("conv2", conv3x3(out, out, 1))),
          norm2_(register_module("norm2", group_norm(groups, out))) {
        if (stride != 1 || in != out) {
            shortcut_ = register_module(
                "shortcut", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)),
                                           group_norm(groups, out)));
        }
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto y = torch::relu(norm1_(conv1_(x)));
        y = norm2_(conv2_(y));
        return torch::relu(y + (shortcut_ ? shortcut_->forward(x) : x));
    }

private:
    nn::Conv2d conv1_;
    nn::GroupNorm norm1_;
    nn::Conv2d conv2_;
    nn::GroupNorm norm2_;
    nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(BasicBlock);

}  // namespace

EncoderImpl::EncoderImpl(EncoderConfig cfg) : cfg_(std::move(cfg)) {
    nn::Sequential body;
    if (cfg_.variant == EncoderVariant::Tiny) {
        if (cfg_.widths.size() != 4 || cfg_.extra_convs.size() != 4) {
            throw Error(ErrorKind::Config, "tiny encoder needs 4 stage widths and 4 extra-conv counts");
        }
        int in = 3;
        for (std::size_t s = 0; s < 4; ++s) {
            const int out = cfg_.widths[s];
            body->push_back(conv3x3(in, out, 2));
            body->push_back(group_norm(cfg_.groups, out));
            body->push_back(nn::Functional(torch::relu));
            for (int k = 0; k < cfg_.extra_convs[s]; ++k) {
                body->push_back(conv3x3(out, out, 1));
                body->push_back(group_norm(cfg_.groups, out));
                body->push_back(nn::Functional(torch::relu));
            }
            in = out;
        }
    } else {
        body->push_back(nn::Conv2d(nn::Conv2dOptions(3, 64, 7).stride(2).padding(3).bias(false)));
        body->push_back(group_norm(32, 64));
        body->push_back(nn::Functional(torch::relu));
        body->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1)));
        const int widths[] = {64, 128, 256, 512};
        int in = 64;
        for (int s = 0; s < 4; ++s) {
            body->push_back(BasicBlock(in, widths[s], s == 0 ? 1 : 2, 32));
            body->push_back(BasicBlock(widths[s], widths[s], 1, 32));
            in = widths[s];
        }
    }
    body_ = register_module("body", body);
}

EncoderOutput EncoderImpl::forward(const torch::Tensor& rgb) {
    const int stride = cfg_.stride();
    if (rgb.dim() != 4 || rgb.size(1) != 3) {
        throw Error(ErrorKind::ShapeMismatch, "encoder expects [B, 3, H, W] input");
    }
    if (rgb.size(2) % stride != 0 || rgb.size(3) % stride != 0) {
        throw Error(ErrorKind::ShapeMismatch, "encoder input " + std::to_string(rgb.size(2)) + "x" +
                                                  std::to_string(rgb.size(3)) + " must be divisible by stride " +
                                                  std::to_string(stride));
    }
    EncoderOutput out;
    out.grid = body_->forward(rgb);
    out.pooled = out.grid.mean({2, 3});
    return out;
}

PixelProjectorImpl::PixelProjectorImpl(int in_channels, int hidden, int out)
    : fc1_(register_module("fc1", nn::Conv2d(nn::Conv2dOptions(in_channels, hidden, 1)))),
      fc2_(register_module("fc2", nn::Conv2d(nn::Conv2dOptions(hidden, out, 1)))) {}

torch::Tensor PixelProjectorImpl::forward(const torch::Tensor& grid) {
    return fc2_(torch::relu(fc1_(grid)));
}

MlpHeadImpl::MlpHeadImpl(int in, int hidden, int out)
    : fc1_(register_module("fc1", nn::Linear(in, hidden))),
      fc2_(register_module("fc2", nn::Linear(hidden, out))),
      norm_(register_module("norm", nn::LayerNorm(nn::LayerNormOptions({hidden})))) {}

torch::Tensor MlpHeadImpl::forward(const torch::Tensor& x) {
    return fc2_(torch::relu(norm_(fc1_(x))));
}

// ---------------------------------------------------------------------------

PretrainNetImpl::PretrainNetImpl(PretrainNetConfig cfg) : cfg_(std::move(cfg)) {
    const int c = cfg_.encoder.channels();
    encoder = register_module("encoder", Encoder(cfg_.encoder));
    pixel_projector = register_module("pixel_projector", PixelProjector(c, cfg_.pixel_hidden, cfg_.pixel_dim));
    instance_projector =
        register_module("instance_projector", MlpHead(c, cfg_.instance_hidden, cfg_.instance_dim));
    predictor = register_module("predictor", MlpHead(cfg_.instance_dim, cfg_.instance_hidden, cfg_.instance_dim));

    momentum_encoder = register_module("momentum_encoder", Encoder(cfg_.encoder));
    momentum_pixel_projector =
        register_module("momentum_pixel_projector", PixelProjector(c, cfg_.pixel_hidden, cfg_.pixel_dim));
    momentum_instance_projector =
        register_module("momentum_instance_projector", MlpHead(c, cfg_.instance_hidden, cfg_.instance_dim));

    for (auto& p : momentum_parameters()) p.set_requires_grad(false);
    momentum_update(0.0);  // start as an exact copy
}

std::vector<torch::Tensor> PretrainNetImpl::online_parameters() const {
    std::vector<torch::Tensor> out;
    for (const auto* m : std::initializer_list<const nn::Module*>{encoder.get(), pixel_projector.get(),
                                                                   instance_projector.get(), predictor.get()}) {
        auto p = m->parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::vector<torch::Tensor> PretrainNetImpl::momentum_parameters() const {
    std::vector<torch::Tensor> out;
    for (const auto* m : std::initializer_list<const nn::Module*>{
             momentum_encoder.get(), momentum_pixel_projector.get(), momentum_instance_projector.get()}) {
        auto p = m->parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::vector<std::pair<torch::Tensor, torch::Tensor>> PretrainNetImpl::momentum_pairs() const {
    std::vector<std::pair<torch::Tensor, torch::Tensor>> out;
    auto add = [&](const nn::Module& online, const nn::Module& target) {
        auto a = online.parameters();
        auto b = target.parameters();
        for (std::size_t i = 0; i < a.size(); ++i) out.emplace_back(a[i], b[i]);
    };
    add(*encoder, *momentum_encoder);
    add(*pixel_projector, *momentum_pixel_projector);
    add(*instance_projector, *momentum_instance_projector);
    return out;
}

void PretrainNetImpl::momentum_update(double m) {
    std::vector<torch::Tensor> online, target;
    for (auto& [q, k] : momentum_pairs()) {
        online.push_back(q);
        target.push_back(k);
    }
    dpr::momentum_update(online, target, m);
}

void momentum_update(const std::vector<torch::Tensor>& online, const std::vector<torch::Tensor>& momentum, double m) {
    if (m < 0.0 || m > 1.0) throw Error(ErrorKind::InvalidRange, "momentum coefficient must lie in [0,1]");
    if (online.size() != momentum.size()) {
        throw Error(ErrorKind::ShapeMismatch, "momentum update: parameter counts differ");
    }
    for (std::size_t i = 0; i < online.size(); ++i) {
        if (online[i].sizes() != momentum[i].sizes()) {
            throw Error(ErrorKind::ShapeMismatch, "momentum update: parameter " + std::to_string(i) +
                                                      " shapes differ");
        }
    }
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < online.size(); ++i) {
        auto k = momentum[i];
        if (m == 0.0) {
            k.copy_(online[i]);
        } else if (m != 1.0) {
            k.mul_(m).add_(online[i], 1.0 - m);
        }
    }
}

// ---------------------------------------------------------------------------

void validate_proprio(const ProprioState& state, const ProprioSchema& schema) {
    if (state.states.size() != schema.size()) {
        throw Error(ErrorKind::Schema, "proprioception has " + std::to_string(state.states.size()) +
                                           " states, schema expects " + std::to_string(schema.size()));
    }
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const auto& [name, values] = state.states[i];
        if (name != schema[i].name) {
            throw Error(ErrorKind::Schema, "unexpected state '" + name + "' at slot " + std::to_string(i) +
                                               " (schema expects '" + schema[i].name + "')");
        }
        if (static_cast<int>(values.size()) != schema[i].dim) {
            throw Error(ErrorKind::Schema, "state '" + name + "' has width " + std::to_string(values.size()) +
                                               ", schema expects " + std::to_string(schema[i].dim));
        }
    }
}

ProprioBatch proprio_batch(const std::vector<ProprioState>& states, const ProprioSchema& schema) {
    ProprioBatch batch;
    const auto n = static_cast<std::int64_t>(states.size());
    for (const auto& slot : schema) batch.emplace_back(slot.name, torch::empty({n, slot.dim}));
    for (std::int64_t b = 0; b < n; ++b) {
        validate_proprio(states[b], schema);
        for (std::size_t i = 0; i < schema.size(); ++i) {
            const auto& v = states[b].states[i].second;
            std::copy(v.begin(), v.end(), batch[i].second[b].data_ptr<float>());
        }
    }
    return batch;
}

ProprioSchema reference_arm_schema() {
    return {{"joint_position", 7}, {"gripper_position", 2}, {"joint_velocity", 7}, {"gripper_velocity", 2},
            {"tcp_position", 3},   {"tcp_rotation", 4},     {"goal_position", 3},  {"tcp_to_goal", 3}};
}

ProprioEncoderImpl::ProprioEncoderImpl(ProprioSchema schema, int hidden, int out)
    : schema_(std::move(schema)), out_(out) {
    if (schema_.empty()) throw Error(ErrorKind::Schema, "proprioception schema is empty");
    heads = register_module("heads", nn::ModuleList());
    for (const auto& slot : schema_) {
        heads->push_back(nn::Sequential(nn::Linear(slot.dim, hidden), nn::Functional(torch::relu),
                                        nn::Linear(hidden, out)));
    }
    norm = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({out})));
}

torch::Tensor ProprioEncoderImpl::forward(const ProprioBatch& batch) {
    if (batch.size() != schema_.size()) {
        throw Error(ErrorKind::Schema, "proprioception batch has " + std::to_string(batch.size()) +
                                           " states, schema expects " + std::to_string(schema_.size()));
    }
    std::vector<torch::Tensor> tokens;
    tokens.reserve(schema_.size());
    for (std::size_t i = 0; i < schema_.size(); ++i) {
        const auto& [name, value] = batch[i];
        if (name != schema_[i].name) {
            throw Error(ErrorKind::Schema, "unexpected state '" + name + "' (schema expects '" + schema_[i].name + "')");
        }
        if (value.dim() != 2 || value.size(1) != schema_[i].dim) {
            throw Error(ErrorKind::Schema, "state '" + name + "' must be [B, " + std::to_string(schema_[i].dim) + "]");
        }
        tokens.push_back(heads[i]->as<nn::Sequential>()->forward(value));
    }
    return norm(torch::stack(tokens, 1));  // [B, n, out]
}

CrossAttentionImpl::CrossAttentionImpl(int query_dim, int token_dim, int d, int heads)
    : q_proj(register_module("q_proj", nn::Linear(query_dim, d))),
      k_proj(register_module("k_proj", nn::Linear(token_dim, d))),
      v_proj(register_module("v_proj", nn::Linear(token_dim, d))),
      d_(d),
      heads_(heads) {
    if (d <= 0 || heads <= 0 || d % heads != 0) {
        throw Error(ErrorKind::Config, "attention dim must be positive and divisible by the head count");
    }
}

torch::Tensor CrossAttentionImpl::forward(const torch::Tensor& z_tokens, const torch::Tensor& tokens) {
    if (tokens.dim() != 3 || tokens.size(1) == 0) {
        throw Error(ErrorKind::ShapeMismatch, "cross attention needs at least one proprioception token");
    }
    const auto B = z_tokens.size(0);
    const auto T = z_tokens.size(1);
    const auto n = tokens.size(1);
    const int dh = d_ / heads_;
    auto q = q_proj(z_tokens).view({B, T, heads_, dh}).transpose(1, 2);  // [B, h, T, dh]
    auto k = k_proj(tokens).view({B, n, heads_, dh}).transpose(1, 2);    // [B, h, n, dh]
    auto v = v_proj(tokens).view({B, n, heads_, dh}).transpose(1, 2);
    auto logits = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh));
    last_weights_ = torch::softmax(logits, -1);
    return torch::matmul(last_weights_, v).transpose(1, 2).reshape({B, T, d_});
}

PolicyHeadImpl::PolicyHeadImpl(int in, int action_dim, int hidden1, int hidden2)
    : fc1(register_module("fc1", nn::Linear(in, hidden1))),
      fc2(register_module("fc2", nn::Linear(hidden1, hidden2))),
      fc3(register_module("fc3", nn::Linear(hidden2, action_dim))),
      in_(in) {}

torch::Tensor PolicyHeadImpl::forward(const torch::Tensor& x) {
    if (x.size(-1) != in_) {
        throw Error(ErrorKind::ShapeMismatch, "policy input width " + std::to_string(x.size(-1)) + " != " +
                                                  std::to_string(in_));
    }
    return fc3(torch::relu(fc2(torch::relu(fc1(x)))));
}

torch::Tensor grid_tokens(const torch::Tensor& grid) {
    return grid.flatten(2).transpose(1, 2);
}

PolicyNetImpl::PolicyNetImpl(PolicyNetConfig cfg) : cfg_(std::move(cfg)) {
    const int c = cfg_.encoder.channels();
    encoder = register_module("encoder", Encoder(cfg_.encoder));
    int in = c + cfg_.goal_dim;
    if (cfg_.use_proprio) {
        proprio = register_module("proprio", ProprioEncoder(cfg_.schema, cfg_.proprio_hidden, cfg_.proprio_out));
        attention = register_module(
            "attention", CrossAttention(c, cfg_.proprio_out, cfg_.attention_dim, cfg_.attention_heads));
        in += cfg_.attention_dim;
    }
    head = register_module("head", PolicyHead(in, cfg_.action_dim));
}

torch::Tensor PolicyNetImpl::policy_forward(const torch::Tensor& z_pooled, const torch::Tensor& fused_pooled,
                                            const torch::Tensor& goal) {
    std::vector<torch::Tensor> parts{z_pooled};
    if (fused_pooled.defined()) parts.push_back(fused_pooled);
    parts.push_back(goal);
    return head(torch::cat(parts, -1));
}

torch::Tensor PolicyNetImpl::forward_features(const EncoderOutput& features, const ProprioBatch& proprio_in,
                                              const torch::Tensor& goal) {
    torch::Tensor fused;
    if (cfg_.use_proprio) {
        fused = attention(grid_tokens(features.grid), proprio(proprio_in)).mean(1);
    }
    return policy_forward(features.pooled, fused, goal);
}

torch::Tensor PolicyNetImpl::forward(const torch::Tensor& rgb, const ProprioBatch& proprio_in,
                                     const torch::Tensor& goal) {
    return forward_features(encoder(rgb), proprio_in, goal);
}

}  // namespace dpr
