#pragma once

#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace dpr {

// ---------------------------------------------------------------------------
// Visual encoder

enum class EncoderVariant { Tiny, ResNet18 };

struct EncoderConfig {
    EncoderVariant variant = EncoderVariant::Tiny;
    /// Tiny: output widths of the four stride-2 stages. ResNet18 uses 64/128/256/512.
    std::vector<int> widths{16, 32, 64, 128};
    /// Tiny: 3x3 refinement convs appended to each stage.
    std::vector<int> extra_convs{0, 0, 1, 1};
    int groups = 8;  // GroupNorm groups

    int stride() const { return variant == EncoderVariant::Tiny ? 16 : 32; }
    int channels() const { return variant == EncoderVariant::Tiny ? widths.back() : 512; }

    static EncoderConfig tiny() { return {}; }
    static EncoderConfig resnet18() {
        EncoderConfig c;
        c.variant = EncoderVariant::ResNet18;
        c.widths = {64, 128, 256, 512};
        c.extra_convs = {0, 0, 0, 0};
        return c;
    }
};

struct EncoderOutput {
    torch::Tensor grid;    // [B, C, h, w]
    torch::Tensor pooled;  // [B, C], spatial average of grid
};

class EncoderImpl : public torch::nn::Module {
public:
    explicit EncoderImpl(EncoderConfig cfg = {});

    /// rgb: [B, 3, H, W] in [0,1]; H and W must be divisible by the stride.
    EncoderOutput forward(const torch::Tensor& rgb);

    const EncoderConfig& config() const { return cfg_; }

private:
    EncoderConfig cfg_;
    torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Encoder);

// ---------------------------------------------------------------------------
// Pretraining heads

/// 1x1-conv MLP applied per feature cell: [B, C, h, w] -> [B, out, h, w].
class PixelProjectorImpl : public torch::nn::Module {
public:
    PixelProjectorImpl(int in_channels, int hidden, int out);
    torch::Tensor forward(const torch::Tensor& grid);

private:
    torch::nn::Conv2d fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(PixelProjector);

/// Linear -> LayerNorm -> ReLU -> Linear.
class MlpHeadImpl : public torch::nn::Module {
public:
    MlpHeadImpl(int in, int hidden, int out);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
    torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(MlpHead);

struct PretrainNetConfig {
    EncoderConfig encoder;
    int pixel_hidden = 256;
    int pixel_dim = 64;
    int instance_hidden = 256;
    int instance_dim = 64;
};

/// Online encoder + heads and their momentum (EMA) copies. The momentum modules
/// have requires_grad = false and only change through momentum_update().
class PretrainNetImpl : public torch::nn::Module {
public:
    explicit PretrainNetImpl(PretrainNetConfig cfg = {});

    const PretrainNetConfig& config() const { return cfg_; }

    Encoder encoder{nullptr};
    PixelProjector pixel_projector{nullptr};
    MlpHead instance_projector{nullptr};
    MlpHead predictor{nullptr};

    Encoder momentum_encoder{nullptr};
    PixelProjector momentum_pixel_projector{nullptr};
    MlpHead momentum_instance_projector{nullptr};

    std::vector<torch::Tensor> online_parameters() const;
    std::vector<torch::Tensor> momentum_parameters() const;
    /// Online parameters paired with their momentum counterparts (predictor excluded).
    std::vector<std::pair<torch::Tensor, torch::Tensor>> momentum_pairs() const;

    /// θ_k <- m θ_k + (1 - m) θ_q over all momentum pairs.
    void momentum_update(double m);

private:
    PretrainNetConfig cfg_;
};
TORCH_MODULE(PretrainNet);

/// θ_k <- m θ_k + (1 - m) θ_q elementwise, in place, without autograd.
void momentum_update(const std::vector<torch::Tensor>& online, const std::vector<torch::Tensor>& momentum, double m);

// ---------------------------------------------------------------------------
// Policy with proprioception injection

struct StateSlot {
    std::string name;
    int dim = 0;
    friend bool operator==(const StateSlot&, const StateSlot&) = default;
};
using ProprioSchema = std::vector<StateSlot>;

/// Named robot-state vectors in schema order.
struct ProprioState {
    std::vector<std::pair<std::string, std::vector<float>>> states;
};

/// Batched proprioception: one [B, dim_i] tensor per named state.
using ProprioBatch = std::vector<std::pair<std::string, torch::Tensor>>;

ProprioBatch proprio_batch(const std::vector<ProprioState>& states, const ProprioSchema& schema);
void validate_proprio(const ProprioState& state, const ProprioSchema& schema);

/// The 8-state PickCube-style schema: joint position (7), gripper position (2),
/// joint velocity (7), gripper velocity (2), TCP position (3), TCP rotation (4),
/// goal position (3), TCP-to-goal (3).
ProprioSchema reference_arm_schema();

/// One [dim, hidden, out] head per state, stacked into [B, n, out] and layer-normalized
/// over the per-token feature axis.
class ProprioEncoderImpl : public torch::nn::Module {
public:
    ProprioEncoderImpl(ProprioSchema schema, int hidden = 256, int out = 8);

    torch::Tensor forward(const ProprioBatch& batch);

    const ProprioSchema& schema() const { return schema_; }
    torch::nn::ModuleList heads{nullptr};
    torch::nn::LayerNorm norm{nullptr};

private:
    ProprioSchema schema_;
    int out_;
};
TORCH_MODULE(ProprioEncoder);

/// Softmax(Q_z K_O^T / sqrt(d_head)) V_O with visual tokens as queries and
/// proprioception tokens as keys/values. Heads split d evenly.
class CrossAttentionImpl : public torch::nn::Module {
public:
    CrossAttentionImpl(int query_dim, int token_dim, int d, int heads = 1);

    /// z_tokens: [B, T, query_dim], tokens: [B, n, token_dim] -> [B, T, d].
    torch::Tensor forward(const torch::Tensor& z_tokens, const torch::Tensor& tokens);
    /// Attention weights [B, heads, T, n] of the last forward call.
    torch::Tensor last_weights() const { return last_weights_; }

    torch::nn::Linear q_proj{nullptr}, k_proj{nullptr}, v_proj{nullptr};

private:
    int d_;
    int heads_;
    torch::Tensor last_weights_;
};
TORCH_MODULE(CrossAttention);

/// Three-layer MLP [in, 256, 128, action] with ReLU.
class PolicyHeadImpl : public torch::nn::Module {
public:
    PolicyHeadImpl(int in, int action_dim, int hidden1 = 256, int hidden2 = 128);
    torch::Tensor forward(const torch::Tensor& x);

    int input_dim() const { return in_; }
    torch::nn::Linear fc1{nullptr}, fc2{nullptr}, fc3{nullptr};

private:
    int in_;
};
TORCH_MODULE(PolicyHead);

struct PolicyNetConfig {
    EncoderConfig encoder;
    ProprioSchema schema;
    int goal_dim = 2;
    int action_dim = 3;
    int attention_dim = 64;
    int attention_heads = 1;
    int proprio_hidden = 256;
    int proprio_out = 8;
    bool use_proprio = true;
};

/// π(AvgPool(z), AvgPool(Attn(z, O)), goal).
class PolicyNetImpl : public torch::nn::Module {
public:
    explicit PolicyNetImpl(PolicyNetConfig cfg);

    torch::Tensor forward(const torch::Tensor& rgb, const ProprioBatch& proprio, const torch::Tensor& goal);
    /// Same, starting from precomputed encoder features.
    torch::Tensor forward_features(const EncoderOutput& features, const ProprioBatch& proprio,
                                   const torch::Tensor& goal);
    /// Concatenates pooled z, pooled fused tokens (if enabled) and goal, then runs the head.
    torch::Tensor policy_forward(const torch::Tensor& z_pooled, const torch::Tensor& fused_pooled,
                                 const torch::Tensor& goal);

    const PolicyNetConfig& config() const { return cfg_; }

    Encoder encoder{nullptr};
    ProprioEncoder proprio{nullptr};
    CrossAttention attention{nullptr};
    PolicyHead head{nullptr};

private:
    PolicyNetConfig cfg_;
};
TORCH_MODULE(PolicyNet);

/// Flattens an encoder grid [B, C, h, w] into tokens [B, h*w, C].
torch::Tensor grid_tokens(const torch::Tensor& grid);

}  // namespace dpr
