#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "dpr/archive.hpp"
#include "dpr/nets.hpp"
#include "dpr/pair_select.hpp"
#include "dpr/rgbd_data.hpp"
#include "dpr/toyenv.hpp"
#include "dpr/view_aug.hpp"

namespace dpr {

// ---------------------------------------------------------------------------
// Schedules

/// `low` for epoch < ceil((1 - frac) * total), `high` afterwards. For 0 < frac < 1 the
/// cut is kept inside [1, total - 1] so both resolutions occur.
int resolution_for_epoch(int epoch, int total, int low, int high, double frac);

/// Linear warmup from 0 over the first floor(warmup_frac * total_steps) steps, then
/// cosine decay that reaches final_lr at step total_steps - 1.
double lr_for_step(std::int64_t step, std::int64_t total_steps, double base_lr, double final_lr, double warmup_frac);

// ---------------------------------------------------------------------------
// Optimizer

enum class OptimizerKind { AdamW, Lars };
const char* to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& s);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::AdamW;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lars_momentum = 0.9;
    double lars_eta = 0.001;
};

/// AdamW (libtorch) or LARS over a fixed parameter list, with state that can be
/// stored in an Archive for exact resumption.
class Optimizer {
public:
    Optimizer(std::vector<torch::Tensor> params, OptimizerConfig cfg);

    void set_lr(double lr);
    double lr() const { return lr_; }
    void zero_grad();
    void step();

    void save(Archive& archive, const std::string& prefix) const;
    void load(const Archive& archive, const std::string& prefix);

private:
    OptimizerConfig cfg_;
    std::vector<torch::Tensor> params_;
    double lr_ = 0;
    std::unique_ptr<torch::optim::AdamW> adamw_;
    std::vector<torch::Tensor> lars_buf_;
};

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainConfig {
    int epochs = 50;
    int batch_size = 32;
    int low_res = 112;
    int high_res = 224;
    double high_frac = 0.1;
    double base_lr = 3e-4;
    double final_lr = 1e-5;
    double warmup_frac = 0.05;
    double tau = 0.06;
    double alpha = 1.0;
    double momentum = 0.99;
    std::uint64_t seed = 0;
    int workers = 0;  // 0: samples are prepared on the training thread
    bool photometric = true;
    OptimizerConfig optimizer;
    PairSelectConfig pairs;
    AugmentConfig augment;
    PretrainNetConfig net;
};

void validate(const PretrainConfig& cfg);

struct EpochRecord {
    int epoch = 0;
    double l_pix = 0;
    double l_ins = 0;
    double loss = 0;
    int resolution = 0;
    double lr = 0;           // learning rate of the epoch's last step
    double wall_time = 0;    // seconds
    int batches = 0;
    int empty_pixel_batches = 0;  // batches where no cell had a positive partner
};

struct TrainLog {
    static constexpr int kSchemaVersion = 1;
    std::vector<EpochRecord> epochs;

    std::string to_jsonl() const;
    static TrainLog from_jsonl(const std::string& text);
};

nlohmann::json to_json(const EpochRecord& r);
EpochRecord epoch_record_from_json(const nlohmann::json& j);

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PretrainConfig& c);

/// One prepared training batch.
struct PretrainBatch {
    torch::Tensor view1, view2;    // [B, 3, r, r]
    std::vector<PairMask> masks;   // one batched mask per threshold pair
    std::vector<std::size_t> indices;
};

/// Builds the views and pair masks for the given sample indices. Sample i draws its
/// augmentation from make_rng(seed, {epoch, i}).
PretrainBatch prepare_batch(const SampleSource& source, const std::vector<std::size_t>& indices, int epoch,
                            int resolution, const PretrainConfig& cfg);

/// Epoch order: a permutation drawn from make_rng(seed, {epoch, 0x5ff1e}).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

struct StepLosses {
    torch::Tensor l_pix, l_ins, loss;
    bool pixel_empty = false;
};

/// Forward pass of the pretraining objective: online branch on both views, momentum
/// branch (no grad) providing pixel targets and instance targets q, q'.
StepLosses pretrain_losses(PretrainNet& net, const PretrainBatch& batch, const PretrainConfig& cfg);

struct PretrainOptions {
    /// Written after every epoch when non-empty.
    std::filesystem::path checkpoint;
    std::filesystem::path log_path;
    /// Continue from this checkpoint.
    const Archive* resume = nullptr;
    /// Stop after this many completed epochs (total, including resumed ones); -1 = all.
    int stop_after = -1;
    std::function<void(const EpochRecord&)> on_epoch;
};

struct PretrainResult {
    PretrainNet net{nullptr};
    TrainLog log;
    int epochs_done = 0;
    std::int64_t step = 0;
    Archive checkpoint;
};

PretrainResult pretrain(const PretrainConfig& cfg, const SampleSource& source, const PretrainOptions& opts = {});

/// Checkpoint layout: meta {kind: "pretrain", config, epochs_done, step, log}, tensors
/// under "net/" and optimizer state under "optim/".
Archive pretrain_checkpoint(const PretrainNet& net, const Optimizer& opt, const PretrainConfig& cfg,
                            const TrainLog& log, int epochs_done, std::int64_t step);

/// Encoder-only archive: meta {kind: "encoder", encoder}, tensors under "encoder/".
Archive export_encoder(const Archive& pretrain_checkpoint);
Archive encoder_archive(const Encoder& encoder);
/// Reads the encoder config from an encoder or pretrain archive and loads its weights.
Encoder load_encoder(const Archive& archive);
EncoderConfig archived_encoder_config(const Archive& archive);

// ---------------------------------------------------------------------------
// Behavior cloning

enum class EncoderMode { Frozen, Finetune };
const char* to_string(EncoderMode mode);
EncoderMode encoder_mode_from_string(const std::string& s);

struct BcConfig {
    int epochs = 60;
    int batch_size = 64;
    double lr = 1e-3;
    double final_lr = 1e-5;
    double warmup_frac = 0.0;
    double weight_decay = 1e-4;
    int eval_every = 10;
    int eval_episodes = 50;
    std::uint64_t eval_seed = 1000000;
    std::uint64_t seed = 0;
    EncoderMode mode = EncoderMode::Frozen;  // only used with a pretrained encoder
    bool use_proprio = true;
    int attention_dim = 64;
    int attention_heads = 1;
    EncoderConfig encoder;  // architecture for the scratch baseline
};

void validate(const BcConfig& cfg);
nlohmann::json to_json(const BcConfig& c);

struct BcEpochRecord {
    int epoch = 0;
    double loss = 0;
    double lr = 0;
    double wall_time = 0;
};

struct BcEvalRecord {
    int epoch = 0;  // completed training epochs at evaluation time
    double success_rate = 0;
};

struct BcResult {
    PolicyNet policy{nullptr};  // best-success parameters
    double best_success = 0;
    int best_epoch = 0;
    std::vector<BcEpochRecord> log;
    std::vector<BcEvalRecord> evals;
    double action_scale = 0.05;
    EnvConfig env;
};

/// Stacked demo steps: rgb as uint8 [N, H, W, 3], proprio per schema slot, goal [N, 2],
/// actions normalized to [-1, 1] x [-1, 1] x [0, 1].
struct BcData {
    torch::Tensor rgb;
    ProprioBatch proprio;
    torch::Tensor goal;
    torch::Tensor action;
    std::int64_t size() const { return goal.size(0); }
};

BcData bc_data(const DemoSet& demos, const ProprioSchema& schema, double action_scale);

/// [N, H, W, 3] uint8 -> [N, 3, H, W] float in [0,1].
torch::Tensor rgb_batch(const torch::Tensor& rgb_u8);
torch::Tensor rgb_batch(const std::vector<Observation>& obs);

struct BcOptions {
    std::function<void(const BcEpochRecord&)> on_epoch;
    std::function<void(const BcEvalRecord&)> on_eval;
};

/// `encoder`: pretrained encoder archive, or nullptr for the train-from-scratch baseline.
BcResult bc_train(const BcConfig& cfg, const DemoSet& demos, const Archive* encoder, const BcOptions& opts = {});

/// Wraps a policy network for evaluate_policy().
class NetPolicy final : public Policy {
public:
    NetPolicy(PolicyNet net, double action_scale, EnvConfig env);
    std::vector<Action> act(const std::vector<Observation>& obs, const std::vector<EnvState>&) override;

private:
    PolicyNet net_;
    double action_scale_;
    EnvConfig env_;
};

/// meta {kind: "policy", net, env, action_scale, best_success, best_epoch, evals}, tensors under "policy/".
Archive policy_archive(const BcResult& result);
struct LoadedPolicy {
    PolicyNet net{nullptr};
    double action_scale = 0.05;
    EnvConfig env;
};
LoadedPolicy load_policy(const Archive& archive);

nlohmann::json to_json(const PolicyNetConfig& c);
PolicyNetConfig policy_config_from_json(const nlohmann::json& j);

/// Every parameter and buffer bit-identical.
bool same_parameters(const torch::nn::Module& a, const torch::nn::Module& b);

}  // namespace dpr
