#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include <json.hpp>

#include "dpr/archive.hpp"
#include "dpr/common.hpp"
#include "dpr/image.hpp"
#include "dpr/nets.hpp"

namespace dpr {

/// Planar push-to-goal task with a point gripper in the unit square. Not a physics
/// simulation: the block moves rigidly with the gripper while grasped.
struct EnvConfig;
nlohmann::json to_json(const EnvConfig& c);
EnvConfig env_config_from_json(const nlohmann::json& j);

struct EnvConfig {
    int resolution = 112;
    int max_steps = 200;
    double max_delta = 0.05;      // per-axis action bound
    double success_radius = 0.05;
    double grasp_radius = 0.04;   // gripper-block distance allowing a grasp
    double min_separation = 0.2;  // block-goal distance at reset
    double margin = 0.1;          // reset positions lie in [margin, 1 - margin]
    double block_half = 0.045;
    double gripper_radius = 0.025;
};

using Vec2 = std::array<double, 2>;

struct EnvState {
    Vec2 gripper{0.5, 0.5};
    Vec2 gripper_velocity{0, 0};
    double aperture = 1.0;  // 1 open, 0 closed
    Vec2 block{0.5, 0.5};
    Vec2 goal{0.5, 0.5};
    int steps = 0;

    friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct Action {
    double dx = 0;
    double dy = 0;
    double grip = 0;
};

struct Observation {
    Image rgb;  // resolution x resolution x 3
    ProprioState proprio;
    std::array<float, 2> goal{};
};

struct StepResult {
    EnvState state;
    Observation obs;
    bool success = false;
};

/// tcp_position (2), tcp_velocity (2), gripper_aperture (1), goal_position (2), tcp_to_goal (2).
ProprioSchema env_proprio_schema();

double distance(const Vec2& a, const Vec2& b);
bool is_success(const EnvState& s, const EnvConfig& cfg);
Action clip_action(const Action& a, const EnvConfig& cfg);

EnvState reset_state(std::uint64_t seed, const EnvConfig& cfg = {});
/// Pure transition function.
EnvState transition(const EnvState& s, const Action& a, const EnvConfig& cfg = {});
Image render(const EnvState& s, const EnvConfig& cfg = {});
ProprioState proprio_of(const EnvState& s);
Observation observe(const EnvState& s, const EnvConfig& cfg = {});

/// Stateful wrapper around the pure functions above.
class ToyEnv {
public:
    explicit ToyEnv(EnvConfig cfg = {}) : cfg_(cfg) {}

    Observation reset(std::uint64_t seed);
    StepResult step(const Action& a);

    const EnvState& state() const { return state_; }
    const EnvConfig& config() const { return cfg_; }

private:
    EnvConfig cfg_;
    EnvState state_;
};

/// Scripted proportional controller: approach the block, grasp, carry to the goal.
Action expert_action(const EnvState& s, const EnvConfig& cfg = {});

/// Batched policy interface; `states` are provided for privileged (scripted) policies
/// and must be ignored by learned ones.
class Policy {
public:
    virtual ~Policy() = default;
    virtual std::vector<Action> act(const std::vector<Observation>& obs, const std::vector<EnvState>& states) = 0;
};

class ExpertPolicy final : public Policy {
public:
    explicit ExpertPolicy(EnvConfig cfg = {}) : cfg_(cfg) {}
    std::vector<Action> act(const std::vector<Observation>&, const std::vector<EnvState>& states) override;

private:
    EnvConfig cfg_;
};

class RandomPolicy final : public Policy {
public:
    RandomPolicy(std::uint64_t seed, EnvConfig cfg = {}) : rng_(make_rng(seed)), cfg_(cfg) {}
    std::vector<Action> act(const std::vector<Observation>& obs, const std::vector<EnvState>&) override;

private:
    Rng rng_;
    EnvConfig cfg_;
};

struct EvalResult {
    double success_rate = 0;
    int episodes = 0;
    std::uint64_t seed = 0;
    std::vector<bool> successes;
};

/// Runs episodes with seeds seed .. seed + n - 1 in lockstep (one batched policy call
/// per step) and returns the fraction that reach the goal within max_steps.
EvalResult evaluate_policy(Policy& policy, int n_episodes, std::uint64_t seed, const EnvConfig& cfg = {});

// ---------------------------------------------------------------------------
// Demonstrations

struct DemoStep {
    Image rgb;  // stored as 8-bit; values are multiples of 1/255
    ProprioState proprio;
    std::array<float, 2> goal{};
    Action action;
};

struct Demo {
    std::uint64_t seed = 0;
    EnvState initial;
    std::vector<DemoStep> steps;
    bool success = false;
};

struct DemoSet {
    static constexpr int kFormatVersion = 1;
    EnvConfig env;
    ProprioSchema schema;
    std::vector<Demo> demos;

    std::size_t total_steps() const;
};

/// Runs the expert on seeds seed, seed+1, ... and keeps the first `n` successful
/// trajectories.
DemoSet collect_demos(int n, std::uint64_t seed, const EnvConfig& cfg = {});

/// Image quantized to 8 bits (what demo files store).
Image quantize8(const Image& img);

void save_demos(const std::filesystem::path& path, const DemoSet& demos);
DemoSet load_demos(const std::filesystem::path& path);

/// Replays the stored actions from `demo.initial`; returns the visited states.
std::vector<EnvState> replay(const Demo& demo, const EnvConfig& cfg);

}  // namespace dpr
