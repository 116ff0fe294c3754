#include "dpr/toyenv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace dpr {

using nlohmann::json;

ProprioSchema env_proprio_schema() {
    return {{"tcp_position", 2}, {"tcp_velocity", 2}, {"gripper_aperture", 1}, {"goal_position", 2}, {"tcp_to_goal", 2}};
}

double distance(const Vec2& a, const Vec2& b) {
    return std::hypot(a[0] - b[0], a[1] - b[1]);
}

bool is_success(const EnvState& s, const EnvConfig& cfg) {
    return distance(s.block, s.goal) <= cfg.success_radius;
}

Action clip_action(const Action& a, const EnvConfig& cfg) {
    return {std::clamp(a.dx, -cfg.max_delta, cfg.max_delta), std::clamp(a.dy, -cfg.max_delta, cfg.max_delta),
            std::clamp(a.grip, 0.0, 1.0)};
}

EnvState reset_state(std::uint64_t seed, const EnvConfig& cfg) {
    Rng rng = make_rng(seed, {0x7e57});
    auto point = [&] { return Vec2{uniform(rng, cfg.margin, 1 - cfg.margin), uniform(rng, cfg.margin, 1 - cfg.margin)}; };
    EnvState s;
    s.gripper = point();
    s.block = point();
    do {
        s.goal = point();
    } while (distance(s.block, s.goal) < cfg.min_separation);
    return s;
}

EnvState transition(const EnvState& s, const Action& raw, const EnvConfig& cfg) {
    const Action a = clip_action(raw, cfg);
    EnvState n = s;
    n.gripper = {std::clamp(s.gripper[0] + a.dx, 0.0, 1.0), std::clamp(s.gripper[1] + a.dy, 0.0, 1.0)};
    n.gripper_velocity = {n.gripper[0] - s.gripper[0], n.gripper[1] - s.gripper[1]};
    n.aperture = 1.0 - a.grip;
    const bool holding = a.grip > 0.5 && distance(s.gripper, s.block) <= cfg.grasp_radius;
    if (holding) {
        n.block = {std::clamp(s.block[0] + n.gripper_velocity[0], 0.0, 1.0),
                   std::clamp(s.block[1] + n.gripper_velocity[1], 0.0, 1.0)};
    }
    n.steps = s.steps + 1;
    return n;
}

namespace {

void paint(Image& img, int r, int c, const float color[3]) {
    for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = color[ch];
}

}  // namespace

Image render(const EnvState& s, const EnvConfig& cfg) {
    const int res = cfg.resolution;
    Image img(res, res, 3);
    static constexpr float kTable[3] = {0.58f, 0.50f, 0.42f};
    static constexpr float kGoal[3] = {0.20f, 0.80f, 0.30f};
    static constexpr float kBlock[3] = {0.90f, 0.15f, 0.12f};
    static constexpr float kGripperOpen[3] = {0.15f, 0.35f, 0.95f};
    static constexpr float kGripperClosed[3] = {0.10f, 0.85f, 0.95f};

    const double goal_r = cfg.success_radius;
    for (int r = 0; r < res; ++r) {
        const double y = (r + 0.5) / res;
        for (int c = 0; c < res; ++c) {
            const double x = (c + 0.5) / res;
            const float shade = static_cast<float>(0.92 + 0.08 * std::sin(40.0 * (x + 0.35 * y)));
            for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = kTable[ch] * shade;

            const double dg = std::hypot(x - s.goal[0], y - s.goal[1]);
            if (dg <= goal_r && dg >= goal_r - 1.5 / res) paint(img, r, c, kGoal);
            if (std::abs(x - s.block[0]) < cfg.block_half && std::abs(y - s.block[1]) < cfg.block_half) {
                paint(img, r, c, kBlock);
            }
            if (std::hypot(x - s.gripper[0], y - s.gripper[1]) < cfg.gripper_radius) {
                paint(img, r, c, s.aperture < 0.5 ? kGripperClosed : kGripperOpen);
            }
        }
    }
    return img;
}

ProprioState proprio_of(const EnvState& s) {
    auto f = [](double v) { return static_cast<float>(v); };
    ProprioState p;
    p.states = {{"tcp_position", {f(s.gripper[0]), f(s.gripper[1])}},
                {"tcp_velocity", {f(s.gripper_velocity[0]), f(s.gripper_velocity[1])}},
                {"gripper_aperture", {f(s.aperture)}},
                {"goal_position", {f(s.goal[0]), f(s.goal[1])}},
                {"tcp_to_goal", {f(s.goal[0] - s.gripper[0]), f(s.goal[1] - s.gripper[1])}}};
    return p;
}

Observation observe(const EnvState& s, const EnvConfig& cfg) {
    return {render(s, cfg), proprio_of(s), {static_cast<float>(s.goal[0]), static_cast<float>(s.goal[1])}};
}

Observation ToyEnv::reset(std::uint64_t seed) {
    state_ = reset_state(seed, cfg_);
    return observe(state_, cfg_);
}

StepResult ToyEnv::step(const Action& a) {
    state_ = transition(state_, a, cfg_);
    return {state_, observe(state_, cfg_), is_success(state_, cfg_)};
}

Action expert_action(const EnvState& s, const EnvConfig& cfg) {
    if (is_success(s, cfg)) return {};
    const Vec2 to_block{s.block[0] - s.gripper[0], s.block[1] - s.gripper[1]};
    if (std::hypot(to_block[0], to_block[1]) <= 0.5 * cfg.grasp_radius) {
        return clip_action({s.goal[0] - s.block[0], s.goal[1] - s.block[1], 1.0}, cfg);
    }
    return clip_action({to_block[0], to_block[1], 0.0}, cfg);
}

std::vector<Action> ExpertPolicy::act(const std::vector<Observation>&, const std::vector<EnvState>& states) {
    std::vector<Action> out;
    out.reserve(states.size());
    for (const auto& s : states) out.push_back(expert_action(s, cfg_));
    return out;
}

std::vector<Action> RandomPolicy::act(const std::vector<Observation>& obs, const std::vector<EnvState>&) {
    std::vector<Action> out;
    out.reserve(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
        out.push_back({uniform(rng_, -cfg_.max_delta, cfg_.max_delta), uniform(rng_, -cfg_.max_delta, cfg_.max_delta),
                       uniform01(rng_)});
    }
    return out;
}

EvalResult evaluate_policy(Policy& policy, int n_episodes, std::uint64_t seed, const EnvConfig& cfg) {
    if (n_episodes < 1) throw Error(ErrorKind::InvalidRange, "evaluation needs at least one episode");
    std::vector<EnvState> states;
    for (int e = 0; e < n_episodes; ++e) states.push_back(reset_state(seed + e, cfg));
    std::vector<bool> done(n_episodes, false), success(n_episodes, false);

    for (int t = 0; t < cfg.max_steps; ++t) {
        std::vector<int> active;
        std::vector<Observation> obs;
        std::vector<EnvState> act_states;
        for (int e = 0; e < n_episodes; ++e) {
            if (done[e]) continue;
            active.push_back(e);
            obs.push_back(observe(states[e], cfg));
            act_states.push_back(states[e]);
        }
        if (active.empty()) break;
        const auto actions = policy.act(obs, act_states);
        for (std::size_t i = 0; i < active.size(); ++i) {
            const int e = active[i];
            states[e] = transition(states[e], actions[i], cfg);
            if (is_success(states[e], cfg)) done[e] = success[e] = true;
        }
    }
    EvalResult r;
    r.episodes = n_episodes;
    r.seed = seed;
    r.successes = success;
    r.success_rate = static_cast<double>(std::count(success.begin(), success.end(), true)) / n_episodes;
    return r;
}

// ---------------------------------------------------------------------------

std::size_t DemoSet::total_steps() const {
    std::size_t n = 0;
    for (const auto& d : demos) n += d.steps.size();
    return n;
}

Image quantize8(const Image& img) {
    Image out = img;
    for (auto& v : out.data) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
    return out;
}

DemoSet collect_demos(int n, std::uint64_t seed, const EnvConfig& cfg) {
    DemoSet set;
    set.env = cfg;
    set.schema = env_proprio_schema();
    for (std::uint64_t s = seed; static_cast<int>(set.demos.size()) < n; ++s) {
        Demo demo;
        demo.seed = s;
        demo.initial = reset_state(s, cfg);
        EnvState state = demo.initial;
        for (int t = 0; t < cfg.max_steps && !demo.success; ++t) {
            const Action a = expert_action(state, cfg);
            Observation o = observe(state, cfg);
            demo.steps.push_back({quantize8(o.rgb), std::move(o.proprio), o.goal, a});
            state = transition(state, a, cfg);
            demo.success = is_success(state, cfg);
        }
        if (demo.success) set.demos.push_back(std::move(demo));
        if (s - seed > static_cast<std::uint64_t>(n) * 10 + 100) {
            throw Error(ErrorKind::InvalidRange, "expert failed too often while collecting demos");
        }
    }
    return set;
}

json to_json(const EnvConfig& c) {
    return {{"resolution", c.resolution},         {"max_steps", c.max_steps},
            {"max_delta", c.max_delta},           {"success_radius", c.success_radius},
            {"grasp_radius", c.grasp_radius},     {"min_separation", c.min_separation},
            {"margin", c.margin},                 {"block_half", c.block_half},
            {"gripper_radius", c.gripper_radius}};
}

EnvConfig env_config_from_json(const json& j) {
    EnvConfig c;
    c.resolution = j.at("resolution");
    c.max_steps = j.at("max_steps");
    c.max_delta = j.at("max_delta");
    c.success_radius = j.at("success_radius");
    c.grasp_radius = j.at("grasp_radius");
    c.min_separation = j.at("min_separation");
    c.margin = j.at("margin");
    c.block_half = j.at("block_half");
    c.gripper_radius = j.at("gripper_radius");
    return c;
}

namespace {

json state_to_json(const EnvState& s) {
    return {{"gripper", s.gripper}, {"gripper_velocity", s.gripper_velocity}, {"aperture", s.aperture},
            {"block", s.block},     {"goal", s.goal},                         {"steps", s.steps}};
}

EnvState state_from_json(const json& j) {
    EnvState s;
    s.gripper = j.at("gripper");
    s.gripper_velocity = j.at("gripper_velocity");
    s.aperture = j.at("aperture");
    s.block = j.at("block");
    s.goal = j.at("goal");
    s.steps = j.at("steps");
    return s;
}

}  // namespace

void save_demos(const std::filesystem::path& path, const DemoSet& set) {
    Archive a;
    a.meta["kind"] = "demos";
    a.meta["format_version"] = DemoSet::kFormatVersion;
    a.meta["env"] = to_json(set.env);
    a.meta["schema"] = json::array();
    for (const auto& slot : set.schema) a.meta["schema"].push_back({{"name", slot.name}, {"dim", slot.dim}});
    a.meta["demos"] = json::array();
    for (std::size_t d = 0; d < set.demos.size(); ++d) {
        const Demo& demo = set.demos[d];
        json steps = json::array();
        const int res = set.env.resolution;
        std::vector<std::uint8_t> pixels;
        pixels.reserve(demo.steps.size() * res * res * 3);
        for (const auto& st : demo.steps) {
            json proprio = json::array();
            for (const auto& [name, v] : st.proprio.states) proprio.push_back(v);
            steps.push_back({{"proprio", proprio},
                             {"goal", st.goal},
                             {"action", {st.action.dx, st.action.dy, st.action.grip}}});
            for (float v : st.rgb.data) {
                pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
            }
        }
        char name[32];
        std::snprintf(name, sizeof name, "demo_%05zu/obs", d);
        a.meta["demos"].push_back({{"seed", demo.seed},
                                   {"success", demo.success},
                                   {"initial", state_to_json(demo.initial)},
                                   {"observations", name},
                                   {"steps", steps}});
        a.put_bytes(name, {static_cast<std::int64_t>(demo.steps.size()), res, res, 3}, std::move(pixels));
    }
    write_archive(path, a);
}

DemoSet load_demos(const std::filesystem::path& path) {
    const Archive a = read_archive(path);
    if (a.meta.value("kind", "") != "demos") throw Error(ErrorKind::Schema, "'" + path.string() + "' is not a demo file");
    if (a.meta.value("format_version", 0) != DemoSet::kFormatVersion) {
        throw Error(ErrorKind::Schema, "unsupported demo format version");
    }
    DemoSet set;
    set.env = env_config_from_json(a.meta.at("env"));
    for (const auto& s : a.meta.at("schema")) set.schema.push_back({s.at("name"), s.at("dim")});
    const int res = set.env.resolution;
    for (const auto& jd : a.meta.at("demos")) {
        Demo demo;
        demo.seed = jd.at("seed");
        demo.success = jd.at("success");
        demo.initial = state_from_json(jd.at("initial"));
        const Blob& obs = a.at(jd.at("observations").get<std::string>());
        const std::size_t frame = static_cast<std::size_t>(res) * res * 3;
        std::size_t t = 0;
        for (const auto& js : jd.at("steps")) {
            DemoStep st;
            st.rgb = Image(res, res, 3);
            for (std::size_t i = 0; i < frame; ++i) st.rgb.data[i] = obs.bytes[t * frame + i] / 255.0f;
            const auto& proprio = js.at("proprio");
            if (proprio.size() != set.schema.size()) throw Error(ErrorKind::Schema, "demo step proprio arity mismatch");
            for (std::size_t i = 0; i < set.schema.size(); ++i) {
                st.proprio.states.emplace_back(set.schema[i].name, proprio[i].get<std::vector<float>>());
            }
            st.goal = js.at("goal");
            const auto act = js.at("action").get<std::vector<double>>();
            st.action = {act.at(0), act.at(1), act.at(2)};
            demo.steps.push_back(std::move(st));
            ++t;
        }
        set.demos.push_back(std::move(demo));
    }
    return set;
}

std::vector<EnvState> replay(const Demo& demo, const EnvConfig& cfg) {
    std::vector<EnvState> states{demo.initial};
    for (const auto& st : demo.steps) states.push_back(transition(states.back(), st.action, cfg));
    return states;
}

}  // namespace dpr
