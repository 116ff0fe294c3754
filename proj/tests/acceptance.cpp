// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any FAIL.
//
// Long-running: two 10-epoch pretraining runs and twelve behavior cloning runs.
// Artifacts (pretraining log, policy evaluations) are kept under
// $DPR_ACCEPTANCE_DIR when it is set.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dpr/archive.hpp"
#include "dpr/config.hpp"
#include "dpr/io.hpp"
#include "dpr/losses.hpp"
#include "dpr/nets.hpp"
#include "dpr/pair_select.hpp"
#include "dpr/rgbd_data.hpp"
#include "dpr/toyenv.hpp"
#include "dpr/training.hpp"
#include "support/composite.hpp"
#include "support/mask_instances.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

namespace fs = std::filesystem;
using namespace dpr;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os << std::setprecision(digits) << v;
    return os.str();
}

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    if (!pass) ++failures;
    std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
}

/// Runs one criterion; an exception counts as FAIL with its message.
void criterion(const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
    try {
        const auto [pass, detail] = body();
        report(name, pass, detail);
    } catch (const std::exception& e) {
        report(name, false, std::string("exception: ") + e.what());
    }
}

fs::path artifact_dir() {
    if (const char* d = std::getenv("DPR_ACCEPTANCE_DIR"); d && *d) {
        fs::create_directories(d);
        return d;
    }
    return {};
}

// ---------------------------------------------------------------------------

std::pair<bool, std::string> mask_oracle() {
    const auto t0 = Clock::now();
    int matched = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        matched += testing::compare_with_oracle(testing::random_mask_instance(1000 + seed)).all();
    }
    const double secs = seconds_since(t0);
    return {matched == 200 && secs < 30.0,
            std::to_string(matched) + "/200 instances identical to the double-loop reference in " + fmt(secs, 3) +
                " s (limit 30 s)"};
}

std::pair<bool, std::string> loss_hand_values() {
    const auto full = [](const torch::Tensor& a) {
        return combine_masks(a, torch::ones_like(a), torch::ones_like(a));
    };
    const auto x = torch::tensor({{1.0, 0.0}}, torch::kFloat64);
    const auto m = full(torch::tensor({{true, false}}));
    const double half = pixel_loss_one_side(x, torch::tensor({{0.0, 1.0}, {0.0, -1.0}}, torch::kFloat64), m, 0.06)
                            .loss.item<double>();
    const double saturated =
        pixel_loss_one_side(x, torch::tensor({{1.0, 0.0}, {-1.0, 0.0}}, torch::kFloat64), m, 0.06).loss.item<double>();

    const auto q = torch::tensor({1.0, 0.0, 0.0}, torch::kFloat64);
    const auto qp = torch::tensor({0.0, 1.0, 0.0}, torch::kFloat64);
    const auto ortho = torch::tensor({0.0, 0.0, 1.0}, torch::kFloat64);
    const double aligned = instance_loss({q, qp, qp, q}).item<double>();
    const double opposed = instance_loss({q, qp, -qp, -q}).item<double>();
    const double orthogonal = instance_loss({q, qp, ortho, ortho}).item<double>();

    const bool pass = std::abs(half - 0.693147) <= 1e-6 && std::abs(saturated) <= 1e-6 && aligned == -1.0 &&
                      opposed == 1.0 && orthogonal == 0.0;
    return {pass, "pixel " + fmt(half, 7) + " (0.693147), saturated " + fmt(saturated, 3) + "; instance " +
                      fmt(aligned) + " / " + fmt(opposed) + " / " + fmt(orthogonal + 0.0) + " (-1 / 1 / 0)"};
}

PairMask random_mask(std::int64_t n1, std::int64_t n2, double p_pos, double p_valid) {
    const auto a = torch::rand({n1, n2}, torch::kFloat64) < p_pos;
    return combine_masks(a, torch::ones_like(a), torch::rand({n1, n2}, torch::kFloat64) < p_valid,
                         torch::rand({n1, n2}, torch::kFloat64) < p_valid);
}

std::pair<bool, std::string> gradient_checks() {
    const auto t0 = Clock::now();
    torch::manual_seed(2024);
    double pix = 0, ins = 0, comp_in = 0, comp_par = 0;
    const int instances = 20;
    for (int k = 0; k < instances; ++k) {
        const auto n1 = 3 + k % 5, n2 = 4 + k % 4, dim = 3 + k % 4;
        const std::vector<PairMask> masks{random_mask(n1, n2, 0.4, 0.85), random_mask(n1, n2, 0.3, 0.85)};
        const double tau = 0.1 + 0.05 * k;
        pix = std::max(pix, oracle::gradcheck(
                                [&](const std::vector<torch::Tensor>& in) { return pixel_loss(in[0], in[1], masks, tau); },
                                {torch::randn({n1, dim}, torch::kFloat64), torch::randn({n2, dim}, torch::kFloat64)}));

        const auto q = torch::randn({3, dim}, torch::kFloat64), qp = torch::randn({3, dim}, torch::kFloat64);
        ins = std::max(ins, oracle::gradcheck(
                                [&](const std::vector<torch::Tensor>& in) { return instance_loss({q, qp, in[0], in[1]}); },
                                {torch::randn({3, dim}, torch::kFloat64), torch::randn({3, dim}, torch::kFloat64)}));

        testing::SmallPolicy p(1 + k % 2);
        const auto in = p.random_inputs(2 + k % 3, 3 + k % 5);
        comp_in = std::max(comp_in, oracle::gradcheck([&](const std::vector<torch::Tensor>& x) { return p.loss_of(x); }, in));
        comp_par = std::max(comp_par, oracle::gradcheck_parameters([&] { return p.loss_of(in); }, p.parameters()));
    }
    const double secs = seconds_since(t0);
    const double worst = std::max({pix, ins, comp_in, comp_par});
    return {worst < 1e-4 && secs < 120.0,
            std::to_string(instances) + " instances each; max rel. error pixel " + fmt(pix, 2) + ", instance " +
                fmt(ins, 2) + ", composite inputs " + fmt(comp_in, 2) + ", composite parameters " + fmt(comp_par, 2) +
                " (limit 1e-4) in " + fmt(secs, 3) + " s (limit 120 s)"};
}

std::pair<bool, std::string> schedules() {
    int low = 0, high = 0;
    bool ordered = true;
    for (int e = 0; e < 50; ++e) {
        const int r = resolution_for_epoch(e, 50, 112, 224, 0.1);
        (r == 112 ? low : high)++;
        ordered = ordered && r == (e < 45 ? 112 : 224);
    }
    const std::int64_t total = 10000;
    const auto warm_end = static_cast<std::int64_t>(std::floor(0.05 * total));
    const double at_warm = lr_for_step(warm_end, total, 3e-4, 1e-5, 0.05);
    const double at_end = lr_for_step(total - 1, total, 3e-4, 1e-5, 0.05);
    const bool pass = ordered && low == 45 && high == 5 && std::abs(at_warm - 3e-4) <= 1e-9 &&
                      std::abs(at_end - 1e-5) <= 1e-9;
    return {pass, std::to_string(low) + " epochs at 112 then " + std::to_string(high) + " at 224; lr " +
                      fmt(at_warm, 9) + " at warmup end, " + fmt(at_end, 9) + " at the final step"};
}

// ---------------------------------------------------------------------------

struct PretrainOutcome {
    PretrainResult result;
    double seconds = 0;
};

PretrainOutcome run_pretrain(const RunConfig& cfg) {
    SyntheticSource source(cfg.synthetic_count, cfg.synthetic_seed, cfg.scene);
    PretrainOptions opts;
    opts.on_epoch = [](const EpochRecord& r) {
        std::cout << "  pretrain epoch " << r.epoch << "  res " << r.resolution << "  L_pix " << r.l_pix << "  L_ins "
                  << r.l_ins << "  " << fmt(r.wall_time, 3) << " s" << std::endl;
    };
    const auto t0 = Clock::now();
    PretrainOutcome out{pretrain(cfg.pretrain, source, opts), 0};
    out.seconds = seconds_since(t0);
    return out;
}

// ---------------------------------------------------------------------------

constexpr int kBcDemos = 200;
constexpr std::uint64_t kDemoSeed = 0;
constexpr std::uint64_t kHeldOutSeed = 2000000;
constexpr int kHeldOutEpisodes = 100;
const std::vector<std::uint64_t> kBcSeeds{0, 1, 2};

struct Arm {
    std::string name;
    bool pretrained;
    EncoderMode mode;
    bool use_proprio;
};

struct ArmResult {
    std::vector<double> online;    // best periodic evaluation (model selection)
    std::vector<double> held_out;  // selected policy on unseen episode seeds
    double mean() const { return std::accumulate(held_out.begin(), held_out.end(), 0.0) / held_out.size(); }
};

std::string list(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "/" : "") + fmt(v[i], 3);
    return s;
}

ArmResult run_arm(const Arm& arm, const DemoSet& demos, const Archive& encoder, const fs::path& artifacts) {
    ArmResult out;
    for (const auto seed : kBcSeeds) {
        BcConfig cfg;
        cfg.seed = seed;
        cfg.mode = arm.mode;
        cfg.use_proprio = arm.use_proprio;
        const auto t0 = Clock::now();
        const auto res = bc_train(cfg, demos, arm.pretrained ? &encoder : nullptr);
        NetPolicy policy(res.policy, res.action_scale, res.env);
        const auto held = evaluate_policy(policy, kHeldOutEpisodes, kHeldOutSeed, res.env);
        out.online.push_back(res.best_success);
        out.held_out.push_back(held.success_rate);
        std::cout << "  bc " << arm.name << " seed " << seed << ": final loss " << fmt(res.log.back().loss, 3)
                  << ", best online " << res.best_success << " (epoch " << res.best_epoch << "), held-out "
                  << held.success_rate << "  " << fmt(seconds_since(t0), 3) << " s" << std::endl;
        if (!artifacts.empty()) {
            write_archive(artifacts / ("policy_" + arm.name + "_s" + std::to_string(seed) + ".dpr"), policy_archive(res));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

std::pair<bool, std::string> round_trips(const PretrainResult& pre, const DemoSet& demos, const Archive& encoder) {
    testing::TempDir tmp("dpr_accept");
    std::vector<std::string> notes;
    bool pass = true;

    write_archive(tmp / "a.dpr", pre.checkpoint);
    const Archive back = read_archive(tmp / "a.dpr");
    write_archive(tmp / "b.dpr", back);
    const bool bytes = io::read_file(tmp / "a.dpr") == io::read_file(tmp / "b.dpr");
    PretrainNet reloaded(pre.net->config());
    load_module(back, "net/", *reloaded);
    const bool params = same_parameters(*reloaded, *pre.net);
    pass = pass && bytes && params;
    notes.push_back(std::string("checkpoint ") + (bytes && params ? "bit-identical" : "DIFFERS"));

    save_demos(tmp / "demos.dpr", demos);
    const DemoSet loaded = load_demos(tmp / "demos.dpr");
    std::size_t exact = 0;
    for (std::size_t i = 0; i < loaded.demos.size(); ++i) {
        const auto& d = loaded.demos[i];
        const auto states = replay(d, loaded.env);
        bool ok = states.size() == d.steps.size() + 1 && states == replay(demos.demos[i], demos.env) &&
                  is_success(states.back(), loaded.env);
        for (std::size_t t = 0; ok && t < d.steps.size(); ++t) {
            ok = quantize8(render(states[t], loaded.env)) == d.steps[t].rgb;
        }
        exact += ok;
    }
    pass = pass && exact == loaded.demos.size();
    notes.push_back("replay exact on " + std::to_string(exact) + "/" + std::to_string(loaded.demos.size()) + " demos");

    BcConfig cfg;
    cfg.epochs = 1;
    cfg.eval_episodes = 1;
    const auto res = bc_train(cfg, demos, &encoder);
    write_archive(tmp / "policy.dpr", policy_archive(res));
    const auto lp = load_policy(read_archive(tmp / "policy.dpr"));
    NetPolicy p1(res.policy, res.action_scale, res.env), p2(lp.net, lp.action_scale, lp.env);
    const auto e1 = evaluate_policy(p1, 10, 77, res.env);
    const auto e2 = evaluate_policy(p1, 10, 77, res.env);
    const auto e3 = evaluate_policy(p2, 10, 77, lp.env);
    ExpertPolicy expert(res.env);
    const auto x1 = evaluate_policy(expert, 20, 5, res.env), x2 = evaluate_policy(expert, 20, 5, res.env);
    const bool eval_det = e1.successes == e2.successes && e1.successes == e3.successes && x1.successes == x2.successes &&
                          same_parameters(*lp.net, *res.policy);
    pass = pass && eval_det;
    notes.push_back(std::string("evaluation ") + (eval_det ? "deterministic per seed" : "NOT deterministic"));

    std::string detail;
    for (std::size_t i = 0; i < notes.size(); ++i) detail += (i ? "; " : "") + notes[i];
    return {pass, detail};
}

std::pair<bool, std::string> invariants() {
    std::vector<std::string> broken;
    torch::manual_seed(99);

    // positive / negative sets partition the valid columns
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto inst = testing::random_mask_instance(5000 + seed);
        const auto& v = inst.views;
        PairSelectConfig cfg;
        cfg.cross_product = true;
        const auto masks = build_pair_masks(view_cells(v.geom1, v.view1_depth, inst.grid, inst.grid),
                                            view_cells(v.geom2, v.view2_depth, inst.grid, inst.grid),
                                            inst.sample.height(), inst.sample.width(), cfg);
        bool ok = true;
        for (const auto& m : masks) {
            const auto valid = oracle::flat_bool(m.valid);
            const auto n2 = m.valid.size(1);
            for (std::int64_t i = 0; ok && i < m.a.size(0); ++i) {
                std::vector<int> seen(static_cast<std::size_t>(n2), 0);
                for (const auto j : m.positives(i)) ++seen[j];
                for (const auto j : m.negatives(i)) ++seen[j];
                for (std::int64_t j = 0; j < n2; ++j) ok = ok && seen[j] == valid[i * n2 + j];
            }
        }
        if (!ok) {
            broken.push_back("mask partition");
            break;
        }
    }

    // pixel loss: nonnegative, and symmetric under a view swap with transposed masks
    for (int k = 0; k < 50; ++k) {
        const auto x1 = torch::randn({6, 5}, torch::kFloat64), x2 = torch::randn({7, 5}, torch::kFloat64);
        const auto m = random_mask(6, 7, 0.4, 0.9);
        const double l = pixel_loss(x1, x2, {m}, 0.2).item<double>();
        const double swapped = pixel_loss(x2, x1, {m.transposed()}, 0.2).item<double>();
        if (l < 0) broken.push_back("pixel loss nonnegativity");
        if (std::abs(l - swapped) > 1e-12) broken.push_back("pixel loss view symmetry");
        if (l < 0 || std::abs(l - swapped) > 1e-12) break;
    }

    // attention rows sum to one
    CrossAttention att(16, 8, 12, 2);
    att(torch::randn({3, 10, 16}), torch::randn({3, 5, 8}));
    if ((att->last_weights().sum(-1) - 1).abs().max().item<double>() > 1e-6) broken.push_back("attention rows");

    // proprioception tokens are normalized per token
    ProprioEncoder enc(reference_arm_schema());
    ProprioBatch batch;
    for (const auto& s : reference_arm_schema()) batch.emplace_back(s.name, torch::randn({4, s.dim}) * 3);
    const auto tokens = enc(batch);
    if (tokens.mean(-1).abs().max().item<double>() > 1e-5 || (tokens.var(-1, false) - 1).abs().max().item<double>() > 0.05) {
        broken.push_back("layer norm statistics");
    }

    // EMA update stays between old and online values
    auto online = torch::randn({200}), momentum = torch::randn({200});
    const auto before = momentum.clone();
    momentum_update({online}, {momentum}, 0.73);
    const auto lo = torch::minimum(before, online) - 1e-6, hi = torch::maximum(before, online) + 1e-6;
    if (!((momentum >= lo) & (momentum <= hi)).all().item<bool>()) broken.push_back("EMA convexity");

    // synthetic depth is the nearest surface
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SceneSpec spec;
        spec.height = 40;
        spec.width = 56;
        spec.n_objects = 8;
        spec.rng_seed = seed;
        const auto objects = sample_scene_objects(spec);
        const auto s = render_scene(spec, objects);
        const auto ref = oracle::zbuffer_depth(spec, objects);
        bool ok = true;
        for (std::size_t i = 0; i < ref.size(); ++i) ok = ok && std::abs(s.depth.data[i] - ref[i] / spec.z_far) <= 1e-6;
        if (!ok) {
            broken.push_back("occlusion-correct depth");
            break;
        }
    }

    return {broken.empty(), broken.empty() ? "mask partition, loss nonnegativity and symmetry, attention rows, layer "
                                             "norm statistics, EMA convexity, occlusion-correct depth"
                                           : "broken: " + [&] {
                                                 std::string s;
                                                 for (const auto& b : broken) s += b + " ";
                                                 return s;
                                             }()};
}

}  // namespace

int main() {
    torch::set_num_threads(1);
    const fs::path artifacts = artifact_dir();

    criterion("mask oracle equivalence", mask_oracle);
    criterion("loss hand values", loss_hand_values);
    criterion("gradient checks", gradient_checks);
    criterion("schedule exactness", schedules);
    criterion("invariant suites", invariants);

    const RunConfig pre_cfg = load_config(fs::path(DPR_SOURCE_DIR) / "configs" / "acceptance_pretrain.conf");
    PretrainOutcome first;
    bool have_encoder = false;
    criterion("pretraining smoke", [&]() -> std::pair<bool, std::string> {
        first = run_pretrain(pre_cfg);
        have_encoder = true;
        const auto second = run_pretrain(pre_cfg);
        const auto& log = first.result.log.epochs;
        const double ratio = log.back().l_pix / log.front().l_pix;
        const bool identical = log.back().loss == second.result.log.epochs.back().loss &&
                               log.back().l_pix == second.result.log.epochs.back().l_pix;
        if (!artifacts.empty()) {
            const auto text = first.result.log.to_jsonl();
            io::write_file(artifacts / "pretrain_log.jsonl", text.data(), text.size());
            write_archive(artifacts / "encoder.dpr", export_encoder(first.result.checkpoint));
        }
        const bool pass = first.seconds < 1800 && ratio <= 0.8 && identical;
        return {pass, std::to_string(log.size()) + " epochs in " + fmt(first.seconds, 4) + " s (limit 1800 s); L_pix " +
                          fmt(log.front().l_pix) + " -> " + fmt(log.back().l_pix) + " (ratio " + fmt(ratio, 3) +
                          ", limit 0.8); rerun final loss " + (identical ? "bit-identical" : "DIFFERS")};
    });

    if (!have_encoder) {
        report("proprioception injection (3 seeds)", false, "no pretrained encoder");
        report("pretrained vs scratch (3 seeds)", false, "no pretrained encoder");
        report("determinism and round trips", false, "no pretrained encoder");
        return 1;
    }

    const Archive encoder = export_encoder(first.result.checkpoint);
    const DemoSet demos = collect_demos(kBcDemos, kDemoSeed);
    std::cout << "  " << demos.demos.size() << " demos, " << demos.total_steps() << " steps" << std::endl;

    const Arm finetune{"finetune", true, EncoderMode::Finetune, true};
    const Arm finetune_np{"finetune_no_proprio", true, EncoderMode::Finetune, false};
    const Arm frozen{"frozen", true, EncoderMode::Frozen, true};
    const Arm scratch{"scratch", false, EncoderMode::Finetune, true};

    ArmResult r_ft, r_ft_np, r_frozen, r_scratch;
    bool bc_ok = true;
    try {
        r_ft = run_arm(finetune, demos, encoder, artifacts);
        r_ft_np = run_arm(finetune_np, demos, encoder, artifacts);
        r_frozen = run_arm(frozen, demos, encoder, artifacts);
        r_scratch = run_arm(scratch, demos, encoder, artifacts);
    } catch (const std::exception& e) {
        bc_ok = false;
        report("proprioception injection (3 seeds)", false, std::string("exception: ") + e.what());
        report("pretrained vs scratch (3 seeds)", false, std::string("exception: ") + e.what());
    }

    if (bc_ok) {
        int strictly = 0;
        for (std::size_t i = 0; i < kBcSeeds.size(); ++i) strictly += r_ft.held_out[i] > r_ft_np.held_out[i];
        report("proprioception injection (3 seeds)", r_ft.mean() >= r_ft_np.mean() && strictly >= 2,
               "held-out success with " + list(r_ft.held_out) + " (mean " + fmt(r_ft.mean(), 3) + ") vs without " +
                   list(r_ft_np.held_out) + " (mean " + fmt(r_ft_np.mean(), 3) + "); strictly better on " +
                   std::to_string(strictly) + "/3; best online " + list(r_ft.online) + " vs " + list(r_ft_np.online));

        const bool either = r_ft.mean() >= r_scratch.mean() || r_frozen.mean() >= r_scratch.mean();
        report("pretrained vs scratch (3 seeds)", either,
               "held-out success fine-tuned " + list(r_ft.held_out) + " (mean " + fmt(r_ft.mean(), 3) + "), frozen " +
                   list(r_frozen.held_out) + " (mean " + fmt(r_frozen.mean(), 3) + "), scratch " +
                   list(r_scratch.held_out) + " (mean " + fmt(r_scratch.mean(), 3) + "); best online " +
                   list(r_ft.online) + ", " + list(r_frozen.online) + ", " + list(r_scratch.online));
    }

    criterion("determinism and round trips", [&] { return round_trips(first.result, demos, encoder); });

    std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
              << std::endl;
    return failures ? 1 : 0;
}
