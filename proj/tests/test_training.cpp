#include "support/doctest.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "dpr/io.hpp"
#include "dpr/training.hpp"
#include "support/temp_dir.hpp"

using namespace dpr;
using dpr::testing::TempDir;

namespace {

PretrainConfig smoke_config() {
    PretrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 32;
    cfg.seed = 5;
    return cfg;
}

const SyntheticSource& smoke_source() {
    static const SyntheticSource src(64, 0);
    return src;
}

// Random-encoder archive: frozen features make BC runs cheap.
Archive random_encoder(std::uint64_t seed) {
    torch::manual_seed(seed);
    return encoder_archive(Encoder(EncoderConfig::tiny()));
}

const DemoSet& few_demos() {
    static const DemoSet demos = collect_demos(4, 0);
    return demos;
}

class NanSource final : public SampleSource {
public:
    std::size_t size() const override { return 4; }
    RgbdSample get(std::size_t i) const override {
        SceneSpec spec;
        spec.rng_seed = i;
        auto s = generate_scene(spec);
        std::fill(s.rgb.data.begin(), s.rgb.data.end(), std::numeric_limits<float>::quiet_NaN());
        return s;
    }
};

}  // namespace

TEST_SUITE("training") {

TEST_CASE("resolution schedule") {
    int low = 0, high = 0;
    for (int e = 0; e < 50; ++e) {
        const int r = resolution_for_epoch(e, 50, 112, 224, 0.1);
        (r == 112 ? low : high)++;
        CHECK(r == (e < 45 ? 112 : 224));
    }
    CHECK(low == 45);
    CHECK(high == 5);
    for (int e = 0; e < 10; ++e) CHECK(resolution_for_epoch(e, 10, 112, 224, 0.1) == (e == 9 ? 224 : 112));
    for (int e = 0; e < 10; ++e) CHECK(resolution_for_epoch(e, 10, 112, 224, 0.0) == 112);
    CHECK_THROWS_AS(resolution_for_epoch(10, 10, 112, 224, 0.1), Error);
    CHECK_THROWS_AS(resolution_for_epoch(-1, 10, 112, 224, 0.1), Error);
}

TEST_CASE("resolution schedule uses exactly two values for 0 < frac < 1") {
    for (int total : {2, 3, 7, 10, 50, 101}) {
        for (double frac : {0.01, 0.1, 0.33, 0.5, 0.9, 0.99}) {
            std::set<int> seen;
            for (int e = 0; e < total; ++e) seen.insert(resolution_for_epoch(e, total, 112, 224, frac));
            CHECK(seen.size() == 2);
        }
    }
}

TEST_CASE("learning-rate schedule") {
    const std::int64_t total = 1000;
    const double base = 3e-4, final_lr = 1e-5;
    const std::int64_t warm = 50;
    CHECK(lr_for_step(0, total, base, final_lr, 0.05) == 0.0);
    CHECK(std::abs(lr_for_step(warm, total, base, final_lr, 0.05) - base) < 1e-9);
    CHECK(std::abs(lr_for_step(total - 1, total, base, final_lr, 0.05) - final_lr) < 1e-9);
    // (W + total - 1) / 2 is the cosine midpoint
    const double mid = lr_for_step((warm + total - 1) / 2, total, base, final_lr, 0.05);
    CHECK(mid == doctest::Approx((base + final_lr) / 2).epsilon(1e-2));
    double prev = 1;
    for (std::int64_t s = warm; s < total; ++s) {
        const double lr = lr_for_step(s, total, base, final_lr, 0.05);
        CHECK(lr <= prev);
        prev = lr;
    }
    CHECK(lr_for_step(0, total, base, final_lr, 0.0) == base);
    CHECK_THROWS_AS(lr_for_step(total, total, base, final_lr, 0.05), Error);
}

TEST_CASE("optimizer step with zero learning rate changes nothing") {
    for (auto kind : {OptimizerKind::AdamW, OptimizerKind::Lars}) {
        torch::manual_seed(1);
        torch::nn::Linear lin(4, 3);
        const auto before = lin->weight.detach().clone();
        OptimizerConfig oc;
        oc.kind = kind;
        oc.weight_decay = 0.1;
        Optimizer opt(lin->parameters(), oc);
        opt.set_lr(0.0);
        for (int i = 0; i < 3; ++i) {
            opt.zero_grad();
            lin(torch::randn({2, 4})).pow(2).sum().backward();
            opt.step();
        }
        CHECK(torch::equal(lin->weight, before));
        opt.set_lr(0.1);
        opt.step();
        CHECK_FALSE(torch::equal(lin->weight, before));
    }
}

TEST_CASE("optimizer state round-trips through an archive") {
    for (auto kind : {OptimizerKind::AdamW, OptimizerKind::Lars}) {
        torch::manual_seed(2);
        torch::nn::Linear a(4, 3), b(4, 3);
        {
            torch::NoGradGuard g;
            b->weight.copy_(a->weight);
            b->bias.copy_(a->bias);
        }
        OptimizerConfig oc;
        oc.kind = kind;
        Optimizer oa(a->parameters(), oc);
        oa.set_lr(0.01);
        const auto x = torch::randn({5, 4});
        auto train = [&](torch::nn::Linear& m, Optimizer& o) {
            o.zero_grad();
            m(x).pow(2).sum().backward();
            o.step();
        };
        for (int i = 0; i < 3; ++i) train(a, oa);
        Archive ar;
        oa.save(ar, "optim/");
        save_module(ar, "m/", *a);

        load_module(ar, "m/", *b);
        Optimizer ob(b->parameters(), oc);
        ob.load(ar, "optim/");
        ob.set_lr(0.01);
        train(a, oa);
        train(b, ob);
        CHECK(torch::equal(a->weight, b->weight));
        CHECK(torch::equal(a->bias, b->bias));
    }
}

TEST_CASE("epoch order is a reproducible permutation") {
    const auto a = epoch_order(100, 3, 0);
    CHECK(a == epoch_order(100, 3, 0));
    CHECK_FALSE(a == epoch_order(100, 3, 1));
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 100; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("prepared batches") {
    auto cfg = smoke_config();
    const auto b = prepare_batch(smoke_source(), {3, 1, 4}, 0, 112, cfg);
    CHECK(b.view1.sizes() == torch::IntArrayRef{3, 3, 112, 112});
    CHECK(b.masks.size() == 3);
    CHECK(b.masks[0].a.sizes() == torch::IntArrayRef{3, 49, 49});
    const auto again = prepare_batch(smoke_source(), {3, 1, 4}, 0, 112, cfg);
    CHECK(torch::equal(b.view1, again.view1));
    CHECK(torch::equal(b.masks[2].valid, again.masks[2].valid));
    // a sample's views depend on (seed, epoch, index), not on its batch position
    const auto single = prepare_batch(smoke_source(), {1}, 0, 112, cfg);
    CHECK(torch::equal(single.view2[0], b.view2[1]));
    cfg.workers = 2;
    CHECK(torch::equal(prepare_batch(smoke_source(), {3, 1, 4}, 0, 112, cfg).view2, b.view2));
}

TEST_CASE("config validation") {
    auto cfg = smoke_config();
    cfg.low_res = 100;
    CHECK_THROWS_AS(validate(cfg), Error);
    cfg = smoke_config();
    cfg.epochs = 0;
    CHECK_THROWS_AS(validate(cfg), Error);
    cfg = smoke_config();
    cfg.tau = 0;
    CHECK_THROWS_AS(validate(cfg), Error);
    cfg = smoke_config();
    cfg.pairs.thresholds.clear();
    CHECK_THROWS_AS(validate(cfg), Error);
}

TEST_CASE("train log json lines round-trip") {
    TrainLog log;
    log.epochs.push_back({0, 0.5, -0.9, -0.4, 112, 3e-4, 1.5, 2, 0});
    log.epochs.push_back({1, 0.25, -0.95, -0.7, 224, 1e-5, 3.0, 2, 1});
    const auto text = log.to_jsonl();
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);
    const auto back = TrainLog::from_jsonl(text);
    REQUIRE(back.epochs.size() == 2);
    CHECK(back.epochs[1].l_pix == 0.25);
    CHECK(back.epochs[1].resolution == 224);
    CHECK(back.epochs[1].empty_pixel_batches == 1);
    CHECK_THROWS_AS(TrainLog::from_jsonl("{not json\n"), Error);
}

TEST_CASE("pretraining smoke run, checkpoint round-trip and determinism") {
    TempDir dir;
    PretrainOptions opts;
    opts.checkpoint = dir / "ck.dpr";
    opts.log_path = dir / "log.jsonl";
    const auto res = pretrain(smoke_config(), smoke_source(), opts);
    REQUIRE(res.log.epochs.size() == 2);
    CHECK(res.epochs_done == 2);
    CHECK(res.step == 4);
    for (const auto& r : res.log.epochs) {
        CHECK(std::isfinite(r.loss));
        CHECK(r.batches == 2);
    }
    CHECK(res.log.epochs[0].resolution == 112);
    CHECK(res.log.epochs[1].resolution == 224);
    const auto bytes = io::read_file(opts.log_path);
    CHECK(TrainLog::from_jsonl(std::string(bytes.begin(), bytes.end())).epochs.size() == 2);

    const auto ck = read_archive(opts.checkpoint);
    CHECK(ck.meta.at("kind") == "pretrain");
    CHECK(ck.meta.at("epochs_done") == 2);
    PretrainNet loaded(smoke_config().net);
    load_module(ck, "net/", *loaded);
    CHECK(same_parameters(*loaded, *res.net));

    // momentum parameters never accumulate gradients
    for (const auto& p : res.net->momentum_parameters()) {
        CHECK((!p.grad().defined() || p.grad().abs().sum().item<double>() == 0.0));
    }

    const auto again = pretrain(smoke_config(), smoke_source());
    CHECK(again.log.epochs.back().loss == res.log.epochs.back().loss);
    CHECK(same_parameters(*again.net, *res.net));

    // the exported encoder carries the same weights
    const auto enc = load_encoder(export_encoder(ck));
    CHECK(same_parameters(*enc, *res.net->encoder));
    CHECK(archived_encoder_config(ck).widths == smoke_config().net.encoder.widths);
}

TEST_CASE("resumed training matches an uninterrupted run") {
    const auto full = pretrain(smoke_config(), smoke_source());
    PretrainOptions first;
    first.stop_after = 1;
    const auto half = pretrain(smoke_config(), smoke_source(), first);
    REQUIRE(half.epochs_done == 1);
    PretrainOptions second;
    second.resume = &half.checkpoint;
    const auto resumed = pretrain(smoke_config(), smoke_source(), second);
    REQUIRE(resumed.log.epochs.size() == 2);
    CHECK(resumed.log.epochs[1].loss == full.log.epochs[1].loss);
    CHECK(resumed.log.epochs[1].l_pix == full.log.epochs[1].l_pix);
    CHECK(same_parameters(*resumed.net, *full.net));

    Archive wrong;
    wrong.meta["kind"] = "encoder";
    second.resume = &wrong;
    CHECK_THROWS_AS(pretrain(smoke_config(), smoke_source(), second), Error);
}

TEST_CASE("non-finite loss aborts with the offending batch") {
    auto cfg = smoke_config();
    cfg.batch_size = 2;
    try {
        pretrain(cfg, NanSource());
        FAIL("expected a non-finite error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NonFinite);
        CHECK(std::string(e.what()).find("batch 0") != std::string::npos);
    }
}

TEST_CASE("bc data normalizes actions") {
    const auto& demos = few_demos();
    const auto data = bc_data(demos, env_proprio_schema(), demos.env.max_delta);
    CHECK(data.size() == static_cast<std::int64_t>(demos.total_steps()));
    CHECK(data.rgb.sizes() == torch::IntArrayRef{data.size(), 112, 112, 3});
    CHECK((data.rgb.scalar_type() == torch::kUInt8));
    CHECK(data.action.abs().max().item<double>() <= 1.0 + 1e-6);
    CHECK(data.proprio.size() == env_proprio_schema().size());
    const auto first = demos.demos[0].steps[0];
    CHECK(data.action[0][0].item<double>() == doctest::Approx(first.action.dx / demos.env.max_delta));
    CHECK(data.action[0][2].item<double>() == doctest::Approx(first.action.grip));
    const auto rgb = rgb_batch(data.rgb.slice(0, 0, 2));
    CHECK(rgb.sizes() == torch::IntArrayRef{2, 3, 112, 112});
    CHECK(rgb.max().item<double>() <= 1.0);
}

TEST_CASE("bc with zero epochs still evaluates") {
    BcConfig cfg;
    cfg.epochs = 0;
    cfg.eval_episodes = 2;
    const auto res = bc_train(cfg, few_demos(), nullptr);
    REQUIRE(res.evals.size() == 1);
    CHECK(res.evals[0].epoch == 0);
    CHECK(res.log.empty());
    CHECK(res.best_success >= 0.0);
}

TEST_CASE("bc overfits a single repeated demo") {
    DemoSet one = few_demos();
    const Demo d = one.demos[0];
    one.demos.assign(4, d);
    BcConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 64;
    cfg.weight_decay = 0;
    cfg.final_lr = cfg.lr;
    cfg.eval_every = 1000;
    cfg.eval_episodes = 1;
    cfg.mode = EncoderMode::Finetune;
    const auto enc = random_encoder(3);
    REQUIRE(one.total_steps() <= 64);  // one step per epoch
    const auto res = bc_train(cfg, one, &enc);
    REQUIRE(res.log.size() == 200);
    CHECK(res.log.back().loss < 1e-3);
}

TEST_CASE("frozen encoder stays fixed, fine-tuned encoder moves") {
    const auto enc = random_encoder(4);
    Encoder original = load_encoder(enc);
    BcConfig cfg;
    cfg.epochs = 1;
    cfg.eval_episodes = 1;
    const auto frozen = bc_train(cfg, few_demos(), &enc);
    CHECK(same_parameters(*frozen.policy->encoder, *original));
    cfg.mode = EncoderMode::Finetune;
    const auto tuned = bc_train(cfg, few_demos(), &enc);
    CHECK_FALSE(same_parameters(*tuned.policy->encoder, *original));
}

TEST_CASE("bc rejects demos with a different proprioception schema") {
    DemoSet demos = few_demos();
    demos.schema[0].name = "joint_position";
    for (auto& d : demos.demos) {
        for (auto& s : d.steps) s.proprio.states[0].first = "joint_position";
    }
    BcConfig cfg;
    cfg.epochs = 1;
    try {
        bc_train(cfg, demos, nullptr);
        FAIL("expected a schema error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Schema);
    }
}

TEST_CASE("policy archive round-trip") {
    TempDir dir;
    BcConfig cfg;
    cfg.epochs = 1;
    cfg.eval_episodes = 2;
    cfg.use_proprio = false;
    const auto enc = random_encoder(5);
    const auto res = bc_train(cfg, few_demos(), &enc);
    write_archive(dir / "p.dpr", policy_archive(res));
    const auto loaded = load_policy(read_archive(dir / "p.dpr"));
    CHECK(same_parameters(*loaded.net, *res.policy));
    CHECK_FALSE(loaded.net->config().use_proprio);
    CHECK(loaded.action_scale == res.action_scale);

    NetPolicy a(res.policy, res.action_scale, res.env), b(loaded.net, loaded.action_scale, loaded.env);
    const auto ra = evaluate_policy(a, 3, 77, res.env), rb = evaluate_policy(b, 3, 77, res.env);
    CHECK(ra.successes == rb.successes);
    Archive other;
    other.meta["kind"] = "encoder";
    CHECK_THROWS_AS(load_policy(other), Error);
}

}
