// dpr: command-line front end for the pretraining / behavior-cloning pipeline.
//
//   dpr gen-pretrain-data --count N --seed S --out DIR
//   dpr pretrain --config FILE --out DIR [--resume]
//   dpr export-encoder --checkpoint FILE --out FILE
//   dpr gen-demos --n N --seed S --out FILE
//   dpr bc-train --config FILE --demos FILE --out FILE [--encoder FILE]
//   dpr eval --policy FILE|expert|random --episodes N --seed S
//   dpr inspect --sample ID --out DIR [--data DIR]
//   dpr print-config [--config FILE]
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <torch/torch.h>

#include "dpr/config.hpp"
#include "dpr/io.hpp"
#include "dpr/pair_select.hpp"
#include "dpr/rgbd_data.hpp"
#include "dpr/toyenv.hpp"
#include "dpr/training.hpp"
#include "dpr/view_aug.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Refuses to replace an existing output unless --overwrite was given; with it, the
/// old output is removed so reruns start from the same state.
void claim_output(const fs::path& out, bool overwrite) {
    if (!fs::exists(out)) return;
    if (fs::is_directory(out) && fs::is_empty(out)) return;
    if (!overwrite) throw UsageError("'" + out.string() + "' already exists (pass --overwrite to replace it)");
    fs::remove_all(out);
}

void ensure_parent(const fs::path& file) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

dpr::RunConfig run_config(const std::string& path, const std::vector<std::string>& overrides) {
    dpr::RunConfig cfg = path.empty() ? dpr::parse_config("") : dpr::load_config(path);
    for (const auto& o : overrides) dpr::apply_override(cfg, o);
    if (cfg.threads > 0) torch::set_num_threads(cfg.threads);
    return cfg;
}

std::unique_ptr<dpr::SampleSource> pretrain_source(const dpr::RunConfig& cfg) {
    if (cfg.data_path.empty()) {
        return std::make_unique<dpr::SyntheticSource>(cfg.synthetic_count, cfg.synthetic_seed, cfg.scene);
    }
    auto manifest = dpr::load_manifest(dpr::resolve_data_path(cfg.data_path), cfg.data_split);
    return std::make_unique<dpr::ManifestSource>(std::move(manifest), cfg.depth);
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::size_t count = 0;
    std::uint64_t seed = 0;
    std::string out;
    int size = 160;
    bool overwrite = false;
};

int gen_pretrain_data(const GenDataArgs& a) {
    const fs::path out = dpr::resolve_data_path(a.out);
    claim_output(out, a.overwrite);
    fs::create_directories(out);
    dpr::SceneSpec spec;
    spec.height = spec.width = a.size;
    dpr::SyntheticSource source(a.count, a.seed, spec);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < a.count; ++i) {
        const auto sample = source.get(i);
        dpr::write_sample_files(out, sample);
        ids.push_back(sample.id);
    }
    dpr::write_manifest(out, ids);
    std::clog << "wrote " << a.count << " samples to " << out.string() << "\n";
    return 0;
}

struct PretrainArgs {
    std::string config;
    std::string out;
    std::vector<std::string> overrides;
    bool resume = false;
    bool overwrite = false;
};

int pretrain(const PretrainArgs& a) {
    const dpr::RunConfig cfg = run_config(a.config, a.overrides);
    const fs::path out(a.out);
    const fs::path ckpt = out / "checkpoint.dpr";
    std::optional<dpr::Archive> resume;
    if (a.resume) {
        if (!fs::exists(ckpt)) throw UsageError("--resume: no checkpoint at '" + ckpt.string() + "'");
        resume = dpr::read_archive(ckpt);
    } else {
        claim_output(out, a.overwrite);
    }
    fs::create_directories(out);
    {
        std::ofstream snapshot(out / "config.txt");
        snapshot << dpr::render_config(cfg);
    }
    const auto source = pretrain_source(cfg);
    dpr::PretrainOptions opts;
    opts.checkpoint = ckpt;
    opts.log_path = out / "log.jsonl";
    opts.resume = resume ? &*resume : nullptr;
    opts.on_epoch = [](const dpr::EpochRecord& r) {
        std::clog << "epoch " << r.epoch << "  res " << r.resolution << "  L_pix " << r.l_pix << "  L_ins " << r.l_ins
                  << "  L " << r.loss << "  lr " << r.lr << "  " << r.wall_time << "s\n";
    };
    const auto res = dpr::pretrain(cfg.pretrain, *source, opts);
    dpr::write_archive(ckpt, res.checkpoint);
    dpr::write_archive(out / "encoder.dpr", dpr::export_encoder(res.checkpoint));
    return 0;
}

struct ExportArgs {
    std::string checkpoint;
    std::string out;
    bool overwrite = false;
};

int export_encoder(const ExportArgs& a) {
    claim_output(a.out, a.overwrite);
    ensure_parent(a.out);
    dpr::write_archive(a.out, dpr::export_encoder(dpr::read_archive(a.checkpoint)));
    return 0;
}

struct DemoArgs {
    int n = 200;
    std::uint64_t seed = 0;
    std::string out;
    std::string config;
    bool overwrite = false;
};

int gen_demos(const DemoArgs& a) {
    const dpr::RunConfig cfg = run_config(a.config, {});
    claim_output(a.out, a.overwrite);
    ensure_parent(a.out);
    const auto demos = dpr::collect_demos(a.n, a.seed, cfg.env);
    dpr::save_demos(a.out, demos);
    std::clog << "stored " << demos.demos.size() << " successful demos (" << demos.total_steps() << " steps)\n";
    return 0;
}

struct BcArgs {
    std::string config;
    std::string demos;
    std::string encoder;
    std::string out;
    std::vector<std::string> overrides;
    bool overwrite = false;
};

int bc_train(const BcArgs& a) {
    const dpr::RunConfig cfg = run_config(a.config, a.overrides);
    claim_output(a.out, a.overwrite);
    ensure_parent(a.out);
    const auto demos = dpr::load_demos(a.demos);
    std::optional<dpr::Archive> enc;
    if (!a.encoder.empty()) enc = dpr::read_archive(a.encoder);
    dpr::BcOptions opts;
    opts.on_epoch = [](const dpr::BcEpochRecord& r) {
        std::clog << "epoch " << r.epoch << "  bc_loss " << r.loss << "  lr " << r.lr << "  " << r.wall_time << "s\n";
    };
    opts.on_eval = [](const dpr::BcEvalRecord& r) {
        std::clog << "eval after " << r.epoch << " epochs: success " << r.success_rate << "\n";
    };
    const auto res = dpr::bc_train(cfg.bc, demos, enc ? &*enc : nullptr, opts);
    dpr::write_archive(a.out, dpr::policy_archive(res));
    std::clog << "best success " << res.best_success << " after " << res.best_epoch << " epochs\n";
    return 0;
}

struct EvalArgs {
    std::string policy;
    int episodes = 20;
    std::uint64_t seed = 0;
};

int eval(const EvalArgs& a) {
    std::unique_ptr<dpr::Policy> policy;
    dpr::EnvConfig env;
    if (a.policy == "expert") {
        policy = std::make_unique<dpr::ExpertPolicy>(env);
    } else if (a.policy == "random") {
        policy = std::make_unique<dpr::RandomPolicy>(a.seed, env);
    } else {
        auto loaded = dpr::load_policy(dpr::read_archive(a.policy));
        env = loaded.env;
        policy = std::make_unique<dpr::NetPolicy>(loaded.net, loaded.action_scale, env);
    }
    const auto r = dpr::evaluate_policy(*policy, a.episodes, a.seed, env);
    std::cout << json{{"schema_version", 1}, {"success_rate", r.success_rate}, {"episodes", r.episodes},
                      {"seed", r.seed}}
                     .dump()
              << "\n";
    return 0;
}

struct InspectArgs {
    std::string sample;
    std::string data;
    std::string out;
    std::uint64_t seed = 0;
    int resolution = 112;
    bool overwrite = false;
};

dpr::Image upscale_cells(const torch::Tensor& values, int cell) {
    const auto v = values.to(torch::kFloat32).contiguous();
    const int h = static_cast<int>(v.size(0)), w = static_cast<int>(v.size(1));
    auto acc = v.accessor<float, 2>();
    dpr::Image img(h * cell, w * cell, 1);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) img.at(r, c) = acc[r / cell][c / cell];
    }
    return img;
}

int inspect(const InspectArgs& a) {
    claim_output(a.out, a.overwrite);
    const fs::path out(a.out);
    fs::create_directories(out);

    dpr::RgbdSample sample;
    if (a.data.empty()) {
        std::size_t index = 0;
        try {
            index = std::stoul(a.sample);
        } catch (const std::exception&) {
            throw UsageError("--sample must be an index when no --data directory is given");
        }
        sample = dpr::SyntheticSource(index + 1, a.seed).get(index);
    } else {
        const auto manifest = dpr::load_manifest(dpr::resolve_data_path(a.data));
        const auto it = std::find_if(manifest.entries.begin(), manifest.entries.end(),
                                     [&](const dpr::ManifestEntry& e) { return e.id == a.sample; });
        if (it == manifest.entries.end()) throw UsageError("sample '" + a.sample + "' not in the manifest");
        sample = dpr::load_sample(manifest, *it);
    }

    dpr::ViewPairOptions vo;
    vo.out_h = vo.out_w = a.resolution;
    vo.grid_h = vo.grid_w = a.resolution / dpr::EncoderConfig::tiny().stride();
    dpr::Rng rng = dpr::make_rng(a.seed, {0x1a5});
    const auto vp = dpr::make_view_pair(sample, vo, dpr::AugmentConfig{}, rng);
    const auto c1 = dpr::view_cells(vp.geom1, vp.view1_depth, vo.grid_h, vo.grid_w);
    const auto c2 = dpr::view_cells(vp.geom2, vp.view2_depth, vo.grid_h, vo.grid_w);
    const auto masks = dpr::build_pair_masks(c1, c2, sample.height(), sample.width(), dpr::PairSelectConfig{});

    dpr::io::write_png_rgb8(out / "view1.png", vp.view1_rgb);
    dpr::io::write_png_rgb8(out / "view2.png", vp.view2_rgb);
    dpr::io::write_png_gray8(out / "view1_depth.png", vp.view1_depth);
    dpr::io::write_png_gray8(out / "view2_depth.png", vp.view2_depth);

    json summary;
    summary["sample"] = sample.id;
    summary["grid"] = {vo.grid_h, vo.grid_w};
    summary["crop1"] = {vp.geom1.crop.x, vp.geom1.crop.y, vp.geom1.crop.w, vp.geom1.crop.h, vp.geom1.hflip};
    summary["crop2"] = {vp.geom2.crop.x, vp.geom2.crop.y, vp.geom2.crop.w, vp.geom2.crop.h, vp.geom2.hflip};
    summary["masks"] = json::array();
    const int cell = a.resolution / vo.grid_h;
    for (const auto& m : masks) {
        char tag[64];
        std::snprintf(tag, sizeof tag, "s%.2f_d%.2f", m.thresholds.spatial, m.thresholds.depth);
        const auto pos = m.a.logical_and(m.valid);
        dpr::io::write_png_gray8(out / (std::string("mask_") + tag + ".png"), upscale_cells(pos, 4));
        // positives per view-1 cell, as a heatmap over the view-1 grid
        const auto counts = pos.sum(1).to(torch::kFloat32).reshape({vo.grid_h, vo.grid_w});
        const float peak = std::max(1.0f, counts.max().item<float>());
        dpr::io::write_png_gray8(out / (std::string("positives_") + tag + ".png"), upscale_cells(counts / peak, cell));
        summary["masks"].push_back({{"spatial", m.thresholds.spatial},
                                    {"depth", m.thresholds.depth},
                                    {"image_pairs", m.a_image.logical_and(m.valid).sum().item<std::int64_t>()},
                                    {"depth_pairs", m.a_depth.logical_and(m.valid).sum().item<std::int64_t>()},
                                    {"positives", pos.sum().item<std::int64_t>()},
                                    {"valid", m.valid.sum().item<std::int64_t>()}});
    }
    std::ofstream(out / "summary.json") << summary.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Depth-gated pixel contrastive pretraining and proprioception-aware behavior cloning"};
    app.require_subcommand(1);
    int status = 0;

    GenDataArgs gd;
    auto* c_gd = app.add_subcommand("gen-pretrain-data", "Write synthetic RGB-D scenes and a manifest");
    c_gd->add_option("--count", gd.count, "number of samples")->required();
    c_gd->add_option("--seed", gd.seed, "generator seed");
    c_gd->add_option("--out", gd.out, "output directory (relative paths go under $DPR_DATA_ROOT)")->required();
    c_gd->add_option("--size", gd.size, "scene height and width in pixels");
    c_gd->add_flag("--overwrite", gd.overwrite, "replace an existing output directory");
    c_gd->callback([&] { status = gen_pretrain_data(gd); });

    PretrainArgs pt;
    auto* c_pt = app.add_subcommand("pretrain", "Run depth-aware contrastive pretraining");
    c_pt->add_option("--config", pt.config, "config file (key = value)")->required();
    c_pt->add_option("--out", pt.out, "run directory: checkpoint.dpr, encoder.dpr, log.jsonl")->required();
    c_pt->add_option("--set", pt.overrides, "override a config key, e.g. --set pretrain.epochs=2");
    c_pt->add_flag("--resume", pt.resume, "continue from <out>/checkpoint.dpr");
    c_pt->add_flag("--overwrite", pt.overwrite, "replace an existing run directory");
    c_pt->callback([&] { status = pretrain(pt); });

    ExportArgs ex;
    auto* c_ex = app.add_subcommand("export-encoder", "Extract the online encoder from a pretraining checkpoint");
    c_ex->add_option("--checkpoint", ex.checkpoint, "pretraining checkpoint")->required()->check(CLI::ExistingFile);
    c_ex->add_option("--out", ex.out, "encoder archive to write")->required();
    c_ex->add_flag("--overwrite", ex.overwrite, "replace an existing file");
    c_ex->callback([&] { status = export_encoder(ex); });

    DemoArgs dm;
    auto* c_dm = app.add_subcommand("gen-demos", "Collect successful expert demonstrations in the toy environment");
    c_dm->add_option("--n", dm.n, "number of successful demos")->required();
    c_dm->add_option("--seed", dm.seed, "first episode seed");
    c_dm->add_option("--out", dm.out, "demo archive to write")->required();
    c_dm->add_option("--config", dm.config, "config file (env.* keys)");
    c_dm->add_flag("--overwrite", dm.overwrite, "replace an existing file");
    c_dm->callback([&] { status = gen_demos(dm); });

    BcArgs bc;
    auto* c_bc = app.add_subcommand("bc-train", "Behavior cloning on demos, optionally from a pretrained encoder");
    c_bc->add_option("--config", bc.config, "config file (key = value)")->required();
    c_bc->add_option("--demos", bc.demos, "demo archive")->required()->check(CLI::ExistingFile);
    c_bc->add_option("--encoder", bc.encoder, "pretrained encoder or checkpoint; omit to train from scratch")
        ->check(CLI::ExistingFile);
    c_bc->add_option("--out", bc.out, "policy archive to write")->required();
    c_bc->add_option("--set", bc.overrides, "override a config key, e.g. --set bc.use_proprio=false");
    c_bc->add_flag("--overwrite", bc.overwrite, "replace an existing file");
    c_bc->callback([&] { status = bc_train(bc); });

    EvalArgs ev;
    auto* c_ev = app.add_subcommand("eval", "Success rate of a policy; prints one JSON object");
    c_ev->add_option("--policy", ev.policy, "policy archive, or 'expert' / 'random'")->required();
    c_ev->add_option("--episodes", ev.episodes, "number of episodes")->check(CLI::PositiveNumber);
    c_ev->add_option("--seed", ev.seed, "seed of the first episode");
    c_ev->callback([&] { status = eval(ev); });

    InspectArgs in;
    auto* c_in = app.add_subcommand("inspect", "Write two augmented views, their depth and the pair masks as images");
    c_in->add_option("--sample", in.sample, "manifest id, or synthetic index when --data is absent")->required();
    c_in->add_option("--data", in.data, "dataset directory");
    c_in->add_option("--out", in.out, "output directory")->required();
    c_in->add_option("--seed", in.seed, "augmentation (and synthetic scene) seed");
    c_in->add_option("--resolution", in.resolution, "view resolution (multiple of 16)");
    c_in->add_flag("--overwrite", in.overwrite, "replace an existing output directory");
    c_in->callback([&] { status = inspect(in); });

    std::string pc_config;
    auto* c_pc = app.add_subcommand("print-config", "Print the documented config schema with current values");
    c_pc->add_option("--config", pc_config, "config file to merge over the defaults");
    c_pc->callback([&] {
        std::cout << dpr::render_config(run_config(pc_config, {}));
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const dpr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.kind() == dpr::ErrorKind::Config ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return status;
}
