#include "dpr/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <iostream>
#include <numbers>
#include <sstream>
#include <thread>

#include "dpr/common.hpp"
#include "dpr/losses.hpp"

namespace dpr {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Schedules

int resolution_for_epoch(int epoch, int total, int low, int high, double frac) {
    if (total < 1 || epoch < 0 || epoch >= total) {
        throw Error(ErrorKind::InvalidRange,
                    "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(total) + ")");
    }
    if (!(frac >= 0.0 && frac <= 1.0)) throw Error(ErrorKind::InvalidRange, "high-resolution fraction must be in [0, 1]");
    // The epsilon absorbs representation error in (1 - frac) * total, e.g. 0.9 * 50.
    auto cut = static_cast<int>(std::ceil((1.0 - frac) * total - 1e-9));
    // a fractional setting always yields both phases, even when frac * total < 1
    if (frac > 0.0 && frac < 1.0 && total >= 2) cut = std::clamp(cut, 1, total - 1);
    return epoch < cut ? low : high;
}

double lr_for_step(std::int64_t step, std::int64_t total_steps, double base_lr, double final_lr, double warmup_frac) {
    if (total_steps < 1 || step < 0 || step >= total_steps) {
        throw Error(ErrorKind::InvalidRange,
                    "step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + ")");
    }
    const auto warmup = static_cast<std::int64_t>(std::floor(warmup_frac * static_cast<double>(total_steps)));
    if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
    const double p = static_cast<double>(step - warmup) / static_cast<double>(std::max<std::int64_t>(1, total_steps - 1 - warmup));
    return final_lr + (base_lr - final_lr) * (1.0 + std::cos(std::numbers::pi * p)) / 2.0;
}

// ---------------------------------------------------------------------------
// Optimizer

const char* to_string(OptimizerKind kind) {
    return kind == OptimizerKind::AdamW ? "adamw" : "lars";
}

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "adamw") return OptimizerKind::AdamW;
    if (s == "lars") return OptimizerKind::Lars;
    throw Error(ErrorKind::Config, "unknown optimizer '" + s + "' (expected adamw or lars)");
}

Optimizer::Optimizer(std::vector<torch::Tensor> params, OptimizerConfig cfg)
    : cfg_(cfg), params_(std::move(params)) {
    if (cfg_.kind == OptimizerKind::AdamW) {
        adamw_ = std::make_unique<torch::optim::AdamW>(
            params_, torch::optim::AdamWOptions(0.0)
                         .betas({cfg_.beta1, cfg_.beta2})
                         .eps(cfg_.eps)
                         .weight_decay(cfg_.weight_decay));
    } else {
        for (const auto& p : params_) lars_buf_.push_back(torch::zeros_like(p));
    }
}

void Optimizer::set_lr(double lr) {
    lr_ = lr;
    if (adamw_) {
        for (auto& group : adamw_->param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
    }
}

void Optimizer::zero_grad() {
    for (auto& p : params_) {
        if (p.grad().defined()) p.mutable_grad() = torch::Tensor();
    }
}

void Optimizer::step() {
    if (adamw_) {
        adamw_->step();
        return;
    }
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.grad().defined()) continue;
        const auto g = p.grad();
        const double pn = p.norm().item<double>();
        const double gn = g.norm().item<double>();
        double trust = 1.0;
        if (pn > 0 && gn > 0) trust = cfg_.lars_eta * pn / (gn + cfg_.weight_decay * pn);
        auto update = g + cfg_.weight_decay * p;
        lars_buf_[i].mul_(cfg_.lars_momentum).add_(update, trust);
        p.add_(lars_buf_[i], -lr_);
    }
}

void Optimizer::save(Archive& archive, const std::string& prefix) const {
    if (adamw_) {
        torch::serialize::OutputArchive out;
        adamw_->save(out);
        std::ostringstream os;
        out.save_to(os);
        const std::string s = os.str();
        archive.put_bytes(prefix + "adamw", {static_cast<std::int64_t>(s.size())},
                          std::vector<std::uint8_t>(s.begin(), s.end()));
        return;
    }
    for (std::size_t i = 0; i < lars_buf_.size(); ++i) archive.put_tensor(prefix + "lars." + std::to_string(i), lars_buf_[i]);
}

void Optimizer::load(const Archive& archive, const std::string& prefix) {
    if (adamw_) {
        const Blob& b = archive.at(prefix + "adamw");
        std::istringstream is(std::string(b.bytes.begin(), b.bytes.end()));
        torch::serialize::InputArchive in;
        in.load_from(is);
        adamw_->load(in);
        return;
    }
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < lars_buf_.size(); ++i) {
        const auto t = archive.tensor(prefix + "lars." + std::to_string(i));
        if (t.sizes() != lars_buf_[i].sizes()) throw Error(ErrorKind::ShapeMismatch, "optimizer state shape mismatch");
        lars_buf_[i].copy_(t);
    }
}

// ---------------------------------------------------------------------------
// Config and log serialization

void validate(const PretrainConfig& cfg) {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, m); };
    if (cfg.epochs < 1) fail("epochs must be >= 1");
    if (cfg.batch_size < 1) fail("batch_size must be >= 1");
    if (!(cfg.high_frac >= 0 && cfg.high_frac <= 1)) fail("high_res_fraction must be in [0, 1]");
    const int stride = cfg.net.encoder.stride();
    for (int r : {cfg.low_res, cfg.high_res}) {
        if (r < stride || r % stride != 0) {
            fail("resolution " + std::to_string(r) + " is not a positive multiple of the encoder stride " +
                 std::to_string(stride));
        }
    }
    if (!(cfg.tau > 0)) fail("tau must be > 0");
    if (!(cfg.momentum >= 0 && cfg.momentum <= 1)) fail("momentum must be in [0, 1]");
    if (!(cfg.warmup_frac >= 0 && cfg.warmup_frac < 1)) fail("warmup_fraction must be in [0, 1)");
    if (cfg.workers < 0) fail("workers must be >= 0");
    if (cfg.pairs.thresholds.empty()) fail("at least one threshold is required");
}

json to_json(const EpochRecord& r) {
    return {{"schema_version", TrainLog::kSchemaVersion},
            {"epoch", r.epoch},
            {"l_pix", r.l_pix},
            {"l_ins", r.l_ins},
            {"loss", r.loss},
            {"resolution", r.resolution},
            {"lr", r.lr},
            {"wall_time", r.wall_time},
            {"batches", r.batches},
            {"empty_pixel_batches", r.empty_pixel_batches}};
}

EpochRecord epoch_record_from_json(const json& j) {
    EpochRecord r;
    r.epoch = j.at("epoch");
    r.l_pix = j.at("l_pix");
    r.l_ins = j.at("l_ins");
    r.loss = j.at("loss");
    r.resolution = j.at("resolution");
    r.lr = j.at("lr");
    r.wall_time = j.at("wall_time");
    r.batches = j.value("batches", 0);
    r.empty_pixel_batches = j.value("empty_pixel_batches", 0);
    return r;
}

std::string TrainLog::to_jsonl() const {
    std::string out;
    for (const auto& r : epochs) out += to_json(r).dump() + "\n";
    return out;
}

TrainLog TrainLog::from_jsonl(const std::string& text) {
    TrainLog log;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            log.epochs.push_back(epoch_record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw Error(ErrorKind::Schema, "train log line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return log;
}

json to_json(const EncoderConfig& c) {
    return {{"variant", c.variant == EncoderVariant::Tiny ? "tiny" : "resnet18"},
            {"widths", c.widths},
            {"extra_convs", c.extra_convs},
            {"groups", c.groups}};
}

EncoderConfig encoder_config_from_json(const json& j) {
    EncoderConfig c = j.at("variant") == "tiny" ? EncoderConfig::tiny() : EncoderConfig::resnet18();
    c.widths = j.at("widths").get<std::vector<int>>();
    c.extra_convs = j.at("extra_convs").get<std::vector<int>>();
    c.groups = j.at("groups");
    return c;
}

json to_json(const PretrainConfig& c) {
    json thresholds = json::array();
    for (double t : c.pairs.thresholds) thresholds.push_back(t);
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"low_res", c.low_res},
            {"high_res", c.high_res},
            {"high_frac", c.high_frac},
            {"base_lr", c.base_lr},
            {"final_lr", c.final_lr},
            {"warmup_frac", c.warmup_frac},
            {"weight_decay", c.optimizer.weight_decay},
            {"optimizer", to_string(c.optimizer.kind)},
            {"tau", c.tau},
            {"alpha", c.alpha},
            {"momentum", c.momentum},
            {"seed", c.seed},
            {"workers", c.workers},
            {"photometric", c.photometric},
            {"thresholds", thresholds},
            {"cross_product", c.pairs.cross_product},
            {"distance_norm", c.pairs.distance_norm == DistanceNorm::ImageDiagonal ? "image_diagonal" : "feature_bin"},
            {"encoder", to_json(c.net.encoder)},
            {"pixel_dim", c.net.pixel_dim},
            {"instance_dim", c.net.instance_dim}};
}

// ---------------------------------------------------------------------------
// Pretraining

namespace {

torch::Tensor image_tensor(const Image& img) {
    return torch::from_blob(const_cast<float*>(img.data.data()), {img.height, img.width, img.channels}, torch::kFloat32)
        .permute({2, 0, 1})
        .clone();
}

struct PreparedSample {
    torch::Tensor v1, v2;
    std::vector<PairMask> masks;
};

PreparedSample prepare_sample(const SampleSource& source, std::size_t index, int epoch, int resolution,
                              const PretrainConfig& cfg) {
    const RgbdSample sample = source.get(index);
    Rng rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(epoch), index});
    ViewPairOptions vo;
    vo.out_h = vo.out_w = resolution;
    vo.grid_h = vo.grid_w = resolution / cfg.net.encoder.stride();
    vo.photometric = cfg.photometric;
    const ViewPair vp = make_view_pair(sample, vo, cfg.augment, rng);
    const auto c1 = view_cells(vp.geom1, vp.view1_depth, vo.grid_h, vo.grid_w, cfg.pairs.min_valid_fraction);
    const auto c2 = view_cells(vp.geom2, vp.view2_depth, vo.grid_h, vo.grid_w, cfg.pairs.min_valid_fraction);
    return {image_tensor(vp.view1_rgb), image_tensor(vp.view2_rgb),
            build_pair_masks(c1, c2, sample.height(), sample.width(), cfg.pairs)};
}

}  // namespace

PretrainBatch prepare_batch(const SampleSource& source, const std::vector<std::size_t>& indices, int epoch,
                            int resolution, const PretrainConfig& cfg) {
    std::vector<PreparedSample> prepared(indices.size());
    const auto n_threads = static_cast<std::size_t>(std::max(1, cfg.workers));
    if (n_threads == 1) {
        for (std::size_t i = 0; i < indices.size(); ++i) prepared[i] = prepare_sample(source, indices[i], epoch, resolution, cfg);
    } else {
        std::vector<std::thread> threads;
        std::vector<std::exception_ptr> errors(n_threads);
        for (std::size_t t = 0; t < n_threads; ++t) {
            threads.emplace_back([&, t] {
                try {
                    for (std::size_t i = t; i < indices.size(); i += n_threads) {
                        prepared[i] = prepare_sample(source, indices[i], epoch, resolution, cfg);
                    }
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
        for (auto& th : threads) th.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    PretrainBatch b;
    b.indices = indices;
    std::vector<torch::Tensor> v1, v2;
    for (auto& p : prepared) {
        v1.push_back(p.v1);
        v2.push_back(p.v2);
    }
    b.view1 = torch::stack(v1);
    b.view2 = torch::stack(v2);
    const std::size_t n_masks = prepared.front().masks.size();
    for (std::size_t t = 0; t < n_masks; ++t) {
        std::vector<PairMask> per_sample;
        for (auto& p : prepared) per_sample.push_back(p.masks[t]);
        b.masks.push_back(PairMask::stack(per_sample));
    }
    return b;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(epoch), 0x5ff1e});
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

StepLosses pretrain_losses(PretrainNet& net, const PretrainBatch& batch, const PretrainConfig& cfg) {
    const auto o1 = net->encoder(batch.view1);
    const auto o2 = net->encoder(batch.view2);
    const auto p1 = grid_tokens(net->pixel_projector(o1.grid));
    const auto p2 = grid_tokens(net->pixel_projector(o2.grid));
    const auto k1 = net->predictor(net->instance_projector(o1.pooled));
    const auto k2 = net->predictor(net->instance_projector(o2.pooled));

    torch::Tensor t1, t2, q1, q2;
    {
        torch::NoGradGuard no_grad;
        const auto m1 = net->momentum_encoder(batch.view1);
        const auto m2 = net->momentum_encoder(batch.view2);
        t1 = grid_tokens(net->momentum_pixel_projector(m1.grid));
        t2 = grid_tokens(net->momentum_pixel_projector(m2.grid));
        q1 = net->momentum_instance_projector(m1.pooled);
        q2 = net->momentum_instance_projector(m2.pooled);
    }

    StepLosses out;
    out.pixel_empty = true;
    for (const auto& m : batch.masks) {
        if (m.a.logical_and(m.valid).any().item<bool>() || m.a.logical_and(m.valid_reverse).any().item<bool>()) {
            out.pixel_empty = false;
        }
    }
    out.l_pix = pixel_loss_cross(p1, t2, p2, t1, batch.masks, cfg.tau);
    out.l_ins = instance_loss({q1, q2, k1, k2});
    out.loss = total_loss(out.l_pix, out.l_ins, cfg.alpha);
    return out;
}

Archive pretrain_checkpoint(const PretrainNet& net, const Optimizer& opt, const PretrainConfig& cfg,
                            const TrainLog& log, int epochs_done, std::int64_t step) {
    Archive a;
    a.meta["kind"] = "pretrain";
    a.meta["config"] = to_json(cfg);
    a.meta["epochs_done"] = epochs_done;
    a.meta["step"] = step;
    a.meta["log"] = json::array();
    for (const auto& r : log.epochs) a.meta["log"].push_back(to_json(r));
    save_module(a, "net/", *net);
    opt.save(a, "optim/");
    return a;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
    out << text;
}

}  // namespace

PretrainResult pretrain(const PretrainConfig& cfg, const SampleSource& source, const PretrainOptions& opts) {
    validate(cfg);
    const std::size_t n = source.size();
    if (n == 0) throw Error(ErrorKind::InvalidSpec, "pretraining dataset is empty");

    torch::manual_seed(cfg.seed);
    PretrainResult res;
    res.net = PretrainNet(cfg.net);
    res.net->train();
    Optimizer opt(res.net->online_parameters(), cfg.optimizer);

    const auto batches = static_cast<std::int64_t>((n + cfg.batch_size - 1) / cfg.batch_size);
    const std::int64_t total_steps = batches * cfg.epochs;

    if (opts.resume) {
        const Archive& ck = *opts.resume;
        if (ck.meta.value("kind", "") != "pretrain") throw Error(ErrorKind::Schema, "resume archive is not a pretrain checkpoint");
        load_module(ck, "net/", *res.net);
        opt.load(ck, "optim/");
        res.epochs_done = ck.meta.at("epochs_done");
        res.step = ck.meta.at("step");
        for (const auto& r : ck.meta.at("log")) res.log.epochs.push_back(epoch_record_from_json(r));
    }

    auto slice = [&](const std::vector<std::size_t>& order, std::int64_t b) {
        const auto lo = static_cast<std::size_t>(b) * cfg.batch_size;
        const auto hi = std::min(n, lo + cfg.batch_size);
        return std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                        order.begin() + static_cast<std::ptrdiff_t>(hi));
    };

    for (int epoch = res.epochs_done; epoch < cfg.epochs; ++epoch) {
        if (opts.stop_after >= 0 && epoch >= opts.stop_after) break;
        const auto t0 = std::chrono::steady_clock::now();
        const int resolution = resolution_for_epoch(epoch, cfg.epochs, cfg.low_res, cfg.high_res, cfg.high_frac);
        const auto order = epoch_order(n, cfg.seed, epoch);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.resolution = resolution;
        std::future<PretrainBatch> next;
        auto launch = [&](std::int64_t b) {
            return std::async(cfg.workers > 0 ? std::launch::async : std::launch::deferred,
                              [&, b] { return prepare_batch(source, slice(order, b), epoch, resolution, cfg); });
        };
        next = launch(0);
        for (std::int64_t b = 0; b < batches; ++b) {
            PretrainBatch batch = next.get();
            if (b + 1 < batches) next = launch(b + 1);

            const double lr = lr_for_step(res.step, total_steps, cfg.base_lr, cfg.final_lr, cfg.warmup_frac);
            opt.set_lr(lr);
            opt.zero_grad();
            auto losses = pretrain_losses(res.net, batch, cfg);
            const double loss_v = losses.loss.item<double>();
            if (!std::isfinite(loss_v)) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << " batch " << b << " (step " << res.step
                    << "; l_pix=" << losses.l_pix.item<double>() << " l_ins=" << losses.l_ins.item<double>()
                    << "; sample indices";
                for (auto i : batch.indices) msg << ' ' << i;
                msg << ")";
                throw Error(ErrorKind::NonFinite, msg.str());
            }
            losses.loss.backward();
            opt.step();
            res.net->momentum_update(cfg.momentum);

            rec.l_pix += losses.l_pix.item<double>();
            rec.l_ins += losses.l_ins.item<double>();
            rec.loss += loss_v;
            rec.lr = lr;
            rec.empty_pixel_batches += losses.pixel_empty ? 1 : 0;
            ++rec.batches;
            ++res.step;
        }
        rec.l_pix /= rec.batches;
        rec.l_ins /= rec.batches;
        rec.loss /= rec.batches;
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.log.epochs.push_back(rec);
        res.epochs_done = epoch + 1;
        if (opts.on_epoch) opts.on_epoch(rec);
        if (!opts.checkpoint.empty()) {
            write_archive(opts.checkpoint, pretrain_checkpoint(res.net, opt, cfg, res.log, res.epochs_done, res.step));
        }
        if (!opts.log_path.empty()) write_text(opts.log_path, res.log.to_jsonl());
    }
    res.checkpoint = pretrain_checkpoint(res.net, opt, cfg, res.log, res.epochs_done, res.step);
    return res;
}

Archive encoder_archive(const Encoder& encoder) {
    Archive a;
    a.meta["kind"] = "encoder";
    a.meta["encoder"] = to_json(encoder->config());
    save_module(a, "encoder/", *encoder);
    return a;
}

EncoderConfig archived_encoder_config(const Archive& archive) {
    const std::string kind = archive.meta.value("kind", "");
    if (kind == "encoder") return encoder_config_from_json(archive.meta.at("encoder"));
    if (kind == "pretrain") return encoder_config_from_json(archive.meta.at("config").at("encoder"));
    throw Error(ErrorKind::Schema, "archive of kind '" + kind + "' does not contain an encoder");
}

Archive export_encoder(const Archive& checkpoint) {
    const EncoderConfig cfg = archived_encoder_config(checkpoint);
    Encoder enc(cfg);
    load_module(checkpoint, checkpoint.meta.at("kind") == "pretrain" ? "net/encoder." : "encoder/", *enc);
    return encoder_archive(enc);
}

Encoder load_encoder(const Archive& archive) {
    Encoder enc(archived_encoder_config(archive));
    load_module(archive, archive.meta.at("kind") == "pretrain" ? "net/encoder." : "encoder/", *enc);
    return enc;
}

// ---------------------------------------------------------------------------
// Behavior cloning

const char* to_string(EncoderMode mode) {
    return mode == EncoderMode::Frozen ? "frozen" : "finetune";
}

EncoderMode encoder_mode_from_string(const std::string& s) {
    if (s == "frozen") return EncoderMode::Frozen;
    if (s == "finetune") return EncoderMode::Finetune;
    throw Error(ErrorKind::Config, "unknown encoder mode '" + s + "' (expected frozen or finetune)");
}

void validate(const BcConfig& cfg) {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, m); };
    if (cfg.epochs < 0) fail("bc epochs must be >= 0");
    if (cfg.batch_size < 1) fail("bc batch_size must be >= 1");
    if (cfg.eval_every < 1) fail("eval_every must be >= 1");
    if (cfg.eval_episodes < 1) fail("eval_episodes must be >= 1");
    if (!(cfg.lr >= 0)) fail("bc lr must be >= 0");
    if (cfg.attention_heads < 1 || cfg.attention_dim % cfg.attention_heads != 0) {
        fail("attention_dim must be divisible by attention_heads");
    }
}

json to_json(const BcConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"final_lr", c.final_lr},
            {"warmup_frac", c.warmup_frac},
            {"weight_decay", c.weight_decay},
            {"eval_every", c.eval_every},
            {"eval_episodes", c.eval_episodes},
            {"eval_seed", c.eval_seed},
            {"seed", c.seed},
            {"mode", to_string(c.mode)},
            {"use_proprio", c.use_proprio},
            {"attention_dim", c.attention_dim},
            {"attention_heads", c.attention_heads},
            {"encoder", to_json(c.encoder)}};
}

json to_json(const PolicyNetConfig& c) {
    json schema = json::array();
    for (const auto& s : c.schema) schema.push_back({{"name", s.name}, {"dim", s.dim}});
    return {{"encoder", to_json(c.encoder)},
            {"schema", schema},
            {"goal_dim", c.goal_dim},
            {"action_dim", c.action_dim},
            {"attention_dim", c.attention_dim},
            {"attention_heads", c.attention_heads},
            {"proprio_hidden", c.proprio_hidden},
            {"proprio_out", c.proprio_out},
            {"use_proprio", c.use_proprio}};
}

PolicyNetConfig policy_config_from_json(const json& j) {
    PolicyNetConfig c;
    c.encoder = encoder_config_from_json(j.at("encoder"));
    for (const auto& s : j.at("schema")) c.schema.push_back({s.at("name"), s.at("dim")});
    c.goal_dim = j.at("goal_dim");
    c.action_dim = j.at("action_dim");
    c.attention_dim = j.at("attention_dim");
    c.attention_heads = j.at("attention_heads");
    c.proprio_hidden = j.at("proprio_hidden");
    c.proprio_out = j.at("proprio_out");
    c.use_proprio = j.at("use_proprio");
    return c;
}

BcData bc_data(const DemoSet& demos, const ProprioSchema& schema, double action_scale) {
    if (demos.demos.empty()) throw Error(ErrorKind::InvalidSpec, "no demonstrations");
    if (demos.schema != schema) throw Error(ErrorKind::Schema, "demo proprioception schema differs from the policy schema");
    const auto n = static_cast<std::int64_t>(demos.total_steps());
    if (n == 0) throw Error(ErrorKind::InvalidSpec, "demonstrations contain no steps");
    const int res = demos.env.resolution;

    BcData d;
    d.rgb = torch::empty({n, res, res, 3}, torch::kUInt8);
    d.goal = torch::empty({n, 2});
    d.action = torch::empty({n, 3});
    std::vector<ProprioState> states;
    states.reserve(static_cast<std::size_t>(n));
    auto* px = d.rgb.data_ptr<std::uint8_t>();
    auto goal = d.goal.accessor<float, 2>();
    auto act = d.action.accessor<float, 2>();
    std::int64_t i = 0;
    for (const auto& demo : demos.demos) {
        for (const auto& st : demo.steps) {
            if (st.rgb.height != res || st.rgb.width != res || st.rgb.channels != 3) {
                throw Error(ErrorKind::ShapeMismatch, "demo observation has the wrong resolution");
            }
            for (float v : st.rgb.data) *px++ = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            goal[i][0] = st.goal[0];
            goal[i][1] = st.goal[1];
            act[i][0] = static_cast<float>(st.action.dx / action_scale);
            act[i][1] = static_cast<float>(st.action.dy / action_scale);
            act[i][2] = static_cast<float>(st.action.grip);
            states.push_back(st.proprio);
            ++i;
        }
    }
    d.proprio = proprio_batch(states, schema);
    return d;
}

torch::Tensor rgb_batch(const torch::Tensor& rgb_u8) {
    return rgb_u8.permute({0, 3, 1, 2}).to(torch::kFloat32).div(255.0).contiguous();
}

torch::Tensor rgb_batch(const std::vector<Observation>& obs) {
    std::vector<torch::Tensor> parts;
    parts.reserve(obs.size());
    for (const auto& o : obs) parts.push_back(image_tensor(o.rgb));
    return torch::stack(parts);
}

NetPolicy::NetPolicy(PolicyNet net, double action_scale, EnvConfig env)
    : net_(std::move(net)), action_scale_(action_scale), env_(env) {}

std::vector<Action> NetPolicy::act(const std::vector<Observation>& obs, const std::vector<EnvState>&) {
    torch::NoGradGuard no_grad;
    net_->eval();
    std::vector<ProprioState> states;
    auto goal = torch::empty({static_cast<std::int64_t>(obs.size()), 2});
    for (std::size_t i = 0; i < obs.size(); ++i) {
        states.push_back(obs[i].proprio);
        goal[static_cast<std::int64_t>(i)][0] = obs[i].goal[0];
        goal[static_cast<std::int64_t>(i)][1] = obs[i].goal[1];
    }
    const auto out = net_->forward(rgb_batch(obs), proprio_batch(states, net_->config().schema), goal)
                         .to(torch::kFloat64)
                         .contiguous();
    auto acc = out.accessor<double, 2>();
    std::vector<Action> actions;
    for (std::int64_t i = 0; i < out.size(0); ++i) {
        actions.push_back(clip_action({acc[i][0] * action_scale_, acc[i][1] * action_scale_, acc[i][2]}, env_));
    }
    return actions;
}

namespace {

ProprioBatch index_proprio(const ProprioBatch& p, const torch::Tensor& idx) {
    ProprioBatch out;
    for (const auto& [name, t] : p) out.emplace_back(name, t.index_select(0, idx));
    return out;
}

std::vector<torch::Tensor> clone_state(const torch::nn::Module& m) {
    std::vector<torch::Tensor> out;
    for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
    for (const auto& b : m.buffers()) out.push_back(b.detach().clone());
    return out;
}

void restore_state(torch::nn::Module& m, const std::vector<torch::Tensor>& state) {
    torch::NoGradGuard no_grad;
    std::size_t i = 0;
    for (auto& p : m.parameters()) p.copy_(state[i++]);
    for (auto& b : m.buffers()) b.copy_(state[i++]);
}

}  // namespace

BcResult bc_train(const BcConfig& cfg, const DemoSet& demos, const Archive* encoder, const BcOptions& opts) {
    validate(cfg);
    BcResult res;
    res.env = demos.env;
    res.action_scale = demos.env.max_delta;

    PolicyNetConfig pc;
    pc.encoder = encoder ? archived_encoder_config(*encoder) : cfg.encoder;
    pc.schema = env_proprio_schema();
    pc.attention_dim = cfg.attention_dim;
    pc.attention_heads = cfg.attention_heads;
    pc.use_proprio = cfg.use_proprio;
    if (demos.env.resolution % pc.encoder.stride() != 0) {
        throw Error(ErrorKind::Config, "environment resolution is not a multiple of the encoder stride");
    }
    const BcData data = bc_data(demos, pc.schema, res.action_scale);

    torch::manual_seed(cfg.seed);
    PolicyNet net(pc);
    if (encoder) load_module(*encoder, encoder->meta.at("kind") == "pretrain" ? "net/encoder." : "encoder/", *net->encoder);
    const bool frozen = encoder && cfg.mode == EncoderMode::Frozen;

    std::vector<torch::Tensor> params;
    for (const auto& item : net->named_parameters()) {
        const bool is_encoder = item.key().rfind("encoder.", 0) == 0;
        if (frozen && is_encoder) {
            item.value().set_requires_grad(false);
        } else {
            params.push_back(item.value());
        }
    }
    OptimizerConfig oc;
    oc.weight_decay = cfg.weight_decay;
    Optimizer opt(params, oc);

    // With a frozen encoder the features never change: compute them once.
    const std::int64_t n = data.size();
    torch::Tensor cached_grid;
    if (frozen) {
        torch::NoGradGuard no_grad;
        net->encoder->eval();
        std::vector<torch::Tensor> parts;
        for (std::int64_t lo = 0; lo < n; lo += 128) {
            const auto hi = std::min(n, lo + 128);
            parts.push_back(net->encoder(rgb_batch(data.rgb.slice(0, lo, hi))).grid);
        }
        cached_grid = torch::cat(parts);
    }

    auto evaluate = [&](int epoch) {
        NetPolicy policy(net, res.action_scale, res.env);
        const EvalResult er = evaluate_policy(policy, cfg.eval_episodes, cfg.eval_seed, res.env);
        BcEvalRecord rec{epoch, er.success_rate};
        res.evals.push_back(rec);
        if (opts.on_eval) opts.on_eval(rec);
        return er.success_rate;
    };

    std::vector<torch::Tensor> best_state = clone_state(*net);
    double best = -1;
    auto consider = [&](int epoch) {
        const double rate = evaluate(epoch);
        if (rate > best) {
            best = rate;
            res.best_epoch = epoch;
            best_state = clone_state(*net);
        }
    };

    const std::int64_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::int64_t total_steps = std::max<std::int64_t>(1, batches * cfg.epochs);
    std::int64_t step = 0;
    if (cfg.epochs == 0) consider(0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        net->train();
        const auto order_v = epoch_order(static_cast<std::size_t>(n), cfg.seed, epoch);
        std::vector<std::int64_t> order(order_v.begin(), order_v.end());
        const auto order_t = torch::tensor(order, torch::kInt64);
        BcEpochRecord rec;
        rec.epoch = epoch;
        for (std::int64_t b = 0; b < batches; ++b) {
            const auto idx = order_t.slice(0, b * cfg.batch_size, std::min(n, (b + 1) * cfg.batch_size));
            const double lr = lr_for_step(step, total_steps, cfg.lr, cfg.final_lr, cfg.warmup_frac);
            opt.set_lr(lr);
            opt.zero_grad();
            const auto proprio = index_proprio(data.proprio, idx);
            const auto goal = data.goal.index_select(0, idx);
            torch::Tensor pred;
            if (frozen) {
                const auto grid = cached_grid.index_select(0, idx);
                pred = net->forward_features({grid, grid.mean({2, 3})}, proprio, goal);
            } else {
                pred = net->forward(rgb_batch(data.rgb.index_select(0, idx)), proprio, goal);
            }
            const auto loss = bc_loss(pred, data.action.index_select(0, idx));
            const double loss_v = loss.item<double>();
            if (!std::isfinite(loss_v)) {
                throw Error(ErrorKind::NonFinite, "non-finite bc loss at epoch " + std::to_string(epoch) + " batch " +
                                                      std::to_string(b));
            }
            loss.backward();
            opt.step();
            rec.loss += loss_v * static_cast<double>(idx.size(0));
            rec.lr = lr;
            ++step;
        }
        rec.loss /= static_cast<double>(n);
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.log.push_back(rec);
        if (opts.on_epoch) opts.on_epoch(rec);
        if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) consider(epoch + 1);
    }
    restore_state(*net, best_state);
    for (auto& p : net->parameters()) p.set_requires_grad(true);
    res.best_success = best;
    res.policy = net;
    return res;
}

Archive policy_archive(const BcResult& result) {
    Archive a;
    a.meta["kind"] = "policy";
    a.meta["net"] = to_json(result.policy->config());
    a.meta["env"] = to_json(result.env);
    a.meta["action_scale"] = result.action_scale;
    a.meta["best_success"] = result.best_success;
    a.meta["best_epoch"] = result.best_epoch;
    a.meta["evals"] = json::array();
    for (const auto& e : result.evals) a.meta["evals"].push_back({{"epoch", e.epoch}, {"success_rate", e.success_rate}});
    save_module(a, "policy/", *result.policy);
    return a;
}

LoadedPolicy load_policy(const Archive& archive) {
    if (archive.meta.value("kind", "") != "policy") throw Error(ErrorKind::Schema, "archive is not a policy checkpoint");
    LoadedPolicy p;
    p.net = PolicyNet(policy_config_from_json(archive.meta.at("net")));
    load_module(archive, "policy/", *p.net);
    p.action_scale = archive.meta.at("action_scale");
    p.env = env_config_from_json(archive.meta.at("env"));
    return p;
}

bool same_parameters(const torch::nn::Module& a, const torch::nn::Module& b) {
    const auto pa = a.named_parameters(true), pb = b.named_parameters(true);
    const auto ba = a.named_buffers(true), bb = b.named_buffers(true);
    if (pa.size() != pb.size() || ba.size() != bb.size()) return false;
    auto same = [](const torch::Tensor& x, const torch::Tensor& y) {
        return x.sizes() == y.sizes() && x.scalar_type() == y.scalar_type() && torch::equal(x, y);
    };
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].key() != pb[i].key() || !same(pa[i].value(), pb[i].value())) return false;
    }
    for (std::size_t i = 0; i < ba.size(); ++i) {
        if (ba[i].key() != bb[i].key() || !same(ba[i].value(), bb[i].value())) return false;
    }
    return true;
}

}  // namespace dpr
