#include "prefmod/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "prefmod/core/error.hpp"
#include "prefmod/core/ops.hpp"
#include "prefmod/core/rng.hpp"
#include "prefmod/model/premier.hpp"
#include "prefmod/synth/render.hpp"
#include "prefmod/train/batching.hpp"

namespace prefmod::train {

namespace {

constexpr std::uint64_t kStage0 = 0, kStage1 = 1, kStage2 = 2;

struct StepOutput {
    Var loss;
    MetricRecord record;
};

using StepFn = std::function<StepOutput(std::uint64_t step, Binder& w)>;

bool grads_finite(const std::map<std::string, Tensor>& grads) {
    return std::all_of(grads.begin(), grads.end(), [](const auto& kv) { return kv.second.all_finite(); });
}

Checkpoint run_loop(Checkpoint state, std::uint64_t total_steps, const Binder::Predicate& trainable,
                    const TrainOptions& opts, const StepFn& step_fn) {
    const std::uint64_t end = opts.stop_at ? std::min(*opts.stop_at, total_steps) : total_steps;
    while (state.step < end) {
        const std::uint64_t step = state.step;
        std::map<std::string, Tensor> grads;
        MetricRecord rec;
        try {
            Tape tape;
            Binder w(tape, state.params, trainable);
            StepOutput out = step_fn(step, w);
            rec = out.record;
            rec.step = step;
            rec.loss = out.loss.value().item();
            if (!std::isfinite(rec.loss)) throw NumericalError("loss is not finite");
            grads = w.gradients(tape.backward(out.loss));
            if (!grads_finite(grads)) throw NumericalError("gradient is not finite");
        } catch (const NumericalError& e) {
            throw DivergenceError(state.stage + " diverged at step " + std::to_string(step) + ": " + e.what() +
                                      " (returning the state after step " + std::to_string(step) + ")",
                                  state);
        }
        adam_step(state.params, grads, state.optimizer);
        ++state.step;
        state.history.push_back(rec);
        if (opts.on_step) opts.on_step(rec);
    }
    return state;
}

Checkpoint begin(const std::string& stage, const PipelineConfig& cfg, const TrainOptions& opts, double lr) {
    if (opts.resume) {
        const Checkpoint& r = *opts.resume;
        if (r.stage != stage) throw ConfigError("cannot resume " + stage + " from a " + r.stage + " checkpoint");
        if (r.fingerprint != cfg.fingerprint()) {
            throw ConfigError("resume checkpoint was produced by a different config (fingerprint " +
                              r.fingerprint.substr(0, 12) + " vs " + cfg.fingerprint().substr(0, 12) + ")");
        }
        return r;
    }
    Checkpoint c;
    c.stage = stage;
    c.fingerprint = cfg.fingerprint();
    c.config = cfg.to_json();
    c.seed = cfg.seed;
    c.optimizer.hyper.learning_rate = lr;
    return c;
}

std::vector<std::size_t> train_sample_indices(const synth::Dataset& data) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        if (data.user(data.samples[i].user_id).split == synth::Split::Train) out.push_back(i);
    }
    if (out.empty()) throw DataError("dataset has no training samples");
    return out;
}

Var flow_step(Binder& w, const model::BackboneConfig& bb, std::span<const synth::Prompt> prompts, const Tensor& z0,
              Rng& rng, const model::DeltaSet* deltas) {
    const std::size_t b = prompts.size();
    std::vector<double> t(b);
    for (double& v : t) v = rng.uniform();
    const Tensor z1 = rng.normal_tensor(z0.shape());
    const model::TextEncoding text = model::encode_prompts(w, bb, prompts);
    const Var z_t = w.tape().constant(model::interpolate(z0, z1, t));
    const Var v = model::velocity(w, bb, z_t, text, t, deltas);
    return model::flow_loss(v, z0, z1);
}

// Zeroes the delta rows of dropped samples.
Var apply_mask(const Var& deltas, const std::vector<bool>& keep) {
    const std::size_t rows = deltas.shape()[0], cols = deltas.shape()[1];
    std::vector<double> m(rows * cols, 1.0);
    for (std::size_t r = 0; r < rows; ++r) {
        if (!keep[r / model::kTextTokens]) std::fill_n(m.begin() + r * cols, cols, 0.0);
    }
    return ops::mul(deltas, deltas.tape()->constant(Tensor({rows, cols}, std::move(m))));
}

}  // namespace

Tensor stack_images(std::span<const Tensor> images) {
    if (images.empty()) throw ShapeError("stack_images: no images");
    Shape shape{images.size()};
    for (std::size_t d : images[0].shape()) shape.push_back(d);
    std::vector<double> data;
    data.reserve(shape_numel(shape));
    for (const Tensor& im : images) {
        if (im.shape() != images[0].shape()) throw ShapeError("stack_images: mixed image shapes");
        data.insert(data.end(), im.data().begin(), im.data().end());
    }
    return Tensor(std::move(shape), std::move(data));
}

std::size_t bank_index(const Checkpoint& ckpt, std::uint64_t user_id) {
    const auto it = std::find(ckpt.bank_users.begin(), ckpt.bank_users.end(), user_id);
    if (it == ckpt.bank_users.end()) throw DataError("user " + std::to_string(user_id) + " has no bank embedding");
    return static_cast<std::size_t>(it - ckpt.bank_users.begin());
}

Tensor bank_embedding(const Checkpoint& ckpt, const model::AdapterConfig& cfg, std::uint64_t user_id) {
    const Tensor& bank = ckpt.params.get(kBankName);
    const std::size_t k = bank_index(ckpt, user_id);
    const std::size_t width = cfg.tokens * cfg.d_user;
    std::vector<double> rows(bank.data().begin() + k * width, bank.data().begin() + (k + 1) * width);
    return Tensor({cfg.tokens, cfg.d_user}, std::move(rows));
}

Checkpoint pretrain_backbone(const synth::Dataset& data, const PipelineConfig& cfg, const TrainOptions& opts) {
    cfg.validate();
    const auto& bb = cfg.model.backbone;
    const Stage0Config& sc = cfg.stage0;
    Checkpoint state = begin("stage0", cfg, opts, sc.learning_rate);
    if (!opts.resume) state.params = model::init_backbone(bb, derive_seed({cfg.seed, 0xB0}));

    const std::vector<std::size_t> pool = train_sample_indices(data);
    std::vector<std::uint64_t> ids;
    for (std::size_t i : pool) ids.push_back(data.samples[i].user_id);
    const std::vector<synth::Prompt>& prompt_list =
        data.config.prompts.empty() ? synth::Prompt::all_content() : data.config.prompts;

    const StepFn fn = [&](std::uint64_t step, Binder& w) {
        const Batch batch = batch_for_step(ids, sc.batch_size, false, derive_seed({cfg.seed, kStage0}), step);
        Rng rng(derive_seed({cfg.seed, kStage0, step}));
        std::vector<synth::Prompt> prompts;
        std::vector<Tensor> images;
        for (std::size_t k : batch) {
            if (rng.bernoulli(sc.random_style_fraction)) {
                const auto& p = prompt_list[static_cast<std::size_t>(rng.integer(0, prompt_list.size() - 1))];
                const std::uint64_t style_seed = rng.engine()();
                const std::uint64_t render_seed = rng.engine()();
                prompts.push_back(p);
                images.push_back(synth::render(p, synth::sample_style(style_seed), render_seed, bb.image_size));
            } else {
                const synth::Sample& s = data.samples[pool[k]];
                prompts.push_back(s.prompt);
                images.push_back(s.image);
            }
        }
        StepOutput out;
        out.loss = flow_step(w, bb, prompts, stack_images(images), rng, nullptr);
        out.record.flow = out.loss.value().item();
        return out;
    };
    return run_loop(std::move(state), sc.steps, [](const std::string& n) { return n.rfind("bb.", 0) == 0; }, opts, fn);
}

Checkpoint init_stage1(const synth::Dataset& data, const Checkpoint& base, const PipelineConfig& cfg) {
    if (base.stage != "stage0") throw DataError("stage 1 needs a stage-0 checkpoint, got '" + base.stage + "'");
    const auto users = data.user_ids(synth::Split::Train);
    if (users.size() < 2) throw DataError("stage 1 needs at least two training users");
    Checkpoint c;
    c.stage = "stage1";
    c.fingerprint = cfg.fingerprint();
    c.config = cfg.to_json();
    c.seed = cfg.seed;
    c.optimizer.hyper.learning_rate = cfg.stage1.learning_rate;
    c.bank_users = users;
    for (const auto& [name, t] : base.params.tensors()) {
        if (name.rfind("bb.", 0) == 0) c.params.set(name, t);
    }
    c.params.merge(model::init_adapters(cfg.model.adapters, cfg.model.backbone, derive_seed({cfg.seed, 0xAD})));
    c.params.set(kBankName, model::init_user_bank(cfg.model.adapters, users.size(), derive_seed({cfg.seed, 0xBA})));
    return c;
}

Checkpoint train_stage1(const synth::Dataset& data, const Checkpoint& base, const PipelineConfig& cfg,
                        const TrainOptions& opts) {
    cfg.validate();
    const model::ModelSpec& spec = cfg.model;
    const Stage1Config& sc = cfg.stage1;
    Checkpoint state;
    if (opts.resume) {
        state = begin("stage1", cfg, opts, sc.learning_rate);
    } else {
        state = init_stage1(data, base, cfg);
    }

    const std::vector<std::size_t> pool = train_sample_indices(data);
    std::vector<std::uint64_t> ids;
    for (std::size_t i : pool) ids.push_back(data.samples[i].user_id);
    std::map<std::uint64_t, std::size_t> row_of;
    for (std::uint64_t u : std::set<std::uint64_t>(ids.begin(), ids.end())) row_of[u] = bank_index(state, u);

    const StepFn fn = [&](std::uint64_t step, Binder& w) {
        const Batch batch = batch_for_step(ids, sc.batch_size, true, derive_seed({cfg.seed, kStage1}), step);
        Rng rng(derive_seed({cfg.seed, kStage1, step}));
        std::vector<synth::Prompt> prompts;
        std::vector<Tensor> images;
        std::vector<std::size_t> rows;
        std::set<std::uint64_t> distinct;
        std::vector<bool> keep;
        bool any_dropped = false;
        for (std::size_t k : batch) {
            const synth::Sample& s = data.samples[pool[k]];
            prompts.push_back(s.prompt);
            images.push_back(s.image);
            rows.push_back(row_of.at(s.user_id));
            distinct.insert(s.user_id);
            keep.push_back(!rng.bernoulli(sc.dropout));
            any_dropped |= !keep.back();
        }
        const Var bank = w(kBankName);
        model::DeltaSet deltas = model::preference_deltas(w, spec, model::select_users(bank, spec.adapters, rows), prompts);
        if (any_dropped) {
            deltas.shared = apply_mask(deltas.shared, keep);
            deltas.distinct = apply_mask(deltas.distinct, keep);
        }
        const Var flow = flow_step(w, spec.backbone, prompts, stack_images(images), rng, &deltas);

        std::vector<std::uint64_t> anchor_ids(distinct.begin(), distinct.end());
        std::vector<std::size_t> anchor_rows;
        for (std::uint64_t u : anchor_ids) anchor_rows.push_back(row_of.at(u));
        model::AnchorDeltas anchors =
            model::anchor_deltas(w, spec, model::select_users(bank, spec.adapters, anchor_rows), sc.flatten);
        if (sc.dispersion_radius > 0.0) {
            const double r = sc.dispersion_radius;
            anchors.shared = ops::scale(ops::normalize_rows(anchors.shared), r);
            anchors.distinct = ops::scale(ops::normalize_rows(anchors.distinct), r);
        }
        const Var zero = w.tape().constant(Tensor::scalar(0.0));
        const Var ds = spec.conditioning.use_shared ? model::dispersion_loss(anchors.shared, anchor_ids) : zero;
        const Var dd = spec.conditioning.use_distinct ? model::dispersion_loss(anchors.distinct, anchor_ids) : zero;

        StepOutput out;
        out.loss = model::total_loss(flow, ds, dd, sc.loss_weights);
        out.record.flow = flow.value().item();
        out.record.disp_shared = ds.value().item();
        out.record.disp_distinct = dd.value().item();
        return out;
    };
    const auto trainable = [](const std::string& n) { return n.rfind("ad.", 0) == 0 || n == kBankName; };
    return run_loop(std::move(state), sc.steps, trainable, opts, fn);
}

FittedUser train_new_user(std::span<const synth::Sample> history, const Checkpoint& stage1, const PipelineConfig& cfg,
                          FitMode mode, std::uint64_t seed) {
    if (history.empty()) throw DataError("train-new-user needs at least one history sample");
    if (stage1.stage != "stage1") throw DataError("new-user fitting needs a stage-1 checkpoint, got '" + stage1.stage + "'");
    const model::ModelSpec& spec = cfg.model;
    const model::AdapterConfig& ac = spec.adapters;
    const Stage2Config& sc = cfg.stage2;

    Checkpoint state;
    state.stage = "stage2";
    state.seed = seed;
    state.optimizer.hyper.learning_rate = sc.learning_rate;
    state.params = stage1.params;
    const Tensor& bank = stage1.params.get(kBankName);
    const std::size_t k_total = stage1.bank_users.size();
    const std::string free_name = mode == FitMode::LinearCombination ? "user.alpha" : "user.new";
    if (mode == FitMode::LinearCombination) {
        std::size_t k = sc.bank_subset == 0 ? k_total : std::min(sc.bank_subset, k_total);
        std::vector<std::size_t> pick(k_total);
        for (std::size_t i = 0; i < k_total; ++i) pick[i] = i;
        if (k < k_total) {
            Rng r(derive_seed({seed, 0x5B5E7}));
            std::shuffle(pick.begin(), pick.end(), r.engine());
            pick.resize(k);
            std::sort(pick.begin(), pick.end());
        }
        const std::size_t width = ac.tokens * ac.d_user;
        std::vector<double> basis;
        for (std::size_t i : pick) basis.insert(basis.end(), bank.data().begin() + i * width, bank.data().begin() + (i + 1) * width);
        state.params.set("user.basis", Tensor({k * ac.tokens, ac.d_user}, std::move(basis)));
        state.params.set(free_name, model::uniform_alpha(k));
    } else {
        Rng r(derive_seed({seed, 0x4E57}));
        state.params.set(free_name, r.normal_tensor({ac.tokens, ac.d_user}, ac.embedding_std));
    }

    auto embedding_of = [&](Binder& w) {
        return mode == FitMode::LinearCombination ? model::combine(w("user.basis"), w(free_name), ac) : w(free_name);
    };
    std::vector<std::uint64_t> ids(history.size(), 0);
    const StepFn fn = [&](std::uint64_t step, Binder& w) {
        const Batch batch = batch_for_step(ids, std::min(sc.batch_size, history.size()), false,
                                           derive_seed({seed, kStage2}), step);
        Rng rng(derive_seed({seed, kStage2, step}));
        std::vector<synth::Prompt> prompts;
        std::vector<Tensor> images;
        for (std::size_t k : batch) {
            prompts.push_back(history[k].prompt);
            images.push_back(history[k].image);
        }
        const Var e = embedding_of(w);
        const std::vector<std::size_t> zeros(batch.size(), 0);
        const model::DeltaSet deltas = model::preference_deltas(w, spec, model::select_users(e, ac, zeros), prompts);
        StepOutput out;
        out.loss = flow_step(w, spec.backbone, prompts, stack_images(images), rng, &deltas);
        out.record.flow = out.loss.value().item();
        return out;
    };
    state = run_loop(std::move(state), sc.steps, [&](const std::string& n) { return n == free_name; }, {}, fn);

    FittedUser fitted;
    fitted.history = state.history;
    Tape tape;
    Binder w(tape, state.params);
    fitted.embedding = embedding_of(w).value();
    if (mode == FitMode::LinearCombination) fitted.alpha = state.params.get(free_name);
    return fitted;
}

}  // namespace prefmod::train
