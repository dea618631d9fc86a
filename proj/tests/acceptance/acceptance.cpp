// End-to-end acceptance run on the default configuration. Prints one
// PASS/FAIL line per criterion. Exits nonzero when the run cannot complete,
// or with --strict when any criterion fails.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "loss_check.hpp"
#include "op_cases.hpp"
#include "prefmod/core/rng.hpp"
#include "prefmod/eval/experiments.hpp"
#include "prefmod/model/backbone.hpp"
#include "prefmod/train/trainer.hpp"

using namespace prefmod;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    int id = 0;
    bool pass = false;
    std::string detail;
};

std::vector<Verdict> verdicts;

void report(int id, bool pass, const std::string& detail) {
    verdicts.push_back({id, pass, detail});
    std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

void progress(const std::string& msg) {
    std::fprintf(stderr, "%s\n", msg.c_str());
    std::fflush(stderr);
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Concatenated bytes of every file under dir, in sorted path order.
std::string tree_bytes(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::string out;
    for (const auto& f : files) out += fs::relative(f, dir).string() + '\n' + read_bytes(f);
    return out;
}

void gradients() {
    const auto t0 = Clock::now();
    const auto cfg = train::load_config("");
    double worst_op = 0.0, worst_full = 0.0;
    std::string where;
    std::size_t checked = 0;
    for (const auto& c : testing::op_cases()) {
        const auto r = testing::op_case_check(c, 20);
        checked += r.checked;
        if (r.max_rel_error > worst_op) {
            worst_op = r.max_rel_error;
            where = std::string(c.name) + " " + r.worst;
        }
    }
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto r = testing::full_loss_gradcheck(seed, cfg.stage1.dispersion_radius, 8);
        checked += r.checked;
        if (r.max_rel_error > worst_full) {
            worst_full = r.max_rel_error;
            if (worst_full > worst_op) where = "full loss " + r.worst;
        }
    }
    const double t = seconds_since(t0);
    const bool ok = worst_op <= 1e-5 && worst_full <= 1e-5 && t <= 120.0;
    report(1, ok,
           fmt("ops worst %.2e, full loss worst %.2e over 20 seeds (%zu entries), %.1f s", worst_op, worst_full, checked, t) +
               (ok ? "" : "; worst at " + where));
}

void equations() {
    const auto t0 = Clock::now();
    std::vector<std::string> failed;
    auto check = [&](bool ok, const char* what) {
        if (!ok) failed.push_back(what);
    };

    Rng rng(5);
    const Tensor z0 = rng.normal_tensor({2, 3, 4, 4}), z1 = rng.normal_tensor({2, 3, 4, 4});
    const Tensor at0 = model::interpolate(z0, z1, 0.0), at1 = model::interpolate(z0, z1, 1.0);
    check(bitwise_equal(at0, z0) && bitwise_equal(at1, z1), "interpolation endpoints");

    {
        Tape tape;
        std::vector<double> diff(z0.numel());
        for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = z1[i] - z0[i];
        const Var v = tape.constant(Tensor(z0.shape(), diff));
        check(model::flow_loss(v, z0, z1).value().item() == 0.0, "flow loss at exact prediction");
    }

    {
        const auto cfg = train::load_config("");
        const auto& bb = cfg.model.backbone;
        const ParamStore params = testing::randomized(model::init_backbone(bb, 9), 10, 0.2);
        Rng r(11);
        const Tensor z = r.normal_tensor({2, bb.channels, bb.image_size, bb.image_size});
        const std::vector<synth::Prompt> prompts = {synth::Prompt::parse("circle two left"),
                                                    synth::Prompt::parse("square one center")};
        const std::vector<double> t = {0.25, 0.75};
        Tape tape;
        Binder w(tape, params);
        const model::TextEncoding enc = model::encode_prompts(w, bb, prompts);
        const std::size_t rows = 2 * model::kTextTokens;
        const model::DeltaSet zero{tape.constant(Tensor::zeros({rows, bb.d_mod})),
                                   tape.constant(Tensor::zeros({rows, bb.blocks * bb.d_mod}))};
        const Var base = model::velocity(w, bb, tape.constant(z), enc, t);
        const Var with = model::velocity(w, bb, tape.constant(z), enc, t, &zero);
        check(bitwise_equal(base.value(), with.value()), "zero deltas reproduce the base forward");
    }

    auto disp = [](std::vector<std::vector<double>> rows, std::vector<std::uint64_t> ids) {
        Tape tape;
        const std::size_t d = rows[0].size();
        std::vector<double> flat;
        for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
        return model::dispersion_loss(tape.constant(Tensor({rows.size(), d}, flat)), ids).value().item();
    };
    check(std::abs(disp({{1, 2, 3}, {1, 2, 3}}, {0, 1})) <= 1e-12, "coincident pair");
    check(std::abs(disp({{0, 0, 0}, {3, 4, 0}}, {0, 1}) + 5.0) <= 1e-12, "single negative at distance d");
    for (std::size_t b : {3u, 5u, 8u}) {
        std::vector<std::vector<double>> rows(b, {0.5, -1.0});
        std::vector<std::uint64_t> ids(b);
        for (std::size_t i = 0; i < b; ++i) ids[i] = i;
        check(std::abs(disp(rows, ids) - std::log(static_cast<double>(b - 1))) <= 1e-12, "B coincident users");
    }

    const auto cfg = train::load_config("");
    check(cfg.stage1.loss_weights.shared == 0.1 && cfg.stage1.loss_weights.distinct == 0.1, "loss weights 0.1");

    const double t = seconds_since(t0);
    std::string detail = fmt("%zu failed checks, %.2f s", failed.size(), t);
    for (const auto& f : failed) detail += "; " + f;
    report(2, failed.empty() && t <= 10.0, detail);
}

void zero_start(const synth::Dataset& data, const train::Checkpoint& stage0, const train::PipelineConfig& cfg) {
    const train::Checkpoint fresh = train::init_stage1(data, stage0, cfg);
    Rng rng(derive_seed({cfg.seed, 0x2E40}));
    const auto& prompts = synth::Prompt::all_content();
    std::vector<sample::SampleRequest> with, without;
    for (int i = 0; i < 10; ++i) {
        const auto user = fresh.bank_users[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(fresh.bank_users.size()) - 1))];
        const auto& p = prompts[static_cast<std::size_t>(rng.integer(0, 35))];
        const std::uint64_t seed = rng.engine()();
        with.push_back({p, train::bank_embedding(fresh, cfg.model.adapters, user), seed, 1.0});
        without.push_back({p, std::nullopt, seed, 1.0});
    }
    const auto a = sample::sample_images(fresh.params, cfg.model, with, cfg.sampler);
    const auto b = sample::sample_images(stage0.params, cfg.model, without, cfg.sampler);
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) same += bitwise_equal(a[i], b[i]);
    report(3, same == a.size(), fmt("%zu of %zu (user, prompt, seed) triples bit-identical", same, a.size()));
}

struct VariantRun {
    eval::EvalReport report;
    train::Checkpoint stage1;
    double seconds = 0.0;
};

VariantRun run_variant(const synth::Dataset& data, const train::Checkpoint& stage0, const train::PipelineConfig& cfg,
                       eval::Variant v) {
    const auto t0 = Clock::now();
    const auto vcfg = eval::apply_variant(cfg, v);
    VariantRun run;
    run.stage1 = train::train_stage1(data, stage0, vcfg);
    run.report = eval::evaluate(run.stage1.params, vcfg.model, data, eval::bank_users(run.stage1, data, vcfg.model.adapters),
                                vcfg.eval, vcfg.sampler, vcfg.seed);
    run.seconds = seconds_since(t0);
    const auto& r = run.report;
    progress(fmt("  %-14s style %.4f (uncond %.4f) content %.3f/%.3f separation %.3f assignment %.3f  %.0f s",
                 eval::variant_name(v).c_str(), r.style_error, r.style_error_uncond, r.content, r.content_uncond,
                 r.separation, r.assignment_accuracy, run.seconds));
    return run;
}

void determinism() {
    const auto t0 = Clock::now();
    train::PipelineConfig cfg = train::load_config("");
    cfg.data.n_train = 4;
    cfg.data.n_heldout = 1;
    cfg.data.per_user = 16;
    cfg.stage0.steps = 60;
    cfg.stage1.steps = 40;
    cfg.stage1.batch_size = 8;
    cfg.eval.n_prompts = 3;
    cfg.eval.n_seeds = 2;
    cfg.sampler.steps = 10;
    cfg.sweep.n_users = 1;
    cfg.sweep.lengths = {2};
    cfg.validate();

    struct Run {
        std::string data, stage0, stage1, report;
    };
    const fs::path tmp = fs::temp_directory_path() / fmt("prefmod_acceptance_%d", static_cast<int>(::getpid()));
    auto run_once = [&](int k) {
        Run r;
        const auto data = synth::make_dataset(cfg.data);
        const fs::path dir = tmp / std::to_string(k);
        synth::save_dataset(data, dir);
        r.data = tree_bytes(dir);
        const auto s0 = train::pretrain_backbone(data, cfg);
        r.stage0 = train::encode_checkpoint(s0);
        const auto s1 = train::train_stage1(data, s0, cfg);
        r.stage1 = train::encode_checkpoint(s1);
        r.report = eval::evaluate(s1.params, cfg.model, data, eval::bank_users(s1, data, cfg.model.adapters), cfg.eval,
                                  cfg.sampler, cfg.seed)
                       .to_json()
                       .dump();
        return r;
    };
    const Run a = run_once(0), b = run_once(1);
    const bool same = a.data == b.data && a.stage0 == b.stage0 && a.stage1 == b.stage1 && a.report == b.report;

    const auto data = synth::make_dataset(cfg.data);
    bool resumed = true;
    {
        train::TrainOptions first;
        first.stop_at = 25;
        const auto part = train::pretrain_backbone(data, cfg, first);
        const fs::path p = tmp / "stage0_part.ckpt";
        train::save_checkpoint(p, part);
        const auto loaded = train::load_checkpoint(p);
        train::TrainOptions rest;
        rest.resume = &loaded;
        resumed = resumed && train::encode_checkpoint(train::pretrain_backbone(data, cfg, rest)) == a.stage0;
    }
    {
        const auto s0 = train::decode_checkpoint(a.stage0);
        train::TrainOptions first;
        first.stop_at = 17;
        const auto part = train::train_stage1(data, s0, cfg, first);
        const fs::path p = tmp / "stage1_part.ckpt";
        train::save_checkpoint(p, part);
        const auto loaded = train::load_checkpoint(p);
        train::TrainOptions rest;
        rest.resume = &loaded;
        resumed = resumed && train::encode_checkpoint(train::train_stage1(data, s0, cfg, rest)) == a.stage1;
    }
    fs::remove_all(tmp);
    report(9, same && resumed,
           fmt("repeat run %s (dataset %zu B, checkpoints %zu + %zu B, report %zu B); split-run resume %s; %.0f s",
               same ? "byte-identical" : "DIFFERS", a.data.size(), a.stage0.size(), a.stage1.size(), a.report.size(),
               resumed ? "byte-identical" : "DIFFERS", seconds_since(t0)));
}

}  // namespace

int main(int argc, char** argv) {
    const bool strict = argc > 1 && std::string(argv[1]) == "--strict";
    const auto start = Clock::now();
    try {
        progress("gradient checks");
        gradients();
        equations();

        const train::PipelineConfig cfg = train::load_config("");
        progress("config " + cfg.fingerprint().substr(0, 12) + ", revision " + eval::revision());
        const synth::Dataset data = synth::make_dataset(cfg.data);
        auto t0 = Clock::now();
        const train::Checkpoint stage0 = train::pretrain_backbone(data, cfg);
        progress(fmt("stage 0: %zu steps in %.0f s", cfg.stage0.steps, seconds_since(t0)));

        zero_start(data, stage0, cfg);

        std::map<eval::Variant, VariantRun> runs;
        for (eval::Variant v : eval::all_variants()) runs.emplace(v, run_variant(data, stage0, cfg, v));
        const auto& full = runs.at(eval::Variant::Full);
        const auto& nodisp = runs.at(eval::Variant::NoDispersion);

        {
            const double ratio = full.report.separation / nodisp.report.separation;
            double slowest = 0.0;
            for (const auto& [v, r] : runs) slowest = std::max(slowest, r.seconds);
            const bool ok = ratio >= 2.0 && full.report.assignment_accuracy > nodisp.report.assignment_accuracy &&
                            slowest <= 600.0;
            report(4, ok,
                   fmt("separation %.3f vs %.3f without dispersion (ratio %.2f, need >= 2); assignment accuracy "
                       "%.3f vs %.3f; slowest run %.0f s",
                       full.report.separation, nodisp.report.separation, ratio, full.report.assignment_accuracy,
                       nodisp.report.assignment_accuracy, slowest));
        }
        {
            std::size_t better = 0;
            std::string worse;
            for (const auto& u : full.report.users) {
                if (u.style_error < u.style_error_uncond) {
                    ++better;
                } else {
                    worse += fmt(" user %llu %.4f >= %.4f;", static_cast<unsigned long long>(u.user_id), u.style_error,
                                 u.style_error_uncond);
                }
            }
            const double ratio = full.report.style_error / full.report.style_error_uncond;
            const bool ok = better == full.report.users.size() && ratio <= 0.6;
            report(5, ok,
                   fmt("%zu of %zu users below unconditional; mean %.4f vs %.4f (ratio %.3f, need <= 0.6)", better,
                       full.report.users.size(), full.report.style_error, full.report.style_error_uncond, ratio) +
                       worse);
        }
        {
            const double gap = std::abs(full.report.content - full.report.content_uncond);
            report(6, gap <= 0.05,
                   fmt("content %.4f conditioned vs %.4f unconditional (gap %.4f, need <= 0.05)", full.report.content,
                       full.report.content_uncond, gap));
        }
        {
            t0 = Clock::now();
            const auto rows = eval::history_sweep(data, full.stage1, cfg);
            const double t = seconds_since(t0);
            using train::FitMode;
            bool ok = t <= 1200.0 && cfg.sweep.n_users >= 4 && cfg.sweep.n_seeds >= 3;
            std::string detail;
            for (std::size_t len : cfg.sweep.lengths) {
                const double lc = eval::sweep_mean(rows, len, FitMode::LinearCombination);
                const double direct = eval::sweep_mean(rows, len, FitMode::Direct);
                detail += fmt("L=%zu linear %.4f direct %.4f; ", len, lc, direct);
                if (len <= 4) ok = ok && lc <= direct;
                if (len >= 32) ok = ok && direct <= 1.1 * lc;
            }
            report(7, ok, detail + fmt("%zu users x %zu seeds, %.0f s", cfg.sweep.n_users, cfg.sweep.n_seeds, t));
        }
        {
            bool best = true, each = true;
            std::string detail;
            for (const auto& [v, r] : runs) {
                if (v == eval::Variant::Full) continue;
                best = best && full.report.style_error < r.report.style_error;
                const bool worse = r.report.style_error > full.report.style_error ||
                                   r.report.separation < full.report.separation;
                each = each && worse;
                detail += fmt("%s %.4f/%.2f; ", eval::variant_name(v).c_str(), r.report.style_error, r.report.separation);
            }
            report(8, best && each,
                   fmt("full style %.4f separation %.2f; ", full.report.style_error, full.report.separation) + detail +
                       (best ? "full is best" : "full is NOT best") + (each ? "" : "; an ablation is not worse"));
        }

        determinism();
    } catch (const std::exception& e) {
        std::printf("acceptance aborted: %s\n", e.what());
    }

    const double total = seconds_since(start);
    bool all = verdicts.size() == 9;
    for (const auto& v : verdicts) all = all && v.pass;
    const bool complete = verdicts.size() == 9;
    report(10, all && total <= 1800.0, fmt("total %.0f s (need <= 1800) with %s", total, all ? "all criteria green" : "criteria failing"));
    if (!complete) return 2;
    return strict && !verdicts.back().pass ? 1 : 0;
}
