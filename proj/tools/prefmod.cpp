// prefmod: command-line driver for data generation, training, sampling and evaluation.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "prefmod/core/error.hpp"
#include "prefmod/core/raw_io.hpp"
#include "prefmod/eval/experiments.hpp"
#include "prefmod/train/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prefmod;

namespace {

struct Common {
    std::string config;
    std::string run_dir;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "JSON config file (defaults apply to missing keys)");
    sub->add_option("--run-dir", c.run_dir, "parent directory for this run's output directory");
    sub->add_option("--seed", c.seed, "master seed (overrides the config)");
    sub->add_option("--set", c.sets, "override a config value, e.g. --set stage1.steps=500")->allow_extra_args(false);
}

// Collects every missing input so the user sees them all at once.
class Inputs {
public:
    void require(bool ok, const std::string& what) {
        if (!ok) missing_.push_back(what);
    }
    void require_path(const std::string& flag, const std::string& value) {
        if (value.empty()) {
            missing_.push_back(flag + " is required");
        } else if (!fs::exists(value)) {
            missing_.push_back(flag + " '" + value + "' does not exist");
        }
    }
    void check() const {
        if (missing_.empty()) return;
        std::string msg = "missing or invalid inputs:";
        for (const auto& m : missing_) msg += "\n  - " + m;
        throw DataError(msg);
    }

private:
    std::vector<std::string> missing_;
};

train::PipelineConfig resolve_config(const Common& c, const json* stored = nullptr) {
    json doc = stored ? *stored : json::object();
    if (!c.config.empty()) {
        if (!fs::exists(c.config)) throw ConfigError("config file '" + c.config + "' not found");
        json file;
        try {
            file = json::parse(read_file(c.config), nullptr, true, true);
        } catch (const json::exception& e) {
            throw ConfigError("config file '" + c.config + "' is not valid JSON: " + e.what());
        }
        doc.merge_patch(file);
    }
    for (const auto& s : c.sets) train::apply_override(doc, s);
    if (c.seed) doc["seed"] = *c.seed;
    return train::PipelineConfig::from_json(doc);
}

fs::path make_run_dir(const Common& c, const train::PipelineConfig& cfg) {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    const std::string base = std::string(stamp) + "-" + cfg.fingerprint().substr(0, 12);
    fs::path dir = fs::path(c.run_dir) / base;
    for (int k = 1; fs::exists(dir); ++k) dir = fs::path(c.run_dir) / (base + "-" + std::to_string(k));
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

void write_manifest(const fs::path& dir, const std::string& command, const train::PipelineConfig& cfg,
                    const json& inputs, const json& outputs) {
    const json m = {{"command", command},   {"seed", cfg.seed},     {"fingerprint", cfg.fingerprint()},
                    {"revision", eval::revision()}, {"inputs", inputs}, {"outputs", outputs},
                    {"config", cfg.to_json()}};
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

void log_progress(const std::string& stage, const train::MetricRecord& r, std::uint64_t total) {
    if ((r.step + 1) % 100 == 0 || r.step + 1 == total) {
        std::fprintf(stderr, "[%s] step %llu/%llu loss %.5f flow %.5f disp %.4f/%.4f\n", stage.c_str(),
                     static_cast<unsigned long long>(r.step + 1), static_cast<unsigned long long>(total), r.loss, r.flow,
                     r.disp_shared, r.disp_distinct);
    }
}

std::string history_csv(const std::vector<train::MetricRecord>& h) {
    std::ostringstream out;
    out.precision(17);
    out << "step,loss,flow,disp_shared,disp_distinct\n";
    for (const auto& r : h) out << r.step << ',' << r.loss << ',' << r.flow << ',' << r.disp_shared << ',' << r.disp_distinct << '\n';
    return out.str();
}

eval::EvalReport run_eval(const fs::path& dir, const synth::Dataset& data, const train::Checkpoint& ckpt,
                          const train::PipelineConfig& cfg) {
    eval::EvalImages imgs;
    const auto users = eval::bank_users(ckpt, data, cfg.model.adapters);
    eval::EvalReport r = eval::evaluate(ckpt.params, cfg.model, data, users, cfg.eval, cfg.sampler, cfg.seed, &imgs);
    r.fingerprint = cfg.fingerprint();
    write_text(dir / "report.json", r.to_json().dump(2) + "\n");
    write_text(dir / "metrics.csv", r.metrics_csv());
    // Grid: one row per user (first seed of each prompt), then the unconditional row.
    std::vector<Tensor> grid;
    const std::size_t np = r.n_prompts, ns = r.n_seeds;
    for (std::size_t u = 0; u <= users.size(); ++u) {
        for (std::size_t p = 0; p < np; ++p) {
            grid.push_back(u < users.size() ? imgs.conditioned[(u * np + p) * ns] : imgs.unconditional[p * ns]);
        }
    }
    sample::write_ppm_grid(dir / "grid.ppm", grid, np);
    return r;
}

void print_summary(const eval::EvalReport& r) {
    std::fprintf(stderr,
                 "style error %.4f (unconditional %.4f, prior %.4f)  win rate %.3f  content %.3f/%.3f  "
                 "perceptual %.4f  separation %.4f  assignment %.3f\n",
                 r.style_error, r.style_error_uncond, r.prior_style_error, r.win_rate, r.content, r.content_uncond,
                 r.perceptual, r.separation, r.assignment_accuracy);
}

std::string report_text(const std::vector<std::pair<std::string, eval::EvalReport>>& reports,
                        const std::vector<std::pair<std::string, std::string>>& sweeps) {
    std::ostringstream out;
    out << "# prefmod report\n\n"
        << "Metrics are oracle stand-ins: style_error is the oracle style distance to the user's true style, "
           "win_rate compares conditioned against unconditional generations on matched seeds, content is the "
           "oracle prompt-content score, perceptual is a multi-scale pixel distance. No context images are used.\n\n";
    if (!reports.empty()) {
        out << "| run | style_error | uncond | win_rate | content | content_uncond | perceptual | separation | assignment |\n"
            << "|---|---|---|---|---|---|---|---|---|\n";
        char buf[512];
        for (const auto& [name, r] : reports) {
            std::snprintf(buf, sizeof buf, "| %s | %.4f | %.4f | %.3f | %.3f | %.3f | %.4f | %.4f | %.3f |\n", name.c_str(),
                          r.style_error, r.style_error_uncond, r.win_rate, r.content, r.content_uncond, r.perceptual,
                          r.separation, r.assignment_accuracy);
            out << buf;
        }
    }
    for (const auto& [name, csv] : sweeps) {
        out << "\n## history sweep: " << name << "\n\n| length | mode | mean style_error | rows |\n|---|---|---|---|\n";
        std::map<std::pair<std::size_t, std::string>, std::pair<double, std::size_t>> agg;
        std::istringstream in(csv);
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            std::vector<std::string> f;
            std::stringstream ls(line);
            for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
            if (f.size() != 6) throw DataError("malformed sweep CSV row: " + line);
            auto& a = agg[{std::stoul(f[0]), f[1]}];
            a.first += std::stod(f[4]);
            ++a.second;
        }
        char buf[256];
        for (const auto& [key, a] : agg) {
            std::snprintf(buf, sizeof buf, "| %zu | %s | %.4f | %zu |\n", key.first, key.second.c_str(),
                          a.first / static_cast<double>(a.second), a.second);
            out << buf;
        }
    }
    return out.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prefmod: preference-modulated flow model toolkit"};
    app.require_subcommand(1, 1);
    Common c;
    std::string data_dir, base_ckpt, ckpt_path, resume, mode_name = "linear_combination", embedding_path;
    std::optional<std::uint64_t> stop_at;
    std::uint64_t user_id = 0;
    std::size_t history_len = 8;
    std::vector<std::string> prompts, variants, inputs;
    std::vector<std::uint64_t> users;
    bool unconditional = false;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic preference dataset");
    auto* pre = app.add_subcommand("pretrain", "stage 0: pretrain the backbone");
    auto* st1 = app.add_subcommand("train-stage1", "stage 1: train adapters and the user bank");
    auto* tnu = app.add_subcommand("train-new-user", "stage 2: fit a new user's embedding");
    auto* smp = app.add_subcommand("sample", "generate an image grid");
    auto* evl = app.add_subcommand("eval", "evaluate a stage-1 checkpoint");
    auto* abl = app.add_subcommand("ablate", "train and evaluate ablation variants");
    auto* swp = app.add_subcommand("history-sweep", "fit held-out users at several history lengths");
    auto* rep = app.add_subcommand("report", "summarise evaluation and sweep outputs");
    for (auto* s : {gen, pre, st1, tnu, smp, evl, abl, swp, rep}) add_common(s, c);
    for (auto* s : {pre, st1, tnu, evl, abl, swp}) s->add_option("--data", data_dir, "dataset directory");
    pre->add_option("--resume", resume, "continue from a stage-0 checkpoint");
    st1->add_option("--resume", resume, "continue from a stage-1 checkpoint");
    for (auto* s : {pre, st1}) s->add_option("--stop-at", stop_at, "stop after this many total steps");
    for (auto* s : {st1, abl}) s->add_option("--base", base_ckpt, "stage-0 checkpoint");
    st1->add_option("--variant", variants, "ablation variant to train (default full)")->expected(0, 1);
    for (auto* s : {tnu, smp, evl, swp}) s->add_option("--checkpoint", ckpt_path, "stage-1 checkpoint");
    tnu->add_option("--user", user_id, "user id whose samples form the history");
    tnu->add_option("--history", history_len, "number of history samples");
    tnu->add_option("--mode", mode_name, "linear_combination or direct");
    smp->add_option("--prompt", prompts, "prompt text, repeatable (default: eval prompts)");
    smp->add_option("--user", users, "bank user id, repeatable");
    smp->add_option("--embedding", embedding_path, "raw tensor file of a fitted embedding");
    smp->add_flag("--unconditional", unconditional, "add an unconditional row");
    abl->add_option("--variant", variants, "variants to run (default: all five)");
    rep->add_option("--input", inputs, "run directories to summarise, repeatable");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        Inputs in;
        in.require(!c.run_dir.empty(), "--run-dir is required");
        auto need_data = [&] { in.require_path("--data", data_dir); };
        auto need_ckpt = [&] { in.require_path("--checkpoint", ckpt_path); };
        auto load_data = [&] { return synth::load_dataset(data_dir); };
        auto finish = [&](const fs::path& dir) { std::cout << dir.string() << std::endl; };

        if (gen->parsed()) {
            in.check();
            const auto cfg = resolve_config(c);
            const auto data = synth::make_dataset(cfg.data);
            const fs::path dir = make_run_dir(c, cfg);
            synth::save_dataset(data, dir / "data");
            write_manifest(dir, "gen-data", cfg, json::object(), {"data"});
            finish(dir);
        } else if (pre->parsed()) {
            need_data();
            if (!resume.empty()) in.require_path("--resume", resume);
            in.check();
            std::optional<train::Checkpoint> r;
            if (!resume.empty()) r = train::load_checkpoint(resume);
            const auto cfg = resolve_config(c, r ? &r->config : nullptr);
            const auto data = load_data();
            const fs::path dir = make_run_dir(c, cfg);
            train::TrainOptions o;
            o.resume = r ? &*r : nullptr;
            o.stop_at = stop_at;
            o.on_step = [&](const train::MetricRecord& m) { log_progress("stage0", m, cfg.stage0.steps); };
            train::Checkpoint out;
            try {
                out = train::pretrain_backbone(data, cfg, o);
            } catch (const train::DivergenceError& e) {
                train::save_checkpoint(dir / "stage0.last_finite.ckpt", e.last_finite);
                throw;
            }
            train::save_checkpoint(dir / "stage0.ckpt", out);
            write_text(dir / "history.csv", history_csv(out.history));
            write_manifest(dir, "pretrain", cfg, {{"data", data_dir}, {"resume", resume}}, {"stage0.ckpt", "history.csv"});
            finish(dir);
        } else if (st1->parsed()) {
            need_data();
            if (resume.empty()) {
                in.require_path("--base", base_ckpt);
            } else {
                in.require_path("--resume", resume);
            }
            in.check();
            std::optional<train::Checkpoint> r;
            train::Checkpoint base;
            if (!resume.empty()) {
                r = train::load_checkpoint(resume);
            } else {
                base = train::load_checkpoint(base_ckpt);
            }
            train::PipelineConfig cfg = resolve_config(c, r ? &r->config : &base.config);
            if (!variants.empty() && !r) cfg = eval::apply_variant(cfg, eval::parse_variant(variants[0]));
            const auto data = load_data();
            const fs::path dir = make_run_dir(c, cfg);
            train::TrainOptions o;
            o.resume = r ? &*r : nullptr;
            o.stop_at = stop_at;
            o.on_step = [&](const train::MetricRecord& m) { log_progress("stage1", m, cfg.stage1.steps); };
            train::Checkpoint out;
            try {
                out = train::train_stage1(data, base, cfg, o);
            } catch (const train::DivergenceError& e) {
                train::save_checkpoint(dir / "stage1.last_finite.ckpt", e.last_finite);
                throw;
            }
            train::save_checkpoint(dir / "stage1.ckpt", out);
            write_text(dir / "history.csv", history_csv(out.history));
            write_manifest(dir, "train-stage1", cfg, {{"data", data_dir}, {"base", base_ckpt}, {"resume", resume}},
                           {"stage1.ckpt", "history.csv"});
            finish(dir);
        } else if (tnu->parsed()) {
            need_data();
            need_ckpt();
            in.check();
            const auto ckpt = train::load_checkpoint(ckpt_path);
            const auto cfg = resolve_config(c, &ckpt.config);
            const auto mode = train::parse_fit_mode(mode_name);
            const auto data = load_data();
            data.user(user_id);  // validates the id
            const auto history = eval::sweep_history(data, user_id, history_len, cfg.seed);
            const fs::path dir = make_run_dir(c, cfg);
            const auto fit = train::train_new_user(history, ckpt, cfg, mode, cfg.seed);
            write_raw_tensor(dir / "embedding.raw", fit.embedding);
            json outputs = {"embedding.raw", "history.csv"};
            if (fit.alpha) {
                write_raw_tensor(dir / "alpha.raw", *fit.alpha);
                outputs.push_back("alpha.raw");
            }
            write_text(dir / "history.csv", history_csv(fit.history));
            write_manifest(dir, "train-new-user", cfg,
                           {{"data", data_dir}, {"checkpoint", ckpt_path}, {"user", user_id}, {"history", history_len},
                            {"mode", mode_name}},
                           outputs);
            finish(dir);
        } else if (smp->parsed()) {
            need_ckpt();
            if (!embedding_path.empty()) in.require_path("--embedding", embedding_path);
            in.check();
            const auto ckpt = train::load_checkpoint(ckpt_path);
            const auto cfg = resolve_config(c, &ckpt.config);
            std::vector<synth::Prompt> ps;
            for (const auto& p : prompts) ps.push_back(synth::Prompt::parse(p));
            if (ps.empty()) ps = eval::eval_prompts(cfg.eval.n_prompts);
            std::vector<sample::GridUser> rows;
            for (std::uint64_t u : users) {
                rows.push_back({"user " + std::to_string(u), train::bank_embedding(ckpt, cfg.model.adapters, u)});
            }
            if (!embedding_path.empty()) rows.push_back({embedding_path, read_raw_tensor(embedding_path)});
            if (unconditional || rows.empty()) rows.push_back({"unconditional", std::nullopt});
            const fs::path dir = make_run_dir(c, cfg);
            const auto grid = sample::sample_grid(ckpt.params, cfg.model, ps, rows, cfg.seed, cfg.sampler, cfg.eval.max_batch);
            fs::create_directories(dir / "images");
            json cells = grid.manifest();
            for (std::size_t i = 0; i < grid.cells.size(); ++i) {
                char name[64];
                std::snprintf(name, sizeof name, "images/r%02zu_c%02zu.raw", i / ps.size(), i % ps.size());
                write_raw_tensor(dir / name, grid.cells[i]);
                cells["cells"][i]["file"] = name;
            }
            sample::write_ppm_grid(dir / "grid.ppm", grid.cells, ps.size());
            write_text(dir / "cells.json", cells.dump(2) + "\n");
            write_manifest(dir, "sample", cfg, {{"checkpoint", ckpt_path}, {"embedding", embedding_path}},
                           {"grid.ppm", "cells.json", "images"});
            finish(dir);
        } else if (evl->parsed()) {
            need_data();
            need_ckpt();
            in.check();
            const auto ckpt = train::load_checkpoint(ckpt_path);
            const auto cfg = resolve_config(c, &ckpt.config);
            const auto data = load_data();
            const fs::path dir = make_run_dir(c, cfg);
            const auto r = run_eval(dir, data, ckpt, cfg);
            print_summary(r);
            write_manifest(dir, "eval", cfg, {{"data", data_dir}, {"checkpoint", ckpt_path}},
                           {"report.json", "metrics.csv", "grid.ppm"});
            finish(dir);
        } else if (abl->parsed()) {
            need_data();
            in.require_path("--base", base_ckpt);
            in.check();
            const auto base = train::load_checkpoint(base_ckpt);
            const auto cfg = resolve_config(c, &base.config);
            std::vector<eval::Variant> vs;
            for (const auto& v : variants) vs.push_back(eval::parse_variant(v));
            if (vs.empty()) vs = eval::all_variants();
            const auto data = load_data();
            const fs::path dir = make_run_dir(c, cfg);
            json outputs = json::array();
            for (eval::Variant v : vs) {
                const auto vcfg = eval::apply_variant(cfg, v);
                const std::string name = eval::variant_name(v);
                const auto diff = train::config_diff(cfg, vcfg);
                if (v != eval::Variant::Full && diff.size() != 1) {
                    throw ConfigError("variant " + name + " changes " + std::to_string(diff.size()) + " config fields");
                }
                train::TrainOptions o;
                o.on_step = [&](const train::MetricRecord& m) { log_progress("stage1/" + name, m, vcfg.stage1.steps); };
                const auto ckpt = train::train_stage1(data, base, vcfg, o);
                fs::create_directories(dir / name);
                train::save_checkpoint(dir / name / "stage1.ckpt", ckpt);
                write_text(dir / name / "history.csv", history_csv(ckpt.history));
                const auto r = run_eval(dir / name, data, ckpt, vcfg);
                std::fprintf(stderr, "[%s] ", name.c_str());
                print_summary(r);
                write_manifest(dir / name, "ablate " + name, vcfg, {{"data", data_dir}, {"base", base_ckpt}},
                               {"stage1.ckpt", "history.csv", "report.json", "metrics.csv", "grid.ppm"});
                outputs.push_back(name);
            }
            write_manifest(dir, "ablate", cfg, {{"data", data_dir}, {"base", base_ckpt}}, outputs);
            finish(dir);
        } else if (swp->parsed()) {
            need_data();
            need_ckpt();
            in.check();
            const auto ckpt = train::load_checkpoint(ckpt_path);
            const auto cfg = resolve_config(c, &ckpt.config);
            const auto data = load_data();
            const fs::path dir = make_run_dir(c, cfg);
            const auto rows = eval::history_sweep(data, ckpt, cfg, [](const eval::SweepRow& r) {
                std::fprintf(stderr, "[sweep] length %zu %s user %llu seed %zu: style error %.4f\n", r.length,
                             train::fit_mode_name(r.mode).c_str(), static_cast<unsigned long long>(r.user_id), r.seed,
                             r.style_error);
            });
            write_text(dir / "sweep.csv", eval::sweep_csv(rows));
            write_manifest(dir, "history-sweep", cfg, {{"data", data_dir}, {"checkpoint", ckpt_path}}, {"sweep.csv"});
            finish(dir);
        } else if (rep->parsed()) {
            in.require(!inputs.empty(), "--input is required (at least one run directory)");
            for (const auto& i : inputs) in.require_path("--input", i);
            in.check();
            std::vector<std::pair<std::string, eval::EvalReport>> reports;
            std::vector<std::pair<std::string, std::string>> sweeps;
            for (const auto& i : inputs) {
                std::vector<fs::path> found;
                for (const auto& e : fs::recursive_directory_iterator(i)) {
                    const auto name = e.path().filename();
                    if (name == "report.json" || name == "sweep.csv") found.push_back(e.path());
                }
                std::sort(found.begin(), found.end());
                for (const auto& p : found) {
                    const std::string label = fs::relative(p.parent_path(), fs::path(i).parent_path()).string();
                    if (p.filename() == "report.json") {
                        reports.emplace_back(label, eval::EvalReport::from_json(json::parse(read_file(p))));
                    } else {
                        sweeps.emplace_back(label, read_file(p));
                    }
                }
            }
            const auto cfg = resolve_config(c);
            const fs::path dir = make_run_dir(c, cfg);
            const std::string text = report_text(reports, sweeps);
            write_text(dir / "report.md", text);
            write_manifest(dir, "report", cfg, {{"inputs", inputs}}, {"report.md"});
            std::cerr << text;
            finish(dir);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
