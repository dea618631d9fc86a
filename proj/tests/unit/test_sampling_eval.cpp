#include <doctest.h>

#include <cmath>

#include "prefmod/core/error.hpp"
#include "prefmod/core/rng.hpp"
#include "prefmod/eval/experiments.hpp"
#include "prefmod/synth/render.hpp"
#include "prefmod/train/trainer.hpp"
#include "tiny_pipeline.hpp"

using namespace prefmod;
using namespace prefmod::sample;
using prefmod::synth::Prompt;
using prefmod::testing::tiny_pipeline;

namespace {

struct Fixture {
    train::PipelineConfig cfg = tiny_pipeline(8);
    synth::Dataset data = synth::make_dataset(cfg.data);
    train::Checkpoint stage0 = train::pretrain_backbone(data, cfg);
    train::Checkpoint fresh = train::init_stage1(data, stage0, cfg);
    train::Checkpoint stage1 = train::train_stage1(data, stage0, cfg);
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

std::vector<SampleRequest> some_requests(const train::Checkpoint& c, const model::AdapterConfig& ac) {
    std::vector<SampleRequest> reqs;
    const auto& prompts = Prompt::all_content();
    for (std::size_t i = 0; i < 5; ++i) {
        reqs.push_back({prompts[i * 7], train::bank_embedding(c, ac, c.bank_users[i % c.bank_users.size()]), 100 + i, 1.0});
    }
    reqs.push_back({prompts[3], std::nullopt, 200, 1.0});
    return reqs;
}

}  // namespace

TEST_CASE("Euler integration of a constant field lands on z1 - c") {
    const Tensor z1({2, 3}, {0.5, -1.0, 2.0, 0.0, 3.25, -0.75});
    const Tensor c({2, 3}, {1.0, 0.5, -2.0, 0.25, 0.0, 4.0});
    for (std::size_t steps : {1u, 2u, 7u, 50u, 200u}) {
        std::size_t calls = 0;
        const Tensor z0 = euler_integrate(z1, steps, [&](const Tensor&, double t) {
            CHECK(t > 0.0);
            CHECK(t <= 1.0);
            ++calls;
            return c;
        });
        CHECK(calls == steps);
        for (std::size_t i = 0; i < 6; ++i) CHECK(z0[i] == doctest::Approx(z1[i] - c[i]).epsilon(1e-13));
    }
    CHECK_THROWS_AS(euler_integrate(z1, 0, [&](const Tensor&, double) { return c; }), ConfigError);
    CHECK_THROWS_AS(euler_integrate(z1, 3, [&](const Tensor&, double) { return Tensor({6}, std::vector<double>(6)); }),
                    ShapeError);
    const Tensor huge = Tensor::full({2, 3}, 1e308);
    CHECK_THROWS_AS(euler_integrate(huge, 1, [&](const Tensor&, double) { return Tensor::full({2, 3}, -1e308); }),
                    NumericalError);
}

TEST_CASE("Euler time grid runs from 1 down in uniform steps") {
    std::vector<double> ts;
    euler_integrate(Tensor({1}, {0.0}), 4, [&](const Tensor& z, double t) {
        ts.push_back(t);
        return Tensor(z.shape(), {0.0});
    });
    CHECK(ts == std::vector<double>{1.0, 0.75, 0.5, 0.25});
}

TEST_CASE("sampling is deterministic and independent of grouping") {
    const auto& f = fixture();
    const auto reqs = some_requests(f.stage1, f.cfg.model.adapters);
    const auto a = sample_images(f.stage1.params, f.cfg.model, reqs, f.cfg.sampler, 64);
    const auto b = sample_images(f.stage1.params, f.cfg.model, reqs, f.cfg.sampler, 1);
    const auto c = sample_images(f.stage1.params, f.cfg.model, reqs, f.cfg.sampler, 4);
    REQUIRE(a.size() == reqs.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(bitwise_equal(a[i], b[i]));
        CHECK(bitwise_equal(a[i], c[i]));
        CHECK(a[i].shape() == Shape{3, 8, 8});
        for (double v : a[i].data()) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
    }
    CHECK_THROWS_AS(sample_images(f.stage1.params, f.cfg.model, reqs, f.cfg.sampler, 0), ConfigError);
}

TEST_CASE("untrained adapters sample exactly like the frozen backbone") {
    const auto& f = fixture();
    Rng rng(17);
    const auto& prompts = Prompt::all_content();
    std::vector<SampleRequest> with, without;
    for (int i = 0; i < 10; ++i) {
        const std::uint64_t user = f.fresh.bank_users[static_cast<std::size_t>(rng.integer(0, 2))];
        const Prompt p = prompts[static_cast<std::size_t>(rng.integer(0, 35))];
        const std::uint64_t seed = rng.engine()();
        with.push_back({p, train::bank_embedding(f.fresh, f.cfg.model.adapters, user), seed, 1.0});
        without.push_back({p, std::nullopt, seed, 1.0});
    }
    const auto a = sample_images(f.fresh.params, f.cfg.model, with, f.cfg.sampler);
    const auto b = sample_images(f.stage0.params, f.cfg.model, without, f.cfg.sampler);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(bitwise_equal(a[i], b[i]));
}

TEST_CASE("zero delta scale reproduces the unconditioned image") {
    const auto& f = fixture();
    auto reqs = some_requests(f.stage1, f.cfg.model.adapters);
    auto plain = reqs;
    for (auto& r : reqs) r.delta_scale = 0.0;
    for (auto& r : plain) r.embedding.reset();
    const auto a = sample_images(f.stage1.params, f.cfg.model, reqs, f.cfg.sampler);
    const auto b = sample_images(f.stage1.params, f.cfg.model, plain, f.cfg.sampler);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(bitwise_equal(a[i], b[i]));
    const auto full = sample_images(f.stage1.params, f.cfg.model, some_requests(f.stage1, f.cfg.model.adapters), f.cfg.sampler);
    CHECK_FALSE(bitwise_equal(full[0], b[0]));
}

TEST_CASE("embedding shape is checked") {
    const auto& f = fixture();
    std::vector<SampleRequest> reqs = {{Prompt::parse("circle one left"), Tensor::zeros({2, 2}), 1, 1.0}};
    CHECK_THROWS_AS(sample_images(f.stage1.params, f.cfg.model, reqs, f.cfg.sampler), ShapeError);
}

TEST_CASE("sample grid has one reproducible cell per user and prompt") {
    const auto& f = fixture();
    const std::vector<Prompt> prompts = {Prompt::parse("square two left"), Prompt::parse("cross one right"),
                                         Prompt::parse("circle three center")};
    std::vector<GridUser> users;
    for (std::uint64_t u : f.stage1.bank_users) users.push_back({"u", train::bank_embedding(f.stage1, f.cfg.model.adapters, u)});
    users.push_back({"none", std::nullopt});
    const Grid g = sample_grid(f.stage1.params, f.cfg.model, prompts, users, 42, f.cfg.sampler);
    REQUIRE(g.cells.size() == users.size() * prompts.size());
    const auto m = g.manifest();
    CHECK(m["cells"].size() == g.cells.size());
    const std::size_t cell = 1 * prompts.size() + 2;
    CHECK(m["cells"][cell]["seed"].get<std::uint64_t>() == cell_seed(42, 2, 1));
    const std::vector<SampleRequest> one = {{prompts[2], users[1].embedding, cell_seed(42, 2, 1), 1.0}};
    CHECK(bitwise_equal(sample_images(f.stage1.params, f.cfg.model, one, f.cfg.sampler)[0], g.cells[cell]));
    CHECK_THROWS_AS(sample_grid(f.stage1.params, f.cfg.model, {}, users, 42, f.cfg.sampler), DataError);
}

TEST_CASE("PPM grid layout") {
    const std::vector<Tensor> imgs(5, Tensor::full({3, 4, 4}, 1.0));
    const std::string ppm = encode_ppm_grid(imgs, 2);
    const std::string header = "P6\n11 16\n255\n";
    REQUIRE(ppm.substr(0, header.size()) == header);
    CHECK(ppm.size() == header.size() + 11 * 16 * 3);
    CHECK_THROWS_AS(encode_ppm_grid({}, 2), DataError);
}

TEST_CASE("prior style error matches a Monte Carlo estimate") {
    const std::vector<Prompt> prompts = {Prompt::parse("circle one center"), Prompt::parse("square two left")};
    for (std::uint64_t trial = 0; trial < 4; ++trial) {
        const synth::StyleParams truth = synth::sample_style(derive_seed({91, trial}));
        for (const Prompt& p : prompts) {
            double mc = 0.0;
            const int n = 200000;
            for (int i = 0; i < n; ++i) {
                const synth::StyleParams s = synth::sample_style(derive_seed({92, trial, static_cast<std::uint64_t>(i)}));
                synth::StyleEstimate e;
                e.hue = s.hue;
                e.saturation = s.saturation;
                e.texture_freq = s.texture_freq;
                e.offset = s.offset;
                if (p.shape() != synth::ShapeKind::Circle) e.roundness = s.roundness;
                mc += synth::style_error(e, truth);
            }
            CHECK(eval::prior_style_error(truth, p) == doctest::Approx(mc / n).epsilon(0.01));
        }
    }
}

TEST_CASE("evaluation prompts and seeds") {
    const auto ps = eval::eval_prompts(9);
    REQUIRE(ps.size() == 9);
    for (std::size_t i = 1; i < ps.size(); ++i) CHECK_FALSE(ps[i] == ps[i - 1]);
    CHECK(eval::eval_prompts(36) == Prompt::all_content());
    CHECK_THROWS_AS(eval::eval_prompts(0), ConfigError);
    CHECK_THROWS_AS(eval::eval_prompts(37), ConfigError);
    CHECK(eval::eval_cell_seed(1, 2, 3) != eval::eval_cell_seed(1, 3, 2));
}

TEST_CASE("evaluation report is well formed") {
    const auto& f = fixture();
    const auto users = eval::bank_users(f.stage1, f.data, f.cfg.model.adapters);
    eval::EvalImages imgs;
    const eval::EvalReport r =
        eval::evaluate(f.stage1.params, f.cfg.model, f.data, users, f.cfg.eval, f.cfg.sampler, 5, &imgs);
    CHECK(r.users.size() == users.size());
    CHECK(imgs.conditioned.size() == users.size() * 4);
    CHECK(imgs.unconditional.size() == 4);
    CHECK(r.win_rate >= 0.0);
    CHECK(r.win_rate <= 1.0);
    for (double v : {r.style_error, r.style_error_uncond, r.content, r.perceptual, r.separation, r.prior_style_error}) {
        CHECK(std::isfinite(v));
    }
    const auto again = eval::EvalReport::from_json(r.to_json());
    CHECK(again.to_json() == r.to_json());
    CHECK(r.metrics_csv().rfind("user_id,metric,value\n", 0) == 0);
    const eval::EvalReport same = eval::evaluate(f.stage1.params, f.cfg.model, f.data, users, f.cfg.eval, f.cfg.sampler, 5);
    CHECK(same.to_json().dump() == r.to_json().dump());
    CHECK_THROWS_AS(eval::evaluate(f.stage1.params, f.cfg.model, f.data, {}, f.cfg.eval, f.cfg.sampler, 5), DataError);
    auto bad = users;
    bad[0].embedding = Tensor::zeros({1, 1});
    CHECK_THROWS_AS(eval::evaluate(f.stage1.params, f.cfg.model, f.data, bad, f.cfg.eval, f.cfg.sampler, 5), DataError);
}

TEST_CASE("an untrained model wins half the time against itself") {
    const auto& f = fixture();
    const auto users = eval::bank_users(f.fresh, f.data, f.cfg.model.adapters);
    const auto r = eval::evaluate(f.fresh.params, f.cfg.model, f.data, users, f.cfg.eval, f.cfg.sampler, 5);
    CHECK(r.win_rate == 0.5);
    CHECK(r.style_error == r.style_error_uncond);
    CHECK(r.content == r.content_uncond);
}

TEST_CASE("history sweep emits one row per cell") {
    const auto& f = fixture();
    const auto rows = eval::history_sweep(f.data, f.stage1, f.cfg);
    CHECK(rows.size() == f.cfg.sweep.lengths.size() * f.cfg.sweep.modes.size() * f.cfg.sweep.n_users * f.cfg.sweep.n_seeds);
    const std::string csv = eval::sweep_csv(rows);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<std::ptrdiff_t>(rows.size() + 1));
    CHECK(csv.rfind("length,mode,user_id,seed,style_error,perceptual\n", 0) == 0);
    for (const auto& r : rows) CHECK(std::isfinite(r.style_error));
    CHECK(std::isfinite(eval::sweep_mean(rows, 2, train::FitMode::Direct)));
    CHECK_THROWS_AS(eval::sweep_mean(rows, 3, train::FitMode::Direct), DataError);
    auto cfg = f.cfg;
    cfg.sweep.lengths = {7};
    CHECK_THROWS_AS(eval::history_sweep(f.data, f.stage1, cfg), DataError);
}

TEST_CASE("sweep histories are seeded draws of the user's own samples") {
    const auto& f = fixture();
    const std::uint64_t u = f.data.user_ids(synth::Split::HeldOut)[0];
    const auto a = eval::sweep_history(f.data, u, 4, 1);
    const auto b = eval::sweep_history(f.data, u, 4, 1);
    REQUIRE(a.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(a[i].user_id == u);
        CHECK(a[i].seed == b[i].seed);
    }
    CHECK_THROWS_AS(eval::sweep_history(f.data, u, 99, 1), DataError);
}
