#include <doctest.h>

#include <filesystem>
#include <set>

#include "prefmod/core/error.hpp"
#include "prefmod/core/raw_io.hpp"
#include "prefmod/eval/experiments.hpp"
#include "prefmod/train/batching.hpp"
#include "prefmod/train/checkpoint.hpp"
#include "prefmod/train/config.hpp"

using namespace prefmod;
using namespace prefmod::train;
using nlohmann::json;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("prefmod_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

Checkpoint sample_checkpoint() {
    Checkpoint c;
    c.fingerprint = PipelineConfig{}.fingerprint();
    c.config = PipelineConfig{}.to_json();
    c.stage = "stage1";
    c.seed = 11;
    c.step = 3;
    c.bank_users = {0, 1, 2};
    c.params.set("a.w", Tensor({2, 3}, {1, -2, 3.5, 1e-300, -0.0, 7}));
    c.params.set("b", Tensor({4}, {0.1, 0.2, 0.3, 0.4}));
    c.optimizer.hyper.learning_rate = 0.003;
    c.optimizer.step = 3;
    c.optimizer.moments["a.w"] = {{1, 2, 3, 4, 5, 6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}};
    c.history = {{0, 1.5, 1.25, -0.5, -0.75}, {1, 1.0 / 3.0, 0.2, 0.0, 0.0}};
    return c;
}

}  // namespace

TEST_CASE("config defaults round-trip and weight both dispersion terms at 0.1") {
    const PipelineConfig d;
    CHECK(d.stage1.loss_weights.shared == 0.1);
    CHECK(d.stage1.loss_weights.distinct == 0.1);
    const PipelineConfig back = PipelineConfig::from_json(d.to_json());
    CHECK(back.to_json() == d.to_json());
    CHECK(back.fingerprint() == d.fingerprint());
    CHECK(d.fingerprint().size() == 64);
}

TEST_CASE("the committed default config matches the built-in defaults") {
    const auto file = load_config(std::filesystem::path(PREFMOD_SOURCE_DIR) / "configs" / "default.json");
    CHECK(file.to_json() == PipelineConfig{}.to_json());
    CHECK(file.fingerprint() == PipelineConfig{}.fingerprint());
}

TEST_CASE("config parsing is strict") {
    CHECK_THROWS_AS(PipelineConfig::from_json(json{{"stage9", {{"steps", 1}}}}), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_json(json{{"stage1", {{"stepz", 1}}}}), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_json(json{{"stage1", {{"steps", "many"}}}}), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_json(json{{"stage1", {{"steps", -3}}}}), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_json(json{{"stage1", {{"steps", 0}}}}), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_json(json{{"stage2", {{"mode", "sideways"}}}}), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_json(json{{"data", {{"image_size", 8}}}}), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_json(json{{"stage1", {{"loss_weights", {{"shared", -0.1}}}}}}), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_json(json{{"data", {{"prompts", {"hexagon one left"}}}}}), ConfigError);
    // Integers are accepted where a float is expected.
    CHECK(PipelineConfig::from_json(json{{"stage0", {{"learning_rate", 1}}}}).stage0.learning_rate == 1.0);
}

TEST_CASE("overrides address dotted keys") {
    json doc = json::object();
    apply_override(doc, "stage1.steps=17");
    apply_override(doc, "stage2.mode=direct");
    apply_override(doc, "stage1.loss_weights.shared=0.25");
    apply_override(doc, "sweep.lengths=[2,4]");
    const PipelineConfig c = PipelineConfig::from_json(doc);
    CHECK(c.stage1.steps == 17);
    CHECK(c.stage2.mode == FitMode::Direct);
    CHECK(c.stage1.loss_weights.shared == 0.25);
    CHECK(c.stage1.loss_weights.distinct == 0.1);
    CHECK(c.sweep.lengths == std::vector<std::size_t>{2, 4});
    CHECK_THROWS_AS(apply_override(doc, "stage1.nope=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(doc, "novalue"), ConfigError);
    CHECK_THROWS_AS(apply_override(doc, "stage1.steps=abc"), ConfigError);
}

TEST_CASE("fingerprint and diff see every single-field change") {
    const PipelineConfig base;
    const json j = base.to_json();
    std::set<std::string> seen;
    for (const auto& [section, fields] : j.items()) {
        if (!fields.is_object()) continue;
        for (const auto& [field, value] : fields.items()) {
            json changed = j;
            json& slot = changed[section][field];
            if (slot.is_boolean()) {
                slot = !slot.get<bool>();
            } else if (slot.is_number_float()) {
                slot = slot.get<double>() * 0.5;
            } else if (slot.is_number()) {
                slot = slot.get<std::uint64_t>() + 1;
            } else {
                continue;
            }
            PipelineConfig other;
            try {
                other = PipelineConfig::from_json(changed);
            } catch (const ConfigError&) {
                continue;  // the change broke a cross-field rule
            }
            CHECK(other.fingerprint() != base.fingerprint());
            const auto diff = config_diff(base, other);
            REQUIRE(diff.size() == 1);
            CHECK(diff[0] == section + "." + field);
            seen.insert(diff[0]);
        }
    }
    CHECK(seen.size() > 30);
}

TEST_CASE("ablation variants change exactly one field") {
    const PipelineConfig base;
    CHECK(config_diff(base, eval::apply_variant(base, eval::Variant::Full)).empty());
    CHECK(config_diff(base, eval::apply_variant(base, eval::Variant::NoShared)) ==
          std::vector<std::string>{"conditioning.use_shared"});
    CHECK(config_diff(base, eval::apply_variant(base, eval::Variant::NoDistinct)) ==
          std::vector<std::string>{"conditioning.use_distinct"});
    CHECK(config_diff(base, eval::apply_variant(base, eval::Variant::NoDispersion)) ==
          std::vector<std::string>{"stage1.loss_weights"});
    CHECK(config_diff(base, eval::apply_variant(base, eval::Variant::NoPpm)) ==
          std::vector<std::string>{"conditioning.prompt_modulation"});
    for (eval::Variant v : eval::all_variants()) CHECK(eval::parse_variant(eval::variant_name(v)) == v);
    CHECK_THROWS_AS(eval::parse_variant("no_everything"), ConfigError);
}

TEST_CASE("hash and checksum match standard check values") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(crc32_of("123456789") == 0xCBF43926u);
}

TEST_CASE("config files load with overrides") {
    const auto dir = temp_dir("config");
    write_file_atomic(dir / "c.json", R"({"seed": 9, "stage1": {"steps": 12}})");
    const PipelineConfig c = load_config(dir / "c.json", {"stage1.batch_size=4"});
    CHECK(c.seed == 9);
    CHECK(c.data.master_seed == 9);
    CHECK(c.stage1.steps == 12);
    CHECK(c.stage1.batch_size == 4);
    CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
    write_file_atomic(dir / "bad.json", "{ not json");
    CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("checkpoint save-load-save is byte identical") {
    const auto dir = temp_dir("ckpt");
    const Checkpoint c = sample_checkpoint();
    save_checkpoint(dir / "a.ckpt", c);
    const Checkpoint back = load_checkpoint(dir / "a.ckpt");
    save_checkpoint(dir / "b.ckpt", back);
    CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));
    CHECK(back.stage == "stage1");
    CHECK(back.step == 3);
    CHECK(back.bank_users == c.bank_users);
    CHECK(bitwise_equal(back.params.get("a.w"), c.params.get("a.w")));
    CHECK(back.optimizer.moments.at("a.w").second == c.optimizer.moments.at("a.w").second);
    CHECK(back.optimizer.hyper.learning_rate == 0.003);
    REQUIRE(back.history.size() == 2);
    CHECK(back.history[1].loss == 1.0 / 3.0);
    CHECK(back.config == c.config);
}

TEST_CASE("checkpoint rejects other versions and corruption") {
    const std::string good = encode_checkpoint(sample_checkpoint());
    std::string v = good;
    v[8] ^= 0x01;
    try {
        decode_checkpoint(v);
        FAIL("version mismatch was accepted");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
    std::string payload = good;
    payload[payload.size() - 3] ^= 0x40;
    CHECK_THROWS_AS(decode_checkpoint(payload), FormatError);
    std::string manifest = good;
    manifest[30] ^= 0x02;
    CHECK_THROWS_AS(decode_checkpoint(manifest), FormatError);
    CHECK_THROWS_AS(decode_checkpoint(good.substr(0, good.size() - 8)), FormatError);
    CHECK_THROWS_AS(decode_checkpoint("PMTENSOR"), FormatError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), DataError);
}

TEST_CASE("batches cover each item once and keep two users") {
    std::vector<std::uint64_t> ids;
    for (int i = 0; i < 17; ++i) ids.push_back(0);
    for (int i = 0; i < 6; ++i) ids.push_back(1 + i % 2);
    for (std::uint64_t epoch = 0; epoch < 20; ++epoch) {
        const auto batches = make_batches(ids, 4, true, 5, epoch);
        std::vector<int> count(ids.size(), 0);
        for (const auto& b : batches) {
            CHECK(b.size() >= 2);
            std::set<std::uint64_t> users;
            for (std::size_t i : b) {
                ++count[i];
                users.insert(ids[i]);
            }
            CHECK(users.size() >= 2);
        }
        for (int n : count) CHECK(n == 1);
    }
    CHECK(make_batches(ids, 4, true, 5, 3) == make_batches(ids, 4, true, 5, 3));
    CHECK(make_batches(ids, 4, true, 5, 3) != make_batches(ids, 4, true, 5, 4));
    CHECK(make_batches(ids, 4, true, 5, 3) != make_batches(ids, 4, true, 6, 3));
}

TEST_CASE("batch edge cases") {
    const std::vector<std::uint64_t> one_user(6, 4);
    CHECK_THROWS_AS(make_batches(one_user, 3, true, 0, 0), ConfigError);
    CHECK(make_batches(one_user, 3, false, 0, 0).size() == 2);
    const std::vector<std::uint64_t> two = {0, 1, 0, 1, 0};
    CHECK_THROWS_AS(make_batches(two, 1, true, 0, 0), ConfigError);
    // 5 items in batches of 2: the trailing single item joins the last pair.
    const auto b = make_batches(two, 2, false, 0, 0);
    REQUIRE(b.size() == 2);
    CHECK(b[1].size() == 3);
    // Majority user: 9 of user 0, 1 of user 1, batches of 2 cannot all hold both.
    std::vector<std::uint64_t> skew(9, 0);
    skew.push_back(1);
    CHECK_THROWS_AS(make_batches(skew, 2, true, 0, 0), ConfigError);
    CHECK_THROWS_AS(make_batches({}, 2, false, 0, 0), DataError);
}

TEST_CASE("batch_for_step walks the epochs in order") {
    std::vector<std::uint64_t> ids;
    for (int i = 0; i < 13; ++i) ids.push_back(static_cast<std::uint64_t>(i % 3));
    const std::size_t per_epoch = make_batches(ids, 4, true, 2, 0).size();
    for (std::uint64_t step = 0; step < 3 * per_epoch; ++step) {
        const auto epoch = make_batches(ids, 4, true, 2, step / per_epoch);
        CHECK(batch_for_step(ids, 4, true, 2, step) == epoch[step % per_epoch]);
    }
}
