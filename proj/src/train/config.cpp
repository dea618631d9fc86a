#include "prefmod/train/config.hpp"

#include <openssl/evp.h>

#include <cstdio>

#include "prefmod/core/error.hpp"
#include "prefmod/core/raw_io.hpp"

namespace prefmod::train {

using nlohmann::json;

std::string fit_mode_name(FitMode mode) { return mode == FitMode::LinearCombination ? "linear_combination" : "direct"; }

FitMode parse_fit_mode(const std::string& name) {
    if (name == "linear_combination") return FitMode::LinearCombination;
    if (name == "direct") return FitMode::Direct;
    throw ConfigError("unknown stage-2 mode '" + name + "' (expected linear_combination or direct)");
}

namespace {

std::string flatten_name(model::DeltaFlatten f) { return f == model::DeltaFlatten::Concat ? "concat" : "token_mean"; }

model::DeltaFlatten parse_flatten(const std::string& s) {
    if (s == "concat") return model::DeltaFlatten::Concat;
    if (s == "token_mean") return model::DeltaFlatten::TokenMean;
    throw ConfigError("unknown flatten mode '" + s + "' (expected concat or token_mean)");
}

bool compatible(const json& def, const json& in) {
    if (def.is_number_float()) return in.is_number();
    if (def.is_number_unsigned()) return in.is_number_unsigned() || (in.is_number_integer() && in.get<std::int64_t>() >= 0);
    if (def.is_number_integer()) return in.is_number_integer();
    return def.type() == in.type();
}

void strict_merge(json& base, const json& in, const std::string& path) {
    if (!in.is_object()) throw ConfigError("config: expected an object at '" + (path.empty() ? "<root>" : path) + "'");
    for (const auto& [key, value] : in.items()) {
        const std::string where = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) throw ConfigError("config: unknown key '" + where + "'");
        json& slot = base[key];
        if (slot.is_object()) {
            strict_merge(slot, value, where);
        } else {
            if (!compatible(slot, value)) {
                throw ConfigError("config: '" + where + "' expects " + std::string(slot.type_name()) + ", got " +
                                  value.dump());
            }
            slot = value;
        }
    }
}

}  // namespace

json PipelineConfig::to_json() const {
    json prompts = json::array();
    for (const auto& p : data.prompts) prompts.push_back(p.str());
    const auto& bb = model.backbone;
    const auto& ad = model.adapters;
    const auto& cd = model.conditioning;
    json modes = json::array();
    for (FitMode m : sweep.modes) modes.push_back(fit_mode_name(m));
    return {
        {"seed", seed},
        {"data",
         {{"n_train", data.n_train},
          {"n_heldout", data.n_heldout},
          {"per_user", data.per_user},
          {"image_size", data.image_size},
          {"min_style_distance", data.min_style_distance},
          {"max_attempts", data.max_attempts},
          {"prompts", prompts}}},
        {"backbone",
         {{"blocks", bb.blocks},
          {"d_model", bb.d_model},
          {"heads", bb.heads},
          {"d_mod", bb.d_mod},
          {"d_pool", bb.d_pool},
          {"patch", bb.patch},
          {"image_size", bb.image_size},
          {"ffn_mult", bb.ffn_mult},
          {"time_scale", bb.time_scale},
          {"modulate_image_tokens", bb.modulate_image_tokens}}},
        {"adapters",
         {{"tokens", ad.tokens},
          {"d_user", ad.d_user},
          {"blocks", ad.blocks},
          {"heads", ad.heads},
          {"ffn_mult", ad.ffn_mult},
          {"embedding_std", ad.embedding_std}}},
        {"conditioning",
         {{"use_shared", cd.use_shared}, {"use_distinct", cd.use_distinct}, {"prompt_modulation", cd.prompt_modulation}}},
        {"stage0",
         {{"steps", stage0.steps},
          {"batch_size", stage0.batch_size},
          {"learning_rate", stage0.learning_rate},
          {"random_style_fraction", stage0.random_style_fraction}}},
        {"stage1",
         {{"steps", stage1.steps},
          {"batch_size", stage1.batch_size},
          {"learning_rate", stage1.learning_rate},
          {"loss_weights", {{"shared", stage1.loss_weights.shared}, {"distinct", stage1.loss_weights.distinct}}},
          {"dropout", stage1.dropout},
          {"flatten", flatten_name(stage1.flatten)},
          {"dispersion_radius", stage1.dispersion_radius}}},
        {"stage2",
         {{"steps", stage2.steps},
          {"batch_size", stage2.batch_size},
          {"learning_rate", stage2.learning_rate},
          {"mode", fit_mode_name(stage2.mode)},
          {"bank_subset", stage2.bank_subset}}},
        {"sampler", {{"steps", sampler.steps}}},
        {"eval", {{"n_prompts", eval.n_prompts}, {"n_seeds", eval.n_seeds}, {"max_batch", eval.max_batch}}},
        {"sweep",
         {{"lengths", sweep.lengths}, {"modes", modes}, {"n_users", sweep.n_users}, {"n_seeds", sweep.n_seeds}}},
    };
}

PipelineConfig PipelineConfig::from_json(const json& in) {
    json j = PipelineConfig{}.to_json();
    strict_merge(j, in, "");
    PipelineConfig c;
    try {
        c.seed = j["seed"].get<std::uint64_t>();
        const json& d = j["data"];
        c.data.n_train = d["n_train"].get<std::size_t>();
        c.data.n_heldout = d["n_heldout"].get<std::size_t>();
        c.data.per_user = d["per_user"].get<std::size_t>();
        c.data.image_size = d["image_size"].get<std::size_t>();
        c.data.min_style_distance = d["min_style_distance"].get<double>();
        c.data.max_attempts = d["max_attempts"].get<std::size_t>();
        c.data.prompts.clear();
        for (const auto& p : d["prompts"]) c.data.prompts.push_back(synth::Prompt::parse(p.get<std::string>()));
        c.data.master_seed = c.seed;

        const json& b = j["backbone"];
        auto& bb = c.model.backbone;
        bb.blocks = b["blocks"].get<std::size_t>();
        bb.d_model = b["d_model"].get<std::size_t>();
        bb.heads = b["heads"].get<std::size_t>();
        bb.d_mod = b["d_mod"].get<std::size_t>();
        bb.d_pool = b["d_pool"].get<std::size_t>();
        bb.patch = b["patch"].get<std::size_t>();
        bb.image_size = b["image_size"].get<std::size_t>();
        bb.ffn_mult = b["ffn_mult"].get<std::size_t>();
        bb.time_scale = b["time_scale"].get<double>();
        bb.modulate_image_tokens = b["modulate_image_tokens"].get<bool>();

        const json& a = j["adapters"];
        auto& ad = c.model.adapters;
        ad.tokens = a["tokens"].get<std::size_t>();
        ad.d_user = a["d_user"].get<std::size_t>();
        ad.blocks = a["blocks"].get<std::size_t>();
        ad.heads = a["heads"].get<std::size_t>();
        ad.ffn_mult = a["ffn_mult"].get<std::size_t>();
        ad.embedding_std = a["embedding_std"].get<double>();

        const json& cd = j["conditioning"];
        c.model.conditioning.use_shared = cd["use_shared"].get<bool>();
        c.model.conditioning.use_distinct = cd["use_distinct"].get<bool>();
        c.model.conditioning.prompt_modulation = cd["prompt_modulation"].get<bool>();

        const json& s0 = j["stage0"];
        c.stage0.steps = s0["steps"].get<std::size_t>();
        c.stage0.batch_size = s0["batch_size"].get<std::size_t>();
        c.stage0.learning_rate = s0["learning_rate"].get<double>();
        c.stage0.random_style_fraction = s0["random_style_fraction"].get<double>();

        const json& s1 = j["stage1"];
        c.stage1.steps = s1["steps"].get<std::size_t>();
        c.stage1.batch_size = s1["batch_size"].get<std::size_t>();
        c.stage1.learning_rate = s1["learning_rate"].get<double>();
        c.stage1.loss_weights.shared = s1["loss_weights"]["shared"].get<double>();
        c.stage1.loss_weights.distinct = s1["loss_weights"]["distinct"].get<double>();
        c.stage1.dropout = s1["dropout"].get<double>();
        c.stage1.flatten = parse_flatten(s1["flatten"].get<std::string>());
        c.stage1.dispersion_radius = s1["dispersion_radius"].get<double>();

        const json& s2 = j["stage2"];
        c.stage2.steps = s2["steps"].get<std::size_t>();
        c.stage2.batch_size = s2["batch_size"].get<std::size_t>();
        c.stage2.learning_rate = s2["learning_rate"].get<double>();
        c.stage2.mode = parse_fit_mode(s2["mode"].get<std::string>());
        c.stage2.bank_subset = s2["bank_subset"].get<std::size_t>();

        c.sampler.steps = j["sampler"]["steps"].get<std::size_t>();
        c.eval.n_prompts = j["eval"]["n_prompts"].get<std::size_t>();
        c.eval.n_seeds = j["eval"]["n_seeds"].get<std::size_t>();
        c.eval.max_batch = j["eval"]["max_batch"].get<std::size_t>();

        const json& sw = j["sweep"];
        c.sweep.lengths = sw["lengths"].get<std::vector<std::size_t>>();
        c.sweep.modes.clear();
        for (const auto& m : sw["modes"]) c.sweep.modes.push_back(parse_fit_mode(m.get<std::string>()));
        c.sweep.n_users = sw["n_users"].get<std::size_t>();
        c.sweep.n_seeds = sw["n_seeds"].get<std::size_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const DataError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

void PipelineConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
    model.backbone.validate();
    model.adapters.validate(model.backbone);
    model::LossWeights w = stage1.loss_weights;
    w.validate();
    if (data.n_train < 2) fail("data.n_train must be at least 2");
    if (data.per_user == 0) fail("data.per_user must be positive");
    if (data.image_size != model.backbone.image_size) fail("data.image_size must equal backbone.image_size");
    if (stage0.steps == 0 || stage1.steps == 0 || stage2.steps == 0) fail("every stage needs steps > 0");
    if (stage0.batch_size == 0 || stage2.batch_size == 0) fail("batch sizes must be positive");
    if (stage1.batch_size < 2) fail("stage1.batch_size must be at least 2 for the dispersion loss");
    for (double lr : {stage0.learning_rate, stage1.learning_rate, stage2.learning_rate}) {
        if (!(lr > 0.0)) fail("learning rates must be positive");
    }
    if (!(stage0.random_style_fraction >= 0.0 && stage0.random_style_fraction <= 1.0)) {
        fail("stage0.random_style_fraction must be in [0, 1]");
    }
    if (!(stage1.dropout >= 0.0 && stage1.dropout < 1.0)) fail("stage1.dropout must be in [0, 1)");
    if (!(stage1.dispersion_radius >= 0.0)) fail("stage1.dispersion_radius must be >= 0");
    if (sampler.steps == 0) fail("sampler.steps must be at least 1");
    if (eval.n_prompts == 0 || eval.n_prompts > 36 || eval.n_seeds == 0 || eval.max_batch == 0) {
        fail("eval needs 1..36 prompts, at least one seed and a positive max_batch");
    }
    if (stage2.bank_subset > data.n_train) fail("stage2.bank_subset exceeds the number of training users");
    for (std::size_t len : sweep.lengths) {
        if (len == 0 || len > data.per_user) fail("sweep lengths must be in 1..data.per_user");
    }
    if (sweep.n_users > data.n_heldout) fail("sweep.n_users exceeds the number of held-out users");
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 computation failed");
    }
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", digest[i]);
        hex += buf;
    }
    return hex;
}

std::string PipelineConfig::fingerprint() const { return sha256_hex(to_json().dump()); }

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
        parts.push_back(rest.substr(0, pos));
    }
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    // Validate the path against the defaults so typos fail loudly.
    json probe = PipelineConfig{}.to_json();
    strict_merge(probe, patch, "");
    doc.merge_patch(patch);
}

PipelineConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    json doc = json::object();
    if (!path.empty()) {
        if (!std::filesystem::exists(path)) throw ConfigError("config file '" + path.string() + "' not found");
        try {
            doc = json::parse(read_file(path), nullptr, true, true);
        } catch (const json::exception& e) {
            throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
        }
    }
    for (const auto& o : overrides) apply_override(doc, o);
    return PipelineConfig::from_json(doc);
}

std::vector<std::string> config_diff(const PipelineConfig& a, const PipelineConfig& b) {
    const json ja = a.to_json(), jb = b.to_json();
    std::vector<std::string> out;
    for (const auto& [key, va] : ja.items()) {
        const json& vb = jb.at(key);
        if (va.is_object()) {
            for (const auto& [field, fa] : va.items()) {
                if (fa != vb.at(field)) out.push_back(key + "." + field);
            }
        } else if (va != vb) {
            out.push_back(key);
        }
    }
    return out;
}

}  // namespace prefmod::train
