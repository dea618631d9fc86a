#include "prefmod/synth/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "json.hpp"
#include "prefmod/core/error.hpp"
#include "prefmod/core/raw_io.hpp"
#include "prefmod/core/rng.hpp"
#include "prefmod/synth/render.hpp"

namespace prefmod::synth {

using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

json style_json(const StyleParams& s) {
    return {{"hue", s.hue},
            {"saturation", s.saturation},
            {"roundness", s.roundness},
            {"texture_freq", s.texture_freq},
            {"offset", s.offset}};
}

StyleParams style_from_json(const json& j) {
    StyleParams s;
    s.hue = j.at("hue").get<double>();
    s.saturation = j.at("saturation").get<double>();
    s.roundness = j.at("roundness").get<double>();
    s.texture_freq = j.at("texture_freq").get<int>();
    s.offset = j.at("offset").get<double>();
    if (!s.valid()) throw DataError("style in manifest is out of range");
    return s;
}

std::string image_name(std::uint64_t user_id, std::size_t index) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "u%03llu_s%03zu.raw", static_cast<unsigned long long>(user_id), index);
    return buf;
}

}  // namespace

const UserProfile& Dataset::user(std::uint64_t user_id) const {
    for (const auto& u : users) {
        if (u.user_id == user_id) return u;
    }
    throw DataError("user " + std::to_string(user_id) + " not in dataset");
}

std::vector<std::uint64_t> Dataset::user_ids(Split split) const {
    std::vector<std::uint64_t> out;
    for (const auto& u : users) {
        if (u.split == split) out.push_back(u.user_id);
    }
    return out;
}

std::vector<std::size_t> Dataset::samples_of(std::uint64_t user_id) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].user_id == user_id) out.push_back(i);
    }
    return out;
}

StyleParams sample_style(std::uint64_t seed) {
    Rng rng(seed);
    StyleParams s;
    s.hue = rng.uniform(0.0, 1.0);
    s.saturation = rng.uniform(kSaturationMin, kSaturationMax);
    s.roundness = rng.uniform(0.0, 1.0);
    s.texture_freq = static_cast<int>(rng.integer(0, kTextureMax));
    s.offset = rng.uniform(-kOffsetMax, kOffsetMax);
    return s;
}

Dataset make_dataset(const DatasetConfig& config) {
    const std::size_t n_users = config.n_train + config.n_heldout;
    if (config.n_train < 2) throw ConfigError("make_dataset: need at least 2 training users");
    if (config.per_user == 0) throw ConfigError("make_dataset: per_user must be positive");
    Dataset ds;
    ds.config = config;
    const std::vector<Prompt>& prompts = config.prompts.empty() ? Prompt::all_content() : config.prompts;
    for (const Prompt& p : prompts) {
        if (p.is_empty()) throw ConfigError("make_dataset: prompt list may not contain EMPTY");
    }

    for (std::size_t u = 0; u < n_users; ++u) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < config.max_attempts && !placed; ++attempt) {
            const StyleParams candidate = sample_style(derive_seed({config.master_seed, 0x57A1E, u, attempt}));
            const bool separated = std::all_of(ds.users.begin(), ds.users.end(), [&](const UserProfile& other) {
                return style_distance(candidate, other.style) >= config.min_style_distance;
            });
            if (!separated) continue;
            UserProfile profile;
            profile.user_id = u;
            profile.style = candidate;
            profile.seed = derive_seed({config.master_seed, 0x05E4, u});
            profile.split = u < config.n_train ? Split::Train : Split::HeldOut;
            ds.users.push_back(profile);
            placed = true;
        }
        if (!placed) {
            throw DataError("could not place user " + std::to_string(u) + " at minimum style distance " +
                            std::to_string(config.min_style_distance) + " after " + std::to_string(config.max_attempts) +
                            " attempts; lower the distance or use fewer users");
        }
    }

    for (const UserProfile& user : ds.users) {
        Rng rng(derive_seed({user.seed, 0x9809}));
        std::vector<std::size_t> order;
        for (std::size_t i = 0; i < config.per_user; ++i) {
            if (order.empty()) {
                order.resize(prompts.size());
                for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
                std::shuffle(order.begin(), order.end(), rng.engine());
            }
            const Prompt& prompt = prompts[order.back()];
            order.pop_back();
            Sample s;
            s.prompt = prompt;
            s.user_id = user.user_id;
            s.seed = derive_seed({user.seed, i});
            s.image = render(prompt, user.style, s.seed, config.image_size);
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    json users = json::array();
    for (const auto& u : dataset.users) {
        users.push_back({{"user_id", u.user_id},
                         {"seed", u.seed},
                         {"split", u.split == Split::Train ? "train" : "heldout"},
                         {"style", style_json(u.style)}});
    }
    json samples = json::array();
    std::map<std::uint64_t, std::size_t> counters;
    for (const auto& s : dataset.samples) {
        const std::string name = image_name(s.user_id, counters[s.user_id]++);
        write_raw_tensor(dir / "images" / name, s.image);
        samples.push_back({{"file", "images/" + name}, {"user_id", s.user_id}, {"prompt", s.prompt.str()}, {"seed", s.seed}});
    }
    json prompts = json::array();
    for (const auto& p : dataset.config.prompts) prompts.push_back(p.str());
    const json manifest = {{"format_version", kManifestVersion},
                           {"config",
                            {{"n_train", dataset.config.n_train},
                             {"n_heldout", dataset.config.n_heldout},
                             {"per_user", dataset.config.per_user},
                             {"image_size", dataset.config.image_size},
                             {"min_style_distance", dataset.config.min_style_distance},
                             {"max_attempts", dataset.config.max_attempts},
                             {"master_seed", dataset.config.master_seed},
                             {"prompts", prompts}}},
                           {"users", users},
                           {"samples", samples}};
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) throw DataError("dataset manifest '" + manifest_path.string() + "' not found");
    json manifest;
    try {
        manifest = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
        throw DataError("dataset manifest is not valid JSON: " + std::string(e.what()));
    }
    try {
        if (manifest.at("format_version").get<int>() != kManifestVersion) {
            throw FormatError("dataset manifest version " + manifest.at("format_version").dump() + " unsupported");
        }
        Dataset ds;
        const json& c = manifest.at("config");
        ds.config.n_train = c.at("n_train").get<std::size_t>();
        ds.config.n_heldout = c.at("n_heldout").get<std::size_t>();
        ds.config.per_user = c.at("per_user").get<std::size_t>();
        ds.config.image_size = c.at("image_size").get<std::size_t>();
        ds.config.min_style_distance = c.at("min_style_distance").get<double>();
        ds.config.max_attempts = c.at("max_attempts").get<std::size_t>();
        ds.config.master_seed = c.at("master_seed").get<std::uint64_t>();
        for (const auto& p : c.at("prompts")) ds.config.prompts.push_back(Prompt::parse(p.get<std::string>()));
        for (const auto& u : manifest.at("users")) {
            UserProfile p;
            p.user_id = u.at("user_id").get<std::uint64_t>();
            p.seed = u.at("seed").get<std::uint64_t>();
            p.split = u.at("split").get<std::string>() == "train" ? Split::Train : Split::HeldOut;
            p.style = style_from_json(u.at("style"));
            ds.users.push_back(p);
        }
        for (const auto& s : manifest.at("samples")) {
            Sample sample;
            sample.prompt = Prompt::parse(s.at("prompt").get<std::string>());
            sample.user_id = s.at("user_id").get<std::uint64_t>();
            sample.seed = s.at("seed").get<std::uint64_t>();
            sample.image = read_raw_tensor(dir / s.at("file").get<std::string>());
            validate_image(sample.image);
            ds.samples.push_back(std::move(sample));
        }
        return ds;
    } catch (const json::exception& e) {
        throw DataError("dataset manifest is malformed: " + std::string(e.what()));
    }
}

}  // namespace prefmod::synth
