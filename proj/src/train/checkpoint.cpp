#include "prefmod/train/checkpoint.hpp"

#include <zlib.h>

#include "prefmod/core/error.hpp"
#include "prefmod/core/raw_io.hpp"

namespace prefmod::train {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic{"PMCKPT\0\0", 8};
constexpr std::size_t kHeader = 8 + 4 + 4 + 8;

struct Entry {
    std::string name;
    std::string group;  // param, adam.m, adam.v, history
    Shape shape;
    std::vector<double> values;
};

}  // namespace

std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    std::size_t done = 0;
    while (done < bytes.size()) {
        const std::size_t chunk = std::min<std::size_t>(bytes.size() - done, 1u << 30);
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + done), static_cast<uInt>(chunk));
        done += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<Entry> entries;
    for (const auto& [name, t] : ckpt.params.tensors()) entries.push_back({name, "param", t.shape(), t.to_vector()});
    for (const auto& [name, m] : ckpt.optimizer.moments) {
        entries.push_back({name, "adam.m", {m.first.size()}, m.first});
        entries.push_back({name, "adam.v", {m.second.size()}, m.second});
    }
    std::vector<double> hist;
    for (const MetricRecord& r : ckpt.history) {
        hist.insert(hist.end(), {static_cast<double>(r.step), r.loss, r.flow, r.disp_shared, r.disp_distinct});
    }
    entries.push_back({"history", "history", {ckpt.history.size(), 5}, hist});

    std::string payload;
    json dir = json::array();
    for (const Entry& e : entries) {
        std::string bytes;
        append_doubles(bytes, e.values);
        dir.push_back({{"name", e.name},
                       {"group", e.group},
                       {"shape", e.shape},
                       {"offset", payload.size()},
                       {"count", e.values.size()},
                       {"crc32", crc32_of(bytes)}});
        payload += bytes;
    }
    const json manifest = {
        {"fingerprint", ckpt.fingerprint},
        {"config", ckpt.config},
        {"stage", ckpt.stage},
        {"seed", ckpt.seed},
        {"step", ckpt.step},
        {"bank_users", ckpt.bank_users},
        {"adam",
         {{"learning_rate", ckpt.optimizer.hyper.learning_rate},
          {"beta1", ckpt.optimizer.hyper.beta1},
          {"beta2", ckpt.optimizer.hyper.beta2},
          {"eps", ckpt.optimizer.hyper.eps},
          {"step", ckpt.optimizer.step}}},
        {"tensors", dir},
        {"payload_bytes", payload.size()},
    };
    const std::string text = manifest.dump();
    std::string out(kMagic);
    append_u32(out, ckpt.version);
    append_u32(out, crc32_of(text));
    append_u64(out, text.size());
    out += text;
    out += payload;
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < kHeader || std::string_view(bytes).substr(0, 8) != kMagic) {
        throw FormatError("not a checkpoint file (bad magic)");
    }
    const std::uint32_t version = read_u32(bytes, 8);
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (this build reads version " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint32_t manifest_crc = read_u32(bytes, 12);
    const std::uint64_t manifest_len = read_u64(bytes, 16);
    if (kHeader + manifest_len > bytes.size()) throw FormatError("checkpoint truncated inside the manifest");
    const std::string_view text(bytes.data() + kHeader, manifest_len);
    if (crc32_of(text) != manifest_crc) throw FormatError("checkpoint manifest checksum mismatch (file is corrupt)");

    Checkpoint c;
    c.version = version;
    try {
        const json m = json::parse(text);
        const std::size_t base = kHeader + manifest_len;
        if (base + m.at("payload_bytes").get<std::size_t>() != bytes.size()) {
            throw FormatError("checkpoint payload size mismatch (file truncated or padded)");
        }
        c.fingerprint = m.at("fingerprint").get<std::string>();
        c.config = m.at("config");
        c.stage = m.at("stage").get<std::string>();
        c.seed = m.at("seed").get<std::uint64_t>();
        c.step = m.at("step").get<std::uint64_t>();
        c.bank_users = m.at("bank_users").get<std::vector<std::uint64_t>>();
        const json& a = m.at("adam");
        c.optimizer.hyper = {a.at("learning_rate").get<double>(), a.at("beta1").get<double>(),
                             a.at("beta2").get<double>(), a.at("eps").get<double>()};
        c.optimizer.step = a.at("step").get<std::uint64_t>();
        for (const json& e : m.at("tensors")) {
            const auto name = e.at("name").get<std::string>();
            const auto group = e.at("group").get<std::string>();
            const auto shape = e.at("shape").get<Shape>();
            const auto offset = e.at("offset").get<std::size_t>();
            const auto count = e.at("count").get<std::size_t>();
            if (shape_numel(shape) != count) throw FormatError("checkpoint tensor '" + name + "' count/shape mismatch");
            if (offset + count * sizeof(double) > bytes.size() - base) {
                throw FormatError("checkpoint tensor '" + name + "' lies outside the payload");
            }
            const std::string_view raw(bytes.data() + base + offset, count * sizeof(double));
            if (crc32_of(raw) != e.at("crc32").get<std::uint32_t>()) {
                throw FormatError("checkpoint tensor '" + name + "' (" + group + ") checksum mismatch (file is corrupt)");
            }
            std::vector<double> values = read_doubles(bytes, base + offset, count);
            if (group == "param") {
                c.params.set(name, Tensor(shape, std::move(values)));
            } else if (group == "adam.m") {
                c.optimizer.moments[name].first = std::move(values);
            } else if (group == "adam.v") {
                c.optimizer.moments[name].second = std::move(values);
            } else if (group == "history") {
                if (shape.size() != 2 || shape[1] != 5) throw FormatError("checkpoint history has a bad shape");
                for (std::size_t i = 0; i < shape[0]; ++i) {
                    const double* r = values.data() + i * 5;
                    c.history.push_back({static_cast<std::uint64_t>(r[0]), r[1], r[2], r[3], r[4]});
                }
            } else {
                throw FormatError("checkpoint tensor '" + name + "' has unknown group '" + group + "'");
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint manifest is malformed: ") + e.what());
    }
    for (const auto& [name, mom] : c.optimizer.moments) {
        if (!c.params.contains(name) || mom.first.size() != c.params.get(name).numel() ||
            mom.second.size() != mom.first.size()) {
            throw FormatError("checkpoint optimizer state for '" + name + "' does not match its parameter");
        }
    }
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw DataError("checkpoint '" + path.string() + "' not found");
    try {
        return decode_checkpoint(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace prefmod::train
