#include "prefmod/core/raw_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "prefmod/core/error.hpp"

namespace prefmod {

static_assert(std::endian::native == std::endian::little, "raw formats assume a little-endian host");

namespace {
constexpr std::string_view kMagic = "PMTENSOR";
}

void append_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), sizeof v); }
void append_u64(std::string& out, std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), sizeof v); }

void append_doubles(std::string& out, std::span<const double> values) {
    out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
}

std::uint32_t read_u32(std::string_view bytes, std::size_t offset) {
    if (offset + 4 > bytes.size()) throw DataError("truncated data reading u32 at offset " + std::to_string(offset));
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + offset, sizeof v);
    return v;
}

std::uint64_t read_u64(std::string_view bytes, std::size_t offset) {
    if (offset + 8 > bytes.size()) throw DataError("truncated data reading u64 at offset " + std::to_string(offset));
    std::uint64_t v;
    std::memcpy(&v, bytes.data() + offset, sizeof v);
    return v;
}

std::vector<double> read_doubles(std::string_view bytes, std::size_t offset, std::size_t count) {
    if (offset + count * sizeof(double) > bytes.size()) {
        throw DataError("truncated data reading " + std::to_string(count) + " doubles at offset " + std::to_string(offset));
    }
    std::vector<double> out(count);
    std::memcpy(out.data(), bytes.data() + offset, count * sizeof(double));
    return out;
}

std::string encode_raw_tensor(const Tensor& tensor) {
    std::string out(kMagic);
    append_u32(out, kRawTensorVersion);
    append_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) append_u64(out, d);
    append_doubles(out, tensor.data());
    return out;
}

Tensor decode_raw_tensor(std::string_view bytes) {
    if (bytes.substr(0, kMagic.size()) != kMagic) throw FormatError("not a raw tensor file (bad magic)");
    std::size_t pos = kMagic.size();
    const std::uint32_t version = read_u32(bytes, pos);
    if (version != kRawTensorVersion) {
        throw FormatError("raw tensor version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kRawTensorVersion) + ")");
    }
    const std::uint32_t rank = read_u32(bytes, pos + 4);
    pos += 8;
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i, pos += 8) shape.push_back(read_u64(bytes, pos));
    const std::size_t n = shape_numel(shape);
    if (pos + n * sizeof(double) != bytes.size()) throw FormatError("raw tensor payload size does not match its shape");
    return Tensor(std::move(shape), read_doubles(bytes, pos, n));
}

void write_raw_tensor(const std::filesystem::path& path, const Tensor& tensor) {
    write_file_atomic(path, encode_raw_tensor(tensor));
}

Tensor read_raw_tensor(const std::filesystem::path& path) {
    try {
        return decode_raw_tensor(read_file(path));
    } catch (const DataError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (f == nullptr) throw DataError("cannot open '" + tmp.string() + "' for writing");
    const bool ok = std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size() && std::fflush(f) == 0 &&
                    ::fsync(::fileno(f)) == 0;
    std::fclose(f);
    if (!ok) {
        std::filesystem::remove(tmp);
        throw DataError("failed writing '" + path.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace prefmod
