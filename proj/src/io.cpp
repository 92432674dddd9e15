#include "mea/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mea::io {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    const std::uint32_t len = read_u32(is);
    std::string s(len, '\0');
    is.read(s.data(), len);
    return s;
}

void write_f32(std::ostream& os, const float* data, std::size_t count) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
}

void read_f32(std::istream& is, float* data, std::size_t count) {
    is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * 4));
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    return is;
}

void expect_magic(std::istream& is, const char* magic, const std::string& path) {
    char buf[4];
    is.read(buf, 4);
    if (!is || std::memcmp(buf, magic, 4) != 0)
        throw std::runtime_error("bad magic in " + path + " (expected " + magic + ")");
}

std::vector<float> field_to_f32(const Field& field) {
    std::vector<float> out(field.size());
    const double* src = field.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(src[i]);
    return out;
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

void write_meaf(const std::string& path, const Field& field) {
    auto os = open_out(path);
    os.write("MEAF", 4);
    write_u32(os, 1);
    write_u32(os, static_cast<std::uint32_t>(field.n()));
    const auto f32 = field_to_f32(field);
    write_f32(os, f32.data(), f32.size());
    if (!os) throw std::runtime_error("write failed: " + path);
}

Field read_meaf(const std::string& path) {
    auto is = open_in(path);
    expect_magic(is, "MEAF", path);
    const std::uint32_t version = read_u32(is);
    if (version != 1) throw std::runtime_error("unsupported MEAF version in " + path);
    const std::uint32_t n = read_u32(is);
    if (n < 2 || n > 1u << 15) throw std::runtime_error("bad field size in " + path);
    std::vector<float> f32(static_cast<std::size_t>(n) * n);
    read_f32(is, f32.data(), f32.size());
    if (!is) throw std::runtime_error("truncated field file: " + path);
    Field field(static_cast<int>(n));
    for (std::size_t i = 0; i < f32.size(); ++i) field.data()[i] = f32[i];
    return field;
}

std::size_t Dataset::labeled_count() const {
    std::size_t c = 0;
    for (const auto& e : entries) c += e.has_T ? 1 : 0;
    return c;
}

void write_mead(const std::string& path, const Dataset& dataset) {
    auto os = open_out(path);
    os.write("MEAD", 4);
    write_u32(os, 1);
    write_u32(os, static_cast<std::uint32_t>(dataset.entries.size()));
    write_u32(os, static_cast<std::uint32_t>(dataset.n));
    for (const auto& e : dataset.entries) {
        if (e.k.n() != dataset.n || (e.has_T && e.T.n() != dataset.n))
            throw std::invalid_argument("dataset entry resolution mismatch");
        write_f32(os, e.k.data(), e.k.size());
        const char flag = e.has_T ? 1 : 0;
        os.write(&flag, 1);
        if (e.has_T) write_f32(os, e.T.data(), e.T.size());
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

Dataset read_mead(const std::string& path) {
    auto is = open_in(path);
    expect_magic(is, "MEAD", path);
    const std::uint32_t version = read_u32(is);
    if (version != 1) throw std::runtime_error("unsupported MEAD version in " + path);
    const std::uint32_t count = read_u32(is);
    const std::uint32_t n = read_u32(is);
    if (n < 2 || n > 1u << 15) throw std::runtime_error("bad dataset resolution in " + path);
    Dataset ds;
    ds.n = static_cast<int>(n);
    ds.entries.resize(count);
    for (auto& e : ds.entries) {
        e.k = Field32(ds.n);
        read_f32(is, e.k.data(), e.k.size());
        char flag = 0;
        is.read(&flag, 1);
        if (flag == 1) {
            e.has_T = true;
            e.T = Field32(ds.n);
            read_f32(is, e.T.data(), e.T.size());
        } else if (flag != 0) {
            throw std::runtime_error("corrupt temperature flag in " + path);
        }
        if (!is) throw std::runtime_error("truncated dataset file: " + path);
    }
    return ds;
}

void write_manifest(const std::string& path, const Manifest& manifest) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& [key, value] : manifest) os << key << " = " << value << "\n";
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
        };
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

const TensorBlob* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

std::string Checkpoint::meta(const std::string& key, const std::string& fallback) const {
    for (const auto& [k, v] : metadata)
        if (k == key) return v;
    return fallback;
}

void write_meac(const std::string& path, const Checkpoint& ckpt) {
    auto os = open_out(path);
    os.write("MEAC", 4);
    write_u32(os, 1);
    write_string(os, ckpt.model_kind);
    write_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        write_string(os, t.name);
        write_u32(os, static_cast<std::uint32_t>(t.dims.size()));
        std::size_t count = 1;
        for (const auto d : t.dims) {
            write_u32(os, d);
            count *= d;
        }
        if (count != t.data.size())
            throw std::invalid_argument("tensor dims do not match payload: " + t.name);
        write_f32(os, t.data.data(), t.data.size());
    }
    write_u32(os, static_cast<std::uint32_t>(ckpt.metadata.size()));
    for (const auto& [k, v] : ckpt.metadata) {
        write_string(os, k);
        write_string(os, v);
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

Checkpoint read_meac(const std::string& path) {
    auto is = open_in(path);
    expect_magic(is, "MEAC", path);
    const std::uint32_t version = read_u32(is);
    if (version != 1) throw std::runtime_error("unsupported MEAC version in " + path);
    Checkpoint ckpt;
    ckpt.model_kind = read_string(is);
    const std::uint32_t tensor_count = read_u32(is);
    ckpt.tensors.resize(tensor_count);
    for (auto& t : ckpt.tensors) {
        t.name = read_string(is);
        const std::uint32_t rank = read_u32(is);
        if (rank > 8) throw std::runtime_error("corrupt tensor rank in " + path);
        t.dims.resize(rank);
        std::size_t count = 1;
        for (auto& d : t.dims) {
            d = read_u32(is);
            count *= d;
        }
        t.data.resize(count);
        read_f32(is, t.data.data(), count);
        if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    }
    const std::uint32_t meta_count = read_u32(is);
    for (std::uint32_t i = 0; i < meta_count; ++i) {
        std::string k = read_string(is);
        std::string v = read_string(is);
        ckpt.metadata.emplace_back(std::move(k), std::move(v));
    }
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    return ckpt;
}

std::uint64_t field_hash(const Field& field) {
    const auto f32 = field_to_f32(field);
    return fnv1a(f32.data(), f32.size() * 4);
}

std::uint64_t field_hash(const Field32& field) {
    return fnv1a(field.data(), field.size() * 4);
}

std::uint64_t dataset_hash(const Dataset& dataset) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const std::uint32_t n = static_cast<std::uint32_t>(dataset.n);
    h = fnv1a(&n, 4, h);
    for (const auto& e : dataset.entries) {
        h = fnv1a(e.k.data(), e.k.size() * 4, h);
        const unsigned char flag = e.has_T ? 1 : 0;
        h = fnv1a(&flag, 1, h);
        if (e.has_T) h = fnv1a(e.T.data(), e.T.size() * 4, h);
    }
    return h;
}

}  // namespace mea::io
