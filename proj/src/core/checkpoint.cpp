// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace podar::ckpt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'D', 'A', 'R'};
constexpr std::uint64_t kMaxRank = 16;

template <class U>
void put(std::string& out, U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out.append(buf, sizeof(U));
}

template <class T>
void put_tensor(std::string& out, const std::string& name, std::uint8_t dtype, const Tensor<T>& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, dtype);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(T));
}

class Reader {
public:
    Reader(const std::string& bytes, std::string file) : b_(bytes), file_(std::move(file)) {}

    template <class U>
    U get(const char* what) {
        need(sizeof(U), what);
        U v;
        std::memcpy(&v, b_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return b_.size() - pos_; }
    [[noreturn]] void fail(const std::string& msg) const {
        throw std::runtime_error(file_ + ": " + msg + " (offset " + std::to_string(pos_) + ")");
    }

private:
    void need(std::size_t n, const char* what) const {
        if (remaining() < n) fail(std::string("truncated while reading ") + what);
    }

    const std::string& b_;
    std::string file_;
    std::size_t pos_ = 0;
};

template <class T>
Tensor<T> read_values(Reader& r, Shape shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        if (d != 0 && n > r.remaining() / d) r.fail("tensor dims exceed file size");
        n *= d;
    }
    if (n > r.remaining() / sizeof(T)) r.fail("tensor data exceeds file size");
    std::string raw = r.bytes(n * sizeof(T), "tensor data");
    std::vector<T> v(n);
    std::memcpy(v.data(), raw.data(), raw.size());
    return Tensor<T>(std::move(shape), std::move(v));
}

}  // namespace

const TensorF& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, t] : f32)
        if (n == name) return t;
    throw std::runtime_error("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, _] : f32)
        if (n == name) return true;
    return false;
}

std::vector<std::pair<std::string, TensorF>> Checkpoint::with_prefix(const std::string& prefix) const {
    std::vector<std::pair<std::string, TensorF>> out;
    for (const auto& [n, t] : f32)
        if (n.compare(0, prefix.size(), prefix) == 0) out.emplace_back(n.substr(prefix.size()), t);
    return out;
}

void Checkpoint::add(const std::string& prefix, const std::vector<std::pair<std::string, TensorF>>& tensors) {
    for (const auto& [n, t] : tensors) f32.emplace_back(prefix + n, t);
}

void write_atomic(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error(tmp.string() + ": cannot open for writing");
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw std::runtime_error(tmp.string() + ": write failed");
    }
    std::filesystem::rename(tmp, path);
}

void save(const std::filesystem::path& path, const Checkpoint& ck) {
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint64_t>(out, ck.f32.size() + ck.f64.size());
    for (const auto& [n, t] : ck.f32) put_tensor(out, n, 0, t);
    for (const auto& [n, t] : ck.f64) put_tensor(out, n, 1, t);
    const std::string footer = ck.metadata.dump();
    put<std::uint64_t>(out, footer.size());
    out += footer;
    write_atomic(path, out);
}

Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path.string() + ": cannot open checkpoint");
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    Reader r(bytes, path.string());
    if (r.bytes(4, "magic") != std::string(kMagic, 4)) r.fail("not a PDAR checkpoint (bad magic)");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kFormatVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
    const auto count = r.get<std::uint64_t>("tensor count");
    Checkpoint ck;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = r.get<std::uint32_t>("name length");
        std::string name = r.bytes(name_len, "tensor name");
        const auto dtype = r.get<std::uint8_t>("dtype");
        const auto rank = r.get<std::uint32_t>("rank");
        if (rank > kMaxRank) r.fail("implausible rank " + std::to_string(rank) + " for '" + name + "'");
        Shape shape(rank);
        for (auto& d : shape) d = r.get<std::uint64_t>("dims");
        if (dtype == 0)
            ck.f32.emplace_back(std::move(name), read_values<float>(r, std::move(shape)));
        else if (dtype == 1)
            ck.f64.emplace_back(std::move(name), read_values<double>(r, std::move(shape)));
        else
            r.fail("unknown dtype tag " + std::to_string(dtype) + " for '" + name + "'");
    }
    const auto footer_len = r.get<std::uint64_t>("footer length");
    if (footer_len > r.remaining()) r.fail("truncated metadata footer");
    const std::string footer = r.bytes(footer_len, "footer");
    try {
        ck.metadata = nlohmann::json::parse(footer);
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("malformed metadata footer: ") + e.what());
    }
    return ck;
}

}  // namespace podar::ckpt
