#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "rcdepth/common.hpp"
#include "rcdepth/tensor.hpp"

namespace rcdepth {

// Named learnable tensors plus one same-shaped gradient accumulator each.
// std::map keeps iteration (and thus checkpoint files) name-sorted and
// deterministic.
class ParameterStore {
public:
    Tensor& add(const std::string& name, Tensor init) {
        if (params_.count(name)) throw StateError("parameter registered twice: " + name);
        grads_[name] = Tensor::zeros(init.shape());
        return params_[name] = std::move(init);
    }

    bool has(const std::string& name) const { return params_.count(name) != 0; }

    Tensor& value(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw StateError("unknown parameter: " + name);
        return it->second;
    }
    const Tensor& value(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw StateError("unknown parameter: " + name);
        return it->second;
    }

    Tensor& grad(const std::string& name) {
        auto it = grads_.find(name);
        if (it == grads_.end()) throw StateError("unknown parameter: " + name);
        return it->second;
    }
    const Tensor& grad(const std::string& name) const {
        auto it = grads_.find(name);
        if (it == grads_.end()) throw StateError("unknown parameter: " + name);
        return it->second;
    }

    void zero_grads() {
        for (auto& [name, g] : grads_) std::fill(g.vec().begin(), g.vec().end(), 0.0);
    }

    std::size_t size() const { return params_.size(); }

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& [name, p] : params_) n += p.numel();
        return n;
    }

    const std::map<std::string, Tensor>& entries() const { return params_; }
    std::map<std::string, Tensor>& entries() { return params_; }

private:
    std::map<std::string, Tensor> params_;
    std::map<std::string, Tensor> grads_;
};

// Uniform init in +-sqrt(1/fan_in).
inline Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    double bound = std::sqrt(1.0 / static_cast<double>(fan_in ? fan_in : 1));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

inline bool read_u32(std::istream& is, std::uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return true;
}

inline bool read_u64(std::istream& is, std::uint64_t& v) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
    v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return true;
}

inline bool read_f64(std::istream& is, double& v) {
    std::uint64_t bits;
    if (!read_u64(is, bits)) return false;
    std::memcpy(&v, &bits, 8);
    return true;
}

}  // namespace detail

// Checkpoint container: a flat sequence of records, name-sorted, no header.
// Record layout (all integers little-endian):
//   u32  name length in bytes
//   u8   name bytes
//   u32  shape rank
//   u64  extent, repeated rank times
//   f64  values (IEEE-754 little-endian), row-major
inline void save_checkpoint(const ParameterStore& store, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FileError("cannot open checkpoint for writing: " + path);
    for (const auto& [name, t] : store.entries()) {
        detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d = 0; d < t.rank(); ++d) detail::write_u64(os, t.extent(d));
        for (std::size_t i = 0; i < t.numel(); ++i) detail::write_f64(os, t[i]);
    }
    if (!os) throw FileError("checkpoint write failed: " + path);
}

inline void load_checkpoint(ParameterStore& store, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FileError("cannot open checkpoint: " + path);
    std::size_t loaded = 0;
    std::uint32_t name_len = 0;
    while (detail::read_u32(is, name_len)) {
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw FileError("truncated checkpoint record name");
        std::uint32_t rank = 0;
        if (!detail::read_u32(is, rank)) throw FileError("truncated checkpoint record rank");
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) {
            std::uint64_t e = 0;
            if (!detail::read_u64(is, e)) throw FileError("truncated checkpoint extents");
            shape[d] = static_cast<std::size_t>(e);
        }
        std::vector<double> data(shape_numel(shape));
        for (double& v : data)
            if (!detail::read_f64(is, v)) throw FileError("truncated checkpoint values");
        if (!store.has(name)) throw DataError("checkpoint has unknown parameter: " + name);
        Tensor& dst = store.value(name);
        if (dst.shape() != shape)
            throw DataError("checkpoint shape mismatch for " + name + ": file " + shape_str(shape) +
                            " vs model " + shape_str(dst.shape()));
        dst = Tensor::raw(std::move(shape), std::move(data));
        ++loaded;
    }
    if (loaded != store.size())
        throw DataError("checkpoint holds " + std::to_string(loaded) + " parameters, model expects " +
                        std::to_string(store.size()));
}

}  // namespace rcdepth
