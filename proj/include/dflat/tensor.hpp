#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dflat/errors.hpp"

namespace dflat {

// Dense row-major tensor of 64-bit reals. Rank is dynamic; everything in the
// decoder is rank 1..3.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims)
        : dims_(std::move(dims)), data_(count(dims_), 0.0) {}

    Tensor(std::vector<std::size_t> dims, std::vector<double> data)
        : dims_(std::move(dims)), data_(std::move(data)) {
        if (count(dims_) != data_.size()) {
            throw ShapeError("tensor: dims " + dims_str(dims_) + " do not match data length " +
                             std::to_string(data_.size()));
        }
    }

    static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        Tensor t({r, c});
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) {
                throw ShapeError("tensor: ragged initializer");
            }
            for (double v : row) {
                t.data_[i++] = v;
            }
        }
        return t;
    }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) {
            t.data_[i * n + i] = 1.0;
        }
        return t;
    }

    std::size_t rank() const { return dims_.size(); }
    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t size() const { return data_.size(); }
    std::size_t rows() const { return dims_.at(0); }
    std::size_t cols() const { return dims_.at(1); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }

    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * dims_[1] + j) * dims_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * dims_[1] + j) * dims_[2] + k];
    }

    bool same_dims(const Tensor& o) const { return dims_ == o.dims_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    Tensor reshaped(std::vector<std::size_t> dims) const {
        if (count(dims) != data_.size()) {
            throw ShapeError("reshape: " + dims_str(dims_) + " -> " + dims_str(dims) +
                             " changes element count");
        }
        return Tensor(std::move(dims), data_);
    }

    static std::string dims_str(const std::vector<std::size_t>& d) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < d.size(); ++i) {
            os << (i ? "x" : "") << d[i];
        }
        os << "]";
        return os.str();
    }

    std::string shape_str() const { return dims_str(dims_); }

private:
    static std::size_t count(const std::vector<std::size_t>& dims) {
        std::size_t n = 1;
        for (std::size_t d : dims) {
            n *= d;
        }
        return dims.empty() ? 0 : n;
    }

    std::vector<std::size_t> dims_;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Tensor dump format shared by every artifact this tool writes:
//   "DFLT" | u32 rank | u32 dims[rank] | f64 data (row-major), all little-endian.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline void put_f64(std::ostream& os, double v) {
    std::uint64_t u;
    static_assert(sizeof(u) == sizeof(v));
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<unsigned char>(u >> (8 * i));
    }
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) {
        u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    }
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t) {
    os.write("DFLT", 4);
    detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.dims()) {
        detail::put_u32(os, static_cast<std::uint32_t>(d));
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
        detail::put_f64(os, t[i]);
    }
}

inline Tensor read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "DFLT") {
        throw IoError("tensor dump: bad magic");
    }
    const std::uint32_t rank = detail::get_u32(is);
    if (rank > 8) {
        throw IoError("tensor dump: implausible rank " + std::to_string(rank));
    }
    std::vector<std::size_t> dims(rank);
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        dims[i] = detail::get_u32(is);
        n *= dims[i];
    }
    Tensor t(dims);
    for (std::size_t i = 0; i < n; ++i) {
        t[i] = detail::get_f64(is);
    }
    if (!is) {
        throw IoError("tensor dump: truncated stream");
    }
    return t;
}

inline void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw IoError("cannot open for write: " + path);
    }
    write_tensor(os, t);
    if (!os) {
        throw IoError("write failed: " + path);
    }
}

inline Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open for read: " + path);
    }
    return read_tensor(is);
}

}  // namespace dflat
