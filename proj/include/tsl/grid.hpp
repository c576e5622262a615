#pragma once

#include <algorithm>
#include <bit>
#include <iterator>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <vector>

#include <fftw3.h>

#include "error.hpp"

namespace tsl {

using cplx = std::complex<double>;

namespace detail {

inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

// in-place multi-dimensional DFT, sign = FFTW_FORWARD or FFTW_BACKWARD, unnormalized
inline void fft_inplace(std::vector<cplx>& a, const std::vector<int>& shape, int sign) {
    auto* p = reinterpret_cast<fftw_complex*>(a.data());
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        plan = fftw_plan_dft(int(shape.size()), shape.data(), p, p, sign, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
}

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace detail

// Samples on the periodized box prod_a [-L_a, L_a) with a common spacing h. Node j on axis a sits at
// -L_a + j h, so the node at index N_a / 2 is the origin.
class GridField {
public:
    GridField() = default;

    GridField(std::vector<int> shape, double h, std::vector<double> values)
        : shape_(std::move(shape)), h_(h), values_(std::move(values)), cache_(std::make_shared<Cache>()) {
        if (shape_.empty()) throw error(errc::parameter, "grid needs at least one axis");
        std::size_t total = 1;
        for (int n : shape_) {
            if (!detail::is_pow2(n) || n < 2) throw error(errc::parameter, "samples per axis must be a power of two >= 2");
            total *= std::size_t(n);
        }
        if (!(h_ > 0)) throw error(errc::parameter, "grid spacing must be positive");
        if (values_.size() != total) throw error(errc::parameter, "value count does not match grid shape");
    }

    static GridField cubic(int dim, int N, double L, std::vector<double> values) {
        if (!(L > 0)) throw error(errc::parameter, "box half-width must be positive");
        return GridField(std::vector<int>(dim, N), 2 * L / N, std::move(values));
    }
    static GridField zeros(std::vector<int> shape, double h) {
        std::size_t total = 1;
        for (int n : shape) total *= std::size_t(n);
        return GridField(std::move(shape), h, std::vector<double>(total, 0.0));
    }

    int dim() const { return int(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int samples(int axis) const { return shape_[axis]; }
    double spacing() const { return h_; }
    double half_width(int axis) const { return 0.5 * shape_[axis] * h_; }
    bool is_cubic() const {
        for (int n : shape_)
            if (n != shape_[0]) return false;
        return true;
    }
    int N() const {
        if (!is_cubic()) throw error(errc::parameter, "grid is not cubic");
        return shape_[0];
    }
    double L() const { return half_width(0); }
    std::size_t size() const { return values_.size(); }
    double cell() const { return std::pow(h_, dim()); }
    // Fourier lattice cell prod 1/(2 L_a)
    double dual_cell() const {
        double c = 1;
        for (int a = 0; a < dim(); ++a) c /= 2 * half_width(a);
        return c;
    }
    const std::vector<double>& values() const { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

    double coord(int axis, int j) const { return -half_width(axis) + j * h_; }
    // frequency (cycles per unit length) of DFT index j on the axis
    double freq(int axis, int j) const {
        const int n = shape_[axis];
        return double(j < n / 2 ? j : j - n) / (2 * half_width(axis));
    }

    // row-major multi-index of a flat index
    void unravel(std::size_t flat, std::vector<int>& idx) const {
        idx.resize(shape_.size());
        for (int a = dim() - 1; a >= 0; --a) {
            idx[a] = int(flat % shape_[a]);
            flat /= shape_[a];
        }
    }

    // |k|^2 (cycles) of every DFT index, flattened
    std::vector<double> k_squared() const {
        std::vector<std::vector<double>> f(dim());
        for (int a = 0; a < dim(); ++a)
            for (int j = 0; j < shape_[a]; ++j) f[a].push_back(freq(a, j) * freq(a, j));
        std::vector<double> out(size());
        std::vector<int> idx;
        for (std::size_t i = 0; i < size(); ++i) {
            unravel(i, idx);
            double s = 0;
            for (int a = 0; a < dim(); ++a) s += f[a][idx[a]];
            out[i] = s;
        }
        return out;
    }

    // spectrum with the cell volume folded in: f^(k) = h^d sum_j f_j e^{-2 pi i k.j/N}; computed once
    const std::vector<cplx>& spectrum() const {
        std::call_once(cache_->once, [this] {
            std::vector<cplx> a(values_.begin(), values_.end());
            detail::fft_inplace(a, shape_, FFTW_FORWARD);
            const double c = cell();
            for (auto& v : a) v *= c;
            cache_->spec = std::move(a);
        });
        return cache_->spec;
    }

    static GridField from_spectrum(std::vector<int> shape, double h, std::vector<cplx> spec) {
        detail::fft_inplace(spec, shape, FFTW_BACKWARD);
        GridField g = zeros(shape, h);
        const double dc = g.dual_cell();
        for (std::size_t i = 0; i < spec.size(); ++i) g.values_[i] = spec[i].real() * dc;
        return g;
    }

    GridField with_values(std::vector<double> v) const { return GridField(shape_, h_, std::move(v)); }

private:
    struct Cache {
        std::once_flag once;
        std::vector<cplx> spec;
    };
    std::vector<int> shape_;
    double h_ = 1;
    std::vector<double> values_;
    std::shared_ptr<Cache> cache_;
};

// ---- snapshots ----

inline constexpr std::uint16_t snapshot_version = 1;

namespace detail {
template <class T>
void put_le(std::string& out, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.append(reinterpret_cast<char*>(b), sizeof(T));
}
template <class T>
T get_le(const char* p) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}
}  // namespace detail

inline std::string snapshot_bytes(const GridField& f, std::uint32_t flags = 0) {
    std::string out = "TSLF";
    detail::put_le<std::uint16_t>(out, snapshot_version);
    detail::put_le<std::uint16_t>(out, std::uint16_t(f.dim()));
    detail::put_le<std::uint32_t>(out, std::uint32_t(f.N()));
    detail::put_le<double>(out, f.L());
    detail::put_le<std::uint32_t>(out, flags);
    out.append(32 - out.size(), '\0');
    for (double v : f.values()) detail::put_le<double>(out, v);
    return out;
}

inline GridField snapshot_parse(const std::string& bytes) {
    if (bytes.size() < 32 || bytes.compare(0, 4, "TSLF") != 0) throw error(errc::io, "not a grid snapshot (bad magic)");
    const char* p = bytes.data();
    const auto version = detail::get_le<std::uint16_t>(p + 4);
    if (version != snapshot_version) throw error(errc::io, "unsupported snapshot version " + std::to_string(version));
    const int dim = detail::get_le<std::uint16_t>(p + 6);
    const auto N = detail::get_le<std::uint32_t>(p + 8);
    const double L = detail::get_le<double>(p + 12);
    if (dim < 1 || dim > 8 || !detail::is_pow2(int(std::min<std::uint32_t>(N, 1u << 30))) || N < 2 || !(L > 0))
        throw error(errc::io, "snapshot header out of range");
    std::size_t count = 1;
    for (int a = 0; a < dim; ++a) {
        if (count > (std::size_t(1) << 40) / N) throw error(errc::io, "snapshot header out of range");
        count *= N;
    }
    if (bytes.size() != 32 + 8 * count) throw error(errc::io, "snapshot size does not match its header");
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i) {
        v[i] = detail::get_le<double>(p + 32 + 8 * i);
        if (!std::isfinite(v[i])) throw error(errc::io, "non-finite value in snapshot");
    }
    return GridField::cubic(dim, int(N), L, std::move(v));
}

inline void write_snapshot(const GridField& f, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw error(errc::io, "cannot open " + path + " for writing");
    const auto b = snapshot_bytes(f);
    os.write(b.data(), std::streamsize(b.size()));
    if (!os) throw error(errc::io, "write failed for " + path);
}

inline GridField read_snapshot(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw error(errc::io, "cannot open " + path);
    std::string b((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return snapshot_parse(b);
}

}  // namespace tsl
