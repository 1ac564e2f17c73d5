#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace handgen {

using real = double;

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major n-d array of doubles. Shapes are small at desk scale, so
// everything is by value; views are not needed.
struct Tensor {
    std::vector<int> shape;
    std::vector<real> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(numel_of(shape), 0.0) {}
    Tensor(std::vector<int> s, real fill) : shape(std::move(s)), v(numel_of(shape), fill) {}

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw ValidationError("negative tensor dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, real value) { return Tensor(std::move(s), value); }
    static Tensor scalar(real value) { return Tensor({1}, value); }

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    real& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
    real operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

    // offset helpers for the common layouts
    real& at2(int i, int j) { return v[static_cast<size_t>(i) * dim(1) + j]; }
    real at2(int i, int j) const { return v[static_cast<size_t>(i) * dim(1) + j]; }
    real& at3(int i, int j, int k) {
        return v[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
    }
    real at3(int i, int j, int k) const {
        return v[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
    }
    real& at4(int b, int c, int h, int w) {
        return v[((static_cast<size_t>(b) * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }
    real at4(int b, int c, int h, int w) const {
        return v[((static_cast<size_t>(b) * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }

    Tensor reshaped(std::vector<int> s) const {
        if (numel_of(s) != numel()) throw ValidationError("reshape: element count mismatch");
        Tensor out = *this;
        out.shape = std::move(s);
        return out;
    }

    void fill(real x) { std::fill(v.begin(), v.end(), x); }

    bool all_finite() const {
        for (real x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    real sum() const { return std::accumulate(v.begin(), v.end(), 0.0); }

    real norm() const {
        real s = 0;
        for (real x : v) s += x * x;
        return std::sqrt(s);
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

inline void check_shape(const Tensor& t, const std::vector<int>& want, const char* where) {
    if (t.shape != want) {
        Tensor w(want);
        throw ValidationError(std::string(where) + ": expected shape " + w.shape_str() + ", got " +
                              t.shape_str());
    }
}

} // namespace handgen
