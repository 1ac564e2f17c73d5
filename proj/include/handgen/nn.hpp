#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "autograd.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace handgen {

using ParamMap = std::vector<std::pair<std::string, Var>>;

inline void set_requires_grad(Var& v, bool flag) {
    if (v.defined()) v.node()->requires_grad = flag;
}

inline Var make_param(Tensor t) { return Var(std::move(t), /*requires_grad=*/true); }

// torch-style fan-in uniform init
inline Var init_uniform(std::vector<int> shape, int fan_in, RandomStream& rng) {
    Tensor t(std::move(shape));
    real k = fan_in > 0 ? 1.0 / std::sqrt(static_cast<real>(fan_in)) : 0.0;
    rng.fill_uniform(t, -k, k);
    return make_param(std::move(t));
}

struct Conv2dLayer {
    int in_ch = 0, out_ch = 0, ksize = 3, stride = 1, pad = 1;
    Var weight, bias;

    Conv2dLayer() = default;
    Conv2dLayer(int in, int out, int k, int s, int p) : in_ch(in), out_ch(out), ksize(k), stride(s), pad(p) {}

    void init(RandomStream& rng) {
        int fan = in_ch * ksize * ksize;
        weight = init_uniform({out_ch, in_ch, ksize, ksize}, fan, rng);
        bias = init_uniform({out_ch}, fan, rng);
    }

    void init_zero() { // zero convolution
        weight = make_param(Tensor({out_ch, in_ch, ksize, ksize}));
        bias = make_param(Tensor({out_ch}));
    }

    Var forward(const Var& x) const { return conv2d(x, weight, bias, stride, pad); }

    void collect(ParamMap& out, const std::string& prefix) {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

struct LinearLayer {
    int in_d = 0, out_d = 0;
    Var weight, bias;

    LinearLayer() = default;
    LinearLayer(int in, int out) : in_d(in), out_d(out) {}

    void init(RandomStream& rng) {
        weight = init_uniform({out_d, in_d}, in_d, rng);
        bias = init_uniform({out_d}, in_d, rng);
    }

    // x: [B,N,in] -> [B,N,out]
    Var forward(const Var& x) const { return linear(x, weight, bias); }

    // x: [B,in] -> [B,out]
    Var forward2d(const Var& x) const {
        auto s = x.shape();
        Var x3 = reshape(x, {s[0], 1, s[1]});
        return reshape(linear(x3, weight, bias), {s[0], out_d});
    }

    void collect(ParamMap& out, const std::string& prefix) {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

struct GroupNormLayer {
    int channels = 0, groups = 8;
    Var gamma, beta;

    GroupNormLayer() = default;
    GroupNormLayer(int ch, int g) : channels(ch), groups(g) {}

    void init() {
        gamma = make_param(Tensor::full({channels}, 1.0));
        beta = make_param(Tensor({channels}));
    }

    Var forward(const Var& x) const { return group_norm(x, groups, gamma, beta); }

    void collect(ParamMap& out, const std::string& prefix) {
        out.emplace_back(prefix + ".gamma", gamma);
        out.emplace_back(prefix + ".beta", beta);
    }
};

/*------------------------------ optimizer ------------------------------*/

class Adam {
public:
    Adam(ParamMap params, real lr, real beta1 = 0.9, real beta2 = 0.999, real eps = 1e-8)
        : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        for (auto& [name, p] : params_) {
            m_.emplace_back(p.shape());
            v_.emplace_back(p.shape());
        }
    }

    void zero_grad() {
        for (auto& [name, p] : params_) p.zero_grad();
    }

    void step() {
        ++t_;
        real c1 = 1.0 - std::pow(b1_, static_cast<real>(t_));
        real c2 = 1.0 - std::pow(b2_, static_cast<real>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Var& p = params_[i].second;
            if (p.grad().v.empty()) continue;
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            Tensor& w = p.val_mut();
            const Tensor& g = p.grad();
            for (int64_t j = 0; j < w.numel(); ++j) {
                m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
                v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
                real mh = m[j] / c1;
                real vh = v[j] / c2;
                w[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
            }
        }
    }

    const ParamMap& params() const { return params_; }
    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }
    Tensor& moment1(size_t i) { return m_[i]; }
    Tensor& moment2(size_t i) { return v_[i]; }
    size_t size() const { return params_.size(); }
    void set_lr(real lr) { lr_ = lr; }

private:
    ParamMap params_;
    real lr_, b1_, b2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

/*--------------------------- param utilities ---------------------------*/

inline void set_trainable(ParamMap& params, bool flag) {
    for (auto& [name, p] : params) set_requires_grad(p, flag);
}

// FNV-1a checksum over the raw parameter bytes, in registration order.
inline uint64_t params_checksum(const ParamMap& params) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, p] : params) {
        h = fnv1a(name, h);
        for (real x : p.val().v) {
            const unsigned char* b = reinterpret_cast<const unsigned char*>(&x);
            for (size_t i = 0; i < sizeof(real); ++i) {
                h ^= b[i];
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

// copy values between identically-structured param maps
inline void copy_params(const ParamMap& src, ParamMap& dst) {
    if (src.size() != dst.size()) throw ValidationError("copy_params: size mismatch");
    for (size_t i = 0; i < src.size(); ++i) {
        if (src[i].second.val().shape != dst[i].second.val().shape)
            throw ValidationError("copy_params: shape mismatch at " + src[i].first);
        dst[i].second.val_mut() = src[i].second.val();
    }
}

} // namespace handgen
