#pragma once

#include <cmath>
#include <map>
#include <string>

#include "slotmorph/params.hpp"

namespace slotmorph {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0;  // global gradient norm cap, 0 disables
};

// One bias-corrected Adam step; `step` is the number of steps taken before
// this one. Parameters missing from `grads` are left untouched.
inline void adam_step(ParamSet<float>& params, ParamSet<float>& m, ParamSet<float>& v,
                      const std::map<std::string, Tensor<float>>& grads, std::size_t step, const AdamConfig& cfg)
{
    double norm2 = 0.0;
    for (const auto& [_, gr] : grads)
        for (float x : gr.vec()) norm2 += static_cast<double>(x) * x;
    const double norm = std::sqrt(norm2);
    const double clip = (cfg.clip_norm > 0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;

    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    const auto b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
    for (const auto& [name, gr] : grads) {
        auto& w = params.at(name);
        auto& mm = m.at(name);
        auto& vv = v.at(name);
        for (std::size_t i = 0; i < w.size(); ++i) {
            const auto g = static_cast<float>(gr[i] * clip);
            mm[i] = b1 * mm[i] + (1.0f - b1) * g;
            vv[i] = b2 * vv[i] + (1.0f - b2) * g * g;
            const double mhat = mm[i] / bc1, vhat = vv[i] / bc2;
            w[i] -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

inline ParamSet<float> zeros_like(const ParamSet<float>& ps)
{
    ParamSet<float> out;
    for (const auto& [k, t] : ps.all()) out.add(k, Tensor<float>(t.dims()));
    return out;
}

}  // namespace slotmorph
