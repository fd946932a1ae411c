#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "latentfair/autograd.hpp"
#include "latentfair/rng.hpp"

namespace testutil {

using latentfair::Tensor;
using latentfair::Var;

inline Tensor random_tensor(const latentfair::Shape& shape, latentfair::Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// Max relative error between the analytic gradient of f at each input and a
// central finite difference with step h. Relative error uses max(|a|, |n|, 1e-6).
inline double grad_check(const std::function<Var(const std::vector<Var>&)>& f, std::vector<Tensor> inputs,
                         double h = 1e-4) {
    std::vector<Var> vars;
    for (auto& t : inputs) vars.emplace_back(t, true);
    Var out = f(vars);
    latentfair::backward(out);
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor analytic = vars[k].grad();
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            auto eval = [&](double delta) {
                std::vector<Var> probe;
                for (std::size_t j = 0; j < inputs.size(); ++j) {
                    Tensor t = inputs[j];
                    if (j == k) t[i] += delta;
                    probe.emplace_back(t, false);
                }
                return f(probe).value().item();
            };
            const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
            const double a = analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            // absolute slack for values that are numerically zero
            if (std::abs(a - numeric) < 1e-7) continue;
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("latentfair_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testutil
