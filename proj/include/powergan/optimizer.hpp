#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "powergan/archive.hpp"
#include "powergan/autograd.hpp"

namespace powergan {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.0;
    double beta2 = 0.99;
    double eps = 1e-8;
};

// Adam with per-parameter state keyed by name. Parameters added later (after
// a grow) start with zero moments and their own step count.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(const std::vector<std::string>& names, std::vector<ad::Var<float>>& params,
              const std::vector<ad::Var<float>>& grads);

    const AdamConfig& config() const { return cfg_; }
    std::int64_t step_count(const std::string& name) const;

    Archive save() const;
    void load(const Archive& archive);

private:
    struct State {
        std::vector<float> m, v;
        std::int64_t t = 0;
    };
    AdamConfig cfg_;
    std::map<std::string, State> state_;
};

}  // namespace powergan
