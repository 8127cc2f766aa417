#include "powergan/optimizer.hpp"

#include <cmath>

#include "powergan/errors.hpp"

namespace powergan {

void Adam::step(const std::vector<std::string>& names, std::vector<ad::Var<float>>& params,
                const std::vector<ad::Var<float>>& grads) {
    if (names.size() != params.size() || params.size() != grads.size())
        throw Error(ErrorCode::InvalidShape, "optimizer step: names, params and grads differ in length");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].mutable_value().data;
        const auto& g = grads[i].value().data;
        if (g.size() != p.size()) throw Error(ErrorCode::InvalidShape, "gradient shape mismatch for " + names[i]);
        auto& s = state_[names[i]];
        if (s.m.empty()) {
            s.m.assign(p.size(), 0.0f);
            s.v.assign(p.size(), 0.0f);
        }
        ++s.t;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
        const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
        const auto step = static_cast<float>(cfg_.lr / c1);
        const auto root_c2 = static_cast<float>(std::sqrt(c2));
        const auto eps = static_cast<float>(cfg_.eps);
        for (std::size_t j = 0; j < p.size(); ++j) {
            s.m[j] = b1 * s.m[j] + (1.0f - b1) * g[j];
            s.v[j] = b2 * s.v[j] + (1.0f - b2) * g[j] * g[j];
            p[j] -= step * s.m[j] / (std::sqrt(s.v[j]) / root_c2 + eps);
        }
    }
}

std::int64_t Adam::step_count(const std::string& name) const {
    auto it = state_.find(name);
    return it == state_.end() ? 0 : it->second.t;
}

Archive Adam::save() const {
    Archive a;
    a.meta["steps"] = nlohmann::json::object();
    for (const auto& [name, s] : state_) {
        const auto n = static_cast<std::int64_t>(s.m.size());
        a.tensors.emplace("m." + name, ad::Tensor<float>({n}, s.m));
        a.tensors.emplace("v." + name, ad::Tensor<float>({n}, s.v));
        a.meta["steps"][name] = s.t;
    }
    a.meta["lr"] = cfg_.lr;
    a.meta["beta1"] = cfg_.beta1;
    a.meta["beta2"] = cfg_.beta2;
    a.meta["eps"] = cfg_.eps;
    return a;
}

void Adam::load(const Archive& archive) {
    state_.clear();
    try {
        for (const auto& [name, t] : archive.meta.at("steps").items()) {
            State s;
            s.t = t.get<std::int64_t>();
            s.m = archive.tensors.at("m." + name).data;
            s.v = archive.tensors.at("v." + name).data;
            state_.emplace(name, std::move(s));
        }
    } catch (const std::exception& e) {
        throw Error(ErrorCode::IncompatibleCheckpoint, std::string("optimizer state: ") + e.what());
    }
}

}  // namespace powergan
