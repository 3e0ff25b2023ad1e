#include "swe4dvar/observations.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "swe4dvar/covariance.hpp"
#include "swe4dvar/errors.hpp"

namespace swe4dvar {

std::size_t ObservationSet::size() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.size();
    return n;
}

std::vector<std::size_t> ObservationSet::times() const {
    std::vector<std::size_t> t;
    t.reserve(blocks.size());
    for (const auto& b : blocks) t.push_back(b.time);
    return t;
}

std::vector<ObsKey> ObservationSet::keys() const {
    std::vector<ObsKey> k;
    k.reserve(size());
    for (std::size_t s = 0; s < blocks.size(); ++s) {
        for (std::size_t idx : blocks[s].indices) k.push_back({s, blocks[s].time, idx});
    }
    return k;
}

std::vector<std::size_t> ObservationSet::offsets() const {
    std::vector<std::size_t> off;
    off.reserve(blocks.size());
    std::size_t acc = 0;
    for (const auto& b : blocks) {
        off.push_back(acc);
        acc += b.size();
    }
    return off;
}

Eigen::VectorXd ObservationSet::flat_values() const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(size()));
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
        out.segment(at, b.values.size()) = b.values;
        at += b.values.size();
    }
    return out;
}

Eigen::VectorXd ObservationSet::flat_variances() const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(size()));
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
        out.segment(at, b.variances.size()) = b.variances;
        at += b.variances.size();
    }
    return out;
}

void validate(const ObservationSet& obs, const Grid& grid, std::size_t num_steps) {
    for (std::size_t s = 0; s < obs.blocks.size(); ++s) {
        const auto& b = obs.blocks[s];
        if (s > 0 && b.time <= obs.blocks[s - 1].time) {
            throw InvalidDimensionError("observation blocks must have strictly increasing times");
        }
        if (b.time > num_steps) {
            throw InvalidDimensionError("observation time " + std::to_string(b.time) + " beyond final step");
        }
        if (static_cast<std::size_t>(b.values.size()) != b.size() ||
            static_cast<std::size_t>(b.variances.size()) != b.size()) {
            throw ShapeMismatchError("observation block arrays differ in length");
        }
        for (std::size_t idx : b.indices) {
            if (idx >= grid.state_size()) throw InvalidDimensionError("observed index outside the state");
        }
        if ((b.variances.array() <= 0.0).any()) throw InvalidDimensionError("observation variances must be positive");
    }
}

std::vector<std::size_t> full_coverage(const Grid& grid) {
    std::vector<std::size_t> idx(grid.state_size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    return idx;
}

ObservationSet generate_observations(const Trajectory& ref, std::span<const std::size_t> indices,
                                     double noise_frac, std::uint64_t seed, double cov_noise_frac) {
    if (noise_frac < 0.0) throw InvalidDimensionError("noise fraction must be non-negative");
    const Grid& grid = ref.grid();
    ObservationSet obs;
    std::vector<double> clean;
    std::vector<Variable> vars;
    for (std::size_t t : ref.obs_times) {
        ObservationBlock block;
        block.time = t;
        block.indices.assign(indices.begin(), indices.end());
        block.values = select_block(block, ref.states[t].values());
        for (std::size_t k = 0; k < block.size(); ++k) {
            clean.push_back(block.values[static_cast<Eigen::Index>(k)]);
            vars.push_back(decode_index(grid, block.indices[k]).variable);
        }
        obs.blocks.push_back(std::move(block));
    }
    const ObsCov cov = build_obs_cov(clean, vars, cov_noise_frac);

    std::array<double, 3> max_abs{0.0, 0.0, 0.0};
    for (std::size_t k = 0; k < clean.size(); ++k) {
        auto& m = max_abs[static_cast<std::size_t>(vars[k])];
        m = std::max(m, std::abs(clean[k]));
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::size_t flat = 0;
    for (auto& block : obs.blocks) {
        block.variances.resize(static_cast<Eigen::Index>(block.size()));
        for (std::size_t k = 0; k < block.size(); ++k, ++flat) {
            const auto ik = static_cast<Eigen::Index>(k);
            block.variances[ik] = cov.variances[static_cast<Eigen::Index>(flat)];
            if (noise_frac > 0.0) {
                block.values[ik] += noise_frac * max_abs[static_cast<std::size_t>(vars[flat])] * normal(rng);
            }
        }
    }
    return obs;
}

ObservationSet subset(const ObservationSet& obs, const std::vector<bool>& keep) {
    if (keep.size() != obs.size()) throw ShapeMismatchError("mask length does not match the observation count");
    ObservationSet out;
    std::size_t flat = 0;
    for (const auto& b : obs.blocks) {
        ObservationBlock nb;
        nb.time = b.time;
        std::vector<double> values;
        std::vector<double> variances;
        for (std::size_t k = 0; k < b.size(); ++k, ++flat) {
            if (!keep[flat]) continue;
            nb.indices.push_back(b.indices[k]);
            values.push_back(b.values[static_cast<Eigen::Index>(k)]);
            variances.push_back(b.variances[static_cast<Eigen::Index>(k)]);
        }
        if (nb.indices.empty()) continue;
        nb.values = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
        nb.variances = Eigen::Map<Eigen::VectorXd>(variances.data(), static_cast<Eigen::Index>(variances.size()));
        out.blocks.push_back(std::move(nb));
    }
    return out;
}

Eigen::VectorXd select_block(const ObservationBlock& block, const Eigen::VectorXd& state) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(block.size()));
    for (std::size_t k = 0; k < block.size(); ++k) {
        out[static_cast<Eigen::Index>(k)] = state[static_cast<Eigen::Index>(block.indices[k])];
    }
    return out;
}

Eigen::VectorXd scatter_block(const ObservationBlock& block, const Eigen::VectorXd& w, std::size_t state_size) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(state_size));
    for (std::size_t k = 0; k < block.size(); ++k) {
        out[static_cast<Eigen::Index>(block.indices[k])] += w[static_cast<Eigen::Index>(k)];
    }
    return out;
}

}  // namespace swe4dvar
