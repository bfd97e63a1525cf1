#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tvmerge/checkpoint_io.hpp"
#include "tvmerge/tensor.hpp"

namespace tvmerge {

// Elementwise difference between a fine-tuned and a base checkpoint, bound to
// the base by fingerprint. This is the object that gets scaled by lambda and
// added back onto a target model.
struct TaskVector {
    std::map<std::string, Tensor> deltas;
    std::string base_fingerprint;
};

enum class NamePolicy { STRICT, INTERSECTION };

namespace detail {

inline void check_same_shape(const std::string& name, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw std::runtime_error("shape mismatch for tensor " + name);
}

}  // namespace detail

inline TaskVector compute_task_vector(const TensorMap& theta_ft, const TensorMap& theta_base,
                                      NamePolicy policy = NamePolicy::STRICT) {
    if (policy == NamePolicy::STRICT) {
        for (const auto& [name, t] : theta_ft.entries)
            if (!theta_base.entries.count(name))
                throw std::runtime_error("tensor " + name + " missing from base checkpoint");
        for (const auto& [name, t] : theta_base.entries)
            if (!theta_ft.entries.count(name))
                throw std::runtime_error("tensor " + name + " missing from fine-tuned checkpoint");
    }
    TaskVector tv;
    tv.base_fingerprint = index_fingerprint(theta_base);
    for (const auto& [name, base] : theta_base.entries) {
        auto it = theta_ft.entries.find(name);
        if (it == theta_ft.entries.end()) continue;  // INTERSECTION
        detail::check_same_shape(name, it->second, base);
        Tensor d;
        d.dtype = Dtype::F32;
        d.shape = base.shape;
        d.values.resize(base.values.size());
        for (std::size_t i = 0; i < base.values.size(); ++i)
            d.values[i] = it->second.values[i] - base.values[i];
        tv.deltas.emplace(name, std::move(d));
    }
    return tv;
}

inline TensorMap apply_task_vector(const TensorMap& theta_target, const TaskVector& tv,
                                   double lambda, NamePolicy policy = NamePolicy::STRICT) {
    if (!std::isfinite(lambda)) throw std::runtime_error("non-finite lambda");
    if (policy == NamePolicy::STRICT) {
        for (const auto& [name, d] : tv.deltas)
            if (!theta_target.entries.count(name))
                throw std::runtime_error("tensor " + name + " missing from target checkpoint");
        for (const auto& [name, t] : theta_target.entries)
            if (!tv.deltas.count(name))
                throw std::runtime_error("tensor " + name + " missing from task vector");
    }
    TensorMap result;
    result.metadata = theta_target.metadata;
    for (const auto& [name, target] : theta_target.entries) {
        Tensor t = target;
        auto it = tv.deltas.find(name);
        if (it != tv.deltas.end()) {
            detail::check_same_shape(name, target, it->second);
            t.dtype = Dtype::F32;  // merged results default to F32
            for (std::size_t i = 0; i < t.values.size(); ++i)
                t.values[i] = target.values[i] + lambda * it->second.values[i];
        }
        result.entries.emplace(name, std::move(t));
    }
    return result;
}

inline TaskVector combine_task_vectors(
    const std::vector<std::pair<const TaskVector*, double>>& terms) {
    if (terms.empty()) throw std::runtime_error("empty task-vector combination");
    const std::string structural = structural_part(terms.front().first->base_fingerprint);
    for (const auto& [tv, w] : terms)
        if (structural_part(tv->base_fingerprint) != structural)
            throw std::runtime_error("task vectors derive from different base checkpoints");
    TaskVector out;
    out.base_fingerprint = terms.front().first->base_fingerprint;
    for (const auto& [name, first] : terms.front().first->deltas) {
        Tensor acc;
        acc.dtype = Dtype::F32;
        acc.shape = first.shape;
        acc.values.assign(first.values.size(), 0.0);
        for (const auto& [tv, w] : terms) {
            auto it = tv->deltas.find(name);
            if (it == tv->deltas.end())
                throw std::runtime_error("tensor " + name + " missing from a combined task vector");
            detail::check_same_shape(name, first, it->second);
            for (std::size_t i = 0; i < acc.values.size(); ++i)
                acc.values[i] += w * it->second.values[i];
        }
        out.deltas.emplace(name, std::move(acc));
    }
    return out;
}

inline double l2_norm(const TaskVector& tv) {
    double acc = 0.0;
    for (const auto& [name, d] : tv.deltas)
        for (double v : d.values) acc += v * v;
    return std::sqrt(acc);
}

// Task vectors travel in the checkpoint container with the fingerprint in
// __metadata__.
inline void write_task_vector(const TaskVector& tv, const std::filesystem::path& path) {
    TensorMap m;
    m.entries = tv.deltas;
    m.metadata["base_fingerprint"] = tv.base_fingerprint;
    m.metadata["kind"] = "task_vector";
    write_checkpoint(m, path);
}

inline TaskVector read_task_vector(const std::filesystem::path& path) {
    TensorMap m = read_checkpoint(path);
    auto it = m.metadata.find("base_fingerprint");
    if (it == m.metadata.end())
        throw std::runtime_error("file is not a task vector (no base_fingerprint): " +
                                 path.string());
    TaskVector tv;
    tv.base_fingerprint = it->second;
    tv.deltas = std::move(m.entries);
    return tv;
}

}  // namespace tvmerge
