#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <Eigen/Dense>

#include "tvmerge/checkpoint_io.hpp"
#include "tvmerge/task_vector.hpp"

namespace tvmerge {

enum class LoraMergeMode {
    PER_MATRIX,   // A' = A_T + lambda*A_S, B' = B_T + lambda*B_S
    DELTA_SPACE,  // merge the effective deltas (alpha/r)(B_T A_T + lambda B_S A_S)
};

struct MergeSpec {
    double lambda = 0.0;
    LoraMergeMode mode = LoraMergeMode::PER_MATRIX;
    NamePolicy name_policy = NamePolicy::STRICT;
};

struct LoraLayer {
    Eigen::MatrixXd A;  // r x k
    Eigen::MatrixXd B;  // d x r
};

struct LoraAdapter {
    std::map<std::string, LoraLayer> layers;
    int rank = 0;
    double alpha = 0.0;
    std::string target_module_pattern = "q_proj,v_proj";

    void validate() const {
        if (rank <= 0 || alpha <= 0) throw std::runtime_error("rank and alpha must be positive");
        for (const auto& [id, layer] : layers) {
            if (layer.A.rows() != rank)
                throw std::runtime_error("layer " + id + ": A has " +
                                         std::to_string(layer.A.rows()) + " rows, expected rank " +
                                         std::to_string(rank));
            if (layer.B.cols() != rank)
                throw std::runtime_error("layer " + id + ": B has " +
                                         std::to_string(layer.B.cols()) +
                                         " columns, expected rank " + std::to_string(rank));
        }
    }

    double scaling() const { return alpha / static_cast<double>(rank); }
};

namespace detail {

inline void check_mergeable(const LoraAdapter& target, const LoraAdapter& support) {
    if (target.rank != support.rank)
        throw std::runtime_error("rank mismatch: " + std::to_string(target.rank) + " vs " +
                                 std::to_string(support.rank));
    if (target.layers.size() != support.layers.size())
        throw std::runtime_error("adapters target different layer sets");
    for (const auto& [id, lt] : target.layers) {
        auto it = support.layers.find(id);
        if (it == support.layers.end())
            throw std::runtime_error("layer " + id + " missing from support adapter");
        const LoraLayer& ls = it->second;
        if (lt.A.rows() != ls.A.rows() || lt.A.cols() != ls.A.cols() ||
            lt.B.rows() != ls.B.rows() || lt.B.cols() != ls.B.cols())
            throw std::runtime_error("matrix shape mismatch in layer " + id);
    }
}

// A layer id resolves to the base tensor named "<id>" or "<id>.weight" and
// must mention one of the configured target modules.
inline std::string resolve_layer(const std::string& layer_id, const std::string& pattern,
                                 const TensorMap& base) {
    if (!pattern.empty()) {
        bool matched = false;
        std::size_t pos = 0;
        while (pos <= pattern.size()) {
            const std::size_t comma = pattern.find(',', pos);
            const std::string module =
                pattern.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
            if (!module.empty() && layer_id.find(module) != std::string::npos) matched = true;
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (!matched)
            throw std::runtime_error("layer " + layer_id + " does not match target modules \"" +
                                     pattern + "\"");
    }
    if (base.entries.count(layer_id)) return layer_id;
    if (base.entries.count(layer_id + ".weight")) return layer_id + ".weight";
    throw std::runtime_error("layer " + layer_id + " resolves to no base tensor");
}

inline Eigen::MatrixXd as_matrix(const Tensor& t) {
    if (t.shape.size() != 2) throw std::runtime_error("expected a rank-2 tensor");
    Eigen::MatrixXd m(t.shape[0], t.shape[1]);
    for (std::size_t r = 0; r < t.shape[0]; ++r)
        for (std::size_t c = 0; c < t.shape[1]; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                t.values[r * t.shape[1] + c];
    return m;
}

inline void add_matrix_into(Tensor& t, const Eigen::MatrixXd& m) {
    if (t.shape.size() != 2 || static_cast<Eigen::Index>(t.shape[0]) != m.rows() ||
        static_cast<Eigen::Index>(t.shape[1]) != m.cols())
        throw std::runtime_error("delta shape does not match base tensor");
    for (std::size_t r = 0; r < t.shape[0]; ++r)
        for (std::size_t c = 0; c < t.shape[1]; ++c)
            t.values[r * t.shape[1] + c] +=
                m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

}  // namespace detail

// The paper's merge: scale the support adapter's weights by lambda and add
// them to the target adapter's, per matrix. DELTA_SPACE has no low-rank
// factorization in general, so it is only available through materialization.
inline LoraAdapter merge_lora(const LoraAdapter& target, const LoraAdapter& support,
                              const MergeSpec& spec) {
    target.validate();
    support.validate();
    detail::check_mergeable(target, support);
    if (spec.mode == LoraMergeMode::DELTA_SPACE)
        throw std::runtime_error(
            "DELTA_SPACE merges cannot be returned as low-rank factors; use "
            "materialize_merged");
    LoraAdapter out = target;
    for (auto& [id, layer] : out.layers) {
        const LoraLayer& s = support.layers.at(id);
        layer.A += spec.lambda * s.A;
        layer.B += spec.lambda * s.B;
    }
    return out;
}

inline TensorMap materialize_lora(const LoraAdapter& adapter, const TensorMap& theta_base) {
    adapter.validate();
    TensorMap result = theta_base;
    const double scale = adapter.scaling();
    for (const auto& [id, layer] : adapter.layers) {
        const std::string name =
            detail::resolve_layer(id, adapter.target_module_pattern, theta_base);
        Tensor& t = result.entries.at(name);
        t.dtype = Dtype::F32;
        detail::add_matrix_into(t, scale * (layer.B * layer.A));
    }
    return result;
}

// Merge two adapters and apply the result to the base model in one step;
// the only way to obtain a DELTA_SPACE result.
inline TensorMap materialize_merged(const LoraAdapter& target, const LoraAdapter& support,
                                    const MergeSpec& spec, const TensorMap& theta_base) {
    if (spec.mode == LoraMergeMode::PER_MATRIX)
        return materialize_lora(merge_lora(target, support, spec), theta_base);
    target.validate();
    support.validate();
    detail::check_mergeable(target, support);
    TensorMap result = theta_base;
    const double scale = target.scaling();
    for (const auto& [id, lt] : target.layers) {
        const LoraLayer& ls = support.layers.at(id);
        const std::string name =
            detail::resolve_layer(id, target.target_module_pattern, theta_base);
        Tensor& t = result.entries.at(name);
        t.dtype = Dtype::F32;
        detail::add_matrix_into(t, scale * (lt.B * lt.A + spec.lambda * (ls.B * ls.A)));
    }
    return result;
}

// Adapter container layout: "<layer_id>.lora_A" (r x k), "<layer_id>.lora_B"
// (d x r); rank/alpha/target modules live in __metadata__.
inline void write_adapter(const LoraAdapter& adapter, const std::filesystem::path& path) {
    adapter.validate();
    TensorMap m;
    m.metadata["rank"] = std::to_string(adapter.rank);
    m.metadata["alpha"] = std::to_string(adapter.alpha);
    m.metadata["target_modules"] = adapter.target_module_pattern;
    m.metadata["kind"] = "lora_adapter";
    for (const auto& [id, layer] : adapter.layers) {
        Tensor a;
        a.shape = {static_cast<std::size_t>(layer.A.rows()),
                   static_cast<std::size_t>(layer.A.cols())};
        a.values.resize(a.numel());
        for (Eigen::Index r = 0; r < layer.A.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.A.cols(); ++c)
                a.values[static_cast<std::size_t>(r) * layer.A.cols() + c] = layer.A(r, c);
        Tensor b;
        b.shape = {static_cast<std::size_t>(layer.B.rows()),
                   static_cast<std::size_t>(layer.B.cols())};
        b.values.resize(b.numel());
        for (Eigen::Index r = 0; r < layer.B.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.B.cols(); ++c)
                b.values[static_cast<std::size_t>(r) * layer.B.cols() + c] = layer.B(r, c);
        m.entries.emplace(id + ".lora_A", std::move(a));
        m.entries.emplace(id + ".lora_B", std::move(b));
    }
    write_checkpoint(m, path);
}

inline LoraAdapter read_adapter(const std::filesystem::path& path) {
    TensorMap m = read_checkpoint(path);
    LoraAdapter adapter;
    auto meta = [&](const char* key) {
        auto it = m.metadata.find(key);
        if (it == m.metadata.end())
            throw std::runtime_error(std::string("adapter file missing __metadata__ key ") + key);
        return it->second;
    };
    adapter.rank = std::stoi(meta("rank"));
    adapter.alpha = std::stod(meta("alpha"));
    if (m.metadata.count("target_modules"))
        adapter.target_module_pattern = m.metadata.at("target_modules");
    for (const auto& [name, t] : m.entries) {
        const bool is_a = name.size() > 7 && name.ends_with(".lora_A");
        const bool is_b = name.size() > 7 && name.ends_with(".lora_B");
        if (!is_a && !is_b)
            throw std::runtime_error("unexpected tensor in adapter file: " + name);
        const std::string id = name.substr(0, name.size() - 7);
        Eigen::MatrixXd mat = detail::as_matrix(t);
        if (is_a)
            adapter.layers[id].A = std::move(mat);
        else
            adapter.layers[id].B = std::move(mat);
    }
    for (const auto& [id, layer] : adapter.layers)
        if (layer.A.size() == 0 || layer.B.size() == 0)
            throw std::runtime_error("layer " + id + " is missing its lora_A or lora_B tensor");
    adapter.validate();
    return adapter;
}

}  // namespace tvmerge
