#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "sraa/errors.hpp"
#include "sraa/hash.hpp"
#include "sraa/label_map.hpp"
#include "sraa/rng.hpp"
#include "sraa/tensor.hpp"

namespace sraa {

enum class PrototypeOrigin : std::uint8_t {
    LearnedBase = 0,       // free vector optimized in the base step
    ImprintedSemantic = 1  // initialized from a semantic vector in an incremental step
};

struct PrototypeInfo {
    ClassId class_id;
    PrototypeOrigin origin;
    std::int32_t step_created;
};

/// Ordered, step-tagged class prototypes: one row of the matrix per class,
/// row order equal to creation order (older classes strictly first). The
/// matrix is a single tensor so per-pixel scoring reduces to a normalized
/// product against it.
class PrototypeSet {
public:
    PrototypeSet() = default;

    PrototypeSet(std::vector<PrototypeInfo> info, Tensor matrix)
        : info_(std::move(info)), matrix_(std::move(matrix)) {
        if (info_.empty()) throw ConfigError("PrototypeSet: empty");
        if (matrix_.rank() != 2 || matrix_.shape()[0] != info_.size()) {
            throw ShapeError("PrototypeSet: matrix rows must match entry count");
        }
        std::set<ClassId> seen;
        for (const auto& e : info_) {
            if (!seen.insert(e.class_id).second) {
                throw DuplicateClassError("PrototypeSet: duplicate class " +
                                          std::to_string(e.class_id));
            }
        }
        const std::size_t d = dim();
        for (std::size_t r = 0; r < info_.size(); ++r) {
            double n2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double v = matrix_.data()[r * d + c];
                n2 += v * v;
            }
            if (n2 == 0.0) {
                throw NumericError("PrototypeSet: zero prototype for class " +
                                   std::to_string(info_[r].class_id));
            }
        }
    }

    /// Random unit-norm trainable prototypes for the base classes.
    static PrototypeSet random_base(std::span<const ClassId> classes, std::size_t dim,
                                    std::uint64_t seed) {
        std::vector<PrototypeInfo> info;
        std::vector<double> data;
        data.reserve(classes.size() * dim);
        for (ClassId c : classes) {
            Rng rng(derive_seed(seed, {0xB453u, c}));
            std::vector<double> v(dim);
            double n2 = 0.0;
            for (double& x : v) {
                x = rng.normal();
                n2 += x * x;
            }
            const double n = std::sqrt(n2);
            for (double& x : v) data.push_back(x / n);
            info.push_back({c, PrototypeOrigin::LearnedBase, 0});
        }
        return PrototypeSet(std::move(info),
                            Tensor::param({classes.size(), dim}, std::move(data)));
    }

    std::size_t size() const { return info_.size(); }
    std::size_t dim() const { return matrix_.shape()[1]; }
    const std::vector<PrototypeInfo>& entries() const { return info_; }
    const Tensor& matrix() const { return matrix_; }

    std::vector<ClassId> class_ids() const {
        std::vector<ClassId> out;
        out.reserve(info_.size());
        for (const auto& e : info_) out.push_back(e.class_id);
        return out;
    }

    bool contains(ClassId c) const {
        for (const auto& e : info_) {
            if (e.class_id == c) return true;
        }
        return false;
    }

    std::vector<double> vector_of(ClassId c) const {
        const std::size_t d = dim();
        for (std::size_t r = 0; r < info_.size(); ++r) {
            if (info_[r].class_id == c) {
                return {matrix_.data().begin() + r * d, matrix_.data().begin() + (r + 1) * d};
            }
        }
        throw UnknownClassError("PrototypeSet: no prototype for class " + std::to_string(c));
    }

    /// Older set first, then the newer one; class sets must be disjoint.
    PrototypeSet concat_with(const PrototypeSet& newer) const {
        std::vector<PrototypeInfo> info = info_;
        for (const auto& e : newer.info_) {
            if (contains(e.class_id)) {
                throw DuplicateClassError("PrototypeSet: class " + std::to_string(e.class_id) +
                                          " present in both sets");
            }
            info.push_back(e);
        }
        return PrototypeSet(std::move(info), concat({matrix_, newer.matrix_}, 0));
    }

    PrototypeSet clone(bool requires_grad) const {
        return PrototypeSet(info_, matrix_.clone(requires_grad));
    }

    std::uint64_t hash() const {
        std::uint64_t h = fnv1a64(matrix_.data());
        for (const auto& e : info_) {
            h = fnv1a64(&e.class_id, sizeof(e.class_id), h);
            h = fnv1a64(&e.origin, sizeof(e.origin), h);
            h = fnv1a64(&e.step_created, sizeof(e.step_created), h);
        }
        return h;
    }

private:
    std::vector<PrototypeInfo> info_;
    Tensor matrix_;  // [|P|, D]
};

}  // namespace sraa
