#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sraa/errors.hpp"
#include "sraa/label_map.hpp"
#include "sraa/prototypes.hpp"
#include "sraa/tensor.hpp"

namespace sraa {

/// Per-class binary occupancy masks derived from a label map at feature
/// resolution. Masks are mutually exclusive and exhaustive by construction:
/// every pixel contributes to exactly the mask of its label.
class ClassMask {
public:
    explicit ClassMask(LabelMap labels) : labels_(std::move(labels)) {}

    const LabelMap& labels() const { return labels_; }

    std::size_t count(ClassId c) const {
        std::size_t n = 0;
        for (ClassId v : labels_.ids) {
            if (v == c) ++n;
        }
        return n;
    }

    /// Flat {0,1} mask of length n*h*w, row-major over (image, row, col).
    std::vector<double> mask(ClassId c) const {
        std::vector<double> out(labels_.ids.size(), 0.0);
        for (std::size_t i = 0; i < labels_.ids.size(); ++i) {
            if (labels_.ids[i] == c) out[i] = 1.0;
        }
        return out;
    }

    std::vector<ClassId> present_classes(bool include_background = false) const {
        std::vector<ClassId> out;
        for (const auto& [c, n] : labels_.histogram()) {
            if (c == kBackgroundClass && !include_background) continue;
            out.push_back(c);
        }
        return out;
    }

private:
    LabelMap labels_;
};

namespace detail {

inline void require_feature_grid(const Tensor& features, const LabelMap& labels,
                                 const char* who) {
    if (features.rank() != 4) {
        throw ShapeError(std::string(who) + ": features must be rank 4 (N,H,W,D)");
    }
    const auto& s = features.shape();
    if (s[0] != labels.n || s[1] != labels.h || s[2] != labels.w) {
        throw ShapeError(std::string(who) + ": features and labels disagree on grid size");
    }
}

}  // namespace detail

/// Mean feature vector of every requested class: row c is the average of the
/// feature map over the pixels labelled c, so gradients spread back uniformly
/// over exactly those pixels.
inline Tensor pool_class_means(const Tensor& features, const ClassMask& masks,
                               std::span<const ClassId> classes) {
    detail::require_feature_grid(features, masks.labels(), "pool_class_means");
    if (classes.empty()) throw ConfigError("pool_class_means: no classes requested");
    const std::size_t pixels = features.shape()[0] * features.shape()[1] * features.shape()[2];
    const std::size_t dim = features.shape()[3];
    const Tensor flat = reshape(features, {pixels, dim});
    std::vector<Tensor> rows;
    rows.reserve(classes.size());
    for (ClassId c : classes) {
        const std::size_t n = masks.count(c);
        if (n == 0) {
            throw EmptyClassError("pool_class_means: class " + std::to_string(c) +
                                  " has no pixels");
        }
        const Tensor row = Tensor::from({1, pixels}, masks.mask(c));
        rows.push_back(div(matmul(row, flat), static_cast<double>(n)));
    }
    if (rows.size() == 1) return rows.front();
    return concat(rows, 0);
}

/// Contrast between mismatched and matched row products of two aligned
/// matrices: mean over the off-diagonal of g s^T minus mean over its diagonal.
/// Descending it pulls each g row toward its own s row and away from the
/// others. With unit rows the value lies in [-2, 2].
inline Tensor relation_alignment_loss(const Tensor& pooled, const Tensor& semantic) {
    if (pooled.rank() != 2 || semantic.rank() != 2 || pooled.shape() != semantic.shape()) {
        throw ShapeError("relation_alignment_loss: inputs must share a [C,D] shape");
    }
    const std::size_t c = pooled.shape()[0];
    if (c < 2) {
        throw ConfigError("relation_alignment_loss: needs at least 2 classes");
    }
    const Tensor corr = matmul(pooled, transpose(semantic));  // [C, C]
    std::vector<double> eye(c * c, 0.0);
    for (std::size_t i = 0; i < c; ++i) eye[i * c + i] = 1.0;
    const Tensor paired = sum(mul(corr, Tensor::from({c, c}, eye)));
    const Tensor total = sum(corr);
    const double off = static_cast<double>(c * (c - 1));
    return sub(div(sub(total, paired), off), div(paired, static_cast<double>(c)));
}

/// Per-pixel cosine similarity to every prototype: [N,H,W,|P|], channel order
/// equal to prototype creation order, values in [-1, 1]. Gradients reach both
/// the features and the prototype matrix.
inline Tensor affinity_map(const Tensor& features, const Tensor& prototypes) {
    if (features.rank() != 4) {
        throw ShapeError("affinity_map: features must be rank 4 (N,H,W,D)");
    }
    if (prototypes.rank() != 2 || prototypes.shape()[1] != features.shape()[3]) {
        throw ShapeError("affinity_map: prototype dim must match feature dim");
    }
    const auto& s = features.shape();
    const std::size_t pixels = s[0] * s[1] * s[2];
    const Tensor fn = l2_normalize(reshape(features, {pixels, s[3]}), 1);
    const Tensor pn = l2_normalize(prototypes, 1);
    return reshape(matmul(fn, transpose(pn)), {s[0], s[1], s[2], prototypes.shape()[0]});
}

inline Tensor affinity_map(const Tensor& features, const PrototypeSet& prototypes) {
    return affinity_map(features, prototypes.matrix());
}

/// Joins affinity channels of the retained classes with those of the freshly
/// added ones; old channels come first so channel order keeps tracking class
/// creation order.
inline Tensor concat_affinities(const Tensor& old_aff, const Tensor& new_aff) {
    if (old_aff.rank() != 4 || new_aff.rank() != 4) {
        throw ShapeError("concat_affinities: inputs must be rank 4 (N,H,W,C)");
    }
    for (std::size_t i = 0; i < 3; ++i) {
        if (old_aff.shape()[i] != new_aff.shape()[i]) {
            throw ShapeError("concat_affinities: inputs disagree on grid size");
        }
    }
    return concat({old_aff, new_aff}, 3);
}

/// Softmax over prototype scores scaled by temperature: [N,H,W,|P|] of
/// per-pixel class probabilities.
inline Tensor prototype_segment(const Tensor& features, const PrototypeSet& prototypes,
                                double temperature) {
    if (temperature <= 0.0) {
        throw ConfigError("prototype_segment: temperature must be positive");
    }
    return softmax(mul(affinity_map(features, prototypes), temperature), 3);
}

/// Mean negative log probability of the labelled channel. Labels are channel
/// indices into the probability map. Only selected entries meet the log, so
/// zero probabilities on unselected channels are harmless.
inline Tensor segmentation_ce(const Tensor& probs, const LabelMap& labels) {
    detail::require_feature_grid(probs, labels, "segmentation_ce");
    const auto& s = probs.shape();
    const std::size_t pixels = s[0] * s[1] * s[2];
    const std::size_t channels = s[3];
    std::vector<double> onehot(pixels * channels, 0.0);
    for (std::size_t i = 0; i < pixels; ++i) {
        const ClassId y = labels.ids[i];
        if (y >= channels) {
            throw LabelError("segmentation_ce: label " + std::to_string(y) +
                             " outside the " + std::to_string(channels) + " channels");
        }
        onehot[i * channels + y] = 1.0;
    }
    const Tensor flat = reshape(probs, {pixels, channels});
    const Tensor selected = sum(mul(flat, Tensor::from({pixels, channels}, onehot)), {1});
    return neg(mean(log(selected)));
}

/// Cross-entropy straight over raw affinities: softmax with temperature, then
/// the same selected-channel path as segmentation_ce.
inline Tensor affinity_ce(const Tensor& affinities, const LabelMap& labels,
                          double temperature) {
    if (temperature <= 0.0) {
        throw ConfigError("affinity_ce: temperature must be positive");
    }
    detail::require_feature_grid(affinities, labels, "affinity_ce");
    return segmentation_ce(softmax(mul(affinities, temperature), 3), labels);
}

/// Soft cross-entropy of the student's class scores against a frozen
/// teacher's distribution over the classes the teacher knows. The student is
/// truncated to the teacher's leading channels; its extra channels stay out
/// of both the distillation softmax and the gradient. Minimized exactly when
/// the truncated student scores reproduce the teacher's distribution.
inline Tensor kd_loss(const Tensor& student_aff, const Tensor& teacher_aff,
                      double temperature) {
    if (temperature <= 0.0) {
        throw ConfigError("kd_loss: temperature must be positive");
    }
    if (student_aff.rank() != 4 || teacher_aff.rank() != 4) {
        throw ShapeError("kd_loss: inputs must be rank 4 (N,H,W,C)");
    }
    for (std::size_t i = 0; i < 3; ++i) {
        if (student_aff.shape()[i] != teacher_aff.shape()[i]) {
            throw ShapeError("kd_loss: inputs disagree on grid size");
        }
    }
    const std::size_t k = teacher_aff.shape()[3];
    if (student_aff.shape()[3] < k) {
        throw ShapeError("kd_loss: student has fewer channels than the teacher");
    }
    const Tensor teacher =
        teacher_aff.requires_grad() ? teacher_aff.clone(false) : teacher_aff;
    const Tensor truncated = student_aff.shape()[3] == k
                                 ? student_aff
                                 : narrow(student_aff, 3, 0, k);
    const Tensor t_probs = softmax(mul(teacher, temperature), 3);
    const Tensor s_logp = log(softmax(mul(truncated, temperature), 3));
    return neg(mean(sum(mul(t_probs, s_logp), {3})));
}

}  // namespace sraa
