#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "sraa/errors.hpp"

namespace sraa {

using ClassId = std::uint16_t;

inline constexpr ClassId kBackgroundClass = 0;

/// Dense per-pixel class ids for a batch of images, row-major [n][row][col].
struct LabelMap {
    std::size_t n = 0, h = 0, w = 0;
    std::vector<ClassId> ids;

    LabelMap() = default;
    LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, ClassId fill = kBackgroundClass)
        : n(n_), h(h_), w(w_), ids(n_ * h_ * w_, fill) {}

    std::size_t size() const { return ids.size(); }

    ClassId& at(std::size_t img, std::size_t row, std::size_t col) {
        return ids[(img * h + row) * w + col];
    }
    ClassId at(std::size_t img, std::size_t row, std::size_t col) const {
        return ids[(img * h + row) * w + col];
    }

    bool same_shape(const LabelMap& other) const {
        return n == other.n && h == other.h && w == other.w;
    }

    /// True if any pixel carries `c`.
    bool contains(ClassId c) const {
        for (ClassId v : ids) {
            if (v == c) return true;
        }
        return false;
    }

    std::map<ClassId, std::size_t> histogram() const {
        std::map<ClassId, std::size_t> counts;
        for (ClassId v : ids) ++counts[v];
        return counts;
    }
};

/// Reduces a label map to 1/factor of its resolution by majority vote over
/// each factor x factor cell; ties go to the lowest class id.
inline LabelMap downsample_majority(const LabelMap& labels, std::size_t factor) {
    if (factor == 0) throw ShapeError("downsample_majority: zero factor");
    if (labels.h % factor != 0 || labels.w % factor != 0) {
        throw ShapeError("downsample_majority: extents not divisible by factor");
    }
    LabelMap out(labels.n, labels.h / factor, labels.w / factor);
    for (std::size_t img = 0; img < labels.n; ++img) {
        for (std::size_t row = 0; row < out.h; ++row) {
            for (std::size_t col = 0; col < out.w; ++col) {
                std::map<ClassId, std::size_t> counts;
                for (std::size_t dr = 0; dr < factor; ++dr) {
                    for (std::size_t dc = 0; dc < factor; ++dc) {
                        ++counts[labels.at(img, row * factor + dr, col * factor + dc)];
                    }
                }
                ClassId best = 0;
                std::size_t best_count = 0;
                for (const auto& [id, count] : counts) {  // ascending ids: ties keep lowest
                    if (count > best_count) {
                        best = id;
                        best_count = count;
                    }
                }
                out.at(img, row, col) = best;
            }
        }
    }
    return out;
}

}  // namespace sraa
