#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "sraa/errors.hpp"
#include "sraa/io.hpp"
#include "sraa/label_map.hpp"
#include "sraa/rng.hpp"
#include "sraa/tensor.hpp"

namespace sraa {

inline constexpr std::size_t kImageSize = 32;

/// Which classes are learned up front, which arrive later and in what
/// grouping, and the seed every random draw descends from. The benchmark is
/// a pure function of this plan.
struct SplitPlan {
    std::vector<ClassId> base_classes;
    std::vector<std::vector<ClassId>> novel_groups;
    std::size_t shots = 1;
    std::uint64_t seed = 0;

    /// Nine foreground classes split 5 base + two groups of 2; `fold`
    /// rotates which ids play which role so cross-validation reuses one
    /// universe of classes.
    static SplitPlan default_plan(std::uint64_t seed, std::size_t fold = 0) {
        std::vector<ClassId> ids(9);
        for (std::size_t i = 0; i < 9; ++i) {
            ids[i] = static_cast<ClassId>(1 + (i + 2 * fold) % 9);
        }
        SplitPlan plan;
        plan.base_classes.assign(ids.begin(), ids.begin() + 5);
        plan.novel_groups = {{ids[5], ids[6]}, {ids[7], ids[8]}};
        plan.seed = seed;
        plan.validate();
        return plan;
    }

    void validate() const {
        if (base_classes.empty()) throw ConfigError("SplitPlan: no base classes");
        if (shots == 0) throw ConfigError("SplitPlan: shots must be at least 1");
        std::set<ClassId> seen;
        auto add = [&](ClassId c) {
            if (c == kBackgroundClass) {
                throw ConfigError("SplitPlan: background cannot be a learnable class");
            }
            if (!seen.insert(c).second) {
                throw ConfigError("SplitPlan: class " + std::to_string(c) +
                                  " assigned twice");
            }
        };
        for (ClassId c : base_classes) add(c);
        for (const auto& group : novel_groups) {
            if (group.empty()) throw ConfigError("SplitPlan: empty novel group");
            for (ClassId c : group) add(c);
        }
    }

    std::vector<ClassId> all_classes() const {
        std::vector<ClassId> out = base_classes;
        for (const auto& group : novel_groups) {
            out.insert(out.end(), group.begin(), group.end());
        }
        return out;
    }
};

/// A batch of labelled images belonging to one step of the benchmark.
struct Episode {
    Tensor images;                  // [N, H, W, 3], values in [0, 1]
    LabelMap labels;                // full image resolution
    std::vector<ClassId> class_set; // classes this episode may contain
    int step_tag = 0;               // 0 base, g+1 for novel group g, -1 eval
};

/// How a class looks: shape kind, hue band, stripe frequency, and intensity
/// level. The (shape, hue, frequency) triple is unique per class; classes
/// sharing a hue band are separated by level so a pixel-color oracle can
/// still tell them apart.
struct Appearance {
    std::size_t shape;  // 0 rect, 1 disk, 2 triangle, 3 diamond
    std::size_t hue;
    std::size_t freq;
    double level;
};

namespace detail {

inline constexpr std::size_t kShapeKinds = 4;

inline constexpr std::array<std::array<double, 3>, 6> kHueBands = {{
    {1.0, 0.15, 0.15},
    {0.15, 1.0, 0.15},
    {0.15, 0.15, 1.0},
    {1.0, 1.0, 0.15},
    {1.0, 0.15, 1.0},
    {0.15, 1.0, 1.0},
}};

inline bool inside_shape(std::size_t kind, double dx, double dy, double r) {
    switch (kind) {
        case 0: return std::abs(dx) <= r && std::abs(dy) <= 0.75 * r;
        case 1: return dx * dx + dy * dy <= r * r;
        case 2: return dy >= -r && dy <= r && std::abs(dx) <= 0.5 * (dy + r);
        default: return std::abs(dx) + std::abs(dy) <= r;
    }
}

}  // namespace detail

/// Derives every class's appearance from its role in the plan. Base classes
/// take distinct hue bands; each novel class reuses the hue band of one base
/// class under a different shape and a darker level, which is what makes
/// base/novel confusion inducible yet measurable.
inline std::map<ClassId, Appearance> assign_appearances(const SplitPlan& plan) {
    plan.validate();
    if (plan.base_classes.size() > detail::kHueBands.size()) {
        throw ConfigError("assign_appearances: more base classes than distinct hue bands");
    }
    std::map<ClassId, Appearance> out;
    for (std::size_t i = 0; i < plan.base_classes.size(); ++i) {
        out[plan.base_classes[i]] = {i % detail::kShapeKinds, i, 1 + i % 3, 0.9};
    }
    const double novel_levels[3] = {0.55, 0.35, 0.2};
    std::size_t j = 0;
    for (const auto& group : plan.novel_groups) {
        for (ClassId c : group) {
            const std::size_t partner = j % plan.base_classes.size();
            const std::size_t variant = j / plan.base_classes.size();
            if (variant >= 3) {
                throw ConfigError("assign_appearances: shape variants exhausted");
            }
            const Appearance& b = out.at(plan.base_classes[partner]);
            out[c] = {(b.shape + 1 + variant) % detail::kShapeKinds, b.hue,
                      1 + (j + 1) % 3, novel_levels[variant]};
            ++j;
        }
    }
    return out;
}

/// Mean RGB of a class's pixels, the centroid a pixel-color oracle
/// classifies against.
inline std::array<double, 3> class_center(const Appearance& a) {
    const auto& hue = detail::kHueBands[a.hue];
    return {hue[0] * a.level, hue[1] * a.level, hue[2] * a.level};
}

inline constexpr std::array<double, 3> kBackgroundCenter = {0.5, 0.5, 0.5};

namespace detail {

struct PlacedObject {
    ClassId cls;
    std::size_t shape;
    double cx, cy, r, phase;
};

/// Renders one image: 1-3 non-overlapping objects (the first always of
/// `anchor`), striped class colors over a gray noise background. Rejection
/// loops keep the foreground share inside [0.05, 0.6]; every draw comes from
/// `rng`, so the result is a pure function of the caller's substream.
inline void render_image(Rng& rng, ClassId anchor, const std::vector<ClassId>& allowed,
                         const std::map<ClassId, Appearance>& looks,
                         std::span<double> pixels, std::span<ClassId> labels) {
    const std::size_t hw = kImageSize;
    std::vector<PlacedObject> objects;
    std::vector<std::uint8_t> owner(hw * hw);
    for (int attempt = 0; attempt < 50; ++attempt) {
        objects.clear();
        std::fill(owner.begin(), owner.end(), 0);
        const std::size_t want = 1 + rng.below(3);
        for (std::size_t obj = 0; obj < want; ++obj) {
            const ClassId cls = obj == 0 ? anchor : allowed[rng.below(allowed.size())];
            const Appearance& look = looks.at(cls);
            for (int placement = 0; placement < 40; ++placement) {
                const double r = rng.uniform(5.0, 7.5);
                const double cx = rng.uniform(r, hw - 1 - r);
                const double cy = rng.uniform(r, hw - 1 - r);
                std::vector<std::size_t> covered;
                bool clash = false;
                for (std::size_t y = 0; y < hw && !clash; ++y) {
                    for (std::size_t x = 0; x < hw; ++x) {
                        if (!inside_shape(look.shape, x - cx, y - cy, r)) continue;
                        if (owner[y * hw + x] != 0) {
                            clash = true;
                            break;
                        }
                        covered.push_back(y * hw + x);
                    }
                }
                if (clash) continue;
                objects.push_back({cls, look.shape, cx, cy, r, rng.uniform(0.0, 6.28)});
                for (std::size_t p : covered) {
                    owner[p] = static_cast<std::uint8_t>(objects.size());
                }
                break;
            }
        }
        std::size_t fg = 0;
        for (std::uint8_t o : owner) fg += o != 0;
        const double ratio = static_cast<double>(fg) / (hw * hw);
        if (!objects.empty() && ratio >= 0.05 && ratio <= 0.6) break;
        if (attempt == 49) throw ConfigError("render_image: foreground ratio unattainable");
    }
    for (std::size_t y = 0; y < hw; ++y) {
        for (std::size_t x = 0; x < hw; ++x) {
            const std::size_t p = y * hw + x;
            if (owner[p] == 0) {
                labels[p] = kBackgroundClass;
                const double v = 0.5 + 0.05 * (2.0 * rng.uniform() - 1.0);
                for (std::size_t ch = 0; ch < 3; ++ch) pixels[p * 3 + ch] = v;
                continue;
            }
            const PlacedObject& o = objects[owner[p] - 1];
            const Appearance& look = looks.at(o.cls);
            const double stripe = std::sin(
                2.0 * std::numbers::pi * look.freq * static_cast<double>(x + y) / hw +
                o.phase);
            const double level = look.level + 0.08 * stripe;
            const auto& hue = kHueBands[look.hue];
            labels[p] = o.cls;
            for (std::size_t ch = 0; ch < 3; ++ch) {
                pixels[p * 3 + ch] = std::clamp(hue[ch] * level, 0.0, 1.0);
            }
        }
    }
}

/// One image slot per (class, index) pair, class-major, each rendered from
/// its own substream so the whole episode is order-independent.
inline Episode build_episode(const SplitPlan& plan, const std::vector<ClassId>& anchors,
                             const std::vector<std::uint64_t>& streams,
                             std::vector<ClassId> class_set, int step_tag) {
    const std::size_t n = anchors.size();
    const auto looks = assign_appearances(plan);
    std::vector<double> pixels(n * kImageSize * kImageSize * 3);
    LabelMap labels(n, kImageSize, kImageSize);
    const std::size_t stride = kImageSize * kImageSize;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(streams[i]);
        render_image(rng, anchors[i], class_set, looks,
                     {pixels.data() + i * stride * 3, stride * 3},
                     {labels.ids.data() + i * stride, stride});
    }
    Episode ep;
    ep.images = Tensor::from({n, kImageSize, kImageSize, 3}, std::move(pixels));
    ep.labels = std::move(labels);
    ep.class_set = std::move(class_set);
    ep.step_tag = step_tag;
    return ep;
}

}  // namespace detail

/// The abundant step-0 training set: `images_per_class` images anchored on
/// every base class, distractor objects drawn from the base classes only.
inline Episode generate_base(const SplitPlan& plan, std::size_t images_per_class) {
    plan.validate();
    if (images_per_class == 0) throw ConfigError("generate_base: images_per_class is 0");
    std::vector<ClassId> anchors;
    std::vector<std::uint64_t> streams;
    for (ClassId c : plan.base_classes) {
        for (std::size_t i = 0; i < images_per_class; ++i) {
            anchors.push_back(c);
            streams.push_back(derive_seed(plan.seed, {0xBA5Eu, c, i}));
        }
    }
    return detail::build_episode(plan, anchors, streams, plan.base_classes, 0);
}

/// The few-shot increment for one novel group: exactly k images per group
/// class, containing only that group's classes plus background. Shot j of a
/// class is the same image for every k, so smaller draws nest inside larger
/// ones.
inline Episode sample_fewshot(const SplitPlan& plan, std::size_t group_index,
                              std::size_t k) {
    plan.validate();
    if (group_index >= plan.novel_groups.size()) {
        throw ConfigError("sample_fewshot: no group " + std::to_string(group_index));
    }
    if (k == 0) throw ConfigError("sample_fewshot: k must be at least 1");
    const auto& group = plan.novel_groups[group_index];
    std::vector<ClassId> anchors;
    std::vector<std::uint64_t> streams;
    for (ClassId c : group) {
        for (std::size_t shot = 0; shot < k; ++shot) {
            anchors.push_back(c);
            streams.push_back(derive_seed(plan.seed, {0xF5u, group_index, c, shot}));
        }
    }
    return detail::build_episode(plan, anchors, streams, group,
                                 static_cast<int>(group_index) + 1);
}

/// Joins two increments into one: images stacked in order, class sets
/// concatenated. Used when all novel groups arrive in a single step.
inline Episode merge_episodes(const Episode& a, const Episode& b) {
    const auto& sa = a.images.shape();
    const auto& sb = b.images.shape();
    if (sa.size() != 4 || sb.size() != 4 || sa[1] != sb[1] || sa[2] != sb[2] ||
        sa[3] != sb[3]) {
        throw ShapeError("merge_episodes: image grids differ");
    }
    for (ClassId c : b.class_set) {
        if (std::find(a.class_set.begin(), a.class_set.end(), c) != a.class_set.end()) {
            throw DuplicateClassError("merge_episodes: class " + std::to_string(c) +
                                      " appears in both episodes");
        }
    }
    Episode out;
    out.images = concat({a.images, b.images}, 0);
    out.labels = LabelMap(a.labels.n + b.labels.n, a.labels.h, a.labels.w);
    std::copy(a.labels.ids.begin(), a.labels.ids.end(), out.labels.ids.begin());
    std::copy(b.labels.ids.begin(), b.labels.ids.end(),
              out.labels.ids.begin() + a.labels.ids.size());
    out.class_set = a.class_set;
    out.class_set.insert(out.class_set.end(), b.class_set.begin(), b.class_set.end());
    out.step_tag = a.step_tag;
    return out;
}

/// Held-out evaluation images spanning every class in the plan.
inline Episode generate_eval(const SplitPlan& plan, std::size_t images_per_class) {
    plan.validate();
    if (images_per_class == 0) throw ConfigError("generate_eval: images_per_class is 0");
    const std::vector<ClassId> all = plan.all_classes();
    std::vector<ClassId> anchors;
    std::vector<std::uint64_t> streams;
    for (ClassId c : all) {
        for (std::size_t i = 0; i < images_per_class; ++i) {
            anchors.push_back(c);
            streams.push_back(derive_seed(plan.seed, {0xE7A1u, c, i}));
        }
    }
    return detail::build_episode(plan, anchors, streams, all, -1);
}

// ---------------------------------------------------------------------------
// Episode files: magic "SRAAEP1", u32 N H W, f64 image payload, u16 labels,
// then a trailer with the step tag and declared class set.
// ---------------------------------------------------------------------------

inline void export_episode(const Episode& ep, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("export_episode: cannot open " + path);
    const auto& s = ep.images.shape();
    io::write_magic(os, "SRAAEP1");
    io::write_u32le(os, static_cast<std::uint32_t>(s[0]));
    io::write_u32le(os, static_cast<std::uint32_t>(s[1]));
    io::write_u32le(os, static_cast<std::uint32_t>(s[2]));
    io::write_f64_span(os, ep.images.data());
    for (ClassId v : ep.labels.ids) io::write_u16le(os, v);
    io::write_u32le(os, static_cast<std::uint32_t>(ep.step_tag));
    io::write_u32le(os, static_cast<std::uint32_t>(ep.class_set.size()));
    for (ClassId c : ep.class_set) io::write_u16le(os, c);
    os.flush();
    if (!os) throw IoError("export_episode: write failed for " + path);
}

inline Episode import_episode(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("import_episode: cannot open " + path);
    io::expect_magic(is, "SRAAEP1");
    const std::size_t n = io::read_u32le(is);
    const std::size_t h = io::read_u32le(is);
    const std::size_t w = io::read_u32le(is);
    if (n == 0 || h == 0 || w == 0) {
        throw FormatError("import_episode: degenerate extents in header");
    }
    Episode ep;
    ep.images = Tensor::from({n, h, w, 3}, io::read_f64_vec(is, n * h * w * 3));
    ep.labels = LabelMap(n, h, w);
    for (ClassId& v : ep.labels.ids) v = io::read_u16le(is);
    ep.step_tag = static_cast<int>(io::read_u32le(is));
    const std::size_t classes = io::read_u32le(is);
    ep.class_set.resize(classes);
    for (ClassId& c : ep.class_set) c = io::read_u16le(is);
    return ep;
}

}  // namespace sraa
