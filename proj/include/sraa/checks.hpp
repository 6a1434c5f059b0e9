#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "sraa/data.hpp"
#include "sraa/engine.hpp"
#include "sraa/losses.hpp"
#include "sraa/metrics.hpp"

namespace sraa::checks {

struct CheckResult {
    std::string name;
    bool ok = false;
    std::string detail;
};

struct Options {
    std::uint64_t seed = 1;
    std::size_t grad_seeds = 20;
    std::size_t oracle_instances = 50;
    // Fault injection for exercising the verifier itself: analytic gradients
    // are negated before comparison, so every gradient check must fail.
    bool flip_grad_sign = false;
};

namespace detail {

constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr double kOracleTol = 1e-10;

inline Tensor rand_tensor(Rng& rng, Shape shape, double lo, double hi, bool track) {
    std::vector<double> d(sraa::detail::shape_product(shape));
    for (double& v : d) v = rng.uniform(lo, hi);
    return track ? Tensor::param(std::move(shape), std::move(d))
                 : Tensor::from(std::move(shape), std::move(d));
}

/// Central finite differences against tape gradients; returns the largest
/// relative error over every element of every parameter.
inline double fd_max_err(std::vector<Tensor>& params,
                         const std::function<Tensor()>& forward, bool flip_sign) {
    for (Tensor& p : params) p.zero_grad();
    GradTape tape;
    {
        GradTape::Scope scope(tape);
        tape.backward(forward());
    }
    double worst = 0.0;
    for (Tensor& p : params) {
        const std::span<const double> grad = p.grad();
        const std::span<double> data = p.data_mut();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double keep = data[i];
            data[i] = keep + kGradStep;
            const double hi = forward().value();
            data[i] = keep - kGradStep;
            const double lo = forward().value();
            data[i] = keep;
            const double numeric = (hi - lo) / (2.0 * kGradStep);
            const double analytic = flip_sign ? -grad[i] : grad[i];
            const double err = std::abs(analytic - numeric) /
                               std::max({1.0, std::abs(analytic), std::abs(numeric)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

inline LabelMap rand_labels(Rng& rng, std::size_t n, std::size_t h, std::size_t w,
                            std::size_t n_classes) {
    LabelMap labels(n, h, w);
    for (std::size_t i = 0; i < labels.ids.size(); ++i) {
        // the first pixels cycle through every class so none is absent
        labels.ids[i] = static_cast<ClassId>(i < n_classes ? i : rng.below(n_classes));
    }
    return labels;
}

inline CheckResult grad_result(const std::string& name, double worst,
                               std::size_t seeds) {
    std::ostringstream os;
    os << "max rel err " << worst << " over " << seeds << " seeds (tol " << kGradTol
       << ")";
    return {name, worst < kGradTol, os.str()};
}

inline CheckResult oracle_result(const std::string& name, double worst,
                                 std::size_t instances) {
    std::ostringstream os;
    os << "max abs err " << worst << " over " << instances << " instances (tol "
       << kOracleTol << ")";
    return {name, worst < kOracleTol, os.str()};
}

// ---- gradient checks ------------------------------------------------------

inline CheckResult grad_alignment(const Options& o) {
    double worst = 0.0;
    for (std::size_t s = 0; s < o.grad_seeds; ++s) {
        Rng rng(derive_seed(o.seed, {0xA1u, s}));
        const std::size_t dim = 5;
        const std::vector<ClassId> classes{1, 2, 3};
        const LabelMap labels = rand_labels(rng, 2, 3, 3, 4);
        const ClassMask masks(labels);
        std::vector<Tensor> params{rand_tensor(rng, {2, 3, 3, dim}, -1.0, 1.0, true)};
        const Tensor semantic = l2_normalize(
            rand_tensor(rng, {classes.size(), dim}, -1.0, 1.0, false), 1);
        auto forward = [&] {
            return relation_alignment_loss(
                l2_normalize(pool_class_means(params[0], masks, classes), 1), semantic);
        };
        worst = std::max(worst, fd_max_err(params, forward, o.flip_grad_sign));
    }
    return grad_result("grad/alignment_through_pooling", worst, o.grad_seeds);
}

inline CheckResult grad_segmentation_ce(const Options& o) {
    double worst = 0.0;
    for (std::size_t s = 0; s < o.grad_seeds; ++s) {
        Rng rng(derive_seed(o.seed, {0xA2u, s}));
        const std::size_t dim = 4, k = 3;
        LabelMap labels = rand_labels(rng, 2, 2, 3, k);
        std::vector<Tensor> params{rand_tensor(rng, {2, 2, 3, dim}, -1.0, 1.0, true),
                                   rand_tensor(rng, {k, dim}, -1.0, 1.0, true)};
        auto forward = [&] {
            const Tensor aff = affinity_map(params[0], params[1]);
            return segmentation_ce(softmax(mul(aff, 10.0), 3), labels);
        };
        worst = std::max(worst, fd_max_err(params, forward, o.flip_grad_sign));
    }
    return grad_result("grad/segmentation_ce", worst, o.grad_seeds);
}

inline CheckResult grad_affinity_ce(const Options& o) {
    double worst = 0.0;
    for (std::size_t s = 0; s < o.grad_seeds; ++s) {
        Rng rng(derive_seed(o.seed, {0xA3u, s}));
        const std::size_t dim = 4, k = 4;
        LabelMap labels = rand_labels(rng, 1, 3, 3, k);
        std::vector<Tensor> params{rand_tensor(rng, {1, 3, 3, dim}, -1.0, 1.0, true),
                                   rand_tensor(rng, {k, dim}, -1.0, 1.0, true)};
        auto forward = [&] {
            return affinity_ce(affinity_map(params[0], params[1]), labels, 10.0);
        };
        worst = std::max(worst, fd_max_err(params, forward, o.flip_grad_sign));
    }
    return grad_result("grad/affinity_ce", worst, o.grad_seeds);
}

inline CheckResult grad_kd(const Options& o) {
    double worst = 0.0;
    for (std::size_t s = 0; s < o.grad_seeds; ++s) {
        Rng rng(derive_seed(o.seed, {0xA4u, s}));
        const std::size_t dim = 4, k_old = 3, k_new = 2;
        std::vector<Tensor> params{rand_tensor(rng, {1, 2, 2, dim}, -1.0, 1.0, true),
                                   rand_tensor(rng, {k_old, dim}, -1.0, 1.0, true),
                                   rand_tensor(rng, {k_new, dim}, -1.0, 1.0, true)};
        const Tensor teacher_feats = rand_tensor(rng, {1, 2, 2, dim}, -1.0, 1.0, false);
        const Tensor teacher_protos = rand_tensor(rng, {k_old, dim}, -1.0, 1.0, false);
        const Tensor teacher_aff = affinity_map(teacher_feats, teacher_protos);
        auto forward = [&] {
            const Tensor joint = concat_affinities(affinity_map(params[0], params[1]),
                                                   affinity_map(params[0], params[2]));
            return kd_loss(joint, teacher_aff, 10.0);
        };
        worst = std::max(worst, fd_max_err(params, forward, o.flip_grad_sign));
    }
    return grad_result("grad/kd", worst, o.grad_seeds);
}

/// The composed step objectives, differentiated with respect to every kernel
/// and bias of the encoder plus every prototype row.
inline CheckResult grad_encoder_parameters(const Options& o) {
    double worst = 0.0;
    for (std::size_t s = 0; s < o.grad_seeds; ++s) {
        Rng rng(derive_seed(o.seed, {0xA5u, s}));
        VisualEncoder::Config cfg;
        cfg.widths = {4, 6};
        cfg.strides = {2, 2};
        const VisualEncoder enc =
            VisualEncoder::create(cfg, derive_seed(o.seed, {0xA6u, s}));
        const Tensor images = rand_tensor(rng, {1, 8, 8, 3}, 0.0, 1.0, false);
        const std::size_t dim = enc.feature_dim();

        std::vector<Tensor> params = enc.parameters();
        params.push_back(rand_tensor(rng, {3, dim}, -1.0, 1.0, true));  // prototypes
        const Tensor semantic =
            l2_normalize(rand_tensor(rng, {2, dim}, -1.0, 1.0, false), 1);
        LabelMap labels = rand_labels(rng, 1, 2, 2, 3);
        const ClassMask masks(labels);
        const std::vector<ClassId> present{1, 2};
        auto base_forward = [&] {
            const Tensor feats = enc.encode(images);
            const Tensor ce = segmentation_ce(
                softmax(mul(affinity_map(feats, params.back()), 10.0), 3), labels);
            const Tensor pooled =
                l2_normalize(pool_class_means(feats, masks, present), 1);
            return add(ce, relation_alignment_loss(pooled, semantic));
        };
        worst = std::max(worst, fd_max_err(params, base_forward, o.flip_grad_sign));

        const Tensor teacher_aff =
            affinity_map(rand_tensor(rng, {1, 2, 2, dim}, -1.0, 1.0, false),
                         rand_tensor(rng, {2, dim}, -1.0, 1.0, false));
        auto increment_forward = [&] {
            const Tensor aff = affinity_map(enc.encode(images), params.back());
            return add(affinity_ce(aff, labels, 10.0), kd_loss(aff, teacher_aff, 10.0));
        };
        worst = std::max(worst, fd_max_err(params, increment_forward, o.flip_grad_sign));
    }
    return grad_result("grad/encoder_parameters", worst, o.grad_seeds);
}

// ---- oracle checks --------------------------------------------------------

inline CheckResult oracle_pool_class_means(const Options& o) {
    double worst = 0.0;
    for (std::size_t s = 0; s < o.oracle_instances; ++s) {
        Rng rng(derive_seed(o.seed, {0xB1u, s}));
        const std::size_t n = 1 + rng.below(3), h = 2 + rng.below(3),
                          w = 2 + rng.below(3), dim = 2 + rng.below(5);
        const std::size_t k = 3;
        const LabelMap labels = rand_labels(rng, n, h, w, k);
        const Tensor feats = rand_tensor(rng, {n, h, w, dim}, -2.0, 2.0, false);
        const ClassMask masks(labels);
        const std::vector<ClassId> classes{1, 2};
        const Tensor pooled = pool_class_means(feats, masks, classes);
        for (std::size_t c = 0; c < classes.size(); ++c) {
            for (std::size_t d = 0; d < dim; ++d) {
                double acc = 0.0;
                std::size_t count = 0;
                for (std::size_t p = 0; p < labels.ids.size(); ++p) {
                    if (labels.ids[p] == classes[c]) {
                        acc += feats.data()[p * dim + d];
                        ++count;
                    }
                }
                worst = std::max(worst, std::abs(pooled.data()[c * dim + d] -
                                                 acc / static_cast<double>(count)));
            }
        }
    }
    return oracle_result("oracle/pool_class_means", worst, o.oracle_instances);
}

inline CheckResult oracle_relation_alignment(const Options& o) {
    double worst = 0.0;
    for (std::size_t s = 0; s < o.oracle_instances; ++s) {
        Rng rng(derive_seed(o.seed, {0xB2u, s}));
        const std::size_t c = 2 + rng.below(4), dim = 2 + rng.below(5);
        const Tensor g = l2_normalize(rand_tensor(rng, {c, dim}, -1.0, 1.0, false), 1);
        const Tensor t = l2_normalize(rand_tensor(rng, {c, dim}, -1.0, 1.0, false), 1);
        const double loss = relation_alignment_loss(g, t).value();
        double diag = 0.0, off = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                double dot = 0.0;
                for (std::size_t d = 0; d < dim; ++d) {
                    dot += g.data()[i * dim + d] * t.data()[j * dim + d];
                }
                (i == j ? diag : off) += dot;
            }
        }
        const double expected = off / static_cast<double>(c * c - c) -
                                diag / static_cast<double>(c);
        worst = std::max(worst, std::abs(loss - expected));
    }
    return oracle_result("oracle/relation_alignment", worst, o.oracle_instances);
}

inline void pixel_softmax(const std::vector<double>& scores, double tau,
                          std::vector<double>& out) {
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(tau * scores[i] -
                          tau * *std::max_element(scores.begin(), scores.end()));
        total += out[i];
    }
    for (double& v : out) v /= total;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline CheckResult oracle_affinity_map(const Options& o) {
    double worst = 0.0;
    for (std::size_t s = 0; s < o.oracle_instances; ++s) {
        Rng rng(derive_seed(o.seed, {0xB3u, s}));
        const std::size_t n = 1 + rng.below(2), h = 2 + rng.below(3),
                          w = 2 + rng.below(3), dim = 2 + rng.below(5),
                          k = 1 + rng.below(4);
        const Tensor feats = rand_tensor(rng, {n, h, w, dim}, -2.0, 2.0, false);
        const Tensor protos = rand_tensor(rng, {k, dim}, -2.0, 2.0, false);
        const Tensor aff = affinity_map(feats, protos);
        for (std::size_t p = 0; p < n * h * w; ++p) {
            for (std::size_t c = 0; c < k; ++c) {
                const double expected =
                    cosine(feats.data().subspan(p * dim, dim),
                           protos.data().subspan(c * dim, dim));
                worst = std::max(worst, std::abs(aff.data()[p * k + c] - expected));
            }
        }
    }
    return oracle_result("oracle/affinity_map", worst, o.oracle_instances);
}

inline CheckResult oracle_prototype_segment(const Options& o) {
    double worst = 0.0;
    for (std::size_t s = 0; s < o.oracle_instances; ++s) {
        Rng rng(derive_seed(o.seed, {0xB4u, s}));
        const std::size_t dim = 3 + rng.below(4), k = 2 + rng.below(3);
        std::vector<ClassId> ids;
        for (std::size_t c = 0; c < k; ++c) ids.push_back(static_cast<ClassId>(c));
        const PrototypeSet protos = PrototypeSet::random_base(ids, dim, o.seed + s);
        const Tensor feats = rand_tensor(rng, {1, 2, 3, dim}, -2.0, 2.0, false);
        const double tau = 5.0 + rng.uniform(0.0, 10.0);
        const Tensor probs = prototype_segment(feats, protos, tau);
        std::vector<double> scores(k), expected(k);
        for (std::size_t p = 0; p < 6; ++p) {
            for (std::size_t c = 0; c < k; ++c) {
                scores[c] = cosine(feats.data().subspan(p * dim, dim),
                                   protos.matrix().data().subspan(c * dim, dim));
            }
            pixel_softmax(scores, tau, expected);
            for (std::size_t c = 0; c < k; ++c) {
                worst = std::max(worst, std::abs(probs.data()[p * k + c] - expected[c]));
            }
        }
    }
    return oracle_result("oracle/prototype_segment", worst, o.oracle_instances);
}

inline CheckResult oracle_affinity_ce(const Options& o) {
    double worst = 0.0;
    for (std::size_t s = 0; s < o.oracle_instances; ++s) {
        Rng rng(derive_seed(o.seed, {0xB5u, s}));
        const std::size_t k = 2 + rng.below(4);
        const LabelMap labels = rand_labels(rng, 1, 2, 3, k);
        const Tensor aff = rand_tensor(rng, {1, 2, 3, k}, -1.0, 1.0, false);
        const double tau = 5.0 + rng.uniform(0.0, 10.0);
        const double loss = affinity_ce(aff, labels, tau).value();
        double acc = 0.0;
        std::vector<double> scores(k), probs(k);
        for (std::size_t p = 0; p < 6; ++p) {
            for (std::size_t c = 0; c < k; ++c) scores[c] = aff.data()[p * k + c];
            pixel_softmax(scores, tau, probs);
            acc -= std::log(probs[labels.ids[p]]);
        }
        worst = std::max(worst, std::abs(loss - acc / 6.0));
    }
    return oracle_result("oracle/affinity_ce", worst, o.oracle_instances);
}

inline CheckResult oracle_kd(const Options& o) {
    double worst = 0.0;
    for (std::size_t s = 0; s < o.oracle_instances; ++s) {
        Rng rng(derive_seed(o.seed, {0xB6u, s}));
        const std::size_t kt = 2 + rng.below(3), ks = kt + rng.below(3);
        const Tensor student = rand_tensor(rng, {1, 2, 2, ks}, -1.0, 1.0, false);
        const Tensor teacher = rand_tensor(rng, {1, 2, 2, kt}, -1.0, 1.0, false);
        const double tau = 5.0 + rng.uniform(0.0, 10.0);
        const double loss = kd_loss(student, teacher, tau).value();
        double acc = 0.0;
        std::vector<double> ts(kt), tp(kt), ss(kt), sp(kt);
        for (std::size_t p = 0; p < 4; ++p) {
            for (std::size_t c = 0; c < kt; ++c) {
                ts[c] = teacher.data()[p * kt + c];
                ss[c] = student.data()[p * ks + c];  // truncated to teacher width
            }
            pixel_softmax(ts, tau, tp);
            pixel_softmax(ss, tau, sp);
            for (std::size_t c = 0; c < kt; ++c) acc -= tp[c] * std::log(sp[c]);
        }
        worst = std::max(worst, std::abs(loss - acc / 4.0));
    }
    return oracle_result("oracle/kd", worst, o.oracle_instances);
}

inline CheckResult oracle_iou(const Options& o) {
    double worst = 0.0;
    for (std::size_t s = 0; s < o.oracle_instances; ++s) {
        Rng rng(derive_seed(o.seed, {0xB7u, s}));
        const std::size_t k = 4;
        const LabelMap pred = rand_labels(rng, 2, 3, 3, k);
        const LabelMap gt = rand_labels(rng, 2, 3, 3, k);
        for (ClassId c = 0; c < k; ++c) {
            std::size_t inter = 0, uni = 0;
            for (std::size_t p = 0; p < pred.ids.size(); ++p) {
                const bool in_pred = pred.ids[p] == c;
                const bool in_gt = gt.ids[p] == c;
                inter += in_pred && in_gt;
                uni += in_pred || in_gt;
            }
            const auto got = iou(pred, gt, c);
            if (uni == 0) {
                if (got.has_value()) worst = std::max(worst, 1.0);
            } else {
                worst = std::max(worst, std::abs(*got - static_cast<double>(inter) /
                                                            static_cast<double>(uni)));
            }
        }
    }
    return oracle_result("oracle/iou", worst, o.oracle_instances);
}

inline CheckResult oracle_aliasing_matrix(const Options& o) {
    double worst = 0.0;
    for (std::size_t s = 0; s < o.oracle_instances; ++s) {
        Rng rng(derive_seed(o.seed, {0xB8u, s}));
        const std::vector<ClassId> base{1, 2}, novel{3, 4};
        const std::size_t k = 5;  // background + the four above
        const LabelMap pred = rand_labels(rng, 2, 3, 3, k);
        const LabelMap gt = rand_labels(rng, 2, 3, 3, k);
        const MetricsReport report = build_report(pred, gt, base, novel, 1);

        std::vector<std::size_t> tally(k * k, 0);
        for (std::size_t p = 0; p < pred.ids.size(); ++p) {
            ++tally[gt.ids[p] * k + pred.ids[p]];
        }
        double base_mass = 0.0, base_as_novel = 0.0;
        double novel_mass = 0.0, novel_as_base = 0.0;
        for (std::size_t g = 0; g < k; ++g) {
            for (std::size_t p = 0; p < k; ++p) {
                const std::size_t gi = std::distance(
                    report.class_order.begin(),
                    std::find(report.class_order.begin(), report.class_order.end(),
                              static_cast<ClassId>(g)));
                const std::size_t pi = std::distance(
                    report.class_order.begin(),
                    std::find(report.class_order.begin(), report.class_order.end(),
                              static_cast<ClassId>(p)));
                worst = std::max(
                    worst, std::abs(static_cast<double>(report.at(gi, pi)) -
                                    static_cast<double>(tally[g * k + p])));
                const bool g_base = g == 1 || g == 2;
                const bool g_novel = g == 3 || g == 4;
                const bool p_base = p == 1 || p == 2;
                const bool p_novel = p == 3 || p == 4;
                if (g_base) {
                    base_mass += tally[g * k + p];
                    if (p_novel) base_as_novel += tally[g * k + p];
                }
                if (g_novel) {
                    novel_mass += tally[g * k + p];
                    if (p_base) novel_as_base += tally[g * k + p];
                }
            }
        }
        if (base_mass > 0) {
            worst = std::max(worst, std::abs(report.base_to_novel_rate -
                                             base_as_novel / base_mass));
        }
        if (novel_mass > 0) {
            worst = std::max(worst, std::abs(report.novel_to_base_rate -
                                             novel_as_base / novel_mass));
        }
    }
    return oracle_result("oracle/aliasing_matrix", worst, o.oracle_instances);
}

// ---- determinism checks ---------------------------------------------------

inline CheckResult determinism_generator(const Options& o) {
    const SplitPlan plan = SplitPlan::default_plan(o.seed, 1);
    const Episode a = generate_base(plan, 2);
    // an unrelated draw in between must not disturb the stream
    sample_fewshot(plan, 0, 2);
    const Episode b = generate_base(plan, 2);
    const bool ok = a.images.data().size() == b.images.data().size() &&
                    std::equal(a.images.data().begin(), a.images.data().end(),
                               b.images.data().begin()) &&
                    a.labels.ids == b.labels.ids;
    return {"determinism/generator_twins", ok,
            ok ? "regenerated episodes are bitwise identical"
               : "regenerated episodes differ"};
}

inline CheckResult determinism_train_base(const Options& o) {
    const SplitPlan plan = SplitPlan::default_plan(o.seed, 0);
    const SemanticTable table = SemanticTable::random(plan.all_classes(), 16, o.seed);
    const Episode data = generate_base(plan, 2);
    TrainConfig cfg;
    cfg.epochs_base = 2;
    cfg.seed = o.seed;
    const StepState a = train_base(cfg, {}, data, table);
    const StepState b = train_base(cfg, {}, data, table);
    const bool ok = a.encoder.param_hash() == b.encoder.param_hash() &&
                    a.prototypes.hash() == b.prototypes.hash() &&
                    a.loss_history == b.loss_history;
    return {"determinism/train_base_twins", ok,
            ok ? "twin base runs agree bitwise" : "twin base runs diverged"};
}

inline CheckResult determinism_increment(const Options& o) {
    const SplitPlan plan = SplitPlan::default_plan(o.seed, 0);
    const SemanticTable table = SemanticTable::random(plan.all_classes(), 16, o.seed);
    TrainConfig cfg;
    cfg.epochs_base = 1;
    cfg.epochs_inc = 2;
    cfg.seed = o.seed;
    const StepState base = train_base(cfg, {}, generate_base(plan, 2), table);
    const Episode shot = sample_fewshot(plan, 0, 1);
    const StepState a = train_increment(base, cfg, shot, table);
    const StepState b = train_increment(base, cfg, shot, table);
    const bool ok = a.encoder.param_hash() == b.encoder.param_hash() &&
                    a.prototypes.hash() == b.prototypes.hash() &&
                    a.loss_history == b.loss_history;
    return {"determinism/increment_twins", ok,
            ok ? "twin incremental runs agree bitwise" : "twin incremental runs diverged"};
}

}  // namespace detail

inline std::vector<std::string> suite_names() {
    return {"grad", "oracle", "determinism"};
}

inline std::vector<std::string> check_names(const std::string& suite) {
    if (suite == "grad") {
        return {"grad/alignment_through_pooling", "grad/segmentation_ce",
                "grad/affinity_ce", "grad/kd", "grad/encoder_parameters"};
    }
    if (suite == "oracle") {
        return {"oracle/pool_class_means", "oracle/relation_alignment",
                "oracle/affinity_map",     "oracle/prototype_segment",
                "oracle/affinity_ce",      "oracle/kd",
                "oracle/iou",              "oracle/aliasing_matrix"};
    }
    if (suite == "determinism") {
        return {"determinism/generator_twins", "determinism/train_base_twins",
                "determinism/increment_twins"};
    }
    throw ConfigError("verify: unknown suite '" + suite + "'");
}

inline std::vector<CheckResult> run_suite(const std::string& suite, const Options& o) {
    if (suite == "grad") {
        return {detail::grad_alignment(o), detail::grad_segmentation_ce(o),
                detail::grad_affinity_ce(o), detail::grad_kd(o),
                detail::grad_encoder_parameters(o)};
    }
    if (suite == "oracle") {
        return {detail::oracle_pool_class_means(o), detail::oracle_relation_alignment(o),
                detail::oracle_affinity_map(o),     detail::oracle_prototype_segment(o),
                detail::oracle_affinity_ce(o),      detail::oracle_kd(o),
                detail::oracle_iou(o),              detail::oracle_aliasing_matrix(o)};
    }
    if (suite == "determinism") {
        return {detail::determinism_generator(o), detail::determinism_train_base(o),
                detail::determinism_increment(o)};
    }
    throw ConfigError("verify: unknown suite '" + suite + "'");
}

}  // namespace sraa::checks
