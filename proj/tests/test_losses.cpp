#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "sraa/losses.hpp"
#include "sraa/prototypes.hpp"
#include "testutil.hpp"

using namespace sraa;
using test::gradcheck;
using test::random_tensor;

namespace {

LabelMap random_labels(Rng& rng, std::size_t n, std::size_t h, std::size_t w,
                       ClassId num_classes) {
    LabelMap labels(n, h, w);
    for (ClassId& v : labels.ids) v = static_cast<ClassId>(rng.below(num_classes));
    return labels;
}

// Plain-loop cosine similarity between a feature pixel and a prototype row.
double cosine_oracle(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

PrototypeSet toy_prototypes(Rng& rng, std::size_t count, std::size_t dim,
                            bool requires_grad = false) {
    std::vector<PrototypeInfo> info;
    for (std::size_t i = 0; i < count; ++i) {
        info.push_back({static_cast<ClassId>(i), PrototypeOrigin::LearnedBase, 0});
    }
    return PrototypeSet(std::move(info),
                        random_tensor(rng, {count, dim}, 0.2, 1.0, requires_grad));
}

}  // namespace

TEST(ClassMask, MasksPartitionThePixels) {
    Rng rng(11);
    const ClassMask masks(random_labels(rng, 2, 3, 4, 3));
    std::vector<double> cover(2 * 3 * 4, 0.0);
    std::size_t total = 0;
    for (ClassId c = 0; c < 3; ++c) {
        const auto m = masks.mask(c);
        for (std::size_t i = 0; i < m.size(); ++i) {
            EXPECT_TRUE(m[i] == 0.0 || m[i] == 1.0);
            cover[i] += m[i];
        }
        total += masks.count(c);
    }
    for (double v : cover) EXPECT_EQ(v, 1.0);
    EXPECT_EQ(total, cover.size());
}

TEST(PoolClassMeans, ConstantFeaturesGiveConstantMeans) {
    const Tensor features = Tensor::full({1, 4, 4, 3}, 3.5);
    LabelMap labels(1, 4, 4);
    for (std::size_t i = 8; i < 16; ++i) labels.ids[i] = 2;
    const ClassId classes[] = {0, 2};
    const Tensor pooled = pool_class_means(features, ClassMask(labels), classes);
    ASSERT_EQ(pooled.shape(), (Shape{2, 3}));
    for (double v : pooled.data()) EXPECT_DOUBLE_EQ(v, 3.5);
}

TEST(PoolClassMeans, SinglePixelClassCopiesThatPixel) {
    Rng rng(5);
    const Tensor features = random_tensor(rng, {1, 4, 4, 6}, -2.0, 2.0);
    LabelMap labels(1, 4, 4);
    labels.at(0, 2, 3) = 7;
    const ClassId classes[] = {7};
    const Tensor pooled = pool_class_means(features, ClassMask(labels), classes);
    const std::size_t base = ((0 * 4 + 2) * 4 + 3) * 6;
    for (std::size_t d = 0; d < 6; ++d) {
        EXPECT_EQ(pooled.data()[d], features.data()[base + d]);
    }
}

TEST(PoolClassMeans, MatchesLoopedAverage) {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        Rng rng(seed);
        const std::size_t n = 2, h = 3, w = 5, dim = 4;
        const Tensor features = random_tensor(rng, {n, h, w, dim}, -1.0, 1.0);
        LabelMap labels = random_labels(rng, n, h, w, 3);
        labels.ids[0] = 0;
        labels.ids[1] = 1;
        labels.ids[2] = 2;  // keep every class populated
        const ClassId classes[] = {0, 1, 2};
        const Tensor pooled = pool_class_means(features, ClassMask(labels), classes);
        for (std::size_t ci = 0; ci < 3; ++ci) {
            std::vector<double> acc(dim, 0.0);
            std::size_t count = 0;
            for (std::size_t p = 0; p < n * h * w; ++p) {
                if (labels.ids[p] != classes[ci]) continue;
                ++count;
                for (std::size_t d = 0; d < dim; ++d) acc[d] += features.data()[p * dim + d];
            }
            for (std::size_t d = 0; d < dim; ++d) {
                EXPECT_NEAR(pooled.data()[ci * dim + d], acc[d] / count, 1e-12);
            }
        }
    }
}

TEST(PoolClassMeans, RowOrderFollowsRequestOrder) {
    Rng rng(9);
    const Tensor features = random_tensor(rng, {1, 2, 2, 3});
    LabelMap labels(1, 2, 2);
    labels.ids = {1, 1, 2, 2};
    const ClassId forward[] = {1, 2};
    const ClassId reversed[] = {2, 1};
    const Tensor a = pool_class_means(features, ClassMask(labels), forward);
    const Tensor b = pool_class_means(features, ClassMask(labels), reversed);
    for (std::size_t d = 0; d < 3; ++d) {
        EXPECT_EQ(a.data()[d], b.data()[3 + d]);
        EXPECT_EQ(a.data()[3 + d], b.data()[d]);
    }
}

TEST(PoolClassMeans, MissingClassThrows) {
    const Tensor features = Tensor::ones({1, 2, 2, 3});
    const LabelMap labels(1, 2, 2);  // all background
    const ClassId classes[] = {4};
    EXPECT_THROW(pool_class_means(features, ClassMask(labels), classes), EmptyClassError);
}

TEST(PoolClassMeans, GridMismatchThrows) {
    const Tensor features = Tensor::ones({1, 4, 4, 3});
    const LabelMap labels(1, 2, 2);
    const ClassId classes[] = {0};
    EXPECT_THROW(pool_class_means(features, ClassMask(labels), classes), ShapeError);
}

TEST(PoolClassMeans, GradientCoversExactlyTheClassPixels) {
    Rng rng(3);
    Tensor features = random_tensor(rng, {1, 3, 3, 2}, -1.0, 1.0, true);
    LabelMap labels(1, 3, 3);
    labels.ids = {0, 5, 0, 5, 5, 0, 0, 0, 0};
    const ClassId classes[] = {5};
    GradTape tape;
    {
        GradTape::Scope scope(tape);
        tape.backward(sum(pool_class_means(features, ClassMask(labels), classes)));
    }
    const auto grad = features.grad();
    for (std::size_t p = 0; p < 9; ++p) {
        const double expected = labels.ids[p] == 5 ? 1.0 / 3.0 : 0.0;
        EXPECT_NEAR(grad[p * 2], expected, 1e-15);
        EXPECT_NEAR(grad[p * 2 + 1], expected, 1e-15);
    }
}

TEST(RelationAlignment, IdentityRowsScoreMinusOne) {
    const Tensor eye = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
    EXPECT_DOUBLE_EQ(relation_alignment_loss(eye, eye).value(), -1.0);
}

TEST(RelationAlignment, MatchesPairLoopOracle) {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        Rng rng(seed);
        const std::size_t c = 2 + seed % 4, d = 6;
        const Tensor g = random_tensor(rng, {c, d}, -1.0, 1.0);
        const Tensor s = random_tensor(rng, {c, d}, -1.0, 1.0);
        double paired = 0.0, off = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                double dot = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    dot += g.data()[i * d + k] * s.data()[j * d + k];
                }
                (i == j ? paired : off) += dot;
            }
        }
        const double expected = off / (c * (c - 1)) - paired / c;
        EXPECT_NEAR(relation_alignment_loss(g, s).value(), expected, 1e-12);
    }
}

TEST(RelationAlignment, BoundedForUnitRows) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const Tensor g = l2_normalize(random_tensor(rng, {4, 8}, -1.0, 1.0), 1);
        const Tensor s = l2_normalize(random_tensor(rng, {4, 8}, -1.0, 1.0), 1);
        const double v = relation_alignment_loss(g, s).value();
        EXPECT_GE(v, -2.0 - 1e-12);
        EXPECT_LE(v, 2.0 + 1e-12);
    }
}

TEST(RelationAlignment, RejectsBadInputs) {
    const Tensor one = Tensor::ones({1, 4});
    EXPECT_THROW(relation_alignment_loss(one, one), ConfigError);
    EXPECT_THROW(relation_alignment_loss(Tensor::ones({3, 4}), Tensor::ones({3, 5})),
                 ShapeError);
}

TEST(RelationAlignment, DescentPullsPairsTogether) {
    Rng rng(21);
    Tensor g = random_tensor(rng, {3, 5}, -0.5, 0.5, true);
    const Tensor s = l2_normalize(random_tensor(rng, {3, 5}, -1.0, 1.0), 1);
    const double before = relation_alignment_loss(g, s).value();
    GradTape tape;
    {
        GradTape::Scope scope(tape);
        tape.backward(relation_alignment_loss(g, s));
    }
    auto data = g.data_mut();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= 0.1 * g.grad()[i];
    EXPECT_LT(relation_alignment_loss(g, s).value(), before);
}

TEST(AffinityMap, MatchesCosineOracle) {
    Rng rng(31);
    const std::size_t n = 2, h = 2, w = 3, d = 5, p = 4;
    const Tensor features = random_tensor(rng, {n, h, w, d}, 0.2, 1.5);
    const PrototypeSet protos = toy_prototypes(rng, p, d);
    const Tensor aff = affinity_map(features, protos);
    ASSERT_EQ(aff.shape(), (Shape{n, h, w, p}));
    for (std::size_t pix = 0; pix < n * h * w; ++pix) {
        const std::span<const double> f{features.data().data() + pix * d, d};
        for (std::size_t r = 0; r < p; ++r) {
            const std::span<const double> proto{protos.matrix().data().data() + r * d, d};
            EXPECT_NEAR(aff.data()[pix * p + r], cosine_oracle(f, proto), 1e-12);
        }
    }
}

TEST(AffinityMap, ValuesStayWithinUnitInterval) {
    Rng rng(32);
    const Tensor features = random_tensor(rng, {1, 4, 4, 8}, -3.0, 3.0);
    // keep every pixel away from the zero vector
    Tensor safe = add(mul(features, 0.5), 2.0);
    const Tensor aff = affinity_map(safe, toy_prototypes(rng, 3, 8));
    for (double v : aff.data()) {
        EXPECT_GE(v, -1.0 - 1e-12);
        EXPECT_LE(v, 1.0 + 1e-12);
    }
}

TEST(AffinityMap, ChannelOrderTracksPrototypeOrder) {
    Rng rng(33);
    const Tensor features = random_tensor(rng, {1, 2, 2, 4}, 0.2, 1.0);
    const PrototypeSet protos = toy_prototypes(rng, 3, 4);
    const Tensor fwd = affinity_map(features, protos);
    // reverse the prototype rows by hand
    std::vector<double> rev;
    for (std::size_t r = 3; r-- > 0;) {
        for (std::size_t c = 0; c < 4; ++c) rev.push_back(protos.matrix().data()[r * 4 + c]);
    }
    const Tensor bwd = affinity_map(features, Tensor::from({3, 4}, rev));
    for (std::size_t pix = 0; pix < 4; ++pix) {
        for (std::size_t r = 0; r < 3; ++r) {
            EXPECT_EQ(fwd.data()[pix * 3 + r], bwd.data()[pix * 3 + (2 - r)]);
        }
    }
}

TEST(AffinityMap, ZeroFeaturePixelThrows) {
    Rng rng(34);
    const Tensor features = Tensor::zeros({1, 2, 2, 4});
    EXPECT_THROW(affinity_map(features, toy_prototypes(rng, 2, 4)), NumericError);
}

TEST(AffinityMap, DimensionMismatchThrows) {
    Rng rng(35);
    const Tensor features = Tensor::ones({1, 2, 2, 4});
    EXPECT_THROW(affinity_map(features, toy_prototypes(rng, 2, 5)), ShapeError);
}

TEST(AffinityMap, GradientReachesFeaturesAndPrototypes) {
    Rng rng(36);
    Tensor features = random_tensor(rng, {1, 2, 2, 4}, 0.3, 1.0, true);
    PrototypeSet protos = toy_prototypes(rng, 3, 4, true);
    GradTape tape;
    {
        GradTape::Scope scope(tape);
        tape.backward(sum(mul(affinity_map(features, protos), 0.7)));
    }
    ASSERT_TRUE(features.has_grad());
    ASSERT_TRUE(protos.matrix().has_grad());
    double fmag = 0.0, pmag = 0.0;
    for (double v : features.grad()) fmag += std::abs(v);
    for (double v : protos.matrix().grad()) pmag += std::abs(v);
    EXPECT_GT(fmag, 1e-8);
    EXPECT_GT(pmag, 1e-8);
}

TEST(ConcatAffinities, JoinsChannelsOldFirst) {
    Rng rng(41);
    const Tensor old_aff = random_tensor(rng, {1, 2, 3, 2});
    const Tensor new_aff = random_tensor(rng, {1, 2, 3, 3});
    const Tensor joined = concat_affinities(old_aff, new_aff);
    ASSERT_EQ(joined.shape(), (Shape{1, 2, 3, 5}));
    const Tensor back_old = narrow(joined, 3, 0, 2);
    const Tensor back_new = narrow(joined, 3, 2, 3);
    for (std::size_t i = 0; i < old_aff.size(); ++i) {
        EXPECT_EQ(back_old.data()[i], old_aff.data()[i]);
    }
    for (std::size_t i = 0; i < new_aff.size(); ++i) {
        EXPECT_EQ(back_new.data()[i], new_aff.data()[i]);
    }
}

TEST(ConcatAffinities, GridMismatchThrows) {
    EXPECT_THROW(concat_affinities(Tensor::ones({1, 2, 2, 2}), Tensor::ones({1, 2, 3, 2})),
                 ShapeError);
}

TEST(PrototypeSegment, ProbabilitiesSumToOnePerPixel) {
    Rng rng(51);
    const Tensor features = random_tensor(rng, {2, 2, 2, 6}, 0.2, 1.2);
    const Tensor probs = prototype_segment(features, toy_prototypes(rng, 4, 6), 10.0);
    for (std::size_t pix = 0; pix < 8; ++pix) {
        double s = 0.0;
        for (std::size_t c = 0; c < 4; ++c) s += probs.data()[pix * 4 + c];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(PrototypeSegment, SinglePrototypeGivesCertainty) {
    Rng rng(52);
    const Tensor features = random_tensor(rng, {1, 2, 2, 4}, 0.2, 1.0);
    const Tensor probs = prototype_segment(features, toy_prototypes(rng, 1, 4), 5.0);
    for (double v : probs.data()) EXPECT_EQ(v, 1.0);
}

TEST(PrototypeSegment, MatchesScaledSoftmaxOracle) {
    Rng rng(53);
    const std::size_t d = 5, p = 3;
    const Tensor features = random_tensor(rng, {1, 2, 2, d}, 0.2, 1.5);
    const PrototypeSet protos = toy_prototypes(rng, p, d);
    const double tau = 7.0;
    const Tensor probs = prototype_segment(features, protos, tau);
    for (std::size_t pix = 0; pix < 4; ++pix) {
        const std::span<const double> f{features.data().data() + pix * d, d};
        std::vector<double> e(p);
        double z = 0.0;
        for (std::size_t r = 0; r < p; ++r) {
            const std::span<const double> proto{protos.matrix().data().data() + r * d, d};
            e[r] = std::exp(tau * cosine_oracle(f, proto));
            z += e[r];
        }
        for (std::size_t r = 0; r < p; ++r) {
            EXPECT_NEAR(probs.data()[pix * p + r], e[r] / z, 1e-12);
        }
    }
}

TEST(PrototypeSegment, TemperatureSharpensPredictions) {
    Rng rng(54);
    const Tensor features = random_tensor(rng, {1, 3, 3, 6}, 0.2, 1.4);
    const PrototypeSet protos = toy_prototypes(rng, 4, 6);
    double prev_mean_max = 0.0;
    for (double tau : {1.0, 5.0, 25.0}) {
        const Tensor probs = prototype_segment(features, protos, tau);
        double mean_max = 0.0;
        for (std::size_t pix = 0; pix < 9; ++pix) {
            double m = 0.0;
            for (std::size_t c = 0; c < 4; ++c) m = std::max(m, probs.data()[pix * 4 + c]);
            mean_max += m / 9.0;
        }
        EXPECT_GE(mean_max, prev_mean_max - 1e-12);
        prev_mean_max = mean_max;
    }
}

TEST(PrototypeSegment, NonPositiveTemperatureThrows) {
    Rng rng(55);
    const Tensor features = Tensor::ones({1, 2, 2, 4});
    EXPECT_THROW(prototype_segment(features, toy_prototypes(rng, 2, 4), 0.0), ConfigError);
    EXPECT_THROW(prototype_segment(features, toy_prototypes(rng, 2, 4), -1.0), ConfigError);
}

TEST(SegmentationCE, PerfectPredictionScoresZero) {
    LabelMap labels(1, 2, 2);
    labels.ids = {0, 1, 2, 1};
    std::vector<double> probs(4 * 3, 0.0);
    for (std::size_t p = 0; p < 4; ++p) probs[p * 3 + labels.ids[p]] = 1.0;
    EXPECT_EQ(segmentation_ce(Tensor::from({1, 2, 2, 3}, probs), labels).value(), 0.0);
}

TEST(SegmentationCE, UniformPredictionScoresLogK) {
    Rng rng(61);
    const std::size_t k = 7;
    const Tensor probs = Tensor::full({1, 3, 3, k}, 1.0 / k);
    const LabelMap labels = random_labels(rng, 1, 3, 3, k);
    EXPECT_NEAR(segmentation_ce(probs, labels).value(), std::log(static_cast<double>(k)),
                1e-12);
}

TEST(SegmentationCE, MatchesSelectedLogOracle) {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        Rng rng(seed);
        const std::size_t k = 4, pixels = 12;
        const Tensor raw = random_tensor(rng, {1, 3, 4, k}, 0.05, 1.0);
        const LabelMap labels = random_labels(rng, 1, 3, 4, k);
        double expected = 0.0;
        for (std::size_t p = 0; p < pixels; ++p) {
            expected -= std::log(raw.data()[p * k + labels.ids[p]]) / pixels;
        }
        EXPECT_NEAR(segmentation_ce(raw, labels).value(), expected, 1e-12);
    }
}

TEST(SegmentationCE, OutOfRangeLabelThrows) {
    LabelMap labels(1, 2, 2);
    labels.ids = {0, 1, 2, 3};  // channel 3 does not exist
    EXPECT_THROW(segmentation_ce(Tensor::full({1, 2, 2, 3}, 0.5), labels), LabelError);
}

TEST(SegmentationCE, GradientPushesTrueChannelUp) {
    Rng rng(62);
    Tensor probs = random_tensor(rng, {1, 2, 2, 3}, 0.1, 0.9, true);
    const LabelMap labels = random_labels(rng, 1, 2, 2, 3);
    GradTape tape;
    {
        GradTape::Scope scope(tape);
        tape.backward(segmentation_ce(probs, labels));
    }
    const auto grad = probs.grad();
    for (std::size_t p = 0; p < 4; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
            if (c == labels.ids[p]) {
                EXPECT_LT(grad[p * 3 + c], 0.0);  // descent raises the selected probability
            } else {
                EXPECT_EQ(grad[p * 3 + c], 0.0);
            }
        }
    }
}

TEST(AffinityCE, AgreesWithSoftmaxThenCrossEntropy) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        Rng rng(seed);
        const Tensor aff = random_tensor(rng, {1, 3, 3, 4}, -1.0, 1.0);
        const LabelMap labels = random_labels(rng, 1, 3, 3, 4);
        const double tau = 10.0;
        const double direct = affinity_ce(aff, labels, tau).value();
        const double manual = segmentation_ce(softmax(mul(aff, tau), 3), labels).value();
        EXPECT_EQ(direct, manual);
    }
}

TEST(AffinityCE, GradientFavoursLabelledChannel) {
    Rng rng(71);
    Tensor aff = random_tensor(rng, {1, 2, 2, 3}, -0.9, 0.9, true);
    const LabelMap labels = random_labels(rng, 1, 2, 2, 3);
    GradTape tape;
    {
        GradTape::Scope scope(tape);
        tape.backward(affinity_ce(aff, labels, 10.0));
    }
    const auto grad = aff.grad();
    for (std::size_t p = 0; p < 4; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
            if (c == labels.ids[p]) {
                EXPECT_LT(grad[p * 3 + c], 0.0);
            } else {
                EXPECT_GT(grad[p * 3 + c], 0.0);
            }
        }
    }
}

TEST(AffinityCE, NonPositiveTemperatureThrows) {
    const LabelMap labels(1, 2, 2);
    EXPECT_THROW(affinity_ce(Tensor::ones({1, 2, 2, 2}), labels, 0.0), ConfigError);
}

TEST(KdLoss, SelfDistillationEqualsTeacherEntropy) {
    Rng rng(81);
    const Tensor teacher = random_tensor(rng, {1, 2, 3, 4}, -1.0, 1.0);
    const double tau = 10.0;
    const double loss = kd_loss(teacher, teacher, tau).value();
    // mean softmax entropy computed with plain loops
    double expected = 0.0;
    const std::size_t pixels = 6, k = 4;
    for (std::size_t p = 0; p < pixels; ++p) {
        double z = 0.0;
        std::vector<double> e(k);
        for (std::size_t c = 0; c < k; ++c) {
            e[c] = std::exp(tau * teacher.data()[p * k + c]);
            z += e[c];
        }
        for (std::size_t c = 0; c < k; ++c) {
            const double q = e[c] / z;
            expected -= q * std::log(q) / pixels;
        }
    }
    EXPECT_NEAR(loss, expected, 1e-12);
}

TEST(KdLoss, SelfDistillationIsStationary) {
    Rng rng(82);
    Tensor student = random_tensor(rng, {1, 2, 2, 3}, -1.0, 1.0, true);
    const Tensor teacher = student.clone(false);
    GradTape tape;
    {
        GradTape::Scope scope(tape);
        tape.backward(kd_loss(student, teacher, 10.0));
    }
    for (double g : student.grad()) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(KdLoss, NeverBeatsTheTeacherAtItsOwnDistribution) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const Tensor teacher = random_tensor(rng, {1, 2, 2, 3}, -1.0, 1.0);
        const Tensor student = random_tensor(rng, {1, 2, 2, 3}, -1.0, 1.0);
        EXPECT_GE(kd_loss(student, teacher, 8.0).value(),
                  kd_loss(teacher, teacher, 8.0).value() - 1e-12);
    }
}

TEST(KdLoss, ExtraStudentChannelsStayOutOfIt) {
    Rng rng(83);
    Tensor student = random_tensor(rng, {1, 2, 2, 5}, -1.0, 1.0, true);
    const Tensor teacher = random_tensor(rng, {1, 2, 2, 3}, -1.0, 1.0);
    const double before = kd_loss(student, teacher, 10.0).value();
    GradTape tape;
    {
        GradTape::Scope scope(tape);
        tape.backward(kd_loss(student, teacher, 10.0));
    }
    const auto grad = student.grad();
    for (std::size_t p = 0; p < 4; ++p) {
        EXPECT_EQ(grad[p * 5 + 3], 0.0);
        EXPECT_EQ(grad[p * 5 + 4], 0.0);
    }
    // rewriting the extra channels leaves the value untouched
    auto data = student.data_mut();
    for (std::size_t p = 0; p < 4; ++p) {
        data[p * 5 + 3] = 99.0;
        data[p * 5 + 4] = -99.0;
    }
    EXPECT_EQ(kd_loss(student, teacher, 10.0).value(), before);
}

TEST(KdLoss, StudentNarrowerThanTeacherThrows) {
    EXPECT_THROW(kd_loss(Tensor::ones({1, 2, 2, 2}), Tensor::ones({1, 2, 2, 3}), 10.0),
                 ShapeError);
}

TEST(KdLoss, TeacherNeverReceivesGradient) {
    Rng rng(84);
    Tensor student = random_tensor(rng, {1, 2, 2, 3}, -1.0, 1.0, true);
    Tensor teacher = random_tensor(rng, {1, 2, 2, 3}, -1.0, 1.0, true);
    GradTape tape;
    {
        GradTape::Scope scope(tape);
        tape.backward(kd_loss(student, teacher, 10.0));
    }
    EXPECT_TRUE(student.has_grad());
    EXPECT_FALSE(teacher.has_grad());
}

TEST(PrototypeSetSuite, RandomBaseRowsAreUnitAndOrderIndependent) {
    const ClassId fwd[] = {1, 2, 3};
    const ClassId rev[] = {3, 2, 1};
    const PrototypeSet a = PrototypeSet::random_base(fwd, 8, 77);
    const PrototypeSet b = PrototypeSet::random_base(rev, 8, 77);
    for (std::size_t r = 0; r < 3; ++r) {
        double n2 = 0.0;
        for (std::size_t c = 0; c < 8; ++c) {
            const double v = a.matrix().data()[r * 8 + c];
            n2 += v * v;
        }
        EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-12);
    }
    // same class, same seed: same vector, independent of request order
    EXPECT_EQ(a.vector_of(2), b.vector_of(2));
    EXPECT_EQ(a.vector_of(1), b.vector_of(1));
    EXPECT_TRUE(a.matrix().requires_grad());
}

TEST(PrototypeSetSuite, ConcatKeepsOlderRowsFirst) {
    const ClassId base[] = {0, 1};
    const ClassId fresh[] = {2};
    const PrototypeSet old_set = PrototypeSet::random_base(base, 4, 1);
    const PrototypeSet new_set = PrototypeSet::random_base(fresh, 4, 2);
    const PrototypeSet joined = old_set.concat_with(new_set);
    ASSERT_EQ(joined.size(), 3u);
    EXPECT_EQ(joined.class_ids(), (std::vector<ClassId>{0, 1, 2}));
    for (std::size_t i = 0; i < 8; ++i) {
        EXPECT_EQ(joined.matrix().data()[i], old_set.matrix().data()[i]);
    }
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(joined.matrix().data()[8 + i], new_set.matrix().data()[i]);
    }
    EXPECT_THROW(old_set.concat_with(old_set), DuplicateClassError);
}

TEST(PrototypeSetSuite, RejectsDegenerateConstruction) {
    EXPECT_THROW(PrototypeSet({}, Tensor::ones({1, 1})), ConfigError);
    std::vector<PrototypeInfo> dup = {{1, PrototypeOrigin::LearnedBase, 0},
                                      {1, PrototypeOrigin::LearnedBase, 0}};
    EXPECT_THROW(PrototypeSet(dup, Tensor::ones({2, 3})), DuplicateClassError);
    std::vector<PrototypeInfo> one = {{1, PrototypeOrigin::LearnedBase, 0}};
    EXPECT_THROW(PrototypeSet(one, Tensor::zeros({1, 3})), NumericError);
    EXPECT_THROW(PrototypeSet(one, Tensor::ones({2, 3})), ShapeError);
}

TEST(PrototypeSetSuite, HashTracksContent) {
    const ClassId ids[] = {1, 2};
    const PrototypeSet a = PrototypeSet::random_base(ids, 4, 5);
    const PrototypeSet b = PrototypeSet::random_base(ids, 4, 5);
    const PrototypeSet c = PrototypeSet::random_base(ids, 4, 6);
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_NE(a.hash(), c.hash());
    const PrototypeSet detached = a.clone(false);
    EXPECT_EQ(detached.hash(), a.hash());
    EXPECT_FALSE(detached.matrix().requires_grad());
}

TEST(LossGradients, FiniteDifferenceSweep) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        const std::size_t n = 1, h = 2, w = 3, d = 4;
        LabelMap labels = random_labels(rng, n, h, w, 3);
        labels.ids[0] = 0;
        labels.ids[1] = 1;
        labels.ids[2] = 2;

        Tensor features = random_tensor(rng, {n, h, w, d}, 0.3, 1.2, true);
        const ClassId classes[] = {0, 1, 2};
        const Tensor semantic = l2_normalize(random_tensor(rng, {3, d}, -1.0, 1.0), 1);
        EXPECT_LT(gradcheck(
                      [&] {
                          const Tensor pooled = l2_normalize(
                              pool_class_means(features, ClassMask(labels), classes), 1);
                          return relation_alignment_loss(pooled, semantic);
                      },
                      {features}),
                  1e-4);

        PrototypeSet protos = toy_prototypes(rng, 3, d, true);
        EXPECT_LT(gradcheck(
                      [&] {
                          return segmentation_ce(prototype_segment(features, protos, 10.0),
                                                 labels);
                      },
                      {features, protos.matrix()}),
                  1e-4);

        Tensor aff = random_tensor(rng, {n, h, w, 3}, -0.9, 0.9, true);
        EXPECT_LT(gradcheck([&] { return affinity_ce(aff, labels, 10.0); }, {aff}), 1e-4);

        Tensor student = random_tensor(rng, {n, h, w, 5}, -1.0, 1.0, true);
        const Tensor teacher = random_tensor(rng, {n, h, w, 3}, -1.0, 1.0);
        EXPECT_LT(gradcheck([&] { return kd_loss(student, teacher, 10.0); }, {student}),
                  1e-4);
    }
}

TEST(LossGradients, ComposedObjectivesDifferentiate) {
    Rng rng(91);
    const std::size_t n = 1, h = 2, w = 2, d = 4;
    LabelMap labels(n, h, w);
    labels.ids = {0, 1, 2, 1};
    Tensor features = random_tensor(rng, {n, h, w, d}, 0.3, 1.2, true);
    PrototypeSet protos = toy_prototypes(rng, 3, d, true);
    const Tensor semantic = l2_normalize(random_tensor(rng, {3, d}, -1.0, 1.0), 1);
    const ClassId classes[] = {0, 1, 2};

    // base objective: pixel cross-entropy plus the relation alignment term
    EXPECT_LT(gradcheck(
                  [&] {
                      const Tensor ce = segmentation_ce(
                          prototype_segment(features, protos, 10.0), labels);
                      const Tensor pooled = l2_normalize(
                          pool_class_means(features, ClassMask(labels), classes), 1);
                      return add(ce, mul(relation_alignment_loss(pooled, semantic), 1.0));
                  },
                  {features, protos.matrix()}),
              1e-4);

    // incremental objective: affinity cross-entropy plus distillation
    Tensor old_protos = random_tensor(rng, {2, d}, 0.2, 1.0, true);
    Tensor new_protos = random_tensor(rng, {1, d}, 0.2, 1.0, true);
    const Tensor teacher_aff = random_tensor(rng, {n, h, w, 2}, -1.0, 1.0);
    LabelMap inc_labels(n, h, w);
    inc_labels.ids = {0, 2, 1, 2};
    EXPECT_LT(gradcheck(
                  [&] {
                      const Tensor joint = concat_affinities(
                          affinity_map(features, old_protos),
                          affinity_map(features, new_protos));
                      const Tensor ce = affinity_ce(joint, inc_labels, 10.0);
                      const Tensor kd = kd_loss(joint, teacher_aff, 10.0);
                      return add(ce, mul(kd, 1.0));
                  },
                  {features, old_protos, new_protos}),
              1e-4);
}
