#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sraa/data.hpp"
#include "sraa/errors.hpp"
#include "sraa/hash.hpp"
#include "sraa/io.hpp"
#include "sraa/losses.hpp"
#include "sraa/metrics.hpp"
#include "sraa/prototypes.hpp"
#include "sraa/rng.hpp"
#include "sraa/semantic_table.hpp"
#include "sraa/visual_encoder.hpp"

namespace sraa {

struct TrainConfig {
    std::size_t epochs_base = 30;
    std::size_t epochs_inc = 100;
    double lr_base = 0.01;
    double lr_inc = 0.01;
    double poly_power = 0.9;
    double lambda_align = 1.0;
    double lambda_kd = 1.0;
    double temperature = 10.0;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    bool align_background = false;  // include background in the alignment class set

    void validate() const {
        if (lr_base <= 0.0 || lr_inc <= 0.0) {
            throw ConfigError("TrainConfig: learning rates must be positive");
        }
        if (poly_power <= 0.0) throw ConfigError("TrainConfig: poly_power must be positive");
        if (temperature <= 0.0) throw ConfigError("TrainConfig: temperature must be positive");
        if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be at least 1");
        if (lambda_align < 0.0 || lambda_kd < 0.0) {
            throw ConfigError("TrainConfig: loss weights cannot be negative");
        }
    }

    std::uint64_t hash() const {
        std::uint64_t h = fnv1a64(&epochs_base, sizeof(epochs_base));
        h = fnv1a64(&epochs_inc, sizeof(epochs_inc), h);
        h = fnv1a64(&lr_base, sizeof(lr_base), h);
        h = fnv1a64(&lr_inc, sizeof(lr_inc), h);
        h = fnv1a64(&poly_power, sizeof(poly_power), h);
        h = fnv1a64(&lambda_align, sizeof(lambda_align), h);
        h = fnv1a64(&lambda_kd, sizeof(lambda_kd), h);
        h = fnv1a64(&temperature, sizeof(temperature), h);
        h = fnv1a64(&batch_size, sizeof(batch_size), h);
        h = fnv1a64(&seed, sizeof(seed), h);
        h = fnv1a64(&align_background, sizeof(align_background), h);
        return h;
    }
};

/// Polynomial decay: full rate at the first iteration, zero after the last.
inline double poly_lr(std::size_t iter, std::size_t total_iters, double lr0, double power) {
    if (total_iters == 0 || iter > total_iters) {
        throw ConfigError("poly_lr: iteration outside the schedule");
    }
    return lr0 * std::pow(1.0 - static_cast<double>(iter) / total_iters, power);
}

inline void sgd_step(Tensor& param, std::span<const double> grad, double lr) {
    if (grad.size() != param.size()) {
        throw ShapeError("sgd_step: gradient and parameter sizes differ");
    }
    auto d = param.data_mut();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * grad[i];
}

/// Parameters without a populated gradient carry an implicit zero gradient
/// and stay untouched.
inline void sgd_step(std::span<Tensor> params, double lr) {
    for (Tensor& p : params) {
        if (p.has_grad()) sgd_step(p, p.grad(), lr);
    }
}

/// Rewrites class ids as channel indices under the learned-class order
/// (position in `order` = classifier channel).
inline LabelMap to_channel_indices(const LabelMap& labels, std::span<const ClassId> order) {
    std::map<ClassId, ClassId> index_of;
    for (std::size_t i = 0; i < order.size(); ++i) {
        index_of[order[i]] = static_cast<ClassId>(i);
    }
    LabelMap out(labels.n, labels.h, labels.w);
    for (std::size_t i = 0; i < labels.ids.size(); ++i) {
        const auto it = index_of.find(labels.ids[i]);
        if (it == index_of.end()) {
            throw LabelError("to_channel_indices: class " + std::to_string(labels.ids[i]) +
                             " is not learned");
        }
        out.ids[i] = it->second;
    }
    return out;
}

/// The frozen previous-step model an incremental step distills from.
struct TeacherState {
    VisualEncoder encoder;
    PrototypeSet prototypes;

    std::uint64_t hash() const {
        const std::uint64_t e = encoder.param_hash();
        const std::uint64_t p = prototypes.hash();
        return fnv1a64(&p, sizeof(p), fnv1a64(&e, sizeof(e)));
    }
};

/// Everything the model knows after step t: the visual encoder, one
/// prototype per learned class (prototype order = learning order), and the
/// teacher snapshot used while step t was trained (absent at t=0).
struct StepState {
    int step_index = 0;
    VisualEncoder encoder;
    PrototypeSet prototypes;
    std::vector<ClassId> learned;  // background first, then classes in learning order
    std::size_t n_base = 0;        // how many of `learned` were known at step 0
    std::optional<TeacherState> teacher;
    std::vector<double> loss_history;  // mean loss per epoch of the step's training

    std::span<const ClassId> base_classes() const {
        return {learned.data() + 1, n_base - 1};  // skip background
    }
    std::span<const ClassId> novel_classes() const {
        return {learned.data() + n_base, learned.size() - n_base};
    }
};

/// Owns the episodes of one step and counts every access, so a test can
/// prove that an incremental step never read earlier-step data.
class EpisodeSource {
public:
    explicit EpisodeSource(std::vector<Episode> episodes)
        : episodes_(std::move(episodes)) {}

    std::size_t size() const { return episodes_.size(); }

    const Episode& at(std::size_t i) const {
        if (i >= episodes_.size()) throw ConfigError("EpisodeSource: index out of range");
        ++accesses_;
        return episodes_[i];
    }

    std::size_t access_count() const { return accesses_; }

private:
    std::vector<Episode> episodes_;
    mutable std::size_t accesses_ = 0;
};

namespace detail {

inline Tensor gather_images(const Tensor& images, std::span<const std::size_t> idx) {
    const auto& s = images.shape();
    const std::size_t stride = s[1] * s[2] * s[3];
    std::vector<double> out;
    out.reserve(idx.size() * stride);
    for (std::size_t i : idx) {
        out.insert(out.end(), images.data().begin() + i * stride,
                   images.data().begin() + (i + 1) * stride);
    }
    return Tensor::from({idx.size(), s[1], s[2], s[3]}, std::move(out));
}

inline LabelMap gather_labels(const LabelMap& labels, std::span<const std::size_t> idx) {
    LabelMap out(idx.size(), labels.h, labels.w);
    const std::size_t stride = labels.h * labels.w;
    for (std::size_t b = 0; b < idx.size(); ++b) {
        std::copy(labels.ids.begin() + idx[b] * stride,
                  labels.ids.begin() + (idx[b] + 1) * stride,
                  out.ids.begin() + b * stride);
    }
    return out;
}

inline void shuffle_indices(std::vector<std::size_t>& order, Rng& rng) {
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }
}

/// Per-class unit-norm random rows, the finetune baseline's stand-in for
/// semantic imprinting.
inline PrototypeSet random_prototypes(std::span<const ClassId> classes, std::size_t dim,
                                      std::uint64_t seed, int step) {
    std::vector<PrototypeInfo> info;
    std::vector<double> data;
    for (ClassId c : classes) {
        Rng rng(derive_seed(seed, {0xF7EEu, c}));
        std::vector<double> v(dim);
        double n2 = 0.0;
        for (double& x : v) {
            x = rng.normal();
            n2 += x * x;
        }
        const double n = std::sqrt(n2);
        for (double x : v) data.push_back(x / n);
        info.push_back({c, PrototypeOrigin::LearnedBase, step});
    }
    return PrototypeSet(std::move(info),
                        Tensor::param({classes.size(), dim}, std::move(data)));
}

}  // namespace detail

/// Learns the base step: encoder and per-class prototypes minimize pixel
/// cross-entropy plus the weighted semantic alignment term. Background gets
/// a learnable prototype like any base class but stays out of the alignment
/// set unless configured in.
inline StepState train_base(const TrainConfig& cfg, const VisualEncoder::Config& enc_cfg,
                            const Episode& data, const SemanticTable& table) {
    cfg.validate();
    if (data.labels.n == 0 || data.class_set.empty()) {
        throw ConfigError("train_base: empty base data");
    }
    for (ClassId c : data.class_set) {
        if (!data.labels.contains(c)) {
            throw ConfigError("train_base: class " + std::to_string(c) +
                              " has no pixels in the base data");
        }
    }
    if (!data.labels.contains(kBackgroundClass)) {
        throw ConfigError("train_base: base data has no background pixels");
    }

    VisualEncoder encoder =
        VisualEncoder::create(enc_cfg, derive_seed(cfg.seed, {0xB10u}));
    if (table.dim() != encoder.feature_dim()) {
        throw ConfigError("train_base: semantic dim " + std::to_string(table.dim()) +
                          " != feature dim " + std::to_string(encoder.feature_dim()));
    }

    std::vector<ClassId> learned;
    learned.push_back(kBackgroundClass);
    learned.insert(learned.end(), data.class_set.begin(), data.class_set.end());
    PrototypeSet protos = PrototypeSet::random_base(learned, encoder.feature_dim(),
                                                    derive_seed(cfg.seed, {0xB11u}));

    std::vector<ClassId> align_classes;
    if (cfg.align_background) align_classes.push_back(kBackgroundClass);
    align_classes.insert(align_classes.end(), data.class_set.begin(), data.class_set.end());
    for (ClassId c : align_classes) {
        if (!table.contains(c)) {
            throw ConfigError("train_base: no semantic vector for class " +
                              std::to_string(c));
        }
    }

    const LabelMap feat_labels = downsample_majority(data.labels, encoder.downsample_factor());
    const LabelMap chan_labels = to_channel_indices(feat_labels, learned);

    const std::size_t n = data.labels.n;
    const std::size_t batch = std::min(cfg.batch_size, n);
    const std::size_t batches = (n + batch - 1) / batch;
    const std::size_t total_iters = cfg.epochs_base * batches;

    std::vector<Tensor> params = encoder.parameters();
    params.push_back(protos.matrix());

    std::vector<double> history;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t iter = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs_base; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, {0xB12u, epoch}));
        detail::shuffle_indices(order, shuffle_rng);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < batches; ++b) {
            const std::size_t lo = b * batch;
            const std::span<const std::size_t> idx{order.data() + lo,
                                                   std::min(batch, n - lo)};
            const Tensor images = detail::gather_images(data.images, idx);
            const LabelMap targets = detail::gather_labels(chan_labels, idx);
            double loss_value = 0.0;
            try {
                GradTape tape;
                GradTape::Scope scope(tape);
                const Tensor feats = encoder.encode(images);
                Tensor loss = segmentation_ce(
                    prototype_segment(feats, protos, cfg.temperature), targets);
                if (cfg.lambda_align > 0.0) {
                    const ClassMask masks(detail::gather_labels(feat_labels, idx));
                    std::vector<ClassId> present;
                    for (ClassId c : align_classes) {
                        if (masks.count(c) > 0) present.push_back(c);
                    }
                    // the alignment contrast needs at least two classes in
                    // the batch; smaller batches train on cross-entropy alone
                    if (present.size() >= 2) {
                        const Tensor pooled =
                            l2_normalize(pool_class_means(feats, masks, present), 1);
                        loss = add(loss, mul(relation_alignment_loss(
                                                 pooled, table.encode(present)),
                                             cfg.lambda_align));
                    }
                }
                loss_value = loss.value();
                tape.backward(loss);
            } catch (const NumericError& e) {
                throw TrainingError(std::string("train_base: diverged: ") + e.what());
            }
            sgd_step(params, poly_lr(iter, total_iters, cfg.lr_base, cfg.poly_power));
            for (Tensor& p : params) p.zero_grad();
            ++iter;
            epoch_loss += loss_value;
        }
        history.push_back(epoch_loss / batches);
    }

    StepState state;
    state.step_index = 0;
    state.encoder = std::move(encoder);
    state.prototypes = std::move(protos);
    state.learned = std::move(learned);
    state.n_base = state.learned.size();
    state.loss_history = std::move(history);
    return state;
}

/// New-class prototypes copied bit-for-bit from their semantic vectors.
inline PrototypeSet imprint_prototypes(const SemanticTable& table,
                                       std::span<const ClassId> new_classes,
                                       std::span<const ClassId> learned, int step) {
    if (new_classes.empty()) throw ConfigError("imprint_prototypes: no new classes");
    std::vector<PrototypeInfo> info;
    std::vector<double> data;
    for (ClassId c : new_classes) {
        if (std::find(learned.begin(), learned.end(), c) != learned.end()) {
            throw DuplicateClassError("imprint_prototypes: class " + std::to_string(c) +
                                      " is already learned");
        }
        const auto v = table.vector_of(c);
        data.insert(data.end(), v.begin(), v.end());
        info.push_back({c, PrototypeOrigin::ImprintedSemantic, step});
    }
    return PrototypeSet(std::move(info),
                        Tensor::param({new_classes.size(), table.dim()}, std::move(data)));
}

enum class IncrementMode {
    Adaptation,  // semantic imprinting + affinity CE + distillation
    Finetune     // random novel prototypes + affinity CE only
};

/// One incremental step: snapshot the teacher, extend the classifier with
/// prototypes for the episode's classes, then jointly optimize encoder, old
/// prototypes, and new prototypes on the few-shot data. The returned
/// prototype set lists all old classes first, unchanged in order.
inline StepState train_increment(const StepState& prev, const TrainConfig& cfg,
                                 const Episode& data, const SemanticTable& table,
                                 IncrementMode mode = IncrementMode::Adaptation) {
    cfg.validate();
    if (data.labels.n == 0 || data.class_set.empty()) {
        throw ConfigError("train_increment: empty few-shot episode");
    }
    const int t = prev.step_index + 1;

    // the frozen teacher is the model exactly as the previous step left it
    TeacherState teacher{prev.encoder.clone(false), prev.prototypes.clone(false)};

    VisualEncoder encoder = prev.encoder.clone(true);
    PrototypeSet old_protos = prev.prototypes.clone(true);
    PrototypeSet new_protos =
        mode == IncrementMode::Adaptation
            ? imprint_prototypes(table, data.class_set, prev.learned, t)
            : detail::random_prototypes(data.class_set, prev.prototypes.dim(),
                                        derive_seed(cfg.seed, {0xF7u, static_cast<std::uint64_t>(t)}),
                                        t);
    if (mode == IncrementMode::Finetune) {
        for (ClassId c : data.class_set) {
            if (std::find(prev.learned.begin(), prev.learned.end(), c) !=
                prev.learned.end()) {
                throw DuplicateClassError("train_increment: class " + std::to_string(c) +
                                          " is already learned");
            }
        }
    }

    std::vector<ClassId> learned = prev.learned;
    learned.insert(learned.end(), data.class_set.begin(), data.class_set.end());

    const LabelMap feat_labels = downsample_majority(data.labels, encoder.downsample_factor());
    const LabelMap chan_labels = to_channel_indices(feat_labels, learned);

    const std::size_t n = data.labels.n;
    const std::size_t batch = std::min(cfg.batch_size, n);
    const std::size_t batches = (n + batch - 1) / batch;
    const std::size_t total_iters = cfg.epochs_inc * batches;

    std::vector<Tensor> params = encoder.parameters();
    params.push_back(old_protos.matrix());
    params.push_back(new_protos.matrix());

    std::vector<double> history;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t iter = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs_inc; ++epoch) {
        Rng shuffle_rng(
            derive_seed(cfg.seed, {0xB13u, static_cast<std::uint64_t>(t), epoch}));
        detail::shuffle_indices(order, shuffle_rng);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < batches; ++b) {
            const std::size_t lo = b * batch;
            const std::span<const std::size_t> idx{order.data() + lo,
                                                   std::min(batch, n - lo)};
            const Tensor images = detail::gather_images(data.images, idx);
            const LabelMap targets = detail::gather_labels(chan_labels, idx);
            double loss_value = 0.0;
            try {
                GradTape tape;
                GradTape::Scope scope(tape);
                const Tensor feats = encoder.encode(images);
                const Tensor joint = concat_affinities(
                    affinity_map(feats, old_protos.matrix()),
                    affinity_map(feats, new_protos.matrix()));
                Tensor loss = affinity_ce(joint, targets, cfg.temperature);
                if (mode == IncrementMode::Adaptation && cfg.lambda_kd > 0.0) {
                    const Tensor teacher_feats = teacher.encoder.encode(images);
                    const Tensor teacher_aff =
                        affinity_map(teacher_feats, teacher.prototypes.matrix());
                    loss = add(loss, mul(kd_loss(joint, teacher_aff, cfg.temperature),
                                         cfg.lambda_kd));
                }
                loss_value = loss.value();
                tape.backward(loss);
            } catch (const NumericError& e) {
                throw TrainingError(std::string("train_increment: diverged: ") + e.what());
            }
            sgd_step(params, poly_lr(iter, total_iters, cfg.lr_inc, cfg.poly_power));
            for (Tensor& p : params) p.zero_grad();
            ++iter;
            epoch_loss += loss_value;
        }
        history.push_back(epoch_loss / batches);
    }

    StepState state;
    state.step_index = t;
    state.encoder = std::move(encoder);
    state.prototypes = old_protos.concat_with(new_protos);
    state.learned = std::move(learned);
    state.n_base = prev.n_base;
    state.teacher = std::move(teacher);
    state.loss_history = std::move(history);
    return state;
}

/// Per-pixel argmax over prototype affinities, ties to the lowest class id,
/// scaled back to image resolution by nearest neighbor. Softmax and
/// temperature are monotone per pixel, so raw affinities decide.
inline LabelMap predict(const StepState& state, const Tensor& images) {
    const Tensor feats = state.encoder.encode(images);
    const Tensor aff = affinity_map(feats, state.prototypes.matrix());
    const auto& fs = feats.shape();
    const std::vector<ClassId> ids = state.prototypes.class_ids();
    LabelMap coarse(fs[0], fs[1], fs[2]);
    const std::size_t channels = ids.size();
    for (std::size_t p = 0; p < coarse.ids.size(); ++p) {
        double best = aff.data()[p * channels];
        ClassId best_id = ids[0];
        for (std::size_t c = 1; c < channels; ++c) {
            const double v = aff.data()[p * channels + c];
            if (v > best || (v == best && ids[c] < best_id)) {
                best = v;
                best_id = ids[c];
            }
        }
        coarse.ids[p] = best_id;
    }
    const std::size_t f = images.shape()[1] / fs[1];
    LabelMap fine(images.shape()[0], images.shape()[1], images.shape()[2]);
    for (std::size_t img = 0; img < fine.n; ++img) {
        for (std::size_t y = 0; y < fine.h; ++y) {
            for (std::size_t x = 0; x < fine.w; ++x) {
                fine.at(img, y, x) = coarse.at(img, y / f, x / f);
            }
        }
    }
    return fine;
}

/// Scores a state on held-out data. Classes the model has not met yet count
/// as background in the ground truth, mirroring what the model could know.
inline MetricsReport evaluate_step(const StepState& state, const Episode& eval_data) {
    LabelMap gt = eval_data.labels;
    const std::set<ClassId> known(state.learned.begin(), state.learned.end());
    for (ClassId& v : gt.ids) {
        if (!known.count(v)) v = kBackgroundClass;
    }
    const LabelMap pred = predict(state, eval_data.images);
    return build_report(pred, gt, state.base_classes(), state.novel_classes(),
                        state.step_index);
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "SRAA1", config hash, step index, learned classes,
// prototype matrix with per-row metadata, encoder layers. All numbers
// little-endian; all floats 64-bit.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const StepState& state, std::uint64_t config_hash,
                            const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_checkpoint: cannot open " + path);
    io::write_magic(os, "SRAA1");
    io::write_u64le(os, config_hash);
    io::write_u32le(os, static_cast<std::uint32_t>(state.step_index));
    io::write_u32le(os, static_cast<std::uint32_t>(state.learned.size()));
    for (ClassId c : state.learned) io::write_u16le(os, c);
    io::write_u32le(os, static_cast<std::uint32_t>(state.n_base));

    const PrototypeSet& protos = state.prototypes;
    io::write_u32le(os, static_cast<std::uint32_t>(protos.size()));
    io::write_u32le(os, static_cast<std::uint32_t>(protos.dim()));
    for (const PrototypeInfo& e : protos.entries()) {
        io::write_u16le(os, e.class_id);
        io::write_u16le(os, static_cast<std::uint16_t>(e.origin));
        io::write_u32le(os, static_cast<std::uint32_t>(e.step_created));
    }
    io::write_f64_span(os, protos.matrix().data());

    const auto& layers = state.encoder.layers();
    io::write_u32le(os, static_cast<std::uint32_t>(layers.size()));
    for (const ConvLayer& l : layers) {
        const auto& ks = l.kernel.shape();
        for (std::size_t d : ks) io::write_u32le(os, static_cast<std::uint32_t>(d));
        io::write_u32le(os, static_cast<std::uint32_t>(l.stride));
        io::write_f64_span(os, l.kernel.data());
        io::write_f64_span(os, l.bias.data());
    }
    os.flush();
    if (!os) throw IoError("save_checkpoint: write failed for " + path);
}

struct LoadedCheckpoint {
    StepState state;  // no teacher, no loss history: those live only in-step
    std::uint64_t config_hash = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_checkpoint: cannot open " + path);
    io::expect_magic(is, "SRAA1");
    LoadedCheckpoint out;
    out.config_hash = io::read_u64le(is);
    out.state.step_index = static_cast<int>(io::read_u32le(is));
    const std::size_t n_learned = io::read_u32le(is);
    out.state.learned.resize(n_learned);
    for (ClassId& c : out.state.learned) c = io::read_u16le(is);
    out.state.n_base = io::read_u32le(is);
    if (out.state.n_base == 0 || out.state.n_base > n_learned) {
        throw FormatError("load_checkpoint: base-class count out of range");
    }

    const std::size_t rows = io::read_u32le(is);
    const std::size_t dim = io::read_u32le(is);
    if (rows != n_learned) {
        throw FormatError("load_checkpoint: prototype count != learned classes");
    }
    std::vector<PrototypeInfo> info(rows);
    for (PrototypeInfo& e : info) {
        e.class_id = io::read_u16le(is);
        e.origin = static_cast<PrototypeOrigin>(io::read_u16le(is));
        e.step_created = static_cast<std::int32_t>(io::read_u32le(is));
    }
    out.state.prototypes = PrototypeSet(
        std::move(info), Tensor::param({rows, dim}, io::read_f64_vec(is, rows * dim)));

    const std::size_t n_layers = io::read_u32le(is);
    if (n_layers == 0) throw FormatError("load_checkpoint: encoder has no layers");
    std::vector<ConvLayer> layers;
    for (std::size_t i = 0; i < n_layers; ++i) {
        Shape ks(4);
        for (std::size_t& d : ks) {
            d = io::read_u32le(is);
            if (d == 0) throw FormatError("load_checkpoint: zero kernel extent");
        }
        const std::size_t stride = io::read_u32le(is);
        const std::size_t kn = ks[0] * ks[1] * ks[2] * ks[3];
        Tensor kernel = Tensor::param(ks, io::read_f64_vec(is, kn));
        Tensor bias = Tensor::param({ks[3]}, io::read_f64_vec(is, ks[3]));
        layers.push_back({std::move(kernel), std::move(bias), stride});
    }
    out.state.encoder = VisualEncoder(std::move(layers));
    return out;
}

}  // namespace sraa
