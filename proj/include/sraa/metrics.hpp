#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sraa/errors.hpp"
#include "sraa/label_map.hpp"

namespace sraa {

/// Intersection over union of one class between prediction and ground truth.
/// Empty union means the class is absent from both maps; that is not a zero
/// score but "no evidence", so the result carries no value and the class
/// drops out of any mean.
inline std::optional<double> iou(const LabelMap& pred, const LabelMap& gt, ClassId c) {
    if (!pred.same_shape(gt)) throw ShapeError("iou: prediction and truth differ in shape");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.ids.size(); ++i) {
        const bool p = pred.ids[i] == c;
        const bool g = gt.ids[i] == c;
        inter += p && g;
        uni += p || g;
    }
    if (uni == 0) return std::nullopt;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double harmonic_mean(double base, double novel) {
    if (base < 0.0 || novel < 0.0) throw ConfigError("harmonic_mean: negative input");
    if (base == 0.0 || novel == 0.0) return 0.0;
    return 2.0 * base * novel / (base + novel);
}

/// Everything a step evaluation produces: the full confusion matrix over
/// background plus the learned classes, per-class IoU, the base/novel means
/// with their harmonic mean, and the cross-block confusion rates that
/// quantify base/novel aliasing.
struct MetricsReport {
    int step_index = 0;
    std::vector<ClassId> class_order;       // background first, then learned order
    std::vector<std::size_t> confusion;     // row-major [gt][pred], square
    std::map<ClassId, std::optional<double>> per_class_iou;
    std::vector<ClassId> base_classes;
    std::vector<ClassId> novel_classes;
    double miou_base = 0.0;
    double miou_novel = 0.0;
    double hm = 0.0;
    double base_to_novel_rate = 0.0;
    double novel_to_base_rate = 0.0;

    std::size_t order_count() const { return class_order.size(); }
    std::size_t at(std::size_t gt_row, std::size_t pred_col) const {
        return confusion[gt_row * class_order.size() + pred_col];
    }
};

namespace detail {

inline double mean_of_defined(const MetricsReport& r, std::span<const ClassId> classes) {
    double acc = 0.0;
    std::size_t n = 0;
    for (ClassId c : classes) {
        if (const auto& v = r.per_class_iou.at(c)) {
            acc += *v;
            ++n;
        }
    }
    return n == 0 ? 0.0 : acc / n;
}

}  // namespace detail

/// Tallies one prediction/ground-truth pair into a full report. Both maps
/// may only carry background or listed classes; anything else is the
/// caller's remapping mistake, not a metric.
inline MetricsReport build_report(const LabelMap& pred, const LabelMap& gt,
                                  std::span<const ClassId> base,
                                  std::span<const ClassId> novel, int step_index) {
    if (!pred.same_shape(gt)) {
        throw ShapeError("build_report: prediction and truth differ in shape");
    }
    MetricsReport r;
    r.step_index = step_index;
    r.base_classes.assign(base.begin(), base.end());
    r.novel_classes.assign(novel.begin(), novel.end());
    r.class_order.push_back(kBackgroundClass);
    r.class_order.insert(r.class_order.end(), base.begin(), base.end());
    r.class_order.insert(r.class_order.end(), novel.begin(), novel.end());
    std::map<ClassId, std::size_t> row_of;
    for (std::size_t i = 0; i < r.class_order.size(); ++i) row_of[r.class_order[i]] = i;
    const std::size_t k = r.class_order.size();
    r.confusion.assign(k * k, 0);
    for (std::size_t i = 0; i < pred.ids.size(); ++i) {
        const auto g = row_of.find(gt.ids[i]);
        const auto p = row_of.find(pred.ids[i]);
        if (g == row_of.end()) {
            throw LabelError("build_report: ground-truth class " +
                             std::to_string(gt.ids[i]) + " not in class order");
        }
        if (p == row_of.end()) {
            throw LabelError("build_report: predicted class " +
                             std::to_string(pred.ids[i]) + " not in class order");
        }
        ++r.confusion[g->second * k + p->second];
    }
    // IoU straight from the matrix: union = gt mass + pred mass - overlap
    std::vector<std::size_t> gt_mass(k, 0), pred_mass(k, 0);
    for (std::size_t g = 0; g < k; ++g) {
        for (std::size_t p = 0; p < k; ++p) {
            gt_mass[g] += r.confusion[g * k + p];
            pred_mass[p] += r.confusion[g * k + p];
        }
    }
    for (std::size_t i = 0; i < k; ++i) {
        const ClassId c = r.class_order[i];
        const std::size_t inter = r.confusion[i * k + i];
        const std::size_t uni = gt_mass[i] + pred_mass[i] - inter;
        r.per_class_iou[c] = uni == 0
                                 ? std::optional<double>{}
                                 : std::optional<double>{static_cast<double>(inter) / uni};
    }
    r.miou_base = detail::mean_of_defined(r, base);
    r.miou_novel = detail::mean_of_defined(r, novel);
    r.hm = harmonic_mean(r.miou_base, r.miou_novel);
    // cross-block confusion: how much base truth lands in novel predictions
    // and vice versa
    std::size_t base_total = 0, base_to_novel = 0, novel_total = 0, novel_to_base = 0;
    for (ClassId bc : base) {
        const std::size_t g = row_of.at(bc);
        base_total += gt_mass[g];
        for (ClassId nc : novel) base_to_novel += r.confusion[g * k + row_of.at(nc)];
    }
    for (ClassId nc : novel) {
        const std::size_t g = row_of.at(nc);
        novel_total += gt_mass[g];
        for (ClassId bc : base) novel_to_base += r.confusion[g * k + row_of.at(bc)];
    }
    r.base_to_novel_rate =
        base_total == 0 ? 0.0 : static_cast<double>(base_to_novel) / base_total;
    r.novel_to_base_rate =
        novel_total == 0 ? 0.0 : static_cast<double>(novel_to_base) / novel_total;
    return r;
}

// ---------------------------------------------------------------------------
// Report files: one JSON record per line for full reports, plus a flat CSV
// summary table (fold, shots, protocol, miou_base, miou_novel, hm).
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json report_record(const MetricsReport& r, std::size_t fold,
                                            std::size_t shots,
                                            const std::string& protocol) {
    nlohmann::ordered_json j;
    j["fold"] = fold;
    j["shots"] = shots;
    j["protocol"] = protocol;
    j["step"] = r.step_index;
    j["miou_base"] = r.miou_base;
    j["miou_novel"] = r.miou_novel;
    j["hm"] = r.hm;
    j["base_to_novel_rate"] = r.base_to_novel_rate;
    j["novel_to_base_rate"] = r.novel_to_base_rate;
    nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
    for (ClassId c : r.class_order) {
        const auto& v = r.per_class_iou.at(c);
        if (v) {
            per_class[std::to_string(c)] = *v;
        } else {
            per_class[std::to_string(c)] = nullptr;
        }
    }
    j["per_class_iou"] = std::move(per_class);
    j["class_order"] = r.class_order;
    const std::size_t k = r.class_order.size();
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (std::size_t g = 0; g < k; ++g) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (std::size_t p = 0; p < k; ++p) row.push_back(r.confusion[g * k + p]);
        rows.push_back(std::move(row));
    }
    j["confusion"] = std::move(rows);
    return j;
}

struct SummaryRow {
    std::size_t fold;
    std::size_t shots;
    std::string protocol;
    double miou_base;
    double miou_novel;
    double hm;
};

inline void write_jsonl(const std::string& path,
                        std::span<const nlohmann::ordered_json> records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("write_jsonl: cannot open " + path);
    for (const auto& rec : records) os << rec.dump() << '\n';
    os.flush();
    if (!os) throw IoError("write_jsonl: write failed for " + path);
}

inline void write_summary_csv(const std::string& path, std::span<const SummaryRow> rows) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("write_summary_csv: cannot open " + path);
    os << "fold,shots,protocol,miou_base,miou_novel,hm\n";
    char buf[128];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f", row.miou_base, row.miou_novel,
                      row.hm);
        os << row.fold << ',' << row.shots << ',' << row.protocol << ',' << buf << '\n';
    }
    os.flush();
    if (!os) throw IoError("write_summary_csv: write failed for " + path);
}

}  // namespace sraa
