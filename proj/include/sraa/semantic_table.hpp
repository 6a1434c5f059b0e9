#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sraa/errors.hpp"
#include "sraa/label_map.hpp"
#include "sraa/rng.hpp"
#include "sraa/tensor.hpp"

namespace sraa {

/// Frozen map from class id to a unit-norm semantic vector. The table is
/// immutable after construction and encode() returns plain (non-tracked)
/// tensors, so no gradient can ever reach it.
class SemanticTable {
public:
    /// I.i.d. Gaussian vectors, L2-normalized. Each class draws from its own
    /// seed substream, so a class's vector depends only on (seed, class id).
    static SemanticTable random(std::span<const ClassId> classes, std::size_t dim,
                                std::uint64_t seed) {
        if (dim == 0) throw ConfigError("SemanticTable: dimension must be positive");
        SemanticTable table(dim);
        for (ClassId c : classes) {
            Rng rng(derive_seed(seed, {0x5E3Au, c}));
            std::vector<double> v(dim);
            for (double& x : v) x = rng.normal();
            normalize(v, "SemanticTable: degenerate random draw");
            table.vectors_.emplace(c, std::move(v));
        }
        return table;
    }

    /// Text format: header `semtab v1 <num_classes> <dim>`, then one line per
    /// class: `<class_id> <v_0> ... <v_{dim-1}>`. Vectors are re-normalized
    /// on load.
    static SemanticTable load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("SemanticTable: cannot open " + path.string());
        std::string tag, version;
        std::size_t count = 0, dim = 0;
        if (!(in >> tag >> version >> count >> dim) || tag != "semtab" || version != "v1") {
            throw FormatError("SemanticTable: bad header in " + path.string());
        }
        if (dim == 0) throw FormatError("SemanticTable: zero dimension declared");
        SemanticTable table(dim);
        for (std::size_t i = 0; i < count; ++i) {
            long long raw_id = 0;
            if (!(in >> raw_id) || raw_id < 0 || raw_id > 0xFFFF) {
                throw FormatError("SemanticTable: bad class id in row " + std::to_string(i));
            }
            std::vector<double> v(dim);
            for (double& x : v) {
                if (!(in >> x)) {
                    throw FormatError("SemanticTable: truncated vector for class " +
                                      std::to_string(raw_id));
                }
            }
            normalize(v, "SemanticTable: zero-norm vector for class " + std::to_string(raw_id));
            if (!table.vectors_.emplace(static_cast<ClassId>(raw_id), std::move(v)).second) {
                throw FormatError("SemanticTable: duplicate class " + std::to_string(raw_id));
            }
        }
        return table;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("SemanticTable: cannot write " + path.string());
        out.precision(17);
        out << "semtab v1 " << vectors_.size() << " " << dim_ << "\n";
        for (const auto& [id, v] : vectors_) {
            out << id;
            for (double x : v) out << " " << x;
            out << "\n";
        }
        if (!out) throw IoError("SemanticTable: write failed for " + path.string());
    }

    std::size_t dim() const { return dim_; }
    std::size_t num_classes() const { return vectors_.size(); }
    bool contains(ClassId c) const { return vectors_.count(c) != 0; }

    const std::vector<double>& vector_of(ClassId c) const {
        auto it = vectors_.find(c);
        if (it == vectors_.end()) {
            throw UnknownClassError("SemanticTable: unknown class " + std::to_string(c));
        }
        return it->second;
    }

    /// Rows in the order of `classes`; result carries no gradient tracking.
    Tensor encode(std::span<const ClassId> classes) const {
        std::vector<double> data;
        data.reserve(classes.size() * dim_);
        for (ClassId c : classes) {
            const auto& v = vector_of(c);
            data.insert(data.end(), v.begin(), v.end());
        }
        return Tensor::from({classes.size(), dim_}, std::move(data));
    }

private:
    explicit SemanticTable(std::size_t dim) : dim_(dim) {}

    static void normalize(std::vector<double>& v, const std::string& zero_msg) {
        double n2 = 0.0;
        for (double x : v) {
            if (!std::isfinite(x)) throw FormatError("SemanticTable: non-finite component");
            n2 += x * x;
        }
        if (n2 == 0.0) throw FormatError(zero_msg);
        const double n = std::sqrt(n2);
        for (double& x : v) x /= n;
    }

    std::size_t dim_;
    std::map<ClassId, std::vector<double>> vectors_;
};

}  // namespace sraa
