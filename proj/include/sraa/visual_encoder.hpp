#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sraa/errors.hpp"
#include "sraa/hash.hpp"
#include "sraa/rng.hpp"
#include "sraa/tensor.hpp"

namespace sraa {

struct ConvLayer {
    Tensor kernel;  // [kh, kw, Cin, Cout]
    Tensor bias;    // [Cout]
    std::size_t stride = 1;
};

/// Small convolutional stack mapping [N,H,W,C] images to [N,H/f,W/f,D]
/// feature maps, with max(0,x) between layers (not after the last, so
/// features keep both signs for cosine scoring). All kernels and biases are
/// gradient-tracked leaves.
class VisualEncoder {
public:
    struct Config {
        std::size_t in_channels = 3;
        std::size_t kernel_size = 3;
        std::vector<std::size_t> widths = {8, 16, 16};
        std::vector<std::size_t> strides = {2, 2, 1};
    };

    VisualEncoder() = default;

    explicit VisualEncoder(std::vector<ConvLayer> layers) : layers_(std::move(layers)) {
        if (layers_.empty()) throw ConfigError("VisualEncoder: no layers");
    }

    /// Seeded He-style initialization: kernel entries ~ N(0, 2/fan_in),
    /// biases zero.
    static VisualEncoder create(const Config& cfg, std::uint64_t seed) {
        if (cfg.widths.size() != cfg.strides.size() || cfg.widths.empty()) {
            throw ConfigError("VisualEncoder: widths/strides length mismatch");
        }
        std::vector<ConvLayer> layers;
        std::size_t in_ch = cfg.in_channels;
        for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
            const std::size_t out_ch = cfg.widths[i];
            const std::size_t k = cfg.kernel_size;
            Rng rng(derive_seed(seed, {0xE4C0u, i}));
            const double std_dev = std::sqrt(2.0 / static_cast<double>(k * k * in_ch));
            std::vector<double> kd(k * k * in_ch * out_ch);
            for (double& v : kd) v = rng.normal() * std_dev;
            layers.push_back({Tensor::param({k, k, in_ch, out_ch}, std::move(kd)),
                              Tensor::param({out_ch}, std::vector<double>(out_ch, 0.0)),
                              cfg.strides[i]});
            in_ch = out_ch;
        }
        return VisualEncoder(std::move(layers));
    }

    std::size_t downsample_factor() const {
        std::size_t f = 1;
        for (const auto& l : layers_) f *= l.stride;
        return f;
    }

    std::size_t feature_dim() const { return layers_.back().kernel.shape()[3]; }
    std::size_t in_channels() const { return layers_.front().kernel.shape()[2]; }

    /// images: [N,H,W,C] with H and W multiples of the downsample factor.
    Tensor encode(const Tensor& images) const {
        if (images.rank() != 4) throw ShapeError("encode: images must be rank 4 (NHWC)");
        if (images.shape()[3] != in_channels()) {
            throw ShapeError("encode: expected " + std::to_string(in_channels()) + " channels");
        }
        const std::size_t f = downsample_factor();
        if (images.shape()[1] % f != 0 || images.shape()[2] % f != 0) {
            throw ShapeError("encode: spatial extents must be multiples of " + std::to_string(f));
        }
        Tensor x = images;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            x = conv2d(x, layers_[i].kernel, layers_[i].bias, layers_[i].stride);
            if (i + 1 < layers_.size()) x = relu(x);
        }
        return x;
    }

    /// Shared handles to every trainable leaf, layer by layer.
    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (const auto& l : layers_) {
            out.push_back(l.kernel);
            out.push_back(l.bias);
        }
        return out;
    }

    const std::vector<ConvLayer>& layers() const { return layers_; }

    /// Independent deep copy. A non-tracked clone serves as a frozen teacher.
    VisualEncoder clone(bool requires_grad) const {
        std::vector<ConvLayer> layers;
        layers.reserve(layers_.size());
        for (const auto& l : layers_) {
            layers.push_back({l.kernel.clone(requires_grad), l.bias.clone(requires_grad), l.stride});
        }
        return VisualEncoder(std::move(layers));
    }

    std::uint64_t param_hash() const {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (const auto& l : layers_) {
            h = fnv1a64(l.kernel.data(), h);
            h = fnv1a64(l.bias.data(), h);
        }
        return h;
    }

private:
    std::vector<ConvLayer> layers_;
};

}  // namespace sraa
