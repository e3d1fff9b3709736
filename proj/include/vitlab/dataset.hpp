#pragma once

#include <span>
#include <string>
#include <vector>

#include "vitlab/tensor.hpp"

namespace vitlab {

// Labeled image collection. Images are (C,H,W) float tensors with per-channel
// normalization already applied; the constants ride along so the CIFAR writer
// can invert them exactly.
struct Dataset {
    std::vector<Tensor> images;
    std::vector<std::size_t> labels;
    std::size_t class_count = 0;
    std::string split;
    std::vector<double> norm_mean, norm_std;  // per channel; empty = raw

    std::size_t size() const { return images.size(); }
    std::size_t channels() const { return images.empty() ? 0 : images[0].shape[0]; }
    std::size_t extent() const { return images.empty() ? 0 : images[0].shape[1]; }

    void validate() const;
    Tensor batch_images(std::span<const std::size_t> idx) const;  // (B,C,H,W)
    std::vector<std::size_t> batch_labels(std::span<const std::size_t> idx) const;
    Dataset subset(std::size_t first, std::size_t count) const;
};

// CIFAR-10 binary batches: 3073-byte records, label byte then 1024 R + 1024 G
// + 1024 B bytes. Pixels scale to [0,1] and then normalize per channel.
// limit == 0 reads every record. Truncated files and labels >= 10 are
// rejected with the offending byte offset.
Dataset load_cifar10_binary(const std::string& path, std::size_t limit, std::vector<double> norm_mean,
                            std::vector<double> norm_std);

// Inverse of the loader; round-trips pixels and labels exactly.
void save_cifar10_binary(const Dataset& ds, const std::string& path);

enum class SyntheticKind : std::uint8_t {
    kFrequencyTextures,  // classes are disjoint radial frequency bands
    kShapes,             // low-frequency silhouettes + class-consistent high-frequency gratings
};

// Deterministic from seed; extent must be a power of two. Single channel,
// images standardized to roughly zero mean / unit variance.
Dataset gen_synthetic(SyntheticKind kind, std::size_t n, std::size_t extent, std::size_t class_count,
                      std::uint64_t seed);

}  // namespace vitlab
