#include "vitlab/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "vitlab/fourier.hpp"
#include "vitlab/rng.hpp"

namespace vitlab {

namespace {
constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarPlane = 1024;
constexpr double kPi = 3.14159265358979323846;
}  // namespace

void Dataset::validate() const {
    if (images.size() != labels.size()) throw std::invalid_argument("dataset: image/label count mismatch");
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (labels[i] >= class_count)
            throw std::invalid_argument("dataset: label " + std::to_string(labels[i]) + " out of range at sample " +
                                        std::to_string(i));
        if (!images.empty() && images[i].shape != images[0].shape)
            throw std::invalid_argument("dataset: non-uniform image shape at sample " + std::to_string(i));
    }
}

Tensor Dataset::batch_images(std::span<const std::size_t> idx) const {
    if (idx.empty()) throw std::invalid_argument("dataset: empty batch");
    const Shape s = images[0].shape;
    Tensor out({idx.size(), s[0], s[1], s[2]});
    const std::size_t per = shape_numel(s);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(images[idx[i]].data.begin(), per, out.data.begin() + i * per);
    return out;
}

std::vector<std::size_t> Dataset::batch_labels(std::span<const std::size_t> idx) const {
    std::vector<std::size_t> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
    return out;
}

Dataset Dataset::subset(std::size_t first, std::size_t count) const {
    Dataset out = *this;
    out.images.assign(images.begin() + first, images.begin() + std::min(size(), first + count));
    out.labels.assign(labels.begin() + first, labels.begin() + std::min(size(), first + count));
    return out;
}

Dataset load_cifar10_binary(const std::string& path, std::size_t limit, std::vector<double> norm_mean,
                            std::vector<double> norm_std) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cifar: cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % kCifarRecord != 0)
        throw std::invalid_argument("cifar: file length " + std::to_string(bytes.size()) +
                                    " is not a multiple of 3073 (truncated record at byte offset " +
                                    std::to_string(bytes.size() - bytes.size() % kCifarRecord) + ")");
    if (norm_mean.size() != 3 || norm_std.size() != 3)
        throw std::invalid_argument("cifar: expected 3 per-channel normalization constants");

    Dataset ds;
    ds.class_count = 10;
    ds.norm_mean = std::move(norm_mean);
    ds.norm_std = std::move(norm_std);
    const std::size_t available = bytes.size() / kCifarRecord;
    const std::size_t n = limit == 0 ? available : std::min(limit, available);
    ds.images.reserve(n);
    ds.labels.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t off = r * kCifarRecord;
        const unsigned char label = bytes[off];
        if (label >= 10)
            throw std::invalid_argument("cifar: label byte " + std::to_string(label) + " out of range at offset " +
                                        std::to_string(off));
        Tensor img({3, 32, 32});
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < kCifarPlane; ++p) {
                const double v = static_cast<double>(bytes[off + 1 + c * kCifarPlane + p]) / 255.0;
                img.data[c * kCifarPlane + p] = (v - ds.norm_mean[c]) / ds.norm_std[c];
            }
        ds.images.push_back(std::move(img));
        ds.labels.push_back(label);
    }
    return ds;
}

void save_cifar10_binary(const Dataset& ds, const std::string& path) {
    if (ds.channels() != 3 || ds.extent() != 32) throw std::invalid_argument("cifar: writer expects 3x32x32 images");
    if (ds.norm_mean.size() != 3 || ds.norm_std.size() != 3)
        throw std::invalid_argument("cifar: dataset lacks normalization constants");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::invalid_argument("cifar: cannot write '" + path + "'");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out.put(static_cast<char>(ds.labels[i]));
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < kCifarPlane; ++p) {
                const double v = ds.images[i].data[c * kCifarPlane + p] * ds.norm_std[c] + ds.norm_mean[c];
                const long b = std::lround(v * 255.0);
                out.put(static_cast<char>(std::min(255L, std::max(0L, b))));
            }
    }
}

namespace {

void standardize(Tensor& img) {
    double mu = 0.0;
    for (double v : img.data) mu += v;
    mu /= static_cast<double>(img.numel());
    double var = 0.0;
    for (double v : img.data) var += (v - mu) * (v - mu);
    var /= static_cast<double>(img.numel());
    const double s = 1.0 / std::sqrt(var + 1e-9);
    for (double& v : img.data) v = (v - mu) * s;
}

Tensor texture_sample(std::size_t extent, std::size_t cls, std::size_t class_count, Rng& rng) {
    // band-limited noise in the class's radial band plus faint broadband noise
    fourier::Spectrum2D s;
    s.h = extent;
    s.w = extent;
    s.orig_h = extent;
    s.orig_w = extent;
    s.bins.assign(extent * extent, {0.0, 0.0});
    const double lo = kPi * static_cast<double>(cls) / static_cast<double>(class_count);
    const double hi = kPi * static_cast<double>(cls + 1) / static_cast<double>(class_count);
    for (std::size_t u = 0; u < extent; ++u)
        for (std::size_t v = 0; v < extent; ++v) {
            const double r = fourier::radial_frequency(u, v, extent, extent);
            if (r >= lo && r < hi) s.at(u, v) = {rng.gaussian(), rng.gaussian()};
        }
    // enforce conjugate symmetry so the inverse transform is real
    for (std::size_t u = 0; u < extent; ++u)
        for (std::size_t v = 0; v < extent; ++v) {
            const std::size_t mu = (extent - u) % extent;  // mirrored centered index
            const std::size_t mv = (extent - v) % extent;
            if (mu == u && mv == v)
                s.at(u, v) = {s.at(u, v).real(), 0.0};
            else if (u * extent + v < mu * extent + mv)
                s.at(mu, mv) = std::conj(s.at(u, v));
        }
    Tensor base = fourier::ifft2(s);
    Tensor img({1, extent, extent});
    std::copy(base.data.begin(), base.data.end(), img.data.begin());
    standardize(img);
    for (double& v : img.data) v += 0.25 * rng.gaussian();  // broadband nuisance, ~6% energy
    standardize(img);
    return img;
}

Tensor shape_sample(std::size_t extent, std::size_t cls, std::size_t class_count, Rng& rng) {
    Tensor img({1, extent, extent});
    const double e = static_cast<double>(extent);
    const double cx = e / 2.0 + rng.uniform(-e / 8.0, e / 8.0);
    const double cy = e / 2.0 + rng.uniform(-e / 8.0, e / 8.0);
    const double radius = e * rng.uniform(0.22, 0.34);
    const std::size_t silhouette = cls % 4;
    // nuisance texture, resampled per image so it carries no class signal:
    // an oriented high-frequency grating plus patch-scale blotch noise
    const double angle = rng.uniform(0.0, kPi);
    const double freq = kPi * rng.uniform(0.70, 0.95);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    const std::size_t cell = std::max<std::size_t>(1, extent / 8);
    const std::size_t cells = extent / cell;
    std::vector<double> blotch(cells * cells);
    for (double& v : blotch) v = rng.gaussian();
    for (std::size_t y = 0; y < extent; ++y)
        for (std::size_t x = 0; x < extent; ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            bool inside = false;
            switch (silhouette) {
                case 0: inside = dx * dx + dy * dy <= radius * radius; break;
                case 1: inside = std::fabs(dx) <= radius && std::fabs(dy) <= radius * 0.8; break;
                case 2: inside = std::fabs(dx) + std::fabs(dy) <= radius * 1.3; break;
                case 3: inside = std::fabs(dx) <= radius * 0.35 || std::fabs(dy) <= radius * 0.35; break;
            }
            const double g = std::cos(freq * (std::cos(angle) * x + std::sin(angle) * y) + phase);
            const double b = blotch[y / cell * cells + x / cell];
            img.data[y * extent + x] = (inside ? 1.0 : -0.2) + 0.45 * g + 0.5 * b + 0.2 * rng.gaussian();
        }
    standardize(img);
    return img;
}

}  // namespace

Dataset gen_synthetic(SyntheticKind kind, std::size_t n, std::size_t extent, std::size_t class_count,
                      std::uint64_t seed) {
    if (extent == 0 || (extent & (extent - 1)) != 0)
        throw std::invalid_argument("gen_synthetic: extent must be a power of two");
    if (class_count < 2) throw std::invalid_argument("gen_synthetic: need at least 2 classes");
    Dataset ds;
    ds.class_count = class_count;
    ds.split = kind == SyntheticKind::kFrequencyTextures ? "frequency_textures" : "shapes";
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = i % class_count;
        ds.images.push_back(kind == SyntheticKind::kFrequencyTextures
                                ? texture_sample(extent, cls, class_count, rng)
                                : shape_sample(extent, cls, class_count, rng));
        ds.labels.push_back(cls);
    }
    return ds;
}

}  // namespace vitlab
