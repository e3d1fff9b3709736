#include "vitlab/fourier.hpp"

#include <cmath>
#include <stdexcept>

#include "vitlab/rng.hpp"
#include "vitlab/trainer.hpp"

namespace vitlab {
namespace fourier {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool is_pow2(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// in-place iterative radix-2 DIT on a stride-1 line
void fft1(std::complex<double>* a, std::size_t n, bool inverse) {
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * kPi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse) {
        const double r = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) a[i] *= r;
    }
}

// reflect-pad (no edge repeat) a 2-d map up to (ph, pw)
std::vector<double> reflect_pad(const Tensor& map, std::size_t ph, std::size_t pw) {
    const std::size_t h = map.shape[0], w = map.shape[1];
    std::vector<double> out(ph * pw);
    auto reflect = [](std::size_t i, std::size_t n) {
        if (n == 1) return static_cast<std::size_t>(0);
        const std::size_t period = 2 * n - 2;
        std::size_t m = i % period;
        return m < n ? m : period - m;
    };
    for (std::size_t y = 0; y < ph; ++y)
        for (std::size_t x = 0; x < pw; ++x) out[y * pw + x] = map.data[reflect(y, h) * w + reflect(x, w)];
    return out;
}

void fft2_core(std::vector<std::complex<double>>& a, std::size_t h, std::size_t w, bool inverse) {
    for (std::size_t y = 0; y < h; ++y) fft1(a.data() + y * w, w, inverse);
    std::vector<std::complex<double>> col(h);
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y) col[y] = a[y * w + x];
        fft1(col.data(), h, inverse);
        for (std::size_t y = 0; y < h; ++y) a[y * w + x] = col[y];
    }
}

}  // namespace

Spectrum2D fft2(const Tensor& map) {
    if (map.ndim() != 2) throw std::invalid_argument("fft2: expected an (H,W) map");
    const std::size_t h = map.shape[0], w = map.shape[1];
    Spectrum2D s;
    s.orig_h = h;
    s.orig_w = w;
    s.h = next_pow2(h);
    s.w = next_pow2(w);
    s.padded = !(is_pow2(h) && is_pow2(w));

    std::vector<std::complex<double>> a(s.h * s.w);
    if (s.padded) {
        const auto padded = reflect_pad(map, s.h, s.w);
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = padded[i];
    } else {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = map.data[i];
    }
    fft2_core(a, s.h, s.w, false);
    // shift zero frequency to the center
    s.bins.resize(a.size());
    for (std::size_t u = 0; u < s.h; ++u)
        for (std::size_t v = 0; v < s.w; ++v)
            s.bins[((u + s.h / 2) % s.h) * s.w + (v + s.w / 2) % s.w] = a[u * s.w + v];
    return s;
}

Tensor ifft2(const Spectrum2D& spec) {
    std::vector<std::complex<double>> a(spec.h * spec.w);
    for (std::size_t u = 0; u < spec.h; ++u)
        for (std::size_t v = 0; v < spec.w; ++v)
            a[u * spec.w + v] = spec.bins[((u + spec.h / 2) % spec.h) * spec.w + (v + spec.w / 2) % spec.w];
    fft2_core(a, spec.h, spec.w, true);
    Tensor out({spec.h, spec.w});
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a[i].real();
    return out;
}

double radial_frequency(std::size_t u, std::size_t v, std::size_t h, std::size_t w) {
    const double cu = static_cast<double>(h) / 2.0, cv = static_cast<double>(w) / 2.0;
    const double du = (static_cast<double>(u) - cu) / cu;
    const double dv = (static_cast<double>(v) - cv) / cv;
    return std::min(kPi, kPi * std::hypot(du, dv));
}

void ProfileAccumulator::add(const Tensor& m) {
    if (m.ndim() != 3) throw std::invalid_argument("profile: expected (C,H,W) activations");
    const std::size_t c = m.shape[0], h = m.shape[1], w = m.shape[2];
    for (std::size_t ch = 0; ch < c; ++ch) {
        Tensor plane({h, w});
        std::copy_n(m.data.begin() + ch * h * w, h * w, plane.data.begin());
        const Spectrum2D s = fft2(plane);
        padded_ = padded_ || s.padded;
        const std::size_t steps = std::min(s.h, s.w) / 2;
        if (amp_sum_.empty()) amp_sum_.assign(steps + 1, 0.0);
        if (amp_sum_.size() != steps + 1) throw std::invalid_argument("profile: inconsistent activation extents");
        for (std::size_t i = 0; i <= steps; ++i) {
            // diagonal from the center bin to the corner bin (f = pi)
            const std::size_t u = (s.h / 2 + i) % s.h, v = (s.w / 2 + i) % s.w;
            amp_sum_[i] += std::abs(s.at(u, v));
        }
        ++count_;
    }
}

FrequencyProfile ProfileAccumulator::finalize(const std::string& layer, double eps) const {
    if (count_ == 0) throw std::invalid_argument("profile: nothing accumulated");
    FrequencyProfile prof;
    prof.layer = layer;
    prof.padded = padded_;
    const std::size_t steps = amp_sum_.size() - 1;
    prof.freqs.resize(steps + 1);
    prof.logamp.resize(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) {
        prof.freqs[i] = kPi * static_cast<double>(i) / static_cast<double>(steps);
        prof.logamp[i] = std::log(std::max(amp_sum_[i] / static_cast<double>(count_), eps));
    }
    prof.delta_log_amplitude = prof.logamp.back() - prof.logamp.front();
    return prof;
}

FrequencyProfile half_diagonal_profile(const std::vector<Tensor>& maps, const std::string& layer, double eps) {
    ProfileAccumulator acc;
    for (const Tensor& m : maps) acc.add(m);
    return acc.finalize(layer, eps);
}

std::vector<double> band_mask(std::size_t h, std::size_t w, const NoiseSpec& spec) {
    std::vector<double> m(h * w, 0.0);
    if (spec.width <= 0.0) return m;
    const double lo = std::max(0.0, spec.center - spec.width / 2.0);
    const double hi = std::min(kPi, spec.center + spec.width / 2.0);
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
            const double r = radial_frequency(u, v, h, w);
            if (r >= lo && r <= hi) m[u * w + v] = 1.0;
        }
    return m;
}

Tensor frequency_noise(const Tensor& x0, const NoiseSpec& spec) {
    const bool chw = x0.ndim() == 3;
    if (!chw && x0.ndim() != 2) throw std::invalid_argument("frequency_noise: expected (C,H,W) or (H,W)");
    const std::size_t c = chw ? x0.shape[0] : 1;
    const std::size_t h = chw ? x0.shape[1] : x0.shape[0];
    const std::size_t w = chw ? x0.shape[2] : x0.shape[1];

    Rng rng(spec.seed);
    Tensor out = x0;
    const std::size_t ph = next_pow2(h), pw = next_pow2(w);
    const auto mask = band_mask(ph, pw, NoiseSpec{spec.center, spec.width, spec.magnitude, spec.seed});
    bool all_pass = true;
    for (double v : mask) all_pass = all_pass && v == 1.0;

    for (std::size_t ch = 0; ch < c; ++ch) {
        // unit noise scaled afterwards: doubling magnitude doubles the field
        Tensor delta({h, w});
        for (double& v : delta.data) v = rng.gaussian();
        if (all_pass) {
            for (std::size_t i = 0; i < h * w; ++i) out.data[ch * h * w + i] += spec.magnitude * delta.data[i];
            continue;
        }
        Spectrum2D s = fft2(delta);
        for (std::size_t i = 0; i < s.bins.size(); ++i) s.bins[i] *= mask[i];
        const Tensor filtered = ifft2(s);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                out.data[ch * h * w + y * w + x] += spec.magnitude * filtered.data[y * pw + x];
    }
    return out;
}

}  // namespace fourier

namespace {

// per-sample (C,H,W) views of a recorded activation; tokens reshaped onto
// their spatial grid with the class token dropped
std::vector<Tensor> activation_maps(const Tape& t, const ActRecord& act) {
    const Tensor& v = t.val(act.out);
    std::vector<Tensor> maps;
    const std::size_t b = v.shape[0];
    if (act.tokens) {
        const std::size_t n = v.shape[1], d = v.shape[2];
        const std::size_t skip = act.has_cls ? 1 : 0;
        for (std::size_t i = 0; i < b; ++i) {
            Tensor m({d, act.grid_h, act.grid_w});
            for (std::size_t p = 0; p < act.grid_h * act.grid_w; ++p)
                for (std::size_t c = 0; c < d; ++c) m.data[c * act.grid_h * act.grid_w + p] =
                    v.data[(i * n + p + skip) * d + c];
            maps.push_back(std::move(m));
        }
    } else {
        const std::size_t per = v.numel() / b;
        for (std::size_t i = 0; i < b; ++i) {
            Tensor m({v.shape[1], v.shape[2], v.shape[3]});
            std::copy_n(v.data.begin() + i * per, per, m.data.begin());
            maps.push_back(std::move(m));
        }
    }
    return maps;
}

}  // namespace

std::vector<LayerProfile> layerwise_fourier_report(const Model& m, const Dataset& ds, std::size_t batch_size) {
    if (ds.size() == 0) throw std::invalid_argument("fourier report: empty dataset");
    std::vector<fourier::ProfileAccumulator> accs;
    std::vector<LayerProfile> out;
    Tape t;
    for (const auto& idx : batch_ranges(ds.size(), batch_size)) {
        t.clear();
        auto bp = bind_model(t, m);
        RunOptions opts;
        opts.record = true;
        auto fwd = model_forward(t, m.spec, bp, t.constant(ds.batch_images(idx)), opts);
        if (out.empty()) {
            accs.resize(fwd.acts.size());
            for (const auto& a : fwd.acts) out.push_back(LayerProfile{fourier::FrequencyProfile{}, a.kind, a.stage, a.index});
        }
        for (std::size_t i = 0; i < fwd.acts.size(); ++i)
            for (const Tensor& map : activation_maps(t, fwd.acts[i])) accs[i].add(map);
    }
    std::size_t i = 0;
    Tape t2;
    t2.clear();
    {
        // recover layer paths once more for naming
        auto bp = bind_model(t2, m);
        RunOptions opts;
        opts.record = true;
        std::vector<std::size_t> idx0 = {0, std::min<std::size_t>(1, ds.size() - 1)};
        auto fwd = model_forward(t2, m.spec, bp, t2.constant(ds.batch_images(idx0)), opts);
        for (const auto& a : fwd.acts) {
            out[i].profile = accs[i].finalize(a.path);
            ++i;
        }
    }
    return out;
}

std::vector<BandDrop> frequency_robustness_sweep(const Model& m, const Dataset& ds,
                                                 const std::vector<double>& centers, double width,
                                                 double magnitude, std::uint64_t seed, std::size_t batch_size) {
    const double clean = 1.0 - evaluate(m, ds, batch_size).error;
    std::vector<BandDrop> out;
    for (std::size_t b = 0; b < centers.size(); ++b) {
        Dataset noised = ds;
        for (std::size_t i = 0; i < noised.images.size(); ++i) {
            fourier::NoiseSpec spec;
            spec.center = centers[b];
            spec.width = width;
            spec.magnitude = magnitude;
            spec.seed = seed + 100003ULL * b + i;  // one reproducible stream per band
            noised.images[i] = fourier::frequency_noise(noised.images[i], spec);
        }
        const double acc = 1.0 - evaluate(m, noised, batch_size).error;
        out.push_back({centers[b], clean - acc});
    }
    return out;
}

}  // namespace vitlab
