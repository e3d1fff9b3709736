#pragma once

#include <complex>
#include <string>
#include <vector>

#include "vitlab/dataset.hpp"
#include "vitlab/model.hpp"
#include "vitlab/tensor.hpp"

namespace vitlab {
namespace fourier {

// Centered 2-d spectrum: DC sits at bin (h/2, w/2).
struct Spectrum2D {
    std::size_t h = 0, w = 0;
    std::vector<std::complex<double>> bins;  // row-major
    bool padded = false;                     // input was reflect-padded to powers of two
    std::size_t orig_h = 0, orig_w = 0;

    std::complex<double>& at(std::size_t u, std::size_t v) { return bins[u * w + v]; }
    const std::complex<double>& at(std::size_t u, std::size_t v) const { return bins[u * w + v]; }
};

// Radix-2 decimation-in-time along rows then columns, zero frequency shifted
// to the center. Non-dyadic extents are reflect-padded up to the next power
// of two and flagged in the result.
Spectrum2D fft2(const Tensor& map);

// Inverse of fft2 (real part; the imaginary residue of conjugate-symmetric
// spectra is discarded). Returns the padded extent; callers crop.
Tensor ifft2(const Spectrum2D& spec);

// Normalized radial frequency of a centered bin in [0, pi]; axis edges map to
// pi and the corners clamp to pi.
double radial_frequency(std::size_t u, std::size_t v, std::size_t h, std::size_t w);

struct FrequencyProfile {
    std::string layer;
    std::vector<double> freqs;    // ascending, first 0, last pi
    std::vector<double> logamp;   // log of channel- and sample-averaged amplitude
    double delta_log_amplitude;   // logamp(pi) - logamp(0)
    std::string convention = "corner_bin";
    bool padded = false;
};

// Half-diagonal profile of per-sample (C,H,W) activations: amplitudes sampled
// along the diagonal from the center bin (f=0) to the corner bin (f=pi),
// averaged over channels and samples, log-floored at eps.
FrequencyProfile half_diagonal_profile(const std::vector<Tensor>& maps, const std::string& layer,
                                       double eps = 1e-12);

struct NoiseSpec {
    double center = 0.0;      // band center in [0, pi]
    double width = 0.1 * 3.14159265358979323846;
    double magnitude = 0.1;
    std::uint64_t seed = 0;
};

// Indicator of the radial band [center-width/2, center+width/2] clipped to
// [0, pi]; symmetric, so band-limited noise inverts to a real image.
std::vector<double> band_mask(std::size_t h, std::size_t w, const NoiseSpec& spec);

// x0 + F^-1(F(delta) .* M_f) per channel; x0 is (C,H,W) or (H,W). The unit
// noise field depends only on the seed, so doubling the magnitude doubles
// the injected perturbation exactly.
Tensor frequency_noise(const Tensor& x0, const NoiseSpec& spec);

// Streaming amplitude accumulator behind half_diagonal_profile; lets reports
// average over a whole evaluation set without holding every activation.
class ProfileAccumulator {
public:
    void add(const Tensor& chw_map);
    FrequencyProfile finalize(const std::string& layer, double eps = 1e-12) const;
    bool empty() const { return count_ == 0; }

private:
    std::vector<double> amp_sum_;
    std::size_t count_ = 0;
    bool padded_ = false;
};

}  // namespace fourier

struct LayerProfile {
    fourier::FrequencyProfile profile;
    BlockKind kind;
    int stage = 0;
    int index = -1;
};

// One half-diagonal profile per recorded block output (post-residual), class
// tokens excluded, amplitudes averaged over the evaluation set and channels.
std::vector<LayerProfile> layerwise_fourier_report(const Model& m, const Dataset& ds, std::size_t batch_size);

struct BandDrop {
    double center = 0.0;
    double drop = 0.0;  // clean accuracy minus accuracy under band noise
};

// Accuracy drop per radial frequency band; one fixed noise seed per band.
std::vector<BandDrop> frequency_robustness_sweep(const Model& m, const Dataset& ds,
                                                 const std::vector<double>& centers, double width,
                                                 double magnitude, std::uint64_t seed, std::size_t batch_size);

}  // namespace vitlab
