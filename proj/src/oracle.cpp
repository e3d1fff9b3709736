#include "vitlab/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vitlab {
namespace oracle {

namespace {

ParamVector with_flat(const ParamVector& theta, std::size_t flat_index, double delta) {
    ParamVector t = theta;
    std::size_t off = 0;
    for (auto& s : t.segments) {
        if (flat_index < off + s.value.numel()) {
            s.value.data[flat_index - off] += delta;
            return t;
        }
        off += s.value.numel();
    }
    throw std::out_of_range("fd: flat index out of range");
}

}  // namespace

double fd_partial(const LossClosure& f, const ParamVector& theta, std::size_t flat_index, double eps) {
    const double lp = closure_value(f, with_flat(theta, flat_index, eps));
    const double lm = closure_value(f, with_flat(theta, flat_index, -eps));
    return (lp - lm) / (2.0 * eps);
}

ParamVector fd_hvp(const LossClosure& f, const ParamVector& theta, const ParamVector& v, double eps) {
    ParamVector tp = theta;
    tp.axpy(eps, v);
    ParamVector tm = theta;
    tm.axpy(-eps, v);
    ParamVector gp = closure_grad(f, tp);
    const ParamVector gm = closure_grad(f, tm);
    gp.axpy(-1.0, gm);
    gp.scale(1.0 / (2.0 * eps));
    return gp;
}

std::vector<double> dense_hessian(const LossClosure& f, const ParamVector& theta, double eps) {
    const std::size_t n = theta.total_dim();
    std::vector<double> h(n * n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const ParamVector gp = closure_grad(f, with_flat(theta, j, eps));
        const ParamVector gm = closure_grad(f, with_flat(theta, j, -eps));
        const auto fp = gp.flatten();
        const auto fm = gm.flatten();
        for (std::size_t i = 0; i < n; ++i) h[i * n + j] = (fp[i] - fm[i]) / (2.0 * eps);
    }
    // symmetrize
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double m = 0.5 * (h[i * n + j] + h[j * n + i]);
            h[i * n + j] = m;
            h[j * n + i] = m;
        }
    return h;
}

std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n) {
    if (a.size() != n * n) throw std::invalid_argument("symmetric_eigenvalues: bad size");
    // cyclic Jacobi sweeps
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::fabs(apq) < 1e-300) continue;
                const double app = a[p * n + p], aqq = a[q * n + q];
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a[i * n + i];
    std::sort(eig.begin(), eig.end(), [](double x, double y) { return x > y; });
    return eig;
}

std::vector<std::complex<double>> naive_dft2_centered(const Tensor& map) {
    if (map.ndim() != 2) throw std::invalid_argument("naive_dft2: expected 2-d map");
    const std::size_t h = map.shape[0], w = map.shape[1];
    std::vector<std::complex<double>> out(h * w);
    const double pi = 3.14159265358979323846;
    for (std::size_t u = 0; u < h; ++u) {
        for (std::size_t v = 0; v < w; ++v) {
            std::complex<double> acc(0.0, 0.0);
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const double ang = -2.0 * pi * (static_cast<double>(u * y) / h + static_cast<double>(v * x) / w);
                    acc += map.data[y * w + x] * std::complex<double>(std::cos(ang), std::sin(ang));
                }
            // shift zero frequency to the center bin (h/2, w/2)
            const std::size_t cu = (u + h / 2) % h, cv = (v + w / 2) % w;
            out[cu * w + cv] = acc;
        }
    }
    return out;
}

double naive_linear_cka(const Tensor& x, const Tensor& y) {
    if (x.ndim() != 2 || y.ndim() != 2 || x.shape[0] != y.shape[0])
        throw std::invalid_argument("naive_linear_cka: need n x p and n x q with same n");
    const std::size_t n = x.shape[0];
    auto gram_centered = [n](const Tensor& m) {
        const std::size_t p = m.shape[1];
        // column-center
        std::vector<double> c(m.data);
        for (std::size_t j = 0; j < p; ++j) {
            double mu = 0.0;
            for (std::size_t i = 0; i < n; ++i) mu += c[i * p + j];
            mu /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) c[i * p + j] -= mu;
        }
        std::vector<double> g(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < p; ++k) acc += c[i * p + k] * c[j * p + k];
                g[i * n + j] = acc;
            }
        return g;
    };
    const auto kx = gram_centered(x);
    const auto ky = gram_centered(y);
    double hsic_xy = 0.0, hsic_xx = 0.0, hsic_yy = 0.0;
    for (std::size_t i = 0; i < n * n; ++i) {
        hsic_xy += kx[i] * ky[i];
        hsic_xx += kx[i] * kx[i];
        hsic_yy += ky[i] * ky[i];
    }
    const double den = std::sqrt(hsic_xx) * std::sqrt(hsic_yy);
    if (den == 0.0) throw std::invalid_argument("naive_linear_cka: zero-variance input");
    return hsic_xy / den;
}

std::vector<double> straight_line_mlp(const std::vector<double>& x, std::size_t in_dim,
                                      const std::vector<std::size_t>& widths,
                                      const std::vector<std::vector<double>>& weights,
                                      const std::vector<std::vector<double>>& biases) {
    std::vector<double> cur = x;
    std::size_t d = in_dim;
    for (std::size_t layer = 0; layer < widths.size(); ++layer) {
        const std::size_t w = widths[layer];
        std::vector<double> next(w, 0.0);
        for (std::size_t j = 0; j < w; ++j) {
            double acc = biases[layer][j];
            for (std::size_t i = 0; i < d; ++i) acc += cur[i] * weights[layer][i * w + j];
            next[j] = acc;
        }
        if (layer + 1 < widths.size())
            for (double& v : next) v = v > 0.0 ? v : 0.0;
        cur = std::move(next);
        d = w;
    }
    return cur;
}

std::vector<std::vector<std::size_t>> neighborhood_sets(std::size_t grid_h, std::size_t grid_w, int k) {
    const int lo = -(k - 1) / 2, hi = (k - 1) / 2;
    std::vector<std::vector<std::size_t>> sets(grid_h * grid_w);
    for (std::size_t y = 0; y < grid_h; ++y)
        for (std::size_t x = 0; x < grid_w; ++x) {
            auto& s = sets[y * grid_w + x];
            for (int dy = lo; dy <= hi; ++dy)
                for (int dx = lo; dx <= hi; ++dx) {
                    const long ny = static_cast<long>(y) + dy;
                    const long nx = static_cast<long>(x) + dx;
                    if (ny < 0 || nx < 0 || ny >= static_cast<long>(grid_h) || nx >= static_cast<long>(grid_w))
                        continue;
                    s.push_back(static_cast<std::size_t>(ny) * grid_w + static_cast<std::size_t>(nx));
                }
        }
    return sets;
}

}  // namespace oracle
}  // namespace vitlab
