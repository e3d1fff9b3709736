#include "vitlab/hessian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "vitlab/rng.hpp"
#include "vitlab/trainer.hpp"

namespace vitlab {

std::vector<EigPair> top_k_eigs(const LossClosure& f, const ParamVector& theta, const PowerIterConfig& cfg) {
    if (cfg.k < 1) throw std::invalid_argument("top_k_eigs: k must be >= 1");
    Rng rng(cfg.seed);
    std::vector<EigPair> found;
    bool dead_subspace = false;

    auto project_out = [&](ParamVector& v) {
        for (const auto& e : found) v.axpy(-ParamVector::dot(v, e.vector), e.vector);
    };

    for (std::size_t e = 0; e < cfg.k; ++e) {
        if (dead_subspace) {
            EigPair p;
            p.vector = theta.zeros_like();
            p.degenerate = true;
            found.push_back(std::move(p));
            continue;
        }
        ParamVector v = theta.zeros_like();
        for (auto& seg : v.segments)
            for (double& x : seg.value.data) x = rng.gaussian();
        project_out(v);
        const double n0 = v.norm();
        if (n0 < 1e-12) {
            dead_subspace = true;
            --e;
            continue;
        }
        v.scale(1.0 / n0);

        double rq = std::numeric_limits<double>::quiet_NaN();
        double residual = std::numeric_limits<double>::infinity();
        std::size_t iters = 0;
        for (std::size_t it = 0; it < cfg.max_iters; ++it) {
            ParamVector hv = closure_hvp(f, theta, v);
            project_out(hv);
            const double rq_next = ParamVector::dot(v, hv);
            // residual of the current estimate against the deflated operator
            ParamVector res = hv;
            res.axpy(-rq_next, v);
            const double res_norm = res.norm();
            const double nh = hv.norm();
            ++iters;
            if (nh < 1e-12) {
                // H annihilates the deflated subspace; remaining values are 0
                dead_subspace = true;
                rq = 0.0;
                break;
            }
            // convergence needs both a settled Rayleigh quotient and a small
            // eigenpair residual; the quotient alone settles at ~sqrt(tol)
            // eigenvector error
            const bool converged = std::isfinite(rq) &&
                                   std::fabs(rq_next - rq) <= cfg.tol * std::max(std::fabs(rq_next), 1e-12) &&
                                   res_norm <= 10.0 * cfg.tol * std::max(1.0, std::fabs(rq_next));
            rq = rq_next;
            residual = res_norm;
            if (converged) break;
            hv.scale(1.0 / nh);
            v = std::move(hv);
        }

        EigPair p;
        p.iters = iters;
        if (dead_subspace && rq == 0.0) {
            p.vector = theta.zeros_like();
            p.degenerate = true;
        } else {
            p.value = rq;
            p.residual = residual;
            p.vector = std::move(v);
        }
        found.push_back(std::move(p));
    }

    std::stable_sort(found.begin(), found.end(),
                     [](const EigPair& a, const EigPair& b) { return std::fabs(a.value) > std::fabs(b.value); });
    return found;
}

std::vector<SpectrumRecord> spectrum(const Model& m, const Dataset& ds, const SpectrumConfig& cfg) {
    if (ds.size() == 0) throw std::invalid_argument("spectrum: empty dataset");
    const std::size_t take =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.sample_fraction * ds.size())));
    Rng rng(cfg.seed ^ 0xD1CEBEEFULL);
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    order.resize(std::min(take, order.size()));

    std::vector<SpectrumRecord> out;
    std::size_t batch_id = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size, ++batch_id) {
        const std::size_t bs = std::min(cfg.batch_size, order.size() - at);
        SpectrumRecord rec;
        rec.checkpoint = cfg.checkpoint_tag;
        rec.batch_id = batch_id;
        if (bs < 2) {
            rec.skipped = true;
            rec.note = "batch of " + std::to_string(bs) + " below the minimum of 2";
            out.push_back(std::move(rec));
            continue;
        }
        std::vector<std::size_t> idx(order.begin() + at, order.begin() + at + bs);
        auto closure = model_batch_closure(m.spec, ds.batch_images(idx), ds.batch_labels(idx), cfg.weight_decay);
        PowerIterConfig pc;
        pc.k = cfg.k;
        pc.max_iters = cfg.max_iters;
        pc.tol = cfg.tol;
        pc.seed = cfg.seed + 7919 * batch_id;
        for (const EigPair& p : top_k_eigs(closure, m.params, pc)) {
            rec.eigenvalues.push_back(p.value);
            rec.residuals.push_back(p.residual);
            rec.iters.push_back(p.iters);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<double> collect_eigenvalues(const std::vector<SpectrumRecord>& records) {
    std::vector<double> out;
    for (const auto& r : records)
        if (!r.skipped) out.insert(out.end(), r.eigenvalues.begin(), r.eigenvalues.end());
    return out;
}

double nep(const std::vector<double>& eigenvalues) {
    if (eigenvalues.empty()) throw std::invalid_argument("nep: empty spectrum");
    std::size_t neg = 0;
    for (double v : eigenvalues) neg += v < 0.0;
    return static_cast<double>(neg) / static_cast<double>(eigenvalues.size());
}

double ape(const std::vector<double>& eigenvalues) {
    double sum = 0.0;
    std::size_t count = 0;
    for (double v : eigenvalues)
        if (v > 0.0) {
            sum += v;
            ++count;
        }
    if (count == 0) throw std::invalid_argument("ape: spectrum has no positive eigenvalues");
    return sum / static_cast<double>(count);
}

ParamVector filter_normalized_direction(const ParamVector& theta, std::uint64_t seed) {
    Rng rng(seed);
    ParamVector d = theta.zeros_like();
    for (auto& seg : d.segments)
        for (double& x : seg.value.data) x = rng.gaussian();

    for (std::size_t i = 0; i < d.segments.size(); ++i) {
        auto& dv = d.segments[i].value;
        const auto& tv = theta.segments[i].value;
        std::size_t groups = 1;
        if (theta.segments[i].kind == ParamKind::kConvFilter || theta.segments[i].kind == ParamKind::kLinear)
            groups = tv.shape[0];
        const std::size_t span = tv.numel() / groups;
        for (std::size_t g = 0; g < groups; ++g) {
            double tn = 0.0, dn = 0.0;
            for (std::size_t j = g * span; j < (g + 1) * span; ++j) {
                tn += tv.data[j] * tv.data[j];
                dn += dv.data[j] * dv.data[j];
            }
            tn = std::sqrt(tn);
            dn = std::sqrt(dn);
            const double scale = (tn == 0.0 || dn == 0.0) ? 0.0 : tn / dn;
            for (std::size_t j = g * span; j < (g + 1) * span; ++j) dv.data[j] *= scale;
        }
    }
    return d;
}

LandscapeGrid loss_surface(const Model& m, const Dataset& ds, const ParamVector& d1, const ParamVector& d2,
                           std::vector<double> alphas, std::vector<double> betas, double weight_decay,
                           std::size_t batch_size) {
    if (alphas.empty() || betas.empty()) throw std::invalid_argument("loss_surface: empty grid");
    auto has_zero = [](const std::vector<double>& v) {
        return std::find(v.begin(), v.end(), 0.0) != v.end();
    };
    if (!has_zero(alphas) || !has_zero(betas))
        throw std::invalid_argument("loss_surface: grid must include alpha=beta=0");

    LandscapeGrid grid;
    grid.d1 = d1;
    grid.d2 = d2;
    grid.alphas = std::move(alphas);
    grid.betas = std::move(betas);
    grid.losses.assign(grid.alphas.size(), std::vector<double>(grid.betas.size(), 0.0));

    Model probe = m;  // displacements act on a copy; the caller's model is untouched
    for (std::size_t i = 0; i < grid.alphas.size(); ++i) {
        for (std::size_t j = 0; j < grid.betas.size(); ++j) {
            probe.params = m.params;
            probe.params.axpy(grid.alphas[i], d1);
            probe.params.axpy(grid.betas[j], d2);
            grid.losses[i][j] = dataset_regularized_nll(probe, ds, weight_decay, batch_size);
        }
    }
    return grid;
}

}  // namespace vitlab
