#include "vitlab/featuremap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vitlab/trainer.hpp"

namespace vitlab {

namespace {

// Per-sample flattened activation matrix (n x features); token grids drop the
// class token so representations stay spatially comparable.
Tensor flatten_activation(const Tape& t, const ActRecord& act) {
    const Tensor& v = t.val(act.out);
    const std::size_t b = v.shape[0];
    if (!act.tokens) {
        Tensor out({b, v.numel() / b});
        out.data = v.data;
        return out;
    }
    const std::size_t n = v.shape[1], d = v.shape[2];
    const std::size_t skip = act.has_cls ? 1 : 0;
    Tensor out({b, (n - skip) * d});
    for (std::size_t i = 0; i < b; ++i)
        std::copy_n(v.data.begin() + (i * n + skip) * d, (n - skip) * d, out.data.begin() + i * (n - skip) * d);
    return out;
}

// spatial variance per (sample, channel), averaged over channels and samples
double spatial_variance(const Tape& t, const ActRecord& act) {
    const Tensor& v = t.val(act.out);
    const std::size_t b = v.shape[0];
    double acc = 0.0;
    std::size_t groups = 0;
    if (act.tokens) {
        const std::size_t n = v.shape[1], d = v.shape[2];
        const std::size_t skip = act.has_cls ? 1 : 0;
        const std::size_t m = n - skip;
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t c = 0; c < d; ++c) {
                double mu = 0.0, sq = 0.0;
                for (std::size_t p = skip; p < n; ++p) {
                    const double x = v.data[(i * n + p) * d + c];
                    mu += x;
                    sq += x * x;
                }
                mu /= static_cast<double>(m);
                acc += sq / static_cast<double>(m) - mu * mu;
                ++groups;
            }
    } else {
        const std::size_t c = v.shape[1], hw = v.shape[2] * v.shape[3];
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double mu = 0.0, sq = 0.0;
                for (std::size_t p = 0; p < hw; ++p) {
                    const double x = v.data[(i * c + ch) * hw + p];
                    mu += x;
                    sq += x * x;
                }
                mu /= static_cast<double>(hw);
                acc += sq / static_cast<double>(hw) - mu * mu;
                ++groups;
            }
    }
    return acc / static_cast<double>(groups);
}

}  // namespace

std::vector<VarianceEntry> variance_profile(const Model& m, const Dataset& ds, std::size_t batch_size) {
    if (ds.size() == 0) throw std::invalid_argument("variance_profile: empty dataset");
    std::vector<VarianceEntry> entries;
    std::vector<double> weight_sum;
    Tape t;
    for (const auto& idx : batch_ranges(ds.size(), batch_size)) {
        t.clear();
        auto bp = bind_model(t, m);
        RunOptions opts;
        opts.record = true;
        auto fwd = model_forward(t, m.spec, bp, t.constant(ds.batch_images(idx)), opts);
        if (entries.empty()) {
            for (const auto& a : fwd.acts) entries.push_back({a.path, a.kind, a.stage, a.index, 0.0});
            weight_sum.assign(fwd.acts.size(), 0.0);
        }
        for (std::size_t i = 0; i < fwd.acts.size(); ++i) {
            entries[i].variance += spatial_variance(t, fwd.acts[i]) * static_cast<double>(idx.size());
            weight_sum[i] += static_cast<double>(idx.size());
        }
    }
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i].variance /= weight_sum[i];
    return entries;
}

double linear_cka(const Tensor& x, const Tensor& y) {
    if (x.ndim() != 2 || y.ndim() != 2 || x.shape[0] != y.shape[0])
        throw std::invalid_argument("linear_cka: need n x p and n x q with matching n");
    const std::size_t n = x.shape[0];
    if (n < 2) throw std::invalid_argument("linear_cka: need at least 2 samples");
    auto centered = [n](const Tensor& m) {
        Tensor c = m;
        const std::size_t p = m.shape[1];
        for (std::size_t j = 0; j < p; ++j) {
            double mu = 0.0;
            for (std::size_t i = 0; i < n; ++i) mu += c.data[i * p + j];
            mu /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) c.data[i * p + j] -= mu;
        }
        return c;
    };
    const Tensor cx = centered(x), cy = centered(y);
    const std::size_t p = x.shape[1], q = y.shape[1];
    // ||Y'X||_F^2 and the self terms
    double xy = 0.0;
    for (std::size_t a = 0; a < q; ++a)
        for (std::size_t b = 0; b < p; ++b) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += cy.data[i * q + a] * cx.data[i * p + b];
            xy += acc * acc;
        }
    auto self_fro = [n](const Tensor& c) {
        const std::size_t d = c.shape[1];
        double out = 0.0;
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) acc += c.data[i * d + a] * c.data[i * d + b];
                out += acc * acc;
            }
        return std::sqrt(out);
    };
    const double den = self_fro(cx) * self_fro(cy);
    if (den == 0.0) throw std::invalid_argument("linear_cka: zero-variance input");
    return xy / den;
}

double unbiased_hsic(const std::vector<double>& k, const std::vector<double>& l, std::size_t n) {
    if (n < 4) throw std::invalid_argument("unbiased_hsic: needs n >= 4");
    if (k.size() != n * n || l.size() != n * n) throw std::invalid_argument("unbiased_hsic: bad gram size");
    double trkl = 0.0, sk = 0.0, sl = 0.0, skl = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double rowk = 0.0, rowl = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double kv = k[i * n + j], lv = l[i * n + j];
            trkl += kv * lv;
            rowk += kv;
            rowl += lv;
        }
        sk += rowk;
        sl += rowl;
        skl += rowk * rowl;
    }
    const double nn = static_cast<double>(n);
    return (trkl + sk * sl / ((nn - 1.0) * (nn - 2.0)) - 2.0 / (nn - 2.0) * skl) / (nn * (nn - 3.0));
}

CKAMatrix cka_matrix(const Model& m, const Dataset& ds, std::size_t batch_size) {
    const auto ranges = batch_ranges(ds.size(), batch_size);
    if (ranges.size() < 2)
        throw std::invalid_argument("cka_matrix: the mini-batch estimator needs at least 2 batches");
    CKAMatrix out;
    std::vector<std::vector<double>> hsic_sums;  // L x L accumulators
    std::size_t layer_count = 0;
    Tape t;
    for (const auto& idx : ranges) {
        if (idx.size() < 4) continue;  // unbiased estimator is undefined below 4 samples
        t.clear();
        auto bp = bind_model(t, m);
        RunOptions opts;
        opts.record = true;
        auto fwd = model_forward(t, m.spec, bp, t.constant(ds.batch_images(idx)), opts);
        if (out.layers.empty()) {
            for (const auto& a : fwd.acts) {
                out.layers.push_back(a.path);
                out.stages.push_back(a.stage);
            }
            layer_count = out.layers.size();
            hsic_sums.assign(layer_count, std::vector<double>(layer_count, 0.0));
        }
        // raw linear grams per layer
        const std::size_t n = idx.size();
        std::vector<std::vector<double>> grams(layer_count);
        for (std::size_t li = 0; li < layer_count; ++li) {
            const Tensor f = flatten_activation(t, fwd.acts[li]);
            const std::size_t p = f.shape[1];
            grams[li].assign(n * n, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < p; ++c) acc += f.data[i * p + c] * f.data[j * p + c];
                    grams[li][i * n + j] = acc;
                    grams[li][j * n + i] = acc;
                }
        }
        for (std::size_t a = 0; a < layer_count; ++a)
            for (std::size_t b = a; b < layer_count; ++b) {
                const double h = unbiased_hsic(grams[a], grams[b], n);
                hsic_sums[a][b] += h;
                if (b != a) hsic_sums[b][a] += h;
            }
    }
    if (out.layers.empty()) throw std::invalid_argument("cka_matrix: no usable batches (need >= 4 samples each)");

    out.values.assign(layer_count * layer_count, 0.0);
    out.flagged.assign(layer_count * layer_count, 0);
    for (std::size_t a = 0; a < layer_count; ++a)
        for (std::size_t b = 0; b < layer_count; ++b) {
            const double den = std::sqrt(std::max(0.0, hsic_sums[a][a])) * std::sqrt(std::max(0.0, hsic_sums[b][b]));
            if (den <= 0.0) {
                out.flagged[a * layer_count + b] = 1;
                continue;
            }
            out.values[a * layer_count + b] = std::clamp(hsic_sums[a][b] / den, 0.0, 1.0);
        }
    return out;
}

std::vector<LesionEntry> lesion_sweep(const Model& m, const Dataset& ds, std::size_t batch_size,
                                      const std::vector<std::string>& units) {
    const auto valid = removable_units(m.spec);
    for (const auto& u : units)
        if (std::find(valid.begin(), valid.end(), u) == valid.end())
            throw std::invalid_argument("lesion_sweep: unit '" + u + "' is not a removable residual branch");
    const double clean = 1.0 - evaluate(m, ds, batch_size).error;
    std::vector<LesionEntry> out;
    for (const auto& u : units) {
        std::set<std::string> ablate = {u};
        const double acc = 1.0 - evaluate(m, ds, batch_size, &ablate).error;
        LesionEntry e;
        e.unit = u;
        // locate block metadata
        for (std::size_t s = 0; s < m.spec.stages.size(); ++s)
            for (std::size_t b = 0; b < m.spec.stages[s].blocks.size(); ++b)
                if (u == "s" + std::to_string(s + 1) + ".b" + std::to_string(b)) {
                    e.kind = m.spec.stages[s].blocks[b].kind;
                    e.stage = static_cast<int>(s + 1);
                    e.index = static_cast<int>(b);
                }
        e.acc_drop = clean - acc;
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<LesionEntry> lesion_sweep(const Model& m, const Dataset& ds, std::size_t batch_size) {
    return lesion_sweep(m, ds, batch_size, removable_units(m.spec));
}

Reliability reliability_from_logits(const Tensor& logits, const std::vector<std::size_t>& labels,
                                    std::size_t bins) {
    if (bins < 1) throw std::invalid_argument("reliability: bins must be >= 1");
    if (logits.ndim() != 2 || logits.shape[0] != labels.size())
        throw std::invalid_argument("reliability: logits/labels mismatch");
    const std::size_t n = logits.shape[0], c = logits.shape[1];
    std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
    std::vector<std::size_t> count(bins, 0);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = logits.data[i * c];
        std::size_t arg = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (logits.data[i * c + j] > mx) {
                mx = logits.data[i * c + j];
                arg = j;
            }
        double den = 0.0;
        for (std::size_t j = 0; j < c; ++j) den += std::exp(logits.data[i * c + j] - mx);
        const double conf = 1.0 / den;  // exp(0)/den for the argmax entry
        std::size_t bin = static_cast<std::size_t>(conf * static_cast<double>(bins));
        if (bin >= bins) bin = bins - 1;
        conf_sum[bin] += conf;
        acc_sum[bin] += arg == labels[i] ? 1.0 : 0.0;
        ++count[bin];
    }
    Reliability rel;
    rel.bins.resize(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        rel.bins[b].count = count[b];
        if (count[b] == 0) continue;
        rel.bins[b].confidence = conf_sum[b] / static_cast<double>(count[b]);
        rel.bins[b].accuracy = acc_sum[b] / static_cast<double>(count[b]);
        rel.ece += static_cast<double>(count[b]) / static_cast<double>(n) *
                   std::fabs(rel.bins[b].accuracy - rel.bins[b].confidence);
    }
    return rel;
}

Reliability reliability_diagram(const Model& m, const Dataset& ds, std::size_t bins, std::size_t batch_size) {
    Tensor logits({ds.size(), m.spec.classes});
    Tape t;
    for (const auto& idx : batch_ranges(ds.size(), batch_size)) {
        t.clear();
        auto bp = bind_model(t, m);
        auto fwd = model_forward(t, m.spec, bp, t.constant(ds.batch_images(idx)));
        const Tensor& l = t.val(fwd.logits);
        for (std::size_t i = 0; i < idx.size(); ++i)
            std::copy_n(l.data.begin() + i * m.spec.classes, m.spec.classes,
                        logits.data.begin() + idx[i] * m.spec.classes);
    }
    return reliability_from_logits(logits, ds.labels, bins);
}

}  // namespace vitlab
