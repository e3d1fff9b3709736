#include "vitlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "vitlab/rng.hpp"

namespace vitlab {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr char kMagic[4] = {'V', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void TrainConfig::validate() const {
    if (epochs > 0 && warmup_epochs >= epochs)
        throw std::invalid_argument("train config: warmup_epochs must be < epochs");
    if (lr_max < 0 || weight_decay < 0) throw std::invalid_argument("train config: rates must be nonnegative");
    if (label_smoothing < 0 || label_smoothing >= 1)
        throw std::invalid_argument("train config: label smoothing must be in [0,1)");
    if (batch_size == 0) throw std::invalid_argument("train config: batch size must be positive");
}

Var ce_loss(Tape& t, Var logits, const std::vector<std::size_t>& labels, std::size_t classes,
            double label_smoothing) {
    const Shape s = t.shape(logits);
    if (s.size() != 2 || s[1] != classes) throw std::invalid_argument("ce_loss: logits must be (B,classes)");
    if (s[0] != labels.size()) throw std::invalid_argument("ce_loss: batch size mismatch");
    for (std::size_t l : labels)
        if (l >= classes) throw std::invalid_argument("ce_loss: label out of range");

    Var mx = t.max(logits, 1, true);
    Var z = t.sub(logits, mx);
    Var logp = t.sub(z, t.log(t.sum(t.exp(z), 1, true)));
    Tensor target({s[0], classes});
    const double off = label_smoothing / static_cast<double>(classes);
    for (std::size_t b = 0; b < s[0]; ++b)
        for (std::size_t c = 0; c < classes; ++c)
            target.data[b * classes + c] = (c == labels[b] ? 1.0 - label_smoothing : 0.0) + off;
    Var picked = t.sum(t.mul(logp, t.constant(std::move(target))), 1, false);
    return t.neg(t.mean(picked, 0, false));
}

Var regularized_nll_var(Tape& t, Var logits, const std::vector<std::size_t>& labels, std::size_t classes,
                        double label_smoothing, const ParamVector& theta, const std::vector<Var>& leaves,
                        double weight_decay) {
    Var loss = ce_loss(t, logits, labels, classes, label_smoothing);
    if (weight_decay <= 0.0) return loss;
    Var reg;
    bool first = true;
    for (std::size_t i = 0; i < theta.segments.size(); ++i) {
        if (!theta.segments[i].decay) continue;
        Var sq = t.sum_all(t.mul(leaves[i], leaves[i]));
        reg = first ? sq : t.add(reg, sq);
        first = false;
    }
    if (first) return loss;
    return t.add(loss, t.mul_scalar(reg, 0.5 * weight_decay));
}

double regularized_nll(const Model& m, const Tensor& images, const std::vector<std::size_t>& labels,
                       double weight_decay, double label_smoothing) {
    Tape t;
    auto bp = bind_model(t, m);
    auto fwd = model_forward(t, m.spec, bp, t.constant(images));
    Var loss = regularized_nll_var(t, fwd.logits, labels, m.spec.classes, label_smoothing, m.params, bp.leaves,
                                   weight_decay);
    return t.val(loss).data[0];
}

double dataset_regularized_nll(const Model& m, const Dataset& ds, double weight_decay, std::size_t batch_size) {
    double ce = 0.0;
    Tape t;
    for (const auto& idx : batch_ranges(ds.size(), batch_size)) {
        t.clear();
        auto bp = bind_model(t, m);
        auto fwd = model_forward(t, m.spec, bp, t.constant(ds.batch_images(idx)));
        Var loss = ce_loss(t, fwd.logits, ds.batch_labels(idx), m.spec.classes, 0.0);
        const double v = t.val(loss).data[0];
        if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
        ce += v * static_cast<double>(idx.size());
    }
    ce /= static_cast<double>(ds.size());
    double reg = 0.0;
    for (const auto& seg : m.params.segments)
        if (seg.decay)
            for (double v : seg.value.data) reg += v * v;
    return ce + 0.5 * weight_decay * reg;
}

LossClosure model_batch_closure(const ModelSpec& spec, Tensor images, std::vector<std::size_t> labels,
                                double weight_decay, double label_smoothing) {
    if (labels.empty()) throw std::invalid_argument("model_batch_closure: empty batch");
    return [spec, images = std::move(images), labels = std::move(labels), weight_decay,
            label_smoothing](Tape& t, const ParamVector& theta) {
        auto bp = bind_model(t, spec, theta);
        auto fwd = model_forward(t, spec, bp, t.constant(images));
        Var loss = regularized_nll_var(t, fwd.logits, labels, spec.classes, label_smoothing, theta, bp.leaves,
                                       weight_decay);
        return std::make_pair(loss, bp.leaves);
    };
}

double lr_at(const TrainConfig& cfg, std::size_t step, std::size_t steps_per_epoch) {
    const std::size_t total = cfg.epochs * steps_per_epoch;
    const std::size_t warm = cfg.warmup_epochs * steps_per_epoch;
    if (step >= total && total > 0) step = total - 1;
    if (warm > 0 && step < warm) return cfg.lr_max * static_cast<double>(step) / static_cast<double>(warm);
    const std::size_t span = total > warm + 1 ? total - 1 - warm : 1;
    const double tt = static_cast<double>(step - warm) / static_cast<double>(span);
    return cfg.lr_max * 0.5 * (1.0 + std::cos(kPi * tt));
}

void adamw_step(ParamVector& params, const ParamVector& grads, AdamMoments& moments, double lr,
                const TrainConfig& cfg) {
    if (!params.same_structure(grads)) throw std::invalid_argument("adamw: grad structure mismatch");
    if (moments.m.segments.empty()) {
        moments.m = params.zeros_like();
        moments.v = params.zeros_like();
        moments.step = 0;
    }
    ++moments.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(moments.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(moments.step));
    for (std::size_t i = 0; i < params.segments.size(); ++i) {
        auto& th = params.segments[i].value.data;
        const auto& g = grads.segments[i].value.data;
        auto& m = moments.m.segments[i].value.data;
        auto& v = moments.v.segments[i].value.data;
        const double wd = params.segments[i].decay ? cfg.weight_decay : 0.0;
        for (std::size_t j = 0; j < th.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            th[j] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + wd * th[j]);
        }
    }
}

std::vector<std::vector<std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
    batch_size = std::min(batch_size, n);
    std::vector<std::vector<std::size_t>> out;
    std::size_t i = 0;
    while (i < n) {
        std::size_t take = std::min(batch_size, n - i);
        if (n - i - take == 1 && take > 1) --take;  // avoid a trailing singleton
        std::vector<std::size_t> idx(take);
        for (std::size_t j = 0; j < take; ++j) idx[j] = i + j;
        out.push_back(std::move(idx));
        i += take;
    }
    return out;
}

EvalResult evaluate(const Model& m, const Dataset& ds, std::size_t batch_size,
                    const std::set<std::string>* ablate) {
    if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    std::size_t wrong = 0;
    double nll = 0.0;
    Tape t;
    for (const auto& idx : batch_ranges(ds.size(), batch_size)) {
        t.clear();
        auto bp = bind_model(t, m);
        RunOptions opts;
        opts.ablate = ablate;
        auto fwd = model_forward(t, m.spec, bp, t.constant(ds.batch_images(idx)), opts);
        const auto labels = ds.batch_labels(idx);
        const Tensor logits = t.val(fwd.logits);
        const std::size_t classes = m.spec.classes;
        for (std::size_t b = 0; b < idx.size(); ++b) {
            std::size_t arg = 0;
            for (std::size_t c = 1; c < classes; ++c)
                if (logits.data[b * classes + c] > logits.data[b * classes + arg]) arg = c;
            if (arg != labels[b]) ++wrong;
        }
        Var loss = ce_loss(t, fwd.logits, labels, classes, 0.0);
        nll += t.val(loss).data[0] * static_cast<double>(idx.size());
    }
    return {static_cast<double>(wrong) / static_cast<double>(ds.size()), nll / static_cast<double>(ds.size())};
}

namespace {

void check_compat(const ModelSpec& spec, const Dataset& ds, const char* which) {
    if (ds.size() == 0) throw std::invalid_argument(std::string("train: empty ") + which + " dataset");
    if (ds.class_count != spec.classes)
        throw std::invalid_argument("train: model expects " + std::to_string(spec.classes) + " classes but " +
                                    which + " dataset has " + std::to_string(ds.class_count));
    if (ds.channels() != spec.in_channels || ds.extent() != spec.image_extent)
        throw std::invalid_argument(std::string("train: ") + which + " dataset geometry does not match the model");
}

Checkpoint snapshot(const Model& model, const AdamMoments& moments, std::size_t epoch, const Rng& rng,
                    double train_nll, double test_err, std::string tag) {
    Checkpoint ck;
    ck.model_spec = model.spec.serialize();
    ck.tag = std::move(tag);
    ck.epoch = epoch;
    ck.rng_state = rng.serialize();
    ck.train_nll = train_nll;
    ck.test_err = test_err;
    ck.params = model.params;
    ck.moments = moments;
    return ck;
}

TrainResult train_from(Model model, AdamMoments moments, Rng rng, std::size_t first_epoch,
                       const TrainConfig& cfg, const Dataset& train_set, const Dataset& test_set) {
    cfg.validate();
    check_compat(model.spec, train_set, "train");
    check_compat(model.spec, test_set, "test");

    TrainResult res;
    const std::size_t n = train_set.size();
    const std::size_t spb = batch_ranges(n, cfg.batch_size).size();
    std::size_t step = first_epoch * spb;

    if (first_epoch == 0) {
        const double err0 = cfg.epochs == 0 ? evaluate(model, test_set, cfg.batch_size).error : 0.0;
        res.checkpoints.push_back(snapshot(model, moments, 0, rng, 0.0, err0, "init"));
    }

    Tape t;
    for (std::size_t epoch = first_epoch + 1; epoch <= cfg.epochs; ++epoch) {
        // identity re-seeded each epoch so a resumed run shuffles identically
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(order);
        double nll_sum = 0.0;
        std::size_t nll_count = 0;
        double last_lr = 0.0;
        std::size_t cursor = 0;
        for (const auto& proto : batch_ranges(n, cfg.batch_size)) {
            std::vector<std::size_t> idx(proto.size());
            for (std::size_t j = 0; j < proto.size(); ++j) idx[j] = order[cursor + j];
            cursor += proto.size();

            last_lr = lr_at(cfg, step, spb);
            t.clear();
            auto bp = bind_model(t, model);
            auto fwd = model_forward(t, model.spec, bp, t.constant(train_set.batch_images(idx)));
            Var loss = ce_loss(t, fwd.logits, train_set.batch_labels(idx), model.spec.classes,
                               cfg.label_smoothing);
            auto g = t.gradient(loss, bp.leaves);
            const ParamVector grads = read_back(t, g, model.params);
            nll_sum += t.val(loss).data[0] * static_cast<double>(idx.size());
            nll_count += idx.size();
            adamw_step(model.params, grads, moments, last_lr, cfg);
            ++step;
        }
        const double train_nll = nll_sum / static_cast<double>(nll_count);
        const double test_err = evaluate(model, test_set, cfg.batch_size).error;
        res.log.push_back({epoch, last_lr, train_nll, test_err});

        const bool warm_mark = epoch == cfg.warmup_epochs;
        const bool listed = std::find(cfg.checkpoint_epochs.begin(), cfg.checkpoint_epochs.end(), epoch) !=
                            cfg.checkpoint_epochs.end();
        const bool final_mark = epoch == cfg.epochs;
        if (warm_mark || listed || final_mark) {
            std::string tag = warm_mark ? "warmup" : (final_mark ? "final" : "epoch_" + std::to_string(epoch));
            res.checkpoints.push_back(snapshot(model, moments, epoch, rng, train_nll, test_err, tag));
        }
    }
    res.model = std::move(model);
    return res;
}

}  // namespace

TrainResult train(const ModelSpec& spec, const TrainConfig& cfg, const Dataset& train_set,
                  const Dataset& test_set) {
    Model model = build_model(spec, cfg.seed);
    Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 1);
    return train_from(std::move(model), AdamMoments{}, rng, 0, cfg, train_set, test_set);
}

TrainResult resume(const Checkpoint& ck, const TrainConfig& cfg, const Dataset& train_set,
                   const Dataset& test_set) {
    Model model;
    model.spec = ModelSpec::deserialize(ck.model_spec);
    model.params = ck.params;
    return train_from(std::move(model), ck.moments, Rng::deserialize(ck.rng_state), ck.epoch, cfg, train_set,
                      test_set);
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_str(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
double get_f64(std::istream& is) {
    double v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
std::string get_str(std::istream& is) {
    const std::uint64_t n = get_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

void put_params(std::ostream& os, const ParamVector& pv) {
    put_u64(os, pv.segments.size());
    for (const auto& seg : pv.segments) {
        put_str(os, seg.name);
        os.put(static_cast<char>(seg.kind));
        os.put(seg.decay ? 1 : 0);
        put_u32(os, static_cast<std::uint32_t>(seg.value.ndim()));
        for (std::size_t d : seg.value.shape) put_u64(os, d);
        os.write(reinterpret_cast<const char*>(seg.value.data.data()),
                 static_cast<std::streamsize>(seg.value.data.size() * sizeof(double)));
    }
}

ParamVector get_params(std::istream& is) {
    ParamVector pv;
    const std::uint64_t n = get_u64(is);
    for (std::uint64_t i = 0; i < n; ++i) {
        ParamSegment seg;
        seg.name = get_str(is);
        seg.kind = static_cast<ParamKind>(is.get());
        seg.decay = is.get() != 0;
        const std::uint32_t nd = get_u32(is);
        Shape s(nd);
        for (auto& d : s) d = get_u64(is);
        seg.value = Tensor(std::move(s));
        is.read(reinterpret_cast<char*>(seg.value.data.data()),
                static_cast<std::streamsize>(seg.value.data.size() * sizeof(double)));
        pv.segments.push_back(std::move(seg));
    }
    return pv;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::invalid_argument("checkpoint: cannot write '" + tmp + "'");
        os.write(kMagic, 4);
        put_u32(os, kVersion);
        put_str(os, ck.model_spec);
        put_str(os, ck.tag);
        put_u64(os, ck.epoch);
        put_str(os, ck.rng_state);
        put_f64(os, ck.train_nll);
        put_f64(os, ck.test_err);
        put_params(os, ck.params);
        put_params(os, ck.moments.m);
        put_params(os, ck.moments.v);
        put_u64(os, ck.moments.step);
        if (!os) throw std::runtime_error("checkpoint: write failed for '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("checkpoint: rename to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::invalid_argument("checkpoint: cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw std::invalid_argument("checkpoint: bad magic in '" + path + "'");
    if (get_u32(is) != kVersion) throw std::invalid_argument("checkpoint: unsupported version");
    Checkpoint ck;
    ck.model_spec = get_str(is);
    ck.tag = get_str(is);
    ck.epoch = get_u64(is);
    ck.rng_state = get_str(is);
    ck.train_nll = get_f64(is);
    ck.test_err = get_f64(is);
    ck.params = get_params(is);
    ck.moments.m = get_params(is);
    ck.moments.v = get_params(is);
    ck.moments.step = get_u64(is);
    if (!is) throw std::invalid_argument("checkpoint: truncated file '" + path + "'");
    return ck;
}

std::string metric_csv(const std::vector<MetricRow>& rows) {
    std::string out = "epoch,lr,train_nll,test_err\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.lr, r.train_nll, r.test_err);
        out += buf;
    }
    return out;
}

}  // namespace vitlab
