#include "vitlab/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>

#include "vitlab/featuremap.hpp"
#include "vitlab/fourier.hpp"
#include "vitlab/hessian.hpp"
#include "vitlab/oracle.hpp"
#include "vitlab/presets.hpp"
#include "vitlab/report.hpp"
#include "vitlab/rng.hpp"

namespace vitlab {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

Dataset synthetic_from_config(const Config& cfg, bool test_split) {
    const std::string kind = cfg.get_str("data.kind", "shapes");
    const SyntheticKind sk =
        kind == "frequency_textures" ? SyntheticKind::kFrequencyTextures : SyntheticKind::kShapes;
    const std::size_t n = static_cast<std::size_t>(
        cfg.get_int(test_split ? "data.test_n" : "data.n", test_split ? 256 : 768));
    const std::size_t extent = static_cast<std::size_t>(cfg.get_int("data.extent", 16));
    const std::size_t classes = static_cast<std::size_t>(cfg.get_int("data.classes", 4));
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("data.seed", 77)) + (test_split ? 1 : 0);
    Dataset ds = gen_synthetic(sk, n, extent, classes, seed);
    ds.split = test_split ? "test" : "train";
    return ds;
}

}  // namespace

Dataset dataset_from_config(const Config& cfg, bool test_split) {
    const std::string kind = cfg.get_str("data.kind", "shapes");
    if (kind == "cifar10") {
        const std::string path = cfg.require_str(test_split ? "data.test_path" : "data.path");
        const std::size_t limit = static_cast<std::size_t>(cfg.get_int("data.limit", 0));
        auto mean = cfg.get_doubles("data.norm_mean", {0.4914, 0.4822, 0.4465});
        auto stdv = cfg.get_doubles("data.norm_std", {0.2470, 0.2435, 0.2616});
        Dataset ds = load_cifar10_binary(path, limit, std::move(mean), std::move(stdv));
        ds.split = test_split ? "test" : "train";
        return ds;
    }
    if (kind == "shapes" || kind == "frequency_textures") return synthetic_from_config(cfg, test_split);
    throw std::invalid_argument("config: unknown data.kind '" + kind + "'");
}

ModelSpec spec_from_config(const Config& cfg) {
    PresetKnobs k;
    k.classes = static_cast<std::size_t>(cfg.get_int("data.classes", 4));
    k.in_channels = cfg.get_str("data.kind", "shapes") == "cifar10" ? 3 : 1;
    k.extent = static_cast<std::size_t>(cfg.get_int("data.extent", 16));
    if (cfg.get_str("data.kind", "shapes") == "cifar10") k.extent = 32;
    k.width = static_cast<std::size_t>(cfg.get_int("model.width", 0));
    k.depth = static_cast<std::size_t>(cfg.get_int("model.depth", 0));
    k.heads = static_cast<std::size_t>(cfg.get_int("model.heads", 0));
    k.patch = static_cast<std::size_t>(cfg.get_int("model.patch", 0));
    k.window = static_cast<int>(cfg.get_int("model.window", 0));
    if (cfg.has("model.head")) {
        k.head = cfg.get_str("model.head", "gap") == "cls" ? HeadMode::kCls : HeadMode::kGap;
        k.head_set = true;
    }
    k.bottleneck = cfg.get_bool("model.bottleneck", false);
    k.depths = cfg.get_sizes("model.depths", {});
    k.n_msa = static_cast<std::size_t>(cfg.get_int("model.n_msa", 0));
    k.heads_schedule = cfg.get_sizes("model.heads_schedule", {});
    return make_preset(cfg.get_str("model.preset", "tiny_vit"), k);
}

TrainConfig train_config_from_config(const Config& cfg) {
    TrainConfig t;
    t.lr_max = cfg.get_double("train.lr_max", 1.25e-4);
    t.weight_decay = cfg.get_double("train.weight_decay", 5e-2);
    t.epochs = static_cast<std::size_t>(cfg.get_int("train.epochs", 50));
    t.warmup_epochs = static_cast<std::size_t>(cfg.get_int("train.warmup_epochs", 5));
    t.batch_size = static_cast<std::size_t>(cfg.get_int("train.batch_size", 96));
    t.seed = static_cast<std::uint64_t>(cfg.get_int("run.seed", 0));
    t.label_smoothing = cfg.get_double("train.label_smoothing", 0.0);
    t.checkpoint_epochs = cfg.get_sizes("train.checkpoint_epochs", {});
    return t;
}

namespace {

int cmd_train(const Config& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const Dataset train_set = dataset_from_config(cfg, false);
    const Dataset test_set = dataset_from_config(cfg, true);
    const ModelSpec spec = spec_from_config(cfg);
    const TrainConfig tc = train_config_from_config(cfg);

    const TrainResult res = train(spec, tc, train_set, test_set);
    write_file_atomic(out_dir + "/metrics.csv", metric_csv(res.log));
    for (const auto& ck : res.checkpoints) save_checkpoint(ck, out_dir + "/ck_" + ck.tag + ".bin");

    json summary;
    summary["schema"] = "vitlab.train.v1";
    summary["seed"] = tc.seed;
    summary["epochs"] = tc.epochs;
    summary["preset"] = cfg.get_str("model.preset", "tiny_vit");
    summary["params"] = res.model.params.total_dim();
    if (!res.log.empty()) {
        summary["final_train_nll"] = res.log.back().train_nll;
        summary["final_test_err"] = res.log.back().test_err;
    }
    write_file_atomic(out_dir + "/run_summary.json", summary.dump(2) + "\n");
    std::cout << "train: wrote " << res.checkpoints.size() << " checkpoints and metrics.csv to " << out_dir
              << "\n";
    return 0;
}

std::string spectrum_csv(const std::vector<SpectrumRecord>& records) {
    CsvTable t;
    t.header = {"checkpoint", "batch", "rank", "eigenvalue", "residual", "iters"};
    for (const auto& r : records) {
        if (r.skipped) continue;
        for (std::size_t i = 0; i < r.eigenvalues.size(); ++i)
            t.add_row({r.checkpoint, std::to_string(r.batch_id), std::to_string(i),
                       fmt_double(r.eigenvalues[i]), fmt_double(r.residuals[i]), std::to_string(r.iters[i])});
    }
    return t.render();
}

int cmd_analyze(const Config& cfg, const std::string& ck_path, const std::string& only,
                const std::string& out_dir) {
    fs::create_directories(out_dir);
    const Checkpoint ck = load_checkpoint(ck_path);
    Model model;
    model.spec = ModelSpec::deserialize(ck.model_spec);
    model.params = ck.params;

    const Dataset train_set = dataset_from_config(cfg, false);
    const Dataset test_set = dataset_from_config(cfg, true);
    const std::size_t eval_bs = static_cast<std::size_t>(cfg.get_int("analysis.batch_size", 32));

    auto wants = [&](const std::string& name) {
        if (only.empty()) return true;
        std::stringstream ss(only);
        std::string item;
        while (std::getline(ss, item, ','))
            if (item == name || (name == "spectra" && (item == "nep" || item == "ape"))) return true;
        return false;
    };

    json summary;
    summary["schema"] = "vitlab.analysis.v1";
    summary["checkpoint"] = ck.tag;
    summary["epoch"] = ck.epoch;

    if (wants("spectra")) {
        SpectrumConfig sc;
        sc.batch_size = static_cast<std::size_t>(cfg.get_int("hessian.batch_size", 16));
        sc.k = static_cast<std::size_t>(cfg.get_int("hessian.k", 5));
        sc.sample_fraction = cfg.get_double("hessian.sample_fraction", 0.1);
        sc.max_iters = static_cast<std::size_t>(cfg.get_int("hessian.max_iters", 100));
        sc.tol = cfg.get_double("hessian.tol", 1e-3);
        sc.seed = static_cast<std::uint64_t>(cfg.get_int("run.seed", 0));
        sc.weight_decay = cfg.get_double("train.weight_decay", 5e-2);
        sc.checkpoint_tag = ck.tag;
        const auto records = spectrum(model, train_set, sc);
        write_file_atomic(out_dir + "/spectrum.csv", spectrum_csv(records));
        const auto eigs = collect_eigenvalues(records);
        summary["nep"] = nep(eigs);
        try {
            summary["ape"] = ape(eigs);
        } catch (const std::exception&) {
            summary["ape"] = nullptr;
        }
    }
    if (wants("fourier")) {
        const auto profiles = layerwise_fourier_report(model, test_set, eval_bs);
        CsvTable t;
        t.header = {"layer", "f", "logamp"};
        CsvTable d;
        d.header = {"layer", "kind", "stage", "delta_log_amplitude"};
        for (const auto& lp : profiles) {
            for (std::size_t i = 0; i < lp.profile.freqs.size(); ++i)
                t.add_row({lp.profile.layer, fmt_double(lp.profile.freqs[i]), fmt_double(lp.profile.logamp[i])});
            d.add_row({lp.profile.layer, block_kind_str(lp.kind), std::to_string(lp.stage),
                       fmt_double(lp.profile.delta_log_amplitude)});
        }
        write_file_atomic(out_dir + "/fourier.csv", t.render());
        write_file_atomic(out_dir + "/fourier_delta.csv", d.render());
        summary["fourier_convention"] = "corner_bin";
    }
    if (wants("variance")) {
        const auto prof = variance_profile(model, test_set, eval_bs);
        CsvTable t;
        t.header = {"layer", "variance"};
        for (const auto& e : prof) t.add_row({e.layer, fmt_double(e.variance)});
        write_file_atomic(out_dir + "/variance.csv", t.render());
        summary["variance_convention"] = "post_residual";
    }
    if (wants("cka")) {
        const auto m = cka_matrix(model, test_set, eval_bs);
        CsvTable t;
        t.header = {"layer_i", "layer_j", "cka"};
        for (std::size_t i = 0; i < m.layers.size(); ++i)
            for (std::size_t j = 0; j < m.layers.size(); ++j)
                t.add_row({m.layers[i], m.layers[j],
                           m.flagged[i * m.layers.size() + j] ? "nan" : fmt_double(m.at(i, j))});
        write_file_atomic(out_dir + "/cka.csv", t.render());
        summary["cka_estimator"] = "minibatch_unbiased_hsic_linear";
    }
    if (wants("lesion")) {
        const auto sweep = lesion_sweep(model, test_set, eval_bs);
        CsvTable t;
        t.header = {"unit", "acc_drop"};
        for (const auto& e : sweep) t.add_row({e.unit, fmt_double(e.acc_drop)});
        write_file_atomic(out_dir + "/lesion.csv", t.render());
    }
    if (wants("robustness")) {
        const std::size_t nbands = static_cast<std::size_t>(cfg.get_int("robustness.bands", 8));
        std::vector<double> centers(nbands);
        for (std::size_t i = 0; i < nbands; ++i)
            centers[i] = 3.14159265358979323846 * (i + 0.5) / static_cast<double>(nbands);
        const auto drops = frequency_robustness_sweep(
            model, test_set, centers, cfg.get_double("robustness.width", 0.1 * 3.14159265358979323846),
            cfg.get_double("robustness.magnitude", 1.0),
            static_cast<std::uint64_t>(cfg.get_int("run.seed", 0)), eval_bs);
        CsvTable t;
        t.header = {"band_center", "acc_drop"};
        for (const auto& b : drops) t.add_row({fmt_double(b.center), fmt_double(b.drop)});
        write_file_atomic(out_dir + "/robustness.csv", t.render());
    }
    if (wants("landscape")) {
        const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("run.seed", 0));
        const ParamVector d1 = filter_normalized_direction(model.params, seed + 11);
        const ParamVector d2 = filter_normalized_direction(model.params, seed + 12);
        const double span = cfg.get_double("landscape.span", 1.0);
        const std::size_t steps = static_cast<std::size_t>(cfg.get_int("landscape.steps", 5));
        std::vector<double> axis;
        for (std::size_t i = 0; i < steps; ++i)
            axis.push_back(span * (2.0 * static_cast<double>(i) / static_cast<double>(steps - 1) - 1.0));
        axis[steps / 2] = 0.0;
        const std::size_t limit = static_cast<std::size_t>(cfg.get_int("landscape.samples", 0));
        const Dataset subset = limit > 0 && limit < train_set.size() ? train_set.subset(0, limit) : train_set;
        const auto grid =
            loss_surface(model, subset, d1, d2, axis, axis, cfg.get_double("train.weight_decay", 5e-2), eval_bs);
        CsvTable t;
        t.header = {"alpha\\beta"};
        for (double b : grid.betas) t.header.push_back(fmt_double(b));
        for (std::size_t i = 0; i < grid.alphas.size(); ++i) {
            std::vector<std::string> row = {fmt_double(grid.alphas[i])};
            for (std::size_t j = 0; j < grid.betas.size(); ++j) row.push_back(fmt_double(grid.losses[i][j]));
            t.add_row(std::move(row));
        }
        write_file_atomic(out_dir + "/landscape.csv", t.render());
    }
    if (wants("reliability")) {
        const std::size_t bins = static_cast<std::size_t>(cfg.get_int("reliability.bins", 10));
        const auto rel = reliability_diagram(model, test_set, bins, eval_bs);
        CsvTable t;
        t.header = {"bin", "conf", "acc", "count"};
        for (std::size_t i = 0; i < rel.bins.size(); ++i)
            t.add_row({std::to_string(i), fmt_double(rel.bins[i].confidence), fmt_double(rel.bins[i].accuracy),
                       std::to_string(rel.bins[i].count)});
        write_file_atomic(out_dir + "/reliability.csv", t.render());
        summary["ece"] = rel.ece;
    }

    write_file_atomic(out_dir + "/summary.json", summary.dump(2) + "\n");
    std::cout << "analyze: wrote artifacts to " << out_dir << "\n";
    return 0;
}

int cmd_report(const std::string& out_dir) {
    std::size_t made = 0;
    auto exists = [&](const std::string& name) { return fs::exists(out_dir + "/" + name); };
    if (exists("metrics.csv")) {
        const CsvTable t = CsvTable::parse(read_file(out_dir + "/metrics.csv"));
        SvgSeries nll{"train_nll", {}, {}}, err{"test_err", {}, {}};
        for (const auto& r : t.rows) {
            nll.x.push_back(std::stod(r[0]));
            nll.y.push_back(std::stod(r[2]));
            err.x.push_back(std::stod(r[0]));
            err.y.push_back(std::stod(r[3]));
        }
        write_file_atomic(out_dir + "/metrics.svg", svg_line_chart("training curves", {nll, err}));
        ++made;
    }
    if (exists("fourier_delta.csv")) {
        const CsvTable t = CsvTable::parse(read_file(out_dir + "/fourier_delta.csv"));
        SvgSeries s{"delta_log_amplitude", {}, {}};
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            s.x.push_back(static_cast<double>(i));
            s.y.push_back(std::stod(t.rows[i][3]));
        }
        write_file_atomic(out_dir + "/fourier_delta.svg", svg_line_chart("delta log amplitude per block", {s}));
        ++made;
    }
    if (exists("variance.csv")) {
        const CsvTable t = CsvTable::parse(read_file(out_dir + "/variance.csv"));
        SvgSeries s{"variance", {}, {}};
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            s.x.push_back(static_cast<double>(i));
            s.y.push_back(std::stod(t.rows[i][1]));
        }
        write_file_atomic(out_dir + "/variance.svg", svg_line_chart("feature map variance per block", {s}));
        ++made;
    }
    if (exists("robustness.csv")) {
        const CsvTable t = CsvTable::parse(read_file(out_dir + "/robustness.csv"));
        SvgSeries s{"acc_drop", {}, {}};
        for (const auto& r : t.rows) {
            s.x.push_back(std::stod(r[0]));
            s.y.push_back(std::stod(r[1]));
        }
        write_file_atomic(out_dir + "/robustness.svg", svg_line_chart("accuracy drop per frequency band", {s}));
        ++made;
    }
    if (exists("cka.csv")) {
        const CsvTable t = CsvTable::parse(read_file(out_dir + "/cka.csv"));
        std::vector<std::string> layers;
        for (const auto& r : t.rows)
            if (layers.empty() || r[0] != layers[0])
                if (std::find(layers.begin(), layers.end(), r[0]) == layers.end()) layers.push_back(r[0]);
        const std::size_t n = layers.size();
        std::vector<double> vals(n * n, 0.0);
        for (const auto& r : t.rows) {
            const auto i = std::find(layers.begin(), layers.end(), r[0]) - layers.begin();
            const auto j = std::find(layers.begin(), layers.end(), r[1]) - layers.begin();
            vals[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)] =
                r[2] == "nan" ? 0.0 : std::stod(r[2]);
        }
        write_file_atomic(out_dir + "/cka.svg", svg_heatmap("mini-batch CKA", layers, vals));
        ++made;
    }
    if (exists("landscape.csv")) {
        const CsvTable t = CsvTable::parse(read_file(out_dir + "/landscape.csv"));
        const std::size_t n = t.rows.size();
        std::vector<std::string> labels(n);
        std::vector<double> vals(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = t.rows[i][0];
            for (std::size_t j = 0; j < n; ++j) {
                const double v = std::stod(t.rows[i][j + 1]);
                vals[i * n + j] = std::isfinite(v) ? v : 0.0;
            }
        }
        write_file_atomic(out_dir + "/landscape.svg", svg_heatmap("loss landscape", labels, vals));
        ++made;
    }
    std::cout << "report: rendered " << made << " plots in " << out_dir << "\n";
    return made > 0 ? 0 : 1;
}

}  // namespace

bool run_selftest(std::ostream& os) {
    bool all = true;
    auto report = [&](const char* name, bool ok) {
        os << (ok ? "[pass] " : "[FAIL] ") << name << "\n";
        all = all && ok;
    };

    {  // finite-difference gradient oracle on a tiny MLP closure
        Rng rng(17);
        ParamVector theta;
        theta.segments.push_back({"w", rng.gaussian_tensor({4, 3}), ParamKind::kLinear, true});
        theta.segments.push_back({"b", rng.gaussian_tensor({3}), ParamKind::kVector, false});
        const Tensor x = rng.gaussian_tensor({2, 4});
        LossClosure f = [&x](Tape& t, const ParamVector& th) {
            auto leaves = bind_params(t, th);
            Var h = t.gelu(t.add(t.matmul(t.constant(x), leaves[0]), leaves[1]));
            return std::make_pair(t.sum_all(t.mul(h, h)), leaves);
        };
        const auto g = closure_grad(f, theta).flatten();
        bool ok = true;
        for (std::size_t i = 0; i < theta.total_dim(); ++i) {
            const double fd = oracle::fd_partial(f, theta, i, 1e-5);
            ok = ok && std::fabs(g[i] - fd) <= 1e-4 * std::max({std::fabs(g[i]), std::fabs(fd), 1e-8});
        }
        report("finite-difference gradients", ok);

        ParamVector v = theta.zeros_like();
        Rng r2(19);
        for (auto& seg : v.segments)
            for (double& q : seg.value.data) q = r2.gaussian();
        const auto hv = closure_hvp(f, theta, v).flatten();
        const auto fd = oracle::fd_hvp(f, theta, v, 1e-4).flatten();
        double num = 0, den = 0;
        for (std::size_t i = 0; i < hv.size(); ++i) {
            num += (hv[i] - fd[i]) * (hv[i] - fd[i]);
            den += fd[i] * fd[i];
        }
        report("finite-difference hvp", std::sqrt(num) <= 1e-4 * std::max(1.0, std::sqrt(den)));

        const auto h = oracle::dense_hessian(f, theta, 1e-5);
        const auto dense = oracle::symmetric_eigenvalues(h, theta.total_dim());
        PowerIterConfig pc;
        pc.k = 3;
        pc.seed = 5;
        const auto pairs = top_k_eigs(f, theta, pc);
        std::vector<double> by_mag = dense;
        std::sort(by_mag.begin(), by_mag.end(), [](double a, double b) { return std::fabs(a) > std::fabs(b); });
        bool okp = true;
        for (std::size_t i = 0; i < pc.k; ++i)
            okp = okp && std::fabs(pairs[i].value - by_mag[i]) <= 1e-3 * std::max(1e-6, std::fabs(by_mag[i]));
        report("dense hessian vs power iteration", okp);
    }
    {  // naive DFT vs fft2 and Parseval
        Rng rng(23);
        const Tensor m = rng.gaussian_tensor({16, 16});
        const auto s = fourier::fft2(m);
        const auto want = oracle::naive_dft2_centered(m);
        double err = 0.0, e_space = 0.0, e_freq = 0.0;
        for (std::size_t i = 0; i < want.size(); ++i) {
            err = std::max(err, std::abs(s.bins[i] - want[i]));
            e_freq += std::norm(s.bins[i]);
        }
        for (double v : m.data) e_space += v * v;
        const bool parseval = std::fabs(e_space - e_freq / static_cast<double>(m.numel())) <= 1e-9 * e_space;
        report("naive DFT vs fft2", err <= 1e-9);
        report("Parseval identity", parseval);
    }
    {  // naive CKA
        Rng rng(29);
        const Tensor x = rng.gaussian_tensor({12, 5});
        const Tensor y = rng.gaussian_tensor({12, 7});
        const double got = linear_cka(x, y);
        const double want = oracle::naive_linear_cka(x, y);
        report("naive CKA vs linear_cka", std::fabs(got - want) <= 1e-9);
    }
    {  // attention neighborhood enumerator
        const auto got = local_attention_sets(8, 8, WindowSpec::local_conv(3));
        const auto want = oracle::neighborhood_sets(8, 8, 3);
        bool ok = got.size() == want.size();
        for (std::size_t i = 0; ok && i < got.size(); ++i) {
            auto a = got[i];
            auto b = want[i];
            std::sort(a.begin(), a.end());
            std::sort(b.begin(), b.end());
            ok = a == b;
        }
        report("attention neighborhood enumeration", ok);
    }
    return all;
}

int run_cli(int argc, const char** argv) {
    CLI::App app{"conv/attention analysis lab"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", ck_path, only;
    long long seed_override = -1;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* opt = cmd->add_option("--config", config_path, "run configuration file");
        if (needs_config) opt->required();
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed_override, "override run.seed");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train a model per config");
    add_common(train_cmd, true);
    CLI::App* analyze_cmd = app.add_subcommand("analyze", "run analyses on a checkpoint");
    add_common(analyze_cmd, true);
    analyze_cmd->add_option("--checkpoint", ck_path, "checkpoint file")->required();
    analyze_cmd->add_option("--only", only, "comma-separated analysis subset");
    CLI::App* report_cmd = app.add_subcommand("report", "render SVG plots from prior CSVs");
    report_cmd->add_option("--out", out_dir, "directory holding analysis CSVs");
    CLI::App* selftest_cmd = app.add_subcommand("selftest", "run the oracle suites");
    (void)selftest_cmd;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (app.got_subcommand("selftest")) {
            const bool ok = run_selftest(std::cout);
            std::cout << (ok ? "selftest: all oracle suites passed\n" : "selftest: FAILURES\n");
            return ok ? 0 : 1;
        }
        Config cfg;
        if (!config_path.empty()) cfg = Config::load(config_path);
        if (seed_override >= 0) cfg.set("run.seed", std::to_string(seed_override));
        if (app.got_subcommand("train")) return cmd_train(cfg, out_dir);
        if (app.got_subcommand("analyze")) return cmd_analyze(cfg, ck_path, only, out_dir);
        if (app.got_subcommand("report")) return cmd_report(out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace vitlab
