#include <doctest.h>

#include <cmath>

#include "vitlab/blocks.hpp"
#include "vitlab/featuremap.hpp"
#include "vitlab/oracle.hpp"
#include "vitlab/presets.hpp"
#include "vitlab/rng.hpp"
#include "vitlab/trainer.hpp"

using namespace vitlab;

namespace {

Dataset noise_set(std::size_t n, std::size_t extent, std::uint64_t seed) {
    Rng rng(seed);
    Dataset ds;
    ds.class_count = 2;
    for (std::size_t i = 0; i < n; ++i) {
        ds.images.push_back(rng.gaussian_tensor({1, extent, extent}));
        ds.labels.push_back(i % 2);
    }
    return ds;
}

ModelSpec blur_spec(std::size_t extent, int k) {
    ModelSpec spec;
    spec.in_channels = 1;
    spec.image_extent = extent;
    spec.classes = 2;
    spec.patch = 1;
    spec.stem.kind = BlockKind::kPatchEmbed;  // 1x1 patches keep pixels iid per channel
    spec.stem.width = 2;
    StageSpec st;
    BlockSpec blur;
    blur.kind = BlockKind::kBoxBlur;
    blur.width = 2;
    blur.blur = k;
    st.blocks.push_back(blur);
    spec.stages.push_back(st);
    return spec;
}

}  // namespace

TEST_CASE("variance_profile: constant maps give zero variance") {
    ModelSpec spec = blur_spec(8, 1);
    Model m = build_model(spec, 3);
    Dataset ds;
    ds.class_count = 2;
    for (int i = 0; i < 4; ++i) {
        ds.images.push_back(Tensor::full({1, 8, 8}, 1.25));
        ds.labels.push_back(i % 2);
    }
    const auto prof = variance_profile(m, ds, 4);
    for (const auto& e : prof) CHECK(e.variance <= 1e-20);
}

TEST_CASE("variance_profile: k=2 box blur cuts iid variance to ~1/4") {
    ModelSpec spec = blur_spec(32, 2);
    const Model m = build_model(spec, 5);
    const Dataset ds = noise_set(24, 32, 7);
    const auto prof = variance_profile(m, ds, 8);
    REQUIRE(prof.size() == 2);  // stem tokens, blur output
    const double ratio = prof[1].variance / prof[0].variance;
    CHECK(ratio == doctest::Approx(0.25).epsilon(0.10));
}

TEST_CASE("variance_profile: zero-logit global attention collapses spatial variance") {
    Rng rng(9);
    const std::size_t g = 6, d = 3;
    AttentionParams p;
    p.heads = 1;
    p.head_dim = d;
    p.window = WindowSpec::global();
    p.wq = Tensor::zeros({d, d});
    p.wk = Tensor::zeros({d, d});
    p.wv = Tensor::identity(d);
    p.wo = Tensor::identity(d);
    Tape t;
    const Tensor out = t.val(msa_forward(t, t.constant(rng.gaussian_tensor({g * g, d})), p, g, g));
    // uniform attention maps every token to the same mean, bit for bit
    for (std::size_t i = 1; i < g * g; ++i)
        for (std::size_t c = 0; c < d; ++c) CHECK(out.data[i * d + c] == out.data[c]);
}

TEST_CASE("variance_profile: invariant under spatial permutation of activations") {
    // variance over positions ignores order: permute the dataset images' pixels
    // identically and the stem (1x1 patch embed) variance is unchanged
    ModelSpec spec = blur_spec(8, 1);
    const Model m = build_model(spec, 11);
    Dataset ds = noise_set(6, 8, 13);
    const auto before = variance_profile(m, ds, 6);
    Rng rng(15);
    std::vector<std::size_t> perm(64);
    for (std::size_t i = 0; i < 64; ++i) perm[i] = i;
    rng.shuffle(perm);
    for (auto& img : ds.images) {
        Tensor shuffled = img;
        for (std::size_t i = 0; i < 64; ++i) shuffled.data[perm[i]] = img.data[i];
        img = shuffled;
    }
    const auto after = variance_profile(m, ds, 6);
    CHECK(after[0].variance == doctest::Approx(before[0].variance).epsilon(1e-12));
}

TEST_CASE("linear_cka: self-similarity, invariances, naive oracle") {
    Rng rng(21);
    const Tensor x = rng.gaussian_tensor({32, 6});
    CHECK(linear_cka(x, x) == doctest::Approx(1.0).epsilon(1e-12));

    SUBCASE("isotropic scaling and orthogonal rotation leave CKA at 1") {
        // Gram-Schmidt a random 6x6 into an orthogonal Q
        Tensor q = rng.gaussian_tensor({6, 6});
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = 0; j < i; ++j) {
                double dot = 0.0;
                for (std::size_t k = 0; k < 6; ++k) dot += q.data[i * 6 + k] * q.data[j * 6 + k];
                for (std::size_t k = 0; k < 6; ++k) q.data[i * 6 + k] -= dot * q.data[j * 6 + k];
            }
            double n = 0.0;
            for (std::size_t k = 0; k < 6; ++k) n += q.data[i * 6 + k] * q.data[i * 6 + k];
            n = std::sqrt(n);
            for (std::size_t k = 0; k < 6; ++k) q.data[i * 6 + k] /= n;
        }
        Tensor y({32, 6});
        const double c = 2.7;
        for (std::size_t i = 0; i < 32; ++i)
            for (std::size_t j = 0; j < 6; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < 6; ++k) acc += x.data[i * 6 + k] * q.data[k * 6 + j];
                y.data[i * 6 + j] = c * acc;
            }
        CHECK(linear_cka(x, y) == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("random pair matches the naive centered-Gram HSIC oracle") {
        const Tensor y = rng.gaussian_tensor({32, 9});
        CHECK(linear_cka(x, y) == doctest::Approx(oracle::naive_linear_cka(x, y)).epsilon(1e-9));
        CHECK(linear_cka(x, y) == doctest::Approx(linear_cka(y, x)).epsilon(1e-9));  // symmetry
        CHECK(linear_cka(x, y) >= 0.0);
        CHECK(linear_cka(x, y) <= 1.0);
    }
    SUBCASE("zero-variance input rejected") {
        const Tensor z = Tensor::zeros({32, 4});
        CHECK_THROWS_AS(linear_cka(x, z), std::invalid_argument);
    }
}

TEST_CASE("cka_matrix: degenerate depth and identical representations") {
    SUBCASE("single recorded layer gives [[1]]") {
        ModelSpec spec;
        spec.in_channels = 1;
        spec.image_extent = 8;
        spec.classes = 2;
        spec.stem.kind = BlockKind::kConvBasic;
        spec.stem.width = 3;
        const Model m = build_model(spec, 3);
        const auto cka = cka_matrix(m, noise_set(16, 8, 5), 8);
        REQUIRE(cka.layers.size() == 1);
        CHECK(cka.at(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("identical blocks produce off-diagonal similarity 1") {
        ModelSpec spec = blur_spec(8, 1);
        spec.stages[0].blocks.push_back(spec.stages[0].blocks[0]);  // two identity blocks
        const Model m = build_model(spec, 7);
        const auto cka = cka_matrix(m, noise_set(16, 8, 9), 8);
        REQUIRE(cka.layers.size() == 3);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) CHECK(cka.at(i, j) == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("diagonal is one and the matrix is symmetric") {
        ModelSpec spec = blur_spec(8, 2);
        const Model m = build_model(spec, 11);
        const auto cka = cka_matrix(m, noise_set(20, 8, 13), 10);
        for (std::size_t i = 0; i < cka.layers.size(); ++i) {
            CHECK(cka.at(i, i) == doctest::Approx(1.0).epsilon(1e-9));
            for (std::size_t j = 0; j < cka.layers.size(); ++j)
                CHECK(cka.at(i, j) == doctest::Approx(cka.at(j, i)).epsilon(1e-9));
        }
    }
    SUBCASE("fewer than two batches rejected") {
        ModelSpec spec = blur_spec(8, 1);
        const Model m = build_model(spec, 13);
        CHECK_THROWS_AS(cka_matrix(m, noise_set(8, 8, 15), 8), std::invalid_argument);
    }
}

TEST_CASE("unbiased_hsic: agrees with direct summation on a small case") {
    Rng rng(31);
    const std::size_t n = 8;
    const Tensor x = rng.gaussian_tensor({n, 3});
    const Tensor y = rng.gaussian_tensor({n, 4});
    auto gram = [n](const Tensor& m) {
        std::vector<double> g(n * n, 0.0);
        const std::size_t p = m.shape[1];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t k = 0; k < p; ++k) g[i * n + j] += m.data[i * p + k] * m.data[j * p + k];
        return g;
    };
    const auto kx = gram(x), ky = gram(y);
    // direct evaluation of the three-term estimator with zeroed diagonals
    std::vector<double> kt = kx, lt = ky;
    for (std::size_t i = 0; i < n; ++i) kt[i * n + i] = lt[i * n + i] = 0.0;
    double tr = 0.0, sk = 0.0, sl = 0.0, skl = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            tr += kt[i * n + j] * lt[i * n + j];
            sk += kt[i * n + j];
            sl += lt[i * n + j];
        }
    for (std::size_t i = 0; i < n; ++i) {
        double rk = 0.0, rl = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            rk += kt[i * n + j];
            rl += lt[i * n + j];
        }
        skl += rk * rl;
    }
    const double want =
        (tr + sk * sl / ((n - 1.0) * (n - 2.0)) - 2.0 / (n - 2.0) * skl) / (n * (n - 3.0));
    CHECK(unbiased_hsic(kx, ky, n) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("lesion_sweep: zero branch, restoration, rejection") {
    PresetKnobs k;
    k.classes = 2;
    k.in_channels = 1;
    k.extent = 8;
    k.width = 4;
    k.depths = {1, 1};
    ModelSpec spec = make_preset("tiny_resnet", k);
    Model m = build_model(spec, 17);
    // kill the branch of s1.b0
    for (auto& seg : m.params.segments)
        if (seg.name.rfind("s1.b0.conv2", 0) == 0)
            for (double& v : seg.value.data) v = 0.0;
    const Dataset ds = noise_set(12, 8, 19);

    const ParamVector before = m.params;
    const auto sweep = lesion_sweep(m, ds, 6);
    CHECK(m.params.same_bits(before));  // untouched after the sweep
    REQUIRE(sweep.size() == 2);
    CHECK(sweep[0].unit == "s1.b0");
    CHECK(sweep[0].acc_drop == 0.0);  // branch already produced zeros

    const double clean = 1.0 - evaluate(m, ds, 6).error;
    const double again = 1.0 - evaluate(m, ds, 6).error;
    CHECK(clean == again);  // model unchanged by repeated evaluation

    CHECK_THROWS_AS(lesion_sweep(m, ds, 6, {"s1.sub"}), std::invalid_argument);
    CHECK_THROWS_AS(lesion_sweep(m, ds, 6, {"nonsense"}), std::invalid_argument);
}

TEST_CASE("reliability: oracle calibration, total miscalibration, recompute oracle") {
    SUBCASE("confidence == accuracy in every bin -> ECE 0") {
        // two-class logits with confidence exactly 0.75; make 3 of 4 correct
        const double logit = std::log(3.0);  // sigmoid -> 0.75
        Tensor logits({4, 2});
        for (std::size_t i = 0; i < 4; ++i) {
            logits.data[i * 2] = logit;
            logits.data[i * 2 + 1] = 0.0;
        }
        const std::vector<std::size_t> labels = {0, 0, 0, 1};
        const auto rel = reliability_from_logits(logits, labels, 10);
        CHECK(rel.ece == doctest::Approx(0.0).epsilon(1e-12));
        std::size_t total = 0;
        for (const auto& b : rel.bins) total += b.count;
        CHECK(total == 4);
    }
    SUBCASE("always wrong at full confidence -> ECE 1") {
        Tensor logits({3, 2});
        for (std::size_t i = 0; i < 3; ++i) {
            logits.data[i * 2] = 1000.0;
            logits.data[i * 2 + 1] = 0.0;
        }
        const std::vector<std::size_t> labels = {1, 1, 1};
        const auto rel = reliability_from_logits(logits, labels, 10);
        CHECK(rel.ece == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("random logits match a direct recomputation") {
        Rng rng(41);
        const std::size_t n = 40, bins = 7;
        Tensor logits = rng.gaussian_tensor({n, 2}, 2.0);
        std::vector<std::size_t> labels(n);
        for (auto& l : labels) l = rng.below(2);
        const auto rel = reliability_from_logits(logits, labels, bins);

        std::vector<double> conf(n);
        std::vector<bool> correct(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double a = logits.data[i * 2], b = logits.data[i * 2 + 1];
            const double mx = std::max(a, b);
            const double pa = std::exp(a - mx) / (std::exp(a - mx) + std::exp(b - mx));
            conf[i] = std::max(pa, 1.0 - pa);
            correct[i] = (a >= b ? 0u : 1u) == labels[i];
            if (a == b) correct[i] = labels[i] == 0;  // first-listed argmax
        }
        double ece = 0.0;
        for (std::size_t b = 0; b < bins; ++b) {
            double cs = 0.0, as = 0.0;
            std::size_t cnt = 0;
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t bi = static_cast<std::size_t>(conf[i] * bins);
                if (bi >= bins) bi = bins - 1;
                if (bi != b) continue;
                cs += conf[i];
                as += correct[i] ? 1.0 : 0.0;
                ++cnt;
            }
            if (cnt) ece += static_cast<double>(cnt) / n * std::fabs(as / cnt - cs / cnt);
        }
        CHECK(rel.ece == doctest::Approx(ece).epsilon(1e-12));
        CHECK(rel.ece >= 0.0);
        CHECK(rel.ece <= 1.0);
    }
}
