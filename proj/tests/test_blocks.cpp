#include <doctest.h>

#include <cmath>

#include "vitlab/blocks.hpp"
#include "vitlab/oracle.hpp"
#include "vitlab/rng.hpp"

using namespace vitlab;

namespace {

AttentionParams make_attn(std::size_t heads, std::size_t head_dim, WindowSpec win, Rng& rng, double scale = 0.3) {
    AttentionParams p;
    p.heads = heads;
    p.head_dim = head_dim;
    p.window = win;
    const std::size_t d = heads * head_dim;
    p.wq = rng.gaussian_tensor({d, d}, scale);
    p.wk = rng.gaussian_tensor({d, d}, scale);
    p.wv = rng.gaussian_tensor({d, d}, scale);
    p.wo = rng.gaussian_tensor({d, d}, scale);
    return p;
}

}  // namespace

TEST_CASE("softmax: symmetric, analytic and naive-oracle cases") {
    Tape t;
    Var a = t.softmax(t.constant(Tensor({2}, {0.0, 0.0})), 0);
    CHECK(t.val(a).data[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(t.val(a).data[1] == doctest::Approx(0.5).epsilon(1e-15));

    Var b = t.softmax(t.constant(Tensor({2}, {std::log(2.0), 0.0})), 0);
    CHECK(t.val(b).data[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(t.val(b).data[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

    Rng rng(3);
    Tensor x = rng.gaussian_tensor({7}, 2.0);
    Var y = t.softmax(t.constant(x), 0);
    double den = 0.0;
    for (double v : x.data) den += std::exp(v);
    for (std::size_t i = 0; i < 7; ++i)
        CHECK(t.val(y).data[i] == doctest::Approx(std::exp(x.data[i]) / den).epsilon(1e-12));
}

TEST_CASE("msa: single token with identity value/output projection") {
    Rng rng(5);
    AttentionParams p = make_attn(1, 3, WindowSpec::global(), rng);
    p.wv = Tensor::identity(3);
    p.wo = Tensor::identity(3);
    Tape t;
    Tensor x = rng.gaussian_tensor({1, 3});
    Var y = msa_forward(t, t.constant(x), p, 1, 1);
    // one token: its attention weight is exactly 1
    CHECK(t.val(y).same_bits(x));
}

TEST_CASE("msa: zero logits give uniform attention == window mean, bit for bit") {
    Rng rng(7);
    const std::size_t gh = 5, gw = 4, d = 3;
    Tensor x = rng.gaussian_tensor({gh * gw, d});

    auto uniform_params = [&](WindowSpec win) {
        AttentionParams p;
        p.heads = 1;
        p.head_dim = d;
        p.window = win;
        p.wq = Tensor::zeros({d, d});
        p.wk = Tensor::zeros({d, d});
        p.wv = Tensor::identity(d);
        p.wo = Tensor::identity(d);
        return p;
    };

    SUBCASE("global: every output equals the grid mean") {
        Tape t;
        Var y = msa_forward(t, t.constant(x), uniform_params(WindowSpec::global()), gh, gw);
        // reference: multiply by the uniform weight then accumulate in token order
        const double r = 1.0 / static_cast<double>(gh * gw);
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < gh * gw; ++i) acc += r * x.data[i * d + j];
            for (std::size_t q = 0; q < gh * gw; ++q) CHECK(t.val(y).data[q * d + j] == acc);
        }
    }
    SUBCASE("convolutional 3x3: equals box_blur(3) exactly") {
        Tape t;
        Var y = msa_forward(t, t.constant(x), uniform_params(WindowSpec::local_conv(3)), gh, gw);
        Var map = tokens_to_map(t, t.reshape(t.constant(x), {1, gh * gw, d}), gh, gw);
        Var blurred = map_to_tokens(t, t.box_blur(map, 3));
        const Tensor want = t.val(t.reshape(blurred, {gh * gw, d}));
        CHECK(t.val(y).same_bits(want));
    }
    SUBCASE("partition 2x2: every output equals its tile mean") {
        Tape t;
        const std::size_t gh2 = 4, gw2 = 4;
        Tensor x2 = rng.gaussian_tensor({gh2 * gw2, d});
        Var y = msa_forward(t, t.constant(x2), uniform_params(WindowSpec::partition(2)), gh2, gw2);
        const auto sets = local_attention_sets(gh2, gw2, WindowSpec::partition(2));
        for (std::size_t q = 0; q < sets.size(); ++q) {
            const double r = 1.0 / static_cast<double>(sets[q].size());
            for (std::size_t j = 0; j < d; ++j) {
                double acc = 0.0;
                for (std::size_t i : sets[q]) acc += r * x2.data[i * d + j];
                CHECK(t.val(y).data[q * d + j] == acc);
            }
        }
    }
}

TEST_CASE("msa: 2x2 grid matches a hand-rolled attention loop oracle") {
    Rng rng(11);
    const std::size_t n = 4, d = 3;
    AttentionParams p = make_attn(1, d, WindowSpec::global(), rng);
    Tensor x = rng.gaussian_tensor({n, d});
    Tape t;
    Var y = msa_forward(t, t.constant(x), p, 2, 2);

    // direct computation: z_j = sum_i softmax(q_j k_i / sqrt(d))_i v_i, then W_o
    auto matvec = [&](const Tensor& w, const double* v, double* out) {
        for (std::size_t j = 0; j < d; ++j) {
            out[j] = 0.0;
            for (std::size_t i = 0; i < d; ++i) out[j] += v[i] * w.data[i * d + j];
        }
    };
    std::vector<double> q(n * d), k(n * d), v(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        matvec(p.wq, x.data.data() + i * d, q.data() + i * d);
        matvec(p.wk, x.data.data() + i * d, k.data() + i * d);
        matvec(p.wv, x.data.data() + i * d, v.data() + i * d);
    }
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> logits(n);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) acc += q[j * d + c] * k[i * d + c];
            logits[i] = acc / std::sqrt(static_cast<double>(d));
        }
        double mx = *std::max_element(logits.begin(), logits.end());
        double den = 0.0;
        for (double& l : logits) {
            l = std::exp(l - mx);
            den += l;
        }
        std::vector<double> z(d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) z[c] += logits[i] / den * v[i * d + c];
        std::vector<double> out(d);
        matvec(p.wo, z.data(), out.data());
        for (std::size_t c = 0; c < d; ++c) CHECK(t.val(y).data[j * d + c] == doctest::Approx(out[c]).epsilon(1e-10));
    }
}

TEST_CASE("msa: out-of-window tokens cannot perturb local outputs (exact)") {
    Rng rng(13);
    const std::size_t gh = 6, gw = 6, d = 4;
    AttentionParams p = make_attn(2, 2, WindowSpec::local_conv(3), rng);
    Tensor x = rng.gaussian_tensor({gh * gw, d});
    Tape t1;
    const Tensor y1 = t1.val(msa_forward(t1, t1.constant(x), p, gh, gw));

    // perturb a token far away from query (0,0): token (5,5)
    Tensor x2 = x;
    for (std::size_t c = 0; c < d; ++c) x2.data[(5 * gw + 5) * d + c] += 17.0;
    Tape t2;
    const Tensor y2 = t2.val(msa_forward(t2, t2.constant(x2), p, gh, gw));
    const auto sets = local_attention_sets(gh, gw, WindowSpec::local_conv(3));
    for (std::size_t q = 0; q < sets.size(); ++q) {
        const bool affected = std::find(sets[q].begin(), sets[q].end(), 5 * gw + 5) != sets[q].end();
        if (affected) continue;
        for (std::size_t c = 0; c < d; ++c) {
            CHECK(y1.data[q * d + c] == y2.data[q * d + c]);
        }
    }
}

TEST_CASE("msa: permutation equivariance for global attention") {
    Rng rng(17);
    const std::size_t n = 9, d = 4;
    AttentionParams p = make_attn(2, 2, WindowSpec::global(), rng);
    Tensor x = rng.gaussian_tensor({n, d});
    // 90-degree rotation of the 3x3 grid = a permutation mapping attention sets onto attention sets
    std::vector<std::size_t> perm(n);
    for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t xx = 0; xx < 3; ++xx) perm[y * 3 + xx] = xx * 3 + (2 - y);
    Tensor xp({n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) xp.data[perm[i] * d + c] = x.data[i * d + c];

    Tape ta, tb;
    const Tensor y = ta.val(msa_forward(ta, ta.constant(x), p, 3, 3));
    const Tensor yp = tb.val(msa_forward(tb, tb.constant(xp), p, 3, 3));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) {
            const double a = y.data[i * d + c], b = yp.data[perm[i] * d + c];
            CHECK(std::fabs(a - b) <= 1e-12 * std::max({std::fabs(a), std::fabs(b), 1.0}));
        }

    // reassociation-free case: uniform attention over 4 dyadic tokens is exactly equivariant
    AttentionParams u = p;
    u.heads = 1;
    u.head_dim = d;
    u.wq = Tensor::zeros({d, d});
    u.wk = Tensor::zeros({d, d});
    u.wv = Tensor::identity(d);
    u.wo = Tensor::identity(d);
    Tensor xd({4, d});
    for (std::size_t i = 0; i < xd.numel(); ++i) xd.data[i] = (static_cast<double>(i % 7) - 3.0) * 0.25;
    Tensor xdp({4, d});
    const std::size_t perm4[4] = {3, 2, 1, 0};
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < d; ++c) xdp.data[perm4[i] * d + c] = xd.data[i * d + c];
    Tape tc, td;
    const Tensor yu = tc.val(msa_forward(tc, tc.constant(xd), u, 2, 2));
    const Tensor yup = td.val(msa_forward(td, td.constant(xdp), u, 2, 2));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < d; ++c) CHECK(yu.data[i * d + c] == yup.data[perm4[i] * d + c]);
}

TEST_CASE("attention rows are probability distributions in every window mode") {
    Rng rng(19);
    const std::size_t gh = 4, gw = 4, n = gh * gw;
    for (WindowSpec win : {WindowSpec::global(), WindowSpec::local_conv(3), WindowSpec::partition(2)}) {
        Tensor logits = rng.gaussian_tensor({n, n}, 3.0);
        Tape t;
        Var masked = t.add(t.constant(logits), t.constant(attention_mask(gh, gw, win)));
        const Tensor att = t.val(t.softmax(masked, 1));
        const auto sets = local_attention_sets(gh, gw, win);
        for (std::size_t q = 0; q < n; ++q) {
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                CHECK(att.data[q * n + j] >= 0.0);
                sum += att.data[q * n + j];
                const bool in_set = std::find(sets[q].begin(), sets[q].end(), j) != sets[q].end();
                if (!in_set) CHECK(att.data[q * n + j] == 0.0);
            }
            CHECK(std::fabs(sum - 1.0) <= 1e-10);
        }
    }
}

TEST_CASE("local_attention_sets: trivial grid, paper's global count, and enumerator oracle") {
    for (WindowSpec win : {WindowSpec::global(), WindowSpec::local_conv(1), WindowSpec::partition(1)}) {
        const auto sets = local_attention_sets(1, 1, win);
        REQUIRE(sets.size() == 1);
        CHECK(sets[0] == std::vector<std::size_t>{0});
    }
    const auto global = local_attention_sets(8, 8, WindowSpec::global());
    for (const auto& s : global) CHECK(s.size() == 64);

    const auto conv3 = local_attention_sets(8, 8, WindowSpec::local_conv(3));
    const auto want = oracle::neighborhood_sets(8, 8, 3);
    REQUIRE(conv3.size() == want.size());
    for (std::size_t i = 0; i < conv3.size(); ++i) {
        auto a = conv3[i];
        auto b = want[i];
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
    }
    CHECK(conv3[0].size() == 4);                   // corner
    CHECK(conv3[1].size() == 6);                   // edge
    CHECK(conv3[9].size() == 9);                   // interior
    CHECK_THROWS_AS(local_attention_sets(8, 8, WindowSpec::local_conv(2)), std::invalid_argument);
    CHECK_THROWS_AS(local_attention_sets(2, 2, WindowSpec::local_conv(3)), std::invalid_argument);
}

TEST_CASE("conv2d: identity kernels and quadruple-loop oracle") {
    Rng rng(23);
    Tensor x = rng.gaussian_tensor({1, 1, 5, 5});
    Tape t;
    SUBCASE("1x1 kernel of value 1 is the identity") {
        Var y = conv2d(t, t.constant(x), t.constant(Tensor::ones({1, 1, 1, 1})), Var{}, 1, 0);
        CHECK(t.val(y).same_bits(Tensor({1, 1, 5, 5}, x.data)));
    }
    SUBCASE("3x3 delta kernel with pad 1 is the identity") {
        Tensor k = Tensor::zeros({1, 1, 3, 3});
        k.at({0, 0, 1, 1}) = 1.0;
        Var y = conv2d(t, t.constant(x), t.constant(k), Var{}, 1, 1);
        for (std::size_t i = 0; i < x.numel(); ++i) CHECK(t.val(y).data[i] == x.data[i]);
    }
    SUBCASE("random 2-channel case matches the naive loop") {
        Tensor x2 = rng.gaussian_tensor({2, 2, 6, 6});
        Tensor w = rng.gaussian_tensor({3, 2, 3, 3});
        Tensor bias = rng.gaussian_tensor({3});
        const std::size_t stride = 2, pad = 1;
        Var y = conv2d(t, t.constant(x2), t.constant(w), t.constant(bias), stride, pad);
        const std::size_t oh = (6 + 2 * pad - 3) / stride + 1, ow = oh;
        REQUIRE(t.shape(y) == Shape{2, 3, oh, ow});
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t co = 0; co < 3; ++co)
                for (std::size_t oy = 0; oy < oh; ++oy)
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        double acc = bias.data[co];
                        for (std::size_t ci = 0; ci < 2; ++ci)
                            for (std::size_t ky = 0; ky < 3; ++ky)
                                for (std::size_t kx = 0; kx < 3; ++kx) {
                                    const long yy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                                    const long xx = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                                    if (yy < 0 || xx < 0 || yy >= 6 || xx >= 6) continue;
                                    acc += x2.at({b, ci, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)}) *
                                           w.at({co, ci, ky, kx});
                                }
                        CHECK(t.val(y).at({b, co, oy, ox}) == doctest::Approx(acc).epsilon(1e-12));
                    }
    }
    SUBCASE("zero-extent output rejected") {
        Tensor w = Tensor::ones({1, 1, 7, 7});
        CHECK_THROWS_AS(conv2d(t, t.constant(x), t.constant(w), Var{}, 1, 0), std::invalid_argument);
    }
}

TEST_CASE("conv2d: translation equivariance away from borders (exact)") {
    Rng rng(29);
    Tensor x = rng.gaussian_tensor({1, 2, 8, 8});
    Tensor xs = Tensor::zeros({1, 2, 8, 8});
    // shift down by one pixel
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 1; y < 8; ++y)
            for (std::size_t xx = 0; xx < 8; ++xx) xs.at({0, c, y, xx}) = x.at({0, c, y - 1, xx});
    Tensor w = rng.gaussian_tensor({3, 2, 3, 3});
    Tape t;
    const Tensor y1 = t.val(conv2d(t, t.constant(x), t.constant(w), Var{}, 1, 1));
    const Tensor y2 = t.val(conv2d(t, t.constant(xs), t.constant(w), Var{}, 1, 1));
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 2; y < 7; ++y)
            for (std::size_t xx = 1; xx < 7; ++xx)
                CHECK(y2.at({0, c, y, xx}) == y1.at({0, c, y - 1, xx}));
}

TEST_CASE("box_blur: identity, constant map, and 1/k^2 variance drop") {
    Tape t;
    Rng rng(31);
    Tensor x = rng.gaussian_tensor({1, 1, 6, 6});
    CHECK(t.val(t.box_blur(t.constant(x), 1)).same_bits(x));
    const Tensor c = Tensor::full({1, 1, 5, 5}, 2.5);
    const Tensor cb = t.val(t.box_blur(t.constant(c), 3));
    for (double v : cb.data) CHECK(v == doctest::Approx(2.5).epsilon(1e-15));

    // Monte-Carlo: interior output variance of k=2 blur over unit noise ~ 1/4
    double sum = 0.0, sumsq = 0.0;
    std::size_t count = 0;
    for (int seed = 0; seed < 200; ++seed) {
        Rng r(1000 + seed);
        Tensor m = r.gaussian_tensor({1, 1, 8, 8});
        Tape tt;
        const Tensor b = tt.val(tt.box_blur(tt.constant(m), 2));
        for (std::size_t y = 0; y < 7; ++y)
            for (std::size_t xx = 0; xx < 7; ++xx) {
                const double v = b.at({0, 0, y, xx});
                sum += v;
                sumsq += v * v;
                ++count;
            }
    }
    const double mean = sum / count;
    const double var = sumsq / count - mean * mean;
    CHECK(var == doctest::Approx(0.25).epsilon(0.10));
}

TEST_CASE("patch_embed: token counts and slice oracle") {
    Rng rng(37);
    Tape t;
    SUBCASE("4x4 single channel, p=4 -> one token") {
        Tensor img = rng.gaussian_tensor({1, 1, 4, 4});
        Var tok = patch_embed(t, t.constant(img), 4, t.constant(rng.gaussian_tensor({16, 5})),
                              t.constant(Tensor::zeros({5})));
        CHECK(t.shape(tok) == Shape{1, 1, 5});
    }
    SUBCASE("32x32, p=2 -> 256 tokens") {
        Tensor img = rng.gaussian_tensor({1, 3, 32, 32});
        Var tok = patch_embed(t, t.constant(img), 2, t.constant(rng.gaussian_tensor({12, 4})),
                              t.constant(Tensor::zeros({4})));
        CHECK(t.shape(tok) == Shape{1, 256, 4});
    }
    SUBCASE("token equals linear map of the flattened patch") {
        const std::size_t p = 2, c = 2, e = 6, d = 3;
        Tensor img = rng.gaussian_tensor({1, c, e, e});
        Tensor w = rng.gaussian_tensor({c * p * p, d});
        Tensor b = rng.gaussian_tensor({d});
        Var tok = patch_embed(t, t.constant(img), p, t.constant(w), t.constant(b));
        const std::size_t per_row = e / p;
        for (std::size_t ty = 0; ty < per_row; ++ty)
            for (std::size_t tx = 0; tx < per_row; ++tx) {
                std::vector<double> flat;
                for (std::size_t ci = 0; ci < c; ++ci)
                    for (std::size_t dy = 0; dy < p; ++dy)
                        for (std::size_t dx = 0; dx < p; ++dx)
                            flat.push_back(img.at({0, ci, ty * p + dy, tx * p + dx}));
                for (std::size_t j = 0; j < d; ++j) {
                    double acc = b.data[j];
                    for (std::size_t i = 0; i < flat.size(); ++i) acc += flat[i] * w.data[i * d + j];
                    CHECK(t.val(tok).at({0, ty * per_row + tx, j}) == doctest::Approx(acc).epsilon(1e-12));
                }
            }
    }
    SUBCASE("non-divisible extent rejected") {
        Tensor img = rng.gaussian_tensor({1, 1, 6, 6});
        CHECK_THROWS_AS(
            patch_embed(t, t.constant(img), 4, t.constant(rng.gaussian_tensor({16, 2})), Var{}),
            std::invalid_argument);
    }
}

TEST_CASE("classifier_head: GAP and CLS contracts") {
    Rng rng(41);
    Tape t;
    const std::size_t d = 4, classes = 3;
    Tensor w = rng.gaussian_tensor({d, classes});
    Tensor b = rng.gaussian_tensor({classes});

    SUBCASE("GAP over identical tokens equals the single-token linear map") {
        Tensor one = rng.gaussian_tensor({1, 1, d});
        Tensor rep({1, 5, d});
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < d; ++j) rep.at({0, i, j}) = one.at({0, 0, j});
        const Tensor ya = t.val(classifier_head(t, t.constant(rep), HeadMode::kGap, false, t.constant(w), t.constant(b)));
        const Tensor yb = t.val(classifier_head(t, t.constant(one), HeadMode::kGap, false, t.constant(w), t.constant(b)));
        for (std::size_t i = 0; i < classes; ++i) CHECK(ya.data[i] == doctest::Approx(yb.data[i]).epsilon(1e-12));
    }
    SUBCASE("CLS ignores all non-class tokens (exact)") {
        Tensor tok = rng.gaussian_tensor({2, 6, d});
        Tensor tok2 = tok;
        for (std::size_t i = d; i < tok2.numel(); ++i) tok2.data[i] += 3.21;  // perturb tokens 1.. of sample 0 onward
        // keep class token of each sample fixed
        for (std::size_t s = 0; s < 2; ++s)
            for (std::size_t j = 0; j < d; ++j) tok2.at({s, 0, j}) = tok.at({s, 0, j});
        const Tensor ya = t.val(classifier_head(t, t.constant(tok), HeadMode::kCls, true, t.constant(w), t.constant(b)));
        const Tensor yb = t.val(classifier_head(t, t.constant(tok2), HeadMode::kCls, true, t.constant(w), t.constant(b)));
        CHECK(ya.same_bits(yb));
    }
    SUBCASE("GAP logits equal mean-then-matmul oracle") {
        Tensor tok = rng.gaussian_tensor({2, 5, d});
        const Tensor y = t.val(classifier_head(t, t.constant(tok), HeadMode::kGap, false, t.constant(w), t.constant(b)));
        for (std::size_t s = 0; s < 2; ++s)
            for (std::size_t cl = 0; cl < classes; ++cl) {
                double acc = b.data[cl];
                for (std::size_t j = 0; j < d; ++j) {
                    double mu = 0.0;
                    for (std::size_t i = 0; i < 5; ++i) mu += tok.at({s, i, j});
                    acc += mu / 5.0 * w.data[j * classes + cl];
                }
                CHECK(y.at({s, cl}) == doctest::Approx(acc).epsilon(1e-12));
            }
    }
    SUBCASE("CLS without class token rejected") {
        Tensor tok = rng.gaussian_tensor({1, 4, d});
        CHECK_THROWS_AS(classifier_head(t, t.constant(tok), HeadMode::kCls, false, t.constant(w), t.constant(b)),
                        std::invalid_argument);
    }
}

TEST_CASE("normalize: layer and batch norm against naive statistics") {
    Rng rng(43);
    Tape t;
    SUBCASE("constant input with unit affine -> zeros") {
        Tensor x = Tensor::full({2, 3, 4, 4}, 7.0);
        const Tensor y = t.val(batch_norm(t, t.constant(x), t.constant(Tensor::ones({3})),
                                          t.constant(Tensor::zeros({3}))));
        for (double v : y.data) CHECK(std::fabs(v) <= 1e-12);
        Tensor tok = Tensor::full({2, 5, 6}, -1.5);
        const Tensor z = t.val(layer_norm(t, t.constant(tok), t.constant(Tensor::ones({6})),
                                          t.constant(Tensor::zeros({6}))));
        for (double v : z.data) CHECK(std::fabs(v) <= 1e-12);
    }
    SUBCASE("already standardized input passes through within the epsilon effect") {
        const std::size_t n = 8;
        Tensor tok({1, 2, n});
        for (std::size_t i = 0; i < n; ++i) {
            const double v = (i % 2 == 0) ? 1.0 : -1.0;  // mean 0, variance 1
            tok.at({0, 0, i}) = v;
            tok.at({0, 1, i}) = -v;
        }
        const Tensor y = t.val(layer_norm(t, t.constant(tok), t.constant(Tensor::ones({n})),
                                          t.constant(Tensor::zeros({n}))));
        for (std::size_t i = 0; i < tok.numel(); ++i) CHECK(std::fabs(y.data[i] - tok.data[i]) <= 1e-5);
    }
    SUBCASE("random input matches the naive mean/var loop") {
        Tensor x = rng.gaussian_tensor({3, 2, 4, 4});
        Tensor g = rng.gaussian_tensor({2});
        Tensor be = rng.gaussian_tensor({2});
        const Tensor y = t.val(batch_norm(t, t.constant(x), t.constant(g), t.constant(be)));
        for (std::size_t c = 0; c < 2; ++c) {
            double mu = 0.0, var = 0.0;
            std::size_t cnt = 0;
            for (std::size_t b = 0; b < 3; ++b)
                for (std::size_t yy = 0; yy < 4; ++yy)
                    for (std::size_t xx = 0; xx < 4; ++xx) {
                        mu += x.at({b, c, yy, xx});
                        ++cnt;
                    }
            mu /= cnt;
            for (std::size_t b = 0; b < 3; ++b)
                for (std::size_t yy = 0; yy < 4; ++yy)
                    for (std::size_t xx = 0; xx < 4; ++xx) {
                        const double dd = x.at({b, c, yy, xx}) - mu;
                        var += dd * dd;
                    }
            var /= cnt;
            for (std::size_t b = 0; b < 3; ++b)
                for (std::size_t yy = 0; yy < 4; ++yy)
                    for (std::size_t xx = 0; xx < 4; ++xx) {
                        const double want =
                            (x.at({b, c, yy, xx}) - mu) / std::sqrt(var + 1e-5) * g.data[c] + be.data[c];
                        CHECK(y.at({b, c, yy, xx}) == doctest::Approx(want).epsilon(1e-10));
                    }
        }
        CHECK_THROWS_AS(batch_norm(t, t.constant(rng.gaussian_tensor({1, 2, 4, 4})), t.constant(g), t.constant(be)),
                        std::invalid_argument);
    }
}

TEST_CASE("msa: window larger than grid and dim mismatch rejected") {
    Rng rng(47);
    AttentionParams p = make_attn(1, 4, WindowSpec::partition(8), rng);
    Tape t;
    Tensor x = rng.gaussian_tensor({16, 4});
    CHECK_THROWS_AS(msa_forward(t, t.constant(x), p, 4, 4), std::invalid_argument);
    AttentionParams q = make_attn(2, 3, WindowSpec::global(), rng);
    CHECK_THROWS_AS(msa_forward(t, t.constant(x), q, 4, 4), std::invalid_argument);
}
