#include "vitlab/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace vitlab {

namespace {
constexpr double kMaskValue = -1e9;  // exp(x + kMaskValue) underflows to 0.0
}

std::string window_str(const WindowSpec& w) {
    switch (w.kind) {
        case WindowKind::kGlobal: return "global";
        case WindowKind::kLocalConv: return "conv:" + std::to_string(w.size);
        case WindowKind::kLocalPartition: return "part:" + std::to_string(w.size);
    }
    return "?";
}

WindowSpec window_parse(const std::string& s) {
    if (s == "global") return WindowSpec::global();
    if (s.rfind("conv:", 0) == 0) return WindowSpec::local_conv(std::stoi(s.substr(5)));
    if (s.rfind("part:", 0) == 0) return WindowSpec::partition(std::stoi(s.substr(5)));
    throw std::invalid_argument("window_parse: unknown window '" + s + "'");
}

std::vector<std::vector<std::size_t>> local_attention_sets(std::size_t grid_h, std::size_t grid_w,
                                                           const WindowSpec& w) {
    const std::size_t n = grid_h * grid_w;
    std::vector<std::vector<std::size_t>> sets(n);
    switch (w.kind) {
        case WindowKind::kGlobal: {
            std::vector<std::size_t> all(n);
            for (std::size_t i = 0; i < n; ++i) all[i] = i;
            for (auto& s : sets) s = all;
            break;
        }
        case WindowKind::kLocalConv: {
            const int k = w.size;
            if (k < 1 || k % 2 == 0)
                throw std::invalid_argument("local_attention_sets: convolutional window must be odd, got " +
                                            std::to_string(k));
            if (static_cast<std::size_t>(k) > grid_h || static_cast<std::size_t>(k) > grid_w)
                throw std::invalid_argument("local_attention_sets: window " + std::to_string(k) +
                                            " larger than grid " + std::to_string(grid_h) + "x" +
                                            std::to_string(grid_w));
            const int r = (k - 1) / 2;
            for (std::size_t y = 0; y < grid_h; ++y)
                for (std::size_t x = 0; x < grid_w; ++x) {
                    auto& s = sets[y * grid_w + x];
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) {
                            const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
                            if (ny < 0 || nx < 0 || ny >= static_cast<long>(grid_h) ||
                                nx >= static_cast<long>(grid_w))
                                continue;
                            s.push_back(static_cast<std::size_t>(ny) * grid_w + static_cast<std::size_t>(nx));
                        }
                }
            break;
        }
        case WindowKind::kLocalPartition: {
            const int wz = w.size;
            if (wz < 1) throw std::invalid_argument("local_attention_sets: bad partition window");
            if (static_cast<std::size_t>(wz) > grid_h || static_cast<std::size_t>(wz) > grid_w)
                throw std::invalid_argument("local_attention_sets: window " + std::to_string(wz) +
                                            " larger than grid");
            if (grid_h % wz != 0 || grid_w % wz != 0)
                throw std::invalid_argument("local_attention_sets: partition window must tile the grid");
            for (std::size_t y = 0; y < grid_h; ++y)
                for (std::size_t x = 0; x < grid_w; ++x) {
                    auto& s = sets[y * grid_w + x];
                    const std::size_t ty = y / wz * wz, tx = x / wz * wz;
                    for (std::size_t dy = 0; dy < static_cast<std::size_t>(wz); ++dy)
                        for (std::size_t dx = 0; dx < static_cast<std::size_t>(wz); ++dx)
                            s.push_back((ty + dy) * grid_w + (tx + dx));
                }
            break;
        }
    }
    return sets;
}

Tensor attention_mask(std::size_t grid_h, std::size_t grid_w, const WindowSpec& w) {
    const auto sets = local_attention_sets(grid_h, grid_w, w);
    const std::size_t n = sets.size();
    Tensor m = Tensor::full({n, n}, kMaskValue);
    for (std::size_t q = 0; q < n; ++q)
        for (std::size_t j : sets[q]) m.data[q * n + j] = 0.0;
    return m;
}

Var msa_forward(Tape& t, Var x, const AttentionVars& p, std::size_t grid_h, std::size_t grid_w) {
    const Shape xs = t.shape(x);
    const bool batched = xs.size() == 3;
    if (!batched && xs.size() != 2) throw std::invalid_argument("msa_forward: expected (N,D) or (B,N,D)");
    Var xb = batched ? x : t.reshape(x, {1, xs[0], xs[1]});
    const Shape s = t.shape(xb);
    const std::size_t bsz = s[0], n = s[1], dim = s[2];
    if (dim != p.dim())
        throw std::invalid_argument("msa_forward: token dim " + std::to_string(dim) + " != heads*head_dim " +
                                    std::to_string(p.dim()));
    const std::size_t ngrid = grid_h * grid_w;
    const bool has_cls = (p.window.kind == WindowKind::kGlobal) && n == ngrid + 1;
    if (n != ngrid && !has_cls)
        throw std::invalid_argument("msa_forward: token count " + std::to_string(n) + " does not match grid " +
                                    std::to_string(grid_h) + "x" + std::to_string(grid_w));

    const std::size_t h = p.heads, d = p.head_dim;
    auto heads_split = [&](Var v, std::size_t nt) {
        // (B', nt, H*d) -> (B', H, nt, d)
        return t.permute(t.reshape(v, {t.shape(v)[0], nt, h, d}), {0, 2, 1, 3});
    };
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    if (p.window.kind == WindowKind::kLocalPartition) {
        const int wz = p.window.size;
        if (wz < 1 || static_cast<std::size_t>(wz) > grid_h || static_cast<std::size_t>(wz) > grid_w)
            throw std::invalid_argument("msa_forward: window larger than token grid");
        if (grid_h % wz != 0 || grid_w % wz != 0)
            throw std::invalid_argument("msa_forward: partition window must tile the grid");
        const std::size_t nh = grid_h / wz, nw = grid_w / wz, win = static_cast<std::size_t>(wz) * wz;
        // (B, h*w, D) -> (B*nh*nw, wz*wz, D)
        Var tiles = t.reshape(xb, {bsz, nh, static_cast<std::size_t>(wz), nw, static_cast<std::size_t>(wz), dim});
        tiles = t.permute(tiles, {0, 1, 3, 2, 4, 5});
        tiles = t.reshape(tiles, {bsz * nh * nw, win, dim});

        Var q = heads_split(t.matmul(tiles, p.wq), win);
        Var k = heads_split(t.matmul(tiles, p.wk), win);
        Var v = heads_split(t.matmul(tiles, p.wv), win);
        Var logits = t.mul_scalar(t.matmul(q, t.transpose_last2(k)), scale);
        if (p.rel_bias.valid()) {
            // selection matrix (win^2, n_offsets) gathers the learned table
            const std::size_t noff = static_cast<std::size_t>(2 * wz - 1) * (2 * wz - 1);
            if (t.shape(p.rel_bias) != Shape{h, noff})
                throw std::invalid_argument("msa_forward: rel_bias table shape mismatch");
            Tensor sel({win * win, noff});
            for (std::size_t i = 0; i < win; ++i)
                for (std::size_t j = 0; j < win; ++j) {
                    const long dy = static_cast<long>(i / wz) - static_cast<long>(j / wz);
                    const long dx = static_cast<long>(i % wz) - static_cast<long>(j % wz);
                    const std::size_t off = static_cast<std::size_t>(dy + wz - 1) * (2 * wz - 1) +
                                            static_cast<std::size_t>(dx + wz - 1);
                    sel.data[(i * win + j) * noff + off] = 1.0;
                }
            Var bias = t.matmul(t.constant(std::move(sel)), t.transpose_last2(p.rel_bias));
            bias = t.permute(t.reshape(bias, {win, win, h}), {2, 0, 1});  // (H, win, win)
            logits = t.add(logits, bias);
        }
        Var att = t.softmax(logits, 3);
        Var out = t.matmul(att, v);  // (B', H, win, d)
        out = t.reshape(t.permute(out, {0, 2, 1, 3}), {bsz * nh * nw, win, h * d});
        out = t.matmul(out, p.wo);
        // back to (B, N, D)
        out = t.reshape(out, {bsz, nh, nw, static_cast<std::size_t>(wz), static_cast<std::size_t>(wz), dim});
        out = t.permute(out, {0, 1, 3, 2, 4, 5});
        out = t.reshape(out, {bsz, n, dim});
        return batched ? out : t.reshape(out, xs);
    }

    // global / convolutional-neighborhood path over all N tokens
    if (p.window.kind == WindowKind::kLocalConv && has_cls)
        throw std::invalid_argument("msa_forward: class token unsupported with local windows");
    Var q = heads_split(t.matmul(xb, p.wq), n);
    Var k = heads_split(t.matmul(xb, p.wk), n);
    Var v = heads_split(t.matmul(xb, p.wv), n);
    Var logits = t.mul_scalar(t.matmul(q, t.transpose_last2(k)), scale);
    if (p.window.kind == WindowKind::kLocalConv)
        logits = t.add(logits, t.constant(attention_mask(grid_h, grid_w, p.window)));
    Var att = t.softmax(logits, 3);
    Var out = t.matmul(att, v);  // (B, H, N, d)
    out = t.reshape(t.permute(out, {0, 2, 1, 3}), {bsz, n, h * d});
    out = t.matmul(out, p.wo);
    return batched ? out : t.reshape(out, xs);
}

Var msa_forward(Tape& t, Var x, const AttentionParams& p, std::size_t grid_h, std::size_t grid_w) {
    AttentionVars v;
    v.heads = p.heads;
    v.head_dim = p.head_dim;
    v.window = p.window;
    v.wq = t.constant(p.wq);
    v.wk = t.constant(p.wk);
    v.wv = t.constant(p.wv);
    v.wo = t.constant(p.wo);
    if (p.rel_bias.numel() > 0) v.rel_bias = t.constant(p.rel_bias);
    return msa_forward(t, x, v, grid_h, grid_w);
}

Var conv2d(Tape& t, Var x, Var weight, Var bias, std::size_t stride, std::size_t pad) {
    const Shape xs = t.shape(x);
    const Shape ws = t.shape(weight);
    if (xs.size() != 4) throw std::invalid_argument("conv2d: input must be (B,C,H,W)");
    if (ws.size() != 4) throw std::invalid_argument("conv2d: weight must be (Cout,Cin,kh,kw)");
    if (ws[1] != xs[1]) throw std::invalid_argument("conv2d: channel mismatch");
    const std::size_t cout = ws[0], kh = ws[2], kw = ws[3];
    if (kh > xs[2] + 2 * pad || kw > xs[3] + 2 * pad)
        throw std::invalid_argument("conv2d: kernel exceeds padded input (zero-extent output)");
    const ConvGeom g{kh, kw, stride, stride, pad, pad};
    const std::size_t oh = (xs[2] + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (xs[3] + 2 * pad - kw) / stride + 1;
    Var cols = t.im2col(x, g);                                     // (B, Cin*kh*kw, OH*OW)
    Var w2 = t.reshape(weight, {cout, ws[1] * kh * kw});           // (Cout, K)
    Var y = t.matmul(w2, cols);                                    // (B, Cout, OH*OW)
    y = t.reshape(y, {xs[0], cout, oh, ow});
    if (bias.valid()) y = t.add(y, t.reshape(bias, {cout, 1, 1}));
    return y;
}

Var tokens_to_map(Tape& t, Var tokens, std::size_t grid_h, std::size_t grid_w) {
    const Shape s = t.shape(tokens);
    if (s.size() != 3 || s[1] != grid_h * grid_w)
        throw std::invalid_argument("tokens_to_map: token grid mismatch");
    Var y = t.reshape(tokens, {s[0], grid_h, grid_w, s[2]});
    return t.permute(y, {0, 3, 1, 2});
}

Var map_to_tokens(Tape& t, Var map) {
    const Shape s = t.shape(map);
    if (s.size() != 4) throw std::invalid_argument("map_to_tokens: expected (B,C,H,W)");
    Var y = t.permute(map, {0, 2, 3, 1});
    return t.reshape(y, {s[0], s[2] * s[3], s[1]});
}

Var patch_embed(Tape& t, Var img, std::size_t p, Var weight, Var bias) {
    const Shape s = t.shape(img);
    if (s.size() != 4) throw std::invalid_argument("patch_embed: expected (B,C,H,W)");
    if (p == 0 || s[2] % p != 0 || s[3] % p != 0)
        throw std::invalid_argument("patch_embed: image extent " + std::to_string(s[2]) + "x" +
                                    std::to_string(s[3]) + " not divisible by patch " + std::to_string(p));
    const std::size_t n = (s[2] / p) * (s[3] / p);
    Var cols = t.im2col(img, ConvGeom{p, p, p, p, 0, 0});  // (B, C*p*p, N)
    Var tok = t.permute(cols, {0, 2, 1});                  // (B, N, C*p*p)
    tok = t.matmul(tok, weight);
    if (bias.valid()) tok = t.add(tok, bias);
    if (t.shape(tok)[1] != n) throw std::logic_error("patch_embed: token count mismatch");
    return tok;
}

Var classifier_head(Tape& t, Var x, HeadMode mode, bool has_cls_token, Var w, Var b) {
    const Shape s = t.shape(x);
    Var feat;
    if (mode == HeadMode::kCls) {
        if (!has_cls_token) throw std::invalid_argument("classifier_head: CLS mode on a model without class token");
        if (s.size() != 3) throw std::invalid_argument("classifier_head: CLS mode expects tokens (B,N,D)");
        feat = t.reshape(t.slice(x, {0, 0, 0}, {s[0], 1, s[2]}), {s[0], s[2]});
    } else if (s.size() == 3) {
        feat = t.mean(x, 1, false);  // (B, D)
    } else if (s.size() == 4) {
        feat = t.mean(t.mean(x, 3, false), 2, false);  // (B, C)
    } else {
        throw std::invalid_argument("classifier_head: expected tokens or feature map");
    }
    Var y = t.matmul(feat, w);
    if (b.valid()) y = t.add(y, b);
    return y;
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
    const int last = static_cast<int>(t.shape(x).size()) - 1;
    Var mu = t.mean(x, last, true);
    Var xc = t.sub(x, mu);
    Var var = t.mean(t.mul(xc, xc), last, true);
    Var xhat = t.mul(xc, t.pow_scalar(t.add_scalar(var, eps), -0.5));
    return t.add(t.mul(xhat, gamma), beta);
}

Var batch_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
    const Shape s = t.shape(x);
    if (s.size() != 4) throw std::invalid_argument("batch_norm: expected (B,C,H,W)");
    if (s[0] < 2) throw std::invalid_argument("batch_norm: batch must be >= 2");
    const std::size_t c = s[1];
    Var mu = t.mean(t.mean(t.mean(x, 0, true), 2, true), 3, true);
    Var xc = t.sub(x, mu);
    Var var = t.mean(t.mean(t.mean(t.mul(xc, xc), 0, true), 2, true), 3, true);
    Var xhat = t.mul(xc, t.pow_scalar(t.add_scalar(var, eps), -0.5));
    return t.add(t.mul(xhat, t.reshape(gamma, {c, 1, 1})), t.reshape(beta, {c, 1, 1}));
}

}  // namespace vitlab
