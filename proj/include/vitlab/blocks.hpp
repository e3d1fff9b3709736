#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vitlab/tape.hpp"

namespace vitlab {

enum class WindowKind : std::uint8_t {
    kGlobal,          // every token attends to all tokens
    kLocalConv,       // centered k x k neighborhood, truncated at borders
    kLocalPartition,  // disjoint w x w tiles (Swin-style)
};

struct WindowSpec {
    WindowKind kind = WindowKind::kGlobal;
    int size = 0;

    static WindowSpec global() { return {WindowKind::kGlobal, 0}; }
    static WindowSpec local_conv(int k) { return {WindowKind::kLocalConv, k}; }
    static WindowSpec partition(int w) { return {WindowKind::kLocalPartition, w}; }
    bool operator==(const WindowSpec&) const = default;
};

std::string window_str(const WindowSpec& w);
WindowSpec window_parse(const std::string& s);

// Per-head projections packed as column blocks: wq/wk/wv are (D, H*d), wo is
// (H*d, D); D == H*d. rel_bias (H, (2w-1)^2) is a learned bias table indexed
// by relative offset, used by partition windows only.
struct AttentionParams {
    std::size_t heads = 1;
    std::size_t head_dim = 0;
    Tensor wq, wk, wv, wo;
    Tensor rel_bias;  // empty when unused
    WindowSpec window;

    std::size_t dim() const { return heads * head_dim; }
};

// Attendable token index sets per query token. Global: all N. LocalConv:
// in-bounds tokens of the centered k x k neighborhood (k odd). Partition:
// the grid is tiled into disjoint w x w windows (w must divide both extents).
std::vector<std::vector<std::size_t>> local_attention_sets(std::size_t grid_h, std::size_t grid_w,
                                                           const WindowSpec& w);

// Additive logit mask: 0 for attendable pairs, large negative otherwise.
// exp() of the masked entries underflows to exactly zero, so out-of-set
// tokens get weight 0.0 and cannot perturb in-set outputs.
Tensor attention_mask(std::size_t grid_h, std::size_t grid_w, const WindowSpec& w);

// Attention weights already bound on a tape (parameter leaves or constants).
struct AttentionVars {
    std::size_t heads = 1;
    std::size_t head_dim = 0;
    Var wq, wk, wv, wo;
    Var rel_bias;  // invalid when unused
    WindowSpec window;

    std::size_t dim() const { return heads * head_dim; }
};

// Multi-head self-attention over a token grid. x is (N, D) or (B, N, D);
// grid_h*grid_w must equal N (global mode also accepts N = grid+1 for a
// prepended class token). Returns the same shape as x.
Var msa_forward(Tape& t, Var x, const AttentionVars& p, std::size_t grid_h, std::size_t grid_w);
Var msa_forward(Tape& t, Var x, const AttentionParams& p, std::size_t grid_h, std::size_t grid_w);

// Standard cross-correlation. x (B,C,H,W); weight (Cout, Cin, kh, kw);
// bias (Cout) or invalid. Zero-extent outputs are rejected.
Var conv2d(Tape& t, Var x, Var weight, Var bias, std::size_t stride, std::size_t pad);

// tokens (B,N,D) <-> feature map (B,C,H,W) with C == D
Var tokens_to_map(Tape& t, Var tokens, std::size_t grid_h, std::size_t grid_w);
Var map_to_tokens(Tape& t, Var map);

// Patch embedding: image (B,C,H,W), extent divisible by p; weight (C*p*p, D),
// bias (D). Returns (B, (H/p)*(W/p), D).
Var patch_embed(Tape& t, Var img, std::size_t p, Var weight, Var bias);

enum class HeadMode : std::uint8_t { kGap, kCls };

// GAP: token/spatial mean then linear. CLS: linear map of token 0 only; the
// caller states whether the model actually carries a class token.
Var classifier_head(Tape& t, Var x, HeadMode mode, bool has_cls_token, Var w, Var b);

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);   // per token over channels
Var batch_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);   // per channel over batch x space

}  // namespace vitlab
