#include "vitlab/model.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "vitlab/rng.hpp"

namespace vitlab {

namespace {

std::string stage_path(std::size_t s) { return "s" + std::to_string(s); }
std::string block_path(std::size_t s, std::size_t b) { return stage_path(s) + ".b" + std::to_string(b); }

std::size_t mlp_hidden(const BlockSpec& b) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(b.width * b.expansion)));
}

std::size_t bottleneck_mid(const BlockSpec& b) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(b.width / b.expansion)));
}

enum class Init : std::uint8_t { kConvHe, kLinearSmall, kZeros, kOnes, kToken };

struct ParamDecl {
    std::string name;
    Shape shape;
    ParamKind kind;
    bool decay;
    Init init;
};

// Enumerates every learnable tensor of the architecture in forward order.
// build_model materializes this list; the forward pass looks params up by
// name, so any drift between the two walks fails loudly.
std::vector<ParamDecl> param_decls(const ModelSpec& spec) {
    spec.validate();
    std::vector<ParamDecl> out;
    auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t k) {
        out.push_back({name, {cout, cin, k, k}, ParamKind::kConvFilter, true, Init::kConvHe});
    };
    auto linear = [&](const std::string& name, std::size_t in, std::size_t o) {
        out.push_back({name, {in, o}, ParamKind::kLinear, true, Init::kLinearSmall});
    };
    auto vec = [&](const std::string& name, Shape s, Init init) {
        out.push_back({name, std::move(s), ParamKind::kVector, false, init});
    };

    std::size_t width = spec.stem.width;
    std::size_t grid = spec.image_extent;
    if (spec.stem.kind == BlockKind::kPatchEmbed) {
        grid = spec.image_extent / spec.patch;
        linear("stem.w", spec.in_channels * spec.patch * spec.patch, width);
        vec("stem.b", {width}, Init::kZeros);
        if (spec.head == HeadMode::kCls) vec("stem.cls", {1, 1, width}, Init::kToken);
        if (spec.pos_embed) {
            const std::size_t n = grid * grid + (spec.head == HeadMode::kCls ? 1 : 0);
            vec("stem.pos", {n, width}, Init::kToken);
        }
    } else {
        conv("stem.w", width, spec.in_channels, 3);
    }

    for (std::size_t s = 0; s < spec.stages.size(); ++s) {
        const StageSpec& stage = spec.stages[s];
        const std::string sp = stage_path(s + 1);
        if (stage.subsample) {
            vec(sp + ".sub.bn.g", {width}, Init::kOnes);
            vec(sp + ".sub.bn.b", {width}, Init::kZeros);
            conv(sp + ".sub.w", stage.subsample->width, width, 3);
            width = stage.subsample->width;
        }
        for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
            const BlockSpec& blk = stage.blocks[b];
            const std::string bp = block_path(s + 1, b);
            switch (blk.kind) {
                case BlockKind::kConvBasic:
                    vec(bp + ".bn1.g", {width}, Init::kOnes);
                    vec(bp + ".bn1.b", {width}, Init::kZeros);
                    conv(bp + ".conv1.w", width, width, 3);
                    vec(bp + ".bn2.g", {width}, Init::kOnes);
                    vec(bp + ".bn2.b", {width}, Init::kZeros);
                    conv(bp + ".conv2.w", width, width, 3);
                    break;
                case BlockKind::kConvBottleneck: {
                    const std::size_t mid = bottleneck_mid(blk);
                    vec(bp + ".bn1.g", {width}, Init::kOnes);
                    vec(bp + ".bn1.b", {width}, Init::kZeros);
                    conv(bp + ".conv1.w", mid, width, 1);
                    vec(bp + ".bn2.g", {mid}, Init::kOnes);
                    vec(bp + ".bn2.b", {mid}, Init::kZeros);
                    conv(bp + ".conv2.w", mid, mid, 3);
                    vec(bp + ".bn3.g", {mid}, Init::kOnes);
                    vec(bp + ".bn3.b", {mid}, Init::kZeros);
                    conv(bp + ".conv3.w", width, mid, 1);
                    break;
                }
                case BlockKind::kMsa: {
                    vec(bp + ".ln.g", {width}, Init::kOnes);
                    vec(bp + ".ln.b", {width}, Init::kZeros);
                    linear(bp + ".wq", width, width);
                    linear(bp + ".wk", width, width);
                    linear(bp + ".wv", width, width);
                    linear(bp + ".wo", width, width);
                    if (blk.window.kind == WindowKind::kLocalPartition) {
                        const std::size_t w = static_cast<std::size_t>(blk.window.size);
                        vec(bp + ".rel", {blk.heads, (2 * w - 1) * (2 * w - 1)}, Init::kToken);
                    }
                    break;
                }
                case BlockKind::kMlp: {
                    const std::size_t hid = mlp_hidden(blk);
                    vec(bp + ".ln.g", {width}, Init::kOnes);
                    vec(bp + ".ln.b", {width}, Init::kZeros);
                    linear(bp + ".w1", width, hid);
                    vec(bp + ".b1", {hid}, Init::kZeros);
                    linear(bp + ".w2", hid, width);
                    vec(bp + ".b2", {width}, Init::kZeros);
                    break;
                }
                case BlockKind::kBoxBlur: break;
                default: throw std::invalid_argument("param_decls: unsupported block at " + bp);
            }
        }
        if (stage.subsample) grid /= 2;
        (void)grid;
    }

    vec("head.norm.g", {width}, Init::kOnes);
    vec("head.norm.b", {width}, Init::kZeros);
    linear("head.w", width, spec.classes);
    vec("head.b", {spec.classes}, Init::kZeros);
    return out;
}

}  // namespace

std::string block_kind_str(BlockKind k) {
    switch (k) {
        case BlockKind::kConvBottleneck: return "conv_bottleneck";
        case BlockKind::kConvBasic: return "conv_basic";
        case BlockKind::kMsa: return "msa";
        case BlockKind::kMlp: return "mlp";
        case BlockKind::kPatchEmbed: return "patch_embed";
        case BlockKind::kSubsample: return "subsample";
        case BlockKind::kBoxBlur: return "box_blur";
    }
    return "?";
}

BlockKind block_kind_parse(const std::string& s) {
    if (s == "conv_bottleneck") return BlockKind::kConvBottleneck;
    if (s == "conv_basic") return BlockKind::kConvBasic;
    if (s == "msa") return BlockKind::kMsa;
    if (s == "mlp") return BlockKind::kMlp;
    if (s == "patch_embed") return BlockKind::kPatchEmbed;
    if (s == "subsample") return BlockKind::kSubsample;
    if (s == "box_blur") return BlockKind::kBoxBlur;
    throw std::invalid_argument("unknown block kind '" + s + "'");
}

void ModelSpec::validate() const {
    if (classes < 2) throw std::invalid_argument("modelspec: need at least 2 classes");
    if (in_channels < 1 || image_extent < 1) throw std::invalid_argument("modelspec: bad input geometry");
    if (stem.width < 1) throw std::invalid_argument("modelspec: stem width must be positive");
    if (stem.kind == BlockKind::kPatchEmbed) {
        if (patch == 0 || image_extent % patch != 0)
            throw std::invalid_argument("modelspec: image extent not divisible by patch");
    } else if (stem.kind != BlockKind::kConvBasic) {
        throw std::invalid_argument("modelspec: stem must be patch_embed or conv_basic");
    }
    const bool cls = head == HeadMode::kCls;
    if (cls && stem.kind != BlockKind::kPatchEmbed)
        throw std::invalid_argument("modelspec: CLS head requires a patch-embed stem");
    std::size_t width = stem.width;
    std::size_t grid = stem.kind == BlockKind::kPatchEmbed ? image_extent / patch : image_extent;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const std::string sp = stage_path(s + 1);
        const StageSpec& stage = stages[s];
        if (stage.subsample) {
            if (cls) throw std::invalid_argument("modelspec: CLS head incompatible with subsampling at " + sp);
            if (stage.subsample->kind != BlockKind::kSubsample)
                throw std::invalid_argument("modelspec: stage subsample has wrong kind at " + sp);
            if (stage.subsample->width < 1) throw std::invalid_argument("modelspec: bad subsample width at " + sp);
            if (grid < 2) throw std::invalid_argument("modelspec: grid too small to subsample at " + sp);
            width = stage.subsample->width;
            grid /= 2;
        }
        for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
            const BlockSpec& blk = stage.blocks[b];
            const std::string bp = block_path(s + 1, b);
            if (blk.kind == BlockKind::kPatchEmbed || blk.kind == BlockKind::kSubsample)
                throw std::invalid_argument("modelspec: " + block_kind_str(blk.kind) +
                                            " not allowed as stage block at " + bp);
            if (blk.width != width)
                throw std::invalid_argument("modelspec: width " + std::to_string(blk.width) +
                                            " breaks stage width " + std::to_string(width) + " at " + bp);
            const bool is_msa = blk.kind == BlockKind::kMsa;
            if (is_msa) {
                if (blk.heads < 1) throw std::invalid_argument("modelspec: MSA needs heads at " + bp);
                if (blk.width % blk.heads != 0)
                    throw std::invalid_argument("modelspec: width not divisible by heads at " + bp);
                if (blk.window.kind != WindowKind::kGlobal) {
                    if (cls) throw std::invalid_argument("modelspec: CLS token incompatible with local MSA at " + bp);
                    if (blk.window.size < 1 || static_cast<std::size_t>(blk.window.size) > grid)
                        throw std::invalid_argument("modelspec: window larger than token grid at " + bp);
                }
            } else if (blk.heads != 0 || blk.window != WindowSpec{}) {
                throw std::invalid_argument("modelspec: heads/window only valid for MSA at " + bp);
            }
            const bool wants_exp = blk.kind == BlockKind::kMlp || blk.kind == BlockKind::kConvBottleneck;
            if (wants_exp && blk.expansion <= 0.0)
                throw std::invalid_argument("modelspec: expansion required at " + bp);
            if (!wants_exp && blk.expansion != 0.0)
                throw std::invalid_argument("modelspec: expansion only valid for MLP/bottleneck at " + bp);
            if (blk.kind == BlockKind::kBoxBlur && blk.blur < 1)
                throw std::invalid_argument("modelspec: box blur extent must be >= 1 at " + bp);
            if (cls && blk.kind != BlockKind::kMsa && blk.kind != BlockKind::kMlp)
                throw std::invalid_argument("modelspec: CLS models are MSA/MLP only, offending " + bp);
        }
    }
}

std::string ModelSpec::serialize() const {
    std::ostringstream os;
    auto dbl = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    os << "format = vitlab.modelspec.v1\n";
    os << "in_channels = " << in_channels << "\n";
    os << "image_extent = " << image_extent << "\n";
    os << "classes = " << classes << "\n";
    os << "head = " << (head == HeadMode::kGap ? "gap" : "cls") << "\n";
    os << "pos_embed = " << (pos_embed ? 1 : 0) << "\n";
    os << "patch = " << patch << "\n";
    os << "stem.kind = " << block_kind_str(stem.kind) << "\n";
    os << "stem.width = " << stem.width << "\n";
    os << "stages = " << stages.size() << "\n";
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const std::string sp = stage_path(s + 1);
        const StageSpec& stage = stages[s];
        os << sp << ".sub = " << (stage.subsample ? 1 : 0) << "\n";
        if (stage.subsample) os << sp << ".sub.width = " << stage.subsample->width << "\n";
        os << sp << ".blocks = " << stage.blocks.size() << "\n";
        for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
            const BlockSpec& blk = stage.blocks[b];
            const std::string bp = block_path(s + 1, b);
            os << bp << ".kind = " << block_kind_str(blk.kind) << "\n";
            os << bp << ".width = " << blk.width << "\n";
            if (blk.kind == BlockKind::kMsa) {
                os << bp << ".heads = " << blk.heads << "\n";
                os << bp << ".window = " << window_str(blk.window) << "\n";
            }
            if (blk.kind == BlockKind::kMlp || blk.kind == BlockKind::kConvBottleneck)
                os << bp << ".expansion = " << dbl(blk.expansion) << "\n";
            if (blk.kind == BlockKind::kBoxBlur) os << bp << ".blur = " << blk.blur << "\n";
        }
    }
    return os.str();
}

ModelSpec ModelSpec::deserialize(const std::string& text) {
    std::unordered_map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("modelspec: bad line '" + line + "'");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto need = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw std::invalid_argument("modelspec: missing key '" + k + "'");
        return it->second;
    };
    if (need("format") != "vitlab.modelspec.v1") throw std::invalid_argument("modelspec: unknown format");
    ModelSpec spec;
    spec.in_channels = std::stoull(need("in_channels"));
    spec.image_extent = std::stoull(need("image_extent"));
    spec.classes = std::stoull(need("classes"));
    spec.head = need("head") == "cls" ? HeadMode::kCls : HeadMode::kGap;
    spec.pos_embed = need("pos_embed") == "1";
    spec.patch = std::stoull(need("patch"));
    spec.stem.kind = block_kind_parse(need("stem.kind"));
    spec.stem.width = std::stoull(need("stem.width"));
    const std::size_t nstages = std::stoull(need("stages"));
    for (std::size_t s = 0; s < nstages; ++s) {
        const std::string sp = stage_path(s + 1);
        StageSpec stage;
        if (need(sp + ".sub") == "1") {
            BlockSpec sub;
            sub.kind = BlockKind::kSubsample;
            sub.width = std::stoull(need(sp + ".sub.width"));
            stage.subsample = sub;
        }
        const std::size_t nblocks = std::stoull(need(sp + ".blocks"));
        for (std::size_t b = 0; b < nblocks; ++b) {
            const std::string bp = block_path(s + 1, b);
            BlockSpec blk;
            blk.kind = block_kind_parse(need(bp + ".kind"));
            blk.width = std::stoull(need(bp + ".width"));
            if (blk.kind == BlockKind::kMsa) {
                blk.heads = std::stoull(need(bp + ".heads"));
                blk.window = window_parse(need(bp + ".window"));
            }
            if (blk.kind == BlockKind::kMlp || blk.kind == BlockKind::kConvBottleneck)
                blk.expansion = std::stod(need(bp + ".expansion"));
            if (blk.kind == BlockKind::kBoxBlur) blk.blur = std::stoi(need(bp + ".blur"));
            stage.blocks.push_back(blk);
        }
        spec.stages.push_back(std::move(stage));
    }
    spec.validate();
    return spec;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
    const auto decls = param_decls(spec);
    Rng rng(seed);
    Model m;
    m.spec = spec;
    for (const auto& d : decls) {
        Tensor v;
        switch (d.init) {
            case Init::kConvHe: {
                const double fan_in = static_cast<double>(d.shape[1] * d.shape[2] * d.shape[3]);
                v = rng.gaussian_tensor(d.shape, std::sqrt(2.0 / fan_in));
                break;
            }
            case Init::kLinearSmall: {
                // token-model linears follow the ViT-family convention of a
                // small fixed scale rather than fan-based scaling
                (void)d;
                v = rng.gaussian_tensor(d.shape, 0.02);
                break;
            }
            case Init::kZeros: v = Tensor::zeros(d.shape); break;
            case Init::kOnes: v = Tensor::ones(d.shape); break;
            case Init::kToken: v = rng.gaussian_tensor(d.shape, 0.02); break;
        }
        m.params.segments.push_back({d.name, std::move(v), d.kind, d.decay});
    }
    return m;
}

Var BoundParams::operator()(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw std::invalid_argument("model: unknown parameter '" + name + "'");
    return leaves[it->second];
}

BoundParams bind_model(Tape& tape, const ModelSpec& spec, const ParamVector& theta) {
    (void)spec;
    BoundParams bp;
    bp.leaves = bind_params(tape, theta);
    for (std::size_t i = 0; i < theta.segments.size(); ++i) bp.index[theta.segments[i].name] = i;
    return bp;
}

BoundParams bind_model(Tape& tape, const Model& m) { return bind_model(tape, m.spec, m.params); }

namespace {

struct Flow {
    Var v;
    bool tokens = false;
    std::size_t grid_h = 0, grid_w = 0;
    bool has_cls = false;
};

Var pre_act_conv(Tape& t, const BoundParams& bp, const std::string& prefix, Var x, std::size_t stride) {
    Var y = t.relu(batch_norm(t, x, bp(prefix + ".bn.g"), bp(prefix + ".bn.b")));
    return conv2d(t, y, bp(prefix + ".w"), Var{}, stride, 1);
}

}  // namespace

ForwardResult model_forward(Tape& t, const ModelSpec& spec, const BoundParams& bp, Var images,
                            const RunOptions& opts) {
    spec.validate();
    const Shape is = t.shape(images);
    if (is.size() != 4 || is[1] != spec.in_channels || is[2] != spec.image_extent || is[3] != spec.image_extent)
        throw std::invalid_argument("model_forward: image batch " + shape_str(is) + " does not match spec (" +
                                    std::to_string(spec.in_channels) + "," + std::to_string(spec.image_extent) +
                                    ")");
    const std::size_t bsz = is[0];
    ForwardResult res;
    auto ablated = [&](const std::string& path) { return opts.ablate && opts.ablate->count(path) > 0; };
    auto record = [&](const std::string& path, BlockKind kind, int stage, int index, const Flow& f,
                      bool residual) {
        if (!opts.record) return;
        res.acts.push_back({path, kind, stage, index, f.v, f.tokens, f.grid_h, f.grid_w, f.has_cls, residual});
    };

    Flow f;
    if (spec.stem.kind == BlockKind::kPatchEmbed) {
        Var tok = patch_embed(t, images, spec.patch, bp("stem.w"), bp("stem.b"));
        f.grid_h = spec.image_extent / spec.patch;
        f.grid_w = f.grid_h;
        if (spec.head == HeadMode::kCls) {
            Var cls = t.add(bp("stem.cls"), t.constant(Tensor::zeros({bsz, 1, spec.stem.width})));
            tok = t.concat(cls, tok, 1);
            f.has_cls = true;
        }
        if (spec.pos_embed) tok = t.add(tok, bp("stem.pos"));
        f.v = tok;
        f.tokens = true;
    } else {
        f.v = conv2d(t, images, bp("stem.w"), Var{}, 1, 1);
        f.grid_h = spec.image_extent;
        f.grid_w = spec.image_extent;
        f.tokens = false;
    }
    record("stem", spec.stem.kind, 0, -1, f, false);

    std::size_t width = spec.stem.width;
    for (std::size_t s = 0; s < spec.stages.size(); ++s) {
        const StageSpec& stage = spec.stages[s];
        const std::string sp = stage_path(s + 1);
        if (stage.subsample) {
            const bool was_tokens = f.tokens;
            Var x = was_tokens ? tokens_to_map(t, f.v, f.grid_h, f.grid_w) : f.v;
            Var y = pre_act_conv(t, bp, sp + ".sub", x, 2);
            f.grid_h /= 2;
            f.grid_w /= 2;
            width = stage.subsample->width;
            f.v = was_tokens ? map_to_tokens(t, y) : y;
            record(sp + ".sub", BlockKind::kSubsample, static_cast<int>(s + 1), -1, f, false);
        }
        for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
            const BlockSpec& blk = stage.blocks[b];
            const std::string path = block_path(s + 1, b);
            switch (blk.kind) {
                case BlockKind::kConvBasic:
                case BlockKind::kConvBottleneck: {
                    if (f.tokens) {
                        f.v = tokens_to_map(t, f.v, f.grid_h, f.grid_w);
                        f.tokens = false;
                    }
                    if (ablated(path)) break;
                    Var x = f.v;
                    Var br;
                    if (blk.kind == BlockKind::kConvBasic) {
                        br = t.relu(batch_norm(t, x, bp(path + ".bn1.g"), bp(path + ".bn1.b")));
                        br = conv2d(t, br, bp(path + ".conv1.w"), Var{}, 1, 1);
                        br = t.relu(batch_norm(t, br, bp(path + ".bn2.g"), bp(path + ".bn2.b")));
                        br = conv2d(t, br, bp(path + ".conv2.w"), Var{}, 1, 1);
                    } else {
                        br = t.relu(batch_norm(t, x, bp(path + ".bn1.g"), bp(path + ".bn1.b")));
                        br = conv2d(t, br, bp(path + ".conv1.w"), Var{}, 1, 0);
                        br = t.relu(batch_norm(t, br, bp(path + ".bn2.g"), bp(path + ".bn2.b")));
                        br = conv2d(t, br, bp(path + ".conv2.w"), Var{}, 1, 1);
                        br = t.relu(batch_norm(t, br, bp(path + ".bn3.g"), bp(path + ".bn3.b")));
                        br = conv2d(t, br, bp(path + ".conv3.w"), Var{}, 1, 0);
                    }
                    f.v = t.add(x, br);
                    break;
                }
                case BlockKind::kMsa: {
                    const bool was_map = !f.tokens;
                    Var x = was_map ? map_to_tokens(t, f.v) : f.v;
                    if (ablated(path)) {
                        f.v = was_map ? f.v : x;
                        break;
                    }
                    Var h = layer_norm(t, x, bp(path + ".ln.g"), bp(path + ".ln.b"));
                    AttentionVars av;
                    av.heads = blk.heads;
                    av.head_dim = width / blk.heads;
                    av.window = blk.window;
                    av.wq = bp(path + ".wq");
                    av.wk = bp(path + ".wk");
                    av.wv = bp(path + ".wv");
                    av.wo = bp(path + ".wo");
                    if (blk.window.kind == WindowKind::kLocalPartition) av.rel_bias = bp(path + ".rel");
                    Var y = t.add(x, msa_forward(t, h, av, f.grid_h, f.grid_w));
                    f.v = was_map ? tokens_to_map(t, y, f.grid_h, f.grid_w) : y;
                    f.tokens = !was_map;
                    break;
                }
                case BlockKind::kMlp: {
                    const bool was_map = !f.tokens;
                    Var x = was_map ? map_to_tokens(t, f.v) : f.v;
                    if (ablated(path)) {
                        f.v = was_map ? f.v : x;
                        break;
                    }
                    Var h = layer_norm(t, x, bp(path + ".ln.g"), bp(path + ".ln.b"));
                    h = t.add(t.matmul(h, bp(path + ".w1")), bp(path + ".b1"));
                    h = t.gelu(h);
                    h = t.add(t.matmul(h, bp(path + ".w2")), bp(path + ".b2"));
                    Var y = t.add(x, h);
                    f.v = was_map ? tokens_to_map(t, y, f.grid_h, f.grid_w) : y;
                    f.tokens = !was_map;
                    break;
                }
                case BlockKind::kBoxBlur: {
                    if (f.tokens) {
                        f.v = tokens_to_map(t, f.v, f.grid_h, f.grid_w);
                        f.tokens = false;
                    }
                    f.v = t.box_blur(f.v, blk.blur);
                    break;
                }
                default: throw std::invalid_argument("model_forward: unsupported block kind at " + path);
            }
            const bool residual = blk.kind == BlockKind::kConvBasic || blk.kind == BlockKind::kConvBottleneck ||
                                  blk.kind == BlockKind::kMsa || blk.kind == BlockKind::kMlp;
            record(path, blk.kind, static_cast<int>(s + 1), static_cast<int>(b), f, residual);
        }
    }

    Var feat = f.v;
    if (f.tokens) {
        feat = layer_norm(t, feat, bp("head.norm.g"), bp("head.norm.b"));
    } else {
        feat = t.relu(batch_norm(t, feat, bp("head.norm.g"), bp("head.norm.b")));
    }
    res.logits = classifier_head(t, feat, spec.head, f.has_cls, bp("head.w"), bp("head.b"));
    return res;
}

Tensor model_logits(const Model& m, const Tensor& images) {
    Tape t;
    auto bp = bind_model(t, m);
    Var img = t.constant(images);
    auto r = model_forward(t, m.spec, bp, img);
    return t.val(r.logits);
}

std::vector<std::string> removable_units(const ModelSpec& spec) {
    std::vector<std::string> out;
    for (std::size_t s = 0; s < spec.stages.size(); ++s)
        for (std::size_t b = 0; b < spec.stages[s].blocks.size(); ++b) {
            const BlockKind k = spec.stages[s].blocks[b].kind;
            if (k == BlockKind::kConvBasic || k == BlockKind::kConvBottleneck || k == BlockKind::kMsa ||
                k == BlockKind::kMlp)
                out.push_back(block_path(s + 1, b));
        }
    return out;
}

}  // namespace vitlab
