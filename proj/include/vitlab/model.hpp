#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vitlab/blocks.hpp"
#include "vitlab/param_vector.hpp"
#include "vitlab/tape.hpp"

namespace vitlab {

enum class BlockKind : std::uint8_t {
    kConvBottleneck,
    kConvBasic,
    kMsa,
    kMlp,
    kPatchEmbed,
    kSubsample,
    kBoxBlur,
};

std::string block_kind_str(BlockKind k);
BlockKind block_kind_parse(const std::string& s);

struct BlockSpec {
    BlockKind kind = BlockKind::kConvBasic;
    std::size_t width = 0;      // output channels / embedding dim
    std::size_t heads = 0;      // MSA only
    WindowSpec window;          // MSA only
    double expansion = 0.0;     // MLP / bottleneck
    int blur = 0;               // BoxBlur extent

    bool operator==(const BlockSpec&) const = default;
};

struct StageSpec {
    std::optional<BlockSpec> subsample;  // runs on stage entry
    std::vector<BlockSpec> blocks;

    bool operator==(const StageSpec&) const = default;
};

// Declarative stage-structured architecture description.
struct ModelSpec {
    std::size_t in_channels = 3;
    std::size_t image_extent = 32;
    std::size_t classes = 10;
    BlockSpec stem;            // kPatchEmbed (token models) or kConvBasic (bare 3x3 conv)
    std::size_t patch = 1;     // patch extent for a kPatchEmbed stem
    bool pos_embed = false;    // learned absolute positional embedding after the stem
    HeadMode head = HeadMode::kGap;
    std::vector<StageSpec> stages;

    bool operator==(const ModelSpec&) const = default;

    void validate() const;  // throws naming the offending block path
    std::string serialize() const;
    static ModelSpec deserialize(const std::string& text);
};

// One block output captured during a recorded forward pass.
struct ActRecord {
    std::string path;
    BlockKind kind;
    int stage;  // 0 = stem, stages are 1-based
    int index;  // block index in stage; -1 for stem/subsample
    Var out;
    bool tokens;  // token form (B,N,D) vs map form (B,C,H,W)
    std::size_t grid_h = 0, grid_w = 0;
    bool has_cls = false;
    bool residual_unit = false;  // ablatable in lesion studies
};

struct RunOptions {
    bool record = false;
    const std::set<std::string>* ablate = nullptr;  // residual branches forced to zero
};

struct ForwardResult {
    Var logits;
    std::vector<ActRecord> acts;
};

// Named parameter leaves bound on a tape, aligned with ParamVector order.
struct BoundParams {
    std::vector<Var> leaves;
    std::unordered_map<std::string, std::size_t> index;

    Var operator()(const std::string& name) const;
};

struct Model {
    ModelSpec spec;
    ParamVector params;
};

// Deterministic parameter materialization from (spec, seed); same inputs give
// bit-identical parameters.
Model build_model(const ModelSpec& spec, std::uint64_t seed);

BoundParams bind_model(Tape& tape, const Model& m);
BoundParams bind_model(Tape& tape, const ModelSpec& spec, const ParamVector& theta);

// Forward pass over an image batch (B,C,H,W) -> logits (B,classes).
ForwardResult model_forward(Tape& tape, const ModelSpec& spec, const BoundParams& bp, Var images,
                            const RunOptions& opts = {});

// Convenience: fresh tape forward returning logits values.
Tensor model_logits(const Model& m, const Tensor& images);

// Paths of residual units that a lesion study may ablate, in forward order.
std::vector<std::string> removable_units(const ModelSpec& spec);

}  // namespace vitlab
