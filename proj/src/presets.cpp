#include "vitlab/presets.hpp"

#include <algorithm>
#include <stdexcept>

namespace vitlab {

namespace {

BlockSpec conv_block(bool bottleneck, std::size_t width) {
    BlockSpec b;
    b.kind = bottleneck ? BlockKind::kConvBottleneck : BlockKind::kConvBasic;
    b.width = width;
    if (bottleneck) b.expansion = 4.0;
    return b;
}

BlockSpec msa_block(std::size_t width, std::size_t heads, WindowSpec window) {
    BlockSpec b;
    b.kind = BlockKind::kMsa;
    b.width = width;
    b.heads = heads;
    b.window = window;
    return b;
}

BlockSpec mlp_block(std::size_t width, double expansion = 4.0) {
    BlockSpec b;
    b.kind = BlockKind::kMlp;
    b.width = width;
    b.expansion = expansion;
    return b;
}

BlockSpec subsample_block(std::size_t width) {
    BlockSpec b;
    b.kind = BlockKind::kSubsample;
    b.width = width;
    return b;
}

ModelSpec tiny_resnet(const PresetKnobs& k) {
    ModelSpec spec;
    spec.classes = k.classes;
    spec.in_channels = k.in_channels;
    spec.image_extent = k.extent;
    spec.head = k.head_set ? k.head : HeadMode::kGap;
    const std::size_t w = k.width ? k.width : 8;
    std::vector<std::size_t> depths = k.depths;
    if (depths.empty()) depths = {k.depth ? k.depth : 2, k.depth ? k.depth : 2, k.depth ? k.depth : 2,
                                  k.depth ? k.depth : 2};
    spec.stem.kind = BlockKind::kConvBasic;
    spec.stem.width = w;
    std::size_t width = w;
    for (std::size_t s = 0; s < depths.size(); ++s) {
        StageSpec stage;
        if (s > 0) {
            width *= 2;
            stage.subsample = subsample_block(width);
        }
        for (std::size_t b = 0; b < depths[s]; ++b) stage.blocks.push_back(conv_block(k.bottleneck, width));
        spec.stages.push_back(std::move(stage));
    }
    return spec;
}

ModelSpec tiny_vit(const PresetKnobs& k) {
    ModelSpec spec;
    spec.classes = k.classes;
    spec.in_channels = k.in_channels;
    spec.image_extent = k.extent;
    spec.head = k.head_set ? k.head : HeadMode::kCls;
    spec.pos_embed = true;
    const std::size_t d = k.width ? k.width : 48;
    const std::size_t heads = k.heads ? k.heads : 2;
    const std::size_t depth = k.depth ? k.depth : 4;
    spec.patch = k.patch ? k.patch : std::max<std::size_t>(1, k.extent / 8);
    spec.stem.kind = BlockKind::kPatchEmbed;
    spec.stem.width = d;
    StageSpec stage;
    for (std::size_t i = 0; i < depth; ++i) {
        stage.blocks.push_back(msa_block(d, heads, WindowSpec::global()));
        stage.blocks.push_back(mlp_block(d));
    }
    spec.stages.push_back(std::move(stage));
    return spec;
}

ModelSpec tiny_pit_or_swin(const PresetKnobs& k, bool swin) {
    ModelSpec spec;
    spec.classes = k.classes;
    spec.in_channels = k.in_channels;
    spec.image_extent = k.extent;
    spec.head = k.head_set ? k.head : HeadMode::kGap;
    spec.pos_embed = !swin;  // swin relies on relative position biases
    const std::size_t d = k.width ? k.width : 16;
    std::vector<std::size_t> depths = k.depths;
    if (depths.empty()) depths = {k.depth ? k.depth : 2, k.depth ? k.depth : 2, k.depth ? k.depth : 2};
    spec.patch = k.patch ? k.patch : (swin ? 1 : 2);
    spec.stem.kind = BlockKind::kPatchEmbed;
    spec.stem.width = d;
    std::size_t width = d;
    std::size_t grid = k.extent / spec.patch;
    std::size_t heads = k.heads ? k.heads : 1;
    for (std::size_t s = 0; s < depths.size(); ++s) {
        StageSpec stage;
        if (s > 0) {
            width *= 2;
            heads *= 2;
            grid /= 2;
            stage.subsample = subsample_block(width);
        }
        WindowSpec win = WindowSpec::global();
        if (swin) {
            const int wz = std::min<std::size_t>(k.window > 0 ? static_cast<std::size_t>(k.window) : 4, grid);
            win = WindowSpec::partition(wz);
        }
        for (std::size_t b = 0; b < depths[s]; ++b) {
            stage.blocks.push_back(msa_block(width, heads, win));
            stage.blocks.push_back(mlp_block(width));
        }
        spec.stages.push_back(std::move(stage));
    }
    return spec;
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> buildup_positions(const ModelSpec& baseline, std::size_t n_msa) {
    const std::size_t nstages = baseline.stages.size();
    std::vector<std::pair<std::size_t, std::size_t>> order;
    // later stages first, one alternate slot per round; stage 1 last
    std::size_t max_blocks = 0;
    for (const auto& st : baseline.stages) max_blocks = std::max(max_blocks, st.blocks.size());
    for (std::size_t r = 0; 2 * r < max_blocks; ++r)
        for (std::size_t s = nstages; s-- > 1;) {
            const std::size_t nb = baseline.stages[s].blocks.size();
            if (nb >= 1 + 2 * r) order.emplace_back(s, nb - 1 - 2 * r);
        }
    if (nstages > 0)
        for (std::size_t r = 0; 2 * r < baseline.stages[0].blocks.size(); ++r)
            order.emplace_back(0, baseline.stages[0].blocks.size() - 1 - 2 * r);
    if (n_msa > order.size())
        throw std::invalid_argument("build-up rule: " + std::to_string(n_msa) + " MSA blocks requested but only " +
                                    std::to_string(order.size()) + " replaceable positions exist");
    order.resize(n_msa);
    return order;
}

ModelSpec apply_buildup_rule(const ModelSpec& baseline, std::size_t n_msa,
                             const std::vector<std::size_t>& heads_schedule) {
    ModelSpec spec = baseline;
    if (spec.stages.empty()) throw std::invalid_argument("build-up rule: baseline has no stages");
    if (heads_schedule.size() < spec.stages.size())
        throw std::invalid_argument("build-up rule: heads schedule shorter than stage count");
    // pad the last stage to an even block count
    auto& last = spec.stages.back().blocks;
    if (last.size() % 2 != 0) last.push_back(last.back());
    for (const auto& st : spec.stages)
        for (const auto& b : st.blocks)
            if (b.kind != BlockKind::kConvBasic && b.kind != BlockKind::kConvBottleneck)
                throw std::invalid_argument("build-up rule: baseline must be a CNN");

    const auto positions = buildup_positions(spec, n_msa);

    // stage grids determine the clamped window extent
    std::vector<std::size_t> grid(spec.stages.size());
    std::size_t g = spec.stem.kind == BlockKind::kPatchEmbed ? spec.image_extent / spec.patch : spec.image_extent;
    for (std::size_t s = 0; s < spec.stages.size(); ++s) {
        if (spec.stages[s].subsample) g /= 2;
        grid[s] = g;
    }
    for (const auto& [s, b] : positions) {
        BlockSpec& blk = spec.stages[s].blocks[b];
        const std::size_t width = blk.width;
        const std::size_t heads = heads_schedule[s];
        if (width % heads != 0)
            throw std::invalid_argument("build-up rule: stage width " + std::to_string(width) +
                                        " not divisible by scheduled heads " + std::to_string(heads));
        const int wz = static_cast<int>(std::min<std::size_t>(4, grid[s]));
        blk = BlockSpec{};
        blk.kind = BlockKind::kMsa;
        blk.width = width;
        blk.heads = heads;
        blk.window = WindowSpec::partition(wz);
    }
    spec.validate();
    return spec;
}

ModelSpec make_preset(const std::string& name, const PresetKnobs& knobs) {
    if (name == "tiny_resnet") return tiny_resnet(knobs);
    if (name == "tiny_vit") return tiny_vit(knobs);
    if (name == "tiny_pit") return tiny_pit_or_swin(knobs, false);
    if (name == "tiny_swin") return tiny_pit_or_swin(knobs, true);
    if (name == "alternet") {
        std::vector<std::size_t> schedule = knobs.heads_schedule;
        if (schedule.empty()) schedule = {1, 2, 4, 8};
        return apply_buildup_rule(tiny_resnet(knobs), knobs.n_msa, schedule);
    }
    throw std::invalid_argument("make_preset: unknown preset '" + name + "'");
}

}  // namespace vitlab
