#pragma once

#include <string>
#include <vector>

#include "vitlab/model.hpp"

namespace vitlab {

// Size knobs; zero/empty fields take preset defaults.
struct PresetKnobs {
    std::size_t classes = 10;
    std::size_t in_channels = 3;
    std::size_t extent = 32;
    std::size_t width = 0;                    // base width / embedding dim
    std::size_t depth = 0;                    // MSA/MLP pairs (vit family) or blocks per stage (resnet)
    std::size_t heads = 0;                    // vit heads
    std::size_t patch = 0;                    // patch extent
    int window = 0;                           // swin partition window
    HeadMode head = HeadMode::kGap;
    bool head_set = false;                    // false -> preset default
    bool bottleneck = false;                  // resnet block flavor
    std::vector<std::size_t> depths;          // per-stage block counts (resnet/pit)
    std::size_t n_msa = 0;                    // alternet
    std::vector<std::size_t> heads_schedule;  // alternet / build-up
};

// tiny_resnet | tiny_vit | tiny_pit | tiny_swin | alternet; unknown names are
// rejected.
ModelSpec make_preset(const std::string& name, const PresetKnobs& knobs = {});

// Deterministic replacement positions (stage index, block index; both
// 0-based) of the build-up rule: stage ends from the last stage down to stage
// 2 first, then the end-2 slots in the same stage order, and so on; stage 1
// only after every later-stage slot is exhausted.
std::vector<std::pair<std::size_t, std::size_t>> buildup_positions(const ModelSpec& baseline, std::size_t n_msa);

// Replaces Conv blocks with local MSA blocks (partition window, relative
// position bias) at the first n_msa positions; heads_schedule is per stage.
// Pads the last stage with one extra Conv block first when its count is odd.
ModelSpec apply_buildup_rule(const ModelSpec& baseline, std::size_t n_msa,
                             const std::vector<std::size_t>& heads_schedule);

}  // namespace vitlab
