#include <doctest.h>

#include <cmath>

#include "vitlab/model.hpp"
#include "vitlab/presets.hpp"
#include "vitlab/rng.hpp"

using namespace vitlab;

TEST_CASE("build_model: degenerate zero-stage spec is a GAP linear probe") {
    ModelSpec spec;
    spec.in_channels = 1;
    spec.image_extent = 8;
    spec.classes = 3;
    spec.stem.kind = BlockKind::kConvBasic;
    spec.stem.width = 4;
    spec.head = HeadMode::kGap;
    Model m = build_model(spec, 9);
    Rng rng(10);
    Tensor img = rng.gaussian_tensor({2, 1, 8, 8});
    const Tensor logits = model_logits(m, img);
    REQUIRE(logits.shape == Shape{2, 3});

    // oracle: stem conv -> head batch-norm+relu -> spatial mean -> linear
    Tape t;
    auto bp = bind_model(t, m);
    Var x = conv2d(t, t.constant(img), bp("stem.w"), Var{}, 1, 1);
    x = t.relu(batch_norm(t, x, bp("head.norm.g"), bp("head.norm.b")));
    x = t.mean(t.mean(x, 3, false), 2, false);
    x = t.add(t.matmul(x, bp("head.w")), bp("head.b"));
    CHECK(t.val(x).same_bits(logits));
}

TEST_CASE("build_model: tiny_resnet forward shape contract") {
    PresetKnobs k;
    k.extent = 16;
    k.in_channels = 1;
    k.classes = 5;
    k.width = 4;
    ModelSpec spec = make_preset("tiny_resnet", k);
    Model m = build_model(spec, 1);
    Rng rng(2);
    const Tensor logits = model_logits(m, rng.gaussian_tensor({3, 1, 16, 16}));
    CHECK(logits.shape == Shape{3, 5});
}

TEST_CASE("build_model: same spec and seed build bit-identical models") {
    PresetKnobs k;
    k.extent = 16;
    k.in_channels = 1;
    k.width = 16;
    k.depth = 2;
    k.patch = 4;
    ModelSpec spec = make_preset("tiny_vit", k);
    Model a = build_model(spec, 123);
    Model b = build_model(spec, 123);
    CHECK(a.params.same_bits(b.params));
    Rng rng(5);
    Tensor img = rng.gaussian_tensor({2, 1, 16, 16});
    CHECK(model_logits(a, img).same_bits(model_logits(b, img)));

    Model c = build_model(spec, 124);
    CHECK(!c.params.same_bits(a.params));
}

TEST_CASE("build_model: invalid spec rejected with offending block path") {
    PresetKnobs k;
    k.width = 8;
    ModelSpec spec = make_preset("tiny_resnet", k);
    spec.stages[2].blocks[1].width = 999;
    try {
        build_model(spec, 0);
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("s3.b1") != std::string::npos);
    }
}

TEST_CASE("buildup: n_msa=0 leaves the baseline unchanged") {
    PresetKnobs k;
    k.width = 8;
    ModelSpec base = make_preset("tiny_resnet", k);
    ModelSpec out = apply_buildup_rule(base, 0, {1, 2, 4, 8});
    CHECK(out == base);
}

TEST_CASE("buildup: [3,4,6,4] layout, paper schedule") {
    PresetKnobs k;
    k.width = 96;
    k.bottleneck = true;
    k.depths = {3, 4, 6, 3};  // padded to [3,4,6,4] by the rule
    k.extent = 32;
    ModelSpec base = make_preset("tiny_resnet", k);
    const std::vector<std::size_t> schedule = {3, 6, 12, 24};

    SUBCASE("n=1 replaces only the final block of stage 4") {
        ModelSpec out = apply_buildup_rule(base, 1, schedule);
        REQUIRE(out.stages[3].blocks.size() == 4);
        CHECK(out.stages[3].blocks[3].kind == BlockKind::kMsa);
        CHECK(out.stages[3].blocks[3].heads == 24);
        for (std::size_t s = 0; s < 4; ++s)
            for (std::size_t b = 0; b < out.stages[s].blocks.size(); ++b)
                if (!(s == 3 && b == 3)) CHECK(out.stages[s].blocks[b].kind == BlockKind::kConvBottleneck);
    }
    SUBCASE("n=4 gives stage-2/3/4 ends plus stage-4 end-2 with heads [6,12,24,24]") {
        ModelSpec out = apply_buildup_rule(base, 4, schedule);
        auto is_msa = [&](std::size_t s, std::size_t b) { return out.stages[s].blocks[b].kind == BlockKind::kMsa; };
        CHECK(is_msa(1, 3));
        CHECK(out.stages[1].blocks[3].heads == 6);
        CHECK(is_msa(2, 5));
        CHECK(out.stages[2].blocks[5].heads == 12);
        CHECK(is_msa(3, 3));
        CHECK(out.stages[3].blocks[3].heads == 24);
        CHECK(is_msa(3, 1));
        CHECK(out.stages[3].blocks[1].heads == 24);
        std::size_t msa_count = 0;
        for (const auto& st : out.stages)
            for (const auto& b : st.blocks) msa_count += b.kind == BlockKind::kMsa;
        CHECK(msa_count == 4);
        // stage 1 untouched
        for (const auto& b : out.stages[0].blocks) CHECK(b.kind == BlockKind::kConvBottleneck);
    }
    SUBCASE("replacement preserves widths and subsample placement") {
        ModelSpec out = apply_buildup_rule(base, 4, schedule);
        ModelSpec padded = base;
        padded.stages.back().blocks.push_back(padded.stages.back().blocks.back());
        REQUIRE(out.stages.size() == padded.stages.size());
        for (std::size_t s = 0; s < out.stages.size(); ++s) {
            CHECK(out.stages[s].subsample == padded.stages[s].subsample);
            REQUIRE(out.stages[s].blocks.size() == padded.stages[s].blocks.size());
            for (std::size_t b = 0; b < out.stages[s].blocks.size(); ++b)
                CHECK(out.stages[s].blocks[b].width == padded.stages[s].blocks[b].width);
        }
    }
    SUBCASE("positions are deterministic and prefix-stable in n") {
        ModelSpec padded = base;
        padded.stages.back().blocks.push_back(padded.stages.back().blocks.back());
        const auto p4 = buildup_positions(padded, 4);
        const auto p4b = buildup_positions(padded, 4);
        CHECK(p4 == p4b);
        const auto p7 = buildup_positions(padded, 7);
        for (std::size_t i = 0; i < 4; ++i) CHECK(p7[i] == p4[i]);
    }
    SUBCASE("for n >= stages-1 every stage except stage 1 ends with an MSA") {
        for (std::size_t n = 3; n <= 6; ++n) {
            ModelSpec out = apply_buildup_rule(base, n, schedule);
            for (std::size_t s = 1; s < out.stages.size(); ++s)
                CHECK(out.stages[s].blocks.back().kind == BlockKind::kMsa);
        }
    }
    SUBCASE("requesting more slots than exist is rejected") {
        CHECK_THROWS_AS(apply_buildup_rule(base, 100, schedule), std::invalid_argument);
    }
}

TEST_CASE("make_preset: block sequences and windows") {
    SUBCASE("tiny_vit depth 2 -> [MSA, MLP, MSA, MLP]") {
        PresetKnobs k;
        k.depth = 2;
        ModelSpec spec = make_preset("tiny_vit", k);
        REQUIRE(spec.stages.size() == 1);
        REQUIRE(spec.stages[0].blocks.size() == 4);
        CHECK(spec.stages[0].blocks[0].kind == BlockKind::kMsa);
        CHECK(spec.stages[0].blocks[1].kind == BlockKind::kMlp);
        CHECK(spec.stages[0].blocks[2].kind == BlockKind::kMsa);
        CHECK(spec.stages[0].blocks[3].kind == BlockKind::kMlp);
    }
    SUBCASE("tiny_swin: patch 1 on 32x32 gives a 32x32 stage-1 grid with 4x4 windows") {
        PresetKnobs k;
        k.extent = 32;
        k.patch = 1;
        k.window = 4;
        ModelSpec spec = make_preset("tiny_swin", k);
        CHECK(spec.patch == 1);
        CHECK(spec.image_extent / spec.patch == 32);
        CHECK(spec.stages[0].blocks[0].window == WindowSpec::partition(4));
    }
    SUBCASE("alternet == buildup over tiny_resnet") {
        PresetKnobs k;
        k.width = 8;
        k.n_msa = 3;
        ModelSpec a = make_preset("alternet", k);
        PresetKnobs kb = k;
        kb.n_msa = 0;
        ModelSpec b = apply_buildup_rule(make_preset("tiny_resnet", kb), 3, {1, 2, 4, 8});
        CHECK(a == b);
    }
    SUBCASE("unknown preset rejected") { CHECK_THROWS_AS(make_preset("resnet9000", {}), std::invalid_argument); }
}

TEST_CASE("modelspec: serialization round-trips exactly") {
    PresetKnobs k;
    k.width = 16;
    k.extent = 16;
    k.patch = 2;
    for (const char* name : {"tiny_resnet", "tiny_vit", "tiny_pit", "tiny_swin"}) {
        ModelSpec spec = make_preset(name, k);
        const std::string text = spec.serialize();
        const ModelSpec back = ModelSpec::deserialize(text);
        CHECK(back == spec);
        CHECK(back.serialize() == text);
    }
    PresetKnobs ka;
    ka.width = 8;
    ka.n_msa = 4;
    ModelSpec alter = make_preset("alternet", ka);
    CHECK(ModelSpec::deserialize(alter.serialize()) == alter);
}

TEST_CASE("model: activations are retrievable per block with stage/index") {
    PresetKnobs k;
    k.extent = 16;
    k.in_channels = 1;
    k.width = 8;
    k.depth = 1;
    k.patch = 4;
    ModelSpec spec = make_preset("tiny_pit", k);
    Model m = build_model(spec, 3);
    Tape t;
    auto bp = bind_model(t, m);
    Rng rng(4);
    Var img = t.constant(rng.gaussian_tensor({2, 1, 16, 16}));
    RunOptions opts;
    opts.record = true;
    auto r = model_forward(t, m.spec, bp, img, opts);
    REQUIRE(!r.acts.empty());
    CHECK(r.acts.front().path == "stem");
    // every stage block present, grids tracked
    std::size_t n_blocks = 0;
    for (const auto& a : r.acts)
        if (a.index >= 0) ++n_blocks;
    std::size_t want = 0;
    for (const auto& st : spec.stages) want += st.blocks.size();
    CHECK(n_blocks == want);
    for (const auto& a : r.acts) {
        CHECK(a.grid_h > 0);
        if (a.tokens) CHECK(t.shape(a.out)[1] == a.grid_h * a.grid_w + (a.has_cls ? 1 : 0));
    }
}

TEST_CASE("model: ablating a residual unit equals the identity on that branch") {
    PresetKnobs k;
    k.extent = 8;
    k.in_channels = 1;
    k.width = 4;
    k.depths = {1, 1};
    ModelSpec spec = make_preset("tiny_resnet", k);
    Model m = build_model(spec, 7);
    const auto units = removable_units(spec);
    REQUIRE(units.size() == 2);
    CHECK(units[0] == "s1.b0");

    Rng rng(8);
    Tensor img = rng.gaussian_tensor({2, 1, 8, 8});
    // zero the branch weights of s1.b0 by hand: ablation must equal that model
    Model zeroed = m;
    for (auto& seg : zeroed.params.segments)
        if (seg.name.rfind("s1.b0.conv2", 0) == 0)
            for (double& v : seg.value.data) v = 0.0;

    Tape t;
    auto bp = bind_model(t, m);
    std::set<std::string> ablate = {"s1.b0"};
    RunOptions opts;
    opts.ablate = &ablate;
    auto r = model_forward(t, m.spec, bp, t.constant(img), opts);
    const Tensor got = t.val(r.logits);
    const Tensor want = model_logits(zeroed, img);
    CHECK(got.same_bits(want));
}
