#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "stenoseg/blocks.hpp"
#include "testutil.hpp"

using namespace stenoseg;
using testutil::gradcheck;
using testutil::rand_tensor;

namespace {

BlockConfig tiny_cfg(BlockKind kind, std::size_t channels = 2) {
    BlockConfig c;
    c.kind = kind;
    c.channels = channels;
    c.state_size = 2;
    c.expansion = 2;
    c.window_size = 2;
    c.head_count = 2;
    return c;
}

const BlockKind kAllKinds[] = {
    BlockKind::MambaBlock, BlockKind::VanillaVSS,  BlockKind::VSS,      BlockKind::ResidualConv,
    BlockKind::UMambaBlock, BlockKind::RVMLayer,   BlockKind::SwinWindowAttention,
};

}  // namespace

TEST_CASE("every block kind preserves the input shape") {
    std::mt19937_64 rng(7);
    for (BlockKind kind : kAllKinds) {
        for (int trial = 0; trial < 3; ++trial) {
            std::uniform_int_distribution<std::size_t> cd{1, 3};
            const std::size_t heads = 2;
            const std::size_t C = heads * cd(rng);  // divisible by head count
            std::uniform_int_distribution<std::size_t> sd{1, 7};
            const std::size_t B = 1 + trial % 2, H = sd(rng), W = sd(rng);
            BlockConfig cfg = tiny_cfg(kind, C);
            cfg.shift = trial == 2;
            auto block = make_block<double>(cfg, rng);
            auto x = rand_tensor(Shape{B, C, H, W}, rng);
            auto y = block->forward(x);
            INFO("kind=" << int(kind) << " B=" << B << " C=" << C << " H=" << H << " W=" << W);
            REQUIRE(y.shape() == x.shape());
        }
    }
}

TEST_CASE("zeroed final projection turns each block into the identity") {
    std::mt19937_64 rng(11);
    const std::size_t B = 2, C = 4, H = 4, W = 4;
    auto x = rand_tensor(Shape{B, C, H, W}, rng, -1.0, 1.0, false);
    auto expect_identity = [&](const Tensor<double>& y) {
        REQUIRE(y.shape() == x.shape());
        for (std::size_t i = 0; i < y.numel(); ++i)
            REQUIRE(y.values()[i] == Catch::Approx(x.values()[i]).margin(1e-12));
    };

    SECTION("mamba block: zero out_proj") {
        MambaBlock1D<double> b(tiny_cfg(BlockKind::MambaBlock, C), rng);
        b.out_proj.zero_();
        auto tokens = grid_to_tokens(x);
        auto y = b.forward(tokens);
        for (std::size_t i = 0; i < y.numel(); ++i)
            REQUIRE(y.values()[i] == Catch::Approx(tokens.values()[i]).margin(1e-12));
    }
    SECTION("vanilla vss: zero contract") {
        VanillaVSSBlock<double> b(tiny_cfg(BlockKind::VanillaVSS, C), rng);
        b.contract.zero_();
        expect_identity(b.forward(x));
    }
    SECTION("vss: zero scan_proj and ffn_out") {
        VSSBlock<double> b(tiny_cfg(BlockKind::VSS, C), rng);
        b.scan_proj.zero_();
        b.ffn_out.zero_();
        expect_identity(b.forward(x));
    }
    SECTION("residual conv: zero conv2") {
        ResidualConvBlock<double> b(tiny_cfg(BlockKind::ResidualConv, C), rng);
        b.conv2.zero_();
        expect_identity(b.forward(x));
    }
    SECTION("umamba: zero both conv2 and out_proj") {
        UMambaBlock2D<double> b(tiny_cfg(BlockKind::UMambaBlock, C), rng);
        b.rc1.conv2.zero_();
        b.rc2.conv2.zero_();
        b.mamba.out_proj.zero_();
        expect_identity(b.forward(x));
    }
    SECTION("rvm layer: residual scale zero") {
        RVMLayer<double> b(tiny_cfg(BlockKind::RVMLayer, C), rng);
        b.res_scale.values()[0] = 0.0;
        expect_identity(b.forward(x));
    }
    SECTION("swin: zero attn_proj and mlp_out") {
        auto cfg = tiny_cfg(BlockKind::SwinWindowAttention, C);
        SwinBlock<double> b(cfg, rng);
        b.attn_proj.zero_();
        b.mlp_out.zero_();
        expect_identity(b.forward(x));
        // also through the padded path
        auto x2 = rand_tensor(Shape{1, C, 3, 5}, rng, -1.0, 1.0, false);
        auto y2 = b.forward(x2);
        for (std::size_t i = 0; i < y2.numel(); ++i)
            REQUIRE(y2.values()[i] == Catch::Approx(x2.values()[i]).margin(1e-12));
    }
}

TEST_CASE("finite-difference gradients for every block kind") {
    std::mt19937_64 rng(23);
    const std::size_t B = 1, C = 2, H = 2, W = 2;
    for (BlockKind kind : kAllKinds) {
        DYNAMIC_SECTION("kind " << int(kind)) {
            BlockConfig cfg = tiny_cfg(kind, C);
            auto block = make_block<double>(cfg, rng);
            ParamRegistry<double> reg;
            block->register_params("b", reg);
            auto x = rand_tensor(Shape{B, C, H, W}, rng, -0.8, 0.8);
            std::vector<Tensor<double>*> leaves{&x};
            for (auto& [name, t] : reg.items) leaves.push_back(&t);
            gradcheck([&]() { return sum(square(block->forward(x))); }, leaves,
                      1e-5);
        }
    }
    SECTION("shifted window attention") {
        BlockConfig cfg = tiny_cfg(BlockKind::SwinWindowAttention, C);
        cfg.shift = true;
        auto block = make_block<double>(cfg, rng);
        ParamRegistry<double> reg;
        block->register_params("b", reg);
        auto x = rand_tensor(Shape{1, C, 4, 4}, rng, -0.8, 0.8);
        std::vector<Tensor<double>*> leaves{&x};
        for (auto& [name, t] : reg.items) leaves.push_back(&t);
        gradcheck([&]() { return sum(square(block->forward(x))); }, leaves, 1e-5);
    }
}

TEST_CASE("attention rows are distributions and wrapped pairs are masked") {
    std::mt19937_64 rng(31);
    const std::size_t C = 4, H = 8, W = 8;
    auto cfg = tiny_cfg(BlockKind::SwinWindowAttention, C);
    cfg.window_size = 4;
    cfg.shift = true;
    SwinBlock<double> b(cfg, rng);
    auto x = rand_tensor(Shape{1, C, H, W}, rng, -1.0, 1.0, false);
    b.forward(x);

    const std::size_t win = cfg.window_size, s = win / 2, Lw = win * win;
    const std::size_t nWh = H / win, nWw = W / win, nW = nWh * nWw;
    REQUIRE(b.last_attention.size() == nW * cfg.head_count * Lw * Lw);

    // rows sum to 1
    for (std::size_t row = 0; row < nW * cfg.head_count * Lw; ++row) {
        double acc = 0;
        for (std::size_t j = 0; j < Lw; ++j) acc += b.last_attention[row * Lw + j];
        REQUIRE(acc == Catch::Approx(1.0).epsilon(1e-6));
    }

    // recompute which (window,i,j) pairs straddle the cyclic wrap; their
    // attention weight must be (numerically) zero
    auto band = [&](std::size_t pos, std::size_t extent) {
        if (pos < extent - win) return 0;
        if (pos < extent - s) return 1;
        return 2;
    };
    std::vector<int> region(H * W);
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) region[r * W + c] = band(r, H) * 3 + band(c, W);
    auto rolled = roll_index(H, W, std::ptrdiff_t(s), std::ptrdiff_t(s));
    std::vector<std::size_t> part(nW * Lw);
    for (std::size_t wy = 0; wy < nWh; ++wy)
        for (std::size_t wx = 0; wx < nWw; ++wx)
            for (std::size_t iy = 0; iy < win; ++iy)
                for (std::size_t ix = 0; ix < win; ++ix)
                    part[((wy * nWw + wx) * Lw) + iy * win + ix] =
                        (wy * win + iy) * W + wx * win + ix;
    std::size_t masked_pairs = 0;
    for (std::size_t w = 0; w < nW; ++w)
        for (std::size_t i = 0; i < Lw; ++i)
            for (std::size_t j = 0; j < Lw; ++j) {
                if (region[rolled[part[w * Lw + i]]] == region[rolled[part[w * Lw + j]]]) continue;
                ++masked_pairs;
                for (std::size_t h = 0; h < cfg.head_count; ++h) {
                    const double a = b.last_attention[((w * cfg.head_count + h) * Lw + i) * Lw + j];
                    REQUIRE(a < 1e-8);
                }
            }
    REQUIRE(masked_pairs > 0);
}

TEST_CASE("shifted and unshifted attention differ; roll is invertible") {
    std::mt19937_64 rng(41);
    const std::size_t C = 4, H = 8, W = 8;
    auto cfg = tiny_cfg(BlockKind::SwinWindowAttention, C);
    cfg.window_size = 4;

    // identical parameters, differing only in the shift flag
    std::mt19937_64 rng_a(99), rng_b(99);
    SwinBlock<double> plain(cfg, rng_a);
    cfg.shift = true;
    SwinBlock<double> shifted(cfg, rng_b);

    auto x = rand_tensor(Shape{1, C, H, W}, rng, -1.0, 1.0, false);
    auto ya = plain.forward(x), yb = shifted.forward(x);
    double max_diff = 0;
    for (std::size_t i = 0; i < ya.numel(); ++i)
        max_diff = std::max(max_diff, std::abs(ya.values()[i] - yb.values()[i]));
    REQUIRE(max_diff > 1e-6);

    // composing a roll with its inverse gives the identity permutation
    for (std::ptrdiff_t s : {1, 2, 3}) {
        auto fwd = roll_index(H, W, s, s);
        auto bwd = roll_index(H, W, -s, -s);
        for (std::size_t i = 0; i < H * W; ++i) REQUIRE(bwd[fwd[i]] == i);
    }
}

TEST_CASE("grid/token flattening round trip inside composite blocks") {
    std::mt19937_64 rng(53);
    auto x = rand_tensor(Shape{2, 3, 4, 5}, rng, -2.0, 2.0, false);
    auto back = tokens_to_grid(grid_to_tokens(x), 4, 5);
    REQUIRE(back.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
        REQUIRE(back.values()[i] == x.values()[i]);
}

TEST_CASE("block config validation rejects bad settings") {
    BlockConfig c;
    c.kind = BlockKind::SwinWindowAttention;
    c.channels = 3;
    c.head_count = 2;
    REQUIRE_THROWS_AS(c.validate(), ShapeError);
    c.channels = 0;
    REQUIRE_THROWS_AS(c.validate(), ShapeError);
}

TEST_CASE("parameter registry rejects duplicates and counts scalars") {
    std::mt19937_64 rng(61);
    ParamRegistry<double> reg;
    ResidualConvBlock<double> b(tiny_cfg(BlockKind::ResidualConv, 4), rng);
    b.register_params("x", reg);
    REQUIRE_THROWS_AS(b.register_params("x", reg), ShapeError);
    std::size_t manual = 0;
    for (const auto& [name, t] : reg.items) manual += t.numel();
    REQUIRE(reg.count_scalars() == manual);
    // 2 norms (2*4) + 2 convs (4*4*9+4)
    REQUIRE(manual == 2 * 8 + 2 * (4 * 4 * 9 + 4));
}
