#include "vpkit/error.hpp"
#include "vpkit/vp_encoder.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace vpkit;

namespace {

EncoderConfig small_cfg() {
    EncoderConfig cfg;
    cfg.num_frequencies = 8;
    cfg.hidden_dim = 12;
    cfg.llm_dim = 32;
    cfg.capacity = 16;
    cfg.seed = 7;
    return cfg;
}

VisualPromptSet three_prompts() {
    return {PointPrompt{0.3, 0.4}, BoxPrompt{0.1, 0.2, 0.5, 0.6}, PointPrompt{0.9, 0.05}};
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("vpkit_" + name);
}

} // namespace

TEST(Fourier, OriginAndNorm) {
    EncoderConfig cfg;
    const auto p = init_params(cfg);
    const auto at0 = fourier_encode({0, 0}, p.freq);
    ASSERT_EQ(at0.size(), 128);
    for (int i = 0; i < 64; ++i) {
        EXPECT_DOUBLE_EQ(at0(i), 1.0);
        EXPECT_DOUBLE_EQ(at0(64 + i), 0.0);
    }
    EXPECT_NEAR(fourier_encode({0.37, 0.81}, p.freq).squaredNorm(), 64.0, 1e-9);
}

TEST(Fourier, AnalyticPair) {
    Eigen::MatrixXd b(1, 2);
    b << 1.0, 0.0;
    const auto v = fourier_encode({0.5, 0.25}, b);
    EXPECT_NEAR(v(0), -1.0, 1e-12);
    EXPECT_NEAR(v(1), std::sin(std::numbers::pi), 1e-12);
}

TEST(Embed, ShapeAndValidity) {
    auto cfg = small_cfg();
    const auto p = init_params(cfg);
    const auto prompts = three_prompts();
    const auto out = embed_prompts(prompts, p, cfg);
    EXPECT_EQ(out.tokens.rows(), 18);
    EXPECT_EQ(out.tokens.cols(), 32);
    std::vector<bool> expected(16, false);
    expected[0] = expected[1] = expected[2] = true;
    EXPECT_EQ(out.validity, expected);
    // rows 4..16 hold the 13 empty slots
    for (int i = 5; i < 17; ++i)
        EXPECT_EQ(out.tokens.row(i), out.tokens.row(4));
    EXPECT_NE(out.tokens.row(3), out.tokens.row(4));
}

TEST(Embed, Errors) {
    auto cfg = small_cfg();
    cfg.capacity = 2;
    const auto p = init_params(cfg);
    try {
        embed_prompts(three_prompts(), p, cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::CapacityExceeded);
    }
    try {
        embed_prompts(VisualPromptSet{}, p, cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyPromptSet);
    }
}

TEST(Embed, PermutationPermutesValidRows) {
    auto cfg = small_cfg();
    const auto p = init_params(cfg);
    auto prompts = three_prompts();
    const auto a = embed_prompts(prompts, p, cfg);
    std::swap(prompts[0], prompts[2]);
    const auto b = embed_prompts(prompts, p, cfg);
    EXPECT_EQ(a.tokens.row(1), b.tokens.row(3));
    EXPECT_EQ(a.tokens.row(3), b.tokens.row(1));
    EXPECT_EQ(a.tokens.row(2), b.tokens.row(2));
    for (int r = 4; r < 18; ++r)
        EXPECT_EQ(a.tokens.row(r), b.tokens.row(r));
    EXPECT_EQ(a.tokens.row(0), b.tokens.row(0));
}

TEST(Embed, FreeFormReducedToEnclosingBox) {
    auto cfg = small_cfg();
    const auto p = init_params(cfg);
    VisualPromptSet poly{FreeFormPrompt{{{0.1, 0.2}, {0.5, 0.3}, {0.3, 0.6}}}};
    VisualPromptSet box{BoxPrompt{0.1, 0.2, 0.5, 0.6}};
    EXPECT_EQ(embed_prompts(poly, p, cfg).tokens, embed_prompts(box, p, cfg).tokens);
}

TEST(Embed, LocalityUnderPerturbation) {
    auto cfg = small_cfg();
    const auto p = init_params(cfg);
    auto prompts = three_prompts();
    const auto a = embed_prompts(prompts, p, cfg);
    prompts[1] = BoxPrompt{0.15, 0.2, 0.5, 0.7};
    const auto b = embed_prompts(prompts, p, cfg);
    for (int r = 0; r < 18; ++r) {
        if (r == 2)
            EXPECT_NE(a.tokens.row(r), b.tokens.row(r));
        else
            EXPECT_EQ(a.tokens.row(r), b.tokens.row(r));
    }
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
    auto cfg = small_cfg();
    const auto p = init_params(cfg);
    auto g = encoder_backward(three_prompts(), p, cfg, Eigen::MatrixXd::Zero(18, 32));
    for (const auto& t : tensors(g))
        for (Eigen::Index k = 0; k < t.size(); ++k)
            ASSERT_EQ(t.at(k), 0.0) << t.name;
}

TEST(Backward, InvalidTokenOnlyFromInvalidSlots) {
    auto cfg = small_cfg();
    const auto p = init_params(cfg);
    Eigen::MatrixXd up = Eigen::MatrixXd::Zero(18, 32);
    up.row(1).setOnes(); // a valid slot only
    auto g = encoder_backward(three_prompts(), p, cfg, up);
    EXPECT_EQ(g.invalid_token.norm(), 0.0);
    EXPECT_GT(g.valid_token.norm(), 0.0);
    up.setZero();
    up.row(10).setOnes();
    g = encoder_backward(three_prompts(), p, cfg, up);
    EXPECT_GT(g.invalid_token.norm(), 0.0);
    EXPECT_EQ(g.valid_token.norm(), 0.0);
    EXPECT_EQ(g.freq.norm(), 0.0);
}

TEST(Backward, BadShape) {
    auto cfg = small_cfg();
    const auto p = init_params(cfg);
    try {
        encoder_backward(three_prompts(), p, cfg, Eigen::MatrixXd::Zero(17, 32));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::BadGradShape);
    }
}

TEST(GradCheck, SmallAndMinimalConfigs) {
    EncoderConfig minimal;
    minimal.num_frequencies = 1;
    minimal.hidden_dim = 2;
    minimal.llm_dim = 2;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        EXPECT_LT(grad_check(small_cfg(), seed).max_relative_error, 1e-4);
        EXPECT_LT(grad_check(minimal, seed).max_relative_error, 1e-4);
    }
}

TEST(GradCheck, Deterministic) {
    const auto a = grad_check(small_cfg(), 5);
    const auto b = grad_check(small_cfg(), 5);
    EXPECT_EQ(a.max_relative_error, b.max_relative_error);
    EXPECT_EQ(a.entries_checked, b.entries_checked);
}

TEST(Params, DeterministicInit) {
    EXPECT_TRUE(init_params(small_cfg()) == init_params(small_cfg()));
    auto other = small_cfg();
    other.seed = 8;
    EXPECT_FALSE(init_params(small_cfg()) == init_params(other));
}

TEST(Params, RoundTripBitExact) {
    EncoderConfig cfg;
    const auto p = init_params(cfg);
    const auto path = temp_file("roundtrip.vpe");
    save_params(p, cfg, path);
    const auto loaded = load_params(path);
    EXPECT_TRUE(loaded.params == p);
    EXPECT_EQ(loaded.config.capacity, 16);
    std::filesystem::remove(path);
}

TEST(Params, TruncatedAndMismatched) {
    auto cfg = small_cfg();
    const auto path = temp_file("trunc.vpe");
    save_params(init_params(cfg), cfg, path);
    auto expect_bad = [&](auto fn) {
        try {
            fn();
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::BadParamsFile);
        }
    };
    auto other = cfg;
    other.capacity = 8;
    expect_bad([&] { load_params(path, other); });
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
    expect_bad([&] { load_params(path); });
    {
        std::ofstream os(path, std::ios::trunc);
        os << "NOPE {}\n";
    }
    expect_bad([&] { load_params(path); });
    std::filesystem::remove(path);
}
