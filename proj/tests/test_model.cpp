#include <gtest/gtest.h>

#include "support.hpp"

using namespace docxplain;
using namespace dxtest;

namespace {

const InputShape kShape{16, 16, 1};

std::string echo(const std::string& flags = "") {
    return std::string("'") + DOCXPLAIN_ECHO_MODEL + "' " + flags;
}

RasterImage black_rows(int w, int h, int from, int to) {
    RasterImage img(w, h, 1, 1.0f);
    fill_rect(img, {0, from, w, to - from}, 0.0f);
    return img;
}

double mean_darkness(const RasterImage& img) {
    double s = 0.0;
    for (float v : img.data) s += v;
    return 1.0 - s / static_cast<double>(img.data.size());
}

} // namespace

TEST(Constant, ReturnsFixedScores) {
    ConstantClassifier half(kShape, 0.5);
    SplitMix64 rng(1);
    const auto s = half.score(random_raster(rng, 16, 16, 1));
    EXPECT_EQ(s, (ScoreVector{0.5, 0.5}));

    ConstantClassifier seven(kShape, 0.7);
    EXPECT_EQ(seven.score(RasterImage(16, 16, 1))[0], 0.7);
}

TEST(Constant, RejectsDegenerateScoreVectors) {
    EXPECT_THROW(ConstantClassifier(kShape, ScoreVector{1.0}), ArgumentError);
    EXPECT_THROW(ConstantClassifier(kShape, ScoreVector{1.0, NAN}), ArgumentError);
}

TEST(RegionDensity, TopLeftQuadrant) {
    auto f = make_region_density(kShape, {0, 0, 8, 8});
    EXPECT_EQ(f->score(RasterImage(16, 16, 1, 0.0f))[0], 1.0);
    EXPECT_EQ(f->score(black_rows(16, 16, 8, 16))[0], 0.0);
}

TEST(RegionDensity, WholeImageOnHalfBlackPage) {
    auto f = make_region_density(kShape, {0, 0, 16, 16});
    EXPECT_DOUBLE_EQ(f->score(black_rows(16, 16, 0, 8))[0], 0.5);
}

TEST(MultiRegion, WeightedQuadrants) {
    RegionLinearClassifier f(kShape, {{{0, 0, 8, 8}, 0.8}, {{8, 0, 8, 8}, 0.2}});
    RasterImage img(16, 16, 1, 1.0f);
    fill_rect(img, {0, 0, 8, 8}, 0.0f);
    EXPECT_DOUBLE_EQ(f.score(img)[0], 0.8);
    EXPECT_DOUBLE_EQ(f.score(img)[1], 0.2);
}

TEST(MultiRegion, ClampsUnlessAskedNotTo) {
    const std::vector<WeightedRegion> regions{{{0, 0, 4, 4}, 2.0}};
    const RasterImage black(16, 16, 1, 0.0f);
    EXPECT_EQ(RegionLinearClassifier(kShape, regions).score(black)[0], 1.0);
    EXPECT_EQ(RegionLinearClassifier(kShape, regions, false).score(black)[0], 2.0);
}

TEST(MultiRegion, RejectsInvalidGeometry) {
    EXPECT_THROW(RegionLinearClassifier(kShape, {{{10, 10, 8, 8}, 1.0}}), ArgumentError);
    EXPECT_THROW(RegionLinearClassifier(kShape, {{{0, 0, 8, 8}, 0.5}, {{4, 4, 8, 8}, 0.5}}), ArgumentError);
    EXPECT_THROW(RegionLinearClassifier(kShape, {{{0, 0, 8, 8}, INFINITY}}), ArgumentError);
    EXPECT_THROW(RegionLinearClassifier(kShape, {}), ArgumentError);
}

TEST(ScoreBatch, RejectsWrongShapesAndOversizedBatches) {
    ConstantClassifier f(kShape, 0.5);
    EXPECT_THROW(f.score(RasterImage(8, 16, 1)), ShapeError);
    EXPECT_THROW(f.score(RasterImage(16, 16, 3)), ShapeError);
    std::vector<RasterImage> many(f.max_batch() + 1, RasterImage(16, 16, 1));
    EXPECT_THROW(f.score_batch(many), ArgumentError);
    EXPECT_EQ(score_all(f, many).size(), many.size());
}

TEST(ScoreBatchProperty, DeterministicAndOrderPreserving) {
    SplitMix64 rng(2);
    RegionLinearClassifier f(kShape, {{{1, 2, 7, 5}, 0.6}, {{9, 9, 6, 6}, 0.3}});
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<RasterImage> batch;
        for (int i = 0; i < 12; ++i) batch.push_back(random_raster(rng, 16, 16, 1));
        const auto a = f.score_batch(batch);
        ASSERT_EQ(a, f.score_batch(batch));
        std::vector<std::size_t> perm(batch.size());
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
        std::vector<RasterImage> shuffled;
        for (auto p : perm) shuffled.push_back(batch[p]);
        const auto b = f.score_batch(shuffled);
        for (std::size_t i = 0; i < perm.size(); ++i) ASSERT_EQ(b[i], a[perm[i]]);
    }
}

TEST(RegionDensityProperty, WhiteningChangesScoreByBlackOverlap) {
    SplitMix64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const Rect r{static_cast<int>(rng.below(8)), static_cast<int>(rng.below(8)), 1 + static_cast<int>(rng.below(8)),
                     1 + static_cast<int>(rng.below(8))};
        auto f = make_region_density(kShape, r);
        const auto img = binary_raster(rng, 16, 16, rng.uniform());
        auto ablated = img;
        std::size_t removed = 0;
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                if (rng.uniform() >= 0.3) continue;
                if (r.contains(x, y) && img.at(x, y) == 0.0f) ++removed;
                ablated.at(x, y) = 1.0f;
            }
        const double change = f->score(ablated)[0] - f->score(img)[0];
        ASSERT_NEAR(change, -static_cast<double>(removed) / static_cast<double>(r.area()), 1e-12);
    }
}

TEST(Protocol, RequestLayoutIsLittleEndianHwc) {
    RasterImage a(3, 2, 1, 0.25f), b(3, 2, 1, 0.75f);
    a.at(2, 1) = 1.0f;
    const std::vector<RasterImage> batch{a, b};
    const auto bytes = protocol::encode_request(batch);
    ASSERT_EQ(bytes.size(), 20 + 2 * 6 * 4u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DXP1");
    const std::uint8_t header[16] = {2, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0};
    EXPECT_TRUE(std::equal(header, header + 16, bytes.begin() + 4));
    EXPECT_EQ(binio::get_f32(bytes.data() + 20), 0.25f);
    EXPECT_EQ(binio::get_f32(bytes.data() + 20 + 4 * 5), 1.0f);
    EXPECT_EQ(binio::get_f32(bytes.data() + 20 + 4 * 6), 0.75f);
    // 1.0f little-endian
    const std::uint8_t one[4] = {0x00, 0x00, 0x80, 0x3f};
    EXPECT_TRUE(std::equal(one, one + 4, bytes.begin() + 40));

    const auto h = protocol::decode_request_header(bytes.data());
    EXPECT_EQ(h.batch, 2u);
    EXPECT_EQ(h.height, 2u);
    EXPECT_EQ(h.width, 3u);
    EXPECT_EQ(h.channels, 1u);
}

TEST(Protocol, ReplyHeaderChecksCarryOffsets) {
    const auto reply = protocol::encode_reply({{0.1f, 0.9f}, {0.4f, 0.6f}});
    ASSERT_EQ(reply.size(), 12 + 4 * 4u);
    EXPECT_EQ(protocol::check_reply_header(reply.data(), 2, 0), 2u);
    EXPECT_EQ(protocol::check_reply_header(reply.data(), 2, 2), 2u);

    auto expect_offset = [](auto&& fn, std::size_t offset) {
        try {
            fn();
            ADD_FAILURE() << "no ProtocolError";
        } catch (const ProtocolError& e) {
            EXPECT_EQ(e.offset(), offset);
        }
    };
    expect_offset([&] { protocol::check_reply_header(reply.data(), 3, 0); }, 4);
    expect_offset([&] { protocol::check_reply_header(reply.data(), 2, 5); }, 8);
    auto bad = reply;
    bad[3] = 'X';
    expect_offset([&] { protocol::check_reply_header(bad.data(), 2, 0); }, 0);
    const auto single = protocol::encode_reply({{1.0f}});
    expect_offset([&] { protocol::check_reply_header(single.data(), 1, 0); }, 8);
}

TEST(Subprocess, EchoModelScoresMeanDarkness) {
    SubprocessClassifier f(echo(), kShape);
    EXPECT_EQ(f.n_classes(), 2u);
    SplitMix64 rng(4);
    std::vector<RasterImage> batch;
    for (int i = 0; i < 70; ++i) batch.push_back(random_raster(rng, 16, 16, 1));
    const auto scores = score_all(f, batch);
    ASSERT_EQ(scores.size(), batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        EXPECT_FLOAT_EQ(static_cast<float>(scores[i][0]), static_cast<float>(mean_darkness(batch[i])));
        EXPECT_FLOAT_EQ(static_cast<float>(scores[i][1]), static_cast<float>(1.0 - mean_darkness(batch[i])));
    }
    EXPECT_EQ(score_all(f, batch), scores);
}

TEST(Subprocess, ProbesClassCount) {
    SubprocessClassifier f(echo("--classes 5"), kShape);
    EXPECT_EQ(f.n_classes(), 5u);
    EXPECT_EQ(f.score(RasterImage(16, 16, 1)).size(), 5u);
}

TEST(Subprocess, DeclaredClassCountMismatchIsProtocolError) {
    SubprocessClassifier f(echo("--classes 3"), kShape, 2);
    EXPECT_THROW(f.score(RasterImage(16, 16, 1)), ProtocolError);
}

TEST(Subprocess, CorruptMagicReportsOffsetZero) {
    try {
        SubprocessClassifier f(echo("--corrupt-magic"), kShape);
        FAIL() << "expected ProtocolError";
    } catch (const ProtocolError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
}

TEST(Subprocess, TruncatedReplyReportsWhereItStopped) {
    try {
        SubprocessClassifier f(echo("--truncate"), kShape);
        FAIL() << "expected ProtocolError";
    } catch (const ProtocolError& e) {
        // Two float scores, half of the payload delivered.
        EXPECT_EQ(e.offset(), 12u + 4u);
    }
}

TEST(Subprocess, NonFiniteScoreIsRejected) {
    try {
        SubprocessClassifier f(echo("--nan"), kShape, 2);
        f.score(RasterImage(16, 16, 1));
        FAIL() << "expected ProtocolError";
    } catch (const ProtocolError& e) {
        EXPECT_EQ(e.offset(), 12u);
    }
}

TEST(Subprocess, DyingChildIsProtocolError) {
    SubprocessClassifier f(echo("--die-after 1"), kShape);
    EXPECT_THROW(f.score(RasterImage(16, 16, 1, 0.5f)), ProtocolError);
}

TEST(Subprocess, MissingExecutableFails) {
    EXPECT_THROW(SubprocessClassifier("/nonexistent/model-binary 2>/dev/null", kShape), BackendError);
}

TEST(Caching, MemoizesByContent) {
    auto inner = std::make_shared<RegionLinearClassifier>(kShape, std::vector<WeightedRegion>{{{0, 0, 8, 8}, 1.0}});
    CachingClassifier f(inner);
    SplitMix64 rng(5);
    const auto a = random_raster(rng, 16, 16, 1);
    auto b = a;
    b.data[3] = 1.0f - b.data[3];
    const auto sa = f.score(a);
    EXPECT_EQ(f.hits(), 0u);
    EXPECT_EQ(f.score(a), sa);
    EXPECT_EQ(f.hits(), 1u);
    const std::vector<RasterImage> batch{a, b, a};
    const auto s = f.score_batch(batch);
    EXPECT_EQ(s[0], sa);
    EXPECT_EQ(s[1], inner->score(b));
    EXPECT_EQ(s[2], sa);
    EXPECT_EQ(f.id(), inner->id());
    EXPECT_NE(content_hash(a), content_hash(b));
}

TEST(Argmax, FirstMaximumWins) {
    EXPECT_EQ(argmax({0.2, 0.7, 0.7, 0.1}), 1u);
    EXPECT_EQ(argmax({0.9, 0.1}), 0u);
}
