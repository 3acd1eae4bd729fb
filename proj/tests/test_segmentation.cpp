#include <gtest/gtest.h>

#include <filesystem>

#include "support.hpp"

using namespace docxplain;
using namespace dxtest;

namespace {

BinaryImage two_squares(int gap) {
    BinaryImage img(40 + gap + 10, 30);
    for (int y = 10; y < 20; ++y) {
        for (int x = 10; x < 20; ++x) img.at(x, y) = kForeground;
        for (int x = 20 + gap; x < 30 + gap; ++x) img.at(x, y) = kForeground;
    }
    return img;
}

// Five rows of dashes on a page already at the working resolution.
RasterImage dash_page(int& dashes) {
    RasterImage page(1024, 1024, 1, 1.0f);
    dashes = 0;
    for (int line = 0; line < 5; ++line) {
        const int y = 150 + line * 150;
        for (int x = 100; x + 20 <= 920; x += 30) {
            fill_rect(page, {x, y, 20, 8}, 0.0f);
            ++dashes;
        }
    }
    return page;
}

void expect_partition(const SegmentationMask& m) {
    ASSERT_NO_THROW(m.validate());
    std::vector<bool> seen(static_cast<std::size_t>(m.group_count()) + 1, false);
    for (Label l : m.labels) seen[l] = true;
    for (Label l = m.n_bg + 1; l <= m.group_count(); ++l) EXPECT_TRUE(seen[l]) << "missing label " << l;
}

} // namespace

TEST(Background, GridCountsAndRowMajorLabels) {
    EXPECT_EQ(segment_background(1024, 1024, 64, 64).n_bg, 256u);

    const auto one = segment_background(32, 32, 32, 32);
    EXPECT_EQ(one.n_bg, 1u);
    for (Label l : one.labels) EXPECT_EQ(l, 1u);

    const auto four = segment_background(1024, 1024, 512, 512);
    EXPECT_EQ(four.n_bg, 4u);
    EXPECT_EQ(four.n_fg, 0u);
    EXPECT_EQ(four.at(0, 0), 1u);
    EXPECT_EQ(four.at(1023, 0), 2u);
    EXPECT_EQ(four.at(0, 1023), 3u);
    EXPECT_EQ(four.at(1023, 1023), 4u);
    EXPECT_EQ(four.at(511, 511), 1u);
    EXPECT_EQ(four.at(512, 511), 2u);
}

TEST(Background, RejectsOversizedPatch) {
    EXPECT_THROW(segment_background(32, 32, 64, 16), ArgumentError);
    EXPECT_THROW(segment_background(32, 32, 0, 16), ArgumentError);
}

TEST(Foreground, BlankImageHasNoComponents) {
    const auto fg = segment_foreground(BinaryImage(20, 20), {5, 5});
    EXPECT_EQ(fg.count, 0u);
    for (Label l : fg.labels) EXPECT_EQ(l, 0u);
}

TEST(Foreground, DistantSquaresStaySeparate) {
    EXPECT_EQ(segment_foreground(two_squares(20), {5, 5}).count, 2u);
}

TEST(Foreground, CloseSquaresMerge) {
    EXPECT_EQ(segment_foreground(two_squares(3), {5, 5}).count, 1u);
}

TEST(Foreground, LabelsCoverDilatedFootprint) {
    const auto img = two_squares(20);
    const auto fg = segment_foreground(img, {5, 5});
    const auto dilated = morph_dilate(img, {5, 5});
    for (std::size_t i = 0; i < fg.labels.size(); ++i) EXPECT_EQ(fg.labels[i] != 0, dilated.data[i] == kForeground);
}

TEST(ComponentsProperty, MatchFloodFill) {
    SplitMix64 rng(101);
    for (int trial = 0; trial < 200; ++trial) {
        const int w = 1 + static_cast<int>(rng.below(40)), h = 1 + static_cast<int>(rng.below(40));
        const auto img = trial % 2 ? random_binary(rng, w, h, rng.uniform(0.1, 0.7)) : random_blocks(rng, w, h, 10, 6);
        const auto got = connected_components(img);
        const auto want = components_oracle(img);
        ASSERT_EQ(got.count, want.count) << "trial " << trial;
        ASSERT_EQ(got.labels, want.labels) << "trial " << trial;
    }
}

TEST(ComponentsProperty, LargerKernelNeverAddsComponents) {
    SplitMix64 rng(102);
    for (int trial = 0; trial < 100; ++trial) {
        const auto img = random_blocks(rng, 60, 50, 25, 5);
        const auto small = random_se(rng, 3);
        const StructuringElement big{small.kx + 2 * static_cast<int>(rng.below(4)),
                                     small.ky + 2 * static_cast<int>(rng.below(4))};
        ASSERT_LE(segment_foreground(img, big).count, segment_foreground(img, small).count);
    }
}

TEST(Combine, BlankPageIsTheGrid) {
    const auto bg = segment_background(64, 64, 16, 16);
    const auto combined = combine_masks(bg, segment_foreground(BinaryImage(64, 64), {5, 5}));
    EXPECT_EQ(combined, bg);
}

TEST(Combine, ForegroundLabelIsOffsetByBackgroundCount) {
    const auto bg = segment_background(1024, 1024, 64, 64);
    ForegroundLabels fg{1024, 1024, std::vector<Label>(1024 * 1024, 0), 3};
    fg.labels[5] = 1;
    fg.labels[10] = 2;
    fg.labels[2000] = 3;
    const auto m = combine_masks(bg, fg);
    EXPECT_EQ(m.labels[2000], 259u);
    EXPECT_EQ(m.n_fg, 3u);
    EXPECT_EQ(m.group_count(), 259u);
}

TEST(Combine, SmallHandEvaluatedInstance) {
    const auto bg = segment_background(8, 8, 4, 4);
    BinaryImage img(8, 8);
    for (int y = 1; y <= 2; ++y)
        for (int x = 1; x <= 2; ++x) img.at(x, y) = kForeground;
    const auto m = combine_masks(bg, connected_components(img));
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            const bool blob = x >= 1 && x <= 2 && y >= 1 && y <= 2;
            if (blob) {
                EXPECT_EQ(m.at(x, y), 5u);
            } else if (x < 4 && y < 4) {
                EXPECT_EQ(m.at(x, y), 1u);
            }
        }
}

TEST(Combine, RejectsMismatchedSizes) {
    const auto bg = segment_background(8, 8, 4, 4);
    EXPECT_THROW(combine_masks(bg, connected_components(BinaryImage(4, 8))), ShapeError);
}

TEST(CombineProperty, OffsetHoldsPixelwise) {
    SplitMix64 rng(103);
    for (int trial = 0; trial < 100; ++trial) {
        const auto img = random_blocks(rng, 64, 64, 12, 8);
        const auto fg = segment_foreground(img, random_se(rng, 2));
        const auto bg = segment_background(img, 16, 16);
        const auto m = combine_masks(bg, fg);
        expect_partition(m);
        for (std::size_t i = 0; i < m.labels.size(); ++i) {
            const Label want = fg.labels[i] != 0 ? fg.labels[i] + bg.n_bg : bg.labels[i];
            ASSERT_EQ(m.labels[i], want);
        }
    }
}

TEST(MaskResize, LeftHalfMapsToExpectedColumns) {
    SegmentationMask m;
    m.width = m.height = 1024;
    m.n_bg = 8;
    m.labels.resize(1024 * 1024);
    for (int y = 0; y < 1024; ++y)
        for (int x = 0; x < 1024; ++x) m.labels[static_cast<std::size_t>(y) * 1024 + x] = x < 512 ? 7 : 8;
    const auto r = resize_nearest(m, 224, 224);
    for (int y = 0; y < 224; ++y)
        for (int x = 0; x < 224; ++x) ASSERT_EQ(r.at(x, y), x < 112 ? 7u : 8u);
}

TEST(MaskResizeProperty, NoNewLabels) {
    SplitMix64 rng(104);
    for (int trial = 0; trial < 100; ++trial) {
        const auto m = random_mask(rng, 20 + static_cast<int>(rng.below(40)), 20 + static_cast<int>(rng.below(40)), 20);
        const auto r = resize_nearest(m, 1 + static_cast<int>(rng.below(70)), 1 + static_cast<int>(rng.below(70)));
        const std::set<Label> before(m.labels.begin(), m.labels.end()), after(r.labels.begin(), r.labels.end());
        ASSERT_TRUE(std::includes(before.begin(), before.end(), after.begin(), after.end()));
    }
}

TEST(ExpandProperty, MatchesStepwiseOracleAndOnlyTouchesBackground) {
    SplitMix64 rng(105);
    for (int trial = 0; trial < 150; ++trial) {
        const auto m = random_mask(rng, 10 + static_cast<int>(rng.below(30)), 10 + static_cast<int>(rng.below(30)), 12);
        const int steps = static_cast<int>(rng.below(5));
        const auto got = expand_labels(m, steps);
        ASSERT_EQ(got, expand_oracle(m, steps)) << "trial " << trial;
        for (std::size_t i = 0; i < m.labels.size(); ++i) {
            if (m.labels[i] > m.n_bg) {
                ASSERT_EQ(got.labels[i], m.labels[i]);
            }
        }
    }
}

TEST(ExpandProperty, FusedResizeMatchesTwoStepVersion) {
    SplitMix64 rng(106);
    for (int trial = 0; trial < 150; ++trial) {
        const auto m = random_mask(rng, 10 + static_cast<int>(rng.below(50)), 10 + static_cast<int>(rng.below(50)), 15);
        const int steps = static_cast<int>(rng.below(5));
        const int ow = 1 + static_cast<int>(rng.below(60)), oh = 1 + static_cast<int>(rng.below(60));
        ASSERT_EQ(expand_and_resize(m, steps, ow, oh), resize_nearest(expand_labels(m, steps), ow, oh))
            << "trial " << trial;
    }
}

TEST(Postprocess, NoForegroundOnlyResizes) {
    const auto bg = segment_background(128, 128, 32, 32);
    KernelConfig k;
    k.patch_x = k.patch_y = 32;
    EXPECT_EQ(postprocess(bg, k, 56, 56), resize_nearest(bg, 56, 56));
}

TEST(Postprocess, SpeckFallsBackToSurroundingCell) {
    auto m = segment_background(64, 64, 32, 32);
    m.n_fg = 2;
    // Label 5: three pixels inside cell 4. Label 6: a 4x4 block in cell 1.
    for (int x = 40; x < 43; ++x) m.labels[static_cast<std::size_t>(45) * 64 + x] = 5;
    for (int y = 4; y < 8; ++y)
        for (int x = 4; x < 8; ++x) m.labels[static_cast<std::size_t>(y) * 64 + x] = 6;
    KernelConfig k;
    k.patch_x = k.patch_y = 32;
    k.expansion = 0;
    k.min_area = 4;
    const auto out = postprocess(m, k, 64, 64);
    EXPECT_EQ(out.n_fg, 1u);
    for (int x = 40; x < 43; ++x) EXPECT_EQ(out.at(x, 45), 4u);
    EXPECT_EQ(out.at(5, 5), 5u);
    expect_partition(out);
}

TEST(Postprocess, LargeRegionSplitsIntoCompactSuperpixels) {
    const int n = 100;
    auto m = segment_background(n, n, 25, 25);
    m.n_fg = 1;
    for (int y = 30; y < 60; ++y)
        for (int x = 0; x < n; ++x) m.labels[static_cast<std::size_t>(y) * n + x] = m.n_bg + 1;
    KernelConfig k;
    k.patch_x = k.patch_y = 25;
    k.expansion = 0;
    k.min_area = 1;
    const auto out = postprocess(m, k, n, n);
    expect_partition(out);
    EXPECT_GE(out.n_fg, 25u);
    EXPECT_LE(out.n_fg, 75u);
    // Compact: no superpixel spans more than a few grid steps.
    const double step = std::sqrt(3000.0 / 50.0);
    std::map<Label, std::array<int, 4>> box;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const Label l = out.at(x, y);
            if (l <= out.n_bg) {
                EXPECT_TRUE(y < 30 || y >= 60);
                continue;
            }
            auto [it, fresh] = box.try_emplace(l, std::array<int, 4>{x, y, x, y});
            auto& b = it->second;
            b = {std::min(b[0], x), std::min(b[1], y), std::max(b[2], x), std::max(b[3], y)};
        }
    for (const auto& [l, b] : box) {
        EXPECT_LE(b[2] - b[0] + 1, 3 * step) << "label " << l;
        EXPECT_LE(b[3] - b[1] + 1, 3 * step) << "label " << l;
    }
}

TEST(Slic, ClustersAreContiguousAndFourConnected) {
    SplitMix64 rng(107);
    for (int trial = 0; trial < 30; ++trial) {
        const int w = 30 + static_cast<int>(rng.below(40)), h = 30 + static_cast<int>(rng.below(40));
        const auto blob = random_blocks(rng, w, h, 6, 25);
        std::vector<std::size_t> region;
        for (std::size_t i = 0; i < blob.data.size(); ++i)
            if (blob.data[i] == kForeground) region.push_back(i);
        if (region.empty()) continue;
        const auto gray = random_raster(rng, w, h, 1);
        SlicParams p;
        p.n_segments = 1 + static_cast<int>(rng.below(30));
        const auto ids = slic_region(region, w, h, gray.data, p);
        ASSERT_EQ(ids.size(), region.size());
        const Label top = *std::max_element(ids.begin(), ids.end());
        std::vector<int> count(top + 1, 0);
        for (auto id : ids) ++count[id];
        for (int c : count) ASSERT_GT(c, 0);
        // Each cluster is one 4-connected piece.
        std::vector<std::int64_t> at(blob.data.size(), -1);
        for (std::size_t k = 0; k < region.size(); ++k) at[region[k]] = ids[k];
        std::vector<bool> done(top + 1, false);
        std::vector<bool> visited(blob.data.size(), false);
        for (std::size_t k = 0; k < region.size(); ++k) {
            const auto id = ids[k];
            if (done[id]) continue;
            done[id] = true;
            int reached = 0;
            std::deque<std::size_t> q{region[k]};
            visited[region[k]] = true;
            while (!q.empty()) {
                const std::size_t p = q.front();
                q.pop_front();
                ++reached;
                const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
                const int nx[4] = {x - 1, x + 1, x, x}, ny[4] = {y, y, y - 1, y + 1};
                for (int d = 0; d < 4; ++d) {
                    if (nx[d] < 0 || ny[d] < 0 || nx[d] >= w || ny[d] >= h) continue;
                    const std::size_t np = static_cast<std::size_t>(ny[d]) * w + nx[d];
                    if (!visited[np] && at[np] == static_cast<std::int64_t>(id)) {
                        visited[np] = true;
                        q.push_back(np);
                    }
                }
            }
            ASSERT_EQ(reached, count[id]) << "trial " << trial << " cluster " << id;
        }
    }
}

TEST(BuildMasks, DefaultConfigGivesThreeMasks) {
    const auto page = synthetic_page(5);
    EXPECT_EQ(build_masks(page, {}, 224, 224).size(), 3u);
}

TEST(BuildMasks, BlankPageGivesPureGrids) {
    const RasterImage page(300, 200, 1, 1.0f);
    const auto masks = build_masks(page, {}, 224, 224);
    ASSERT_EQ(masks.size(), 3u);
    const auto grid = resize_nearest(segment_background(1024, 1024, 64, 64), 224, 224);
    for (const auto& m : masks) {
        EXPECT_EQ(m.n_fg, 0u);
        EXPECT_EQ(m, grid);
    }
}

TEST(BuildMasks, LineKernelConsolidatesDashes) {
    int dashes = 0;
    const auto page = dash_page(dashes);
    const auto masks = build_masks(page, {}, 224, 224);
    EXPECT_LE(masks[2].n_fg, 5u);
    EXPECT_GE(masks[0].n_fg, static_cast<Label>(dashes));
    EXPECT_LT(masks[2].n_fg, masks[0].n_fg);
}

TEST(BuildMasksProperty, PartitionAndDeterminism) {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        SyntheticPageParams p;
        p.width = 200 + static_cast<int>(seed * 13);
        p.height = 260 - static_cast<int>(seed * 7);
        const auto page = synthetic_page(seed, p);
        const auto a = build_masks(page, {}, 224, 224);
        const auto b = build_masks(page, {}, 224, 224);
        ASSERT_EQ(a, b);
        for (const auto& m : a) {
            EXPECT_EQ(m.n_bg, 256u);
            expect_partition(m);
        }
    }
}

TEST(Dxsm, RoundTripAndLayout) {
    SplitMix64 rng(108);
    const auto m = random_mask(rng, 13, 7, 9);
    const auto bytes = encode_mask(m);
    ASSERT_EQ(bytes.size(), 20 + 4 * 13 * 7u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DXSM");
    EXPECT_EQ(binio::get_u32(bytes.data() + 4), 13u);
    EXPECT_EQ(binio::get_u32(bytes.data() + 8), 7u);
    EXPECT_EQ(binio::get_u32(bytes.data() + 12), m.n_bg);
    EXPECT_EQ(binio::get_u32(bytes.data() + 16), m.n_fg);
    EXPECT_EQ(binio::get_u32(bytes.data() + 20), m.labels[0]);
    EXPECT_EQ(decode_mask(bytes), m);

    const auto path = std::filesystem::temp_directory_path() / "docxplain_mask_roundtrip.dxsm";
    save_mask(path, m);
    EXPECT_EQ(load_mask(path), m);
}

TEST(Dxsm, RejectsCorruptFiles) {
    SplitMix64 rng(109);
    auto bytes = encode_mask(random_mask(rng, 5, 5, 4));
    auto truncated = bytes;
    truncated.pop_back();
    EXPECT_THROW(decode_mask(truncated), FormatError);
    bytes[0] = 'X';
    EXPECT_THROW(decode_mask(bytes), FormatError);
}

TEST(RenderMask, ProducesRgbAtMaskSize) {
    SplitMix64 rng(110);
    const auto m = random_mask(rng, 11, 6, 5);
    const auto img = render_mask(m);
    EXPECT_EQ(img.width, 11);
    EXPECT_EQ(img.height, 6);
    EXPECT_EQ(img.channels, 3);
    EXPECT_EQ(img.data.size(), 11u * 6u * 3u);
}
