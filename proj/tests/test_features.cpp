#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "luc/features.hpp"

using namespace luc;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::path(testing::TempDir()) / name).string();
}

LuGrid random_map(Rng& rng, int w, int h, std::vector<Category> cats) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(cats.size()) - 1);
    std::vector<Category> data(static_cast<size_t>(w) * h);
    for (auto& v : data) v = cats[pick(rng)];
    return LuGrid(w, h, 15.0, std::move(cats), std::move(data));
}

}  // namespace

TEST(Enrichment, UniformMapIsOneEverywhere) {
    LuGrid g = LuGrid::filled(6, 5, 15.0, {2}, 2);
    ScalarField e = compute_enrichment(g, 2, 3);
    for (double v : e.data) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Enrichment, ZeroWhenWindowLacksCategory) {
    // single cell of category 1 in the far corner; windows elsewhere see none
    std::vector<Category> data(49, 0);
    data[48] = 1;
    LuGrid g(7, 7, 15.0, {0, 1}, data);
    ScalarField e = compute_enrichment(g, 1, 3);
    EXPECT_DOUBLE_EQ(e.at(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(e.at(3, 3), 0.0);
    EXPECT_GT(e.at(6, 6), 0.0);
}

TEST(Enrichment, MatchesBruteForceFormula) {
    Rng rng(101);
    LuGrid g = random_map(rng, 5, 5, {0, 1});
    const int window = 3, r = window / 2;
    long N = g.cell_count();
    for (Category k : g.categories()) {
        long Nk = 0;
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) Nk += (g.at(x, y) == k);
        if (Nk == 0) continue;
        ScalarField e = compute_enrichment(g, k, window);
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) {
                long nk = 0, n = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        int sx = x + dx, sy = y + dy;
                        if (!g.in_bounds(sx, sy)) continue;
                        ++n;
                        nk += (g.at(sx, sy) == k);
                    }
                double expect = (double(nk) / double(n)) / (double(Nk) / double(N));
                ASSERT_NEAR(e.at(x, y), expect, 1e-12);
            }
    }
}

TEST(Enrichment, AbsentCategoryIsAnError) {
    LuGrid g = LuGrid::filled(3, 3, 15.0, {0, 1}, 0);  // category 1 declared, never used
    EXPECT_THROW(compute_enrichment(g, 1, 3), numeric_error);
}

TEST(DistanceField, AxisAndDiagonalNeighbors) {
    RegionMask m(5, 5);
    m.set(2, 2, true);
    ScalarField d = distance_field(m, 15.0);
    EXPECT_DOUBLE_EQ(d.at(2, 2), 0.0);
    EXPECT_DOUBLE_EQ(d.at(3, 2), 15.0);
    EXPECT_DOUBLE_EQ(d.at(2, 1), 15.0);
    EXPECT_NEAR(d.at(3, 3), 15.0 * std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(d.at(1, 1), 15.0 * std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(d.at(0, 0), 15.0 * std::sqrt(8.0), 1e-12);
}

TEST(DistanceField, MatchesAllPairsOracle) {
    Rng rng(7);
    std::bernoulli_distribution hit(0.08);
    RegionMask m(20, 20);
    std::vector<Cell> targets;
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x)
            if (hit(rng)) {
                m.set(x, y, true);
                targets.push_back({x, y});
            }
    if (targets.empty()) {
        m.set(9, 9, true);
        targets.push_back({9, 9});
    }
    const double cell = 15.0;
    ScalarField d = distance_field(m, cell);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x) {
            double best = 1e300;
            for (Cell t : targets) {
                double dx = x - t.x, dy = y - t.y;
                best = std::min(best, std::sqrt(dx * dx + dy * dy));
            }
            ASSERT_NEAR(d.at(x, y), cell * best, 1e-9);
        }
}

TEST(DistanceField, LipschitzAcrossNeighbors) {
    Rng rng(8);
    std::bernoulli_distribution hit(0.05);
    RegionMask m(16, 12);
    for (auto& v : m.data) v = hit(rng) ? 1 : 0;
    if (m.count() == 0) m.set(0, 0, true);
    const double cell = 10.0;
    ScalarField d = distance_field(m, cell);
    const double bound = cell * std::sqrt(2.0) + 1e-9;
    for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 16; ++x)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int nx = x + dx, ny = y + dy;
                    if (nx < 0 || nx >= 16 || ny < 0 || ny >= 12) continue;
                    ASSERT_LE(std::abs(d.at(x, y) - d.at(nx, ny)), bound);
                }
}

TEST(DistanceField, EmptyTargetIsAnError) {
    RegionMask m(4, 4);
    EXPECT_THROW(distance_field(m, 15.0), data_error);
}

namespace {

std::vector<std::pair<std::string, ScalarField>> random_aux(Rng& rng, int w, int h, int n) {
    std::uniform_real_distribution<double> val(-3.0, 9.0);
    std::vector<std::pair<std::string, ScalarField>> aux;
    for (int i = 0; i < n; ++i) {
        ScalarField f(w, h);
        for (auto& v : f.data) v = val(rng);
        aux.emplace_back("aux" + std::to_string(i), std::move(f));
    }
    return aux;
}

}  // namespace

TEST(FeatureStack, FeatureCountIsCategoriesPlusAuxPlusCoords) {
    Rng rng(55);
    LuGrid g = random_map(rng, 9, 9, {0, 1, 2, 3});
    auto aux = random_aux(rng, 9, 9, 5);
    FeatureStack stack = build_feature_stack(g, aux, 3);
    EXPECT_EQ(stack.feature_count(), 4 + 5 + 2);
    EXPECT_EQ(stack.names.front(), "enrich_0");
    EXPECT_EQ(stack.names.back(), "coord_y");
}

TEST(FeatureStack, ZScoreMoments) {
    Rng rng(56);
    LuGrid g = random_map(rng, 12, 10, {0, 1, 2});
    auto aux = random_aux(rng, 12, 10, 3);
    FeatureStack stack = build_feature_stack(g, aux, 5);
    const long n = g.cell_count();
    for (const ScalarField& f : stack.fields) {
        double mean = 0.0;
        for (double v : f.data) mean += v;
        mean /= n;
        double ss = 0.0;
        for (double v : f.data) ss += (v - mean) * (v - mean);
        double sd = std::sqrt(ss / n);
        EXPECT_LT(std::abs(mean), 1e-6);
        EXPECT_LT(std::abs(sd - 1.0), 1e-6);
    }
}

TEST(FeatureStack, RecordedConstantsReproduceNormalization) {
    Rng rng(57);
    LuGrid g = random_map(rng, 8, 8, {0, 1});
    auto aux = random_aux(rng, 8, 8, 2);
    FeatureStack stack = build_feature_stack(g, aux, 3);
    // rebuild the raw fields the stack was computed from, in stack order
    std::vector<ScalarField> raw;
    for (Category c : g.categories()) raw.push_back(compute_enrichment(g, c, 3));
    for (auto& [name, f] : aux) raw.push_back(f);
    ScalarField cx(8, 8), cy(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            cx.at(x, y) = x;
            cy.at(x, y) = y;
        }
    raw.push_back(cx);
    raw.push_back(cy);
    for (size_t f = 0; f < raw.size(); ++f)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                double z = (raw[f].at(x, y) - stack.means[f]) / stack.sds[f];
                ASSERT_NEAR(z, stack.fields[f].at(x, y), 1e-12);
            }
}

TEST(FeatureStack, PersistsWithManifest) {
    Rng rng(58);
    LuGrid g = random_map(rng, 6, 7, {0, 1});
    auto aux = random_aux(rng, 6, 7, 1);
    FeatureStack stack = build_feature_stack(g, aux, 3);
    std::string path = tmp_path("stack.lucf");
    save_stack(stack, path);
    FeatureStack back = load_stack(path);
    EXPECT_EQ(back.names, stack.names);
    EXPECT_EQ(back.means, stack.means);  // %.17g round-trips exactly
    EXPECT_EQ(back.sds, stack.sds);
    for (size_t f = 0; f < stack.fields.size(); ++f)
        for (size_t i = 0; i < stack.fields[f].data.size(); ++i)
            ASSERT_DOUBLE_EQ(back.fields[f].data[i],
                             static_cast<double>(static_cast<float>(stack.fields[f].data[i])));
}

namespace {

struct DatasetFixture {
    LuGrid t0, t1;
    FeatureStack stack;
    std::shared_ptr<MultiBandImage> image;

    explicit DatasetFixture(Rng& rng, int w = 10, int h = 10) {
        t0 = random_map(rng, w, h, {0, 1, 2});
        std::vector<Category> next = t0.data();
        std::uniform_int_distribution<int> pick(0, 2);
        std::bernoulli_distribution change(0.3);
        for (auto& v : next)
            if (change(rng)) v = static_cast<Category>(pick(rng));
        t1 = LuGrid(w, h, 15.0, {0, 1, 2}, next);
        stack = build_feature_stack(t0, random_aux(rng, w, h, 2), 3);
        image = std::make_shared<MultiBandImage>(3, w, h);
        std::uniform_real_distribution<float> val(0.0f, 1.0f);
        for (auto& v : image->data) v = val(rng);
    }
};

}  // namespace

TEST(Dataset, NoChangeMeansAllNegative) {
    Rng rng(60);
    LuGrid g = random_map(rng, 6, 6, {0, 1});
    FeatureStack stack = build_feature_stack(g, random_aux(rng, 6, 6, 1), 3);
    Dataset ds = assemble_dataset(g, g, stack, nullptr, 0, 1, 0);
    EXPECT_FALSE(ds.samples.empty());
    EXPECT_TRUE(ds.positive_indices.empty());
    EXPECT_EQ(ds.negative_indices.size(), ds.samples.size());
}

TEST(Dataset, FullConversionMeansAllPositive) {
    Rng rng(61);
    LuGrid t0 = random_map(rng, 6, 6, {0, 1});
    std::vector<Category> next = t0.data();
    for (auto& v : next)
        if (v == 0) v = 1;
    LuGrid t1(6, 6, 15.0, {0, 1}, next);
    FeatureStack stack = build_feature_stack(t0, random_aux(rng, 6, 6, 1), 3);
    Dataset ds = assemble_dataset(t0, t1, stack, nullptr, 0, 1, 0);
    EXPECT_EQ(ds.positive_indices.size(), ds.samples.size());
}

TEST(Dataset, LabelsMatchExhaustiveOracle) {
    Rng rng(62);
    DatasetFixture fx(rng);
    Dataset ds = assemble_dataset(fx.t0, fx.t1, fx.stack, fx.image, 1, 2, 3);
    size_t i = 0;
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) {
            if (fx.t0.at(x, y) != 1) continue;
            ASSERT_LT(i, ds.samples.size());
            const Sample& s = ds.samples[i];
            EXPECT_EQ(s.cell.x, x);
            EXPECT_EQ(s.cell.y, y);
            EXPECT_EQ(s.label, fx.t1.at(x, y) == 2 ? 1 : 0);
            EXPECT_EQ(s.geo, fx.stack.vector_at(x, y));
            ++i;
        }
    EXPECT_EQ(i, ds.samples.size());
}

TEST(Dataset, ReassemblyIsDeterministic) {
    Rng rng(63);
    DatasetFixture fx(rng);
    Dataset a = assemble_dataset(fx.t0, fx.t1, fx.stack, fx.image, 0, 1, 3);
    Dataset b = assemble_dataset(fx.t0, fx.t1, fx.stack, fx.image, 0, 1, 3);
    ASSERT_EQ(a.samples.size(), b.samples.size());
    for (size_t i = 0; i < a.samples.size(); ++i) {
        EXPECT_EQ(a.samples[i].label, b.samples[i].label);
        EXPECT_EQ(a.samples[i].geo, b.samples[i].geo);
    }
}

TEST(Dataset, PatchCenterMatchesCell) {
    Rng rng(64);
    DatasetFixture fx(rng);
    Dataset ds = assemble_dataset(fx.t0, fx.t1, fx.stack, fx.image, 0, 1, 5);
    for (size_t i = 0; i < std::min<size_t>(ds.samples.size(), 8); ++i) {
        Tensor p = ds.patch(i);
        for (int b = 0; b < 3; ++b)
            ASSERT_DOUBLE_EQ(p.at(b, 2, 2), fx.image->at(b, ds.samples[i].cell.x, ds.samples[i].cell.y));
    }
}

TEST(Dataset, LucsRoundTrip) {
    Rng rng(65);
    DatasetFixture fx(rng);
    Dataset ds = assemble_dataset(fx.t0, fx.t1, fx.stack, fx.image, 0, 1, 3);
    std::string plain = tmp_path("ds_plain.lucs"), patched = tmp_path("ds_patch.lucs");
    save_dataset(ds, plain, false);
    save_dataset(ds, patched, true);

    Dataset back = load_dataset(plain);
    ASSERT_EQ(back.samples.size(), ds.samples.size());
    EXPECT_EQ(back.from, ds.from);
    EXPECT_EQ(back.to, ds.to);
    EXPECT_FALSE(back.has_patches());
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        EXPECT_EQ(back.samples[i].label, ds.samples[i].label);
        EXPECT_EQ(back.samples[i].cell.x, ds.samples[i].cell.x);
        ASSERT_EQ(back.samples[i].geo.size(), ds.samples[i].geo.size());
        for (size_t f = 0; f < back.samples[i].geo.size(); ++f)
            ASSERT_DOUBLE_EQ(back.samples[i].geo[f],
                             static_cast<double>(static_cast<float>(ds.samples[i].geo[f])));
    }

    Dataset with_patches = load_dataset(patched);
    ASSERT_TRUE(with_patches.has_patches());
    for (size_t i = 0; i < std::min<size_t>(ds.samples.size(), 5); ++i) {
        Tensor expect = ds.patch(i), got = with_patches.patch(i);
        ASSERT_EQ(got.shape(), expect.shape());
        for (long j = 0; j < expect.numel(); ++j)
            ASSERT_DOUBLE_EQ(got[j], static_cast<double>(static_cast<float>(expect[j])));
    }
}

TEST(RegionSplit, PartitionByMaskMembership) {
    Rng rng(70);
    DatasetFixture fx(rng);
    Dataset ds = assemble_dataset(fx.t0, fx.t1, fx.stack, nullptr, 0, 1, 0);
    RegionMask region(10, 10);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 3; ++x) region.set(x, y, true);
    RegionSplit split = region_split(ds, region, 0.3);
    EXPECT_EQ(split.train.samples.size() + split.validation.samples.size(), ds.samples.size());
    for (const Sample& s : split.validation.samples) EXPECT_TRUE(region.at(s.cell.x, s.cell.y));
    for (const Sample& s : split.train.samples) EXPECT_FALSE(region.at(s.cell.x, s.cell.y));
}

TEST(RegionSplit, AreaProportionalFraction) {
    // near-uniform eligibility: all but four cells are samples, left 15% of 40 columns
    std::vector<Category> base(800, 0);
    for (int i : {300, 420, 555, 610}) base[static_cast<size_t>(i)] = 1;
    LuGrid t0(40, 20, 15.0, {0, 1}, base);
    std::vector<Category> next = base;
    next[0] = 1;  // one positive so indexing stays legal downstream
    LuGrid t1(40, 20, 15.0, {0, 1}, next);
    ScalarField noise(40, 20);
    Rng rng(71);
    std::uniform_real_distribution<double> val(0.0, 1.0);
    for (auto& v : noise.data) v = val(rng);
    FeatureStack stack = build_feature_stack(t0, {{"noise", noise}}, 3);
    Dataset ds = assemble_dataset(t0, t1, stack, nullptr, 0, 1, 0);
    RegionMask region(40, 20);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 6; ++x) region.set(x, y, true);
    RegionSplit split = region_split(ds, region, 0.15);
    EXPECT_NEAR(split.validation_fraction, 0.15, 0.02);
}

TEST(RegionSplit, DegenerateRegionsAreErrors) {
    Rng rng(72);
    DatasetFixture fx(rng);
    Dataset ds = assemble_dataset(fx.t0, fx.t1, fx.stack, nullptr, 0, 1, 0);
    RegionMask empty(10, 10);
    EXPECT_THROW(region_split(ds, empty, 0.15), data_error);
    RegionMask all(10, 10, 1);
    EXPECT_THROW(region_split(ds, all, 0.15), data_error);
}

TEST(Minibatch, ExactClassBalance) {
    Rng rng(80);
    DatasetFixture fx(rng);
    Dataset ds = assemble_dataset(fx.t0, fx.t1, fx.stack, nullptr, 0, 1, 0);
    ASSERT_FALSE(ds.positive_indices.empty());
    ASSERT_FALSE(ds.negative_indices.empty());
    for (int size : {2, 8, 32}) {
        auto batch = balanced_minibatch(ds, size, rng);
        ASSERT_EQ(static_cast<int>(batch.size()), size);
        int pos = 0;
        for (size_t idx : batch) pos += ds.samples[idx].label;
        EXPECT_EQ(pos, size / 2);
    }
}

TEST(Minibatch, SameSeedSameBatch) {
    Rng rng(81);
    DatasetFixture fx(rng);
    Dataset ds = assemble_dataset(fx.t0, fx.t1, fx.stack, nullptr, 0, 1, 0);
    Rng a(1234), b(1234);
    for (int i = 0; i < 5; ++i) EXPECT_EQ(balanced_minibatch(ds, 16, a), balanced_minibatch(ds, 16, b));
}

TEST(Minibatch, DrawFrequenciesNearUniform) {
    // 100 negatives, a handful of positives; check the negative class draws
    Dataset ds;
    ds.from = 0;
    ds.to = 1;
    for (int i = 0; i < 104; ++i) {
        Sample s;
        s.cell = {i % 13, i / 13};
        s.label = (i < 4) ? 1 : 0;
        ds.samples.push_back(s);
    }
    ds.rebuild_index();
    ASSERT_EQ(ds.negative_indices.size(), 100u);

    std::vector<long> freq(104, 0);
    Rng rng(2024);
    const int batches = 10000, size = 20;
    for (int b = 0; b < batches; ++b)
        for (size_t idx : balanced_minibatch(ds, size, rng)) ++freq[idx];
    const double expect = batches * (size / 2) / 100.0;  // per negative sample
    for (int i = 4; i < 104; ++i) {
        EXPECT_GT(freq[i], expect * 0.85);
        EXPECT_LT(freq[i], expect * 1.15);
    }
}

TEST(Minibatch, MissingClassIsAnError) {
    Rng rng(82);
    LuGrid g = random_map(rng, 6, 6, {0, 1});
    FeatureStack stack = build_feature_stack(g, random_aux(rng, 6, 6, 1), 3);
    Dataset ds = assemble_dataset(g, g, stack, nullptr, 0, 1, 0);  // no positives
    Rng batch_rng(1);
    EXPECT_THROW(balanced_minibatch(ds, 8, batch_rng), data_error);
    EXPECT_THROW(balanced_minibatch(ds, 7, batch_rng), data_error);  // odd size
}
