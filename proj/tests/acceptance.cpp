// Acceptance suite: the shipping checklist for the toolkit, one test per
// criterion. Each test states its own tolerance and prints the measured
// numbers, so a run of this binary reads as a pass/fail line per criterion.
//
// A01  gradient correctness for every layer kind and both losses
// A02  spatial-weight identity at a = b = 0 and its hand-derived bias gradient
// A03  ranking and agreement metrics against independent oracles
// A04  CA allocation rules, conservation, and log replay
// A05  image-pattern rule: conv-net beats geo-net on ranking quality
// A06  noise robustness: CDAE features degrade less than conv features
// A07  CDAE reconstruction and denoising quality
// A08  vicinity credit grows with the fuzzy comparison neighborhood
// A09  spatial-weight layer does not hurt validation ranking
// A10  the command-line pipeline is byte-for-byte deterministic

#include "luc/pipeline.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

using namespace luc;
using namespace luc::metrics;

namespace {

// ---------------------------------------------------------------------------
// Independent oracles, kept deliberately naive.
// ---------------------------------------------------------------------------

// P(random positive outranks random negative), ties at half, by full pairing.
double pairwise_roc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    double won = 0.0;
    long pairs = 0;
    for (size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) continue;
        for (size_t j = 0; j < s.size(); ++j) {
            if (y[j]) continue;
            won += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            ++pairs;
        }
    }
    return won / static_cast<double>(pairs);
}

// PR area by enumerating every distinct threshold and recounting from scratch.
double exhaustive_pr_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    std::vector<double> thresholds = s;
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    long positives = 0;
    for (int v : y) positives += v ? 1 : 0;
    double area = 0.0, prev_recall = 0.0;
    for (double t : thresholds) {
        long tp = 0, fp = 0;
        for (size_t i = 0; i < s.size(); ++i) {
            if (s[i] < t) continue;
            (y[i] ? tp : fp) += 1;
        }
        const double recall = double(tp) / double(positives);
        area += (recall - prev_recall) * (double(tp) / double(tp + fp));
        prev_recall = recall;
    }
    return area;
}

// scores quantized to one decimal so tied groups actually occur
void random_ranked(int n, uint64_t seed, std::vector<double>* s, std::vector<int>* y) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    s->clear();
    y->clear();
    for (int i = 0; i < n; ++i) {
        s->push_back(std::round(u(rng) * 10.0) / 10.0);
        y->push_back(u(rng) < 0.4 ? 1 : 0);
    }
    // oracle and implementation both require two classes
    (*y)[0] = 1;
    (*y)[1] = 0;
}

// ---------------------------------------------------------------------------
// Shared synthetic-benchmark setup. One landscape family serves A05, A06 and
// A09: a planted rule whose trigger pattern lives only in the image, so a
// tabular model has a hard ceiling that a patch model can clear.
// ---------------------------------------------------------------------------

synth::SynthConfig benchmark_scenario(uint64_t seed, double noise_sd) {
    synth::SynthConfig sc;
    sc.width = 256;
    sc.height = 256;
    sc.smoothing_radius = 3;
    sc.noise_sd = noise_sd;
    sc.trigger_rate = 0.3;
    sc.rule.beta_bias = -3.0;
    sc.rule.beta_enrichment = 10.0;
    sc.rule.beta_distance = -20.0;
    sc.rule.beta_trigger = 3.0;
    sc.rng_seed = seed;
    return sc;
}

// the feature set the CLI builds: enrichment window plus per-category distances
FeatureStack benchmark_features(const LuGrid& t0) {
    std::vector<std::pair<std::string, ScalarField>> aux;
    for (Category c : t0.categories()) {
        RegionMask m(t0.width(), t0.height());
        long n = 0;
        for (int y = 0; y < t0.height(); ++y)
            for (int x = 0; x < t0.width(); ++x)
                if (!t0.masked(x, y) && t0.at(x, y) == c) {
                    m.set(x, y, true);
                    ++n;
                }
        if (n) aux.emplace_back("dist_" + std::to_string(static_cast<int>(c)),
                                distance_field(m, t0.cell_size()));
    }
    return build_feature_stack(t0, aux, 5);
}

model::ModelConfig benchmark_model(const std::string& kind, int feature_count, bool sw) {
    model::ModelConfig mc;
    mc.kind = kind;
    mc.feature_count = feature_count;
    mc.bands = 7;
    mc.patch_size = 9;
    mc.geo_hidden = {32, 16};
    mc.trunk_filters = {6, 12};
    mc.classifier_widths = {24, 8};
    mc.cdae_filters = {12};
    mc.cdae_classifier_widths = {32, 8};
    mc.spatial_weight = sw;
    return mc;
}

nn::TrainConfig benchmark_training(const std::string& kind, uint64_t seed) {
    nn::TrainConfig tc;
    tc.learning_rate = 0.05;
    tc.batch_size = kind == "geo" ? 32 : 16;
    tc.max_steps = kind == "geo" ? 800 : 600;
    tc.lr_decay_every = kind == "geo" ? 300 : 250;
    tc.rng_seed = seed;
    return tc;
}

// held-out region: the right quarter of the map
RegionSplit strip_split(const Dataset& all, int width, int height) {
    RegionMask region(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 3 * width / 4; x < width; ++x) region.set(x, y, true);
    return region_split(all, region, 0.25);
}

std::vector<int> sample_labels(const Dataset& ds) {
    std::vector<int> labels;
    labels.reserve(ds.samples.size());
    for (const Sample& s : ds.samples) labels.push_back(s.label);
    return labels;
}

double validation_auc_roc(model::TrainedModel& tm, const Dataset& val) {
    const std::vector<double> probs = model::predict_probability(tm.net, val);
    return evaluate_probability_scores(probs, sample_labels(val)).auc_roc;
}

double validation_auc_pr(model::TrainedModel& tm, const Dataset& val) {
    const std::vector<double> probs = model::predict_probability(tm.net, val);
    return auc_pr(probs, sample_labels(val));
}

// ---------------------------------------------------------------------------
// Pipeline-binary helpers for the determinism criterion.
// ---------------------------------------------------------------------------

std::string fresh_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

int run_tool(const std::string& args) {
    const std::string cmd = std::string(LUC_TOOL_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

// every regular file under root, keyed by relative path, as raw bytes
std::map<std::string, std::string> snapshot_tree(const std::string& root) {
    std::map<std::string, std::string> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        std::ifstream f(entry.path(), std::ios::binary);
        std::ostringstream body;
        body << f.rdbuf();
        files[std::filesystem::relative(entry.path(), root).string()] = body.str();
    }
    return files;
}

}  // namespace

// ---------------------------------------------------------------------------
// A01: every differentiable layer kind and both losses pass a central
// finite-difference check (h = 1e-5) with max relative error below 1e-5.
// ---------------------------------------------------------------------------

TEST(Acceptance, A01_GradientCorrectness) {
    const std::vector<pipeline::GradcheckRow> rows = pipeline::run_gradcheck(1);
    const std::vector<std::string> expected = {
        "conv",     "transposed_conv", "spatial_weight", "max_pool", "avg_pool",
        "global_avg_pool", "batchnorm", "relu",          "sigmoid",  "dense",
        "upsample", "bce_loss",        "mse_loss"};
    ASSERT_EQ(rows.size(), expected.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i].name, expected[i]);
        EXPECT_LT(rows[i].max_rel_err, 1e-5) << rows[i].name;
        std::printf("    %-16s max_rel_err=%.3e\n", rows[i].name.c_str(), rows[i].max_rel_err);
    }
}

// ---------------------------------------------------------------------------
// A02: with a = b = 0 the spatial-weight layer multiplies by exactly
// exp(0) + 0 = 1, so the forward pass must be bit-exact identity, and the
// bias gradient must equal the plain sum of input times upstream gradient.
// ---------------------------------------------------------------------------

TEST(Acceptance, A02_SpatialWeightIdentityAndBiasGradient) {
    const int channels = 3, height = 5, width = 7;
    nn::SpatialWeight layer("sw", channels, 0.0, 0.0);

    Rng rng(42);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    nn::Batch in(4), out, gout(4), gin;
    for (auto& t : in) {
        t = Tensor({channels, height, width});
        for (long i = 0; i < t.numel(); ++i) t[i] = u(rng);
    }
    for (auto& g : gout) {
        g = Tensor({channels, height, width});
        for (long i = 0; i < g.numel(); ++i) g[i] = u(rng);
    }

    layer.forward(in, out, false);
    ASSERT_EQ(out.size(), in.size());
    for (size_t s = 0; s < in.size(); ++s)
        for (long i = 0; i < in[s].numel(); ++i)
            ASSERT_EQ(out[s][i], in[s][i]) << "sample " << s << " element " << i;

    layer.backward(in, out, gout, gin);
    std::vector<nn::ParamRef> params;
    layer.params(params);
    ASSERT_EQ(params.size(), 2u);
    ASSERT_EQ(params[1].name, "sw.b");
    const Tensor& gb = *params[1].grad;
    double worst = 0.0;
    for (int d = 0; d < channels; ++d) {
        double want = 0.0;
        for (size_t s = 0; s < in.size(); ++s)
            for (int i = 0; i < height; ++i)
                for (int j = 0; j < width; ++j) want += in[s].at(d, i, j) * gout[s].at(d, i, j);
        worst = std::max(worst, std::abs(gb[d] - want));
        EXPECT_NEAR(gb[d], want, 1e-9) << "channel " << d;
    }
    std::printf("    bias-gradient worst abs err = %.3e\n", worst);
}

// ---------------------------------------------------------------------------
// A03: ranking and agreement metrics against brute-force oracles.
//   - auc_roc vs full pairwise comparison, 500 instances, 1e-9
//   - auc_pr vs exhaustive threshold enumeration, n <= 50, 1e-9
//   - quantity + allocation = 1 - accuracy on 1,000 random matrices, 1e-12
//   - kappa of any diagonal matrix is exactly 1
//   - fuzzy kappa_sim at neighborhood 1 equals plain kappa_sim, 100 triples
// ---------------------------------------------------------------------------

TEST(Acceptance, A03_MetricOracles) {
    for (int inst = 0; inst < 500; ++inst) {
        std::vector<double> s;
        std::vector<int> y;
        random_ranked(80, 1000 + static_cast<uint64_t>(inst), &s, &y);
        ASSERT_NEAR(auc_roc(s, y), pairwise_roc_oracle(s, y), 1e-9) << "instance " << inst;
    }

    Rng size_rng(2);
    std::uniform_int_distribution<int> pick_n(2, 50);
    for (int inst = 0; inst < 500; ++inst) {
        std::vector<double> s;
        std::vector<int> y;
        random_ranked(pick_n(size_rng), 2000 + static_cast<uint64_t>(inst), &s, &y);
        ASSERT_NEAR(auc_pr(s, y), exhaustive_pr_oracle(s, y), 1e-9) << "instance " << inst;
    }

    Rng mat_rng(3);
    std::uniform_int_distribution<int> count(0, 50);
    std::uniform_int_distribution<int> classes(2, 5);
    int done = 0;
    while (done < 1000) {
        const int k = classes(mat_rng);
        std::vector<Category> cats;
        for (int i = 0; i < k; ++i) cats.push_back(static_cast<Category>(i + 1));
        ConfusionMatrix cm(cats);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
                cm.at(i, j) = count(mat_rng);
                cm.total += cm.at(i, j);
            }
        if (cm.total == 0) continue;
        auto [q, a] = disagreement(cm);
        ASSERT_NEAR(q + a, 1.0 - accuracy(cm), 1e-12) << "matrix " << done;
        ++done;
    }

    Rng diag_rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const int k = classes(diag_rng);
        std::vector<Category> cats;
        for (int i = 0; i < k; ++i) cats.push_back(static_cast<Category>(i + 1));
        ConfusionMatrix cm(cats);
        for (int i = 0; i < k; ++i) {
            cm.at(i, i) = 1 + count(diag_rng);
            cm.total += cm.at(i, i);
        }
        EXPECT_DOUBLE_EQ(kappa(cm), 1.0) << "trial " << trial;
    }

    Rng grid_rng(5);
    std::uniform_int_distribution<int> cls(1, 2);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Category> a, b, c;
        for (int i = 0; i < 144; ++i) {
            a.push_back(static_cast<Category>(cls(grid_rng)));
            b.push_back(static_cast<Category>(cls(grid_rng)));
            c.push_back(static_cast<Category>(cls(grid_rng)));
        }
        LuGrid gi(12, 12, 30.0, {1, 2}, a);
        LuGrid ga(12, 12, 30.0, {1, 2}, b);
        LuGrid gs(12, 12, 30.0, {1, 2}, c);
        ASSERT_NEAR(fuzzy_kappa_simulation(gi, ga, gs, 1), kappa_simulation(gi, ga, gs), 1e-9)
            << "triple " << trial;
    }
}

// ---------------------------------------------------------------------------
// A04: allocation mechanics.
//   - expander_adjust matches a literal re-evaluation of its piecewise rule
//     on 1,000 random 5x5 grids, exactly
//   - realized transition counts equal min(quantity, eligible) across 50
//     seeded scenarios, exactly
//   - replaying the allocation log reproduces the simulated grid bit-exactly
// ---------------------------------------------------------------------------

TEST(Acceptance, A04_AllocationConservationAndReplay) {
    Rng rng(2024);
    std::uniform_real_distribution<double> up(0.0, 1.0);
    std::uniform_real_distribution<double> ut(0.05, 0.95);
    for (int trial = 0; trial < 1000; ++trial) {
        const int w = 5, h = 5;
        std::vector<Category> data(25);
        std::vector<uint8_t> mask(25);
        for (size_t i = 0; i < data.size(); ++i) {
            data[i] = static_cast<Category>(1 + rng() % 3);
            mask[i] = (rng() % 8 == 0) ? 1 : 0;
        }
        LuGrid g(w, h, 30.0, {1, 2, 3}, data, mask);
        ScalarField f(w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) f.at(x, y) = up(rng);
        const double t = ut(rng);
        ca::TransitionProbMap pm;
        pm.from = 1;
        pm.to = 2;
        pm.probs = f;
        const ScalarField adj = ca::expander_adjust(pm, g, t);

        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                long n = 0;
                for (int yy = y - 1; yy <= y + 1; ++yy)
                    for (int xx = x - 1; xx <= x + 1; ++xx) {
                        if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
                        if (g.masked(xx, yy)) continue;
                        if (g.at(xx, yy) == 2) ++n;
                    }
                const double p = f.at(x, y);
                const double want =
                    (n > 3 || p > t) ? p : p * std::sqrt(static_cast<double>(n) / 4.0);
                ASSERT_EQ(adj.at(x, y), want) << "trial " << trial << " cell " << x << "," << y;
            }
    }

    for (uint64_t scenario = 0; scenario < 50; ++scenario) {
        Rng srng(9000 + scenario);
        std::uniform_real_distribution<double> sp(0.0, 1.0);
        const int w = 30, h = 30;
        std::vector<Category> data(static_cast<size_t>(w) * h);
        for (auto& d : data) d = static_cast<Category>(1 + srng() % 3);
        const LuGrid g(w, h, 30.0, {1, 2, 3}, data);
        ScalarField f(w, h);
        // odd scenarios saturate the probability field so quantity == eligible
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) f.at(x, y) = (scenario % 2) ? 0.9 : sp(srng);
        ca::TransitionProbMap pm;
        pm.from = 1;
        pm.to = 2;
        pm.probs = f;

        ca::CaParams p;
        p.patch_size_mu = std::log(6.0);
        p.rng_seed = 100 + scenario;
        const long q = ca::derive_quantity(pm, g, p.threshold);
        long eligible = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (!g.masked(x, y) && g.at(x, y) == 1) ++eligible;
        ASSERT_GT(q, 0);

        ca::SimulationState st(g);
        const long realized = ca::simulate_transition(st, pm, p);
        EXPECT_EQ(realized, std::min(q, eligible)) << "scenario " << scenario;
        EXPECT_EQ(st.log.realized_total(1, 2), realized);

        long changed = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (st.grid.at(x, y) != g.at(x, y)) {
                    EXPECT_EQ(g.at(x, y), 1);
                    EXPECT_EQ(st.grid.at(x, y), 2);
                    ++changed;
                }
        EXPECT_EQ(changed, realized) << "scenario " << scenario;

        EXPECT_TRUE(ca::replay_log(g, st.log) == st.grid) << "scenario " << scenario;
    }
}

// ---------------------------------------------------------------------------
// A05: on a landscape whose planted rule contains an image-only trigger
// pattern, a patch-based conv-net must beat the tabular geo-net on held-out
// ranking: mean AUC-ROC gap >= 0.03 over 3 seeds, both means >= 0.7.
// ---------------------------------------------------------------------------

TEST(Acceptance, A05_ConvNetBeatsGeoNetOnImageRule) {
    double geo_sum = 0.0, conv_sum = 0.0;
    for (uint64_t seed : {1u, 2u, 3u}) {
        const synth::SynthScenario s = synth::make_scenario(benchmark_scenario(seed, 0.25));
        const FeatureStack stack = benchmark_features(s.t0);
        auto img = std::make_shared<const MultiBandImage>(s.image);
        const Dataset all = assemble_dataset(s.t0, s.t1, stack, img, synth::kForest,
                                             synth::kAgriculture, 9);
        const RegionSplit sp = strip_split(all, 256, 256);

        model::ModelConfig geo_mc = benchmark_model("geo", stack.feature_count(), true);
        model::TrainedModel geo = model::train_classifier(geo_mc, sp.train, sp.validation,
                                                          benchmark_training("geo", seed), 0.0, 150);
        const double geo_auc = validation_auc_roc(geo, sp.validation);

        model::ModelConfig conv_mc = benchmark_model("conv", stack.feature_count(), true);
        model::TrainedModel conv = model::train_classifier(conv_mc, sp.train, sp.validation,
                                                           benchmark_training("conv", seed), 0.0, 150);
        const double conv_auc = validation_auc_roc(conv, sp.validation);

        std::printf("    seed %llu: geo auc=%.4f conv auc=%.4f gap=%.4f\n",
                    static_cast<unsigned long long>(seed), geo_auc, conv_auc, conv_auc - geo_auc);
        geo_sum += geo_auc;
        conv_sum += conv_auc;
    }
    const double geo_mean = geo_sum / 3.0, conv_mean = conv_sum / 3.0;
    std::printf("    means: geo=%.4f conv=%.4f gap=%.4f\n", geo_mean, conv_mean,
                conv_mean - geo_mean);
    EXPECT_GE(geo_mean, 0.7);
    EXPECT_GE(conv_mean, 0.7);
    EXPECT_GE(conv_mean - geo_mean, 0.03);
}

// ---------------------------------------------------------------------------
// A06: models trained on the baseline image are evaluated, frozen, on a
// re-render of the same landscape with the noise sd tripled. The CDAE-latent
// classifier's AUC-PR must degrade by less than the conv-net's, on average
// over 3 seeds. Both degradation deltas are reported.
// ---------------------------------------------------------------------------

TEST(Acceptance, A06_CdaeDegradesLessUnderNoise) {
    double conv_delta_sum = 0.0, cdae_delta_sum = 0.0;
    for (uint64_t seed : {1u, 2u, 3u}) {
        const synth::SynthScenario clean = synth::make_scenario(benchmark_scenario(seed, 0.25));
        const synth::SynthScenario noisy = synth::make_scenario(benchmark_scenario(seed, 0.75));
        // same seed renders the same landscape and labels; only the image
        // noise amplitude differs, which is the variable under test
        for (int y = 0; y < clean.t1.height(); ++y)
            for (int x = 0; x < clean.t1.width(); ++x)
                ASSERT_EQ(clean.t1.at(x, y), noisy.t1.at(x, y));

        const FeatureStack stack = benchmark_features(clean.t0);
        auto img_clean = std::make_shared<const MultiBandImage>(clean.image);
        auto img_noisy = std::make_shared<const MultiBandImage>(noisy.image);
        const Dataset all_clean = assemble_dataset(clean.t0, clean.t1, stack, img_clean,
                                                   synth::kForest, synth::kAgriculture, 9);
        const Dataset all_noisy = assemble_dataset(clean.t0, clean.t1, stack, img_noisy,
                                                   synth::kForest, synth::kAgriculture, 9);
        const RegionSplit sp_clean = strip_split(all_clean, 256, 256);
        const RegionSplit sp_noisy = strip_split(all_noisy, 256, 256);

        for (const std::string kind : {"conv", "cdae"}) {
            model::ModelConfig mc = benchmark_model(kind, stack.feature_count(), true);
            nn::TrainConfig tc = benchmark_training(kind, seed);
            model::TrainedModel tm;
            if (kind == "cdae") {
                nn::TrainConfig pre = tc;
                pre.max_steps = 400;
                pre.rng_seed = derive_seed(seed, "cdae");
                model::CdaeTrained ct =
                    model::train_cdae(mc, sp_clean.train, sp_clean.validation, pre, 100);
                tm = model::train_classifier(mc, sp_clean.train, sp_clean.validation, tc, 0.0, 150,
                                             &ct.model);
            } else {
                tm = model::train_classifier(mc, sp_clean.train, sp_clean.validation, tc, 0.0, 150);
            }
            const double pr_clean = validation_auc_pr(tm, sp_clean.validation);
            const double pr_noisy = validation_auc_pr(tm, sp_noisy.validation);
            const double delta = pr_clean - pr_noisy;
            std::printf("    seed %llu %s: auc_pr %.4f -> %.4f, delta=%.4f\n",
                        static_cast<unsigned long long>(seed), kind.c_str(), pr_clean, pr_noisy,
                        delta);
            (kind == "cdae" ? cdae_delta_sum : conv_delta_sum) += delta;
        }
    }
    const double conv_delta = conv_delta_sum / 3.0, cdae_delta = cdae_delta_sum / 3.0;
    std::printf("    mean degradation: conv=%.4f cdae=%.4f\n", conv_delta, cdae_delta);
    EXPECT_LT(cdae_delta, conv_delta);
}

// ---------------------------------------------------------------------------
// A07: reconstruction quality. Trained on a low-noise landscape, the CDAE
// must cut clean-target MSE at least 5x against its Glorot-initialized
// starting point, and reconstructing from sigma = 0.3 corrupted inputs must
// beat leaving the corruption in place, both on held-out patches.
// ---------------------------------------------------------------------------

TEST(Acceptance, A07_CdaeReconstructionAndDenoising) {
    synth::SynthConfig sc = benchmark_scenario(1, 0.02);
    // reconstruction is judged on landscape structure, so the scenario drops
    // the unlearnable per-cell trigger stamps and uses broader patches
    sc.trigger_rate = 0.0;
    sc.trigger_strength = 0.0;
    sc.smoothing_radius = 15;
    const synth::SynthScenario s = synth::make_scenario(sc);
    const FeatureStack stack = benchmark_features(s.t0);
    auto img = std::make_shared<const MultiBandImage>(s.image);
    const Dataset all =
        assemble_dataset(s.t0, s.t1, stack, img, synth::kForest, synth::kAgriculture, 9);
    const RegionSplit sp = strip_split(all, 256, 256);

    model::ModelConfig mc = benchmark_model("cdae", stack.feature_count(), true);
    mc.cdae_filters = {48};
    nn::TrainConfig pre = benchmark_training("cdae", 1);
    pre.learning_rate = 0.02;
    pre.max_steps = 1500;
    pre.lr_decay_every = 500;

    Rng init_rng(derive_seed(1, "fresh"));
    model::Cdae fresh = model::build_cdae_model(mc, init_rng);
    const double mse_init = model::evaluate_reconstruction(fresh, sp.validation);

    model::CdaeTrained ct = model::train_cdae(mc, sp.train, sp.validation, pre, 100);
    const double mse_trained = model::evaluate_reconstruction(ct.model, sp.validation);

    Rng crng(derive_seed(1, "corrupt-eval"));
    double mse_recon = 0.0, mse_corrupted = 0.0;
    long n = 0;
    const Dataset& val = sp.validation;
    for (size_t i = 0; i < val.samples.size(); i += 16) {
        nn::Batch clean_b, corr_b;
        for (size_t j = i; j < std::min(val.samples.size(), i + 16); ++j) {
            Tensor x = val.patch(j);
            corr_b.push_back(model::corrupt(x, 0.3, crng));
            clean_b.push_back(std::move(x));
        }
        const nn::Batch& latent = ct.model.encoder.forward(corr_b, false);
        nn::Batch recon = ct.model.decoder.forward(latent, false);
        mse_recon += nn::mse_loss(recon, clean_b).value * static_cast<double>(clean_b.size());
        mse_corrupted += nn::mse_loss(corr_b, clean_b).value * static_cast<double>(clean_b.size());
        n += static_cast<long>(clean_b.size());
    }
    mse_recon /= static_cast<double>(n);
    mse_corrupted /= static_cast<double>(n);

    std::printf("    mse: init=%.4f trained=%.4f (ratio %.1fx)\n", mse_init, mse_trained,
                mse_init / mse_trained);
    std::printf("    denoising at sigma 0.3: recon=%.4f corrupted=%.4f\n", mse_recon,
                mse_corrupted);
    EXPECT_GE(mse_init / mse_trained, 5.0);
    EXPECT_LT(mse_recon, mse_corrupted);
}

// ---------------------------------------------------------------------------
// A08: a simulated change strip one cell away from the actual strip earns no
// cell-wise credit but increasing vicinity credit, so the agreement scores
// must order strictly: fuzzy(7x7) > fuzzy(3x3) > plain kappa_sim.
// ---------------------------------------------------------------------------

TEST(Acceptance, A08_VicinityCreditGrowsWithNeighborhood) {
    const int w = 16, h = 16;
    LuGrid initial = LuGrid::filled(w, h, 30.0, {1, 2}, 1);
    LuGrid actual = initial;
    LuGrid simulated = initial;
    for (int x = 0; x < w; ++x) {
        actual.set(x, 7, 2);
        simulated.set(x, 8, 2);
    }

    const double strict = kappa_simulation(initial, actual, simulated);
    const double fuzzy3 = fuzzy_kappa_simulation(initial, actual, simulated, 3);
    const double fuzzy7 = fuzzy_kappa_simulation(initial, actual, simulated, 7);
    std::printf("    kappa_sim=%.4f fuzzy3=%.4f fuzzy7=%.4f\n", strict, fuzzy3, fuzzy7);
    EXPECT_GT(fuzzy7, fuzzy3);
    EXPECT_GT(fuzzy3, strict);
}

// ---------------------------------------------------------------------------
// A09: ablating the spatial-weight layer from the conv-net must not improve
// held-out ranking on the benchmark task: mean AUC-ROC with the layer >=
// mean without, over 3 seeds. The observed direction is reported either way.
// ---------------------------------------------------------------------------

TEST(Acceptance, A09_SpatialWeightDoesNotHurt) {
    double on_sum = 0.0, off_sum = 0.0;
    for (uint64_t seed : {1u, 2u, 3u}) {
        const synth::SynthScenario s = synth::make_scenario(benchmark_scenario(seed, 0.25));
        const FeatureStack stack = benchmark_features(s.t0);
        auto img = std::make_shared<const MultiBandImage>(s.image);
        const Dataset all = assemble_dataset(s.t0, s.t1, stack, img, synth::kForest,
                                             synth::kAgriculture, 9);
        const RegionSplit sp = strip_split(all, 256, 256);

        for (bool sw : {true, false}) {
            model::ModelConfig mc = benchmark_model("conv", stack.feature_count(), sw);
            model::TrainedModel tm = model::train_classifier(
                mc, sp.train, sp.validation, benchmark_training("conv", seed), 0.0, 150);
            const double auc = validation_auc_roc(tm, sp.validation);
            std::printf("    seed %llu spatial_weight=%s auc=%.4f\n",
                        static_cast<unsigned long long>(seed), sw ? "on " : "off", auc);
            (sw ? on_sum : off_sum) += auc;
        }
    }
    const double on_mean = on_sum / 3.0, off_mean = off_sum / 3.0;
    std::printf("    means: on=%.4f off=%.4f direction: %s\n", on_mean, off_mean,
                on_mean > off_mean ? "layer helps"
                                   : (on_mean == off_mean ? "tie" : "layer hurts"));
    EXPECT_GE(on_mean, off_mean);
}

// ---------------------------------------------------------------------------
// A10: running the full command-line pipeline twice from one configuration
// must produce byte-identical artifacts, config echoes included.
// ---------------------------------------------------------------------------

TEST(Acceptance, A10_PipelineIsByteDeterministic) {
    const std::string out = fresh_dir("luc_acceptance_determinism");
    const std::string cfg_path = out + "/pipeline.ini";
    {
        std::ofstream cfg(cfg_path);
        ASSERT_TRUE(bool(cfg));
        cfg << "[paths]\n"
            << "out = " << out << "/run\n"
            << "[synth]\n"
            << "width = 64\n"
            << "height = 64\n"
            << "seed = 21\n"
            << "[model]\n"
            << "kind = geo\n"
            << "geo_hidden = 16,8\n"
            << "[train]\n"
            << "steps = 300\n"
            << "batch_size = 16\n"
            << "learning_rate = 0.05\n"
            << "eval_every = 25\n"
            << "seed = 23\n"
            << "[ca]\n"
            << "seed = 29\n"
            << "[metrics]\n"
            << "neighborhoods = 3,7\n"
            << "shuffles = 10\n"
            << "seed = 31\n";
    }

    std::map<std::string, std::string> first;
    for (int run = 0; run < 2; ++run) {
        std::filesystem::remove_all(out + "/run");
        for (const char* cmd :
             {"synth", "featurize", "train", "predict", "simulate", "evaluate"})
            ASSERT_EQ(run_tool(std::string(cmd) + " --config " + cfg_path), 0)
                << cmd << " run " << run;
        std::map<std::string, std::string> tree = snapshot_tree(out + "/run");
        ASSERT_GE(tree.size(), 15u);
        if (run == 0) {
            first = std::move(tree);
            continue;
        }
        ASSERT_EQ(tree.size(), first.size());
        for (const auto& [path, body] : tree) {
            ASSERT_TRUE(first.count(path)) << "extra artifact " << path;
            EXPECT_EQ(body, first[path]) << "artifact differs: " << path;
        }
        std::printf("    %zu artifacts byte-identical across reruns\n", tree.size());
    }
}
