// Model families for transition-probability estimation: the feature-only MLP
// (geo-net), the hybrid two-branch CNN with spatial-weight layers (conv-net),
// and the convolutional denoising autoencoder with its separate classifier
// (cdae-net). Also the training loops, augmentation, prediction, and
// persistence for all of them.
#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "luc/common.hpp"
#include "luc/features.hpp"
#include "luc/nn.hpp"
#include "luc/raster.hpp"

namespace luc::model {

using nn::Batch;
using nn::Network;
using nn::NetworkSpec;
using nn::LayerKind;
using nn::LayerSpec;
using nn::ParamRef;
using nn::TrainConfig;

// ---------------------------------------------------------------------------
// Architecture configuration. The published per-transition architectures are
// presets over this; every knob stays configurable so the sensitivity
// variants (average pooling, no spatial weight, other filter counts) are pure
// configuration.
// ---------------------------------------------------------------------------
struct ModelConfig {
    std::string kind = "geo";  // geo | conv | cdae
    int feature_count = 0;
    int bands = 0;
    int patch_size = 27;

    std::vector<int> geo_hidden = {64, 32};  // geo-net hidden widths

    std::vector<int> trunk_filters = {128, 256, 512, 1024};
    std::vector<int> classifier_widths = {1036, 400, 80, 7};
    std::vector<int> geo_branch_widths;  // empty: normalized features pass straight through
    bool spatial_weight = true;
    std::string pooling = "max";  // max | avg

    std::vector<int> cdae_filters = {64, 128};
    std::vector<int> cdae_classifier_widths = {579, 579, 579};
    double corruption_sigma = 0.3;

    void validate() const {
        if (kind != "geo" && kind != "conv" && kind != "cdae")
            throw config_error("unknown model kind '" + kind + "'");
        if (feature_count < 1) throw config_error("feature_count must be >= 1");
        if (kind == "geo" && geo_hidden.empty()) throw config_error("geo-net needs at least one hidden layer");
        if (kind != "geo") {
            if (bands < 1) throw config_error("image models need bands >= 1");
            if (patch_size < 1 || patch_size % 2 == 0) throw config_error("patch_size must be odd");
        }
        if (kind == "conv" && trunk_filters.empty()) throw config_error("conv trunk needs filters");
        if (kind == "cdae" && cdae_filters.empty()) throw config_error("cdae encoder needs filters");
        if (pooling != "max" && pooling != "avg") throw config_error("pooling must be max or avg");
    }
};

// Published conv-net presets, keyed by transition name.
inline ModelConfig conv_net_preset(const std::string& transition, int feature_count) {
    ModelConfig mc;
    mc.kind = "conv";
    mc.feature_count = feature_count;
    mc.bands = 7;
    mc.patch_size = 27;
    if (transition == "forest_to_agri" || transition == "agri_to_forest") {
        mc.trunk_filters = {128, 256, 512, 1024};
        mc.classifier_widths = {1036, 400, 80, 7};
    } else if (transition == "agri_to_built_up") {
        mc.trunk_filters = {256, 512, 1024, 2048};
        mc.classifier_widths = {2048, 800, 300, 120, 60};
    } else {
        throw config_error("unknown transition '" + transition + "'");
    }
    return mc;
}

// Published cdae-net presets.
inline ModelConfig cdae_preset(const std::string& transition, int feature_count) {
    ModelConfig mc;
    mc.kind = "cdae";
    mc.feature_count = feature_count;
    mc.bands = 7;
    mc.patch_size = 81;
    mc.cdae_filters = {64, 128};
    if (transition == "forest_to_agri" || transition == "agri_to_forest") {
        mc.cdae_classifier_widths = {579, 579, 579};
    } else if (transition == "agri_to_built_up") {
        mc.cdae_classifier_widths = {579, 579, 579, 100};
    } else {
        throw config_error("unknown transition '" + transition + "'");
    }
    return mc;
}

// ---------------------------------------------------------------------------
// Spec builders
// ---------------------------------------------------------------------------

// dense/ReLU stack ending in dense-1 + sigmoid
inline NetworkSpec build_geo_net(int feature_count, const std::vector<int>& hidden) {
    if (feature_count < 1) throw config_error("geo-net needs feature_count >= 1");
    if (hidden.empty()) throw config_error("geo-net needs at least one hidden layer");
    NetworkSpec spec;
    spec.input_shape = {feature_count};
    for (int w : hidden) {
        spec.layers.push_back({.kind = LayerKind::dense, .units = w});
        spec.layers.push_back({.kind = LayerKind::relu});
    }
    spec.layers.push_back({.kind = LayerKind::dense, .units = 1});
    spec.layers.push_back({.kind = LayerKind::sigmoid});
    return spec;
}

// Convolutional trunk: per block conv(3x3, same padding) + batchnorm + ReLU,
// a spatial-weight layer after every block when enabled, pooling after the
// first two blocks only, global average pooling at the end.
inline NetworkSpec build_conv_trunk(const ModelConfig& mc) {
    NetworkSpec spec;
    spec.input_shape = {mc.bands, mc.patch_size, mc.patch_size};
    const LayerKind pool = mc.pooling == "avg" ? LayerKind::avg_pool : LayerKind::max_pool;
    for (size_t blk = 0; blk < mc.trunk_filters.size(); ++blk) {
        spec.layers.push_back(
            {.kind = LayerKind::conv, .filters = mc.trunk_filters[blk], .size = 3, .stride = 1, .pad = 1});
        spec.layers.push_back({.kind = LayerKind::batchnorm});
        spec.layers.push_back({.kind = LayerKind::relu});
        if (mc.spatial_weight) spec.layers.push_back({.kind = LayerKind::spatial_weight});
        if (blk < 2) spec.layers.push_back({.kind = pool, .size = 3});
    }
    spec.layers.push_back({.kind = LayerKind::global_avg_pool});
    return spec;
}

// classifier head consuming the concatenated branch outputs
inline NetworkSpec build_head(int in_dim, const std::vector<int>& widths) {
    NetworkSpec spec;
    spec.input_shape = {in_dim};
    for (int w : widths) {
        spec.layers.push_back({.kind = LayerKind::dense, .units = w});
        spec.layers.push_back({.kind = LayerKind::relu});
    }
    spec.layers.push_back({.kind = LayerKind::dense, .units = 1});
    spec.layers.push_back({.kind = LayerKind::sigmoid});
    return spec;
}

// geo branch as a small MLP; empty widths mean the features pass through
inline NetworkSpec build_geo_branch(int feature_count, const std::vector<int>& widths) {
    NetworkSpec spec;
    spec.input_shape = {feature_count};
    for (int w : widths) {
        spec.layers.push_back({.kind = LayerKind::dense, .units = w});
        spec.layers.push_back({.kind = LayerKind::relu});
    }
    return spec;
}

// encoder: conv blocks with same padding, each followed by 3x3/3 max pooling
inline NetworkSpec build_cdae_encoder(const ModelConfig& mc) {
    NetworkSpec spec;
    spec.input_shape = {mc.bands, mc.patch_size, mc.patch_size};
    for (int f : mc.cdae_filters) {
        spec.layers.push_back({.kind = LayerKind::conv, .filters = f, .size = 3, .stride = 1, .pad = 1});
        spec.layers.push_back({.kind = LayerKind::batchnorm});
        spec.layers.push_back({.kind = LayerKind::relu});
        spec.layers.push_back({.kind = LayerKind::max_pool, .size = 3});
    }
    return spec;
}

// decoder mirror with untied weights: unpooling is factor-3 replication, each
// deconvolution undoes the channel change of its encoder counterpart; the
// reconstruction layer is linear
inline NetworkSpec build_cdae_decoder(const ModelConfig& mc) {
    NetworkSpec spec;
    const auto& f = mc.cdae_filters;
    int spatial = mc.patch_size;
    for (size_t i = 0; i < f.size(); ++i) spatial /= 3;
    spec.input_shape = {f.back(), spatial, spatial};
    for (size_t i = f.size(); i-- > 0;) {
        spec.layers.push_back({.kind = LayerKind::upsample, .factor = 3});
        const int out_ch = i == 0 ? mc.bands : f[i - 1];
        spec.layers.push_back(
            {.kind = LayerKind::transposed_conv, .filters = out_ch, .size = 3, .stride = 1, .pad = 1});
        if (i != 0) {
            spec.layers.push_back({.kind = LayerKind::batchnorm});
            spec.layers.push_back({.kind = LayerKind::relu});
        }
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Two-branch composite. The image branch output is raveled and concatenated
// with the geo branch output before the head. Either branch may be absent
// (geo-net has no image branch; a passthrough geo branch has zero layers).
// An attached encoder can be frozen so classifier training never touches it.
// ---------------------------------------------------------------------------
class HybridNet {
public:
    bool has_image = false;
    bool image_frozen = false;
    Network image;
    Network geo;
    Network head;

    Batch forward(const Batch& images, const Batch& geos, bool train) {
        if (has_image && images.size() != geos.size())
            throw data_error("image/geo batch sizes differ");
        const Batch& geo_out = geo.forward(geos, train);
        Batch concat(geos.size());
        if (has_image) {
            // a frozen branch also keeps its batchnorm running statistics
            // fixed, so it always runs in inference mode
            const Batch& img_out = image.forward(images, train && !image_frozen);
            img_shape_ = img_out.empty() ? std::vector<int>{} : img_out[0].shape();
            for (size_t s = 0; s < geos.size(); ++s) {
                long ni = img_out[s].numel(), ng = geo_out[s].numel();
                Tensor c({static_cast<int>(ni + ng)});
                for (long i = 0; i < ni; ++i) c[i] = img_out[s][i];
                for (long i = 0; i < ng; ++i) c[ni + i] = geo_out[s][i];
                concat[s] = std::move(c);
            }
        } else {
            concat = geo_out;
        }
        return head.forward(concat, train);
    }

    // fills parameter gradients; returns nothing (input grads are not needed
    // by any caller)
    void backward(const Batch& gpred) {
        Batch gconcat = head.backward(gpred);
        if (!has_image) {
            geo.backward(gconcat);
            return;
        }
        long ni = 1;
        for (int d : img_shape_) ni *= d;
        Batch gimg(gconcat.size()), ggeo(gconcat.size());
        for (size_t s = 0; s < gconcat.size(); ++s) {
            Tensor gi({static_cast<int>(ni)});
            for (long i = 0; i < ni; ++i) gi[i] = gconcat[s][i];
            gimg[s] = gi.reshaped(img_shape_);
            Tensor gg({static_cast<int>(gconcat[s].numel() - ni)});
            for (long i = 0; i < gg.numel(); ++i) gg[i] = gconcat[s][ni + i];
            ggeo[s] = std::move(gg);
        }
        geo.backward(ggeo);
        if (!image_frozen) image.backward(gimg);
    }

    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        if (has_image) {
            auto p = image.params();
            out.insert(out.end(), p.begin(), p.end());
        }
        auto pg = geo.params();
        out.insert(out.end(), pg.begin(), pg.end());
        auto ph = head.params();
        out.insert(out.end(), ph.begin(), ph.end());
        return out;
    }

    // what the optimizer may move: everything except a frozen image branch
    std::vector<ParamRef> optimizer_params() {
        std::vector<ParamRef> out;
        if (has_image && !image_frozen) {
            auto p = image.params();
            out.insert(out.end(), p.begin(), p.end());
        }
        auto pg = geo.params();
        out.insert(out.end(), pg.begin(), pg.end());
        auto ph = head.params();
        out.insert(out.end(), ph.begin(), ph.end());
        return out;
    }

    void zero_grads() {
        for (ParamRef p : params())
            if (p.grad) p.grad->fill(0.0);
    }

private:
    std::vector<int> img_shape_;
};

inline long numel_of_shape(const std::vector<int>& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
}

// Materializes a HybridNet per the config. The image branch of a cdae model
// is the encoder, frozen; its weights come from a separately trained CDAE.
inline HybridNet build_model(const ModelConfig& mc, Rng& rng) {
    mc.validate();
    HybridNet net;
    if (mc.kind == "geo") {
        net.head = nn::build_network(build_geo_net(mc.feature_count, mc.geo_hidden), rng, "head.");
        return net;
    }
    NetworkSpec trunk = mc.kind == "conv" ? build_conv_trunk(mc) : build_cdae_encoder(mc);
    const std::vector<int> trunk_out = nn::validate_spec(trunk);
    NetworkSpec geo_branch = build_geo_branch(mc.feature_count, mc.geo_branch_widths);
    const std::vector<int> geo_out = nn::validate_spec(geo_branch);
    const int head_in = static_cast<int>(numel_of_shape(trunk_out) + numel_of_shape(geo_out));
    const auto& widths = mc.kind == "conv" ? mc.classifier_widths : mc.cdae_classifier_widths;

    net.has_image = true;
    net.image_frozen = mc.kind == "cdae";
    net.image = nn::build_network(trunk, rng, "image.");
    net.geo = nn::build_network(geo_branch, rng, "geo.");
    net.head = nn::build_network(build_head(head_in, widths), rng, "head.");
    return net;
}

// ---------------------------------------------------------------------------
// Autoencoder pair
// ---------------------------------------------------------------------------
struct Cdae {
    Network encoder;  // parameter names use the "image." prefix so a trained
                      // encoder drops straight into a classifier's image branch
    Network decoder;
};

inline Cdae build_cdae_model(const ModelConfig& mc, Rng& rng) {
    Cdae c;
    c.encoder = nn::build_network(build_cdae_encoder(mc), rng, "image.");
    c.decoder = nn::build_network(build_cdae_decoder(mc), rng, "decoder.");
    return c;
}

// encoder forward in inference mode, raveled for the classifier
inline Tensor encode_latent(Cdae& cdae, const Tensor& image) {
    const Batch& out = cdae.encoder.forward({image}, false);
    Tensor flat = out[0];
    return flat.reshaped({static_cast<int>(flat.numel())});
}

// ---------------------------------------------------------------------------
// Augmentation / corruption
// ---------------------------------------------------------------------------

// elementwise additive Gaussian noise
inline Tensor corrupt(const Tensor& image, double sigma, Rng& rng) {
    if (sigma < 0.0) throw config_error("corruption sigma must be >= 0");
    if (sigma == 0.0) return image;
    std::normal_distribution<double> n(0.0, sigma);
    Tensor out = image;
    for (long i = 0; i < out.numel(); ++i) out[i] += n(rng);
    return out;
}

// per-band multiplicative illumination factor (1 + eps), eps ~ N(0, s^2),
// clamped to [0.5, 1.5]; never flips or rotates
inline Tensor jitter(const Tensor& image, Rng& rng, double strength) {
    if (strength < 0.0) throw config_error("jitter strength must be >= 0");
    if (strength == 0.0) return image;
    if (image.shape().size() != 3) throw data_error("jitter expects a (bands, h, w) tensor");
    std::normal_distribution<double> n(0.0, strength);
    Tensor out = image;
    const int C = image.shape()[0];
    const long per = image.numel() / C;
    for (int c = 0; c < C; ++c) {
        const double f = std::clamp(1.0 + n(rng), 0.5, 1.5);
        for (long i = 0; i < per; ++i) out[static_cast<long>(c) * per + i] *= f;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct HistoryRow {
    long step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

inline void save_history(const std::vector<HistoryRow>& rows, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw data_error("cannot write history: " + path);
    f << "step,lr,train_loss,validation_loss\n";
    char line[256];
    for (const HistoryRow& r : rows) {
        std::snprintf(line, sizeof line, "%ld,%.17g,%.17g,%.17g\n", r.step, r.lr, r.train_loss, r.val_loss);
        f << line;
    }
}

struct TrainedModel {
    ModelConfig config;
    TrainConfig train;
    HybridNet net;
    Category from = 0;
    Category to = 0;
    std::vector<std::string> feature_names;
    std::vector<double> feature_means;
    std::vector<double> feature_sds;
    std::vector<HistoryRow> history;
    long best_step = -1;
    double best_validation = 0.0;
};

namespace detail {

inline Tensor geo_tensor(const Sample& s) {
    Tensor t({static_cast<int>(s.geo.size())});
    for (size_t i = 0; i < s.geo.size(); ++i) t[static_cast<long>(i)] = s.geo[i];
    return t;
}

inline std::vector<Tensor> snapshot(const std::vector<ParamRef>& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const ParamRef& p : params) out.push_back(*p.value);
    return out;
}

inline void restore(const std::vector<ParamRef>& params, const std::vector<Tensor>& snap) {
    for (size_t i = 0; i < params.size(); ++i) *params[i].value = snap[i];
}

}  // namespace detail

// mean BCE over a whole dataset, inference mode, fixed chunking
inline double evaluate_bce(HybridNet& net, const Dataset& ds, int chunk = 64) {
    double total = 0.0;
    const bool with_image = net.has_image;
    for (size_t start = 0; start < ds.samples.size(); start += static_cast<size_t>(chunk)) {
        const size_t end = std::min(ds.samples.size(), start + static_cast<size_t>(chunk));
        Batch images, geos;
        std::vector<double> labels;
        for (size_t i = start; i < end; ++i) {
            if (with_image) images.push_back(ds.patch(i));
            geos.push_back(detail::geo_tensor(ds.samples[i]));
            labels.push_back(ds.samples[i].label);
        }
        Batch pred = net.forward(images, geos, false);
        total += nn::bce_loss(pred, labels).value * static_cast<double>(end - start);
    }
    return total / static_cast<double>(ds.samples.size());
}

// Balanced-minibatch SGD with BCE loss, illumination jitter on the image
// branch, gradient noise, and best-validation-loss checkpointing. Pass the
// trained autoencoder for cdae classifiers; its encoder weights are copied in
// and stay frozen.
inline TrainedModel train_classifier(const ModelConfig& mc, const Dataset& train_ds,
                                     const Dataset& val_ds, const TrainConfig& tc,
                                     double jitter_strength = 0.0, int eval_every = 10,
                                     Cdae* encoder_source = nullptr) {
    mc.validate();
    tc.validate();
    if (train_ds.positive_indices.empty() || train_ds.negative_indices.empty())
        throw data_error("training set needs both classes");
    if (val_ds.samples.empty()) throw data_error("validation set is empty");

    TrainedModel tm;
    tm.config = mc;
    tm.train = tc;
    tm.from = train_ds.from;
    tm.to = train_ds.to;

    Rng init_rng(derive_seed(tc.rng_seed, "init"));
    tm.net = build_model(mc, init_rng);
    if (mc.kind == "cdae") {
        if (!encoder_source) throw config_error("cdae classifier training needs a trained autoencoder");
        nn::apply_weights(tm.net.image.params(), [&] {
            std::vector<std::pair<std::string, Tensor>> w;
            for (ParamRef p : encoder_source->encoder.params()) w.emplace_back(p.name, *p.value);
            return w;
        }());
    }
    const bool with_image = tm.net.has_image;
    if (with_image && !train_ds.has_patches())
        throw data_error("model has an image branch but the dataset has no patches");

    Rng batch_rng(derive_seed(tc.rng_seed, "batches"));
    Rng jitter_rng(derive_seed(tc.rng_seed, "jitter"));
    Rng noise_rng(derive_seed(tc.rng_seed, "gradient-noise"));

    std::map<std::string, Tensor> velocity;
    auto opt_params = tm.net.optimizer_params();
    auto all_params = tm.net.params();
    std::vector<Tensor> best = detail::snapshot(all_params);
    tm.best_validation = std::numeric_limits<double>::infinity();

    for (long step = 0; step < tc.max_steps; ++step) {
        auto idx = balanced_minibatch(train_ds, tc.batch_size, batch_rng);
        Batch images, geos;
        std::vector<double> labels;
        for (size_t i : idx) {
            if (with_image) images.push_back(jitter(train_ds.patch(i), jitter_rng, jitter_strength));
            geos.push_back(detail::geo_tensor(train_ds.samples[i]));
            labels.push_back(train_ds.samples[i].label);
        }
        Batch pred = tm.net.forward(images, geos, true);
        nn::LossResult loss = nn::bce_loss(pred, labels);
        if (!std::isfinite(loss.value))
            throw numeric_error("training diverged (non-finite loss) at step " + std::to_string(step));
        tm.net.zero_grads();
        tm.net.backward(loss.grad);
        nn::sgd_step(opt_params, velocity, tc, step, noise_rng);

        if (step % eval_every == 0 || step == tc.max_steps - 1) {
            const double val = evaluate_bce(tm.net, val_ds);
            if (!std::isfinite(val))
                throw numeric_error("validation loss non-finite at step " + std::to_string(step));
            tm.history.push_back({step, nn::lr_at(tc, step), loss.value, val});
            if (val < tm.best_validation) {
                tm.best_validation = val;
                tm.best_step = step;
                best = detail::snapshot(all_params);
            }
        }
    }
    detail::restore(all_params, best);
    return tm;
}

struct CdaeTrained {
    ModelConfig config;
    TrainConfig train;
    Cdae model;
    std::vector<HistoryRow> history;
    long best_step = -1;
    double best_validation = 0.0;
};

// clean-input reconstruction MSE over a patch set, inference mode
inline double evaluate_reconstruction(Cdae& cdae, const Dataset& ds, int chunk = 16) {
    double total = 0.0;
    for (size_t start = 0; start < ds.samples.size(); start += static_cast<size_t>(chunk)) {
        const size_t end = std::min(ds.samples.size(), start + static_cast<size_t>(chunk));
        Batch clean;
        for (size_t i = start; i < end; ++i) clean.push_back(ds.patch(i));
        const Batch& latent = cdae.encoder.forward(clean, false);
        Batch recon = cdae.decoder.forward(latent, false);
        total += nn::mse_loss(recon, clean).value * static_cast<double>(end - start);
    }
    return total / static_cast<double>(ds.samples.size());
}

// Minimizes MSE between the decoder output and the CLEAN input given the
// corrupted input (plain autoencoder when sigma is zero).
inline CdaeTrained train_cdae(const ModelConfig& mc, const Dataset& train_ds, const Dataset& val_ds,
                              const TrainConfig& tc, int eval_every = 10) {
    mc.validate();
    tc.validate();
    if (train_ds.samples.empty() || !train_ds.has_patches())
        throw data_error("cdae training needs a patch set");

    CdaeTrained ct;
    ct.config = mc;
    ct.train = tc;
    Rng init_rng(derive_seed(tc.rng_seed, "init"));
    ct.model = build_cdae_model(mc, init_rng);

    Rng batch_rng(derive_seed(tc.rng_seed, "batches"));
    Rng corrupt_rng(derive_seed(tc.rng_seed, "corruption"));
    Rng noise_rng(derive_seed(tc.rng_seed, "gradient-noise"));

    std::vector<ParamRef> params = ct.model.encoder.params();
    {
        auto dp = ct.model.decoder.params();
        params.insert(params.end(), dp.begin(), dp.end());
    }
    std::map<std::string, Tensor> velocity;
    std::vector<Tensor> best = detail::snapshot(params);
    ct.best_validation = std::numeric_limits<double>::infinity();

    std::uniform_int_distribution<size_t> pick(0, train_ds.samples.size() - 1);
    for (long step = 0; step < tc.max_steps; ++step) {
        Batch clean, noisy;
        for (int b = 0; b < tc.batch_size; ++b) {
            Tensor patch = train_ds.patch(pick(batch_rng));
            noisy.push_back(corrupt(patch, mc.corruption_sigma, corrupt_rng));
            clean.push_back(std::move(patch));
        }
        const Batch& latent = ct.model.encoder.forward(noisy, true);
        Batch recon = ct.model.decoder.forward(latent, true);
        nn::LossResult loss = nn::mse_loss(recon, clean);
        if (!std::isfinite(loss.value))
            throw numeric_error("training diverged (non-finite loss) at step " + std::to_string(step));
        for (ParamRef p : params)
            if (p.grad) p.grad->fill(0.0);
        Batch glatent = ct.model.decoder.backward(loss.grad);
        ct.model.encoder.backward(glatent);
        nn::sgd_step(params, velocity, tc, step, noise_rng);

        if (step % eval_every == 0 || step == tc.max_steps - 1) {
            const double val = evaluate_reconstruction(ct.model, val_ds);
            if (!std::isfinite(val))
                throw numeric_error("validation loss non-finite at step " + std::to_string(step));
            ct.history.push_back({step, nn::lr_at(tc, step), loss.value, val});
            if (val < ct.best_validation) {
                ct.best_validation = val;
                ct.best_step = step;
                best = detail::snapshot(params);
            }
        }
    }
    detail::restore(params, best);
    return ct;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

inline std::vector<double> predict_probability(HybridNet& net, const Dataset& ds, int chunk = 64) {
    if (net.has_image && !ds.has_patches())
        throw data_error("model has an image branch but the dataset has no patches");
    std::vector<double> out;
    out.reserve(ds.samples.size());
    for (size_t start = 0; start < ds.samples.size(); start += static_cast<size_t>(chunk)) {
        const size_t end = std::min(ds.samples.size(), start + static_cast<size_t>(chunk));
        Batch images, geos;
        for (size_t i = start; i < end; ++i) {
            if (net.has_image) images.push_back(ds.patch(i));
            geos.push_back(detail::geo_tensor(ds.samples[i]));
        }
        Batch pred = net.forward(images, geos, false);
        for (const Tensor& p : pred) out.push_back(p[0]);
    }
    return out;
}

// per-cell transition-probability surface; cells without a sample stay 0
inline ScalarField probability_map(const Dataset& ds, const std::vector<double>& probs, int width,
                                   int height) {
    if (probs.size() != ds.samples.size()) throw data_error("probability count mismatch");
    ScalarField f(width, height);
    for (size_t i = 0; i < ds.samples.size(); ++i) f.at(ds.samples[i].cell.x, ds.samples[i].cell.y) = probs[i];
    return f;
}

// Post-activation tensor of one image-branch layer as a LUCF file, one band
// per filter. Index 0 is the first layer's output.
inline void export_activations(HybridNet& net, const Tensor& image, int layer_index,
                               const std::string& path) {
    if (!net.has_image) throw data_error("model has no image branch to export from");
    if (layer_index < 0 || static_cast<size_t>(layer_index) >= net.image.layer_count())
        throw data_error("layer index " + std::to_string(layer_index) + " out of range");
    net.image.forward({image}, false);
    const Tensor& act = net.image.activations()[static_cast<size_t>(layer_index) + 1][0];
    const auto& s = act.shape();
    MultiBandImage img(s[0], s.size() == 3 ? s[2] : 1, s.size() == 3 ? s[1] : 1);
    for (long i = 0; i < act.numel(); ++i) img.data[static_cast<size_t>(i)] = static_cast<float>(act[i]);
    save_image(img, path);
}

// ---------------------------------------------------------------------------
// Persistence: LUCW weights + a text manifest; training history as CSV.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

inline std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stoi(item));
    return out;
}

using luc::fmt_double;
using luc::Manifest;

inline void write_model_config(Manifest& m, const ModelConfig& mc) {
    m.set("kind", mc.kind);
    m.set_int("feature_count", mc.feature_count);
    m.set_int("bands", mc.bands);
    m.set_int("patch_size", mc.patch_size);
    m.set("geo_hidden", join_ints(mc.geo_hidden));
    m.set("trunk_filters", join_ints(mc.trunk_filters));
    m.set("classifier_widths", join_ints(mc.classifier_widths));
    m.set("geo_branch_widths", join_ints(mc.geo_branch_widths));
    m.set_int("spatial_weight", mc.spatial_weight ? 1 : 0);
    m.set("pooling", mc.pooling);
    m.set("cdae_filters", join_ints(mc.cdae_filters));
    m.set("cdae_classifier_widths", join_ints(mc.cdae_classifier_widths));
    m.set_double("corruption_sigma", mc.corruption_sigma);
}

inline ModelConfig read_model_config(const Manifest& m) {
    ModelConfig mc;
    mc.kind = m.get("kind");
    mc.feature_count = static_cast<int>(m.get_int("feature_count"));
    mc.bands = static_cast<int>(m.get_int("bands"));
    mc.patch_size = static_cast<int>(m.get_int("patch_size"));
    mc.geo_hidden = split_ints(m.get("geo_hidden"));
    mc.trunk_filters = split_ints(m.get("trunk_filters"));
    mc.classifier_widths = split_ints(m.get("classifier_widths"));
    mc.geo_branch_widths = split_ints(m.get("geo_branch_widths"));
    mc.spatial_weight = m.get_int("spatial_weight") != 0;
    mc.pooling = m.get("pooling");
    mc.cdae_filters = split_ints(m.get("cdae_filters"));
    mc.cdae_classifier_widths = split_ints(m.get("cdae_classifier_widths"));
    mc.corruption_sigma = m.get_double("corruption_sigma");
    return mc;
}

inline void write_train_config(Manifest& m, const TrainConfig& tc) {
    m.set_double("train.learning_rate", tc.learning_rate);
    m.set_int("train.lr_decay_every", tc.lr_decay_every);
    m.set_double("train.lr_decay_factor", tc.lr_decay_factor);
    m.set_double("train.momentum", tc.momentum);
    m.set_double("train.gradient_noise_eta", tc.gradient_noise_eta);
    m.set_double("train.gradient_noise_gamma", tc.gradient_noise_gamma);
    m.set_int("train.batch_size", tc.batch_size);
    m.set_int("train.max_steps", tc.max_steps);
    m.set_int("train.rng_seed", static_cast<long>(tc.rng_seed));
}

inline TrainConfig read_train_config(const Manifest& m) {
    TrainConfig tc;
    tc.learning_rate = m.get_double("train.learning_rate");
    tc.lr_decay_every = static_cast<int>(m.get_int("train.lr_decay_every"));
    tc.lr_decay_factor = m.get_double("train.lr_decay_factor");
    tc.momentum = m.get_double("train.momentum");
    tc.gradient_noise_eta = m.get_double("train.gradient_noise_eta");
    tc.gradient_noise_gamma = m.get_double("train.gradient_noise_gamma");
    tc.batch_size = static_cast<int>(m.get_int("train.batch_size"));
    tc.max_steps = static_cast<int>(m.get_int("train.max_steps"));
    tc.rng_seed = static_cast<uint64_t>(m.get_int("train.rng_seed"));
    return tc;
}

}  // namespace detail

// Writes <base>.lucw, <base>.manifest, <base>.history.csv
inline void save_model(TrainedModel& tm, const std::string& base) {
    nn::save_weights(tm.net.params(), base + ".lucw");
    detail::Manifest m;
    detail::write_model_config(m, tm.config);
    detail::write_train_config(m, tm.train);
    m.set_int("transition_from", tm.from);
    m.set_int("transition_to", tm.to);
    m.set_int("best_step", tm.best_step);
    m.set_double("best_validation", tm.best_validation);
    for (size_t i = 0; i < tm.feature_names.size(); ++i)
        m.set("feature." + tm.feature_names[i],
              detail::fmt_double(tm.feature_means[i]) + "," + detail::fmt_double(tm.feature_sds[i]));
    m.save(base + ".manifest");
    save_history(tm.history, base + ".history.csv");
}

inline TrainedModel load_model(const std::string& base) {
    detail::Manifest m = detail::Manifest::load(base + ".manifest");
    TrainedModel tm;
    tm.config = detail::read_model_config(m);
    tm.train = detail::read_train_config(m);
    tm.from = static_cast<Category>(m.get_int("transition_from"));
    tm.to = static_cast<Category>(m.get_int("transition_to"));
    tm.best_step = m.get_int("best_step");
    tm.best_validation = m.get_double("best_validation");
    for (const std::string& k : m.keys()) {
        if (k.rfind("feature.", 0) != 0) continue;
        tm.feature_names.push_back(k.substr(8));
        const std::string& v = m.get(k);
        auto comma = v.find(',');
        tm.feature_means.push_back(std::stod(v.substr(0, comma)));
        tm.feature_sds.push_back(std::stod(v.substr(comma + 1)));
    }
    Rng rng(0);  // placeholder weights, overwritten below
    tm.net = build_model(tm.config, rng);
    nn::apply_weights(tm.net.params(), nn::load_weights(base + ".lucw"));
    return tm;
}

inline void save_cdae(CdaeTrained& ct, const std::string& base) {
    std::vector<ParamRef> params = ct.model.encoder.params();
    auto dp = ct.model.decoder.params();
    params.insert(params.end(), dp.begin(), dp.end());
    nn::save_weights(params, base + ".lucw");
    detail::Manifest m;
    detail::write_model_config(m, ct.config);
    detail::write_train_config(m, ct.train);
    m.set_int("best_step", ct.best_step);
    m.set_double("best_validation", ct.best_validation);
    m.save(base + ".manifest");
    save_history(ct.history, base + ".history.csv");
}

inline CdaeTrained load_cdae(const std::string& base) {
    detail::Manifest m = detail::Manifest::load(base + ".manifest");
    CdaeTrained ct;
    ct.config = detail::read_model_config(m);
    ct.train = detail::read_train_config(m);
    ct.best_step = m.get_int("best_step");
    ct.best_validation = m.get_double("best_validation");
    Rng rng(0);
    ct.model = build_cdae_model(ct.config, rng);
    std::vector<ParamRef> params = ct.model.encoder.params();
    auto dp = ct.model.decoder.params();
    params.insert(params.end(), dp.begin(), dp.end());
    nn::apply_weights(params, nn::load_weights(base + ".lucw"));
    return ct;
}

}  // namespace luc::model
