// Geographic feature computation and sample assembly: enrichment of land-use
// categories in a neighborhood, exact Euclidean distance fields, z-scored
// feature stacks, labeled transition datasets, and balanced mini-batches.
#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "luc/common.hpp"
#include "luc/raster.hpp"
#include "luc/tensor.hpp"

namespace luc {

// Relative abundance of `category` in each cell's window against its global
// share: (n_k/n) / (N_k/N), counted over unmasked cells only, center included.
inline ScalarField compute_enrichment(const LuGrid& g, Category category, int window) {
    int cat_idx = g.category_index(category);
    if (cat_idx < 0) throw data_error("enrichment category not in grid category list");
    long N = g.count_unmasked();
    long Nk = 0;
    for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x)
            if (!g.masked(x, y) && g.at(x, y) == category) ++Nk;
    if (Nk == 0)
        throw numeric_error("enrichment undefined: category " + std::to_string(int(category)) +
                            " absent from the map");
    const double global_share = static_cast<double>(Nk) / static_cast<double>(N);
    ScalarField out(g.width(), g.height());
    for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x) {
            if (g.masked(x, y)) continue;  // left at 0, never sampled
            auto counts = neighborhood_counts(g, {x, y}, window);
            long n = 0;
            for (long c : counts) n += c;
            double local_share = static_cast<double>(counts[static_cast<size_t>(cat_idx)]) / n;
            out.at(x, y) = local_share / global_share;
        }
    return out;
}

namespace detail {

// 1D squared-distance transform by lower envelope of parabolas
// (Felzenszwalb & Huttenlocher). f holds squared distances, d the result.
inline void dt1d(const std::vector<double>& f, std::vector<double>& d) {
    const int n = static_cast<int>(f.size());
    static constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<int> v(n);
    std::vector<double> z(n + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * (q - v[k]));
        while (s <= z[k]) {
            --k;
            s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * (q - v[k]));
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        double dq = q - v[k];
        d[static_cast<size_t>(q)] = dq * dq + f[static_cast<size_t>(v[k])];
    }
}

}  // namespace detail

// Exact Euclidean distance (meters) from every cell to the nearest target
// cell center. Zero on target cells.
inline ScalarField distance_field(const RegionMask& target, double cell_size) {
    if (target.count() == 0) throw data_error("distance field needs at least one target cell");
    const int w = target.width, h = target.height;
    // large finite sentinel: keeps the parabola intersections finite, and any
    // real source beats it since grid diagonals are far smaller
    static constexpr double kFar = 1e20;
    ScalarField sq(w, h, kFar);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (target.at(x, y)) sq.at(x, y) = 0.0;

    std::vector<double> line, dist;
    line.resize(static_cast<size_t>(h));
    dist.resize(static_cast<size_t>(h));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) line[static_cast<size_t>(y)] = sq.at(x, y);
        detail::dt1d(line, dist);
        for (int y = 0; y < h; ++y) sq.at(x, y) = dist[static_cast<size_t>(y)];
    }
    line.resize(static_cast<size_t>(w));
    dist.resize(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) line[static_cast<size_t>(x)] = sq.at(x, y);
        detail::dt1d(line, dist);
        for (int x = 0; x < w; ++x) sq.at(x, y) = dist[static_cast<size_t>(x)];
    }
    ScalarField out(w, h);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = cell_size * std::sqrt(sq.data[i]);
    return out;
}

// Ordered, z-scored feature surfaces plus the constants that produced them.
struct FeatureStack {
    std::vector<std::string> names;
    std::vector<ScalarField> fields;  // normalized
    std::vector<double> means;
    std::vector<double> sds;
    int width = 0;
    int height = 0;

    int feature_count() const { return static_cast<int>(names.size()); }

    std::vector<double> vector_at(int x, int y) const {
        std::vector<double> v(names.size());
        for (size_t f = 0; f < fields.size(); ++f) v[f] = fields[f].at(x, y);
        return v;
    }
};

namespace detail {

inline void zscore_in_place(ScalarField& f, const LuGrid& g, const std::string& name, double& mean_out,
                            double& sd_out) {
    double sum = 0.0;
    long n = 0;
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
            if (g.masked(x, y)) continue;
            sum += f.at(x, y);
            ++n;
        }
    double mean = sum / n;
    double ss = 0.0;
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
            if (g.masked(x, y)) continue;
            double d = f.at(x, y) - mean;
            ss += d * d;
        }
    double sd = std::sqrt(ss / n);
    if (!(sd > 0.0))
        throw numeric_error("feature '" + name + "' is constant over unmasked cells, cannot z-score");
    for (double& v : f.data) v = (v - mean) / sd;
    mean_out = mean;
    sd_out = sd;
}

}  // namespace detail

// One enrichment field per category, the caller's auxiliary fields, then the
// two cell-coordinate fields; everything z-scored over unmasked cells.
inline FeatureStack build_feature_stack(const LuGrid& g,
                                        const std::vector<std::pair<std::string, ScalarField>>& aux,
                                        int enrichment_window) {
    FeatureStack stack;
    stack.width = g.width();
    stack.height = g.height();
    for (Category c : g.categories()) {
        stack.names.push_back("enrich_" + std::to_string(int(c)));
        stack.fields.push_back(compute_enrichment(g, c, enrichment_window));
    }
    for (const auto& [name, field] : aux) {
        if (field.width != g.width() || field.height != g.height())
            throw data_error("auxiliary field '" + name + "' does not match grid dimensions");
        stack.names.push_back(name);
        stack.fields.push_back(field);
    }
    ScalarField cx(g.width(), g.height()), cy(g.width(), g.height());
    for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x) {
            cx.at(x, y) = x;
            cy.at(x, y) = y;
        }
    stack.names.push_back("coord_x");
    stack.names.push_back("coord_y");
    stack.fields.push_back(std::move(cx));
    stack.fields.push_back(std::move(cy));

    stack.means.resize(stack.fields.size());
    stack.sds.resize(stack.fields.size());
    for (size_t f = 0; f < stack.fields.size(); ++f)
        detail::zscore_in_place(stack.fields[f], g, stack.names[f], stack.means[f], stack.sds[f]);
    return stack;
}

inline void save_stack(const FeatureStack& stack, const std::string& path) {
    save_fields(stack.fields, path);
    std::ofstream m(path + ".manifest");
    if (!m) throw data_error("cannot write manifest: " + path + ".manifest");
    char line[256];
    for (size_t f = 0; f < stack.names.size(); ++f) {
        std::snprintf(line, sizeof line, "%s %.17g %.17g\n", stack.names[f].c_str(), stack.means[f],
                      stack.sds[f]);
        m << line;
    }
}

inline FeatureStack load_stack(const std::string& path) {
    MultiBandImage img = load_image(path);
    std::ifstream m(path + ".manifest");
    if (!m) throw data_error("missing manifest: " + path + ".manifest");
    FeatureStack stack;
    stack.width = img.width;
    stack.height = img.height;
    std::string name;
    double mean, sd;
    while (m >> name >> mean >> sd) {
        stack.names.push_back(name);
        stack.means.push_back(mean);
        stack.sds.push_back(sd);
    }
    if (static_cast<int>(stack.names.size()) != img.bands)
        throw data_error(path + ": manifest lists " + std::to_string(stack.names.size()) +
                         " features but file has " + std::to_string(img.bands) + " bands");
    for (int b = 0; b < img.bands; ++b) {
        ScalarField f(img.width, img.height);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) f.at(x, y) = img.at(b, x, y);
        stack.fields.push_back(std::move(f));
    }
    return stack;
}

// One labeled observation of a candidate transition cell.
struct Sample {
    Cell cell;
    int label = 0;  // 1 iff the cell changed from `from` to `to`
    std::vector<double> geo;
};

// All eligible cells for one transition, with an optional patch source so
// image windows are cut lazily at batch time instead of stored per sample.
class Dataset {
public:
    Category from = 0;
    Category to = 0;
    std::vector<Sample> samples;
    std::vector<size_t> positive_indices;
    std::vector<size_t> negative_indices;

    std::shared_ptr<const MultiBandImage> image;  // null for feature-only models
    int patch_size = 0;

    bool has_patches() const { return (image != nullptr || !stored_patches_.empty()) && patch_size > 0; }

    Tensor patch(size_t i) const {
        if (!stored_patches_.empty()) return stored_patches_[i];
        if (!image) throw data_error("dataset has no image patch source");
        return crop_patch(*image, samples[i].cell, patch_size);
    }

    void rebuild_index() {
        positive_indices.clear();
        negative_indices.clear();
        for (size_t i = 0; i < samples.size(); ++i)
            (samples[i].label ? positive_indices : negative_indices).push_back(i);
    }

    // materialized patches, used when loading a LUCS file that embeds them
    std::vector<Tensor> stored_patches_;
};

inline Dataset assemble_dataset(const LuGrid& t0, const LuGrid& t1, const FeatureStack& stack,
                                std::shared_ptr<const MultiBandImage> image, Category from, Category to,
                                int patch_size) {
    if (t0.width() != t1.width() || t0.height() != t1.height())
        throw data_error("t0/t1 grids are not co-registered");
    if (stack.width != t0.width() || stack.height != t0.height())
        throw data_error("feature stack does not match grid dimensions");
    if (image && (image->width != t0.width() || image->height != t0.height()))
        throw data_error("image does not match grid dimensions");
    if (image && (patch_size < 1 || patch_size % 2 == 0))
        throw data_error("patch size must be odd and positive");

    Dataset ds;
    ds.from = from;
    ds.to = to;
    ds.image = std::move(image);
    ds.patch_size = ds.image ? patch_size : 0;
    for (int y = 0; y < t0.height(); ++y)
        for (int x = 0; x < t0.width(); ++x) {
            if (t0.masked(x, y) || t1.masked(x, y)) continue;
            if (t0.at(x, y) != from) continue;
            Sample s;
            s.cell = {x, y};
            s.label = (t1.at(x, y) == to) ? 1 : 0;
            s.geo = stack.vector_at(x, y);
            ds.samples.push_back(std::move(s));
        }
    if (ds.samples.empty())
        throw data_error("no cells of category " + std::to_string(int(from)) + " to assemble");
    ds.rebuild_index();
    return ds;
}

// Spatial hold-out: validation = samples whose cell lies in the region.
struct RegionSplit {
    Dataset train;
    Dataset validation;
    double validation_fraction = 0.0;  // achieved, for comparison with the target
};

inline RegionSplit region_split(const Dataset& ds, const RegionMask& region,
                                double validation_fraction_target) {
    (void)validation_fraction_target;  // advisory; achieved fraction is reported back
    RegionSplit out;
    out.train.from = out.validation.from = ds.from;
    out.train.to = out.validation.to = ds.to;
    out.train.image = out.validation.image = ds.image;
    out.train.patch_size = out.validation.patch_size = ds.patch_size;
    for (const Sample& s : ds.samples) {
        if (s.cell.x < 0 || s.cell.x >= region.width || s.cell.y < 0 || s.cell.y >= region.height)
            throw data_error("region mask does not cover the dataset extent");
        (region.at(s.cell.x, s.cell.y) ? out.validation : out.train).samples.push_back(s);
    }
    if (out.validation.samples.empty()) throw data_error("validation region contains no samples");
    if (out.train.samples.empty()) throw data_error("validation region swallows every sample");
    out.train.rebuild_index();
    out.validation.rebuild_index();
    out.validation_fraction =
        static_cast<double>(out.validation.samples.size()) / static_cast<double>(ds.samples.size());
    return out;
}

// batch_size/2 positives and batch_size/2 negatives, each drawn uniformly
// with replacement from its class. Positives occupy the first half.
inline std::vector<size_t> balanced_minibatch(const Dataset& ds, int batch_size, Rng& rng) {
    if (batch_size < 2 || batch_size % 2 != 0) throw data_error("batch size must be even and >= 2");
    if (ds.positive_indices.empty()) throw data_error("dataset has no positive samples");
    if (ds.negative_indices.empty()) throw data_error("dataset has no negative samples");
    std::vector<size_t> batch(static_cast<size_t>(batch_size));
    std::uniform_int_distribution<size_t> pos(0, ds.positive_indices.size() - 1);
    std::uniform_int_distribution<size_t> neg(0, ds.negative_indices.size() - 1);
    const int half = batch_size / 2;
    for (int i = 0; i < half; ++i) batch[static_cast<size_t>(i)] = ds.positive_indices[pos(rng)];
    for (int i = 0; i < half; ++i) batch[static_cast<size_t>(half + i)] = ds.negative_indices[neg(rng)];
    return batch;
}

// ---------------------------------------------------------------------------
// LUCS dataset file:
//   "LUCS" | version u16=1 | flags u16 (bit0: patches embedded) | record
//   count u32 | from u16 | to u16 | feature count u16 | [bands u16 | patch
//   size u16 if flagged] | per record: x i32 | y i32 | label u8 | features
//   f32 each | patch f32s band-major if flagged
// ---------------------------------------------------------------------------

inline void save_dataset(const Dataset& ds, const std::string& path, bool embed_patches = false) {
    if (embed_patches && !ds.has_patches())
        throw data_error("dataset has no patches to embed");
    ByteWriter w;
    w.magic("LUCS");
    w.u16(1);
    w.u16(embed_patches ? 1 : 0);
    w.u32(static_cast<uint32_t>(ds.samples.size()));
    w.u16(ds.from);
    w.u16(ds.to);
    const int nfeat = ds.samples.empty() ? 0 : static_cast<int>(ds.samples[0].geo.size());
    w.u16(static_cast<uint16_t>(nfeat));
    int bands = 0;
    if (embed_patches) {
        bands = ds.image ? ds.image->bands : ds.stored_patches_[0].shape()[0];
        w.u16(static_cast<uint16_t>(bands));
        w.u16(static_cast<uint16_t>(ds.patch_size));
    }
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        const Sample& s = ds.samples[i];
        w.i32(s.cell.x);
        w.i32(s.cell.y);
        w.u8(static_cast<uint8_t>(s.label));
        for (double v : s.geo) w.f32(static_cast<float>(v));
        if (embed_patches) {
            Tensor p = ds.patch(i);
            for (long j = 0; j < p.numel(); ++j) w.f32(static_cast<float>(p[j]));
        }
    }
    w.save(path);
}

inline Dataset load_dataset(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("LUCS", "LUCS dataset");
    if (r.u16() != 1) throw data_error(path + ": unsupported LUCS version");
    uint16_t flags = r.u16();
    uint32_t count = r.u32();
    Dataset ds;
    ds.from = static_cast<Category>(r.u16());
    ds.to = static_cast<Category>(r.u16());
    int nfeat = r.u16();
    int bands = 0;
    if (flags & 1) {
        bands = r.u16();
        ds.patch_size = r.u16();
    }
    ds.samples.resize(count);
    if (flags & 1) ds.stored_patches_.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Sample& s = ds.samples[i];
        s.cell.x = r.i32();
        s.cell.y = r.i32();
        s.label = r.u8();
        s.geo.resize(static_cast<size_t>(nfeat));
        for (double& v : s.geo) v = r.f32();
        if (flags & 1) {
            Tensor p({bands, ds.patch_size, ds.patch_size});
            for (long j = 0; j < p.numel(); ++j) p[j] = r.f32();
            ds.stored_patches_.push_back(std::move(p));
        }
    }
    r.expect_exhausted("LUCS dataset");
    ds.rebuild_index();
    return ds;
}

}  // namespace luc
