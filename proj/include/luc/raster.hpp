// Raster data model: categorical grids, multi-band images, scalar fields,
// region masks, and their on-disk formats (LUCR for grids, LUCF for
// images/fields). All formats are little-endian and bit-exact.
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "luc/common.hpp"
#include "luc/tensor.hpp"

namespace luc {

using Category = uint8_t;

// 2D categorical raster. Cell values are category codes; an optional nodata
// mask marks cells excluded from every computation (1 = nodata).
class LuGrid {
public:
    LuGrid() = default;
    LuGrid(int width, int height, double cell_size, std::vector<Category> categories,
           std::vector<Category> data, std::vector<uint8_t> mask = {})
        : width_(width),
          height_(height),
          cell_size_(cell_size),
          categories_(std::move(categories)),
          data_(std::move(data)),
          mask_(std::move(mask)) {
        validate();
    }

    static LuGrid filled(int width, int height, double cell_size, std::vector<Category> categories,
                         Category value) {
        std::vector<Category> data(static_cast<size_t>(width) * height, value);
        return LuGrid(width, height, cell_size, std::move(categories), std::move(data));
    }

    int width() const { return width_; }
    int height() const { return height_; }
    double cell_size() const { return cell_size_; }
    long cell_count() const { return static_cast<long>(width_) * height_; }
    const std::vector<Category>& categories() const { return categories_; }
    int category_count() const { return static_cast<int>(categories_.size()); }
    bool has_mask() const { return !mask_.empty(); }

    bool in_bounds(int x, int y) const { return x >= 0 && x < width_ && y >= 0 && y < height_; }
    size_t index(int x, int y) const { return static_cast<size_t>(y) * width_ + x; }

    Category at(int x, int y) const { return data_[index(x, y)]; }
    Category at(Cell c) const { return at(c.x, c.y); }
    void set(int x, int y, Category v) { data_[index(x, y)] = v; }
    bool masked(int x, int y) const { return !mask_.empty() && mask_[index(x, y)] != 0; }
    bool masked(Cell c) const { return masked(c.x, c.y); }

    const std::vector<Category>& data() const { return data_; }
    const std::vector<uint8_t>& mask() const { return mask_; }

    // Position of a code in the category list, or -1.
    int category_index(Category code) const {
        auto it = std::find(categories_.begin(), categories_.end(), code);
        return it == categories_.end() ? -1 : static_cast<int>(it - categories_.begin());
    }

    long count_unmasked() const {
        if (mask_.empty()) return cell_count();
        long n = 0;
        for (uint8_t m : mask_)
            if (!m) ++n;
        return n;
    }

    friend bool operator==(const LuGrid& a, const LuGrid& b) {
        return a.width_ == b.width_ && a.height_ == b.height_ && a.cell_size_ == b.cell_size_ &&
               a.categories_ == b.categories_ && a.data_ == b.data_ && a.mask_ == b.mask_;
    }

private:
    void validate() const {
        if (width_ < 1 || height_ < 1) throw data_error("grid dimensions must be >= 1");
        if (data_.size() != static_cast<size_t>(cell_count()))
            throw data_error("grid data length " + std::to_string(data_.size()) + " != width*height " +
                             std::to_string(cell_count()));
        if (!mask_.empty() && mask_.size() != data_.size())
            throw data_error("grid mask length does not match dimensions");
        if (categories_.empty()) throw data_error("grid needs at least one category");
        for (size_t i = 0; i < data_.size(); ++i) {
            if (!mask_.empty() && mask_[i]) continue;
            if (std::find(categories_.begin(), categories_.end(), data_[i]) == categories_.end())
                throw data_error("cell value " + std::to_string(int(data_[i])) +
                                 " outside declared category list");
        }
    }

    int width_ = 0;
    int height_ = 0;
    double cell_size_ = 1.0;
    std::vector<Category> categories_;
    std::vector<Category> data_;
    std::vector<uint8_t> mask_;
};

// Co-registered stack of spectral bands, stored band-major (band plane is
// row-major), 32-bit values.
struct MultiBandImage {
    int bands = 0;
    int width = 0;
    int height = 0;
    std::vector<float> data;

    MultiBandImage() = default;
    MultiBandImage(int bands_, int width_, int height_)
        : bands(bands_), width(width_), height(height_) {
        if (bands < 1 || width < 1 || height < 1) throw data_error("image dimensions must be >= 1");
        data.assign(static_cast<size_t>(bands) * width * height, 0.0f);
    }
    size_t index(int b, int x, int y) const {
        return (static_cast<size_t>(b) * height + y) * width + x;
    }
    float at(int b, int x, int y) const { return data[index(b, x, y)]; }
    float& at(int b, int x, int y) { return data[index(b, x, y)]; }
    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

// Row-major 64-bit scalar surface (features, probabilities, distances).
struct ScalarField {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    ScalarField() = default;
    ScalarField(int width_, int height_, double init = 0.0) : width(width_), height(height_) {
        if (width < 1 || height < 1) throw data_error("field dimensions must be >= 1");
        data.assign(static_cast<size_t>(width) * height, init);
    }
    size_t index(int x, int y) const { return static_cast<size_t>(y) * width + x; }
    double at(int x, int y) const { return data[index(x, y)]; }
    double& at(int x, int y) { return data[index(x, y)]; }
};

struct RegionMask {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> data;

    RegionMask() = default;
    RegionMask(int width_, int height_, uint8_t init = 0) : width(width_), height(height_) {
        if (width < 1 || height < 1) throw data_error("mask dimensions must be >= 1");
        data.assign(static_cast<size_t>(width) * height, init);
    }
    size_t index(int x, int y) const { return static_cast<size_t>(y) * width + x; }
    bool at(int x, int y) const { return data[index(x, y)] != 0; }
    void set(int x, int y, bool v) { data[index(x, y)] = v ? 1 : 0; }
    long count() const {
        long n = 0;
        for (uint8_t v : data) n += (v != 0);
        return n;
    }
};

// ---------------------------------------------------------------------------
// LUCR grid file:
//   "LUCR" | version u16=1 | flags u16 (bit0: mask present) | width u32 |
//   height u32 | cell_size f64 | category count u16 | category codes u16 each |
//   body: width*height category bytes row-major | optional mask bytes (0/1)
// ---------------------------------------------------------------------------

inline void save_grid(const LuGrid& g, const std::string& path) {
    ByteWriter w;
    w.magic("LUCR");
    w.u16(1);
    w.u16(g.has_mask() ? 1 : 0);
    w.u32(static_cast<uint32_t>(g.width()));
    w.u32(static_cast<uint32_t>(g.height()));
    w.f64(g.cell_size());
    w.u16(static_cast<uint16_t>(g.category_count()));
    for (Category c : g.categories()) w.u16(c);
    w.raw(g.data().data(), g.data().size());
    if (g.has_mask()) w.raw(g.mask().data(), g.mask().size());
    w.save(path);
}

inline LuGrid load_grid_bytes(ByteReader& r) {
    r.expect_magic("LUCR", "LUCR grid");
    uint16_t version = r.u16();
    if (version != 1) throw data_error(r.origin() + ": unsupported LUCR version " + std::to_string(version));
    uint16_t flags = r.u16();
    int width = static_cast<int>(r.u32());
    int height = static_cast<int>(r.u32());
    double cell_size = r.f64();
    int ncat = r.u16();
    if (width < 1 || height < 1) throw data_error(r.origin() + ": invalid grid dimensions in header");
    std::vector<Category> cats(static_cast<size_t>(ncat));
    for (auto& c : cats) {
        uint16_t code = r.u16();
        if (code > 255) throw data_error(r.origin() + ": category code exceeds one byte");
        c = static_cast<Category>(code);
    }
    size_t n = static_cast<size_t>(width) * height;
    if (r.remaining() < n)
        throw data_error(r.origin() + ": body holds " + std::to_string(r.remaining()) +
                         " bytes, header declares " + std::to_string(n));
    std::vector<Category> data(n);
    r.raw(data.data(), n);
    std::vector<uint8_t> mask;
    if (flags & 1) {
        if (r.remaining() < n)
            throw data_error(r.origin() + ": mask section truncated");
        mask.resize(n);
        r.raw(mask.data(), n);
    }
    r.expect_exhausted("LUCR grid");
    return LuGrid(width, height, cell_size, std::move(cats), std::move(data), std::move(mask));
}

inline LuGrid load_grid(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    return load_grid_bytes(r);
}

// ---------------------------------------------------------------------------
// LUCF field/image file:
//   "LUCF" | version u16=1 | flags u16=0 | bands u16 | width u32 | height u32 |
//   per-band row-major f32 values
// ---------------------------------------------------------------------------

inline void save_image(const MultiBandImage& img, const std::string& path) {
    ByteWriter w;
    w.magic("LUCF");
    w.u16(1);
    w.u16(0);
    w.u16(static_cast<uint16_t>(img.bands));
    w.u32(static_cast<uint32_t>(img.width));
    w.u32(static_cast<uint32_t>(img.height));
    for (float v : img.data) w.f32(v);
    w.save(path);
}

inline MultiBandImage load_image(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("LUCF", "LUCF image");
    uint16_t version = r.u16();
    if (version != 1) throw data_error(path + ": unsupported LUCF version");
    r.u16();  // flags, none defined
    int bands = r.u16();
    int width = static_cast<int>(r.u32());
    int height = static_cast<int>(r.u32());
    MultiBandImage img(bands, width, height);
    size_t n = img.data.size();
    if (r.remaining() != n * 4)
        throw data_error(path + ": payload holds " + std::to_string(r.remaining() / 4) +
                         " values, header declares " + std::to_string(n));
    for (size_t i = 0; i < n; ++i) img.data[i] = r.f32();
    return img;
}

inline void save_field(const ScalarField& f, const std::string& path) {
    MultiBandImage img(1, f.width, f.height);
    for (size_t i = 0; i < f.data.size(); ++i) img.data[i] = static_cast<float>(f.data[i]);
    save_image(img, path);
}

inline ScalarField load_field(const std::string& path) {
    MultiBandImage img = load_image(path);
    if (img.bands != 1) throw data_error(path + ": expected a single-band field file");
    ScalarField f(img.width, img.height);
    for (size_t i = 0; i < f.data.size(); ++i) f.data[i] = img.data[i];
    return f;
}

// Fields with several named bands share one LUCF file; names travel in a
// sidecar manifest next to it (see features.hpp).
inline void save_fields(const std::vector<ScalarField>& fields, const std::string& path) {
    if (fields.empty()) throw data_error("no fields to save");
    MultiBandImage img(static_cast<int>(fields.size()), fields[0].width, fields[0].height);
    for (size_t b = 0; b < fields.size(); ++b) {
        if (fields[b].width != img.width || fields[b].height != img.height)
            throw data_error("field dimensions differ within one file");
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                img.at(static_cast<int>(b), x, y) = static_cast<float>(fields[b].at(x, y));
    }
    save_image(img, path);
}

// ---------------------------------------------------------------------------
// Windowed access
// ---------------------------------------------------------------------------

// Cuts a (bands, size, size) window centered on `center`; positions falling
// outside the image replicate the nearest edge value.
inline Tensor crop_patch(const MultiBandImage& img, Cell center, int size) {
    if (size < 1 || size % 2 == 0) throw data_error("patch size must be odd and positive");
    if (!img.in_bounds(center.x, center.y)) throw data_error("patch center outside image");
    const int r = size / 2;
    Tensor t({img.bands, size, size});
    for (int b = 0; b < img.bands; ++b) {
        for (int dy = -r; dy <= r; ++dy) {
            int sy = std::clamp(center.y + dy, 0, img.height - 1);
            for (int dx = -r; dx <= r; ++dx) {
                int sx = std::clamp(center.x + dx, 0, img.width - 1);
                t.at(b, dy + r, dx + r) = img.at(b, sx, sy);
            }
        }
    }
    return t;
}

// Per-category cell counts over an odd window clipped to the grid; masked
// cells are skipped. Result is indexed by position in grid.categories().
inline std::vector<long> neighborhood_counts(const LuGrid& g, Cell center, int window) {
    if (window < 1 || window % 2 == 0) throw data_error("window must be odd and positive");
    if (!g.in_bounds(center.x, center.y)) throw data_error("window center outside grid");
    std::vector<long> counts(static_cast<size_t>(g.category_count()), 0);
    const int r = window / 2;
    const int y0 = std::max(0, center.y - r), y1 = std::min(g.height() - 1, center.y + r);
    const int x0 = std::max(0, center.x - r), x1 = std::min(g.width() - 1, center.x + r);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            if (g.masked(x, y)) continue;
            int idx = g.category_index(g.at(x, y));
            if (idx >= 0) ++counts[static_cast<size_t>(idx)];
        }
    return counts;
}

}  // namespace luc
