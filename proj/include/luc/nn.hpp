// Neural-network engine: the layer set needed by the land-use models
// (convolution, spatial-weight, pooling, batchnorm, dense, transposed
// convolution, upsampling), reverse-mode gradients for every layer, SGD with
// annealed gradient noise, and a finite-difference harness to prove the
// backward passes right.
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "luc/common.hpp"
#include "luc/tensor.hpp"

namespace luc::nn {

using Batch = std::vector<Tensor>;

// View of one named parameter tensor and its gradient accumulator.
// Non-trainable entries (batchnorm running stats) are persisted but never
// touched by the optimizer.
struct ParamRef {
    std::string name;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;
    bool trainable = true;
};

class Layer {
public:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    virtual ~Layer() = default;

    const std::string& name() const { return name_; }

    virtual std::vector<int> out_shape(const std::vector<int>& in) const = 0;
    virtual void forward(const Batch& in, Batch& out, bool train) = 0;
    // `in`/`out` are the activations seen at forward time; implementations
    // recompute any window/statistic they need so no state lingers between
    // passes. Parameter gradients accumulate.
    virtual void backward(const Batch& in, const Batch& out, const Batch& gout, Batch& gin) = 0;
    virtual void params(std::vector<ParamRef>& out) {}

protected:
    std::string name_;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw data_error(msg);
}

inline std::vector<int> shape3(const std::vector<int>& s, const std::string& who) {
    if (s.size() != 3) throw data_error(who + ": expected a (channels, height, width) input");
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution (cross-correlation), optional zero padding, floor semantics on
// the output extent.
// ---------------------------------------------------------------------------
class Conv2d : public Layer {
public:
    Conv2d(std::string name, Tensor filters, Tensor bias, int stride, int pad)
        : Layer(std::move(name)),
          filters_(std::move(filters)),
          bias_(std::move(bias)),
          gfilters_(zeros_like(filters_)),
          gbias_(zeros_like(bias_)),
          stride_(stride),
          pad_(pad) {
        if (filters_.shape().size() != 4) throw config_error(name_ + ": filters must be rank 4");
        if (bias_.shape() != std::vector<int>{filters_.shape()[0]})
            throw config_error(name_ + ": bias length must equal filter count");
        if (stride_ < 1 || pad_ < 0) throw config_error(name_ + ": invalid stride/padding");
    }

    std::vector<int> out_shape(const std::vector<int>& in) const override {
        auto s = detail::shape3(in, name_);
        const int F = filters_.shape()[0], C = filters_.shape()[1], k = filters_.shape()[2];
        detail::require(s[0] == C, name_ + ": input has " + std::to_string(s[0]) +
                                       " channels, filters expect " + std::to_string(C));
        const int h = (s[1] + 2 * pad_ - k) / stride_ + 1;
        const int w = (s[2] + 2 * pad_ - k) / stride_ + 1;
        detail::require(s[1] + 2 * pad_ >= k && s[2] + 2 * pad_ >= k,
                        name_ + ": kernel larger than padded input");
        return {F, h, w};
    }

    void forward(const Batch& in, Batch& out, bool) override {
        out.resize(in.size());
        const int F = filters_.shape()[0], C = filters_.shape()[1], k = filters_.shape()[2];
        for (size_t s = 0; s < in.size(); ++s) {
            auto os = out_shape(in[s].shape());
            Tensor& y = out[s] = Tensor(os);
            const Tensor& x = in[s];
            const int H = x.shape()[1], W = x.shape()[2];
            for (int f = 0; f < F; ++f)
                for (int oy = 0; oy < os[1]; ++oy)
                    for (int ox = 0; ox < os[2]; ++ox) {
                        double acc = bias_[f];
                        for (int c = 0; c < C; ++c)
                            for (int u = 0; u < k; ++u) {
                                int iy = oy * stride_ + u - pad_;
                                if (iy < 0 || iy >= H) continue;
                                for (int v = 0; v < k; ++v) {
                                    int ix = ox * stride_ + v - pad_;
                                    if (ix < 0 || ix >= W) continue;
                                    acc += x.at(c, iy, ix) * filters_[widx(f, c, u, v)];
                                }
                            }
                        y.at(f, oy, ox) = acc;
                    }
        }
    }

    void backward(const Batch& in, const Batch&, const Batch& gout, Batch& gin) override {
        gin.resize(in.size());
        const int F = filters_.shape()[0], C = filters_.shape()[1], k = filters_.shape()[2];
        for (size_t s = 0; s < in.size(); ++s) {
            const Tensor& x = in[s];
            const Tensor& g = gout[s];
            Tensor& gx = gin[s] = zeros_like(x);
            const int H = x.shape()[1], W = x.shape()[2];
            for (int f = 0; f < F; ++f)
                for (int oy = 0; oy < g.shape()[1]; ++oy)
                    for (int ox = 0; ox < g.shape()[2]; ++ox) {
                        const double gv = g.at(f, oy, ox);
                        gbias_[f] += gv;
                        for (int c = 0; c < C; ++c)
                            for (int u = 0; u < k; ++u) {
                                int iy = oy * stride_ + u - pad_;
                                if (iy < 0 || iy >= H) continue;
                                for (int v = 0; v < k; ++v) {
                                    int ix = ox * stride_ + v - pad_;
                                    if (ix < 0 || ix >= W) continue;
                                    gx.at(c, iy, ix) += gv * filters_[widx(f, c, u, v)];
                                    gfilters_[widx(f, c, u, v)] += gv * x.at(c, iy, ix);
                                }
                            }
                    }
        }
    }

    void params(std::vector<ParamRef>& out) override {
        out.push_back({name_ + ".filters", &filters_, &gfilters_, true});
        out.push_back({name_ + ".bias", &bias_, &gbias_, true});
    }

    const Tensor& filters() const { return filters_; }
    int stride() const { return stride_; }
    int pad() const { return pad_; }

private:
    long widx(int f, int c, int u, int v) const {
        const int C = filters_.shape()[1], k = filters_.shape()[2];
        return ((static_cast<long>(f) * C + c) * k + u) * k + v;
    }

    Tensor filters_;  // (F, C, k, k)
    Tensor bias_;     // (F)
    Tensor gfilters_, gbias_;
    int stride_;
    int pad_;
};

// ---------------------------------------------------------------------------
// Adjoint of Conv2d with the same filters/stride/padding, plus its own bias
// per output channel. Maps (F, H', W') back to (C, H, W).
// ---------------------------------------------------------------------------
class TransposedConv2d : public Layer {
public:
    TransposedConv2d(std::string name, Tensor filters, Tensor bias, int stride, int pad)
        : Layer(std::move(name)),
          filters_(std::move(filters)),
          bias_(std::move(bias)),
          gfilters_(zeros_like(filters_)),
          gbias_(zeros_like(bias_)),
          stride_(stride),
          pad_(pad) {
        if (filters_.shape().size() != 4) throw config_error(name_ + ": filters must be rank 4");
        if (bias_.shape() != std::vector<int>{filters_.shape()[1]})
            throw config_error(name_ + ": bias length must equal output channel count");
        if (stride_ < 1 || pad_ < 0) throw config_error(name_ + ": invalid stride/padding");
    }

    std::vector<int> out_shape(const std::vector<int>& in) const override {
        auto s = detail::shape3(in, name_);
        const int F = filters_.shape()[0], C = filters_.shape()[1], k = filters_.shape()[2];
        detail::require(s[0] == F, name_ + ": input has " + std::to_string(s[0]) +
                                       " channels, filters expect " + std::to_string(F));
        const int h = (s[1] - 1) * stride_ + k - 2 * pad_;
        const int w = (s[2] - 1) * stride_ + k - 2 * pad_;
        detail::require(h >= 1 && w >= 1, name_ + ": output collapses to nothing");
        return {C, h, w};
    }

    void forward(const Batch& in, Batch& out, bool) override {
        out.resize(in.size());
        const int F = filters_.shape()[0], C = filters_.shape()[1], k = filters_.shape()[2];
        for (size_t s = 0; s < in.size(); ++s) {
            auto os = out_shape(in[s].shape());
            const Tensor& x = in[s];
            Tensor& y = out[s] = Tensor(os);
            for (int c = 0; c < C; ++c)
                for (long i = 0; i < os[1] * static_cast<long>(os[2]); ++i)
                    y[static_cast<long>(c) * os[1] * os[2] + i] = bias_[c];
            for (int f = 0; f < F; ++f)
                for (int oy = 0; oy < x.shape()[1]; ++oy)
                    for (int ox = 0; ox < x.shape()[2]; ++ox) {
                        const double xv = x.at(f, oy, ox);
                        for (int c = 0; c < C; ++c)
                            for (int u = 0; u < k; ++u) {
                                int iy = oy * stride_ + u - pad_;
                                if (iy < 0 || iy >= os[1]) continue;
                                for (int v = 0; v < k; ++v) {
                                    int ix = ox * stride_ + v - pad_;
                                    if (ix < 0 || ix >= os[2]) continue;
                                    y.at(c, iy, ix) += xv * filters_[widx(f, c, u, v)];
                                }
                            }
                    }
        }
    }

    void backward(const Batch& in, const Batch& out, const Batch& gout, Batch& gin) override {
        gin.resize(in.size());
        const int F = filters_.shape()[0], C = filters_.shape()[1], k = filters_.shape()[2];
        for (size_t s = 0; s < in.size(); ++s) {
            const Tensor& x = in[s];
            const Tensor& g = gout[s];
            Tensor& gx = gin[s] = zeros_like(x);
            const int H = out[s].shape()[1], W = out[s].shape()[2];
            for (int c = 0; c < C; ++c)
                for (int iy = 0; iy < H; ++iy)
                    for (int ix = 0; ix < W; ++ix) gbias_[c] += g.at(c, iy, ix);
            for (int f = 0; f < F; ++f)
                for (int oy = 0; oy < x.shape()[1]; ++oy)
                    for (int ox = 0; ox < x.shape()[2]; ++ox) {
                        double acc = 0.0;
                        for (int c = 0; c < C; ++c)
                            for (int u = 0; u < k; ++u) {
                                int iy = oy * stride_ + u - pad_;
                                if (iy < 0 || iy >= H) continue;
                                for (int v = 0; v < k; ++v) {
                                    int ix = ox * stride_ + v - pad_;
                                    if (ix < 0 || ix >= W) continue;
                                    const double gv = g.at(c, iy, ix);
                                    acc += gv * filters_[widx(f, c, u, v)];
                                    gfilters_[widx(f, c, u, v)] += gv * x.at(f, oy, ox);
                                }
                            }
                        gx.at(f, oy, ox) += acc;
                    }
        }
    }

    void params(std::vector<ParamRef>& out) override {
        out.push_back({name_ + ".filters", &filters_, &gfilters_, true});
        out.push_back({name_ + ".bias", &bias_, &gbias_, true});
    }

private:
    long widx(int f, int c, int u, int v) const {
        const int C = filters_.shape()[1], k = filters_.shape()[2];
        return ((static_cast<long>(f) * C + c) * k + u) * k + v;
    }

    Tensor filters_;  // (F, C, k, k), F = input channels here
    Tensor bias_;     // (C)
    Tensor gfilters_, gbias_;
    int stride_;
    int pad_;
};

// ---------------------------------------------------------------------------
// Trainable distance-decay mask: y = x * (e^{a_d * dist} + b_d), dist in cell
// units from the patch center. One (a, b) pair per channel.
// ---------------------------------------------------------------------------
class SpatialWeight : public Layer {
public:
    SpatialWeight(std::string name, int channels, double a_init = -0.1, double b_init = 0.0)
        : Layer(std::move(name)),
          a_(Tensor({channels})),
          b_(Tensor({channels})),
          ga_(zeros_like(a_)),
          gb_(zeros_like(b_)) {
        a_.fill(a_init);
        b_.fill(b_init);
    }

    std::vector<int> out_shape(const std::vector<int>& in) const override {
        auto s = detail::shape3(in, name_);
        detail::require(s[0] == a_.shape()[0], name_ + ": channel count mismatch");
        detail::require(s[1] % 2 == 1 && s[2] % 2 == 1,
                        name_ + ": height/width must be odd so the center cell exists");
        return s;
    }

    void forward(const Batch& in, Batch& out, bool) override {
        out.resize(in.size());
        for (size_t s = 0; s < in.size(); ++s) {
            auto os = out_shape(in[s].shape());
            const Tensor& x = in[s];
            Tensor& y = out[s] = Tensor(os);
            for (int d = 0; d < os[0]; ++d)
                for (int i = 0; i < os[1]; ++i)
                    for (int j = 0; j < os[2]; ++j)
                        y.at(d, i, j) = x.at(d, i, j) * (std::exp(a_[d] * dist(i, j, os)) + b_[d]);
        }
    }

    void backward(const Batch& in, const Batch&, const Batch& gout, Batch& gin) override {
        gin.resize(in.size());
        for (size_t s = 0; s < in.size(); ++s) {
            const Tensor& x = in[s];
            const Tensor& g = gout[s];
            auto os = x.shape();
            Tensor& gx = gin[s] = zeros_like(x);
            for (int d = 0; d < os[0]; ++d)
                for (int i = 0; i < os[1]; ++i)
                    for (int j = 0; j < os[2]; ++j) {
                        const double r = dist(i, j, os);
                        const double e = std::exp(a_[d] * r);
                        const double gv = g.at(d, i, j);
                        gx.at(d, i, j) = gv * (e + b_[d]);
                        ga_[d] += gv * x.at(d, i, j) * r * e;
                        gb_[d] += gv * x.at(d, i, j);
                    }
        }
    }

    void params(std::vector<ParamRef>& out) override {
        out.push_back({name_ + ".a", &a_, &ga_, true});
        out.push_back({name_ + ".b", &b_, &gb_, true});
    }

private:
    static double dist(int i, int j, const std::vector<int>& s) {
        const double dy = i - s[1] / 2, dx = j - s[2] / 2;
        return std::sqrt(dy * dy + dx * dx);
    }

    Tensor a_, b_;
    Tensor ga_, gb_;
};

// ---------------------------------------------------------------------------
// Non-overlapping pooling (kernel == stride), which is the only form the
// architectures use. Max pooling routes gradients to the first maximum found
// in row-major scan order.
// ---------------------------------------------------------------------------
class MaxPool : public Layer {
public:
    MaxPool(std::string name, int k) : Layer(std::move(name)), k_(k) {
        if (k_ < 1) throw config_error(name_ + ": pool size must be >= 1");
    }

    std::vector<int> out_shape(const std::vector<int>& in) const override {
        auto s = detail::shape3(in, name_);
        detail::require(s[1] % k_ == 0 && s[2] % k_ == 0,
                        name_ + ": input " + std::to_string(s[1]) + "x" + std::to_string(s[2]) +
                            " not divisible by pool size " + std::to_string(k_));
        return {s[0], s[1] / k_, s[2] / k_};
    }

    void forward(const Batch& in, Batch& out, bool) override {
        out.resize(in.size());
        for (size_t s = 0; s < in.size(); ++s) {
            auto os = out_shape(in[s].shape());
            Tensor& y = out[s] = Tensor(os);
            for (int c = 0; c < os[0]; ++c)
                for (int oy = 0; oy < os[1]; ++oy)
                    for (int ox = 0; ox < os[2]; ++ox) y.at(c, oy, ox) = in[s].at(c, argy(in[s], c, oy, ox), argx(in[s], c, oy, ox));
        }
    }

    void backward(const Batch& in, const Batch&, const Batch& gout, Batch& gin) override {
        gin.resize(in.size());
        for (size_t s = 0; s < in.size(); ++s) {
            Tensor& gx = gin[s] = zeros_like(in[s]);
            const Tensor& g = gout[s];
            for (int c = 0; c < g.shape()[0]; ++c)
                for (int oy = 0; oy < g.shape()[1]; ++oy)
                    for (int ox = 0; ox < g.shape()[2]; ++ox)
                        gx.at(c, argy(in[s], c, oy, ox), argx(in[s], c, oy, ox)) += g.at(c, oy, ox);
        }
    }

private:
    // argmax of a window, first winner in row-major order
    std::pair<int, int> argmax(const Tensor& x, int c, int oy, int ox) const {
        int by = oy * k_, bx = ox * k_;
        double best = x.at(c, by, bx);
        std::pair<int, int> pos{by, bx};
        for (int u = 0; u < k_; ++u)
            for (int v = 0; v < k_; ++v)
                if (x.at(c, by + u, bx + v) > best) {
                    best = x.at(c, by + u, bx + v);
                    pos = {by + u, bx + v};
                }
        return pos;
    }
    int argy(const Tensor& x, int c, int oy, int ox) const { return argmax(x, c, oy, ox).first; }
    int argx(const Tensor& x, int c, int oy, int ox) const { return argmax(x, c, oy, ox).second; }

    int k_;
};

class AvgPool : public Layer {
public:
    AvgPool(std::string name, int k) : Layer(std::move(name)), k_(k) {
        if (k_ < 1) throw config_error(name_ + ": pool size must be >= 1");
    }

    std::vector<int> out_shape(const std::vector<int>& in) const override {
        auto s = detail::shape3(in, name_);
        detail::require(s[1] % k_ == 0 && s[2] % k_ == 0,
                        name_ + ": input not divisible by pool size " + std::to_string(k_));
        return {s[0], s[1] / k_, s[2] / k_};
    }

    void forward(const Batch& in, Batch& out, bool) override {
        out.resize(in.size());
        const double inv = 1.0 / (k_ * k_);
        for (size_t s = 0; s < in.size(); ++s) {
            auto os = out_shape(in[s].shape());
            Tensor& y = out[s] = Tensor(os);
            for (int c = 0; c < os[0]; ++c)
                for (int oy = 0; oy < os[1]; ++oy)
                    for (int ox = 0; ox < os[2]; ++ox) {
                        double acc = 0.0;
                        for (int u = 0; u < k_; ++u)
                            for (int v = 0; v < k_; ++v) acc += in[s].at(c, oy * k_ + u, ox * k_ + v);
                        y.at(c, oy, ox) = acc * inv;
                    }
        }
    }

    void backward(const Batch& in, const Batch&, const Batch& gout, Batch& gin) override {
        gin.resize(in.size());
        const double inv = 1.0 / (k_ * k_);
        for (size_t s = 0; s < in.size(); ++s) {
            Tensor& gx = gin[s] = zeros_like(in[s]);
            const Tensor& g = gout[s];
            for (int c = 0; c < g.shape()[0]; ++c)
                for (int oy = 0; oy < g.shape()[1]; ++oy)
                    for (int ox = 0; ox < g.shape()[2]; ++ox)
                        for (int u = 0; u < k_; ++u)
                            for (int v = 0; v < k_; ++v)
                                gx.at(c, oy * k_ + u, ox * k_ + v) += g.at(c, oy, ox) * inv;
        }
    }

private:
    int k_;
};

class GlobalAvgPool : public Layer {
public:
    explicit GlobalAvgPool(std::string name) : Layer(std::move(name)) {}

    std::vector<int> out_shape(const std::vector<int>& in) const override {
        auto s = detail::shape3(in, name_);
        return {s[0]};
    }

    void forward(const Batch& in, Batch& out, bool) override {
        out.resize(in.size());
        for (size_t s = 0; s < in.size(); ++s) {
            auto is = in[s].shape();
            Tensor& y = out[s] = Tensor({is[0]});
            const double inv = 1.0 / (static_cast<double>(is[1]) * is[2]);
            for (int c = 0; c < is[0]; ++c) {
                double acc = 0.0;
                for (int i = 0; i < is[1]; ++i)
                    for (int j = 0; j < is[2]; ++j) acc += in[s].at(c, i, j);
                y[c] = acc * inv;
            }
        }
    }

    void backward(const Batch& in, const Batch&, const Batch& gout, Batch& gin) override {
        gin.resize(in.size());
        for (size_t s = 0; s < in.size(); ++s) {
            auto is = in[s].shape();
            Tensor& gx = gin[s] = zeros_like(in[s]);
            const double inv = 1.0 / (static_cast<double>(is[1]) * is[2]);
            for (int c = 0; c < is[0]; ++c)
                for (int i = 0; i < is[1]; ++i)
                    for (int j = 0; j < is[2]; ++j) gx.at(c, i, j) = gout[s][c] * inv;
        }
    }
};

class Upsample : public Layer {
public:
    Upsample(std::string name, int factor) : Layer(std::move(name)), f_(factor) {
        if (f_ < 1) throw config_error(name_ + ": factor must be >= 1");
    }

    std::vector<int> out_shape(const std::vector<int>& in) const override {
        auto s = detail::shape3(in, name_);
        return {s[0], s[1] * f_, s[2] * f_};
    }

    void forward(const Batch& in, Batch& out, bool) override {
        out.resize(in.size());
        for (size_t s = 0; s < in.size(); ++s) {
            auto os = out_shape(in[s].shape());
            Tensor& y = out[s] = Tensor(os);
            for (int c = 0; c < os[0]; ++c)
                for (int i = 0; i < os[1]; ++i)
                    for (int j = 0; j < os[2]; ++j) y.at(c, i, j) = in[s].at(c, i / f_, j / f_);
        }
    }

    void backward(const Batch& in, const Batch&, const Batch& gout, Batch& gin) override {
        gin.resize(in.size());
        for (size_t s = 0; s < in.size(); ++s) {
            Tensor& gx = gin[s] = zeros_like(in[s]);
            const Tensor& g = gout[s];
            for (int c = 0; c < g.shape()[0]; ++c)
                for (int i = 0; i < g.shape()[1]; ++i)
                    for (int j = 0; j < g.shape()[2]; ++j) gx.at(c, i / f_, j / f_) += g.at(c, i, j);
        }
    }

private:
    int f_;
};

// ---------------------------------------------------------------------------
// Batch normalization over channels (rank-3 inputs) or units (rank-1).
// Train mode normalizes by batch statistics and refreshes running stats;
// inference mode uses the running stats. Biased variance, eps 1e-5,
// running-stat momentum 0.9.
// ---------------------------------------------------------------------------
class BatchNorm : public Layer {
public:
    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.9;

    BatchNorm(std::string name, int channels)
        : Layer(std::move(name)),
          scale_(Tensor({channels})),
          shift_(Tensor({channels})),
          gscale_(zeros_like(scale_)),
          gshift_(zeros_like(shift_)),
          running_mean_(Tensor({channels})),
          running_var_(Tensor({channels})) {
        scale_.fill(1.0);
        running_var_.fill(1.0);
    }

    std::vector<int> out_shape(const std::vector<int>& in) const override {
        detail::require(in.size() == 1 || in.size() == 3, name_ + ": expects rank-1 or rank-3 input");
        detail::require(in[0] == scale_.shape()[0], name_ + ": channel count mismatch");
        return in;
    }

    void forward(const Batch& in, Batch& out, bool train) override {
        out.resize(in.size());
        const int C = scale_.shape()[0];
        if (train && in.size() < 2)
            throw data_error(name_ + ": train mode needs batch size >= 2, got " +
                             std::to_string(in.size()));
        std::vector<double> mean(static_cast<size_t>(C)), var(static_cast<size_t>(C));
        if (train) {
            batch_stats(in, mean, var);
            for (int c = 0; c < C; ++c) {
                running_mean_[c] = kMomentum * running_mean_[c] + (1.0 - kMomentum) * mean[static_cast<size_t>(c)];
                running_var_[c] = kMomentum * running_var_[c] + (1.0 - kMomentum) * var[static_cast<size_t>(c)];
            }
        } else {
            for (int c = 0; c < C; ++c) {
                mean[static_cast<size_t>(c)] = running_mean_[c];
                var[static_cast<size_t>(c)] = running_var_[c];
            }
        }
        for (size_t s = 0; s < in.size(); ++s) {
            out[s] = Tensor(in[s].shape());
            apply_channelwise(in[s], out[s], [&](int c, double x) {
                return scale_[c] * (x - mean[static_cast<size_t>(c)]) /
                           std::sqrt(var[static_cast<size_t>(c)] + kEps) +
                       shift_[c];
            });
        }
    }

    void backward(const Batch& in, const Batch&, const Batch& gout, Batch& gin) override {
        // recompute batch statistics; backward is defined for train mode
        const int C = scale_.shape()[0];
        std::vector<double> mean(static_cast<size_t>(C)), var(static_cast<size_t>(C));
        batch_stats(in, mean, var);
        const long per = per_channel(in[0].shape());
        const double m = static_cast<double>(per * static_cast<long>(in.size()));

        std::vector<double> inv_std(static_cast<size_t>(C));
        for (int c = 0; c < C; ++c) inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + kEps);

        // per-channel reductions over the whole batch
        std::vector<double> sum_g(static_cast<size_t>(C), 0.0), sum_gx(static_cast<size_t>(C), 0.0);
        for (size_t s = 0; s < in.size(); ++s)
            reduce_channelwise(in[s], gout[s], [&](int c, double x, double g) {
                const double xhat = (x - mean[static_cast<size_t>(c)]) * inv_std[static_cast<size_t>(c)];
                sum_g[static_cast<size_t>(c)] += g;
                sum_gx[static_cast<size_t>(c)] += g * xhat;
            });
        for (int c = 0; c < C; ++c) {
            gshift_[c] += sum_g[static_cast<size_t>(c)];
            gscale_[c] += sum_gx[static_cast<size_t>(c)];
        }
        gin.resize(in.size());
        for (size_t s = 0; s < in.size(); ++s) {
            gin[s] = Tensor(in[s].shape());
            combine_channelwise(in[s], gout[s], gin[s], [&](int c, double x, double g) {
                const size_t cc = static_cast<size_t>(c);
                const double xhat = (x - mean[cc]) * inv_std[cc];
                return scale_[c] * inv_std[cc] / m * (m * g - sum_g[cc] - xhat * sum_gx[cc]);
            });
        }
    }

    void params(std::vector<ParamRef>& out) override {
        out.push_back({name_ + ".scale", &scale_, &gscale_, true});
        out.push_back({name_ + ".shift", &shift_, &gshift_, true});
        out.push_back({name_ + ".running_mean", &running_mean_, nullptr, false});
        out.push_back({name_ + ".running_var", &running_var_, nullptr, false});
    }

private:
    static long per_channel(const std::vector<int>& s) {
        return s.size() == 3 ? static_cast<long>(s[1]) * s[2] : 1;
    }

    template <class F>
    static void apply_channelwise(const Tensor& x, Tensor& y, F&& f) {
        const auto& s = x.shape();
        const long per = per_channel(s);
        for (int c = 0; c < s[0]; ++c)
            for (long i = 0; i < per; ++i) {
                const long idx = static_cast<long>(c) * per + i;
                y[idx] = f(c, x[idx]);
            }
    }

    template <class F>
    static void reduce_channelwise(const Tensor& x, const Tensor& g, F&& f) {
        const auto& s = x.shape();
        const long per = per_channel(s);
        for (int c = 0; c < s[0]; ++c)
            for (long i = 0; i < per; ++i) {
                const long idx = static_cast<long>(c) * per + i;
                f(c, x[idx], g[idx]);
            }
    }

    template <class F>
    static void combine_channelwise(const Tensor& x, const Tensor& g, Tensor& out, F&& f) {
        const auto& s = x.shape();
        const long per = per_channel(s);
        for (int c = 0; c < s[0]; ++c)
            for (long i = 0; i < per; ++i) {
                const long idx = static_cast<long>(c) * per + i;
                out[idx] = f(c, x[idx], g[idx]);
            }
    }

    void batch_stats(const Batch& in, std::vector<double>& mean, std::vector<double>& var) const {
        const int C = scale_.shape()[0];
        const long per = per_channel(in[0].shape());
        const double m = static_cast<double>(per * static_cast<long>(in.size()));
        std::fill(mean.begin(), mean.end(), 0.0);
        std::fill(var.begin(), var.end(), 0.0);
        for (const Tensor& x : in)
            for (int c = 0; c < C; ++c)
                for (long i = 0; i < per; ++i) mean[static_cast<size_t>(c)] += x[static_cast<long>(c) * per + i];
        for (double& v : mean) v /= m;
        for (const Tensor& x : in)
            for (int c = 0; c < C; ++c)
                for (long i = 0; i < per; ++i) {
                    const double d = x[static_cast<long>(c) * per + i] - mean[static_cast<size_t>(c)];
                    var[static_cast<size_t>(c)] += d * d;
                }
        for (double& v : var) v /= m;
    }

    Tensor scale_, shift_;
    Tensor gscale_, gshift_;
    Tensor running_mean_, running_var_;
};

class ReLU : public Layer {
public:
    explicit ReLU(std::string name) : Layer(std::move(name)) {}
    std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }
    void forward(const Batch& in, Batch& out, bool) override {
        out.resize(in.size());
        for (size_t s = 0; s < in.size(); ++s) {
            out[s] = Tensor(in[s].shape());
            for (long i = 0; i < in[s].numel(); ++i) out[s][i] = in[s][i] > 0.0 ? in[s][i] : 0.0;
        }
    }
    void backward(const Batch& in, const Batch&, const Batch& gout, Batch& gin) override {
        gin.resize(in.size());
        for (size_t s = 0; s < in.size(); ++s) {
            gin[s] = Tensor(in[s].shape());
            for (long i = 0; i < in[s].numel(); ++i) gin[s][i] = in[s][i] > 0.0 ? gout[s][i] : 0.0;
        }
    }
};

class Sigmoid : public Layer {
public:
    explicit Sigmoid(std::string name) : Layer(std::move(name)) {}
    std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }
    void forward(const Batch& in, Batch& out, bool) override {
        out.resize(in.size());
        for (size_t s = 0; s < in.size(); ++s) {
            out[s] = Tensor(in[s].shape());
            for (long i = 0; i < in[s].numel(); ++i) out[s][i] = 1.0 / (1.0 + std::exp(-in[s][i]));
        }
    }
    void backward(const Batch&, const Batch& out, const Batch& gout, Batch& gin) override {
        gin.resize(out.size());
        for (size_t s = 0; s < out.size(); ++s) {
            gin[s] = Tensor(out[s].shape());
            for (long i = 0; i < out[s].numel(); ++i) gin[s][i] = gout[s][i] * out[s][i] * (1.0 - out[s][i]);
        }
    }
};

// Fully connected layer; higher-rank inputs are flattened implicitly.
class Dense : public Layer {
public:
    Dense(std::string name, Tensor weights, Tensor bias)
        : Layer(std::move(name)),
          w_(std::move(weights)),
          b_(std::move(bias)),
          gw_(zeros_like(w_)),
          gb_(zeros_like(b_)) {
        if (w_.shape().size() != 2) throw config_error(name_ + ": weights must be rank 2");
        if (b_.shape() != std::vector<int>{w_.shape()[0]})
            throw config_error(name_ + ": bias length must equal output units");
    }

    std::vector<int> out_shape(const std::vector<int>& in) const override {
        long n = 1;
        for (int d : in) n *= d;
        detail::require(n == w_.shape()[1], name_ + ": input has " + std::to_string(n) +
                                                " values, weights expect " + std::to_string(w_.shape()[1]));
        return {w_.shape()[0]};
    }

    void forward(const Batch& in, Batch& out, bool) override {
        out.resize(in.size());
        const int m = w_.shape()[0], n = w_.shape()[1];
        for (size_t s = 0; s < in.size(); ++s) {
            out_shape(in[s].shape());
            Tensor& y = out[s] = Tensor({m});
            for (int i = 0; i < m; ++i) {
                double acc = b_[i];
                for (int j = 0; j < n; ++j) acc += w_.at(i, j) * in[s][j];
                y[i] = acc;
            }
        }
    }

    void backward(const Batch& in, const Batch&, const Batch& gout, Batch& gin) override {
        gin.resize(in.size());
        const int m = w_.shape()[0], n = w_.shape()[1];
        for (size_t s = 0; s < in.size(); ++s) {
            gin[s] = zeros_like(in[s]);
            for (int i = 0; i < m; ++i) {
                const double gv = gout[s][i];
                gb_[i] += gv;
                for (int j = 0; j < n; ++j) {
                    gw_.at(i, j) += gv * in[s][j];
                    gin[s][j] += gv * w_.at(i, j);
                }
            }
        }
    }

    void params(std::vector<ParamRef>& out) override {
        out.push_back({name_ + ".weights", &w_, &gw_, true});
        out.push_back({name_ + ".bias", &b_, &gb_, true});
    }

private:
    Tensor w_;  // (out, in)
    Tensor b_;  // (out)
    Tensor gw_, gb_;
};

// ---------------------------------------------------------------------------
// Layer chain with stored activations for reverse-mode differentiation.
// ---------------------------------------------------------------------------
class Network {
public:
    Network() = default;
    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
    size_t layer_count() const { return layers_.size(); }
    Layer& layer(size_t i) { return *layers_[i]; }

    std::vector<int> out_shape(std::vector<int> in) const {
        for (const auto& l : layers_) in = l->out_shape(in);
        return in;
    }

    const Batch& forward(const Batch& in, bool train) {
        acts_.assign(1, in);
        for (auto& l : layers_) {
            Batch out;
            l->forward(acts_.back(), out, train);
            acts_.push_back(std::move(out));
        }
        return acts_.back();
    }

    // acts_[0] is the input, acts_[i+1] the output of layer i; valid after forward
    const std::vector<Batch>& activations() const { return acts_; }

    // dL/d(input) given dL/d(output); parameter gradients accumulate in layers
    Batch backward(const Batch& gout) {
        if (acts_.size() != layers_.size() + 1)
            throw numeric_error("backward called without a matching forward");
        Batch g = gout;
        for (size_t i = layers_.size(); i-- > 0;) {
            Batch gin;
            layers_[i]->backward(acts_[i], acts_[i + 1], g, gin);
            g = std::move(gin);
        }
        return g;
    }

    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        for (auto& l : layers_) l->params(out);
        return out;
    }

    void zero_grads() {
        for (ParamRef p : params())
            if (p.grad) p.grad->fill(0.0);
    }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
    std::vector<Batch> acts_;
};

// ---------------------------------------------------------------------------
// Losses. Both return the scalar and dL/d(prediction) per batch element.
// ---------------------------------------------------------------------------
struct LossResult {
    double value = 0.0;
    Batch grad;
};

// mean over the batch of -[y log p + (1-y) log(1-p)], p clamped to
// [1e-7, 1-1e-7]; a clamped prediction contributes zero gradient
inline LossResult bce_loss(const Batch& pred, const std::vector<double>& labels) {
    static constexpr double kClamp = 1e-7;
    if (pred.size() != labels.size()) throw data_error("bce_loss: prediction/label count mismatch");
    if (pred.empty()) throw data_error("bce_loss: empty batch");
    LossResult res;
    res.grad.resize(pred.size());
    const double n = static_cast<double>(pred.size());
    for (size_t s = 0; s < pred.size(); ++s) {
        if (pred[s].numel() != 1) throw data_error("bce_loss: predictions must be scalars");
        const double raw = pred[s][0];
        const double p = std::clamp(raw, kClamp, 1.0 - kClamp);
        const double y = labels[s];
        res.value += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p)) / n;
        res.grad[s] = Tensor({1});
        res.grad[s][0] = (raw > kClamp && raw < 1.0 - kClamp) ? (p - y) / (p * (1.0 - p) * n) : 0.0;
    }
    return res;
}

// mean over batch and elements of (p - t)^2
inline LossResult mse_loss(const Batch& pred, const Batch& target) {
    if (pred.size() != target.size()) throw data_error("mse_loss: prediction/target count mismatch");
    if (pred.empty()) throw data_error("mse_loss: empty batch");
    LossResult res;
    res.grad.resize(pred.size());
    double total = 0.0;
    for (const Tensor& p : pred) total += static_cast<double>(p.numel());
    for (size_t s = 0; s < pred.size(); ++s) {
        if (pred[s].shape() != target[s].shape()) throw data_error("mse_loss: shape mismatch");
        res.grad[s] = Tensor(pred[s].shape());
        for (long i = 0; i < pred[s].numel(); ++i) {
            const double d = pred[s][i] - target[s][i];
            res.value += d * d / total;
            res.grad[s][i] = 2.0 * d / total;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Initialization and optimization
// ---------------------------------------------------------------------------

inline Tensor glorot_init(const std::vector<int>& shape, int fan_in, int fan_out, Rng& rng) {
    if (fan_in < 1 || fan_out < 1) throw config_error("glorot_init: fans must be >= 1");
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Tensor t(shape);
    for (long i = 0; i < t.numel(); ++i) t[i] = u(rng);
    return t;
}

struct TrainConfig {
    double learning_rate = 0.01;
    int lr_decay_every = 1000;
    double lr_decay_factor = 0.5;
    double momentum = 0.9;
    double gradient_noise_eta = 0.0;   // sigma_t^2 = eta / (1+t)^gamma
    double gradient_noise_gamma = 0.55;
    int batch_size = 32;
    int max_steps = 1000;
    uint64_t rng_seed = 1;

    void validate() const {
        if (!(learning_rate > 0.0)) throw config_error("learning_rate must be > 0");
        if (momentum < 0.0 || momentum >= 1.0) throw config_error("momentum must be in [0, 1)");
        if (batch_size < 2 || batch_size % 2 != 0) throw config_error("batch_size must be even and >= 2");
        if (lr_decay_every < 1) throw config_error("lr_decay_every must be >= 1");
        if (!(lr_decay_factor > 0.0)) throw config_error("lr_decay_factor must be > 0");
        if (gradient_noise_eta < 0.0) throw config_error("gradient_noise_eta must be >= 0");
        if (max_steps < 1) throw config_error("max_steps must be >= 1");
    }
};

inline double lr_at(const TrainConfig& cfg, long step) {
    return cfg.learning_rate * std::pow(cfg.lr_decay_factor, static_cast<double>(step / cfg.lr_decay_every));
}

// v <- momentum*v - lr_t*(g + noise); p <- p + v
// Noise is zero-mean Gaussian with variance eta/(1+t)^gamma; eta = 0 draws
// nothing so the rng stream is untouched.
inline void sgd_step(const std::vector<ParamRef>& params, std::map<std::string, Tensor>& velocity,
                     const TrainConfig& cfg, long step, Rng& rng) {
    const double lr = lr_at(cfg, step);
    const double sigma =
        cfg.gradient_noise_eta > 0.0
            ? std::sqrt(cfg.gradient_noise_eta / std::pow(1.0 + static_cast<double>(step), cfg.gradient_noise_gamma))
            : 0.0;
    std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);
    for (const ParamRef& p : params) {
        if (!p.trainable) continue;
        if (!p.grad) throw numeric_error("parameter " + p.name + " has no gradient buffer");
        if (p.grad->shape() != p.value->shape())
            throw numeric_error("parameter/gradient shape mismatch for " + p.name);
        auto it = velocity.find(p.name);
        if (it == velocity.end()) it = velocity.emplace(p.name, zeros_like(*p.value)).first;
        Tensor& v = it->second;
        for (long i = 0; i < p.value->numel(); ++i) {
            double g = (*p.grad)[i];
            if (sigma > 0.0) g += noise(rng);
            v[i] = cfg.momentum * v[i] - lr * g;
            (*p.value)[i] += v[i];
        }
        if (!p.value->all_finite())
            throw numeric_error("parameter " + p.name + " became non-finite during the update");
    }
}

// ---------------------------------------------------------------------------
// Finite-difference verification. Caller fills analytic gradients first
// (zero_grads + forward + backward); `loss` must re-run a fresh forward pass.
// Relative error |a - n| / max(|a|, |n|, 1e-8) per scalar parameter.
// Differences below abs_tol count as matching: a direction whose true
// gradient is exactly zero (e.g. a conv bias feeding batchnorm) would
// otherwise measure finite-difference roundoff against the floor.
// ---------------------------------------------------------------------------
struct FdReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    long worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

inline FdReport finite_diff_check(const std::vector<ParamRef>& params,
                                  const std::function<double()>& loss, double h = 1e-5,
                                  double abs_tol = 1e-8) {
    FdReport rep;
    for (const ParamRef& p : params) {
        if (!p.grad) continue;
        for (long i = 0; i < p.value->numel(); ++i) {
            const double keep = (*p.value)[i];
            (*p.value)[i] = keep + h;
            const double up = loss();
            (*p.value)[i] = keep - h;
            const double down = loss();
            (*p.value)[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = (*p.grad)[i];
            if (!std::isfinite(numeric) || !std::isfinite(analytic))
                throw numeric_error("non-finite loss while checking " + p.name);
            if (std::abs(analytic - numeric) <= abs_tol) continue;
            const double rel =
                std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = p.name;
                rep.worst_index = i;
                rep.worst_analytic = analytic;
                rep.worst_numeric = numeric;
            }
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Declarative layer descriptions. The model builders assemble these, validate
// the shape chain, then materialize layers with freshly initialized weights.
// ---------------------------------------------------------------------------

enum class LayerKind {
    conv,
    spatial_weight,
    max_pool,
    avg_pool,
    global_avg_pool,
    batchnorm,
    relu,
    sigmoid,
    dense,
    transposed_conv,
    upsample,
};

struct LayerSpec {
    LayerKind kind;
    int filters = 0;  // conv/transposed_conv output channels
    int size = 3;     // filter or pool size
    int stride = 1;
    int pad = 0;
    int units = 0;    // dense
    int factor = 3;   // upsample
};

struct NetworkSpec {
    std::vector<int> input_shape;
    std::vector<LayerSpec> layers;
};

inline std::vector<int> infer_shape(const LayerSpec& l, const std::vector<int>& in) {
    auto need3 = [&](const char* kind) {
        if (in.size() != 3) throw config_error(std::string(kind) + " layer needs a rank-3 input");
    };
    switch (l.kind) {
        case LayerKind::conv: {
            need3("conv");
            if (l.filters < 1 || l.size < 1 || l.stride < 1 || l.pad < 0)
                throw config_error("conv layer has invalid hyperparameters");
            const int h = (in[1] + 2 * l.pad - l.size) / l.stride + 1;
            const int w = (in[2] + 2 * l.pad - l.size) / l.stride + 1;
            if (in[1] + 2 * l.pad < l.size || in[2] + 2 * l.pad < l.size)
                throw config_error("conv kernel exceeds its padded input");
            return {l.filters, h, w};
        }
        case LayerKind::transposed_conv: {
            need3("transposed_conv");
            if (l.filters < 1 || l.size < 1 || l.stride < 1 || l.pad < 0)
                throw config_error("transposed_conv layer has invalid hyperparameters");
            return {l.filters, (in[1] - 1) * l.stride + l.size - 2 * l.pad,
                    (in[2] - 1) * l.stride + l.size - 2 * l.pad};
        }
        case LayerKind::spatial_weight:
            need3("spatial_weight");
            if (in[1] % 2 == 0 || in[2] % 2 == 0)
                throw config_error("spatial_weight needs odd height/width");
            return in;
        case LayerKind::max_pool:
        case LayerKind::avg_pool:
            need3("pool");
            if (l.size < 1) throw config_error("pool size must be >= 1");
            if (in[1] % l.size != 0 || in[2] % l.size != 0)
                throw config_error("pool size " + std::to_string(l.size) + " does not divide " +
                                   std::to_string(in[1]) + "x" + std::to_string(in[2]));
            return {in[0], in[1] / l.size, in[2] / l.size};
        case LayerKind::global_avg_pool:
            need3("global_avg_pool");
            return {in[0]};
        case LayerKind::batchnorm:
        case LayerKind::relu:
        case LayerKind::sigmoid:
            return in;
        case LayerKind::dense: {
            if (l.units < 1) throw config_error("dense layer needs units >= 1");
            return {l.units};
        }
        case LayerKind::upsample:
            need3("upsample");
            if (l.factor < 1) throw config_error("upsample factor must be >= 1");
            return {in[0], in[1] * l.factor, in[2] * l.factor};
    }
    throw config_error("unknown layer kind");
}

// Walks the chain and returns the output shape, rejecting invalid links.
inline std::vector<int> validate_spec(const NetworkSpec& spec) {
    std::vector<int> shape = spec.input_shape;
    for (const LayerSpec& l : spec.layers) shape = infer_shape(l, shape);
    return shape;
}

inline std::unique_ptr<Layer> make_layer(const LayerSpec& l, const std::string& name,
                                         const std::vector<int>& in, Rng& rng) {
    switch (l.kind) {
        case LayerKind::conv: {
            infer_shape(l, in);
            const int C = in[0];
            const int fan_in = C * l.size * l.size, fan_out = l.filters * l.size * l.size;
            Tensor filters = glorot_init({l.filters, C, l.size, l.size}, fan_in, fan_out, rng);
            return std::make_unique<Conv2d>(name, std::move(filters), Tensor({l.filters}), l.stride, l.pad);
        }
        case LayerKind::transposed_conv: {
            infer_shape(l, in);
            const int F = in[0];
            const int fan_in = F * l.size * l.size, fan_out = l.filters * l.size * l.size;
            Tensor filters = glorot_init({F, l.filters, l.size, l.size}, fan_in, fan_out, rng);
            return std::make_unique<TransposedConv2d>(name, std::move(filters), Tensor({l.filters}),
                                                      l.stride, l.pad);
        }
        case LayerKind::spatial_weight:
            infer_shape(l, in);
            return std::make_unique<SpatialWeight>(name, in[0]);
        case LayerKind::max_pool:
            infer_shape(l, in);
            return std::make_unique<MaxPool>(name, l.size);
        case LayerKind::avg_pool:
            infer_shape(l, in);
            return std::make_unique<AvgPool>(name, l.size);
        case LayerKind::global_avg_pool:
            infer_shape(l, in);
            return std::make_unique<GlobalAvgPool>(name);
        case LayerKind::batchnorm:
            infer_shape(l, in);
            return std::make_unique<BatchNorm>(name, in[0]);
        case LayerKind::relu:
            return std::make_unique<ReLU>(name);
        case LayerKind::sigmoid:
            return std::make_unique<Sigmoid>(name);
        case LayerKind::dense: {
            infer_shape(l, in);
            long n = 1;
            for (int d : in) n *= d;
            Tensor w = glorot_init({l.units, static_cast<int>(n)}, static_cast<int>(n), l.units, rng);
            return std::make_unique<Dense>(name, std::move(w), Tensor({l.units}));
        }
        case LayerKind::upsample:
            infer_shape(l, in);
            return std::make_unique<Upsample>(name, l.factor);
    }
    throw config_error("unknown layer kind");
}

inline const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::spatial_weight: return "spatial_weight";
        case LayerKind::max_pool: return "max_pool";
        case LayerKind::avg_pool: return "avg_pool";
        case LayerKind::global_avg_pool: return "global_avg_pool";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::relu: return "relu";
        case LayerKind::sigmoid: return "sigmoid";
        case LayerKind::dense: return "dense";
        case LayerKind::transposed_conv: return "transposed_conv";
        case LayerKind::upsample: return "upsample";
    }
    return "?";
}

// Materializes the whole chain; layer names are "<prefix><kind><position>".
inline Network build_network(const NetworkSpec& spec, Rng& rng, const std::string& prefix = "") {
    validate_spec(spec);
    Network net;
    std::vector<int> shape = spec.input_shape;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        std::string name = prefix + kind_name(l.kind) + std::to_string(i + 1);
        net.add(make_layer(l, name, shape, rng));
        shape = infer_shape(l, shape);
    }
    return net;
}

// ---------------------------------------------------------------------------
// LUCW weight file: magic "LUCW" | version u16=1 | tensor count u32 | per
// tensor: name length u16 + UTF-8 name | rank u32 | dims u32 each | f64
// payload. Running statistics are saved alongside trainable tensors.
// ---------------------------------------------------------------------------

inline void save_weights(const std::vector<ParamRef>& params, const std::string& path) {
    ByteWriter w;
    w.magic("LUCW");
    w.u16(1);
    w.u32(static_cast<uint32_t>(params.size()));
    for (const ParamRef& p : params) {
        w.u16(static_cast<uint16_t>(p.name.size()));
        w.raw(p.name.data(), p.name.size());
        w.u32(static_cast<uint32_t>(p.value->shape().size()));
        for (int d : p.value->shape()) w.u32(static_cast<uint32_t>(d));
        for (long i = 0; i < p.value->numel(); ++i) w.f64((*p.value)[i]);
    }
    w.save(path);
}

inline std::vector<std::pair<std::string, Tensor>> load_weights(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("LUCW", "LUCW weights");
    if (r.u16() != 1) throw data_error(path + ": unsupported LUCW version");
    uint32_t count = r.u32();
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (uint32_t t = 0; t < count; ++t) {
        uint16_t len = r.u16();
        std::string name(len, '\0');
        r.raw(name.data(), len);
        uint32_t rank = r.u32();
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(r.u32());
        Tensor tensor(shape);
        for (long i = 0; i < tensor.numel(); ++i) tensor[i] = r.f64();
        out.emplace_back(std::move(name), std::move(tensor));
    }
    r.expect_exhausted("LUCW weights");
    return out;
}

inline void apply_weights(const std::vector<ParamRef>& params,
                          const std::vector<std::pair<std::string, Tensor>>& loaded) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, tensor] : loaded) by_name[name] = &tensor;
    for (const ParamRef& p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) throw data_error("weight file is missing tensor " + p.name);
        if (it->second->shape() != p.value->shape())
            throw data_error("weight tensor " + p.name + " has shape " + it->second->shape_str() +
                             ", expected " + p.value->shape_str());
        *p.value = *it->second;
    }
}

}  // namespace luc::nn
