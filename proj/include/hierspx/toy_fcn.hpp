#pragma once

// A small fully convolutional network with clustering modules at both of its
// downsampling layers:
//
//   image -conv3x3+relu-> x1 -stride2+relu-> s2 -conv3x3+relu-> x2
//         -stride2+relu-> s4 -conv1x1-> logits (output stride 4)
//
// The trunk is the same in both decoder modes. In cluster mode, (x1, s2) and
// (x2, s4) produce assignment fields and the logits are decoded through them;
// in bilinear mode the logits are upsampled x4.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hierspx/binary.hpp"
#include "hierspx/clustering.hpp"
#include "hierspx/decode.hpp"
#include "hierspx/error.hpp"
#include "hierspx/gradients.hpp"
#include "hierspx/grid.hpp"
#include "hierspx/io.hpp"
#include "hierspx/metrics.hpp"
#include "hierspx/parallel.hpp"

namespace hierspx::toy {

enum class Decoder { cluster, bilinear };

inline const char* to_string(Decoder d) {
  return d == Decoder::cluster ? "cluster" : "bilinear";
}

enum Class : std::uint32_t { background = 0, blob = 1, thin_line = 2 };
inline constexpr std::size_t kClasses = 3;

// ---------------------------------------------------------------------------
// Convolution

// Weights laid out [ky][kx][cin][cout] so the innermost loop runs over output
// channels. Stride-1 layers pad by replicating edge pixels, so a constant
// input stays constant.
struct ConvLayer {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t cin = 0;
  std::size_t cout = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  ConvLayer() = default;
  ConvLayer(std::size_t k, std::size_t s, std::size_t in, std::size_t out)
      : kernel(k), stride(s), cin(in), cout(out),
        weight(k * k * in * out, 0.0), bias(out, 0.0) {}

  std::size_t pad() const noexcept { return stride == 1 ? (kernel - 1) / 2 : 0; }

  Dims output_dims(Dims in) const noexcept {
    return stride == 1 ? in : Dims{in.height / stride, in.width / stride};
  }
};

inline FeatureMap conv_forward(const ConvLayer& layer, const FeatureMap& in) {
  Dims od = layer.output_dims(in.dims());
  FeatureMap out(od, layer.cout);
  const std::size_t k = layer.kernel, cin = layer.cin, cout = layer.cout;
  const auto pad = static_cast<std::ptrdiff_t>(layer.pad());
  const auto ih_n = static_cast<std::ptrdiff_t>(in.height());
  const auto iw_n = static_cast<std::ptrdiff_t>(in.width());
  for (std::size_t oh = 0; oh < od.height; ++oh)
    for (std::size_t ow = 0; ow < od.width; ++ow) {
      double* dst = out.pixel(oh, ow).data();
      std::copy(layer.bias.begin(), layer.bias.end(), dst);
      for (std::size_t ky = 0; ky < k; ++ky) {
        auto ih = std::clamp(static_cast<std::ptrdiff_t>(oh * layer.stride + ky) - pad,
                             std::ptrdiff_t{0}, ih_n - 1);
        for (std::size_t kx = 0; kx < k; ++kx) {
          auto iw = std::clamp(static_cast<std::ptrdiff_t>(ow * layer.stride + kx) - pad,
                               std::ptrdiff_t{0}, iw_n - 1);
          const double* src = in.pixel(static_cast<std::size_t>(ih),
                                       static_cast<std::size_t>(iw)).data();
          const double* wk = layer.weight.data() + (ky * k + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            double v = src[ci];
            const double* wrow = wk + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) dst[co] += v * wrow[co];
          }
        }
      }
    }
  return out;
}

// Accumulates weight/bias gradients into `grad` and returns dL/d(input) when
// requested.
inline FeatureMap conv_backward(const ConvLayer& layer, const FeatureMap& in,
                                const FeatureMap& d_out, ConvLayer& grad,
                                bool want_input_grad = true) {
  const std::size_t k = layer.kernel, cin = layer.cin, cout = layer.cout;
  // [ky][kx][cout][cin] copy so the input-gradient loop is contiguous too.
  std::vector<double> wt;
  if (want_input_grad) {
    wt.resize(layer.weight.size());
    for (std::size_t t = 0; t < k * k; ++t)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t co = 0; co < cout; ++co)
          wt[(t * cout + co) * cin + ci] = layer.weight[(t * cin + ci) * cout + co];
  }
  FeatureMap d_in = want_input_grad ? FeatureMap(in.dims(), cin) : FeatureMap();
  const auto pad = static_cast<std::ptrdiff_t>(layer.pad());
  const auto ih_n = static_cast<std::ptrdiff_t>(in.height());
  const auto iw_n = static_cast<std::ptrdiff_t>(in.width());
  for (std::size_t oh = 0; oh < d_out.height(); ++oh)
    for (std::size_t ow = 0; ow < d_out.width(); ++ow) {
      const double* g = d_out.pixel(oh, ow).data();
      for (std::size_t co = 0; co < cout; ++co) grad.bias[co] += g[co];
      for (std::size_t ky = 0; ky < k; ++ky) {
        auto ih = std::clamp(static_cast<std::ptrdiff_t>(oh * layer.stride + ky) - pad,
                             std::ptrdiff_t{0}, ih_n - 1);
        for (std::size_t kx = 0; kx < k; ++kx) {
          auto iw = std::clamp(static_cast<std::ptrdiff_t>(ow * layer.stride + kx) - pad,
                               std::ptrdiff_t{0}, iw_n - 1);
          auto uh = static_cast<std::size_t>(ih), uw = static_cast<std::size_t>(iw);
          const double* src = in.pixel(uh, uw).data();
          std::size_t tap = ky * k + kx;
          double* gk = grad.weight.data() + tap * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            double v = src[ci];
            double* grow = gk + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) grow[co] += v * g[co];
          }
          if (want_input_grad) {
            double* di = d_in.pixel(uh, uw).data();
            const double* wk = wt.data() + tap * cout * cin;
            for (std::size_t co = 0; co < cout; ++co) {
              double gv = g[co];
              const double* wrow = wk + co * cin;
              for (std::size_t ci = 0; ci < cin; ++ci) di[ci] += gv * wrow[ci];
            }
          }
        }
      }
    }
  return d_in;
}

inline FeatureMap relu(const FeatureMap& z) {
  FeatureMap out = z;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

// Masks `grad` in place where the pre-activation was not positive.
inline void relu_backward(const FeatureMap& pre, FeatureMap& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(pre.data()[i] > 0.0)) grad.data()[i] = 0.0;
}

inline void accumulate(FeatureMap& into, const FeatureMap& add) {
  for (std::size_t i = 0; i < into.size(); ++i) into.data()[i] += add.data()[i];
}

// ---------------------------------------------------------------------------
// Parameters

struct NetShape {
  std::size_t classes = kClasses;
  std::size_t k_dim = 16;
};

struct ToyNetParams {
  NetShape shape;
  ConvLayer conv1;
  ConvLayer down1;
  ConvLayer conv2;
  ConvLayer down2;
  ConvLayer head;
  ProjectionPair proj1;  // x1 (16 ch) vs s2 (32 ch)
  ProjectionPair proj2;  // x2 (32 ch) vs s4 (64 ch)

  ToyNetParams() : ToyNetParams(NetShape{}) {}
  explicit ToyNetParams(NetShape s)
      : shape(s), conv1(3, 1, 3, 16), down1(2, 2, 16, 32), conv2(3, 1, 32, 32),
        down2(2, 2, 32, 64), head(1, 1, 64, s.classes),
        proj1{Matrix(s.k_dim, 16), Matrix(s.k_dim, 32)},
        proj2{Matrix(s.k_dim, 32), Matrix(s.k_dim, 64)} {}

  // Visits every parameter tensor in a fixed order.
  template <typename Fn>
  void visit(Fn&& fn) {
    fn("conv1.weight", conv1.weight);
    fn("conv1.bias", conv1.bias);
    fn("down1.weight", down1.weight);
    fn("down1.bias", down1.bias);
    fn("conv2.weight", conv2.weight);
    fn("conv2.bias", conv2.bias);
    fn("down2.weight", down2.weight);
    fn("down2.bias", down2.bias);
    fn("head.weight", head.weight);
    fn("head.bias", head.bias);
    fn("proj1.fine", proj1.w_fine.data());
    fn("proj1.seed", proj1.w_seed.data());
    fn("proj2.fine", proj2.w_fine.data());
    fn("proj2.seed", proj2.w_seed.data());
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    const_cast<ToyNetParams*>(this)->visit(
        [&](const char* name, std::vector<double>& t) {
          fn(name, static_cast<const std::vector<double>&>(t));
        });
  }

  std::size_t count() const {
    std::size_t n = 0;
    visit([&](const char*, const std::vector<double>& t) { n += t.size(); });
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(count());
    visit([&](const char*, const std::vector<double>& t) {
      out.insert(out.end(), t.begin(), t.end());
    });
    return out;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != count())
      throw InvalidInput("ToyNetParams::assign: expected " +
                         std::to_string(count()) + " values");
    std::size_t off = 0;
    visit([&](const char*, std::vector<double>& t) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(),
                  t.begin());
      off += t.size();
    });
  }

  bool all_finite() const {
    bool ok = true;
    visit([&](const char*, const std::vector<double>& t) {
      for (double v : t) ok = ok && std::isfinite(v);
    });
    return ok;
  }

  ToyNetParams zeros_like() const { return ToyNetParams(shape); }

  // He fan-in scaling for convolutions; Gaussian rows scaled by 1/sqrt(cols)
  // for the projections.
  static ToyNetParams init(NetShape s, std::uint64_t seed) {
    ToyNetParams p(s);
    std::mt19937_64 rng(seed);
    auto fill_conv = [&](ConvLayer& l) {
      std::normal_distribution<double> n(
          0.0, std::sqrt(2.0 / static_cast<double>(l.kernel * l.kernel * l.cin)));
      for (double& w : l.weight) w = n(rng);
    };
    fill_conv(p.conv1);
    fill_conv(p.down1);
    fill_conv(p.conv2);
    fill_conv(p.down2);
    fill_conv(p.head);
    auto fill_proj = [&](Matrix& m) {
      std::normal_distribution<double> n(0.0,
                                         1.0 / std::sqrt(static_cast<double>(m.cols())));
      for (double& w : m.data()) w = n(rng);
    };
    fill_proj(p.proj1.w_fine);
    fill_proj(p.proj1.w_seed);
    fill_proj(p.proj2.w_fine);
    fill_proj(p.proj2.w_seed);
    return p;
  }

  friend bool operator==(const ToyNetParams& a, const ToyNetParams& b) {
    return a.flatten() == b.flatten() && a.shape.classes == b.shape.classes &&
           a.shape.k_dim == b.shape.k_dim;
  }
};

inline ClusteringConfig net_clustering(const ToyNetParams& p, double tau = kDefaultTau) {
  ClusteringConfig c;
  c.tau = tau;
  c.k_dim = p.shape.k_dim;
  c.similarity = Similarity::cosine;
  return c;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct ForwardPass {
  Decoder mode = Decoder::cluster;
  FeatureMap image;
  FeatureMap z1, x1;   // conv1 pre/post activation, OS 1
  FeatureMap zd1;      // down1 pre-activation
  SeedGrid s2;         // down1 output, OS 2 (seeds of level 1)
  FeatureMap z2, x2;   // conv2 pre/post activation, OS 2
  FeatureMap zd2;      // down2 pre-activation
  SeedGrid s4;         // down2 output, OS 4 (seeds of level 2)
  FeatureMap coarse_logits;  // OS 4
  AssignmentField field1;    // x1 -> s2
  AssignmentField field2;    // x2 -> s4
  FeatureMap mid_logits;     // OS 2, cluster mode only
  FeatureMap logits;         // full resolution
};

inline void check_image(const FeatureMap& image) {
  if (image.channels() != 3)
    throw InvalidInput("toy net: image must have 3 channels, got " +
                       std::to_string(image.channels()));
  if (image.height() == 0 || image.width() == 0 || image.height() % 4 != 0 ||
      image.width() % 4 != 0)
    throw InvalidInput("toy net: image dims " + hierspx::to_string(image.dims()) +
                       " must be positive multiples of 4");
}

inline ForwardPass forward(const ToyNetParams& p, const FeatureMap& image,
                           Decoder mode, double tau = kDefaultTau) {
  check_image(image);
  ForwardPass f;
  f.mode = mode;
  f.image = image;
  f.z1 = conv_forward(p.conv1, image);
  f.x1 = relu(f.z1);
  f.zd1 = conv_forward(p.down1, f.x1);
  f.s2.features = relu(f.zd1);
  f.z2 = conv_forward(p.conv2, f.s2.features);
  f.x2 = relu(f.z2);
  f.zd2 = conv_forward(p.down2, f.x2);
  f.s4.features = relu(f.zd2);
  f.coarse_logits = conv_forward(p.head, f.s4.features);
  if (mode == Decoder::cluster) {
    ClusteringConfig cc = net_clustering(p, tau);
    f.field1 = soft_assign(f.x1, f.s2, p.proj1, cc);
    f.field2 = soft_assign(f.x2, f.s4, p.proj2, cc);
    f.mid_logits = decode_once(f.field2, f.coarse_logits);
    f.logits = decode_once(f.field1, f.mid_logits);
  } else {
    f.logits = bilinear_upsample(f.coarse_logits, 4);
  }
  return f;
}

// Mean per-pixel cross-entropy and its gradient w.r.t. the logits.
struct CrossEntropy {
  double loss = 0.0;
  FeatureMap d_logits;
};

inline CrossEntropy cross_entropy(const FeatureMap& logits, const LabelMap& labels) {
  if (logits.dims() != labels.dims())
    throw InvalidInput("cross_entropy: logits/labels dims differ");
  CrossEntropy ce{0.0, FeatureMap(logits.dims(), logits.channels())};
  const std::size_t n = logits.pixels(), ch = logits.channels();
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t p = 0; p < n; ++p) {
    auto z = logits.pixel(p);
    auto d = ce.d_logits.pixel(p);
    double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < ch; ++c) {
      d[c] = std::exp(z[c] - mx);
      sum += d[c];
    }
    std::uint32_t y = labels[p];
    if (y >= ch) throw InvalidInput("cross_entropy: label exceeds class count");
    ce.loss += (std::log(sum) + mx - z[y]) * inv_n;
    for (std::size_t c = 0; c < ch; ++c) d[c] = d[c] / sum * inv_n;
    d[y] -= inv_n;
  }
  return ce;
}

struct LossGrad {
  double loss = 0.0;
  ToyNetParams grad;
};

inline LossGrad loss_and_grad(const ToyNetParams& p, const FeatureMap& image,
                              const LabelMap& labels, Decoder mode,
                              double tau = kDefaultTau) {
  ForwardPass f = forward(p, image, mode, tau);
  CrossEntropy ce = cross_entropy(f.logits, labels);
  LossGrad out{ce.loss, p.zeros_like()};
  ToyNetParams& g = out.grad;

  FeatureMap d_coarse;
  FeatureMap d_x1(f.x1.dims(), f.x1.channels());
  FeatureMap d_s2(f.s2.dims(), f.s2.features.channels());
  FeatureMap d_x2(f.x2.dims(), f.x2.channels());
  FeatureMap d_s4(f.s4.dims(), f.s4.features.channels());

  if (mode == Decoder::cluster) {
    ClusteringConfig cc = net_clustering(p, tau);
    DecodeAdjoint a1 = backward_decode(f.field1, f.mid_logits, ce.d_logits);
    DecodeAdjoint a2 = backward_decode(f.field2, f.coarse_logits, a1.d_coarse);
    d_coarse = std::move(a2.d_coarse);
    SoftAssignAdjoint sa1 = backward_soft_assign(f.x1, f.s2, p.proj1, cc, a1.d_weight);
    SoftAssignAdjoint sa2 = backward_soft_assign(f.x2, f.s4, p.proj2, cc, a2.d_weight);
    accumulate(d_x1, sa1.d_fine);
    accumulate(d_s2, sa1.d_seeds);
    accumulate(d_x2, sa2.d_fine);
    accumulate(d_s4, sa2.d_seeds);
    g.proj1.w_fine = std::move(sa1.d_w_fine);
    g.proj1.w_seed = std::move(sa1.d_w_seed);
    g.proj2.w_fine = std::move(sa2.d_w_fine);
    g.proj2.w_seed = std::move(sa2.d_w_seed);
  } else {
    d_coarse = bilinear_upsample_backward(ce.d_logits, f.coarse_logits.dims(), 4);
  }

  accumulate(d_s4, conv_backward(p.head, f.s4.features, d_coarse, g.head));
  relu_backward(f.zd2, d_s4);
  accumulate(d_x2, conv_backward(p.down2, f.x2, d_s4, g.down2));
  relu_backward(f.z2, d_x2);
  accumulate(d_s2, conv_backward(p.conv2, f.s2.features, d_x2, g.conv2));
  relu_backward(f.zd1, d_s2);
  accumulate(d_x1, conv_backward(p.down1, f.x1, d_s2, g.down1));
  relu_backward(f.z1, d_x1);
  conv_backward(p.conv1, f.image, d_x1, g.conv1, false);
  return out;
}

inline double loss_only(const ToyNetParams& p, const FeatureMap& image,
                        const LabelMap& labels, Decoder mode,
                        double tau = kDefaultTau) {
  return cross_entropy(forward(p, image, mode, tau).logits, labels).loss;
}

inline LabelMap predict(const ToyNetParams& p, const FeatureMap& image, Decoder mode) {
  ForwardPass f = forward(p, image, mode);
  LabelMap out(f.logits.dims());
  for (std::size_t i = 0; i < f.logits.pixels(); ++i) {
    auto z = f.logits.pixel(i);
    out[i] = static_cast<std::uint32_t>(std::max_element(z.begin(), z.end()) -
                                        z.begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic thin-structure data

struct SyntheticSample {
  FeatureMap image;  // 3 channels in [0,1]
  LabelMap labels;   // background / blob / thin_line
};

struct SyntheticOptions {
  std::size_t size = 64;
  double noise_sigma = 0.02;
  double min_color_distance = 0.2;
};

namespace detail {

using Rgb = std::array<double, 3>;

inline double rgb_distance(const Rgb& a, const Rgb& b) {
  double d = 0.0;
  for (int c = 0; c < 3; ++c) d += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(d);
}

// Bresenham: an 8-connected, one-pixel-wide segment.
template <typename Plot>
void draw_segment(long x0, long y0, long x1, long y1, Plot&& plot) {
  long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  while (true) {
    plot(x0, y0);
    if (x0 == x1 && y0 == y1) break;
    long e2 = 2 * err;
    if (e2 >= dy) { err += dy; x0 += sx; }
    if (e2 <= dx) { err += dx; y0 += sy; }
  }
}

}  // namespace detail

// Each image: random background colour, 1-3 filled ellipses (blob) and 1-3
// one-pixel polylines (thin_line) drawn on top, then additive Gaussian noise.
// The three class colours are pairwise at least `min_color_distance` apart.
inline std::vector<SyntheticSample> gen_synthetic(std::uint64_t seed,
                                                  std::size_t count,
                                                  SyntheticOptions opts = {}) {
  if (opts.size < 32)
    throw InvalidInput("gen_synthetic: size must be >= 32, got " +
                       std::to_string(opts.size));
  using detail::Rgb;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = opts.size;
  const double sz = static_cast<double>(n);
  auto rand_int = [&](long lo, long hi) {
    return std::uniform_int_distribution<long>(lo, hi)(rng);
  };
  // Each class draws from its own box of RGB space so that a uniform region
  // identifies its class locally; rejection enforces the pairwise distance.
  auto rand_color = [&](const Rgb& lo, const Rgb& hi, const std::vector<Rgb>& avoid) {
    while (true) {
      Rgb c;
      for (int ch = 0; ch < 3; ++ch) c[ch] = lo[ch] + (hi[ch] - lo[ch]) * unit(rng);
      bool ok = std::all_of(avoid.begin(), avoid.end(), [&](const Rgb& o) {
        return detail::rgb_distance(c, o) >= opts.min_color_distance;
      });
      if (ok) return c;
    }
  };

  std::vector<SyntheticSample> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    Rgb bg = rand_color({0.0, 0.0, 0.0}, {0.45, 0.45, 0.45}, {});
    Rgb blob_c = rand_color({0.6, 0.6, 0.0}, {1.0, 1.0, 0.45}, {bg});
    Rgb line_c = rand_color({0.0, 0.6, 0.55}, {0.45, 1.0, 1.0}, {bg, blob_c});
    LabelMap labels(n, n, background);

    long blobs = rand_int(1, 3);
    for (long b = 0; b < blobs; ++b) {
      double cy = unit(rng) * sz, cx = unit(rng) * sz;
      double ry = sz / 16.0 + unit(rng) * sz / 8.0;
      double rx = sz / 16.0 + unit(rng) * sz / 8.0;
      double th = unit(rng) * 3.141592653589793;
      double ct = std::cos(th), st = std::sin(th);
      for (std::size_t h = 0; h < n; ++h)
        for (std::size_t w = 0; w < n; ++w) {
          double dy = static_cast<double>(h) + 0.5 - cy;
          double dx = static_cast<double>(w) + 0.5 - cx;
          double u = (ct * dx + st * dy) / rx, v = (-st * dx + ct * dy) / ry;
          if (u * u + v * v <= 1.0) labels.at(h, w) = blob;
        }
    }
    long lines = rand_int(1, 3);
    const long last = static_cast<long>(n) - 1;
    for (long l = 0; l < lines; ++l) {
      long vertices = rand_int(2, 3);
      long px = rand_int(0, last), py = rand_int(0, last);
      for (long v = 1; v < vertices; ++v) {
        long qx = rand_int(0, last), qy = rand_int(0, last);
        detail::draw_segment(px, py, qx, qy, [&](long x, long y) {
          labels.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = thin_line;
        });
        px = qx;
        py = qy;
      }
    }

    FeatureMap image(n, n, 3);
    for (std::size_t p = 0; p < labels.size(); ++p) {
      const Rgb& c = labels[p] == background ? bg : labels[p] == blob ? blob_c : line_c;
      auto px = image.pixel(p);
      for (int ch = 0; ch < 3; ++ch) {
        double v = c[ch];
        if (opts.noise_sigma > 0.0) v += opts.noise_sigma * noise(rng);
        px[ch] = std::clamp(v, 0.0, 1.0);
      }
    }
    out.push_back({std::move(image), std::move(labels)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t iterations = 2000;
  std::size_t batch_size = 8;
  double base_lr = 0.1;
  double momentum = 0.9;
  double poly_power = 0.9;
  Decoder decoder = Decoder::cluster;
  std::uint64_t seed = 42;
  NetShape shape{};
  double tau = kDefaultTau;
  unsigned threads = 1;

  void validate() const {
    if (!(base_lr > 0.0)) throw InvalidConfig("train: learning rate must be > 0");
    if (batch_size == 0) throw InvalidConfig("train: batch size must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw InvalidConfig("train: momentum must be in [0, 1)");
  }
};

// base * (1 - t/T)^power
inline double poly_lr(double base, std::size_t t, std::size_t total, double power = 0.9) {
  if (total == 0) return base;
  return base * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(total), power);
}

struct TrainResult {
  ToyNetParams params;
  std::vector<double> loss_curve;  // mean batch loss per iteration
};

// Momentum SGD (v <- mu v + g; theta <- theta - lr v) on mean cross-entropy.
// Per-sample gradients may run in parallel; they are summed in batch order.
inline TrainResult train(const TrainConfig& config,
                         const std::vector<SyntheticSample>& dataset,
                         const ToyNetParams* init = nullptr) {
  config.validate();
  if (dataset.empty()) throw InvalidInput("train: empty dataset");
  TrainResult result{init ? *init : ToyNetParams::init(config.shape, config.seed), {}};
  ToyNetParams& params = result.params;
  std::vector<double> theta = params.flatten();
  std::vector<double> velocity(theta.size(), 0.0);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  result.loss_curve.reserve(config.iterations);

  std::vector<std::size_t> batch(config.batch_size);
  std::vector<LossGrad> per_sample(config.batch_size);
  const double inv_b = 1.0 / static_cast<double>(config.batch_size);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    for (auto& b : batch) b = pick(rng);
    parallel_for(batch.size(), config.threads, [&](std::size_t b0, std::size_t b1) {
      for (std::size_t b = b0; b < b1; ++b) {
        const auto& sample = dataset[batch[b]];
        per_sample[b] = loss_and_grad(params, sample.image, sample.labels,
                                      config.decoder, config.tau);
      }
    });
    double loss = 0.0;
    std::vector<double> grad(theta.size(), 0.0);
    for (const auto& ls : per_sample) {
      loss += ls.loss * inv_b;
      std::vector<double> g = ls.grad.flatten();
      for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i] * inv_b;
    }
    // a NaN input can vanish through ReLU and surface only in the gradient
    bool finite = std::isfinite(loss);
    for (std::size_t i = 0; i < grad.size() && finite; ++i) finite = std::isfinite(grad[i]);
    if (!finite)
      throw TrainingFailure("train: loss diverged at iteration " + std::to_string(it), it);
    result.loss_curve.push_back(loss);
    double lr = poly_lr(config.base_lr, it, config.iterations, config.poly_power);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      velocity[i] = config.momentum * velocity[i] + grad[i];
      theta[i] -= lr * velocity[i];
    }
    params.assign(theta);
  }
  if (!params.all_finite())
    throw TrainingFailure("train: non-finite parameters after training",
                          config.iterations);
  return result;
}

struct EvalMetrics {
  double miou = 0.0;
  double pixel_acc = 0.0;
  double boundary_f = 0.0;  // mean per-image boundary F-score at 1 px
  std::vector<double> class_iou;
};

inline EvalMetrics evaluate_predictions(const std::vector<LabelMap>& preds,
                                        const std::vector<LabelMap>& gts,
                                        std::size_t classes = kClasses) {
  if (preds.size() != gts.size())
    throw InvalidInput("evaluate: prediction/ground-truth counts differ");
  ConfusionMatrix cm(classes);
  double bf = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    cm.add(preds[i], gts[i]);
    bf += boundary_f_score(preds[i], gts[i], 1);
  }
  ClassScores s = cm.scores();
  return {s.miou, s.pixel_acc,
          preds.empty() ? 1.0 : bf / static_cast<double>(preds.size()), s.iou};
}

inline EvalMetrics evaluate(const ToyNetParams& p,
                            const std::vector<SyntheticSample>& dataset,
                            Decoder mode) {
  std::vector<LabelMap> preds, gts;
  preds.reserve(dataset.size());
  gts.reserve(dataset.size());
  for (const auto& s : dataset) {
    preds.push_back(predict(p, s.image, mode));
    gts.push_back(s.labels);
  }
  return evaluate_predictions(preds, gts, p.shape.classes);
}

// ---------------------------------------------------------------------------
// Checkpoints: "HSPC", u32 version, u32 classes, u32 k_dim, u32 section count,
// then per section u16 name length, name bytes, u64 value count, f64 values.

inline void write_checkpoint(std::ostream& os, const ToyNetParams& p) {
  os.write("HSPC", 4);
  binary::put<std::uint32_t>(os, 1);
  binary::put(os, static_cast<std::uint32_t>(p.shape.classes));
  binary::put(os, static_cast<std::uint32_t>(p.shape.k_dim));
  std::uint32_t sections = 0;
  p.visit([&](const char*, const std::vector<double>&) { ++sections; });
  binary::put(os, sections);
  p.visit([&](const char* name, const std::vector<double>& t) {
    std::string n(name);
    binary::put(os, static_cast<std::uint16_t>(n.size()));
    os.write(n.data(), static_cast<std::streamsize>(n.size()));
    binary::put(os, static_cast<std::uint64_t>(t.size()));
    for (double v : t) binary::put(os, v);
  });
  if (!os) throw IoError("write_checkpoint: stream write failed");
}

inline ToyNetParams read_checkpoint(std::istream& is) {
  binary::expect_magic(is, "HSPC");
  auto version = binary::get<std::uint32_t>(is, "version");
  if (version != 1)
    throw ParseError("checkpoint: unsupported version " + std::to_string(version), 4);
  NetShape shape;
  shape.classes = binary::get<std::uint32_t>(is, "classes");
  shape.k_dim = binary::get<std::uint32_t>(is, "k_dim");
  ToyNetParams p(shape);
  auto sections = binary::get<std::uint32_t>(is, "section count");
  std::uint32_t expected = 0;
  p.visit([&](const char*, std::vector<double>&) { ++expected; });
  if (sections != expected)
    throw ParseError("checkpoint: expected " + std::to_string(expected) +
                         " sections, found " + std::to_string(sections),
                     16);
  p.visit([&](const char* name, std::vector<double>& t) {
    auto len = binary::get<std::uint16_t>(is, "section name length");
    std::string got(len, '\0');
    auto at = static_cast<std::size_t>(is.tellg());
    if (!is.read(got.data(), len) || got != name)
      throw ParseError("checkpoint: expected section '" + std::string(name) +
                           "' at byte " + std::to_string(at),
                       at);
    auto n = binary::get<std::uint64_t>(is, "section size");
    if (n != t.size())
      throw ParseError("checkpoint: section '" + got + "' has " +
                           std::to_string(n) + " values, expected " +
                           std::to_string(t.size()),
                       at);
    for (double& v : t) v = binary::get<double>(is, "parameter");
  });
  return p;
}

inline void save_checkpoint(const ToyNetParams& p, const std::filesystem::path& path) {
  write_atomically(path, [&](std::ostream& os) { write_checkpoint(os, p); });
}

inline ToyNetParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace hierspx::toy
