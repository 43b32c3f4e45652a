#pragma once
/*
 * Encoder-decoder convolutional network with hand-written reverse mode.
 *
 * A Network is two ordered layer lists. The encoder maps the 1-channel input
 * to the bottleneck activation; the decoder maps the bottleneck back to a
 * 1-channel image of the input size. With skip connections enabled, every
 * encoder max_pool2 pushes its input onto a stack and every decoder upsample2
 * pops it and appends it after the upsampled channels.
 *
 * Layer kinds: conv (k x k, zero "same" padding, no bias), bias_add,
 * leaky_relu(a), max_pool2 (2x2 stride 2, first index wins ties), upsample2
 * (nearest neighbour).
 *
 * Parameters live in one flat vector in declaration order (encoder layers
 * first); conv kernels are laid out [out][in][ky][kx].
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "nett/error.hpp"
#include "nett/grid.hpp"
#include "nett/io.hpp"
#include "nett/rng.hpp"

namespace nett {

/// Channel-major activation tensor (C x H x W).
struct Tensor3 {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<double> values;

  Tensor3() = default;
  Tensor3(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), values(c * h * w, fill) {}

  static Tensor3 from_image(const Image& x) {
    Tensor3 t(1, x.rows(), x.cols());
    std::copy(x.values().begin(), x.values().end(), t.values.begin());
    return t;
  }
  Image to_image() const {
    if (channels != 1) throw ShapeError("Tensor3::to_image: expected one channel");
    return Image(height, width, values);
  }

  std::size_t plane() const noexcept { return height * width; }
  double* channel(std::size_t c) noexcept { return values.data() + c * plane(); }
  const double* channel(std::size_t c) const noexcept { return values.data() + c * plane(); }
  bool same_shape(const Tensor3& o) const noexcept {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

enum class LayerKind : std::uint32_t { conv = 0, bias_add = 1, leaky_relu = 2, max_pool2 = 3, upsample2 = 4 };

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::bias_add: return "bias_add";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::max_pool2: return "max_pool2";
    case LayerKind::upsample2: return "upsample2";
  }
  return "?";
}

struct Layer {
  LayerKind kind = LayerKind::conv;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;  ///< conv only, odd
  double leak = 0.1;       ///< leaky_relu only
  std::size_t param_offset = 0;

  std::size_t param_count() const noexcept {
    switch (kind) {
      case LayerKind::conv: return out_channels * in_channels * kernel * kernel;
      case LayerKind::bias_add: return out_channels;
      default: return 0;
    }
  }

  static Layer conv(std::size_t in, std::size_t out, std::size_t k = 3) {
    return {LayerKind::conv, in, out, k, 0.0, 0};
  }
  static Layer bias(std::size_t ch) { return {LayerKind::bias_add, ch, ch, 0, 0.0, 0}; }
  static Layer leaky_relu(double a = 0.1) { return {LayerKind::leaky_relu, 0, 0, 0, a, 0}; }
  static Layer max_pool2() { return {LayerKind::max_pool2, 0, 0, 0, 0.0, 0}; }
  static Layer upsample2() { return {LayerKind::upsample2, 0, 0, 0, 0.0, 0}; }
};

/// Activations recorded by a forward pass; consumed by Network::backward().
struct ForwardCache {
  std::vector<Tensor3> encoder_acts;  ///< [0] input, [i+1] output of encoder layer i
  std::vector<Tensor3> decoder_acts;  ///< [0] bottleneck, [i+1] output of decoder layer i
  std::vector<std::size_t> skip_source;  ///< per decoder layer: encoder_acts index appended, or npos
  bool has_decoder_pass = false;

  const Tensor3& input() const { return encoder_acts.front(); }
  const Tensor3& bottleneck() const { return encoder_acts.back(); }
  Image output() const {
    return has_decoder_pass ? decoder_acts.back().to_image() : encoder_acts.back().to_image();
  }
};

struct Gradients {
  std::vector<double> params;  ///< empty when parameter gradients were not requested
  Image input;
};

namespace net_detail {

inline void conv_forward(const Tensor3& in, Tensor3& out, const double* w, std::size_t cout,
                         std::size_t k) {
  const std::size_t h = in.height, wd = in.width, cin = in.channels;
  out = Tensor3(cout, h, wd);
  const long pad = static_cast<long>(k / 2);
  for (std::size_t oc = 0; oc < cout; ++oc) {
    double* o = out.channel(oc);
    for (std::size_t ic = 0; ic < cin; ++ic) {
      const double* src = in.channel(ic);
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wv = w[((oc * cin + ic) * k + ky) * k + kx];
          if (wv == 0.0) continue;
          const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
          const long y0 = std::max(0L, -dy), y1 = std::min<long>(static_cast<long>(h), static_cast<long>(h) - dy);
          const long x0 = std::max(0L, -dx), x1 = std::min<long>(static_cast<long>(wd), static_cast<long>(wd) - dx);
          for (long y = y0; y < y1; ++y) {
            double* orow = o + y * static_cast<long>(wd);
            const double* srow = src + (y + dy) * static_cast<long>(wd) + dx;
            for (long x = x0; x < x1; ++x) orow[x] += wv * srow[x];
          }
        }
    }
  }
}

/// Accumulates input gradient into gin (sized like in) and, if gw != nullptr,
/// kernel gradient into gw.
inline void conv_backward(const Tensor3& in, const Tensor3& gout, const double* w, std::size_t k,
                          Tensor3& gin, double* gw) {
  const std::size_t h = in.height, wd = in.width, cin = in.channels, cout = gout.channels;
  gin = Tensor3(cin, h, wd);
  const long pad = static_cast<long>(k / 2);
  for (std::size_t oc = 0; oc < cout; ++oc) {
    const double* g = gout.channel(oc);
    for (std::size_t ic = 0; ic < cin; ++ic) {
      const double* src = in.channel(ic);
      double* gi = gin.channel(ic);
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t widx = ((oc * cin + ic) * k + ky) * k + kx;
          const double wv = w[widx];
          const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
          const long y0 = std::max(0L, -dy), y1 = std::min<long>(static_cast<long>(h), static_cast<long>(h) - dy);
          const long x0 = std::max(0L, -dx), x1 = std::min<long>(static_cast<long>(wd), static_cast<long>(wd) - dx);
          double acc = 0.0;
          for (long y = y0; y < y1; ++y) {
            const double* grow = g + y * static_cast<long>(wd);
            const double* srow = src + (y + dy) * static_cast<long>(wd) + dx;
            double* girow = gi + (y + dy) * static_cast<long>(wd) + dx;
            if (gw)
              for (long x = x0; x < x1; ++x) acc += grow[x] * srow[x];
            if (wv != 0.0)
              for (long x = x0; x < x1; ++x) girow[x] += wv * grow[x];
          }
          if (gw) gw[widx] += acc;
        }
    }
  }
}

inline void max_pool_forward(const Tensor3& in, Tensor3& out) {
  if (in.height % 2 || in.width % 2) throw ShapeError("max_pool2: odd spatial size");
  const std::size_t h = in.height / 2, w = in.width / 2;
  out = Tensor3(in.channels, h, w);
  for (std::size_t c = 0; c < in.channels; ++c) {
    const double* s = in.channel(c);
    double* o = out.channel(c);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double* p = s + 2 * y * in.width + 2 * x;
        double m = p[0];
        if (p[1] > m) m = p[1];
        if (p[in.width] > m) m = p[in.width];
        if (p[in.width + 1] > m) m = p[in.width + 1];
        o[y * w + x] = m;
      }
  }
}

inline void max_pool_backward(const Tensor3& in, const Tensor3& gout, Tensor3& gin) {
  gin = Tensor3(in.channels, in.height, in.width);
  const std::size_t h = gout.height, w = gout.width;
  for (std::size_t c = 0; c < in.channels; ++c) {
    const double* s = in.channel(c);
    const double* g = gout.channel(c);
    double* gi = gin.channel(c);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t base = 2 * y * in.width + 2 * x;
        const std::size_t cand[4] = {base, base + 1, base + in.width, base + in.width + 1};
        std::size_t best = cand[0];
        for (int i = 1; i < 4; ++i)
          if (s[cand[i]] > s[best]) best = cand[i];
        gi[best] += g[y * w + x];
      }
  }
}

inline void upsample_forward(const Tensor3& in, Tensor3& out) {
  out = Tensor3(in.channels, in.height * 2, in.width * 2);
  for (std::size_t c = 0; c < in.channels; ++c) {
    const double* s = in.channel(c);
    double* o = out.channel(c);
    for (std::size_t y = 0; y < out.height; ++y)
      for (std::size_t x = 0; x < out.width; ++x) o[y * out.width + x] = s[(y / 2) * in.width + x / 2];
  }
}

inline void upsample_backward(const Tensor3& gout, Tensor3& gin) {
  gin = Tensor3(gout.channels, gout.height / 2, gout.width / 2);
  for (std::size_t c = 0; c < gout.channels; ++c) {
    const double* g = gout.channel(c);
    double* gi = gin.channel(c);
    for (std::size_t y = 0; y < gout.height; ++y)
      for (std::size_t x = 0; x < gout.width; ++x) gi[(y / 2) * gin.width + x / 2] += g[y * gout.width + x];
  }
}

inline Tensor3 concat(const Tensor3& a, const Tensor3& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("skip concat: spatial mismatch");
  Tensor3 out(a.channels + b.channels, a.height, a.width);
  std::copy(a.values.begin(), a.values.end(), out.values.begin());
  std::copy(b.values.begin(), b.values.end(), out.values.begin() + static_cast<long>(a.values.size()));
  return out;
}

}  // namespace net_detail


class Network {
 public:
  static constexpr std::size_t kNoSkip = static_cast<std::size_t>(-1);

  Network() = default;

  /// Validates the layer stack against the input size and lays out a zeroed
  /// parameter vector.
  Network(std::size_t input_height, std::size_t input_width, std::vector<Layer> encoder,
          std::vector<Layer> decoder, bool skip_connections)
      : in_h_(input_height), in_w_(input_width), encoder_(std::move(encoder)),
        decoder_(std::move(decoder)), skip_(skip_connections) {
    std::size_t offset = 0;
    for (auto* list : {&encoder_, &decoder_})
      for (auto& l : *list) {
        l.param_offset = offset;
        offset += l.param_count();
      }
    params_.assign(offset, 0.0);
    infer_shapes();
  }

  /// U-net-shaped default: `levels` blocks of conv3x3+bias+leaky+maxpool with
  /// base*2^l channels, a conv3x3+bias+leaky bottleneck, a mirrored decoder
  /// of upsample+conv3x3+bias+leaky blocks, and a final conv3x3+bias to one
  /// channel.
  static Network unet(std::size_t n, std::size_t base = 8, std::size_t levels = 2, bool skip = true,
                      double leak = 0.1) {
    std::vector<Layer> enc, dec;
    std::vector<std::size_t> ch;
    std::size_t prev = 1;
    for (std::size_t l = 0; l < levels; ++l) {
      const std::size_t c = base << l;
      enc.insert(enc.end(), {Layer::conv(prev, c), Layer::bias(c), Layer::leaky_relu(leak),
                             Layer::max_pool2()});
      ch.push_back(c);
      prev = c;
    }
    enc.insert(enc.end(), {Layer::conv(prev, prev), Layer::bias(prev), Layer::leaky_relu(leak)});
    for (std::size_t l = levels; l-- > 0;) {
      const std::size_t in = prev + (skip ? ch[l] : 0);
      const std::size_t out = l > 0 ? ch[l - 1] : ch[0];
      dec.insert(dec.end(), {Layer::upsample2(), Layer::conv(in, out), Layer::bias(out),
                             Layer::leaky_relu(leak)});
      prev = out;
    }
    dec.insert(dec.end(), {Layer::conv(prev, 1), Layer::bias(1)});
    return Network(n, n, std::move(enc), std::move(dec), skip);
  }

  /// Conv kernels uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.
  void initialize(std::uint64_t seed) {
    SeededRng rng(seed);
    std::fill(params_.begin(), params_.end(), 0.0);
    for (auto* list : {&encoder_, &decoder_})
      for (const auto& l : *list) {
        if (l.kind != LayerKind::conv) continue;
        const double k2 = static_cast<double>(l.kernel * l.kernel);
        const double bound =
            std::sqrt(6.0 / (k2 * static_cast<double>(l.in_channels + l.out_channels)));
        for (std::size_t i = 0; i < l.param_count(); ++i)
          params_[l.param_offset + i] = rng.uniform(-bound, bound);
      }
  }

  std::size_t input_height() const noexcept { return in_h_; }
  std::size_t input_width() const noexcept { return in_w_; }
  bool skip_connections() const noexcept { return skip_; }
  const std::vector<Layer>& encoder() const noexcept { return encoder_; }
  const std::vector<Layer>& decoder() const noexcept { return decoder_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }
  /// (channels, height, width) of the encoder output.
  std::array<std::size_t, 3> bottleneck_shape() const noexcept { return bottleneck_shape_; }

  /// Which linear piece the network is on: the sign of every leaky_relu input
  /// and the argmax of every max_pool2 window. Two points with the same
  /// pattern lie in one region where the network is smooth.
  std::vector<std::uint8_t> activation_pattern(const ForwardCache& cache) const {
    std::vector<std::uint8_t> out;
    auto scan = [&](const std::vector<Layer>& layers, const std::vector<Tensor3>& acts) {
      for (std::size_t i = 0; i < layers.size() && i < acts.size(); ++i) {
        const Tensor3& in = acts[i];
        if (layers[i].kind == LayerKind::leaky_relu) {
          for (double v : in.values) out.push_back(v > 0.0 ? 1 : 0);
        } else if (layers[i].kind == LayerKind::max_pool2) {
          for (std::size_t c = 0; c < in.channels; ++c)
            for (std::size_t y = 0; y + 1 < in.height; y += 2)
              for (std::size_t x = 0; x + 1 < in.width; x += 2) {
                const double* p = in.channel(c);
                std::uint8_t best = 0;
                double bv = p[y * in.width + x];
                for (std::uint8_t k = 1; k < 4; ++k) {
                  const double v = p[(y + k / 2) * in.width + x + k % 2];
                  if (v > bv) {
                    bv = v;
                    best = k;
                  }
                }
                out.push_back(best);
              }
        }
      }
    };
    scan(encoder_, cache.encoder_acts);
    if (cache.has_decoder_pass) scan(decoder_, cache.decoder_acts);
    return out;
  }

  ForwardCache forward(const Image& x) const { return run(x, true); }
  /// Encoder only.
  ForwardCache encode(const Image& x) const { return run(x, false); }

  /// Reverse mode. grad_output is dL/d(output) and needs a cache from
  /// forward(); grad_bottleneck is dL/d(bottleneck). Either may be null.
  Gradients backward(const ForwardCache& cache, const Image* grad_output,
                     const Tensor3* grad_bottleneck, bool want_param_grads = true) const {
    Gradients out;
    if (want_param_grads) out.params.assign(params_.size(), 0.0);
    double* gp = want_param_grads ? out.params.data() : nullptr;

    const Tensor3& b = cache.bottleneck();
    Tensor3 g(b.channels, b.height, b.width);
    std::vector<Tensor3> skip_grads(cache.encoder_acts.size());

    if (grad_output) {
      if (grad_output->rows() != in_h_ || grad_output->cols() != in_w_)
        throw ShapeError("backward: output gradient shape mismatch");
      if (!decoder_.empty() && !cache.has_decoder_pass)
        throw InvalidArgument("backward: output gradient needs a full forward pass");
      Tensor3 gd = Tensor3::from_image(*grad_output);
      for (std::size_t i = decoder_.size(); i-- > 0;) {
        const Layer& l = decoder_[i];
        Tensor3 gin;
        if (l.kind == LayerKind::upsample2 && cache.skip_source[i] != kNoSkip) {
          const Tensor3& src = cache.encoder_acts[cache.skip_source[i]];
          const std::size_t main_ch = gd.channels - src.channels;
          Tensor3 g_main(main_ch, gd.height, gd.width);
          std::copy_n(gd.values.begin(), g_main.values.size(), g_main.values.begin());
          Tensor3& gs = skip_grads[cache.skip_source[i]];
          if (gs.values.empty()) gs = Tensor3(src.channels, src.height, src.width);
          for (std::size_t k = 0; k < gs.values.size(); ++k)
            gs.values[k] += gd.values[g_main.values.size() + k];
          net_detail::upsample_backward(g_main, gin);
        } else {
          backward_layer(l, cache.decoder_acts[i], cache.decoder_acts[i + 1], gd, gin, gp);
        }
        gd = std::move(gin);
      }
      if (!gd.same_shape(g)) throw ShapeError("backward: decoder/bottleneck shape mismatch");
      g = std::move(gd);
    }
    if (grad_bottleneck) {
      if (!grad_bottleneck->same_shape(g)) throw ShapeError("backward: bottleneck gradient shape mismatch");
      for (std::size_t k = 0; k < g.values.size(); ++k) g.values[k] += grad_bottleneck->values[k];
    }

    for (std::size_t i = encoder_.size(); i-- > 0;) {
      if (!skip_grads[i + 1].values.empty())
        for (std::size_t k = 0; k < g.values.size(); ++k) g.values[k] += skip_grads[i + 1].values[k];
      Tensor3 gin;
      backward_layer(encoder_[i], cache.encoder_acts[i], cache.encoder_acts[i + 1], g, gin, gp);
      g = std::move(gin);
    }
    if (!skip_grads[0].values.empty())
      for (std::size_t k = 0; k < g.values.size(); ++k) g.values[k] += skip_grads[0].values[k];
    out.input = g.to_image();
    return out;
  }

  /*
   * Parameter file, little-endian:
   *   "NETW" | u32 version = 1 | u32 height | u32 width | u32 skip |
   *   u32 n_encoder | u32 n_decoder |
   *   per layer: u32 kind | u32 in_ch | u32 out_ch | u32 kernel | f64 leak |
   *   u64 parameter count | parameter count f64 values in declaration order.
   */
  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path.string());
    os.write("NETW", 4);
    using io_detail::write_u32;
    write_u32(os, kFormatVersion);
    write_u32(os, static_cast<std::uint32_t>(in_h_));
    write_u32(os, static_cast<std::uint32_t>(in_w_));
    write_u32(os, skip_ ? 1 : 0);
    write_u32(os, static_cast<std::uint32_t>(encoder_.size()));
    write_u32(os, static_cast<std::uint32_t>(decoder_.size()));
    for (const auto* list : {&encoder_, &decoder_})
      for (const auto& l : *list) {
        write_u32(os, static_cast<std::uint32_t>(l.kind));
        write_u32(os, static_cast<std::uint32_t>(l.in_channels));
        write_u32(os, static_cast<std::uint32_t>(l.out_channels));
        write_u32(os, static_cast<std::uint32_t>(l.kernel));
        os.write(reinterpret_cast<const char*>(&l.leak), sizeof l.leak);
      }
    const std::uint64_t count = params_.size();
    os.write(reinterpret_cast<const char*>(&count), sizeof count);
    io_detail::write_f64s(os, params_);
    if (!os) throw FormatError("write failed: " + path.string());
  }

  static Network load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path.string());
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "NETW") throw FormatError("bad magic, expected NETW");
    using io_detail::read_u32;
    if (const auto v = read_u32(is); v != kFormatVersion)
      throw FormatError("unsupported network file version " + std::to_string(v));
    const auto h = read_u32(is), w = read_u32(is), skip = read_u32(is);
    const auto n_enc = read_u32(is), n_dec = read_u32(is);
    if (n_enc + n_dec > 4096) throw FormatError("implausible layer count");
    std::vector<Layer> enc, dec;
    for (std::uint32_t i = 0; i < n_enc + n_dec; ++i) {
      Layer l;
      const auto kind = read_u32(is);
      if (kind > static_cast<std::uint32_t>(LayerKind::upsample2))
        throw FormatError("unknown layer kind " + std::to_string(kind));
      l.kind = static_cast<LayerKind>(kind);
      l.in_channels = read_u32(is);
      l.out_channels = read_u32(is);
      l.kernel = read_u32(is);
      is.read(reinterpret_cast<char*>(&l.leak), sizeof l.leak);
      if (!is) throw FormatError("truncated layer table");
      (i < n_enc ? enc : dec).push_back(l);
    }
    std::uint64_t count = 0;
    is.read(reinterpret_cast<char*>(&count), sizeof count);
    if (!is) throw FormatError("truncated parameter header");
    Network net(h, w, std::move(enc), std::move(dec), skip != 0);
    if (count != net.params_.size())
      throw FormatError("parameter count " + std::to_string(count) + " does not match layers (" +
                        std::to_string(net.params_.size()) + ")");
    net.params_ = io_detail::read_f64s(is, count);
    for (double v : net.params_)
      if (!std::isfinite(v)) throw FormatError("non-finite network parameter");
    return net;
  }

 private:
  static constexpr std::uint32_t kFormatVersion = 1;

  void infer_shapes() {
    if (in_h_ == 0 || in_w_ == 0) throw ShapeError("Network: empty input shape");
    std::array<std::size_t, 3> s{1, in_h_, in_w_};
    std::vector<std::array<std::size_t, 3>> stack;
    auto step = [&](const Layer& l, bool in_decoder) {
      switch (l.kind) {
        case LayerKind::conv:
          if (l.kernel % 2 == 0 || l.kernel == 0) throw ShapeError("conv: kernel must be odd");
          if (l.in_channels != s[0])
            throw ShapeError("conv: expects " + std::to_string(l.in_channels) + " channels, gets " +
                             std::to_string(s[0]));
          s[0] = l.out_channels;
          break;
        case LayerKind::bias_add:
          if (l.out_channels != s[0]) throw ShapeError("bias_add: channel mismatch");
          break;
        case LayerKind::leaky_relu:
          if (!(l.leak > 0.0 && l.leak < 1.0)) throw ShapeError("leaky_relu: slope must be in (0,1)");
          break;
        case LayerKind::max_pool2:
          if (in_decoder) throw ShapeError("max_pool2 is only allowed in the encoder");
          if (s[1] % 2 || s[2] % 2) throw ShapeError("max_pool2: odd spatial size");
          stack.push_back(s);
          s[1] /= 2;
          s[2] /= 2;
          break;
        case LayerKind::upsample2:
          if (!in_decoder) throw ShapeError("upsample2 is only allowed in the decoder");
          s[1] *= 2;
          s[2] *= 2;
          if (skip_) {
            if (stack.empty()) throw ShapeError("upsample2: no encoder activation to concatenate");
            const auto src = stack.back();
            stack.pop_back();
            if (src[1] != s[1] || src[2] != s[2]) throw ShapeError("skip: spatial mismatch");
            s[0] += src[0];
          }
          break;
      }
    };
    for (const auto& l : encoder_) step(l, false);
    bottleneck_shape_ = s;
    for (const auto& l : decoder_) step(l, true);
    if (s[0] != 1 || s[1] != in_h_ || s[2] != in_w_)
      throw ShapeError("Network: output must be one channel of the input size");
  }

  ForwardCache run(const Image& x, bool with_decoder) const {
    if (x.rows() != in_h_ || x.cols() != in_w_)
      throw ShapeError("network input must be " + std::to_string(in_h_) + "x" + std::to_string(in_w_));
    ForwardCache c;
    c.encoder_acts.reserve(encoder_.size() + 1);
    c.encoder_acts.push_back(Tensor3::from_image(x));
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      if (encoder_[i].kind == LayerKind::max_pool2) stack.push_back(i);
      Tensor3 out;
      forward_layer(encoder_[i], c.encoder_acts[i], out);
      c.encoder_acts.push_back(std::move(out));
    }
    if (!with_decoder) return c;
    c.has_decoder_pass = true;
    c.decoder_acts.reserve(decoder_.size() + 1);
    c.decoder_acts.push_back(c.encoder_acts.back());
    c.skip_source.assign(decoder_.size(), kNoSkip);
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      Tensor3 out;
      forward_layer(decoder_[i], c.decoder_acts[i], out);
      if (decoder_[i].kind == LayerKind::upsample2 && skip_) {
        c.skip_source[i] = stack.back();
        out = net_detail::concat(out, c.encoder_acts[stack.back()]);
        stack.pop_back();
      }
      c.decoder_acts.push_back(std::move(out));
    }
    return c;
  }

  void forward_layer(const Layer& l, const Tensor3& in, Tensor3& out) const {
    switch (l.kind) {
      case LayerKind::conv:
        net_detail::conv_forward(in, out, params_.data() + l.param_offset, l.out_channels, l.kernel);
        break;
      case LayerKind::bias_add: {
        out = in;
        const double* b = params_.data() + l.param_offset;
        for (std::size_t ch = 0; ch < out.channels; ++ch) {
          double* o = out.channel(ch);
          for (std::size_t k = 0; k < out.plane(); ++k) o[k] += b[ch];
        }
        break;
      }
      case LayerKind::leaky_relu:
        out = in;
        for (double& v : out.values)
          if (!(v > 0.0)) v *= l.leak;
        break;
      case LayerKind::max_pool2:
        net_detail::max_pool_forward(in, out);
        break;
      case LayerKind::upsample2:
        net_detail::upsample_forward(in, out);
        break;
    }
  }

  void backward_layer(const Layer& l, const Tensor3& in, const Tensor3& /*out*/, const Tensor3& gout,
                      Tensor3& gin, double* gp) const {
    switch (l.kind) {
      case LayerKind::conv:
        net_detail::conv_backward(in, gout, params_.data() + l.param_offset, l.kernel, gin,
                                  gp ? gp + l.param_offset : nullptr);
        break;
      case LayerKind::bias_add:
        gin = gout;
        if (gp)
          for (std::size_t ch = 0; ch < gout.channels; ++ch) {
            const double* g = gout.channel(ch);
            double s = 0.0;
            for (std::size_t k = 0; k < gout.plane(); ++k) s += g[k];
            gp[l.param_offset + ch] += s;
          }
        break;
      case LayerKind::leaky_relu:
        gin = gout;
        for (std::size_t k = 0; k < gin.values.size(); ++k)
          if (!(in.values[k] > 0.0)) gin.values[k] *= l.leak;
        break;
      case LayerKind::max_pool2:
        net_detail::max_pool_backward(in, gout, gin);
        break;
      case LayerKind::upsample2:
        net_detail::upsample_backward(gout, gin);
        break;
    }
  }

  std::size_t in_h_ = 0, in_w_ = 0;
  std::vector<Layer> encoder_, decoder_;
  bool skip_ = false;
  std::vector<double> params_;
  std::array<std::size_t, 3> bottleneck_shape_{};
};

}  // namespace nett
