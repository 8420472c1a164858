#include "boxboot/net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "boxboot/errors.hpp"
#include "boxboot/kernels_detail.hpp"
#include "boxboot/rng.hpp"

namespace boxboot {

// ---------------------------------------------------------------------------
// Convolution kernels.  Per output element the taps accumulate in ascending
// (in_ch, ky, kx) order with out-of-bounds taps skipped; weight-gradient and
// bias reductions use the detail:: stride-8 tree.  The serial references in
// reference.cpp follow the same contract, so results match bit for bit.
// ---------------------------------------------------------------------------

void conv3x3_forward(const TensorBuf& in, const TensorBuf& w,
                     const TensorBuf& b, TensorBuf& out) {
  const int in_ch = in.channels, h = in.height, wd = in.width;
  const int out_ch = w.channels;
  if (w.height != in_ch || w.width != 9 || b.channels != out_ch || wd < 2) {
    throw std::invalid_argument("conv3x3_forward: bad shapes");
  }
  if (!out.same_shape(TensorBuf(out_ch, h, wd))) out = TensorBuf(out_ch, h, wd);

#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < out_ch; ++oc) {
    for (int y = 0; y < h; ++y) {
      double* __restrict o = out.row(oc, y);
      const double bias = b.data[oc];
      for (int x = 0; x < wd; ++x) o[x] = bias;
      for (int ic = 0; ic < in_ch; ++ic) {
        const double* w9 = w.row(oc, ic);
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = y + ky - 1;
          if (iy < 0 || iy >= h) continue;
          const double* __restrict r = in.row(ic, iy);
          const double w0 = w9[ky * 3 + 0];
          const double w1 = w9[ky * 3 + 1];
          const double w2 = w9[ky * 3 + 2];
          o[0] += w1 * r[0];
          o[0] += w2 * r[1];
          for (int x = 1; x < wd - 1; ++x) {
            o[x] += w0 * r[x - 1];
            o[x] += w1 * r[x];
            o[x] += w2 * r[x + 1];
          }
          o[wd - 1] += w0 * r[wd - 2];
          o[wd - 1] += w1 * r[wd - 1];
        }
      }
    }
  }
}

void conv3x3_backward_input(const TensorBuf& d_out, const TensorBuf& w,
                            int in_channels, TensorBuf& d_in) {
  const int out_ch = d_out.channels, h = d_out.height, wd = d_out.width;
  if (w.channels != out_ch || w.height != in_channels || w.width != 9 ||
      wd < 2) {
    throw std::invalid_argument("conv3x3_backward_input: bad shapes");
  }
  if (!d_in.same_shape(TensorBuf(in_channels, h, wd))) {
    d_in = TensorBuf(in_channels, h, wd);
  }

#pragma omp parallel for collapse(2) schedule(static)
  for (int ic = 0; ic < in_channels; ++ic) {
    for (int iy = 0; iy < h; ++iy) {
      double* __restrict o = d_in.row(ic, iy);
      for (int x = 0; x < wd; ++x) o[x] = 0.0;
      for (int oc = 0; oc < out_ch; ++oc) {
        const double* w9 = w.row(oc, ic);
        for (int ky = 0; ky < 3; ++ky) {
          const int oy = iy + 1 - ky;
          if (oy < 0 || oy >= h) continue;
          const double* __restrict r = d_out.row(oc, oy);
          const double w0 = w9[ky * 3 + 0];
          const double w1 = w9[ky * 3 + 1];
          const double w2 = w9[ky * 3 + 2];
          // tap kx pairs with d_out column ix + 1 - kx
          o[0] += w0 * r[1];
          o[0] += w1 * r[0];
          for (int ix = 1; ix < wd - 1; ++ix) {
            o[ix] += w0 * r[ix + 1];
            o[ix] += w1 * r[ix];
            o[ix] += w2 * r[ix - 1];
          }
          o[wd - 1] += w1 * r[wd - 1];
          o[wd - 1] += w2 * r[wd - 2];
        }
      }
    }
  }
}

void conv3x3_backward_params(const TensorBuf& d_out, const TensorBuf& in,
                             TensorBuf& d_w, TensorBuf& d_b) {
  const int out_ch = d_out.channels, h = d_out.height, wd = d_out.width;
  const int in_ch = in.channels;
  if (in.height != h || in.width != wd || wd < 2) {
    throw std::invalid_argument("conv3x3_backward_params: bad shapes");
  }
  if (!d_w.same_shape(TensorBuf(out_ch, in_ch, 9))) {
    d_w = TensorBuf(out_ch, in_ch, 9);
  }
  if (!d_b.same_shape(TensorBuf(out_ch, 1, 1))) d_b = TensorBuf(out_ch, 1, 1);

#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < out_ch; ++oc) {
    for (int ic = 0; ic < in_ch; ++ic) {
      double acc[9] = {};
      for (int y = 0; y < h; ++y) {
        const double* g = d_out.row(oc, y);
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = y + ky - 1;
          if (iy < 0 || iy >= h) continue;
          const double* r = in.row(ic, iy);
          // kx = 0: x in [1, wd); kx = 1: all x; kx = 2: x in [0, wd-1)
          acc[ky * 3 + 0] += detail::dot_shift8(g + 1, r, wd - 1);
          acc[ky * 3 + 1] += detail::dot_shift8(g, r, wd);
          acc[ky * 3 + 2] += detail::dot_shift8(g, r + 1, wd - 1);
        }
      }
      double* out9 = d_w.row(oc, ic);
      for (int k = 0; k < 9; ++k) out9[k] = acc[k];
    }
  }

#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < out_ch; ++oc) {
    double acc = 0.0;
    for (int y = 0; y < h; ++y) {
      acc += detail::sum_shift8(d_out.row(oc, y), wd);
    }
    d_b.data[oc] = acc;
  }
}

namespace {

void relu(const TensorBuf& pre, TensorBuf& act) {
  act = pre;
  for (double& v : act.data) v = v > 0.0 ? v : 0.0;
}

// d_pre = d_act (.) [pre > 0]; the subgradient at exactly 0 is 0.
void relu_backward(const TensorBuf& pre, TensorBuf& d_act) {
  for (std::size_t i = 0; i < pre.data.size(); ++i) {
    if (!(pre.data[i] > 0.0)) d_act.data[i] = 0.0;
  }
}

}  // namespace

NetworkParams NetworkParams::init(int in_channels, int classes,
                                  std::uint64_t seed) {
  if (in_channels < 1 || classes < 1) {
    throw std::invalid_argument("NetworkParams: bad channel counts");
  }
  NetworkParams p;
  p.in_channels = in_channels;
  p.classes = classes;
  const int head = 2 * classes;
  p.w1 = TensorBuf(kHiddenChannels, in_channels, 9);
  p.b1 = TensorBuf(kHiddenChannels, 1, 1);
  p.w2 = TensorBuf(kHiddenChannels, kHiddenChannels, 9);
  p.b2 = TensorBuf(kHiddenChannels, 1, 1);
  p.w3 = TensorBuf(head, kHiddenChannels, 9);
  p.b3 = TensorBuf(head, 1, 1);

  RngStream rng(seed);
  auto fill_xavier = [&rng](TensorBuf& w) {
    const double fan_in = w.height * 9.0;
    const double fan_out = w.channels * 9.0;
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : w.data) v = (2.0 * rng.next_uniform() - 1.0) * a;
  };
  fill_xavier(p.w1);
  fill_xavier(p.w2);
  fill_xavier(p.w3);
  // Start the log-variance head confident (sigma^2 ~ 0.135) so the
  // uncertainty loss drives early learning.
  for (int c = classes; c < head; ++c) p.b3.data[c] = -2.0;
  return p;
}

std::vector<std::pair<std::string, TensorBuf*>> NetworkParams::tensors() {
  return {{"conv1.weight", &w1}, {"conv1.bias", &b1},
          {"conv2.weight", &w2}, {"conv2.bias", &b2},
          {"conv3.weight", &w3}, {"conv3.bias", &b3}};
}

std::vector<std::pair<std::string, const TensorBuf*>> NetworkParams::tensors()
    const {
  return {{"conv1.weight", &w1}, {"conv1.bias", &b1},
          {"conv2.weight", &w2}, {"conv2.bias", &b2},
          {"conv3.weight", &w3}, {"conv3.bias", &b3}};
}

ParamGrads ParamGrads::zeros_like(const NetworkParams& p) {
  ParamGrads g;
  g.w1 = TensorBuf(p.w1.channels, p.w1.height, p.w1.width);
  g.b1 = TensorBuf(p.b1.channels, 1, 1);
  g.w2 = TensorBuf(p.w2.channels, p.w2.height, p.w2.width);
  g.b2 = TensorBuf(p.b2.channels, 1, 1);
  g.w3 = TensorBuf(p.w3.channels, p.w3.height, p.w3.width);
  g.b3 = TensorBuf(p.b3.channels, 1, 1);
  return g;
}

std::vector<TensorBuf*> ParamGrads::tensors() {
  return {&w1, &b1, &w2, &b2, &w3, &b3};
}
std::vector<const TensorBuf*> ParamGrads::tensors() const {
  return {&w1, &b1, &w2, &b2, &w3, &b3};
}

void ParamGrads::accumulate(const ParamGrads& other) {
  auto mine = tensors();
  auto theirs = other.tensors();
  for (std::size_t t = 0; t < mine.size(); ++t) {
    for (std::size_t i = 0; i < mine[t]->data.size(); ++i) {
      mine[t]->data[i] += theirs[t]->data[i];
    }
  }
}

void ParamGrads::scale(double factor) {
  for (TensorBuf* t : tensors()) {
    for (double& v : t->data) v *= factor;
  }
}

GaussianLogitMap forward(const NetworkParams& p, const TensorBuf& image,
                         ForwardCache* cache) {
  if (image.channels != p.in_channels) {
    throw std::invalid_argument("forward: image channel mismatch");
  }
  if (image.height < 3 || image.width < 3) {
    throw std::invalid_argument("forward: image too small");
  }
  ForwardCache local;
  ForwardCache& c = cache != nullptr ? *cache : local;
  c.input = image;
  conv3x3_forward(c.input, p.w1, p.b1, c.pre1);
  relu(c.pre1, c.act1);
  conv3x3_forward(c.act1, p.w2, p.b2, c.pre2);
  relu(c.pre2, c.act2);
  TensorBuf head;
  conv3x3_forward(c.act2, p.w3, p.b3, head);

  const int cls = p.classes;
  const int h = image.height, wd = image.width;
  GaussianLogitMap out;
  out.mu = TensorBuf(cls, h, wd);
  out.log_var = TensorBuf(cls, h, wd);
  const std::size_t plane = static_cast<std::size_t>(h) * wd;
  std::memcpy(out.mu.data.data(), head.data.data(),
              cls * plane * sizeof(double));
  std::memcpy(out.log_var.data.data(), head.data.data() + cls * plane,
              cls * plane * sizeof(double));
  return out;
}

ParamGrads backward(const NetworkParams& p, const ForwardCache& cache,
                    const TensorBuf& d_mu, const TensorBuf& d_log_var) {
  const int cls = p.classes;
  const int h = cache.input.height, wd = cache.input.width;
  require_same_shape(d_mu, d_log_var, "backward");
  if (d_mu.channels != cls || d_mu.height != h || d_mu.width != wd ||
      cache.act2.channels != kHiddenChannels) {
    throw std::invalid_argument("backward: cache/shape mismatch");
  }

  TensorBuf d_head(2 * cls, h, wd);
  const std::size_t plane = static_cast<std::size_t>(h) * wd;
  std::memcpy(d_head.data.data(), d_mu.data.data(),
              cls * plane * sizeof(double));
  std::memcpy(d_head.data.data() + cls * plane, d_log_var.data.data(),
              cls * plane * sizeof(double));

  ParamGrads g = ParamGrads::zeros_like(p);
  TensorBuf d_act2;
  conv3x3_backward_params(d_head, cache.act2, g.w3, g.b3);
  conv3x3_backward_input(d_head, p.w3, kHiddenChannels, d_act2);
  relu_backward(cache.pre2, d_act2);

  TensorBuf d_act1;
  conv3x3_backward_params(d_act2, cache.act1, g.w2, g.b2);
  conv3x3_backward_input(d_act2, p.w2, kHiddenChannels, d_act1);
  relu_backward(cache.pre1, d_act1);

  conv3x3_backward_params(d_act1, cache.input, g.w1, g.b1);
  return g;
}

AdamState AdamState::init(const NetworkParams& p, double lr) {
  AdamState st;
  st.lr = lr;
  for (const auto& [name, tensor] : p.tensors()) {
    (void)name;
    st.m.emplace_back(tensor->channels, tensor->height, tensor->width);
    st.v.emplace_back(tensor->channels, tensor->height, tensor->width);
  }
  return st;
}

void adam_step(NetworkParams& p, const ParamGrads& g, AdamState& st) {
  auto params = p.tensors();
  auto grads = g.tensors();
  if (st.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state/parameter mismatch");
  }
  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    TensorBuf& theta = *params[ti].second;
    const TensorBuf& grad = *grads[ti];
    TensorBuf& m = st.m[ti];
    TensorBuf& v = st.v[ti];
    require_same_shape(theta, grad, "adam_step");
    for (std::size_t i = 0; i < theta.data.size(); ++i) {
      const double gi = grad.data[i];
      if (!std::isfinite(gi)) {
        throw std::runtime_error("adam_step: non-finite gradient in " +
                                 params[ti].first);
      }
      m.data[i] = st.beta1 * m.data[i] + (1.0 - st.beta1) * gi;
      v.data[i] = st.beta2 * v.data[i] + (1.0 - st.beta2) * gi * gi;
      const double m_hat = m.data[i] / bc1;
      const double v_hat = v.data[i] / bc2;
      theta.data[i] -= st.lr * m_hat / (std::sqrt(v_hat) + st.eps);
    }
  }
}

double finite_diff_check(const std::function<double(const NetworkParams&)>& f,
                         const NetworkParams& params,
                         const ParamGrads& analytic, int n_probes, double h,
                         std::uint64_t seed) {
  if (n_probes < 1) {
    throw std::invalid_argument("finite_diff_check: n_probes must be >= 1");
  }
  if (!(h > 0.0)) {
    throw std::invalid_argument("finite_diff_check: h must be > 0");
  }
  NetworkParams probe = params;
  auto tensors = probe.tensors();
  auto grads = analytic.tensors();
  std::size_t total = 0;
  for (const auto& [name, t] : tensors) {
    (void)name;
    total += t->data.size();
  }

  RngStream rng(seed);
  double max_rel_err = 0.0;
  for (int k = 0; k < n_probes; ++k) {
    std::size_t flat = static_cast<std::size_t>(
        rng.next_uniform() * static_cast<double>(total));
    if (flat >= total) flat = total - 1;
    std::size_t ti = 0, offset = flat;
    while (offset >= tensors[ti].second->data.size()) {
      offset -= tensors[ti].second->data.size();
      ++ti;
    }
    double& coord = tensors[ti].second->data[offset];
    const double saved = coord;
    coord = saved + h;
    const double f_plus = f(probe);
    coord = saved - h;
    const double f_minus = f(probe);
    coord = saved;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
      throw std::runtime_error("finite_diff_check: non-finite loss value");
    }
    const double numeric = (f_plus - f_minus) / (2.0 * h);
    const double exact = grads[ti]->data[offset];
    const double denom =
        std::max(std::max(std::fabs(exact), std::fabs(numeric)), 1e-8);
    max_rel_err = std::max(max_rel_err, std::fabs(exact - numeric) / denom);
  }
  return max_rel_err;
}

namespace {

constexpr char kMagic[8] = {'B', 'O', 'X', 'B', 'O', 'O', 'T', '1'};

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError("checkpoint truncated: " + path);
  }
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const NetworkParams& p) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  for (const auto& [name, tensor] : p.tensors()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(tensor->channels));
    put_u32(out, static_cast<std::uint32_t>(tensor->height));
    put_u32(out, static_cast<std::uint32_t>(tensor->width));
    // doubles are stored little-endian; this targets little-endian hosts
    out.write(reinterpret_cast<const char*>(tensor->data.data()),
              static_cast<std::streamsize>(tensor->data.size() *
                                           sizeof(double)));
  }
  if (!out) throw IoError("short write on checkpoint: " + path);
}

NetworkParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("bad checkpoint magic: " + path);
  }

  NetworkParams p;
  int seen = 0;
  while (true) {
    in.peek();
    if (in.eof()) break;
    const std::uint32_t name_len = get_u32(in, path);
    if (name_len > 256) throw IoError("corrupt checkpoint record: " + path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) {
      throw IoError("checkpoint truncated: " + path);
    }
    const int c = static_cast<int>(get_u32(in, path));
    const int h = static_cast<int>(get_u32(in, path));
    const int w = static_cast<int>(get_u32(in, path));
    if (c <= 0 || h <= 0 || w <= 0 || c > 4096 || h > 4096 || w > 4096) {
      throw IoError("corrupt checkpoint shape: " + path);
    }
    TensorBuf t(c, h, w);
    if (!in.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() *
                                              sizeof(double)))) {
      throw IoError("checkpoint truncated: " + path);
    }
    bool known = true;
    if (name == "conv1.weight") p.w1 = std::move(t);
    else if (name == "conv1.bias") p.b1 = std::move(t);
    else if (name == "conv2.weight") p.w2 = std::move(t);
    else if (name == "conv2.bias") p.b2 = std::move(t);
    else if (name == "conv3.weight") p.w3 = std::move(t);
    else if (name == "conv3.bias") p.b3 = std::move(t);
    else known = false;
    if (!known) throw IoError("unknown checkpoint tensor '" + name + "': " + path);
    ++seen;
  }
  if (seen != 6) throw IoError("checkpoint missing tensors: " + path);
  if (p.w1.channels != kHiddenChannels || p.w1.width != 9 ||
      p.w2.channels != kHiddenChannels || p.w2.height != kHiddenChannels ||
      p.w3.height != kHiddenChannels || p.w3.channels % 2 != 0 ||
      p.b3.channels != p.w3.channels) {
    throw IoError("inconsistent checkpoint shapes: " + path);
  }
  p.in_channels = p.w1.height;
  p.classes = p.w3.channels / 2;
  return p;
}

}  // namespace boxboot
