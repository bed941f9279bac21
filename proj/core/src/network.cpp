#include "tslab/network.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "detail/parallel.hpp"
#include "detail/rng.hpp"
#include "tslab/io.hpp"

namespace tslab {

namespace {

constexpr std::size_t kBatchChunk = 16;  // fixed so results never depend on thread count

std::size_t chunk_count(std::size_t batch) { return (batch + kBatchChunk - 1) / kBatchChunk; }

struct ChunkRange {
  std::size_t begin, end;
};

ChunkRange chunk_range(std::size_t chunk, std::size_t batch) {
  std::size_t b = chunk * kBatchChunk;
  return {b, std::min(b + kBatchChunk, batch)};
}

[[noreturn]] void shape_error(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::MaxPool2D: return "maxpool2";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Activation: return "activation";
    case LayerKind::Dropout: return "dropout";
  }
  return "?";
}

Layer Layer::dense(std::size_t in, std::size_t out) {
  Layer l;
  l.kind = LayerKind::Dense;
  l.in_features = in;
  l.out_features = out;
  l.weight = Tensor({out, in});
  l.bias = Tensor({out});
  return l;
}

Layer Layer::conv2d(std::size_t in_c, std::size_t out_c, std::size_t k) {
  Layer l;
  l.kind = LayerKind::Conv2D;
  l.in_channels = in_c;
  l.out_channels = out_c;
  l.kernel = k;
  l.weight = Tensor({out_c, in_c, k, k});
  l.bias = Tensor({out_c});
  return l;
}

Layer Layer::maxpool2() {
  Layer l;
  l.kind = LayerKind::MaxPool2D;
  return l;
}

Layer Layer::flatten() {
  Layer l;
  l.kind = LayerKind::Flatten;
  return l;
}

Layer Layer::activation(const ActivationSpec& spec) {
  Layer l;
  l.kind = LayerKind::Activation;
  l.act = spec;
  return l;
}

Layer Layer::dropout(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  Layer l;
  l.kind = LayerKind::Dropout;
  l.rate = rate;
  return l;
}

std::vector<std::vector<std::size_t>> Network::layer_output_shapes() const {
  std::vector<std::vector<std::size_t>> shapes;
  std::vector<std::size_t> cur = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    switch (l.kind) {
      case LayerKind::Dense:
        if (cur.size() != 1 || cur[0] != l.in_features) {
          shape_error("layer " + std::to_string(i) + ": dense expects [" +
                      std::to_string(l.in_features) + "], got " + Tensor(cur).shape_str());
        }
        cur = {l.out_features};
        break;
      case LayerKind::Conv2D:
        if (cur.size() != 3 || cur[0] != l.in_channels || cur[1] < l.kernel || cur[2] < l.kernel) {
          shape_error("layer " + std::to_string(i) + ": conv2d input shape mismatch");
        }
        cur = {l.out_channels, cur[1] - l.kernel + 1, cur[2] - l.kernel + 1};
        break;
      case LayerKind::MaxPool2D:
        if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2) {
          shape_error("layer " + std::to_string(i) + ": maxpool2 needs [C,H,W] with H,W >= 2");
        }
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      case LayerKind::Flatten: {
        std::size_t n = 1;
        for (std::size_t d : cur) n *= d;
        cur = {n};
        break;
      }
      case LayerKind::Activation:
      case LayerKind::Dropout:
        break;
    }
    shapes.push_back(cur);
  }
  if (cur.size() != 1 || cur[0] != classes) {
    shape_error("network output " + Tensor(cur).shape_str() + " does not match class count " +
                std::to_string(classes));
  }
  return shapes;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

Network make_network(const std::string& topology_id, const std::vector<std::size_t>& input_shape,
                     std::size_t classes, const ActivationSpec& act) {
  Network net;
  net.input_shape = input_shape;
  net.classes = classes;
  if (topology_id == "cnn5") {
    if (input_shape.size() != 3) shape_error("cnn5 expects [C,H,W] input");
    std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
    net.layers.push_back(Layer::conv2d(c, 32, 3));
    net.layers.push_back(Layer::activation(act));
    net.layers.push_back(Layer::maxpool2());
    h = (h - 2) / 2;
    w = (w - 2) / 2;
    net.layers.push_back(Layer::conv2d(32, 64, 3));
    net.layers.push_back(Layer::activation(act));
    net.layers.push_back(Layer::maxpool2());
    h = (h - 2) / 2;
    w = (w - 2) / 2;
    net.layers.push_back(Layer::flatten());
    net.layers.push_back(Layer::dense(64 * h * w, 128));
    net.layers.push_back(Layer::activation(act));
    net.layers.push_back(Layer::dropout(0.25));
    net.layers.push_back(Layer::dense(128, classes));
  } else if (topology_id == "mlp2") {
    std::size_t f = 1;
    for (std::size_t d : input_shape) f *= d;
    net.layers.push_back(Layer::flatten());
    net.layers.push_back(Layer::dense(f, 64));
    net.layers.push_back(Layer::activation(act));
    net.layers.push_back(Layer::dense(64, classes));
  } else {
    throw std::invalid_argument("unknown topology '" + topology_id + "'");
  }
  net.validate();
  return net;
}

std::vector<std::string> topology_ids() { return {"cnn5", "mlp2"}; }

void init_params(Network& net, std::uint64_t seed) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    Layer& l = net.layers[i];
    if (!l.has_params()) continue;
    std::size_t fan_in = l.kind == LayerKind::Dense ? l.in_features
                                                    : l.in_channels * l.kernel * l.kernel;
    double stddev = std::sqrt(2.0 / double(fan_in));
    detail::Rng rng(detail::stream_seed(seed, "init", i));
    for (float& w : l.weight.values()) w = float(stddev * rng.next_gauss());
    l.bias.fill(0.0f);
  }
}

// --- forward -----------------------------------------------------------------

namespace {

void conv2d_image(const Layer& l, const float* in, float* out, std::size_t h, std::size_t w,
                  std::vector<float>& col) {
  const std::size_t k = l.kernel, ic = l.in_channels, oc = l.out_channels;
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  const std::size_t kk = k * k, n = oh * ow, kdim = ic * kk;
  col.resize(kdim * n);
  for (std::size_t c = 0; c < ic; ++c) {
    const float* plane = in + c * h * w;
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        float* dst = col.data() + ((c * k + kh) * k + kw) * n;
        for (std::size_t y = 0; y < oh; ++y) {
          const float* src = plane + (y + kh) * w + kw;
          std::memcpy(dst + y * ow, src, ow * sizeof(float));
        }
      }
    }
  }
  for (std::size_t o = 0; o < oc; ++o) {
    float* dst = out + o * n;
    float b = l.bias[o];
    for (std::size_t p = 0; p < n; ++p) dst[p] = b;
    const float* wrow = l.weight.data() + o * kdim;
    std::size_t r = 0;
    for (; r + 4 <= kdim; r += 4) {
      float w0 = wrow[r], w1 = wrow[r + 1], w2 = wrow[r + 2], w3 = wrow[r + 3];
      const float* s0 = col.data() + r * n;
      const float* s1 = s0 + n;
      const float* s2 = s1 + n;
      const float* s3 = s2 + n;
      for (std::size_t p = 0; p < n; ++p) {
        dst[p] += w0 * s0[p] + w1 * s1[p] + w2 * s2[p] + w3 * s3[p];
      }
    }
    for (; r < kdim; ++r) {
      float wv = wrow[r];
      const float* src = col.data() + r * n;
      for (std::size_t p = 0; p < n; ++p) dst[p] += wv * src[p];
    }
  }
}

void maxpool_image(const float* in, float* out, std::uint32_t* argmax, std::size_t c,
                   std::size_t h, std::size_t w) {
  const std::size_t oh = h / 2, ow = w / 2;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* plane = in + ch * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t base = (2 * y) * w + 2 * x;
        std::size_t best = base;
        float bv = plane[base];
        const std::size_t candidates[3] = {base + 1, base + w, base + w + 1};
        for (std::size_t cand : candidates) {
          if (plane[cand] > bv) {
            bv = plane[cand];
            best = cand;
          }
        }
        std::size_t o = (ch * oh + y) * ow + x;
        out[ch * oh * ow + y * ow + x] = bv;
        argmax[o] = std::uint32_t(ch * h * w + best);
      }
    }
  }
}

}  // namespace

Tensor forward(const Network& net, const Tensor& batch, ForwardCache& cache, bool train_mode,
               std::uint64_t dropout_seed, int threads) {
  auto shapes = net.layer_output_shapes();
  if (batch.rank() != net.input_shape.size() + 1) shape_error("batch rank mismatch");
  for (std::size_t i = 0; i < net.input_shape.size(); ++i) {
    if (batch.dim(i + 1) != net.input_shape[i]) {
      shape_error("batch shape " + batch.shape_str() + " does not match network input");
    }
  }
  const std::size_t b = batch.dim(0);

  cache.inputs.clear();
  cache.pool_argmax.clear();
  cache.dropout_masks.clear();
  cache.train_mode = train_mode;
  cache.batch = b;

  Tensor cur = batch;
  std::size_t dropout_index = 0;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const Layer& l = net.layers[li];
    cache.inputs.push_back(cur);
    std::vector<std::size_t> out_shape;
    out_shape.push_back(b);
    for (std::size_t d : shapes[li]) out_shape.push_back(d);

    switch (l.kind) {
      case LayerKind::Dense: {
        Tensor out(out_shape);
        const std::size_t in_f = l.in_features, out_f = l.out_features;
        std::vector<float> wt(in_f * out_f);
        for (std::size_t o = 0; o < out_f; ++o) {
          for (std::size_t i = 0; i < in_f; ++i) wt[i * out_f + o] = l.weight[o * in_f + i];
        }
        detail::run_chunked(chunk_count(b), threads, [&](std::size_t c) {
          auto [begin, end] = chunk_range(c, b);
          for (std::size_t s = begin; s < end; ++s) {
            const float* x = cur.data() + s * in_f;
            float* y = out.data() + s * out_f;
            std::memcpy(y, l.bias.data(), out_f * sizeof(float));
            for (std::size_t i = 0; i < in_f; ++i) {
              float xv = x[i];
              const float* w = wt.data() + i * out_f;
              for (std::size_t o = 0; o < out_f; ++o) y[o] += xv * w[o];
            }
          }
        });
        cur = std::move(out);
        break;
      }
      case LayerKind::Conv2D: {
        Tensor out(out_shape);
        const std::size_t h = cache.inputs.back().dim(2), w = cache.inputs.back().dim(3);
        const std::size_t in_sz = l.in_channels * h * w;
        const std::size_t out_sz = shapes[li][0] * shapes[li][1] * shapes[li][2];
        detail::run_chunked(chunk_count(b), threads, [&](std::size_t c) {
          std::vector<float> col;
          auto [begin, end] = chunk_range(c, b);
          for (std::size_t s = begin; s < end; ++s) {
            conv2d_image(l, cur.data() + s * in_sz, out.data() + s * out_sz, h, w, col);
          }
        });
        cur = std::move(out);
        break;
      }
      case LayerKind::MaxPool2D: {
        Tensor out(out_shape);
        const std::size_t cdim = cur.dim(1), h = cur.dim(2), w = cur.dim(3);
        const std::size_t in_sz = cdim * h * w;
        const std::size_t out_sz = shapes[li][0] * shapes[li][1] * shapes[li][2];
        std::vector<std::uint32_t> argmax(b * out_sz);
        detail::run_chunked(chunk_count(b), threads, [&](std::size_t c) {
          auto [begin, end] = chunk_range(c, b);
          for (std::size_t s = begin; s < end; ++s) {
            maxpool_image(cur.data() + s * in_sz, out.data() + s * out_sz,
                          argmax.data() + s * out_sz, cdim, h, w);
          }
        });
        cache.pool_argmax.push_back(std::move(argmax));
        cur = std::move(out);
        break;
      }
      case LayerKind::Flatten: {
        Tensor out(out_shape, std::vector<float>(cur.values().begin(), cur.values().end()));
        cur = std::move(out);
        break;
      }
      case LayerKind::Activation: {
        Tensor out(out_shape);
        const std::size_t per = cur.size() / b;
        detail::run_chunked(chunk_count(b), threads, [&](std::size_t c) {
          auto [begin, end] = chunk_range(c, b);
          eval_map_into(l.act, cur.values().subspan(begin * per, (end - begin) * per),
                        out.values().subspan(begin * per, (end - begin) * per));
        });
        cur = std::move(out);
        break;
      }
      case LayerKind::Dropout: {
        if (!train_mode || l.rate == 0.0) {
          cache.dropout_masks.emplace_back();
          ++dropout_index;
          break;
        }
        Tensor mask(cur.shape());
        detail::Rng rng(detail::stream_seed(dropout_seed, "dropout", dropout_index));
        const float scale = float(1.0 / (1.0 - l.rate));
        for (float& m : mask.values()) m = rng.next_unit() < l.rate ? 0.0f : scale;
        Tensor out(out_shape);
        for (std::size_t i = 0; i < cur.size(); ++i) out[i] = cur[i] * mask[i];
        cache.dropout_masks.push_back(std::move(mask));
        ++dropout_index;
        cur = std::move(out);
        break;
      }
    }
  }
  return cur;
}

Tensor forward(const Network& net, const Tensor& batch, int threads) {
  ForwardCache cache;
  return forward(net, batch, cache, false, 0, threads);
}

// --- backward ----------------------------------------------------------------

namespace {

// Per-chunk gradient accumulators in double; reduced chunk-major afterwards so
// the result is independent of thread scheduling.
struct GradAccum {
  std::vector<std::vector<double>> weight;  // [chunk][param]
  std::vector<std::vector<double>> bias;
};

void conv2d_backward_image(const Layer& l, const float* in, const float* dy, float* dx,
                           double* dw, double* db, std::size_t h, std::size_t w,
                           std::vector<float>& col, std::vector<float>& dcol) {
  const std::size_t k = l.kernel, ic = l.in_channels, oc = l.out_channels;
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  const std::size_t n = oh * ow, kdim = ic * k * k;

  col.resize(kdim * n);
  for (std::size_t c = 0; c < ic; ++c) {
    const float* plane = in + c * h * w;
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        float* dst = col.data() + ((c * k + kh) * k + kw) * n;
        for (std::size_t y = 0; y < oh; ++y) {
          std::memcpy(dst + y * ow, plane + (y + kh) * w + kw, ow * sizeof(float));
        }
      }
    }
  }

  // Spatial dots run in 32-bit like the forward pass; only the accumulation
  // across images is 64-bit.
  for (std::size_t o = 0; o < oc; ++o) {
    const float* dyrow = dy + o * n;
    double acc = 0.0;
    for (std::size_t p = 0; p < n; ++p) acc += double(dyrow[p]);
    db[o] += acc;
    double* dwrow = dw + o * kdim;
    std::size_t r = 0;
    for (; r + 4 <= kdim; r += 4) {
      const float* c0 = col.data() + r * n;
      const float* c1 = c0 + n;
      const float* c2 = c1 + n;
      const float* c3 = c2 + n;
      float a0 = 0.0f, a1 = 0.0f, a2 = 0.0f, a3 = 0.0f;
      for (std::size_t p = 0; p < n; ++p) {
        float d = dyrow[p];
        a0 += d * c0[p];
        a1 += d * c1[p];
        a2 += d * c2[p];
        a3 += d * c3[p];
      }
      dwrow[r] += double(a0);
      dwrow[r + 1] += double(a1);
      dwrow[r + 2] += double(a2);
      dwrow[r + 3] += double(a3);
    }
    for (; r < kdim; ++r) {
      const float* crow = col.data() + r * n;
      float s = 0.0f;
      for (std::size_t p = 0; p < n; ++p) s += dyrow[p] * crow[p];
      dwrow[r] += double(s);
    }
  }

  dcol.assign(kdim * n, 0.0f);
  for (std::size_t r = 0; r < kdim; ++r) {
    float* drow = dcol.data() + r * n;
    std::size_t o = 0;
    for (; o + 4 <= oc; o += 4) {
      float w0 = l.weight[o * kdim + r];
      float w1 = l.weight[(o + 1) * kdim + r];
      float w2 = l.weight[(o + 2) * kdim + r];
      float w3 = l.weight[(o + 3) * kdim + r];
      const float* d0 = dy + o * n;
      const float* d1 = d0 + n;
      const float* d2 = d1 + n;
      const float* d3 = d2 + n;
      for (std::size_t p = 0; p < n; ++p) {
        drow[p] += w0 * d0[p] + w1 * d1[p] + w2 * d2[p] + w3 * d3[p];
      }
    }
    for (; o < oc; ++o) {
      float wv = l.weight[o * kdim + r];
      const float* dyrow = dy + o * n;
      for (std::size_t p = 0; p < n; ++p) drow[p] += wv * dyrow[p];
    }
  }
  for (std::size_t c = 0; c < ic; ++c) {
    float* plane = dx + c * h * w;
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        const float* src = dcol.data() + ((c * k + kh) * k + kw) * n;
        for (std::size_t y = 0; y < oh; ++y) {
          float* dst = plane + (y + kh) * w + kw;
          const float* s = src + y * ow;
          for (std::size_t x = 0; x < ow; ++x) dst[x] += s[x];
        }
      }
    }
  }
}

}  // namespace

ParamGrads backward(const Network& net, const ForwardCache& cache, const Tensor& loss_grad,
                    int threads) {
  if (cache.inputs.size() != net.layers.size()) {
    throw std::logic_error("backward: cache does not match network");
  }
  const std::size_t b = cache.batch;
  if (loss_grad.dim(0) != b) throw std::logic_error("backward: loss_grad batch mismatch");

  ParamGrads grads;
  grads.weight.resize(net.layers.size());
  grads.bias.resize(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (net.layers[i].has_params()) {
      grads.weight[i] = Tensor(net.layers[i].weight.shape());
      grads.bias[i] = Tensor(net.layers[i].bias.shape());
    }
  }

  const std::size_t chunks = chunk_count(b);
  Tensor dcur = loss_grad;
  std::size_t pool_index = cache.pool_argmax.size();
  std::size_t dropout_index = cache.dropout_masks.size();

  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const Layer& l = net.layers[li];
    const Tensor& in = cache.inputs[li];
    switch (l.kind) {
      case LayerKind::Dense: {
        const std::size_t in_f = l.in_features, out_f = l.out_features;
        Tensor dx(in.shape());
        GradAccum acc;
        acc.weight.assign(chunks, {});
        acc.bias.assign(chunks, {});
        detail::run_chunked(chunks, threads, [&](std::size_t c) {
          auto [begin, end] = chunk_range(c, b);
          auto& dw = acc.weight[c];
          auto& db = acc.bias[c];
          dw.assign(in_f * out_f, 0.0);
          db.assign(out_f, 0.0);
          for (std::size_t s = begin; s < end; ++s) {
            const float* x = in.data() + s * in_f;
            const float* dy = dcur.data() + s * out_f;
            float* dxr = dx.data() + s * in_f;
            std::memset(dxr, 0, in_f * sizeof(float));
            for (std::size_t o = 0; o < out_f; ++o) {
              float g = dy[o];
              if (g == 0.0f) continue;
              const float* w = l.weight.data() + o * in_f;
              for (std::size_t i = 0; i < in_f; ++i) dxr[i] += g * w[i];
            }
            for (std::size_t o = 0; o < out_f; ++o) {
              double g = double(dy[o]);
              db[o] += g;
              if (g == 0.0) continue;
              double* dwrow = dw.data() + o * in_f;
              for (std::size_t i = 0; i < in_f; ++i) dwrow[i] += g * double(x[i]);
            }
          }
        });
        std::vector<double> wsum(in_f * out_f, 0.0), bsum(out_f, 0.0);
        for (std::size_t c = 0; c < chunks; ++c) {
          for (std::size_t i = 0; i < wsum.size(); ++i) wsum[i] += acc.weight[c][i];
          for (std::size_t i = 0; i < bsum.size(); ++i) bsum[i] += acc.bias[c][i];
        }
        for (std::size_t i = 0; i < wsum.size(); ++i) grads.weight[li][i] = float(wsum[i]);
        for (std::size_t i = 0; i < bsum.size(); ++i) grads.bias[li][i] = float(bsum[i]);
        dcur = std::move(dx);
        break;
      }
      case LayerKind::Conv2D: {
        const std::size_t h = in.dim(2), w = in.dim(3);
        const std::size_t in_sz = l.in_channels * h * w;
        const std::size_t oh = h - l.kernel + 1, ow = w - l.kernel + 1;
        const std::size_t out_sz = l.out_channels * oh * ow;
        const std::size_t wn = l.weight.size(), bn = l.bias.size();
        Tensor dx(in.shape());
        GradAccum acc;
        acc.weight.assign(chunks, {});
        acc.bias.assign(chunks, {});
        detail::run_chunked(chunks, threads, [&](std::size_t c) {
          std::vector<float> col, dcol;
          auto [begin, end] = chunk_range(c, b);
          auto& dw = acc.weight[c];
          auto& db = acc.bias[c];
          dw.assign(wn, 0.0);
          db.assign(bn, 0.0);
          for (std::size_t s = begin; s < end; ++s) {
            conv2d_backward_image(l, in.data() + s * in_sz, dcur.data() + s * out_sz,
                                  dx.data() + s * in_sz, dw.data(), db.data(), h, w, col, dcol);
          }
        });
        std::vector<double> wsum(wn, 0.0), bsum(bn, 0.0);
        for (std::size_t c = 0; c < chunks; ++c) {
          for (std::size_t i = 0; i < wn; ++i) wsum[i] += acc.weight[c][i];
          for (std::size_t i = 0; i < bn; ++i) bsum[i] += acc.bias[c][i];
        }
        for (std::size_t i = 0; i < wn; ++i) grads.weight[li][i] = float(wsum[i]);
        for (std::size_t i = 0; i < bn; ++i) grads.bias[li][i] = float(bsum[i]);
        dcur = std::move(dx);
        break;
      }
      case LayerKind::MaxPool2D: {
        --pool_index;
        const auto& argmax = cache.pool_argmax[pool_index];
        const std::size_t in_sz = in.size() / b;
        const std::size_t out_sz = dcur.size() / b;
        Tensor dx(in.shape());
        detail::run_chunked(chunks, threads, [&](std::size_t c) {
          auto [begin, end] = chunk_range(c, b);
          for (std::size_t s = begin; s < end; ++s) {
            const float* dy = dcur.data() + s * out_sz;
            float* dxr = dx.data() + s * in_sz;
            const std::uint32_t* am = argmax.data() + s * out_sz;
            for (std::size_t o = 0; o < out_sz; ++o) dxr[am[o]] += dy[o];
          }
        });
        dcur = std::move(dx);
        break;
      }
      case LayerKind::Flatten: {
        Tensor dx(in.shape(), std::vector<float>(dcur.values().begin(), dcur.values().end()));
        dcur = std::move(dx);
        break;
      }
      case LayerKind::Activation: {
        Tensor dx(in.shape());
        const std::size_t per = in.size() / b;
        detail::run_chunked(chunks, threads, [&](std::size_t c) {
          auto [begin, end] = chunk_range(c, b);
          std::size_t lo = begin * per, hi = end * per;
          deriv_map_into(l.act, in.values().subspan(lo, hi - lo), dx.values().subspan(lo, hi - lo));
          for (std::size_t i = lo; i < hi; ++i) dx[i] *= dcur[i];
        });
        dcur = std::move(dx);
        break;
      }
      case LayerKind::Dropout: {
        --dropout_index;
        const Tensor& mask = cache.dropout_masks[dropout_index];
        if (mask.empty()) break;  // dropout was inactive
        Tensor dx(in.shape());
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = dcur[i] * mask[i];
        dcur = std::move(dx);
        break;
      }
    }
  }
  return grads;
}

// --- checkpoints ---------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'T', 'S', 'N', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 24));
}

void put_tensor(std::vector<std::uint8_t>& out, const Tensor& t) {
  out.push_back(std::uint8_t(t.rank()));
  for (std::size_t d : t.shape()) put_u32(out, std::uint32_t(d));
  std::size_t pos = out.size();
  out.resize(pos + t.size() * 4);
  std::memcpy(out.data() + pos, t.data(), t.size() * 4);
}

struct Cursor {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw IoError("checkpoint truncated");
  }
  std::uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = std::uint32_t(buf[pos]) | (std::uint32_t(buf[pos + 1]) << 8) |
                      (std::uint32_t(buf[pos + 2]) << 16) | (std::uint32_t(buf[pos + 3]) << 24);
    pos += 4;
    return v;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf.data() + pos, n);
    pos += n;
  }
};

void read_tensor_into(Cursor& c, Tensor& t, std::size_t layer_index) {
  std::size_t ndim = c.u8();
  std::vector<std::size_t> dims(ndim);
  for (auto& d : dims) d = c.u32();
  if (dims != t.shape()) {
    throw FormatError("checkpoint layer " + std::to_string(layer_index) +
                      ": parameter shape mismatch");
  }
  c.raw(t.data(), t.size() * 4);
}

}  // namespace

void save_params(const Network& net, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, std::uint32_t(net.layers.size()));
  for (const Layer& l : net.layers) {
    out.push_back(std::uint8_t(l.kind));
    out.push_back(l.has_params() ? 2 : 0);
    if (l.has_params()) {
      put_tensor(out, l.weight);
      put_tensor(out, l.bias);
    }
  }
  atomic_write_file(path, std::span<const std::uint8_t>(out));
}

void load_params(Network& net, const std::filesystem::path& path) {
  auto buf = read_binary_file(path);
  Cursor c{buf};
  char magic[4];
  c.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a TSNN checkpoint");
  std::uint32_t version = c.u32();
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  std::uint32_t count = c.u32();
  if (count != net.layers.size()) {
    throw FormatError("checkpoint has " + std::to_string(count) + " layers, network has " +
                      std::to_string(net.layers.size()));
  }
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    Layer& l = net.layers[i];
    std::uint8_t kind = c.u8();
    if (kind != std::uint8_t(l.kind)) {
      throw FormatError("checkpoint layer " + std::to_string(i) + " kind mismatch");
    }
    std::uint8_t ntensors = c.u8();
    std::uint8_t expect = l.has_params() ? 2 : 0;
    if (ntensors != expect) {
      throw FormatError("checkpoint layer " + std::to_string(i) + " tensor count mismatch");
    }
    if (l.has_params()) {
      read_tensor_into(c, l.weight, i);
      read_tensor_into(c, l.bias, i);
    }
  }
  if (c.pos != buf.size()) throw FormatError("trailing bytes after checkpoint payload");
}

}  // namespace tslab
