#include "mmn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace mmn {

namespace {

template <typename T>
void require_same_tape(Var<T> a, Var<T> b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands recorded on different tapes");
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

// Calls fn(grad) only when node `id` takes part in differentiation.
template <typename T, typename Fn>
void accumulate(Tape<T>& tape, std::size_t id, Fn&& fn) {
  if (tape.requires_grad(id)) fn(tape.grad(id));
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (auto id : {ia, ib}) {
      accumulate(t, id, [&](Tensor<T>& gi) {
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      });
    }
  }, "add");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    accumulate(t, ia, [&](Tensor<T>& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    });
    accumulate(t, ib, [&](Tensor<T>& gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    });
  }, "mul");
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v *= factor;
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, factor](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ix, [&](Tensor<T>& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    });
  }, "scale");
}

template <typename T>
Var<T> tanh(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = std::tanh(v);
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    accumulate(t, ix, [&](Tensor<T>& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
    });
  }, "tanh");
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = T(1) / (T(1) + std::exp(-v));
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    accumulate(t, ix, [&](Tensor<T>& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
    });
  }, "sigmoid");
}

template <typename T>
Var<T> add_row(Var<T> x, Var<T> bias) {
  require_same_tape(x, bias);
  require(x.value().rank() == 2 && bias.value().rank() == 1 && bias.dim(0) == x.dim(1),
          "add_row: expected [N, D] + [D], got " + shape_string(x.shape()) + " + " + shape_string(bias.shape()));
  Tensor<T> out = x.value();
  const auto& b = bias.value();
  const std::size_t rows = out.dim(0), cols = out.dim(1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += b[c];
  const auto ix = x.id(), ib = bias.id();
  return x.tape().record(std::move(out), {ix, ib}, [ix, ib, rows, cols](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ix, [&](Tensor<T>& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    accumulate(t, ib, [&](Tensor<T>& gb) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g.at(r, c);
    });
  }, "add_row");
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  require(shape_size(shape) == x.value().size(),
          "reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  Tensor<T> out(std::move(shape), x.value().values());
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ix, [&](Tensor<T>& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }, "reshape");
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
          "matmul: incompatible shapes " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = av[i * k + p];
      const T* brow = &bv[p * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    accumulate(t, ia, [&](Tensor<T>& ga) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
    });
    accumulate(t, ib, [&](Tensor<T>& gb) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    });
  }, "matmul");
}

template <typename T>
Var<T> matmul_transposed(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(1),
          "matmul_transposed: incompatible shapes " + shape_string(av.shape()) + " x " + shape_string(bv.shape()) + "^T");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[j * k + p];
      out[i * n + j] = acc;
    }
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    accumulate(t, ia, [&](Tensor<T>& ga) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T gij = g[i * n + j];
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bv[j * k + p];
        }
    });
    accumulate(t, ib, [&](Tensor<T>& gb) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T gij = g[i * n + j];
          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * av[i * k + p];
        }
    });
  }, "matmul_transposed");
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count) {
  const auto& xv = x.value();
  require(xv.rank() == 2 && count > 0 && begin + count <= xv.dim(0), "slice_rows: range out of bounds");
  const std::size_t cols = xv.dim(1);
  std::vector<T> data(xv.values().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                      xv.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * cols));
  Tensor<T> out({count, cols}, std::move(data));
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, begin, cols](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ix, [&](Tensor<T>& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[begin * cols + i] += g[i];
    });
  }, "slice_rows");
}

template <typename T>
Var<T> concat_columns(std::span<const Var<T>> parts) {
  require(!parts.empty(), "concat_columns: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_same_tape(parts[0], p);
    require(p.value().rank() == 2 && p.dim(0) == rows, "concat_columns: row count mismatch");
    total += p.dim(1);
  }
  Tensor<T> out({rows, total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& pv = p.value();
    const std::size_t w = pv.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) out.at(r, offset + c) = pv.at(r, c);
    offset += w;
  }
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    ids.push_back(p.id());
    widths.push_back(p.dim(1));
  }
  auto& tape = parts[0].tape();
  return tape.record(std::move(out), std::span<const std::size_t>(ids), [ids, widths, rows, total](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      accumulate(t, ids[k], [&](Tensor<T>& gp) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) gp.at(r, c) += g[r * total + offset + c];
      });
      offset += w;
    }
  }, "concat_columns");
}

template <typename T>
Var<T> sum(Var<T> x) {
  T acc = 0;
  for (auto v : x.value().values()) acc += v;
  const auto ix = x.id();
  return x.tape().record(Tensor<T>({1}, {acc}), {ix}, [ix](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    accumulate(t, ix, [&](Tensor<T>& gx) {
      for (auto& v : gx.values()) v += g;
    });
  }, "sum");
}

template <typename T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& weights) {
  require(weights.shape() == x.shape(), "weighted_sum: weight shape mismatch");
  T acc = 0;
  const auto& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i] * weights[i];
  const auto ix = x.id();
  return x.tape().record(Tensor<T>({1}, {acc}), {ix}, [ix, weights](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    accumulate(t, ix, [&](Tensor<T>& gx) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * weights[i];
    });
  }, "weighted_sum");
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::uint32_t> ids, std::int64_t zero_id) {
  const auto& tv = table.value();
  require(tv.rank() == 2, "embedding: table must be [V, D]");
  require(!ids.empty(), "embedding: empty id sequence");
  const std::size_t vocab = tv.dim(0), width = tv.dim(1);
  Tensor<T> out({ids.size(), width});
  for (std::size_t n = 0; n < ids.size(); ++n) {
    if (ids[n] >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[n]) + " >= vocabulary size " +
                              std::to_string(vocab));
    }
    if (static_cast<std::int64_t>(ids[n]) == zero_id) continue;
    auto src = tv.row(ids[n]);
    std::copy(src.begin(), src.end(), out.row(n).begin());
  }
  const auto it = table.id();
  std::vector<std::uint32_t> kept(ids.begin(), ids.end());
  return table.tape().record(std::move(out), {it}, [it, kept, width, zero_id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    accumulate(t, it, [&](Tensor<T>& gt) {
      for (std::size_t n = 0; n < kept.size(); ++n) {
        if (static_cast<std::int64_t>(kept[n]) == zero_id) continue;
        for (std::size_t c = 0; c < width; ++c) gt[kept[n] * width + c] += g[n * width + c];
      }
    });
  }, "embedding");
}

template <typename T>
Var<T> dilated_conv1d(Var<T> x, Var<T> w, Var<T> b, std::size_t dilation, Padding padding) {
  require_same_tape(x, w);
  require_same_tape(x, b);
  if (dilation < 1) throw std::invalid_argument("dilated_conv1d: dilation must be >= 1");
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = b.value();
  require(xv.rank() == 2, "dilated_conv1d: input must be [N, D_in], got " + shape_string(xv.shape()));
  require(wv.rank() == 3 && wv.dim(1) == xv.dim(1),
          "dilated_conv1d: filter " + shape_string(wv.shape()) + " does not match input " + shape_string(xv.shape()));
  require(wv.dim(0) % 2 == 1, "dilated_conv1d: kernel size must be odd");
  require(bv.rank() == 1 && bv.dim(0) == wv.dim(2), "dilated_conv1d: bias must be [D_out]");

  const std::size_t n = xv.dim(0), din = xv.dim(1), k = wv.dim(0), dout = wv.dim(2);
  const auto d = static_cast<std::ptrdiff_t>(dilation);
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  const bool causal = padding == Padding::kCausal;
  auto offset = [=](std::size_t i) {
    const auto ii = static_cast<std::ptrdiff_t>(i);
    return causal ? -d * (static_cast<std::ptrdiff_t>(k) - 1 - ii) : d * (ii - half);
  };

  Tensor<T> out({n, dout});
  for (std::size_t s = 0; s < n; ++s) {
    T* orow = &out[s * dout];
    for (std::size_t o = 0; o < dout; ++o) orow[o] = bv[o];
    for (std::size_t i = 0; i < k; ++i) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(s) + offset(i);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
      const T* xrow = &xv[static_cast<std::size_t>(src) * din];
      for (std::size_t c = 0; c < din; ++c) {
        const T xc = xrow[c];
        const T* wrow = &wv[(i * din + c) * dout];
        for (std::size_t o = 0; o < dout; ++o) orow[o] += xc * wrow[o];
      }
    }
  }

  const auto ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape().record(std::move(out), {ix, iw, ib},
                         [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(ix);
    const auto& wv = t.value(iw);
    accumulate(t, ib, [&](Tensor<T>& gb) {
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t o = 0; o < dout; ++o) gb[o] += g[s * dout + o];
    });
    const bool need_x = t.requires_grad(ix), need_w = t.requires_grad(iw);
    if (!need_x && !need_w) return;
    Tensor<T>* gx = need_x ? &t.grad(ix) : nullptr;
    Tensor<T>* gw = need_w ? &t.grad(iw) : nullptr;
    for (std::size_t s = 0; s < n; ++s) {
      const T* grow = &g[s * dout];
      for (std::size_t i = 0; i < k; ++i) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(s) + offset(i);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
        const auto su = static_cast<std::size_t>(src);
        for (std::size_t c = 0; c < din; ++c) {
          const std::size_t wbase = (i * din + c) * dout;
          if (gx) {
            T acc = 0;
            for (std::size_t o = 0; o < dout; ++o) acc += grow[o] * wv[wbase + o];
            (*gx)[su * din + c] += acc;
          }
          if (gw) {
            const T xc = xv[su * din + c];
            for (std::size_t o = 0; o < dout; ++o) (*gw)[wbase + o] += xc * grow[o];
          }
        }
      }
    }
  }, "dilated_conv1d");
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double epsilon) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  const auto& xv = x.value();
  require(xv.rank() == 2, "layer_norm: input must be [N, D]");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  if (cols < 2) throw std::invalid_argument("layer_norm: normalizing over a single channel is degenerate");
  require(gain.shape() == Shape{cols} && bias.shape() == Shape{cols}, "layer_norm: gain/bias must be [D]");
  const auto& gv = gain.value();
  const auto& bv = bias.value();

  auto normalized = std::make_shared<std::vector<T>>(xv.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  Tensor<T> out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += xv.at(r, c);
    mean /= static_cast<double>(cols);
    double var = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double dv = xv.at(r, c) - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + epsilon);
    (*inv_std)[r] = static_cast<T>(is);
    for (std::size_t c = 0; c < cols; ++c) {
      const T xh = static_cast<T>((xv.at(r, c) - mean) * is);
      (*normalized)[r * cols + c] = xh;
      out.at(r, c) = gv[c] * xh + bv[c];
    }
  }

  const auto ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().record(std::move(out), {ix, ig, ib},
                         [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& gv = t.value(ig);
    const auto& xh = *normalized;
    accumulate(t, ig, [&](Tensor<T>& gg) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * xh[r * cols + c];
    });
    accumulate(t, ib, [&](Tensor<T>& gb) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
    });
    accumulate(t, ix, [&](Tensor<T>& gx) {
      const T inv_cols = T(1) / static_cast<T>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_dxh = 0, mean_dxh_xh = 0;
        for (std::size_t c = 0; c < cols; ++c) {
          const T dxh = g[r * cols + c] * gv[c];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xh[r * cols + c];
        }
        mean_dxh *= inv_cols;
        mean_dxh_xh *= inv_cols;
        for (std::size_t c = 0; c < cols; ++c) {
          const T dxh = g[r * cols + c] * gv[c];
          gx[r * cols + c] += (*inv_std)[r] * (dxh - mean_dxh - xh[r * cols + c] * mean_dxh_xh);
        }
      }
    });
  }, "layer_norm");
}

template <typename T>
Var<T> weight_norm(Var<T> v, Var<T> g) {
  require_same_tape(v, g);
  const auto& vv = v.value();
  const auto& gv = g.value();
  const std::size_t cols = vv.shape().back();
  require(gv.shape() == Shape{cols}, "weight_norm: scale must have one entry per output channel");
  const std::size_t rows = vv.size() / cols;

  auto norms = std::make_shared<std::vector<T>>(cols);
  for (std::size_t o = 0; o < cols; ++o) {
    double acc = 0;
    for (std::size_t r = 0; r < rows; ++r) acc += static_cast<double>(vv[r * cols + o]) * vv[r * cols + o];
    if (acc == 0) throw std::invalid_argument("weight_norm: zero-norm direction in output channel " + std::to_string(o));
    (*norms)[o] = static_cast<T>(std::sqrt(acc));
  }
  Tensor<T> out(vv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < cols; ++o) out[r * cols + o] = gv[o] * vv[r * cols + o] / (*norms)[o];

  const auto iv = v.id(), ig = g.id();
  return v.tape().record(std::move(out), {iv, ig}, [=](Tape<T>& t, std::size_t self) {
    const auto& gw = t.grad(self);
    const auto& vv = t.value(iv);
    const auto& gv = t.value(ig);
    // dot[o] = sum_r dL/dw[r,o] * v[r,o]
    std::vector<T> dot(cols, T(0));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < cols; ++o) dot[o] += gw[r * cols + o] * vv[r * cols + o];
    accumulate(t, ig, [&](Tensor<T>& gg) {
      for (std::size_t o = 0; o < cols; ++o) gg[o] += dot[o] / (*norms)[o];
    });
    accumulate(t, iv, [&](Tensor<T>& gvv) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < cols; ++o) {
          const T nrm = (*norms)[o];
          gvv[r * cols + o] += gv[o] / nrm * (gw[r * cols + o] - dot[o] / (nrm * nrm) * vv[r * cols + o]);
        }
    });
  }, "weight_norm");
}

template <typename T>
Var<T> softmax(Var<T> x, std::span<const bool> mask) {
  const auto& xv = x.value();
  require(xv.rank() == 1 || xv.rank() == 2, "softmax: expected rank 1 or 2");
  const std::size_t cols = xv.shape().back();
  const std::size_t rows = xv.size() / cols;
  require(mask.empty() || mask.size() == cols, "softmax: mask length must equal the last extent");
  auto masked = [&](std::size_t c) { return !mask.empty() && mask[c]; };

  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    T peak = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (!masked(c)) peak = std::max(peak, xv[r * cols + c]);
    if (peak == -std::numeric_limits<T>::infinity()) throw std::invalid_argument("softmax: every position is masked");
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const T e = masked(c) ? T(0) : std::exp(xv[r * cols + c] - peak);
      out[r * cols + c] = e;
      total += e;
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= total;
  }

  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, rows, cols](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    accumulate(t, ix, [&](Tensor<T>& gx) {
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
      }
    });
  }, "softmax");
}

template <typename T>
Var<T> maxpool_time(Var<T> x) {
  const auto& xv = x.value();
  require(xv.rank() == 2, "maxpool_time: input must be [N, D]");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  std::vector<std::size_t> argmax(cols, 0);
  Tensor<T> out({cols});
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 1; r < rows; ++r)
      if (xv.at(r, c) > xv.at(argmax[c], c)) argmax[c] = r;
    out[c] = xv.at(argmax[c], c);
  }
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, argmax, cols](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ix, [&](Tensor<T>& gx) {
      for (std::size_t c = 0; c < cols; ++c) gx[argmax[c] * cols + c] += g[c];
    });
  }, "maxpool_time");
}

template <typename T>
Var<T> conv(Var<T> x, const ConvWeights<T>& weights, std::size_t dilation, Padding padding) {
  return dilated_conv1d(x, weight_norm(weights.direction, weights.scale), weights.bias, dilation, padding);
}

template <typename T>
Var<T> ngtu_block(Var<T> x, const ConvWeights<T>& filter, const ConvWeights<T>& gate, const NormWeights<T>& norm,
                  std::size_t dilation, Padding padding) {
  Var<T> f = conv(x, filter, dilation, padding);
  Var<T> g = conv(x, gate, dilation, padding);
  require(f.shape() == x.shape(), "ngtu_block: convolution must preserve the channel count");
  Var<T> gated = mul(tanh(f), sigmoid(g));
  return layer_norm(add(x, gated), norm.gain, norm.bias);
}

template <typename T>
Var<T> attend(Var<T> queries, Var<T> keys, Var<T> values, std::span<const bool> mask) {
  require(keys.shape() == values.shape(), "attend: key and value memories differ in shape");
  const auto width = static_cast<T>(queries.shape().back());
  Var<T> scores = scale(matmul_transposed(queries, keys), T(1) / std::sqrt(width));
  return matmul(softmax(scores, mask), values);
}

std::vector<double> smoothed_target(std::size_t target, double epsilon, std::size_t vocab_size) {
  if (target >= vocab_size) throw std::out_of_range("smoothed_target: target id outside vocabulary");
  std::vector<double> q(vocab_size, epsilon / static_cast<double>(vocab_size));
  q[target] = 1.0 - epsilon;
  return q;
}

template <typename T>
Var<T> label_smoothed_loss(Var<T> logits, std::span<const std::uint32_t> targets, double epsilon) {
  const auto& zv = logits.value();
  require(zv.rank() == 2 && zv.dim(0) == targets.size(), "label_smoothed_loss: logits must be [T, V] with T targets");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("label_smoothed_loss: epsilon must lie in [0, 1)");
  if (!zv.all_finite()) throw NumericError("label_smoothed_loss: non-finite logits");
  const std::size_t steps = zv.dim(0), vocab = zv.dim(1);
  const double off = epsilon / static_cast<double>(vocab);
  const double mass = 1.0 - off;

  auto probs = std::make_shared<std::vector<double>>(zv.size());
  double total = 0;
  for (std::size_t r = 0; r < steps; ++r) {
    if (targets[r] >= vocab) throw std::out_of_range("label_smoothed_loss: target id outside vocabulary");
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < vocab; ++c) peak = std::max(peak, static_cast<double>(zv.at(r, c)));
    double z = 0;
    for (std::size_t c = 0; c < vocab; ++c) z += std::exp(zv.at(r, c) - peak);
    const double log_z = peak + std::log(z);
    double sum_logp = 0;
    for (std::size_t c = 0; c < vocab; ++c) {
      const double logp = zv.at(r, c) - log_z;
      sum_logp += logp;
      (*probs)[r * vocab + c] = std::exp(logp);
    }
    const double logp_gt = zv.at(r, targets[r]) - log_z;
    total += -((1.0 - epsilon) * logp_gt + off * (sum_logp - logp_gt));
  }
  const double loss = total / static_cast<double>(steps);

  const auto iz = logits.id();
  std::vector<std::uint32_t> kept(targets.begin(), targets.end());
  return logits.tape().record(Tensor<T>({1}, {static_cast<T>(loss)}), {iz},
                              [=](Tape<T>& t, std::size_t self) {
    const double g = t.grad(self)[0] / static_cast<double>(steps);
    accumulate(t, iz, [&](Tensor<T>& gz) {
      for (std::size_t r = 0; r < steps; ++r)
        for (std::size_t c = 0; c < vocab; ++c) {
          const double q = c == kept[r] ? 1.0 - epsilon : off;
          gz[r * vocab + c] += static_cast<T>(g * (mass * (*probs)[r * vocab + c] - q));
        }
    });
  }, "label_smoothed_loss");
}

#define MMN_INSTANTIATE_OPS(T)                                                                             \
  template Var<T> add(Var<T>, Var<T>);                                                                     \
  template Var<T> mul(Var<T>, Var<T>);                                                                     \
  template Var<T> scale(Var<T>, T);                                                                        \
  template Var<T> tanh(Var<T>);                                                                            \
  template Var<T> sigmoid(Var<T>);                                                                         \
  template Var<T> add_row(Var<T>, Var<T>);                                                                 \
  template Var<T> reshape(Var<T>, Shape);                                                                  \
  template Var<T> matmul(Var<T>, Var<T>);                                                                  \
  template Var<T> matmul_transposed(Var<T>, Var<T>);                                                       \
  template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                                            \
  template Var<T> concat_columns(std::span<const Var<T>>);                                                 \
  template Var<T> sum(Var<T>);                                                                             \
  template Var<T> weighted_sum(Var<T>, const Tensor<T>&);                                                  \
  template Var<T> embedding(Var<T>, std::span<const std::uint32_t>, std::int64_t);                         \
  template Var<T> dilated_conv1d(Var<T>, Var<T>, Var<T>, std::size_t, Padding);                            \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, double);                                              \
  template Var<T> weight_norm(Var<T>, Var<T>);                                                             \
  template Var<T> softmax(Var<T>, std::span<const bool>);                                                  \
  template Var<T> maxpool_time(Var<T>);                                                                    \
  template Var<T> conv(Var<T>, const ConvWeights<T>&, std::size_t, Padding);                               \
  template Var<T> ngtu_block(Var<T>, const ConvWeights<T>&, const ConvWeights<T>&, const NormWeights<T>&,  \
                             std::size_t, Padding);                                                        \
  template Var<T> attend(Var<T>, Var<T>, Var<T>, std::span<const bool>);                                   \
  template Var<T> label_smoothed_loss(Var<T>, std::span<const std::uint32_t>, double);

MMN_INSTANTIATE_OPS(float)
MMN_INSTANTIATE_OPS(double)

#undef MMN_INSTANTIATE_OPS

}  // namespace mmn
