#include "dsen/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "dsen/error.hpp"
#include "dsen/linalg.hpp"

namespace dsen::ad {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
  }
}

// outer x axis x inner decomposition of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.axis = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// Accumulate into a parent's grad only if it participates.
template <typename F>
void with_grad(const Tensor& t, F&& f) {
  if (t.defined() && t.requires_grad()) f(t.node()->ensure_grad());
}

Matrix to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("expected a matrix, got " + shape_str(t.shape()));
  Matrix m(t.dim(0), t.dim(1));
  std::copy(t.values().begin(), t.values().end(), m.data.begin());
  return m;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
    for (const auto& t : {a, b}) {
      with_grad(t, [&](std::vector<double>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
    with_grad(a, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    with_grad(b, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
    with_grad(a, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b.values()[i];
    });
    with_grad(b, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a.values()[i];
    });
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / b.values()[i];
  return make_result("div", a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
    with_grad(a, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / b.values()[i];
    });
    with_grad(b, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double bv = b.values()[i];
        g[i] -= self.grad[i] * a.values()[i] / (bv * bv);
      }
    });
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
  return make_result("scale", a.shape(), std::move(out), {a}, [a, s](Node& self) {
    with_grad(a, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + s;
  return make_result("add_scalar", a.shape(), std::move(out), {a}, [a](Node& self) {
    with_grad(a, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.values()[i]);
  return make_result("relu", x.shape(), std::move(out), {x}, [x](Node& self) {
    with_grad(x, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x.values()[i] > 0.0) g[i] += self.grad[i];
      }
    });
  });
}

Tensor sqrt(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (x.values()[i] < 0.0) throw NumericError("sqrt of a negative value");
    out[i] = std::sqrt(x.values()[i]);
  }
  auto y = make_result("sqrt", x.shape(), out, {x}, nullptr);
  if (y.requires_grad()) {
    y.node()->backward = [x, out](Node& self) {
      with_grad(x, [&](std::vector<double>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * 0.5 / out[i];
      });
    };
  }
  return y;
}

Tensor sum(const Tensor& x) {
  const double s = std::accumulate(x.values().begin(), x.values().end(), 0.0);
  return make_result("sum", {1}, {s}, {x}, [x](Node& self) {
    with_grad(x, [&](std::vector<double>& g) {
      for (double& v : g) v += self.grad[0];
    });
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor sum_last(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("sum_last on a scalar");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  if (shape.empty()) shape = {1};
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < d; ++k) out[r] += x.values()[r * d + k];
  }
  return make_result("sum_last", shape, std::move(out), {x}, [x, d, rows](Node& self) {
    with_grad(x, [&](std::vector<double>& g) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < d; ++k) g[r * d + k] += self.grad[r];
      }
    });
  });
}

Tensor max_over_axis(const Tensor& x, std::size_t axis) {
  const auto sp = split_at(x.shape(), axis);
  if (sp.axis == 0) throw ShapeError("max_over_axis over an empty axis");
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(out.size());
  const auto v = x.values();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = o * sp.axis * sp.inner + i;
      for (std::size_t a = 1; a < sp.axis; ++a) {
        const std::size_t idx = (o * sp.axis + a) * sp.inner + i;
        if (v[idx] > v[best]) best = idx;
      }
      out[o * sp.inner + i] = v[best];
      arg[o * sp.inner + i] = best;
    }
  }
  return make_result("max_over_axis", shape, std::move(out), {x}, [x, arg = std::move(arg)](Node& self) {
    with_grad(x, [&](std::vector<double>& g) {
      for (std::size_t k = 0; k < arg.size(); ++k) g[arg[k]] += self.grad[k];
    });
  });
}

Tensor mean_over_axis(const Tensor& x, std::size_t axis) {
  const auto sp = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const double inv = 1.0 / static_cast<double>(sp.axis);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t a = 0; a < sp.axis; ++a) {
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += x.values()[(o * sp.axis + a) * sp.inner + i] * inv;
    }
  }
  return make_result("mean_over_axis", shape, std::move(out), {x}, [x, sp, inv](Node& self) {
    with_grad(x, [&](std::vector<double>& g) {
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t a = 0; a < sp.axis; ++a) {
          for (std::size_t i = 0; i < sp.inner; ++i) g[(o * sp.axis + a) * sp.inner + i] += self.grad[o * sp.inner + i] * inv;
        }
      }
    });
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [x](Node& self) {
    with_grad(x, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw ShapeError("permute: axis count mismatch");
  std::vector<bool> seen(r, false);
  for (auto a : axes) {
    if (a >= r || seen[a]) throw ShapeError("permute: invalid axis list");
    seen[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(axes[i]);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  // map[k] = input flat index of output flat index k
  const std::size_t n = x.size();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_strides[axes[i]];
    map[k] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = x.values()[map[k]];
  return make_result("permute", out_shape, std::move(out), {x}, [x, map = std::move(map)](Node& self) {
    with_grad(x, [&](std::vector<double>& g) {
      for (std::size_t k = 0; k < map.size(); ++k) g[map[k]] += self.grad[k];
    });
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto sp = split_at(x.shape(), axis);
  if (start + length > sp.axis || length == 0) throw ShapeError("slice: range out of bounds");
  Shape shape = x.shape();
  shape[axis] = length;
  std::vector<double> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>((o * sp.axis + start) * sp.inner), length * sp.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * sp.inner));
  }
  return make_result("slice", shape, std::move(out), {x}, [x, sp, start, length](Node& self) {
    with_grad(x, [&](std::vector<double>& g) {
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t k = 0; k < length * sp.inner; ++k) {
          g[(o * sp.axis + start) * sp.inner + k] += self.grad[o * length * sp.inner + k];
        }
      }
    });
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts.front().shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = shape;
    if (a.size() != b.size() || axis >= a.size()) throw ShapeError("concat: rank mismatch");
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeError("concat: incompatible shapes " + shape_str(p.shape()) + " and " + shape_str(shape));
    total += p.dim(axis);
  }
  shape[axis] = total;
  const auto sp = split_at(shape, axis);
  std::vector<double> out(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.dim(axis) * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(p.values().begin() + static_cast<std::ptrdiff_t>(o * len), len,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total * sp.inner + off * sp.inner));
    }
    off += p.dim(axis);
  }
  return make_result("concat", shape, std::move(out), parts, [parts, offsets, sp, total, axis](Node& self) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      with_grad(parts[k], [&](std::vector<double>& g) {
        const std::size_t len = parts[k].dim(axis) * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t i = 0; i < len; ++i) g[o * len + i] += self.grad[o * total * sp.inner + offsets[k] * sp.inner + i];
        }
      });
    }
  });
}

Tensor transpose(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("transpose expects a matrix");
  return permute(m, {1, 0});
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
    const auto& g = self.grad;
    with_grad(a, [&](std::vector<double>& ga) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * b.values()[p * n + j];
          ga[i * k + p] += s;
        }
      }
    });
    with_grad(b, [&](std::vector<double>& gb) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = a.values()[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
      }
    });
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.shape().back() != weight.dim(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  const std::size_t in = weight.dim(1), out_dim = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) throw ShapeError("linear: bias shape");
  const std::size_t rows = x.size() / in;
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<double> out(rows * out_dim);
  const auto xv = x.values();
  const auto wv = weight.values();
  // Row-times-Wᵀ as axpy sweeps over a transposed copy, four rows per pass.
  std::vector<double> wt(in * out_dim);
  for (std::size_t o = 0; o < out_dim; ++o) {
    for (std::size_t i = 0; i < in; ++i) wt[i * out_dim + o] = wv[o * in + i];
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = out.data() + r * out_dim;
    if (bias.defined()) std::copy(bias.values().begin(), bias.values().end(), yr);
  }
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) {
    const double* x0 = xv.data() + r * in;
    double* y0 = out.data() + r * out_dim;
    double* y1 = y0 + out_dim;
    double* y2 = y1 + out_dim;
    double* y3 = y2 + out_dim;
    for (std::size_t i = 0; i < in; ++i) {
      const double a0 = x0[i], a1 = x0[in + i], a2 = x0[2 * in + i], a3 = x0[3 * in + i];
      const double* wi = wt.data() + i * out_dim;
      for (std::size_t o = 0; o < out_dim; ++o) {
        const double w = wi[o];
        y0[o] += a0 * w;
        y1[o] += a1 * w;
        y2[o] += a2 * w;
        y3[o] += a3 * w;
      }
    }
  }
  for (; r < rows; ++r) {
    const double* xr = xv.data() + r * in;
    double* yr = out.data() + r * out_dim;
    for (std::size_t i = 0; i < in; ++i) {
      const double a = xr[i];
      const double* wi = wt.data() + i * out_dim;
      for (std::size_t o = 0; o < out_dim; ++o) yr[o] += a * wi[o];
    }
  }
  return make_result("linear", shape, std::move(out), {x, weight, bias}, [x, weight, bias, rows, in, out_dim](Node& self) {
    const auto& g = self.grad;
    with_grad(x, [&](std::vector<double>& gx) {
      const auto wv = weight.values();
      std::size_t r = 0;
      for (; r + 4 <= rows; r += 4) {
        double* g0 = gx.data() + r * in;
        double* g1 = g0 + in;
        double* g2 = g1 + in;
        double* g3 = g2 + in;
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double a0 = g[r * out_dim + o], a1 = g[(r + 1) * out_dim + o];
          const double a2 = g[(r + 2) * out_dim + o], a3 = g[(r + 3) * out_dim + o];
          if (a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0) continue;
          const double* wo = wv.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) {
            const double w = wo[i];
            g0[i] += a0 * w;
            g1[i] += a1 * w;
            g2[i] += a2 * w;
            g3[i] += a3 * w;
          }
        }
      }
      for (; r < rows; ++r) {
        double* gxr = gx.data() + r * in;
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double go = g[r * out_dim + o];
          if (go == 0.0) continue;
          const double* wo = wv.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) gxr[i] += go * wo[i];
        }
      }
    });
    with_grad(weight, [&](std::vector<double>& gw) {
      const auto xv = x.values();
      std::size_t r = 0;
      for (; r + 4 <= rows; r += 4) {
        const double* x0 = xv.data() + r * in;
        const double* x1 = x0 + in;
        const double* x2 = x1 + in;
        const double* x3 = x2 + in;
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double a0 = g[r * out_dim + o], a1 = g[(r + 1) * out_dim + o];
          const double a2 = g[(r + 2) * out_dim + o], a3 = g[(r + 3) * out_dim + o];
          if (a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0) continue;
          double* gwo = gw.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) gwo[i] += a0 * x0[i] + a1 * x1[i] + a2 * x2[i] + a3 * x3[i];
        }
      }
      for (; r < rows; ++r) {
        const double* xr = xv.data() + r * in;
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double go = g[r * out_dim + o];
          if (go == 0.0) continue;
          double* gwo = gw.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) gwo[i] += go * xr[i];
        }
      }
    });
    with_grad(bias, [&](std::vector<double>& gb) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[r * out_dim + o];
      }
    });
  });
}

Tensor softmax(const Tensor& x) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + r * d;
    const double mx = *std::max_element(xr, xr + d);
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += (out[r * d + k] = std::exp(xr[k] - mx));
    for (std::size_t k = 0; k < d; ++k) out[r * d + k] /= s;
  }
  auto y = make_result("softmax", x.shape(), out, {x}, nullptr);
  if (y.requires_grad()) {
    y.node()->backward = [x, out, d, rows](Node& self) {
      with_grad(x, [&](std::vector<double>& g) {
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t k = 0; k < d; ++k) dot += self.grad[r * d + k] * out[r * d + k];
          for (std::size_t k = 0; k < d; ++k) g[r * d + k] += out[r * d + k] * (self.grad[r * d + k] - dot);
        }
      });
    };
  }
  return y;
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t groups) {
  const bool batched = x.rank() == 3;
  if (!batched && x.rank() != 2) throw ShapeError("conv1d: input must be [C,L] or [B,C,L]");
  if (w.rank() != 3) throw ShapeError("conv1d: kernel must be [C_out, C_in/groups, K]");
  if (stride == 0 || groups == 0) throw ShapeError("conv1d: stride and groups must be positive");
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t cin = x.dim(batched ? 1 : 0);
  const std::size_t len = x.dim(batched ? 2 : 1);
  const std::size_t cout = w.dim(0), cpg = w.dim(1), k = w.dim(2);
  if (cin % groups != 0 || cout % groups != 0 || cpg != cin / groups) {
    throw ShapeError("conv1d: channels " + std::to_string(cin) + "/" + std::to_string(cout) +
                     " incompatible with groups " + std::to_string(groups) + " and kernel " + shape_str(w.shape()));
  }
  if (k > len) {
    throw ShapeError("conv1d: kernel too long (" + std::to_string(k) + " > " + std::to_string(len) + ")");
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != cout)) throw ShapeError("conv1d: bias shape");
  const std::size_t lout = (len - k) / stride + 1;
  const std::size_t opg = cout / groups;
  std::vector<double> out(batch * cout * lout);
  const auto xv = x.values();
  const auto wv = w.values();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    for (std::size_t o = 0; o < cout; ++o) {
      const std::size_t c0 = (o / opg) * cpg;
      double* dst = out.data() + (bi * cout + o) * lout;
      const double bias = b.defined() ? b.values()[o] : 0.0;
      for (std::size_t t = 0; t < lout; ++t) dst[t] = bias;
      for (std::size_t ci = 0; ci < cpg; ++ci) {
        const double* src = xv.data() + (bi * cin + c0 + ci) * len;
        const double* ker = wv.data() + (o * cpg + ci) * k;
        for (std::size_t t = 0; t < lout; ++t) {
          const double* s = src + t * stride;
          double acc = 0.0;
          for (std::size_t j = 0; j < k; ++j) acc += ker[j] * s[j];
          dst[t] += acc;
        }
      }
    }
  }
  Shape shape = batched ? Shape{batch, cout, lout} : Shape{cout, lout};
  return make_result("conv1d", shape, std::move(out), {x, w, b},
                     [=](Node& self) {
                       const auto& g = self.grad;
                       const auto xv = x.values();
                       const auto wv = w.values();
                       std::vector<double>* gx = x.requires_grad() ? &x.node()->ensure_grad() : nullptr;
                       std::vector<double>* gw = w.requires_grad() ? &w.node()->ensure_grad() : nullptr;
                       std::vector<double>* gb = b.defined() && b.requires_grad() ? &b.node()->ensure_grad() : nullptr;
                       for (std::size_t bi = 0; bi < batch; ++bi) {
                         for (std::size_t o = 0; o < cout; ++o) {
                           const std::size_t c0 = (o / opg) * cpg;
                           const double* go = g.data() + (bi * cout + o) * lout;
                           if (gb) {
                             for (std::size_t t = 0; t < lout; ++t) (*gb)[o] += go[t];
                           }
                           for (std::size_t ci = 0; ci < cpg; ++ci) {
                             const std::size_t xoff = (bi * cin + c0 + ci) * len;
                             const std::size_t woff = (o * cpg + ci) * k;
                             if (gw) {
                               const double* src = xv.data() + xoff;
                               double* gker = gw->data() + woff;
                               for (std::size_t t = 0; t < lout; ++t) {
                                 const double gt = go[t];
                                 const double* s = src + t * stride;
                                 for (std::size_t j = 0; j < k; ++j) gker[j] += gt * s[j];
                               }
                             }
                             if (gx) {
                               const double* ker = wv.data() + woff;
                               double* gsrc = gx->data() + xoff;
                               for (std::size_t t = 0; t < lout; ++t) {
                                 const double gt = go[t];
                                 double* s = gsrc + t * stride;
                                 for (std::size_t j = 0; j < k; ++j) s[j] += gt * ker[j];
                               }
                             }
                           }
                         }
                       }
                     });
}

Tensor adaptive_max_pool1d(const Tensor& x, std::size_t target) {
  if (x.rank() < 1 || target == 0) throw ShapeError("adaptive_max_pool1d: bad input or target");
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.size() / len;
  Shape shape = x.shape();
  shape.back() = target;
  std::vector<double> out(rows * target);
  std::vector<std::size_t> arg(rows * target);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < target; ++i) {
      const std::size_t s = (i * len) / target;
      const std::size_t e = ((i + 1) * len + target - 1) / target;
      std::size_t best = r * len + s;
      for (std::size_t t = s + 1; t < e; ++t) {
        if (xv[r * len + t] > xv[best]) best = r * len + t;
      }
      out[r * target + i] = xv[best];
      arg[r * target + i] = best;
    }
  }
  return make_result("adaptive_max_pool1d", shape, std::move(out), {x}, [x, arg = std::move(arg)](Node& self) {
    with_grad(x, [&](std::vector<double>& g) {
      for (std::size_t k = 0; k < arg.size(); ++k) g[arg[k]] += self.grad[k];
    });
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool train,
                  double momentum, double eps) {
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("batch_norm: input must be [B,C] or [B,C,L]");
  const std::size_t batch = x.dim(0), ch = x.dim(1), len = x.rank() == 3 ? x.dim(2) : 1;
  if (gamma.size() != ch || beta.size() != ch) throw ShapeError("batch_norm: affine parameter shape");
  if (state.running_mean.empty()) {
    state.running_mean.assign(ch, 0.0);
    state.running_var.assign(ch, 1.0);
  }
  if (state.running_mean.size() != ch) throw ShapeError("batch_norm: running statistics shape");
  const double count = static_cast<double>(batch * len);
  std::vector<double> mu(ch, 0.0), inv_std(ch, 0.0);
  const auto xv = x.values();
  auto at = [&](std::size_t b, std::size_t c, std::size_t t) { return (b * ch + c) * len + t; };
  if (train) {
    if (batch * len < 2) throw ShapeError("batch_norm: training needs more than one value per channel");
    for (std::size_t c = 0; c < ch; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < len; ++t) s += xv[at(b, c, t)];
      mu[c] = s / count;
      double v = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < len; ++t) v += (xv[at(b, c, t)] - mu[c]) * (xv[at(b, c, t)] - mu[c]);
      v /= count;
      inv_std[c] = 1.0 / std::sqrt(v + eps);
      state.running_mean[c] = momentum * state.running_mean[c] + (1.0 - momentum) * mu[c];
      state.running_var[c] = momentum * state.running_var[c] + (1.0 - momentum) * v * count / (count - 1.0);
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      mu[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
    }
  }
  std::vector<double> xhat(x.size()), out(x.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t i = at(b, c, t);
        xhat[i] = (xv[i] - mu[c]) * inv_std[c];
        out[i] = gamma.values()[c] * xhat[i] + beta.values()[c];
      }
  auto y = make_result("batch_norm", x.shape(), std::move(out), {x, gamma, beta}, nullptr);
  if (y.requires_grad()) {
    y.node()->backward = [=, xhat = std::move(xhat)](Node& self) {
      const auto& g = self.grad;
      auto at = [&](std::size_t b, std::size_t c, std::size_t t) { return (b * ch + c) * len + t; };
      std::vector<double> sum_g(ch, 0.0), sum_gx(ch, 0.0);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < ch; ++c)
          for (std::size_t t = 0; t < len; ++t) {
            sum_g[c] += g[at(b, c, t)];
            sum_gx[c] += g[at(b, c, t)] * xhat[at(b, c, t)];
          }
      with_grad(gamma, [&](std::vector<double>& gg) {
        for (std::size_t c = 0; c < ch; ++c) gg[c] += sum_gx[c];
      });
      with_grad(beta, [&](std::vector<double>& gb) {
        for (std::size_t c = 0; c < ch; ++c) gb[c] += sum_g[c];
      });
      with_grad(x, [&](std::vector<double>& gx) {
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < ch; ++c) {
            const double gm = gamma.values()[c];
            for (std::size_t t = 0; t < len; ++t) {
              const std::size_t i = at(b, c, t);
              if (train) {
                gx[i] += gm * inv_std[c] * (g[i] - sum_g[c] / count - xhat[i] * sum_gx[c] / count);
              } else {
                gx[i] += gm * inv_std[c] * g[i];
              }
            }
          }
      });
    };
  }
  return y;
}

Tensor dropout(const Tensor& x, double keep, Rng& rng, bool train) {
  if (!(keep > 0.0)) throw ShapeError("dropout: keep probability must be positive");
  if (!train || keep >= 1.0) return x;
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * mask[i];
  return make_result("dropout", x.shape(), std::move(out), {x}, [x, mask = std::move(mask)](Node& self) {
    with_grad(x, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
  });
}

Tensor pairwise_offdiag_sum(const Tensor& p, const Tensor& q) {
  require_same_shape(p, q, "pairwise_offdiag_sum");
  if (p.rank() != 3) throw ShapeError("pairwise_offdiag_sum: expected [B, V, H]");
  const std::size_t batch = p.dim(0), v = p.dim(1), h = p.dim(2);
  if (v < 2) throw ShapeError("pairwise_offdiag_sum: graph needs at least 2 vertices");
  std::vector<double> out(batch * v * (v - 1) * h);
  const auto pv = p.values();
  const auto qv = q.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < v; ++i)
      for (std::size_t k = 0; k + 1 < v; ++k) {
        const std::size_t j = k < i ? k : k + 1;
        const double* pi = pv.data() + (b * v + i) * h;
        const double* qj = qv.data() + (b * v + j) * h;
        double* dst = out.data() + ((b * v + i) * (v - 1) + k) * h;
        for (std::size_t d = 0; d < h; ++d) dst[d] = pi[d] + qj[d];
      }
  return make_result("pairwise_offdiag_sum", {batch, v, v - 1, h}, std::move(out), {p, q},
                     [p, q, batch, v, h](Node& self) {
                       const auto& g = self.grad;
                       std::vector<double>* gp = p.requires_grad() ? &p.node()->ensure_grad() : nullptr;
                       std::vector<double>* gq = q.requires_grad() ? &q.node()->ensure_grad() : nullptr;
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t i = 0; i < v; ++i)
                           for (std::size_t k = 0; k + 1 < v; ++k) {
                             const std::size_t j = k < i ? k : k + 1;
                             const double* src = g.data() + ((b * v + i) * (v - 1) + k) * h;
                             if (gp) {
                               double* d = gp->data() + (b * v + i) * h;
                               for (std::size_t e = 0; e < h; ++e) d[e] += src[e];
                             }
                             if (gq) {
                               double* d = gq->data() + (b * v + j) * h;
                               for (std::size_t e = 0; e < h; ++e) d[e] += src[e];
                             }
                           }
                     });
}

Tensor sym_inv_sqrt(const Tensor& a, double floor) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) throw ShapeError("sym_inv_sqrt: expected a square matrix");
  if (!(floor > 0.0)) throw ShapeError("sym_inv_sqrt: floor must be positive");
  const std::size_t n = a.dim(0);
  Matrix s = to_matrix(a);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) s(i, j) = s(j, i) = 0.5 * (s(i, j) + s(j, i));
  auto eig = linalg::sym_eig(s);
  if (eig.values.back() < -floor) {
    std::ostringstream os;
    os << "sym_inv_sqrt: eigenvalue " << eig.values.back() << " below -" << floor;
    throw NumericError(os.str());
  }
  std::vector<double> f(n), fp(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lam = eig.values[i];
    if (lam > floor) {
      f[i] = 1.0 / std::sqrt(lam);
      fp[i] = -0.5 * f[i] / lam;
    } else {
      f[i] = 1.0 / std::sqrt(floor);
      fp[i] = 0.0;
    }
  }
  const Matrix& u = eig.vectors;
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double uik = u(i, k) * f[k];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += uik * u(j, k);
    }
  auto y = make_result("sym_inv_sqrt", {n, n}, std::move(out), {a}, nullptr);
  if (y.requires_grad()) {
    y.node()->backward = [a, u, lam = eig.values, f, fp, n](Node& self) {
      // Daleckii-Krein: dF = U (K ∘ (Uᵀ dS U)) Uᵀ with divided differences K.
      Matrix g(n, n);
      std::copy(self.grad.begin(), self.grad.end(), g.data.begin());
      Matrix gbar = linalg::multiply(linalg::multiply(linalg::transpose(u), g), u);
      const double scale_l = std::max(std::abs(lam.front()), std::abs(lam.back()));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double d = lam[i] - lam[j];
          const double k = std::abs(d) > 1e-10 * scale_l ? (f[i] - f[j]) / d : 0.5 * (fp[i] + fp[j]);
          gbar(i, j) *= k;
        }
      Matrix gs = linalg::multiply(linalg::multiply(u, gbar), linalg::transpose(u));
      with_grad(a, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += 0.5 * (gs(i, j) + gs(j, i));
      });
    };
  }
  return y;
}

Tensor nuclear_norm(const Tensor& m) {
  const auto dec = linalg::svd(to_matrix(m));
  const double total = std::accumulate(dec.s.begin(), dec.s.end(), 0.0);
  auto y = make_result("nuclear_norm", {1}, {total}, {m}, nullptr);
  if (y.requires_grad()) {
    y.node()->backward = [m, dec](Node& self) {
      with_grad(m, [&](std::vector<double>& g) {
        const std::size_t rows = dec.u.rows, cols = dec.v.rows, r = dec.s.size();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < r; ++k) s += dec.u(i, k) * dec.v(j, k);
            g[i * cols + j] += self.grad[0] * s;
          }
      });
    };
  }
  return y;
}

SvdResult svd(const Tensor& m) {
  const auto dec = linalg::svd(to_matrix(m));
  return {Tensor::from_values({dec.u.rows, dec.u.cols}, dec.u.data),
          Tensor::from_values({dec.s.size()}, dec.s),
          Tensor::from_values({dec.v.rows, dec.v.cols}, dec.v.data)};
}

}  // namespace dsen::ad
