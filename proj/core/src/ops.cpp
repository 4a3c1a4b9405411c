#include "vtc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "vtc/errors.hpp"

namespace vtc::ops {
namespace {

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw Error("operation on an unbound Var");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw Error("operands recorded on different tapes");
  return tape_of(a);
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + " shape mismatch: " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

void accumulate(Tape& t, Var v, const Matrix& g) {
  if (Matrix* target = t.grad_target(v)) *target += g;
}

template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Tape& t = tape_of(a);
  Matrix out = t.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(out[i]);
  return t.record(std::move(out), t.requires_grad(a),
                  [a, deriv](Tape& t, const Matrix& y, const Matrix& g) {
                    Matrix* ga = t.grad_target(a);
                    if (!ga) return;
                    const Matrix& x = t.value(a);
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * deriv(x[i], y[i]);
                  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Matrix out = vtc::matmul(t.value(a), t.value(b));
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a)) *ga += vtc::matmul_nt(g, t.value(b));
    if (Matrix* gb = t.grad_target(b)) *gb += vtc::matmul_tn(t.value(a), g);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Matrix out = vtc::matmul_nt(t.value(a), t.value(b));
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a)) *ga += vtc::matmul(g, t.value(b));
    if (Matrix* gb = t.grad_target(b)) *gb += vtc::matmul_tn(g, t.value(a));
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  return t.record(t.value(a).transposed(), t.requires_grad(a),
                  [a](Tape& t, const Matrix&, const Matrix& g) { accumulate(t, a, g.transposed()); });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", t.value(a), t.value(b));
  Matrix out = t.value(a);
  out += t.value(b);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", t.value(a), t.value(b));
  Matrix out = t.value(a);
  const Matrix& bv = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    accumulate(t, a, g);
    if (Matrix* gb = t.grad_target(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("mul", t.value(a), t.value(b));
  Matrix out = t.value(a);
  const Matrix& bv = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a)) {
      const Matrix& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Matrix* gb = t.grad_target(b)) {
      const Matrix& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  const Matrix& av = t.value(a);
  const Matrix& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw DimensionError("add_row expects a 1x" + std::to_string(av.cols()) + " row, got " +
                         rv.shape_string());
  }
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += rv[c];
  const bool rg = t.requires_grad(a) || t.requires_grad(row);
  return t.record(std::move(out), rg, [a, row](Tape& t, const Matrix&, const Matrix& g) {
    accumulate(t, a, g);
    if (Matrix* gr = t.grad_target(row))
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) (*gr)[c] += g(r, c);
  });
}

Var add_constant(Var a, double c) {
  Tape& t = tape_of(a);
  Matrix out = t.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
  return t.record(std::move(out), t.requires_grad(a),
                  [a](Tape& t, const Matrix&, const Matrix& g) { accumulate(t, a, g); });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  Matrix out = t.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return t.record(std::move(out), t.requires_grad(a), [a, s](Tape& t, const Matrix&, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
  });
}

Var scale_by(Var a, Var s) {
  Tape& t = tape_of(a, s);
  const Matrix& sv = t.value(s);
  if (sv.rows() != 1 || sv.cols() != 1) {
    throw DimensionError("scale_by expects a 1x1 scale, got " + sv.shape_string());
  }
  const double k = sv[0];
  Matrix out = t.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= k;
  const bool rg = t.requires_grad(a) || t.requires_grad(s);
  return t.record(std::move(out), rg, [a, s](Tape& t, const Matrix&, const Matrix& g) {
    const double k = t.value(s)[0];
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += k * g[i];
    if (Matrix* gs = t.grad_target(s)) {
      const Matrix& av = t.value(a);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      (*gs)[0] += acc;
    }
  });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  const Matrix& v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0)) throw DegenerateInputError("log of a non-positive value");
  }
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softmax_rows(Var x) {
  Tape& t = tape_of(x);
  return t.record(vtc::softmax_rows(t.value(x)), t.requires_grad(x),
                  [x](Tape& t, const Matrix& p, const Matrix& g) {
                    Matrix* gx = t.grad_target(x);
                    if (!gx) return;
                    for (std::size_t r = 0; r < p.rows(); ++r) {
                      const double d = dot(p.row(r), g.row(r));
                      for (std::size_t c = 0; c < p.cols(); ++c) (*gx)(r, c) += p(r, c) * (g(r, c) - d);
                    }
                  });
}

Var log_softmax_rows(Var x) {
  Tape& t = tape_of(x);
  const Matrix& xv = t.value(x);
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (double v : in) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < in.size(); ++c) out(r, c) = in[c] - lse;
  }
  return t.record(std::move(out), t.requires_grad(x), [x](Tape& t, const Matrix& lp, const Matrix& g) {
    Matrix* gx = t.grad_target(x);
    if (!gx) return;
    for (std::size_t r = 0; r < lp.rows(); ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < lp.cols(); ++c) gsum += g(r, c);
      for (std::size_t c = 0; c < lp.cols(); ++c) (*gx)(r, c) += g(r, c) - std::exp(lp(r, c)) * gsum;
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x, gain);
  tape_of(x, bias);
  const Matrix& xv = t.value(x);
  const Matrix& gv = t.value(gain);
  const Matrix& bv = t.value(bias);
  const std::size_t n = xv.cols();
  if (gv.rows() != 1 || gv.cols() != n || !gv.same_shape(bv)) {
    throw DimensionError("layer_norm gain/bias " + gv.shape_string() + "/" + bv.shape_string() +
                         " do not match width " + std::to_string(n));
  }
  auto xhat = std::make_shared<Matrix>(xv.rows(), n);
  auto inv_std = std::make_shared<std::vector<double>>(xv.rows());
  Matrix out(xv.rows(), n);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto row = xv.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mean) * is;
      (*xhat)(r, c) = h;
      out(r, c) = h * gv[c] + bv[c];
    }
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(bias);
  return t.record(std::move(out), rg,
                  [x, gain, bias, xhat, inv_std](Tape& t, const Matrix&, const Matrix& g) {
                    const Matrix& gv = t.value(gain);
                    const std::size_t n = g.cols();
                    if (Matrix* gg = t.grad_target(gain))
                      for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < n; ++c) (*gg)[c] += g(r, c) * (*xhat)(r, c);
                    if (Matrix* gb = t.grad_target(bias))
                      for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < n; ++c) (*gb)[c] += g(r, c);
                    Matrix* gx = t.grad_target(x);
                    if (!gx) return;
                    std::vector<double> dh(n);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      double mean_dh = 0.0;
                      double mean_dh_h = 0.0;
                      for (std::size_t c = 0; c < n; ++c) {
                        dh[c] = g(r, c) * gv[c];
                        mean_dh += dh[c];
                        mean_dh_h += dh[c] * (*xhat)(r, c);
                      }
                      mean_dh /= static_cast<double>(n);
                      mean_dh_h /= static_cast<double>(n);
                      for (std::size_t c = 0; c < n; ++c)
                        (*gx)(r, c) += (*inv_std)[r] * (dh[c] - mean_dh - (*xhat)(r, c) * mean_dh_h);
                    }
                  });
}

Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Seed mask_seed) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout rate must be in [0,1), got " + std::to_string(rate));
  }
  Matrix mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double u = unit_from_bits(mix_seed(mask_seed, i));
    mask[i] = u >= rate ? keep_scale : 0.0;
  }
  return mask;
}

Var dropout(Var x, double rate, Seed mask_seed) {
  Matrix mask = dropout_mask(x.rows(), x.cols(), rate, mask_seed);
  if (rate == 0.0) return x;
  Tape& t = tape_of(x);
  Var m = t.constant(std::move(mask));
  return mul(x, m);
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of zero parts");
  Tape& t = tape_of(parts[0]);
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  bool rg = false;
  for (Var p : parts) {
    tape_of(parts[0], p);
    if (p.cols() != cols) {
      throw DimensionError("concat_rows width mismatch: " + std::to_string(cols) + " vs " +
                           std::to_string(p.cols()));
    }
    rows += p.rows();
    rg = rg || t.requires_grad(p);
  }
  Matrix out(rows, cols);
  std::size_t at = 0;
  for (Var p : parts) {
    const Matrix& v = t.value(p);
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + at * cols);
    at += v.rows();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return t.record(std::move(out), rg, [saved](Tape& t, const Matrix&, const Matrix& g) {
    std::size_t at = 0;
    for (Var p : saved) {
      const std::size_t r = p.rows();
      if (Matrix* gp = t.grad_target(p)) {
        auto src = g.data().subspan(at * g.cols(), r * g.cols());
        auto dst = gp->data();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
      }
      at += r;
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const Matrix& av = t.value(a);
  if (begin + count > av.rows()) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + av.shape_string());
  }
  const std::size_t cols = av.cols();
  Matrix out(count, cols,
             std::vector<double>(av.data().begin() + begin * cols,
                                 av.data().begin() + (begin + count) * cols));
  return t.record(std::move(out), t.requires_grad(a), [a, begin](Tape& t, const Matrix&, const Matrix& g) {
    Matrix* ga = t.grad_target(a);
    if (!ga) return;
    auto dst = ga->data().subspan(begin * g.cols(), g.size());
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = t.value(a);
  if (av.rows() == 0) throw DegenerateInputError("mean_rows of an empty matrix");
  Matrix out(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out[c] += av(r, c);
  const double inv = 1.0 / static_cast<double>(av.rows());
  for (std::size_t c = 0; c < av.cols(); ++c) out[c] *= inv;
  return t.record(std::move(out), t.requires_grad(a), [a, inv](Tape& t, const Matrix&, const Matrix& g) {
    Matrix* ga = t.grad_target(a);
    if (!ga) return;
    for (std::size_t r = 0; r < ga->rows(); ++r)
      for (std::size_t c = 0; c < ga->cols(); ++c) (*ga)(r, c) += g[c] * inv;
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : t.value(a).data()) s += v;
  return t.record(Matrix(1, 1, s), t.requires_grad(a), [a](Tape& t, const Matrix&, const Matrix& g) {
    Matrix* ga = t.grad_target(a);
    if (!ga) return;
    for (double& v : ga->data()) v += g[0];
  });
}

Var stack_scalars(std::span<const Var> scalars, std::size_t rows, std::size_t cols) {
  if (scalars.size() != rows * cols || scalars.empty()) {
    throw DimensionError("stack_scalars: " + std::to_string(scalars.size()) +
                         " values for shape " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  Tape& t = tape_of(scalars[0]);
  Matrix out(rows, cols);
  bool rg = false;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    tape_of(scalars[0], scalars[i]);
    if (scalars[i].rows() != 1 || scalars[i].cols() != 1) throw DimensionError("stack_scalars expects 1x1 values");
    out[i] = t.value(scalars[i])[0];
    rg = rg || t.requires_grad(scalars[i]);
  }
  std::vector<Var> saved(scalars.begin(), scalars.end());
  return t.record(std::move(out), rg, [saved](Tape& t, const Matrix&, const Matrix& g) {
    for (std::size_t i = 0; i < saved.size(); ++i)
      if (Matrix* gs = t.grad_target(saved[i])) (*gs)[0] += g[i];
  });
}

Var cosine_similarity(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != 1 || !av.same_shape(bv)) {
    throw DimensionError("cosine_similarity expects two 1xn vectors, got " + av.shape_string() +
                         " and " + bv.shape_string());
  }
  const double na = l2_norm(av.data());
  const double nb = l2_norm(bv.data());
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine of a zero vector");
  const double ab = dot(av.data(), bv.data());
  const double cosv = ab / (na * nb);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(Matrix(1, 1, cosv), rg, [a, b, na, nb, cosv](Tape& t, const Matrix&, const Matrix& g) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    // d cos / d a = b/(|a||b|) - cos * a/|a|^2
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < av.size(); ++i)
        (*ga)[i] += g[0] * (bv[i] / (na * nb) - cosv * av[i] / (na * na));
    if (Matrix* gb = t.grad_target(b))
      for (std::size_t i = 0; i < bv.size(); ++i)
        (*gb)[i] += g[0] * (av[i] / (na * nb) - cosv * bv[i] / (nb * nb));
  });
}

Var cosine_distance(Var a, Var b) {
  Var s = cosine_similarity(a, b);
  Tape& t = tape_of(s);
  return t.record(Matrix(1, 1, 1.0 - t.value(s)[0]), t.requires_grad(s),
                  [s](Tape& t, const Matrix&, const Matrix& g) {
                    if (Matrix* gs = t.grad_target(s)) (*gs)[0] -= g[0];
                  });
}

Var embedding_bag(Var table, std::span<const std::pair<std::size_t, double>> rows) {
  Tape& t = tape_of(table);
  const Matrix& tv = t.value(table);
  Matrix out(1, tv.cols());
  for (auto [r, w] : rows) {
    if (r >= tv.rows()) {
      throw DimensionError("embedding row " + std::to_string(r) + " out of " + tv.shape_string());
    }
    auto src = tv.row(r);
    for (std::size_t c = 0; c < src.size(); ++c) out[c] += w * src[c];
  }
  std::vector<std::pair<std::size_t, double>> saved(rows.begin(), rows.end());
  return t.record(std::move(out), t.requires_grad(table),
                  [table, saved](Tape& t, const Matrix&, const Matrix& g) {
                    Matrix* gt = t.grad_target(table);
                    if (!gt) return;
                    for (auto [r, w] : saved) {
                      auto dst = gt->row(r);
                      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += w * g[c];
                    }
                  });
}

Var embedding_rows(Var table, std::span<const std::size_t> rows) {
  Tape& t = tape_of(table);
  const Matrix& tv = t.value(table);
  Matrix out(rows.size(), tv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= tv.rows()) {
      throw DimensionError("embedding row " + std::to_string(rows[i]) + " out of " + tv.shape_string());
    }
    std::copy_n(tv.row(rows[i]).begin(), tv.cols(), out.row(i).begin());
  }
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return t.record(std::move(out), t.requires_grad(table),
                  [table, saved](Tape& t, const Matrix&, const Matrix& g) {
                    Matrix* gt = t.grad_target(table);
                    if (!gt) return;
                    for (std::size_t i = 0; i < saved.size(); ++i) {
                      auto dst = gt->row(saved[i]);
                      auto src = g.row(i);
                      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
                    }
                  });
}

Var attention_core(Var q, Var k, Var v, std::size_t heads, std::vector<Matrix>* probs) {
  Tape& t = tape_of(q, k);
  tape_of(q, v);
  const Matrix& qv = t.value(q);
  const Matrix& kv = t.value(k);
  const Matrix& vv = t.value(v);
  if (kv.rows() != vv.rows()) {
    throw DimensionError("attention keys " + kv.shape_string() + " and values " +
                         vv.shape_string() + " differ in row count");
  }
  if (qv.cols() != kv.cols() || vv.cols() != qv.cols()) {
    throw DimensionError("attention widths differ: q " + qv.shape_string() + ", k " +
                         kv.shape_string() + ", v " + vv.shape_string());
  }
  if (kv.rows() == 0) throw DegenerateInputError("attention over zero keys");
  const std::size_t width = qv.cols();
  if (heads == 0 || width % heads != 0) {
    throw DimensionError("attention width " + std::to_string(width) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t dh = width / heads;
  const std::size_t n = qv.rows();
  const std::size_t m = kv.rows();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  auto saved = std::make_shared<std::vector<Matrix>>();
  saved->reserve(heads);
  Matrix out(n, width);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    Matrix scores(n, m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qv(i, off + c) * kv(j, off + c);
        scores(i, j) = s * inv_sqrt;
      }
    Matrix p = vtc::softmax_rows(scores);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double pij = p(i, j);
        for (std::size_t c = 0; c < dh; ++c) out(i, off + c) += pij * vv(j, off + c);
      }
    saved->push_back(std::move(p));
  }
  if (probs) *probs = *saved;
  const bool rg = t.requires_grad(q) || t.requires_grad(k) || t.requires_grad(v);
  return t.record(std::move(out), rg,
                  [q, k, v, heads, dh, inv_sqrt, saved](Tape& t, const Matrix&, const Matrix& g) {
                    const Matrix& qv = t.value(q);
                    const Matrix& kv = t.value(k);
                    const Matrix& vv = t.value(v);
                    Matrix* gq = t.grad_target(q);
                    Matrix* gk = t.grad_target(k);
                    Matrix* gv = t.grad_target(v);
                    const std::size_t n = qv.rows();
                    const std::size_t m = kv.rows();
                    Matrix dp(n, m);
                    for (std::size_t h = 0; h < heads; ++h) {
                      const std::size_t off = h * dh;
                      const Matrix& p = (*saved)[h];
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j) {
                          double s = 0.0;
                          for (std::size_t c = 0; c < dh; ++c) s += g(i, off + c) * vv(j, off + c);
                          dp(i, j) = s;
                        }
                      if (gv)
                        for (std::size_t i = 0; i < n; ++i)
                          for (std::size_t j = 0; j < m; ++j) {
                            const double pij = p(i, j);
                            for (std::size_t c = 0; c < dh; ++c) (*gv)(j, off + c) += pij * g(i, off + c);
                          }
                      if (!gq && !gk) continue;
                      for (std::size_t i = 0; i < n; ++i) {
                        double rowdot = 0.0;
                        for (std::size_t j = 0; j < m; ++j) rowdot += p(i, j) * dp(i, j);
                        for (std::size_t j = 0; j < m; ++j) {
                          const double ds = p(i, j) * (dp(i, j) - rowdot) * inv_sqrt;
                          if (ds == 0.0) continue;
                          for (std::size_t c = 0; c < dh; ++c) {
                            if (gq) (*gq)(i, off + c) += ds * kv(j, off + c);
                            if (gk) (*gk)(j, off + c) += ds * qv(i, off + c);
                          }
                        }
                      }
                    }
                  });
}

Var weighted_nll(Var log_probs, const Matrix& targets) {
  Tape& t = tape_of(log_probs);
  const Matrix& lp = t.value(log_probs);
  require_same_shape("weighted_nll", lp, targets);
  if (lp.rows() == 0) return t.constant(Matrix(1, 1, 0.0));
  const double inv = 1.0 / static_cast<double>(lp.rows());
  double s = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) s -= targets[i] * lp[i];
  return t.record(Matrix(1, 1, s * inv), t.requires_grad(log_probs),
                  [log_probs, targets, inv](Tape& t, const Matrix&, const Matrix& g) {
                    Matrix* gl = t.grad_target(log_probs);
                    if (!gl) return;
                    for (std::size_t i = 0; i < targets.size(); ++i) (*gl)[i] -= g[0] * targets[i] * inv;
                  });
}

Var diagonal_cross_entropy(Var logits) {
  Tape& t = tape_of(logits);
  const Matrix& lv = t.value(logits);
  if (lv.rows() != lv.cols() || lv.rows() == 0) {
    throw DimensionError("diagonal_cross_entropy needs a square matrix, got " + lv.shape_string());
  }
  const std::size_t s = lv.rows();
  auto probs = std::make_shared<Matrix>(vtc::softmax_rows(lv));
  double loss = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    auto row = lv.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double acc = 0.0;
    for (double v : row) acc += std::exp(v - mx);
    loss += mx + std::log(acc) - lv(i, i);
  }
  const double inv = 1.0 / static_cast<double>(s);
  return t.record(Matrix(1, 1, loss * inv), t.requires_grad(logits),
                  [logits, probs, inv](Tape& t, const Matrix&, const Matrix& g) {
                    Matrix* gl = t.grad_target(logits);
                    if (!gl) return;
                    for (std::size_t i = 0; i < probs->rows(); ++i)
                      for (std::size_t j = 0; j < probs->cols(); ++j)
                        (*gl)(i, j) += g[0] * inv * ((*probs)(i, j) - (i == j ? 1.0 : 0.0));
                  });
}

}  // namespace vtc::ops
