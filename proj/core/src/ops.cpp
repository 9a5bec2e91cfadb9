#include "devae/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "devae/errors.hpp"

namespace devae::nn {
namespace {

// Neumaier summation: loss totals stay accurate to a few ulps, which keeps
// finite-difference probes of the loss meaningful at small step sizes.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    comp_ += std::abs(sum_) >= std::abs(x) ? (sum_ - t) + x : (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstMapVec = Eigen::Map<const Eigen::RowVectorXd>;
using MapVec = Eigen::Map<Eigen::RowVectorXd>;

ConstMapMat as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMat(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapMat as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

std::size_t batch_of(const Tensor& t) {
  require(t.rank() >= 1 && t.dim(0) > 0, "batched tensor needs a nonempty leading axis");
  return t.dim(0);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                      shape_to_string(b.shape()));
}

// Binary elementwise op with explicit derivative callbacks.
template <typename F, typename DA, typename DB>
Var elementwise2(Tape& tape, const char* name, Var a, Var b, F f, DA da, DB db) {
  require_same_shape(tape.value(a), tape.value(b), name);
  return tape.record(
      name, {a, b},
      [f](Tape::Inputs in, Tensor& out) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        if (out.shape() != x.shape()) out = Tensor(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
      },
      [da, db](Tape::Inputs in, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        if (gin[0]) {
          for (std::size_t i = 0; i < x.size(); ++i) (*gin[0])[i] += g[i] * da(x[i], y[i]);
        }
        if (gin[1]) {
          for (std::size_t i = 0; i < x.size(); ++i) (*gin[1])[i] += g[i] * db(x[i], y[i]);
        }
      });
}

struct ConvDims {
  std::size_t batch, in_ch, in_h, in_w, out_ch, out_h, out_w, kh, kw;
};

// Shared index loop of conv2d. `visit(b, oc, oy, ox, c, iy, ix, ky, kx)` is called for
// every in-bounds (output, input, kernel) triple.
template <typename Visit>
void conv_loop(const ConvDims& d, ConvGeometry g, Visit visit) {
  const auto pad = static_cast<long>(g.pad);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t oc = 0; oc < d.out_ch; ++oc)
      for (std::size_t oy = 0; oy < d.out_h; ++oy)
        for (std::size_t ox = 0; ox < d.out_w; ++ox)
          for (std::size_t c = 0; c < d.in_ch; ++c)
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
              const long iy = static_cast<long>(oy * g.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<long>(d.in_h)) continue;
              for (std::size_t kx = 0; kx < d.kw; ++kx) {
                const long ix = static_cast<long>(ox * g.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<long>(d.in_w)) continue;
                visit(b, oc, oy, ox, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), ky, kx);
              }
            }
}

inline std::size_t idx4(std::size_t a, std::size_t b, std::size_t c, std::size_t d, std::size_t B, std::size_t C,
                        std::size_t D) {
  return ((a * B + b) * C + c) * D + d;
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var affine(Tape& tape, Var x, Var weights, Var bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(weights);
  const Tensor& bv = tape.value(bias);
  require(xv.rank() == 2 && wv.rank() == 2 && bv.rank() == 1, "affine: expected x[B,in], W[in,out], b[out]");
  require(xv.dim(1) == wv.dim(0) && wv.dim(1) == bv.dim(0),
          "affine: shape mismatch x" + shape_to_string(xv.shape()) + " W" + shape_to_string(wv.shape()) + " b" +
              shape_to_string(bv.shape()));
  return tape.record(
      "affine", {x, weights, bias},
      [](Tape::Inputs in, Tensor& out) {
        const Tensor& xv = *in[0];
        const Tensor& wv = *in[1];
        const std::size_t batch = xv.dim(0), n_in = wv.dim(0), n_out = wv.dim(1);
        if (out.shape() != Shape{batch, n_out}) out = Tensor({batch, n_out});
        auto y = as_matrix(out, batch, n_out);
        y.noalias() = as_matrix(xv, batch, n_in) * as_matrix(wv, n_in, n_out);
        y.rowwise() += ConstMapVec(in[2]->data(), static_cast<Eigen::Index>(n_out));
      },
      [](Tape::Inputs in, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        const Tensor& xv = *in[0];
        const Tensor& wv = *in[1];
        const std::size_t batch = xv.dim(0), n_in = wv.dim(0), n_out = wv.dim(1);
        const auto gm = as_matrix(g, batch, n_out);
        if (gin[0]) as_matrix(*gin[0], batch, n_in).noalias() += gm * as_matrix(wv, n_in, n_out).transpose();
        if (gin[1]) as_matrix(*gin[1], n_in, n_out).noalias() += as_matrix(xv, batch, n_in).transpose() * gm;
        if (gin[2]) MapVec(gin[2]->data(), static_cast<Eigen::Index>(n_out)) += gm.colwise().sum();
      });
}

Var matmul(Tape& tape, Var x, Var weights) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(weights);
  require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(0), "matmul: shape mismatch");
  return tape.record(
      "matmul", {x, weights},
      [](Tape::Inputs in, Tensor& out) {
        const std::size_t batch = in[0]->dim(0), n_in = in[1]->dim(0), n_out = in[1]->dim(1);
        if (out.shape() != Shape{batch, n_out}) out = Tensor({batch, n_out});
        as_matrix(out, batch, n_out).noalias() = as_matrix(*in[0], batch, n_in) * as_matrix(*in[1], n_in, n_out);
      },
      [](Tape::Inputs in, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        const std::size_t batch = in[0]->dim(0), n_in = in[1]->dim(0), n_out = in[1]->dim(1);
        const auto gm = as_matrix(g, batch, n_out);
        if (gin[0]) as_matrix(*gin[0], batch, n_in).noalias() += gm * as_matrix(*in[1], n_in, n_out).transpose();
        if (gin[1]) as_matrix(*gin[1], n_in, n_out).noalias() += as_matrix(*in[0], batch, n_in).transpose() * gm;
      });
}

Var conv2d(Tape& tape, Var x, Var kernel, Var bias, ConvGeometry geom) {
  const Tensor& xv = tape.value(x);
  const Tensor& kv = tape.value(kernel);
  const Tensor& bv = tape.value(bias);
  require(xv.rank() == 4 && kv.rank() == 4 && bv.rank() == 1, "conv2d: expected x[B,C,H,W], k[OC,C,KH,KW], b[OC]");
  require(kv.dim(1) == xv.dim(1) && bv.dim(0) == kv.dim(0), "conv2d: channel mismatch");
  require(geom.stride > 0, "conv2d: stride must be positive");
  for (std::size_t axis : {2u, 3u}) {
    const std::size_t extent = xv.dim(axis) + 2 * geom.pad;
    const std::size_t k = kv.dim(axis);
    require(extent >= k && (extent - k) % geom.stride == 0,
            "conv2d: spatial extent " + std::to_string(xv.dim(axis)) + " incompatible with kernel " +
                std::to_string(k) + ", stride " + std::to_string(geom.stride) + ", pad " + std::to_string(geom.pad));
  }
  auto dims = [geom](const Tensor& xv, const Tensor& kv) {
    return ConvDims{xv.dim(0),
                    xv.dim(1),
                    xv.dim(2),
                    xv.dim(3),
                    kv.dim(0),
                    (xv.dim(2) + 2 * geom.pad - kv.dim(2)) / geom.stride + 1,
                    (xv.dim(3) + 2 * geom.pad - kv.dim(3)) / geom.stride + 1,
                    kv.dim(2),
                    kv.dim(3)};
  };
  return tape.record(
      "conv2d", {x, kernel, bias},
      [geom, dims](Tape::Inputs in, Tensor& out) {
        const Tensor& xv = *in[0];
        const Tensor& kv = *in[1];
        const Tensor& bv = *in[2];
        const ConvDims d = dims(xv, kv);
        out = Tensor({d.batch, d.out_ch, d.out_h, d.out_w});
        for (std::size_t b = 0; b < d.batch; ++b)
          for (std::size_t oc = 0; oc < d.out_ch; ++oc)
            for (std::size_t p = 0; p < d.out_h * d.out_w; ++p) out[(b * d.out_ch + oc) * d.out_h * d.out_w + p] = bv[oc];
        conv_loop(d, geom, [&](auto b, auto oc, auto oy, auto ox, auto c, auto iy, auto ix, auto ky, auto kx) {
          out[idx4(b, oc, oy, ox, d.out_ch, d.out_h, d.out_w)] +=
              xv[idx4(b, c, iy, ix, d.in_ch, d.in_h, d.in_w)] * kv[idx4(oc, c, ky, kx, d.in_ch, d.kh, d.kw)];
        });
      },
      [geom, dims](Tape::Inputs in, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        const Tensor& xv = *in[0];
        const Tensor& kv = *in[1];
        const ConvDims d = dims(xv, kv);
        conv_loop(d, geom, [&](auto b, auto oc, auto oy, auto ox, auto c, auto iy, auto ix, auto ky, auto kx) {
          const double go = g[idx4(b, oc, oy, ox, d.out_ch, d.out_h, d.out_w)];
          if (gin[0]) (*gin[0])[idx4(b, c, iy, ix, d.in_ch, d.in_h, d.in_w)] += go * kv[idx4(oc, c, ky, kx, d.in_ch, d.kh, d.kw)];
          if (gin[1]) (*gin[1])[idx4(oc, c, ky, kx, d.in_ch, d.kh, d.kw)] += go * xv[idx4(b, c, iy, ix, d.in_ch, d.in_h, d.in_w)];
        });
        if (gin[2]) {
          for (std::size_t b = 0; b < d.batch; ++b)
            for (std::size_t oc = 0; oc < d.out_ch; ++oc)
              for (std::size_t p = 0; p < d.out_h * d.out_w; ++p)
                (*gin[2])[oc] += g[(b * d.out_ch + oc) * d.out_h * d.out_w + p];
        }
      });
}

Var deconv2d(Tape& tape, Var x, Var kernel, Var bias, ConvGeometry geom) {
  const Tensor& xv = tape.value(x);
  const Tensor& kv = tape.value(kernel);
  const Tensor& bv = tape.value(bias);
  require(xv.rank() == 4 && kv.rank() == 4 && bv.rank() == 1, "deconv2d: expected x[B,IC,H,W], k[IC,OC,KH,KW], b[OC]");
  require(kv.dim(0) == xv.dim(1) && bv.dim(0) == kv.dim(1), "deconv2d: channel mismatch");
  require(geom.stride > 0, "deconv2d: stride must be positive");
  for (std::size_t axis : {2u, 3u}) {
    require((xv.dim(axis) - 1) * geom.stride + kv.dim(axis) > 2 * geom.pad, "deconv2d: output extent would be empty");
  }
  // In conv_loop terms the deconv output is the conv "input" and vice versa.
  auto dims = [geom](const Tensor& xv, const Tensor& kv) {
    return ConvDims{xv.dim(0),
                    kv.dim(1),
                    (xv.dim(2) - 1) * geom.stride + kv.dim(2) - 2 * geom.pad,
                    (xv.dim(3) - 1) * geom.stride + kv.dim(3) - 2 * geom.pad,
                    kv.dim(0),
                    xv.dim(2),
                    xv.dim(3),
                    kv.dim(2),
                    kv.dim(3)};
  };
  return tape.record(
      "deconv2d", {x, kernel, bias},
      [geom, dims](Tape::Inputs in, Tensor& out) {
        const Tensor& xv = *in[0];
        const Tensor& kv = *in[1];
        const Tensor& bv = *in[2];
        const ConvDims d = dims(xv, kv);
        out = Tensor({d.batch, d.in_ch, d.in_h, d.in_w});
        for (std::size_t b = 0; b < d.batch; ++b)
          for (std::size_t c = 0; c < d.in_ch; ++c)
            for (std::size_t p = 0; p < d.in_h * d.in_w; ++p) out[(b * d.in_ch + c) * d.in_h * d.in_w + p] = bv[c];
        // kernel layout [IC=d.out_ch, OC=d.in_ch, KH, KW]
        conv_loop(d, geom, [&](auto b, auto ic, auto oy, auto ox, auto c, auto iy, auto ix, auto ky, auto kx) {
          out[idx4(b, c, iy, ix, d.in_ch, d.in_h, d.in_w)] +=
              xv[idx4(b, ic, oy, ox, d.out_ch, d.out_h, d.out_w)] * kv[idx4(ic, c, ky, kx, d.in_ch, d.kh, d.kw)];
        });
      },
      [geom, dims](Tape::Inputs in, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        const Tensor& xv = *in[0];
        const Tensor& kv = *in[1];
        const ConvDims d = dims(xv, kv);
        conv_loop(d, geom, [&](auto b, auto ic, auto oy, auto ox, auto c, auto iy, auto ix, auto ky, auto kx) {
          const double go = g[idx4(b, c, iy, ix, d.in_ch, d.in_h, d.in_w)];
          if (gin[0]) (*gin[0])[idx4(b, ic, oy, ox, d.out_ch, d.out_h, d.out_w)] += go * kv[idx4(ic, c, ky, kx, d.in_ch, d.kh, d.kw)];
          if (gin[1]) (*gin[1])[idx4(ic, c, ky, kx, d.in_ch, d.kh, d.kw)] += go * xv[idx4(b, ic, oy, ox, d.out_ch, d.out_h, d.out_w)];
        });
        if (gin[2]) {
          for (std::size_t b = 0; b < d.batch; ++b)
            for (std::size_t c = 0; c < d.in_ch; ++c)
              for (std::size_t p = 0; p < d.in_h * d.in_w; ++p)
                (*gin[2])[c] += g[(b * d.in_ch + c) * d.in_h * d.in_w + p];
        }
      });
}

Var relu(Tape& tape, Var x) {
  return tape.record(
      "relu", {x},
      [](Tape::Inputs in, Tensor& out) {
        const Tensor& xv = *in[0];
        if (out.shape() != xv.shape()) out = Tensor(xv.shape());
        for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
      },
      [](Tape::Inputs in, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        if (!gin[0]) return;
        const Tensor& xv = *in[0];
        for (std::size_t i = 0; i < xv.size(); ++i)
          if (xv[i] > 0.0) (*gin[0])[i] += g[i];
      });
}

Var exp(Tape& tape, Var x) {
  return tape.record(
      "exp", {x},
      [](Tape::Inputs in, Tensor& out) {
        const Tensor& xv = *in[0];
        if (out.shape() != xv.shape()) out = Tensor(xv.shape());
        for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::exp(xv[i]);
      },
      [](Tape::Inputs, const Tensor& out, const Tensor& g, Tape::GradInputs gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < out.size(); ++i) (*gin[0])[i] += g[i] * out[i];
      });
}

Var scale(Tape& tape, Var x, double factor) {
  return tape.record(
      "scale", {x},
      [factor](Tape::Inputs in, Tensor& out) {
        const Tensor& xv = *in[0];
        if (out.shape() != xv.shape()) out = Tensor(xv.shape());
        for (std::size_t i = 0; i < xv.size(); ++i) out[i] = factor * xv[i];
      },
      [factor](Tape::Inputs, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += factor * g[i];
      });
}

Var add(Tape& tape, Var a, Var b) {
  return elementwise2(
      tape, "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var mul(Tape& tape, Var a, Var b) {
  return elementwise2(
      tape, "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var add_row(Tape& tape, Var x, Var row) {
  const Tensor& xv = tape.value(x);
  const Tensor& rv = tape.value(row);
  require(xv.rank() == 2 && rv.rank() == 1 && xv.dim(1) == rv.dim(0), "add_row: shape mismatch");
  return tape.record(
      "add_row", {x, row},
      [](Tape::Inputs in, Tensor& out) {
        const Tensor& xv = *in[0];
        const Tensor& rv = *in[1];
        if (out.shape() != xv.shape()) out = Tensor(xv.shape());
        const std::size_t d = rv.size();
        for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + rv[i % d];
      },
      [](Tape::Inputs in, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        const std::size_t d = in[1]->size();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (gin[0]) (*gin[0])[i] += g[i];
          if (gin[1]) (*gin[1])[i % d] += g[i];
        }
      });
}

Var mul_row(Tape& tape, Var x, Var row) {
  const Tensor& xv = tape.value(x);
  const Tensor& rv = tape.value(row);
  require(xv.rank() == 2 && rv.rank() == 1 && xv.dim(1) == rv.dim(0), "mul_row: shape mismatch");
  return tape.record(
      "mul_row", {x, row},
      [](Tape::Inputs in, Tensor& out) {
        const Tensor& xv = *in[0];
        const Tensor& rv = *in[1];
        if (out.shape() != xv.shape()) out = Tensor(xv.shape());
        const std::size_t d = rv.size();
        for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * rv[i % d];
      },
      [](Tape::Inputs in, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        const Tensor& xv = *in[0];
        const Tensor& rv = *in[1];
        const std::size_t d = rv.size();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (gin[0]) (*gin[0])[i] += g[i] * rv[i % d];
          if (gin[1]) (*gin[1])[i % d] += g[i] * xv[i];
        }
      });
}

Var reshape(Tape& tape, Var x, Shape shape) {
  require(shape_size(shape) == tape.value(x).size(), "reshape: size mismatch");
  return tape.record(
      "reshape", {x},
      [shape](Tape::Inputs in, Tensor& out) {
        out = *in[0];
        out.reshape(shape);
      },
      [](Tape::Inputs, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
      });
}

Var slice_cols(Tape& tape, Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = tape.value(x);
  require(xv.rank() == 2 && begin + count <= xv.dim(1), "slice_cols: range out of bounds");
  return tape.record(
      "slice_cols", {x},
      [begin, count](Tape::Inputs in, Tensor& out) {
        const Tensor& xv = *in[0];
        const std::size_t rows = xv.dim(0);
        if (out.shape() != Shape{rows, count}) out = Tensor({rows, count});
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < count; ++c) out.at(r, c) = xv.at(r, begin + c);
      },
      [begin, count](Tape::Inputs in, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        if (!gin[0]) return;
        const std::size_t rows = in[0]->dim(0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < count; ++c) gin[0]->at(r, begin + c) += g.at(r, c);
      });
}

Var concat_cols(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(0) == bv.dim(0), "concat_cols: row mismatch");
  return tape.record(
      "concat_cols", {a, b},
      [](Tape::Inputs in, Tensor& out) {
        const Tensor& av = *in[0];
        const Tensor& bv = *in[1];
        const std::size_t rows = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
        if (out.shape() != Shape{rows, ca + cb}) out = Tensor({rows, ca + cb});
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < ca; ++c) out.at(r, c) = av.at(r, c);
          for (std::size_t c = 0; c < cb; ++c) out.at(r, ca + c) = bv.at(r, c);
        }
      },
      [](Tape::Inputs in, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        const std::size_t rows = in[0]->dim(0), ca = in[0]->dim(1), cb = in[1]->dim(1);
        for (std::size_t r = 0; r < rows; ++r) {
          if (gin[0])
            for (std::size_t c = 0; c < ca; ++c) gin[0]->at(r, c) += g.at(r, c);
          if (gin[1])
            for (std::size_t c = 0; c < cb; ++c) gin[1]->at(r, c) += g.at(r, ca + c);
        }
      });
}

Var weighted_sum(Tape& tape, std::span<const Var> terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) throw UsageError("weighted_sum: terms and weights differ in length");
  for (Var t : terms) require(tape.value(t).size() == 1, "weighted_sum: terms must be scalars");
  std::vector<double> w(weights.begin(), weights.end());
  return tape.record(
      "weighted_sum", std::vector<Var>(terms.begin(), terms.end()),
      [w](Tape::Inputs in, Tensor& out) {
        double total = 0.0;
        for (std::size_t k = 0; k < in.size(); ++k) total += w[k] * (*in[k])[0];
        out = Tensor({1}, total);
      },
      [w](Tape::Inputs, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        for (std::size_t k = 0; k < gin.size(); ++k)
          if (gin[k]) (*gin[k])[0] += w[k] * g[0];
      });
}

double bce_with_logits_value(std::span<const double> logits, std::span<const double> targets, std::size_t batch) {
  CompensatedSum total;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double l = logits[i];
    total.add(std::max(l, 0.0) - l * targets[i] + std::log1p(std::exp(-std::abs(l))));
  }
  return total.value() / static_cast<double>(batch);
}

double squared_error_value(std::span<const double> recon, std::span<const double> target, std::size_t batch) {
  CompensatedSum total;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const double diff = recon[i] - target[i];
    total.add(diff * diff);
  }
  return total.value() / static_cast<double>(batch);
}

Var bce_with_logits(Tape& tape, Var logits, Var targets) {
  const Tensor& lv = tape.value(logits);
  const Tensor& tv = tape.value(targets);
  require_same_shape(lv, tv, "bce_with_logits");
  batch_of(lv);
  for (double t : tv.values()) {
    if (!(t >= 0.0 && t <= 1.0)) throw DataError("bce_with_logits: target " + std::to_string(t) + " outside [0,1]");
  }
  return tape.record(
      "bce_with_logits", {logits, targets},
      [](Tape::Inputs in, Tensor& out) {
        out = Tensor({1}, bce_with_logits_value(in[0]->values(), in[1]->values(), in[0]->dim(0)));
      },
      [](Tape::Inputs in, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        const Tensor& lv = *in[0];
        const Tensor& tv = *in[1];
        const double s = g[0] / static_cast<double>(lv.dim(0));
        if (gin[0])
          for (std::size_t i = 0; i < lv.size(); ++i) (*gin[0])[i] += s * (sigmoid(lv[i]) - tv[i]);
        if (gin[1])
          for (std::size_t i = 0; i < lv.size(); ++i) (*gin[1])[i] -= s * lv[i];
      });
}

Var squared_error(Tape& tape, Var recon, Var target) {
  require_same_shape(tape.value(recon), tape.value(target), "squared_error");
  batch_of(tape.value(recon));
  return tape.record(
      "squared_error", {recon, target},
      [](Tape::Inputs in, Tensor& out) {
        out = Tensor({1}, squared_error_value(in[0]->values(), in[1]->values(), in[0]->dim(0)));
      },
      [](Tape::Inputs in, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        const Tensor& rv = *in[0];
        const Tensor& tv = *in[1];
        const double s = 2.0 * g[0] / static_cast<double>(rv.dim(0));
        for (std::size_t i = 0; i < rv.size(); ++i) {
          const double diff = rv[i] - tv[i];
          if (gin[0]) (*gin[0])[i] += s * diff;
          if (gin[1]) (*gin[1])[i] -= s * diff;
        }
      });
}

Var gaussian_kl(Tape& tape, Var mean, Var logvar) {
  require_same_shape(tape.value(mean), tape.value(logvar), "gaussian_kl");
  require(tape.value(mean).rank() == 2, "gaussian_kl: expected [B,d]");
  batch_of(tape.value(mean));
  return tape.record(
      "gaussian_kl", {mean, logvar},
      [](Tape::Inputs in, Tensor& out) {
        const Tensor& mu = *in[0];
        const Tensor& lv = *in[1];
        CompensatedSum total;
        for (std::size_t i = 0; i < mu.size(); ++i) total.add(0.5 * (mu[i] * mu[i] + std::exp(lv[i]) - 1.0 - lv[i]));
        out = Tensor({1}, total.value() / static_cast<double>(mu.dim(0)));
      },
      [](Tape::Inputs in, const Tensor&, const Tensor& g, Tape::GradInputs gin) {
        const Tensor& mu = *in[0];
        const Tensor& lv = *in[1];
        const double s = g[0] / static_cast<double>(mu.dim(0));
        for (std::size_t i = 0; i < mu.size(); ++i) {
          if (gin[0]) (*gin[0])[i] += s * mu[i];
          if (gin[1]) (*gin[1])[i] += s * 0.5 * (std::exp(lv[i]) - 1.0);
        }
      });
}

}  // namespace devae::nn
