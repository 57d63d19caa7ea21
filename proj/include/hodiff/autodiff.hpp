#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "hodiff/camera.hpp"
#include "hodiff/geometry.hpp"
#include "hodiff/tensor.hpp"

namespace hodiff {

/// Reverse-mode tape over Tensor<S>. One Graph per forward pass; nodes are
/// created in topological order so backward is a reverse sweep. The graph
/// must stay at a fixed address while ops exist (closures capture `this`).
template <typename S>
class Graph {
 public:
  using Var = int;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor<S> v, bool needs_grad = false) {
    return push(std::move(v), needs_grad, nullptr);
  }

  const Tensor<S>& val(Var v) const { return nodes_[v].val; }
  const Tensor<S>& grad(Var v) const {
    if (!nodes_[v].needs_grad) throw std::logic_error("grad of a non-differentiable node");
    return nodes_[v].grad;
  }
  S scalar(Var v) const {
    if (nodes_[v].val.size() != 1) throw std::logic_error("scalar() on non-scalar node");
    return nodes_[v].val.data[0];
  }

  /// Seed d(root)/d(root) = 1 and sweep the tape backwards.
  void backward(Var root) {
    if (nodes_[root].val.size() != 1) throw std::logic_error("backward root must be scalar");
    for (auto& n : nodes_)
      if (n.needs_grad) {
        n.grad = Tensor<S>(n.val.dims);
      }
    if (!nodes_[root].needs_grad)
      throw std::logic_error("backward: root does not depend on any differentiable leaf");
    nodes_[root].grad.data[0] = S(1);
    for (int i = root; i >= 0; --i)
      if (nodes_[i].needs_grad && nodes_[i].backward) nodes_[i].backward();
  }

  // -- elementwise ---------------------------------------------------------

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Tensor<S> out = nodes_[a].val;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] += nodes_[b].val.data[i];
    return binary_ew(a, b, std::move(out), [](S, S) { return S(1); }, [](S, S) { return S(1); });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Tensor<S> out = nodes_[a].val;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] -= nodes_[b].val.data[i];
    return binary_ew(a, b, std::move(out), [](S, S) { return S(1); }, [](S, S) { return S(-1); });
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Tensor<S> out = nodes_[a].val;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] *= nodes_[b].val.data[i];
    return binary_ew(a, b, std::move(out), [](S, S y) { return y; }, [](S x, S) { return x; });
  }

  Var scale(Var a, S c) {
    Tensor<S> out = nodes_[a].val;
    for (S& v : out.data) v *= c;
    Var id = push(std::move(out), nodes_[a].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, a, c] {
        accumulate(a, [&](size_t i) { return nodes_[id].grad.data[i] * c; });
      });
    return id;
  }

  Var silu(Var a) {
    Tensor<S> out = nodes_[a].val;
    for (S& v : out.data) v = v / (S(1) + std::exp(-v));
    Var id = push(std::move(out), nodes_[a].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, a] {
        accumulate(a, [&](size_t i) {
          const S x = nodes_[a].val.data[i];
          const S sg = S(1) / (S(1) + std::exp(-x));
          return nodes_[id].grad.data[i] * sg * (S(1) + x * (S(1) - sg));
        });
      });
    return id;
  }

  // -- linear algebra ------------------------------------------------------

  Var matmul(Var a, Var b) {
    const auto& A = nodes_[a].val;
    const auto& B = nodes_[b].val;
    if (A.cols() != B.rows()) throw std::invalid_argument("matmul: inner dims differ");
    Tensor<S> out({A.rows(), B.cols()});
    out.mat().noalias() = A.mat() * B.mat();
    Var id = push(std::move(out), nodes_[a].needs_grad || nodes_[b].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, a, b] {
        const auto& g = nodes_[id].grad;
        if (nodes_[a].needs_grad)
          nodes_[a].grad.mat().noalias() += g.mat() * nodes_[b].val.mat().transpose();
        if (nodes_[b].needs_grad)
          nodes_[b].grad.mat().noalias() += nodes_[a].val.mat().transpose() * g.mat();
      });
    return id;
  }

  /// Broadcast a 1 x n row (bias) over every row of a.
  Var add_rowvec(Var a, Var bias) {
    const auto& A = nodes_[a].val;
    const auto& B = nodes_[bias].val;
    if (B.rows() != 1 || B.cols() != A.cols()) throw std::invalid_argument("add_rowvec: bad bias");
    Tensor<S> out = A;
    out.mat().rowwise() += B.mat().row(0);
    Var id = push(std::move(out), nodes_[a].needs_grad || nodes_[bias].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, a, bias] {
        const auto& g = nodes_[id].grad;
        if (nodes_[a].needs_grad) nodes_[a].grad.mat().noalias() += g.mat();
        if (nodes_[bias].needs_grad)
          nodes_[bias].grad.mat().row(0).noalias() += g.mat().colwise().sum();
      });
    return id;
  }

  Var concat_cols(Var a, Var b) {
    const auto& A = nodes_[a].val;
    const auto& B = nodes_[b].val;
    if (A.rows() != B.rows()) throw std::invalid_argument("concat_cols: row counts differ");
    Tensor<S> out({A.rows(), A.cols() + B.cols()});
    out.mat().leftCols(A.cols()) = A.mat();
    out.mat().rightCols(B.cols()) = B.mat();
    Var id = push(std::move(out), nodes_[a].needs_grad || nodes_[b].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, a, b] {
        const auto& g = nodes_[id].grad;
        const int ca = nodes_[a].val.cols();
        const int cb = nodes_[b].val.cols();
        if (nodes_[a].needs_grad) nodes_[a].grad.mat().noalias() += g.mat().leftCols(ca);
        if (nodes_[b].needs_grad) nodes_[b].grad.mat().noalias() += g.mat().rightCols(cb);
      });
    return id;
  }

  Var concat_rows(Var a, Var b) {
    const auto& A = nodes_[a].val;
    const auto& B = nodes_[b].val;
    if (A.cols() != B.cols()) throw std::invalid_argument("concat_rows: col counts differ");
    Tensor<S> out({A.rows() + B.rows(), A.cols()});
    out.mat().topRows(A.rows()) = A.mat();
    out.mat().bottomRows(B.rows()) = B.mat();
    Var id = push(std::move(out), nodes_[a].needs_grad || nodes_[b].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, a, b] {
        const auto& g = nodes_[id].grad;
        const int ra = nodes_[a].val.rows();
        const int rb = nodes_[b].val.rows();
        if (nodes_[a].needs_grad) nodes_[a].grad.mat().noalias() += g.mat().topRows(ra);
        if (nodes_[b].needs_grad) nodes_[b].grad.mat().noalias() += g.mat().bottomRows(rb);
      });
    return id;
  }

  Var slice_rows(Var a, int r0, int r1) {
    const auto& A = nodes_[a].val;
    if (r0 < 0 || r1 > A.rows() || r0 > r1) throw std::invalid_argument("slice_rows: bad range");
    Tensor<S> out({r1 - r0, A.cols()});
    out.mat() = A.mat().middleRows(r0, r1 - r0);
    Var id = push(std::move(out), nodes_[a].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, a, r0, r1] {
        nodes_[a].grad.mat().middleRows(r0, r1 - r0).noalias() += nodes_[id].grad.mat();
      });
    return id;
  }

  /// Column-wise max over rows -> 1 x n. Argmax rows cached for backward.
  Var maxpool_rows(Var a) {
    const auto& A = nodes_[a].val;
    const int m = A.rows(), n = A.cols();
    if (m < 1) throw std::invalid_argument("maxpool_rows: empty input");
    Tensor<S> out({1, n});
    auto arg = std::make_shared<std::vector<int>>(n, 0);
    for (int c = 0; c < n; ++c) {
      S best = A.at(0, c);
      for (int r = 1; r < m; ++r)
        if (A.at(r, c) > best) {
          best = A.at(r, c);
          (*arg)[c] = r;
        }
      out.at(0, c) = best;
    }
    Var id = push(std::move(out), nodes_[a].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, a, arg] {
        for (int c = 0; c < nodes_[id].val.cols(); ++c)
          nodes_[a].grad.at((*arg)[c], c) += nodes_[id].grad.at(0, c);
      });
    return id;
  }

  Var tile_rows(Var a, int m) {
    const auto& A = nodes_[a].val;
    if (A.rows() != 1) throw std::invalid_argument("tile_rows: input must be 1 x n");
    Tensor<S> out({m, A.cols()});
    out.mat().rowwise() = A.mat().row(0);
    Var id = push(std::move(out), nodes_[a].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, a] {
        nodes_[a].grad.mat().row(0).noalias() += nodes_[id].grad.mat().colwise().sum();
      });
    return id;
  }

  // -- reductions ----------------------------------------------------------

  Var mean_all(Var a) {
    const auto& A = nodes_[a].val;
    Tensor<S> out({1, 1});
    double acc = 0;
    for (S v : A.data) acc += double(v);
    out.data[0] = static_cast<S>(acc / double(A.size()));
    Var id = push(std::move(out), nodes_[a].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, a] {
        const S g = nodes_[id].grad.data[0] / S(nodes_[a].val.size());
        accumulate(a, [&](size_t) { return g; });
      });
    return id;
  }

  /// Mean squared error over all entries.
  Var mse(Var a, Var b) {
    check_same(a, b, "mse");
    const auto& A = nodes_[a].val;
    const auto& B = nodes_[b].val;
    Tensor<S> out({1, 1});
    double acc = 0;
    for (size_t i = 0; i < A.size(); ++i) {
      const double d = double(A.data[i]) - double(B.data[i]);
      acc += d * d;
    }
    out.data[0] = static_cast<S>(acc / double(A.size()));
    Var id = push(std::move(out), nodes_[a].needs_grad || nodes_[b].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, a, b] {
        const S g = nodes_[id].grad.data[0] * S(2) / S(nodes_[a].val.size());
        if (nodes_[a].needs_grad)
          accumulate(a, [&](size_t i) { return g * (nodes_[a].val.data[i] - nodes_[b].val.data[i]); });
        if (nodes_[b].needs_grad)
          accumulate(b, [&](size_t i) { return g * (nodes_[b].val.data[i] - nodes_[a].val.data[i]); });
      });
    return id;
  }

  /// Mean absolute difference over all entries.
  Var l1_mean(Var a, Var b) {
    check_same(a, b, "l1_mean");
    const auto& A = nodes_[a].val;
    const auto& B = nodes_[b].val;
    Tensor<S> out({1, 1});
    double acc = 0;
    for (size_t i = 0; i < A.size(); ++i) acc += std::abs(double(A.data[i]) - double(B.data[i]));
    out.data[0] = static_cast<S>(acc / double(A.size()));
    Var id = push(std::move(out), nodes_[a].needs_grad || nodes_[b].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, a, b] {
        const S g = nodes_[id].grad.data[0] / S(nodes_[a].val.size());
        auto sgn = [](S x) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); };
        if (nodes_[a].needs_grad)
          accumulate(a, [&](size_t i) { return g * sgn(nodes_[a].val.data[i] - nodes_[b].val.data[i]); });
        if (nodes_[b].needs_grad)
          accumulate(b, [&](size_t i) { return -g * sgn(nodes_[a].val.data[i] - nodes_[b].val.data[i]); });
      });
    return id;
  }

  /// Euclidean norm over all entries (zero-safe subgradient at the origin).
  Var norm2(Var a) {
    const auto& A = nodes_[a].val;
    Tensor<S> out({1, 1});
    double acc = 0;
    for (S v : A.data) acc += double(v) * double(v);
    out.data[0] = static_cast<S>(std::sqrt(acc));
    Var id = push(std::move(out), nodes_[a].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, a] {
        const S nrm = nodes_[id].val.data[0];
        if (nrm < S(1e-12)) return;
        const S g = nodes_[id].grad.data[0] / nrm;
        accumulate(a, [&](size_t i) { return g * nodes_[a].val.data[i]; });
      });
    return id;
  }

  /// Fixed-weight scalar readout sum(w .* a); w is plain data.
  Var dot_const(Var a, const Tensor<S>& w) {
    const auto& A = nodes_[a].val;
    if (A.size() != w.size()) throw std::invalid_argument("dot_const: size mismatch");
    Tensor<S> out({1, 1});
    double acc = 0;
    for (size_t i = 0; i < A.size(); ++i) acc += double(A.data[i]) * double(w.data[i]);
    out.data[0] = static_cast<S>(acc);
    Var id = push(std::move(out), nodes_[a].needs_grad, nullptr);
    if (nodes_[id].needs_grad) {
      auto wc = std::make_shared<Tensor<S>>(w);
      set_backward(id, [this, id, a, wc] {
        const S g = nodes_[id].grad.data[0];
        accumulate(a, [&](size_t i) { return g * wc->data[i]; });
      });
    }
    return id;
  }

  // -- image ops -----------------------------------------------------------

  /// Same-padded strided convolution: x is H x W x Cin, w is kh x kw x Cin x Cout,
  /// bias is 1 x Cout. Implemented as im2col + GEMM.
  Var conv2d(Var x, Var w, Var bias, int stride) {
    const auto& X = nodes_[x].val;
    const auto& W = nodes_[w].val;
    if (X.rank() != 3 || W.rank() != 4) throw std::invalid_argument("conv2d: bad ranks");
    const int H = X.dims[0], Wd = X.dims[1], Cin = X.dims[2];
    const int kh = W.dims[0], kw = W.dims[1], Cout = W.dims[3];
    if (W.dims[2] != Cin) throw std::invalid_argument("conv2d: channel mismatch");
    const int ph = kh / 2, pw = kw / 2;
    const int Ho = (H + 2 * ph - kh) / stride + 1;
    const int Wo = (Wd + 2 * pw - kw) / stride + 1;

    auto cols = std::make_shared<Tensor<S>>(std::vector<int>{Ho * Wo, kh * kw * Cin});
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        const int r = oy * Wo + ox;
        int c = 0;
        for (int dy = 0; dy < kh; ++dy) {
          const int iy = oy * stride + dy - ph;
          for (int dx = 0; dx < kw; ++dx) {
            const int ix = ox * stride + dx - pw;
            const bool in = iy >= 0 && iy < H && ix >= 0 && ix < Wd;
            for (int ch = 0; ch < Cin; ++ch, ++c)
              cols->at(r, c) = in ? X.at(iy, ix, ch) : S(0);
          }
        }
      }
    }
    Tensor<S> out({Ho, Wo, Cout});
    out.as_mat(Ho * Wo, Cout).noalias() =
        cols->mat() * W.as_mat(kh * kw * Cin, Cout);
    out.as_mat(Ho * Wo, Cout).rowwise() += nodes_[bias].val.mat().row(0);

    const bool ng = nodes_[x].needs_grad || nodes_[w].needs_grad || nodes_[bias].needs_grad;
    Var id = push(std::move(out), ng, nullptr);
    if (ng)
      set_backward(id, [this, id, x, w, bias, cols, H, Wd, Cin, kh, kw, Cout, Ho, Wo, stride, ph, pw] {
        auto g = nodes_[id].grad.as_mat(Ho * Wo, Cout);
        if (nodes_[bias].needs_grad)
          nodes_[bias].grad.mat().row(0).noalias() += g.colwise().sum();
        if (nodes_[w].needs_grad)
          nodes_[w].grad.as_mat(kh * kw * Cin, Cout).noalias() += cols->mat().transpose() * g;
        if (nodes_[x].needs_grad) {
          Tensor<S> dcols({Ho * Wo, kh * kw * Cin});
          dcols.mat().noalias() = g * nodes_[w].val.as_mat(kh * kw * Cin, Cout).transpose();
          auto& dx = nodes_[x].grad;
          for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
              const int r = oy * Wo + ox;
              int c = 0;
              for (int dy = 0; dy < kh; ++dy) {
                const int iy = oy * stride + dy - ph;
                for (int dx_ = 0; dx_ < kw; ++dx_) {
                  const int ix = ox * stride + dx_ - pw;
                  const bool in = iy >= 0 && iy < H && ix >= 0 && ix < Wd;
                  for (int ch = 0; ch < Cin; ++ch, ++c)
                    if (in) dx.at(iy, ix, ch) += dcols.at(r, c);
                }
              }
            }
        }
      });
    return id;
  }

  /// Bilinear upsample of an h x w x C map to H2 x W2 (half-pixel centers).
  Var upsample_bilinear(Var x, int H2, int W2) {
    const auto& X = nodes_[x].val;
    if (X.rank() != 3) throw std::invalid_argument("upsample: input must be rank 3");
    const int h = X.dims[0], w = X.dims[1], C = X.dims[2];
    Tensor<S> out({H2, W2, C});
    const S sy = S(h) / S(H2), sx = S(w) / S(W2);
    // Cache taps; identical for forward and backward.
    auto taps = std::make_shared<std::vector<BilinearTap<S>>>();
    taps->reserve(static_cast<size_t>(H2) * W2);
    for (int oy = 0; oy < H2; ++oy) {
      for (int ox = 0; ox < W2; ++ox) {
        const S v = (S(oy) + S(0.5)) * sy;
        const S u = (S(ox) + S(0.5)) * sx;
        const auto tap = bilinear_tap(u, v, w, h);
        taps->push_back(tap);
        for (int k = 0; k < 4; ++k) {
          const int r = tap.row[k / 2], c = tap.col[k % 2];
          for (int ch = 0; ch < C; ++ch) out.at(oy, ox, ch) += tap.w[k] * X.at(r, c, ch);
        }
      }
    }
    Var id = push(std::move(out), nodes_[x].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, x, taps, H2, W2, C] {
        auto& dx = nodes_[x].grad;
        const auto& g = nodes_[id].grad;
        size_t t = 0;
        for (int oy = 0; oy < H2; ++oy)
          for (int ox = 0; ox < W2; ++ox, ++t) {
            const auto& tap = (*taps)[t];
            for (int k = 0; k < 4; ++k)
              for (int ch = 0; ch < C; ++ch)
                dx.at(tap.row[k / 2], tap.col[k % 2], ch) += tap.w[k] * g.at(oy, ox, ch);
          }
      });
    return id;
  }

  /// Global average over H x W -> 1 x C.
  Var avgpool_all(Var x) {
    const auto& X = nodes_[x].val;
    if (X.rank() != 3) throw std::invalid_argument("avgpool_all: input must be rank 3");
    const int H = X.dims[0], W = X.dims[1], C = X.dims[2];
    Tensor<S> out({1, C});
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c)
        for (int ch = 0; ch < C; ++ch) out.at(0, ch) += X.at(r, c, ch);
    for (S& v : out.data) v /= S(H * W);
    Var id = push(std::move(out), nodes_[x].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, x, H, W, C] {
        const auto& g = nodes_[id].grad;
        auto& dx = nodes_[x].grad;
        for (int r = 0; r < H; ++r)
          for (int c = 0; c < W; ++c)
            for (int ch = 0; ch < C; ++ch) dx.at(r, c, ch) += g.at(0, ch) / S(H * W);
      });
    return id;
  }

  /// Pixel-aligned gather: bilinear samples of fmap (H x W x C) at fixed NDC
  /// rows. Off-image rows stay zero. Gradient flows into fmap only; the
  /// sample locations are data, not parameters.
  Var bilinear_gather(Var fmap, const Tensor<S>& ndc) {
    const auto& F = nodes_[fmap].val;
    if (F.rank() != 3) throw std::invalid_argument("bilinear_gather: fmap must be rank 3");
    const int H = F.dims[0], W = F.dims[1], C = F.dims[2];
    const int m = ndc.rows();
    struct RowTap {
      bool on = false;
      BilinearTap<S> tap;
    };
    auto taps = std::make_shared<std::vector<RowTap>>(m);
    Tensor<S> out({m, C});
    for (int i = 0; i < m; ++i) {
      const S u = (ndc.at(i, 0) + S(1)) * S(W) / S(2);
      const S v = (ndc.at(i, 1) + S(1)) * S(H) / S(2);
      if (!(u >= S(0) && u < S(W) && v >= S(0) && v < S(H))) continue;
      (*taps)[i].on = true;
      (*taps)[i].tap = bilinear_tap(u, v, W, H);
      for (int k = 0; k < 4; ++k) {
        const auto& tap = (*taps)[i].tap;
        for (int ch = 0; ch < C; ++ch)
          out.at(i, ch) += tap.w[k] * F.at(tap.row[k / 2], tap.col[k % 2], ch);
      }
    }
    Var id = push(std::move(out), nodes_[fmap].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, fmap, taps, C] {
        auto& df = nodes_[fmap].grad;
        const auto& g = nodes_[id].grad;
        for (int i = 0; i < static_cast<int>(taps->size()); ++i) {
          if (!(*taps)[i].on) continue;
          const auto& tap = (*taps)[i].tap;
          for (int k = 0; k < 4; ++k)
            for (int ch = 0; ch < C; ++ch)
              df.at(tap.row[k / 2], tap.col[k % 2], ch) += tap.w[k] * g.at(i, ch);
        }
      });
    return id;
  }

  /// Differentiable soft silhouette of an N x 3 wrist-frame cloud.
  /// mask = 1 - prod_p (1 - exp(-d_p^2 / 2 sigma^2)) per pixel, with gradients
  /// into the point positions. Points behind the near plane contribute nothing.
  Var soft_mask(Var points, const CameraT<S>& cam, S sigma_px) {
    if (!(sigma_px > S(0))) throw std::invalid_argument("soft_mask: sigma_px must be > 0");
    const auto& P = nodes_[points].val;
    if (P.rank() != 2 || P.cols() != 3) throw std::invalid_argument("soft_mask: points must be N x 3");
    const int n = P.rows();
    const int H = cam.height, W = cam.width;
    const S inv_sigma2 = S(1) / (sigma_px * sigma_px);
    const S radius = static_cast<S>(kSoftMaskCutoffSigmas) * sigma_px;

    struct Contrib {
      int point;
      S g, du, dv;  // du, dv = pixel center minus projection
    };
    struct PointCache {
      bool front = false;
      S u, v, xc, yc, zc;
    };
    auto contribs = std::make_shared<std::vector<std::vector<Contrib>>>(
        static_cast<size_t>(H) * W);
    auto pcache = std::make_shared<std::vector<PointCache>>(n);

    Tensor<S> keep({H, W});
    keep.fill(S(1));
    for (int i = 0; i < n; ++i) {
      const Vec3<S> p(P.at(i, 0), P.at(i, 1), P.at(i, 2));
      const Vec3<S> pc = cam.wrist_to_camera.apply(p);
      if (!(pc.z() > cam.near_plane)) continue;
      auto& pcc = (*pcache)[i];
      pcc.front = true;
      pcc.xc = pc.x();
      pcc.yc = pc.y();
      pcc.zc = pc.z();
      pcc.u = cam.fx * pc.x() / pc.z() + cam.cx;
      pcc.v = cam.fy * pc.y() / pc.z() + cam.cy;
      const int c0 = std::max(0, static_cast<int>(std::floor(pcc.u - radius)));
      const int c1 = std::min(W - 1, static_cast<int>(std::floor(pcc.u + radius)));
      const int r0 = std::max(0, static_cast<int>(std::floor(pcc.v - radius)));
      const int r1 = std::min(H - 1, static_cast<int>(std::floor(pcc.v + radius)));
      for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c) {
          const S du = (S(c) + S(0.5)) - pcc.u;
          const S dv = (S(r) + S(0.5)) - pcc.v;
          const S g = std::exp(-(du * du + dv * dv) * inv_sigma2 * S(0.5));
          const size_t k = static_cast<size_t>(r) * W + c;
          keep.data[k] *= (S(1) - g);
          (*contribs)[k].push_back({i, g, du, dv});
        }
    }
    Tensor<S> mask({H, W});
    for (size_t k = 0; k < mask.size(); ++k) mask.data[k] = S(1) - keep.data[k];

    Var id = push(std::move(mask), nodes_[points].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, points, contribs, pcache, cam, inv_sigma2, H, W] {
        auto& dp = nodes_[points].grad;
        const auto& g = nodes_[id].grad;
        std::vector<S> prefix;
        for (size_t k = 0; k < static_cast<size_t>(H) * W; ++k) {
          const auto& list = (*contribs)[k];
          if (list.empty() || g.data[k] == S(0)) continue;
          // Leave-one-out products of (1 - g_i) via prefix/suffix scans.
          const size_t m = list.size();
          prefix.assign(m + 1, S(1));
          for (size_t i = 0; i < m; ++i) prefix[i + 1] = prefix[i] * (S(1) - list[i].g);
          S suffix = S(1);
          for (size_t ii = m; ii-- > 0;) {
            const auto& cb = list[ii];
            const S loo = prefix[ii] * suffix;
            suffix *= (S(1) - cb.g);
            // dmask/dg = loo; dg/du_pt = g * du * inv_sigma2 (du = center - u).
            const S dmask_dg = loo * g.data[k];
            const S dl_du = dmask_dg * cb.g * cb.du * inv_sigma2;
            const S dl_dv = dmask_dg * cb.g * cb.dv * inv_sigma2;
            const auto& pc = (*pcache)[cb.point];
            // du/d(cam point) rows, then chain through the extrinsic rotation.
            const S iz = S(1) / pc.zc;
            const Vec3<S> du_dpc(cam.fx * iz, S(0), -cam.fx * pc.xc * iz * iz);
            const Vec3<S> dv_dpc(S(0), cam.fy * iz, -cam.fy * pc.yc * iz * iz);
            const Vec3<S> dL_dpc = dl_du * du_dpc + dl_dv * dv_dpc;
            const Vec3<S> dL_dp = cam.wrist_to_camera.R.transpose() * dL_dpc;
            dp.at(cb.point, 0) += dL_dp.x();
            dp.at(cb.point, 1) += dL_dp.y();
            dp.at(cb.point, 2) += dL_dp.z();
          }
        }
      });
    return id;
  }

  /// Project a single wrist-frame point (1 x 3) to NDC (1 x 2) with gradient.
  /// The caller must check the point is in front of the near plane.
  Var project_point_ndc(Var point, const CameraT<S>& cam) {
    const auto& P = nodes_[point].val;
    if (P.size() != 3) throw std::invalid_argument("project_point_ndc: need a single 3-vector");
    const Vec3<S> p(P.data[0], P.data[1], P.data[2]);
    const Vec3<S> pc = cam.wrist_to_camera.apply(p);
    if (!(pc.z() > cam.near_plane))
      throw std::domain_error("project_point_ndc: point behind the near plane");
    const S u = cam.fx * pc.x() / pc.z() + cam.cx;
    const S v = cam.fy * pc.y() / pc.z() + cam.cy;
    Tensor<S> out({1, 2});
    out.data[0] = S(2) * u / S(cam.width) - S(1);
    out.data[1] = S(2) * v / S(cam.height) - S(1);
    Var id = push(std::move(out), nodes_[point].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, point, cam, pc] {
        const auto& g = nodes_[id].grad;
        const S iz = S(1) / pc.z();
        const Vec3<S> du_dpc(cam.fx * iz, S(0), -cam.fx * pc.x() * iz * iz);
        const Vec3<S> dv_dpc(S(0), cam.fy * iz, -cam.fy * pc.y() * iz * iz);
        const Vec3<S> dndc = (S(2) / S(cam.width)) * g.data[0] * du_dpc +
                             (S(2) / S(cam.height)) * g.data[1] * dv_dpc;
        const Vec3<S> dp = cam.wrist_to_camera.R.transpose() * dndc;
        nodes_[point].grad.data[0] += dp.x();
        nodes_[point].grad.data[1] += dp.y();
        nodes_[point].grad.data[2] += dp.z();
      });
    return id;
  }

  int node_count() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor<S> val;
    Tensor<S> grad;
    bool needs_grad = false;
    std::function<void()> backward;
  };

  std::vector<Node> nodes_;

  Var push(Tensor<S> v, bool needs_grad, std::function<void()> bw) {
    Node n;
    n.val = std::move(v);
    n.needs_grad = needs_grad;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  void set_backward(Var id, std::function<void()> bw) { nodes_[id].backward = std::move(bw); }

  void check_same(Var a, Var b, const char* op) const {
    if (!nodes_[a].val.same_shape(nodes_[b].val))
      throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                  shape_str(nodes_[a].val) + " vs " + shape_str(nodes_[b].val));
  }

  template <typename F>
  void accumulate(Var v, F&& per_element) {
    if (!nodes_[v].needs_grad) return;
    auto& g = nodes_[v].grad;
    for (size_t i = 0; i < g.size(); ++i) g.data[i] += per_element(i);
  }

  template <typename Fa, typename Fb>
  Var binary_ew(Var a, Var b, Tensor<S> out, Fa&& da, Fb&& db) {
    Var id = push(std::move(out), nodes_[a].needs_grad || nodes_[b].needs_grad, nullptr);
    if (nodes_[id].needs_grad)
      set_backward(id, [this, id, a, b, da, db] {
        const auto& g = nodes_[id].grad;
        if (nodes_[a].needs_grad)
          accumulate(a, [&](size_t i) {
            return g.data[i] * da(nodes_[a].val.data[i], nodes_[b].val.data[i]);
          });
        if (nodes_[b].needs_grad)
          accumulate(b, [&](size_t i) {
            return g.data[i] * db(nodes_[a].val.data[i], nodes_[b].val.data[i]);
          });
      });
    return id;
  }
};

}  // namespace hodiff
