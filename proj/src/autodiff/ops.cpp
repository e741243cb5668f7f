#include "enclap/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace enclap::ad {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<Mat>;
using CMapM = Eigen::Map<const Mat>;

CMapM view(const double* v, std::size_t r, std::size_t c) {
  return CMapM(v, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

MapM view(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MapM(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

MapM view(std::span<double> v, std::size_t r, std::size_t c) {
  return MapM(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

Tensor constant_like(const Tensor& x) { return Tensor::from(x.shape(), std::vector<double>(x.values().begin(), x.values().end())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), "reshape", {x}, [](Node& self) {
    auto& a = in(self, 0);
    if (!a.requires_grad) return;
    auto g = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  view(out, m, n).noalias() = view(a.node()->value, m, k) * view(b.node()->value, k, n);
  return make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](Node& self) {
    auto& A = in(self, 0);
    auto& B = in(self, 1);
    auto dC = view(self.grad, m, n);
    if (A.requires_grad) view(A.grad_buffer(), m, k).noalias() += dC * view(B.value, k, n).transpose();
    if (B.requires_grad) view(B.grad_buffer(), k, n).noalias() += view(A.value, m, k).transpose() * dC;
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_nt: " + shape_str(a.shape()) + " * " + shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  view(out, m, n).noalias() = view(a.node()->value, m, k) * view(b.node()->value, n, k).transpose();
  return make_result({m, n}, std::move(out), "matmul_nt", {a, b}, [m, k, n](Node& self) {
    auto& A = in(self, 0);
    auto& B = in(self, 1);
    auto dC = view(self.grad, m, n);
    if (A.requires_grad) view(A.grad_buffer(), m, k).noalias() += dC * view(B.value, n, k);
    if (B.requires_grad) view(B.grad_buffer(), n, k).noalias() += dC.transpose() * view(A.value, m, k);
  });
}

Tensor transpose(const Tensor& x) {
  const auto r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  view(out, c, r) = view(x.node()->value, r, c).transpose();
  return make_result({c, r}, std::move(out), "transpose", {x}, [r, c](Node& self) {
    auto& X = in(self, 0);
    if (X.requires_grad) view(X.grad_buffer(), r, c) += view(self.grad, c, r).transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result(a.shape(), std::move(out), "add", {a, b}, [](Node& self) {
    for (std::size_t j = 0; j < 2; ++j) {
      auto& X = in(self, j);
      if (!X.requires_grad) continue;
      auto g = X.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result(a.shape(), std::move(out), "sub", {a, b}, [](Node& self) {
    for (std::size_t j = 0; j < 2; ++j) {
      auto& X = in(self, j);
      if (!X.requires_grad) continue;
      const double sign = j == 0 ? 1.0 : -1.0;
      auto g = X.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [](Node& self) {
    auto& A = in(self, 0);
    auto& B = in(self, 1);
    if (A.requires_grad) {
      auto g = A.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto g = B.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
    }
  });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  const auto r = x.rows(), c = x.cols();
  if (row.numel() != c) {
    throw ShapeError("add_row: " + shape_str(x.shape()) + " + " + shape_str(row.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += row.values()[j];
  return make_result(x.shape(), std::move(out), "add_row", {x, row}, [r, c](Node& self) {
    auto& X = in(self, 0);
    auto& R = in(self, 1);
    if (X.requires_grad) {
      auto g = X.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (R.requires_grad) {
      auto g = R.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * s;
  return make_result(x.shape(), std::move(out), "scale", {x}, [s](Node& self) {
    auto& X = in(self, 0);
    if (!X.requires_grad) return;
    auto g = X.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("scale_by: factor must hold one element");
  const double f = s.values()[0];
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * f;
  return make_result(x.shape(), std::move(out), "scale_by", {x, s}, [](Node& self) {
    auto& X = in(self, 0);
    auto& S = in(self, 1);
    if (X.requires_grad) {
      auto g = X.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += S.value[0] * self.grad[i];
    }
    if (S.requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < X.value.size(); ++i) acc += X.value[i] * self.grad[i];
      S.grad_buffer()[0] += acc;
    }
  });
}

Tensor exp(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.values()[i]);
  return make_result(x.shape(), std::move(out), "exp", {x}, [](Node& self) {
    auto& X = in(self, 0);
    if (!X.requires_grad) return;
    auto g = X.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.value[i] * self.grad[i];
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kA = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kB = 0.044715;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kA * (v + kB * v * v * v)));
  }
  return make_result(x.shape(), std::move(out), "gelu", {x}, [](Node& self) {
    auto& X = in(self, 0);
    if (!X.requires_grad) return;
    auto g = X.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = X.value[i];
      const double t = std::tanh(kA * (v + kB * v * v * v));
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kA * (1.0 + 3.0 * kB * v * v);
      g[i] += d * self.grad[i];
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.values()[i]);
  return make_result(x.shape(), std::move(out), "relu", {x}, [](Node& self) {
    auto& X = in(self, 0);
    if (!X.requires_grad) return;
    auto g = X.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (X.value[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result({}, {s}, "sum", {x}, [](Node& self) {
    auto& X = in(self, 0);
    if (!X.requires_grad) return;
    for (auto& g : X.grad_buffer()) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_rows(const Tensor& x) {
  const auto r = x.rows(), c = x.cols();
  if (r == 0) throw ShapeError("mean_rows of empty tensor");
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += x.values()[i * c + j];
  for (auto& v : out) v /= static_cast<double>(r);
  return make_result({c}, std::move(out), "mean_rows", {x}, [r, c](Node& self) {
    auto& X = in(self, 0);
    if (!X.requires_grad) return;
    auto g = X.grad_buffer();
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] * inv;
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const auto c = parts.front().cols();
  std::size_t r = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()));
    offsets.push_back(r);
    r += p.rows();
  }
  std::vector<double> out;
  out.reserve(r * c);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_result({r, c}, std::move(out), "concat_rows", parts, [offsets, c](Node& self) {
    for (std::size_t j = 0; j < self.inputs.size(); ++j) {
      auto& P = in(self, j);
      if (!P.requires_grad) continue;
      auto g = P.grad_buffer();
      const double* src = self.grad.data() + offsets[j] * c;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  const auto r = x.rows(), c = x.cols();
  if (begin > end || end > r) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     std::to_string(r) + " rows");
  }
  std::vector<double> out(x.values().begin() + static_cast<std::ptrdiff_t>(begin * c),
                          x.values().begin() + static_cast<std::ptrdiff_t>(end * c));
  return make_result({end - begin, c}, std::move(out), "slice_rows", {x}, [begin, c](Node& self) {
    auto& X = in(self, 0);
    if (!X.requires_grad) return;
    auto g = X.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> ids) {
  const auto v = table.rows(), c = table.cols();
  std::vector<double> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(v) + " rows");
    }
    std::copy_n(table.values().begin() + static_cast<std::ptrdiff_t>(ids[i]) * static_cast<std::ptrdiff_t>(c), c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  std::vector<std::int64_t> saved(ids.begin(), ids.end());
  return make_result({ids.size(), c}, std::move(out), "gather_rows", {table},
                     [saved = std::move(saved), c](Node& self) {
                       auto& T = in(self, 0);
                       if (!T.requires_grad) return;
                       auto g = T.grad_buffer();
                       for (std::size_t i = 0; i < saved.size(); ++i)
                         for (std::size_t j = 0; j < c; ++j)
                           g[static_cast<std::size_t>(saved[i]) * c + j] += self.grad[i * c + j];
                     });
}

Tensor take(const Tensor& x, std::span<const std::size_t> indices, Shape shape) {
  if (shape_numel(shape) != indices.size()) throw ShapeError("take: index count does not match output shape");
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.numel()) throw std::out_of_range("take: index outside tensor");
    out[i] = x.values()[indices[i]];
  }
  std::vector<std::size_t> saved(indices.begin(), indices.end());
  return make_result(std::move(shape), std::move(out), "take", {x}, [saved = std::move(saved)](Node& self) {
    auto& X = in(self, 0);
    if (!X.requires_grad) return;
    auto g = X.grad_buffer();
    for (std::size_t i = 0; i < saved.size(); ++i) g[saved[i]] += self.grad[i];
  });
}

Tensor softmax_rows(const Tensor& x) {
  const auto r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.values().data() + i * c;
    double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out[i * c + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return make_result(x.shape(), std::move(out), "softmax_rows", {x}, [r, c](Node& self) {
    auto& X = in(self, 0);
    if (!X.requires_grad) return;
    auto g = X.grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        g[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& x) {
  const auto r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.values().data() + i * c;
    double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  return make_result(x.shape(), std::move(out), "log_softmax_rows", {x}, [r, c](Node& self) {
    auto& X = in(self, 0);
    if (!X.requires_grad) return;
    auto g = X.grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < c; ++j) total += self.grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        g[i * c + j] += self.grad[i * c + j] - std::exp(self.value[i * c + j]) * total;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto r = x.rows(), c = x.cols();
  if (gamma.numel() != c || beta.numel() != c) throw ShapeError("layer_norm: affine size mismatch");
  std::vector<double> xhat(r * c), inv_std(r), out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.values().data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * inv_std[i];
      out[i * c + j] = gamma.values()[j] * xhat[i * c + j] + beta.values()[j];
    }
  }
  return make_result(x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
                     [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       auto& X = in(self, 0);
                       auto& G = in(self, 1);
                       auto& B = in(self, 2);
                       if (B.requires_grad) {
                         auto g = B.grad_buffer();
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
                       }
                       if (G.requires_grad) {
                         auto g = G.grad_buffer();
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * xhat[i * c + j];
                       }
                       if (!X.requires_grad) return;
                       auto g = X.grad_buffer();
                       const double n = static_cast<double>(c);
                       for (std::size_t i = 0; i < r; ++i) {
                         double m1 = 0.0, m2 = 0.0;
                         for (std::size_t j = 0; j < c; ++j) {
                           const double dxh = self.grad[i * c + j] * G.value[j];
                           m1 += dxh;
                           m2 += dxh * xhat[i * c + j];
                         }
                         m1 /= n;
                         m2 /= n;
                         for (std::size_t j = 0; j < c; ++j) {
                           const double dxh = self.grad[i * c + j] * G.value[j];
                           g[i * c + j] += inv_std[i] * (dxh - m1 - xhat[i * c + j] * m2);
                         }
                       }
                     });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  const auto r = x.rows(), c = x.cols();
  std::vector<double> out(r * c), norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += x.values()[i * c + j] * x.values()[i * c + j];
    norms[i] = std::sqrt(s + eps);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.values()[i * c + j] / norms[i];
  }
  return make_result(x.shape(), std::move(out), "l2_normalize_rows", {x},
                     [r, c, norms = std::move(norms)](Node& self) {
                       auto& X = in(self, 0);
                       if (!X.requires_grad) return;
                       auto g = X.grad_buffer();
                       for (std::size_t i = 0; i < r; ++i) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
                         for (std::size_t j = 0; j < c; ++j)
                           g[i * c + j] += (self.grad[i * c + j] - self.value[i * c + j] * dot) / norms[i];
                       }
                     });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, bool causal) {
  const auto tq = q.rows(), tk = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != tk) throw ShapeError("attention: q/k/v shape mismatch");
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: width not divisible by head count");
  if (causal && tq > tk) throw ShapeError("attention: causal mask needs tq <= tk");
  const auto dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  auto Q = view(q.node()->value, tq, d);
  auto K = view(k.node()->value, tk, d);
  auto V = view(v.node()->value, tk, d);
  std::vector<double> out(tq * d);
  auto O = view(out, tq, d);
  // probs[h] is a tq x tk row-major block.
  std::vector<double> probs(heads * tq * tk);
  // Causal offset: query i may attend keys j <= i + (tk - tq).
  const std::size_t shift = tk - tq;
  for (std::size_t h = 0; h < heads; ++h) {
    auto P = view(std::span<double>(probs.data() + h * tq * tk, tq * tk), tq, tk);
    P.noalias() = Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose();
    P *= inv_sqrt;
    for (std::size_t i = 0; i < tq; ++i) {
      const std::size_t limit = causal ? std::min(tk, i + shift + 1) : tk;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, P(i, j));
      double z = 0.0;
      for (std::size_t j = 0; j < limit; ++j) z += (P(i, j) = std::exp(P(i, j) - mx));
      for (std::size_t j = 0; j < limit; ++j) P(i, j) /= z;
      for (std::size_t j = limit; j < tk; ++j) P(i, j) = 0.0;
    }
    O.middleCols(h * dh, dh).noalias() = P * V.middleCols(h * dh, dh);
  }
  return make_result({tq, d}, std::move(out), "attention", {q, k, v},
                     [tq, tk, d, dh, heads, inv_sqrt, probs = std::move(probs)](Node& self) {
                       auto& Qn = in(self, 0);
                       auto& Kn = in(self, 1);
                       auto& Vn = in(self, 2);
                       auto Qm = view(Qn.value, tq, d);
                       auto Km = view(Kn.value, tk, d);
                       auto Vm = view(Vn.value, tk, d);
                       auto dO = view(self.grad, tq, d);
                       Mat dP(tq, tk);
                       for (std::size_t h = 0; h < heads; ++h) {
                         auto P = view(probs.data() + h * tq * tk, tq, tk);
                         auto dOh = dO.middleCols(h * dh, dh);
                         if (Vn.requires_grad)
                           view(Vn.grad_buffer(), tk, d).middleCols(h * dh, dh).noalias() += P.transpose() * dOh;
                         if (!Qn.requires_grad && !Kn.requires_grad) continue;
                         dP.noalias() = dOh * Vm.middleCols(h * dh, dh).transpose();
                         for (std::size_t i = 0; i < tq; ++i) {
                           double dot = 0.0;
                           for (std::size_t j = 0; j < tk; ++j) dot += dP(i, j) * P(i, j);
                           for (std::size_t j = 0; j < tk; ++j) dP(i, j) = P(i, j) * (dP(i, j) - dot) * inv_sqrt;
                         }
                         if (Qn.requires_grad)
                           view(Qn.grad_buffer(), tq, d).middleCols(h * dh, dh).noalias() +=
                               dP * Km.middleCols(h * dh, dh);
                         if (Kn.requires_grad)
                           view(Kn.grad_buffer(), tk, d).middleCols(h * dh, dh).noalias() +=
                               dP.transpose() * Qm.middleCols(h * dh, dh);
                       }
                     });
}

Tensor label_smoothed_nll(const Tensor& logits, std::span<const std::int64_t> targets, double epsilon,
                          std::optional<std::span<const std::uint8_t>> keep) {
  const auto t = logits.rows(), kk = logits.cols();
  if (targets.size() != t) throw ShapeError("label_smoothed_nll: target count does not match logits rows");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("label_smoothed_nll: epsilon outside [0, 1)");
  if (keep && keep->size() != t) throw ShapeError("label_smoothed_nll: mask length does not match logits rows");
  std::vector<std::uint8_t> use(t, 1);
  if (keep) std::copy(keep->begin(), keep->end(), use.begin());
  std::size_t count = 0;
  for (std::size_t i = 0; i < t; ++i) {
    if (!use[i]) continue;
    ++count;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= kk) {
      throw std::out_of_range("label_smoothed_nll: target " + std::to_string(targets[i]) + " outside vocabulary of " +
                              std::to_string(kk));
    }
  }
  if (count == 0) throw std::invalid_argument("label_smoothed_nll: every position is masked");

  const double k = static_cast<double>(kk);
  std::vector<double> probs(t * kk, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    if (!use[i]) continue;
    const double* row = logits.values().data() + i * kk;
    const double mx = *std::max_element(row, row + kk);
    double z = 0.0;
    for (std::size_t j = 0; j < kk; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    double sum_lp = 0.0;
    for (std::size_t j = 0; j < kk; ++j) {
      sum_lp += row[j] - lse;
      probs[i * kk + j] = std::exp(row[j] - lse);
    }
    const double lp_target = row[targets[i]] - lse;
    total += -((1.0 - epsilon) * lp_target + (epsilon / k) * sum_lp);
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  std::vector<std::int64_t> saved(targets.begin(), targets.end());
  return make_result({}, {total * inv_count}, "label_smoothed_nll", {logits},
                     [t, kk, k, epsilon, inv_count, use = std::move(use), saved = std::move(saved),
                      probs = std::move(probs)](Node& self) {
                       auto& L = in(self, 0);
                       if (!L.requires_grad) return;
                       auto g = L.grad_buffer();
                       const double up = self.grad[0] * inv_count;
                       for (std::size_t i = 0; i < t; ++i) {
                         if (!use[i]) continue;
                         for (std::size_t j = 0; j < kk; ++j) g[i * kk + j] += up * (probs[i * kk + j] - epsilon / k);
                         g[i * kk + static_cast<std::size_t>(saved[i])] -= up * (1.0 - epsilon);
                       }
                     });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  return mean(mul(sub(a, b), sub(a, b)));
}

}  // namespace enclap::ad
