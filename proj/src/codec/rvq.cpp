#include "enclap/rvq.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace enclap::codec {

Codebook::Codebook(std::size_t v, std::size_t d, std::vector<double> values)
    : size(v), dim(d), entries(std::move(values)) {
  validate();
}

void Codebook::validate() const {
  if (size < 2) throw std::invalid_argument("codebook needs at least 2 entries");
  if (dim == 0) throw std::invalid_argument("codebook dimension must be positive");
  if (entries.size() != size * dim) throw std::invalid_argument("codebook storage does not match V x d");
  for (double x : entries)
    if (!std::isfinite(x)) throw std::invalid_argument("codebook entry is not finite");
}

namespace {

void check_dims(std::size_t d, std::span<const Codebook> codebooks) {
  if (codebooks.empty()) throw std::invalid_argument("rvq: no codebooks");
  for (std::size_t n = 0; n < codebooks.size(); ++n) {
    if (codebooks[n].dim != d) {
      throw std::invalid_argument("rvq: codebook " + std::to_string(n) + " has dimension " +
                                  std::to_string(codebooks[n].dim) + ", latent has " + std::to_string(d));
    }
  }
}

}  // namespace

RvqResult rvq_quantize_trace(std::span<const double> latent, std::span<const Codebook> codebooks,
                             std::vector<double>& residuals) {
  const std::size_t d = latent.size();
  check_dims(d, codebooks);
  RvqResult out;
  out.residual.assign(latent.begin(), latent.end());
  out.codes.reserve(codebooks.size());
  residuals.resize(codebooks.size() * d);
  for (std::size_t n = 0; n < codebooks.size(); ++n) {
    const Codebook& cb = codebooks[n];
    std::size_t best = 0;
    double best_dist = 0.0;
    for (std::size_t v = 0; v < cb.size; ++v) {
      const double* e = cb.entries.data() + v * d;
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = out.residual[j] - e[j];
        dist += diff * diff;
      }
      if (v == 0 || dist < best_dist) {
        best = v;
        best_dist = dist;
      }
    }
    const double* e = cb.entries.data() + best * d;
    for (std::size_t j = 0; j < d; ++j) {
      out.residual[j] -= e[j];
      residuals[n * d + j] = out.residual[j];
    }
    out.codes.push_back(static_cast<std::int64_t>(best));
  }
  return out;
}

RvqResult rvq_quantize(std::span<const double> latent, std::span<const Codebook> codebooks) {
  std::vector<double> scratch;
  return rvq_quantize_trace(latent, codebooks, scratch);
}

std::vector<double> rvq_dequantize(std::span<const std::int64_t> codes, std::span<const Codebook> codebooks) {
  if (codes.size() != codebooks.size()) throw std::invalid_argument("rvq_dequantize: one code per codebook expected");
  if (codebooks.empty()) throw std::invalid_argument("rvq_dequantize: no codebooks");
  const std::size_t d = codebooks[0].dim;
  check_dims(d, codebooks);
  std::vector<double> out(d, 0.0);
  for (std::size_t n = 0; n < codes.size(); ++n) {
    if (codes[n] < 0 || static_cast<std::size_t>(codes[n]) >= codebooks[n].size) {
      throw std::out_of_range("rvq_dequantize: code " + std::to_string(codes[n]) + " outside codebook " +
                              std::to_string(n));
    }
    const auto e = codebooks[n].entry(static_cast<std::size_t>(codes[n]));
    for (std::size_t j = 0; j < d; ++j) out[j] += e[j];
  }
  return out;
}

std::vector<std::int64_t> CodeMatrix::column(std::size_t l) const {
  std::vector<std::int64_t> out(num_codebooks);
  for (std::size_t n = 0; n < num_codebooks; ++n) out[n] = at(n, l);
  return out;
}

}  // namespace enclap::codec
