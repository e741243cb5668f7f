#pragma once

// Residual vector quantization over an ordered list of codebooks.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace enclap::codec {

struct Codebook {
  std::size_t size = 0;  // V
  std::size_t dim = 0;   // d
  std::vector<double> entries;  // row-major V x d

  Codebook() = default;
  Codebook(std::size_t v, std::size_t d, std::vector<double> values);

  std::span<const double> entry(std::size_t v) const { return {entries.data() + v * dim, dim}; }
  std::span<double> entry(std::size_t v) { return {entries.data() + v * dim, dim}; }
  /// Throws unless V >= 2, the storage matches V x d and every value is finite.
  void validate() const;
};

struct RvqResult {
  std::vector<std::int64_t> codes;  // one per stage
  std::vector<double> residual;     // r_N
};

/// code_n = argmin_v ||r_{n-1} - C_n[v]||, lowest index on ties;
/// r_n = r_{n-1} - C_n[code_n].
RvqResult rvq_quantize(std::span<const double> latent, std::span<const Codebook> codebooks);

/// Same as rvq_quantize, also writing r_n after every stage into
/// `residuals` (N x d, row n-1 holds r_n).
RvqResult rvq_quantize_trace(std::span<const double> latent, std::span<const Codebook> codebooks,
                             std::vector<double>& residuals);

/// Sum over stages of C_n[code_n].
std::vector<double> rvq_dequantize(std::span<const std::int64_t> codes, std::span<const Codebook> codebooks);

/// Discrete acoustic code matrix, N x L, row-major by codebook.
struct CodeMatrix {
  std::size_t num_codebooks = 0;  // N
  std::size_t length = 0;         // L
  std::vector<std::int64_t> codes;
  double frame_hz = 75.0;
  double source_duration_s = 0.0;

  std::int64_t at(std::size_t n, std::size_t l) const { return codes[n * length + l]; }
  std::int64_t& at(std::size_t n, std::size_t l) { return codes[n * length + l]; }
  /// c_{n,:}
  std::span<const std::int64_t> row(std::size_t n) const { return {codes.data() + n * length, length}; }
  /// c_{:,l}
  std::vector<std::int64_t> column(std::size_t l) const;
  bool operator==(const CodeMatrix&) const = default;
};

}  // namespace enclap::codec
