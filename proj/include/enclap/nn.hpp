#pragma once

// Named parameter storage and the small set of layers shared by the joint
// embedding model and the captioner. Transformer blocks are pre-norm.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "enclap/ops.hpp"
#include "enclap/tensor.hpp"

namespace enclap::nn {

using ad::Shape;
using ad::Tensor;

using Rng = std::mt19937_64;

// kNormalFanIn: N(0, 1/fan_in) with fan_in = first dim (weights [in x out]).
// kEmbedding: N(0, 1/dim) with dim = last dim, so rows have norm ~1.
enum class Init { kZeros, kOnes, kNormalFanIn, kEmbedding };

/// Ordered, uniquely named set of trainable tensors. Order is creation order
/// and is what checkpoints and optimiser state rely on.
class ParamStore {
 public:
  Tensor create(const std::string& name, Shape shape, Init init, Rng& rng);

  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const;

  Tensor find(const std::string& name) const;

  /// Copies values from a store with identical names and shapes.
  void copy_values_from(const ParamStore& other);
  void zero_grad();
  /// Stops gradient tracking for every tensor in the store.
  void freeze();

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

/// Plain serialisable tensor: what checkpoints store.
struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

std::vector<NamedTensor> export_store(const ParamStore& store, const std::string& prefix = "");
/// Loads every tensor of `store` from `state` (looked up by prefix + name).
void import_store(ParamStore& store, const std::vector<NamedTensor>& state, const std::string& prefix = "");
const NamedTensor& find_named(const std::vector<NamedTensor>& state, const std::string& name);

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t dim, Rng& rng);
  Tensor operator()(const Tensor& x) const { return ad::layer_norm(x, gamma, beta); }
};

struct FeedForward {
  Linear up;
  Linear down;

  FeedForward() = default;
  FeedForward(ParamStore& store, const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const { return down(ad::gelu(up(x))); }
};

/// Keys/values of an attention source, computed once and reused.
struct KeyValue {
  Tensor keys;
  Tensor values;
};

struct MultiHeadAttention {
  Linear query, key, value, out;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads, Rng& rng);
  KeyValue project(const Tensor& source) const { return {key(source), value(source)}; }
  Tensor operator()(const Tensor& x, const KeyValue& kv, bool causal) const;
  Tensor operator()(const Tensor& x, bool causal) const { return (*this)(x, project(x), causal); }
};

struct EncoderBlock {
  LayerNorm norm_attn, norm_ffn;
  MultiHeadAttention attn;
  FeedForward ffn;

  EncoderBlock() = default;
  EncoderBlock(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads, std::size_t hidden,
               Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

struct DecoderBlock {
  LayerNorm norm_self, norm_cross, norm_ffn;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;

  DecoderBlock() = default;
  DecoderBlock(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads, std::size_t hidden,
               Rng& rng);
  /// `memory` is cross_attn.project(encoder output).
  Tensor operator()(const Tensor& x, const KeyValue& memory) const;
};

}  // namespace enclap::nn
