#include "enclap/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace enclap::nn {

Tensor ParamStore::create(const std::string& name, Shape shape, Init init, Rng& rng) {
  for (const auto& n : names_) {
    if (n == name) throw std::invalid_argument("duplicate parameter name: " + name);
  }
  const auto numel = ad::shape_numel(shape);
  std::vector<double> values(numel, 0.0);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(values.begin(), values.end(), 1.0);
      break;
    case Init::kNormalFanIn: {
      const double fan_in = shape.empty() ? 1.0 : static_cast<double>(shape.front());
      std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(fan_in));
      for (auto& v : values) v = dist(rng);
      break;
    }
    case Init::kEmbedding: {
      const double dim = shape.empty() ? 1.0 : static_cast<double>(shape.back());
      std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(dim));
      for (auto& v : values) v = dist(rng);
      break;
    }
  }
  auto t = Tensor::from(std::move(shape), std::move(values), true);
  names_.push_back(name);
  tensors_.push_back(t);
  return t;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

Tensor ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return tensors_[i];
  throw std::out_of_range("no parameter named " + name);
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.names_ != names_) throw std::invalid_argument("parameter stores have different layouts");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].shape() != other.tensors_[i].shape()) {
      throw ad::ShapeError("parameter " + names_[i] + " has a different shape");
    }
    auto dst = tensors_[i].mutable_values();
    auto src = other.tensors_[i].values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void ParamStore::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

void ParamStore::freeze() {
  for (auto& t : tensors_) {
    t.node()->requires_grad = false;
    t.node()->grad.clear();
  }
}

std::vector<NamedTensor> export_store(const ParamStore& store, const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& t = store.tensors()[i];
    out.push_back({prefix + store.names()[i], t.shape(), {t.values().begin(), t.values().end()}});
  }
  return out;
}

const NamedTensor& find_named(const std::vector<NamedTensor>& state, const std::string& name) {
  for (const auto& nt : state)
    if (nt.name == name) return nt;
  throw std::out_of_range("state has no tensor named " + name);
}

void import_store(ParamStore& store, const std::vector<NamedTensor>& state, const std::string& prefix) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& nt = find_named(state, prefix + store.names()[i]);
    auto& t = store.tensors()[i];
    if (nt.shape != t.shape()) {
      throw ad::ShapeError("tensor " + nt.name + " has shape " + ad::shape_str(nt.shape) + ", expected " +
                           ad::shape_str(t.shape()));
    }
    ad::ensure_finite(nt.values, "imported tensor");
    std::copy(nt.values.begin(), nt.values.end(), t.mutable_values().begin());
  }
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               bool with_bias) {
  weight = store.create(name + ".weight", {in, out}, Init::kNormalFanIn, rng);
  if (with_bias) bias = store.create(name + ".bias", {out}, Init::kZeros, rng);
}

Tensor Linear::operator()(const Tensor& x) const {
  auto y = ad::matmul(x, weight);
  return bias.defined() ? ad::add_row(y, bias) : y;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t dim, Rng& rng)
    : gamma(store.create(name + ".gamma", {dim}, Init::kOnes, rng)),
      beta(store.create(name + ".beta", {dim}, Init::kZeros, rng)) {}

FeedForward::FeedForward(ParamStore& store, const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng)
    : up(store, name + ".up", dim, hidden, rng), down(store, name + ".down", hidden, dim, rng) {}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t dim,
                                       std::size_t heads_, Rng& rng)
    : query(store, name + ".q", dim, dim, rng),
      key(store, name + ".k", dim, dim, rng),
      value(store, name + ".v", dim, dim, rng),
      out(store, name + ".o", dim, dim, rng),
      heads(heads_) {}

Tensor MultiHeadAttention::operator()(const Tensor& x, const KeyValue& kv, bool causal) const {
  return out(ad::attention(query(x), kv.keys, kv.values, heads, causal));
}

EncoderBlock::EncoderBlock(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads,
                           std::size_t hidden, Rng& rng)
    : norm_attn(store, name + ".ln1", dim, rng),
      norm_ffn(store, name + ".ln2", dim, rng),
      attn(store, name + ".attn", dim, heads, rng),
      ffn(store, name + ".ffn", dim, hidden, rng) {}

Tensor EncoderBlock::operator()(const Tensor& x) const {
  auto h = ad::add(x, attn(norm_attn(x), false));
  return ad::add(h, ffn(norm_ffn(h)));
}

DecoderBlock::DecoderBlock(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads,
                           std::size_t hidden, Rng& rng)
    : norm_self(store, name + ".ln1", dim, rng),
      norm_cross(store, name + ".ln2", dim, rng),
      norm_ffn(store, name + ".ln3", dim, rng),
      self_attn(store, name + ".self", dim, heads, rng),
      cross_attn(store, name + ".cross", dim, heads, rng),
      ffn(store, name + ".ffn", dim, hidden, rng) {}

Tensor DecoderBlock::operator()(const Tensor& x, const KeyValue& memory) const {
  auto h = ad::add(x, self_attn(norm_self(x), true));
  h = ad::add(h, cross_attn(norm_cross(h), memory, false));
  return ad::add(h, ffn(norm_ffn(h)));
}

}  // namespace enclap::nn
