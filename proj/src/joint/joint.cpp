#include "enclap/joint.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "enclap/optim.hpp"

namespace enclap::joint {

void JointConfig::validate() const {
  if (embed_dim == 0 || hidden == 0 || ffn == 0 || max_tokens == 0) throw std::invalid_argument("joint: dimensions must be positive");
  if (frame_pool == 0) throw std::invalid_argument("joint: frame_pool must be positive");
  if (heads == 0 || hidden % heads != 0) throw std::invalid_argument("joint: hidden size must divide into heads");
  if (!(min_temperature > 0.0) || max_temperature < min_temperature || init_temperature < min_temperature ||
      init_temperature > max_temperature) {
    throw std::invalid_argument("joint: temperature range");
  }
}

JointEmbeddingModel::JointEmbeddingModel(const JointConfig& config, text::Vocabulary vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  config_.validate();
  nn::Rng rng(seed);
  const std::size_t h = config_.hidden;
  audio_in_ = nn::Linear(params_, "audio.in", input_width(), h, rng);
  for (std::size_t i = 0; i < config_.audio_layers; ++i)
    audio_blocks_.emplace_back(params_, "audio.block" + std::to_string(i), h, config_.heads, config_.ffn, rng);
  audio_norm_ = nn::LayerNorm(params_, "audio.norm", h, rng);
  audio_proj_ = nn::Linear(params_, "audio.proj", h, config_.embed_dim, rng);
  token_table_ = params_.create("text.tokens", {vocab_.size(), h}, nn::Init::kEmbedding, rng);
  text_positions_ = params_.create("text.positions", {config_.max_tokens, h}, nn::Init::kEmbedding, rng);
  for (std::size_t i = 0; i < config_.text_layers; ++i)
    text_blocks_.emplace_back(params_, "text.block" + std::to_string(i), h, config_.heads, config_.ffn, rng);
  text_norm_ = nn::LayerNorm(params_, "text.norm", h, rng);
  text_proj_ = nn::Linear(params_, "text.proj", h, config_.embed_dim, rng);
  log_inv_temp_ = params_.create("log_inv_temperature", {1}, nn::Init::kZeros, rng);
  log_inv_temp_.mutable_values()[0] = -std::log(config_.init_temperature);
  feature_mean_.assign(config_.spectrogram.bands, 0.0);
  feature_std_.assign(config_.spectrogram.bands, 1.0);
}

std::size_t JointEmbeddingModel::input_width() const {
  return config_.spectrogram.bands * (config_.deltas ? 2 : 1) + config_.position_features;
}

double JointEmbeddingModel::temperature() const { return std::exp(-log_inv_temp_.values()[0]); }

Tensor JointEmbeddingModel::inverse_temperature() const { return ad::exp(log_inv_temp_); }

void JointEmbeddingModel::clamp_temperature() {
  auto v = log_inv_temp_.mutable_values();
  v[0] = std::clamp(v[0], -std::log(config_.max_temperature), -std::log(config_.min_temperature));
}

audio::Spectrogram JointEmbeddingModel::spectrogram(const AudioClip& clip) const {
  clip.validate();
  return audio::log_band_spectrogram(clip, config_.spectrogram);
}

Tensor JointEmbeddingModel::audio_input(const audio::Spectrogram& spec) const {
  if (spec.bands != config_.spectrogram.bands) throw ad::ShapeError("joint: spectrogram band count mismatch");
  const std::size_t width = input_width();
  const std::size_t pos0 = width - config_.position_features;
  const std::size_t pool = config_.frame_pool;
  const std::size_t frames = (spec.frames + pool - 1) / pool;
  std::vector<double> x(frames * width, 0.0);
  for (std::size_t l = 0; l < frames; ++l) {
    double* row = x.data() + l * width;
    const std::size_t end = std::min(spec.frames, (l + 1) * pool);
    for (std::size_t f = l * pool; f < end; ++f)
      for (std::size_t b = 0; b < spec.bands; ++b) row[b] += spec.values[f * spec.bands + b];
    for (std::size_t b = 0; b < spec.bands; ++b)
      row[b] = (row[b] / static_cast<double>(end - l * pool) - feature_mean_[b]) / feature_std_[b];
    // Position relative to clip length, so event order reads the same at any duration.
    const double t = (static_cast<double>(l) + 0.5) / static_cast<double>(frames);
    for (std::size_t k = 0; k < config_.position_features; ++k) {
      const double freq = std::numbers::pi * static_cast<double>(k / 2 + 1);
      row[pos0 + k] = k % 2 == 0 ? std::sin(freq * t) : std::cos(freq * t);
    }
  }
  if (config_.deltas) {
    for (std::size_t l = 1; l < frames; ++l)
      for (std::size_t b = 0; b < spec.bands; ++b) x[l * width + spec.bands + b] = x[l * width + b] - x[(l - 1) * width + b];
  }
  return Tensor::from({frames, width}, std::move(x));
}

Tensor JointEmbeddingModel::encode_audio(const Tensor& input) const {
  auto h = audio_in_(input);
  for (const auto& block : audio_blocks_) h = block(h);
  h = ad::mean_rows(audio_norm_(h));
  return ad::l2_normalize_rows(ad::reshape(audio_proj_(h), {1, config_.embed_dim}));
}

Tensor JointEmbeddingModel::encode_text(std::span<const std::int64_t> ids) const {
  if (ids.empty()) throw std::invalid_argument("joint: empty caption");
  if (ids.size() > config_.max_tokens) {
    throw std::invalid_argument("joint: caption of " + std::to_string(ids.size()) + " tokens exceeds " +
                                std::to_string(config_.max_tokens));
  }
  std::vector<std::int64_t> pos(ids.size());
  std::iota(pos.begin(), pos.end(), std::int64_t{0});
  auto h = ad::add(ad::gather_rows(token_table_, ids), ad::gather_rows(text_positions_, pos));
  for (const auto& block : text_blocks_) h = block(h);
  h = ad::mean_rows(text_norm_(h));
  return ad::l2_normalize_rows(ad::reshape(text_proj_(h), {1, config_.embed_dim}));
}

std::vector<nn::NamedTensor> JointEmbeddingModel::export_state() const {
  auto out = nn::export_store(params_, "joint.");
  out.push_back({"joint.feature_mean", {feature_mean_.size()}, feature_mean_});
  out.push_back({"joint.feature_std", {feature_std_.size()}, feature_std_});
  return out;
}

void JointEmbeddingModel::import_state(const std::vector<nn::NamedTensor>& state) {
  nn::import_store(params_, state, "joint.");
  for (auto [name, dst] : {std::pair{"joint.feature_mean", &feature_mean_}, std::pair{"joint.feature_std", &feature_std_}}) {
    const auto& nt = nn::find_named(state, name);
    if (nt.values.size() != dst->size()) throw ad::ShapeError(std::string("tensor ") + name + " has the wrong size");
    *dst = nt.values;
  }
}

ClapAudioEmbedding embed_audio(const AudioClip& clip, const JointEmbeddingModel& model) {
  ad::NoGradGuard no_grad;
  const auto e = model.encode_audio(model.audio_input(model.spectrogram(clip)));
  return {{e.values().begin(), e.values().end()}, true};
}

TextEmbedding embed_text(std::span<const std::int64_t> ids, const JointEmbeddingModel& model) {
  ad::NoGradGuard no_grad;
  const auto e = model.encode_text(ids);
  return {{e.values().begin(), e.values().end()}, true};
}

TextEmbedding embed_text(std::string_view caption, const JointEmbeddingModel& model) {
  const auto ids = model.vocabulary().encode_words(caption);
  return embed_text(ids, model);
}

namespace {

void check_unit_rows(const Tensor& x, const char* what) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += x.at(r, c) * x.at(r, c);
    if (std::abs(std::sqrt(s) - 1.0) > 1e-6) {
      throw std::invalid_argument(std::string("contrastive_loss: ") + what + " row " + std::to_string(r) +
                                  " is not unit norm");
    }
  }
}

}  // namespace

Tensor contrastive_loss(const Tensor& audio_batch, const Tensor& text_batch, const Tensor& inverse_temperature) {
  if (audio_batch.rank() != 2 || audio_batch.rows() == 0) throw std::invalid_argument("contrastive_loss: empty batch");
  if (audio_batch.shape() != text_batch.shape()) throw ad::ShapeError("contrastive_loss: batch shapes differ");
  check_unit_rows(audio_batch, "audio");
  check_unit_rows(text_batch, "text");
  const std::size_t b = audio_batch.rows();
  std::vector<std::int64_t> diag(b);
  std::iota(diag.begin(), diag.end(), std::int64_t{0});
  const auto logits = ad::scale_by(ad::matmul_nt(audio_batch, text_batch), inverse_temperature);
  const auto a2t = ad::cross_entropy(logits, diag);
  const auto t2a = ad::cross_entropy(ad::transpose(logits), diag);
  return ad::scale(ad::add(a2t, t2a), 0.5);
}

Tensor contrastive_loss(const Tensor& audio_batch, const Tensor& text_batch, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
  return contrastive_loss(audio_batch, text_batch, Tensor::scalar(1.0 / temperature));
}

JointEmbeddingModel train_joint(std::span<const Pair> pairs, const JointConfig& config, const JointTrainConfig& train,
                                std::uint64_t seed, JointTrainStats* stats) {
  if (pairs.size() < 2) throw std::invalid_argument("train_joint: need at least 2 pairs");
  if (train.batch < 2) throw std::invalid_argument("train_joint: batch must hold at least 2 pairs");
  std::vector<std::string> captions;
  for (const auto& p : pairs) captions.push_back(p.caption);
  JointEmbeddingModel model(config, text::Vocabulary::from_captions(captions), seed);
  const bool degenerate = std::all_of(captions.begin(), captions.end(), [&](const auto& c) { return c == captions[0]; });
  if (stats) stats->degenerate_corpus = degenerate;

  // Spectrograms and token ids are fixed, so compute them once.
  std::vector<audio::Spectrogram> specs;
  std::vector<std::vector<std::int64_t>> tokens;
  const std::size_t bands = config.spectrogram.bands;
  std::vector<double> mean(bands, 0.0), sq(bands, 0.0);
  std::size_t frames = 0;
  for (const auto& p : pairs) {
    specs.push_back(model.spectrogram(p.clip));
    tokens.push_back(model.vocabulary().encode_words(p.caption));
    const auto& s = specs.back();
    for (std::size_t l = 0; l < s.frames; ++l)
      for (std::size_t b = 0; b < bands; ++b) mean[b] += s.values[l * bands + b];
    frames += s.frames;
  }
  for (auto& m : mean) m /= static_cast<double>(frames);
  for (const auto& s : specs)
    for (std::size_t l = 0; l < s.frames; ++l)
      for (std::size_t b = 0; b < bands; ++b) sq[b] += std::pow(s.values[l * bands + b] - mean[b], 2);
  model.feature_mean() = mean;
  for (std::size_t b = 0; b < bands; ++b) model.feature_std()[b] = std::max(std::sqrt(sq[b] / static_cast<double>(frames)), 1e-3);
  std::vector<Tensor> inputs;
  for (const auto& s : specs) inputs.push_back(model.audio_input(s));

  nn::Rng rng(seed ^ 0xc1a95eedULL);
  const std::size_t batch = std::min(train.batch, pairs.size());
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  ad::AdamWState opt;
  const ad::LRSchedule schedule{train.peak_lr, train.warmup_steps};
  auto& params = model.params().tensors();

  for (std::size_t step = 1; step <= train.steps; ++step) {
    if (cursor + batch > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    std::vector<Tensor> a_rows, t_rows;
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t k = order[cursor + i];
      a_rows.push_back(model.encode_audio(inputs[k]));
      t_rows.push_back(model.encode_text(tokens[k]));
    }
    cursor += batch;
    const auto loss = contrastive_loss(ad::concat_rows(a_rows), ad::concat_rows(t_rows), model.inverse_temperature());
    if (stats) {
      if (step == 1) stats->initial_loss = loss.item();
      stats->loss_curve.push_back(loss.item());
    }
    ad::backward(loss);
    ad::clip_grad_norm(params, train.clip_norm);
    ad::adamw_step(params, opt, ad::lr_at(step, schedule));
    ad::zero_grad(params);
    model.clamp_temperature();
  }
  model.freeze();
  return model;
}

RetrievalReport evaluate_retrieval(const JointEmbeddingModel& model, std::span<const Pair> pairs) {
  if (pairs.size() < 2) throw std::invalid_argument("evaluate_retrieval: need at least 2 pairs");
  std::vector<std::vector<double>> a, t;
  for (const auto& p : pairs) {
    a.push_back(embed_audio(p.clip, model).vector);
    t.push_back(embed_text(p.caption, model).vector);
  }
  const std::size_t n = pairs.size();
  RetrievalReport rep;
  rep.pairs = n;
  std::size_t hits = 0;
  double paired = 0.0, unpaired = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double s = std::inner_product(a[i].begin(), a[i].end(), t[j].begin(), 0.0);
      if (s > best_sim) {
        best_sim = s;
        best = j;
      }
      (i == j ? paired : unpaired) += s;
    }
    if (best == i) ++hits;
  }
  rep.recall_at_1 = static_cast<double>(hits) / static_cast<double>(n);
  rep.mean_paired_cosine = paired / static_cast<double>(n);
  rep.mean_unpaired_cosine = unpaired / static_cast<double>(n * (n - 1));
  return rep;
}

}  // namespace enclap::joint
