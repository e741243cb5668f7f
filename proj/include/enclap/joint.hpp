#pragma once

// Small contrastive audio/text embedding model. Both towers end in a
// mean pool, a projection to D dimensions and L2 normalisation; the audio
// embedding is what the captioner consumes as its sequence-level summary.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "enclap/audio.hpp"
#include "enclap/nn.hpp"
#include "enclap/text.hpp"

namespace enclap::joint {

using ad::Tensor;
using audio::AudioClip;

struct JointConfig {
  std::size_t embed_dim = 64;  // D
  std::size_t hidden = 96;
  std::size_t heads = 4;
  std::size_t ffn = 192;
  std::size_t audio_layers = 2;
  std::size_t text_layers = 1;
  std::size_t max_tokens = 64;
  std::size_t position_features = 16;  // sinusoids of the relative frame position
  std::size_t frame_pool = 4;          // adjacent STFT frames averaged before the encoder
  bool deltas = true;                  // append frame-to-frame differences of the bands
  audio::SpectrogramConfig spectrogram{50.0, 640, 64};  // 40 ms window, 20 ms hop at 16 kHz
  double init_temperature = 0.07;
  double min_temperature = 1e-3;
  double max_temperature = 1.0;

  void validate() const;
};

struct ClapAudioEmbedding {
  std::vector<double> vector;
  bool unit_norm = true;
};

struct TextEmbedding {
  std::vector<double> vector;
  bool unit_norm = true;
};

class JointEmbeddingModel {
 public:
  JointEmbeddingModel(const JointConfig& config, text::Vocabulary vocab, std::uint64_t seed);

  const JointConfig& config() const { return config_; }
  const text::Vocabulary& vocabulary() const { return vocab_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  std::vector<double>& feature_mean() { return feature_mean_; }
  std::vector<double>& feature_std() { return feature_std_; }

  double temperature() const;
  /// 1 / temperature as a differentiable scalar.
  Tensor inverse_temperature() const;
  /// Pulls the temperature back into [min, max].
  void clamp_temperature();

  /// Raw log band spectrogram [L x bands]; throws audio::ClipTooShortError.
  audio::Spectrogram spectrogram(const AudioClip& clip) const;
  /// Standardised frames, then band deltas (when enabled), then position features.
  Tensor audio_input(const audio::Spectrogram& spec) const;
  std::size_t input_width() const;
  /// [1 x D], unit norm.
  Tensor encode_audio(const Tensor& input) const;
  /// Token ids without bos/eos; [1 x D], unit norm.
  Tensor encode_text(std::span<const std::int64_t> ids) const;

  void freeze() { params_.freeze(); }

  std::vector<nn::NamedTensor> export_state() const;
  void import_state(const std::vector<nn::NamedTensor>& state);

 private:
  JointConfig config_;
  text::Vocabulary vocab_;
  nn::ParamStore params_;
  nn::Linear audio_in_;
  std::vector<nn::EncoderBlock> audio_blocks_;
  nn::LayerNorm audio_norm_;
  nn::Linear audio_proj_;
  Tensor token_table_, text_positions_;
  std::vector<nn::EncoderBlock> text_blocks_;
  nn::LayerNorm text_norm_;
  nn::Linear text_proj_;
  Tensor log_inv_temp_;
  std::vector<double> feature_mean_, feature_std_;
};

ClapAudioEmbedding embed_audio(const AudioClip& clip, const JointEmbeddingModel& model);
TextEmbedding embed_text(std::string_view caption, const JointEmbeddingModel& model);
TextEmbedding embed_text(std::span<const std::int64_t> ids, const JointEmbeddingModel& model);

/// Symmetric InfoNCE over S = A T^T scaled by 1/temperature, positives on
/// the diagonal. Rows of both batches must have unit norm (within 1e-6).
Tensor contrastive_loss(const Tensor& audio_batch, const Tensor& text_batch, double temperature);
Tensor contrastive_loss(const Tensor& audio_batch, const Tensor& text_batch, const Tensor& inverse_temperature);

struct Pair {
  AudioClip clip;
  std::string caption;
};

struct JointTrainConfig {
  std::size_t steps = 1600;
  std::size_t batch = 32;
  double peak_lr = 2e-3;
  std::uint64_t warmup_steps = 60;
  double clip_norm = 1.0;
};

struct JointTrainStats {
  std::vector<double> loss_curve;
  double initial_loss = 0.0;  // first batch, before any update
  bool degenerate_corpus = false;  // every caption identical
};

/// Builds the vocabulary from the training captions, fits the feature
/// standardisation, trains, and returns a frozen model.
JointEmbeddingModel train_joint(std::span<const Pair> pairs, const JointConfig& config, const JointTrainConfig& train,
                                std::uint64_t seed, JointTrainStats* stats = nullptr);

struct RetrievalReport {
  double recall_at_1 = 0.0;  // audio -> text
  double mean_paired_cosine = 0.0;
  double mean_unpaired_cosine = 0.0;
  std::size_t pairs = 0;
};

RetrievalReport evaluate_retrieval(const JointEmbeddingModel& model, std::span<const Pair> pairs);

}  // namespace enclap::joint
