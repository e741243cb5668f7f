#pragma once

// Trainable stand-in for a neural audio codec. Frames of a log band
// spectrogram go through a strided 1-D convolution stack (along frequency)
// to a d-dimensional latent, which RVQ turns into N codes per frame. The
// frame decoder exists only to give the codec a training signal.

#include <cstdint>
#include <span>
#include <vector>

#include "enclap/audio.hpp"
#include "enclap/nn.hpp"
#include "enclap/rvq.hpp"

namespace enclap::codec {

using audio::AudioClip;

struct CodecConfig {
  std::size_t num_codebooks = 4;   // N
  std::size_t codebook_size = 64;  // V, entry 0 is the fixed zero vector
  std::size_t latent_dim = 16;     // d
  double frame_hz = 75.0;
  std::size_t window = 512;
  std::size_t bands = 64;
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t decoder_hidden = 128;

  void validate() const;
};

class CodecModel {
 public:
  CodecModel(const CodecConfig& config, std::uint64_t seed);

  const CodecConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  std::vector<Codebook>& codebooks() { return codebooks_; }
  const std::vector<Codebook>& codebooks() const { return codebooks_; }

  // Per-band standardisation of the input frames.
  std::vector<double>& feature_mean() { return feature_mean_; }
  std::vector<double>& feature_std() { return feature_std_; }

  // EMA statistics, N x V and N x V x d.
  std::vector<double>& ema_counts() { return ema_counts_; }
  std::vector<double>& ema_sums() { return ema_sums_; }

  /// Standardised spectrogram frames of `clip`, [L x bands].
  ad::Tensor features(const AudioClip& clip) const;
  /// Frame encoder: [F x bands] -> [F x d].
  ad::Tensor encode(const ad::Tensor& frames) const;
  /// Frame decoder: [F x d] -> [F x bands].
  ad::Tensor decode(const ad::Tensor& latents) const;

  void freeze() { params_.freeze(); }

  std::vector<nn::NamedTensor> export_state() const;
  void import_state(const std::vector<nn::NamedTensor>& state);

 private:
  CodecConfig config_;
  nn::ParamStore params_;
  ad::Tensor conv1_w_, conv1_b_, conv2_w_, conv2_b_;
  nn::Linear to_latent_, dec_hidden_, dec_out_;
  std::vector<Codebook> codebooks_;
  std::vector<double> feature_mean_, feature_std_;
  std::vector<double> ema_counts_, ema_sums_;
  std::size_t positions1_ = 0, positions2_ = 0;
};

/// Latent frame sequence [L x d]; throws audio::ClipTooShortError when the
/// clip is shorter than one frame.
ad::Tensor encode_frames(const AudioClip& clip, const CodecModel& model);

/// RVQ of every row of `latents` ([L x d]).
CodeMatrix quantize_latents(const ad::Tensor& latents, const CodecModel& model);

CodeMatrix codec_encode(const AudioClip& clip, const CodecModel& model);

struct CodecTrainConfig {
  std::size_t steps = 600;
  std::size_t batch_frames = 512;
  double peak_lr = 2e-3;
  std::uint64_t warmup_steps = 50;
  double commitment = 0.25;     // beta
  double ema_decay = 0.99;
  double dead_threshold = 0.03;  // EMA usage count below which an entry is reseeded
  double clip_norm = 1.0;
};

struct CodecEvaluation {
  double reconstruction_mse = 0.0;     // standardised feature space, all N stages
  std::vector<double> residual_energy;  // [k] = mean ||r_{k+1}||^2 per frame
  std::vector<std::size_t> used_entries;  // distinct codes per codebook
  bool collapsed = false;                 // some codebook uses fewer than 2 entries
};

struct CodecTrainStats {
  std::vector<double> loss_curve;
  CodecEvaluation final;
};

/// Trains from data-initialised codebooks. With steps = 0 the result is the
/// untrained (random encoder/decoder) baseline. The returned model is frozen.
CodecModel train_codec(std::span<const AudioClip> corpus, const CodecConfig& config,
                       const CodecTrainConfig& train, std::uint64_t seed, CodecTrainStats* stats = nullptr);

CodecEvaluation evaluate_codec(const CodecModel& model, std::span<const AudioClip> clips);

}  // namespace enclap::codec
