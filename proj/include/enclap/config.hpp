#pragma once

// Run configuration: one flat set of key = value settings shared by every
// stage. Layers apply in order defaults < config file < command-line
// overrides; unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "enclap/captioner.hpp"
#include "enclap/codec.hpp"
#include "enclap/joint.hpp"
#include "enclap/synth.hpp"

namespace enclap::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Stage { kMakeData, kTrainCodec, kTrainClap, kTrainCaptioner, kCaption, kEvaluate, kAblate };

Stage parse_stage(const std::string& name);
std::string stage_name(Stage stage);

struct RunConfig {
  Stage stage = Stage::kMakeData;
  std::uint64_t seed = 1;
  std::string data_dir = "data";
  std::string out_dir = "runs";
  std::string resume;        // captioner checkpoint to continue from
  std::string split = "test";  // caption / evaluate

  // Synthetic corpus.
  std::size_t train_clips = 2000;
  std::size_t validation_clips = 200;
  std::size_t test_clips = 200;
  double min_duration_s = 1.0;
  double max_duration_s = 4.0;

  // Codec.
  std::size_t num_codebooks = 4;
  std::size_t codebook_size = 64;
  std::size_t latent_dim = 16;
  std::size_t codec_steps = 600;
  std::size_t codec_batch_frames = 512;
  double codec_lr = 2e-3;
  std::size_t codec_warmup = 50;

  // Joint audio/text embedding.
  std::size_t clap_dim = 64;
  std::size_t clap_hidden = 96;
  std::size_t clap_ffn = 192;
  std::size_t clap_frame_pool = 4;
  std::size_t clap_steps = 1600;
  std::size_t clap_batch = 32;
  double clap_lr = 2e-3;
  std::size_t clap_warmup = 60;

  // Captioner model.
  std::size_t model_dim = 128;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t ffn = 512;
  bool use_clap = true;   // false: CLAP row zeroed
  bool use_codes = true;  // false: empty code sequence

  // Captioner optimisation.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double peak_lr = 6.5e-5;
  std::size_t warmup_steps = 2000;
  double clip_norm = 1.0;
  double mask_ratio = 0.15;
  std::size_t span_length = 10;
  double lambda = 0.7;
  double label_smoothing = 0.2;
  std::size_t epochs = 15;
  std::size_t batch = 16;
  std::size_t checkpoint_every = 0;  // steps; 0 = only at the end
  std::size_t max_steps = 0;         // stop early after this many steps (0 = full run)

  // Decoding.
  std::size_t beam_size = 4;
  std::size_t max_caption_length = 64;
  double length_penalty = 1.0;

  // Ablation.
  std::string ablation_seeds = "1,2,3";

  void validate() const;
  /// Every setting except stage, as key/value text in declaration order.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
};

/// Applies `key = value` text. Blank lines and lines starting with '#' are
/// skipped. Errors name `source` and the 1-based line number.
void apply_config_text(RunConfig& config, const std::string& text, const std::string& source = "config");
void apply_config_file(RunConfig& config, const std::filesystem::path& path);
/// One `key=value` override.
void apply_override(RunConfig& config, const std::string& assignment);
void apply_pairs(RunConfig& config, const std::vector<std::pair<std::string, std::string>>& pairs);

/// defaults < file (when non-empty) < overrides, then validate().
RunConfig parse_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

std::vector<std::uint64_t> ablation_seed_list(const RunConfig& config);

synth::CorpusConfig corpus_config(const RunConfig& config);
codec::CodecConfig codec_config(const RunConfig& config);
codec::CodecTrainConfig codec_train_config(const RunConfig& config);
joint::JointConfig joint_config(const RunConfig& config);
joint::JointTrainConfig joint_train_config(const RunConfig& config);
captioner::CaptionerConfig captioner_config(const RunConfig& config);
captioner::CaptionerTrainConfig captioner_train_config(const RunConfig& config);
captioner::GenerateOptions generate_options(const RunConfig& config);

}  // namespace enclap::cli
