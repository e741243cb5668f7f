#pragma once

// Encoder-decoder captioner over codec codes plus one CLAP row.
//
// Encoder input, for L code frames (L + 3 rows):
//   row 0        projected CLAP embedding (no position)
//   row 1        e_bos + pos[0]
//   rows 2..L+1  sum_n W_n[C[n, l]] + pos[l + 1]
//   row L+2      e_eos + pos[L + 1]
// Each code table has V + 1 rows; row V is that codebook's mask token.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "enclap/nn.hpp"
#include "enclap/optim.hpp"
#include "enclap/rvq.hpp"
#include "enclap/text.hpp"

namespace enclap::captioner {

using ad::Tensor;
using codec::CodeMatrix;

struct CaptionerConfig {
  std::size_t num_codebooks = 4;    // N
  std::size_t codebook_size = 64;   // V
  std::size_t clap_dim = 64;        // D
  std::size_t model_dim = 128;      // D_b
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t ffn = 512;
  std::size_t max_code_length = 320;  // L_max; 4 s at 75 Hz fits
  std::size_t max_caption_length = 64;
  // Ablation switches. Without CLAP row 0 is all zeros; without codes the
  // encoder sees L = 0 (clap, bos, eos).
  bool use_clap = true;
  bool use_codes = true;

  void validate() const;
};

class CaptionerModel {
 public:
  CaptionerModel(const CaptionerConfig& config, text::Vocabulary vocab, std::uint64_t seed);

  const CaptionerConfig& config() const { return config_; }
  const text::Vocabulary& vocabulary() const { return vocab_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  const Tensor& code_table(std::size_t n) const { return code_tables_.at(n); }
  const Tensor& positions() const { return positions_; }
  const nn::Linear& clap_projection() const { return clap_proj_; }
  const Tensor& bos_embedding() const { return bos_; }
  const Tensor& eos_embedding() const { return eos_; }
  const nn::Linear& mcm_head(std::size_t n) const { return mcm_heads_.at(n); }
  const nn::Linear& output_head() const { return output_head_; }
  /// Parameters of the N MCM heads (a subset of params()).
  std::vector<Tensor> mcm_parameters() const;

  /// Encoder stack plus final norm: [(L+3) x D_b] -> [(L+3) x D_b].
  Tensor encode(const Tensor& encoder_input) const;
  /// Per-layer cross-attention keys/values of the encoder states.
  std::vector<nn::KeyValue> memory(const Tensor& encoder_states) const;
  /// Teacher-forced logits: decoder input is bos followed by `prefix`;
  /// output is [(|prefix| + 1) x K].
  Tensor decode(const std::vector<nn::KeyValue>& memory, std::span<const std::int64_t> prefix) const;

  void freeze() { params_.freeze(); }

  std::vector<nn::NamedTensor> export_state() const;
  void import_state(const std::vector<nn::NamedTensor>& state);

 private:
  CaptionerConfig config_;
  text::Vocabulary vocab_;
  nn::ParamStore params_;
  std::vector<Tensor> code_tables_;
  nn::Linear clap_proj_;
  Tensor bos_, eos_, positions_;
  std::vector<nn::EncoderBlock> encoder_;
  nn::LayerNorm encoder_norm_;
  Tensor token_table_, token_positions_;
  std::vector<nn::DecoderBlock> decoder_;
  nn::LayerNorm decoder_norm_;
  nn::Linear output_head_;
  std::vector<nn::Linear> mcm_heads_;
};

/// e_encodec[l] = sum_n W_n[C[n, l]], [L x D_b]. Index V (mask) is allowed.
Tensor embed_codes(const CodeMatrix& codes, const CaptionerModel& model);

/// Assembles the (L + 3)-row encoder input. `clap` is the D-dimensional
/// audio embedding; it is ignored (row 0 = 0) when the model has use_clap off.
Tensor build_encoder_input(const Tensor& code_embeddings, std::span<const double> clap, const CaptionerModel& model);

struct MaskPlan {
  std::vector<std::vector<std::size_t>> positions;  // per codebook, ascending
  std::size_t span_length = 10;
  double mask_ratio = 0.15;

  bool empty() const;
};

struct MaskedCodes {
  CodeMatrix codes;  // C~, masked entries hold V
  MaskPlan plan;
};

/// Per codebook, floor(ratio * L) positions covered by non-overlapping spans
/// of `span_length` (one shorter span absorbs the remainder), placed
/// uniformly at random. `mask_id` is written into masked entries.
MaskedCodes span_mask(const CodeMatrix& codes, double mask_ratio, std::size_t span_length, std::int64_t mask_id,
                      std::mt19937_64& rng);

/// Weighted sum of per-codebook losses, weight (1/2)^i for codebook i = 1..N.
Tensor mcm_weighting(std::span<const Tensor> per_codebook);

/// Per codebook: mean cross-entropy of `logits[i]` ([m_i x V]) against
/// `targets[i]`, then mcm_weighting. Codebooks with m_i = 0 contribute 0.
Tensor mcm_loss_from_logits(std::span<const Tensor> logits, const std::vector<std::vector<std::int64_t>>& targets);

/// MCM loss read from encoder rows l + 2. An empty plan gives exactly 0.
Tensor mcm_loss(const Tensor& encoder_states, const MaskPlan& plan, const CodeMatrix& codes,
                const CaptionerModel& model);

/// Mean label-smoothed NLL over the L_T caption tokens; logits are [L_T x K].
Tensor caption_loss(const Tensor& logits, const text::Caption& caption, double epsilon = 0.2);

/// l_caption + lambda l_mcm, lambda in [0, 1].
Tensor total_loss(const Tensor& caption, const Tensor& mcm, double lambda = 0.7);

/// One training pair after the frozen upstream models have run.
struct Example {
  CodeMatrix codes;
  std::vector<double> clap;
  text::Caption caption;
};

struct ExampleLoss {
  Tensor caption;
  Tensor mcm;
  Tensor total;
};

/// Forward pass for one example: mask (when lambda > 0 and ratio > 0),
/// encode, MCM on masked rows, teacher-forced caption loss.
ExampleLoss example_loss(const Example& example, const CaptionerModel& model, double lambda, double mask_ratio,
                         std::size_t span_length, double label_smoothing, std::mt19937_64& rng);

struct CaptionerTrainConfig {
  std::size_t epochs = 15;
  std::size_t batch = 16;
  double peak_lr = 1e-3;
  std::uint64_t warmup_steps = 100;
  ad::AdamWConfig adamw{};
  double lambda = 0.7;
  double mask_ratio = 0.15;
  std::size_t span_length = 10;
  double label_smoothing = 0.2;
  double clip_norm = 1.0;

  void validate() const;
};

struct TrainerState {
  std::uint64_t step = 0;
  ad::AdamWState optimizer;
  std::string rng;  // textual mt19937_64 state
};

/// Step-at-a-time trainer, so a run can be checkpointed and resumed. Batch
/// order for epoch e is a permutation drawn from (seed, e), so only the
/// step counter, optimiser moments and masking RNG need saving.
class CaptionerTrainer {
 public:
  CaptionerTrainer(CaptionerModel& model, std::span<const Example> data, const CaptionerTrainConfig& config,
                   std::uint64_t seed);

  std::size_t steps_per_epoch() const;
  std::size_t total_steps() const;
  std::uint64_t steps_done() const { return state_.step; }
  bool finished() const { return state_.step >= total_steps(); }

  /// One optimiser step; returns the mean total loss of the batch.
  /// Throws ad::NonFiniteError naming the step on NaN/Inf.
  double step();

  /// Parameters the optimiser updates (the MCM heads are left out at lambda = 0).
  const std::vector<Tensor>& trainable() const { return trainable_; }

  TrainerState export_state() const;
  void import_state(const TrainerState& state);

 private:
  CaptionerModel& model_;
  std::span<const Example> data_;
  CaptionerTrainConfig config_;
  std::uint64_t seed_;
  std::vector<Tensor> trainable_;
  TrainerState state_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t order_epoch_ = static_cast<std::size_t>(-1);
};

struct CaptionerTrainStats {
  std::vector<double> loss_curve;  // per step
};

/// Trains a fresh model and returns it frozen.
CaptionerModel train_captioner(std::span<const Example> data, const CaptionerConfig& config,
                               const text::Vocabulary& vocab, const CaptionerTrainConfig& train, std::uint64_t seed,
                               CaptionerTrainStats* stats = nullptr);

struct GenerateOptions {
  std::size_t beam_size = 4;
  std::size_t max_length = 64;  // tokens, eos included
  double length_penalty = 1.0;  // score = log p / length^alpha
};

/// Beam search over the decoder (no masking). The greedy rollout always
/// competes in the final ranking, so the result never scores below it.
text::Caption generate_from_codes(const CodeMatrix& codes, std::span<const double> clap, const CaptionerModel& model,
                                  const GenerateOptions& options = {});

/// Plain argmax rollout.
text::Caption greedy_decode(const CodeMatrix& codes, std::span<const double> clap, const CaptionerModel& model,
                            std::size_t max_length = 64, double length_penalty = 1.0);

/// Length-normalised log-probability of a finished caption (ids end with eos).
double sequence_score(const CodeMatrix& codes, std::span<const double> clap, const CaptionerModel& model,
                      std::span<const std::int64_t> ids, double length_penalty = 1.0);

}  // namespace enclap::captioner
