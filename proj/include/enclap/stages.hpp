#pragma once

// Pipeline stages. Each stage reads its inputs from files under data_dir /
// out_dir and writes its outputs there, so stages can run as separate
// processes.
//
//   make-data        data_dir/ corpus (see synth.hpp)
//   train-codec      out_dir/codec.ckpt
//   train-clap       out_dir/clap.ckpt, out_dir/clap_retrieval.txt
//   train-captioner  out_dir/captioner.ckpt (also every checkpoint_every steps)
//   caption          out_dir/captions_<split>.txt, one caption per manifest line
//   evaluate         out_dir/eval_<split>.txt and .csv
//   ablate           out_dir/ablation.txt and ablation.csv

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "enclap/captioner.hpp"
#include "enclap/checkpoint.hpp"
#include "enclap/codec.hpp"
#include "enclap/config.hpp"
#include "enclap/joint.hpp"

namespace enclap::cli {

Checkpoint codec_checkpoint(const codec::CodecModel& model, const RunConfig& config);
Checkpoint clap_checkpoint(const joint::JointEmbeddingModel& model, const RunConfig& config);
Checkpoint captioner_checkpoint(const captioner::CaptionerModel& model, const captioner::TrainerState* state,
                                const RunConfig& config);

/// The configuration a checkpoint was written with.
RunConfig checkpoint_config(const Checkpoint& checkpoint);
/// Rebuild frozen models; each throws CheckpointError on a kind mismatch.
codec::CodecModel restore_codec(const Checkpoint& checkpoint);
joint::JointEmbeddingModel restore_clap(const Checkpoint& checkpoint);
/// `state`, when given, receives the saved trainer state.
captioner::CaptionerModel restore_captioner(const Checkpoint& checkpoint, captioner::TrainerState* state = nullptr);

std::filesystem::path codec_path(const RunConfig& config);
std::filesystem::path clap_path(const RunConfig& config);
std::filesystem::path captioner_path(const RunConfig& config);
std::filesystem::path captions_path(const RunConfig& config);

void run_make_data(const RunConfig& config, std::ostream& log);
void run_train_codec(const RunConfig& config, std::ostream& log);
void run_train_clap(const RunConfig& config, std::ostream& log);
void run_train_captioner(const RunConfig& config, std::ostream& log);
void run_caption(const RunConfig& config, std::ostream& log);
void run_evaluate(const RunConfig& config, std::ostream& log);
void run_stage(const RunConfig& config, std::ostream& log);

struct AblationVariant {
  std::string name;
  bool use_clap = true;
  bool use_codes = true;
  bool use_mcm = true;
};

/// full, -MCM (lambda = 0), -CLAP (zero CLAP row), -EnCodec (no codes).
std::vector<AblationVariant> ablation_variants();

struct AblationRow {
  AblationVariant variant;
  std::vector<double> cider, meteor, events;  // per seed
  double median_cider = 0.0, median_meteor = 0.0, median_events = 0.0;
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;  // ablation_variants() order
  std::vector<double> clap_recall;  // held-out recall@1 per seed
  double seconds = 0.0;

  const AblationRow& row(const std::string& name) const;
  std::string table() const;
};

/// Per seed: fresh corpus, codec and joint model, then the four captioner
/// variants trained from the same seed on the same frozen inputs and scored
/// on the test split.
AblationReport run_ablation(const RunConfig& config, std::ostream* log = nullptr);
void write_ablation(const AblationReport& report, const std::filesystem::path& out_dir);

}  // namespace enclap::cli
