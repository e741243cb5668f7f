#include "enclap/stages.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "enclap/metrics.hpp"
#include "enclap/pipeline.hpp"
#include "enclap/synth.hpp"

namespace enclap::cli {

namespace {

Checkpoint base_checkpoint(const std::string& kind, const RunConfig& config) {
  Checkpoint c;
  c.kind = kind;
  c.config = config.to_pairs();
  return c;
}

void expect_kind(const Checkpoint& c, const std::string& kind) {
  if (c.kind != kind) throw CheckpointError("expected a " + kind + " checkpoint, found '" + c.kind + "'");
}

double elapsed(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

std::vector<audio::AudioClip> clips_of(const std::vector<synth::CorpusItem>& items) {
  std::vector<audio::AudioClip> out;
  for (const auto& item : items) out.push_back(item.clip);
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::string> generate_all(const std::vector<synth::CorpusItem>& items, const codec::CodecModel& codec,
                                      const joint::JointEmbeddingModel& clap, const captioner::CaptionerModel& model,
                                      const captioner::GenerateOptions& options) {
  std::vector<std::string> out;
  for (const auto& item : items) out.push_back(pipeline::generate_caption(item.clip, codec, clap, model, options));
  return out;
}

metrics::EvalReport score(const std::vector<synth::CorpusItem>& items, const std::vector<std::string>& candidates,
                          const std::string& model_id, const std::string& split, std::uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<std::vector<std::string>> refs;
  for (const auto& item : items) {
    ids.push_back(item.id);
    refs.push_back(item.references);
  }
  return metrics::evaluate(ids, candidates, refs, model_id, split, seed);
}

}  // namespace

Checkpoint codec_checkpoint(const codec::CodecModel& model, const RunConfig& config) {
  auto c = base_checkpoint("codec", config);
  c.tensors = model.export_state();
  return c;
}

Checkpoint clap_checkpoint(const joint::JointEmbeddingModel& model, const RunConfig& config) {
  auto c = base_checkpoint("clap", config);
  c.vocabulary = model.vocabulary().words();
  c.tensors = model.export_state();
  return c;
}

Checkpoint captioner_checkpoint(const captioner::CaptionerModel& model, const captioner::TrainerState* state,
                                const RunConfig& config) {
  auto c = base_checkpoint("captioner", config);
  c.vocabulary = model.vocabulary().words();
  c.tensors = model.export_state();
  if (state) {
    if (state->optimizer.step_count != state->step) throw CheckpointError("trainer and optimiser step counts differ");
    c.optimizer_step = state->step;
    c.first_moment = state->optimizer.first_moment;
    c.second_moment = state->optimizer.second_moment;
    c.rng = state->rng;
  }
  return c;
}

RunConfig checkpoint_config(const Checkpoint& checkpoint) {
  RunConfig config;
  try {
    apply_pairs(config, checkpoint.config);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint configuration: ") + e.what());
  }
  return config;
}

codec::CodecModel restore_codec(const Checkpoint& checkpoint) {
  expect_kind(checkpoint, "codec");
  const auto config = checkpoint_config(checkpoint);
  codec::CodecModel model(codec_config(config), config.seed);
  model.import_state(checkpoint.tensors);
  model.freeze();
  return model;
}

joint::JointEmbeddingModel restore_clap(const Checkpoint& checkpoint) {
  expect_kind(checkpoint, "clap");
  const auto config = checkpoint_config(checkpoint);
  joint::JointEmbeddingModel model(joint_config(config), text::Vocabulary::from_words(checkpoint.vocabulary), config.seed);
  model.import_state(checkpoint.tensors);
  model.freeze();
  return model;
}

captioner::CaptionerModel restore_captioner(const Checkpoint& checkpoint, captioner::TrainerState* state) {
  expect_kind(checkpoint, "captioner");
  const auto config = checkpoint_config(checkpoint);
  captioner::CaptionerModel model(captioner_config(config), text::Vocabulary::from_words(checkpoint.vocabulary),
                                  config.seed);
  model.import_state(checkpoint.tensors);
  if (state) {
    state->step = checkpoint.optimizer_step;
    state->optimizer.config = captioner_train_config(config).adamw;
    state->optimizer.step_count = checkpoint.optimizer_step;
    state->optimizer.first_moment = checkpoint.first_moment;
    state->optimizer.second_moment = checkpoint.second_moment;
    state->rng = checkpoint.rng;
  }
  return model;
}

std::filesystem::path codec_path(const RunConfig& c) { return std::filesystem::path(c.out_dir) / "codec.ckpt"; }
std::filesystem::path clap_path(const RunConfig& c) { return std::filesystem::path(c.out_dir) / "clap.ckpt"; }
std::filesystem::path captioner_path(const RunConfig& c) { return std::filesystem::path(c.out_dir) / "captioner.ckpt"; }
std::filesystem::path captions_path(const RunConfig& c) {
  return std::filesystem::path(c.out_dir) / ("captions_" + c.split + ".txt");
}

void run_make_data(const RunConfig& config, std::ostream& log) {
  const auto corpus = synth::make_corpus(corpus_config(config), config.seed);
  synth::write_corpus(config.data_dir, corpus);
  log << "wrote " << corpus.train.size() << "/" << corpus.validation.size() << "/" << corpus.test.size()
      << " clips to " << config.data_dir << "\n";
}

void run_train_codec(const RunConfig& config, std::ostream& log) {
  const auto train = synth::read_split(config.data_dir, "train");
  const auto t0 = std::chrono::steady_clock::now();
  codec::CodecTrainStats stats;
  const auto model = codec::train_codec(clips_of(train), codec_config(config), codec_train_config(config), config.seed,
                                        &stats);
  save_checkpoint(codec_checkpoint(model, config), codec_path(config));
  log << "codec: " << stats.loss_curve.size() << " steps in " << elapsed(t0) << " s, reconstruction mse "
      << stats.final.reconstruction_mse << (stats.final.collapsed ? " (a codebook collapsed)" : "") << "\n";
}

void run_train_clap(const RunConfig& config, std::ostream& log) {
  const auto train = synth::read_split(config.data_dir, "train");
  const auto test = synth::read_split(config.data_dir, "test");
  const auto t0 = std::chrono::steady_clock::now();
  const auto pairs = pipeline::training_pairs(train);
  const auto model = joint::train_joint(pairs, joint_config(config), joint_train_config(config), config.seed);
  save_checkpoint(clap_checkpoint(model, config), clap_path(config));
  const auto held_out = pipeline::retrieval_pairs(test, 64);
  const auto rep = joint::evaluate_retrieval(model, held_out);
  std::ofstream out(std::filesystem::path(config.out_dir) / "clap_retrieval.txt");
  out << "pairs = " << rep.pairs << "\nrecall_at_1 = " << rep.recall_at_1 << "\nmean_paired_cosine = "
      << rep.mean_paired_cosine << "\nmean_unpaired_cosine = " << rep.mean_unpaired_cosine << "\n";
  log << "clap: trained in " << elapsed(t0) << " s, held-out recall@1 " << rep.recall_at_1 << " over " << rep.pairs
      << " pairs\n";
}

void run_train_captioner(const RunConfig& config, std::ostream& log) {
  const auto train = synth::read_split(config.data_dir, "train");
  const auto codec = restore_codec(load_checkpoint(codec_path(config)));
  const auto clap = restore_clap(load_checkpoint(clap_path(config)));

  captioner::TrainerState state;
  const bool resuming = !config.resume.empty();
  auto model = resuming ? restore_captioner(load_checkpoint(config.resume), &state)
                        : captioner::CaptionerModel(captioner_config(config), pipeline::caption_vocabulary(train),
                                                    config.seed);
  const auto examples = pipeline::make_examples(train, codec, clap, model.vocabulary());
  captioner::CaptionerTrainer trainer(model, examples, captioner_train_config(config), config.seed);
  if (resuming) {
    trainer.import_state(state);
    log << "resumed from " << config.resume << " at step " << trainer.steps_done() << "\n";
  }
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t stop = config.max_steps > 0 ? std::min(config.max_steps, trainer.total_steps()) : trainer.total_steps();
  double running = 0.0;
  while (trainer.steps_done() < stop) {
    const double loss = trainer.step();
    running = trainer.steps_done() == 1 ? loss : 0.95 * running + 0.05 * loss;
    const auto s = trainer.steps_done();
    if (s % 50 == 0 || s == stop) log << "step " << s << "/" << trainer.total_steps() << " loss " << running << "\n";
    if (config.checkpoint_every > 0 && s % config.checkpoint_every == 0 && s != stop) {
      const auto st = trainer.export_state();
      save_checkpoint(captioner_checkpoint(model, &st, config), captioner_path(config));
    }
  }
  const auto st = trainer.export_state();
  save_checkpoint(captioner_checkpoint(model, &st, config), captioner_path(config));
  log << "captioner: " << trainer.steps_done() << " steps, " << elapsed(t0) << " s\n";
}

void run_caption(const RunConfig& config, std::ostream& log) {
  const auto items = synth::read_split(config.data_dir, config.split);
  const auto codec = restore_codec(load_checkpoint(codec_path(config)));
  const auto clap = restore_clap(load_checkpoint(clap_path(config)));
  const auto model = restore_captioner(load_checkpoint(captioner_path(config)));
  const auto captions = generate_all(items, codec, clap, model, generate_options(config));
  std::ofstream out(captions_path(config));
  if (!out) throw std::runtime_error("cannot write " + captions_path(config).string());
  for (const auto& c : captions) out << c << "\n";
  log << "captioned " << captions.size() << " " << config.split << " clips into " << captions_path(config).string() << "\n";
}

void run_evaluate(const RunConfig& config, std::ostream& log) {
  const auto items = synth::read_split(config.data_dir, config.split);
  std::ifstream in(captions_path(config));
  if (!in) throw std::runtime_error("cannot read " + captions_path(config).string() + " (run the caption stage first)");
  std::vector<std::string> captions;
  for (std::string line; std::getline(in, line);) captions.push_back(line);
  if (captions.size() != items.size()) {
    throw std::runtime_error(captions_path(config).string() + " has " + std::to_string(captions.size()) +
                             " lines for " + std::to_string(items.size()) + " clips");
  }
  const auto rep = score(items, captions, "enclap-desk", config.split, config.seed);
  metrics::write_report(rep, std::filesystem::path(config.out_dir) / ("eval_" + config.split));
  log << config.split << ": CIDEr-D " << rep.cider.corpus << "  METEOR-lite " << rep.meteor.corpus
      << "  event recall " << rep.events.corpus << "\n";
}

void run_stage(const RunConfig& config, std::ostream& log) {
  std::filesystem::create_directories(config.out_dir);
  switch (config.stage) {
    case Stage::kMakeData: return run_make_data(config, log);
    case Stage::kTrainCodec: return run_train_codec(config, log);
    case Stage::kTrainClap: return run_train_clap(config, log);
    case Stage::kTrainCaptioner: return run_train_captioner(config, log);
    case Stage::kCaption: return run_caption(config, log);
    case Stage::kEvaluate: return run_evaluate(config, log);
    case Stage::kAblate: {
      const auto rep = run_ablation(config, &log);
      write_ablation(rep, config.out_dir);
      log << rep.table();
      return;
    }
  }
}

std::vector<AblationVariant> ablation_variants() {
  return {{"EnCLAP-desk", true, true, true},
          {"- MCM", true, true, false},
          {"- CLAP", false, true, true},
          {"- EnCodec", true, false, true}};
}

const AblationRow& AblationReport::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.variant.name == name) return r;
  throw std::out_of_range("no ablation row '" + name + "'");
}

std::string AblationReport::table() const {
  std::ostringstream os;
  char buf[160];
  os << "Ablation (median over " << seeds.size() << " seeds)\n";
  std::snprintf(buf, sizeof buf, "%-14s %12s %10s %13s\n", "Model", "METEOR-lite", "CIDEr-D", "event recall");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-14s %12.3f %10.3f %13.3f\n", r.variant.name.c_str(), r.median_meteor,
                  r.median_cider, r.median_events);
    os << buf;
  }
  return os.str();
}

AblationReport run_ablation(const RunConfig& config, std::ostream* log) {
  const auto t_start = std::chrono::steady_clock::now();
  AblationReport rep;
  rep.seeds = ablation_seed_list(config);
  for (const auto& v : ablation_variants()) rep.rows.push_back({v, {}, {}, {}, 0.0, 0.0, 0.0});
  for (const auto seed : rep.seeds) {
    auto t0 = std::chrono::steady_clock::now();
    const auto corpus = synth::make_corpus(corpus_config(config), seed);
    const auto codec = codec::train_codec(clips_of(corpus.train), codec_config(config), codec_train_config(config), seed);
    const auto clap = joint::train_joint(pipeline::training_pairs(corpus.train), joint_config(config),
                                         joint_train_config(config), seed);
    const auto held_out = pipeline::retrieval_pairs(corpus.test, 64);
    rep.clap_recall.push_back(joint::evaluate_retrieval(clap, held_out).recall_at_1);
    const auto vocab = pipeline::caption_vocabulary(corpus.train);
    const auto examples = pipeline::make_examples(corpus.train, codec, clap, vocab);
    if (log) {
      *log << "seed " << seed << ": codec + clap in " << elapsed(t0) << " s, clap recall@1 " << rep.clap_recall.back()
           << "\n";
    }
    for (auto& row : rep.rows) {
      t0 = std::chrono::steady_clock::now();
      RunConfig variant = config;
      variant.use_clap = row.variant.use_clap;
      variant.use_codes = row.variant.use_codes;
      if (!row.variant.use_mcm) variant.lambda = 0.0;
      const auto model = captioner::train_captioner(examples, captioner_config(variant), vocab,
                                                    captioner_train_config(variant), seed);
      const auto captions = generate_all(corpus.test, codec, clap, model, generate_options(variant));
      const auto s = score(corpus.test, captions, row.variant.name, "test", seed);
      row.cider.push_back(s.cider.corpus);
      row.meteor.push_back(s.meteor.corpus);
      row.events.push_back(s.events.corpus);
      if (log) {
        *log << "  " << row.variant.name << ": CIDEr-D " << s.cider.corpus << " METEOR-lite " << s.meteor.corpus
             << " event recall " << s.events.corpus << " (" << elapsed(t0) << " s)\n";
      }
    }
  }
  for (auto& row : rep.rows) {
    row.median_cider = median(row.cider);
    row.median_meteor = median(row.meteor);
    row.median_events = median(row.events);
  }
  rep.seconds = elapsed(t_start);
  return rep;
}

void write_ablation(const AblationReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream txt(out_dir / "ablation.txt");
  txt << report.table();
  std::ofstream csv(out_dir / "ablation.csv");
  csv << "variant,seed,cider_d,meteor_lite,event_recall\n";
  char buf[64];
  for (const auto& r : report.rows) {
    for (std::size_t i = 0; i < report.seeds.size() && i < r.cider.size(); ++i) {
      csv << r.variant.name << ',' << report.seeds[i];
      for (double x : {r.cider[i], r.meteor[i], r.events[i]}) {
        std::snprintf(buf, sizeof buf, ",%.9f", x);
        csv << buf;
      }
      csv << "\n";
    }
  }
  if (!txt || !csv) throw std::runtime_error("cannot write ablation report under " + out_dir.string());
}

}  // namespace enclap::cli
