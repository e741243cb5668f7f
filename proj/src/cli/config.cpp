#include "enclap/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace enclap::cli {

namespace {

const std::vector<std::pair<Stage, std::string>>& stage_names() {
  static const std::vector<std::pair<Stage, std::string>> names{
      {Stage::kMakeData, "make-data"},     {Stage::kTrainCodec, "train-codec"},
      {Stage::kTrainClap, "train-clap"},   {Stage::kTrainCaptioner, "train-captioner"},
      {Stage::kCaption, "caption"},        {Stage::kEvaluate, "evaluate"},
      {Stage::kAblate, "ablate"}};
  return names;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) throw ConfigError("not a valid number: '" + text + "'");
  return value;
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field field(T RunConfig::*member) {
  Field f;
  f.set = [member](RunConfig& c, const std::string& v) {
    if constexpr (std::is_same_v<T, std::string>) {
      c.*member = v;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (v == "true" || v == "1") {
        c.*member = true;
      } else if (v == "false" || v == "0") {
        c.*member = false;
      } else {
        throw ConfigError("not a boolean: '" + v + "'");
      }
    } else {
      c.*member = parse_number<T>(v);
    }
  };
  f.get = [member](const RunConfig& c) {
    if constexpr (std::is_same_v<T, std::string>) {
      return c.*member;
    } else if constexpr (std::is_same_v<T, bool>) {
      return std::string(c.*member ? "true" : "false");
    } else if constexpr (std::is_same_v<T, double>) {
      return format_double(c.*member);
    } else {
      return std::to_string(c.*member);
    }
  };
  return f;
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table{
      {"seed", field(&RunConfig::seed)},
      {"data_dir", field(&RunConfig::data_dir)},
      {"out_dir", field(&RunConfig::out_dir)},
      {"resume", field(&RunConfig::resume)},
      {"split", field(&RunConfig::split)},
      {"train_clips", field(&RunConfig::train_clips)},
      {"validation_clips", field(&RunConfig::validation_clips)},
      {"test_clips", field(&RunConfig::test_clips)},
      {"min_duration_s", field(&RunConfig::min_duration_s)},
      {"max_duration_s", field(&RunConfig::max_duration_s)},
      {"num_codebooks", field(&RunConfig::num_codebooks)},
      {"codebook_size", field(&RunConfig::codebook_size)},
      {"latent_dim", field(&RunConfig::latent_dim)},
      {"codec_steps", field(&RunConfig::codec_steps)},
      {"codec_batch_frames", field(&RunConfig::codec_batch_frames)},
      {"codec_lr", field(&RunConfig::codec_lr)},
      {"codec_warmup", field(&RunConfig::codec_warmup)},
      {"clap_dim", field(&RunConfig::clap_dim)},
      {"clap_hidden", field(&RunConfig::clap_hidden)},
      {"clap_ffn", field(&RunConfig::clap_ffn)},
      {"clap_frame_pool", field(&RunConfig::clap_frame_pool)},
      {"clap_steps", field(&RunConfig::clap_steps)},
      {"clap_batch", field(&RunConfig::clap_batch)},
      {"clap_lr", field(&RunConfig::clap_lr)},
      {"clap_warmup", field(&RunConfig::clap_warmup)},
      {"model_dim", field(&RunConfig::model_dim)},
      {"heads", field(&RunConfig::heads)},
      {"encoder_layers", field(&RunConfig::encoder_layers)},
      {"decoder_layers", field(&RunConfig::decoder_layers)},
      {"ffn", field(&RunConfig::ffn)},
      {"use_clap", field(&RunConfig::use_clap)},
      {"use_codes", field(&RunConfig::use_codes)},
      {"beta1", field(&RunConfig::beta1)},
      {"beta2", field(&RunConfig::beta2)},
      {"weight_decay", field(&RunConfig::weight_decay)},
      {"peak_lr", field(&RunConfig::peak_lr)},
      {"warmup_steps", field(&RunConfig::warmup_steps)},
      {"clip_norm", field(&RunConfig::clip_norm)},
      {"mask_ratio", field(&RunConfig::mask_ratio)},
      {"span_length", field(&RunConfig::span_length)},
      {"lambda", field(&RunConfig::lambda)},
      {"label_smoothing", field(&RunConfig::label_smoothing)},
      {"epochs", field(&RunConfig::epochs)},
      {"batch", field(&RunConfig::batch)},
      {"checkpoint_every", field(&RunConfig::checkpoint_every)},
      {"max_steps", field(&RunConfig::max_steps)},
      {"beam_size", field(&RunConfig::beam_size)},
      {"max_caption_length", field(&RunConfig::max_caption_length)},
      {"length_penalty", field(&RunConfig::length_penalty)},
      {"ablation_seeds", field(&RunConfig::ablation_seeds)},
  };
  return table;
}

void set_key(RunConfig& config, const std::string& key, const std::string& value) {
  if (key == "stage") {
    config.stage = parse_stage(value);
    return;
  }
  for (const auto& [name, f] : fields()) {
    if (name == key) {
      f.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'");
}

}  // namespace

Stage parse_stage(const std::string& name) {
  for (const auto& [s, n] : stage_names())
    if (n == name) return s;
  throw ConfigError("unknown stage '" + name + "'");
}

std::string stage_name(Stage stage) {
  for (const auto& [s, n] : stage_names())
    if (s == stage) return n;
  throw ConfigError("invalid stage value");
}

void RunConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  require(lambda >= 0.0 && lambda <= 1.0, "lambda must lie in [0, 1]");
  require(mask_ratio >= 0.0 && mask_ratio < 1.0, "mask_ratio must lie in [0, 1)");
  require(label_smoothing >= 0.0 && label_smoothing < 1.0, "label_smoothing must lie in [0, 1)");
  require(span_length >= 1, "span_length must be at least 1");
  require(epochs >= 1 && batch >= 1, "epochs and batch must be positive");
  require(beam_size >= 1, "beam_size must be at least 1");
  require(peak_lr > 0.0 && codec_lr > 0.0 && clap_lr > 0.0, "learning rates must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "AdamW betas must lie in [0, 1)");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(min_duration_s > 0.0 && max_duration_s >= min_duration_s, "clip durations");
  require(split == "train" || split == "validation" || split == "test", "split must be train, validation or test");
  require(!ablation_seed_list(*this).empty(), "ablation_seeds is empty");
}

std::vector<std::pair<std::string, std::string>> RunConfig::to_pairs() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, f] : fields()) out.emplace_back(name, f.get(*this));
  return out;
}

void apply_config_text(RunConfig& config, const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    const auto body = trim(line);
    if (body.empty() || body[0] == '#') continue;
    const auto eq = body.find('=');
    const auto where = source + ":" + std::to_string(number) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + body + "'");
    const auto key = trim(body.substr(0, eq));
    const auto value = trim(body.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "missing key");
    try {
      set_key(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(config, ss.str(), path.string());
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  try {
    set_key(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  } catch (const ConfigError& e) {
    throw ConfigError("override '" + assignment + "': " + e.what());
  }
}

void apply_pairs(RunConfig& config, const std::vector<std::pair<std::string, std::string>>& pairs) {
  for (const auto& [k, v] : pairs) set_key(config, k, v);
}

RunConfig parse_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  RunConfig config;
  if (!file.empty()) apply_config_file(config, file);
  for (const auto& o : overrides) apply_override(config, o);
  config.validate();
  return config;
}

std::vector<std::uint64_t> ablation_seed_list(const RunConfig& config) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(config.ablation_seeds);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) seeds.push_back(parse_number<std::uint64_t>(item));
  }
  return seeds;
}

synth::CorpusConfig corpus_config(const RunConfig& c) {
  synth::CorpusConfig out;
  out.train = c.train_clips;
  out.validation = c.validation_clips;
  out.test = c.test_clips;
  out.min_duration_s = c.min_duration_s;
  out.max_duration_s = c.max_duration_s;
  return out;
}

codec::CodecConfig codec_config(const RunConfig& c) {
  codec::CodecConfig out;
  out.num_codebooks = c.num_codebooks;
  out.codebook_size = c.codebook_size;
  out.latent_dim = c.latent_dim;
  return out;
}

codec::CodecTrainConfig codec_train_config(const RunConfig& c) {
  codec::CodecTrainConfig out;
  out.steps = c.codec_steps;
  out.batch_frames = c.codec_batch_frames;
  out.peak_lr = c.codec_lr;
  out.warmup_steps = c.codec_warmup;
  return out;
}

joint::JointConfig joint_config(const RunConfig& c) {
  joint::JointConfig out;
  out.embed_dim = c.clap_dim;
  out.hidden = c.clap_hidden;
  out.ffn = c.clap_ffn;
  out.frame_pool = c.clap_frame_pool;
  return out;
}

joint::JointTrainConfig joint_train_config(const RunConfig& c) {
  joint::JointTrainConfig out;
  out.steps = c.clap_steps;
  out.batch = c.clap_batch;
  out.peak_lr = c.clap_lr;
  out.warmup_steps = c.clap_warmup;
  return out;
}

captioner::CaptionerConfig captioner_config(const RunConfig& c) {
  captioner::CaptionerConfig out;
  out.num_codebooks = c.num_codebooks;
  out.codebook_size = c.codebook_size;
  out.clap_dim = c.clap_dim;
  out.model_dim = c.model_dim;
  out.heads = c.heads;
  out.encoder_layers = c.encoder_layers;
  out.decoder_layers = c.decoder_layers;
  out.ffn = c.ffn;
  out.max_caption_length = c.max_caption_length;
  out.use_clap = c.use_clap;
  out.use_codes = c.use_codes;
  // Longest clip at the codec frame rate, plus slack for frame rounding.
  out.max_code_length = static_cast<std::size_t>(std::ceil(c.max_duration_s * codec_config(c).frame_hz)) + 8;
  return out;
}

captioner::CaptionerTrainConfig captioner_train_config(const RunConfig& c) {
  captioner::CaptionerTrainConfig out;
  out.epochs = c.epochs;
  out.batch = c.batch;
  out.peak_lr = c.peak_lr;
  out.warmup_steps = c.warmup_steps;
  out.adamw.beta1 = c.beta1;
  out.adamw.beta2 = c.beta2;
  out.adamw.weight_decay = c.weight_decay;
  out.lambda = c.lambda;
  out.mask_ratio = c.mask_ratio;
  out.span_length = c.span_length;
  out.label_smoothing = c.label_smoothing;
  out.clip_norm = c.clip_norm;
  return out;
}

captioner::GenerateOptions generate_options(const RunConfig& c) {
  captioner::GenerateOptions out;
  out.beam_size = c.beam_size;
  out.max_length = c.max_caption_length;
  out.length_penalty = c.length_penalty;
  return out;
}

}  // namespace enclap::cli
