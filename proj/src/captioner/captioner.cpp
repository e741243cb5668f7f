#include "enclap/captioner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace enclap::captioner {

void CaptionerConfig::validate() const {
  if (num_codebooks == 0 || codebook_size < 2) throw std::invalid_argument("captioner: need N >= 1 and V >= 2");
  if (clap_dim == 0 || model_dim == 0 || ffn == 0) throw std::invalid_argument("captioner: dimensions must be positive");
  if (heads == 0 || model_dim % heads != 0) throw std::invalid_argument("captioner: model_dim must divide into heads");
  if (max_caption_length < 2) throw std::invalid_argument("captioner: max_caption_length must be at least 2");
}

CaptionerModel::CaptionerModel(const CaptionerConfig& config, text::Vocabulary vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  config_.validate();
  nn::Rng rng(seed);
  const std::size_t d = config_.model_dim;
  for (std::size_t n = 0; n < config_.num_codebooks; ++n) {
    code_tables_.push_back(params_.create("codes" + std::to_string(n), {config_.codebook_size + 1, d},
                                          nn::Init::kEmbedding, rng));
  }
  clap_proj_ = nn::Linear(params_, "clap_proj", config_.clap_dim, d, rng);
  bos_ = params_.create("enc_bos", {d}, nn::Init::kEmbedding, rng);
  eos_ = params_.create("enc_eos", {d}, nn::Init::kEmbedding, rng);
  positions_ = params_.create("enc_positions", {config_.max_code_length + 2, d}, nn::Init::kEmbedding, rng);
  for (std::size_t i = 0; i < config_.encoder_layers; ++i)
    encoder_.emplace_back(params_, "enc" + std::to_string(i), d, config_.heads, config_.ffn, rng);
  encoder_norm_ = nn::LayerNorm(params_, "enc_norm", d, rng);
  token_table_ = params_.create("dec_tokens", {vocab_.size(), d}, nn::Init::kEmbedding, rng);
  token_positions_ = params_.create("dec_positions", {config_.max_caption_length, d}, nn::Init::kEmbedding, rng);
  for (std::size_t i = 0; i < config_.decoder_layers; ++i)
    decoder_.emplace_back(params_, "dec" + std::to_string(i), d, config_.heads, config_.ffn, rng);
  decoder_norm_ = nn::LayerNorm(params_, "dec_norm", d, rng);
  output_head_ = nn::Linear(params_, "output_head", d, vocab_.size(), rng);
  for (std::size_t n = 0; n < config_.num_codebooks; ++n)
    mcm_heads_.emplace_back(params_, "mcm_head" + std::to_string(n), d, config_.codebook_size, rng);
}

std::vector<Tensor> CaptionerModel::mcm_parameters() const {
  std::vector<Tensor> out;
  for (const auto& h : mcm_heads_) {
    out.push_back(h.weight);
    out.push_back(h.bias);
  }
  return out;
}

Tensor CaptionerModel::encode(const Tensor& encoder_input) const {
  Tensor x = encoder_input;
  for (const auto& block : encoder_) x = block(x);
  return encoder_norm_(x);
}

std::vector<nn::KeyValue> CaptionerModel::memory(const Tensor& encoder_states) const {
  std::vector<nn::KeyValue> out;
  for (const auto& block : decoder_) out.push_back(block.cross_attn.project(encoder_states));
  return out;
}

Tensor CaptionerModel::decode(const std::vector<nn::KeyValue>& memory, std::span<const std::int64_t> prefix) const {
  if (memory.size() != decoder_.size()) throw std::invalid_argument("captioner: memory does not match decoder depth");
  const std::size_t t = prefix.size() + 1;
  if (t > config_.max_caption_length) throw std::length_error("captioner: decoder input longer than max_caption_length");
  std::vector<std::int64_t> ids{text::Vocabulary::kBos};
  ids.insert(ids.end(), prefix.begin(), prefix.end());
  Tensor x = ad::add(ad::gather_rows(token_table_, ids), ad::slice_rows(token_positions_, 0, t));
  for (std::size_t i = 0; i < decoder_.size(); ++i) x = decoder_[i](x, memory[i]);
  return output_head_(decoder_norm_(x));
}

std::vector<nn::NamedTensor> CaptionerModel::export_state() const { return nn::export_store(params_, "captioner."); }

void CaptionerModel::import_state(const std::vector<nn::NamedTensor>& state) {
  nn::import_store(params_, state, "captioner.");
}

Tensor embed_codes(const CodeMatrix& codes, const CaptionerModel& model) {
  const auto& cfg = model.config();
  if (codes.num_codebooks != cfg.num_codebooks) {
    throw std::invalid_argument("embed_codes: code matrix has " + std::to_string(codes.num_codebooks) +
                                " codebooks, model expects " + std::to_string(cfg.num_codebooks));
  }
  if (codes.codes.size() != codes.num_codebooks * codes.length) throw std::invalid_argument("embed_codes: ragged code matrix");
  if (codes.length == 0) return Tensor::zeros({0, cfg.model_dim});
  Tensor out;
  for (std::size_t n = 0; n < cfg.num_codebooks; ++n) {
    auto part = ad::gather_rows(model.code_table(n), codes.row(n));
    out = out.defined() ? ad::add(out, part) : part;
  }
  return out;
}

Tensor build_encoder_input(const Tensor& code_embeddings, std::span<const double> clap, const CaptionerModel& model) {
  const auto& cfg = model.config();
  const std::size_t l = code_embeddings.rows();
  if (code_embeddings.cols() != cfg.model_dim) throw ad::ShapeError("build_encoder_input: code embedding width");
  if (l > cfg.max_code_length) {
    throw std::length_error("build_encoder_input: " + std::to_string(l) + " code frames exceed the positional table (" +
                            std::to_string(cfg.max_code_length) + ")");
  }
  if (clap.size() != cfg.clap_dim) throw ad::ShapeError("build_encoder_input: CLAP embedding has wrong size");
  const std::size_t d = cfg.model_dim;
  auto body = ad::concat_rows({ad::reshape(model.bos_embedding(), {1, d}), code_embeddings,
                               ad::reshape(model.eos_embedding(), {1, d})});
  body = ad::add(body, ad::slice_rows(model.positions(), 0, l + 2));
  Tensor head;
  if (cfg.use_clap) {
    head = model.clap_projection()(Tensor::from({1, cfg.clap_dim}, std::vector<double>(clap.begin(), clap.end())));
  } else {
    head = Tensor::zeros({1, d});
  }
  return ad::concat_rows({head, body});
}

bool MaskPlan::empty() const {
  return std::all_of(positions.begin(), positions.end(), [](const auto& p) { return p.empty(); });
}

MaskedCodes span_mask(const CodeMatrix& codes, double mask_ratio, std::size_t span_length, std::int64_t mask_id,
                      std::mt19937_64& rng) {
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw std::invalid_argument("span_mask: ratio must be in [0, 1)");
  if (span_length == 0) throw std::invalid_argument("span_mask: span_length must be positive");
  MaskedCodes out{codes, {}};
  out.plan.span_length = span_length;
  out.plan.mask_ratio = mask_ratio;
  out.plan.positions.resize(codes.num_codebooks);
  const std::size_t len = codes.length;
  const auto m = static_cast<std::size_t>(std::floor(mask_ratio * static_cast<double>(len)));
  if (m == 0) return out;
  const std::size_t spans = (m + span_length - 1) / span_length;
  const std::size_t free = len - m;
  for (std::size_t n = 0; n < codes.num_codebooks; ++n) {
    std::vector<std::size_t> lengths(spans, span_length);
    lengths.back() = m - (spans - 1) * span_length;
    std::shuffle(lengths.begin(), lengths.end(), rng);
    // Stars and bars: choosing `spans` slots out of free + spans places the
    // spans uniformly with no overlap.
    std::vector<std::size_t> slots(free + spans);
    std::iota(slots.begin(), slots.end(), std::size_t{0});
    for (std::size_t i = 0; i < spans; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, slots.size() - 1);
      std::swap(slots[i], slots[pick(rng)]);
    }
    slots.resize(spans);
    std::sort(slots.begin(), slots.end());
    auto& pos = out.plan.positions[n];
    std::size_t covered = 0;
    for (std::size_t i = 0; i < spans; ++i) {
      const std::size_t start = slots[i] - i + covered;
      for (std::size_t k = 0; k < lengths[i]; ++k) {
        pos.push_back(start + k);
        out.codes.at(n, start + k) = mask_id;
      }
      covered += lengths[i];
    }
  }
  return out;
}

Tensor mcm_weighting(std::span<const Tensor> per_codebook) {
  if (per_codebook.empty()) throw std::invalid_argument("mcm_weighting: no codebooks");
  Tensor total;
  double w = 1.0;
  for (const auto& l : per_codebook) {
    w *= 0.5;
    auto term = ad::scale(ad::reshape(l, {}), w);
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total;
}

Tensor mcm_loss_from_logits(std::span<const Tensor> logits, const std::vector<std::vector<std::int64_t>>& targets) {
  if (logits.size() != targets.size()) throw std::invalid_argument("mcm_loss: logits and targets differ in codebooks");
  std::vector<Tensor> per;
  for (std::size_t i = 0; i < logits.size(); ++i)
    per.push_back(targets[i].empty() ? Tensor::scalar(0.0) : ad::cross_entropy(logits[i], targets[i]));
  return mcm_weighting(per);
}

Tensor mcm_loss(const Tensor& encoder_states, const MaskPlan& plan, const CodeMatrix& codes,
                const CaptionerModel& model) {
  if (plan.empty()) return Tensor::scalar(0.0);
  const auto& cfg = model.config();
  if (plan.positions.size() != cfg.num_codebooks || codes.num_codebooks != cfg.num_codebooks)
    throw std::invalid_argument("mcm_loss: codebook count mismatch");
  if (encoder_states.rows() != codes.length + 3) throw ad::ShapeError("mcm_loss: encoder states are not L + 3 rows");
  std::vector<Tensor> logits;
  std::vector<std::vector<std::int64_t>> targets(cfg.num_codebooks);
  for (std::size_t n = 0; n < cfg.num_codebooks; ++n) {
    std::vector<std::int64_t> rows;
    for (auto l : plan.positions[n]) {
      if (l >= codes.length) throw std::out_of_range("mcm_loss: masked position outside the sequence");
      rows.push_back(static_cast<std::int64_t>(l + 2));
      targets[n].push_back(codes.at(n, l));
    }
    logits.push_back(model.mcm_head(n)(ad::gather_rows(encoder_states, rows)));
  }
  return mcm_loss_from_logits(logits, targets);
}

Tensor caption_loss(const Tensor& logits, const text::Caption& caption, double epsilon) {
  if (caption.ids.empty()) throw std::invalid_argument("caption_loss: empty caption");
  if (logits.rows() != caption.ids.size()) throw ad::ShapeError("caption_loss: logits rows do not match caption length");
  return ad::label_smoothed_nll(logits, caption.ids, epsilon);
}

Tensor total_loss(const Tensor& caption, const Tensor& mcm, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("total_loss: lambda outside [0, 1]");
  if (lambda == 0.0) return caption;
  return ad::add(ad::reshape(caption, {}), ad::scale(ad::reshape(mcm, {}), lambda));
}

ExampleLoss example_loss(const Example& example, const CaptionerModel& model, double lambda, double mask_ratio,
                         std::size_t span_length, double label_smoothing, std::mt19937_64& rng) {
  const auto& cfg = model.config();
  CodeMatrix codes = example.codes;
  if (!cfg.use_codes) {
    codes.length = 0;
    codes.codes.clear();
  }
  MaskedCodes masked{codes, {}};
  if (lambda > 0.0 && mask_ratio > 0.0 && codes.length > 0) {
    masked = span_mask(codes, mask_ratio, span_length, static_cast<std::int64_t>(cfg.codebook_size), rng);
  }
  const auto states = model.encode(build_encoder_input(embed_codes(masked.codes, model), example.clap, model));
  ExampleLoss out;
  out.mcm = mcm_loss(states, masked.plan, codes, model);
  const auto& ids = example.caption.ids;
  if (ids.empty()) throw std::invalid_argument("example_loss: empty caption");
  const auto logits = model.decode(model.memory(states), std::span(ids).first(ids.size() - 1));
  out.caption = caption_loss(logits, example.caption, label_smoothing);
  out.total = total_loss(out.caption, out.mcm, lambda);
  return out;
}

void CaptionerTrainConfig::validate() const {
  if (epochs == 0 || batch == 0) throw std::invalid_argument("captioner training: epochs and batch must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("captioner training: lambda outside [0, 1]");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw std::invalid_argument("captioner training: mask_ratio outside [0, 1)");
  if (span_length == 0) throw std::invalid_argument("captioner training: span_length must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw std::invalid_argument("captioner training: label_smoothing outside [0, 1)");
}

CaptionerTrainer::CaptionerTrainer(CaptionerModel& model, std::span<const Example> data,
                                   const CaptionerTrainConfig& config, std::uint64_t seed)
    : model_(model), data_(data), config_(config), seed_(seed), rng_(seed ^ 0x3a5cca9e5eedULL) {
  config_.validate();
  if (data_.empty()) throw std::invalid_argument("train_captioner: empty dataset");
  const auto heads = model_.mcm_parameters();
  for (const auto& p : model_.params().tensors()) {
    const bool is_head = std::any_of(heads.begin(), heads.end(), [&](const Tensor& h) { return h.node() == p.node(); });
    // At lambda = 0 the heads get no gradient, and weight decay alone must not move them either.
    if (config_.lambda == 0.0 && is_head) continue;
    trainable_.push_back(p);
  }
  state_.optimizer.config = config_.adamw;
}

std::size_t CaptionerTrainer::steps_per_epoch() const { return (data_.size() + config_.batch - 1) / config_.batch; }

std::size_t CaptionerTrainer::total_steps() const { return steps_per_epoch() * config_.epochs; }

double CaptionerTrainer::step() {
  if (finished()) throw std::logic_error("CaptionerTrainer: training already finished");
  const std::size_t spe = steps_per_epoch();
  const std::size_t epoch = state_.step / spe;
  if (epoch != order_epoch_) {
    order_.resize(data_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::mt19937_64 shuffler(seed_ * 0x9e3779b97f4a7c15ULL + epoch);
    std::shuffle(order_.begin(), order_.end(), shuffler);
    order_epoch_ = epoch;
  }
  const std::size_t begin = (state_.step % spe) * config_.batch;
  const std::size_t end = std::min(begin + config_.batch, data_.size());
  const double inv = 1.0 / static_cast<double>(end - begin);
  const std::uint64_t step_index = state_.step + 1;
  double total = 0.0;
  try {
    // One backward per example keeps only one graph alive at a time; leaf
    // gradients accumulate to the batch mean.
    for (std::size_t i = begin; i < end; ++i) {
      const auto loss = example_loss(data_[order_[i]], model_, config_.lambda, config_.mask_ratio,
                                     config_.span_length, config_.label_smoothing, rng_);
      total += loss.total.item();
      ad::backward(ad::scale(loss.total, inv));
    }
    ad::clip_grad_norm(trainable_, config_.clip_norm);
    ad::adamw_step(trainable_, state_.optimizer, ad::lr_at(step_index, {config_.peak_lr, config_.warmup_steps}));
  } catch (const ad::NonFiniteError& e) {
    throw ad::NonFiniteError("captioner training step " + std::to_string(step_index) + ": " + e.what());
  }
  model_.params().zero_grad();
  state_.step = step_index;
  return total * inv;
}

TrainerState CaptionerTrainer::export_state() const {
  TrainerState out = state_;
  std::ostringstream os;
  os << rng_;
  out.rng = os.str();
  return out;
}

void CaptionerTrainer::import_state(const TrainerState& state) {
  std::istringstream is(state.rng);
  std::mt19937_64 rng;
  is >> rng;
  if (!is) throw std::invalid_argument("CaptionerTrainer: unreadable RNG state");
  state_ = state;
  state_.rng.clear();
  rng_ = rng;
  order_epoch_ = static_cast<std::size_t>(-1);
}

CaptionerModel train_captioner(std::span<const Example> data, const CaptionerConfig& config,
                               const text::Vocabulary& vocab, const CaptionerTrainConfig& train, std::uint64_t seed,
                               CaptionerTrainStats* stats) {
  CaptionerModel model(config, vocab, seed);
  CaptionerTrainer trainer(model, data, train, seed);
  while (!trainer.finished()) {
    const double loss = trainer.step();
    if (stats) stats->loss_curve.push_back(loss);
  }
  model.freeze();
  return model;
}

namespace {

struct Context {
  std::vector<nn::KeyValue> memory;
};

Context prepare(const CodeMatrix& codes, std::span<const double> clap, const CaptionerModel& model) {
  CodeMatrix input = codes;
  if (!model.config().use_codes) {
    input.length = 0;
    input.codes.clear();
  }
  for (auto c : input.codes)
    if (c < 0 || static_cast<std::size_t>(c) >= model.config().codebook_size)
      throw std::out_of_range("generate: code outside the codebook (mask ids are not valid input)");
  return {model.memory(model.encode(build_encoder_input(embed_codes(input, model), clap, model)))};
}

// Log-probabilities of the next token after `prefix`.
std::vector<double> next_log_probs(const Context& ctx, const CaptionerModel& model, std::span<const std::int64_t> prefix) {
  const auto logits = model.decode(ctx.memory, prefix);
  const auto lp = ad::log_softmax_rows(ad::slice_rows(logits, logits.rows() - 1, logits.rows()));
  return {lp.values().begin(), lp.values().end()};
}

bool generable(std::int64_t tok) { return tok != text::Vocabulary::kPad && tok != text::Vocabulary::kBos; }

double normalised(double log_prob, std::size_t length, double alpha) {
  return log_prob / std::pow(static_cast<double>(length), alpha);
}

text::Caption greedy(const Context& ctx, const CaptionerModel& model, std::size_t max_length, double alpha) {
  text::Caption out;
  double total = 0.0;
  for (std::size_t t = 0; t < max_length; ++t) {
    const auto lp = next_log_probs(ctx, model, out.ids);
    std::int64_t best = -1;
    for (std::size_t k = 0; k < lp.size(); ++k) {
      const auto tok = static_cast<std::int64_t>(k);
      if (generable(tok) && (best < 0 || lp[k] > lp[static_cast<std::size_t>(best)])) best = tok;
    }
    if (t + 1 == max_length && best != text::Vocabulary::kEos) {
      best = text::Vocabulary::kEos;
      out.truncated = true;
    }
    total += lp[static_cast<std::size_t>(best)];
    out.ids.push_back(best);
    if (best == text::Vocabulary::kEos) break;
  }
  out.score = normalised(total, out.ids.size(), alpha);
  return out;
}

}  // namespace

text::Caption greedy_decode(const CodeMatrix& codes, std::span<const double> clap, const CaptionerModel& model,
                            std::size_t max_length, double length_penalty) {
  if (max_length == 0 || max_length > model.config().max_caption_length)
    throw std::invalid_argument("greedy_decode: max_length outside [1, max_caption_length]");
  ad::NoGradGuard no_grad;
  return greedy(prepare(codes, clap, model), model, max_length, length_penalty);
}

text::Caption generate_from_codes(const CodeMatrix& codes, std::span<const double> clap, const CaptionerModel& model,
                                  const GenerateOptions& options) {
  if (options.beam_size == 0) throw std::invalid_argument("generate: beam_size must be at least 1");
  if (options.max_length == 0 || options.max_length > model.config().max_caption_length)
    throw std::invalid_argument("generate: max_length outside [1, max_caption_length]");
  ad::NoGradGuard no_grad;
  const auto ctx = prepare(codes, clap, model);
  const double alpha = options.length_penalty;
  const std::size_t beam = options.beam_size;

  struct Hyp {
    std::vector<std::int64_t> ids;
    double log_prob = 0.0;
  };
  struct Cand {
    double log_prob;
    std::size_t parent;
    std::int64_t token;
  };
  std::vector<Hyp> alive{Hyp{}};
  std::vector<text::Caption> finished;
  for (std::size_t t = 0; t < options.max_length && !alive.empty(); ++t) {
    const bool last = t + 1 == options.max_length;
    std::vector<Cand> cands;
    std::vector<bool> argmax_is_eos(alive.size());
    for (std::size_t b = 0; b < alive.size(); ++b) {
      const auto lp = next_log_probs(ctx, model, alive[b].ids);
      std::int64_t best = -1;
      for (std::size_t k = 0; k < lp.size(); ++k) {
        const auto tok = static_cast<std::int64_t>(k);
        if (!generable(tok)) continue;
        if (best < 0 || lp[k] > lp[static_cast<std::size_t>(best)]) best = tok;
        if (last && tok != text::Vocabulary::kEos) continue;
        cands.push_back({alive[b].log_prob + lp[k], b, tok});
      }
      argmax_is_eos[b] = best == text::Vocabulary::kEos;
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.log_prob > b.log_prob; });
    std::vector<Hyp> next;
    for (std::size_t r = 0; r < cands.size() && next.size() < beam; ++r) {
      const auto& c = cands[r];
      Hyp h{alive[c.parent].ids, c.log_prob};
      h.ids.push_back(c.token);
      if (c.token == text::Vocabulary::kEos) {
        // Only top-ranked endings finish, so beam 1 follows the argmax path.
        if (r >= beam) continue;
        text::Caption cap;
        cap.ids = std::move(h.ids);
        cap.truncated = last && !argmax_is_eos[c.parent];
        cap.score = normalised(h.log_prob, cap.ids.size(), alpha);
        finished.push_back(std::move(cap));
      } else {
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
    if (finished.size() >= beam) break;
  }
  auto best = greedy(ctx, model, options.max_length, alpha);
  for (auto& c : finished)
    if (c.score > best.score) best = std::move(c);
  return best;
}

double sequence_score(const CodeMatrix& codes, std::span<const double> clap, const CaptionerModel& model,
                      std::span<const std::int64_t> ids, double length_penalty) {
  if (ids.empty() || ids.back() != text::Vocabulary::kEos) throw std::invalid_argument("sequence_score: ids must end with eos");
  ad::NoGradGuard no_grad;
  const auto ctx = prepare(codes, clap, model);
  const auto lp = ad::log_softmax_rows(model.decode(ctx.memory, ids.first(ids.size() - 1)));
  const std::size_t k = lp.cols();
  double total = 0.0;
  for (std::size_t t = 0; t < ids.size(); ++t) total += lp.values()[t * k + static_cast<std::size_t>(ids[t])];
  return normalised(total, ids.size(), length_penalty);
}

}  // namespace enclap::captioner
