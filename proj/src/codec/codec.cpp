#include "enclap/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

#include "enclap/optim.hpp"

namespace enclap::codec {

using ad::Tensor;

void CodecConfig::validate() const {
  if (num_codebooks == 0) throw std::invalid_argument("codec needs at least one codebook");
  if (codebook_size < 2) throw std::invalid_argument("codebook size must be at least 2");
  if (latent_dim == 0 || bands == 0 || conv1_channels == 0 || conv2_channels == 0 || decoder_hidden == 0) {
    throw std::invalid_argument("codec dimensions must be positive");
  }
  if (!(frame_hz > 0.0)) throw std::invalid_argument("frame rate must be positive");
  if (kernel == 0 || stride == 0 || bands < kernel || (bands - kernel) / stride + 1 < kernel) {
    throw std::invalid_argument("convolution does not fit the band count");
  }
}

CodecModel::CodecModel(const CodecConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  nn::Rng rng(seed);
  const std::size_t k = config_.kernel;
  positions1_ = (config_.bands - k) / config_.stride + 1;
  positions2_ = (positions1_ - k) / config_.stride + 1;
  conv1_w_ = params_.create("enc.conv1.weight", {k, config_.conv1_channels}, nn::Init::kNormalFanIn, rng);
  conv1_b_ = params_.create("enc.conv1.bias", {config_.conv1_channels}, nn::Init::kZeros, rng);
  conv2_w_ = params_.create("enc.conv2.weight", {k * config_.conv1_channels, config_.conv2_channels},
                            nn::Init::kNormalFanIn, rng);
  conv2_b_ = params_.create("enc.conv2.bias", {config_.conv2_channels}, nn::Init::kZeros, rng);
  to_latent_ = nn::Linear(params_, "enc.latent", positions2_ * config_.conv2_channels, config_.latent_dim, rng);
  dec_hidden_ = nn::Linear(params_, "dec.hidden", config_.latent_dim, config_.decoder_hidden, rng);
  dec_out_ = nn::Linear(params_, "dec.out", config_.decoder_hidden, config_.bands, rng);

  const std::size_t v = config_.codebook_size, d = config_.latent_dim;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t n = 0; n < config_.num_codebooks; ++n) {
    std::vector<double> entries(v * d, 0.0);
    for (std::size_t i = d; i < entries.size(); ++i) entries[i] = normal(rng);
    codebooks_.emplace_back(v, d, std::move(entries));
  }
  feature_mean_.assign(config_.bands, 0.0);
  feature_std_.assign(config_.bands, 1.0);
  ema_counts_.assign(config_.num_codebooks * v, 1.0);
  ema_sums_.resize(config_.num_codebooks * v * d);
  for (std::size_t n = 0; n < config_.num_codebooks; ++n)
    std::copy(codebooks_[n].entries.begin(), codebooks_[n].entries.end(), ema_sums_.begin() + n * v * d);
}

Tensor CodecModel::features(const AudioClip& clip) const {
  clip.validate();
  audio::SpectrogramConfig sc{config_.frame_hz, config_.window, config_.bands};
  auto spec = audio::log_band_spectrogram(clip, sc);
  for (std::size_t l = 0; l < spec.frames; ++l) {
    for (std::size_t b = 0; b < spec.bands; ++b) {
      auto& x = spec.values[l * spec.bands + b];
      x = (x - feature_mean_[b]) / feature_std_[b];
    }
  }
  return Tensor::from({spec.frames, spec.bands}, std::move(spec.values));
}

Tensor CodecModel::encode(const Tensor& frames) const {
  if (frames.cols() != config_.bands) throw ad::ShapeError("codec encoder expects " + std::to_string(config_.bands) + " bands");
  const std::size_t f = frames.rows(), k = config_.kernel, s = config_.stride, b = config_.bands;
  const std::size_t c1 = config_.conv1_channels, c2 = config_.conv2_channels;

  std::vector<std::size_t> idx1;
  idx1.reserve(f * positions1_ * k);
  for (std::size_t r = 0; r < f; ++r)
    for (std::size_t p = 0; p < positions1_; ++p)
      for (std::size_t j = 0; j < k; ++j) idx1.push_back(r * b + p * s + j);
  auto h1 = ad::take(frames, idx1, {f * positions1_, k});
  h1 = ad::gelu(ad::add_row(ad::matmul(h1, conv1_w_), conv1_b_));
  h1 = ad::reshape(h1, {f, positions1_ * c1});

  std::vector<std::size_t> idx2;
  idx2.reserve(f * positions2_ * k * c1);
  const std::size_t row1 = positions1_ * c1;
  for (std::size_t r = 0; r < f; ++r)
    for (std::size_t p = 0; p < positions2_; ++p)
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t c = 0; c < c1; ++c) idx2.push_back(r * row1 + (p * s + j) * c1 + c);
  auto h2 = ad::take(h1, idx2, {f * positions2_, k * c1});
  h2 = ad::gelu(ad::add_row(ad::matmul(h2, conv2_w_), conv2_b_));
  h2 = ad::reshape(h2, {f, positions2_ * c2});
  return to_latent_(h2);
}

Tensor CodecModel::decode(const Tensor& latents) const { return dec_out_(ad::gelu(dec_hidden_(latents))); }

std::vector<nn::NamedTensor> CodecModel::export_state() const {
  auto out = nn::export_store(params_, "codec.");
  const std::size_t v = config_.codebook_size, d = config_.latent_dim, n = config_.num_codebooks;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({"codec.codebook." + std::to_string(i), {v, d}, codebooks_[i].entries});
  out.push_back({"codec.feature_mean", {config_.bands}, feature_mean_});
  out.push_back({"codec.feature_std", {config_.bands}, feature_std_});
  out.push_back({"codec.ema_counts", {n, v}, ema_counts_});
  out.push_back({"codec.ema_sums", {n, v, d}, ema_sums_});
  return out;
}

void CodecModel::import_state(const std::vector<nn::NamedTensor>& state) {
  nn::import_store(params_, state, "codec.");
  auto load = [&](const std::string& name, std::vector<double>& dst) {
    const auto& nt = nn::find_named(state, name);
    if (nt.values.size() != dst.size()) throw ad::ShapeError("tensor " + name + " has the wrong size");
    ad::ensure_finite(nt.values, name.c_str());
    dst = nt.values;
  };
  for (std::size_t i = 0; i < codebooks_.size(); ++i) load("codec.codebook." + std::to_string(i), codebooks_[i].entries);
  load("codec.feature_mean", feature_mean_);
  load("codec.feature_std", feature_std_);
  load("codec.ema_counts", ema_counts_);
  load("codec.ema_sums", ema_sums_);
}

Tensor encode_frames(const AudioClip& clip, const CodecModel& model) {
  ad::NoGradGuard no_grad;
  return model.encode(model.features(clip));
}

CodeMatrix quantize_latents(const Tensor& latents, const CodecModel& model) {
  const auto& cfg = model.config();
  if (latents.cols() != cfg.latent_dim) throw ad::ShapeError("latent width does not match the codebooks");
  CodeMatrix cm;
  cm.num_codebooks = cfg.num_codebooks;
  cm.length = latents.rows();
  cm.frame_hz = cfg.frame_hz;
  cm.codes.resize(cm.num_codebooks * cm.length);
  const auto vals = latents.values();
  for (std::size_t l = 0; l < cm.length; ++l) {
    const auto q = rvq_quantize(vals.subspan(l * cfg.latent_dim, cfg.latent_dim), model.codebooks());
    for (std::size_t n = 0; n < cm.num_codebooks; ++n) cm.at(n, l) = q.codes[n];
  }
  return cm;
}

CodeMatrix codec_encode(const AudioClip& clip, const CodecModel& model) {
  auto cm = quantize_latents(encode_frames(clip, model), model);
  cm.source_duration_s = clip.duration_s();
  return cm;
}

CodecEvaluation evaluate_codec(const CodecModel& model, std::span<const AudioClip> clips) {
  if (clips.empty()) throw std::invalid_argument("evaluate_codec: no clips");
  ad::NoGradGuard no_grad;
  const auto& cfg = model.config();
  const std::size_t n_cb = cfg.num_codebooks, d = cfg.latent_dim;
  CodecEvaluation ev;
  ev.residual_energy.assign(n_cb, 0.0);
  std::vector<std::set<std::int64_t>> used(n_cb);
  double sq_err = 0.0;
  std::size_t frames = 0, elements = 0;
  std::vector<double> trace;
  for (const auto& clip : clips) {
    const auto x = model.features(clip);
    const auto z = model.encode(x);
    const std::size_t len = z.rows();
    std::vector<double> q(len * d);
    for (std::size_t l = 0; l < len; ++l) {
      const auto r = rvq_quantize_trace(z.values().subspan(l * d, d), model.codebooks(), trace);
      for (std::size_t n = 0; n < n_cb; ++n) {
        used[n].insert(r.codes[n]);
        double e = 0.0;
        for (std::size_t j = 0; j < d; ++j) e += trace[n * d + j] * trace[n * d + j];
        ev.residual_energy[n] += e;
      }
      for (std::size_t j = 0; j < d; ++j) q[l * d + j] = z.values()[l * d + j] - r.residual[j];
    }
    const auto recon = model.decode(Tensor::from({len, d}, std::move(q)));
    for (std::size_t i = 0; i < recon.numel(); ++i) {
      const double diff = recon.values()[i] - x.values()[i];
      sq_err += diff * diff;
    }
    frames += len;
    elements += recon.numel();
  }
  for (auto& e : ev.residual_energy) e /= static_cast<double>(frames);
  ev.reconstruction_mse = sq_err / static_cast<double>(elements);
  for (const auto& u : used) {
    ev.used_entries.push_back(u.size());
    if (u.size() < 2) ev.collapsed = true;
  }
  return ev;
}

namespace {

struct FramePool {
  std::size_t bands = 0;
  std::vector<double> values;  // standardised, row-major
  std::size_t rows() const { return values.size() / bands; }
};

FramePool collect_frames(std::span<const AudioClip> corpus, CodecModel& model) {
  const auto& cfg = model.config();
  audio::SpectrogramConfig sc{cfg.frame_hz, cfg.window, cfg.bands};
  FramePool pool;
  pool.bands = cfg.bands;
  for (const auto& clip : corpus) {
    clip.validate();
    const auto spec = audio::log_band_spectrogram(clip, sc);
    pool.values.insert(pool.values.end(), spec.values.begin(), spec.values.end());
  }
  const std::size_t rows = pool.rows();
  auto& mean = model.feature_mean();
  auto& sd = model.feature_std();
  std::fill(mean.begin(), mean.end(), 0.0);
  std::fill(sd.begin(), sd.end(), 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t b = 0; b < pool.bands; ++b) mean[b] += pool.values[r * pool.bands + b];
  for (auto& m : mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t b = 0; b < pool.bands; ++b) {
      const double c = pool.values[r * pool.bands + b] - mean[b];
      sd[b] += c * c;
    }
  for (auto& s : sd) s = std::max(std::sqrt(s / static_cast<double>(rows)), 1e-3);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t b = 0; b < pool.bands; ++b) {
      auto& x = pool.values[r * pool.bands + b];
      x = (x - mean[b]) / sd[b];
    }
  return pool;
}

Tensor sample_batch(const FramePool& pool, std::size_t count, nn::Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, pool.rows() - 1);
  std::vector<double> out(count * pool.bands);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t r = pick(rng);
    std::copy_n(pool.values.begin() + static_cast<std::ptrdiff_t>(r * pool.bands), pool.bands,
                out.begin() + static_cast<std::ptrdiff_t>(i * pool.bands));
  }
  return Tensor::from({count, pool.bands}, std::move(out));
}

// Entries 1..V-1 of each stage are distinct batch residuals plus a little
// jitter; entry 0 stays zero.
void init_codebooks_from_data(CodecModel& model, const FramePool& pool, std::size_t batch, nn::Rng& rng) {
  ad::NoGradGuard no_grad;
  const auto& cfg = model.config();
  const std::size_t v = cfg.codebook_size, d = cfg.latent_dim;
  const auto z = model.encode(sample_batch(pool, std::max(batch, v), rng));
  std::vector<double> residual(z.values().begin(), z.values().end());
  const std::size_t rows = z.rows();
  std::normal_distribution<double> jitter(0.0, 1e-3);
  for (std::size_t n = 0; n < cfg.num_codebooks; ++n) {
    std::vector<std::size_t> order(rows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i + 1 < v; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, rows - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    auto& cb = model.codebooks()[n];
    std::fill(cb.entries.begin(), cb.entries.begin() + static_cast<std::ptrdiff_t>(d), 0.0);
    for (std::size_t e = 1; e < v; ++e)
      for (std::size_t j = 0; j < d; ++j) cb.entries[e * d + j] = residual[order[e - 1] * d + j] + jitter(rng);
    const std::span<const Codebook> one(&cb, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto q = rvq_quantize(std::span<const double>(residual).subspan(r * d, d), one);
      std::copy(q.residual.begin(), q.residual.end(), residual.begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    std::fill(model.ema_counts().begin() + static_cast<std::ptrdiff_t>(n * v),
              model.ema_counts().begin() + static_cast<std::ptrdiff_t>((n + 1) * v), 1.0);
    std::copy(cb.entries.begin(), cb.entries.end(), model.ema_sums().begin() + static_cast<std::ptrdiff_t>(n * v * d));
  }
}

}  // namespace

CodecModel train_codec(std::span<const AudioClip> corpus, const CodecConfig& config, const CodecTrainConfig& train,
                       std::uint64_t seed, CodecTrainStats* stats) {
  if (corpus.empty()) throw std::invalid_argument("train_codec: empty corpus");
  if (train.batch_frames == 0) throw std::invalid_argument("train_codec: batch must be positive");
  if (!(train.ema_decay > 0.0 && train.ema_decay < 1.0)) throw std::invalid_argument("train_codec: EMA decay outside (0, 1)");
  CodecModel model(config, seed);
  const auto pool = collect_frames(corpus, model);
  nn::Rng rng(seed ^ 0xc0dec5eedULL);
  init_codebooks_from_data(model, pool, train.batch_frames, rng);

  const std::size_t n_cb = config.num_codebooks, v = config.codebook_size, d = config.latent_dim;
  ad::AdamWState opt;
  const ad::LRSchedule schedule{train.peak_lr, train.warmup_steps};
  auto& params = model.params().tensors();
  std::vector<double> trace, counts(v), sums(v * d);
  std::normal_distribution<double> jitter(0.0, 1e-3);

  for (std::size_t step = 1; step <= train.steps; ++step) {
    const auto x = sample_batch(pool, train.batch_frames, rng);
    const auto z = model.encode(x);
    const std::size_t rows = z.rows();
    const auto zv = z.values();

    // stage_in[n] holds r_n for every row (r_0 = z).
    std::vector<std::vector<double>> stage_in(n_cb + 1, std::vector<double>(rows * d));
    std::copy(zv.begin(), zv.end(), stage_in[0].begin());
    std::vector<std::vector<std::int64_t>> codes(n_cb, std::vector<std::int64_t>(rows));
    for (std::size_t r = 0; r < rows; ++r) {
      const auto q = rvq_quantize_trace(zv.subspan(r * d, d), model.codebooks(), trace);
      for (std::size_t n = 0; n < n_cb; ++n) {
        codes[n][r] = q.codes[n];
        std::copy_n(trace.begin() + static_cast<std::ptrdiff_t>(n * d), d,
                    stage_in[n + 1].begin() + static_cast<std::ptrdiff_t>(r * d));
      }
    }

    // Straight-through estimator: forward uses q, backward treats q - z as constant.
    std::vector<double> shift(rows * d);
    for (std::size_t i = 0; i < shift.size(); ++i) shift[i] = -stage_in[n_cb][i];
    const auto z_st = ad::add(z, Tensor::from({rows, d}, std::move(shift)));
    auto loss = ad::mse(model.decode(z_st), x);
    for (std::size_t n = 1; n <= n_cb; ++n) {
      std::vector<double> partial(rows * d);
      for (std::size_t i = 0; i < partial.size(); ++i) partial[i] = zv[i] - stage_in[n][i];
      loss = ad::add(loss, ad::scale(ad::mse(z, Tensor::from({rows, d}, std::move(partial))), train.commitment));
    }
    if (stats) stats->loss_curve.push_back(loss.item());
    ad::backward(loss);
    ad::clip_grad_norm(params, train.clip_norm);
    ad::adamw_step(params, opt, ad::lr_at(step, schedule));
    ad::zero_grad(params);

    for (std::size_t n = 0; n < n_cb; ++n) {
      std::fill(counts.begin(), counts.end(), 0.0);
      std::fill(sums.begin(), sums.end(), 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto c = static_cast<std::size_t>(codes[n][r]);
        counts[c] += 1.0;
        for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += stage_in[n][r * d + j];
      }
      auto& cb = model.codebooks()[n];
      double* ema_c = model.ema_counts().data() + n * v;
      double* ema_s = model.ema_sums().data() + n * v * d;
      std::uniform_int_distribution<std::size_t> pick(0, rows - 1);
      for (std::size_t e = 1; e < v; ++e) {
        ema_c[e] = train.ema_decay * ema_c[e] + (1.0 - train.ema_decay) * counts[e];
        for (std::size_t j = 0; j < d; ++j)
          ema_s[e * d + j] = train.ema_decay * ema_s[e * d + j] + (1.0 - train.ema_decay) * sums[e * d + j];
        if (ema_c[e] < train.dead_threshold) {
          const std::size_t r = pick(rng);
          ema_c[e] = 1.0;
          for (std::size_t j = 0; j < d; ++j) ema_s[e * d + j] = stage_in[n][r * d + j] + jitter(rng);
        }
        for (std::size_t j = 0; j < d; ++j) cb.entries[e * d + j] = ema_s[e * d + j] / ema_c[e];
      }
    }
  }
  model.freeze();
  if (stats) stats->final = evaluate_codec(model, corpus);
  return model;
}

}  // namespace enclap::codec
