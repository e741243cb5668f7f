#include "enclap/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

namespace enclap::audio {

void AudioClip::validate() const {
  if (sample_rate_hz <= 0) throw std::invalid_argument("clip sample rate must be positive");
  if (samples.empty()) throw std::invalid_argument("clip has no samples");
  for (float s : samples) {
    if (!std::isfinite(s) || s < -1.0f || s > 1.0f) {
      throw std::invalid_argument("clip sample outside [-1, 1] or non-finite");
    }
  }
}

void write_pcm_f32(const std::filesystem::path& path, const AudioClip& clip) {
  static_assert(std::endian::native == std::endian::little, "PCM writer assumes a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(clip.samples.data()),
            static_cast<std::streamsize>(clip.samples.size() * sizeof(float)));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

AudioClip read_pcm_f32(const std::filesystem::path& path, int sample_rate_hz) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(float) != 0) throw std::runtime_error(path.string() + ": size is not a whole number of samples");
  AudioClip clip;
  clip.sample_rate_hz = sample_rate_hz;
  clip.samples.resize(bytes / sizeof(float));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(clip.samples.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw std::runtime_error("short read from " + path.string());
  return clip;
}

std::size_t frame_count(std::size_t num_samples, int sample_rate_hz, double frame_hz) {
  // Integer arithmetic when the rate is whole keeps 1 s at 75 Hz at exactly 75.
  const double exact = static_cast<double>(num_samples) * frame_hz / sample_rate_hz;
  return static_cast<std::size_t>(std::floor(exact + 1e-9));
}

namespace {

// FFTW planning is not thread-safe; plans are made once per size under a
// lock and executed with the new-array interface afterwards. FFTW_ESTIMATE
// keeps the chosen algorithm, and therefore the rounding, fixed across runs.
struct Plan {
  std::size_t n;
  double* in;
  fftw_complex* out;
  fftw_plan plan;
  ~Plan() {
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
};

std::mutex g_plan_mutex;

const Plan& plan_for(std::size_t n) {
  static std::map<std::size_t, std::unique_ptr<Plan>> plans;
  std::lock_guard lock(g_plan_mutex);
  auto& slot = plans[n];
  if (!slot) {
    auto p = std::make_unique<Plan>();
    p->n = n;
    p->in = fftw_alloc_real(n);
    p->out = fftw_alloc_complex(n / 2 + 1);
    p->plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), p->in, p->out, FFTW_ESTIMATE);
    slot = std::move(p);
  }
  return *slot;
}

std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / static_cast<double>(n));
  return w;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Half-open bin range [first, second) of every band; DC is never used and
// every band holds at least one bin (narrow low mel bands may share one).
std::vector<std::pair<std::size_t, std::size_t>> band_edges(const SpectrogramConfig& config, int sample_rate_hz) {
  const std::size_t bins = config.window / 2 + 1;
  std::vector<std::pair<std::size_t, std::size_t>> out(config.bands);
  if (!config.mel_spaced) {
    for (std::size_t b = 0; b < config.bands; ++b)
      out[b] = {1 + b * (bins - 1) / config.bands, 1 + (b + 1) * (bins - 1) / config.bands};
    return out;
  }
  const double nyquist = sample_rate_hz / 2.0;
  const double bin_hz = static_cast<double>(sample_rate_hz) / static_cast<double>(config.window);
  const double top = hz_to_mel(nyquist);
  auto edge_bin = [&](std::size_t b) {
    const double hz = mel_to_hz(top * static_cast<double>(b) / static_cast<double>(config.bands));
    return static_cast<std::size_t>(std::llround(hz / bin_hz));
  };
  for (std::size_t b = 0; b < config.bands; ++b) {
    const std::size_t lo = std::clamp<std::size_t>(edge_bin(b), 1, bins - 1);
    const std::size_t hi = std::clamp<std::size_t>(edge_bin(b + 1), lo + 1, bins);
    out[b] = {lo, hi};
  }
  return out;
}

}  // namespace

std::vector<double> magnitude_spectrum(const AudioClip& clip, std::size_t offset, std::size_t n) {
  const Plan& p = plan_for(n);
  const auto window = hann(n);
  std::vector<double> in(n, 0.0);
  for (std::size_t i = 0; i < n && offset + i < clip.samples.size(); ++i) in[i] = clip.samples[offset + i] * window[i];
  std::vector<fftw_complex> out(n / 2 + 1);
  fftw_execute_dft_r2c(p.plan, in.data(), out.data());
  std::vector<double> mag(n / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::hypot(out[k][0], out[k][1]);
  return mag;
}

Spectrogram log_band_spectrogram(const AudioClip& clip, const SpectrogramConfig& config) {
  if (config.window < 2 || config.bands == 0) throw std::invalid_argument("bad spectrogram configuration");
  const std::size_t frames = frame_count(clip.samples.size(), clip.sample_rate_hz, config.frame_hz);
  if (frames == 0) {
    throw ClipTooShortError("clip of " + std::to_string(clip.samples.size()) + " samples is shorter than one frame");
  }
  const std::size_t n = config.window;
  const std::size_t bins = n / 2 + 1;
  if (config.bands > bins) throw std::invalid_argument("more bands than FFT bins");
  const Plan& p = plan_for(n);
  const auto window = hann(n);
  double window_sum = 0.0;
  for (double w : window) window_sum += w;

  const auto edges = band_edges(config, clip.sample_rate_hz);

  Spectrogram spec;
  spec.frames = frames;
  spec.bands = config.bands;
  spec.values.assign(frames * config.bands, 0.0);
  std::vector<double> in(n);
  std::vector<fftw_complex> out(bins);
  const double hop = clip.sample_rate_hz / config.frame_hz;
  const auto total = static_cast<std::ptrdiff_t>(clip.samples.size());
  for (std::size_t l = 0; l < frames; ++l) {
    const auto centre = static_cast<std::ptrdiff_t>(std::floor((static_cast<double>(l) + 0.5) * hop));
    const std::ptrdiff_t start = centre - static_cast<std::ptrdiff_t>(n / 2);
    for (std::size_t i = 0; i < n; ++i) {
      const std::ptrdiff_t s = start + static_cast<std::ptrdiff_t>(i);
      in[i] = (s >= 0 && s < total) ? clip.samples[static_cast<std::size_t>(s)] * window[i] : 0.0;
    }
    fftw_execute_dft_r2c(p.plan, in.data(), out.data());
    for (std::size_t b = 0; b < config.bands; ++b) {
      const std::size_t lo = edges[b].first, hi = edges[b].second;
      double acc = 0.0;
      for (std::size_t k = lo; k < hi; ++k) acc += std::hypot(out[k][0], out[k][1]);
      acc /= static_cast<double>(hi - lo) * window_sum;
      spec.values[l * config.bands + b] = std::log(acc + 1e-5);
    }
  }
  return spec;
}

}  // namespace enclap::audio
