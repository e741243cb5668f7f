#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace enclap::audio {

struct AudioClip {
  std::vector<float> samples;
  int sample_rate_hz = 16000;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
  /// Throws std::invalid_argument unless non-empty, finite and within [-1, 1].
  void validate() const;
};

class ClipTooShortError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Headerless little-endian 32-bit float PCM.
void write_pcm_f32(const std::filesystem::path& path, const AudioClip& clip);
AudioClip read_pcm_f32(const std::filesystem::path& path, int sample_rate_hz);

/// Number of analysis frames emitted at `frame_hz`: floor(n * frame_hz / sr).
std::size_t frame_count(std::size_t num_samples, int sample_rate_hz, double frame_hz);

struct SpectrogramConfig {
  double frame_hz = 50.0;
  std::size_t window = 640;  // Hann window, also the FFT size
  std::size_t bands = 64;    // groups of FFT bins up to Nyquist
  bool mel_spaced = true;    // band edges equally spaced in mel; otherwise linear
};

/// Log band-magnitude frames, row-major [frames x bands]. Frame l is centred
/// at (l + 0.5) * sr / frame_hz; samples outside the clip read as zero.
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bands = 0;
  std::vector<double> values;
};

Spectrogram log_band_spectrogram(const AudioClip& clip, const SpectrogramConfig& config);

/// Magnitude spectrum of samples[offset, offset + n) with a Hann window;
/// returns n/2 + 1 bins.
std::vector<double> magnitude_spectrum(const AudioClip& clip, std::size_t offset, std::size_t n);

}  // namespace enclap::audio
