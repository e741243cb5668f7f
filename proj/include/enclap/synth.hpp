#pragma once

// Procedural (clip, caption) corpus with known ground truth: each clip is a
// left-to-right sequence of 1-3 non-overlapping sound events, and each
// caption names the events' kinds, pitch classes and order.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "enclap/audio.hpp"

namespace enclap::synth {

using audio::AudioClip;
using Rng = std::mt19937_64;

enum class EventKind { kTone, kChirp, kNoiseBurst, kClickTrain, kSiren };
inline constexpr std::array kAllKinds{EventKind::kTone, EventKind::kChirp, EventKind::kNoiseBurst,
                                      EventKind::kClickTrain, EventKind::kSiren};

/// Tones, chirps and sirens carry a pitch class; bursts and clicks do not.
enum class Pitch { kNone, kLow, kHigh };

bool is_pitched(EventKind kind);
std::string_view kind_name(EventKind kind);

struct EventSpec {
  EventKind kind = EventKind::kTone;
  Pitch pitch = Pitch::kNone;
  double frequency_hz = 440.0;  // base frequency, or click rate for click trains
  double onset_s = 0.0;
  double duration_s = 0.5;
  double amplitude = 0.8;
};

inline constexpr int kDefaultSampleRate = 16000;
inline constexpr std::size_t kParaphrases = 5;

/// Additive synthesis of the events, peak-normalised to 0.9 (a silent mix
/// stays silent). Throws on an empty list or events outside the clip.
AudioClip synth_clip(std::span<const EventSpec> events, double duration_s, Rng& rng,
                     int sample_rate_hz = kDefaultSampleRate);

/// Surface form `paraphrase` (0..4) of the caption for `events`.
std::string render_caption(std::span<const EventSpec> events, std::size_t paraphrase);
/// Caption in a randomly chosen surface form.
std::string render_caption(std::span<const EventSpec> events, Rng& template_rng);
std::vector<std::string> render_paraphrases(std::span<const EventSpec> events);

/// Every word the caption grammar can emit.
std::vector<std::string> caption_words();

struct ParsedEvent {
  EventKind kind;
  Pitch pitch;
  bool operator==(const ParsedEvent&) const = default;
};

/// Rule-based inverse of render_caption: recovers kinds, pitches and order.
/// Segments that name no event are skipped, so arbitrary text parses.
std::vector<ParsedEvent> parse_caption(std::string_view caption);
std::vector<ParsedEvent> describe(std::span<const EventSpec> events);

struct CorpusItem {
  std::string id;
  AudioClip clip;
  std::vector<EventSpec> events;
  std::vector<std::string> references;  // 1 for train, 5 for validation/test
};

struct CorpusSplit {
  std::vector<CorpusItem> train;
  std::vector<CorpusItem> validation;
  std::vector<CorpusItem> test;
};

struct CorpusConfig {
  std::size_t train = 2000;
  std::size_t validation = 200;
  std::size_t test = 200;
  double min_duration_s = 1.0;
  double max_duration_s = 4.0;
  int sample_rate_hz = kDefaultSampleRate;
};

/// Random event layout for one clip with the given kinds in order.
std::vector<EventSpec> random_events(std::span<const EventKind> kinds, double duration_s, Rng& rng);

CorpusSplit make_corpus(const CorpusConfig& config, std::uint64_t seed);

// On-disk layout under `dir`:
//   clips/<id>.f32        headerless little-endian float32 PCM
//   <split>.manifest      path \t sample_rate \t duration_s \t caption ids (comma separated)
//   <split>.captions      one caption per line; a caption id is its 0-based line number
// Events are not stored; parse_caption recovers them from the references.
void write_split(const std::filesystem::path& dir, std::string_view split, std::span<const CorpusItem> items);
std::vector<CorpusItem> read_split(const std::filesystem::path& dir, std::string_view split);
void write_corpus(const std::filesystem::path& dir, const CorpusSplit& corpus);
CorpusSplit read_corpus(const std::filesystem::path& dir);

}  // namespace enclap::synth
