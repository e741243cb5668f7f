#include "enclap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <stdexcept>

#include "enclap/text.hpp"

namespace enclap::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kFadeS = 0.01;

const char* const kConnectives[kParaphrases] = {" followed by ", " and then ", " then ", " before ", ", then "};

std::string pitched_noun(EventKind kind, std::size_t p) {
  static const char* const tone[kParaphrases] = {"tone", "tone", "beep", "beep", "tone"};
  static const char* const chirp[kParaphrases] = {"chirp", "chirp", "sweep", "sweep", "chirp"};
  static const char* const siren[kParaphrases] = {"siren", "siren", "wail", "wail", "siren"};
  switch (kind) {
    case EventKind::kTone: return tone[p];
    case EventKind::kChirp: return chirp[p];
    case EventKind::kSiren: return siren[p];
    default: throw std::logic_error("unpitched kind has no pitched noun");
  }
}

std::string event_phrase(const EventSpec& e, std::size_t p) {
  if (is_pitched(e.kind)) {
    const std::string w = e.pitch == Pitch::kLow ? "low" : "high";
    const std::string n = pitched_noun(e.kind, p);
    switch (p) {
      case 0:
      case 2: return "a " + w + " pitched " + n;
      case 1:
      case 3: return "a " + w + " " + n;
      default: return "the sound of a " + w + " " + n;
    }
  }
  static const char* const noise[kParaphrases] = {"a burst of noise", "a noise burst", "a short burst of noise",
                                                  "a burst of static", "the sound of a noise burst"};
  static const char* const clicks[kParaphrases] = {"a series of clicks", "a click train", "rapid clicking",
                                                   "a clicking sound", "the sound of clicking"};
  return e.kind == EventKind::kNoiseBurst ? noise[p] : clicks[p];
}

std::optional<EventKind> kind_of_word(const std::string& w) {
  if (w == "tone" || w == "beep") return EventKind::kTone;
  if (w == "chirp" || w == "sweep") return EventKind::kChirp;
  if (w == "siren" || w == "wail") return EventKind::kSiren;
  if (w == "burst" || w == "noise" || w == "static") return EventKind::kNoiseBurst;
  if (w == "clicks" || w == "click" || w == "clicking") return EventKind::kClickTrain;
  return std::nullopt;
}

bool is_connective(const std::string& w) { return w == "followed" || w == "then" || w == "before"; }

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

}  // namespace

bool is_pitched(EventKind kind) {
  return kind == EventKind::kTone || kind == EventKind::kChirp || kind == EventKind::kSiren;
}

std::string_view kind_name(EventKind kind) {
  switch (kind) {
    case EventKind::kTone: return "tone";
    case EventKind::kChirp: return "chirp";
    case EventKind::kNoiseBurst: return "noise-burst";
    case EventKind::kClickTrain: return "click-train";
    case EventKind::kSiren: return "siren";
  }
  return "?";
}

AudioClip synth_clip(std::span<const EventSpec> events, double duration_s, Rng& rng, int sample_rate_hz) {
  if (events.empty()) throw std::invalid_argument("synth_clip: no events");
  if (!(duration_s > 0.0)) throw std::invalid_argument("synth_clip: duration must be positive");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
  const double sr = sample_rate_hz;
  std::vector<double> mix(n, 0.0);
  for (const auto& e : events) {
    if (e.onset_s < 0.0 || e.duration_s <= 0.0 || e.onset_s + e.duration_s > duration_s + 1e-9) {
      throw std::invalid_argument("synth_clip: event does not fit inside the clip");
    }
    const auto begin = static_cast<std::size_t>(std::llround(e.onset_s * sr));
    const auto len = std::min(static_cast<std::size_t>(std::llround(e.duration_s * sr)), n - begin);
    const double phase0 = uniform(rng, 0.0, kTwoPi);
    const auto fade = static_cast<double>(std::max<std::size_t>(1, static_cast<std::size_t>(kFadeS * sr)));
    double siren_phase = phase0;
    const auto click_len = static_cast<std::size_t>(0.003 * sr);
    const double click_period = e.kind == EventKind::kClickTrain ? sr / e.frequency_hz : 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double t = i / sr;
      double v = 0.0;
      switch (e.kind) {
        case EventKind::kTone:
          v = std::sin(kTwoPi * e.frequency_hz * t + phase0);
          break;
        case EventKind::kChirp: {
          // Linear sweep from f to 2f over the event.
          const double rate = e.frequency_hz / e.duration_s;
          v = std::sin(kTwoPi * (e.frequency_hz * t + 0.5 * rate * t * t) + phase0);
          break;
        }
        case EventKind::kSiren: {
          const double f = e.frequency_hz * (1.0 + 0.2 * std::sin(kTwoPi * 3.0 * t));
          siren_phase += kTwoPi * f / sr;
          v = std::sin(siren_phase);
          break;
        }
        case EventKind::kNoiseBurst:
          v = uniform(rng, -1.0, 1.0);
          break;
        case EventKind::kClickTrain: {
          const double pos = std::fmod(static_cast<double>(i), click_period);
          if (pos < static_cast<double>(click_len)) v = std::exp(-pos / (0.0006 * sr));
          break;
        }
      }
      const double env = std::min({1.0, (i + 1) / fade, (len - i) / fade});
      mix[begin + i] += e.amplitude * env * v;
    }
  }
  double peak = 0.0;
  for (double v : mix) peak = std::max(peak, std::abs(v));
  AudioClip clip;
  clip.sample_rate_hz = sample_rate_hz;
  clip.samples.resize(n);
  const double gain = peak > 0.0 ? 0.9 / peak : 0.0;
  for (std::size_t i = 0; i < n; ++i) clip.samples[i] = static_cast<float>(mix[i] * gain);
  return clip;
}

std::string render_caption(std::span<const EventSpec> events, std::size_t paraphrase) {
  if (paraphrase >= kParaphrases) throw std::out_of_range("paraphrase index");
  std::string out;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (i) out += kConnectives[paraphrase];
    out += event_phrase(events[i], paraphrase);
  }
  return out;
}

std::string render_caption(std::span<const EventSpec> events, Rng& template_rng) {
  std::uniform_int_distribution<std::size_t> pick(0, kParaphrases - 1);
  return render_caption(events, pick(template_rng));
}

std::vector<std::string> render_paraphrases(std::span<const EventSpec> events) {
  std::vector<std::string> out;
  for (std::size_t p = 0; p < kParaphrases; ++p) out.push_back(render_caption(events, p));
  return out;
}

std::vector<std::string> caption_words() {
  std::vector<EventSpec> all;
  for (auto kind : kAllKinds) {
    for (auto pitch : {Pitch::kLow, Pitch::kHigh}) {
      EventSpec e;
      e.kind = kind;
      e.pitch = is_pitched(kind) ? pitch : Pitch::kNone;
      all.push_back(e);
    }
  }
  std::set<std::string> words;
  for (std::size_t p = 0; p < kParaphrases; ++p) {
    for (auto& w : text::tokenize_caption(render_caption(all, p))) words.insert(std::move(w));
  }
  return {words.begin(), words.end()};
}

std::vector<ParsedEvent> parse_caption(std::string_view caption) {
  std::vector<ParsedEvent> out;
  EventKind kind = EventKind::kTone;
  bool has_kind = false;
  Pitch pitch = Pitch::kNone;
  auto flush = [&] {
    if (has_kind) out.push_back({kind, is_pitched(kind) ? pitch : Pitch::kNone});
    has_kind = false;
    pitch = Pitch::kNone;
  };
  for (const auto& w : text::tokenize_caption(caption)) {
    if (is_connective(w)) {
      flush();
    } else if (w == "high") {
      pitch = Pitch::kHigh;
    } else if (w == "low") {
      pitch = Pitch::kLow;
    } else if (auto k = kind_of_word(w); k && !has_kind) {
      kind = *k;
      has_kind = true;
    }
  }
  flush();
  return out;
}

std::vector<ParsedEvent> describe(std::span<const EventSpec> events) {
  std::vector<ParsedEvent> out;
  for (const auto& e : events) out.push_back({e.kind, is_pitched(e.kind) ? e.pitch : Pitch::kNone});
  return out;
}

std::vector<EventSpec> random_events(std::span<const EventKind> kinds, double duration_s, Rng& rng) {
  std::vector<EventSpec> events;
  const double slot = duration_s / static_cast<double>(kinds.size());
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    EventSpec e;
    e.kind = kinds[i];
    e.duration_s = uniform(rng, 0.6, 0.9) * slot;
    e.onset_s = i * slot + uniform(rng, 0.0, slot - e.duration_s);
    e.amplitude = uniform(rng, 0.5, 1.0);
    if (is_pitched(e.kind)) {
      const bool high = std::bernoulli_distribution(0.5)(rng);
      e.pitch = high ? Pitch::kHigh : Pitch::kLow;
      e.frequency_hz = high ? uniform(rng, 1200.0, 2500.0) : uniform(rng, 200.0, 450.0);
    } else if (e.kind == EventKind::kClickTrain) {
      e.frequency_hz = uniform(rng, 8.0, 16.0);
    } else {
      e.frequency_hz = 0.0;
    }
    events.push_back(e);
  }
  return events;
}

namespace {

std::vector<CorpusItem> make_split(const std::string& prefix, std::size_t count, bool five_refs,
                                   const CorpusConfig& config, Rng& rng) {
  std::uniform_int_distribution<int> n_events(1, 3);
  std::vector<int> counts(count);
  std::size_t total = 0;
  for (auto& c : counts) total += static_cast<std::size_t>(c = n_events(rng));
  // Concatenated shuffled permutations keep kind counts within one of each other.
  std::vector<EventKind> stream;
  while (stream.size() < total) {
    std::vector<EventKind> block(kAllKinds.begin(), kAllKinds.end());
    std::shuffle(block.begin(), block.end(), rng);
    stream.insert(stream.end(), block.begin(), block.end());
  }
  std::vector<CorpusItem> items;
  items.reserve(count);
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < count; ++i) {
    CorpusItem item;
    char id[32];
    std::snprintf(id, sizeof id, "%s-%05zu", prefix.c_str(), i);
    item.id = id;
    const double duration = std::round(uniform(rng, config.min_duration_s, config.max_duration_s) * 100.0) / 100.0;
    std::span<const EventKind> kinds(stream.data() + cursor, static_cast<std::size_t>(counts[i]));
    cursor += kinds.size();
    item.events = random_events(kinds, duration, rng);
    item.clip = synth_clip(item.events, duration, rng, config.sample_rate_hz);
    if (five_refs) {
      item.references = render_paraphrases(item.events);
    } else {
      item.references = {render_caption(item.events, rng)};
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace

CorpusSplit make_corpus(const CorpusConfig& config, std::uint64_t seed) {
  if (config.train < 10 || config.validation < 10 || config.test < 10) {
    throw std::invalid_argument("make_corpus: every split needs at least 10 items");
  }
  if (!(config.min_duration_s > 0.0) || config.max_duration_s < config.min_duration_s) {
    throw std::invalid_argument("make_corpus: bad duration range");
  }
  CorpusSplit split;
  Rng train_rng(seed * 3 + 0x5eed0001ULL);
  Rng val_rng(seed * 3 + 0x5eed0002ULL);
  Rng test_rng(seed * 3 + 0x5eed0003ULL);
  split.train = make_split("train", config.train, false, config, train_rng);
  split.validation = make_split("val", config.validation, true, config, val_rng);
  split.test = make_split("test", config.test, true, config, test_rng);
  return split;
}

}  // namespace enclap::synth
