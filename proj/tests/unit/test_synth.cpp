#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>

#include "enclap/synth.hpp"
#include "enclap/text.hpp"

using namespace enclap;
using synth::EventKind;
using synth::EventSpec;
using synth::Pitch;

namespace {

EventSpec event(EventKind kind, Pitch pitch, double f, double onset, double dur, double amp = 0.8) {
  EventSpec e;
  e.kind = kind;
  e.pitch = pitch;
  e.frequency_hz = f;
  e.onset_s = onset;
  e.duration_s = dur;
  e.amplitude = amp;
  return e;
}

// Direct O(n^2) DFT magnitude, independent of FFTW.
std::vector<double> naive_dft_magnitude(const audio::AudioClip& clip, std::size_t offset, std::size_t n) {
  std::vector<double> mag(n / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / static_cast<double>(n));
      const double x = clip.samples[offset + i] * w;
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(k * i % n) / static_cast<double>(n);
      re += x * std::cos(ang);
      im += x * std::sin(ang);
    }
    mag[k] = std::hypot(re, im);
  }
  return mag;
}

}  // namespace

TEST_CASE("440 Hz tone peaks within one bin of 440 Hz") {
  synth::Rng rng(7);
  const std::vector<EventSpec> events{event(EventKind::kTone, Pitch::kLow, 440.0, 0.0, 1.0)};
  const auto clip = synth::synth_clip(events, 1.0, rng);
  const std::size_t n = 1024;
  const auto fast = audio::magnitude_spectrum(clip, 4000, n);
  const auto slow = naive_dft_magnitude(clip, 4000, n);
  REQUIRE(fast.size() == slow.size());
  for (std::size_t k = 0; k < fast.size(); ++k) CHECK(fast[k] == doctest::Approx(slow[k]).epsilon(1e-9).scale(1.0));
  const auto peak = static_cast<double>(std::max_element(slow.begin(), slow.end()) - slow.begin());
  const double expected_bin = 440.0 * n / 16000.0;
  CHECK(std::abs(peak - expected_bin) <= 1.0);
  const auto fast_peak = static_cast<double>(std::max_element(fast.begin(), fast.end()) - fast.begin());
  CHECK(fast_peak == peak);
}

TEST_CASE("synth_clip normalisation, silence and determinism") {
  const std::vector<EventSpec> events{event(EventKind::kTone, Pitch::kHigh, 1500.0, 0.1, 0.5),
                                      event(EventKind::kNoiseBurst, Pitch::kNone, 0.0, 0.8, 0.6)};
  synth::Rng a(11), b(11);
  const auto x = synth::synth_clip(events, 2.0, a);
  const auto y = synth::synth_clip(events, 2.0, b);
  CHECK(x.samples == y.samples);
  CHECK(x.samples.size() == 32000);
  float peak = 0.0f;
  for (float s : x.samples) peak = std::max(peak, std::abs(s));
  CHECK(peak == doctest::Approx(0.9).epsilon(1e-6));
  x.validate();

  const std::vector<EventSpec> silent{event(EventKind::kTone, Pitch::kLow, 300.0, 0.0, 0.5, 0.0)};
  const auto z = synth::synth_clip(silent, 1.0, a);
  CHECK(std::all_of(z.samples.begin(), z.samples.end(), [](float s) { return s == 0.0f; }));

  CHECK_THROWS_AS(synth::synth_clip(std::vector<EventSpec>{}, 1.0, a), std::invalid_argument);
  const std::vector<EventSpec> outside{event(EventKind::kTone, Pitch::kLow, 300.0, 0.8, 0.5)};
  CHECK_THROWS_AS(synth::synth_clip(outside, 1.0, a), std::invalid_argument);
}

TEST_CASE("every event kind synthesises inside [-1, 1]") {
  synth::Rng rng(3);
  for (auto kind : synth::kAllKinds) {
    const std::vector<EventKind> kinds{kind};
    const auto events = synth::random_events(kinds, 1.5, rng);
    const auto clip = synth::synth_clip(events, 1.5, rng);
    clip.validate();
  }
}

TEST_CASE("caption templates") {
  const std::vector<EventSpec> two{event(EventKind::kTone, Pitch::kHigh, 1500.0, 0.0, 0.4),
                                   event(EventKind::kNoiseBurst, Pitch::kNone, 0.0, 0.5, 0.4)};
  CHECK(synth::render_caption(two, 0) == "a high pitched tone followed by a burst of noise");

  const std::vector<EventSpec> one{event(EventKind::kSiren, Pitch::kLow, 300.0, 0.0, 0.4)};
  for (const auto& c : synth::render_paraphrases(one)) {
    const auto words = text::tokenize_caption(c);
    for (const char* conn : {"followed", "then", "before"}) CHECK(std::find(words.begin(), words.end(), conn) == words.end());
  }

  const std::vector<EventSpec> three{event(EventKind::kClickTrain, Pitch::kNone, 10.0, 0.0, 0.3),
                                     event(EventKind::kChirp, Pitch::kLow, 300.0, 0.4, 0.3),
                                     event(EventKind::kSiren, Pitch::kHigh, 1300.0, 0.8, 0.3)};
  for (const auto& evs : {two, one, three}) {
    const auto para = synth::render_paraphrases(evs);
    REQUIRE(para.size() == 5);
    CHECK(std::set<std::string>(para.begin(), para.end()).size() == 5);
    for (const auto& c : para) CHECK(synth::parse_caption(c) == synth::describe(evs));
  }
}

TEST_CASE("parser recovers every caption of a generated corpus") {
  synth::CorpusConfig cfg;
  cfg.train = 300;
  cfg.validation = 40;
  cfg.test = 40;
  const auto corpus = synth::make_corpus(cfg, 5);
  std::size_t checked = 0;
  for (const auto* split : {&corpus.train, &corpus.validation, &corpus.test}) {
    for (const auto& item : *split) {
      for (const auto& ref : item.references) {
        CHECK(synth::parse_caption(ref) == synth::describe(item.events));
        ++checked;
      }
    }
  }
  CHECK(checked == 300 + 5 * 80);
  CHECK(synth::parse_caption("a dog barks").empty());
}

TEST_CASE("default corpus: sizes, disjoint ids, references, balance, determinism") {
  const auto corpus = synth::make_corpus({}, 1);
  CHECK(corpus.train.size() == 2000);
  CHECK(corpus.validation.size() == 200);
  CHECK(corpus.test.size() == 200);
  std::set<std::string> ids;
  for (const auto* split : {&corpus.train, &corpus.validation, &corpus.test})
    for (const auto& item : *split) CHECK(ids.insert(item.id).second);
  for (const auto& item : corpus.train) CHECK(item.references.size() == 1);
  for (const auto& item : corpus.test) CHECK(item.references.size() == 5);
  for (const auto& item : corpus.validation) CHECK(item.references.size() == 5);

  for (const auto* split : {&corpus.train, &corpus.validation, &corpus.test}) {
    std::map<EventKind, double> counts;
    double total = 0.0;
    for (const auto& item : *split) {
      CHECK(item.events.size() >= 1);
      CHECK(item.events.size() <= 3);
      CHECK(item.clip.duration_s() >= 1.0 - 1e-9);
      CHECK(item.clip.duration_s() <= 4.0 + 1e-9);
      for (const auto& e : item.events) {
        counts[e.kind] += 1.0;
        total += 1.0;
      }
    }
    const double mean = total / 5.0;
    for (auto kind : synth::kAllKinds) CHECK(std::abs(counts[kind] - mean) <= 0.05 * mean);
  }

  synth::CorpusConfig small;
  small.train = 20;
  small.validation = 10;
  small.test = 10;
  const auto a = synth::make_corpus(small, 9);
  const auto b = synth::make_corpus(small, 9);
  const auto c = synth::make_corpus(small, 10);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].clip.samples == b.train[i].clip.samples);
    CHECK(a.train[i].references == b.train[i].references);
  }
  CHECK(a.train[0].clip.samples != c.train[0].clip.samples);

  small.test = 9;
  CHECK_THROWS_AS(synth::make_corpus(small, 1), std::invalid_argument);
}

TEST_CASE("corpus round trips through the on-disk format") {
  synth::CorpusConfig cfg;
  cfg.train = 12;
  cfg.validation = 10;
  cfg.test = 10;
  const auto corpus = synth::make_corpus(cfg, 4);
  const auto dir = std::filesystem::temp_directory_path() / "enclap_test_corpus_io";
  std::filesystem::remove_all(dir);
  synth::write_corpus(dir, corpus);
  const auto back = synth::read_corpus(dir);
  REQUIRE(back.train.size() == corpus.train.size());
  REQUIRE(back.test.size() == corpus.test.size());
  for (std::size_t i = 0; i < corpus.test.size(); ++i) {
    CHECK(back.test[i].id == corpus.test[i].id);
    CHECK(back.test[i].clip.samples == corpus.test[i].clip.samples);
    CHECK(back.test[i].references == corpus.test[i].references);
    CHECK(synth::parse_caption(back.test[i].references[0]) == synth::describe(corpus.test[i].events));
  }
  std::filesystem::remove_all(dir);
}
