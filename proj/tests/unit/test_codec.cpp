#include <doctest.h>

#include <filesystem>
#include <set>

#include "enclap/codec.hpp"
#include "enclap/synth.hpp"

using namespace enclap;
using codec::CodecConfig;
using codec::CodecModel;

namespace {

audio::AudioClip tone_clip(double seconds, double f = 440.0) {
  synth::Rng rng(1);
  synth::EventSpec e;
  e.kind = synth::EventKind::kTone;
  e.pitch = synth::Pitch::kLow;
  e.frequency_hz = f;
  e.duration_s = seconds;
  const std::vector<synth::EventSpec> events{e};
  return synth::synth_clip(events, seconds, rng);
}

struct TrainedFixture {
  std::vector<audio::AudioClip> train, held_out;
  CodecModel trained, untrained;
  codec::CodecTrainStats stats;

  static std::vector<audio::AudioClip> clips(const std::vector<synth::CorpusItem>& items) {
    std::vector<audio::AudioClip> out;
    for (const auto& item : items) out.push_back(item.clip);
    return out;
  }

  TrainedFixture() : trained(CodecConfig{}, 0), untrained(CodecConfig{}, 0) {
    synth::CorpusConfig cc;
    cc.train = 60;
    cc.validation = 10;
    cc.test = 20;
    cc.max_duration_s = 2.0;
    const auto corpus = synth::make_corpus(cc, 3);
    train = clips(corpus.train);
    held_out = clips(corpus.test);
    codec::CodecTrainConfig tc;
    tc.steps = 250;
    trained = codec::train_codec(train, CodecConfig{}, tc, 17, &stats);
    tc.steps = 0;
    untrained = codec::train_codec(train, CodecConfig{}, tc, 17);
  }
};

const TrainedFixture& fixture() {
  static const TrainedFixture f;
  return f;
}

}  // namespace

TEST_CASE("frame counts follow duration times frame rate") {
  CodecModel model(CodecConfig{}, 1);
  const auto z = codec::encode_frames(tone_clip(1.0), model);
  CHECK(z.rows() == 75);
  CHECK(z.cols() == 16);

  CodecConfig fifty;
  fifty.frame_hz = 50.0;
  CodecModel m50(fifty, 1);
  CHECK(codec::encode_frames(tone_clip(2.0), m50).rows() == 100);

  audio::AudioClip tiny;
  tiny.samples.assign(100, 0.1f);
  CHECK_THROWS_AS(codec::encode_frames(tiny, model), audio::ClipTooShortError);
}

TEST_CASE("all-zero clip encodes to identical frames") {
  CodecModel model(CodecConfig{}, 2);
  audio::AudioClip silent;
  silent.samples.assign(16000, 0.0f);
  const auto z = codec::encode_frames(silent, model);
  for (std::size_t l = 1; l < z.rows(); ++l)
    for (std::size_t j = 0; j < z.cols(); ++j) CHECK(z.at(l, j) == z.at(0, j));
}

TEST_CASE("codec_encode shape, range and determinism") {
  CodecModel model(CodecConfig{}, 3);
  const auto clip = tone_clip(1.0, 1800.0);
  const auto a = codec::codec_encode(clip, model);
  const auto b = codec::codec_encode(clip, model);
  CHECK(a.num_codebooks == 4);
  CHECK(a.length == 75);
  CHECK(a.codes.size() == 300);
  CHECK(a == b);
  for (auto c : a.codes) {
    CHECK(c >= 0);
    CHECK(c < 64);
  }
  CHECK(a.source_duration_s == doctest::Approx(1.0));
}

TEST_CASE("trained codec refines residuals and beats the untrained baseline") {
  const auto& f = fixture();
  const auto ev = codec::evaluate_codec(f.trained, f.held_out);
  const auto base = codec::evaluate_codec(f.untrained, f.held_out);
  MESSAGE("recon mse trained " << ev.reconstruction_mse << " untrained " << base.reconstruction_mse);
  CHECK(ev.reconstruction_mse < base.reconstruction_mse);
  REQUIRE(ev.residual_energy.size() == 4);
  CHECK(ev.residual_energy[3] < ev.residual_energy[0]);
  for (std::size_t n = 1; n < 4; ++n) CHECK(ev.residual_energy[n] <= ev.residual_energy[n - 1]);
  CHECK_FALSE(f.stats.final.collapsed);
  for (auto used : f.stats.final.used_entries) CHECK(used >= 2);
  CHECK(f.stats.loss_curve.size() == 250);
  CHECK(f.stats.loss_curve.back() < f.stats.loss_curve.front());
}

TEST_CASE("trained codebooks keep a zero entry 0 and distinct entries") {
  const auto& f = fixture();
  for (const auto* m : {&f.trained, &f.untrained}) {
    for (const auto& cb : m->codebooks()) {
      for (std::size_t j = 0; j < cb.dim; ++j) CHECK(cb.entries[j] == 0.0);
      std::set<std::vector<double>> rows;
      for (std::size_t v = 0; v < cb.size; ++v) rows.insert({cb.entry(v).begin(), cb.entry(v).end()});
      CHECK(rows.size() == cb.size);
    }
  }
}

TEST_CASE("trained codec is frozen") {
  const auto& f = fixture();
  for (const auto& t : f.trained.params().tensors()) CHECK_FALSE(t.requires_grad());
}

TEST_CASE("training twice with one seed gives bit-identical codebooks") {
  const auto& f = fixture();
  codec::CodecTrainConfig tc;
  tc.steps = 250;
  const auto again = codec::train_codec(f.train, CodecConfig{}, tc, 17);
  for (std::size_t n = 0; n < 4; ++n) CHECK(again.codebooks()[n].entries == f.trained.codebooks()[n].entries);
  tc.steps = 20;
  const auto other = codec::train_codec(f.train, CodecConfig{}, tc, 18);
  CHECK(other.codebooks()[1].entries != f.trained.codebooks()[1].entries);
  CHECK_THROWS_AS(codec::train_codec(std::span<const audio::AudioClip>{}, CodecConfig{}, tc, 1), std::invalid_argument);
}

TEST_CASE("codes survive the on-disk PCM round trip and state export") {
  const auto& f = fixture();
  const auto path = std::filesystem::temp_directory_path() / "enclap_codec_roundtrip.f32";
  audio::write_pcm_f32(path, f.held_out[0]);
  const auto back = audio::read_pcm_f32(path, 16000);
  std::filesystem::remove(path);
  CHECK(codec::codec_encode(back, f.trained) == codec::codec_encode(f.held_out[0], f.trained));

  CodecModel fresh(CodecConfig{}, 999);
  fresh.import_state(f.trained.export_state());
  CHECK(codec::codec_encode(f.held_out[1], fresh) == codec::codec_encode(f.held_out[1], f.trained));
}
