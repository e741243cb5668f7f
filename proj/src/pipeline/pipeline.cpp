#include "enclap/pipeline.hpp"

#include <set>

namespace enclap::pipeline {

std::vector<captioner::Example> make_examples(std::span<const synth::CorpusItem> items, const codec::CodecModel& codec,
                                              const joint::JointEmbeddingModel& clap, const text::Vocabulary& vocab) {
  std::vector<captioner::Example> out;
  for (const auto& item : items) {
    const auto codes = codec::codec_encode(item.clip, codec);
    const auto audio = joint::embed_audio(item.clip, clap);
    for (const auto& ref : item.references) out.push_back({codes, audio.vector, vocab.encode(ref)});
  }
  return out;
}

std::string generate_caption(const audio::AudioClip& clip, const codec::CodecModel& codec,
                             const joint::JointEmbeddingModel& clap, const captioner::CaptionerModel& model,
                             const captioner::GenerateOptions& options) {
  const auto codes = codec::codec_encode(clip, codec);
  const auto audio = joint::embed_audio(clip, clap);
  const auto caption = captioner::generate_from_codes(codes, audio.vector, model, options);
  return model.vocabulary().decode(caption.ids);
}

std::vector<joint::Pair> retrieval_pairs(std::span<const synth::CorpusItem> items, std::size_t count) {
  std::vector<joint::Pair> out;
  std::set<std::string> seen;
  for (const auto& item : items) {
    if (out.size() == count) break;
    if (item.references.empty()) continue;
    if (seen.insert(item.references[0]).second) out.push_back({item.clip, item.references[0]});
  }
  return out;
}

std::vector<joint::Pair> training_pairs(std::span<const synth::CorpusItem> items) {
  std::vector<joint::Pair> out;
  for (const auto& item : items)
    if (!item.references.empty()) out.push_back({item.clip, item.references[0]});
  return out;
}

text::Vocabulary caption_vocabulary(std::span<const synth::CorpusItem> items) {
  std::vector<std::string> captions;
  for (const auto& item : items) captions.insert(captions.end(), item.references.begin(), item.references.end());
  return text::Vocabulary::from_captions(captions);
}

}  // namespace enclap::pipeline
