#pragma once

// Glue between the frozen upstream models and the captioner.

#include <span>
#include <string>
#include <vector>

#include "enclap/captioner.hpp"
#include "enclap/codec.hpp"
#include "enclap/joint.hpp"
#include "enclap/synth.hpp"

namespace enclap::pipeline {

/// Runs the frozen codec and joint model over every item; one example per
/// reference caption.
std::vector<captioner::Example> make_examples(std::span<const synth::CorpusItem> items, const codec::CodecModel& codec,
                                              const joint::JointEmbeddingModel& clap, const text::Vocabulary& vocab);

/// codec_encode + embed_audio + beam search, decoded to text.
std::string generate_caption(const audio::AudioClip& clip, const codec::CodecModel& codec,
                             const joint::JointEmbeddingModel& clap, const captioner::CaptionerModel& model,
                             const captioner::GenerateOptions& options = {});

/// Up to `count` (clip, first reference) pairs whose captions are all
/// distinct, taken in item order. Retrieval is only well posed when no two
/// candidates share a caption.
std::vector<joint::Pair> retrieval_pairs(std::span<const synth::CorpusItem> items, std::size_t count = 64);

/// (clip, first reference) for every item.
std::vector<joint::Pair> training_pairs(std::span<const synth::CorpusItem> items);

/// Vocabulary over every reference caption of `items`.
text::Vocabulary caption_vocabulary(std::span<const synth::CorpusItem> items);

}  // namespace enclap::pipeline
