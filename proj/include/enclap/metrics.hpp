#pragma once

// Caption metrics: CIDEr-D, an exact-match METEOR variant without stemming
// or synonyms, and event recall on the synthetic corpus.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace enclap::metrics {

using Tokens = std::vector<std::string>;

struct CorpusScore {
  double corpus = 0.0;
  std::vector<double> per_item;
};

/// n-gram counts of one token sequence for n = 1..max_n (index n - 1).
using NGramCounts = std::vector<std::map<std::vector<std::string>, double>>;
NGramCounts count_ngrams(const Tokens& tokens, std::size_t max_n);

struct NGramStats {
  std::size_t max_n = 4;
  std::size_t reference_sets = 0;                          // M
  std::map<std::vector<std::string>, double> document_frequency;  // over reference sets
};

NGramStats reference_statistics(const std::vector<std::vector<Tokens>>& references, std::size_t max_n = 4);

struct CiderOptions {
  std::size_t max_n = 4;
  double sigma = 6.0;
};

/// CIDEr-D. Needs at least 2 items; lengths in the Gaussian penalty are
/// token counts. An empty candidate scores 0.
CorpusScore cider_d(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references,
                    const CiderOptions& options = {});

struct Alignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

/// Greedy exact-match alignment: repeatedly links the longest run of
/// unaligned tokens common to both sides (earliest candidate position, then
/// earliest reference position, on ties) until no token is left to link.
Alignment align_exact(const Tokens& candidate, const Tokens& reference);

/// F = 10PR / (R + 9P), penalty 0.5 (chunks / matches)^3, score F (1 - penalty).
double meteor_lite_single(const Tokens& candidate, const Tokens& reference);
/// Best reference per item; corpus score is the mean.
CorpusScore meteor_lite(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references);

/// Fraction of reference events (kind, pitch multiset) named by the
/// candidate, both read with the synthetic caption parser.
double event_recall(const std::string& candidate, const std::string& reference);

struct EvalReport {
  std::string model_id;
  std::string split;
  std::uint64_t seed = 0;
  std::vector<std::string> item_ids;
  std::vector<std::string> candidates;
  CorpusScore cider;
  CorpusScore meteor;
  CorpusScore events;
};

/// Scores raw caption strings; item_ids, candidates and references must align.
EvalReport evaluate(const std::vector<std::string>& item_ids, const std::vector<std::string>& candidates,
                    const std::vector<std::vector<std::string>>& references, const std::string& model_id,
                    const std::string& split, std::uint64_t seed);

/// `<stem>.txt` holds key = value lines; `<stem>.csv` holds
/// item_id,cider_d,meteor_lite,event_recall rows.
void write_report(const EvalReport& report, const std::filesystem::path& stem);

}  // namespace enclap::metrics
