#include "enclap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include "enclap/synth.hpp"
#include "enclap/text.hpp"

namespace enclap::metrics {

NGramCounts count_ngrams(const Tokens& tokens, std::size_t max_n) {
  NGramCounts out(max_n);
  for (std::size_t n = 1; n <= max_n; ++n) {
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
      out[n - 1][std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n))] += 1.0;
  }
  return out;
}

NGramStats reference_statistics(const std::vector<std::vector<Tokens>>& references, std::size_t max_n) {
  NGramStats stats;
  stats.max_n = max_n;
  stats.reference_sets = references.size();
  for (const auto& refs : references) {
    std::set<std::vector<std::string>> seen;
    for (const auto& r : refs)
      for (const auto& per_n : count_ngrams(r, max_n))
        for (const auto& [g, c] : per_n) seen.insert(g);
    for (const auto& g : seen) stats.document_frequency[g] += 1.0;
  }
  return stats;
}

namespace {

struct TfIdf {
  std::vector<std::map<std::vector<std::string>, double>> vec;
  std::vector<double> norm;
  double length = 0.0;
};

TfIdf tfidf(const Tokens& tokens, const NGramStats& stats) {
  TfIdf out;
  const auto counts = count_ngrams(tokens, stats.max_n);
  const double log_m = std::log(static_cast<double>(stats.reference_sets));
  out.vec.resize(stats.max_n);
  out.norm.assign(stats.max_n, 0.0);
  for (std::size_t n = 0; n < stats.max_n; ++n) {
    for (const auto& [g, tf] : counts[n]) {
      const auto it = stats.document_frequency.find(g);
      const double df = it == stats.document_frequency.end() ? 0.0 : it->second;
      const double v = tf * (log_m - std::log(std::max(1.0, df)));
      out.vec[n][g] = v;
      out.norm[n] += v * v;
    }
    out.norm[n] = std::sqrt(out.norm[n]);
  }
  out.length = static_cast<double>(tokens.size());
  return out;
}

double cider_pair(const TfIdf& hyp, const TfIdf& ref, double sigma) {
  const std::size_t max_n = hyp.vec.size();
  const double delta = hyp.length - ref.length;
  const double penalty = std::exp(-(delta * delta) / (2.0 * sigma * sigma));
  double total = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    double val = 0.0;
    for (const auto& [g, h] : hyp.vec[n]) {
      const auto it = ref.vec[n].find(g);
      if (it != ref.vec[n].end()) val += std::min(h, it->second) * it->second;
    }
    if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val /= hyp.norm[n] * ref.norm[n];
    total += val * penalty;
  }
  return total / static_cast<double>(max_n);
}

void check_corpus(std::size_t candidates, const std::vector<std::vector<Tokens>>& references) {
  if (candidates != references.size()) throw std::invalid_argument("metrics: candidate and reference counts differ");
  for (std::size_t i = 0; i < references.size(); ++i)
    if (references[i].empty()) throw std::invalid_argument("metrics: item " + std::to_string(i) + " has no references");
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

CorpusScore cider_d(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references,
                    const CiderOptions& options) {
  check_corpus(candidates.size(), references);
  if (references.size() < 2) throw std::invalid_argument("cider_d: needs at least 2 items for document frequencies");
  const auto stats = reference_statistics(references, options.max_n);
  CorpusScore out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].empty()) {
      out.per_item.push_back(0.0);
      continue;
    }
    const auto hyp = tfidf(candidates[i], stats);
    double s = 0.0;
    for (const auto& r : references[i]) s += cider_pair(hyp, tfidf(r, stats), options.sigma);
    out.per_item.push_back(10.0 * s / static_cast<double>(references[i].size()));
  }
  out.corpus = mean(out.per_item);
  return out;
}

Alignment align_exact(const Tokens& candidate, const Tokens& reference) {
  std::vector<bool> cu(candidate.size(), false), ru(reference.size(), false);
  std::vector<std::pair<std::size_t, std::size_t>> links;
  for (;;) {
    std::size_t best_len = 0, bi = 0, bj = 0;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      if (cu[i]) continue;
      for (std::size_t j = 0; j < reference.size(); ++j) {
        std::size_t k = 0;
        while (i + k < candidate.size() && j + k < reference.size() && !cu[i + k] && !ru[j + k] &&
               candidate[i + k] == reference[j + k])
          ++k;
        if (k > best_len) {
          best_len = k;
          bi = i;
          bj = j;
        }
      }
    }
    if (best_len == 0) break;
    for (std::size_t k = 0; k < best_len; ++k) {
      cu[bi + k] = true;
      ru[bj + k] = true;
      links.emplace_back(bi + k, bj + k);
    }
  }
  Alignment a;
  a.matches = links.size();
  if (links.empty()) return a;
  std::sort(links.begin(), links.end());
  a.chunks = 1;
  for (std::size_t t = 1; t < links.size(); ++t)
    if (links[t].first != links[t - 1].first + 1 || links[t].second != links[t - 1].second + 1) ++a.chunks;
  return a;
}

double meteor_lite_single(const Tokens& candidate, const Tokens& reference) {
  const auto a = align_exact(candidate, reference);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double f = 10.0 * p * r / (r + 9.0 * p);
  const double penalty = 0.5 * std::pow(static_cast<double>(a.chunks) / m, 3.0);
  return f * (1.0 - penalty);
}

CorpusScore meteor_lite(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references) {
  check_corpus(candidates.size(), references);
  CorpusScore out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double best = 0.0;
    for (const auto& r : references[i]) best = std::max(best, meteor_lite_single(candidates[i], r));
    out.per_item.push_back(best);
  }
  out.corpus = mean(out.per_item);
  return out;
}

double event_recall(const std::string& candidate, const std::string& reference) {
  const auto ref = synth::parse_caption(reference);
  auto cand = synth::parse_caption(candidate);
  // A reference naming no events is matched only by a candidate naming none.
  if (ref.empty()) return cand.empty() ? 1.0 : 0.0;
  std::size_t hit = 0;
  for (const auto& e : ref) {
    const auto it = std::find(cand.begin(), cand.end(), e);
    if (it != cand.end()) {
      ++hit;
      cand.erase(it);
    }
  }
  return static_cast<double>(hit) / static_cast<double>(ref.size());
}

EvalReport evaluate(const std::vector<std::string>& item_ids, const std::vector<std::string>& candidates,
                    const std::vector<std::vector<std::string>>& references, const std::string& model_id,
                    const std::string& split, std::uint64_t seed) {
  if (item_ids.size() != candidates.size() || candidates.size() != references.size()) {
    throw std::invalid_argument("evaluate: ids, candidates and references must align");
  }
  EvalReport rep;
  rep.model_id = model_id;
  rep.split = split;
  rep.seed = seed;
  rep.item_ids = item_ids;
  rep.candidates = candidates;
  std::vector<Tokens> cand_tokens;
  std::vector<std::vector<Tokens>> ref_tokens;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_tokens.push_back(text::tokenize_caption(candidates[i]));
    ref_tokens.emplace_back();
    double best = 0.0;
    for (const auto& r : references[i]) {
      ref_tokens.back().push_back(text::tokenize_caption(r));
      best = std::max(best, event_recall(candidates[i], r));
    }
    rep.events.per_item.push_back(best);
  }
  rep.events.corpus = mean(rep.events.per_item);
  rep.cider = cider_d(cand_tokens, ref_tokens);
  rep.meteor = meteor_lite(cand_tokens, ref_tokens);
  return rep;
}

void write_report(const EvalReport& report, const std::filesystem::path& stem) {
  auto txt_path = stem;
  txt_path += ".txt";
  auto csv_path = stem;
  csv_path += ".csv";
  std::ofstream txt(txt_path);
  if (!txt) throw std::runtime_error("cannot write " + txt_path.string());
  char buf[64];
  auto fmt = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.9f", x);
    return std::string(buf);
  };
  txt << "model_id = " << report.model_id << "\n";
  txt << "split = " << report.split << "\n";
  txt << "seed = " << report.seed << "\n";
  txt << "items = " << report.item_ids.size() << "\n";
  txt << "cider_d = " << fmt(report.cider.corpus) << "\n";
  txt << "meteor_lite = " << fmt(report.meteor.corpus) << "\n";
  txt << "event_recall = " << fmt(report.events.corpus) << "\n";
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  csv << "item_id,cider_d,meteor_lite,event_recall\n";
  for (std::size_t i = 0; i < report.item_ids.size(); ++i) {
    csv << report.item_ids[i] << ',' << fmt(report.cider.per_item[i]) << ',' << fmt(report.meteor.per_item[i]) << ','
        << fmt(report.events.per_item[i]) << "\n";
  }
  if (!txt || !csv) throw std::runtime_error("short write of report " + stem.string());
}

}  // namespace enclap::metrics
