#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "enclap/synth.hpp"

namespace enclap::synth {

namespace fs = std::filesystem;

void write_split(const fs::path& dir, std::string_view split, std::span<const CorpusItem> items) {
  fs::create_directories(dir / "clips");
  std::ofstream manifest(dir / (std::string(split) + ".manifest"));
  std::ofstream captions(dir / (std::string(split) + ".captions"));
  if (!manifest || !captions) throw std::runtime_error("cannot write split files in " + dir.string());
  std::size_t next_caption = 0;
  for (const auto& item : items) {
    const auto rel = fs::path("clips") / (item.id + ".f32");
    audio::write_pcm_f32(dir / rel, item.clip);
    char duration[32];
    std::snprintf(duration, sizeof duration, "%.6f", item.clip.duration_s());
    manifest << rel.generic_string() << '\t' << item.clip.sample_rate_hz << '\t' << duration << '\t';
    for (std::size_t r = 0; r < item.references.size(); ++r) {
      if (item.references[r].find('\n') != std::string::npos) throw std::invalid_argument("caption contains newline");
      manifest << (r ? "," : "") << next_caption++;
      captions << item.references[r] << '\n';
    }
    manifest << '\n';
  }
}

std::vector<CorpusItem> read_split(const fs::path& dir, std::string_view split) {
  const auto manifest_path = dir / (std::string(split) + ".manifest");
  std::ifstream manifest(manifest_path);
  std::ifstream captions(dir / (std::string(split) + ".captions"));
  if (!manifest || !captions) throw std::runtime_error("missing manifest or captions for split " + std::string(split));
  std::vector<std::string> caption_lines;
  for (std::string line; std::getline(captions, line);) caption_lines.push_back(line);

  std::vector<CorpusItem> items;
  std::string line;
  for (std::size_t lineno = 1; std::getline(manifest, line); ++lineno) {
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      return std::runtime_error(manifest_path.string() + ":" + std::to_string(lineno) + ": " + why);
    };
    std::istringstream fields(line);
    std::string path, rate, duration, ids;
    if (!std::getline(fields, path, '\t') || !std::getline(fields, rate, '\t') ||
        !std::getline(fields, duration, '\t') || !std::getline(fields, ids)) {
      throw fail("expected 4 tab-separated fields");
    }
    CorpusItem item;
    item.id = fs::path(path).stem().string();
    item.clip = audio::read_pcm_f32(dir / path, std::stoi(rate));
    if (std::abs(item.clip.duration_s() - std::stod(duration)) > 1e-5 + 1.0 / item.clip.sample_rate_hz) {
      throw fail("duration does not match the PCM file length");
    }
    std::istringstream id_list(ids);
    for (std::string id; std::getline(id_list, id, ',');) {
      const auto k = std::stoul(id);
      if (k >= caption_lines.size()) throw fail("caption id " + id + " out of range");
      item.references.push_back(caption_lines[k]);
    }
    items.push_back(std::move(item));
  }
  return items;
}

void write_corpus(const fs::path& dir, const CorpusSplit& corpus) {
  write_split(dir, "train", corpus.train);
  write_split(dir, "validation", corpus.validation);
  write_split(dir, "test", corpus.test);
}

CorpusSplit read_corpus(const fs::path& dir) {
  return {read_split(dir, "train"), read_split(dir, "validation"), read_split(dir, "test")};
}

}  // namespace enclap::synth
