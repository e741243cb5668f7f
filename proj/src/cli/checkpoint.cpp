#include "enclap/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace enclap::cli {

bool Checkpoint::operator==(const Checkpoint& o) const {
  if (kind != o.kind || config != o.config || vocabulary != o.vocabulary || optimizer_step != o.optimizer_step ||
      first_moment != o.first_moment || second_moment != o.second_moment || rng != o.rng ||
      tensors.size() != o.tensors.size()) {
    return false;
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& a = tensors[i];
    const auto& b = o.tensors[i];
    if (a.name != b.name || a.shape != b.shape || a.values.size() != b.values.size()) return false;
    // Bitwise, so -0.0 and NaN payloads count.
    if (!a.values.empty() && std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void f64s(const std::vector<double>& v) {
    for (double x : v) f64(x);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4, "u32")); }
  std::uint64_t u64() { return get(8, "u64"); }
  double f64() { return std::bit_cast<double>(get(8, "f64")); }
  std::string str(const char* what) {
    const auto n = u64();
    need(n, what);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::vector<double> f64s(std::uint64_t n, const char* what) {
    need(n * 8, what);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  // Element counts are checked against the bytes left, so a corrupt count
  // cannot trigger a huge allocation.
  std::uint64_t count(std::uint64_t min_bytes_each, const char* what) {
    const auto n = u64();
    if (min_bytes_each > 0 && n > remaining() / min_bytes_each) truncated(what);
    return n;
  }
  void need(std::uint64_t n, const char* what) const {
    if (n > remaining()) truncated(what);
  }
  std::uint64_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  [[noreturn]] void truncated(const char* what) const {
    throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
  }
  std::uint64_t get(int n, const char* what) {
    need(static_cast<std::uint64_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  if (c.first_moment.size() != c.second_moment.size()) throw CheckpointError("optimiser moments differ in count");
  Writer w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(c.kind);
  w.u64(c.config.size());
  for (const auto& [k, v] : c.config) {
    w.str(k);
    w.str(v);
  }
  w.u64(c.vocabulary.size());
  for (const auto& word : c.vocabulary) w.str(word);
  w.u64(c.tensors.size());
  for (const auto& t : c.tensors) {
    if (ad::shape_numel(t.shape) != t.values.size()) throw CheckpointError("tensor " + t.name + " does not match its shape");
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(d);
    w.f64s(t.values);
  }
  w.u64(c.optimizer_step);
  w.u64(c.first_moment.size());
  for (std::size_t i = 0; i < c.first_moment.size(); ++i) {
    if (c.first_moment[i].size() != c.second_moment[i].size()) throw CheckpointError("optimiser moment sizes differ");
    w.u64(c.first_moment[i].size());
    w.f64s(c.first_moment[i]);
    w.f64s(c.second_moment[i]);
  }
  w.str(c.rng);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(sizeof kCheckpointMagic, "magic");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  r.skip(sizeof kCheckpointMagic);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.kind = r.str("kind");
  for (auto n = r.count(16, "config"); n > 0; --n) {
    auto k = r.str("config key");
    auto v = r.str("config value");
    c.config.emplace_back(std::move(k), std::move(v));
  }
  for (auto n = r.count(8, "vocabulary"); n > 0; --n) c.vocabulary.push_back(r.str("vocabulary"));
  for (auto n = r.count(12, "tensors"); n > 0; --n) {
    nn::NamedTensor t;
    t.name = r.str("tensor name");
    const auto rank = r.u32();
    r.need(static_cast<std::uint64_t>(rank) * 8, "tensor shape");
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = r.u64();
      if (d != 0 && numel > r.remaining() / d) throw CheckpointError("checkpoint truncated in tensor " + t.name);
      numel *= d;
      t.shape.push_back(d);
    }
    t.values = r.f64s(numel, "tensor values");
    c.tensors.push_back(std::move(t));
  }
  c.optimizer_step = r.u64();
  for (auto n = r.count(8, "optimiser moments"); n > 0; --n) {
    const auto len = r.u64();
    if (len > r.remaining() / 16) throw CheckpointError("checkpoint truncated in optimiser moments");
    c.first_moment.push_back(r.f64s(len, "first moment"));
    c.second_moment.push_back(r.f64s(len, "second moment"));
  }
  c.rng = r.str("rng state");
  if (r.remaining() != 0) throw CheckpointError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(checkpoint);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write next to the target and rename, so a crash never leaves half a file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace enclap::cli
