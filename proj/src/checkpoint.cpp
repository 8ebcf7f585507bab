#include "vidreason/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "vidreason/errors.hpp"

namespace vidreason {

namespace {

constexpr char kMagic[4] = {'V', 'R', 'C', 'K'};

class Writer {
 public:
  void u32(std::uint32_t v) { raw(v, 4); }
  void u64(std::uint64_t v) { raw(v, 8); }
  void f64(double v) { raw(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_ += s;
  }
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) u64(d);
    for (double v : t.values()) f64(v);
  }
  void magic() { bytes_.append(kMagic, 4); }
  const std::string& bytes() const { return bytes_; }

 private:
  void raw(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  std::string bytes_;
};

class Reader {
 public:
  Reader(std::string bytes, std::string where) : bytes_(std::move(bytes)), where_(std::move(where)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(raw(4)); }
  std::uint64_t u64() { return raw(8); }
  double f64() { return std::bit_cast<double>(raw(8)); }
  std::string str() {
    const std::size_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Tensor tensor() {
    const std::uint32_t rank = u32();
    if (rank > 4) fail("tensor rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t total = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape.push_back(u64());
      total *= shape.back();
    }
    need(total * 8);
    std::vector<double> data(total);
    for (auto& v : data) v = f64();
    return Tensor(shape, std::move(data));
  }
  void magic() {
    need(4);
    if (bytes_.compare(pos_, 4, kMagic, 4) != 0) fail("not a checkpoint file");
    pos_ += 4;
  }
  void expect_end() const {
    if (pos_ != bytes_.size()) fail(std::to_string(bytes_.size() - pos_) + " trailing bytes");
  }
  [[noreturn]] void fail(const std::string& what) const { throw FormatError(where_ + ": " + what); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) fail("truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t raw(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(ModelWeights& w, const AdamState& adam, std::uint64_t iteration, std::string config_json,
                           std::string config_digest, const Vocabulary& vocab) {
  Checkpoint ck;
  ck.iteration = iteration;
  ck.config_json = std::move(config_json);
  ck.config_digest = std::move(config_digest);
  ck.vocabulary = vocab.symbols();
  w.visit([&](const std::string& name, Tensor& t) { ck.params.emplace_back(name, t); });
  ck.adam = adam;
  return ck;
}

void restore_weights(const Checkpoint& ck, ModelWeights& w) {
  std::size_t i = 0;
  w.visit([&](const std::string& name, Tensor& t) {
    if (i >= ck.params.size()) throw FormatError("checkpoint lacks parameter " + name);
    const auto& [stored_name, stored] = ck.params[i++];
    if (stored_name != name) throw FormatError("checkpoint parameter " + stored_name + " where " + name + " expected");
    if (stored.shape() != t.shape()) {
      throw FormatError("checkpoint parameter " + name + " has shape " + shape_string(stored.shape()) + ", model " +
                        shape_string(t.shape()));
    }
    t = stored;
  });
  if (i != ck.params.size()) throw FormatError("checkpoint holds " + std::to_string(ck.params.size() - i) + " extra parameters");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  Writer w;
  w.magic();
  w.u32(ck.version);
  w.u64(ck.iteration);
  w.str(ck.config_digest);
  w.str(ck.config_json);
  w.u32(static_cast<std::uint32_t>(ck.vocabulary.size()));
  for (const auto& s : ck.vocabulary) w.str(s);
  w.u32(static_cast<std::uint32_t>(ck.params.size()));
  for (const auto& [name, t] : ck.params) {
    w.str(name);
    w.tensor(t);
  }
  w.u64(ck.adam.steps);
  w.u32(static_cast<std::uint32_t>(ck.adam.m.size()));
  for (std::size_t i = 0; i < ck.adam.m.size(); ++i) {
    w.tensor(ck.adam.m[i]);
    w.tensor(ck.adam.v[i]);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw FormatError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}), path.string());
  r.magic();
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != kCheckpointVersion) {
    r.fail("version " + std::to_string(ck.version) + ", expected " + std::to_string(kCheckpointVersion));
  }
  ck.iteration = r.u64();
  ck.config_digest = r.str();
  ck.config_json = r.str();
  const std::uint32_t nv = r.u32();
  for (std::uint32_t i = 0; i < nv; ++i) ck.vocabulary.push_back(r.str());
  const std::uint32_t np = r.u32();
  for (std::uint32_t i = 0; i < np; ++i) {
    std::string name = r.str();
    ck.params.emplace_back(std::move(name), r.tensor());
  }
  ck.adam.steps = r.u64();
  const std::uint32_t na = r.u32();
  for (std::uint32_t i = 0; i < na; ++i) {
    ck.adam.m.push_back(r.tensor());
    ck.adam.v.push_back(r.tensor());
  }
  r.expect_end();
  return ck;
}

}  // namespace vidreason
