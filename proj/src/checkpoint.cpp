#include "adsy/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "adsy/errors.hpp"

namespace adsy {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'S', 'W'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void i64(std::int64_t v) { bytes(&v, 8); }
  void f32(float v) { bytes(&v, 4); }
  void str(const std::string& s) {
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("checkpoint write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  void bytes(void* p, std::size_t n) {
    if (pos_ + n > buf_.size())
      throw FormatError("checkpoint truncated", static_cast<std::uint64_t>(pos_));
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint16_t u16() { std::uint16_t v; bytes(&v, 2); return v; }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
  std::int64_t i64() { std::int64_t v; bytes(&v, 8); return v; }
  float f32() { float v; bytes(&v, 4); return v; }
  std::string str() {
    const std::uint16_t n = u16();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

template <typename T>
void write_entry(Writer& w, const std::string& name, const Tensor<T>& t) {
  w.str(name);
  const auto& shape = t.shape();
  std::uint16_t nd = static_cast<std::uint16_t>(shape.size());
  w.u16(nd);
  for (auto d : shape) w.i64(d);
  for (std::int64_t i = 0; i < t.numel(); ++i) w.f32(static_cast<float>(t[i]));
}

template <typename T>
void read_entry_into(Reader& r, const std::string& expected_name, Tensor<T>& dst) {
  const std::size_t at = r.pos();
  const std::string name = r.str();
  if (name != expected_name)
    throw FormatError("checkpoint entry '" + name + "' where '" + expected_name + "' expected",
                      static_cast<std::uint64_t>(at));
  const std::uint16_t nd = r.u16();
  Shape shape(nd);
  for (auto& d : shape) d = r.i64();
  if (shape != dst.shape())
    throw FormatError("checkpoint entry '" + name + "' has shape " + shape_str(shape) +
                          ", model expects " + shape_str(dst.shape()),
                      static_cast<std::uint64_t>(at));
  for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] = static_cast<T>(r.f32());
}

}  // namespace

template <typename T>
void save_checkpoint(const ParamSet<T>& ps, const std::string& section,
                     const std::filesystem::path& path) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u16(kCheckpointVersion);
  w.str(section);
  w.u32(static_cast<std::uint32_t>(ps.param_count() + ps.buffers().size()));
  for (std::size_t i = 0; i < ps.param_count(); ++i)
    write_entry(w, ps.param(i).name, ps.param(i).value);
  for (const auto& [name, buf] : ps.buffers()) write_entry(w, name, *buf);
  w.finish();
}

template <typename T>
void load_checkpoint(ParamSet<T>& ps, const std::string& section,
                     const std::filesystem::path& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  const std::string sec = r.str();
  if (sec != section)
    throw FormatError("checkpoint section '" + sec + "' does not match expected '" + section + "'",
                      6);
  const std::uint32_t count = r.u32();
  const std::uint32_t expected =
      static_cast<std::uint32_t>(ps.param_count() + ps.buffers().size());
  if (count != expected)
    throw FormatError("checkpoint has " + std::to_string(count) + " entries, model expects " +
                          std::to_string(expected),
                      static_cast<std::uint64_t>(r.pos() - 4));
  for (std::size_t i = 0; i < ps.param_count(); ++i)
    read_entry_into(r, ps.param(i).name, ps.param(i).value);
  for (const auto& [name, buf] : ps.buffers()) read_entry_into(r, name, *buf);
}

std::string checkpoint_section(const std::filesystem::path& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  r.u16();
  return r.str();
}

template void save_checkpoint<float>(const ParamSet<float>&, const std::string&,
                                     const std::filesystem::path&);
template void load_checkpoint<float>(ParamSet<float>&, const std::string&,
                                     const std::filesystem::path&);
template void save_checkpoint<double>(const ParamSet<double>&, const std::string&,
                                      const std::filesystem::path&);
template void load_checkpoint<double>(ParamSet<double>&, const std::string&,
                                      const std::filesystem::path&);

}  // namespace adsy
