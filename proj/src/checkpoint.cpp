#include "ssmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ssmt/errors.hpp"
#include "ssmt/params.hpp"

namespace ssmt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    std::string_view v = bytes_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw CorruptCheckpoint(std::string("checkpoint truncated while reading ") + what);
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string out = "SSMT";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw ContractError("tensor name too long: " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    const auto data = t.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
  }
  put<std::uint64_t>(out, fnv1a64(out));
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 + 4 + 4 + 8 || bytes.compare(0, 4, "SSMT") != 0) {
    throw CorruptCheckpoint("not an SSMT checkpoint (bad magic)");
  }
  const std::string_view body(bytes.data(), bytes.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 8);
  if (fnv1a64(body) != stored) throw CorruptCheckpoint("checkpoint checksum mismatch");
  Reader r(body);
  r.take(4, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CorruptCheckpoint("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name(r.take(len, "name"));
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape;
    std::size_t n = 1;
    for (int d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint32_t>("dims");
      if (dim == 0 || dim > (1u << 30)) throw CorruptCheckpoint("invalid dimension in tensor " + name);
      shape.push_back(static_cast<int>(dim));
      n *= dim;
      if (n > (std::size_t{1} << 32)) throw CorruptCheckpoint("tensor " + name + " too large");
    }
    std::vector<float> data(n);
    const std::string_view raw = r.take(n * sizeof(float), "tensor data");
    std::memcpy(data.data(), raw.data(), raw.size());
    out.push_back({std::move(name), Tensor::from(std::move(shape), std::move(data))});
  }
  if (r.remaining() != 0) throw CorruptCheckpoint("trailing bytes after last tensor");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const std::string bytes = encode_checkpoint(tensors);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const CorruptCheckpoint& e) {
    throw CorruptCheckpoint(path.string() + ": " + e.what());
  }
}

const NamedTensor* find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

}  // namespace ssmt
