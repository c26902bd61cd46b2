#include "lrm/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace lrm::nn {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

constexpr char kMagic[8] = {'L', 'R', 'M', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_floats(float* dst, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("truncated checkpoint");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const TensorBlock& Checkpoint::block(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return b;
  throw IoError("checkpoint has no block named " + name);
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put(out, ckpt.version);
  put(out, ckpt.arch_digest);
  put(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  out += ckpt.metadata;
  put(out, static_cast<std::uint32_t>(ckpt.blocks.size()));
  for (const auto& b : ckpt.blocks) {
    std::uint64_t count = 1;
    for (auto d : b.shape) count *= d;
    LRM_REQUIRE(count == b.values.size(), "tensor block " + b.name + " payload does not match its shape");
    put(out, static_cast<std::uint32_t>(b.name.size()));
    out += b.name;
    put(out, static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) put(out, d);
    out.append(reinterpret_cast<const char*>(b.values.data()), b.values.size() * sizeof(float));
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a checkpoint (bad magic)");
  Reader r(bytes);
  r.get_string(sizeof(kMagic));
  Checkpoint ckpt;
  ckpt.version = r.get<std::uint32_t>();
  if (ckpt.version != Checkpoint::kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(ckpt.version));
  ckpt.arch_digest = r.get<std::uint64_t>();
  ckpt.metadata = r.get_string(r.get<std::uint32_t>());
  const auto nblocks = r.get<std::uint32_t>();
  ckpt.blocks.reserve(nblocks);
  for (std::uint32_t i = 0; i < nblocks; ++i) {
    TensorBlock b;
    b.name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      b.shape.push_back(r.get<std::uint64_t>());
      count *= b.shape.back();
    }
    if (count > bytes.size()) throw IoError("corrupt checkpoint block " + b.name);
    b.values.resize(count);
    r.get_floats(b.values.data(), count);
    ckpt.blocks.push_back(std::move(b));
  }
  if (!r.done()) throw IoError("trailing bytes after checkpoint");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  write_file_atomic(path, [&](std::ostream& out) { out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())); }, true);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

template <typename T>
void store_params(Checkpoint& ckpt, const ParamSet<T>& params, const std::string& prefix) {
  for (const auto& p : params) {
    TensorBlock b;
    b.name = prefix + p.name;
    b.shape.assign(p.shape.begin(), p.shape.end());
    b.values.resize(p.numel());
    for (std::size_t i = 0; i < p.numel(); ++i) b.values[i] = static_cast<float>(p.value.data()[i]);
    ckpt.blocks.push_back(std::move(b));
  }
}

template <typename T>
void load_params(const Checkpoint& ckpt, ParamSet<T>& params, const std::string& prefix) {
  for (auto& p : params) {
    const TensorBlock& b = ckpt.block(prefix + p.name);
    if (!std::equal(b.shape.begin(), b.shape.end(), p.shape.begin(), p.shape.end()))
      throw IoError("shape mismatch for checkpoint block " + b.name);
    for (std::size_t i = 0; i < p.numel(); ++i) p.value.data()[i] = static_cast<T>(b.values[i]);
  }
}

template void store_params<float>(Checkpoint&, const ParamSet<float>&, const std::string&);
template void store_params<double>(Checkpoint&, const ParamSet<double>&, const std::string&);
template void load_params<float>(const Checkpoint&, ParamSet<float>&, const std::string&);
template void load_params<double>(const Checkpoint&, ParamSet<double>&, const std::string&);

}  // namespace lrm::nn
