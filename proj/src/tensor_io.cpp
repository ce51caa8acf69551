#include "rlt/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rlt/errors.hpp"

namespace rlt {

namespace {

enum : std::uint8_t { kDtypeF64 = 0, kDtypeBytes = 1 };

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  const std::uint8_t* take(std::size_t n, const char* what) {
    need(n, what);
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > bytes_.size() - pos_) {
      throw FormatError(std::string("container truncated while reading ") + what);
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

void put_name(std::vector<std::uint8_t>& out, const std::string& name) {
  if (name.size() > 0xFFFF) throw FormatError("container: entry name too long: " + name.substr(0, 32));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
}

}  // namespace

const Tensor* Container::find_tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

const Tensor& Container::tensor(const std::string& name) const {
  if (const Tensor* t = find_tensor(name)) return *t;
  throw FormatError("container has no tensor named '" + name + "'");
}

const std::string* Container::find_blob(const std::string& name) const {
  for (const auto& [n, b] : blobs)
    if (n == name) return &b;
  return nullptr;
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  std::vector<std::uint8_t> out(std::begin(kContainerMagic), std::end(kContainerMagic));
  put<std::uint32_t>(out, kContainerVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size() + c.blobs.size()));
  for (const auto& [name, t] : c.tensors) {
    put_name(out, name);
    out.push_back(kDtypeF64);
    if (t.ndim() > 0xFF) throw FormatError("container: too many dims in " + name);
    out.push_back(static_cast<std::uint8_t>(t.ndim()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.values()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  for (const auto& [name, blob] : c.blobs) {
    put_name(out, name);
    out.push_back(kDtypeBytes);
    out.push_back(1);
    put<std::uint64_t>(out, blob.size());
    out.insert(out.end(), blob.begin(), blob.end());
  }
  return out;
}

Container decode_container(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::uint8_t* magic = r.take(4, "magic");
  if (std::memcmp(magic, kContainerMagic, 4) != 0) throw FormatError("container: bad magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kContainerVersion) {
    throw FormatError("container: unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("entry count");
  Container c;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = r.get<std::uint16_t>("name length");
    const auto* name_bytes = r.take(name_len, "name");
    std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
    const auto dtype = r.get<std::uint8_t>("dtype");
    const auto ndim = r.get<std::uint8_t>("ndim");
    Shape shape(ndim);
    for (auto& d : shape) d = r.get<std::uint64_t>("dims");
    if (dtype == kDtypeF64) {
      const std::size_t n = shape_numel(shape);
      if (n > bytes.size() / 8) throw FormatError("container truncated while reading payload of " + name);
      std::vector<double> data(n);
      for (auto& v : data) v = std::bit_cast<double>(r.get<std::uint64_t>("payload"));
      c.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
    } else if (dtype == kDtypeBytes) {
      if (ndim != 1) throw FormatError("container: blob " + name + " must be 1-D");
      const auto* p = r.take(shape[0], "blob payload");
      c.blobs.emplace_back(std::move(name), std::string(reinterpret_cast<const char*>(p), shape[0]));
    } else {
      throw FormatError("container: unknown dtype " + std::to_string(dtype) + " for " + name);
    }
  }
  if (!r.done()) throw FormatError("container: trailing bytes after last entry");
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const auto bytes = encode_container(c);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open " + tmp.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_container(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace rlt
