#include "linesight/errors.hpp"
#include "linesight/nn.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace linesight::nn {

namespace {

constexpr char kMagic[4] = {'L', 'S', 'C', 'W'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "weight I/O assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n) {
    need(n, "tensor name");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(std::string("truncated weight file while reading ") + what, pos_);
    }
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(std::span<const NamedTensor> tensors) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.data()) put<double>(out, v);
  }
  return out;
}

std::vector<NamedTensor> decode_weights(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("bad weight file magic (expected LSCW)", 0);
  }
  r.get<std::uint32_t>("magic");
  const std::size_t version_at = r.pos();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) {
    throw FormatError("unsupported weight file version " + std::to_string(version),
                      version_at);
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("name length");
    std::string name = r.get_string(name_len);
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape;
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint64_t>("dimension");
      if (dim != 0 && n > (r.remaining() / 8) / dim) {
        throw FormatError("tensor '" + name + "' larger than the file", r.pos());
      }
      shape.push_back(static_cast<std::size_t>(dim));
      n *= static_cast<std::size_t>(dim);
    }
    r.need(n * 8, "tensor data");
    std::vector<double> data(n);
    for (std::size_t k = 0; k < n; ++k) data[k] = r.get<double>("tensor data");
    const std::size_t at = r.pos();
    try {
      out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    } catch (const ValidationError& e) {
      throw FormatError(e.what(), at);
    }
  }
  if (r.remaining() != 0) {
    throw FormatError(std::to_string(r.remaining()) + " unexpected trailing bytes", r.pos());
  }
  return out;
}

void save_weights(std::span<const NamedTensor> tensors, const std::filesystem::path& path) {
  const auto bytes = encode_weights(tensors);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write weights " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<NamedTensor> load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weights " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_weights(bytes);
}

void append_named(const Network& net, const std::string& prefix,
                  std::vector<NamedTensor>& out) {
  for (const auto& l : net.layers()) {
    out.emplace_back(prefix + l.name + ".kernel", l.weights.kernel);
    out.emplace_back(prefix + l.name + ".bias", l.weights.bias);
  }
}

void assign_named(Network& net, const std::string& prefix,
                  std::span<const NamedTensor> tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  auto take = [&](const std::string& name, Tensor& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("weights missing tensor '" + name + "'");
    if (it->second->shape() != dst.shape()) {
      throw DimensionError("tensor '" + name + "' has shape " +
                           imagecore::shape_to_string(it->second->shape()) + ", expected " +
                           imagecore::shape_to_string(dst.shape()));
    }
    dst = *it->second;
  };
  for (auto& l : net.layers()) {
    take(prefix + l.name + ".kernel", l.weights.kernel);
    take(prefix + l.name + ".bias", l.weights.bias);
  }
}

}  // namespace linesight::nn
