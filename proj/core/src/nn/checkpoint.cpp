#include "paln/nn/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <fcntl.h>
#include <unistd.h>

#include "paln/error.hpp"

namespace paln::nn {
namespace {

constexpr char kMagic[4] = {'P', 'A', 'L', 'N'};

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto raw = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
  out.append(raw.data(), raw.size());
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::array<char, sizeof(T)> raw{};
    std::memcpy(raw.data(), bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    return std::bit_cast<T>(raw);
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(std::span<const NamedTensor> tensors) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, tensor] : tensors) {
    put<std::uint32_t>(out, std::uint32_t(name.size()));
    out.append(name);
    put<std::uint32_t>(out, std::uint32_t(tensor.rank()));
    for (auto dim : tensor.shape()) put<std::uint64_t>(out, dim);
    for (double v : tensor.data()) put<double>(out, v);
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4) != std::string_view(kMagic, 4)) throw FormatError("not a PALN checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = in.get<std::uint64_t>();
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name(in.take(name_len));
    const auto rank = in.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = std::size_t(in.get<std::uint64_t>());
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = in.get<double>();
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  if (!in.done()) throw FormatError("trailing bytes after checkpoint payload");
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + tmp.string() + " for writing");
    f.write(contents.data(), std::streamsize(contents.size()));
    f.flush();
    if (!f) throw FormatError("write failed for " + tmp.string());
  }
  if (const int fd = ::open(tmp.c_str(), O_RDONLY | O_CLOEXEC); fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  write_file_atomic(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

std::vector<NamedTensor> to_named(std::span<const Parameter> params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, Tensor(p.value.shape(), p.value.storage())});
  return out;
}

void assign_named(std::span<Parameter> params, std::span<const NamedTensor> tensors) {
  std::unordered_map<std::string_view, const Tensor*> by_name;
  for (const auto& t : tensors) by_name.emplace(t.name, &t.tensor);
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing tensor '" + p.name + "'");
    if (it->second->shape() != p.value.shape()) {
      throw FormatError("tensor '" + p.name + "' has shape " + shape_string(it->second->shape()) + ", expected " +
                        shape_string(p.value.shape()));
    }
    std::copy(it->second->data().begin(), it->second->data().end(), p.value.data().begin());
  }
}

}  // namespace paln::nn
