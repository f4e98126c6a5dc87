#include "spcagan/checkpoint.hpp"

#include "spcagan/csv.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace spcagan::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'P', 'C', 'A', 'C', 'K', 'P', 'T'};

template <typename T>
void put_raw(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_str(std::string& out, const std::string& s) {
  put_raw<std::uint64_t>(out, s.size());
  out += s;
}

class Reader {
 public:
  Reader(std::string data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}

  template <typename T>
  T raw() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str() {
    const auto n = raw<std::uint64_t>();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw Error(ErrorKind::Format, source_ + ": truncated checkpoint");
  }
  std::string data_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

const Matrix& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return m;
  }
  throw Error(ErrorKind::Format, "checkpoint has no tensor '" + name + "'");
}

void save(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::string out(kMagic, sizeof kMagic);
  put_raw<std::uint32_t>(out, kVersion);
  put_str(out, ckpt.kind);
  put_str(out, ckpt.config_json);
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, m] : ckpt.tensors) {
    put_str(out, name);
    put_raw<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put_raw<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  csv::write_atomic(path, out);
}

Checkpoint load(const std::filesystem::path& path) {
  Reader r(csv::read_file(path), path.string());
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw Error(ErrorKind::Format, path.string() + ": not a checkpoint");
  const auto version = r.raw<std::uint32_t>();
  if (version != kVersion) {
    throw Error(ErrorKind::Format, path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.kind = r.str();
  c.config_json = r.str();
  const auto n = r.raw<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = r.str();
    const auto rows = r.raw<std::uint64_t>();
    const auto cols = r.raw<std::uint64_t>();
    if (rows > (1u << 28) || cols > (1u << 28)) throw Error(ErrorKind::Format, path.string() + ": implausible tensor shape");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    r.bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
    c.tensors.emplace_back(std::move(name), std::move(m));
  }
  if (!r.done()) throw Error(ErrorKind::Format, path.string() + ": trailing bytes after checkpoint");
  return c;
}

void put(Checkpoint& ckpt, const std::string& prefix, const nn::Sequential& net) {
  const auto names = net.param_names();
  const auto params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) ckpt.tensors.emplace_back(prefix + "." + names[i], params[i]->value);
}

void get(const Checkpoint& ckpt, const std::string& prefix, nn::Sequential& net) {
  const auto names = net.param_names();
  auto params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& m = ckpt.tensor(prefix + "." + names[i]);
    if (m.rows() != params[i]->value.rows() || m.cols() != params[i]->value.cols()) {
      throw Error(ErrorKind::Format, "tensor '" + prefix + "." + names[i] + "' has an unexpected shape");
    }
    params[i]->value = m;
  }
}

}  // namespace spcagan::checkpoint
