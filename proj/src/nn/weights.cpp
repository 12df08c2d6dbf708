#include "depthfake/nn/weights.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "depthfake/errors.hpp"

namespace fs = std::filesystem;

namespace depthfake::nn {
namespace {

static_assert(std::endian::native == std::endian::little,
              "weights I/O assumes a little-endian host");

constexpr char kMagic[8] = {'D', 'F', 'W', 'E', 'I', 'G', 'H', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename V>
void put(std::string& out, V v) {
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  out.append(buf, sizeof(V));
}

class Reader {
 public:
  Reader(std::string bytes, fs::path file) : bytes_(std::move(bytes)), file_(std::move(file)) {}

  template <typename V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(std::vector<float>& out, std::size_t n) {
    need(n * sizeof(float));
    out.resize(n);
    std::memcpy(out.data(), bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw Error(fmt::format("weights file '{}' is truncated", file_.string()));
    }
  }
  std::string bytes_;
  fs::path file_;
  std::size_t pos_ = 0;
};

bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) {
    if (name.starts_with(p)) return true;
  }
  return false;
}

}  // namespace

void atomic_write(const fs::path& file, const std::string& bytes) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  fs::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", tmp.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(fmt::format("short write to '{}'", tmp.string()));
  }
  fs::rename(tmp, file);
}

void write_weights(const fs::path& file, const std::vector<NamedTensor>& tensors) {
  std::string out(kMagic, sizeof(kMagic));
  put(out, kVersion);
  put(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put(out, static_cast<std::uint32_t>(t.dims.size()));
    std::int64_t count = 1;
    for (auto d : t.dims) {
      put(out, d);
      count *= d;
    }
    if (count != static_cast<std::int64_t>(t.values.size())) {
      throw ShapeError(fmt::format("tensor '{}' has {} values for {} elements", t.name,
                                   t.values.size(), count));
    }
    out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(float));
  }
  atomic_write(file, out);
}

std::vector<NamedTensor> read_weights(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw MissingResource(fmt::format("cannot open weights file '{}'", file.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str(), file);
  if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw Error(fmt::format("'{}' is not a depthfake weights file", file.string()));
  }
  if (const auto v = r.get<std::uint32_t>(); v != kVersion) {
    throw Error(fmt::format("'{}': unsupported weights version {}", file.string(), v));
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedTensor> tensors(count);
  for (auto& t : tensors) {
    t.name = r.str(r.get<std::uint32_t>());
    const auto ndim = r.get<std::uint32_t>();
    std::int64_t n = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      t.dims.push_back(r.get<std::int64_t>());
      n *= t.dims.back();
    }
    r.floats(t.values, static_cast<std::size_t>(n));
  }
  if (!r.done()) throw Error(fmt::format("'{}' has trailing bytes", file.string()));
  return tensors;
}

template <typename T>
std::vector<NamedTensor> export_params(const Graph<T>& graph) {
  std::vector<NamedTensor> out;
  for (const auto* p : graph.params()) {
    NamedTensor t;
    t.name = p->name;
    t.dims.assign(p->dims.begin(), p->dims.end());
    t.values.assign(p->value.begin(), p->value.end());
    out.push_back(std::move(t));
  }
  return out;
}

template <typename T>
void import_params(Graph<T>& graph, const std::vector<NamedTensor>& tensors,
                   const ImportPolicy& policy) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  std::size_t used = 0;
  for (auto* p : graph.params()) {
    const auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      if (has_prefix(p->name, policy.optional_prefixes)) continue;
      throw ShapeError(fmt::format("weights lack parameter '{}'", p->name));
    }
    const auto& t = *it->second;
    if (!std::equal(t.dims.begin(), t.dims.end(), p->dims.begin(), p->dims.end())) {
      throw ShapeError(fmt::format("parameter '{}' has a different shape in the weights file", p->name));
    }
    std::ranges::transform(t.values, p->value.begin(), [](float v) { return static_cast<T>(v); });
    ++used;
  }
  if (!policy.ignore_unknown && used != tensors.size()) {
    for (const auto& t : tensors) {
      if (!graph.find_param(t.name)) {
        throw ShapeError(fmt::format("weights file has unknown tensor '{}'", t.name));
      }
    }
  }
}

template <typename T>
std::string weights_digest(const Graph<T>& graph, const std::vector<std::string>& exclude_prefixes) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  for (const auto* p : graph.params()) {
    if (has_prefix(p->name, exclude_prefixes)) continue;
    EVP_DigestUpdate(ctx, p->name.data(), p->name.size());
    EVP_DigestUpdate(ctx, p->dims.data(), p->dims.size() * sizeof(int));
    EVP_DigestUpdate(ctx, p->value.data(), p->value.size() * sizeof(T));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

template std::vector<NamedTensor> export_params(const Graph<float>&);
template std::vector<NamedTensor> export_params(const Graph<double>&);
template void import_params(Graph<float>&, const std::vector<NamedTensor>&, const ImportPolicy&);
template void import_params(Graph<double>&, const std::vector<NamedTensor>&, const ImportPolicy&);
template std::string weights_digest(const Graph<float>&, const std::vector<std::string>&);
template std::string weights_digest(const Graph<double>&, const std::vector<std::string>&);

}  // namespace depthfake::nn
