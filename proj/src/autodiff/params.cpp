#include "deformnet/autodiff/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace deformnet::ad {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'N', 'W'};

template <class T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw std::runtime_error("checkpoint: unexpected end of file");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

Tensor ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("parameter '" + name + "' registered twice");
  value.set_requires_grad(true);
  entries_.emplace_back(std::move(name), value);
  return value;
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return true;
  }
  return false;
}

Tensor ParameterSet::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

std::size_t ParameterSet::value_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

void ParameterSet::set_requires_grad(bool flag) {
  for (auto& [name, t] : entries_) t.set_requires_grad(flag);
}

void ParameterSet::load(const std::vector<NamedTensor>& source, bool require_all) {
  for (auto& [name, t] : entries_) {
    const Tensor* found = nullptr;
    for (const auto& [sname, st] : source) {
      if (sname == name) {
        found = &st;
        break;
      }
    }
    if (!found) {
      if (require_all) throw std::runtime_error("checkpoint is missing parameter '" + name + "'");
      continue;
    }
    if (found->shape() != t.shape()) {
      throw ShapeError("parameter '" + name + "' has shape " + shape_to_string(t.shape()) +
                       " but checkpoint holds " + shape_to_string(found->shape()));
    }
    std::copy(found->values().begin(), found->values().end(), t.mutable_values().begin());
  }
}

std::vector<NamedTensor> ParameterSet::snapshot() const {
  std::vector<NamedTensor> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.emplace_back(name, t.detach());
  return out;
}

std::uint64_t ParameterSet::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : entries_) {
    fnv_mix(h, name.data(), name.size());
    for (std::size_t d : t.shape()) {
      const std::uint64_t d64 = d;
      fnv_mix(h, &d64, sizeof d64);
    }
    fnv_mix(h, t.values().data(), t.numel() * sizeof(double));
  }
  return h;
}

Linear Linear::create(ParameterSet& params, const std::string& name, std::size_t in,
                      std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (double& v : w) v = rng.uniform(-limit, limit);
  Linear layer;
  layer.weight = params.add(name + "/weight", Tensor::from({in, out}, std::move(w)));
  layer.bias = params.add(name + "/bias", Tensor::zeros({out}));
  return layer;
}

Adam::Adam(const ParameterSet& params, AdamConfig config)
    : params_(params.entries()), config_(config) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step() {
  std::string missing;
  for (const auto& [name, t] : params_) {
    if (!t.has_grad()) missing += (missing.empty() ? "" : ", ") + name;
  }
  if (!missing.empty()) throw std::runtime_error("adam: parameters without gradient: " + missing);

  double scale = 1.0;
  if (config_.clip_grad_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, t] : params_) {
      for (double g : t.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_grad_norm) scale = config_.clip_grad_norm / norm;
  }

  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor& t = params_[p].second;
    auto values = t.mutable_values();
    const auto grad = t.grad();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i] * scale;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      values[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

std::vector<NamedTensor> Adam::state() const {
  std::vector<NamedTensor> out;
  out.emplace_back("optim/step", Tensor::scalar(static_cast<double>(step_)));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    const Shape& shape = params_[p].second.shape();
    out.emplace_back("optim/m/" + params_[p].first, Tensor::from(shape, m_[p]));
    out.emplace_back("optim/v/" + params_[p].first, Tensor::from(shape, v_[p]));
  }
  return out;
}

void Adam::load_state(const std::vector<NamedTensor>& state) {
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : state) {
      if (n == name) return t;
    }
    throw std::runtime_error("optimizer state is missing '" + name + "'");
  };
  step_ = static_cast<std::uint64_t>(find("optim/step").item());
  for (std::size_t p = 0; p < params_.size(); ++p) {
    const Tensor& m = find("optim/m/" + params_[p].first);
    const Tensor& v = find("optim/v/" + params_[p].first);
    if (m.numel() != m_[p].size() || v.numel() != v_[p].size()) {
      throw ShapeError("optimizer state for '" + params_[p].first + "' has the wrong size");
    }
    m_[p].assign(m.values().begin(), m.values().end());
    v_[p].assign(v.values().begin(), v.values().end());
  }
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "' for writing");
  os.write(kMagic, 4);
  write_le<std::uint32_t>(os, kCheckpointVersion);
  write_le<std::uint64_t>(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) write_le<std::uint64_t>(os, d);
    for (double v : t.values()) write_le<double>(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path.string() + "'");
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: '" + path.string() + "' is not a DFNW file");
  }
  const auto version = read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = read_le<std::uint64_t>(is);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto name_len = read_le<std::uint32_t>(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw std::runtime_error("checkpoint: truncated name");
    const auto rank = read_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = read_le<std::uint64_t>(is);
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = read_le<double>(is);
    out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  return out;
}

std::vector<NamedTensor> with_prefix(const std::vector<NamedTensor>& tensors,
                                     const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (const auto& [name, t] : tensors) {
    if (name.rfind(prefix, 0) == 0) out.emplace_back(name, t);
  }
  return out;
}

}  // namespace deformnet::ad
