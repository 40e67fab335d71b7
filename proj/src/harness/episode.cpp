#include "deformnet/harness/episode.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <openssl/evp.h>

namespace deformnet::harness {

static_assert(std::endian::native == std::endian::little, "DFNE I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::string& what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("DFNE: truncated file while reading " + what);
  return value;
}

std::size_t dtype_size(DType t) { return t == DType::kF32 ? 4 : 8; }

std::vector<std::uint8_t> raw(const void* data, std::size_t size) {
  std::vector<std::uint8_t> out(size);
  if (size) std::memcpy(out.data(), data, size);
  return out;
}

}  // namespace

NamedArray NamedArray::f32(std::string name, std::vector<std::uint64_t> shape, std::span<const float> values) {
  NamedArray a{std::move(name), DType::kF32, std::move(shape), raw(values.data(), values.size_bytes())};
  if (a.numel() != values.size()) throw std::invalid_argument("array '" + a.name + "': shape does not match data");
  return a;
}

NamedArray NamedArray::f64(std::string name, std::vector<std::uint64_t> shape, std::span<const double> values) {
  NamedArray a{std::move(name), DType::kF64, std::move(shape), raw(values.data(), values.size_bytes())};
  if (a.numel() != values.size()) throw std::invalid_argument("array '" + a.name + "': shape does not match data");
  return a;
}

std::uint64_t NamedArray::numel() const {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::vector<float> NamedArray::as_f32() const {
  if (dtype != DType::kF32) throw std::runtime_error("array '" + name + "' is not f32");
  std::vector<float> out(numel());
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::vector<double> NamedArray::as_f64() const {
  if (dtype != DType::kF64) throw std::runtime_error("array '" + name + "' is not f64");
  std::vector<double> out(numel());
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

bool DfneFile::has(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

const NamedArray& DfneFile::get(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw std::runtime_error("DFNE: missing array '" + name + "'");
}

void write_dfne(const std::filesystem::path& path, const DfneFile& file) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write("DFNE", 4);
  put<std::uint32_t>(out, kDfneVersion);
  const std::string meta = file.metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  for (const auto& a : file.arrays) {
    if (a.name.empty()) throw std::invalid_argument("DFNE: array names must be non-empty");
    if (a.bytes.size() != a.numel() * dtype_size(a.dtype)) {
      throw std::invalid_argument("DFNE: array '" + a.name + "' byte length does not match its shape");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.shape.size()));
    for (auto d : a.shape) put<std::uint64_t>(out, d);
    put<std::uint64_t>(out, a.bytes.size());
    out.write(reinterpret_cast<const char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()));
  }
  put<std::uint32_t>(out, 0);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

DfneFile read_dfne(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "DFNE", 4) != 0) throw std::runtime_error(path.string() + ": not a DFNE file");
  const auto version = take<std::uint32_t>(in, "version");
  if (version != kDfneVersion) {
    throw std::runtime_error(path.string() + ": unsupported DFNE version " + std::to_string(version));
  }
  DfneFile file;
  const auto meta_len = take<std::uint64_t>(in, "metadata length");
  std::string meta(meta_len, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw std::runtime_error(path.string() + ": truncated metadata");
  file.metadata = Json::parse(meta);
  for (;;) {
    const auto name_len = take<std::uint32_t>(in, "array name length");
    if (name_len == 0) break;
    NamedArray a;
    a.name.resize(name_len);
    in.read(a.name.data(), name_len);
    const auto tag = take<std::uint8_t>(in, "dtype");
    if (tag != 1 && tag != 2) throw std::runtime_error(path.string() + ": unknown dtype tag in '" + a.name + "'");
    a.dtype = static_cast<DType>(tag);
    const auto rank = take<std::uint8_t>(in, "rank");
    for (int i = 0; i < rank; ++i) a.shape.push_back(take<std::uint64_t>(in, "dims"));
    const auto len = take<std::uint64_t>(in, "byte length");
    if (len != a.numel() * dtype_size(a.dtype)) {
      throw std::runtime_error(path.string() + ": array '" + a.name + "' length does not match its shape");
    }
    a.bytes.resize(len);
    in.read(reinterpret_cast<char*>(a.bytes.data()), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error(path.string() + ": truncated array '" + a.name + "'");
    file.arrays.push_back(std::move(a));
  }
  return file;
}

void Episode::validate() const {
  const std::size_t t = steps();
  auto fail = [](const std::string& msg) { throw std::runtime_error("episode: " + msg); };
  if (frames.size() != t + 1) fail("expected " + std::to_string(t + 1) + " frame sets, got " + std::to_string(frames.size()));
  if (particles.size() != t + 1) fail("expected " + std::to_string(t + 1) + " particle sets, got " + std::to_string(particles.size()));
  if (costs.size() != t + 1) fail("expected " + std::to_string(t + 1) + " costs, got " + std::to_string(costs.size()));
  const int w = metadata.value("width", -1), h = metadata.value("height", -1);
  const std::size_t cams = metadata.value("cameras", std::size_t{0});
  const std::size_t adim = metadata.value("action_dim", std::size_t{0});
  const std::size_t n = metadata.value("particle_count", std::size_t{0});
  if (metadata.value("steps", std::size_t{0}) != t) fail("metadata step count disagrees with the arrays");
  for (const auto& a : actions) {
    if (a.size() != adim) fail("action of length " + std::to_string(a.size()) + ", expected " + std::to_string(adim));
  }
  for (const auto& set : frames) {
    if (set.size() != cams) fail("frame set has " + std::to_string(set.size()) + " cameras, expected " + std::to_string(cams));
    for (const auto& f : set) {
      if (f.width() != w || f.height() != h) fail("frame resolution does not match the declared " + std::to_string(w) + "x" + std::to_string(h));
    }
  }
  for (const auto& p : particles) {
    if (p.size() != n) fail("particle set of size " + std::to_string(p.size()) + ", expected " + std::to_string(n));
  }
}

DfneFile to_dfne(const Episode& e) {
  e.validate();
  DfneFile f;
  f.metadata = e.metadata;
  const std::uint64_t t = e.steps(), c = e.metadata.at("cameras").get<std::uint64_t>();
  const std::uint64_t w = e.metadata.at("width").get<std::uint64_t>(), h = e.metadata.at("height").get<std::uint64_t>();
  const std::uint64_t a = e.metadata.at("action_dim").get<std::uint64_t>();
  const std::uint64_t n = e.metadata.at("particle_count").get<std::uint64_t>();
  std::vector<double> actions;
  for (const auto& x : e.actions) actions.insert(actions.end(), x.begin(), x.end());
  f.arrays.push_back(NamedArray::f64("actions", {t, a}, actions));
  std::vector<float> frames;
  frames.reserve((t + 1) * c * w * h * 4);
  for (const auto& set : e.frames) {
    for (const auto& img : set) frames.insert(frames.end(), img.data().begin(), img.data().end());
  }
  f.arrays.push_back(NamedArray::f32("frames", {t + 1, c, h, w, 4}, frames));
  std::vector<double> parts;
  for (const auto& set : e.particles) {
    for (const auto& p : set) parts.insert(parts.end(), {p.x(), p.y(), p.z()});
  }
  f.arrays.push_back(NamedArray::f64("particles", {t + 1, n, 3}, parts));
  f.arrays.push_back(NamedArray::f64("costs", {t + 1}, e.costs));
  return f;
}

Episode episode_from_dfne(const DfneFile& f) {
  Episode e;
  e.metadata = f.metadata;
  const auto& a = f.get("actions");
  const auto& fr = f.get("frames");
  const auto& pa = f.get("particles");
  const auto& co = f.get("costs");
  if (a.shape.size() != 2 || fr.shape.size() != 5 || pa.shape.size() != 3 || co.shape.size() != 1 ||
      pa.shape[2] != 3 || fr.shape[4] != 4) {
    throw std::runtime_error("episode: arrays have unexpected ranks");
  }
  const auto av = a.as_f64();
  for (std::uint64_t i = 0; i < a.shape[0]; ++i) {
    e.actions.emplace_back(av.begin() + i * a.shape[1], av.begin() + (i + 1) * a.shape[1]);
  }
  const auto fv = fr.as_f32();
  const std::uint64_t h = fr.shape[2], w = fr.shape[3], px = h * w * 4;
  for (std::uint64_t s = 0; s < fr.shape[0]; ++s) {
    std::vector<geom::RgbdImage> set;
    for (std::uint64_t c = 0; c < fr.shape[1]; ++c) {
      geom::RgbdImage img(static_cast<int>(w), static_cast<int>(h));
      const auto begin = fv.begin() + (s * fr.shape[1] + c) * px;
      std::copy(begin, begin + px, img.data().begin());
      set.push_back(std::move(img));
    }
    e.frames.push_back(std::move(set));
  }
  const auto pv = pa.as_f64();
  for (std::uint64_t s = 0; s < pa.shape[0]; ++s) {
    geom::Points set;
    for (std::uint64_t i = 0; i < pa.shape[1]; ++i) {
      const double* p = pv.data() + (s * pa.shape[1] + i) * 3;
      set.emplace_back(p[0], p[1], p[2]);
    }
    e.particles.push_back(std::move(set));
  }
  e.costs = co.as_f64();
  e.validate();
  return e;
}

void write_episode(const std::filesystem::path& path, const Episode& episode) {
  write_dfne(path, to_dfne(episode));
}

Episode read_episode(const std::filesystem::path& path) {
  try {
    return episode_from_dfne(read_dfne(path));
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_particles(const std::filesystem::path& path, const geom::Points& points, const std::string& name) {
  DfneFile f;
  f.metadata = {{"kind", "particles"}, {"name", name}};
  std::vector<double> flat;
  for (const auto& p : points) flat.insert(flat.end(), {p.x(), p.y(), p.z()});
  f.arrays.push_back(NamedArray::f64("particles", {points.size(), 3}, flat));
  write_dfne(path, f);
}

geom::Points read_particles(const std::filesystem::path& path) {
  const auto f = read_dfne(path);
  const auto& a = f.get("particles");
  if (a.shape.size() != 2 || a.shape[1] != 3) throw std::runtime_error(path.string() + ": particles must be [n, 3]");
  const auto v = a.as_f64();
  geom::Points out;
  for (std::uint64_t i = 0; i < a.shape[0]; ++i) out.emplace_back(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, void (*)(EVP_MD_CTX*)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

void write_manifest(const std::filesystem::path& dir, const Manifest& manifest) {
  Json j;
  j["format"] = "DFNE dataset";
  j["version"] = 1;
  j["config"] = manifest.config;
  j["episodes"] = Json::array();
  for (const auto& e : manifest.episodes) {
    j["episodes"].push_back({{"file", e.file}, {"sha256", e.sha256}, {"steps", e.steps},
                             {"goal", e.goal}, {"provenance", e.provenance}});
  }
  std::filesystem::create_directories(dir);
  const auto tmp = dir / (std::string(kManifestName) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, dir / kManifestName);
}

Manifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestName);
  if (!in) throw std::runtime_error("no " + std::string(kManifestName) + " in " + dir.string());
  const Json j = Json::parse(in);
  Manifest m;
  m.config = j.value("config", Json::object());
  for (const auto& e : j.at("episodes")) {
    m.episodes.push_back({e.at("file"), e.at("sha256"), e.at("steps"), e.value("goal", ""),
                          e.value("provenance", "random")});
  }
  return m;
}

void verify_dataset(const std::filesystem::path& dir, const Manifest& manifest) {
  for (const auto& e : manifest.episodes) {
    const auto path = dir / e.file;
    if (sha256_file(path) != e.sha256) throw std::runtime_error(path.string() + ": checksum mismatch");
    const auto episode = read_episode(path);
    if (episode.steps() != e.steps) throw std::runtime_error(path.string() + ": step count differs from the manifest");
  }
}

}  // namespace deformnet::harness
