#include "zipmo/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "zipmo/errors.hpp"
#include "zipmo/hash.hpp"

namespace zipmo::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'Z', 'I', 'P', 'M', 'O', 'C', 'K', 'P'};

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& s, std::size_t limit) : s_(s), limit_(limit) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, s_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (n > limit_ || pos_ > limit_ - n) throw ParseError(std::string("checkpoint truncated while reading ") + what);
  }
  const std::string& s_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

}  // namespace

const CheckpointArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const CheckpointArray& Checkpoint::at(const std::string& name) const {
  if (const auto* a = find(name)) return *a;
  throw ParseError("checkpoint has no array '" + name + "'");
}

void Checkpoint::put(CheckpointArray a) {
  for (auto& existing : arrays)
    if (existing.name == a.name) {
      existing = std::move(a);
      return;
    }
  arrays.push_back(std::move(a));
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, 0);
  put<std::uint64_t>(out, ck.config_json.size());
  out += ck.config_json;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.arrays.size()));
  for (const auto& a : ck.arrays) {
    std::uint64_t n = 1;
    for (auto d : a.shape) n *= d;
    if (n != a.data.size()) throw ShapeError("checkpoint array '" + a.name + "' has inconsistent shape");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put<std::uint64_t>(out, d);
    const auto* raw = reinterpret_cast<const char*>(a.data.data());
    out.append(raw, a.data.size() * sizeof(double));
  }
  put<std::uint64_t>(out, fnv1a64(out));
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw ParseError("not a checkpoint file (bad magic)");
  if (bytes.size() < sizeof(kMagic) + 16 + 8) throw ParseError("checkpoint truncated");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);

  Reader r(bytes, body);
  r.bytes(sizeof(kMagic), "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  r.get<std::uint32_t>("reserved");
  if (stored != fnv1a64(std::string_view(bytes.data(), body)))
    throw ParseError("checkpoint checksum mismatch (file corrupted or truncated)");

  Checkpoint ck;
  const auto clen = r.get<std::uint64_t>("config length");
  ck.config_json = r.bytes(static_cast<std::size_t>(clen), "config");
  const auto n = r.get<std::uint32_t>("array count");
  for (std::uint32_t i = 0; i < n; ++i) {
    CheckpointArray a;
    a.name = r.bytes(r.get<std::uint32_t>("name length"), "array name");
    const auto nd = r.get<std::uint32_t>("ndim");
    if (nd > 8) throw ParseError("checkpoint array '" + a.name + "' has implausible rank");
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < nd; ++d) {
      a.shape.push_back(r.get<std::uint64_t>("dims"));
      count *= a.shape.back();
    }
    if (count > (body - r.pos()) / sizeof(double)) throw ParseError("checkpoint array '" + a.name + "' truncated");
    const std::string raw = r.bytes(count * sizeof(double), "array data");
    a.data.resize(count);
    std::memcpy(a.data.data(), raw.data(), raw.size());
    ck.arrays.push_back(std::move(a));
  }
  if (r.pos() != body) throw ParseError("checkpoint has trailing bytes");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ck);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFileError("checkpoint not found: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return parse_checkpoint(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

template <typename T>
void export_params(const ParamStore<T>& ps, Checkpoint& ck, const std::string& prefix) {
  for (const auto& p : ps.all()) {
    CheckpointArray a;
    a.name = prefix + p.name;
    a.shape = {static_cast<std::uint64_t>(p.value.rows()), static_cast<std::uint64_t>(p.value.cols())};
    a.data.resize(static_cast<std::size_t>(p.value.size()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) a.data[static_cast<std::size_t>(i)] = p.value.data()[i];
    ck.put(std::move(a));
  }
}

template <typename T>
void import_params(const Checkpoint& ck, ParamStore<T>& ps, const std::string& prefix) {
  for (auto& p : ps.all()) {
    const auto& a = ck.at(prefix + p.name);
    if (a.shape.size() != 2 || a.shape[0] != static_cast<std::uint64_t>(p.value.rows()) ||
        a.shape[1] != static_cast<std::uint64_t>(p.value.cols()))
      throw ParseError("checkpoint array '" + a.name + "' does not match the model shape");
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(a.data[static_cast<std::size_t>(i)]);
  }
}

template void export_params<float>(const ParamStore<float>&, Checkpoint&, const std::string&);
template void export_params<double>(const ParamStore<double>&, Checkpoint&, const std::string&);
template void import_params<float>(const Checkpoint&, ParamStore<float>&, const std::string&);
template void import_params<double>(const Checkpoint&, ParamStore<double>&, const std::string&);

}  // namespace zipmo::nn
