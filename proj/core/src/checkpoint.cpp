#include "bodynerf/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace bodynerf {

namespace {

constexpr char kMagic[8] = {'B', 'N', 'R', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::string path;

  void need(size_t n) const {
    BN_CHECK(pos + n <= buf.size(), "checkpoint ", path,
             ": truncated at byte ", pos);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++]))
           << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++]))
           << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

Checkpoint Checkpoint::snapshot(std::span<Parameter* const> params,
                                std::map<std::string, std::string> meta) {
  Checkpoint c;
  c.meta = std::move(meta);
  for (const Parameter* p : params) {
    BN_CHECK(!c.params.count(p->name), "checkpoint: duplicate parameter name ",
             p->name);
    Entry e;
    e.shape = p->tensor.shape();
    e.values = p->tensor.values();
    if (!p->m.empty()) {
      e.has_opt = true;
      e.step = p->step;
      e.m = p->m;
      e.v = p->v;
    }
    c.params.emplace(p->name, std::move(e));
  }
  return c;
}

void Checkpoint::restore(std::span<Parameter* const> out) const {
  for (Parameter* p : out) {
    auto it = params.find(p->name);
    BN_CHECK(it != params.end(), "checkpoint: parameter ", p->name,
             " not found");
    const Entry& e = it->second;
    BN_CHECK(e.shape == p->tensor.shape(), "checkpoint: parameter ", p->name,
             " has shape ", shape_str(e.shape), ", model expects ",
             shape_str(p->tensor.shape()));
    p->tensor.mutable_values() = e.values;
    p->tensor.zero_grad();
    if (e.has_opt) {
      p->m = e.m;
      p->v = e.v;
      p->step = e.step;
    } else {
      p->m.clear();
      p->v.clear();
      p->step = 0;
    }
  }
}

std::string Checkpoint::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  BN_CHECK(it != meta.end(), "checkpoint: missing metadata key '", key, "'");
  return it->second;
}

double Checkpoint::meta_double(const std::string& key) const {
  return std::stod(meta_at(key));
}

std::int64_t Checkpoint::meta_int(const std::string& key) const {
  return std::stoll(meta_at(key));
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out;
  out.append(kMagic, 8);
  put_u32(out, kVersion);
  put_u32(out, 0);  // reserved
  put_u64(out, ckpt.params.size());
  for (const auto& [name, e] : ckpt.params) {
    BN_CHECK(shape_numel(e.shape) == static_cast<std::int64_t>(e.values.size()),
             "checkpoint: entry ", name, " shape/value mismatch");
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put_u64(out, static_cast<std::uint64_t>(d));
    for (double v : e.values) put_f64(out, v);
    out.push_back(e.has_opt ? 1 : 0);
    if (e.has_opt) {
      BN_CHECK(e.m.size() == e.values.size() && e.v.size() == e.values.size(),
               "checkpoint: entry ", name, " optimizer state size mismatch");
      put_u64(out, static_cast<std::uint64_t>(e.step));
      for (double v : e.m) put_f64(out, v);
      for (double v : e.v) put_f64(out, v);
    }
  }
  std::string metablob;
  for (const auto& [k, v] : ckpt.meta) {
    BN_CHECK(k.find('\n') == std::string::npos &&
                 k.find('=') == std::string::npos,
             "checkpoint: bad metadata key '", k, "'");
    BN_CHECK(v.find('\n') == std::string::npos,
             "checkpoint: metadata value for '", k, "' contains newline");
    metablob += k;
    metablob += '=';
    metablob += v;
    metablob += '\n';
  }
  put_u64(out, metablob.size());
  out += metablob;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  BN_CHECK(f.good(), "checkpoint: cannot open ", path, " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  BN_CHECK(f.good(), "checkpoint: write to ", path, " failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  BN_CHECK(f.good(), "checkpoint: cannot open ", path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  Reader r{buf, 0, path};

  const std::string magic = r.bytes(8);
  BN_CHECK(std::memcmp(magic.data(), kMagic, 8) == 0, "checkpoint ", path,
           ": bad magic");
  const std::uint32_t version = r.u32();
  BN_CHECK(version == kVersion, "checkpoint ", path, ": unsupported version ",
           version);
  r.u32();  // reserved
  const std::uint64_t count = r.u64();

  Checkpoint c;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    Checkpoint::Entry e;
    const std::uint32_t ndim = r.u32();
    std::int64_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      e.shape.push_back(static_cast<std::int64_t>(r.u64()));
      n *= e.shape.back();
    }
    e.values.resize(static_cast<size_t>(n));
    for (auto& v : e.values) v = r.f64();
    r.need(1);
    e.has_opt = buf[r.pos++] != 0;
    if (e.has_opt) {
      e.step = static_cast<std::int64_t>(r.u64());
      e.m.resize(e.values.size());
      for (auto& v : e.m) v = r.f64();
      e.v.resize(e.values.size());
      for (auto& v : e.v) v = r.f64();
    }
    c.params.emplace(name, std::move(e));
  }
  const std::uint64_t meta_len = r.u64();
  const std::string metablob = r.bytes(meta_len);
  size_t pos = 0;
  while (pos < metablob.size()) {
    const size_t nl = metablob.find('\n', pos);
    BN_CHECK(nl != std::string::npos, "checkpoint ", path,
             ": unterminated metadata line");
    const std::string line = metablob.substr(pos, nl - pos);
    const size_t eq = line.find('=');
    BN_CHECK(eq != std::string::npos, "checkpoint ", path,
             ": malformed metadata line '", line, "'");
    c.meta[line.substr(0, eq)] = line.substr(eq + 1);
    pos = nl + 1;
  }
  return c;
}

}  // namespace bodynerf
