#include "sketchkp/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "sketchkp/errors.hpp"

namespace fs = std::filesystem;

namespace sketchkp {

namespace {

constexpr char kMagic[4] = {'S', 'K', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_i64(std::ostream& out, std::int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void put_tensor(std::ostream& out, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) {
    std::int32_t d = t.dim(i);
    out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  }
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw IoError("truncated checkpoint: " + path);
  return v;
}
std::uint64_t get_u64(std::istream& in, const std::string& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw IoError("truncated checkpoint: " + path);
  return v;
}
std::int64_t get_i64(std::istream& in, const std::string& path) {
  std::int64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw IoError("truncated checkpoint: " + path);
  return v;
}
std::string get_string(std::istream& in, const std::string& path) {
  std::uint64_t len = get_u64(in, path);
  if (len > (1ull << 32)) throw ParseError("corrupt checkpoint (string length): " + path);
  std::string s(len, '\0');
  if (len && !in.read(s.data(), static_cast<std::streamsize>(len)))
    throw IoError("truncated checkpoint: " + path);
  return s;
}
Tensor get_tensor(std::istream& in, const std::string& path) {
  std::uint32_t nd = get_u32(in, path);
  if (nd > 8) throw ParseError("corrupt checkpoint (tensor rank): " + path);
  std::vector<int> shape(nd);
  for (auto& d : shape) {
    std::int32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
      throw IoError("truncated checkpoint: " + path);
    if (v <= 0) throw ParseError("corrupt checkpoint (tensor dim): " + path);
    d = v;
  }
  Tensor t(shape);
  if (t.size() &&
      !in.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(double))))
    throw IoError("truncated checkpoint: " + path);
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + tmp.string());
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, ck.iteration);
    put_string(out, ck.config_text);
    put_u64(out, ck.tensors.size());
    for (const auto& [name, tensor] : ck.tensors) {
      put_string(out, name);
      put_tensor(out, tensor);
    }
    out.put(ck.has_optimizer ? 1 : 0);
    if (ck.has_optimizer) {
      if (ck.adam_m.size() != ck.adam_v.size())
        throw ValidationError("checkpoint optimizer state is misaligned");
      put_i64(out, ck.adam_t);
      put_u64(out, ck.adam_m.size());
      for (const Tensor& t : ck.adam_m) put_tensor(out, t);
      for (const Tensor& t : ck.adam_v) put_tensor(out, t);
    }
    if (!out) throw IoError("write failure on checkpoint: " + tmp.string());
  }
  fs::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw ParseError("not a checkpoint file (bad magic): " + path);
  std::uint32_t version = get_u32(in, path);
  if (version != kVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version) + ": " + path);

  Checkpoint ck;
  ck.iteration = get_u64(in, path);
  ck.config_text = get_string(in, path);
  std::uint64_t n = get_u64(in, path);
  if (n > (1ull << 24)) throw ParseError("corrupt checkpoint (tensor count): " + path);
  ck.tensors.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = get_string(in, path);
    ck.tensors.emplace_back(std::move(name), get_tensor(in, path));
  }
  int flag = in.get();
  if (flag == std::istream::traits_type::eof())
    throw IoError("truncated checkpoint: " + path);
  ck.has_optimizer = flag != 0;
  if (ck.has_optimizer) {
    ck.adam_t = get_i64(in, path);
    std::uint64_t np = get_u64(in, path);
    if (np > (1ull << 24)) throw ParseError("corrupt checkpoint (optimizer count): " + path);
    ck.adam_m.reserve(np);
    ck.adam_v.reserve(np);
    for (std::uint64_t i = 0; i < np; ++i) ck.adam_m.push_back(get_tensor(in, path));
    for (std::uint64_t i = 0; i < np; ++i) ck.adam_v.push_back(get_tensor(in, path));
  }
  return ck;
}

}  // namespace sketchkp
