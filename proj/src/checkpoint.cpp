#include "wmf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace wmf {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

std::size_t element_size(EntryType t) {
  switch (t) {
    case EntryType::F32: return 4;
    case EntryType::F64: return 8;
    case EntryType::Bytes: return 1;
    case EntryType::I64: return 8;
  }
  fail(ErrorKind::Format, "unknown checkpoint dtype");
}

std::string shape_text(const std::vector<std::uint32_t>& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? ", " : "") + std::to_string(dims[i]);
  return s + ")";
}

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& d) : data_(d) {}
  template <class T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    require(n <= data_.size() - pos_, ErrorKind::Format, "checkpoint is truncated");
    const std::uint8_t* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  const std::vector<std::uint8_t>& data_;
  std::size_t pos_ = 0;
};

}  // namespace

void CheckpointFile::add(CheckpointEntry e) {
  require(!e.name.empty() && e.name.size() < 65536, ErrorKind::Format, "invalid checkpoint entry name");
  require(!contains(e.name), ErrorKind::Format, "duplicate checkpoint entry " + e.name);
  require(e.dims.size() < 256, ErrorKind::Format, "rank too large for " + e.name);
  entries_.push_back(std::move(e));
}

void CheckpointFile::put_tensor(const std::string& name, const Tensor& t) {
  CheckpointEntry e;
  e.name = name;
  e.type = t.dtype() == DType::F32 ? EntryType::F32 : EntryType::F64;
  for (std::int64_t d : t.shape()) e.dims.push_back(static_cast<std::uint32_t>(d));
  dispatch(t.dtype(), [&]<class T>() {
    auto v = t.data<T>();
    e.raw.resize(v.size_bytes());
    if (!v.empty()) std::memcpy(e.raw.data(), v.data(), v.size_bytes());
  });
  add(std::move(e));
}

void CheckpointFile::put_bytes(const std::string& name, const std::string& bytes) {
  CheckpointEntry e;
  e.name = name;
  e.type = EntryType::Bytes;
  e.dims = {static_cast<std::uint32_t>(bytes.size())};
  e.raw.assign(bytes.begin(), bytes.end());
  add(std::move(e));
}

void CheckpointFile::put_i64(const std::string& name, const std::vector<std::int64_t>& values) {
  CheckpointEntry e;
  e.name = name;
  e.type = EntryType::I64;
  e.dims = {static_cast<std::uint32_t>(values.size())};
  e.raw.resize(values.size() * 8);
  if (!values.empty()) std::memcpy(e.raw.data(), values.data(), e.raw.size());
  add(std::move(e));
}

bool CheckpointFile::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const CheckpointEntry& CheckpointFile::entry(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  fail(ErrorKind::Format, "checkpoint has no entry " + name);
}

void CheckpointFile::load_into(const std::string& name, Tensor& target) const {
  const CheckpointEntry& e = entry(name);
  std::vector<std::uint32_t> want;
  for (std::int64_t d : target.shape()) want.push_back(static_cast<std::uint32_t>(d));
  require(e.dims == want, ErrorKind::Shape,
          "shape mismatch for tensor " + name + ": checkpoint " + shape_text(e.dims) + ", model " + shape_text(want));
  const EntryType type = target.dtype() == DType::F32 ? EntryType::F32 : EntryType::F64;
  require(e.type == type, ErrorKind::Format, "dtype mismatch for tensor " + name);
  dispatch(target.dtype(), [&]<class T>() {
    auto v = target.data<T>();
    if (!v.empty()) std::memcpy(v.data(), e.raw.data(), e.raw.size());
  });
}

Tensor CheckpointFile::tensor(const std::string& name) const {
  const CheckpointEntry& e = entry(name);
  require(e.type == EntryType::F32 || e.type == EntryType::F64, ErrorKind::Format, name + " is not a tensor");
  Shape shape(e.dims.begin(), e.dims.end());
  Tensor t = Tensor::zeros(shape, e.type == EntryType::F32 ? DType::F32 : DType::F64);
  load_into(name, t);
  return t;
}

std::string CheckpointFile::bytes(const std::string& name) const {
  const CheckpointEntry& e = entry(name);
  require(e.type == EntryType::Bytes, ErrorKind::Format, name + " is not a byte entry");
  return {e.raw.begin(), e.raw.end()};
}

std::vector<std::int64_t> CheckpointFile::i64(const std::string& name) const {
  const CheckpointEntry& e = entry(name);
  require(e.type == EntryType::I64, ErrorKind::Format, name + " is not an integer entry");
  std::vector<std::int64_t> out(e.raw.size() / 8);
  if (!out.empty()) std::memcpy(out.data(), e.raw.data(), e.raw.size());
  return out;
}

std::vector<std::uint8_t> CheckpointFile::serialize() const {
  std::vector<std::uint8_t> out{'W', 'M', 'F', 'K'};
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.type));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
    for (std::uint32_t d : e.dims) put<std::uint32_t>(out, d);
    out.insert(out.end(), e.raw.begin(), e.raw.end());
  }
  return out;
}

CheckpointFile CheckpointFile::deserialize(const std::vector<std::uint8_t>& data) {
  Reader r(data);
  const std::uint8_t* magic = r.take(4);
  require(std::memcmp(magic, "WMFK", 4) == 0, ErrorKind::Format, "not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  require(version == kCheckpointVersion, ErrorKind::Format,
          "unsupported checkpoint version " + std::to_string(version) + " (expected " +
              std::to_string(kCheckpointVersion) + ")");
  const auto count = r.get<std::uint32_t>();
  CheckpointFile file;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = r.get<std::uint16_t>();
    const std::uint8_t* name = r.take(len);
    e.name.assign(name, name + len);
    const auto type = r.get<std::uint8_t>();
    require(type <= 3, ErrorKind::Format, "unknown dtype code " + std::to_string(type) + " for " + e.name);
    e.type = static_cast<EntryType>(type);
    const auto rank = r.get<std::uint8_t>();
    std::uint64_t n = 1;
    for (int d = 0; d < rank; ++d) {
      e.dims.push_back(r.get<std::uint32_t>());
      n *= e.dims.back();
    }
    const std::uint64_t size = n * element_size(e.type);
    require(size <= data.size(), ErrorKind::Format, "checkpoint is truncated");
    const std::uint8_t* raw = r.take(static_cast<std::size_t>(size));
    e.raw.assign(raw, raw + size);
    file.add(std::move(e));
  }
  require(r.done(), ErrorKind::Format, "trailing bytes after checkpoint entries");
  return file;
}

void CheckpointFile::save(const std::filesystem::path& path) const {
  const auto data = serialize();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::Io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    require(out.good(), ErrorKind::Io, "failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointFile CheckpointFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot read checkpoint " + path.string());
  const std::vector<std::uint8_t> data{std::istreambuf_iterator<char>(in), {}};
  return deserialize(data);
}

}  // namespace wmf
