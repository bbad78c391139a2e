#include "rsnet/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "rsnet/error.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace rsnet {

namespace {

constexpr char kMagic[4] = {'R', 'S', 'N', 'T'};

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32:
      return 4;
    case DType::F64:
    case DType::I64:
      return 8;
    case DType::U8:
      return 1;
  }
  return 0;
}

class Writer {
 public:
  template <typename U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(U));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& data, std::size_t end, std::string origin)
      : data_(data), end_(end), origin_(std::move(origin)) {}

  template <typename U>
  U get(const char* what) {
    U v;
    need(sizeof(U), what);
    std::memcpy(&v, data_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  void read(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return end_ - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > end_ - pos_) {
      throw DataError(origin_ + ": truncated checkpoint while reading " + what + " at byte " + std::to_string(pos_));
    }
  }
  const std::vector<std::uint8_t>& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string origin_;
};

std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

template <typename T>
constexpr DType dtype_of() {
  return sizeof(T) == 4 ? DType::F32 : DType::F64;
}

template <typename T>
CheckpointRecord tensor_record(const std::string& name, const Tensor<T>& t) {
  const Shape s = t.shape();
  CheckpointRecord r{name, dtype_of<T>(),
                     {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
                      static_cast<std::uint32_t>(s.w)},
                     {}};
  r.bytes.resize(static_cast<std::size_t>(t.numel()) * sizeof(T));
  if (!r.bytes.empty()) std::memcpy(r.bytes.data(), t.ptr(), r.bytes.size());
  return r;
}

Shape record_shape(const CheckpointRecord& r) {
  if (r.dims.size() != 4) return Shape{};
  return Shape{r.dims[0], r.dims[1], r.dims[2], r.dims[3]};
}

template <typename T>
void copy_into(const CheckpointRecord& r, Tensor<T>& dst) {
  if (!(record_shape(r) == dst.shape())) {
    throw DataError("checkpoint record '" + r.name + "' has shape " + record_shape(r).str() + ", expected " +
                    dst.shape().str());
  }
  const std::size_t n = static_cast<std::size_t>(dst.numel());
  if (r.dtype == dtype_of<T>()) {
    if (n) std::memcpy(dst.ptr(), r.bytes.data(), n * sizeof(T));
  } else if (r.dtype == DType::F32 || r.dtype == DType::F64) {
    for (std::size_t i = 0; i < n; ++i) {
      if (r.dtype == DType::F32) {
        float v;
        std::memcpy(&v, r.bytes.data() + 4 * i, 4);
        dst.ptr()[i] = static_cast<T>(v);
      } else {
        double v;
        std::memcpy(&v, r.bytes.data() + 8 * i, 8);
        dst.ptr()[i] = static_cast<T>(v);
      }
    }
  } else {
    throw DataError("checkpoint record '" + r.name + "' is not a float tensor");
  }
}

}  // namespace

std::size_t CheckpointRecord::count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

const CheckpointRecord* CheckpointFile::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file) {
  Writer w;
  w.bytes(kMagic, 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint64_t>(file.digest);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(file.records.size()));
  for (const auto& r : file.records) {
    if (r.bytes.size() != r.count() * dtype_size(r.dtype)) {
      throw Error("checkpoint record '" + r.name + "': payload size does not match its dims");
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name.data(), r.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.dtype));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) w.put<std::uint32_t>(d);
    w.bytes(r.bytes.data(), r.bytes.size());
  }
  w.put<std::uint32_t>(crc32_of(w.out.data(), w.out.size()));
  return std::move(w.out);
}

CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError(origin + ": not a checkpoint (bad magic)");
  }
  if (bytes.size() < 4 + 2 + 8 + 4 + 4) throw DataError(origin + ": truncated checkpoint header");
  const std::size_t body = bytes.size() - 4;
  Reader r(bytes, body, origin);
  char magic[4];
  r.read(magic, 4, "magic");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw DataError(origin + ": unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointFile f;
  f.digest = r.get<std::uint64_t>("config digest");
  const auto n = r.get<std::uint32_t>("record count");
  for (std::uint32_t i = 0; i < n; ++i) {
    CheckpointRecord rec;
    const auto len = r.get<std::uint32_t>("name length");
    rec.name.resize(len);
    r.read(rec.name.data(), len, "record name");
    const auto tag = r.get<std::uint8_t>("dtype");
    if (tag < 1 || tag > 4) throw DataError(origin + ": record '" + rec.name + "' has unknown dtype tag " + std::to_string(tag));
    rec.dtype = static_cast<DType>(tag);
    const auto rank = r.get<std::uint8_t>("rank");
    for (int d = 0; d < rank; ++d) rec.dims.push_back(r.get<std::uint32_t>("dims"));
    // Guard the allocation against corrupted dims; overflow shows up as a huge count too.
    double want = static_cast<double>(dtype_size(rec.dtype));
    for (auto d : rec.dims) want *= d;
    if (want > static_cast<double>(r.remaining())) {
      throw DataError(origin + ": truncated checkpoint while reading values of '" + rec.name + "'");
    }
    rec.bytes.resize(rec.count() * dtype_size(rec.dtype));
    r.read(rec.bytes.data(), rec.bytes.size(), "record values");
    f.records.push_back(std::move(rec));
  }
  if (r.pos() != body) throw DataError(origin + ": " + std::to_string(body - r.pos()) + " unexpected bytes after the last record");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (stored != crc32_of(bytes.data(), body)) throw DataError(origin + ": checksum mismatch (file is corrupted)");
  return f;
}

void write_checkpoint_file(const std::string& path, const CheckpointFile& file) {
  if (path.empty()) throw DataError("checkpoint: empty output path");
  const auto bytes = encode_checkpoint(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("checkpoint: write failed for '" + path + "'");
}

CheckpointFile read_checkpoint_file(const std::string& path) {
  if (path.empty()) throw DataError("checkpoint: empty input path");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

ArchConfig checkpoint_config(const CheckpointFile& file) {
  const CheckpointRecord* meta = file.find("meta.config");
  if (!meta || meta->dtype != DType::U8) throw DataError("checkpoint has no meta.config record");
  const std::string text(meta->bytes.begin(), meta->bytes.end());
  ArchConfig c = ArchConfig::from_kv(KeyValueFile::parse(text, "meta.config"));
  if (c.digest() != file.digest) throw DataError("checkpoint meta.config does not match the header digest");
  return c;
}

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path, const AdamW<T>* optimizer) {
  CheckpointFile f;
  f.digest = model.config().digest();
  const std::string text = model.config().to_text();
  f.records.push_back(CheckpointRecord{"meta.config", DType::U8, {static_cast<std::uint32_t>(text.size())},
                                       std::vector<std::uint8_t>(text.begin(), text.end())});
  for (const auto& p : model.params()) f.records.push_back(tensor_record(p->name, p->value));
  if (optimizer) {
    CheckpointRecord step{"optim.step", DType::I64, {1}, std::vector<std::uint8_t>(8)};
    const std::int64_t s = optimizer->step_count();
    std::memcpy(step.bytes.data(), &s, 8);
    f.records.push_back(std::move(step));
    const AdamW<T>& opt = *optimizer;
    for (std::size_t i = 0; i < opt.parameters().size(); ++i) {
      f.records.push_back(tensor_record("optim.m." + opt.parameters()[i]->name, opt.first_moments()[i]));
      f.records.push_back(tensor_record("optim.v." + opt.parameters()[i]->name, opt.second_moments()[i]));
    }
  }
  write_checkpoint_file(path, f);
}

template <typename T>
void load_into(Model<T>& model, const CheckpointFile& file, AdamW<T>* optimizer) {
  if (file.digest != model.config().digest()) {
    std::set<std::string> stored;
    std::vector<std::string> diff;
    for (const auto& r : file.records) {
      if (r.name.rfind("meta.", 0) == 0 || r.name.rfind("optim.", 0) == 0) continue;
      stored.insert(r.name);
      const Parameter<T>* p = model.params().find(r.name);
      if (!p) {
        diff.push_back(r.name + " (only in checkpoint)");
      } else if (!(record_shape(r) == p->value.shape())) {
        diff.push_back(r.name + " (checkpoint " + record_shape(r).str() + ", model " + p->value.shape().str() + ")");
      }
    }
    for (const auto& p : model.params())
      if (!stored.count(p->name)) diff.push_back(p->name + " (only in model)");
    std::string msg = "checkpoint config digest does not match the model config";
    if (diff.empty()) {
      msg += "; all tensors line up, the difference is in non-tensor settings";
    } else {
      msg += "; differing layers:";
      for (const auto& d : diff) msg += "\n  " + d;
    }
    throw DataError(msg);
  }
  for (auto& p : model.params()) {
    const CheckpointRecord* r = file.find(p->name);
    if (!r) throw DataError("checkpoint is missing tensor '" + p->name + "'");
    copy_into(*r, p->value);
  }
  if (optimizer) {
    const CheckpointRecord* step = file.find("optim.step");
    if (!step) return;
    if (step->dtype != DType::I64 || step->bytes.size() != 8) throw DataError("checkpoint optim.step is malformed");
    std::int64_t s;
    std::memcpy(&s, step->bytes.data(), 8);
    for (std::size_t i = 0; i < optimizer->parameters().size(); ++i) {
      const std::string& name = optimizer->parameters()[i]->name;
      const CheckpointRecord* m = file.find("optim.m." + name);
      const CheckpointRecord* v = file.find("optim.v." + name);
      if (!m || !v) throw DataError("checkpoint optimizer state is missing '" + name + "'");
      copy_into(*m, optimizer->first_moments()[i]);
      copy_into(*v, optimizer->second_moments()[i]);
    }
    optimizer->restore(s);
  }
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  const CheckpointFile f = read_checkpoint_file(path);
  Model<T> m(checkpoint_config(f), 0);
  load_into(m, f);
  return m;
}

template void save_checkpoint(const Model<float>&, const std::string&, const AdamW<float>*);
template void save_checkpoint(const Model<double>&, const std::string&, const AdamW<double>*);
template void load_into(Model<float>&, const CheckpointFile&, AdamW<float>*);
template void load_into(Model<double>&, const CheckpointFile&, AdamW<double>*);
template Model<float> load_checkpoint(const std::string&);
template Model<double> load_checkpoint(const std::string&);

}  // namespace rsnet
