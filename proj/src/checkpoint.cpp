#include "afp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "afp/rng.hpp"

namespace afp {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

template <class U>
void put(std::vector<std::uint8_t>& out, U v) {
  std::uint8_t buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.insert(out.end(), buf, buf + sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  bool done() const { return pos_ == bytes_.size(); }

  template <class U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::vector<std::uint8_t> take(std::uint64_t n) {
    need(n);
    std::vector<std::uint8_t> v(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return v;
  }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) {
      throw CorruptArtifact("checkpoint truncated at byte " + std::to_string(pos_));
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32:
      return 4;
    case DType::f64:
      return 8;
    case DType::i64:
      return 8;
  }
  throw CorruptArtifact("unknown dtype code");
}

template <class T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

template <class T>
CheckpointRecord tensor_record(const num::Parameter<T>& p) {
  CheckpointRecord r;
  r.name = p.name;
  r.dtype = dtype_of<T>();
  for (auto d : p.value.shape()) r.dims.push_back(d);
  r.payload.resize(p.value.size() * sizeof(T));
  std::memcpy(r.payload.data(), p.value.data().data(), r.payload.size());
  return r;
}

template <class T>
ModelParams<T> params_from_records(const std::vector<CheckpointRecord>& recs) {
  ModelParams<T> params;
  const auto& c = recs.front();
  std::int64_t v[6];
  std::memcpy(v, c.payload.data(), sizeof(v));
  params.config = ModelConfig{static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2]),
                              static_cast<int>(v[3]), static_cast<int>(v[4]), static_cast<int>(v[5])};
  try {
    params.config.validate();
  } catch (const ConfigError& e) {
    throw CorruptArtifact(std::string("checkpoint config invalid: ") + e.what());
  }
  ModelParams<T> reference = init_params<T>(params.config, 0);
  if (recs.size() - 1 != reference.tensors.size()) {
    throw CorruptArtifact("checkpoint has " + std::to_string(recs.size() - 1) +
                          " tensors, expected " + std::to_string(reference.tensors.size()));
  }
  for (std::size_t i = 1; i < recs.size(); ++i) {
    const auto& r = recs[i];
    auto& ref = reference.tensors[i - 1];
    num::Shape shape(r.dims.begin(), r.dims.end());
    if (r.name != ref.name || shape != ref.value.shape() || r.dtype != dtype_of<T>()) {
      throw CorruptArtifact("checkpoint record '" + r.name + "' does not match the model layout");
    }
    num::Tensor<T> t(shape);
    std::memcpy(t.data().data(), r.payload.data(), r.payload.size());
    params.tensors.emplace_back(r.name, std::move(t));
  }
  return params;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointRecord>& records) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& r : records) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) put<std::uint64_t>(out, d);
    out.insert(out.end(), r.payload.begin(), r.payload.end());
  }
  return out;
}

std::vector<CheckpointRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CorruptArtifact("not a checkpoint (bad magic)");
  }
  Reader rd(bytes);
  rd.take(4);
  const auto version = rd.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CorruptArtifact("unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<CheckpointRecord> recs;
  while (!rd.done()) {
    CheckpointRecord r;
    const auto n = rd.get<std::uint32_t>();
    auto name = rd.take(n);
    r.name.assign(name.begin(), name.end());
    const auto code = rd.get<std::uint8_t>();
    if (code > 2) throw CorruptArtifact("unknown dtype code " + std::to_string(code));
    r.dtype = static_cast<DType>(code);
    const auto rank = rd.get<std::uint8_t>();
    std::uint64_t count = 1;
    for (int i = 0; i < rank; ++i) {
      r.dims.push_back(rd.get<std::uint64_t>());
      count *= r.dims.back();
    }
    r.payload = rd.take(count * dtype_size(r.dtype));
    recs.push_back(std::move(r));
  }
  if (recs.empty() || recs.front().name != "config" || recs.front().dtype != DType::i64 ||
      recs.front().payload.size() != 6 * sizeof(std::int64_t)) {
    throw CorruptArtifact("checkpoint lacks a valid config record");
  }
  return recs;
}

template <class T>
std::vector<std::uint8_t> serialize_params(const ModelParams<T>& params) {
  std::vector<CheckpointRecord> recs;
  CheckpointRecord c;
  c.name = "config";
  c.dtype = DType::i64;
  c.dims = {6};
  const auto& m = params.config;
  const std::int64_t v[6] = {m.vocab_size, m.d_model, m.n_layers, m.n_heads, m.d_ff, m.max_seq_len};
  c.payload.resize(sizeof(v));
  std::memcpy(c.payload.data(), v, sizeof(v));
  recs.push_back(std::move(c));
  for (const auto& p : params.tensors) recs.push_back(tensor_record(p));
  return encode_checkpoint(recs);
}

AnyParams deserialize_params(const std::vector<std::uint8_t>& bytes) {
  auto recs = decode_checkpoint(bytes);
  if (recs.size() > 1 && recs[1].dtype == DType::f64) return params_from_records<double>(recs);
  return params_from_records<float>(recs);
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params) {
  write_file_bytes(path, serialize_params(params));
}

AnyParams load_checkpoint(const std::filesystem::path& path) {
  return deserialize_params(read_file_bytes(path));
}

template <class T>
ModelParams<T> load_checkpoint_as(const std::filesystem::path& path) {
  return std::visit([](const auto& p) { return p.template cast<T>(); }, load_checkpoint(path));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string digest_hex(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << splitmix64(h ^ bytes.size());
  return os.str();
}

template std::vector<std::uint8_t> serialize_params<float>(const ModelParams<float>&);
template std::vector<std::uint8_t> serialize_params<double>(const ModelParams<double>&);
template void save_checkpoint<float>(const std::filesystem::path&, const ModelParams<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const ModelParams<double>&);
template ModelParams<float> load_checkpoint_as<float>(const std::filesystem::path&);
template ModelParams<double> load_checkpoint_as<double>(const std::filesystem::path&);

}  // namespace afp
