#include "wrsec/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace wrsec {

namespace {

using json = nlohmann::json;

[[noreturn]] void fail(ContainerErrc code, const std::string& what) { throw ContainerError(code, what); }

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int k = 0; k < bytes; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int k = 0; k < bytes; ++k) v |= static_cast<std::uint64_t>(p[k]) << (8 * k);
  return v;
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b, const char* what) {
  std::uint64_t r;
  if (__builtin_mul_overflow(a, b, &r)) fail(ContainerErrc::kBadHeader, std::string(what) + " overflows");
  return r;
}

std::uint64_t count_of(const std::vector<std::uint64_t>& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) n = checked_mul(n, d, "element count");
  return n;
}

void encode_value(std::vector<std::uint8_t>& out, DType d, double v) {
  switch (d) {
    case DType::kF64:
      put_le(out, std::bit_cast<std::uint64_t>(v), 8);
      break;
    case DType::kF32:
      put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
      break;
    case DType::kF16:
      put_le(out, to_half_bits(v), 2);
      break;
  }
}

double decode_value(const std::uint8_t* p, DType d) {
  switch (d) {
    case DType::kF64:
      return std::bit_cast<double>(get_le(p, 8));
    case DType::kF32:
      return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(get_le(p, 4))));
    case DType::kF16:
      return from_half_bits(static_cast<std::uint16_t>(get_le(p, 2)));
  }
  return 0.0;
}

const json& member(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) fail(ContainerErrc::kBadHeader, std::string("missing field '") + key + "'");
  return *it;
}

std::uint64_t as_u64(const json& j, const char* what) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
    fail(ContainerErrc::kBadHeader, std::string(what) + " must be a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

TensorEntry entry(std::string name, DType dtype, std::vector<std::uint64_t> shape, const double* data,
                  std::size_t n) {
  return {std::move(name), dtype, std::move(shape), std::vector<double>(data, data + n)};
}

Mat64 matrix_from(const TensorEntry& e, std::size_t rank) {
  if (e.shape.size() != rank) fail(ContainerErrc::kBadHeader, "tensor '" + e.name + "' has wrong rank");
  const auto rows = static_cast<Index>(e.shape[0]);
  const auto cols = static_cast<Index>(rank == 2 ? e.shape[1] : e.shape[1] * e.shape[2]);
  return Eigen::Map<const Mat64>(e.values.data(), rows, cols);
}

Vec64 vector_from(const TensorEntry& e) {
  if (e.shape.size() != 1) fail(ContainerErrc::kBadHeader, "tensor '" + e.name + "' must be rank 1");
  return Eigen::Map<const Vec64>(e.values.data(), static_cast<Index>(e.values.size()));
}

bool holds(const json& metadata, const char* type) {
  const auto it = metadata.find("type");
  return it != metadata.end() && it->is_string() && it->get<std::string>() == type;
}

std::vector<std::uint64_t> dims(Index a, Index b) { return {std::uint64_t(a), std::uint64_t(b)}; }

}  // namespace

std::string to_string(DType d) {
  switch (d) {
    case DType::kF64:
      return "f64";
    case DType::kF32:
      return "f32";
    case DType::kF16:
      return "f16";
  }
  return "?";
}

DType parse_dtype(const std::string& s) {
  if (s == "f64") return DType::kF64;
  if (s == "f32") return DType::kF32;
  if (s == "f16") return DType::kF16;
  fail(ContainerErrc::kUnknownDtype, "unknown dtype '" + s + "'");
}

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kF64:
      return 8;
    case DType::kF32:
      return 4;
    case DType::kF16:
      return 2;
  }
  return 0;
}

DType dtype_for(Precision p) {
  switch (p) {
    case Precision::kF64:
      return DType::kF64;
    case Precision::kF32:
      return DType::kF32;
    case Precision::kF16:
      return DType::kF16;
  }
  return DType::kF64;
}

std::string to_string(ContainerErrc e) {
  switch (e) {
    case ContainerErrc::kIo:
      return "io error";
    case ContainerErrc::kBadMagic:
      return "bad magic";
    case ContainerErrc::kTruncated:
      return "truncated";
    case ContainerErrc::kBadHeader:
      return "bad header";
    case ContainerErrc::kUnknownDtype:
      return "unknown dtype";
    case ContainerErrc::kOverlap:
      return "overlapping tensors";
  }
  return "container error";
}

std::uint64_t TensorInfo::element_count() const { return count_of(shape); }

std::string serialize_header(const ContainerHeader& h) {
  json j;
  j["format_version"] = h.format_version;
  json tensors = json::array();
  for (const auto& t : h.tensors) {
    tensors.push_back(
        {{"name", t.name}, {"dtype", to_string(t.dtype)}, {"shape", t.shape}, {"offset", t.offset}, {"length", t.length}});
  }
  j["tensors"] = std::move(tensors);
  j["metadata"] = h.metadata;
  try {
    return j.dump();
  } catch (const json::exception& e) {
    fail(ContainerErrc::kBadHeader, e.what());
  }
}

ContainerHeader parse_header(std::string_view text, std::uint64_t payload_size) {
  const json j = json::parse(text.begin(), text.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ContainerErrc::kBadHeader, "header is not a JSON object");
  ContainerHeader h;
  const json& version = member(j, "format_version");
  if (!version.is_number_integer() || version.get<std::int64_t>() != kContainerFormatVersion) {
    fail(ContainerErrc::kBadHeader, "unsupported format_version");
  }
  const json& meta = member(j, "metadata");
  if (!meta.is_object()) fail(ContainerErrc::kBadHeader, "metadata must be an object");
  h.metadata = meta;
  const json& tensors = member(j, "tensors");
  if (!tensors.is_array()) fail(ContainerErrc::kBadHeader, "tensors must be an array");

  std::set<std::string> names;
  std::uint64_t end = 0;
  for (const json& t : tensors) {
    if (!t.is_object()) fail(ContainerErrc::kBadHeader, "tensor entry must be an object");
    TensorInfo info;
    const json& name = member(t, "name");
    const json& dtype = member(t, "dtype");
    const json& shape = member(t, "shape");
    if (!name.is_string() || !dtype.is_string() || !shape.is_array()) {
      fail(ContainerErrc::kBadHeader, "tensor entry has mistyped fields");
    }
    info.name = name.get<std::string>();
    if (!names.insert(info.name).second) fail(ContainerErrc::kBadHeader, "duplicate tensor '" + info.name + "'");
    info.dtype = parse_dtype(dtype.get<std::string>());
    for (const json& d : shape) info.shape.push_back(as_u64(d, "shape entry"));
    info.offset = as_u64(member(t, "offset"), "offset");
    info.length = as_u64(member(t, "length"), "length");
    if (checked_mul(info.element_count(), dtype_size(info.dtype), "byte length") != info.length) {
      fail(ContainerErrc::kBadHeader, "tensor '" + info.name + "' length does not match dtype and shape");
    }
    if (info.offset < end) fail(ContainerErrc::kOverlap, "tensor '" + info.name + "' overlaps its predecessor");
    if (info.length > payload_size || info.offset > payload_size - info.length) {
      fail(ContainerErrc::kTruncated, "payload of '" + info.name + "' extends past end of file");
    }
    end = info.offset + info.length;
    h.tensors.push_back(std::move(info));
  }
  return h;
}

const TensorEntry& Container::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  fail(ContainerErrc::kBadHeader, "missing tensor '" + name + "'");
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  ContainerHeader h;
  h.metadata = c.metadata;
  std::uint64_t offset = 0;
  for (const auto& t : c.tensors) {
    if (count_of(t.shape) != t.values.size()) {
      throw DimensionError("tensor '" + t.name + "' shape does not match its value count");
    }
    TensorInfo info{t.name, t.dtype, t.shape, offset, t.values.size() * dtype_size(t.dtype)};
    offset += info.length;
    h.tensors.push_back(std::move(info));
  }
  const std::string header = serialize_header(h);
  std::vector<std::uint8_t> out(std::begin(kContainerMagic), std::end(kContainerMagic));
  put_le(out, header.size(), 8);
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + offset);
  for (const auto& t : c.tensors) {
    for (double v : t.values) encode_value(out, t.dtype, v);
  }
  return out;
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) fail(ContainerErrc::kTruncated, "file shorter than the magic");
  if (std::memcmp(bytes.data(), kContainerMagic, 8) != 0) fail(ContainerErrc::kBadMagic, "not a WRSCONT1 file");
  if (bytes.size() < 16) fail(ContainerErrc::kTruncated, "missing header length");
  const std::uint64_t header_len = get_le(bytes.data() + 8, 8);
  if (header_len > bytes.size() - 16) fail(ContainerErrc::kTruncated, "header extends past end of file");
  const std::string_view text(reinterpret_cast<const char*>(bytes.data() + 16), header_len);
  const auto payload = bytes.subspan(16 + header_len);
  const ContainerHeader h = parse_header(text, payload.size());

  Container c;
  c.metadata = h.metadata;
  for (const auto& info : h.tensors) {
    TensorEntry e{info.name, info.dtype, info.shape, {}};
    const std::size_t width = dtype_size(info.dtype);
    e.values.resize(static_cast<std::size_t>(info.element_count()));
    const std::uint8_t* p = payload.data() + info.offset;
    for (std::size_t k = 0; k < e.values.size(); ++k) e.values[k] = decode_value(p + k * width, info.dtype);
    c.tensors.push_back(std::move(e));
  }
  return c;
}

void write_container(const Container& c, const std::string& path) {
  const auto bytes = encode_container(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ContainerErrc::kIo, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ContainerErrc::kIo, "failed writing " + path);
}

Container read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ContainerErrc::kIo, "cannot open " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) fail(ContainerErrc::kIo, "failed reading " + path);
  return decode_container(bytes);
}

Container to_container(const MlpWeights& w) {
  w.validate();
  Container c;
  c.metadata = {{"type", "mlp"}};
  c.tensors.push_back(entry("V", DType::kF64, dims(w.hidden_dim(), w.in_dim()), w.V.data(), w.V.size()));
  c.tensors.push_back(entry("b", DType::kF64, {std::uint64_t(w.b.size())}, w.b.data(), w.b.size()));
  c.tensors.push_back(entry("W", DType::kF64, dims(w.out_dim(), w.hidden_dim()), w.W.data(), w.W.size()));
  c.tensors.push_back(entry("c", DType::kF64, {std::uint64_t(w.c.size())}, w.c.data(), w.c.size()));
  return c;
}

MlpWeights mlp_from_container(const Container& c) {
  if (!holds(c.metadata, "mlp")) fail(ContainerErrc::kBadHeader, "container does not hold an MLP");
  MlpWeights w;
  w.V = matrix_from(c.at("V"), 2);
  w.b = vector_from(c.at("b"));
  w.W = matrix_from(c.at("W"), 2);
  w.c = vector_from(c.at("c"));
  w.validate();
  return w;
}

// theta is stored as an (out, N+1, hidden) tensor in the package's storage dtype.
Container to_container(const TaylorPackage& p) {
  p.validate();
  Container c;
  c.metadata = {{"type", "taylor_package"},
                {"activation", to_string(p.kind)},
                {"order", p.order},
                {"storage", to_string(p.storage)}};
  c.tensors.push_back(entry("V", DType::kF64, dims(p.hidden_dim(), p.in_dim()), p.V.data(), p.V.size()));
  c.tensors.push_back(entry("z0", DType::kF64, {std::uint64_t(p.z0.size())}, p.z0.data(), p.z0.size()));
  c.tensors.push_back(entry("theta", dtype_for(p.storage),
                            {std::uint64_t(p.out_dim()), std::uint64_t(p.order + 1), std::uint64_t(p.hidden_dim())},
                            p.theta.data(), p.theta.size()));
  return c;
}

TaylorPackage package_from_container(const Container& c) {
  const auto& m = c.metadata;
  if (!holds(m, "taylor_package")) fail(ContainerErrc::kBadHeader, "container does not hold a package");
  TaylorPackage p;
  try {
    p.kind = parse_activation(m.at("activation").get<std::string>());
    p.order = m.at("order").get<int>();
    p.storage = parse_precision(m.at("storage").get<std::string>());
  } catch (const std::exception& e) {
    fail(ContainerErrc::kBadHeader, std::string("package metadata: ") + e.what());
  }
  p.V = matrix_from(c.at("V"), 2);
  p.z0 = vector_from(c.at("z0"));
  const TensorEntry& theta = c.at("theta");
  if (theta.shape.size() != 3 || theta.shape[1] != std::uint64_t(p.order) + 1) {
    fail(ContainerErrc::kBadHeader, "theta shape does not match the package order");
  }
  if (theta.dtype != dtype_for(p.storage)) fail(ContainerErrc::kBadHeader, "theta dtype does not match storage");
  p.theta = matrix_from(theta, 3);
  p.validate();
  return p;
}

void save_model(const MlpWeights& w, const std::string& path) { write_container(to_container(w), path); }
MlpWeights load_model(const std::string& path) { return mlp_from_container(read_container(path)); }
void save_package(const TaylorPackage& p, const std::string& path) { write_container(to_container(p), path); }
TaylorPackage load_package(const std::string& path) { return package_from_container(read_container(path)); }

}  // namespace wrsec
