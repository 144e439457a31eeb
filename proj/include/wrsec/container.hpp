#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wrsec/core.hpp"
#include "wrsec/scheme.hpp"

namespace wrsec {

// File layout: "WRSCONT1", u64 little-endian header length, UTF-8 JSON header,
// then the tensor payloads (little-endian) in declared order. Offsets in the
// header are relative to the first payload byte.

inline constexpr char kContainerMagic[8] = {'W', 'R', 'S', 'C', 'O', 'N', 'T', '1'};
inline constexpr int kContainerFormatVersion = 1;

enum class DType { kF64, kF32, kF16 };

std::string to_string(DType d);
DType parse_dtype(const std::string& s);  // throws ContainerError(kUnknownDtype)
std::size_t dtype_size(DType d);
DType dtype_for(Precision p);

enum class ContainerErrc {
  kIo = 1,
  kBadMagic,
  kTruncated,
  kBadHeader,
  kUnknownDtype,
  kOverlap,
};

std::string to_string(ContainerErrc e);

struct ContainerError : IoError {
  ContainerError(ContainerErrc code, const std::string& what)
      : IoError(to_string(code) + ": " + what), code(code) {}
  ContainerErrc code;
};

struct TensorInfo {
  std::string name;
  DType dtype = DType::kF64;
  std::vector<std::uint64_t> shape;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  std::uint64_t element_count() const;
  bool operator==(const TensorInfo&) const = default;
};

struct ContainerHeader {
  int format_version = kContainerFormatVersion;
  std::vector<TensorInfo> tensors;
  nlohmann::json metadata = nlohmann::json::object();

  bool operator==(const ContainerHeader&) const = default;
};

std::string serialize_header(const ContainerHeader& h);
/// Validates schema, dtypes and offsets against payload_size.
ContainerHeader parse_header(std::string_view text, std::uint64_t payload_size);

/// One named tensor. Values are held as doubles; writing encodes them in
/// dtype (round to nearest even for f32 and f16).
struct TensorEntry {
  std::string name;
  DType dtype = DType::kF64;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;

  bool operator==(const TensorEntry&) const = default;
};

struct Container {
  std::vector<TensorEntry> tensors;
  nlohmann::json metadata = nlohmann::json::object();

  const TensorEntry& at(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const Container& c);
Container decode_container(std::span<const std::uint8_t> bytes);

void write_container(const Container& c, const std::string& path);
Container read_container(const std::string& path);

Container to_container(const MlpWeights& w);
MlpWeights mlp_from_container(const Container& c);
Container to_container(const TaylorPackage& p);
TaylorPackage package_from_container(const Container& c);

void save_model(const MlpWeights& w, const std::string& path);
MlpWeights load_model(const std::string& path);
void save_package(const TaylorPackage& p, const std::string& path);
TaylorPackage load_package(const std::string& path);

}  // namespace wrsec
