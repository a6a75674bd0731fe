#include "texparse/archive.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace texparse {
namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f32(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

double get_f32(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return static_cast<double>(std::bit_cast<float>(bits));
}

double get_f64(const std::uint8_t* p) { return std::bit_cast<double>(get_u64(p)); }

std::size_t dtype_size(DType dt) { return dt == DType::F32 ? 4 : 8; }

}  // namespace

std::string dtype_name(DType dt) { return dt == DType::F32 ? "F32" : "F64"; }

DType parse_dtype(const std::string& name) {
  if (name == "F32") return DType::F32;
  if (name == "F64") return DType::F64;
  throw ArchiveError("unsupported dtype tag '" + name + "'");
}

WeightMatrix::WeightMatrix(std::string name, int rows, int cols, double fill)
    : name_(std::move(name)), rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("negative matrix shape for '" + name_ + "'");
  values_.assign(static_cast<std::size_t>(rows) * cols, fill);
}

WeightMatrix::WeightMatrix(std::string name, int rows, int cols, std::vector<double> values)
    : name_(std::move(name)), rows_(rows), cols_(cols), values_(std::move(values)) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("negative matrix shape for '" + name_ + "'");
  if (values_.size() != static_cast<std::size_t>(rows) * cols) {
    throw std::invalid_argument("matrix '" + name_ + "' has " + std::to_string(values_.size()) +
                                " values, shape " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

bool WeightMatrix::all_finite() const {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

WeightMatrix WeightMatrix::renamed(std::string name) const {
  WeightMatrix m = *this;
  m.name_ = std::move(name);
  return m;
}

bool bitwise_equal(const WeightMatrix& a, const WeightMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

void TensorArchive::put(WeightMatrix m, DType dtype) {
  if (m.name().empty() || m.name() == "__metadata__") {
    throw ArchiveError("invalid entry name '" + m.name() + "'");
  }
  if (!m.all_finite()) throw ArchiveError("entry '" + m.name() + "' has non-finite values");
  std::string key = m.name();
  entries_[key] = Entry{std::move(m), dtype};
}

const WeightMatrix& TensorArchive::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ArchiveError("archive has no entry '" + name + "'");
  return it->second.matrix;
}

DType TensorArchive::dtype(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ArchiveError("archive has no entry '" + name + "'");
  return it->second.dtype;
}

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
  nlohmann::json header = nlohmann::json::object();
  header["__metadata__"] = metadata_;
  std::uint64_t offset = 0;
  for (const auto& [name, e] : entries_) {
    const std::uint64_t bytes = e.matrix.size() * dtype_size(e.dtype);
    header[name] = {{"dtype", dtype_name(e.dtype)},
                    {"shape", {e.matrix.rows(), e.matrix.cols()}},
                    {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() + offset);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, e] : entries_) {
    for (double v : e.matrix.values()) {
      if (e.dtype == DType::F32)
        put_f32(out, v);
      else
        put_f64(out, v);
    }
  }
  return out;
}

TensorArchive TensorArchive::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw ArchiveError("archive truncated: missing header length");
  const std::uint64_t hlen = get_u64(bytes.data());
  if (hlen > bytes.size() - 8) throw ArchiveError("archive truncated: header length exceeds file size");
  const std::string text(reinterpret_cast<const char*>(bytes.data() + 8), hlen);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(std::string("archive header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw ArchiveError("archive header must be a JSON object");

  const std::uint8_t* payload = bytes.data() + 8 + hlen;
  const std::uint64_t payload_size = bytes.size() - 8 - hlen;

  TensorArchive ar;
  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() == "__metadata__") {
      ar.metadata_ = it.value();
      continue;
    }
    const auto& info = it.value();
    try {
      const DType dt = parse_dtype(info.at("dtype").get<std::string>());
      const auto shape = info.at("shape").get<std::vector<std::int64_t>>();
      const auto offs = info.at("data_offsets").get<std::vector<std::uint64_t>>();
      if (shape.size() != 2) throw ArchiveError("entry '" + it.key() + "' must be two-dimensional");
      if (offs.size() != 2 || offs[0] > offs[1] || offs[1] > payload_size) {
        throw ArchiveError("entry '" + it.key() + "' has data offsets outside the payload");
      }
      const auto count = static_cast<std::uint64_t>(shape[0] * shape[1]);
      if (offs[1] - offs[0] != count * dtype_size(dt)) {
        throw ArchiveError("entry '" + it.key() + "': header shape does not match stored byte count");
      }
      std::vector<double> values(count);
      const std::uint8_t* p = payload + offs[0];
      for (std::uint64_t i = 0; i < count; ++i) {
        values[i] = dt == DType::F32 ? get_f32(p + 4 * i) : get_f64(p + 8 * i);
      }
      ar.put(WeightMatrix(it.key(), static_cast<int>(shape[0]), static_cast<int>(shape[1]), std::move(values)), dt);
    } catch (const nlohmann::json::exception& e) {
      throw ArchiveError("malformed header entry '" + it.key() + "': " + e.what());
    }
  }
  return ar;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArchiveError("cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw ArchiveError("failed writing '" + path.string() + "'");
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArchiveError("cannot open archive '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace texparse
