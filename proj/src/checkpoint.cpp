#include "tidm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace tidm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const char* to_string(CheckpointErrc code) {
  switch (code) {
    case CheckpointErrc::io: return "io";
    case CheckpointErrc::bad_magic: return "bad_magic";
    case CheckpointErrc::unsupported_version: return "unsupported_version";
    case CheckpointErrc::truncated: return "truncated";
    case CheckpointErrc::checksum_mismatch: return "checksum_mismatch";
    case CheckpointErrc::malformed_manifest: return "malformed_manifest";
  }
  return "unknown";
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what).data(), sizeof(T));
    return v;
  }
  std::span<const std::uint8_t> take(std::uint64_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw CheckpointError(CheckpointErrc::truncated, std::string("file ends inside ") + what);
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

Shape parse_dims(const std::string& text) {
  Shape shape;
  if (text == "scalar") return shape;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, 'x')) {
    std::size_t used = 0;
    int d = 0;
    try {
      d = std::stoi(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != part.size() || d < 1) throw CheckpointError(CheckpointErrc::malformed_manifest, "bad dims '" + text + "'");
    shape.push_back(d);
  }
  if (shape.empty()) throw CheckpointError(CheckpointErrc::malformed_manifest, "bad dims '" + text + "'");
  return shape;
}

std::string dims_text(const Shape& shape) {
  if (shape.empty()) return "scalar";
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s;
}

}  // namespace

std::string encode_checkpoint(const ParamStore<float>& params) {
  std::ostringstream manifest;
  manifest << "step_count " << params.step_count << '\n';
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    const std::uint64_t length = t.size() * sizeof(float);
    manifest << name << ' ' << dims_text(t.shape()) << ' ' << offset << ' ' << length << '\n';
    offset += length;
  }
  std::string payload;
  payload.reserve(offset);
  for (const auto& [name, t] : params) {
    payload.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(float));
  }
  const std::string m = manifest.str();
  std::string out = "TIDM";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, m.size());
  out += m;
  put<std::uint64_t>(out, payload.size());
  out += payload;
  put<std::uint64_t>(out, fnv1a64({reinterpret_cast<const std::uint8_t*>(payload.data()), payload.size()}));
  return out;
}

ParamStore<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "TIDM", 4) != 0) {
    throw CheckpointError(CheckpointErrc::bad_magic, "missing TIDM magic");
  }
  r.take(4, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrc::unsupported_version,
                          "version " + std::to_string(version) + " (this build reads " +
                              std::to_string(kCheckpointVersion) + ")");
  }
  const auto manifest_len = r.get<std::uint64_t>("manifest length");
  const auto manifest_bytes = r.take(manifest_len, "manifest");
  const auto payload_len = r.get<std::uint64_t>("payload length");
  const auto payload = r.take(payload_len, "payload");
  const auto stored = r.get<std::uint64_t>("checksum");
  if (!r.done()) throw CheckpointError(CheckpointErrc::malformed_manifest, "trailing bytes after checksum");
  if (fnv1a64(payload) != stored) throw CheckpointError(CheckpointErrc::checksum_mismatch, "payload checksum differs");

  std::istringstream manifest(std::string(manifest_bytes.begin(), manifest_bytes.end()));
  ParamStore<float> params;
  std::string line;
  if (!std::getline(manifest, line) || line.rfind("step_count ", 0) != 0) {
    throw CheckpointError(CheckpointErrc::malformed_manifest, "missing step_count line");
  }
  try {
    params.step_count = std::stoull(line.substr(11));
  } catch (const std::exception&) {
    throw CheckpointError(CheckpointErrc::malformed_manifest, "bad step_count");
  }
  std::uint64_t expected_offset = 0;
  while (std::getline(manifest, line)) {
    std::istringstream in(line);
    std::string name, dims;
    std::uint64_t offset = 0, length = 0;
    if (!(in >> name >> dims >> offset >> length)) {
      throw CheckpointError(CheckpointErrc::malformed_manifest, "bad entry '" + line + "'");
    }
    const Shape shape = parse_dims(dims);
    if (offset != expected_offset || length != numel(shape) * sizeof(float) || offset + length > payload.size()) {
      throw CheckpointError(CheckpointErrc::malformed_manifest, "entry '" + name + "' has inconsistent offset/length");
    }
    if (params.contains(name)) throw CheckpointError(CheckpointErrc::malformed_manifest, "duplicate entry " + name);
    std::vector<float> data(numel(shape));
    std::memcpy(data.data(), payload.data() + offset, length);
    params.set(name, Tensor<float>(shape, std::move(data)));
    expected_offset += length;
  }
  if (expected_offset != payload.size()) {
    throw CheckpointError(CheckpointErrc::malformed_manifest, "payload size does not match manifest");
  }
  return params;
}

void save_checkpoint(const std::string& path, const ParamStore<float>& params) {
  const std::string bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointErrc::io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrc::io, "write failed for " + path);
}

namespace {

std::vector<std::uint8_t> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrc::io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

ParamStore<float> load_checkpoint(const std::string& path) { return decode_checkpoint(read_all(path)); }

std::uint64_t params_checksum(const ParamStore<float>& params) {
  const std::string bytes = encode_checkpoint(params);
  return fnv1a64({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
}

std::uint64_t file_checksum(const std::string& path) { return fnv1a64(read_all(path)); }

}  // namespace tidm
