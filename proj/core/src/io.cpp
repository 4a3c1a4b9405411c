#include "vtc/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vtc/errors.hpp"
#include "vtc/rng.hpp"

namespace vtc {
namespace {

using json = nlohmann::json;

class ByteWriter {
 public:
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, const char* format)
      : bytes_(bytes), format_(format) {}

  std::uint64_t offset() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string(format_) + ": truncated while reading " + what, pos_);
    }
  }
  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  const char* format_;
  std::size_t pos_ = 0;
};

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

json parse_line(const std::string& line, const std::filesystem::path& path, std::uint64_t offset) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": invalid JSON line: " + e.what(), offset);
  }
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  auto in = open_in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto out = open_out(path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> encode_vtcf(const Matrix& frames) {
  ByteWriter w;
  w.raw("VTCF");
  w.u32(kVtcfVersion);
  w.u32(static_cast<std::uint32_t>(frames.rows()));
  w.u32(static_cast<std::uint32_t>(frames.cols()));
  for (double v : frames.data()) w.f32(static_cast<float>(v));
  return w.take();
}

Matrix decode_vtcf(std::span<const std::uint8_t> bytes, std::optional<std::size_t> expected_dim) {
  ByteReader r(bytes, "VTCF");
  if (r.raw(4, "magic") != "VTCF") throw FormatError("VTCF: bad magic", 0);
  const std::uint64_t version_at = r.offset();
  if (const auto v = r.u32("version"); v != kVtcfVersion) {
    throw FormatError("VTCF: unsupported version " + std::to_string(v), version_at);
  }
  const std::uint32_t frames = r.u32("frame count");
  const std::uint64_t dim_at = r.offset();
  const std::uint32_t dim = r.u32("dimension");
  if (frames == 0) throw FormatError("VTCF: zero frames", 8);
  if (expected_dim && dim != *expected_dim) {
    throw FormatError("VTCF: dimension " + std::to_string(dim) + " does not match expected " +
                          std::to_string(*expected_dim),
                      dim_at);
  }
  const std::uint64_t payload = static_cast<std::uint64_t>(frames) * dim * 4;
  r.need(payload, "payload");
  Matrix m(frames, dim);
  for (double& v : m.data()) {
    v = r.f32("payload");
    if (!std::isfinite(v)) throw FormatError("VTCF: non-finite frame value", r.offset() - 4);
  }
  if (!r.at_end()) throw FormatError("VTCF: trailing bytes after payload", r.offset());
  return m;
}

void write_vtcf(const std::filesystem::path& path, const VideoItem& video) {
  write_file_bytes(path, encode_vtcf(video.frames));
}

VideoItem load_frame_embeddings(const std::filesystem::path& path,
                                std::optional<std::size_t> expected_dim) {
  const auto bytes = read_file_bytes(path);
  return {path.stem().string(), decode_vtcf(bytes, expected_dim)};
}

std::vector<TextItem> read_manifest(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<TextItem> items;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const std::uint64_t line_offset = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = parse_line(line, path, line_offset);
    try {
      items.push_back(make_text_item(j.at("text_id").get<std::string>(),
                                     j.at("text").get<std::string>(),
                                     j.at("video_id").get<std::string>()));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ": bad manifest record: " + e.what(), line_offset);
    }
  }
  return items;
}

void write_manifest(const std::filesystem::path& path, const std::vector<TextItem>& items) {
  auto out = open_out(path);
  for (const auto& item : items) {
    json j = {{"text_id", item.text_id}, {"text", item.raw}, {"video_id", item.video_id}};
    out << j.dump() << '\n';
  }
}

std::vector<EmbeddingRecord> read_embeddings_jsonl(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<EmbeddingRecord> records;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const std::uint64_t line_offset = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = parse_line(line, path, line_offset);
    try {
      const auto& rows = j.at("vectors");
      if (!rows.is_array() || rows.empty()) {
        throw FormatError(path.string() + ": empty vectors", line_offset);
      }
      const std::size_t cols = rows[0].size();
      Matrix m(rows.size(), cols);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != cols) throw FormatError(path.string() + ": ragged vectors", line_offset);
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = rows[r][c].get<double>();
      }
      records.push_back({j.at("id").get<std::string>(), std::move(m)});
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ": bad embedding record: " + e.what(), line_offset);
    }
  }
  return records;
}

void write_embeddings_jsonl(const std::filesystem::path& path,
                            const std::vector<EmbeddingRecord>& records) {
  auto out = open_out(path);
  for (const auto& rec : records) {
    json rows = json::array();
    for (std::size_t r = 0; r < rec.vectors.rows(); ++r) {
      auto row = rec.vectors.row(r);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    out << json{{"id", rec.id}, {"vectors", rows}}.dump() << '\n';
  }
}

Checkpoint Checkpoint::from_parameters(const ParameterList& params, std::string config) {
  Checkpoint ckpt;
  ckpt.config = std::move(config);
  for (const Parameter* p : params) {
    CheckpointTensor t;
    t.id = p->id;
    t.rows = static_cast<std::uint32_t>(p->value.rows());
    t.cols = static_cast<std::uint32_t>(p->value.cols());
    t.values.reserve(p->value.size());
    for (double v : p->value.data()) t.values.push_back(static_cast<float>(v));
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

const CheckpointTensor* Checkpoint::find(const std::string& id) const {
  for (const auto& t : tensors)
    if (t.id == id) return &t;
  return nullptr;
}

void Checkpoint::restore(const ParameterList& params) const {
  for (Parameter* p : params) {
    const CheckpointTensor* t = find(p->id);
    if (!t) throw LookupError("checkpoint has no tensor '" + p->id + "'");
    if (t->rows != p->value.rows() || t->cols != p->value.cols()) {
      throw DimensionError("checkpoint tensor '" + p->id + "' is " + std::to_string(t->rows) + "x" +
                           std::to_string(t->cols) + ", parameter is " + p->value.shape_string());
    }
    for (std::size_t i = 0; i < t->values.size(); ++i) p->value[i] = t->values[i];
    p->zero_grad();
  }
}

std::uint64_t config_hash(const std::string& config) { return fnv1a64(config); }

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw("VTCP");
  w.u32(ckpt.version);
  w.u32(static_cast<std::uint32_t>(ckpt.config.size()));
  w.raw(ckpt.config);
  w.u64(config_hash(ckpt.config));
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.u32(static_cast<std::uint32_t>(t.id.size()));
    w.raw(t.id);
    w.u32(t.rows);
    w.u32(t.cols);
    for (float v : t.values) w.f32(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "VTCP");
  if (r.raw(4, "magic") != "VTCP") throw FormatError("VTCP: bad magic", 0);
  Checkpoint ckpt;
  const std::uint64_t version_at = r.offset();
  ckpt.version = r.u32("version");
  if (ckpt.version != kVtcpVersion) {
    throw FormatError("VTCP: unsupported version " + std::to_string(ckpt.version), version_at);
  }
  const std::uint32_t config_len = r.u32("config length");
  ckpt.config = r.raw(config_len, "config");
  const std::uint64_t hash_at = r.offset();
  if (r.u64("config hash") != config_hash(ckpt.config)) {
    throw FormatError("VTCP: config hash mismatch", hash_at);
  }
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const std::uint32_t id_len = r.u32("tensor id length");
    t.id = r.raw(id_len, "tensor id");
    t.rows = r.u32("tensor rows");
    t.cols = r.u32("tensor cols");
    const std::uint64_t n = static_cast<std::uint64_t>(t.rows) * t.cols;
    r.need(n * 4, "tensor payload");
    t.values.resize(n);
    for (float& v : t.values) v = r.f32("tensor payload");
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.at_end()) throw FormatError("VTCP: trailing bytes", r.offset());
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace vtc
