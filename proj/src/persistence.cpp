#include "persistence.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <vector>

#include "errors.hpp"

#include "json.hpp"

namespace promptsan {

namespace {

// Guards against allocation bombs from corrupt dimension fields.
constexpr std::uint64_t kMaxElements = 100'000'000;

std::string printable_magic(const char* m) {
  std::string out;
  for (std::size_t i = 0; i < 4; ++i) {
    const unsigned char c = static_cast<unsigned char>(m[i]);
    if (c >= 0x20 && c < 0x7f) {
      out.push_back(static_cast<char>(c));
    } else {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\x%02x", c);
      out += buf;
    }
  }
  return out;
}

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), f_(path, std::ios::binary) {
    if (!f_) {
      throw IoError("cannot open for writing: " + path);
    }
  }

  void bytes(const void* src, std::size_t n) {
    f_.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
  }

  void u32(std::uint32_t v) {
    unsigned char b[4] = {
        static_cast<unsigned char>(v & 0xff),
        static_cast<unsigned char>((v >> 8) & 0xff),
        static_cast<unsigned char>((v >> 16) & 0xff),
        static_cast<unsigned char>((v >> 24) & 0xff),
    };
    bytes(b, 4);
  }

  void f32_from_double(double v) {
    if (!std::isfinite(v)) {
      throw DataError(path_ + ": non-finite value");
    }
    const float q = static_cast<float>(v);
    if (!std::isfinite(q)) {
      throw DataError(path_ + ": value does not fit binary32");
    }
    u32(std::bit_cast<std::uint32_t>(q));
  }

  void finish() {
    f_.flush();
    if (!f_) {
      throw IoError("write failed: " + path_);
    }
  }

 private:
  std::string path_;
  std::ofstream f_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), f_(path, std::ios::binary) {
    if (!f_) {
      throw IoError("cannot open: " + path);
    }
  }

  void bytes(void* dst, std::size_t n) {
    f_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    const std::size_t got = static_cast<std::size_t>(f_.gcount());
    if (got != n) {
      throw FormatError(path_ + ": truncated at byte offset " +
                        std::to_string(offset_ + got));
    }
    offset_ += n;
  }

  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  }

  double f32_as_double() {
    const float v = std::bit_cast<float>(u32());
    if (!std::isfinite(v)) {
      throw DataError(path_ + ": non-finite value at byte offset " +
                      std::to_string(offset_ - 4));
    }
    return static_cast<double>(v);
  }

  void expect_magic(const char* magic) {
    char found[4];
    bytes(found, 4);
    if (!std::equal(found, found + 4, magic)) {
      throw FormatError(path_ + ": bad magic: expected '" +
                        printable_magic(magic) + "', found '" +
                        printable_magic(found) + "'");
    }
  }

  void expect_version() {
    const std::uint32_t v = u32();
    if (v != kFormatVersion) {
      throw FormatError(path_ + ": unsupported version " + std::to_string(v) +
                        " (expected " + std::to_string(kFormatVersion) + ")");
    }
  }

  void expect_eof() {
    if (f_.peek() != std::char_traits<char>::eof()) {
      throw FormatError(path_ + ": trailing data at byte offset " +
                        std::to_string(offset_));
    }
  }

  std::uint64_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream f_;
  std::uint64_t offset_ = 0;
};

void check_element_budget(const Reader& r, std::uint64_t elements) {
  if (elements == 0 || elements > kMaxElements) {
    throw FormatError(r.path() + ": implausible dimensions");
  }
}

void write_net(Writer& w, const char* magic, const MlpNet& net) {
  w.bytes(magic, 4);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(net.layer_count()));
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    w.u32(static_cast<std::uint32_t>(net.weights[i].rows));
    w.u32(static_cast<std::uint32_t>(net.weights[i].cols));
  }
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    for (double v : net.weights[i].data) {
      w.f32_from_double(v);
    }
    for (double v : net.biases[i]) {
      w.f32_from_double(v);
    }
  }
}

MlpNet read_net(Reader& r, const char* magic, bool unit_output) {
  r.expect_magic(magic);
  r.expect_version();
  const std::uint32_t layers = r.u32();
  if (layers == 0 || layers > 4096) {
    throw FormatError(r.path() + ": implausible layer count " +
                      std::to_string(layers));
  }
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes(layers);
  std::uint64_t elements = 0;
  for (auto& [rows, cols] : shapes) {
    rows = r.u32();
    cols = r.u32();
    if (rows == 0 || cols == 0) {
      throw FormatError(r.path() + ": zero-width layer");
    }
    elements += static_cast<std::uint64_t>(rows) * cols + rows;
  }
  check_element_budget(r, elements);
  for (std::size_t i = 1; i < shapes.size(); ++i) {
    if (shapes[i].second != shapes[i - 1].first) {
      throw FormatError(r.path() + ": layer " + std::to_string(i) +
                        " expects " + std::to_string(shapes[i].second) +
                        " inputs but layer " + std::to_string(i - 1) +
                        " emits " + std::to_string(shapes[i - 1].first));
    }
  }
  if (unit_output && shapes.back().first != 1) {
    throw FormatError(r.path() + ": classifier output dim " +
                      std::to_string(shapes.back().first) + " (expected 1)");
  }
  MlpNet net;
  net.layer_dims.push_back(shapes.front().second);
  for (const auto& sh : shapes) {
    net.layer_dims.push_back(sh.first);
  }
  for (const auto& sh : shapes) {
    Mat64 w(sh.first, sh.second);
    for (double& v : w.data) {
      v = r.f32_as_double();
    }
    Vec64 b(sh.first);
    for (double& v : b) {
      v = r.f32_as_double();
    }
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
  }
  net.validate();
  return net;
}

}  // namespace

void save_embedding_table(const std::string& path, const EmbeddingTable& t) {
  if (t.vocab_size == 0 || t.dim < 2 || t.weights.rows != t.vocab_size ||
      t.weights.cols != t.dim) {
    throw DimensionError("save: malformed embedding table");
  }
  Writer w(path);
  w.bytes(kMagicEmbedding, 4);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(t.vocab_size));
  w.u32(static_cast<std::uint32_t>(t.dim));
  for (double v : t.weights.data) {
    w.f32_from_double(v);
  }
  w.finish();
}

EmbeddingTable load_embedding_table(const std::string& path) {
  Reader r(path);
  r.expect_magic(kMagicEmbedding);
  r.expect_version();
  EmbeddingTable t;
  t.vocab_size = r.u32();
  t.dim = r.u32();
  if (t.vocab_size == 0 || t.dim < 2) {
    throw FormatError(path + ": implausible dimensions");
  }
  check_element_budget(r, static_cast<std::uint64_t>(t.vocab_size) * t.dim);
  t.weights = Mat64(t.vocab_size, t.dim);
  for (double& v : t.weights.data) {
    v = r.f32_as_double();
  }
  r.expect_eof();
  return t;
}

void save_classifier(const std::string& path, const MlpClassifier& c) {
  c.validate();
  Writer w(path);
  write_net(w, kMagicClassifier, c.net);
  w.finish();
}

MlpClassifier load_classifier(const std::string& path) {
  Reader r(path);
  MlpClassifier c{read_net(r, kMagicClassifier, true)};
  r.expect_eof();
  c.validate();
  return c;
}

void save_generator(const std::string& path, const GeneratorStub& g) {
  g.net.validate();
  Writer w(path);
  write_net(w, kMagicGenerator, g.net);
  w.finish();
}

GeneratorStub load_generator(const std::string& path) {
  Reader r(path);
  GeneratorStub g;
  g.net = read_net(r, kMagicGenerator, false);
  r.expect_eof();
  return g;
}

void save_suffix(const std::string& path, const SafetySuffix& s,
                 const SuffixConfig& cfg) {
  if (s.m == 0 || s.dim == 0 || s.matrix.rows != s.m ||
      s.matrix.cols != s.dim) {
    throw DimensionError("save: malformed suffix");
  }
  cfg.validate();
  Writer w(path);
  w.bytes(kMagicSuffix, 4);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(s.m));
  w.u32(static_cast<std::uint32_t>(s.dim));
  for (double v : s.matrix.data) {
    w.f32_from_double(v);
  }
  const nlohmann::json meta{
      {"category", s.category},
      {"trained_rounds", s.trained_rounds},
      {"config", cfg.to_json()},
  };
  const std::string blob = meta.dump();
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.bytes(blob.data(), blob.size());
  w.finish();
}

StoredSuffix load_suffix(const std::string& path) {
  Reader r(path);
  r.expect_magic(kMagicSuffix);
  r.expect_version();
  StoredSuffix out;
  out.suffix.m = r.u32();
  out.suffix.dim = r.u32();
  if (out.suffix.m == 0 || out.suffix.dim == 0) {
    throw FormatError(path + ": implausible dimensions");
  }
  check_element_budget(
      r, static_cast<std::uint64_t>(out.suffix.m) * out.suffix.dim);
  out.suffix.matrix = Mat64(out.suffix.m, out.suffix.dim);
  for (double& v : out.suffix.matrix.data) {
    v = r.f32_as_double();
  }
  const std::uint32_t blob_len = r.u32();
  if (blob_len > 1'000'000) {
    throw FormatError(path + ": implausible metadata length");
  }
  std::string blob(blob_len, '\0');
  r.bytes(blob.data(), blob_len);
  r.expect_eof();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(blob);
    out.suffix.category = meta.at("category").get<std::string>();
    out.suffix.trained_rounds = meta.at("trained_rounds").get<std::size_t>();
    out.config = SuffixConfig::from_json(meta.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad metadata blob: " + e.what());
  }
  return out;
}

}  // namespace promptsan
