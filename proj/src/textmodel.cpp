#include "textmodel.hpp"

#include <fstream>

#include "errors.hpp"
#include "suffix.hpp"

namespace promptsan {

namespace {

bool is_unicode_whitespace(char32_t c) {
  switch (c) {
    case 0x09: case 0x0a: case 0x0b: case 0x0c: case 0x0d:
    case 0x20: case 0x85: case 0xa0: case 0x1680:
    case 0x2028: case 0x2029: case 0x202f: case 0x205f: case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200a;
  }
}

// Decodes one UTF-8 code point starting at i; on malformed input the
// single byte is consumed and returned as-is so it lands inside a token.
char32_t decode_utf8(std::string_view s, std::size_t& i) {
  const unsigned char b0 = static_cast<unsigned char>(s[i]);
  std::size_t len = 1;
  char32_t cp = b0;
  if ((b0 & 0xe0) == 0xc0) { len = 2; cp = b0 & 0x1f; }
  else if ((b0 & 0xf0) == 0xe0) { len = 3; cp = b0 & 0x0f; }
  else if ((b0 & 0xf8) == 0xf0) { len = 4; cp = b0 & 0x07; }
  else if (b0 >= 0x80) { ++i; return b0; }
  if (i + len > s.size()) { ++i; return b0; }
  for (std::size_t k = 1; k < len; ++k) {
    const unsigned char bk = static_cast<unsigned char>(s[i + k]);
    if ((bk & 0xc0) != 0x80) { ++i; return b0; }
    cp = (cp << 6) | (bk & 0x3f);
  }
  i += len;
  return cp;
}

void append_lowered(std::string& token, std::string_view s, std::size_t begin,
                    std::size_t end) {
  for (std::size_t i = begin; i < end; ++i) {
    char c = s[i];
    if (c >= 'A' && c <= 'Z') {
      c = static_cast<char>(c - 'A' + 'a');
    }
    token.push_back(c);
  }
}

void validate_token(const std::string& t, const char* origin) {
  if (t.empty()) {
    throw FormatError(std::string(origin) + ": empty token");
  }
  std::size_t i = 0;
  while (i < t.size()) {
    std::size_t before = i;
    if (is_unicode_whitespace(decode_utf8(t, i))) {
      throw FormatError(std::string(origin) + ": token '" + t +
                        "' contains whitespace");
    }
    if (i == before) {
      ++i;
    }
  }
}

}  // namespace

Vocab Vocab::from_tokens(std::vector<std::string> tokens,
                         std::int32_t unk_index) {
  if (tokens.empty()) {
    throw ConfigError("vocab: no tokens");
  }
  if (unk_index < 0 || static_cast<std::size_t>(unk_index) >= tokens.size()) {
    throw ConfigError("vocab: unk index out of range");
  }
  Vocab v;
  v.tokens = std::move(tokens);
  v.unk_index = unk_index;
  for (std::size_t i = 0; i < v.tokens.size(); ++i) {
    const std::string& token = v.tokens[i];
    if (token.empty()) {
      throw ConfigError("vocab: empty token at index " + std::to_string(i));
    }
    for (char ch : token) {
      if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
        throw ConfigError("vocab: token '" + token + "' contains whitespace");
      }
    }
    auto [it, inserted] = v.index.emplace(token, static_cast<std::int32_t>(i));
    if (!inserted) {
      throw ConfigError("vocab: duplicate token '" + token + "'");
    }
  }
  return v;
}

Vocab load_vocab(const std::string& path) {
  std::ifstream f(path);
  if (!f) {
    throw IoError("cannot open vocab file: " + path);
  }
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    validate_token(line, path.c_str());
    tokens.push_back(line);
  }
  if (tokens.empty()) {
    throw FormatError(path + ": vocab file is empty");
  }
  try {
    return Vocab::from_tokens(std::move(tokens), 0);
  } catch (const ConfigError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void save_vocab(const std::string& path, const Vocab& vocab) {
  std::ofstream f(path, std::ios::binary);
  if (!f) {
    throw IoError("cannot write vocab file: " + path);
  }
  for (const std::string& t : vocab.tokens) {
    f << t << '\n';
  }
  if (!f) {
    throw IoError("write failed: " + path);
  }
}

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::encoded: return "encoded";
    case Provenance::modified: return "modified";
    case Provenance::suffixed: return "suffixed";
    case Provenance::prefixed: return "prefixed";
  }
  return "unknown";
}

std::vector<std::int32_t> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<std::int32_t> ids;
  std::string token;
  std::size_t i = 0;
  std::size_t token_begin = 0;
  auto flush = [&](std::size_t end) {
    if (end > token_begin) {
      token.clear();
      append_lowered(token, text, token_begin, end);
      auto it = vocab.index.find(token);
      ids.push_back(it != vocab.index.end() ? it->second : vocab.unk_index);
    }
  };
  while (i < text.size()) {
    const std::size_t cp_begin = i;
    const char32_t cp = decode_utf8(text, i);
    if (is_unicode_whitespace(cp)) {
      flush(cp_begin);
      token_begin = i;
    }
  }
  flush(text.size());
  return ids;
}

PromptEmbedding encode(const std::vector<std::int32_t>& ids,
                       const EmbeddingTable& table) {
  if (ids.empty()) {
    throw EmptyPromptError("encode: empty prompt");
  }
  if (table.dim < 2 || table.weights.rows != table.vocab_size ||
      table.weights.cols != table.dim) {
    throw DimensionError("encode: malformed embedding table");
  }
  PromptEmbedding p;
  p.tokens = ids;
  p.matrix = Mat64(ids.size(), table.dim);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const std::int32_t id = ids[r];
    if (id < 0 || static_cast<std::size_t>(id) >= table.vocab_size) {
      throw VocabError("encode: token id " + std::to_string(id) +
                       " outside vocab of size " +
                       std::to_string(table.vocab_size));
    }
    const double* src = table.weights.row(static_cast<std::size_t>(id));
    std::copy(src, src + table.dim, p.matrix.row(r));
  }
  p.provenance = Provenance::encoded;
  return p;
}

Vec64 pool(const PromptEmbedding& p) {
  if (p.rows() == 0) {
    throw EmptyPromptError("pool: prompt has no rows");
  }
  Vec64 out(p.dim(), 0.0);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const double* row = p.matrix.row(r);
    for (std::size_t c = 0; c < p.dim(); ++c) {
      out[c] += row[c];
    }
  }
  const double inv = 1.0 / static_cast<double>(p.rows());
  for (double& v : out) {
    v *= inv;
  }
  return out;
}

Vec64 pool_weighted(const PromptEmbedding& p, const Vec64& weights) {
  if (weights.size() != p.rows()) {
    throw DimensionError("pool_weighted: " + std::to_string(weights.size()) +
                         " weights for " + std::to_string(p.rows()) + " rows");
  }
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) {
      throw ConfigError("pool_weighted: negative weight");
    }
    total += w;
  }
  if (total <= 0.0) {
    throw ConfigError("pool_weighted: weights sum to zero");
  }
  Vec64 out(p.dim(), 0.0);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const double* row = p.matrix.row(r);
    const double w = weights[r] / total;
    for (std::size_t c = 0; c < p.dim(); ++c) {
      out[c] += w * row[c];
    }
  }
  return out;
}

namespace {

PromptEmbedding concat_block(const PromptEmbedding& p, const SafetySuffix& s,
                             bool block_first, Provenance tag) {
  if (s.m == 0) {
    throw DimensionError("concat: suffix has no rows");
  }
  if (s.dim != p.dim() || s.matrix.rows != s.m || s.matrix.cols != s.dim) {
    throw DimensionError("concat: suffix dim " + std::to_string(s.dim) +
                         " vs prompt dim " + std::to_string(p.dim()));
  }
  PromptEmbedding out;
  out.tokens = p.tokens;
  out.matrix = Mat64(p.rows() + s.m, p.dim());
  const Mat64& first = block_first ? s.matrix : p.matrix;
  const Mat64& second = block_first ? p.matrix : s.matrix;
  std::copy(first.data.begin(), first.data.end(), out.matrix.data.begin());
  std::copy(second.data.begin(), second.data.end(),
            out.matrix.data.begin() + static_cast<std::ptrdiff_t>(
                                          first.rows * first.cols));
  out.provenance = tag;
  return out;
}

}  // namespace

PromptEmbedding concat_suffix(const PromptEmbedding& p, const SafetySuffix& s) {
  return concat_block(p, s, false, Provenance::suffixed);
}

PromptEmbedding concat_prefix(const PromptEmbedding& p, const SafetySuffix& s) {
  return concat_block(p, s, true, Provenance::prefixed);
}

}  // namespace promptsan
