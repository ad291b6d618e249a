#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ndmath.hpp"

namespace promptsan {

struct SafetySuffix;

struct Vocab {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, std::int32_t> index;
  std::int32_t unk_index = 0;

  std::size_t size() const { return tokens.size(); }

  // Validates uniqueness and that tokens are non-empty and contain no
  // whitespace (such tokens could never be produced by tokenize).
  static Vocab from_tokens(std::vector<std::string> tokens,
                           std::int32_t unk_index = 0);
};

// One token per line, line number = id, first line is the unk token.
Vocab load_vocab(const std::string& path);
void save_vocab(const std::string& path, const Vocab& vocab);

struct EmbeddingTable {
  std::size_t vocab_size = 0;
  std::size_t dim = 0;
  Mat64 weights;  // vocab_size x dim
};

enum class Provenance { encoded, modified, suffixed, prefixed };

const char* provenance_name(Provenance p);

struct PromptEmbedding {
  std::vector<std::int32_t> tokens;  // ids of the encoded text; suffix
                                     // rows added later carry no ids
  Mat64 matrix;                      // rows x dim
  Provenance provenance = Provenance::encoded;

  std::size_t rows() const { return matrix.rows; }
  std::size_t dim() const { return matrix.cols; }
};

// Lowercases ASCII letters, splits on Unicode whitespace, maps unknown
// tokens to vocab.unk_index. Empty input gives an empty id list.
std::vector<std::int32_t> tokenize(std::string_view text, const Vocab& vocab);

PromptEmbedding encode(const std::vector<std::int32_t>& ids,
                       const EmbeddingTable& table);

// Mean over rows. The gradient of any scalar loss w.r.t. row i is
// (1/rows) times the gradient w.r.t. the pooled vector.
Vec64 pool(const PromptEmbedding& p);

// Weighted mean; weights are normalized to sum 1 internally. Used to
// exercise selection paths where per-token gradients must differ.
Vec64 pool_weighted(const PromptEmbedding& p, const Vec64& weights);

PromptEmbedding concat_suffix(const PromptEmbedding& p, const SafetySuffix& s);
PromptEmbedding concat_prefix(const PromptEmbedding& p, const SafetySuffix& s);

}  // namespace promptsan
