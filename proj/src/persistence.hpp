#pragma once

#include <string>

#include "classifier.hpp"
#include "generator.hpp"
#include "suffix.hpp"
#include "textmodel.hpp"

namespace promptsan {

// Binary model files share a common layout: 4-byte ASCII magic, u32
// version (always 1), u32 dimension fields, then float32 weights in
// row-major order, all little-endian. The suffix format additionally
// carries a length-prefixed JSON blob with training metadata.
inline constexpr char kMagicEmbedding[5] = "PSEB";
inline constexpr char kMagicClassifier[5] = "PSCL";
inline constexpr char kMagicGenerator[5] = "PSGN";
inline constexpr char kMagicSuffix[5] = "PSSX";
inline constexpr std::uint32_t kFormatVersion = 1;

void save_embedding_table(const std::string& path, const EmbeddingTable& t);
EmbeddingTable load_embedding_table(const std::string& path);

void save_classifier(const std::string& path, const MlpClassifier& c);
MlpClassifier load_classifier(const std::string& path);

void save_generator(const std::string& path, const GeneratorStub& g);
GeneratorStub load_generator(const std::string& path);

struct StoredSuffix {
  SafetySuffix suffix;
  SuffixConfig config;
};

void save_suffix(const std::string& path, const SafetySuffix& s,
                 const SuffixConfig& cfg);
StoredSuffix load_suffix(const std::string& path);

}  // namespace promptsan
