#include "runconfig.hpp"

#include <fstream>

#include "errors.hpp"

namespace promptsan {

namespace {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  try {
    return j.value(key, fallback);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " +
                      e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  corpus.validate();
  sanitize.validate();
  suffix.validate();
  if (generator.q == 0) {
    throw ConfigError("config: generator.q must be positive");
  }
  if (classifier.epochs == 0) {
    throw ConfigError("config: classifier.epochs must be positive");
  }
  if (!(classifier.lr > 0.0)) {
    throw ConfigError("config: classifier.lr must be positive");
  }
  if (!(classifier.weight_decay >= 0.0)) {
    throw ConfigError("config: classifier.weight_decay must be non-negative");
  }
  for (std::size_t h : classifier.hidden) {
    if (h == 0) {
      throw ConfigError("config: classifier.hidden entries must be positive");
    }
  }
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw ConfigError("config: top level must be a JSON object");
  }
  RunConfig cfg;
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);

  if (j.contains("paths")) {
    const nlohmann::json& p = j.at("paths");
    cfg.paths.vocab = get_or<std::string>(p, "vocab", "");
    cfg.paths.embedding_table = get_or<std::string>(p, "embedding_table", "");
    cfg.paths.generator = get_or<std::string>(p, "generator", "");
    cfg.paths.text_classifier = get_or<std::string>(p, "text_classifier", "");
    cfg.paths.image_classifier = get_or<std::string>(p, "image_classifier", "");
    cfg.paths.suffix = get_or<std::string>(p, "suffix", "");
    cfg.paths.harmful_corpus = get_or<std::string>(p, "harmful_corpus", "");
    cfg.paths.benign_corpus = get_or<std::string>(p, "benign_corpus", "");
  }

  if (j.contains("corpus")) {
    const nlohmann::json& c = j.at("corpus");
    cfg.corpus.vocab_size = get_or<std::size_t>(c, "vocab_size", cfg.corpus.vocab_size);
    cfg.corpus.dim = get_or<std::size_t>(c, "dim", cfg.corpus.dim);
    cfg.corpus.n_harmful = get_or<std::size_t>(c, "n_harmful", cfg.corpus.n_harmful);
    cfg.corpus.n_benign = get_or<std::size_t>(c, "n_benign", cfg.corpus.n_benign);
    cfg.corpus.prompt_len_min =
        get_or<std::size_t>(c, "prompt_len_min", cfg.corpus.prompt_len_min);
    cfg.corpus.prompt_len_max =
        get_or<std::size_t>(c, "prompt_len_max", cfg.corpus.prompt_len_max);
    cfg.corpus.separation = get_or<double>(c, "separation", cfg.corpus.separation);
  }
  cfg.corpus.seed = cfg.seed;

  if (j.contains("generator")) {
    const nlohmann::json& g = j.at("generator");
    cfg.generator.q = get_or<std::size_t>(g, "q", cfg.generator.q);
    if (g.contains("inject_step") && !g.at("inject_step").is_null()) {
      cfg.generator.inject_step = get_or<std::size_t>(g, "inject_step", 0);
    }
  }

  if (j.contains("classifier")) {
    const nlohmann::json& c = j.at("classifier");
    if (c.contains("hidden")) {
      try {
        cfg.classifier.hidden = c.at("hidden").get<std::vector<std::size_t>>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: bad classifier.hidden: ") +
                          e.what());
      }
    }
    cfg.classifier.epochs = get_or<std::size_t>(c, "epochs", cfg.classifier.epochs);
    cfg.classifier.lr = get_or<double>(c, "lr", cfg.classifier.lr);
    cfg.classifier.weight_decay =
        get_or<double>(c, "weight_decay", cfg.classifier.weight_decay);
  }

  if (j.contains("sanitize")) {
    const nlohmann::json& s = j.at("sanitize");
    cfg.sanitize.eta = get_or<double>(s, "eta", cfg.sanitize.eta);
    cfg.sanitize.p_top = get_or<double>(s, "p_top", cfg.sanitize.p_top);
    cfg.sanitize.gamma = get_or<double>(s, "gamma", cfg.sanitize.gamma);
    cfg.sanitize.max_iters =
        get_or<std::size_t>(s, "max_iters", cfg.sanitize.max_iters);
    cfg.sanitize.use_adamw = get_or<bool>(s, "use_adamw", cfg.sanitize.use_adamw);
  }

  if (j.contains("suffix")) {
    try {
      cfg.suffix = SuffixConfig::from_json(j.at("suffix"));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: bad suffix section: ") + e.what());
    }
  }

  if (j.contains("suffix_routes")) {
    const nlohmann::json& routes = j.at("suffix_routes");
    if (!routes.is_object()) {
      throw ConfigError("config: suffix_routes must be an object");
    }
    for (const auto& [category, path] : routes.items()) {
      if (!path.is_string()) {
        throw ConfigError("config: suffix_routes values must be paths");
      }
      cfg.suffix_routes.emplace_back(category, path.get<std::string>());
    }
  }

  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) {
    throw IoError("cannot open config: " + path);
  }
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  return from_json(j);
}

}  // namespace promptsan
