#include "promptsan.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "classifier.hpp"
#include "errors.hpp"
#include "evalkit.hpp"
#include "persistence.hpp"
#include "pipeline.hpp"
#include "runconfig.hpp"
#include "sanitize.hpp"
#include "suffix.hpp"
#include "textmodel.hpp"

using namespace promptsan;

struct ps_vocab {
  Vocab v;
};
struct ps_embedding_table {
  EmbeddingTable t;
};
struct ps_classifier {
  MlpClassifier c;
};
struct ps_suffix {
  StoredSuffix s;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out != nullptr) {
    std::memcpy(out, s.c_str(), s.size() + 1);
  }
  return out;
}

void set_out_json(char** out_json, const nlohmann::json& j) {
  if (out_json != nullptr) {
    *out_json = dup_string(j.dump(2));
  }
}

ps_status fail(ps_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

ps_status null_arg(const char* name) {
  return fail(PS_ERR_CONFIG, std::string(name) + " must not be NULL");
}

// Runs the body, translating exceptions into status codes. The body
// returns the status for the success path (outcomes included).
template <typename F>
ps_status guarded(F&& body) {
  g_last_error.clear();
  try {
    return body();
  } catch (const IoError& e) {
    return fail(PS_ERR_IO, e.what());
  } catch (const FormatError& e) {
    return fail(PS_ERR_FORMAT, e.what());
  } catch (const ConfigError& e) {
    return fail(PS_ERR_CONFIG, e.what());
  } catch (const DimensionError& e) {
    return fail(PS_ERR_DIMENSION, e.what());
  } catch (const VocabError& e) {
    return fail(PS_ERR_VOCAB, e.what());
  } catch (const EmptyPromptError& e) {
    return fail(PS_ERR_EMPTY_PROMPT, e.what());
  } catch (const DataError& e) {
    return fail(PS_ERR_DATA, e.what());
  } catch (const ArchitectureError& e) {
    return fail(PS_ERR_ARCHITECTURE, e.what());
  } catch (const std::exception& e) {
    return fail(PS_ERR_UNKNOWN, e.what());
  } catch (...) {
    return fail(PS_ERR_UNKNOWN, "unknown error");
  }
}

PromptEmbedding embed_text(const ps_vocab* v, const ps_embedding_table* t,
                           const char* text) {
  return encode(tokenize(text, v->v), t->t);
}

}  // namespace

extern "C" {

const char* ps_version(void) { return "1.0.0"; }

const char* ps_last_error(void) { return g_last_error.c_str(); }

void ps_string_free(char* s) { std::free(s); }

ps_status ps_gen_toydata(const char* config_path, char** out_json) {
  if (config_path == nullptr) return null_arg("config_path");
  return guarded([&] {
    RunConfig cfg = RunConfig::load(config_path);
    set_out_json(out_json, gen_toydata_cmd(cfg));
    return PS_OK;
  });
}

ps_status ps_train_classifier(const char* config_path, int image,
                              const char* out_model_path, char** out_json) {
  if (config_path == nullptr) return null_arg("config_path");
  if (out_model_path == nullptr) {
    return null_arg("out_model_path");
  }
  return guarded([&] {
    RunConfig cfg = RunConfig::load(config_path);
    ClassifierCmdResult res =
        train_classifier_cmd(cfg, image != 0, out_model_path);
    set_out_json(out_json, res.summary);
    return PS_OK;
  });
}

ps_status ps_train_suffix(const char* config_path,
                          const char* out_suffix_path, char** out_json) {
  if (config_path == nullptr) return null_arg("config_path");
  if (out_suffix_path == nullptr) {
    return null_arg("out_suffix_path");
  }
  return guarded([&] {
    RunConfig cfg = RunConfig::load(config_path);
    SuffixCmdResult res = train_suffix_cmd(cfg, out_suffix_path);
    set_out_json(out_json, res.summary);
    return res.result.converged ? PS_OK : PS_TRAIN_NOT_CONVERGED;
  });
}

ps_status ps_sanitize_text(const char* config_path, const char* text,
                           const char* method, const char* category,
                           char** out_json) {
  if (config_path == nullptr) return null_arg("config_path");
  if (text == nullptr) return null_arg("text");
  if (method == nullptr) return null_arg("method");
  return guarded([&] {
    RunConfig cfg = RunConfig::load(config_path);
    SanitizeCmdResult res =
        sanitize_cmd(cfg, text, method_from_string(method),
                     category == nullptr ? "" : category);
    set_out_json(out_json, res.report);
    return res.status == SanitizeStatus::unresolved ? PS_SANITIZE_UNRESOLVED
                                                    : PS_OK;
  });
}

ps_status ps_evaluate(const char* config_path, const char* method,
                      const char* out_path, char** out_json) {
  if (config_path == nullptr) return null_arg("config_path");
  if (method == nullptr) return null_arg("method");
  return guarded([&] {
    RunConfig cfg = RunConfig::load(config_path);
    EvalCmdResult res =
        evaluate_cmd(cfg, method_from_string(method),
                     out_path == nullptr ? "" : out_path);
    set_out_json(out_json, res.json);
    return PS_OK;
  });
}

ps_status ps_export_features(const char* config_path, const char* out_path,
                             char** out_json) {
  if (config_path == nullptr) return null_arg("config_path");
  if (out_path == nullptr) return null_arg("out_path");
  return guarded([&] {
    RunConfig cfg = RunConfig::load(config_path);
    set_out_json(out_json, export_features_cmd(cfg, out_path));
    return PS_OK;
  });
}

ps_status ps_vocab_load(const char* path, ps_vocab** out) {
  if (path == nullptr) return null_arg("path");
  if (out == nullptr) return null_arg("out");
  return guarded([&] {
    *out = new ps_vocab{load_vocab(path)};
    return PS_OK;
  });
}

void ps_vocab_free(ps_vocab* v) { delete v; }

size_t ps_vocab_size(const ps_vocab* v) {
  return v == nullptr ? 0 : v->v.size();
}

ps_status ps_embedding_table_load(const char* path,
                                  ps_embedding_table** out) {
  if (path == nullptr) return null_arg("path");
  if (out == nullptr) return null_arg("out");
  return guarded([&] {
    *out = new ps_embedding_table{load_embedding_table(path)};
    return PS_OK;
  });
}

void ps_embedding_table_free(ps_embedding_table* t) { delete t; }

size_t ps_embedding_table_dim(const ps_embedding_table* t) {
  return t == nullptr ? 0 : t->t.dim;
}

ps_status ps_classifier_load(const char* path, ps_classifier** out) {
  if (path == nullptr) return null_arg("path");
  if (out == nullptr) return null_arg("out");
  return guarded([&] {
    *out = new ps_classifier{load_classifier(path)};
    return PS_OK;
  });
}

void ps_classifier_free(ps_classifier* c) { delete c; }

size_t ps_classifier_input_dim(const ps_classifier* c) {
  return c == nullptr ? 0 : c->c.input_dim();
}

ps_status ps_suffix_load(const char* path, ps_suffix** out) {
  if (path == nullptr) return null_arg("path");
  if (out == nullptr) return null_arg("out");
  return guarded([&] {
    *out = new ps_suffix{load_suffix(path)};
    return PS_OK;
  });
}

void ps_suffix_free(ps_suffix* s) { delete s; }

size_t ps_suffix_rows(const ps_suffix* s) {
  return s == nullptr ? 0 : s->s.suffix.m;
}

ps_status ps_score_text(const ps_classifier* c, const ps_vocab* v,
                        const ps_embedding_table* t, const char* text,
                        double* out_score) {
  if (c == nullptr) return null_arg("classifier");
  if (v == nullptr) return null_arg("vocab");
  if (t == nullptr) return null_arg("table");
  if (text == nullptr) return null_arg("text");
  if (out_score == nullptr) return null_arg("out_score");
  return guarded([&] {
    *out_score = score(c->c, pool(embed_text(v, t, text)));
    return PS_OK;
  });
}

void ps_sanitize_params_default(ps_sanitize_params* p) {
  if (p == nullptr) return;
  SanitizeConfig defaults;
  p->eta = defaults.eta;
  p->p_top = defaults.p_top;
  p->gamma = defaults.gamma;
  p->max_iters = defaults.max_iters;
  p->use_adamw = defaults.use_adamw ? 1 : 0;
}

ps_status ps_modify_text(const ps_classifier* c, const ps_vocab* v,
                         const ps_embedding_table* t, const char* text,
                         const ps_sanitize_params* params,
                         char** out_report_json) {
  if (c == nullptr) return null_arg("classifier");
  if (v == nullptr) return null_arg("vocab");
  if (t == nullptr) return null_arg("table");
  if (text == nullptr) return null_arg("text");
  return guarded([&] {
    SanitizeConfig cfg;
    if (params != nullptr) {
      cfg.eta = params->eta;
      cfg.p_top = params->p_top;
      cfg.gamma = params->gamma;
      cfg.max_iters = params->max_iters;
      cfg.use_adamw = params->use_adamw != 0;
    }
    cfg.validate();
    SanitizeResult res = modify(c->c, embed_text(v, t, text), cfg);
    set_out_json(out_report_json, res.report.to_json());
    return res.report.status == SanitizeStatus::unresolved
               ? PS_SANITIZE_UNRESOLVED
               : PS_OK;
  });
}

ps_status ps_apply_suffix_text(const ps_classifier* c, const ps_vocab* v,
                               const ps_embedding_table* t, const ps_suffix* s,
                               const char* text, double gamma,
                               char** out_report_json) {
  if (c == nullptr) return null_arg("classifier");
  if (v == nullptr) return null_arg("vocab");
  if (t == nullptr) return null_arg("table");
  if (s == nullptr) return null_arg("suffix");
  if (text == nullptr) return null_arg("text");
  return guarded([&] {
    ApplyResult res =
        apply_suffix(c->c, embed_text(v, t, text), s->s.suffix, gamma);
    set_out_json(out_report_json,
                 nlohmann::json{{"applied", res.applied},
                                {"score_before", res.score_before},
                                {"score_after", res.score_after}});
    return res.applied && res.score_after >= gamma ? PS_SANITIZE_UNRESOLVED
                                                   : PS_OK;
  });
}

}  // extern "C"
