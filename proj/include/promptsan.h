/* C interface to the prompt sanitization library.
 *
 * Every function returns a ps_status. On failure ps_last_error() holds a
 * human-readable message for the calling thread. Strings returned through
 * char** parameters are heap-allocated; release them with ps_string_free().
 *
 * PS_SANITIZE_UNRESOLVED and PS_TRAIN_NOT_CONVERGED are outcomes rather
 * than failures: the output JSON is still populated and artifacts are
 * still written.
 */
#ifndef PROMPTSAN_H
#define PROMPTSAN_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define PS_API __declspec(dllexport)
#else
#define PS_API __attribute__((visibility("default")))
#endif

typedef enum ps_status {
  PS_OK = 0,
  PS_ERR_IO = 1,
  PS_ERR_FORMAT = 2,
  PS_ERR_CONFIG = 3,
  PS_ERR_DIMENSION = 4,
  PS_ERR_VOCAB = 5,
  PS_ERR_EMPTY_PROMPT = 6,
  PS_ERR_DATA = 7,
  PS_ERR_ARCHITECTURE = 8,
  PS_ERR_UNKNOWN = 9,
  PS_SANITIZE_UNRESOLVED = 10,
  PS_TRAIN_NOT_CONVERGED = 11
} ps_status;

PS_API const char* ps_version(void);

/* Message from the most recent failing call on this thread; empty string
 * when the last call succeeded. The pointer stays valid until the next
 * library call on the same thread. */
PS_API const char* ps_last_error(void);

PS_API void ps_string_free(char* s);

/* ---- Pipeline commands -------------------------------------------------
 * Each command reads a JSON run configuration from config_path, performs
 * the same work as the CLI subcommand of the same name, and returns its
 * summary JSON through out_json (may be NULL if the caller does not want
 * it). All artifact locations come from the configuration file. */

PS_API ps_status ps_gen_toydata(const char* config_path, char** out_json);

/* image = 0 trains on pooled prompt embeddings, image != 0 on generator
 * features. Writes the model to out_model_path and the loss curve to
 * out_model_path + ".loss.json". */
PS_API ps_status ps_train_classifier(const char* config_path, int image,
                                     const char* out_model_path,
                                     char** out_json);

/* Writes the suffix to out_suffix_path and a per-round trace to
 * out_suffix_path + ".trace.jsonl". Returns PS_TRAIN_NOT_CONVERGED when
 * the held-out thresholds were not reached within the round budget. */
PS_API ps_status ps_train_suffix(const char* config_path,
                                 const char* out_suffix_path,
                                 char** out_json);

/* method is one of "modify", "suffix", "modify_then_suffix" ("mts"),
 * "suffix_then_modify" ("stm"). category may be NULL or empty; when set
 * it selects a suffix file through the config's routing table. Returns
 * PS_SANITIZE_UNRESOLVED when the prompt still scores at or above the
 * threshold afterwards. */
PS_API ps_status ps_sanitize_text(const char* config_path, const char* text,
                                  const char* method, const char* category,
                                  char** out_json);

/* method additionally accepts "none" and "zero_suffix_control". Writes
 * the summary JSON to out_path when out_path is non-NULL and non-empty. */
PS_API ps_status ps_evaluate(const char* config_path, const char* method,
                             const char* out_path, char** out_json);

/* Writes JSON lines of penultimate classifier features per prompt. */
PS_API ps_status ps_export_features(const char* config_path,
                                    const char* out_path, char** out_json);

/* ---- Handles over individual artifacts --------------------------------- */

typedef struct ps_vocab ps_vocab;
typedef struct ps_embedding_table ps_embedding_table;
typedef struct ps_classifier ps_classifier;
typedef struct ps_suffix ps_suffix;

PS_API ps_status ps_vocab_load(const char* path, ps_vocab** out);
PS_API void ps_vocab_free(ps_vocab* v);
PS_API size_t ps_vocab_size(const ps_vocab* v);

PS_API ps_status ps_embedding_table_load(const char* path,
                                         ps_embedding_table** out);
PS_API void ps_embedding_table_free(ps_embedding_table* t);
PS_API size_t ps_embedding_table_dim(const ps_embedding_table* t);

PS_API ps_status ps_classifier_load(const char* path, ps_classifier** out);
PS_API void ps_classifier_free(ps_classifier* c);
PS_API size_t ps_classifier_input_dim(const ps_classifier* c);

PS_API ps_status ps_suffix_load(const char* path, ps_suffix** out);
PS_API void ps_suffix_free(ps_suffix* s);
PS_API size_t ps_suffix_rows(const ps_suffix* s);

/* Tokenizes, embeds, mean-pools, and scores one prompt. */
PS_API ps_status ps_score_text(const ps_classifier* c, const ps_vocab* v,
                               const ps_embedding_table* t, const char* text,
                               double* out_score);

typedef struct ps_sanitize_params {
  double eta;
  double p_top;
  double gamma;
  size_t max_iters;
  int use_adamw;
} ps_sanitize_params;

PS_API void ps_sanitize_params_default(ps_sanitize_params* p);

/* Masked gradient editing of one prompt; the report JSON mirrors the CLI
 * output. Returns PS_SANITIZE_UNRESOLVED when the edit did not push the
 * score below gamma. */
PS_API ps_status ps_modify_text(const ps_classifier* c, const ps_vocab* v,
                                const ps_embedding_table* t, const char* text,
                                const ps_sanitize_params* params,
                                char** out_report_json);

/* Appends the suffix when the prompt is flagged at gamma. */
PS_API ps_status ps_apply_suffix_text(const ps_classifier* c,
                                      const ps_vocab* v,
                                      const ps_embedding_table* t,
                                      const ps_suffix* s, const char* text,
                                      double gamma, char** out_report_json);

#ifdef __cplusplus
}
#endif

#endif /* PROMPTSAN_H */
