// Command line front end over the shared library. Every subcommand
// prints its summary JSON to stdout and diagnostics to stderr.
//
// Exit codes: 0 success, 2 prompt left unresolved, 3 suffix training did
// not converge, 4 file not found or unreadable, 5 invalid configuration
// or usage, 6 dimension mismatch, 1 any other failure.
#include <cstdio>
#include <string>

#include "CLI11.hpp"

#include "promptsan.h"

namespace {

int exit_code_for(ps_status st) {
  switch (st) {
    case PS_OK:
      return 0;
    case PS_SANITIZE_UNRESOLVED:
      return 2;
    case PS_TRAIN_NOT_CONVERGED:
      return 3;
    case PS_ERR_IO:
      return 4;
    case PS_ERR_CONFIG:
      return 5;
    case PS_ERR_DIMENSION:
      return 6;
    default:
      return 1;
  }
}

bool is_outcome(ps_status st) {
  return st == PS_OK || st == PS_SANITIZE_UNRESOLVED ||
         st == PS_TRAIN_NOT_CONVERGED;
}

int finish(ps_status st, char* out_json) {
  if (is_outcome(st)) {
    if (out_json != nullptr) {
      std::printf("%s\n", out_json);
    }
    if (st == PS_SANITIZE_UNRESOLVED) {
      std::fprintf(stderr, "prompt left unresolved\n");
    } else if (st == PS_TRAIN_NOT_CONVERGED) {
      std::fprintf(stderr, "suffix training did not converge\n");
    }
  } else {
    std::fprintf(stderr, "error: %s\n", ps_last_error());
  }
  ps_string_free(out_json);
  return exit_code_for(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt sanitization toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  std::string text;
  std::string method = "modify";
  std::string category;
  bool image = false;

  CLI::App* gen = app.add_subcommand(
      "gen-toydata", "Generate the synthetic vocabulary, embedding table, "
                     "generator, and prompt corpora");
  gen->add_option("--config", config_path, "Run configuration JSON")
      ->required();

  CLI::App* train_cls = app.add_subcommand(
      "train-classifier", "Train the text (or image) safety classifier");
  train_cls->add_option("--config", config_path, "Run configuration JSON")
      ->required();
  train_cls->add_option("--out", out_path, "Model output path")->required();
  train_cls->add_flag("--image", image,
                      "Train on generator features instead of pooled "
                      "prompt embeddings");

  CLI::App* train_sfx =
      app.add_subcommand("train-suffix", "Train the reusable safety suffix");
  train_sfx->add_option("--config", config_path, "Run configuration JSON")
      ->required();
  train_sfx->add_option("--out", out_path, "Suffix output path")->required();

  CLI::App* sanitize =
      app.add_subcommand("sanitize", "Sanitize one prompt and print the "
                                     "report");
  sanitize->add_option("--config", config_path, "Run configuration JSON")
      ->required();
  sanitize->add_option("--text", text, "Prompt text")->required();
  sanitize->add_option("--method", method,
                       "modify | suffix | mts | stm");
  sanitize->add_option("--category", category,
                       "Route to a category-specific suffix file");

  CLI::App* eval = app.add_subcommand(
      "eval", "Run a method over both corpora and summarize");
  eval->add_option("--config", config_path, "Run configuration JSON")
      ->required();
  eval->add_option("--method", method,
                   "none | modify | suffix | mts | stm | "
                   "zero_suffix_control");
  eval->add_option("--out", out_path, "Also write the summary JSON here");

  CLI::App* expf = app.add_subcommand(
      "export-features", "Dump penultimate classifier features per prompt");
  expf->add_option("--config", config_path, "Run configuration JSON")
      ->required();
  expf->add_option("--out", out_path, "JSONL output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 5;
  }

  char* out_json = nullptr;
  ps_status st = PS_ERR_UNKNOWN;
  if (gen->parsed()) {
    st = ps_gen_toydata(config_path.c_str(), &out_json);
  } else if (train_cls->parsed()) {
    st = ps_train_classifier(config_path.c_str(), image ? 1 : 0,
                             out_path.c_str(), &out_json);
  } else if (train_sfx->parsed()) {
    st = ps_train_suffix(config_path.c_str(), out_path.c_str(), &out_json);
  } else if (sanitize->parsed()) {
    st = ps_sanitize_text(config_path.c_str(), text.c_str(), method.c_str(),
                          category.c_str(), &out_json);
  } else if (eval->parsed()) {
    st = ps_evaluate(config_path.c_str(), method.c_str(), out_path.c_str(),
                     &out_json);
  } else if (expf->parsed()) {
    st = ps_export_features(config_path.c_str(), out_path.c_str(), &out_json);
  }
  return finish(st, out_json);
}
