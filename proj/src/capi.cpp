#include "psfedpalm.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include <json.hpp>

#include "psfed/checkpoint.hpp"
#include "psfed/eval.hpp"
#include "psfed/experiment.hpp"

namespace {

thread_local std::string t_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

psfed_status fail(psfed_status code, const std::string& message) {
  t_last_error = message;
  return code;
}

template <typename Fn>
psfed_status run_driver(const char* config_json, char** result_json, Fn&& driver) {
  if (result_json) *result_json = nullptr;
  if (!config_json) return fail(PSFED_ERROR_INVALID_ARGUMENT, "config_json is null");
  try {
    const nlohmann::json config = nlohmann::json::parse(config_json);
    const nlohmann::json result = driver(config);
    if (result_json) *result_json = dup_string(result.dump());
    t_last_error.clear();
    return PSFED_OK;
  } catch (const nlohmann::json::exception& e) {
    return fail(PSFED_ERROR_INVALID_ARGUMENT, std::string("bad config JSON: ") + e.what());
  } catch (const psfed::ConfigError& e) {
    return fail(PSFED_ERROR_INVALID_ARGUMENT, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(PSFED_ERROR_INVALID_ARGUMENT, e.what());
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    if (what.find("non-finite") != std::string::npos)
      return fail(PSFED_ERROR_NUMERIC, what);
    return fail(PSFED_ERROR_IO, what);
  } catch (const std::exception& e) {
    return fail(PSFED_ERROR_INTERNAL, e.what());
  }
}

}  // namespace

struct psfed_model {
  psfed::ParamVector params;
};

extern "C" {

const char* psfed_version(void) { return psfed::version_string(); }

const char* psfed_last_error(void) { return t_last_error.c_str(); }

void psfed_string_free(char* s) { std::free(s); }

psfed_status psfed_run_gen_data(const char* config_json, char** result_json) {
  return run_driver(config_json, result_json, psfed::cmd_gen_data);
}

psfed_status psfed_run_train(const char* config_json, char** result_json) {
  return run_driver(config_json, result_json, psfed::cmd_train);
}

psfed_status psfed_run_eval(const char* config_json, char** result_json) {
  return run_driver(config_json, result_json, psfed::cmd_eval);
}

psfed_status psfed_run_ablate(const char* config_json, char** result_json) {
  return run_driver(config_json, result_json, psfed::cmd_ablate);
}

psfed_status psfed_run_report(const char* config_json, char** result_json) {
  return run_driver(config_json, result_json, psfed::cmd_report);
}

psfed_status psfed_model_load(const char* checkpoint_path, psfed_model** out_model) {
  if (out_model) *out_model = nullptr;
  if (!checkpoint_path || !out_model)
    return fail(PSFED_ERROR_INVALID_ARGUMENT, "null argument to psfed_model_load");
  try {
    psfed::Checkpoint ckpt = psfed::load_checkpoint(checkpoint_path);
    *out_model = new psfed_model{std::move(ckpt.params)};
    t_last_error.clear();
    return PSFED_OK;
  } catch (const std::exception& e) {
    return fail(PSFED_ERROR_IO, e.what());
  }
}

void psfed_model_free(psfed_model* model) { delete model; }

int psfed_model_embedding_dim(const psfed_model* model) {
  return model ? model->params.arch.embedding_dim : 0;
}

int psfed_model_input_size(const psfed_model* model) {
  return model ? model->params.arch.input_height : 0;
}

psfed_status psfed_model_embed(const psfed_model* model, const double* pixels, int height,
                               int width, double* out_template, int out_len) {
  if (!model || !pixels || !out_template)
    return fail(PSFED_ERROR_INVALID_ARGUMENT, "null argument to psfed_model_embed");
  if (out_len < model->params.arch.embedding_dim)
    return fail(PSFED_ERROR_INVALID_ARGUMENT, "output buffer too small");
  try {
    psfed::ImageBatch batch;
    batch.count = 1;
    batch.height = height;
    batch.width = width;
    batch.pixels.assign(pixels, pixels + static_cast<std::size_t>(height) * width);
    const psfed::ForwardResult fwd =
        psfed::forward(model->params, batch, psfed::RunMode::Eval);
    std::memcpy(out_template, fwd.embedding.data(),
                sizeof(double) * model->params.arch.embedding_dim);
    t_last_error.clear();
    return PSFED_OK;
  } catch (const std::invalid_argument& e) {
    return fail(PSFED_ERROR_INVALID_ARGUMENT, e.what());
  } catch (const std::exception& e) {
    return fail(PSFED_ERROR_INTERNAL, e.what());
  }
}

double psfed_cosine_distance(const double* a, const double* b, int n) {
  return psfed::cosine_distance(std::span<const double>(a, static_cast<std::size_t>(n)),
                                std::span<const double>(b, static_cast<std::size_t>(n)));
}

}  // extern "C"
