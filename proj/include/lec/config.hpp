#pragma once

// Run configuration: a flat JSON object with dotted key names. Unknown keys
// are rejected; every run writes back its fully-resolved snapshot.

#include <lec/featio.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lec {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Config {
  // optimization; lr and batch_size are sized for the bundled synthetic
  // corpus (a few hundred short videos), where larger batches starve the
  // 10-epoch budget of update steps
  double lr = 1.5e-3;
  int batch_size = 10;
  int epochs = 10;
  double weight_decay = 0.01;
  uint64_t seed = 0;
  int T_max = 256;
  double eta = 0.99;
  int m_blocks = 4;
  bool use_vob = true;
  bool use_cmb = true;
  bool use_gmm_loss = true;
  bool use_reg_loss = true;
  int threads = 1;

  // model
  int window_len = 64;     // "encoder.window_len"
  double gmm_beta = 0.7;   // "gmm.beta"
  double lambda = 0.3;     // "loss.lambda"
  double gamma = 1e-4;     // "loss.gamma"

  // inference
  std::string score_source = "sm";  // "infer.score_source": sm | aware
  double r_cls = 0.1;               // "infer.r_cls"
  double r_ano = 0.2;               // "infer.r_ano"
  double nms_iou = 0.5;             // "infer.nms_iou"
  int gap = 0;                      // "infer.gap"

  // synthetic data ("synth.*")
  SynthConfig synth;

  // data paths ("data.*")
  std::string train_manifest;
  std::string test_manifest;
};

// Parse a flat JSON config file / string. Missing keys keep defaults.
Config load_config(const std::string& path);
Config parse_config(const std::string& json_text, const std::string& origin);

// Fully-resolved snapshot, keys in canonical order.
std::string config_to_json(const Config& c);

void validate_config(const Config& c);

}  // namespace lec
