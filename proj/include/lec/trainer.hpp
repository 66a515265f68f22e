#pragma once

// Training loop: AdamW with decoupled weight decay, global-norm gradient
// clipping, deterministic batching, momentum updates of the memory bank,
// checkpointing with an integrity checksum, and a finite-difference audit
// of the whole backward pass.

#include <lec/featio.hpp>
#include <lec/model.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace lec {

struct LossBreakdown {
  double total = 0, aware = 0, agnostic = 0, gmm = 0, reg = 0;
};

struct TrainState {
  Config cfg;
  Model<double> model;
  Rng rng;
  uint64_t step = 0;
  int epoch = 0;  // epochs completed
};

// Builds the model from the manifest's text bank with a seeded parameter
// draw; the same stream then drives epoch shuffles.
TrainState init_train_state(const Config& cfg, const Manifest& man);

// Runs epochs state.epoch+1 .. cfg.epochs; returns one loss breakdown per
// epoch (mean over that epoch's videos). Optional log stream gets one line
// per epoch.
std::vector<LossBreakdown> fit(TrainState& state, const Manifest& man,
                               std::ostream* log = nullptr);

// Central finite differences over every parameter of a small model vs the
// tape's backward pass. `corrupt` injects a deliberate gradient error to
// prove the audit can fail.
struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_tensor;
  bool pass = false;
};
GradCheckReport grad_check(double h = 1e-5, double tol = 1e-4, bool corrupt = false);

// Checkpoints carry the resolved config, text bank, all tensors with their
// optimizer moments, the memory bank, the RNG state, and a trailing CRC-32.
void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

// Runs fn(0..n-1) across up to `threads` workers; any thread may run any
// index, so fn must only touch per-index state.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

uint32_t crc32(const void* data, size_t len);

}  // namespace lec
