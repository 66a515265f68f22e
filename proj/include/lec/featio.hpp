#pragma once

// On-disk data model: LECF binary feature files, JSON manifests, and the
// seeded synthetic dataset generator used for end-to-end verification.

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace lec {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>;

// 1-based inclusive snippet interval with its anomaly category (g >= 1).
struct Instance {
  int64_t s = 0;
  int64_t e = 0;
  int g = 0;
};

struct VideoEntry {
  std::string id;
  std::string path;  // feature file; relative paths resolve against the manifest dir
  int y = 0;         // 0 normal, 1 anomalous
  int g = 0;         // 0 normal, 1..C anomaly category
  double fps = 30.0;
  int snippet_len = 16;
  int64_t T = 0;     // snippet count, filled from the feature file header on load
  std::vector<Instance> instances;  // evaluation splits only
  std::vector<int> frame_labels;    // per-snippet 0/1, evaluation splits only
};

struct Manifest {
  std::string split;  // "train" or "test"
  int C = 0;
  int d = 0;
  std::string text_bank;  // path to a (C+1) x d LECF file
  std::vector<VideoEntry> videos;
  std::string dir;  // directory the manifest was loaded from / will be saved to
};

// LECF: magic "LECF", u32 version = 1, u32 T, u32 d, u32 reserved = 0,
// then T*d little-endian f32 values in row-major order.
void write_features(const MatF& data, const std::string& path);
MatF read_features(const std::string& path);

// Reads only the 20-byte header.
void peek_features(const std::string& path, int64_t* T, int64_t* d);

std::string resolve_path(const std::string& dir, const std::string& path);

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& m, const std::string& path);

struct SynthConfig {
  int C = 4;
  int d = 32;
  int n_train = 200;
  int n_test = 50;
  double noise = 0.25;
  double rho = 0.8;
  double fps = 30.0;
  int snippet_len = 16;
};

// Writes features/, text_bank.lecf, train.json and test.json under out_dir.
// Pure function of (cfg, seed): reruns are byte-identical.
void synth_dataset(const SynthConfig& cfg, uint64_t seed, const std::string& out_dir);

}  // namespace lec
