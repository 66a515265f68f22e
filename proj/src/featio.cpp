#include <lec/featio.hpp>
#include <lec/rng.hpp>

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace lec {

namespace {

constexpr char kMagic[4] = {'L', 'E', 'C', 'F'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error(path + ": truncated header while reading " + what);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw std::runtime_error(path + ": " + msg);
}

}  // namespace

void write_features(const MatF& data, const std::string& path) {
  if (data.rows() < 1 || data.cols() < 1)
    fail(path, "feature matrix must be at least 1x1");
  if (!data.allFinite()) fail(path, "feature matrix contains NaN or Inf");

  std::ofstream os(path, std::ios::binary);
  if (!os) fail(path, "cannot open for writing");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<uint32_t>(data.rows()));
  put_u32(os, static_cast<uint32_t>(data.cols()));
  put_u32(os, 0);  // reserved

  // row-major payload
  std::vector<float> row(static_cast<size_t>(data.cols()));
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.cols(); ++j) row[static_cast<size_t>(j)] = data(i, j);
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!os) fail(path, "write failure");
}

MatF read_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open for reading");

  char magic[4];
  if (!is.read(magic, 4)) fail(path, "truncated header");
  if (std::memcmp(magic, kMagic, 4) != 0) fail(path, "bad magic");
  const uint32_t version = get_u32(is, path, "version");
  if (version != kVersion)
    fail(path, "unsupported version " + std::to_string(version));
  const uint32_t T = get_u32(is, path, "T");
  const uint32_t d = get_u32(is, path, "d");
  const uint32_t reserved = get_u32(is, path, "reserved");
  if (T < 1 || d < 1) fail(path, "invalid dimensions");
  if (reserved != 0) fail(path, "nonzero reserved field");

  const size_t n = size_t(T) * size_t(d);
  std::vector<float> buf(n);
  if (!is.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(n * sizeof(float))))
    fail(path, "truncated payload");
  is.peek();
  if (!is.eof()) fail(path, "trailing bytes after payload");

  MatF m(T, d);
  for (uint32_t i = 0; i < T; ++i)
    for (uint32_t j = 0; j < d; ++j) m(i, j) = buf[size_t(i) * d + j];
  if (!m.allFinite()) fail(path, "payload contains NaN or Inf");
  return m;
}

void peek_features(const std::string& path, int64_t* T, int64_t* d) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open for reading");
  char magic[4];
  if (!is.read(magic, 4)) fail(path, "truncated header");
  if (std::memcmp(magic, kMagic, 4) != 0) fail(path, "bad magic");
  const uint32_t version = get_u32(is, path, "version");
  if (version != kVersion)
    fail(path, "unsupported version " + std::to_string(version));
  *T = get_u32(is, path, "T");
  *d = get_u32(is, path, "d");
}

std::string resolve_path(const std::string& dir, const std::string& path) {
  fs::path p(path);
  if (p.is_absolute() || dir.empty()) return path;
  return (fs::path(dir) / p).string();
}

Manifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(path, "cannot open manifest");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    fail(path, std::string("JSON parse error: ") + e.what());
  }

  Manifest m;
  m.dir = fs::path(path).parent_path().string();
  try {
    m.split = j.at("split").get<std::string>();
    m.C = j.at("C").get<int>();
    m.d = j.at("d").get<int>();
    m.text_bank = j.at("text_bank").get<std::string>();
    if (m.split != "train" && m.split != "test")
      fail(path, "split must be 'train' or 'test'");
    if (m.C < 1 || m.d < 1) fail(path, "C and d must be positive");

    for (const auto& v : j.at("videos")) {
      VideoEntry e;
      e.id = v.at("id").get<std::string>();
      e.path = v.at("path").get<std::string>();
      e.y = v.at("y").get<int>();
      e.g = v.at("g").get<int>();
      if (v.contains("fps")) e.fps = v.at("fps").get<double>();
      if (v.contains("snippet_len")) e.snippet_len = v.at("snippet_len").get<int>();
      if (e.y != 0 && e.y != 1) fail(path, e.id + ": y must be 0 or 1");
      if (e.g < 0 || e.g > m.C) fail(path, e.id + ": g out of range");
      if ((e.y == 0) != (e.g == 0))
        fail(path, e.id + ": label inconsistency (y = 0 iff g = 0)");
      if (e.fps <= 0) fail(path, e.id + ": fps must be positive");
      if (e.snippet_len < 1) fail(path, e.id + ": snippet_len must be positive");

      int64_t T = 0, d = 0;
      peek_features(resolve_path(m.dir, e.path), &T, &d);
      if (d != m.d)
        fail(path, e.id + ": feature dimension " + std::to_string(d) +
                       " does not match manifest d=" + std::to_string(m.d));
      e.T = T;

      if (v.contains("instances")) {
        for (const auto& inst : v.at("instances")) {
          if (!inst.is_array() || inst.size() != 3)
            fail(path, e.id + ": instance must be [s, e, g]");
          Instance in;
          in.s = inst[0].get<int64_t>();
          in.e = inst[1].get<int64_t>();
          in.g = inst[2].get<int>();
          if (in.s > in.e) fail(path, e.id + ": empty interval");
          if (in.s < 1 || in.e > T) fail(path, e.id + ": instance out of range");
          if (in.g < 1 || in.g > m.C) fail(path, e.id + ": instance category out of range");
          e.instances.push_back(in);
        }
      }
      if (v.contains("frame_labels")) {
        for (const auto& fl : v.at("frame_labels")) {
          const int b = fl.get<int>();
          if (b != 0 && b != 1) fail(path, e.id + ": frame labels must be 0/1");
          e.frame_labels.push_back(b);
        }
        if (int64_t(e.frame_labels.size()) != T)
          fail(path, e.id + ": frame_labels length does not match T");
      }
      m.videos.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    fail(path, std::string("manifest schema violation: ") + ex.what());
  }
  return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
  json j;
  j["split"] = m.split;
  j["C"] = m.C;
  j["d"] = m.d;
  j["text_bank"] = m.text_bank;
  j["videos"] = json::array();
  for (const auto& v : m.videos) {
    json e;
    e["id"] = v.id;
    e["path"] = v.path;
    e["y"] = v.y;
    e["g"] = v.g;
    e["fps"] = v.fps;
    e["snippet_len"] = v.snippet_len;
    if (!v.instances.empty()) {
      json arr = json::array();
      for (const auto& in : v.instances) arr.push_back({in.s, in.e, in.g});
      e["instances"] = arr;
    }
    if (!v.frame_labels.empty()) e["frame_labels"] = v.frame_labels;
    j["videos"].push_back(std::move(e));
  }
  std::ofstream os(path);
  if (!os) fail(path, "cannot open for writing");
  os << j.dump(2) << "\n";
  if (!os) fail(path, "write failure");
}

namespace {

Eigen::VectorXd random_unit(Rng& rng, int d) {
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.normal();
  return v / v.norm();
}

}  // namespace

void synth_dataset(const SynthConfig& cfg, uint64_t seed, const std::string& out_dir) {
  if (cfg.C < 2) throw std::runtime_error("synth: C must be >= 2");
  if (cfg.d < 8) throw std::runtime_error("synth: d must be >= 8");
  if (cfg.n_train < 1 || cfg.n_test < 1)
    throw std::runtime_error("synth: need at least one video per split");

  fs::create_directories(fs::path(out_dir) / "features");
  Rng rng(seed);

  // category prototypes: unit vectors with pairwise cosine <= 0.3
  std::vector<Eigen::VectorXd> proto;
  for (int c = 0; c <= cfg.C; ++c) {
    int attempts = 0;
    for (;;) {
      if (++attempts > 1000)
        throw std::runtime_error("synth: could not separate prototypes after 1000 resamples");
      Eigen::VectorXd u = random_unit(rng, cfg.d);
      bool ok = true;
      for (const auto& p : proto)
        if (u.dot(p) > 0.3) { ok = false; break; }
      if (ok) { proto.push_back(std::move(u)); break; }
    }
  }

  // text bank: prototypes plus small noise, re-normalized
  MatF bank(cfg.C + 1, cfg.d);
  for (int c = 0; c <= cfg.C; ++c) {
    Eigen::VectorXd row = proto[static_cast<size_t>(c)];
    for (int i = 0; i < cfg.d; ++i) row(i) += 0.01 * rng.normal();
    row /= row.norm();
    for (int i = 0; i < cfg.d; ++i) bank(c, i) = static_cast<float>(row(i));
  }
  write_features(bank, (fs::path(out_dir) / "text_bank.lecf").string());

  auto make_split = [&](const std::string& split, int n) {
    Manifest man;
    man.split = split;
    man.C = cfg.C;
    man.d = cfg.d;
    man.text_bank = "text_bank.lecf";
    man.dir = out_dir;

    int anom_count = 0;
    for (int k = 0; k < n; ++k) {
      VideoEntry e;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s_%04d", split.c_str(), k);
      e.id = buf;
      e.path = std::string("features/") + e.id + ".lecf";
      e.fps = cfg.fps;
      e.snippet_len = cfg.snippet_len;

      const int64_t T = rng.uniform_int(64, 256);
      e.T = T;
      const bool anomalous = (k % 2 == 1);
      e.y = anomalous ? 1 : 0;
      e.g = anomalous ? 1 + (anom_count++ % cfg.C) : 0;

      std::vector<Instance> intervals;
      if (anomalous) {
        const int64_t want = rng.uniform_int(1, 3);
        for (int64_t i = 0; i < want; ++i) {
          const double frac = 0.05 + 0.10 * rng.uniform();
          const int64_t len = std::max<int64_t>(1, int64_t(std::llround(frac * double(T))));
          // rejection placement with a 2-snippet margin between intervals
          for (int attempt = 0; attempt < 100; ++attempt) {
            const int64_t s = rng.uniform_int(1, T - len + 1);
            const int64_t end = s + len - 1;
            bool clash = false;
            for (const auto& iv : intervals)
              if (s <= iv.e + 2 && end >= iv.s - 2) { clash = true; break; }
            if (!clash) {
              intervals.push_back({s, end, e.g});
              break;
            }
          }
        }
        std::sort(intervals.begin(), intervals.end(),
                  [](const Instance& a, const Instance& b) { return a.s < b.s; });
      }

      std::vector<int> labels(static_cast<size_t>(T), 0);
      for (const auto& iv : intervals)
        for (int64_t t = iv.s; t <= iv.e; ++t) labels[static_cast<size_t>(t - 1)] = 1;

      Eigen::VectorXd mix;
      if (anomalous) {
        mix = (1.0 - cfg.rho) * proto[0] + cfg.rho * proto[static_cast<size_t>(e.g)];
        mix /= mix.norm();
      }
      MatF X(T, cfg.d);
      for (int64_t t = 0; t < T; ++t) {
        const Eigen::VectorXd& base = labels[static_cast<size_t>(t)] ? mix : proto[0];
        for (int i = 0; i < cfg.d; ++i)
          X(t, i) = static_cast<float>(base(i) + cfg.noise * rng.normal());
      }
      write_features(X, resolve_path(out_dir, e.path));

      if (split == "test") {
        e.instances = intervals;
        e.frame_labels = labels;
      }
      man.videos.push_back(std::move(e));
    }
    save_manifest(man, (fs::path(out_dir) / (split + ".json")).string());
  };

  make_split("train", cfg.n_train);
  make_split("test", cfg.n_test);
}

}  // namespace lec
