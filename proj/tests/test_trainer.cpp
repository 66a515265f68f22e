#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <lec/trainer.hpp>

#include "testutil.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using lec::Config;
using lec::Manifest;
using lec::TrainState;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path = fs::temp_directory_path() / ("lec_trainer_" + std::to_string(rng()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

// one tiny synthetic dataset + config shared by the expensive cases
struct Fixture {
  TempDir td;
  Config cfg;
  Manifest man;

  Fixture() {
    cfg.synth.C = 2;
    cfg.synth.d = 8;
    cfg.synth.n_train = 12;
    cfg.synth.n_test = 4;
    cfg.seed = 11;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.T_max = 48;
    cfg.m_blocks = 1;
    cfg.window_len = 16;
    cfg.threads = 1;
    lec::synth_dataset(cfg.synth, cfg.seed, td.path.string());
    man = lec::load_manifest(td.file("train.json"));
  }
};

std::string slurp(const std::string& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

bool same_params(const lec::Model<double>& a, const lec::Model<double>& b) {
  if (a.params.t.size() != b.params.t.size()) return false;
  for (size_t k = 0; k < a.params.t.size(); ++k) {
    const auto &x = a.params.t[k], &y = b.params.t[k];
    if (x.name != y.name) return false;
    if ((x.value - y.value).cwiseAbs().maxCoeff() != 0.0) return false;
    if ((x.adam_m - y.adam_m).cwiseAbs().maxCoeff() != 0.0) return false;
    if ((x.adam_v - y.adam_v).cwiseAbs().maxCoeff() != 0.0) return false;
  }
  return (a.bank.M - b.bank.M).cwiseAbs().maxCoeff() == 0.0;
}

}  // namespace

TEST_CASE("crc32 matches the standard test vector") {
  const char* s = "123456789";
  CHECK(lec::crc32(s, 9) == 0xCBF43926u);
  CHECK(lec::crc32(s, 0) == 0x00000000u);
}

TEST_CASE("parallel_for covers every index exactly once and surfaces errors") {
  std::vector<std::atomic<int>> hits(257);
  for (auto& h : hits) h = 0;
  lec::parallel_for(257, 4, [&](int i) { hits[size_t(i)]++; });
  for (auto& h : hits) CHECK(h.load() == 1);

  lec::parallel_for(0, 4, [&](int) { FAIL("must not be called"); });

  testutil::expect_throw_containing(
      [&] {
        lec::parallel_for(8, 3, [](int i) {
          if (i == 5) throw std::runtime_error("boom at five");
        });
      },
      "boom at five");
}

TEST_CASE("full-model gradients match finite differences") {
  auto rep = lec::grad_check();
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-4);

  auto bad = lec::grad_check(1e-5, 1e-4, true);
  CHECK_FALSE(bad.pass);  // a planted gradient error must be caught
}

TEST_CASE("training is bit-deterministic") {
  Fixture fx;
  TrainState a = lec::init_train_state(fx.cfg, fx.man);
  TrainState b = lec::init_train_state(fx.cfg, fx.man);
  CHECK(same_params(a.model, b.model));  // identical init

  lec::fit(a, fx.man);
  lec::fit(b, fx.man);
  CHECK(a.step == b.step);
  CHECK(same_params(a.model, b.model));

  SUBCASE("a different seed gives different parameters") {
    Config c2 = fx.cfg;
    c2.seed = 12;
    TrainState c = lec::init_train_state(c2, fx.man);
    CHECK_FALSE(same_params(a.model, c.model));
  }
}

TEST_CASE("thread count does not change the result") {
  Fixture fx;
  fx.cfg.epochs = 1;
  Config c4 = fx.cfg;
  c4.threads = 4;
  TrainState a = lec::init_train_state(fx.cfg, fx.man);
  TrainState b = lec::init_train_state(c4, fx.man);
  lec::fit(a, fx.man);
  lec::fit(b, fx.man);
  CHECK(same_params(a.model, b.model));
}

TEST_CASE("zero learning rate freezes parameters but the bank still moves") {
  Fixture fx;
  fx.cfg.lr = 0.0;
  fx.cfg.epochs = 1;
  TrainState st = lec::init_train_state(fx.cfg, fx.man);
  const auto before = st.model.params;
  const Eigen::MatrixXd bank_before = st.model.bank.M;
  lec::fit(st, fx.man);
  for (size_t k = 0; k < before.t.size(); ++k)
    CHECK((st.model.params.t[k].value - before.t[k].value).cwiseAbs().maxCoeff() == 0.0);
  CHECK((st.model.bank.M - bank_before).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("loss breakdown components compose into the total") {
  Fixture fx;
  TrainState st = lec::init_train_state(fx.cfg, fx.man);
  auto hist = lec::fit(st, fx.man);
  REQUIRE(hist.size() == 2);
  for (const auto& h : hist) {
    CHECK(std::isfinite(h.total));
    const double expect =
        h.aware + h.agnostic + fx.cfg.lambda * h.gmm + fx.cfg.gamma * h.reg;
    CHECK(h.total == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("every branch toggle combination trains") {
  Fixture fx;
  fx.cfg.epochs = 1;
  for (bool vob : {true, false}) {
    for (bool cmb : {true, false}) {
      Config c = fx.cfg;
      c.use_vob = vob;
      c.use_cmb = cmb;
      TrainState st = lec::init_train_state(c, fx.man);
      auto hist = lec::fit(st, fx.man);
      REQUIRE(hist.size() == 1);
      CHECK(std::isfinite(hist[0].total));
      if (!vob) {
        CHECK(hist[0].agnostic == 0.0);
        CHECK(hist[0].gmm == 0.0);
        CHECK(hist[0].reg == 0.0);
      }
    }
  }
}

TEST_CASE("gating a loss term removes exactly its contribution") {
  Fixture fx;
  Config c = fx.cfg;
  c.use_gmm_loss = false;
  c.use_reg_loss = false;
  TrainState st = lec::init_train_state(c, fx.man);
  auto hist = lec::fit(st, fx.man);
  // the components are still measured for the log, but the total excludes them
  CHECK(hist[0].gmm > 0.0);
  CHECK(hist[0].total == doctest::Approx(hist[0].aware + hist[0].agnostic).epsilon(1e-9));
}

TEST_CASE("checkpoints round-trip byte-identically") {
  Fixture fx;
  fx.cfg.epochs = 1;
  TrainState st = lec::init_train_state(fx.cfg, fx.man);
  lec::fit(st, fx.man);

  const std::string p1 = fx.td.file("a.ckpt"), p2 = fx.td.file("b.ckpt");
  lec::save_checkpoint(st, p1);
  TrainState re = lec::load_checkpoint(p1);
  lec::save_checkpoint(re, p2);
  CHECK(slurp(p1) == slurp(p2));
  CHECK(re.step == st.step);
  CHECK(re.epoch == st.epoch);
  CHECK(re.rng.state() == st.rng.state());
  CHECK(same_params(re.model, st.model));
}

TEST_CASE("resuming from a checkpoint matches uninterrupted training bit-for-bit") {
  Fixture fx;
  fx.cfg.epochs = 4;
  TrainState full = lec::init_train_state(fx.cfg, fx.man);
  lec::fit(full, fx.man);

  Config half = fx.cfg;
  half.epochs = 2;
  TrainState first = lec::init_train_state(half, fx.man);
  lec::fit(first, fx.man);
  first.cfg.epochs = 4;  // extend the schedule, then continue
  const std::string p = fx.td.file("resume.ckpt");
  lec::save_checkpoint(first, p);
  TrainState second = lec::load_checkpoint(p);
  lec::fit(second, fx.man);

  CHECK(second.step == full.step);
  CHECK(second.epoch == full.epoch);
  CHECK(same_params(second.model, full.model));
}

TEST_CASE("corrupted or missing checkpoints are rejected") {
  Fixture fx;
  fx.cfg.epochs = 0;  // init only
  TrainState st = lec::init_train_state(fx.cfg, fx.man);
  const std::string p = fx.td.file("c.ckpt");

  SUBCASE("missing file") {
    testutil::expect_throw_containing([&] { lec::load_checkpoint(fx.td.file("nope.ckpt")); },
                                      "missing checkpoint");
  }
  SUBCASE("flipped byte fails the checksum") {
    lec::save_checkpoint(st, p);
    std::string bytes = slurp(p);
    bytes[bytes.size() / 2] = char(bytes[bytes.size() / 2] ^ 0x40);
    std::ofstream(p, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
    testutil::expect_throw_containing([&] { lec::load_checkpoint(p); }, "checksum");
  }
  SUBCASE("truncation fails the checksum") {
    lec::save_checkpoint(st, p);
    std::string bytes = slurp(p);
    bytes.resize(bytes.size() - 9);
    std::ofstream(p, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
    testutil::expect_throw_containing([&] { lec::load_checkpoint(p); }, "checksum");
  }
  SUBCASE("wrong magic") {
    std::ofstream(p, std::ios::binary).write("JUNKJUNKJUNKJUNK", 16);
    testutil::expect_throw_containing([&] { lec::load_checkpoint(p); }, "magic");
  }
}

TEST_CASE("the loss goes down on an easy dataset") {
  Fixture fx;
  fx.cfg.lr = 1e-3;
  fx.cfg.epochs = 8;
  TrainState st = lec::init_train_state(fx.cfg, fx.man);
  auto hist = lec::fit(st, fx.man);
  REQUIRE(hist.size() == 8);
  CHECK(hist.back().total < hist.front().total);
}
