#include <lec/trainer.hpp>

#include <array>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace lec {

// ---------------------------------------------------------------------------
// threading

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  const int k = std::max(1, std::min(threads, n));
  if (k == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errs(static_cast<size_t>(k));
  std::vector<std::thread> ws;
  ws.reserve(size_t(k));
  for (int w = 0; w < k; ++w)
    ws.emplace_back([&, w] {
      try {
        for (;;) {
          const int i = next.fetch_add(1);
          if (i >= n) break;
          fn(i);
        }
      } catch (...) {
        errs[size_t(w)] = std::current_exception();
      }
    });
  for (auto& t : ws) t.join();
  for (const auto& e : errs)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// checksum

uint32_t crc32(const void* data, size_t len) {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

// ---------------------------------------------------------------------------
// setup

namespace {

Eigen::MatrixXd load_text_bank(const Config& cfg, const Manifest& man) {
  (void)cfg;
  const std::string path = resolve_path(man.dir, man.text_bank);
  MatF bank = read_features(path);
  detail::require(bank.rows() == man.C + 1 && bank.cols() == man.d,
                  "text bank shape does not match the manifest's C and d");
  return bank.cast<double>();
}

// keeps at most T_max rows by even striding: row j comes from floor(j*T/T_max)
Eigen::MatrixXd subsample_rows(const Eigen::MatrixXd& x, int t_max) {
  const int64_t T = x.rows();
  if (T <= t_max) return x;
  Eigen::MatrixXd out(t_max, x.cols());
  for (int64_t j = 0; j < t_max; ++j) out.row(j) = x.row(j * T / t_max);
  return out;
}

}  // namespace

TrainState init_train_state(const Config& cfg, const Manifest& man) {
  validate_config(cfg);
  TrainState st;
  st.cfg = cfg;
  st.rng = Rng(cfg.seed);
  const Eigen::MatrixXd text = load_text_bank(cfg, man);
  st.model.build(ModelConfig::from(cfg, man.d, man.C), text, cfg.eta, st.rng);
  return st;
}

// ---------------------------------------------------------------------------
// optimization

std::vector<LossBreakdown> fit(TrainState& state, const Manifest& man, std::ostream* log) {
  const Config& cfg = state.cfg;
  Model<double>& model = state.model;
  const int n = int(man.videos.size());
  detail::require(n > 0, "fit: empty manifest");

  std::vector<Eigen::MatrixXd> X(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& v = man.videos[size_t(i)];
    X[size_t(i)] =
        subsample_rows(read_features(resolve_path(man.dir, v.path)).cast<double>(), cfg.T_max);
  }

  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const size_t np = model.params.t.size();
  std::vector<LossBreakdown> history;

  std::vector<int> ord(static_cast<size_t>(n));

  for (int epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    // each epoch's order is a pure function of that epoch's draws, so a
    // resumed run shuffles identically to an uninterrupted one
    for (int i = 0; i < n; ++i) ord[size_t(i)] = i;
    for (int i = n - 1; i >= 1; --i) {
      const int j = int(state.rng.uniform_int(0, i));
      std::swap(ord[size_t(i)], ord[size_t(j)]);
    }

    LossBreakdown acc;
    for (int b0 = 0; b0 < n; b0 += cfg.batch_size) {
      const int B = std::min(cfg.batch_size, n - b0);
      std::vector<std::vector<Eigen::MatrixXd>> gbuf(static_cast<size_t>(B));
      std::vector<LossBreakdown> lb(static_cast<size_t>(B));
      std::vector<Eigen::MatrixXd> faug(static_cast<size_t>(B));

      parallel_for(B, cfg.threads, [&](int i) {
        const int vi = ord[size_t(b0 + i)];
        const auto& v = man.videos[size_t(vi)];
        Tape<double> tape;
        Bound<double> bound = model.bind(tape, true);
        ForwardVars<double> f = model.forward(tape, bound, X[size_t(vi)], true, v.y, v.g);
        const double lt = f.l_total.val()(0, 0);
        if (!std::isfinite(lt))
          throw std::runtime_error("fit: non-finite loss on video '" + v.id + "' (epoch " +
                                   std::to_string(epoch) + ")");
        lb[size_t(i)].total = lt;
        lb[size_t(i)].aware = f.l_aware.val()(0, 0);
        if (model.cfg.use_vob) {
          lb[size_t(i)].agnostic = f.l_agnostic.val()(0, 0);
          lb[size_t(i)].gmm = f.l_gmm.val()(0, 0);
          lb[size_t(i)].reg = f.l_reg.val()(0, 0);
        }
        tape.backward(f.l_total);
        gbuf[size_t(i)].resize(np);
        for (size_t k = 0; k < np; ++k) gbuf[size_t(i)][k] = tape.grad_of(bound.v[k]);
        if (model.cfg.use_cmb) faug[size_t(i)] = f.f_aug.val();
      });

      // fixed-order reduction keeps the sum identical across thread counts
      model.params.zero_grad();
      for (int i = 0; i < B; ++i)
        for (size_t k = 0; k < np; ++k) model.params.t[k].grad += gbuf[size_t(i)][k];
      const double invB = 1.0 / double(B);
      for (size_t k = 0; k < np; ++k) model.params.t[k].grad *= invB;

      double sq = 0;
      for (size_t k = 0; k < np; ++k) sq += model.params.t[k].grad.squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > 10.0) {
        const double s = 10.0 / norm;
        for (size_t k = 0; k < np; ++k) model.params.t[k].grad *= s;
      }

      ++state.step;
      const double bc1 = 1.0 - std::pow(b1, double(state.step));
      const double bc2 = 1.0 - std::pow(b2, double(state.step));
      for (size_t k = 0; k < np; ++k) {
        auto& p = model.params.t[k];
        p.adam_m = b1 * p.adam_m + (1.0 - b1) * p.grad;
        p.adam_v = b2 * p.adam_v.array() + (1.0 - b2) * p.grad.array().square();
        Eigen::ArrayXXd update =
            (p.adam_m.array() / bc1) / ((p.adam_v.array() / bc2).sqrt() + eps);
        if (p.decay) update += cfg.weight_decay * p.value.array();
        p.value.array() -= cfg.lr * update;
      }

      if (model.cfg.use_cmb) {
        Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(model.bank.M.rows(), model.bank.M.cols());
        for (int i = 0; i < B; ++i) mean += faug[size_t(i)];
        mean *= invB;
        momentum_update(model.bank, mean);
      }

      for (int i = 0; i < B; ++i) {
        acc.total += lb[size_t(i)].total;
        acc.aware += lb[size_t(i)].aware;
        acc.agnostic += lb[size_t(i)].agnostic;
        acc.gmm += lb[size_t(i)].gmm;
        acc.reg += lb[size_t(i)].reg;
      }
    }

    acc.total /= n;
    acc.aware /= n;
    acc.agnostic /= n;
    acc.gmm /= n;
    acc.reg /= n;
    history.push_back(acc);
    state.epoch = epoch;
    if (log)
      (*log) << "epoch " << epoch << "/" << cfg.epochs << " loss " << acc.total << " (aware "
             << acc.aware << " agnostic " << acc.agnostic << " gmm " << acc.gmm << " reg "
             << acc.reg << ")\n";
  }
  return history;
}

// ---------------------------------------------------------------------------
// gradient audit

GradCheckReport grad_check(double h, double tol, bool corrupt) {
  ModelConfig mc;
  mc.d = 8;
  mc.C = 3;
  mc.heads = 4;
  mc.window_len = 4;
  mc.m_blocks = 1;

  Rng rng(1234);
  Eigen::MatrixXd text(mc.C + 1, mc.d);
  for (Index i = 0; i < text.rows(); ++i)
    for (Index j = 0; j < text.cols(); ++j) text(i, j) = 0.5 * rng.normal();

  Model<double> model;
  model.build(mc, text, 0.99, rng);

  const Index T = 6;
  Eigen::MatrixXd X(T, mc.d);
  for (Index i = 0; i < T; ++i)
    for (Index j = 0; j < mc.d; ++j) X(i, j) = rng.normal();
  const int y = 1, g = 2;

  Tape<double> tape;
  Bound<double> bound = model.bind(tape, true);
  ForwardVars<double> f = model.forward(tape, bound, X, true, y, g);
  tape.backward(f.l_total);
  std::vector<Eigen::MatrixXd> an;
  an.reserve(model.params.t.size());
  for (size_t k = 0; k < model.params.t.size(); ++k) an.push_back(tape.grad_of(bound.v[k]));
  if (corrupt) an[0](0, 0) += 1e-2;

  GradCheckReport rep;
  for (size_t k = 0; k < model.params.t.size(); ++k) {
    auto& p = model.params.t[k];
    for (Index i = 0; i < p.value.rows(); ++i) {
      for (Index j = 0; j < p.value.cols(); ++j) {
        const double orig = p.value(i, j);
        p.value(i, j) = orig + h;
        const double fp = model.loss_value(X, y, g);
        p.value(i, j) = orig - h;
        const double fm = model.loss_value(X, y, g);
        p.value(i, j) = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double a = an[k](i, j);
        const double rel =
            std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3});
        if (rel > rep.max_rel_err) {
          rep.max_rel_err = rel;
          rep.worst_tensor = p.name;
        }
      }
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

void put_u32(std::string& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(char((v >> (8 * i)) & 0xffu));
}
void put_u64(std::string& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(char((v >> (8 * i)) & 0xffu));
}
void put_f64(std::string& b, double d) {
  uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(b, v);
}
void put_str(std::string& b, const std::string& s) {
  put_u64(b, s.size());
  b += s;
}
void put_mat(std::string& b, const Eigen::MatrixXd& m) {
  put_u64(b, uint64_t(m.rows()));
  put_u64(b, uint64_t(m.cols()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) put_f64(b, m(i, j));
}

struct Reader {
  const std::string& b;
  size_t off = 0;

  void need(size_t n) const {
    if (off + n > b.size()) throw std::runtime_error("checkpoint: truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(b[off + size_t(i)])) << (8 * i);
    off += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(b[off + size_t(i)])) << (8 * i);
    off += 8;
    return v;
  }
  double f64() {
    const uint64_t v = u64();
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  std::string str() {
    const uint64_t n = u64();
    need(size_t(n));
    std::string s = b.substr(off, size_t(n));
    off += size_t(n);
    return s;
  }
  Eigen::MatrixXd mat() {
    const uint64_t r = u64(), c = u64();
    if (r > (1u << 24) || c > (1u << 24)) throw std::runtime_error("checkpoint: bad shape");
    Eigen::MatrixXd m(static_cast<Index>(r), static_cast<Index>(c));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = f64();
    return m;
  }
};

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
  std::string b;
  b += "LECK";
  put_u32(b, 1);
  put_str(b, config_to_json(state.cfg));
  put_u64(b, state.step);
  put_u32(b, uint32_t(state.epoch));
  put_str(b, state.rng.state());
  put_mat(b, state.model.f_text);
  put_u64(b, state.model.params.t.size());
  for (const auto& p : state.model.params.t) {
    put_str(b, p.name);
    b.push_back(p.decay ? char(1) : char(0));
    put_mat(b, p.value);
    put_mat(b, p.adam_m);
    put_mat(b, p.adam_v);
  }
  put_mat(b, state.model.bank.M);
  put_f64(b, state.model.bank.eta);
  put_u32(b, crc32(b.data(), b.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  f.write(b.data(), std::streamsize(b.size()));
  if (!f) throw std::runtime_error("checkpoint: short write to '" + path + "'");
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: missing checkpoint file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string b = ss.str();
  if (b.size() < 12 || b.compare(0, 4, "LECK") != 0)
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  {
    Reader tail{b, b.size() - 4};
    const uint32_t stored = tail.u32();
    if (stored != crc32(b.data(), b.size() - 4))
      throw std::runtime_error("checkpoint: checksum mismatch in '" + path + "'");
  }

  Reader r{b, 4};
  const uint32_t version = r.u32();
  if (version != 1)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

  TrainState st;
  st.cfg = parse_config(r.str(), path);
  validate_config(st.cfg);
  st.step = r.u64();
  st.epoch = int(r.u32());
  const std::string rng_state = r.str();
  const Eigen::MatrixXd text = r.mat();

  Rng scratch(0);
  st.model.build(ModelConfig::from(st.cfg, text.cols(), text.rows() - 1), text, st.cfg.eta,
                 scratch);
  const uint64_t nt = r.u64();
  if (nt != st.model.params.t.size())
    throw std::runtime_error("checkpoint: tensor count does not match the config");
  for (auto& p : st.model.params.t) {
    const std::string name = r.str();
    if (name != p.name) throw std::runtime_error("checkpoint: unexpected tensor '" + name + "'");
    r.need(1);
    const bool decay = r.b[r.off++] != 0;
    if (decay != p.decay) throw std::runtime_error("checkpoint: decay flag mismatch on " + name);
    Eigen::MatrixXd value = r.mat(), m = r.mat(), v = r.mat();
    if (value.rows() != p.value.rows() || value.cols() != p.value.cols())
      throw std::runtime_error("checkpoint: shape mismatch on " + name);
    p.value = value;
    p.adam_m = m;
    p.adam_v = v;
  }
  Eigen::MatrixXd bankM = r.mat();
  if (bankM.rows() != st.model.bank.M.rows() || bankM.cols() != st.model.bank.M.cols())
    throw std::runtime_error("checkpoint: bank shape mismatch");
  st.model.bank.M = bankM;
  st.model.bank.eta = r.f64();
  st.rng.set_state(rng_state);
  if (r.off != b.size() - 4) throw std::runtime_error("checkpoint: trailing bytes");
  return st;
}

}  // namespace lec
