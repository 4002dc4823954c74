#include "grpolab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

#include "grpolab/rng.hpp"
#include "grpolab/util.hpp"

namespace grpolab::model {

namespace {

constexpr double kRmsEps = 1e-5;

// y = W x, W row-major [rows x cols]
inline void matvec(const double* w, const double* x, double* y, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double* row = w + static_cast<size_t>(r) * cols;
    double acc = 0.0;
    for (int c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

// dx += W^T dy
inline void matvec_t_acc(const double* w, const double* dy, double* dx, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double dyr = dy[r];
    if (dyr == 0.0) continue;
    const double* row = w + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) dx[c] += row[c] * dyr;
  }
}

// dW += dy (outer) x
inline void outer_acc(double* dw, const double* dy, const double* x, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double dyr = dy[r];
    if (dyr == 0.0) continue;
    double* row = dw + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) row[c] += dyr * x[c];
  }
}

// y = x / sqrt(mean(x^2) + eps); returns the inverse norm for the backward.
inline double rmsnorm_fwd(const double* x, double* y, int n) {
  double ms = 0.0;
  for (int i = 0; i < n; ++i) ms += x[i] * x[i];
  ms = ms / n + kRmsEps;
  const double inv = 1.0 / std::sqrt(ms);
  for (int i = 0; i < n; ++i) y[i] = x[i] * inv;
  return inv;
}

// dx += dy*inv - x * inv^3/n * dot(dy, x)
inline void rmsnorm_bwd_acc(const double* dy, const double* x, double inv, double* dx, int n) {
  double dot = 0.0;
  for (int i = 0; i < n; ++i) dot += dy[i] * x[i];
  const double coeff = dot * inv * inv * inv / n;
  for (int i = 0; i < n; ++i) dx[i] += dy[i] * inv - coeff * x[i];
}

// SiLU activation; smooth, so finite-difference gradient checks are clean
// everywhere (a ReLU kink within h of zero breaks them).
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

inline double log_softmax_at(const std::vector<double>& logits, int idx) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return logits[static_cast<size_t>(idx)] - mx - std::log(sum);
}

struct BlockOffsets {
  size_t wte = 0, wpe = 0, lm_head = 0;
  std::vector<size_t> wq, wk, wv, wo, w1, w2;

  static BlockOffsets from(const ParamLayout& layout, int n_layer) {
    BlockOffsets off;
    off.wte = layout.block("wte").offset;
    off.wpe = layout.block("wpe").offset;
    off.lm_head = layout.block("lm_head").offset;
    for (int l = 0; l < n_layer; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      off.wq.push_back(layout.block(p + "attn_wq").offset);
      off.wk.push_back(layout.block(p + "attn_wk").offset);
      off.wv.push_back(layout.block(p + "attn_wv").offset);
      off.wo.push_back(layout.block(p + "attn_wo").offset);
      off.w1.push_back(layout.block(p + "mlp_fc1").offset);
      off.w2.push_back(layout.block(p + "mlp_fc2").offset);
    }
    return off;
  }
};

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
  if (d_model < 1 || n_head < 1 || n_layer < 1)
    throw ConfigError("model: dimensions must be positive");
  if (d_model % n_head != 0) throw ConfigError("model: d_model must be divisible by n_head");
  if (context_window < 2) throw ConfigError("model: context_window must be >= 2");
}

ParamLayout ParamLayout::for_config(const ModelConfig& cfg) {
  cfg.validate();
  ParamLayout layout;
  size_t cursor = 0;
  auto add = [&](std::string name, size_t rows, size_t cols) {
    layout.blocks.push_back({std::move(name), cursor, rows, cols});
    cursor += rows * cols;
  };
  const auto v = static_cast<size_t>(cfg.vocab_size);
  const auto d = static_cast<size_t>(cfg.d_model);
  const auto f = static_cast<size_t>(cfg.d_mlp());
  add("wte", v, d);
  add("wpe", static_cast<size_t>(cfg.context_window), d);
  add("lm_head", v, d);
  for (int l = 0; l < cfg.n_layer; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "attn_wq", d, d);
    add(p + "attn_wk", d, d);
    add(p + "attn_wv", d, d);
    add(p + "attn_wo", d, d);
    add(p + "mlp_fc1", f, d);
    add(p + "mlp_fc2", d, f);
  }
  layout.total = cursor;
  return layout;
}

const ParamBlock& ParamLayout::block(std::string_view name) const {
  for (const auto& b : blocks)
    if (b.name == name) return b;
  throw ContractError("ParamLayout: no block named '" + std::string(name) + "'");
}

Policy Policy::zeros(const ModelConfig& cfg) {
  Policy p;
  p.cfg = cfg;
  p.layout = ParamLayout::for_config(cfg);
  p.values.assign(p.layout.total, 0.0);
  return p;
}

Policy Policy::random_init(const ModelConfig& cfg, uint64_t seed, double init_std) {
  Policy p = zeros(cfg);
  Rng rng(seed);
  for (double& v : p.values) {
    // Box-Muller; std::normal_distribution is implementation-defined.
    const double u1 = 1.0 - rng.uniform();
    const double u2 = rng.uniform();
    v = init_std * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  return p;
}

std::span<double> Policy::block(std::string_view name) {
  const auto& b = layout.block(name);
  return {values.data() + b.offset, b.count()};
}

std::span<const double> Policy::block(std::string_view name) const {
  const auto& b = layout.block(name);
  return {values.data() + b.offset, b.count()};
}

bool Policy::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::vector<int> Context::flatten() const {
  std::vector<int> out;
  out.reserve(static_cast<size_t>(flat_size()));
  out.push_back(Vocab::bos);
  out.insert(out.end(), image_tokens.begin(), image_tokens.end());
  out.insert(out.end(), query_tokens.begin(), query_tokens.end());
  out.insert(out.end(), prefix_tokens.begin(), prefix_tokens.end());
  return out;
}

// ---- Runner ---------------------------------------------------------------

struct Runner::Impl {
  const Policy& policy;
  ModelConfig cfg;
  BlockOffsets off;
  bool record;

  int n = 0;
  std::vector<int> tokens;
  std::vector<double> logits;

  // per-layer KV caches, one D-row per position
  std::vector<std::vector<double>> kcache, vcache;

  // scratch (per push)
  std::vector<double> e, x, a, q, c, o, b, f, g, scores;

  // recorded activations (record mode), flattened per position
  std::vector<double> rec_e, rec_x0, rec_inv0;
  std::vector<std::vector<double>> rec_xin, rec_a, rec_inva, rec_q, rec_attw;
  std::vector<std::vector<double>> rec_c, rec_x1, rec_invb, rec_b, rec_fpre;
  std::vector<double> rec_xfinal;

  explicit Impl(const Policy& p, bool rec)
      : policy(p), cfg(p.cfg), off(BlockOffsets::from(p.layout, p.cfg.n_layer)), record(rec) {
    if (p.values.size() != p.layout.total)
      throw ContractError("Runner: parameter vector does not match layout");
    const auto L = static_cast<size_t>(cfg.n_layer);
    kcache.assign(L, {});
    vcache.assign(L, {});
    const auto d = static_cast<size_t>(cfg.d_model);
    e.resize(d);
    x.resize(d);
    a.resize(d);
    q.resize(d);
    c.resize(d);
    o.resize(d);
    b.resize(d);
    f.resize(static_cast<size_t>(cfg.d_mlp()));
    g.resize(d);
    scores.resize(static_cast<size_t>(cfg.context_window));
    logits.resize(static_cast<size_t>(cfg.vocab_size));
    if (record) {
      rec_xin.assign(L, {});
      rec_a.assign(L, {});
      rec_inva.assign(L, {});
      rec_q.assign(L, {});
      rec_attw.assign(L, {});
      rec_c.assign(L, {});
      rec_x1.assign(L, {});
      rec_invb.assign(L, {});
      rec_b.assign(L, {});
      rec_fpre.assign(L, {});
    }
  }

  // attention weights for position p start at H * p*(p+1)/2
  size_t attw_offset(int p) const {
    return static_cast<size_t>(cfg.n_head) * (static_cast<size_t>(p) * (p + 1) / 2);
  }

  const std::vector<double>& push(int token) {
    if (token < 0 || token >= cfg.vocab_size) throw ContractError("Runner: token out of vocab");
    if (n >= cfg.context_window) throw std::length_error("Runner: context window exceeded");
    const int D = cfg.d_model;
    const int H = cfg.n_head;
    const int hd = cfg.head_dim();
    const int F = cfg.d_mlp();
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    const double* params = policy.values.data();
    const int pos = n;

    const double* wte_row = params + off.wte + static_cast<size_t>(token) * D;
    const double* wpe_row = params + off.wpe + static_cast<size_t>(pos) * D;
    for (int i = 0; i < D; ++i) e[static_cast<size_t>(i)] = wte_row[i] + wpe_row[i];
    const double inv0 = rmsnorm_fwd(e.data(), x.data(), D);
    if (record) {
      rec_e.insert(rec_e.end(), e.begin(), e.end());
      rec_x0.insert(rec_x0.end(), x.begin(), x.end());
      rec_inv0.push_back(inv0);
    }

    for (int l = 0; l < cfg.n_layer; ++l) {
      const auto lu = static_cast<size_t>(l);
      if (record) rec_xin[lu].insert(rec_xin[lu].end(), x.begin(), x.end());
      const double inva = rmsnorm_fwd(x.data(), a.data(), D);

      matvec(params + off.wq[lu], a.data(), q.data(), D, D);
      auto& kc = kcache[lu];
      auto& vc = vcache[lu];
      const size_t row = kc.size();
      kc.resize(row + static_cast<size_t>(D));
      vc.resize(row + static_cast<size_t>(D));
      matvec(params + off.wk[lu], a.data(), kc.data() + row, D, D);
      matvec(params + off.wv[lu], a.data(), vc.data() + row, D, D);

      for (int h = 0; h < H; ++h) {
        const int base = h * hd;
        double mx = -1e300;
        for (int j = 0; j <= pos; ++j) {
          const double* kj = kc.data() + static_cast<size_t>(j) * D + base;
          double s = 0.0;
          for (int d2 = 0; d2 < hd; ++d2) s += q[static_cast<size_t>(base + d2)] * kj[d2];
          s *= inv_sqrt_hd;
          scores[static_cast<size_t>(j)] = s;
          mx = std::max(mx, s);
        }
        double sum = 0.0;
        for (int j = 0; j <= pos; ++j) {
          const double w = std::exp(scores[static_cast<size_t>(j)] - mx);
          scores[static_cast<size_t>(j)] = w;
          sum += w;
        }
        const double invsum = 1.0 / sum;
        for (int d2 = 0; d2 < hd; ++d2) c[static_cast<size_t>(base + d2)] = 0.0;
        for (int j = 0; j <= pos; ++j) {
          const double w = scores[static_cast<size_t>(j)] * invsum;
          if (record) rec_attw[lu].push_back(w);
          const double* vj = vc.data() + static_cast<size_t>(j) * D + base;
          for (int d2 = 0; d2 < hd; ++d2) c[static_cast<size_t>(base + d2)] += w * vj[d2];
        }
      }

      matvec(params + off.wo[lu], c.data(), o.data(), D, D);
      for (int i = 0; i < D; ++i) x[static_cast<size_t>(i)] += o[static_cast<size_t>(i)];
      if (record) {
        rec_a[lu].insert(rec_a[lu].end(), a.begin(), a.end());
        rec_inva[lu].push_back(inva);
        rec_q[lu].insert(rec_q[lu].end(), q.begin(), q.end());
        rec_c[lu].insert(rec_c[lu].end(), c.begin(), c.end());
        rec_x1[lu].insert(rec_x1[lu].end(), x.begin(), x.end());
      }

      const double invb = rmsnorm_fwd(x.data(), b.data(), D);
      matvec(params + off.w1[lu], b.data(), f.data(), F, D);
      if (record) {
        rec_invb[lu].push_back(invb);
        rec_b[lu].insert(rec_b[lu].end(), b.begin(), b.end());
        rec_fpre[lu].insert(rec_fpre[lu].end(), f.begin(), f.end());
      }
      for (int i = 0; i < F; ++i) f[static_cast<size_t>(i)] = silu(f[static_cast<size_t>(i)]);
      matvec(params + off.w2[lu], f.data(), g.data(), D, F);
      for (int i = 0; i < D; ++i) x[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
    }

    if (record) rec_xfinal.insert(rec_xfinal.end(), x.begin(), x.end());
    matvec(params + off.lm_head, x.data(), logits.data(), cfg.vocab_size, D);
    tokens.push_back(token);
    ++n;
    return logits;
  }

  void backward(const std::vector<std::vector<double>>& dlogits, std::span<double> grad) const {
    if (!record) throw ContractError("Runner: backward requires record mode");
    if (static_cast<int>(dlogits.size()) != n)
      throw ContractError("Runner: dlogits must have one row per position");
    if (grad.size() != policy.layout.total)
      throw ContractError("Runner: gradient buffer size mismatch");
    const int T = n;
    const int D = cfg.d_model;
    const int V = cfg.vocab_size;
    const int H = cfg.n_head;
    const int hd = cfg.head_dim();
    const int F = cfg.d_mlp();
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    const double* params = policy.values.data();
    const auto td = static_cast<size_t>(T) * D;

    std::vector<double> dx(td, 0.0);

    // lm_head: logits_p = W x_p
    for (int p = 0; p < T; ++p) {
      const auto& row = dlogits[static_cast<size_t>(p)];
      if (static_cast<int>(row.size()) != V)
        throw ContractError("Runner: dlogits row has wrong width");
      const double* xf = rec_xfinal.data() + static_cast<size_t>(p) * D;
      double* dxp = dx.data() + static_cast<size_t>(p) * D;
      for (int v = 0; v < V; ++v) {
        const double dl = row[static_cast<size_t>(v)];
        if (dl == 0.0) continue;
        const double* wrow = params + off.lm_head + static_cast<size_t>(v) * D;
        double* dwrow = grad.data() + off.lm_head + static_cast<size_t>(v) * D;
        for (int i = 0; i < D; ++i) {
          dwrow[i] += dl * xf[i];
          dxp[i] += dl * wrow[i];
        }
      }
    }

    std::vector<double> dx1(td), dxin(td), dq(td), dk(td), dv(td);
    std::vector<double> df(static_cast<size_t>(F)), dfpre(static_cast<size_t>(F)),
        fact(static_cast<size_t>(F));
    std::vector<double> db(static_cast<size_t>(D)), dc(static_cast<size_t>(D)),
        da(static_cast<size_t>(D));
    std::vector<double> dw_scratch(static_cast<size_t>(T));

    for (int l = cfg.n_layer - 1; l >= 0; --l) {
      const auto lu = static_cast<size_t>(l);
      std::fill(dx1.begin(), dx1.end(), 0.0);
      std::fill(dxin.begin(), dxin.end(), 0.0);
      std::fill(dq.begin(), dq.end(), 0.0);
      std::fill(dk.begin(), dk.end(), 0.0);
      std::fill(dv.begin(), dv.end(), 0.0);

      // mlp: x_out = x1 + W2 relu(W1 rmsnorm(x1))
      for (int p = 0; p < T; ++p) {
        const size_t pd = static_cast<size_t>(p) * D;
        const double* dgp = dx.data() + pd;
        const double* fpre = rec_fpre[lu].data() + static_cast<size_t>(p) * F;
        const double* bp = rec_b[lu].data() + pd;
        const double* x1p = rec_x1[lu].data() + pd;
        std::fill(df.begin(), df.end(), 0.0);
        matvec_t_acc(params + off.w2[lu], dgp, df.data(), D, F);
        for (int i = 0; i < F; ++i) fact[static_cast<size_t>(i)] = silu(fpre[i]);
        outer_acc(grad.data() + off.w2[lu], dgp, fact.data(), D, F);
        for (int i = 0; i < F; ++i)
          dfpre[static_cast<size_t>(i)] = df[static_cast<size_t>(i)] * silu_grad(fpre[i]);
        std::fill(db.begin(), db.end(), 0.0);
        matvec_t_acc(params + off.w1[lu], dfpre.data(), db.data(), F, D);
        outer_acc(grad.data() + off.w1[lu], dfpre.data(), bp, F, D);
        double* dx1p = dx1.data() + pd;
        for (int i = 0; i < D; ++i) dx1p[i] = dgp[i];
        rmsnorm_bwd_acc(db.data(), x1p, rec_invb[lu][static_cast<size_t>(p)], dx1p, D);
      }

      // attention: x1 = xin + Wo concat_h(sum_j w_pj v_j)
      for (int p = 0; p < T; ++p) {
        const size_t pd = static_cast<size_t>(p) * D;
        const double* dop = dx1.data() + pd;
        const double* cp = rec_c[lu].data() + pd;
        std::fill(dc.begin(), dc.end(), 0.0);
        matvec_t_acc(params + off.wo[lu], dop, dc.data(), D, D);
        outer_acc(grad.data() + off.wo[lu], dop, cp, D, D);
        double* dxinp = dxin.data() + pd;
        for (int i = 0; i < D; ++i) dxinp[i] += dop[i];

        const double* qp = rec_q[lu].data() + pd;
        const size_t aw0 = attw_offset(p);
        for (int h = 0; h < H; ++h) {
          const int base = h * hd;
          const double* attw = rec_attw[lu].data() + aw0 + static_cast<size_t>(h) * (p + 1);
          double dot_wdw = 0.0;
          for (int j = 0; j <= p; ++j) {
            const double* vj = vcache[lu].data() + static_cast<size_t>(j) * D + base;
            double dwj = 0.0;
            for (int d2 = 0; d2 < hd; ++d2) dwj += dc[static_cast<size_t>(base + d2)] * vj[d2];
            dw_scratch[static_cast<size_t>(j)] = dwj;
            dot_wdw += attw[j] * dwj;
            double* dvj = dv.data() + static_cast<size_t>(j) * D + base;
            for (int d2 = 0; d2 < hd; ++d2) dvj[d2] += attw[j] * dc[static_cast<size_t>(base + d2)];
          }
          for (int j = 0; j <= p; ++j) {
            const double ds = attw[j] * (dw_scratch[static_cast<size_t>(j)] - dot_wdw) * inv_sqrt_hd;
            if (ds == 0.0) continue;
            const double* kj = kcache[lu].data() + static_cast<size_t>(j) * D + base;
            double* dqp = dq.data() + pd + base;
            double* dkj = dk.data() + static_cast<size_t>(j) * D + base;
            for (int d2 = 0; d2 < hd; ++d2) {
              dqp[d2] += ds * kj[d2];
              dkj[d2] += ds * qp[base + d2];
            }
          }
        }
      }

      // q/k/v projections and the pre-attention rmsnorm
      for (int p = 0; p < T; ++p) {
        const size_t pd = static_cast<size_t>(p) * D;
        const double* ap = rec_a[lu].data() + pd;
        const double* xinp = rec_xin[lu].data() + pd;
        std::fill(da.begin(), da.end(), 0.0);
        matvec_t_acc(params + off.wq[lu], dq.data() + pd, da.data(), D, D);
        outer_acc(grad.data() + off.wq[lu], dq.data() + pd, ap, D, D);
        matvec_t_acc(params + off.wk[lu], dk.data() + pd, da.data(), D, D);
        outer_acc(grad.data() + off.wk[lu], dk.data() + pd, ap, D, D);
        matvec_t_acc(params + off.wv[lu], dv.data() + pd, da.data(), D, D);
        outer_acc(grad.data() + off.wv[lu], dv.data() + pd, ap, D, D);
        rmsnorm_bwd_acc(da.data(), xinp, rec_inva[lu][static_cast<size_t>(p)],
                        dxin.data() + pd, D);
      }
      std::swap(dx, dxin);
    }

    // embedding: x0 = rmsnorm(wte[tok] + wpe[pos])
    for (int p = 0; p < T; ++p) {
      const size_t pd = static_cast<size_t>(p) * D;
      std::fill(da.begin(), da.end(), 0.0);
      rmsnorm_bwd_acc(dx.data() + pd, rec_e.data() + pd, rec_inv0[static_cast<size_t>(p)],
                      da.data(), D);
      double* dwte = grad.data() + off.wte + static_cast<size_t>(tokens[static_cast<size_t>(p)]) * D;
      double* dwpe = grad.data() + off.wpe + pd;
      for (int i = 0; i < D; ++i) {
        dwte[i] += da[static_cast<size_t>(i)];
        dwpe[i] += da[static_cast<size_t>(i)];
      }
    }
  }
};

Runner::Runner(const Policy& policy, bool record) : impl_(std::make_unique<Impl>(policy, record)) {}
Runner::~Runner() = default;
Runner::Runner(Runner&&) noexcept = default;
Runner& Runner::operator=(Runner&&) noexcept = default;

int Runner::length() const { return impl_->n; }

const std::vector<double>& Runner::push(int token) { return impl_->push(token); }

const std::vector<double>& Runner::logits() const {
  if (impl_->n == 0) throw ContractError("Runner: no tokens pushed");
  return impl_->logits;
}

void Runner::backward(const std::vector<std::vector<double>>& dlogits,
                      std::span<double> grad) const {
  impl_->backward(dlogits, grad);
}

// ---- stateless ops --------------------------------------------------------

std::vector<double> forward_logits(const Policy& policy, const Context& ctx) {
  const auto flat = ctx.flatten();
  if (static_cast<int>(flat.size()) > policy.cfg.context_window)
    throw std::length_error("forward_logits: context exceeds window");
  Runner r(policy);
  for (int t : flat) r.push(t);
  return r.logits();
}

SequenceScore sequence_logprob(const Policy& policy, const Context& ctx,
                               std::span<const int> output) {
  if (output.empty()) throw ContractError("sequence_logprob: output must be non-empty");
  const auto flat = ctx.flatten();
  if (static_cast<int>(flat.size() + output.size()) - 1 > policy.cfg.context_window)
    throw std::length_error("sequence_logprob: sequence exceeds window");
  Runner r(policy);
  for (int t : flat) r.push(t);
  SequenceScore score;
  score.per_token.reserve(output.size());
  for (size_t t = 0; t < output.size(); ++t) {
    const double lp = log_softmax_at(r.logits(), output[t]);
    score.per_token.push_back(lp);
    score.total += lp;
    if (t + 1 < output.size()) r.push(output[t]);
  }
  return score;
}

SampledSequence sample_sequence_scored(const Policy& policy, const Context& ctx,
                                       int max_len, double temperature, uint64_t seed) {
  if (max_len < 1) throw ContractError("sample_sequence: max_len must be >= 1");
  if (!(temperature >= 0.0) || !std::isfinite(temperature))
    throw ContractError("sample_sequence: temperature must be finite and >= 0");
  const auto flat = ctx.flatten();
  if (static_cast<int>(flat.size()) > policy.cfg.context_window)
    throw std::length_error("sample_sequence: context exceeds window");
  Runner r(policy);
  for (int t : flat) r.push(t);
  Rng rng(seed);
  SampledSequence out;
  const int vocab = policy.cfg.vocab_size;
  std::vector<double> probs(static_cast<size_t>(vocab));
  for (int step = 0; step < max_len; ++step) {
    const auto& logits = r.logits();
    int tok;
    if (temperature == 0.0) {
      tok = 0;
      for (int v = 1; v < vocab; ++v)
        if (logits[static_cast<size_t>(v)] > logits[static_cast<size_t>(tok)]) tok = v;
    } else {
      double mx = logits[0];
      for (double v : logits) mx = std::max(mx, v);
      double sum = 0.0;
      for (int v = 0; v < vocab; ++v) {
        probs[static_cast<size_t>(v)] = std::exp((logits[static_cast<size_t>(v)] - mx) / temperature);
        sum += probs[static_cast<size_t>(v)];
      }
      const double target = rng.uniform() * sum;
      double cum = 0.0;
      tok = vocab - 1;
      for (int v = 0; v < vocab; ++v) {
        cum += probs[static_cast<size_t>(v)];
        if (cum > target) {
          tok = v;
          break;
        }
      }
    }
    out.tokens.push_back(tok);
    out.per_token_logprob.push_back(log_softmax_at(logits, tok));
    if (tok == Vocab::eos || tok == Vocab::answer_close) break;
    if (r.length() >= policy.cfg.context_window) break;  // truncation
    if (step + 1 < max_len) r.push(tok);
  }
  return out;
}

std::vector<int> sample_sequence(const Policy& policy, const Context& ctx, int max_len,
                                 double temperature, uint64_t seed) {
  return sample_sequence_scored(policy, ctx, max_len, temperature, seed).tokens;
}

// ---- loss differentiation ---------------------------------------------------

double loss_value(const Policy& policy, const SequenceLoss& loss) {
  const auto& terms = loss.terms();
  std::vector<std::vector<double>> logprobs;
  logprobs.reserve(terms.size());
  for (const auto& term : terms)
    logprobs.push_back(sequence_logprob(policy, term.ctx, term.output).per_token);
  return loss.value(logprobs);
}

double loss_value_and_gradient(const Policy& policy, const SequenceLoss& loss,
                               std::vector<double>& grad_out) {
  const auto& terms = loss.terms();
  std::vector<std::vector<double>> logprobs;
  logprobs.reserve(terms.size());
  for (const auto& term : terms)
    logprobs.push_back(sequence_logprob(policy, term.ctx, term.output).per_token);
  const double value = loss.value(logprobs);
  if (!std::isfinite(value)) {
    throw NumericError("loss_value_and_gradient: non-finite loss over " +
                       std::to_string(terms.size()) + " terms");
  }
  const auto weights = loss.logprob_grad(logprobs);
  if (weights.size() != terms.size())
    throw ContractError("SequenceLoss: logprob_grad shape mismatch");

  grad_out.assign(policy.layout.total, 0.0);
  const int vocab = policy.cfg.vocab_size;
  for (size_t i = 0; i < terms.size(); ++i) {
    const auto& term = terms[i];
    const auto& w = weights[i];
    if (w.size() != term.output.size())
      throw ContractError("SequenceLoss: logprob_grad row shape mismatch");
    if (std::all_of(w.begin(), w.end(), [](double x) { return x == 0.0; })) continue;

    const auto flat = term.ctx.flatten();
    const int ctx_len = static_cast<int>(flat.size());
    const int total_len = ctx_len + static_cast<int>(term.output.size()) - 1;
    Runner r(policy, /*record=*/true);
    std::vector<std::vector<double>> dlogits(static_cast<size_t>(total_len));
    for (int p = 0; p < total_len; ++p)
      dlogits[static_cast<size_t>(p)].assign(static_cast<size_t>(vocab), 0.0);
    for (int t : flat) r.push(t);
    for (size_t t = 0; t < term.output.size(); ++t) {
      // d(w_t * logprob_t)/dlogits = w_t * (onehot(target) - softmax)
      const double wt = w[t];
      const auto& logits = r.logits();
      if (wt != 0.0) {
        auto& row = dlogits[static_cast<size_t>(ctx_len - 1 + static_cast<int>(t))];
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        double sum = 0.0;
        for (int v = 0; v < vocab; ++v) sum += std::exp(logits[static_cast<size_t>(v)] - mx);
        const double inv = 1.0 / sum;
        for (int v = 0; v < vocab; ++v)
          row[static_cast<size_t>(v)] = -wt * std::exp(logits[static_cast<size_t>(v)] - mx) * inv;
        row[static_cast<size_t>(term.output[t])] += wt;
      }
      if (t + 1 < term.output.size()) r.push(term.output[t]);
    }
    r.backward(dlogits, grad_out);
  }
  return value;
}

std::vector<double> loss_gradient(const Policy& policy, const SequenceLoss& loss) {
  std::vector<double> grad;
  loss_value_and_gradient(policy, loss, grad);
  return grad;
}

}  // namespace grpolab::model
