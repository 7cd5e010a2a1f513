#include "dpmusic/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "dpmusic/error.hpp"

namespace dpmusic {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;

Matrix zeros(Eigen::Index rows, Eigen::Index cols) { return Matrix::Zero(rows, cols); }

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

struct NormCache {
  Matrix xhat;
  Eigen::VectorXd rstd;
};

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, NormCache* cache) {
  const auto cols = static_cast<double>(x.cols());
  Matrix out(x.rows(), x.cols());
  if (cache) {
    cache->xhat.resize(x.rows(), x.cols());
    cache->rstd.resize(x.rows());
  }
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / cols;
    const double var = (x.row(r).array() - mean).square().sum() / cols;
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    const RowVector xhat = (x.row(r).array() - mean) * rstd;
    out.row(r) = xhat.cwiseProduct(gain.row(0)) + bias.row(0);
    if (cache) {
      cache->xhat.row(r) = xhat;
      cache->rstd(r) = rstd;
    }
  }
  return out;
}

Matrix layer_norm_backward(const Matrix& dout, const NormCache& cache, const Matrix& gain,
                           Matrix& dgain, Matrix& dbias) {
  dgain += dout.cwiseProduct(cache.xhat).colwise().sum();
  dbias += dout.colwise().sum();
  const auto cols = static_cast<double>(dout.cols());
  Matrix dx(dout.rows(), dout.cols());
  for (Eigen::Index r = 0; r < dout.rows(); ++r) {
    const RowVector dxhat = dout.row(r).cwiseProduct(gain.row(0));
    const double mean_dxhat = dxhat.sum() / cols;
    const double mean_dxhat_xhat = dxhat.cwiseProduct(cache.xhat.row(r)).sum() / cols;
    dx.row(r) = cache.rstd(r) *
                (dxhat.array() - mean_dxhat - cache.xhat.row(r).array() * mean_dxhat_xhat).matrix();
  }
  return dx;
}

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

// Inverted dropout mask (entries 0 or 1 / (1 - p)), or empty when inactive.
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng* rng) {
  if (!rng || p <= 0.0) return {};
  Matrix mask(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng->uniform() < p ? 0.0 : keep;
  return mask;
}

void apply_mask(Matrix& x, const Matrix& mask) {
  if (mask.size() > 0) x.array() *= mask.array();
}

struct LayerCache {
  NormCache ln1;
  Matrix h1;
  Matrix q, k, v;
  std::vector<Matrix> probs;
  Matrix attn;
  Matrix attn_mask;
  Matrix x_mid;
  NormCache ln2;
  Matrix h2;
  Matrix ff_pre;
  Matrix ff_act;
  Matrix ff_mask;
};

struct ForwardCache {
  std::vector<std::array<int, kNumFields>> rows;
  Matrix embed_mask;
  std::vector<LayerCache> layers;
  NormCache final_norm;
  Matrix final_out;
};

void check_rows(const Model& model, const TokenGrid& grid, std::size_t rows) {
  const auto& cfg = model.config();
  if (rows > static_cast<std::size_t>(cfg.max_steps)) {
    throw Error(ErrorCode::kSequenceTooLong, std::to_string(rows) + " steps exceed max_steps " +
                                                 std::to_string(cfg.max_steps));
  }
  if (rows > grid.steps()) throw Error(ErrorCode::kOutOfRange, "prefix longer than grid");
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t d = 0; d < kNumFields; ++d) {
      const int v = grid.cell(r, d);
      if (v < 0 || v >= cfg.vocab.size(d)) {
        throw Error(ErrorCode::kIndexOutOfVocab, "cell [" + std::to_string(r + 1) + "][" +
                                                     std::string(field_name(d)) + "] = " +
                                                     std::to_string(v));
      }
    }
  }
}

// Causal multi-head self-attention over all rows of `h`; fills q/k/v/probs.
Matrix self_attention(const LayerParams& p, int heads, const Matrix& h, LayerCache& c) {
  const Eigen::Index steps = h.rows();
  const Eigen::Index dim = h.cols();
  const Eigen::Index head_dim = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  c.q = affine(h, p.wq, p.bq);
  c.k = affine(h, p.wk, p.bk);
  c.v = affine(h, p.wv, p.bv);
  c.probs.assign(static_cast<std::size_t>(heads), Matrix());
  Matrix out(steps, dim);
  for (int hd = 0; hd < heads; ++hd) {
    const auto q = c.q.middleCols(hd * head_dim, head_dim);
    const auto k = c.k.middleCols(hd * head_dim, head_dim);
    const auto v = c.v.middleCols(hd * head_dim, head_dim);
    Matrix scores = (q * k.transpose()) * scale;
    for (Eigen::Index i = 0; i < steps; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j <= i; ++j) mx = std::max(mx, scores(i, j));
      double sum = 0.0;
      for (Eigen::Index j = 0; j <= i; ++j) {
        scores(i, j) = std::exp(scores(i, j) - mx);
        sum += scores(i, j);
      }
      for (Eigen::Index j = 0; j <= i; ++j) scores(i, j) /= sum;
      for (Eigen::Index j = i + 1; j < steps; ++j) scores(i, j) = 0.0;
    }
    out.middleCols(hd * head_dim, head_dim) = scores * v;
    c.probs[static_cast<std::size_t>(hd)] = std::move(scores);
  }
  return out;
}

Matrix trunk_forward(const Model& model, const TokenGrid& grid, std::size_t rows, Rng* rng,
                     ForwardCache& cache) {
  const auto& cfg = model.config();
  const auto& P = model.params();
  const auto steps = static_cast<Eigen::Index>(rows);

  Matrix x(steps, cfg.d_model);
  cache.rows.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t d = 0; d < kNumFields; ++d) cache.rows[r][d] = grid.cell(r, d);
    x.row(static_cast<Eigen::Index>(r)) = embed_step(model, grid.row(r), r);
  }
  cache.embed_mask = dropout_mask(steps, cfg.d_model, cfg.dropout, rng);
  apply_mask(x, cache.embed_mask);

  cache.layers.resize(P.layers.size());
  for (std::size_t l = 0; l < P.layers.size(); ++l) {
    const auto& p = P.layers[l];
    auto& c = cache.layers[l];
    c.h1 = layer_norm(x, p.ln1_gain, p.ln1_bias, &c.ln1);
    c.attn = self_attention(p, cfg.heads, c.h1, c);
    Matrix a = affine(c.attn, p.wo, p.bo);
    c.attn_mask = dropout_mask(steps, cfg.d_model, cfg.dropout, rng);
    apply_mask(a, c.attn_mask);
    c.x_mid = x + a;
    c.h2 = layer_norm(c.x_mid, p.ln2_gain, p.ln2_bias, &c.ln2);
    c.ff_pre = affine(c.h2, p.w1, p.b1);
    c.ff_act = c.ff_pre.unaryExpr(&gelu);
    Matrix f = affine(c.ff_act, p.w2, p.b2);
    c.ff_mask = dropout_mask(steps, cfg.d_model, cfg.dropout, rng);
    apply_mask(f, c.ff_mask);
    x = c.x_mid + f;
  }
  cache.final_out = layer_norm(x, P.final_gain, P.final_bias, &cache.final_norm);
  return cache.final_out;
}

Matrix head_logits(const Model& model, const Matrix& hidden, std::size_t d) {
  const auto& P = model.params();
  Matrix out = model.tied() ? Matrix(hidden * P.embed[d].transpose()) : Matrix(hidden * P.head_w[d]);
  out.rowwise() += P.head_b[d].row(0);
  return out;
}

// Cross-entropy of each contributing cell; writes softmax - onehot into
// `dlogits` when non-null.
void score_cells(const Model& model, const TokenGrid& grid, const Logits& logits,
                 LossStats& stats, std::array<Matrix, kNumFields>* dlogits) {
  const auto& vocab = model.config().vocab;
  const std::size_t inputs = logits.steps();
  for (std::size_t d = 0; d < kNumFields; ++d) {
    const Matrix& z = logits.fields[d];
    if (dlogits) (*dlogits)[d] = Matrix::Zero(z.rows(), z.cols());
    for (std::size_t s = 0; s < inputs; ++s) {
      const int target = grid.cell(s + 1, d);
      if (target == vocab.pad_id(d)) continue;
      const auto row = z.row(static_cast<Eigen::Index>(s));
      Eigen::Index best = 0;
      const double mx = row.maxCoeff(&best);
      const double lse = mx + std::log((row.array() - mx).exp().sum());
      const double nll = lse - row(target);
      stats.nll_sum += nll;
      stats.field_nll[d] += nll;
      ++stats.count;
      ++stats.field_count[d];
      if (best == target) ++stats.field_correct[d];
      if (dlogits) {
        auto g = (*dlogits)[d].row(static_cast<Eigen::Index>(s));
        g = (row.array() - lse).exp().matrix();
        g(target) -= 1.0;
      }
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (layers < 1 || heads < 1 || d_model < 1 || d_ff < 1 || max_steps < 1) {
    throw Error(ErrorCode::kOutOfRange, "model dimensions must be positive");
  }
  if (d_model % heads != 0) {
    throw Error(ErrorCode::kOutOfRange, "d_model " + std::to_string(d_model) +
                                            " not divisible by heads " + std::to_string(heads));
  }
  if (dropout < 0.0 || dropout >= 1.0) throw Error(ErrorCode::kOutOfRange, "dropout must be in [0, 1)");
  schedule.validate();
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const auto D = cfg.d_model;
  const auto F = cfg.d_ff;
  ModelParams p;
  for (std::size_t d = 0; d < kNumFields; ++d) {
    const auto V = cfg.vocab.size(d);
    p.embed[d] = dpmusic::zeros(V, D);
    if (!cfg.tie_embeddings) p.head_w[d] = dpmusic::zeros(D, V);
    p.head_b[d] = dpmusic::zeros(1, V);
  }
  p.position = dpmusic::zeros(cfg.max_steps, D);
  p.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& L : p.layers) {
    L.ln1_gain = dpmusic::zeros(1, D);
    L.ln1_bias = dpmusic::zeros(1, D);
    L.wq = L.wk = L.wv = L.wo = dpmusic::zeros(D, D);
    L.bq = L.bk = L.bv = L.bo = dpmusic::zeros(1, D);
    L.ln2_gain = dpmusic::zeros(1, D);
    L.ln2_bias = dpmusic::zeros(1, D);
    L.w1 = dpmusic::zeros(D, F);
    L.b1 = dpmusic::zeros(1, F);
    L.w2 = dpmusic::zeros(F, D);
    L.b2 = dpmusic::zeros(1, D);
  }
  p.final_gain = dpmusic::zeros(1, D);
  p.final_bias = dpmusic::zeros(1, D);
  return p;
}

void ModelParams::set_zero() {
  visit([](const std::string&, Matrix& m) { m.setZero(); });
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)), params_(ModelParams::zeros(cfg_)) {}

Model::Model(ModelConfig cfg, ModelParams params) : Model(std::move(cfg)) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  params_.visit([&](const std::string&, const Matrix& m) { shapes.emplace_back(m.rows(), m.cols()); });
  std::size_t i = 0;
  bool ok = true;
  params.visit([&](const std::string&, const Matrix& m) {
    ok = ok && i < shapes.size() && shapes[i] == std::make_pair(m.rows(), m.cols());
    ++i;
  });
  if (!ok || i != shapes.size()) {
    throw Error(ErrorCode::kCheckpointMismatch, "parameter shapes do not match the model config");
  }
  params_ = std::move(params);
}

Model Model::initialized(ModelConfig cfg, std::uint64_t seed) {
  Model model(std::move(cfg));
  Rng rng(seed);
  model.params_.visit([&](const std::string& name, Matrix& m) {
    const bool is_gain = name.ends_with(".gain");
    bool is_bias = false;
    for (const char* suffix : {".bias", ".b", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2"}) {
      is_bias = is_bias || name.ends_with(suffix);
    }
    if (is_gain) {
      m.setOnes();
    } else if (is_bias) {
      m.setZero();
    } else {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, kInitStd);
    }
  });
  return model;
}

StepLogits Logits::at(std::size_t row) const {
  StepLogits out;
  for (std::size_t d = 0; d < kNumFields; ++d) out.fields[d] = fields[d].row(static_cast<Eigen::Index>(row));
  return out;
}

LossStats& LossStats::operator+=(const LossStats& other) {
  nll_sum += other.nll_sum;
  count += other.count;
  for (std::size_t d = 0; d < kNumFields; ++d) {
    field_nll[d] += other.field_nll[d];
    field_count[d] += other.field_count[d];
    field_correct[d] += other.field_correct[d];
  }
  return *this;
}

RowVector embed_step(const Model& model, std::span<const int, kNumFields> cells, std::size_t row) {
  const auto& cfg = model.config();
  const auto& P = model.params();
  if (row >= static_cast<std::size_t>(cfg.max_steps)) {
    throw Error(ErrorCode::kSequenceTooLong, "row " + std::to_string(row) + " beyond max_steps");
  }
  RowVector x = P.position.row(static_cast<Eigen::Index>(row));
  for (std::size_t d = 0; d < kNumFields; ++d) {
    if (cells[d] < 0 || cells[d] >= cfg.vocab.size(d)) {
      throw Error(ErrorCode::kIndexOutOfVocab,
                  std::string(field_name(d)) + " index " + std::to_string(cells[d]));
    }
    x += P.embed[d].row(cells[d]);
  }
  return x;
}

Logits forward(const Model& model, const TokenGrid& grid, std::size_t rows) {
  check_rows(model, grid, rows);
  Logits out;
  if (rows == 0) {
    for (std::size_t d = 0; d < kNumFields; ++d) out.fields[d] = Matrix(0, model.config().vocab.size(d));
    return out;
  }
  ForwardCache cache;
  const Matrix hidden = trunk_forward(model, grid, rows, nullptr, cache);
  for (std::size_t d = 0; d < kNumFields; ++d) out.fields[d] = head_logits(model, hidden, d);
  return out;
}

LossStats loss(const Model& model, const TokenGrid& grid) {
  if (grid.steps() < 2) throw Error(ErrorCode::kEmptyGrid, "need at least two grid rows");
  const Logits logits = forward(model, grid, grid.steps() - 1);
  LossStats stats;
  score_cells(model, grid, logits, stats, nullptr);
  if (stats.count == 0) throw Error(ErrorCode::kEmptyGrid, "no non-pad target cells");
  return stats;
}

LossStats accumulate_gradients(const Model& model, const TokenGrid& grid, ModelParams& grads,
                               Rng* dropout_rng) {
  if (grid.steps() < 2) throw Error(ErrorCode::kEmptyGrid, "need at least two grid rows");
  const auto& cfg = model.config();
  const auto& P = model.params();
  const std::size_t rows = grid.steps() - 1;
  check_rows(model, grid, rows);

  ForwardCache cache;
  const Matrix hidden = trunk_forward(model, grid, rows, dropout_rng, cache);
  Logits logits;
  for (std::size_t d = 0; d < kNumFields; ++d) logits.fields[d] = head_logits(model, hidden, d);

  LossStats stats;
  std::array<Matrix, kNumFields> dlogits;
  score_cells(model, grid, logits, stats, &dlogits);
  if (stats.count == 0) throw Error(ErrorCode::kEmptyGrid, "no non-pad target cells");

  // Output heads.
  Matrix dx = Matrix::Zero(hidden.rows(), hidden.cols());
  for (std::size_t d = 0; d < kNumFields; ++d) {
    grads.head_b[d] += dlogits[d].colwise().sum();
    if (model.tied()) {
      grads.embed[d] += dlogits[d].transpose() * hidden;
      dx += dlogits[d] * P.embed[d];
    } else {
      grads.head_w[d] += hidden.transpose() * dlogits[d];
      dx += dlogits[d] * P.head_w[d].transpose();
    }
  }
  dx = layer_norm_backward(dx, cache.final_norm, P.final_gain, grads.final_gain, grads.final_bias);

  const Eigen::Index head_dim = cfg.d_model / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (std::size_t li = P.layers.size(); li-- > 0;) {
    const auto& p = P.layers[li];
    auto& g = grads.layers[li];
    const auto& c = cache.layers[li];

    // Feed-forward residual branch.
    Matrix df = dx;
    apply_mask(df, c.ff_mask);
    g.w2 += c.ff_act.transpose() * df;
    g.b2 += df.colwise().sum();
    Matrix dpre = (df * p.w2.transpose()).cwiseProduct(c.ff_pre.unaryExpr(&gelu_grad));
    g.w1 += c.h2.transpose() * dpre;
    g.b1 += dpre.colwise().sum();
    const Matrix dh2 = dpre * p.w1.transpose();
    dx += layer_norm_backward(dh2, c.ln2, p.ln2_gain, g.ln2_gain, g.ln2_bias);

    // Attention residual branch.
    Matrix da = dx;
    apply_mask(da, c.attn_mask);
    g.wo += c.attn.transpose() * da;
    g.bo += da.colwise().sum();
    const Matrix dattn = da * p.wo.transpose();
    Matrix dq(c.q.rows(), c.q.cols());
    Matrix dk(c.k.rows(), c.k.cols());
    Matrix dv(c.v.rows(), c.v.cols());
    for (int hd = 0; hd < cfg.heads; ++hd) {
      const auto cols = Eigen::seqN(hd * head_dim, head_dim);
      const Matrix& probs = c.probs[static_cast<std::size_t>(hd)];
      const Matrix dout = dattn(Eigen::all, cols);
      const Matrix dprobs = dout * c.v(Eigen::all, cols).transpose();
      dv(Eigen::all, cols) = probs.transpose() * dout;
      Matrix dscores = probs.cwiseProduct(dprobs);
      const Eigen::VectorXd row_dot = dscores.rowwise().sum();
      dscores -= probs.cwiseProduct(row_dot.replicate(1, probs.cols()));
      dscores *= scale;
      dq(Eigen::all, cols) = dscores * c.k(Eigen::all, cols);
      dk(Eigen::all, cols) = dscores.transpose() * c.q(Eigen::all, cols);
    }
    g.wq += c.h1.transpose() * dq;
    g.bq += dq.colwise().sum();
    g.wk += c.h1.transpose() * dk;
    g.bk += dk.colwise().sum();
    g.wv += c.h1.transpose() * dv;
    g.bv += dv.colwise().sum();
    const Matrix dh1 = dq * p.wq.transpose() + dk * p.wk.transpose() + dv * p.wv.transpose();
    dx += layer_norm_backward(dh1, c.ln1, p.ln1_gain, g.ln1_gain, g.ln1_bias);
  }

  apply_mask(dx, cache.embed_mask);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = dx.row(static_cast<Eigen::Index>(r));
    grads.position.row(static_cast<Eigen::Index>(r)) += row;
    for (std::size_t d = 0; d < kNumFields; ++d) grads.embed[d].row(cache.rows[r][d]) += row;
  }
  return stats;
}

IncrementalState::IncrementalState(const Model& model) : model_(&model) {
  const auto& cfg = model.config();
  keys_.assign(static_cast<std::size_t>(cfg.layers), Matrix(cfg.max_steps, cfg.d_model));
  values_.assign(static_cast<std::size_t>(cfg.layers), Matrix(cfg.max_steps, cfg.d_model));
}

StepLogits IncrementalState::push(std::span<const int, kNumFields> cells) {
  const auto& cfg = model_->config();
  const auto& P = model_->params();
  if (length_ >= static_cast<std::size_t>(cfg.max_steps)) {
    throw Error(ErrorCode::kSequenceTooLong, "incremental decode beyond max_steps");
  }
  const auto pos = static_cast<Eigen::Index>(length_);
  const Eigen::Index head_dim = cfg.d_model / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Matrix x = embed_step(*model_, cells, length_);
  for (std::size_t l = 0; l < P.layers.size(); ++l) {
    const auto& p = P.layers[l];
    const Matrix h = layer_norm(x, p.ln1_gain, p.ln1_bias, nullptr);
    const Matrix q = affine(h, p.wq, p.bq);
    keys_[l].row(pos) = affine(h, p.wk, p.bk).row(0);
    values_[l].row(pos) = affine(h, p.wv, p.bv).row(0);
    Matrix attn(1, cfg.d_model);
    for (int hd = 0; hd < cfg.heads; ++hd) {
      const auto cols = Eigen::seqN(hd * head_dim, head_dim);
      const auto keys = keys_[l].topRows(pos + 1)(Eigen::all, cols);
      RowVector scores = (q(Eigen::all, cols) * keys.transpose()) * scale;
      const double mx = scores.maxCoeff();
      scores = (scores.array() - mx).exp().matrix();
      scores /= scores.sum();
      attn(Eigen::all, cols) = scores * values_[l].topRows(pos + 1)(Eigen::all, cols);
    }
    x += affine(attn, p.wo, p.bo);
    const Matrix h2 = layer_norm(x, p.ln2_gain, p.ln2_bias, nullptr);
    const Matrix act = affine(h2, p.w1, p.b1).unaryExpr(&gelu);
    x += affine(act, p.w2, p.b2);
  }
  const Matrix hidden = layer_norm(x, P.final_gain, P.final_bias, nullptr);
  ++length_;
  StepLogits out;
  for (std::size_t d = 0; d < kNumFields; ++d) out.fields[d] = head_logits(*model_, hidden, d).row(0);
  return out;
}

}  // namespace dpmusic
