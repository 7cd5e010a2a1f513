#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpmusic/delay_codec.hpp"
#include "dpmusic/random.hpp"
#include "dpmusic/tokenizer.hpp"

namespace dpmusic {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct ModelConfig {
  int layers = 2;
  int heads = 2;
  int d_model = 64;
  int d_ff = 256;
  double dropout = 0.1;
  int max_steps = 1024;
  bool tie_embeddings = false;
  FieldVocabulary vocab;
  DelaySchedule schedule = DelaySchedule::uniform();

  void validate() const;
};

struct LayerParams {
  Matrix ln1_gain, ln1_bias;  // 1 x D
  Matrix wq, wk, wv, wo;      // D x D
  Matrix bq, bk, bv, bo;      // 1 x D
  Matrix ln2_gain, ln2_bias;
  Matrix w1, b1;  // D x F, 1 x F
  Matrix w2, b2;  // F x D, 1 x D
};

struct ModelParams {
  std::array<Matrix, kNumFields> embed;  // V_d x D
  Matrix position;                       // max_steps x D
  std::vector<LayerParams> layers;
  Matrix final_gain, final_bias;
  std::array<Matrix, kNumFields> head_w;  // D x V_d; empty when tied to embed
  std::array<Matrix, kNumFields> head_b;  // 1 x V_d

  // Shaped for `cfg`, every entry zero.
  static ModelParams zeros(const ModelConfig& cfg);

  // Visits every tensor in a fixed order with a stable name.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  void set_zero();
  std::size_t parameter_count() const;

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    for (std::size_t d = 0; d < kNumFields; ++d) f("embed." + std::string(field_name(d)), self.embed[d]);
    f(std::string("position"), self.position);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      f(p + "ln1.gain", L.ln1_gain);
      f(p + "ln1.bias", L.ln1_bias);
      f(p + "attn.wq", L.wq);
      f(p + "attn.bq", L.bq);
      f(p + "attn.wk", L.wk);
      f(p + "attn.bk", L.bk);
      f(p + "attn.wv", L.wv);
      f(p + "attn.bv", L.bv);
      f(p + "attn.wo", L.wo);
      f(p + "attn.bo", L.bo);
      f(p + "ln2.gain", L.ln2_gain);
      f(p + "ln2.bias", L.ln2_bias);
      f(p + "ff.w1", L.w1);
      f(p + "ff.b1", L.b1);
      f(p + "ff.w2", L.w2);
      f(p + "ff.b2", L.b2);
    }
    f(std::string("final.gain"), self.final_gain);
    f(std::string("final.bias"), self.final_bias);
    for (std::size_t d = 0; d < kNumFields; ++d) {
      const std::string name(field_name(d));
      if (self.head_w[d].size() > 0) f("head." + name + ".w", self.head_w[d]);
      f("head." + name + ".b", self.head_b[d]);
    }
  }
};

class Model {
 public:
  explicit Model(ModelConfig cfg);
  // Shapes of `params` must match `cfg`.
  Model(ModelConfig cfg, ModelParams params);

  // Normal(0, 0.02) weights and embeddings, zero biases, unit norm gains.
  static Model initialized(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  bool tied() const { return cfg_.tie_embeddings; }

 private:
  ModelConfig cfg_;
  ModelParams params_;
};

// Per-field scores for one step.
struct StepLogits {
  std::array<RowVector, kNumFields> fields;
};

// Per-field scores for every step of a prefix: fields[d] is T x V_d.
struct Logits {
  std::array<Matrix, kNumFields> fields;

  std::size_t steps() const { return static_cast<std::size_t>(fields[0].rows()); }
  StepLogits at(std::size_t row) const;
};

// Sum of field embeddings plus the positional embedding of row `row`
// (0-based).
RowVector embed_step(const Model& model, std::span<const int, kNumFields> cells, std::size_t row);

// Logits for the first `rows` grid rows; row s depends on rows 0..s only.
Logits forward(const Model& model, const TokenGrid& grid, std::size_t rows);
inline Logits forward(const Model& model, const TokenGrid& grid) {
  return forward(model, grid, grid.steps());
}

struct LossStats {
  double nll_sum = 0.0;
  std::size_t count = 0;
  std::array<double, kNumFields> field_nll{};
  std::array<std::size_t, kNumFields> field_count{};
  std::array<std::size_t, kNumFields> field_correct{};

  double loss() const { return count ? nll_sum / static_cast<double>(count) : 0.0; }
  double field_loss(std::size_t d) const {
    return field_count[d] ? field_nll[d] / static_cast<double>(field_count[d]) : 0.0;
  }
  double field_accuracy(std::size_t d) const {
    return field_count[d] ? static_cast<double>(field_correct[d]) / static_cast<double>(field_count[d])
                          : 1.0;
  }
  LossStats& operator+=(const LossStats& other);
};

// Teacher-forced mean cross-entropy: logits at row s predict row s + 1;
// cells whose target is the field's pad index are excluded.
LossStats loss(const Model& model, const TokenGrid& grid);

// Adds d(nll_sum)/d(params) into `grads` (unnormalized) and returns the
// statistics. Dropout is applied when `dropout_rng` is non-null and the
// configured rate is positive.
LossStats accumulate_gradients(const Model& model, const TokenGrid& grid, ModelParams& grads,
                               Rng* dropout_rng = nullptr);

// Key/value cache for step-by-step decoding.
class IncrementalState {
 public:
  explicit IncrementalState(const Model& model);

  std::size_t length() const { return length_; }

  // Feeds one grid row and returns the logits predicting the next row.
  StepLogits push(std::span<const int, kNumFields> cells);

 private:
  const Model* model_;
  std::vector<Matrix> keys_;
  std::vector<Matrix> values_;
  std::size_t length_ = 0;
};

}  // namespace dpmusic
