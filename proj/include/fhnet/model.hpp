#pragma once

// Graph-attention encoder-decoder for fetal ECG extraction.
//
// Encoder block: temporal attention with a running sum of pre-softmax logits,
// spatial attention scores, masked Chebyshev graph convolution, and a
// multi-kernel gated temporal unit. Block outputs are concatenated on time to
// form the decoder memory. The decoder is a post-LN transformer whose input
// embedding is refined by multi-kernel convolutions.
//
// Feature tensors are laid out [leads, time, features] internally.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fhnet/autodiff.hpp"
#include "fhnet/graph.hpp"
#include "fhnet/tensor.hpp"

namespace fhnet::model {

struct ModelConfig {
  std::size_t leads = 4;
  std::size_t t_in = 100;
  std::size_t t_out = 50;
  std::size_t d_lift = 8;   // per-lead feature width after the input lift
  std::size_t d_cheb = 8;   // graph convolution output width
  std::size_t d_model = 12; // decoder width
  std::size_t blocks = 2;   // encoder blocks, also decoder layers
  std::size_t heads = 2;    // temporal and decoder attention heads
  std::size_t cheb_order = 3;
  std::vector<std::size_t> kernels{3, 5, 7};
  graph::AdjacencyMode adjacency = graph::AdjacencyMode::kIdentity;
  std::optional<Tensor> custom_adjacency;
  std::size_t ffn_width = 24;
  // Temporal attention output as LayerNorm(Linear(O + X')) instead of LayerNorm(Linear(O) + X').
  bool ta_literal_residual = false;
  bool per_block_masks = true;
  // Decoder convolutions after every layer but the last, or only after the embedding.
  bool decoder_mstfe_per_layer = true;
  // Left-padded decoder convolutions, so no output sees later inputs.
  bool causal_decoder_mstfe = false;

  void validate() const;
  std::size_t block_input_width(std::size_t block) const { return block == 0 ? d_lift : d_cheb; }
  std::size_t memory_rows() const { return blocks * t_in; }
  std::size_t memory_width() const { return leads * d_cheb; }
  std::size_t decoder_mstfe_count() const { return decoder_mstfe_per_layer ? blocks : 1; }
  // Decoder branch widths: d_model split evenly, remainder to the first kernel.
  std::vector<std::size_t> decoder_branch_widths() const;

  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  // The fixed small configuration used by gradient and property tests.
  static ModelConfig toy();
};

enum class ParamKind { kWeight, kBias, kGain, kMask, kStartToken };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamKind kind = ParamKind::kWeight;
  std::size_t fan_in = 1;
  std::size_t fan_out = 1;
};

// Every learnable tensor of a configuration, in a fixed order.
std::vector<ParamSpec> param_specs(const ModelConfig& cfg);
// Closed-form scalar count, computed from the extents alone.
std::size_t param_count(const ModelConfig& cfg);

class ModelParams {
 public:
  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index(const std::string& name) const;
  const Tensor& get(const std::string& name) const { return tensors_[index(name)]; }
  Tensor& get(const std::string& name) { return tensors_[index(name)]; }

  std::size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  std::size_t scalar_count() const;

  bool operator==(const ModelParams& other) const { return names_ == other.names_ && tensors_ == other.tensors_; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

// Xavier-uniform weights and start token, zero biases, unit gains and masks.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
// Throws if names or shapes differ from param_specs(cfg).
void check_params(const ModelConfig& cfg, const ModelParams& params);

// Parameters bound as autodiff leaves for one forward graph.
class BoundParams {
 public:
  BoundParams(const ModelParams& params, bool requires_grad);
  // Uses caller-made vars laid out like `params`.
  BoundParams(const ModelParams& params, std::vector<ad::Var> vars);
  const ad::Var& operator()(const std::string& name) const { return vars_[params_->index(name)]; }
  const std::vector<ad::Var>& vars() const { return vars_; }
  std::vector<Tensor> grads() const;

 private:
  const ModelParams* params_;
  std::vector<ad::Var> vars_;
};

// Values captured during a forward pass.
struct BlockTrace {
  Tensor logits;          // [L, H, T, T], this block's scaled scores
  Tensor accumulated;     // [L, H, T, T], logits plus every earlier block's
  Tensor attention;       // [L, H, T, T], softmax of accumulated
  Tensor spatial_scores;  // [K, L, L]
  Tensor p_eff;           // [K, L, L]
};

struct DecoderTrace {
  std::vector<Tensor> self_attention;   // per layer [H, n, n]
  std::vector<Tensor> cross_attention;  // per layer [H, n, rows]
};

struct ForwardTrace {
  std::vector<BlockTrace> blocks;
  DecoderTrace decoder;
};

class Model {
 public:
  Model(ModelConfig cfg);
  const ModelConfig& config() const { return cfg_; }
  const graph::LeadGraph& lead_graph() const { return graph_; }

  // x: [L, T] -> [L, T, d_lift]
  ad::Var lift_input(const BoundParams& p, const ad::Var& x) const;
  struct TemporalOut {
    ad::Var y;
    ad::Var accumulated;
    ad::Var logits;
    ad::Var attention;
  };
  // x: [L, T, D]; prev undefined for the first block.
  TemporalOut temporal_attention(const BoundParams& p, std::size_t block, const ad::Var& x,
                                 const ad::Var& prev) const;
  // y: [L, T, D] -> [K, L, L] raw scores
  ad::Var spatial_attention(const BoundParams& p, std::size_t block, const ad::Var& y) const;
  ad::Var masks(const BoundParams& p, std::size_t block) const;
  // h: [L, T, d_cheb] -> same shape
  ad::Var mstfe_gtu(const BoundParams& p, std::size_t block, const ad::Var& h) const;
  struct BlockOut {
    ad::Var out;
    ad::Var accumulated;
  };
  BlockOut encoder_block(const BoundParams& p, std::size_t block, const ad::Var& x, const ad::Var& prev,
                         ForwardTrace* trace = nullptr) const;
  // x: [L, T] -> memory [blocks * T, L * d_cheb]
  ad::Var encode(const BoundParams& p, const ad::Var& x, ForwardTrace* trace = nullptr) const;

  // h: [n, d_model] -> same shape
  ad::Var decoder_mstfe(const BoundParams& p, std::size_t index, const ad::Var& h) const;
  // Decodes a start token followed by `prev` ([n] values); returns [n + 1]
  // predictions, the last of which is the next sample.
  ad::Var decode_sequence(const BoundParams& p, const ad::Var& memory, const ad::Var& prev,
                          ForwardTrace* trace = nullptr) const;
  // target: [t_out]; position t sees target[0, t).
  ad::Var decode_teacher_forced(const BoundParams& p, const ad::Var& memory, const ad::Var& target,
                                ForwardTrace* trace = nullptr) const;
  // Greedy rollout of `steps` samples, each fed back as the next input.
  ad::Var decode_autoregressive(const BoundParams& p, const ad::Var& memory, std::size_t steps) const;

  // Convenience wrappers with fresh constant bindings.
  Tensor predict(const ModelParams& params, const Tensor& x) const;
  Tensor predict_teacher_forced(const ModelParams& params, const Tensor& x, const Tensor& target) const;

 private:
  ModelConfig cfg_;
  graph::LeadGraph graph_;
};

// Sinusoidal table; d must be even.
Tensor positional_encoding(std::size_t steps, std::size_t d);

}  // namespace fhnet::model
