#include "fhnet/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "fhnet/json_util.hpp"

namespace fhnet::model {

using ad::Var;

void ModelConfig::validate() const {
  if (leads == 0 || t_in == 0 || t_out == 0 || d_lift == 0 || d_cheb == 0 || d_model == 0 || blocks == 0 ||
      heads == 0 || cheb_order == 0 || ffn_width == 0)
    throw ConfigError("model extents must all be positive");
  if (d_lift % heads) throw ConfigError("d_lift (" + std::to_string(d_lift) + ") must be divisible by heads");
  if (blocks > 1 && d_cheb % heads) throw ConfigError("d_cheb (" + std::to_string(d_cheb) + ") must be divisible by heads");
  if (d_model % heads) throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by heads");
  if (d_model % 2) throw ConfigError("d_model must be even for the positional encoding");
  if (kernels.empty()) throw ConfigError("kernel set is empty");
  for (std::size_t k : kernels)
    if (k == 0 || k % 2 == 0) throw ConfigError("kernel sizes must be odd, got " + std::to_string(k));
  if (d_model < kernels.size()) throw ConfigError("d_model is narrower than the number of decoder branches");
  if (adjacency == graph::AdjacencyMode::kCustom && !custom_adjacency)
    throw ConfigError("custom adjacency mode needs custom_adjacency");
}

std::vector<std::size_t> ModelConfig::decoder_branch_widths() const {
  std::vector<std::size_t> w(kernels.size(), d_model / kernels.size());
  w[0] += d_model % kernels.size();
  return w;
}

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["leads"] = leads;
  j["t_in"] = t_in;
  j["t_out"] = t_out;
  j["d_lift"] = d_lift;
  j["d_cheb"] = d_cheb;
  j["d_model"] = d_model;
  j["blocks"] = blocks;
  j["heads"] = heads;
  j["cheb_order"] = cheb_order;
  j["kernels"] = kernels;
  j["adjacency"] = graph::to_string(adjacency);
  if (custom_adjacency) {
    const std::size_t n = custom_adjacency->dim(0);
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> row(custom_adjacency->data().begin() + static_cast<std::ptrdiff_t>(i * n),
                              custom_adjacency->data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
      rows.push_back(row);
    }
    j["custom_adjacency"] = rows;
  }
  j["ffn_width"] = ffn_width;
  j["ta_literal_residual"] = ta_literal_residual;
  j["per_block_masks"] = per_block_masks;
  j["decoder_mstfe_per_layer"] = decoder_mstfe_per_layer;
  j["causal_decoder_mstfe"] = causal_decoder_mstfe;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  const std::string ctx = "model";
  reject_unknown_keys(j,
                      {"leads", "t_in", "t_out", "d_lift", "d_cheb", "d_model", "blocks", "heads", "cheb_order",
                       "kernels", "adjacency", "custom_adjacency", "ffn_width", "ta_literal_residual",
                       "per_block_masks", "decoder_mstfe_per_layer", "causal_decoder_mstfe"},
                      ctx);
  ModelConfig c;
  read_optional(j, "leads", c.leads, ctx);
  read_optional(j, "t_in", c.t_in, ctx);
  read_optional(j, "t_out", c.t_out, ctx);
  read_optional(j, "d_lift", c.d_lift, ctx);
  read_optional(j, "d_cheb", c.d_cheb, ctx);
  read_optional(j, "d_model", c.d_model, ctx);
  read_optional(j, "blocks", c.blocks, ctx);
  read_optional(j, "heads", c.heads, ctx);
  read_optional(j, "cheb_order", c.cheb_order, ctx);
  read_optional(j, "kernels", c.kernels, ctx);
  if (j.contains("adjacency")) {
    std::string mode;
    read_optional(j, "adjacency", mode, ctx);
    try {
      c.adjacency = graph::parse_adjacency_mode(mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(ctx + ".adjacency: " + e.what());
    }
  }
  if (j.contains("custom_adjacency")) {
    std::vector<std::vector<double>> rows;
    read_optional(j, "custom_adjacency", rows, ctx);
    const std::size_t n = rows.size();
    if (n == 0) throw ConfigError(ctx + ".custom_adjacency is empty");
    Tensor a({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      if (rows[i].size() != n) throw ConfigError(ctx + ".custom_adjacency must be square");
      for (std::size_t k = 0; k < n; ++k) a[i * n + k] = rows[i][k];
    }
    c.custom_adjacency = a;
  }
  read_optional(j, "ffn_width", c.ffn_width, ctx);
  read_optional(j, "ta_literal_residual", c.ta_literal_residual, ctx);
  read_optional(j, "per_block_masks", c.per_block_masks, ctx);
  read_optional(j, "decoder_mstfe_per_layer", c.decoder_mstfe_per_layer, ctx);
  read_optional(j, "causal_decoder_mstfe", c.causal_decoder_mstfe, ctx);
  c.validate();
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.leads = 4;
  c.t_in = 32;
  c.t_out = 8;
  c.d_lift = 8;
  c.d_cheb = 8;
  c.d_model = 12;
  c.blocks = 2;
  c.heads = 2;
  c.cheb_order = 3;
  return c;
}

std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> s;
  auto weight = [&](std::string name, Shape shape, std::size_t fi, std::size_t fo) {
    s.push_back({std::move(name), std::move(shape), ParamKind::kWeight, fi, fo});
  };
  auto bias = [&](std::string name, std::size_t n) { s.push_back({std::move(name), {n}, ParamKind::kBias, 1, 1}); };
  auto norm = [&](const std::string& prefix, std::size_t n) {
    s.push_back({prefix + ".gain", {n}, ParamKind::kGain, 1, 1});
    s.push_back({prefix + ".bias", {n}, ParamKind::kBias, 1, 1});
  };
  const std::size_t L = cfg.leads, K = cfg.cheb_order, H = cfg.heads, Dc = cfg.d_cheb, D = cfg.d_model;
  const std::size_t nk = cfg.kernels.size();

  weight("lift.w", {1, cfg.d_lift}, 1, cfg.d_lift);
  if (!cfg.per_block_masks) s.push_back({"gcn.mask", {K, L, L}, ParamKind::kMask, 1, 1});
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = "enc" + std::to_string(b) + ".";
    const std::size_t din = cfg.block_input_width(b), dh = din / H;
    for (const char* m : {"ta.wq", "ta.wk", "ta.wv"}) weight(p + m, {din, din}, din, din);
    for (const char* m : {"ta.head_q", "ta.head_k", "ta.head_v"}) weight(p + m, {H, din, dh}, din, dh);
    weight(p + "ta.out.w", {din, din}, din, din);
    bias(p + "ta.out.b", din);
    norm(p + "ta.ln", din);
    weight(p + "sa.q", {K, din, din}, din, din);
    weight(p + "sa.k", {K, din, din}, din, din);
    if (cfg.per_block_masks) s.push_back({p + "gcn.mask", {K, L, L}, ParamKind::kMask, 1, 1});
    weight(p + "gcn.theta", {K, din, Dc}, din, Dc);
    for (std::size_t i = 0; i < nk; ++i) {
      const std::size_t k = cfg.kernels[i];
      weight(p + "gtu.conv" + std::to_string(i) + ".w", {2 * Dc, Dc, k}, Dc * k, 2 * Dc * k);
      bias(p + "gtu.conv" + std::to_string(i) + ".b", 2 * Dc);
    }
    weight(p + "gtu.fuse.w", {nk * Dc, Dc}, nk * Dc, Dc);
    bias(p + "gtu.fuse.b", Dc);
    weight(p + "res.w", {din, Dc}, din, Dc);
    bias(p + "res.b", Dc);
    norm(p + "ln", Dc);
  }
  s.push_back({"dec.start", {D}, ParamKind::kStartToken, 1, D});
  weight("dec.embed.w", {1, D}, 1, D);
  bias("dec.embed.b", D);
  const auto widths = cfg.decoder_branch_widths();
  for (std::size_t j = 0; j < cfg.decoder_mstfe_count(); ++j) {
    const std::string p = "dec.mstfe" + std::to_string(j) + ".";
    for (std::size_t i = 0; i < nk; ++i) {
      const std::size_t k = cfg.kernels[i];
      weight(p + "conv" + std::to_string(i) + ".w", {widths[i], D, k}, D * k, widths[i] * k);
      bias(p + "conv" + std::to_string(i) + ".b", widths[i]);
    }
    weight(p + "proj.w", {D, D}, D, D);
    bias(p + "proj.b", D);
    norm(p + "ln", D);
  }
  const std::size_t mem = cfg.memory_width(), F = cfg.ffn_width;
  for (std::size_t l = 0; l < cfg.blocks; ++l) {
    const std::string p = "dec.layer" + std::to_string(l) + ".";
    for (const char* m : {"self.q", "self.k", "self.v", "self.o"}) {
      weight(p + m + ".w", {D, D}, D, D);
      bias(p + m + ".b", D);
    }
    norm(p + "ln1", D);
    weight(p + "cross.q.w", {D, D}, D, D);
    bias(p + "cross.q.b", D);
    for (const char* m : {"cross.k", "cross.v"}) {
      weight(p + m + ".w", {mem, D}, mem, D);
      bias(p + m + ".b", D);
    }
    weight(p + "cross.o.w", {D, D}, D, D);
    bias(p + "cross.o.b", D);
    norm(p + "ln2", D);
    weight(p + "ffn.w1", {D, F}, D, F);
    bias(p + "ffn.b1", F);
    weight(p + "ffn.w2", {F, D}, F, D);
    bias(p + "ffn.b2", D);
    norm(p + "ln3", D);
  }
  weight("dec.head.w", {D, 1}, D, 1);
  bias("dec.head.b", 1);
  return s;
}

std::size_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t L = cfg.leads, K = cfg.cheb_order, Dc = cfg.d_cheb, D = cfg.d_model, F = cfg.ffn_width;
  const std::size_t nk = cfg.kernels.size(), mem = cfg.memory_width();
  std::size_t ksum = 0;
  for (std::size_t k : cfg.kernels) ksum += k;
  std::size_t n = cfg.d_lift + (cfg.per_block_masks ? cfg.blocks : 1) * K * L * L;
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::size_t din = cfg.block_input_width(b);
    n += 7 * din * din + 3 * din;                  // temporal attention
    n += 2 * K * din * din;                        // spatial attention
    n += K * din * Dc;                             // graph convolution
    n += 2 * Dc * Dc * ksum + 2 * Dc * nk;         // gated branches
    n += nk * Dc * Dc + Dc + din * Dc + Dc + 2 * Dc;  // fuse, residual, norm
  }
  n += D + 2 * D;  // start token, embedding
  std::size_t branch = D * D + D + 2 * D;
  const auto widths = cfg.decoder_branch_widths();
  for (std::size_t i = 0; i < nk; ++i) branch += widths[i] * D * cfg.kernels[i] + widths[i];
  n += cfg.decoder_mstfe_count() * branch;
  n += cfg.blocks * (4 * (D * D + D) + 2 * (D * D + D) + 2 * (mem * D + D) + D * F + F + F * D + D + 6 * D);
  n += D + 1;
  return n;
}

void ModelParams::add(std::string name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
  index_[name] = names_.size();
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

std::size_t ModelParams::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (const auto& spec : param_specs(cfg)) {
    Tensor t(spec.shape);
    switch (spec.kind) {
      case ParamKind::kWeight:
      case ParamKind::kStartToken: {
        const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& v : t.data()) v = u(rng);
        break;
      }
      case ParamKind::kGain:
      case ParamKind::kMask:
        t = Tensor::ones(spec.shape);
        break;
      case ParamKind::kBias:
        break;
    }
    params.add(spec.name, std::move(t));
  }
  return params;
}

void check_params(const ModelConfig& cfg, const ModelParams& params) {
  const auto specs = param_specs(cfg);
  if (specs.size() != params.size())
    throw std::invalid_argument("parameter census mismatch: expected " + std::to_string(specs.size()) +
                                " tensors, got " + std::to_string(params.size()));
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (params.names()[i] != specs[i].name)
      throw std::invalid_argument("parameter " + std::to_string(i) + " is " + params.names()[i] + ", expected " +
                                  specs[i].name);
    if (params.tensors()[i].shape() != specs[i].shape)
      throw ShapeError("parameter " + specs[i].name + " has shape " + shape_str(params.tensors()[i].shape()) +
                       ", expected " + shape_str(specs[i].shape));
  }
}

BoundParams::BoundParams(const ModelParams& params, bool requires_grad) : params_(&params) {
  vars_.reserve(params.size());
  for (const auto& t : params.tensors()) vars_.push_back(ad::leaf(t, requires_grad));
}

BoundParams::BoundParams(const ModelParams& params, std::vector<ad::Var> vars) : params_(&params), vars_(std::move(vars)) {
  if (vars_.size() != params.size())
    throw std::invalid_argument("bound " + std::to_string(vars_.size()) + " vars for " + std::to_string(params.size()) +
                                " parameters");
  for (std::size_t i = 0; i < vars_.size(); ++i)
    if (vars_[i].shape() != params.tensors()[i].shape())
      throw ShapeError("bound var for " + params.names()[i] + " has shape " + shape_str(vars_[i].shape()));
}

std::vector<Tensor> BoundParams::grads() const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (const auto& v : vars_) out.push_back(v.grad().size() == v.value().size() && v.grad().shape() == v.shape()
                                                ? v.grad()
                                                : Tensor::zeros(v.shape()));
  return out;
}

Tensor positional_encoding(std::size_t steps, std::size_t d) {
  if (d % 2) throw std::invalid_argument("positional encoding width must be even");
  Tensor pe({steps, d});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d));
      pe[t * d + 2 * i] = std::sin(angle);
      pe[t * d + 2 * i + 1] = std::cos(angle);
    }
  return pe;
}

namespace {

graph::LeadGraph make_graph(const ModelConfig& cfg) {
  cfg.validate();
  const Tensor adj = graph::build_static_adjacency(cfg.leads, cfg.adjacency, cfg.custom_adjacency);
  return graph::LeadGraph::build(adj, cfg.cheb_order);
}

std::string block_prefix(std::size_t b) { return "enc" + std::to_string(b) + "."; }

}  // namespace

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)), graph_(make_graph(cfg_)) {}

Var Model::lift_input(const BoundParams& p, const Var& x) const {
  if (x.value().rank() != 2 || x.dim(0) != cfg_.leads)
    throw ShapeError("encoder input must be [" + std::to_string(cfg_.leads) + ", T], got " + shape_str(x.shape()));
  return ad::matmul(ad::reshape(x, {x.dim(0), x.dim(1), 1}), p("lift.w"));
}

Model::TemporalOut Model::temporal_attention(const BoundParams& p, std::size_t block, const Var& x,
                                             const Var& prev) const {
  const std::string pre = block_prefix(block) + "ta.";
  const std::size_t L = x.dim(0), T = x.dim(1), D = x.dim(2), H = cfg_.heads, dh = D / H;
  auto heads_of = [&](const char* w, const char* proj) {
    // [L, T, D] -> [L, 1, T, D] x [H, D, dh] -> [L, H, T, dh]
    const Var full = ad::matmul(x, p(pre + w));
    return ad::matmul(ad::reshape(full, {L, 1, T, D}), p(pre + proj));
  };
  const Var q = heads_of("wq", "head_q");
  const Var k = heads_of("wk", "head_k");
  const Var v = heads_of("wv", "head_v");
  const Var logits = ad::scale(ad::matmul(q, ad::transpose_last(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
  const Var acc = prev.defined() ? ad::add(logits, prev) : logits;
  const Var att = ad::softmax_last(acc);
  const Var o = ad::reshape(ad::permute(ad::matmul(att, v), {0, 2, 1, 3}), {L, T, D});
  Var y;
  if (cfg_.ta_literal_residual)
    y = ad::linear(ad::add(o, x), p(pre + "out.w"), p(pre + "out.b"));
  else
    y = ad::add(ad::linear(o, p(pre + "out.w"), p(pre + "out.b")), x);
  y = ad::layer_norm(y, p(pre + "ln.gain"), p(pre + "ln.bias"));
  return {y, acc, logits, att};
}

Var Model::spatial_attention(const BoundParams& p, std::size_t block, const Var& y) const {
  const std::string pre = block_prefix(block) + "sa.";
  const std::size_t L = y.dim(0), D = y.dim(2);
  const Var desc = ad::reshape(ad::mean_axis(y, 1), {1, L, D});
  const Var q = ad::matmul(desc, p(pre + "q"));  // [K, L, D]
  const Var k = ad::matmul(desc, p(pre + "k"));
  return ad::scale(ad::matmul(q, ad::transpose_last(k)), 1.0 / std::sqrt(static_cast<double>(D)));
}

Var Model::masks(const BoundParams& p, std::size_t block) const {
  return cfg_.per_block_masks ? p(block_prefix(block) + "gcn.mask") : p("gcn.mask");
}

Var Model::mstfe_gtu(const BoundParams& p, std::size_t block, const Var& h) const {
  const std::string pre = block_prefix(block) + "gtu.";
  const std::size_t Dc = cfg_.d_cheb;
  const Var channels = ad::permute(h, {0, 2, 1});  // [L, Dc, T]
  std::vector<Var> branches;
  for (std::size_t i = 0; i < cfg_.kernels.size(); ++i) {
    const std::string conv = pre + "conv" + std::to_string(i);
    const Var z = ad::conv1d(channels, p(conv + ".w"), p(conv + ".b"), ad::Padding::kSame);
    branches.push_back(ad::mul(ad::tanh(ad::slice(z, 1, 0, Dc)), ad::sigmoid(ad::slice(z, 1, Dc, 2 * Dc))));
  }
  const Var joined = ad::permute(ad::concat(branches, 1), {0, 2, 1});  // [L, T, nk * Dc]
  return ad::linear(joined, p(pre + "fuse.w"), p(pre + "fuse.b"));
}

Model::BlockOut Model::encoder_block(const BoundParams& p, std::size_t block, const Var& x, const Var& prev,
                                     ForwardTrace* trace) const {
  const std::string pre = block_prefix(block);
  const auto ta = temporal_attention(p, block, x, prev);
  const Var scores = spatial_attention(p, block, ta.y);
  const Var p_eff = graph::effective_dependency(scores, graph_.adjacency, masks(p, block));
  const Var h_gcn = graph::cheb_gcn(ta.y, p_eff, graph_.basis, p(pre + "gcn.theta"));
  const Var h_m = mstfe_gtu(p, block, h_gcn);
  const Var residual = ad::linear(ta.y, p(pre + "res.w"), p(pre + "res.b"));
  const Var out = ad::layer_norm(ad::relu(ad::add(h_m, residual)), p(pre + "ln.gain"), p(pre + "ln.bias"));
  if (trace)
    trace->blocks.push_back({ta.logits.value(), ta.accumulated.value(), ta.attention.value(), scores.value(),
                             p_eff.value()});
  return {out, ta.accumulated};
}

Var Model::encode(const BoundParams& p, const Var& x, ForwardTrace* trace) const {
  Var h = lift_input(p, x);
  Var acc;
  std::vector<Var> outputs;
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    auto r = encoder_block(p, b, h, acc, trace);
    h = r.out;
    acc = r.accumulated;
    outputs.push_back(h);
  }
  const std::size_t L = x.dim(0), T = x.dim(1);
  const Var joined = ad::concat(outputs, 1);  // [L, N*T, Dc]
  return ad::reshape(ad::permute(joined, {1, 0, 2}), {cfg_.blocks * T, L * cfg_.d_cheb});
}

Var Model::decoder_mstfe(const BoundParams& p, std::size_t index, const Var& h) const {
  const std::string pre = "dec.mstfe" + std::to_string(index) + ".";
  const Var channels = ad::transpose_last(h);  // [D, n]
  const auto pad = cfg_.causal_decoder_mstfe ? ad::Padding::kCausal : ad::Padding::kSame;
  std::vector<Var> branches;
  for (std::size_t i = 0; i < cfg_.kernels.size(); ++i) {
    const std::string conv = pre + "conv" + std::to_string(i);
    branches.push_back(ad::relu(ad::conv1d(channels, p(conv + ".w"), p(conv + ".b"), pad)));
  }
  const Var joined = ad::transpose_last(ad::concat(branches, 0));  // [n, D]
  const Var proj = ad::linear(joined, p(pre + "proj.w"), p(pre + "proj.b"));
  return ad::layer_norm(ad::add(h, proj), p(pre + "ln.gain"), p(pre + "ln.bias"));
}

namespace {

// q_in: [n, D]; kv_in: [m, E]. Returns [n, D] and the attention weights [H, n, m].
std::pair<Var, Var> multi_head(const BoundParams& p, const std::string& pre, const Var& q_in, const Var& kv_in,
                               std::size_t heads, bool causal) {
  const std::size_t n = q_in.dim(0), m = kv_in.dim(0), D = p(pre + "q.w").dim(1), dh = D / heads;
  auto split = [&](const Var& t, std::size_t rows) { return ad::permute(ad::reshape(t, {rows, heads, dh}), {1, 0, 2}); };
  const Var q = split(ad::linear(q_in, p(pre + "q.w"), p(pre + "q.b")), n);
  const Var k = split(ad::linear(kv_in, p(pre + "k.w"), p(pre + "k.b")), m);
  const Var v = split(ad::linear(kv_in, p(pre + "v.w"), p(pre + "v.b")), m);
  const Var scores = ad::scale(ad::matmul(q, ad::transpose_last(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
  const Var att = ad::softmax_last(scores, causal);
  const Var o = ad::reshape(ad::permute(ad::matmul(att, v), {1, 0, 2}), {n, D});
  return {ad::linear(o, p(pre + "o.w"), p(pre + "o.b")), att};
}

}  // namespace

Var Model::decode_sequence(const BoundParams& p, const Var& memory, const Var& prev, ForwardTrace* trace) const {
  const std::size_t D = cfg_.d_model;
  if (memory.value().rank() != 2 || memory.dim(1) != cfg_.memory_width())
    throw ShapeError("memory must be [rows, " + std::to_string(cfg_.memory_width()) + "], got " +
                     shape_str(memory.shape()));
  Var h = ad::reshape(p("dec.start"), {1, D});
  if (prev.defined()) {
    if (prev.value().rank() != 1) throw ShapeError("decoder inputs must be [n], got " + shape_str(prev.shape()));
    const Var emb = ad::linear(ad::reshape(prev, {prev.dim(0), 1}), p("dec.embed.w"), p("dec.embed.b"));
    h = ad::concat({h, emb}, 0);
  }
  const std::size_t n = h.dim(0);
  h = ad::add(h, ad::constant(positional_encoding(n, D)));
  h = decoder_mstfe(p, 0, h);
  for (std::size_t l = 0; l < cfg_.blocks; ++l) {
    const std::string pre = "dec.layer" + std::to_string(l) + ".";
    auto [self, self_att] = multi_head(p, pre + "self.", h, h, cfg_.heads, true);
    h = ad::layer_norm(ad::add(h, self), p(pre + "ln1.gain"), p(pre + "ln1.bias"));
    auto [cross, cross_att] = multi_head(p, pre + "cross.", h, memory, cfg_.heads, false);
    h = ad::layer_norm(ad::add(h, cross), p(pre + "ln2.gain"), p(pre + "ln2.bias"));
    const Var ff = ad::linear(ad::relu(ad::linear(h, p(pre + "ffn.w1"), p(pre + "ffn.b1"))), p(pre + "ffn.w2"),
                              p(pre + "ffn.b2"));
    h = ad::layer_norm(ad::add(h, ff), p(pre + "ln3.gain"), p(pre + "ln3.bias"));
    if (cfg_.decoder_mstfe_per_layer && l + 1 < cfg_.blocks) h = decoder_mstfe(p, l + 1, h);
    if (trace) {
      trace->decoder.self_attention.push_back(self_att.value());
      trace->decoder.cross_attention.push_back(cross_att.value());
    }
  }
  return ad::reshape(ad::linear(h, p("dec.head.w"), p("dec.head.b")), {n});
}

Var Model::decode_teacher_forced(const BoundParams& p, const Var& memory, const Var& target,
                                 ForwardTrace* trace) const {
  if (target.value().rank() != 1) throw ShapeError("target must be [T_out], got " + shape_str(target.shape()));
  const std::size_t steps = target.dim(0);
  const Var shifted = steps > 1 ? ad::slice(target, 0, 0, steps - 1) : Var();
  return decode_sequence(p, memory, shifted, trace);
}

Var Model::decode_autoregressive(const BoundParams& p, const Var& memory, std::size_t steps) const {
  std::vector<Var> emitted;
  Var prev;
  for (std::size_t t = 0; t < steps; ++t) {
    const Var y = decode_sequence(p, memory, prev);
    emitted.push_back(ad::slice(y, 0, t, t + 1));
    prev = ad::concat(emitted, 0);
  }
  return prev;  // undefined when steps == 0
}

Tensor Model::predict(const ModelParams& params, const Tensor& x) const {
  const BoundParams p(params, false);
  return decode_autoregressive(p, encode(p, ad::constant(x)), cfg_.t_out).value();
}

Tensor Model::predict_teacher_forced(const ModelParams& params, const Tensor& x, const Tensor& target) const {
  const BoundParams p(params, false);
  return decode_teacher_forced(p, encode(p, ad::constant(x)), ad::constant(target)).value();
}

}  // namespace fhnet::model
