#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "fhnet/checkpoint.hpp"
#include "fhnet/model.hpp"
#include "fhnet/optim.hpp"
#include "fhnet/record.hpp"

using namespace fhnet;
using namespace fhnet::model;
using ad::Var;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = n(rng);
  return t;
}

// Every row along the final extent sums to one.
double max_row_error(const Tensor& t) {
  const std::size_t w = t.shape().back();
  double worst = 0.0;
  for (std::size_t r = 0; r < t.size() / w; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < w; ++j) s += t[r * w + j];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

// Plain-loop [n, k] x [k, m]
std::vector<double> matvec_rows(const std::vector<double>& row, const Tensor& w, std::size_t offset, std::size_t k,
                                std::size_t m) {
  std::vector<double> out(m, 0.0);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 0; i < k; ++i) out[j] += row[i] * w[offset + i * m + j];
  return out;
}

// Logits of one lead and head recomputed from the block input.
std::vector<double> recompute_logits(const ModelParams& p, std::size_t block, const Tensor& x, std::size_t lead,
                                     std::size_t head, std::size_t heads) {
  const std::size_t T = x.dim(1), D = x.dim(2), dh = D / heads;
  const std::string pre = "enc" + std::to_string(block) + ".ta.";
  std::vector<std::vector<double>> q(T), k(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> row(x.data().begin() + static_cast<std::ptrdiff_t>((lead * T + t) * D),
                            x.data().begin() + static_cast<std::ptrdiff_t>((lead * T + t + 1) * D));
    q[t] = matvec_rows(matvec_rows(row, p.get(pre + "wq"), 0, D, D), p.get(pre + "head_q"), head * D * dh, D, dh);
    k[t] = matvec_rows(matvec_rows(row, p.get(pre + "wk"), 0, D, D), p.get(pre + "head_k"), head * D * dh, D, dh);
  }
  std::vector<double> out(T * T, 0.0);
  for (std::size_t a = 0; a < T; ++a)
    for (std::size_t b = 0; b < T; ++b) {
      for (std::size_t i = 0; i < dh; ++i) out[a * T + b] += q[a][i] * k[b][i];
      out[a * T + b] /= std::sqrt(static_cast<double>(dh));
    }
  return out;
}

ModelConfig causal_toy() {
  auto c = ModelConfig::toy();
  c.kernels = {1, 1, 1};
  return c;
}

}  // namespace

TEST(ModelConfig, ValidationAndJson) {
  auto c = ModelConfig::toy();
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.d_lift = 7;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.kernels = {3, 4};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.d_model = 11;
  EXPECT_THROW(bad.validate(), std::invalid_argument);

  c.adjacency = graph::AdjacencyMode::kCustom;
  c.custom_adjacency = Tensor::from({4, 4}, {0, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0});
  auto back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  auto j = nlohmann::json(c.to_json());
  j["dropout"] = 0.1;
  EXPECT_THROW(ModelConfig::from_json(j), std::invalid_argument);
}

TEST(Params, CensusMatchesEnumerationAndClosedForm) {
  auto toy = ModelConfig::toy();
  EXPECT_EQ(param_count(toy), 13409u);
  EXPECT_EQ(init_params(toy, 0).scalar_count(), 13409u);

  ModelConfig other;
  other.leads = 3;
  other.d_lift = 6;
  other.d_cheb = 4;
  other.d_model = 10;
  other.blocks = 3;
  other.heads = 2;
  other.cheb_order = 2;
  other.kernels = {3, 5};
  other.ffn_width = 16;
  other.per_block_masks = false;
  other.decoder_mstfe_per_layer = false;
  EXPECT_EQ(param_count(other), 6501u);
  EXPECT_EQ(init_params(other, 0).scalar_count(), 6501u);
}

TEST(Params, SeededInitAndMaskOnes) {
  auto c = ModelConfig::toy();
  EXPECT_EQ(init_params(c, 5), init_params(c, 5));
  EXPECT_FALSE(init_params(c, 5) == init_params(c, 6));
  auto p = init_params(c, 5);
  for (double v : p.get("enc0.gcn.mask").data()) EXPECT_EQ(v, 1.0);
  for (double v : p.get("enc1.ta.out.b").data()) EXPECT_EQ(v, 0.0);
  for (double v : p.get("dec.layer0.ln2.gain").data()) EXPECT_EQ(v, 1.0);
  // the dynamic adjacency at init equals the static one
  Model m(c);
  BoundParams b(p, false);
  auto dyn = ad::mul(ad::constant(m.lead_graph().adjacency), m.masks(b, 0)).value();
  for (std::size_t k = 0; k < c.cheb_order; ++k)
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(dyn[k * 16 + i], m.lead_graph().adjacency[i]);
  check_params(c, p);
  auto wrong = c;
  wrong.d_model = 14;
  EXPECT_THROW(check_params(wrong, p), std::invalid_argument);
}

TEST(Lift, Contracts) {
  auto c = ModelConfig::toy();
  Model m(c);
  auto p = init_params(c, 1);
  BoundParams b(p, false);
  auto zero = m.lift_input(b, ad::constant(Tensor::zeros({4, 32})));
  EXPECT_EQ(zero.shape(), (Shape{4, 32, 8}));
  for (double v : zero.value().data()) EXPECT_EQ(v, 0.0);

  auto one = c;
  one.d_lift = 1;
  one.heads = 1;
  Model m1(one);
  auto p1 = init_params(one, 1);
  p1.get("lift.w")[0] = 1.0;
  BoundParams b1(p1, false);
  auto x = random_tensor({4, 32}, 2);
  EXPECT_EQ(m1.lift_input(b1, ad::constant(x)).value().vec(), x.vec());
}

TEST(TemporalAttention, RowsStochasticAndZeroAccumulatorIsPlainAttention) {
  auto c = ModelConfig::toy();
  Model m(c);
  auto p = init_params(c, 3);
  BoundParams b(p, false);
  auto x = ad::constant(random_tensor({4, 32, 8}, 4));
  auto plain = m.temporal_attention(b, 0, x, Var());
  auto zeroed = m.temporal_attention(b, 0, x, ad::constant(Tensor::zeros({4, 2, 32, 32})));
  EXPECT_LT(max_row_error(plain.attention.value()), 1e-12);
  EXPECT_EQ(plain.y.value(), zeroed.y.value());
  EXPECT_EQ(plain.accumulated.value(), plain.logits.value());
}

TEST(TemporalAttention, ConstantInTimeClosedForm) {
  auto c = ModelConfig::toy();
  Model m(c);
  auto p = init_params(c, 7);
  const std::size_t L = 4, T = 3, D = 8, H = 2, dh = 4;
  Tensor x({L, T, D});
  auto base = random_tensor({L, D}, 8);
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) x[(l * T + t) * D + d] = base[l * D + d];
  BoundParams b(p, false);
  auto out = m.temporal_attention(b, 0, ad::constant(x), Var());
  for (double v : out.attention.value().data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<double> row(base.data().begin() + static_cast<std::ptrdiff_t>(l * D),
                            base.data().begin() + static_cast<std::ptrdiff_t>((l + 1) * D));
    const auto v1 = matvec_rows(row, p.get("enc0.ta.wv"), 0, D, D);
    std::vector<double> o;
    for (std::size_t h = 0; h < H; ++h) {
      auto vh = matvec_rows(v1, p.get("enc0.ta.head_v"), h * D * dh, D, dh);
      o.insert(o.end(), vh.begin(), vh.end());
    }
    auto pre = matvec_rows(o, p.get("enc0.ta.out.w"), 0, D, D);
    double mean = 0.0, var = 0.0;
    for (std::size_t d = 0; d < D; ++d) mean += (pre[d] += row[d]) / D;
    for (double v : pre) var += (v - mean) * (v - mean) / D;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d)
        EXPECT_NEAR(out.y.value()[(l * T + t) * D + d], (pre[d] - mean) / std::sqrt(var + 1e-5), 1e-12);
  }
}

TEST(SpatialAttention, Contracts) {
  auto c = ModelConfig::toy();
  Model m(c);
  auto p = init_params(c, 9);
  BoundParams b(p, false);
  auto s = m.spatial_attention(b, 0, ad::constant(random_tensor({4, 32, 8}, 10)));
  EXPECT_EQ(s.shape(), (Shape{3, 4, 4}));
  const auto zero = m.spatial_attention(b, 0, ad::constant(Tensor::zeros({4, 32, 8})));
  for (double v : zero.value().data()) EXPECT_EQ(v, 0.0);

  Tensor same({4, 32, 8});
  auto lead = random_tensor({32, 8}, 11);
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t i = 0; i < 256; ++i) same[l * 256 + i] = lead[i];
  auto sym = m.spatial_attention(b, 0, ad::constant(same)).value();
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 1; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(sym[(k * 4 + i) * 4 + j], sym[(k * 4) * 4 + j]);
}

TEST(GatedUnit, ZeroShapeAndPointwiseOracle) {
  auto c = ModelConfig::toy();
  Model m(c);
  auto p = init_params(c, 12);
  BoundParams b(p, false);
  for (std::size_t T : {1u, 5u, 32u}) {
    auto z = m.mstfe_gtu(b, 0, ad::constant(Tensor::zeros({4, T, 8})));
    EXPECT_EQ(z.shape(), (Shape{4, T, 8}));
    for (double v : z.value().data()) EXPECT_EQ(v, 0.0);
  }

  auto one = c;
  one.kernels = {1};
  Model m1(one);
  auto p1 = init_params(one, 12);
  Tensor w = Tensor::zeros({16, 8, 1});
  for (std::size_t ch = 0; ch < 8; ++ch) {
    w[(ch * 8 + ch)] = 1.0;         // tanh half
    w[((8 + ch) * 8 + ch)] = 1.0;   // gate half
  }
  p1.get("enc0.gtu.conv0.w") = w;
  p1.get("enc0.gtu.fuse.w") = Tensor::eye(8);
  BoundParams b1(p1, false);
  auto x = random_tensor({4, 6, 8}, 13);
  auto y = m1.mstfe_gtu(b1, 0, ad::constant(x)).value();
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(y[i], std::tanh(x[i]) / (1.0 + std::exp(-x[i])), 1e-15);
}

TEST(Encoder, BlockAccumulatesLogits) {
  auto c = ModelConfig::toy();
  Model m(c);
  auto p = init_params(c, 14);
  BoundParams b(p, false);
  auto x = random_tensor({4, 32}, 15);
  ForwardTrace trace;
  auto mem = m.encode(b, ad::constant(x), &trace);
  ASSERT_EQ(trace.blocks.size(), 2u);
  EXPECT_TRUE(mem.value().all_finite());

  // independent recomputation of both blocks' logits
  const auto lifted = m.lift_input(b, ad::constant(x));
  const auto out0 = m.encoder_block(b, 0, lifted, Var());
  for (std::size_t lead : {0u, 3u})
    for (std::size_t h = 0; h < 2; ++h) {
      const auto l0 = recompute_logits(p, 0, lifted.value(), lead, h, 2);
      const auto l1 = recompute_logits(p, 1, out0.out.value(), lead, h, 2);
      const std::size_t base = (lead * 2 + h) * 32 * 32;
      for (std::size_t i = 0; i < 32 * 32; ++i) {
        EXPECT_NEAR(trace.blocks[0].logits[base + i], l0[i], 1e-10);
        EXPECT_NEAR(trace.blocks[1].accumulated[base + i], l0[i] + l1[i], 1e-10);
      }
    }
}

TEST(Encoder, MemoryLayout) {
  auto c = ModelConfig::toy();
  Model m(c);
  auto p = init_params(c, 16);
  BoundParams b(p, false);
  auto x = ad::constant(random_tensor({4, 32}, 17));
  auto mem = m.encode(b, x).value();
  ASSERT_EQ(mem.shape(), (Shape{64, 32}));
  auto h0 = m.encoder_block(b, 0, m.lift_input(b, x), Var());
  auto h1 = m.encoder_block(b, 1, h0.out, h0.accumulated);
  for (std::size_t blk = 0; blk < 2; ++blk) {
    const Tensor& h = blk == 0 ? h0.out.value() : h1.out.value();
    for (std::size_t l = 0; l < 4; ++l)
      for (std::size_t t = 0; t < 32; ++t)
        for (std::size_t f = 0; f < 8; ++f)
          EXPECT_EQ(mem[(blk * 32 + t) * 32 + l * 8 + f], h[(l * 32 + t) * 8 + f]);
  }
  EXPECT_EQ(m.encode(b, x).value(), mem);

  auto wide = c;
  wide.d_cheb = 16;
  Model mw(wide);
  auto pw = init_params(wide, 16);
  BoundParams bw(pw, false);
  EXPECT_EQ(mw.encode(bw, x).shape(), (Shape{64, 64}));
}

TEST(PositionalEncoding, ClosedForm) {
  auto pe = positional_encoding(5, 12);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(pe[i], i % 2 ? 1.0 : 0.0);
  EXPECT_NEAR(pe[12], 0.8414709848078965, 1e-15);
  for (double v : pe.data()) EXPECT_LE(std::abs(v), 1.0);
  EXPECT_THROW(positional_encoding(3, 5), std::invalid_argument);
}

TEST(DecoderMstfe, ZeroInputGivesNormBiasAndKeepsShape) {
  auto c = ModelConfig::toy();
  Model m(c);
  auto p = init_params(c, 18);
  p.get("dec.mstfe0.ln.bias") = random_tensor({12}, 19);
  BoundParams b(p, false);
  auto z = m.decoder_mstfe(b, 0, ad::constant(Tensor::zeros({7, 12}))).value();
  for (std::size_t t = 0; t < 7; ++t)
    for (std::size_t d = 0; d < 12; ++d) EXPECT_EQ(z[t * 12 + d], p.get("dec.mstfe0.ln.bias")[d]);
  for (std::size_t n : {1u, 50u})
    EXPECT_EQ(m.decoder_mstfe(b, 0, ad::constant(random_tensor({n, 12}, 20))).shape(), (Shape{n, 12}));
  EXPECT_EQ(c.decoder_branch_widths(), (std::vector<std::size_t>{4, 4, 4}));
  auto odd = c;
  odd.d_model = 14;
  EXPECT_EQ(odd.decoder_branch_widths(), (std::vector<std::size_t>{6, 4, 4}));
}

TEST(Decoder, ShapesAndFirstStepConsistency) {
  auto c = ModelConfig::toy();
  Model m(c);
  auto p = init_params(c, 21);
  BoundParams b(p, false);
  auto mem = m.encode(b, ad::constant(random_tensor({4, 32}, 22)));
  auto y = m.decode_teacher_forced(b, mem, ad::constant(random_tensor({8}, 23)));
  EXPECT_EQ(y.shape(), (Shape{8}));
  auto single = m.decode_teacher_forced(b, mem, ad::constant(random_tensor({1}, 24)));
  auto first = m.decode_autoregressive(b, mem, 1);
  EXPECT_EQ(single.value(), first.value());
  EXPECT_FALSE(m.decode_autoregressive(b, mem, 0).defined());
}

TEST(Decoder, CausalWithPointwiseKernels) {
  for (const auto& c : {causal_toy(), [] {
                          auto k = ModelConfig::toy();
                          k.causal_decoder_mstfe = true;
                          return k;
                        }()}) {
    Model m(c);
    auto p = init_params(c, 25);
    BoundParams b(p, false);
    auto mem = m.encode(b, ad::constant(random_tensor({4, 32}, 26)));
    const auto prev = random_tensor({7}, 27);
    const auto base = m.decode_sequence(b, mem, ad::constant(prev)).value();
    for (std::size_t j = 0; j < 7; ++j) {
      Tensor moved = prev;
      moved[j] += 3.0;
      const auto out = m.decode_sequence(b, mem, ad::constant(moved)).value();
      // input position j + 1 may only influence outputs j + 1 onwards
      for (std::size_t t = 0; t <= j; ++t) EXPECT_EQ(out[t], base[t]) << "j=" << j << " t=" << t;
      EXPECT_NE(out[j + 1], base[j + 1]);
    }
  }
}

TEST(Decoder, SamePaddingSeesTheFuture) {
  auto c = ModelConfig::toy();
  Model m(c);
  auto p = init_params(c, 28);
  BoundParams b(p, false);
  auto mem = m.encode(b, ad::constant(random_tensor({4, 32}, 29)));
  auto prev = random_tensor({7}, 30);
  const auto base = m.decode_sequence(b, mem, ad::constant(prev)).value();
  prev[6] += 3.0;
  EXPECT_NE(m.decode_sequence(b, mem, ad::constant(prev)).value()[5], base[5]);
}

TEST(Decoder, RolloutMatchesTeacherForcingOnItsOwnPrefix) {
  auto causal = ModelConfig::toy();
  causal.causal_decoder_mstfe = true;
  for (const auto& c : {causal, causal_toy()}) {
    Model m(c);
    auto p = init_params(c, 31);
    BoundParams b(p, false);
    auto mem = m.encode(b, ad::constant(random_tensor({4, 32}, 32)));
    const auto roll = m.decode_autoregressive(b, mem, 8).value();
    const auto tf = m.decode_teacher_forced(b, mem, ad::constant(roll)).value();
    EXPECT_LT(max_abs_diff(roll, tf), 1e-10);
  }
  // with same padding each rollout step equals teacher forcing on the prefix it had
  auto c = ModelConfig::toy();
  Model m(c);
  auto p = init_params(c, 33);
  BoundParams b(p, false);
  auto mem = m.encode(b, ad::constant(random_tensor({4, 32}, 34)));
  const auto roll = m.decode_autoregressive(b, mem, 8).value();
  for (std::size_t t = 1; t <= 8; ++t) {
    Tensor prefix({t});
    for (std::size_t i = 0; i < t; ++i) prefix[i] = roll[i];
    const auto tf = m.decode_teacher_forced(b, mem, ad::constant(prefix)).value();
    EXPECT_LT(std::abs(tf[t - 1] - roll[t - 1]), 1e-10);
  }
}

TEST(Model, DeterministicAndRowStochastic) {
  auto c = ModelConfig::toy();
  c.adjacency = graph::AdjacencyMode::kFullyConnected;
  Model m(c);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto p = init_params(c, seed);
    auto x = random_tensor({4, 32}, 100 + seed, 2.0);
    auto y = random_tensor({8}, 200 + seed);
    BoundParams b(p, false);
    ForwardTrace trace;
    auto out = m.decode_teacher_forced(b, m.encode(b, ad::constant(x), &trace), ad::constant(y), &trace).value();
    for (const auto& blk : trace.blocks) {
      EXPECT_LT(max_row_error(blk.attention), 1e-12);
      EXPECT_LT(max_row_error(blk.p_eff), 1e-12);
    }
    for (const auto& a : trace.decoder.self_attention) EXPECT_LT(max_row_error(a), 1e-12);
    for (const auto& a : trace.decoder.cross_attention) EXPECT_LT(max_row_error(a), 1e-12);
    EXPECT_EQ(m.predict_teacher_forced(p, x, y), out);
    EXPECT_EQ(m.predict(p, x), m.predict(p, x));
  }
}

TEST(Model, GradientCheckSampledCoordinates) {
  auto c = ModelConfig::toy();
  c.adjacency = graph::AdjacencyMode::kRing;
  Model m(c);
  auto params = init_params(c, 40);
  const auto x = random_tensor({4, 32}, 41);
  const auto y = random_tensor({8}, 42);
  // Key biases shift every score in a row equally, so their gradient is zero
  // and a relative comparison only measures roundoff.
  auto is_key_bias = [](const std::string& n) { return n.ends_with(".k.b"); };
  std::vector<Tensor> points;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!is_key_bias(params.names()[i])) points.push_back(params.tensors()[i]);
  points.push_back(x);
  auto fn = [&](const std::vector<Var>& v) {
    std::vector<Var> vars;
    std::size_t j = 0;
    for (std::size_t i = 0; i < params.size(); ++i)
      vars.push_back(is_key_bias(params.names()[i]) ? ad::constant(params.tensors()[i]) : v[j++]);
    BoundParams b(params, vars);
    return ad::mse(m.decode_teacher_forced(b, m.encode(b, v.back()), ad::constant(y)), ad::constant(y));
  };
  GradCheckOptions opt;
  opt.max_coords_per_tensor = 2;
  opt.seed = 3;
  auto res = grad_check(fn, points, opt);
  EXPECT_LT(res.max_rel_error, 1e-4) << "tensor " << res.worst_tensor;
  EXPECT_GT(res.checked, 150u);

  BoundParams b(params, true);
  auto loss = ad::mse(m.decode_teacher_forced(b, m.encode(b, ad::constant(x)), ad::constant(y)), ad::constant(y));
  ad::backward(loss);
  const auto grads = b.grads();
  std::size_t seen = 0;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (is_key_bias(params.names()[i])) {
      ++seen;
      for (double g : grads[i].data()) EXPECT_LT(std::abs(g), 1e-12) << params.names()[i];
    }
  EXPECT_EQ(seen, 4u);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  auto c = ModelConfig::toy();
  Checkpoint ck{c, init_params(c, 50), std::nullopt, {{"note", "x"}}};
  auto bytes = serialize_checkpoint(ck);
  auto back = deserialize_checkpoint(bytes, "mem");
  EXPECT_EQ(back.params, ck.params);
  EXPECT_EQ(back.config.to_json(), c.to_json());
  EXPECT_FALSE(back.optimizer.has_value());
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(content_id(bytes), content_id(serialize_checkpoint(back)));
  EXPECT_EQ(content_id(bytes).size(), 16u);

  AdamState s;
  auto grads = ck.params.tensors();
  adam_step(std::span<Tensor>(ck.params.tensors()), std::span<const Tensor>(grads), s);
  ck.optimizer = s;
  auto with_opt = deserialize_checkpoint(serialize_checkpoint(ck), "mem");
  ASSERT_TRUE(with_opt.optimizer.has_value());
  EXPECT_EQ(with_opt.optimizer->step, 1);
  EXPECT_EQ(with_opt.optimizer->second_moment, s.second_moment);

  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3), "mem"), ParseError);
  EXPECT_THROW(deserialize_checkpoint("NOTACKPT" + bytes.substr(8), "mem"), ParseError);

  const auto path = std::filesystem::temp_directory_path() / "fhnet_model_ck.bin";
  save_checkpoint(path, ck);
  EXPECT_EQ(load_checkpoint(path).params, ck.params);
}
