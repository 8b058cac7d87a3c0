#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "crackseg/kernels.hpp"
#include "crackseg/model.hpp"
#include "crackseg/ops.hpp"
#include "crackseg/train.hpp"
#include "testutil.hpp"

using namespace crackseg;
using testutil::fd_check_op;
using testutil::random_tensor;

namespace {

AdapterWeights random_adapter(Rng& rng, int d, int m, bool zero_up) {
  AdapterWeights w;
  w.w_down = random_tensor(rng, {d, m}, true, -0.5, 0.5);
  w.b_down = random_tensor(rng, {m}, true, -0.2, 0.2);
  w.w_up = zero_up ? make_tensor({m, d}) : random_tensor(rng, {m, d}, true, -0.5, 0.5);
  w.b_up = zero_up ? make_tensor({d}) : random_tensor(rng, {d}, true, -0.2, 0.2);
  w.w_up->tunable = true;
  w.b_up->tunable = true;
  return w;
}

std::vector<double> adapter_reference(const std::vector<double>& x, int rows,
                                      const AdapterWeights& w, bool residual) {
  const int d = w.w_down->shape[0], m = w.w_down->shape[1];
  std::vector<double> out(static_cast<std::size_t>(rows) * d);
  for (int r = 0; r < rows; ++r) {
    std::vector<double> h(m);
    for (int j = 0; j < m; ++j) {
      double acc = w.b_down->data[j];
      for (int k = 0; k < d; ++k) acc += x[r * d + k] * w.w_down->data[k * m + j];
      h[j] = detail::gelu_value(acc);
    }
    for (int j = 0; j < d; ++j) {
      double acc = w.b_up->data[j];
      for (int k = 0; k < m; ++k) acc += h[k] * w.w_up->data[k * d + j];
      out[r * d + j] = acc + (residual ? x[r * d + j] : 0.0);
    }
  }
  return out;
}

Model toy_model(DeltaSpec delta, uint64_t seed = 21) {
  ModelConfig mc;
  mc.encoder = EncoderConfig::vit_toy();
  mc.delta = std::move(delta);
  mc.init_seed = seed;
  return build_model(mc);
}

TensorPtr toy_image(uint64_t seed = 77) {
  Rng rng(seed);
  return random_tensor(rng, {3, 64, 64}, false, 0.0, 1.0);
}

std::vector<float> forward_values(const Model& model, const TensorPtr& image) {
  Tape tape = Tape::inference();
  return model_forward(tape, model, image)->data;
}

}  // namespace

TEST_CASE("sequential adapter is the identity at zero up-projection") {
  Rng rng(1);
  AdapterWeights w = random_adapter(rng, 8, 2, /*zero_up=*/true);
  auto x = random_tensor(rng, {5, 8}, false);
  Tape tape = Tape::inference();
  auto y = sequential_adapter(tape, x, w);
  REQUIRE(y->shape == x->shape);
  for (int64_t i = 0; i < x->numel(); ++i) CHECK(y->data[i] == x->data[i]);
}

TEST_CASE("sequential adapter matches a hand evaluation at d=2, m=1") {
  AdapterWeights w;
  w.w_down = make_tensor({2, 1}, {0.5f, -1.0f});
  w.b_down = make_tensor({1}, {0.25f});
  w.w_up = make_tensor({1, 2}, {2.0f, 0.5f});
  w.b_up = make_tensor({2}, {0.1f, -0.2f});
  auto x = make_tensor({1, 2}, {1.0f, 0.5f});
  Tape tape = Tape::inference();
  auto y = sequential_adapter(tape, x, w);
  // pre-activation 0.5*1 - 1.0*0.5 + 0.25 = 0.25
  const double g = detail::gelu_value(0.25);
  CHECK(y->data[0] == doctest::Approx(2.0 * g + 0.1 + 1.0).epsilon(1e-6));
  CHECK(y->data[1] == doctest::Approx(0.5 * g - 0.2 + 0.5).epsilon(1e-6));
}

TEST_CASE("sequential adapter gradient w.r.t. the down projection") {
  Rng rng(3);
  AdapterWeights w = random_adapter(rng, 6, 2, false);
  auto x = random_tensor(rng, {4, 6}, true);
  const double rel = fd_check_op([&](Tape& t) { return sequential_adapter(t, x, w); },
                                 {w.w_down, w.b_down, x}, 13, 1e-3, 1e-6, [&] {
                                   const std::vector<double> xd(x->data.begin(), x->data.end());
                                   return adapter_reference(xd, 4, w, true);
                                 });
  CHECK(rel < 1e-3);
}

TEST_CASE("parallel adapter reduces to the plain MLP path at s=0 and at zero up") {
  Rng rng(5);
  const int d = 6;
  MlpWeights mlp;
  mlp.w1 = random_tensor(rng, {d, 4 * d}, false, -0.4, 0.4);
  mlp.b1 = random_tensor(rng, {4 * d}, false, -0.1, 0.1);
  mlp.w2 = random_tensor(rng, {4 * d, d}, false, -0.4, 0.4);
  mlp.b2 = random_tensor(rng, {d}, false, -0.1, 0.1);
  auto gain = random_tensor(rng, {d}, false, 0.8, 1.2);
  auto bias = random_tensor(rng, {d}, false, -0.1, 0.1);
  auto x = random_tensor(rng, {3, d}, false);

  Tape tape = Tape::inference();
  auto plain_norm = ops::layer_norm(tape, x, gain, bias);
  auto plain = ops::add(tape, mlp_forward(tape, plain_norm, mlp), x);

  AdapterWeights live = random_adapter(rng, d, 2, false);
  auto at_zero_scale = parallel_adapter(tape, x, live, 0.0f, mlp, gain, bias);
  for (int64_t i = 0; i < plain->numel(); ++i) CHECK(at_zero_scale->data[i] == plain->data[i]);

  AdapterWeights zero_up = random_adapter(rng, d, 2, true);
  auto at_zero_up = parallel_adapter(tape, x, zero_up, 0.2f, mlp, gain, bias);
  for (int64_t i = 0; i < plain->numel(); ++i) CHECK(at_zero_up->data[i] == plain->data[i]);
}

TEST_CASE("parallel adapter matches the scaled formula at s=0.2") {
  Rng rng(7);
  const int d = 2;
  MlpWeights mlp;
  mlp.w1 = random_tensor(rng, {d, 8}, false, -0.4, 0.4);
  mlp.b1 = random_tensor(rng, {8}, false, -0.1, 0.1);
  mlp.w2 = random_tensor(rng, {8, d}, false, -0.4, 0.4);
  mlp.b2 = random_tensor(rng, {d}, false, -0.1, 0.1);
  auto gain = random_tensor(rng, {d}, false, 0.8, 1.2);
  auto bias = random_tensor(rng, {d}, false, -0.1, 0.1);
  AdapterWeights w = random_adapter(rng, d, 1, false);
  auto x = random_tensor(rng, {1, d}, false);

  Tape tape = Tape::inference();
  auto normed = ops::layer_norm(tape, x, gain, bias);
  auto mlp_out = mlp_forward(tape, normed, mlp);
  const std::vector<double> nd(normed->data.begin(), normed->data.end());
  const auto delta = adapter_reference(nd, 1, w, false);
  auto y = parallel_adapter(tape, x, w, 0.2f, mlp, gain, bias);
  for (int j = 0; j < d; ++j) {
    const double expect = 0.2 * delta[j] + mlp_out->data[j] + x->data[j];
    CHECK(y->data[j] == doctest::Approx(expect).epsilon(1e-5));
  }
}

TEST_CASE("lora_linear at B=0 equals the frozen linear bitwise") {
  Rng rng(9);
  const int d = 8, k = 8, r = 2;
  auto w0 = random_tensor(rng, {d, k}, false, -0.5, 0.5);
  auto b0 = random_tensor(rng, {k}, false, -0.2, 0.2);
  LoraPair lora{random_tensor(rng, {d, r}, true, -0.5, 0.5), make_tensor({r, k})};
  lora.b->tunable = true;
  auto x = random_tensor(rng, {5, d}, false);
  Tape tape = Tape::inference();
  auto base = ops::add_bias(tape, ops::matmul(tape, x, w0), b0);
  auto adapted = lora_linear(tape, x, w0, b0, lora);
  for (int64_t i = 0; i < base->numel(); ++i) CHECK(adapted->data[i] == base->data[i]);
}

TEST_CASE("full-rank LoRA recovers an arbitrary weight update") {
  Rng rng(11);
  const int d = 4;
  auto w0 = random_tensor(rng, {d, d}, false);
  auto b0 = random_tensor(rng, {d}, false);
  auto delta = random_tensor(rng, {d, d}, false);
  LoraPair lora{make_tensor({d, d}), make_tensor({d, d}, delta->data)};
  for (int i = 0; i < d; ++i) lora.a->data[i * d + i] = 1.0f;  // identity A
  auto x = random_tensor(rng, {3, d}, false);
  Tape tape = Tape::inference();
  auto got = lora_linear(tape, x, w0, b0, lora);
  auto merged = make_tensor({d, d});
  for (int i = 0; i < d * d; ++i) merged->data[i] = w0->data[i] + delta->data[i];
  auto expect = ops::add_bias(tape, ops::matmul(tape, x, merged), b0);
  for (int64_t i = 0; i < got->numel(); ++i)
    CHECK(got->data[i] == doctest::Approx(expect->data[i]).epsilon(1e-5));
}

TEST_CASE("lora bypass equals the explicit dense product") {
  Rng rng(13);
  const int d = 4, k = 4, r = 2;
  auto w0 = random_tensor(rng, {d, k}, false);
  auto b0 = random_tensor(rng, {k}, false);
  LoraPair lora{random_tensor(rng, {d, r}, true), random_tensor(rng, {r, k}, true)};
  auto x = random_tensor(rng, {6, d}, false);
  Tape tape = Tape::inference();
  auto got = lora_linear(tape, x, w0, b0, lora);
  const auto dense = lora_delta(*lora.a, *lora.b);
  for (int row = 0; row < 6; ++row)
    for (int j = 0; j < k; ++j) {
      double acc = b0->data[j];
      for (int c = 0; c < d; ++c)
        acc += static_cast<double>(x->data[row * d + c]) * (w0->data[c * k + j] + dense[c * k + j]);
      CHECK(got->data[row * k + j] == doctest::Approx(acc).epsilon(1e-5));
    }
}

TEST_CASE("lora_linear rejects shape mismatches") {
  Rng rng(15);
  auto w0 = random_tensor(rng, {4, 4}, false);
  auto b0 = random_tensor(rng, {4}, false);
  LoraPair bad{random_tensor(rng, {4, 2}, true), random_tensor(rng, {3, 4}, true)};
  auto x = random_tensor(rng, {2, 4}, false);
  Tape tape = Tape::inference();
  CHECK_THROWS_AS(lora_linear(tape, x, w0, b0, bad), ConfigError);
}

TEST_CASE("freshly attached LoRA leaves the forward bitwise unchanged") {
  Model base = toy_model(DeltaSpec{});
  DeltaSpec with_lora;
  with_lora.lora = LoRAConfig{};  // rank 4, q+v
  Model adapted = toy_model(with_lora);
  auto image = toy_image();
  const auto base_out = forward_values(base, image);
  const auto lora_out = forward_values(adapted, image);
  REQUIRE(base_out.size() == lora_out.size());
  CHECK(std::equal(base_out.begin(), base_out.end(), lora_out.begin()));
}

TEST_CASE("freshly attached adapters leave the forward bitwise unchanged") {
  Model base = toy_model(DeltaSpec{});
  DeltaSpec with_adapter;
  with_adapter.adapter = AdapterConfig{};  // m=32, s=0.2, both placements
  Model adapted = toy_model(with_adapter);
  auto image = toy_image();
  const auto base_out = forward_values(base, image);
  const auto adapter_out = forward_values(adapted, image);
  CHECK(std::equal(base_out.begin(), base_out.end(), adapter_out.begin()));
}

TEST_CASE("merged LoRA forward equals the bypass forward") {
  DeltaSpec spec;
  spec.lora = LoRAConfig{2, true, false, true, false};
  Model model = toy_model(spec, 33);
  // give the bypass real weight, as after training
  Rng rng(17);
  for (const auto& e : model.params->entries())
    if (e.group == ParamGroup::Delta)
      for (float& v : e.value->data) v = static_cast<float>(rng.uniform(-0.05, 0.05));
  auto image = toy_image(78);
  const auto bypass = forward_values(model, image);
  merge_lora(model);
  const auto merged = forward_values(model, image);
  REQUIRE(bypass.size() == merged.size());
  // relative error in the max norm
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < bypass.size(); ++i) {
    diff = std::max(diff, static_cast<double>(std::fabs(bypass[i] - merged[i])));
    scale = std::max({scale, static_cast<double>(std::fabs(bypass[i])),
                      static_cast<double>(std::fabs(merged[i]))});
  }
  CHECK(diff / scale < 1e-5);
}

TEST_CASE("merge_lora at B=0 keeps weights identical and double merge is rejected") {
  DeltaSpec spec;
  spec.lora = LoRAConfig{};
  Model model = toy_model(spec, 35);
  const auto wq_before = model.encoder.blocks[0].attn.wq->data;
  merge_lora(model);
  CHECK(std::equal(wq_before.begin(), wq_before.end(),
                   model.encoder.blocks[0].attn.wq->data.begin()));
  CHECK_THROWS_AS(merge_lora(model), ContractError);
  Model no_lora = toy_model(DeltaSpec{});
  CHECK_THROWS_AS(merge_lora(no_lora), ContractError);
}

TEST_CASE("attach_deltas freeze mask covers exactly head and deltas") {
  Model model = toy_model(DeltaSpec{});
  FreezeMask mask = freeze_mask(model);
  // head-only baseline: every tunable name is prompt or decoder
  for (const auto& name : mask.tunable)
    CHECK((name.rfind("prompt.", 0) == 0 || name.rfind("decoder.", 0) == 0));

  AdapterConfig adapter;
  LoRAConfig lora;
  lora.rank = 8;
  FreezeMask combined = attach_deltas(model, adapter, lora);
  CHECK(combined.tunable.size() > mask.tunable.size());
  for (const auto& e : model.params->entries()) {
    if (e.group == ParamGroup::Backbone) {
      CHECK(!e.value->tunable);
      CHECK(!combined.contains(e.name));
    } else {
      CHECK(e.value->tunable);
      CHECK(combined.contains(e.name));
    }
  }
  CHECK_THROWS_AS(attach_deltas(model, adapter, std::nullopt), ContractError);
}

TEST_CASE("delta-only parameter counts match the closed forms") {
  // LoRA on ViT-H dims, targets {q,v}, r=1: 4*d*r*depth
  {
    ModelConfig mc;
    mc.encoder = EncoderConfig::vit_h();
    mc.delta.lora = LoRAConfig{1, true, false, true, false};
    Model dry = build_model(mc, /*materialize=*/false);
    CHECK(count_parameters(dry, CountFilter::DeltaOnly) == 163840);
    CHECK(count_parameters(dry, CountFilter::DeltaOnly) == 4LL * 1280 * 1 * 32);
  }
  // dual adapters, ViT-H dims, m=32: depth*2*(2dm + m + d)
  {
    ModelConfig mc;
    mc.encoder = EncoderConfig::vit_h();
    mc.delta.adapter = AdapterConfig{};
    Model dry = build_model(mc, /*materialize=*/false);
    const int64_t closed = 32LL * 2 * (2 * 1280 * 32 + 32 + 1280);
    CHECK(closed == 5326848);
    CHECK(count_parameters(dry, CountFilter::DeltaOnly) == closed);
  }
  // LoRA r=4 {q,v} on ViT-H dims: 655,360; the two head-size estimates from
  // the expected ViT-H tunable totals agree within 1e5
  {
    ModelConfig mc;
    mc.encoder = EncoderConfig::vit_h();
    mc.delta.lora = LoRAConfig{4, true, false, true, false};
    Model dry = build_model(mc, /*materialize=*/false);
    CHECK(count_parameters(dry, CountFilter::DeltaOnly) == 655360);
    const double head_from_adapter = 9.1e6 - 5326848.0;
    const double head_from_lora = 4.4e6 - 655360.0;
    CHECK(std::fabs(head_from_adapter - head_from_lora) < 1.0e5);
  }
  // toy-scale enumeration equals the closed form as well
  {
    DeltaSpec spec;
    spec.lora = LoRAConfig{4, true, false, true, false};
    Model model = toy_model(spec);
    CHECK(count_parameters(model, CountFilter::DeltaOnly) == 4LL * 64 * 4 * 2);
    int64_t by_hand = 0;
    for (const auto& e : model.params->entries())
      if (e.group == ParamGroup::Delta) by_hand += e.value->numel();
    CHECK(by_hand == count_parameters(model, CountFilter::DeltaOnly));
  }
}

TEST_CASE("gradient isolation: only freeze-mask parameters receive gradients") {
  DeltaSpec spec;
  spec.adapter = AdapterConfig{8, 0.2f, true, true};
  spec.lora = LoRAConfig{2, true, false, true, false};
  Model model = toy_model(spec, 39);
  FreezeMask mask = freeze_mask(model);
  // make delta paths live so gradient reaches every tunable leaf
  Rng rng(19);
  for (const auto& e : model.params->entries())
    if (e.value->tunable)
      for (float& v : e.value->data) v += static_cast<float>(rng.uniform(-0.02, 0.02));

  auto image = toy_image(79);
  Tape tape;
  auto logits = model_forward(tape, model, image);
  auto prob = crack_probability(tape, logits);
  Rng mrng(23);
  auto target = make_tensor({64, 64});
  for (float& v : target->data) v = mrng.bernoulli(0.1) ? 1.0f : 0.0f;
  auto loss = combined_loss(tape, prob, target, 0.2f);
  tape.backward(loss);

  std::set<std::string> with_grad;
  for (const auto& e : model.params->entries()) {
    if (e.value->has_grad()) with_grad.insert(e.name);
    if (!e.value->tunable) CHECK(!e.value->has_grad());
  }
  for (const auto& name : with_grad) CHECK(mask.contains(name));
  // every tunable parameter received a gradient slot
  CHECK(with_grad.size() == mask.tunable.size());
}
