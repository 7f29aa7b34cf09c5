#include <gtest/gtest.h>

#include "dfr/control.hpp"
#include "dfr/error.hpp"
#include "gradcheck.hpp"

using namespace dfr;

namespace {

ControlModuleOptions small_control(bool dmb = true, bool use_t = true, bool use_ctx = true) {
  ControlModuleOptions o;
  o.encoder.widths = {4, 8, 8};
  o.encoder.out_channels = 8;
  o.encoder.d_d = 5;
  o.encoder.dmb_enabled = dmb;
  o.unet.latent_channels = 4;
  o.unet.channels = {8, 8};
  o.unet.context_dim = 6;
  o.unet.heads = 2;
  o.use_timestep = use_t;
  o.use_context = use_ctx;
  return o;
}

}  // namespace

TEST(ModulationBlock, PreservesShape) {
  torch::manual_seed(1);
  DegradationModulationBlock dmb(8, 5);
  auto f = torch::randn({2, 8, 6, 6});
  EXPECT_EQ(dmb->forward(f, torch::randn({2, 5})).sizes(), f.sizes());
  EXPECT_THROW(dmb->forward(torch::randn({2, 7, 6, 6}), torch::randn({2, 5})), ValidationError);
}

TEST(ModulationBlock, GateIsSigmoidOfLinear) {
  torch::manual_seed(2);
  DegradationModulationBlock dmb(8, 5);
  dmb->to(torch::kFloat64);
  torch::NoGradGuard guard;
  auto p = torch::randn({3, 5}, torch::kFloat64);
  auto& lin = dmb->gate->linear();
  auto expected = 1.0 / (1.0 + torch::exp(-(torch::matmul(p, lin->weight.t()) + lin->bias)));
  auto g = dmb->gate_values(p);
  EXPECT_TRUE(torch::allclose(g, expected, 1e-12, 1e-12));
  EXPECT_TRUE((g > 0).all().item<bool>() && (g < 1).all().item<bool>());
}

TEST(ModulationBlock, ForwardMatchesManualComposition) {
  torch::manual_seed(3);
  DegradationModulationBlock dmb(8, 5);
  dmb->to(torch::kFloat64);
  torch::NoGradGuard guard;
  auto f = torch::randn({2, 8, 5, 5}, torch::kFloat64);
  auto p = torch::randn({2, 5}, torch::kFloat64);
  auto g = dmb->gate_values(p).view({2, 8, 1, 1});
  auto expected = dmb->second(dmb->first(f) * g);
  EXPECT_TRUE(torch::allclose(dmb->forward(f, p), expected, 1e-12, 1e-12));
}

TEST(ModulationBlock, SaturatedGatesPassOrBlock) {
  torch::manual_seed(4);
  DegradationModulationBlock dmb(8, 5);
  dmb->to(torch::kFloat64);
  DegradationModulationBlock plain(8, 5, false);
  plain->to(torch::kFloat64);
  torch::NoGradGuard guard;
  for (auto& item : dmb->named_parameters()) {
    if (item.key().rfind("gate.", 0) != 0) plain->named_parameters()[item.key()].copy_(item.value());
  }
  auto f = torch::randn({2, 8, 4, 4}, torch::kFloat64);
  auto p = torch::randn({2, 5}, torch::kFloat64);
  auto& lin = dmb->gate->linear();
  lin->weight.zero_();
  lin->bias.fill_(60.0);
  EXPECT_TRUE(torch::allclose(dmb->forward(f, p), plain->forward(f, p), 1e-12, 1e-12));
  lin->bias.fill_(-60.0);
  EXPECT_TRUE(torch::allclose(dmb->forward(f, p), dmb->second(torch::zeros_like(f)), 1e-12, 1e-12));
  EXPECT_EQ(plain->gate_values(p).min().item<double>(), 1.0);
}

TEST(ControlModule, EncodeDecodeShapes) {
  torch::manual_seed(5);
  ControlModule cm(small_control());
  torch::NoGradGuard guard;
  auto img = torch::rand({2, 3, 32, 32});
  auto p = torch::randn({2, 5});
  auto cond = control_encode(*cm, img, p);
  EXPECT_EQ(cond.sizes(), (std::vector<int64_t>{2, 8, 8, 8}));
  auto rec = control_decode(*cm, cond);
  EXPECT_EQ(rec.sizes(), img.sizes());
  EXPECT_GE(rec.min().item<double>(), 0.0);
  EXPECT_LE(rec.max().item<double>(), 1.0);
  EXPECT_THROW(control_encode(*cm, torch::rand({1, 3, 30, 32}), p.slice(0, 0, 1)), ValidationError);
}

TEST(ControlModule, ReconLossIsMse) {
  auto a = torch::zeros({1, 3, 4, 4});
  auto b = torch::full({1, 3, 4, 4}, 0.5);
  EXPECT_NEAR(recon_loss(a, b).item<double>(), 0.25, 1e-7);
  EXPECT_EQ(recon_loss(b, b).item<double>(), 0.0);
}

TEST(ControlModule, FreshResidualsAreZeroThenMoveAfterAStep) {
  torch::manual_seed(6);
  ControlModule cm(small_control());
  auto z = torch::randn({2, 4, 8, 8});
  auto t = torch::tensor({3, 600}, torch::kInt64);
  auto ctx = torch::randn({2, 6});
  auto img = torch::rand({2, 3, 32, 32});
  auto p = torch::randn({2, 5});
  {
    torch::NoGradGuard guard;
    auto res = control_residuals(*cm, z, t, ctx, control_encode(*cm, img, p));
    ASSERT_EQ(res.size(), 2u);
    for (auto& r : res) EXPECT_EQ(r.abs().max().item<double>(), 0.0);
  }
  torch::optim::SGD opt(cm->parameters(), 0.1);
  auto target = torch::randn({2, 8, 8, 8});
  auto res = control_residuals(*cm, z, t, ctx, control_encode(*cm, img, p));
  auto loss = (res[0] - target).pow(2).mean();
  loss.backward();
  opt.step();
  torch::NoGradGuard guard;
  auto after = control_residuals(*cm, z, t, ctx, control_encode(*cm, img, p));
  EXPECT_GT(after[0].abs().max().item<double>(), 0.0);
}

TEST(ControlModule, AblationFlagsRemoveInputs) {
  torch::manual_seed(7);
  ControlModule no_t(small_control(true, false, true));
  EXPECT_FALSE(no_t->network->time_embed);
  ControlModule no_ctx(small_control(true, true, false));
  no_ctx->eval();
  torch::NoGradGuard guard;
  auto z = torch::randn({1, 4, 8, 8});
  auto cond = torch::randn({1, 8, 8, 8});
  auto t = torch::tensor({10}, torch::kInt64);
  // Without context the output cannot depend on it; zero convs are made nonzero first.
  for (auto& p : no_ctx->network->zero_convs->parameters()) p.fill_(0.1);
  auto a = no_ctx->network->forward(z, t, torch::randn({1, 6}), cond);
  auto b = no_ctx->network->forward(z, t, torch::randn({1, 6}), cond);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(torch::equal(a[i], b[i]));

  ControlModule no_dmb(small_control(false));
  for (auto& item : no_dmb->encoder->named_parameters()) {
    EXPECT_EQ(item.key().find("gate"), std::string::npos) << item.key();
  }
}

TEST(ControlModule, CopyFromDenoiserMatchesPathWeights) {
  torch::manual_seed(8);
  auto o = small_control();
  UNet unet(o.unet);
  ControlModule cm(o);
  cm->network->copy_from(*unet);
  auto src = unet->encoder_path->named_parameters();
  for (auto& item : cm->network->path->named_parameters()) {
    EXPECT_TRUE(torch::equal(item.value(), src[item.key()])) << item.key();
  }
}

TEST(ModulationBlock, GradientsMatchFiniteDifferences) {
  torch::manual_seed(9);
  DegradationModulationBlock dmb(4, 3);
  dmb->to(torch::kFloat64);
  auto f = torch::randn({2, 4, 4, 4}, torch::kFloat64);
  auto p = torch::randn({2, 3}, torch::kFloat64);
  auto w = torch::randn({2, 4, 4, 4}, torch::kFloat64);
  auto r = test::grad_check(test::named(*dmb), [&] { return (dmb->forward(f, p) * w).sum(); });
  EXPECT_GT(r.checked, 30);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(ControlModule, EncoderDecoderGradientsMatchFiniteDifferences) {
  torch::manual_seed(10);
  auto o = small_control();
  o.encoder.widths = {2, 4, 4};
  o.encoder.out_channels = 4;
  o.encoder.d_d = 3;
  ControlModule cm(o);
  cm->to(torch::kFloat64);
  auto img = torch::rand({1, 3, 8, 8}, torch::kFloat64);
  auto p = torch::randn({1, 3}, torch::kFloat64);
  auto gt = torch::rand({1, 3, 8, 8}, torch::kFloat64);
  auto params = test::named(*cm->encoder, "encoder.");
  auto dec = test::named(*cm->decoder, "decoder.");
  params.insert(params.end(), dec.begin(), dec.end());
  auto loss = [&] { return recon_loss(cm->decoder->forward(cm->encoder->forward(img, p)), gt); };
  auto r = test::grad_check(params, loss, 2);
  EXPECT_GT(r.checked, 50);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}
