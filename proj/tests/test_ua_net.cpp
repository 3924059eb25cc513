#include <gtest/gtest.h>

#include "muan/ua_net.hpp"
#include "support.hpp"

using namespace muan;
using muan::test::all_valid;
using muan::test::check_parameter_gradients;
using muan::test::describe;
using muan::test::random_tensor;

namespace {

StackOptions eval_options(std::size_t heads) {
  StackOptions o;
  o.heads = heads;
  o.dropout = 0.0;
  return o;
}

ParameterSet stack_parameters(std::size_t layers, std::size_t d, std::size_t d_gate, std::uint64_t seed) {
  ParameterSet ps;
  RngStream init(seed);
  for (std::size_t l = 0; l < layers; ++l) register_ua_block(ps, "b" + std::to_string(l), d, d_gate, init);
  return ps;
}

std::vector<UABlockParams> bind_stack(const Binder& bind, std::size_t layers) {
  std::vector<UABlockParams> blocks;
  for (std::size_t l = 0; l < layers; ++l) blocks.push_back(bind_ua_block(bind, "b" + std::to_string(l)));
  return blocks;
}

UnifiedSequence sequence(Tape& tape, const Tensor& z, std::size_t m, std::vector<bool> valid) {
  return UnifiedSequence{tape.constant(z), m, z.rows() - m, std::move(valid)};
}

}  // namespace

TEST(EmbedUnify, StacksTextAboveVisual) {
  Tape tape;
  RngStream rng(1);
  ParameterSet ps;
  register_embed(ps, 8, 6, 8, rng);
  Binder bind(tape, ps);
  Tensor x = random_tensor({2, 8}, rng);
  UnifiedSequence z = embed_unify(tape.constant(x), all_valid(2), tape.constant(random_tensor({3, 6}, rng)),
                                  all_valid(3), bind_embed(bind));
  EXPECT_EQ(z.size(), 5u);
  EXPECT_EQ(z.z.value().rows(), 5u);
  EXPECT_EQ(z.m, 2u);
  EXPECT_FALSE(ps.contains("embed.text.w"));
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(z.z.value().at(1, c), x.at(1, c));
}

TEST(EmbedUnify, ProjectsTextWhenWidthsDiffer) {
  ParameterSet ps;
  register_embed(ps, 5, 6, 8, RngStream(2));
  EXPECT_TRUE(ps.contains("embed.text.w"));
  Tape tape;
  Binder bind(tape, ps);
  UnifiedSequence z = embed_unify(tape.constant(Tensor({2, 5}, 1.0)), all_valid(2), tape.constant(Tensor({1, 6})),
                                  all_valid(1), bind_embed(bind));
  EXPECT_EQ(z.z.value().cols(), 8u);
}

TEST(EmbedUnify, ZeroVisualWithZeroBiasGivesZeroRows) {
  Tape tape;
  ParameterSet ps;
  register_embed(ps, 4, 6, 4, RngStream(3));
  Binder bind(tape, ps);
  UnifiedSequence z = embed_unify(tape.constant(Tensor({2, 4}, 1.0)), all_valid(2), tape.constant(Tensor({3, 6})),
                                  all_valid(3), bind_embed(bind));
  for (std::size_t r = 2; r < 5; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(z.z.value().at(r, c), 0.0);
}

TEST(EmbedUnify, PaddedRowsAreZero) {
  Tape tape;
  RngStream rng(4);
  ParameterSet ps;
  register_embed(ps, 4, 6, 4, rng);
  ps.value("embed.visual.b").fill(0.3);
  Binder bind(tape, ps);
  UnifiedSequence z = embed_unify(tape.constant(random_tensor({2, 4}, rng)), {true, false},
                                  tape.constant(random_tensor({2, 6}, rng)), {true, false}, bind_embed(bind));
  EXPECT_EQ(z.valid, (std::vector<bool>{true, false, true, false}));
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(z.z.value().at(1, c), 0.0);
    EXPECT_EQ(z.z.value().at(3, c), 0.0);
  }
}

TEST(Ffn, NegativePreActivationsGiveSecondBias) {
  Tape tape;
  ParameterSet ps;
  RngStream rng(5);
  register_linear(ps, "e", 3, 12, rng);
  register_linear(ps, "c", 12, 3, rng);
  ps.value("e.w").fill(0.0);
  ps.value("e.b").fill(-1.0);
  ps.value("c.b") = Tensor::vector({0.5, -1, 2});
  Binder bind(tape, ps);
  Var y = ffn(tape.constant(random_tensor({4, 3}, rng)), FfnParams{bind_linear(bind, "e"), bind_linear(bind, "c")},
              0.1, false, rng);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(y.value().at(i, j), ps.value("c.b")[j]);
}

TEST(Ffn, MatchesTwoAffineOracle) {
  Tape tape;
  ParameterSet ps;
  RngStream rng(6);
  register_linear(ps, "e", 4, 16, rng);
  register_linear(ps, "c", 16, 4, rng);
  ps.value("e.b") = random_tensor({16}, rng);
  Binder bind(tape, ps);
  Tensor x = random_tensor({3, 4}, rng);
  Var y = ffn(tape.constant(x), FfnParams{bind_linear(bind, "e"), bind_linear(bind, "c")}, 0.5, false, rng);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double acc = ps.value("c.b")[j];
      for (std::size_t h = 0; h < 16; ++h) {
        double pre = ps.value("e.b")[h];
        for (std::size_t t = 0; t < 4; ++t) pre += x.at(i, t) * ps.value("e.w").at(t, h);
        acc += std::max(pre, 0.0) * ps.value("c.w").at(h, j);
      }
      EXPECT_NEAR(y.value().at(i, j), acc, 1e-12);
    }
}

TEST(UaBlock, HiddenWidthIsFourD) {
  ParameterSet ps = stack_parameters(1, 8, 4, 7);
  EXPECT_EQ(ps.value("b0.ffn.expand.w").shape(), (Shape{8, 32}));
  EXPECT_EQ(ps.value("b0.ffn.contract.w").shape(), (Shape{32, 8}));
}

TEST(UaBlock, PreservesShape) {
  RngStream rng(8);
  for (std::size_t s : {1, 3, 7}) {
    ParameterSet ps = stack_parameters(1, 8, 4, 8);
    Tape tape;
    Binder bind(tape, ps);
    BlockOutput out = ua_block(sequence(tape, random_tensor({s, 8}, rng), s / 2, all_valid(s)),
                               bind_ua_block(bind, "b0"), eval_options(2), false, rng);
    EXPECT_EQ(out.z.z.value().shape(), (Shape{s, 8}));
    EXPECT_EQ(out.state.heads(), 2u);
  }
}

TEST(UaBlock, DisableCoIsolatesTextFromVisual) {
  RngStream rng(9);
  ParameterSet ps = stack_parameters(2, 8, 4, 9);
  Tensor z = random_tensor({5, 8}, rng);
  Tensor z2 = z;
  for (std::size_t r = 2; r < 5; ++r)
    for (std::size_t c = 0; c < 8; ++c) z2.at(r, c) += rng.uniform(-3, 3);
  StackOptions o = eval_options(2);
  o.disable_co = true;
  Tape t1, t2;
  Binder b1(t1, ps), b2(t2, ps);
  StackOutput a = muan_forward(sequence(t1, z, 2, all_valid(5)), bind_stack(b1, 2), o, false, rng);
  StackOutput b = muan_forward(sequence(t2, z2, 2, all_valid(5)), bind_stack(b2, 2), o, false, rng);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(a.z.z.value().at(r, c), b.z.z.value().at(r, c), 1e-9);
}

TEST(UaBlock, PaddedRowsStayZero) {
  RngStream rng(10);
  ParameterSet ps = stack_parameters(2, 8, 4, 10);
  Tensor z = random_tensor({6, 8}, rng);
  for (std::size_t c = 0; c < 8; ++c) z.at(2, c) = z.at(5, c) = 0.0;
  std::vector<bool> valid = {true, true, false, true, true, false};
  Tape tape;
  Binder bind(tape, ps);
  StackOutput out = muan_forward(sequence(tape, z, 3, valid), bind_stack(bind, 2), eval_options(2), false, rng);
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_EQ(out.z.z.value().at(2, c), 0.0);
    EXPECT_EQ(out.z.z.value().at(5, c), 0.0);
  }
}

TEST(MuanForward, SingleLayerEqualsOneBlock) {
  RngStream rng(11);
  ParameterSet ps = stack_parameters(1, 8, 4, 11);
  Tensor z = random_tensor({4, 8}, rng);
  Tape tape;
  Binder bind(tape, ps);
  StackOutput stack = muan_forward(sequence(tape, z, 2, all_valid(4)), bind_stack(bind, 1), eval_options(2), false, rng);
  BlockOutput block = ua_block(sequence(tape, z, 2, all_valid(4)), bind_ua_block(bind, "b0"), eval_options(2), false, rng);
  EXPECT_TRUE(bitwise_equal(stack.z.z.value(), block.z.z.value()));
  EXPECT_EQ(stack.states.size(), 1u);
}

TEST(MuanForward, OneStatePerBlock) {
  RngStream rng(12);
  ParameterSet ps = stack_parameters(3, 8, 4, 12);
  Tape tape;
  Binder bind(tape, ps);
  StackOutput out =
      muan_forward(sequence(tape, random_tensor({4, 8}, rng), 1, all_valid(4)), bind_stack(bind, 3), eval_options(4), false, rng);
  EXPECT_EQ(out.states.size(), 3u);
  EXPECT_THROW(muan_forward(sequence(tape, random_tensor({4, 8}, rng), 1, all_valid(4)), {}, eval_options(4), false, rng),
               ConfigError);
}

TEST(MuanForward, DropoutOnlyActsWhenTraining) {
  RngStream rng(13);
  ParameterSet ps = stack_parameters(1, 8, 4, 13);
  Tensor z = random_tensor({4, 8}, rng);
  StackOptions o = eval_options(2);
  o.dropout = 0.5;
  Tape tape;
  Binder bind(tape, ps);
  RngStream r1(1), r2(1);
  Tensor eval = muan_forward(sequence(tape, z, 2, all_valid(4)), bind_stack(bind, 1), o, false, r1).z.z.value();
  Tensor train = muan_forward(sequence(tape, z, 2, all_valid(4)), bind_stack(bind, 1), o, true, r2).z.z.value();
  o.dropout = 0.0;
  Tensor plain = muan_forward(sequence(tape, z, 2, all_valid(4)), bind_stack(bind, 1), o, false, r1).z.z.value();
  EXPECT_TRUE(bitwise_equal(eval, plain));
  EXPECT_GT(max_abs_diff(eval, train), 1e-6);
}

TEST(MuanForward, TwoBlockGradientsMatchFiniteDifferences) {
  RngStream rng(14);
  ParameterSet ps = stack_parameters(2, 16, 8, 14);
  for (Parameter& p : ps)
    if (p.name.ends_with(".b")) p.value = random_tensor(p.value.shape(), rng, -0.3, 0.3);
  const Tensor z = random_tensor({6, 16}, rng);
  const Tensor target = random_tensor({6, 16}, rng);
  auto loss = [&](Tape& tape, const Binder& b) {
    RngStream unused(0);
    StackOutput out = muan_forward(sequence(tape, z, 2, all_valid(6)), bind_stack(b, 2), eval_options(2), false, unused);
    Var diff = sub(out.z.z, tape.constant(target));
    return sum(mul(diff, diff));
  };
  GradCheckReport r = check_parameter_gradients(ps, loss);
  EXPECT_TRUE(r.passed()) << describe(r);
  EXPECT_GT(r.checked, 1000u);
}

TEST(MuanConfig, ValidationErrors) {
  MuanConfig c;
  EXPECT_NO_THROW(c.validate());
  c.heads = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = MuanConfig{};
  c.layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = MuanConfig{};
  c.disable_self = c.disable_co = true;
  EXPECT_THROW(c.validate(), ConfigError);
  c = MuanConfig{};
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(MuanConfig, ReferenceAndToyProfiles) {
  MuanConfig ref;
  EXPECT_EQ(ref.d, 768u);
  EXPECT_EQ(ref.heads, 8u);
  EXPECT_EQ(ref.d / ref.heads, 96u);
  EXPECT_EQ(ref.d_gate, 96u);
  EXPECT_EQ(ref.layers, 10u);
  MuanConfig vqa = MuanConfig::toy_profile(Task::vqa);
  EXPECT_EQ(vqa.d, 64u);
  EXPECT_EQ(vqa.d_y, 32u);
  EXPECT_EQ(vqa.d_embed, 32u);
  EXPECT_EQ(vqa.d_x, vqa.d);
  EXPECT_EQ(vqa.m_max, 14u);
  EXPECT_EQ(MuanConfig::toy_profile(Task::grounding).m_max, 15u);
  EXPECT_EQ(MuanConfig::toy_profile(Task::grounding).n_max, 100u);
}
