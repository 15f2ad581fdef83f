#include <doctest.h>

#include <cmath>

#include "contraspeech/adam.hpp"
#include "contraspeech/grad_check.hpp"
#include "contraspeech/layers.hpp"

using namespace contraspeech;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (float& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

Tensor project(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

}  // namespace

TEST_CASE("conv1d examples") {
  Rng rng = make_stream(1, "layers");
  SUBCASE("kernel 1 stride 1 scales the input per output channel") {
    const Tensor x = random_tensor({1, 6}, rng);
    const Tensor w = Tensor::from({2, 1, 1}, {2.0f, -0.5f});
    const Tensor y = conv1d(x, w, Tensor::zeros({2}), 1);
    REQUIRE(y.shape() == Shape{2, 6});
    for (std::size_t t = 0; t < 6; ++t) {
      CHECK(y.at(0, t) == doctest::Approx(2.0f * x[t]));
      CHECK(y.at(1, t) == doctest::Approx(-0.5f * x[t]));
    }
  }
  SUBCASE("length formula") {
    CHECK(conv1d_output_length(10, 10, 5) == 1);
    const Tensor y = conv1d(random_tensor({1, 10}, rng), random_tensor({3, 1, 10}, rng), Tensor::zeros({3}), 5);
    CHECK(y.shape() == Shape{3, 1});
  }
  SUBCASE("averaging kernel") {
    const Tensor y = conv1d(Tensor::from({1, 3}, {3, 6, 9}), Tensor::full({1, 1, 3}, 1.0f / 3.0f), Tensor::zeros({1}), 1);
    REQUIRE(y.numel() == 1);
    CHECK(y[0] == doctest::Approx(6.0));
  }
  SUBCASE("too-short input") {
    try {
      conv1d(Tensor::zeros({1, 4}), Tensor::zeros({1, 1, 5}), Tensor::zeros({1}), 1);
      FAIL("expected input-too-short");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InputTooShort);
    }
  }
  SUBCASE("same padding keeps length, stride 2 halves it") {
    CHECK(conv1d_output_length(100, 3, 1, 1) == 100);
    CHECK(conv1d_output_length(100, 3, 2, 1) == 50);
    CHECK(conv1d_output_length(101, 3, 2, 1) == 51);
  }
}

TEST_CASE("group norm examples") {
  GroupNormLayer gn(2, 4);
  SUBCASE("constant input gives zeros") {
    const Tensor y = gn.forward(Tensor::full({4, 5}, 3.0f));
    for (float v : y.data()) CHECK(v == doctest::Approx(0.0));
  }
  SUBCASE("known mean and variance") {
    // Group 0 holds {3, 7, 3, 7} (mean 5, var 4); group 1 is random.
    Tensor x = Tensor::from({4, 2}, {3, 7, 7, 3, 0.1f, 0.9f, -0.4f, 0.2f});
    const Tensor y = gn.forward(x);
    const double s = std::sqrt(4.0 + 1e-5);
    CHECK(y.at(0, 0) == doctest::Approx((3 - 5) / s));
    CHECK(y.at(0, 1) == doctest::Approx((7 - 5) / s));
    CHECK(y.at(1, 0) == doctest::Approx((7 - 5) / s));
  }
  SUBCASE("gamma 0 beta 7 gives sevens") {
    std::fill(gn.gamma.data().begin(), gn.gamma.data().end(), 0.0f);
    std::fill(gn.beta.data().begin(), gn.beta.data().end(), 7.0f);
    Rng rng = make_stream(2, "layers");
    for (float v : gn.forward(random_tensor({4, 5}, rng)).data()) CHECK(v == doctest::Approx(7.0));
  }
  SUBCASE("channel mismatch") { CHECK_THROWS_AS(gn.forward(Tensor::zeros({3, 5})), Error); }
  SUBCASE("indivisible groups") { CHECK_THROWS_AS(GroupNormLayer(3, 4), Error); }
}

TEST_CASE("group norm pre-affine statistics") {
  Rng rng = make_stream(3, "layers");
  GroupNormLayer gn(4, 8);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = random_tensor({8, 50}, rng, -3.0f, 5.0f);
    const Tensor y = gn.forward(x);
    for (std::size_t g = 0; g < 4; ++g) {
      double mu = 0.0, var = 0.0;
      for (std::size_t i = g * 100; i < (g + 1) * 100; ++i) mu += y[i];
      mu /= 100.0;
      for (std::size_t i = g * 100; i < (g + 1) * 100; ++i) var += (y[i] - mu) * (y[i] - mu);
      var /= 100.0;
      CHECK(std::abs(mu) < 1e-5);
      CHECK(std::abs(var - 1.0) < 1e-3);
    }
  }
}

TEST_CASE("lstm examples") {
  Rng rng = make_stream(4, "layers");
  SUBCASE("all-zero parameters give zero output") {
    const Tensor y = lstm(random_tensor({5, 3}, rng), Tensor::zeros({8, 3}), Tensor::zeros({8, 2}), Tensor::zeros({8}));
    for (float v : y.data()) CHECK(v == 0.0f);
  }
  SUBCASE("single step equals one cell update") {
    LstmLayer layer(3, 2, Direction::Forward, rng);
    const Tensor x = random_tensor({1, 3}, rng);
    const Tensor y = layer.forward(x);
    for (std::size_t j = 0; j < 2; ++j) {
      auto pre = [&](std::size_t gate) {
        double a = layer.bias[gate * 2 + j];
        for (std::size_t k = 0; k < 3; ++k) a += layer.w_ih.at(gate * 2 + j, k) * x[k];
        return a;
      };
      auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
      const double c = sig(pre(0)) * std::tanh(pre(2));
      CHECK(y[j] == doctest::Approx(sig(pre(3)) * std::tanh(c)).epsilon(1e-6));
    }
  }
  SUBCASE("gradients pass finite differences") {
    LstmLayer layer(3, 4, Direction::Forward, rng);
    Tensor x = random_tensor({3, 3}, rng).set_requires_grad(true);
    const Tensor w = random_tensor({3, 4}, rng);
    const auto report = grad_check([&] { return project(layer.forward(x), w); },
                                   {x, layer.w_ih, layer.w_hh, layer.bias});
    INFO(report.summary());
    CHECK(report.passed);
  }
}

TEST_CASE("backward lstm equals forward lstm on reversed input, reversed") {
  Rng rng = make_stream(5, "layers");
  LstmLayer fwd(4, 3, Direction::Forward, rng);
  LstmLayer bwd = fwd;
  bwd.direction = Direction::Backward;
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor({7, 4}, rng);
    const Tensor a = bwd.forward(x);
    const Tensor b = reverse_rows(fwd.forward(reverse_rows(x)));
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
  }
  LstmStack stack(4, 3, 2, Direction::Backward, rng);
  LstmStack forward_copy = stack;
  for (auto& l : forward_copy.layers) l.direction = Direction::Forward;
  const Tensor x = random_tensor({6, 4}, rng);
  const Tensor a = stack.forward(x);
  const Tensor b = reverse_rows(forward_copy.forward(reverse_rows(x)));
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("lstm initialization") {
  Rng rng = make_stream(6, "layers");
  LstmLayer layer(5, 3, Direction::Forward, rng);
  for (std::size_t k = 0; k < 12; ++k) CHECK(layer.bias[k] == (k >= 3 && k < 6 ? 1.0f : 0.0f));
  const float bound = 1.0f / std::sqrt(3.0f);
  for (float v : layer.w_ih.data()) CHECK(std::abs(v) <= bound);
  CHECK(LstmLayer::parameter_count(5, 3) == layer.w_ih.numel() + layer.w_hh.numel() + layer.bias.numel());
}

TEST_CASE("self-attention examples") {
  Rng rng = make_stream(7, "layers");
  SelfAttentionBlock block(8, 4, 16, rng);
  SUBCASE("singleton sequence attends to itself") {
    std::vector<Tensor> weights;
    block.forward(random_tensor({1, 8}, rng), &weights);
    REQUIRE(weights.size() == 4);
    for (const auto& w : weights) CHECK(w[0] == doctest::Approx(1.0));
  }
  SUBCASE("attention rows sum to one") {
    std::vector<Tensor> weights;
    block.forward(random_tensor({6, 8}, rng), &weights);
    for (const auto& w : weights)
      for (std::size_t r = 0; r < 6; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 6; ++c) s += w.at(r, c);
        CHECK(s == doctest::Approx(1.0));
      }
  }
  SUBCASE("permutation equivariance without positions") {
    SelfAttentionStack stack(8, 4, 16, 2, rng);
    stack.positional_encoding = false;
    const Tensor x = random_tensor({5, 8}, rng);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    const Tensor y = stack.forward(x);
    const Tensor yp = stack.forward(gather_rows(x, perm));
    const Tensor expected = gather_rows(y, perm);
    for (std::size_t i = 0; i < yp.numel(); ++i) CHECK(yp[i] == doctest::Approx(expected[i]).epsilon(1e-5));
  }
  SUBCASE("head divisibility") { CHECK_THROWS_AS(SelfAttentionBlock(10, 4, 8, rng), Error); }
  SUBCASE("gradients pass finite differences") {
    SelfAttentionBlock small(4, 2, 6, rng);
    Tensor x = random_tensor({3, 4}, rng).set_requires_grad(true);
    const Tensor w = random_tensor({3, 4}, rng);
    ParameterSet set;
    small.collect(set, "b");
    std::vector<Tensor> params = set.tensors();
    params.push_back(x);
    const auto report = grad_check([&] { return project(small.forward(x), w); }, params);
    INFO(report.summary());
    CHECK(report.passed);
  }
}

TEST_CASE("conv and group norm gradients") {
  Rng rng = make_stream(8, "layers");
  Conv1dLayer conv(2, 4, 3, 2, rng, 1);
  GroupNormLayer gn(2, 4);
  for (float& v : gn.gamma.data()) v = uniform(rng, 0.5f, 1.5f);
  for (float& v : gn.beta.data()) v = uniform(rng, -0.5f, 0.5f);
  Tensor x = random_tensor({2, 9}, rng).set_requires_grad(true);
  const Tensor w = random_tensor({4, 5}, rng);
  const auto report = grad_check([&] { return project(relu_clipped(gn.forward(conv.forward(x)), 5.0f), w); },
                                 {x, conv.weight, conv.bias, gn.gamma, gn.beta});
  INFO(report.summary());
  CHECK(report.passed);
}

TEST_CASE("composite conv -> lstm -> loss matches finite differences") {
  Rng rng = make_stream(9, "layers");
  Conv1dLayer conv(1, 4, 4, 2, rng);
  GroupNormLayer gn(2, 4);
  LstmLayer cell(4, 3, Direction::Backward, rng);
  Linear head(3, 2, rng);
  Tensor x = random_tensor({1, 14}, rng).set_requires_grad(true);
  auto f = [&] {
    const Tensor z = transpose(relu_clipped(gn.forward(conv.forward(x)), 5.0f));
    return sum(log_softmax(head.forward(cell.forward(z))));
  };
  const auto report = grad_check(f, {x, conv.weight, conv.bias, gn.gamma, cell.w_ih, cell.w_hh, cell.bias,
                                     head.weight, head.bias});
  INFO(report.summary());
  CHECK(report.passed);
}

TEST_CASE("adam examples") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParameterSet set;
    Tensor p = Tensor::from({3}, {1.0f, -2.0f, 0.5f});
    set.add("p", p);
    Adam adam(set, {0.1f, 0.1f, 0.5, 10});
    p.ensure_grad();
    adam.step();
    CHECK(p[0] == 1.0f);
    CHECK(p[1] == -2.0f);
  }
  SUBCASE("first step moves by lr") {
    ParameterSet set;
    Tensor p = Tensor::from({1}, {1.0f});
    set.add("p", p);
    Adam adam(set, {0.1f, 0.1f, 0.5, 10});
    p.ensure_grad()[0] = 1.0f;
    adam.step();
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
  }
  SUBCASE("two-phase schedule") {
    LrSchedule s;
    s.total_steps = 100;
    CHECK(s.at(49) == doctest::Approx(3e-4));
    CHECK(s.at(50) == doctest::Approx(5e-5));
  }
  SUBCASE("missing gradient is a contract error") {
    ParameterSet set;
    set.add("p", Tensor::zeros({2}));
    Adam adam(set, {});
    CHECK_THROWS_AS(adam.step(), Error);
  }
}
