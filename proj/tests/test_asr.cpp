#include <doctest.h>

#include <cmath>

#include "contraspeech/asr.hpp"
#include "contraspeech/grad_check.hpp"

using namespace contraspeech;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (float& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

RowMatrixXf uniform_log_probs(std::size_t T, std::size_t V) {
  return RowMatrixXf::Constant(T, V, -std::log(static_cast<float>(V)));
}

RowMatrixXf random_log_probs(std::size_t T, std::size_t V, Rng& rng) {
  RowMatrixXf m(T, V);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 3.0f * uniform(rng, -1.0f, 1.0f);
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    const float mx = m.row(t).maxCoeff();
    const float lse = mx + std::log((m.row(t).array() - mx).exp().sum());
    m.row(t).array() -= lse;
  }
  return m;
}

Tensor as_tensor(const RowMatrixXf& m, bool grad = false) { return Tensor::from_matrix(m, grad); }

RowMatrixXf one_hot_path(const std::vector<std::size_t>& path, std::size_t V) {
  RowMatrixXf m = RowMatrixXf::Constant(path.size(), V, -30.0f);
  for (std::size_t t = 0; t < path.size(); ++t) m(t, path[t]) = 0.0f;
  return m;
}

}  // namespace

TEST_CASE("ctc closed forms on uniform distributions") {
  const double ln3 = std::log(3.0);
  CHECK(std::abs(ctc_loss(as_tensor(uniform_log_probs(1, 3)), {1}).item() - ln3) < 1e-6);
  CHECK(std::abs(ctc_loss(as_tensor(uniform_log_probs(2, 3)), {1}).item() - ln3) < 1e-6);
  CHECK(std::abs(ctc_loss(as_tensor(uniform_log_probs(3, 3)), {1, 1}).item() - 3 * ln3) < 1e-5);
  CHECK(ctc_minimum_frames({1, 1}) == 3);
  CHECK(ctc_minimum_frames({1, 2, 2, 2}) == 6);
}

TEST_CASE("ctc agrees with brute-force enumeration") {
  Rng rng = make_stream(1, "ctc");
  int compared = 0;
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t T = 1 + uniform_index(rng, 8);
    const std::size_t V = 2 + uniform_index(rng, 3);  // vocab <= 4 including blank
    const std::size_t L = uniform_index(rng, 4);       // |target| <= 3
    std::vector<std::size_t> target(L);
    for (auto& l : target) l = 1 + uniform_index(rng, V - 1);
    const RowMatrixXf lp = random_log_probs(T, V, rng);
    const double oracle = ctc_brute_force(lp, target);
    const auto lat = ctc_lattice(lp, target);
    if (ctc_minimum_frames(target) > T) {
      CHECK(oracle == -std::numeric_limits<double>::infinity());
      CHECK(lat.forward_log_likelihood == -std::numeric_limits<double>::infinity());
      CHECK_THROWS_AS(ctc_loss(as_tensor(lp), target), Error);
      continue;
    }
    const double loss = ctc_loss(as_tensor(lp), target).item();
    worst = std::max(worst, std::abs(-loss - oracle));
    CHECK(std::abs(lat.forward_log_likelihood - oracle) < 1e-6);
    CHECK(std::abs(lat.forward_log_likelihood - lat.backward_log_likelihood) < 1e-6);
    ++compared;
  }
  MESSAGE(compared << " alignable instances, worst float-loss gap " << worst);
  CHECK(compared > 100);
  CHECK(worst < 1e-5);  // float32 output of a double computation
}

TEST_CASE("ctc edge cases") {
  // empty target: all-blank path only
  Rng rng = make_stream(2, "ctc");
  const RowMatrixXf lp = random_log_probs(4, 3, rng);
  const double blanks = lp.col(0).cast<double>().sum();
  CHECK(ctc_brute_force(lp, {}) == doctest::Approx(blanks));
  CHECK(-ctc_loss(as_tensor(lp), {}).item() == doctest::Approx(blanks));
  // impossible target
  CHECK(ctc_brute_force(random_log_probs(2, 3, rng), {1, 2, 1}) == -std::numeric_limits<double>::infinity());
  try {
    ctc_loss(as_tensor(random_log_probs(2, 3, rng)), {1, 2, 1});
    FAIL("expected alignment error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Alignment);
  }
  CHECK_THROWS_AS(ctc_brute_force(random_log_probs(11, 3, rng), {1}), Error);
  CHECK_THROWS_AS(ctc_brute_force(random_log_probs(4, 6, rng), {1}), Error);
}

TEST_CASE("ctc is equivariant under relabeling") {
  Rng rng = make_stream(3, "ctc");
  for (int i = 0; i < 20; ++i) {
    const RowMatrixXf lp = random_log_probs(7, 4, rng);
    const std::vector<std::size_t> target{1, 3, 3};
    // swap symbols 1 and 3 in both
    RowMatrixXf swapped = lp;
    swapped.col(1) = lp.col(3);
    swapped.col(3) = lp.col(1);
    CHECK(ctc_loss(as_tensor(lp), target).item() ==
          doctest::Approx(ctc_loss(as_tensor(swapped), {3, 1, 1}).item()).epsilon(1e-6));
  }
}

TEST_CASE("ctc gradient matches finite differences") {
  Rng rng = make_stream(4, "ctc");
  for (int i = 0; i < 5; ++i) {
    Tensor logits = random_tensor({6, 4}, rng, -2.0f, 2.0f).set_requires_grad(true);
    const std::vector<std::size_t> target{1 + uniform_index(rng, 3), 1 + uniform_index(rng, 3)};
    auto report = grad_check([&] { return ctc_loss(log_softmax(logits), target); }, {logits});
    CHECK_MESSAGE(report.passed, report.summary());
  }
}

TEST_CASE("greedy decoding collapses repeats and drops blanks") {
  CHECK(greedy_decode(one_hot_path({1, 1, 0, 2, 2}, 3)) == std::vector<std::size_t>{1, 2});
  CHECK(greedy_decode(one_hot_path({0, 0, 0}, 3)).empty());
  CHECK(greedy_decode(one_hot_path({1, 0, 1}, 3)) == std::vector<std::size_t>{1, 1});
  // any target with blanks between repeats round-trips
  Rng rng = make_stream(5, "decode");
  for (int i = 0; i < 100; ++i) {
    std::vector<std::size_t> target(uniform_index(rng, 6)), path;
    for (auto& l : target) l = 1 + uniform_index(rng, 4);
    for (std::size_t k = 0; k < target.size(); ++k) {
      if (k && target[k] == target[k - 1]) path.push_back(0);
      path.insert(path.end(), 1 + uniform_index(rng, 3), target[k]);
      if (uniform01(rng) < 0.3) path.push_back(0);
    }
    if (path.empty()) path.push_back(0);
    CHECK(greedy_decode(one_hot_path(path, 5)) == target);
  }
}

TEST_CASE("edit distance and error rates") {
  CHECK(edit_distance(std::string("kitten"), std::string("sitting")).distance == 3);
  CHECK(edit_distance(std::string("same"), std::string("same")).distance == 0);
  const auto del = edit_distance(std::string(""), std::string("abcde"));
  CHECK(del.distance == 5);
  CHECK(del.deletions == 5);
  CHECK(character_error_rate({""}, {"abcde"}) == doctest::Approx(1.0));
  CHECK(word_error_rate({"the cat sat"}, {"the cat sat"}) == 0.0);
  CHECK(word_error_rate({"the bat"}, {"the cat sat"}) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(word_error_rate({"x"}, {""}), Error);
  const auto ops = edit_distance(std::string("abxd"), std::string("abcde"));
  CHECK(ops.substitutions == 1);
  CHECK(ops.deletions == 1);
  CHECK(ops.insertions == 0);

  Rng rng = make_stream(6, "edit");
  auto random_string = [&] {
    std::string s(uniform_index(rng, 7), 'a');
    for (char& c : s) c = static_cast<char>('a' + uniform_index(rng, 3));
    return s;
  };
  for (int i = 0; i < 300; ++i) {
    const std::string a = random_string(), b = random_string(), c = random_string();
    const auto ab = edit_distance(a, b).distance, ba = edit_distance(b, a).distance;
    CHECK(ab == ba);
    CHECK(edit_distance(a, c).distance <= ab + edit_distance(b, c).distance);
    CHECK((ab == 0) == (a == b));
  }
}

TEST_CASE("vocabulary encoding") {
  const Vocabulary v = Vocabulary::characters();
  CHECK(v.size() == 29);
  CHECK(v.encode("ab ") == std::vector<std::size_t>{1, 2, 27});
  CHECK(v.decode(v.encode("it's")) == "it's");
  CHECK_THROWS_AS(v.encode("A"), Error);
  CHECK(Vocabulary::synthetic(5).size() == 6);
}

TEST_CASE("asr model output shapes and stride presets") {
  Rng rng = make_stream(7, "init");
  const AsrConfig cfg = desk_asr_config(20, 100.0, Vocabulary::synthetic(5));
  CHECK(cfg.strides == std::array<std::size_t, 3>{2, 1, 1});
  CHECK(strides_for_rate(50.0) == std::array<std::size_t, 3>{1, 1, 1});
  CHECK_THROWS_AS(strides_for_rate(80.0), Error);
  AsrModel model(cfg, rng);
  for (std::size_t frames : {7, 50, 101}) {
    const Tensor out = model.forward(random_tensor({frames, 20}, rng));
    CHECK(out.cols() == 6);
    CHECK(std::abs(static_cast<long>(out.rows()) - static_cast<long>(frames / 2)) <= 1);
    CHECK(out.rows() == cfg.output_length(frames));
    for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(out.rows()); ++t)
      CHECK(std::abs(out.matrix().row(t).array().exp().sum() - 1.0f) < 1e-5f);
  }
  AsrModel full(desk_asr_config(20, 50.0, Vocabulary::synthetic(5)), rng);
  CHECK(full.forward(random_tensor({33, 20}, rng)).rows() == 33);
  CHECK_THROWS_AS(model.forward(random_tensor({10, 19}, rng)), Error);
}

TEST_CASE("asr model passes an end-to-end gradient check") {
  Rng rng = make_stream(8, "init");
  AsrModel model(desk_asr_config(6, 100.0, Vocabulary::synthetic(3)), rng);
  const Tensor feats = random_tensor({12, 6}, rng);
  const std::vector<std::size_t> target{1, 2, 2};
  const auto params = model.parameters();
  // every parameter tensor, 16 evenly spaced elements each
  GradCheckOptions options;
  options.max_elements = 16;
  auto report = grad_check([&] { return ctc_loss(model.forward(feats), target); }, params.tensors(), options);
  CHECK_MESSAGE(report.passed, report.summary());
}
