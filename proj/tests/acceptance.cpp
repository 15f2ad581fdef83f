// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [--criterion N ...] [--cli PATH] [--config PATH] [--work DIR]
//
// Exit status is 0 only if every selected criterion passed.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "contraspeech/grad_check.hpp"
#include "contraspeech/layers.hpp"
#include "contraspeech/pipeline.hpp"

using namespace contraspeech;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Settings {
  fs::path cli;
  fs::path config;
  fs::path work = fs::temp_directory_path() / "contraspeech_acceptance";
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

Tensor random_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (float& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

Tensor project(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

RowMatrixXf random_log_probs(std::size_t T, std::size_t V, Rng& rng) {
  RowMatrixXf m(T, V);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 3.0f * uniform(rng, -1.0f, 1.0f);
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    const float mx = m.row(t).maxCoeff();
    m.row(t).array() -= mx + std::log((m.row(t).array() - mx).exp().sum());
  }
  return m;
}

std::vector<std::size_t> token_labels(const std::vector<std::size_t>& tokens) {
  std::vector<std::size_t> l;
  for (auto t : tokens) l.push_back(t + 1);
  return l;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// 1. finite-difference checks of every primitive and composite loss

Outcome gradient_integrity(const Settings&) {
  const auto t0 = Clock::now();
  Rng rng = make_stream(101, "acceptance");
  using Fn = std::function<Tensor(const Tensor&, const Tensor&)>;
  struct Case {
    const char* name;
    Fn fn;
    Shape a, b;
  };
  const std::vector<std::size_t> gather_idx{2, 0, 2, 1}, replace_idx{0, 2};
  const std::vector<Case> primitives = {
      {"add", [](auto& a, auto& b) { return add(a, b); }, {3, 4}, {4}},
      {"sub", [](auto& a, auto& b) { return sub(a, b); }, {3, 4}, {3, 1}},
      {"mul", [](auto& a, auto& b) { return mul(a, b); }, {3, 4}, {3, 4}},
      {"div", [](auto& a, auto& b) { return div(a, add(exp(b), Tensor::scalar(0.5f))); }, {3, 4}, {4}},
      {"neg", [](auto& a, auto&) { return neg(a); }, {5}, {1}},
      {"exp", [](auto& a, auto&) { return exp(a); }, {5}, {1}},
      {"log", [](auto& a, auto&) { return log(add(mul(a, a), Tensor::scalar(0.5f))); }, {5}, {1}},
      {"sigmoid", [](auto& a, auto&) { return sigmoid(a); }, {5}, {1}},
      {"log_sigmoid", [](auto& a, auto&) { return log_sigmoid(a); }, {5}, {1}},
      {"tanh", [](auto& a, auto&) { return tanh(a); }, {5}, {1}},
      {"scale", [](auto& a, auto&) { return scale(a, -1.5f); }, {5}, {1}},
      {"matmul", [](auto& a, auto& b) { return matmul(a, b); }, {3, 4}, {4, 2}},
      {"transpose", [](auto& a, auto&) { return transpose(a); }, {3, 4}, {1}},
      {"sum_axis", [](auto& a, auto&) { return reduce(ReduceKind::Sum, a, 0); }, {3, 4}, {1}},
      {"mean_axis", [](auto& a, auto&) { return reduce(ReduceKind::Mean, a, 1); }, {3, 4}, {1}},
      {"logsumexp", [](auto& a, auto&) { return reduce(ReduceKind::LogSumExp, a, 1); }, {3, 4}, {1}},
      {"softmax", [](auto& a, auto&) { return softmax(a); }, {3, 4}, {1}},
      {"log_softmax", [](auto& a, auto&) { return log_softmax(a); }, {3, 4}, {1}},
      {"layer_norm", [](auto& a, auto&) { return layer_norm(a); }, {3, 4}, {1}},
      {"row_normalize", [](auto& a, auto&) { return row_normalize(a); }, {3, 4}, {1}},
      {"reshape", [](auto& a, auto&) { return reshape(a, {4, 3}); }, {3, 4}, {1}},
      {"slice_rows", [](auto& a, auto&) { return slice_rows(a, 1, 3); }, {3, 4}, {1}},
      {"gather_rows", [&](auto& a, auto&) { return gather_rows(a, gather_idx); }, {3, 4}, {1}},
      {"reverse_rows", [](auto& a, auto&) { return reverse_rows(a); }, {3, 4}, {1}},
      {"concat_cols", [](auto& a, auto& b) { return concat_cols({a, b}); }, {3, 4}, {3, 2}},
      {"concat_rows", [](auto& a, auto& b) { return concat_rows({a, b}); }, {3, 4}, {2, 4}},
      {"replace_rows", [&](auto& a, auto& b) { return replace_rows(a, replace_idx, b); }, {3, 4}, {4}},
      {"conv1d", [](auto& a, auto& b) { return conv1d(a, reshape(b, {3, 2, 3}), Tensor::zeros({3}), 2, 1); }, {2, 9}, {18}},
      {"group_norm", [](auto& a, auto& b) { return group_norm(a, slice_rows(reshape(b, {2, 4}), 0, 1), slice_rows(reshape(b, {2, 4}), 1, 2), 2); }, {4, 6}, {8}},
      {"lstm", [](auto& a, auto& b) {
         const Tensor w = reshape(b, {2 + 3 + 1, 12});
         return lstm(a, transpose(slice_rows(w, 0, 2)), transpose(slice_rows(w, 2, 5)), reshape(slice_rows(w, 5, 6), {12}));
       }, {5, 2}, {72}},
  };

  std::vector<std::string> failed;
  std::size_t checks = 0;
  for (const auto& c : primitives) {
    for (int trial = 0; trial < 8; ++trial) {
      Tensor a = random_tensor(c.a, rng, -2.0f, 2.0f).set_requires_grad(true);
      Tensor b = random_tensor(c.b, rng, -2.0f, 2.0f).set_requires_grad(true);
      if (std::string(c.name) == "group_norm") {
        // gamma rows away from zero
        for (std::size_t i = 0; i < 4; ++i) b[i] = uniform(rng, 0.5f, 1.5f);
      }
      const Tensor probe = c.fn(a, b);
      active_tape().clear();
      const Tensor w = random_tensor(probe.shape(), rng);
      const auto report = grad_check([&] { return project(c.fn(a, b), w); }, {a, b});
      ++checks;
      if (!report.passed) {
        failed.push_back(c.name);
        break;
      }
    }
  }
  // the clipped relu and max are checked away from their kinks and ties
  for (int trial = 0; trial < 8; ++trial) {
    Tensor a = random_tensor({3, 4}, rng, -2.0f, 2.0f).set_requires_grad(true);
    for (std::size_t i = 0; i < a.numel(); ++i) {
      if (std::abs(a[i]) < 0.01f || std::abs(a[i] - 1.0f) < 0.01f) a[i] += 0.05f;
    }
    const Tensor w = random_tensor({3, 4}, rng);
    if (!grad_check([&] { return project(relu_clipped(a, 1.0f), w); }, {a}).passed) failed.push_back("relu_clipped");
    for (std::size_t i = 0; i < a.numel(); ++i) a[i] += 0.3f * static_cast<float>(i);
    const Tensor w3 = random_tensor({3}, rng);
    if (!grad_check([&] { return project(reduce(ReduceKind::Max, a, 1), w3); }, {a}).passed) failed.push_back("max_axis");
    checks += 2;
  }

  // composite losses
  auto composite = [&](const char* name, const std::function<Tensor()>& f, std::vector<Tensor> params) {
    ++checks;
    const auto report = grad_check(f, std::move(params));
    if (!report.passed) failed.push_back(std::string(name) + " (" + report.summary() + ")");
  };
  for (int trial = 0; trial < 4; ++trial) {
    const std::size_t U = 6 + trial, D = 4, K = 2;
    Tensor z = random_tensor({U, D}, rng).set_requires_grad(true);
    Tensor c = random_tensor({U, D}, rng).set_requires_grad(true);
    std::vector<Tensor> hs;
    for (std::size_t k = 0; k < K; ++k) hs.push_back(random_tensor({D, D}, rng).set_requires_grad(true));
    const DistractorTable table = sample_distractor_table(U, 3, rng);
    std::vector<Tensor> params{z, c};
    params.insert(params.end(), hs.begin(), hs.end());
    composite("contrastive forward", [&] { return wav2vec_loss(z, c, hs, Direction::Forward, table); }, params);
    composite("contrastive backward", [&] { return wav2vec_loss(z, c, hs, Direction::Backward, table); }, params);

    Tensor q = random_tensor({U, D}, rng).set_requires_grad(true);
    const auto cand = sample_masked_candidates({0, 2, 3, U - 1}, 2, rng);
    composite("masked contrastive", [&] { return masked_contrastive_loss(q, c, cand, 0.5f); }, {q, c});

    Tensor logits = random_tensor({2, 5}, rng).set_requires_grad(true);
    composite("diversity", [&] { return diversity_loss(softmax(logits)); }, {logits});

    Tensor ctc_logits = random_tensor({6, 4}, rng, -2.0f, 2.0f).set_requires_grad(true);
    const std::vector<std::size_t> target{1 + uniform_index(rng, 3), 1 + uniform_index(rng, 3)};
    composite("ctc", [&] { return ctc_loss(log_softmax(ctc_logits), target); }, {ctc_logits});
  }

  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failed.empty() && secs < 120.0;
  o.detail = std::to_string(checks) + " checks at rtol 1e-3 in " + fmt(secs, 3) + " s";
  if (!failed.empty()) {
    o.detail += "; failed:";
    for (const auto& f : failed) o.detail += " " + f;
  }
  return o;
}

// ---------------------------------------------------------------------------
// 2. closed-form loss values

Outcome closed_forms(const Settings&) {
  Rng rng = make_stream(102, "acceptance");
  std::vector<std::string> bad;
  double worst_contrastive = 0.0, worst_uniform = 0.0, worst_ctc = 0.0;

  for (std::size_t U : {5u, 14u, 30u}) {
    const std::size_t K = std::min<std::size_t>(12, U - 1), D = 6, distractors = 10;
    std::vector<Tensor> hs;
    for (std::size_t k = 0; k < K; ++k) hs.push_back(random_tensor({D, D}, rng));
    double terms = 0.0;
    for (std::size_t k = 1; k <= K; ++k) terms += static_cast<double>(U - k);
    const double expected = (1.0 + distractors) * std::log(2.0) * terms;
    const double got = wav2vec_loss(Tensor::zeros({U, D}), Tensor::zeros({U, D}), hs, Direction::Forward, distractors, rng).item();
    worst_contrastive = std::max(worst_contrastive, std::abs(got - expected) / expected);
  }
  if (worst_contrastive > 1e-4) bad.push_back("zero-parameter contrastive");

  for (std::size_t N : {2u, 5u, 11u}) {
    const std::size_t U = 40;
    Tensor q = Tensor::zeros({U, 6});
    for (std::size_t r = 0; r < U; ++r)
      for (std::size_t c = 0; c < 6; ++c) q.matrix()(r, c) = static_cast<float>(c + 1);
    std::vector<std::size_t> masked;
    for (std::size_t i = 0; i < U; i += 2) masked.push_back(i);
    const auto cand = sample_masked_candidates(masked, N - 1, rng);
    const double per_step = masked_contrastive_loss(q, random_tensor({U, 6}, rng), cand, 0.1f).item() / masked.size();
    worst_uniform = std::max(worst_uniform, std::abs(per_step - std::log(static_cast<double>(N))));
  }
  if (worst_uniform > 1e-6) bad.push_back("uniform candidates");

  const double ln3 = std::log(3.0);
  for (std::size_t T : {1u, 2u}) {
    const RowMatrixXf lp = RowMatrixXf::Constant(T, 3, -std::log(3.0f));
    worst_ctc = std::max(worst_ctc, std::abs(ctc_loss(Tensor::from_matrix(lp), {1}).item() - ln3));
  }
  if (worst_ctc > 1e-6) bad.push_back("ctc uniform");

  Outcome o;
  o.pass = bad.empty();
  o.detail = "contrastive rel err " + fmt(worst_contrastive, 3) + ", uniform-candidate abs err " + fmt(worst_uniform, 3) +
             ", ctc abs err " + fmt(worst_ctc, 3);
  for (const auto& b : bad) o.detail += "; failed " + b;
  return o;
}

// ---------------------------------------------------------------------------
// 3. oracle agreement

DistractorTable mirror(const DistractorTable& table) {
  DistractorTable out = table;
  const std::size_t U = table.steps;
  for (std::size_t i = 0; i < U; ++i)
    for (std::size_t j = 0; j < table.count; ++j)
      out.indices[i * table.count + j] = U - 1 - table.indices[(U - 1 - i) * table.count + j];
  return out;
}

Outcome oracle_agreement(const Settings&) {
  Rng rng = make_stream(103, "acceptance");
  // ctc against enumeration. The lattice runs in double and is held to 1e-6
  // absolute; the float32 loss output to 1e-6 relative.
  std::size_t compared = 0, ctc_bad = 0;
  double worst_lattice = 0.0, worst_loss = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t T = 1 + uniform_index(rng, 8);
    const std::size_t V = 2 + uniform_index(rng, 3);
    const std::size_t L = uniform_index(rng, 4);
    std::vector<std::size_t> target(L);
    for (auto& l : target) l = 1 + uniform_index(rng, V - 1);
    const RowMatrixXf lp = random_log_probs(T, V, rng);
    const double oracle = ctc_brute_force(lp, target);
    const auto lat = ctc_lattice(lp, target);
    if (ctc_minimum_frames(target) > T) {
      if (lat.forward_log_likelihood != -std::numeric_limits<double>::infinity()) ++ctc_bad;
      continue;
    }
    ++compared;
    const double loss = ctc_loss(Tensor::from_matrix(lp), target).item();
    const double lat_err = std::abs(lat.forward_log_likelihood - oracle);
    const double loss_err = std::abs(-loss - oracle) / std::max(1.0, std::abs(oracle));
    worst_lattice = std::max(worst_lattice, lat_err);
    worst_loss = std::max(worst_loss, loss_err);
    if (lat_err > 1e-6 || loss_err > 1e-6) ++ctc_bad;
  }

  // PCA covariance reconstruction
  double worst_pca = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    DenseMatrix<double> x(500, 8), mix(8, 8);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < mix.size(); ++i) mix.data()[i] = 0.15 * normal(rng);
    x = (x * mix).eval();
    const auto model = pca_fit(x);
    const DenseMatrix<double> centered = x.rowwise() - x.colwise().mean();
    const DenseMatrix<double> cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
    const DenseMatrix<double> recon =
        model.components.transpose() * model.explained_variance.asDiagonal() * model.components;
    worst_pca = std::max(worst_pca, (recon - cov).cwiseAbs().maxCoeff());
  }

  // backward loss equals forward loss on reversed sequences
  double worst_rev = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t U = 8 + trial % 5, D = 5, K = 3;
    const Tensor z = random_tensor({U, D}, rng), c = random_tensor({U, 4}, rng);
    std::vector<Tensor> hs;
    for (std::size_t k = 0; k < K; ++k) hs.push_back(random_tensor({D, 4}, rng));
    const DistractorTable table = sample_distractor_table(U, 4, rng);
    const double back = wav2vec_loss(z, c, hs, Direction::Backward, table).item();
    const double fwd = wav2vec_loss(reverse_rows(z), reverse_rows(c), hs, Direction::Forward, mirror(table)).item();
    worst_rev = std::max(worst_rev, std::abs(back - fwd) / std::max(1.0, std::abs(fwd)));
  }

  Outcome o;
  o.pass = ctc_bad == 0 && compared > 100 && worst_pca < 1e-4 && worst_rev < 1e-5;
  o.detail = "ctc " + std::to_string(compared) + " alignable of 200, lattice err " + fmt(worst_lattice, 3) +
             ", loss rel err " + fmt(worst_loss, 3) + "; pca recon err " + fmt(worst_pca, 3) + "; reversal rel err " +
             fmt(worst_rev, 3);
  return o;
}

// ---------------------------------------------------------------------------
// 4. low-rank features: dimensionality and decorrelated ASR training

struct LowRankCorpus {
  std::vector<AsrExample> examples;
};

// 64-dim features of effective rank 4: a per-token 4-dim code with a little
// within-token drift, mixed into 64 dims, plus a feature offset and 1e-3
// isotropic noise. The four latent directions have very different scales,
// so the raw covariance is badly conditioned as well as low rank.
LowRankCorpus low_rank_corpus(std::size_t utterances, std::uint64_t seed) {
  Rng rng = make_stream(seed, "construct");
  const Eigen::Index D = 64, R = 4;
  const std::size_t vocab = 5;
  DenseMatrix<double> codes(vocab, R), mix(R, D);
  const double scales[] = {1.0, 0.7, 0.5, 0.35};
  for (Eigen::Index v = 0; v < codes.rows(); ++v)
    for (Eigen::Index r = 0; r < R; ++r) codes(v, r) = scales[r] * normal(rng);
  for (Eigen::Index i = 0; i < mix.size(); ++i) mix.data()[i] = 0.15 * normal(rng);
  DenseVector<double> offset(D);
  for (Eigen::Index i = 0; i < D; ++i) offset(i) = 2.0 * normal(rng);

  LowRankCorpus out;
  for (std::size_t u = 0; u < utterances; ++u) {
    std::vector<std::size_t> tokens(8);
    std::vector<Eigen::Index> lengths;
    Eigen::Index frames = 0;
    for (auto& t : tokens) {
      t = uniform_index(rng, vocab);
      lengths.push_back(12 + static_cast<Eigen::Index>(uniform_index(rng, 9)));
      frames += lengths.back();
    }
    DenseMatrix<double> latent(frames, R);
    Eigen::Index row = 0;
    for (std::size_t k = 0; k < tokens.size(); ++k)
      for (Eigen::Index f = 0; f < lengths[k]; ++f, ++row)
        for (Eigen::Index r = 0; r < R; ++r) latent(row, r) = codes(tokens[k], r) * (1.0 + 0.1 * normal(rng));
    DenseMatrix<double> x = latent * mix;
    x.rowwise() += offset.transpose();
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += 1e-3 * normal(rng);
    out.examples.push_back({"lr_" + std::to_string(u), x.cast<float>(), token_labels(tokens)});
  }
  return out;
}

// Mean per-utterance ctc loss over the whole training corpus after `steps`
// updates; a full pass is far less noisy than the last few batch losses.
double final_asr_loss(const std::vector<AsrExample>& corpus, std::uint64_t seed, std::size_t steps) {
  const std::size_t width = static_cast<std::size_t>(corpus.front().features.cols());
  Rng init = make_stream(seed, "init");
  AsrModel model(desk_asr_config(width, 100.0, Vocabulary::synthetic(5)), init);
  TrainOptions o;
  o.steps = steps;
  o.batch_seconds = 4.0;
  o.schedule.high = 3e-3f;
  o.schedule.low = 1e-3f;
  o.seed = seed;
  train_asr(model, corpus, o);
  NoGradGuard guard;
  double total = 0.0;
  for (const auto& e : corpus) total += ctc_loss(model.forward(Tensor::from_matrix(e.features)), e.target).item();
  return total / static_cast<double>(corpus.size());
}

std::vector<AsrExample> transformed(const std::vector<AsrExample>& corpus, const PcaModel<double>& model) {
  std::vector<AsrExample> out = corpus;
  for (auto& e : out) e.features = pca_transform(e.features, model).cast<float>();
  return out;
}

Outcome low_rank_decorrelation(const Settings&) {
  const auto t0 = Clock::now();
  const LowRankCorpus corpus = low_rank_corpus(60, 104);
  FeatureMatrix all(0, 64);
  for (const auto& e : corpus.examples) {
    all.conservativeResize(all.rows() + e.features.rows(), Eigen::NoChange);
    all.bottomRows(e.features.rows()) = e.features;
  }
  const auto pca = pca_fit(all.cast<double>());
  const std::size_t dim = linear_dimensionality(pca, 0.95);
  const auto decorrelated = transformed(corpus.examples, pca);
  const auto centered = transformed(corpus.examples, mean_only_model(all.cast<double>()));

  std::vector<double> raw_loss, pca_loss, mean_loss;
  std::size_t wins = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    raw_loss.push_back(final_asr_loss(corpus.examples, seed, 300));
    pca_loss.push_back(final_asr_loss(decorrelated, seed, 300));
    mean_loss.push_back(final_asr_loss(centered, seed, 300));
    if (pca_loss.back() <= raw_loss.back()) ++wins;
    std::cerr << "  [4] seed " << seed << ": raw " << fmt(raw_loss.back()) << ", decorrelated " << fmt(pca_loss.back())
              << ", mean-only " << fmt(mean_loss.back()) << "\n";
  }
  const double secs = seconds_since(t0);
  const bool a = dim <= 6, b = wins >= 8, c = median(mean_loss) > median(pca_loss);
  Outcome o;
  o.pass = a && b && c && secs < 1800.0;
  o.detail = std::string("(a) dimensionality ") + std::to_string(dim) + (a ? " ok" : " FAIL") +
             "; (b) decorrelated <= raw in " + std::to_string(wins) + "/10" + (b ? " ok" : " FAIL") +
             "; (c) median final loss mean-only " + fmt(median(mean_loss)) + " vs decorrelated " +
             fmt(median(pca_loss)) + (c ? " ok" : " FAIL") + "; " + fmt(secs, 3) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// 5. bidirectional vs two forward context networks

std::vector<AsrExample> cpc_examples(const CpcModel& model, const std::vector<SynthUtterance>& utts) {
  std::vector<AsrExample> out;
  out.reserve(utts.size());
  for (const auto& u : utts) {
    const Tensor wave = Tensor::from({u.audio.samples.size()}, u.audio.samples);
    out.push_back({u.id, model.extract(wave).matrix(), token_labels(u.tokens)});
  }
  return out;
}

double downstream_cer(ContextMode mode, std::uint64_t seed, const std::vector<SynthUtterance>& train,
                      const std::vector<SynthUtterance>& test) {
  std::vector<AudioBuffer> audio;
  for (const auto& u : train) audio.push_back(u.audio);
  CpcConfig cfg = desk_cpc_config();
  cfg.mode = mode;
  Rng init = make_stream(seed, "init");
  const CpcModel model(cfg, init);
  TrainOptions pre;
  pre.steps = 500;
  pre.batch_seconds = 2.0;
  pre.crop_seconds = 1.0;
  pre.schedule.high = 1e-3f;
  pre.schedule.low = 3e-4f;
  pre.seed = seed;
  pretrain_cpc(model, audio, pre);

  const auto train_ex = cpc_examples(model, train);
  const auto test_ex = cpc_examples(model, test);
  const std::size_t width = cfg.feature_width();
  const double rate = 16000.0 / static_cast<double>(cfg.encoder.total_stride());
  const auto pca = fit_streaming(width, false, [&](auto fn) {
    for (const auto& e : train_ex) fn(e.features);
  });

  Rng asr_init = make_stream(seed, "init");
  AsrModel asr(desk_asr_config(width, rate, Vocabulary::synthetic(5)), asr_init);
  TrainOptions o;
  o.steps = 500;
  o.batch_seconds = 4.0;
  o.schedule.high = 1e-3f;
  o.schedule.low = 3e-4f;
  o.seed = seed;
  train_asr(asr, transformed(train_ex, pca), o);

  std::vector<FeatureMatrix> feats;
  std::vector<std::string> refs;
  const Vocabulary vocab = Vocabulary::synthetic(5);
  for (const auto& e : transformed(test_ex, pca)) {
    feats.push_back(e.features);
    refs.push_back(vocab.decode(e.target));
  }
  return character_error_rate(transcribe(asr, feats), refs);
}

Outcome bidirectional_features(const Settings&) {
  const auto t0 = Clock::now();
  // 2800 utterances of 8 tokens at 120-200 ms: about an hour of audio
  SynthOptions so;
  so.num_utts = 2800;
  so.seed = 105;
  const auto train = synth_utterances(so);
  double total = 0.0;
  for (const auto& u : train) total += u.audio.duration();
  so.num_utts = 100;
  so.seed = 1105;
  so.id_prefix = "heldout";
  const auto test = synth_utterances(so);

  std::size_t wins = 0;
  std::vector<double> bi_cer, pair_cer;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    bi_cer.push_back(downstream_cer(ContextMode::Bidirectional, seed, train, test));
    pair_cer.push_back(downstream_cer(ContextMode::ForwardPair, seed, train, test));
    if (bi_cer.back() <= pair_cer.back()) ++wins;
    std::cerr << "  [5] seed " << seed << ": bidirectional CER " << fmt(bi_cer.back()) << ", forward pair CER "
              << fmt(pair_cer.back()) << " (" << fmt(seconds_since(t0), 4) << " s)\n";
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = wins >= 7 && secs < 7200.0;
  o.detail = "bidirectional CER <= forward-pair CER in " + std::to_string(wins) + "/10 seeds (median " +
             fmt(median(bi_cer)) + " vs " + fmt(median(pair_cer)) + "), corpus " + fmt(total / 60.0, 3) + " min, " +
             fmt(secs, 4) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// 6. command-line pipeline

std::string shell_quote(const fs::path& p) { return "'" + p.string() + "'"; }

int run(const std::string& command, const fs::path& log) {
  const int status = std::system((command + " >> " + shell_quote(log) + " 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome pipeline(const Settings& s) {
  if (s.cli.empty() || !fs::exists(s.cli)) return {false, "command-line tool not found (pass --cli)"};
  const auto t0 = Clock::now();
  const fs::path dir = s.work / "pipeline";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path log = dir / "commands.log";
  const std::string cli = shell_quote(s.cli);
  const std::string cfg = s.config.empty() ? "" : " --config " + shell_quote(s.config);

  auto one_run = [&](const std::string& tag) -> std::pair<int, std::string> {
    const fs::path d = dir / tag;
    const std::vector<std::pair<std::string, std::string>> steps = {
        {"synth train", cli + " synth --utts 100 --vocab 5 --seed 1 --out " + shell_quote(d / "train")},
        {"synth held-out", cli + " synth --utts 20 --vocab 5 --seed 2 --prefix heldout --out " + shell_quote(d / "test")},
        {"pretrain", cli + " pretrain --objective cpc --manifest " + shell_quote(d / "train/manifest.tsv") + " --out " +
                         shell_quote(d / "cpc.ckpt") + cfg + " --set train.steps=500 --seed 1 --no-timestamps"},
        {"extract train", cli + " extract --checkpoint " + shell_quote(d / "cpc.ckpt") + " --manifest " +
                              shell_quote(d / "train/manifest.tsv") + " --out " + shell_quote(d / "feat_train")},
        {"extract held-out", cli + " extract --checkpoint " + shell_quote(d / "cpc.ckpt") + " --manifest " +
                                 shell_quote(d / "test/manifest.tsv") + " --out " + shell_quote(d / "feat_test")},
        {"pca", cli + " pca --index " + shell_quote(d / "feat_train/index.tsv") + " --out " + shell_quote(d / "pca.ckpt")},
        {"train-asr", cli + " train-asr --features " + shell_quote(d / "feat_train/index.tsv") + " --manifest " +
                          shell_quote(d / "train/manifest.tsv") + " --pca-model " + shell_quote(d / "pca.ckpt") +
                          " --out " + shell_quote(d / "asr.ckpt") + cfg + " --set asr.steps=500 --seed 1 --no-timestamps"},
        {"eval", cli + " eval --checkpoint " + shell_quote(d / "asr.ckpt") + " --features " +
                     shell_quote(d / "feat_test/index.tsv") + " --manifest " + shell_quote(d / "test/manifest.tsv") +
                     " --out " + shell_quote(d / "eval.txt")},
    };
    for (const auto& [name, cmd] : steps) {
      const int code = run(cmd, log);
      if (code != 0) return {code, name};
    }
    return {0, ""};
  };

  for (const char* tag : {"a", "b"}) {
    const auto [code, step] = one_run(tag);
    if (code != 0)
      return {false, std::string("run ") + tag + ": " + step + " exited " + std::to_string(code) + " (see " +
                         log.string() + ")"};
  }

  double cer = -1.0;
  std::istringstream report(slurp(dir / "a/eval.txt"));
  for (std::string line; std::getline(report, line);)
    if (line.rfind("CER\t", 0) == 0) cer = std::stod(line.substr(4));

  std::vector<std::string> differ;
  for (const char* f : {"cpc.ckpt", "cpc.ckpt.log", "pca.ckpt", "asr.ckpt", "eval.txt", "feat_test/index.tsv"})
    if (slurp(dir / "a" / f) != slurp(dir / "b" / f)) differ.push_back(f);

  Outcome o;
  o.pass = cer >= 0.0 && cer < 0.10 && differ.empty();
  o.detail = "all steps exit 0; held-out CER " + fmt(cer, 3) +
             (differ.empty() ? "; two runs byte-identical" : "; outputs differ between runs:");
  for (const auto& f : differ) o.detail += " " + f;
  o.detail += "; " + fmt(seconds_since(t0), 4) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// 7. structural checks

Outcome structure(const Settings&) {
  std::vector<std::string> bad;
  const EncoderSpec full = full_encoder_spec();
  const std::size_t frames = full.output_length(16000);
  if (frames != 98) bad.push_back("frame count");

  CpcConfig bi = desk_cpc_config();
  bi.mode = ContextMode::Bidirectional;
  Rng init = make_stream(107, "init");
  const CpcModel model(bi, init);
  Rng data = make_stream(107, "data");
  const Tensor wave = random_tensor({16000}, data);
  const std::size_t width = model.extract(wave).cols();
  if (width != 2 * bi.context_units) bad.push_back("bidirectional width");

  double fraction = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng = make_stream(seed, "mask");
    fraction += static_cast<double>(sample_mask(1000, MaskSpec{}, rng).size()) / 1000.0;
  }
  fraction /= 100.0;
  if (std::abs(fraction - 0.49) > 0.05) bad.push_back("masked fraction");

  const double ratio = static_cast<double>(full.with_constant_width(512).activation_elements(160000)) /
                       static_cast<double>(full.activation_elements(160000));
  if (ratio < 4.0) bad.push_back("activation ratio");

  Outcome o;
  o.pass = bad.empty();
  o.detail = "frames for 1 s: " + std::to_string(frames) + "; bidirectional width " + std::to_string(width) + " (D=" +
             std::to_string(bi.context_units) + "); masked fraction " + fmt(fraction) + "; activation ratio " +
             fmt(ratio, 3);
  for (const auto& b : bad) o.detail += "; failed " + b;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> selected;
  Settings settings;
  app.add_option("--criterion", selected, "criteria to run (default all)")->check(CLI::Range(1, 7));
  app.add_option("--cli", settings.cli, "path to the contraspeech executable");
  app.add_option("--config", settings.config, "config file for the pipeline run");
  app.add_option("--work", settings.work, "scratch directory");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7};

  const std::map<int, std::pair<const char*, std::function<Outcome(const Settings&)>>> criteria = {
      {1, {"gradient integrity", gradient_integrity}},
      {2, {"closed-form losses", closed_forms}},
      {3, {"oracle agreement", oracle_agreement}},
      {4, {"low-rank decorrelation", low_rank_decorrelation}},
      {5, {"bidirectional features", bidirectional_features}},
      {6, {"pipeline smoke", pipeline}},
      {7, {"structure", structure}},
  };

  bool all = true;
  for (int id : selected) {
    const auto& [name, fn] = criteria.at(id);
    Outcome o;
    try {
      o = fn(settings);
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail
              << std::endl;
  }
  return all ? 0 : 1;
}
