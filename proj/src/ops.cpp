#include "contraspeech/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "op_support.hpp"

namespace contraspeech {

using detail::check_finite;
using detail::tracking;

namespace {

// Flat-index maps from the broadcast output back into each operand.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_index;  // empty: operand has the output shape
  std::vector<std::size_t> b_index;
};

std::vector<std::size_t> index_map(const Shape& operand, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - operand.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t d = operand.size(); d-- > 0;) {
    stride[d + offset] = operand[d] == 1 ? 0 : s;
    s *= operand[d];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t flat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = flat;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      flat += stride[d];
      if (counter[d] < out[d]) break;
      flat -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return map;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      fail(ErrorKind::Dimension, "cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    plan.out[i] = da == 1 ? db : da;
  }
  if (a != plan.out) plan.a_index = index_map(a, plan.out);
  if (b != plan.out) plan.b_index = index_map(b, plan.out);
  return plan;
}

inline float stable_log_sigmoid(float x) {
  return x >= 0.0f ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

inline float stable_sigmoid(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

}  // namespace

Tensor elementwise(BinaryKind kind, const Tensor& a, const Tensor& b) {
  BroadcastPlan plan = plan_broadcast(a.shape(), b.shape());
  const bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros(plan.out, track);
  const std::size_t n = out.numel();
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.data();
  auto ai = [&](std::size_t i) { return plan.a_index.empty() ? i : plan.a_index[i]; };
  auto bi = [&](std::size_t i) { return plan.b_index.empty() ? i : plan.b_index[i]; };
  for (std::size_t i = 0; i < n; ++i) {
    const float x = av[ai(i)];
    const float y = bv[bi(i)];
    switch (kind) {
      case BinaryKind::Add: ov[i] = x + y; break;
      case BinaryKind::Sub: ov[i] = x - y; break;
      case BinaryKind::Mul: ov[i] = x * y; break;
      case BinaryKind::Div: ov[i] = x / y; break;
    }
  }
  check_finite(out, "elementwise");
  if (track) {
    active_tape().record({a, b, out}, [kind, a, b, out, plan = std::move(plan)]() mutable {
      auto g = out.grad();
      auto av = a.data();
      auto bv = b.data();
      const std::size_t n = g.size();
      auto ai = [&](std::size_t i) { return plan.a_index.empty() ? i : plan.a_index[i]; };
      auto bi = [&](std::size_t i) { return plan.b_index.empty() ? i : plan.b_index[i]; };
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          float d = 0.0f;
          switch (kind) {
            case BinaryKind::Add:
            case BinaryKind::Sub: d = g[i]; break;
            case BinaryKind::Mul: d = g[i] * bv[bi(i)]; break;
            case BinaryKind::Div: d = g[i] / bv[bi(i)]; break;
          }
          ga[ai(i)] += d;
        }
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          float d = 0.0f;
          const float y = bv[bi(i)];
          switch (kind) {
            case BinaryKind::Add: d = g[i]; break;
            case BinaryKind::Sub: d = -g[i]; break;
            case BinaryKind::Mul: d = g[i] * av[ai(i)]; break;
            case BinaryKind::Div: d = -g[i] * av[ai(i)] / (y * y); break;
          }
          gb[bi(i)] += d;
        }
      }
    });
  }
  return out;
}

Tensor elementwise(UnaryKind kind, const Tensor& a, float parameter) {
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const float x = av[i];
    switch (kind) {
      case UnaryKind::Neg: ov[i] = -x; break;
      case UnaryKind::Exp: ov[i] = std::exp(x); break;
      case UnaryKind::Log: ov[i] = std::log(x); break;
      case UnaryKind::Sigmoid: ov[i] = stable_sigmoid(x); break;
      case UnaryKind::LogSigmoid: ov[i] = stable_log_sigmoid(x); break;
      case UnaryKind::Tanh: ov[i] = std::tanh(x); break;
      case UnaryKind::ReluClipped: ov[i] = std::clamp(x, 0.0f, parameter); break;
      case UnaryKind::Scale: ov[i] = x * parameter; break;
    }
  }
  check_finite(out, "elementwise");
  if (track) {
    active_tape().record({a, out}, [kind, parameter, a, out]() mutable {
      auto g = out.grad();
      auto av = a.data();
      auto ov = out.data();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const float x = av[i];
        const float y = ov[i];
        float d = 0.0f;
        switch (kind) {
          case UnaryKind::Neg: d = -1.0f; break;
          case UnaryKind::Exp: d = y; break;
          case UnaryKind::Log: d = 1.0f / x; break;
          case UnaryKind::Sigmoid: d = y * (1.0f - y); break;
          case UnaryKind::LogSigmoid: d = 1.0f - stable_sigmoid(x); break;
          case UnaryKind::Tanh: d = 1.0f - y * y; break;
          case UnaryKind::ReluClipped: d = (x > 0.0f && x < parameter) ? 1.0f : 0.0f; break;
          case UnaryKind::Scale: d = parameter; break;
        }
        ga[i] += g[i] * d;
      }
    });
  }
  return out;
}

Tensor map_unary(const Tensor& a, std::function<float(float)> f, std::function<float(float, float)> df) {
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = f(av[i]);
  check_finite(out, "map_unary");
  if (track) {
    active_tape().record({a, out}, [a, out, df = std::move(df)]() mutable {
      auto g = out.grad();
      auto ga = a.ensure_grad();
      auto av = a.data();
      auto ov = out.data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(av[i], ov[i]);
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::Dimension,
          "matmul needs rank-2 operands, got " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  require(a.cols() == b.rows(), ErrorKind::Dimension,
          "matmul inner dimensions differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros({a.rows(), b.cols()}, track);
  const RowMatrixXd ad = a.matrix().cast<double>();
  const RowMatrixXd bd = b.matrix().cast<double>();
  out.matrix() = (ad * bd).cast<float>();
  check_finite(out, "matmul");
  if (track) {
    active_tape().record({a, b, out}, [a, b, out]() mutable {
      const RowMatrixXd g = out.grad_matrix().cast<double>();
      if (a.requires_grad()) a.grad_matrix() += (g * b.matrix().cast<double>().transpose()).cast<float>();
      if (b.requires_grad()) b.grad_matrix() += (a.matrix().cast<double>().transpose() * g).cast<float>();
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, ErrorKind::Dimension, "transpose needs a rank-2 tensor");
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros({a.cols(), a.rows()}, track);
  out.matrix() = a.matrix().transpose();
  if (track) {
    active_tape().record({a, out}, [a, out]() mutable { a.grad_matrix() += out.grad_matrix().transpose(); });
  }
  return out;
}

Tensor reduce(ReduceKind kind, const Tensor& a, std::size_t axis) {
  const Shape& s = a.shape();
  require(axis < s.size(), ErrorKind::Dimension,
          "reduce axis " + std::to_string(axis) + " invalid for shape " + shape_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t n = s[axis];
  Shape out_shape;
  for (std::size_t d = 0; d < s.size(); ++d)
    if (d != axis) out_shape.push_back(s[d]);
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros(out_shape, track);
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      auto x = [&](std::size_t k) { return static_cast<double>(av[(o * n + k) * inner + in]); };
      double r = 0.0;
      switch (kind) {
        case ReduceKind::Sum:
        case ReduceKind::Mean:
          for (std::size_t k = 0; k < n; ++k) r += x(k);
          if (kind == ReduceKind::Mean) r = n ? r / static_cast<double>(n) : 0.0;
          break;
        case ReduceKind::Max:
          r = -std::numeric_limits<double>::infinity();
          for (std::size_t k = 0; k < n; ++k) r = std::max(r, x(k));
          break;
        case ReduceKind::LogSumExp: {
          double m = -std::numeric_limits<double>::infinity();
          for (std::size_t k = 0; k < n; ++k) m = std::max(m, x(k));
          if (!std::isfinite(m)) {
            r = m;
            break;
          }
          double acc = 0.0;
          for (std::size_t k = 0; k < n; ++k) acc += std::exp(x(k) - m);
          r = m + std::log(acc);
          break;
        }
      }
      ov[o * inner + in] = static_cast<float>(r);
    }
  }
  check_finite(out, "reduce");
  if (track) {
    active_tape().record({a, out}, [kind, a, out, outer, inner, n]() mutable {
      auto g = out.grad();
      auto ga = a.ensure_grad();
      auto av = a.data();
      auto ov = out.data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const float go = g[o * inner + in];
          const float y = ov[o * inner + in];
          std::size_t argmax = 0;
          if (kind == ReduceKind::Max)
            for (std::size_t k = 1; k < n; ++k)
              if (av[(o * n + k) * inner + in] > av[(o * n + argmax) * inner + in]) argmax = k;
          for (std::size_t k = 0; k < n; ++k) {
            const std::size_t idx = (o * n + k) * inner + in;
            switch (kind) {
              case ReduceKind::Sum: ga[idx] += go; break;
              case ReduceKind::Mean: ga[idx] += go / static_cast<float>(n); break;
              case ReduceKind::Max:
                if (k == argmax) ga[idx] += go;
                break;
              case ReduceKind::LogSumExp:
                ga[idx] += go * static_cast<float>(std::exp(static_cast<double>(av[idx]) - y));
                break;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a) { return reduce(ReduceKind::Sum, reshape(a, {a.numel()}), 0); }
Tensor mean(const Tensor& a) { return reduce(ReduceKind::Mean, reshape(a, {a.numel()}), 0); }

namespace {

std::pair<std::size_t, std::size_t> last_axis_split(const Tensor& a) {
  require(a.rank() >= 1, ErrorKind::Dimension, "last-axis op on a scalar");
  const std::size_t n = a.shape().back();
  return {n ? a.numel() / n : 0, n};
}

}  // namespace

Tensor log_softmax(const Tensor& a) {
  const auto [rows, n] = last_axis_split(a);
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) m = std::max(m, static_cast<double>(av[r * n + k]));
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += std::exp(av[r * n + k] - m);
    const double lse = m + std::log(acc);
    for (std::size_t k = 0; k < n; ++k) ov[r * n + k] = static_cast<float>(av[r * n + k] - lse);
  }
  check_finite(out, "log_softmax");
  if (track) {
    active_tape().record({a, out}, [a, out, rows, n]() mutable {
      auto g = out.grad();
      auto ga = a.ensure_grad();
      auto ov = out.data();
      for (std::size_t r = 0; r < rows; ++r) {
        double gs = 0.0;
        for (std::size_t k = 0; k < n; ++k) gs += g[r * n + k];
        for (std::size_t k = 0; k < n; ++k)
          ga[r * n + k] += static_cast<float>(g[r * n + k] - std::exp(static_cast<double>(ov[r * n + k])) * gs);
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& a) {
  const auto [rows, n] = last_axis_split(a);
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) m = std::max(m, static_cast<double>(av[r * n + k]));
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += std::exp(av[r * n + k] - m);
    for (std::size_t k = 0; k < n; ++k) ov[r * n + k] = static_cast<float>(std::exp(av[r * n + k] - m) / acc);
  }
  check_finite(out, "softmax");
  if (track) {
    active_tape().record({a, out}, [a, out, rows, n]() mutable {
      auto g = out.grad();
      auto ga = a.ensure_grad();
      auto ov = out.data();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += static_cast<double>(g[r * n + k]) * ov[r * n + k];
        for (std::size_t k = 0; k < n; ++k)
          ga[r * n + k] += static_cast<float>(ov[r * n + k] * (g[r * n + k] - dot));
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& a, float epsilon) {
  const auto [rows, n] = last_axis_split(a);
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros(a.shape(), track);
  std::vector<float> inv_std(rows);
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t k = 0; k < n; ++k) mu += av[r * n + k];
    mu /= static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) var += (av[r * n + k] - mu) * (av[r * n + k] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + epsilon);
    inv_std[r] = static_cast<float>(is);
    for (std::size_t k = 0; k < n; ++k) ov[r * n + k] = static_cast<float>((av[r * n + k] - mu) * is);
  }
  check_finite(out, "layer_norm");
  if (track) {
    active_tape().record({a, out}, [a, out, rows, n, inv_std = std::move(inv_std)]() mutable {
      auto g = out.grad();
      auto ga = a.ensure_grad();
      auto y = out.data();
      for (std::size_t r = 0; r < rows; ++r) {
        double gm = 0.0, gy = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          gm += g[r * n + k];
          gy += static_cast<double>(g[r * n + k]) * y[r * n + k];
        }
        gm /= static_cast<double>(n);
        gy /= static_cast<double>(n);
        for (std::size_t k = 0; k < n; ++k)
          ga[r * n + k] += static_cast<float>(inv_std[r] * (g[r * n + k] - gm - y[r * n + k] * gy));
      }
    });
  }
  return out;
}

Tensor row_normalize(const Tensor& a) {
  const auto [rows, n] = last_axis_split(a);
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros(a.shape(), track);
  std::vector<double> norms(rows);
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t k = 0; k < n; ++k) ss += static_cast<double>(av[r * n + k]) * av[r * n + k];
    norms[r] = std::sqrt(ss);
    if (norms[r] == 0.0) continue;
    for (std::size_t k = 0; k < n; ++k) ov[r * n + k] = static_cast<float>(av[r * n + k] / norms[r]);
  }
  check_finite(out, "row_normalize");
  if (track) {
    active_tape().record({a, out}, [a, out, rows, n, norms = std::move(norms)]() mutable {
      auto g = out.grad();
      auto ga = a.ensure_grad();
      auto y = out.data();
      for (std::size_t r = 0; r < rows; ++r) {
        if (norms[r] == 0.0) continue;
        double gy = 0.0;
        for (std::size_t k = 0; k < n; ++k) gy += static_cast<double>(g[r * n + k]) * y[r * n + k];
        for (std::size_t k = 0; k < n; ++k)
          ga[r * n + k] += static_cast<float>((g[r * n + k] - y[r * n + k] * gy) / norms[r]);
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(), ErrorKind::Dimension,
          "cannot reshape " + shape_string(a.shape()) + " to " + shape_string(shape));
  const bool track = tracking({&a});
  Tensor out = Tensor::from(std::move(shape), std::vector<float>(a.data().begin(), a.data().end()), track);
  if (track) {
    active_tape().record({a, out}, [a, out]() mutable {
      auto g = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require(a.rank() == 2, ErrorKind::Dimension, "slice_rows needs a rank-2 tensor");
  require(begin <= end && end <= a.rows(), ErrorKind::Dimension,
          "row slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
              shape_string(a.shape()));
  const bool track = tracking({&a});
  const std::size_t cols = a.cols();
  Tensor out = Tensor::zeros({end - begin, cols}, track);
  std::copy(a.data().begin() + begin * cols, a.data().begin() + end * cols, out.data().begin());
  if (track) {
    active_tape().record({a, out}, [a, out, begin, cols]() mutable {
      auto g = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[begin * cols + i] += g[i];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require(a.rank() == 2, ErrorKind::Dimension, "gather_rows needs a rank-2 tensor");
  const std::size_t cols = a.cols();
  for (std::size_t r : rows)
    require(r < a.rows(), ErrorKind::Dimension,
            "gather index " + std::to_string(r) + " out of range for " + shape_string(a.shape()));
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros({rows.size(), cols}, track);
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(av.begin() + rows[i] * cols, cols, ov.begin() + i * cols);
  if (track) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    active_tape().record({a, out}, [a, out, cols, idx = std::move(idx)]() mutable {
      auto g = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < cols; ++c) ga[idx[i] * cols + c] += g[i * cols + c];
    });
  }
  return out;
}

Tensor reverse_rows(const Tensor& a) {
  require(a.rank() == 2, ErrorKind::Dimension, "reverse_rows needs a rank-2 tensor");
  std::vector<std::size_t> idx(a.rows());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = idx.size() - 1 - i;
  return gather_rows(a, idx);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), ErrorKind::Dimension, "concat_cols of nothing");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  bool track = false;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.rows() == rows, ErrorKind::Dimension,
            "concat_cols row mismatch: " + shape_string(p.shape()));
    cols += p.cols();
    track = track || tracking({&p});
  }
  Tensor out = Tensor::zeros({rows, cols}, track);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    out.matrix().middleCols(offset, p.cols()) = p.matrix();
    offset += p.cols();
  }
  if (track) {
    std::vector<Tensor> participants = parts;
    participants.push_back(out);
    active_tape().record(participants, [parts, out]() mutable {
      std::size_t offset = 0;
      auto g = out.grad_matrix();
      for (auto p : parts) {
        if (p.requires_grad()) p.grad_matrix() += g.middleCols(offset, p.cols());
        offset += p.cols();
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), ErrorKind::Dimension, "concat_rows of nothing");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  bool track = false;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.cols() == cols, ErrorKind::Dimension,
            "concat_rows column mismatch: " + shape_string(p.shape()));
    rows += p.rows();
    track = track || tracking({&p});
  }
  Tensor out = Tensor::zeros({rows, cols}, track);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + offset * cols);
    offset += p.rows();
  }
  if (track) {
    std::vector<Tensor> participants = parts;
    participants.push_back(out);
    active_tape().record(participants, [parts, out, cols]() mutable {
      std::size_t offset = 0;
      auto g = out.grad();
      for (auto p : parts) {
        if (p.requires_grad()) {
          auto gp = p.ensure_grad();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset * cols + i];
        }
        offset += p.rows();
      }
    });
  }
  return out;
}

Tensor replace_rows(const Tensor& a, std::span<const std::size_t> rows, const Tensor& row) {
  require(a.rank() == 2, ErrorKind::Dimension, "replace_rows needs a rank-2 tensor");
  const std::size_t cols = a.cols();
  require(row.numel() == cols, ErrorKind::Dimension, "replacement row width differs from tensor width");
  std::vector<char> replaced(a.rows(), 0);
  for (std::size_t r : rows) {
    require(r < a.rows(), ErrorKind::Dimension, "replace_rows index out of range");
    replaced[r] = 1;
  }
  const bool track = tracking({&a, &row});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto av = a.data();
  auto rv = row.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) ov[r * cols + c] = replaced[r] ? rv[c] : av[r * cols + c];
  if (track) {
    active_tape().record({a, row, out}, [a, row, out, cols, replaced = std::move(replaced)]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t r = 0; r < replaced.size(); ++r)
          if (!replaced[r])
            for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r * cols + c];
      }
      if (row.requires_grad()) {
        auto gr = row.ensure_grad();
        for (std::size_t r = 0; r < replaced.size(); ++r)
          if (replaced[r])
            for (std::size_t c = 0; c < cols; ++c) gr[c] += g[r * cols + c];
      }
    });
  }
  return out;
}

Tensor detach(const Tensor& a) {
  return Tensor::from(a.shape(), std::vector<float>(a.data().begin(), a.data().end()), false);
}

}  // namespace contraspeech
