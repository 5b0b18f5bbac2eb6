#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <algorithm>
#include <functional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "arnas/bilevel_search.hpp"
#include "arnas/data.hpp"
#include "arnas/network.hpp"
#include "arnas/search_space.hpp"
#include "arnas/tensor.hpp"

namespace arnas::testing {

inline Tensor random_tensor(Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline std::vector<int> cyclic_labels(int n, int k) {
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) y[i] = i % k;
  return y;
}

inline MacroConfig small_macro(int cells, int channels, int size, int classes) {
  MacroConfig m;
  m.num_cells = cells;
  m.init_channels = channels;
  m.num_classes = classes;
  m.input_shape = InputShape{3, size, size};
  return m;
}

/// Softmax regression over flattened pixels; its input gradient has a
/// closed form, which makes it an exact reference model for attacks.
class LinearSoftmax : public Classifier {
 public:
  LinearSoftmax(int in, int classes, std::uint64_t seed) : in_(in), k_(classes), w_(in * classes), b_(classes) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    for (double& v : w_) v = g(rng);
    for (double& v : b_) v = 0.1 * g(rng);
  }

  std::vector<double> scores(const Tensor& x, int n) const {
    std::vector<double> z(k_);
    for (int j = 0; j < k_; ++j) {
      double acc = b_[j];
      for (int i = 0; i < in_; ++i) acc += w_[static_cast<std::size_t>(j) * in_ + i] * x[static_cast<std::size_t>(n) * in_ + i];
      z[j] = acc;
    }
    return z;
  }

  Tensor logits(const Tensor& x) const override {
    const int n = x.shape().n;
    Tensor out(Shape{n, k_, 1, 1});
    for (int i = 0; i < n; ++i) {
      const auto z = scores(x, i);
      for (int j = 0; j < k_; ++j) out.at(i, j, 0, 0) = z[j];
    }
    return out;
  }

  double loss_input_gradient(const Tensor& x, std::span<const int> y, Tensor& grad) const override {
    const int n = x.shape().n;
    grad = Tensor(x.shape());
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
      auto z = scores(x, i);
      const double m = *std::max_element(z.begin(), z.end());
      double s = 0.0;
      for (double& v : z) s += (v = std::exp(v - m));
      for (double& v : z) v /= s;
      loss -= std::log(z[y[i]]);
      z[y[i]] -= 1.0;
      for (int p = 0; p < in_; ++p) {
        double g = 0.0;
        for (int j = 0; j < k_; ++j) g += w_[static_cast<std::size_t>(j) * in_ + p] * z[j];
        grad[static_cast<std::size_t>(i) * in_ + p] = g / n;
      }
    }
    return loss / n;
  }

 private:
  int in_;
  int k_;
  std::vector<double> w_;
  std::vector<double> b_;
};

/// Central difference of f at x along coordinate i.
inline double central_difference(const std::function<double()>& f, double& x, double h) {
  const double orig = x;
  x = orig + h;
  const double fp = f();
  x = orig - h;
  const double fm = f();
  x = orig;
  return (fp - fm) / (2.0 * h);
}

inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("arnas_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// A valid genotype where every node takes its two nearest inputs with op `op`.
inline Genotype uniform_genotype(OpKind op) {
  Genotype g;
  for (CellRole r : kAllRoles)
    for (int node = 2; node < 6; ++node) {
      g.cell(r).push_back(SelectedEdge{node - 2, node, op});
      g.cell(r).push_back(SelectedEdge{node - 1, node, op});
    }
  return g;
}

// Independent restatement of the selection rule: a node keeps the two
// incoming edges whose strongest non-zero op weight is largest (ties: lower
// op index, then lower edge index); each kept edge uses that op.
inline Genotype brute_force_discretize(const ArchParams& alpha) {
  const CellTopology topo(4);
  Genotype g;
  for (CellRole r : kAllRoles) {
    for (int node = 2; node < 6; ++node) {
      std::vector<std::tuple<double, int, int>> scored;  // (-weight, op, edge)
      for (int from = 0; from < node; ++from) {
        const int e = topo.edge_index(from, node);
        std::vector<double> row(8);
        double z = 0.0;
        double m = -1e300;
        for (int k = 0; k < 8; ++k) m = std::max(m, alpha.at(r, e, k));
        for (int k = 0; k < 8; ++k) z += std::exp(alpha.at(r, e, k) - m);
        for (int k = 0; k < 8; ++k) row[k] = std::exp(alpha.at(r, e, k) - m) / z;
        int best = 1;
        for (int k = 1; k < 8; ++k)
          if (row[k] > row[best]) best = k;
        scored.emplace_back(-row[best], best, e);
      }
      std::sort(scored.begin(), scored.end());
      std::vector<std::pair<int, int>> top{{std::get<2>(scored[0]), std::get<1>(scored[0])},
                                           {std::get<2>(scored[1]), std::get<1>(scored[1])}};
      std::sort(top.begin(), top.end());
      for (auto [e, op] : top)
        g.cell(r).push_back(SelectedEdge{topo.edges()[e].from, node, static_cast<OpKind>(op)});
    }
  }
  return g;
}

// Scalar bilevel toy with closed-form hypergradient:
//   L_train(w, a) = p/2 w^2 - q a w
//   L_val(w, a)   = (w - r)^2 / 2 + s a^2
// w' = w - xi (p w - q a) and dL_val(w'(a), a)/da = 2 s a + xi q (w' - r).
class QuadraticToy : public UnrolledObjective {
 public:
  double w = 0.7, a = -0.4, p = 1.3, q = 0.9, r = 0.2, s = 0.35;
  int train_calls = 0;
  int val_calls = 0;

  std::vector<double> current_weights() const override { return {w}; }
  FlatGradients train_gradients(std::span<const double> ws) override {
    ++train_calls;
    const double x = ws[0];
    return {0.5 * p * x * x - q * a * x, {p * x - q * a}, {-q * x}};
  }
  FlatGradients val_gradients(std::span<const double> ws, LossKind kind) override {
    ++val_calls;
    const double x = ws[0];
    const double scale = kind == LossKind::kNatural ? 1.0 : 3.0;
    return {0.5 * (x - r) * (x - r) + s * a * a, {scale * (x - r)}, {scale * 2.0 * s * a}};
  }

  double unrolled(double xi) const { return w - xi * (p * w - q * a); }
  double hypergradient(double xi) const { return 2.0 * s * a + xi * q * (unrolled(xi) - r); }
};

}  // namespace arnas::testing
