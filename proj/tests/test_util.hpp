#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rlt/tensor.hpp"

namespace rlt::testing {

inline Tensor random_param(Shape s, Rng& rng, double stddev = 1.0) {
  return Tensor::parameter(s, gaussian(s, 0.0, stddev, rng).values());
}

// Scalar loss evaluated without recording.
inline double eval_loss(const std::function<Tensor()>& f) {
  NoGradGuard ng;
  return f().item();
}

inline double central_difference(const std::function<Tensor()>& f, Tensor& p, std::size_t i,
                                 double h = 1e-5) {
  auto d = p.mutable_data();
  const double old = d[i];
  d[i] = old + h;
  const double up = eval_loss(f);
  d[i] = old - h;
  const double down = eval_loss(f);
  d[i] = old;
  return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Max relative error over all entries of every parameter.
inline double max_grad_error(const std::function<Tensor()>& f, std::vector<Tensor> params,
                             double h = 1e-5) {
  for (auto& p : params) p.node()->grad.clear();
  {
    Graph g;
    backward(f());
  }
  double worst = 0.0;
  for (auto& p : params) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double a = analytic.empty() ? 0.0 : analytic[i];
      worst = std::max(worst, rel_err(a, central_difference(f, p, i, h)));
    }
  }
  return worst;
}

// Fixed random weights turn any tensor into a scalar with a generic gradient.
inline Tensor weighted_sum(const Tensor& x, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(x, gaussian(x.shape(), 0.0, 1.0, rng)));
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.values() == b.values();
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path = std::filesystem::temp_directory_path() / ("rlt_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& s) const { return path / s; }
};

}  // namespace rlt::testing
