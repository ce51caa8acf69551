#include "rlt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rlt/errors.hpp"

namespace rlt {

Matrix Matrix::from_tensor(const Tensor& t) {
  if (t.ndim() != 2) throw DimensionError("expected a 2-D tensor, got " + shape_str(t.shape()));
  Matrix m(t.dim(0), t.dim(1));
  m.data = t.values();
  return m;
}

namespace {

Matrix transposed(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

// Requires rows >= cols.
SvdResult svd_tall(const Matrix& w) {
  const std::size_t m = w.rows, n = w.cols;
  // Column-major working copies make the column rotations contiguous.
  std::vector<std::vector<double>> a(n, std::vector<double>(m)), v(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) a[j][i] = w(i, j);
    v[j][j] = 1.0;
  }
  constexpr double tol = 1e-15;
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0, beta = 0, gamma = 0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += a[p][i] * a[p][i];
          beta += a[q][i] * a[q][i];
          gamma += a[p][i] * a[q][i];
        }
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t), s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = a[p][i], aq = a[q][i];
          a[p][i] = c * ap - s * aq;
          a[q][i] = s * ap + c * aq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v[p][i], vq = v[q][i];
          v[p][i] = c * vp - s * vq;
          v[q][i] = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0;
    for (double x : a[j]) s += x * x;
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return sigma[x] > sigma[y]; });

  SvdResult r{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  const double smax = n ? sigma[order[0]] : 0.0;
  const double cutoff = smax * static_cast<double>(m) * std::numeric_limits<double>::epsilon();
  std::vector<std::vector<double>> ucols;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    r.S[k] = sigma[j];
    for (std::size_t i = 0; i < n; ++i) r.V(i, k) = v[j][i];
    std::vector<double> u(m, 0.0);
    if (sigma[j] > cutoff && sigma[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) u[i] = a[j][i] / sigma[j];
    } else {
      // Null direction: complete the basis with the first standard vector that
      // survives Gram-Schmidt against the columns found so far.
      for (std::size_t e = 0; e < m; ++e) {
        std::fill(u.begin(), u.end(), 0.0);
        u[e] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
          for (const auto& prev : ucols) {
            const double d = std::inner_product(u.begin(), u.end(), prev.begin(), 0.0);
            for (std::size_t i = 0; i < m; ++i) u[i] -= d * prev[i];
          }
        }
        const double norm = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
        if (norm > 0.5) {
          for (double& x : u) x /= norm;
          break;
        }
      }
    }
    ucols.push_back(u);
    for (std::size_t i = 0; i < m; ++i) r.U(i, k) = u[i];
  }

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < m; ++i)
      if (std::abs(r.U(i, k)) > std::abs(r.U(best, k))) best = i;
    if (r.U(best, k) < 0.0) {
      for (std::size_t i = 0; i < m; ++i) r.U(i, k) = -r.U(i, k);
      for (std::size_t i = 0; i < n; ++i) r.V(i, k) = -r.V(i, k);
    }
  }
  return r;
}

void check_finite(const Matrix& w) {
  for (double x : w.data)
    if (!std::isfinite(x)) throw ValidationError("svd: input has a non-finite entry");
}

std::size_t numerical_rank(const SvdResult& r, std::size_t m, std::size_t n) {
  if (r.S.empty() || r.S[0] == 0.0) return 0;
  const double cutoff = r.S[0] * static_cast<double>(std::max(m, n)) * 1e-12;
  return static_cast<std::size_t>(std::count_if(r.S.begin(), r.S.end(), [&](double s) { return s > cutoff; }));
}

}  // namespace

SvdResult svd(const Matrix& w) {
  if (w.rows == 0 || w.cols == 0) throw ValidationError("svd: empty matrix");
  check_finite(w);
  if (w.rows >= w.cols) return svd_tall(w);
  SvdResult t = svd_tall(transposed(w));
  SvdResult r{std::move(t.V), std::move(t.S), std::move(t.U)};
  // Re-apply the sign convention to the new left vectors.
  for (std::size_t k = 0; k < r.S.size(); ++k) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < r.U.rows; ++i)
      if (std::abs(r.U(i, k)) > std::abs(r.U(best, k))) best = i;
    if (r.U(best, k) < 0.0) {
      for (std::size_t i = 0; i < r.U.rows; ++i) r.U(i, k) = -r.U(i, k);
      for (std::size_t i = 0; i < r.V.rows; ++i) r.V(i, k) = -r.V(i, k);
    }
  }
  return r;
}

SvdResult svd(const Tensor& w) { return svd(Matrix::from_tensor(w)); }

double subspace_similarity(const Matrix& w1, const Matrix& w2, std::size_t r) {
  if (w1.rows != w2.rows) {
    throw DimensionError("subspace_similarity: row dimensions differ (" + std::to_string(w1.rows) +
                         " vs " + std::to_string(w2.rows) + ")");
  }
  if (r < 1) throw ConfigError("subspace_similarity: rank must be >= 1");
  const SvdResult a = svd(w1), b = svd(w2);
  const std::size_t ra = numerical_rank(a, w1.rows, w1.cols), rb = numerical_rank(b, w2.rows, w2.cols);
  if (r > std::min(ra, rb)) {
    throw ConfigError("subspace_similarity: rank " + std::to_string(r) + " exceeds matrix rank " +
                      std::to_string(std::min(ra, rb)));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < r; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < w1.rows; ++k) dot += a.U(k, i) * b.U(k, j);
      total += dot * dot;
    }
  return total / static_cast<double>(r);
}

double subspace_similarity(const Tensor& w1, const Tensor& w2, std::size_t r) {
  return subspace_similarity(Matrix::from_tensor(w1), Matrix::from_tensor(w2), r);
}

Tensor effective_weight(const ModelWeights& base, const TripletConfig* triplet, std::size_t layer,
                        Branch branch, Target target) {
  if (layer >= base.layers.size()) throw LookupError("layer " + std::to_string(layer) + " out of range");
  const Tensor& w = base.layers[layer].branch(branch).get(target);
  if (!triplet) return w;
  std::vector<double> out = w.values();
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  const LoraBinding b{layer, target, branch};
  for (SetKind k : {SetKind::relation, SetKind::ffn}) {
    const auto& set = triplet->set(k);
    auto it = set.find(b);
    if (it == set.end()) continue;
    const LoraAdapter& a = it->second;
    const auto& up = a.up.values();
    const auto& down = a.down.values();
    const std::size_t rank = a.rank();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        double s = 0.0;
        for (std::size_t q = 0; q < rank; ++q) s += up[i * rank + q] * down[q * cols + j];
        out[i * cols + j] += a.scale * s;
      }
  }
  return Tensor::from(w.shape(), std::move(out));
}

SimilarityReport qkv_similarity_report(const ModelWeights& base, const TripletConfig* triplet,
                                       std::size_t r) {
  SimilarityReport rep;
  const std::array<Target, 3> proj = {Target::q, Target::k, Target::v};
  const std::array<Branch, 2> branches = {Branch::text, Branch::vision};
  const std::array<std::pair<int, int>, 3> pairs = {{{0, 1}, {0, 2}, {1, 2}}};
  const std::array<const char*, 3> pair_names = {"QK", "QV", "KV"};
  const std::size_t layers = base.layers.size();
  rep.grids.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t bi = 0; bi < 2; ++bi) {
      std::array<Matrix, 3> w;
      for (std::size_t p = 0; p < 3; ++p) {
        w[p] = Matrix::from_tensor(effective_weight(base, triplet, l, branches[bi], proj[p]));
      }
      SimilarityGrid& g = rep.grids[l][bi];
      for (std::size_t p = 0; p < 3; ++p) g[p][p] = subspace_similarity(w[p], w[p], r);
      for (std::size_t pi = 0; pi < 3; ++pi) {
        const auto [i, j] = pairs[pi];
        const double s = subspace_similarity(w[i], w[j], r);
        g[i][j] = g[j][i] = s;
        rep.rows.push_back({std::to_string(l), std::string(to_string(branches[bi])), pair_names[pi], r, s});
      }
    }
  }
  for (std::size_t bi = 0; bi < 2; ++bi) {
    for (std::size_t pi = 0; pi < 3; ++pi) {
      const auto [i, j] = pairs[pi];
      double mean = 0.0;
      for (std::size_t l = 0; l < layers; ++l) mean += rep.grids[l][bi][i][j];
      mean /= static_cast<double>(std::max<std::size_t>(layers, 1));
      rep.rows.push_back({"mean", std::string(to_string(branches[bi])), pair_names[pi], r, mean});
    }
  }
  return rep;
}

void write_similarity_csv(std::ostream& os, const SimilarityReport& report) {
  os << kSimilarityCsvHeader << '\n';
  os.precision(17);
  for (const auto& row : report.rows) {
    os << row.layer << ',' << row.branch << ',' << row.pair << ',' << row.rank << ',' << row.similarity
       << '\n';
  }
}

Tensor feature_map(const AttentionRecord& record, Proj which) {
  if (record.layers.empty() || record.vision_tokens() == 0) {
    throw ContractError("feature_map: empty attention record");
  }
  const std::size_t f = record.frames, h = record.height, w = record.width;
  std::vector<double> acc(h * w, 0.0);
  std::size_t channels = 0;
  for (const auto& layer : record.layers) {
    const Tensor& x = which == Proj::q ? layer.q : which == Proj::k ? layer.k : layer.v;
    if (x.ndim() != 2 || x.dim(0) != f * h * w) {
      throw ContractError("feature_map: record activations are not vision-token only");
    }
    channels = x.dim(1);
    const auto& data = x.values();
    for (std::size_t tok = 0; tok < f * h * w; ++tok) {
      double s = 0.0;
      for (std::size_t c = 0; c < channels; ++c) s += std::abs(data[tok * channels + c]);
      acc[tok % (h * w)] += s;
    }
  }
  const double denom = static_cast<double>(record.layers.size() * f * channels);
  for (double& a : acc) a /= denom;
  return Tensor::from({h, w}, std::move(acc));
}

std::size_t prompt_position(const AttentionRecord& record, int token_id) {
  for (std::size_t i = 0; i < record.prompt.size(); ++i)
    if (record.prompt[i] == token_id) return i;
  throw LookupError("token id " + std::to_string(token_id) + " is not in the recorded prompt");
}

Tensor attention_map(const AttentionRecord& record, std::size_t token_index) {
  if (record.layers.empty()) throw ContractError("attention_map: empty attention record");
  if (token_index >= record.text_tokens) {
    throw LookupError("attention_map: text token index " + std::to_string(token_index) +
                      " outside prompt of length " + std::to_string(record.text_tokens));
  }
  const std::size_t nt = record.text_tokens, nv = record.vision_tokens(), n = nt + nv;
  std::vector<double> acc(nv, 0.0);
  std::size_t maps = 0;
  for (const auto& layer : record.layers) {
    for (const Tensor& a : layer.attention) {
      if (a.shape() != Shape{n, n}) throw ContractError("attention_map: attention has wrong shape");
      const auto& d = a.values();
      for (std::size_t v = 0; v < nv; ++v) {
        acc[v] += 0.5 * (d[(nt + v) * n + token_index] + d[token_index * n + nt + v]);
      }
      ++maps;
    }
  }
  for (double& x : acc) x /= static_cast<double>(maps);
  return Tensor::from({record.frames, record.height, record.width}, std::move(acc));
}

void write_map_csv(std::ostream& os, const Tensor& map) {
  os << kMapCsvHeader << '\n';
  os.precision(17);
  std::size_t f = 1, h = 0, w = 0;
  if (map.ndim() == 2) {
    h = map.dim(0);
    w = map.dim(1);
  } else if (map.ndim() == 3) {
    f = map.dim(0);
    h = map.dim(1);
    w = map.dim(2);
  } else {
    throw DimensionError("write_map_csv: expected [h, w] or [f, h, w], got " + shape_str(map.shape()));
  }
  const auto& d = map.values();
  for (std::size_t k = 0; k < f; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) os << k << ',' << i << ',' << j << ',' << d[(k * h + i) * w + j] << '\n';
}

std::size_t analysis_timestep(std::size_t timesteps) {
  const auto t = static_cast<std::size_t>(std::lround(60.0 / 64.0 * static_cast<double>(timesteps)));
  return std::min(t, timesteps - 1);
}

}  // namespace rlt
