#pragma once

#include <array>
#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "rlt/denoiser.hpp"
#include "rlt/lora.hpp"

namespace rlt {

// Row-major dense matrix used by the linear-algebra helpers.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  static Matrix from_tensor(const Tensor& t);

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

// Thin SVD: U [m x k], S [k], V [n x k], k = min(m, n), S descending.
// Each column of U has its largest-magnitude entry positive.
struct SvdResult {
  Matrix U;
  std::vector<double> S;
  Matrix V;
};

// One-sided Jacobi: plane rotations that diagonalize the Gram matrix W^T W,
// applied to the columns of W so small singular values keep full precision.
// Throws ValidationError on non-finite input.
SvdResult svd(const Matrix& w);
SvdResult svd(const Tensor& w);

// (1/r) * ||U1[:, :r]^T U2[:, :r]||_F^2.
double subspace_similarity(const Matrix& w1, const Matrix& w2, std::size_t r);
double subspace_similarity(const Tensor& w1, const Tensor& w2, std::size_t r);

enum class Proj { q, k, v };

// grid[i][j] = similarity between projections i and j (q, k, v order).
using SimilarityGrid = std::array<std::array<double, 3>, 3>;

struct SimilarityRow {
  std::string layer;  // layer index, or "mean" for the all-layer average
  std::string branch;
  std::string pair;   // "QK", "QV", "KV"
  std::size_t rank = 0;
  double similarity = 0.0;
};

struct SimilarityReport {
  std::vector<std::array<SimilarityGrid, 2>> grids;  // [layer][branch: text, vision]
  std::vector<SimilarityRow> rows;
};

// Projection weight as seen by inference: base plus relation/FFN adapter deltas
// when a triplet is given (subject adapters are excluded).
Tensor effective_weight(const ModelWeights& base, const TripletConfig* triplet, std::size_t layer,
                        Branch branch, Target target);

SimilarityReport qkv_similarity_report(const ModelWeights& base, const TripletConfig* triplet,
                                       std::size_t r);

inline constexpr const char* kSimilarityCsvHeader = "layer,branch,pair,rank,similarity";
inline constexpr const char* kMapCsvHeader = "frame,row,col,value";

void write_similarity_csv(std::ostream& os, const SimilarityReport& report);

// Mean |x| over layers, channels and frames of the vision Q/K/V activations; [h, w].
Tensor feature_map(const AttentionRecord& record, Proj which);

// Attention between text token `token_index` and every vision token, averaged
// over layers, heads and both directions; [f, h, w].
Tensor attention_map(const AttentionRecord& record, std::size_t token_index);
// First position of `token_id` in the recorded prompt; LookupError when absent.
std::size_t prompt_position(const AttentionRecord& record, int token_id);

// [h, w] maps are written as frame 0; [f, h, w] maps row by row.
void write_map_csv(std::ostream& os, const Tensor& map);

// round(60/64 * T): the feature-visualization timestep scaled to T steps.
std::size_t analysis_timestep(std::size_t timesteps);

}  // namespace rlt
