#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "redbert/model.hpp"
#include "redbert/tokenizer.hpp"

namespace redbert {

using Matrix = std::vector<std::vector<double>>;  // row-major, rows = points

struct PcaResult {
  std::vector<double> mean;               // d
  Matrix components;                      // k x d, orthonormal rows
  std::vector<double> explained_variance; // k, descending (divisor n - 1)
  std::vector<double> explained_ratio;    // k, fraction of total variance
  Matrix coords;                          // n x k
};

// Top-k principal axes of the sample covariance. Each component's first
// coordinate with magnitude above 1e-12 is made positive. Throws DataError
// when n < k, d < k or rows differ in length.
PcaResult pca_project(const Matrix& x, std::size_t k = 2);

// mean + coords[row] * components
std::vector<double> pca_reconstruct(const PcaResult& pca, std::size_t row);

double euclidean(const std::vector<double>& a, const std::vector<double>& b);

struct TokenVectors {
  std::vector<std::string> words;
  Matrix vectors;  // one per word: mean of its piece states
};

// Contextual encoder states for each word of a single-segment sentence.
TokenVectors token_vectors(const Backbone& model, const Vocab& vocab, const std::string& sentence,
                           std::size_t max_len);

// Euclidean distance between two words' contextual vectors in the full
// hidden space (first occurrence of each word). Throws DataError naming a
// word that is not in the sentence.
double token_distance(const Backbone& model, const Vocab& vocab, const std::string& sentence,
                      const std::string& token_i, const std::string& token_j,
                      std::size_t max_len = kDefaultMaxLen);

struct ProjectionReport {
  std::string sentence;
  std::vector<std::string> words;
  std::string name_a = "original";
  std::string name_b = "retrained";
  std::size_t hidden_dim = 0;
  Matrix coords_a;  // words x 2, one PCA frame fitted on both models
  Matrix coords_b;
  Matrix distance_a;  // words x words, full hidden space
  Matrix distance_b;
  Matrix distance_2d_a;  // words x words, in the PCA plane
  Matrix distance_2d_b;
  std::vector<double> explained_ratio;
  Matrix components;
};

ProjectionReport projection_report(const std::string& sentence,
                                   const std::vector<std::string>& words, const Matrix& vectors_a,
                                   const Matrix& vectors_b);

ProjectionReport projection_report(const Backbone& model_a, const Backbone& model_b,
                                   const Vocab& vocab, const std::string& sentence,
                                   std::size_t max_len = kDefaultMaxLen);

// Writes the SVG scatter to svg_path and the coordinates to the same path
// with a .csv extension (returned). Throws IoError when either is unwritable.
std::filesystem::path emit_figure(const ProjectionReport& report,
                                  const std::filesystem::path& svg_path);

std::string render_svg(const ProjectionReport& report);
std::string render_csv(const ProjectionReport& report);

struct ProjectionRow {
  std::string token;
  std::string model;
  double x = 0;
  double y = 0;
  std::size_t dim_hidden = 0;
};

std::vector<ProjectionRow> read_projection_csv(const std::filesystem::path& path);

// Distance tables as CSV: model,space,token_i,token_j,distance
std::string render_distances(const ProjectionReport& report);

}  // namespace redbert
