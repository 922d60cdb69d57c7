#include "redbert/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>

#include "redbert/encoder.hpp"
#include "redbert/error.hpp"

namespace redbert {

PcaResult pca_project(const Matrix& x, std::size_t k) {
  const std::size_t n = x.size();
  if (n < k || n < 2) {
    throw DataError("PCA needs at least max(2, k) points, got " + std::to_string(n));
  }
  const std::size_t d = x[0].size();
  if (d < k) throw DataError("PCA with k=" + std::to_string(k) + " needs d >= k, got " +
                             std::to_string(d));
  Eigen::MatrixXd m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i].size() != d) throw DataError("PCA rows differ in length at row " + std::to_string(i));
    for (std::size_t j = 0; j < d; ++j) m(i, j) = x[i][j];
  }
  const Eigen::RowVectorXd mean = m.colwise().mean();
  m.rowwise() -= mean;
  const Eigen::MatrixXd cov = (m.transpose() * m) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("covariance eigendecomposition failed");
  const Eigen::VectorXd values = solver.eigenvalues();  // ascending
  const Eigen::MatrixXd vectors = solver.eigenvectors();
  const double total = std::max(0.0, cov.trace());

  PcaResult r;
  r.mean.assign(mean.data(), mean.data() + d);
  for (std::size_t c = 0; c < k; ++c) {
    const Eigen::Index col = static_cast<Eigen::Index>(d - 1 - c);
    Eigen::VectorXd v = vectors.col(col);
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      if (std::abs(v(j)) > 1e-12) {
        if (v(j) < 0) v = -v;
        break;
      }
    }
    r.components.emplace_back(v.data(), v.data() + d);
    const double var = std::max(0.0, values(col));
    r.explained_variance.push_back(var);
    r.explained_ratio.push_back(total > 0 ? var / total : 0.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(k);
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += m(i, j) * r.components[c][j];
      row[c] = s;
    }
    r.coords.push_back(std::move(row));
  }
  return r;
}

std::vector<double> pca_reconstruct(const PcaResult& pca, std::size_t row) {
  std::vector<double> out = pca.mean;
  for (std::size_t c = 0; c < pca.components.size(); ++c) {
    for (std::size_t j = 0; j < out.size(); ++j) {
      out[j] += pca.coords.at(row)[c] * pca.components[c][j];
    }
  }
  return out;
}

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("distance between vectors of different length");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

TokenVectors token_vectors(const Backbone& model, const Vocab& vocab, const std::string& sentence,
                           std::size_t max_len) {
  TokenVectors tv;
  tv.words = basic_split(sentence);
  if (tv.words.empty()) throw DataError("sentence has no tokens");
  const TokenizedPair pair = encode_words(tv.words, {}, false, vocab, max_len);
  NoGradGuard no_grad;
  const EncoderOutput out = forward(make_batch(std::span(&pair, 1)), model.encoder, Mode::kEval,
                                    nullptr);
  const std::size_t h = out.width();
  const auto states = out.states.data();
  tv.vectors.assign(tv.words.size(), std::vector<double>(h, 0.0));
  std::vector<std::size_t> pieces(tv.words.size(), 0);
  for (std::size_t i = 0; i < pair.length(); ++i) {
    const std::int32_t w = pair.word_index[i];
    if (w < 0) continue;
    for (std::size_t j = 0; j < h; ++j) tv.vectors[w][j] += states[i * h + j];
    ++pieces[w];
  }
  std::size_t kept = tv.words.size();
  for (std::size_t w = 0; w < tv.words.size(); ++w) {
    if (!pieces[w]) {
      kept = w;  // truncated away
      break;
    }
    for (auto& v : tv.vectors[w]) v /= static_cast<double>(pieces[w]);
  }
  tv.words.resize(kept);
  tv.vectors.resize(kept);
  return tv;
}

double token_distance(const Backbone& model, const Vocab& vocab, const std::string& sentence,
                      const std::string& token_i, const std::string& token_j,
                      std::size_t max_len) {
  const TokenVectors tv = token_vectors(model, vocab, sentence, max_len);
  auto locate = [&](const std::string& token) {
    auto it = std::find(tv.words.begin(), tv.words.end(), token);
    if (it == tv.words.end()) {
      throw DataError("token '" + token + "' not found in sentence '" + sentence + "'");
    }
    return static_cast<std::size_t>(it - tv.words.begin());
  };
  return euclidean(tv.vectors[locate(token_i)], tv.vectors[locate(token_j)]);
}

namespace {

Matrix pairwise(const Matrix& v) {
  Matrix d(v.size(), std::vector<double>(v.size(), 0.0));
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = i + 1; j < v.size(); ++j) d[i][j] = d[j][i] = euclidean(v[i], v[j]);
  }
  return d;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

ProjectionReport projection_report(const std::string& sentence,
                                   const std::vector<std::string>& words, const Matrix& vectors_a,
                                   const Matrix& vectors_b) {
  if (vectors_a.size() != words.size() || vectors_b.size() != words.size()) {
    throw DataError("projection needs one vector per word for both models");
  }
  if (words.empty()) throw DataError("projection needs at least one word");
  ProjectionReport r;
  r.sentence = sentence;
  r.words = words;
  r.hidden_dim = vectors_a[0].size();
  if (vectors_b[0].size() != r.hidden_dim) {
    throw ConfigError("models have different hidden sizes (" + std::to_string(r.hidden_dim) +
                      " vs " + std::to_string(vectors_b[0].size()) + ")");
  }
  Matrix joint = vectors_a;
  joint.insert(joint.end(), vectors_b.begin(), vectors_b.end());
  const PcaResult pca = pca_project(joint, 2);
  r.coords_a.assign(pca.coords.begin(), pca.coords.begin() + words.size());
  r.coords_b.assign(pca.coords.begin() + words.size(), pca.coords.end());
  r.distance_a = pairwise(vectors_a);
  r.distance_b = pairwise(vectors_b);
  r.distance_2d_a = pairwise(r.coords_a);
  r.distance_2d_b = pairwise(r.coords_b);
  r.explained_ratio = pca.explained_ratio;
  r.components = pca.components;
  return r;
}

ProjectionReport projection_report(const Backbone& model_a, const Backbone& model_b,
                                   const Vocab& vocab, const std::string& sentence,
                                   std::size_t max_len) {
  const TokenVectors a = token_vectors(model_a, vocab, sentence, max_len);
  const TokenVectors b = token_vectors(model_b, vocab, sentence, max_len);
  if (a.words != b.words) throw DataError("models kept different words of the sentence");
  return projection_report(sentence, a.words, a.vectors, b.vectors);
}

std::string render_svg(const ProjectionReport& r) {
  constexpr double kWidth = 640, kHeight = 480, kMargin = 60;
  double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0;
  bool first = true;
  for (const Matrix* m : {&r.coords_a, &r.coords_b}) {
    for (const auto& p : *m) {
      if (first) {
        lo_x = hi_x = p[0];
        lo_y = hi_y = p[1];
        first = false;
      }
      lo_x = std::min(lo_x, p[0]);
      hi_x = std::max(hi_x, p[0]);
      lo_y = std::min(lo_y, p[1]);
      hi_y = std::max(hi_y, p[1]);
    }
  }
  const double span_x = hi_x - lo_x > 0 ? hi_x - lo_x : 1.0;
  const double span_y = hi_y - lo_y > 0 ? hi_y - lo_y : 1.0;
  auto px = [&](double x) { return kMargin + (x - lo_x) / span_x * (kWidth - 2 * kMargin); };
  auto py = [&](double y) {
    return kHeight - kMargin - (y - lo_y) / span_y * (kHeight - 2 * kMargin);
  };

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kWidth
    << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kMargin << "\" y=\"30\" font-family=\"sans-serif\" font-size=\"14\">"
    << xml_escape(r.sentence) << "</text>\n";
  auto series = [&](const Matrix& coords, const std::string& name, const char* color) {
    s << "<g class=\"" << xml_escape(name) << "\" fill=\"" << color << "\">\n";
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const std::string x = fmt("%.3f", px(coords[i][0]));
      const std::string y = fmt("%.3f", py(coords[i][1]));
      s << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"4\"/>"
        << "<text x=\"" << x << "\" y=\"" << y << "\" dx=\"6\" dy=\"-6\" font-family=\"sans-serif\""
        << " font-size=\"12\">" << xml_escape(r.words[i]) << "</text>\n";
    }
    s << "</g>\n";
  };
  series(r.coords_a, r.name_a, "red");
  series(r.coords_b, r.name_b, "blue");
  const double ly = kHeight - 20;
  s << "<g font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<circle cx=\"" << kMargin << "\" cy=\"" << ly - 4 << "\" r=\"4\" fill=\"red\"/>"
    << "<text x=\"" << kMargin + 10 << "\" y=\"" << ly << "\">" << xml_escape(r.name_a)
    << "</text>\n"
    << "<circle cx=\"" << kMargin + 160 << "\" cy=\"" << ly - 4
    << "\" r=\"4\" fill=\"blue\"/><text x=\"" << kMargin + 170 << "\" y=\"" << ly << "\">"
    << xml_escape(r.name_b) << "</text>\n"
    << "</g>\n</svg>\n";
  return s.str();
}

std::string render_csv(const ProjectionReport& r) {
  std::string out = "token,model,x,y,dim_hidden\n";
  auto rows = [&](const Matrix& coords, const std::string& name) {
    for (std::size_t i = 0; i < coords.size(); ++i) {
      out += csv_field(r.words[i]) + ',' + csv_field(name) + ',' + fmt("%.17g", coords[i][0]) +
             ',' + fmt("%.17g", coords[i][1]) + ',' + std::to_string(r.hidden_dim) + '\n';
    }
  };
  rows(r.coords_a, r.name_a);
  rows(r.coords_b, r.name_b);
  return out;
}

std::string render_distances(const ProjectionReport& r) {
  std::string out = "model,space,token_i,token_j,distance\n";
  auto table = [&](const Matrix& d, const std::string& name, const char* space) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      for (std::size_t j = i + 1; j < d.size(); ++j) {
        out += csv_field(name) + ',' + space + ',' + csv_field(r.words[i]) + ',' +
               csv_field(r.words[j]) + ',' + fmt("%.17g", d[i][j]) + '\n';
      }
    }
  };
  table(r.distance_a, r.name_a, "hidden");
  table(r.distance_b, r.name_b, "hidden");
  table(r.distance_2d_a, r.name_a, "pca2d");
  table(r.distance_2d_b, r.name_b, "pca2d");
  return out;
}

std::filesystem::path emit_figure(const ProjectionReport& report,
                                  const std::filesystem::path& svg_path) {
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
    if (!out) throw IoError("failed writing " + p.string());
  };
  std::filesystem::path csv = svg_path;
  csv.replace_extension(".csv");
  write(svg_path, render_svg(report));
  write(csv, render_csv(report));
  return csv;
}

std::vector<ProjectionRow> read_projection_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "token,model,x,y,dim_hidden") {
    throw DataError(path.string() + " lacks the projection CSV header");
  }
  std::vector<ProjectionRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = parse_csv_line(line);
    if (f.size() != 5) throw DataError("projection CSV row has " + std::to_string(f.size()) +
                                       " fields");
    rows.push_back({f[0], f[1], std::stod(f[2]), std::stod(f[3]), std::stoul(f[4])});
  }
  return rows;
}

}  // namespace redbert
