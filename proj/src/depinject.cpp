#include "redbert/depinject.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "redbert/error.hpp"

namespace redbert {

DepEmbeddingTable DepEmbeddingTable::init_random(std::size_t vocab_size, std::size_t dep_dim,
                                                 Rng& rng) {
  DepEmbeddingTable t;
  t.weights = truncated_normal({vocab_size, dep_dim}, rng);
  auto w = t.weights.mutable_data();
  std::fill_n(w.begin(), dep_dim, real(0));
  return t;
}

void DepEmbeddingTable::set_fine_tune(bool flag) {
  fine_tune = flag;
  weights.set_requires_grad(flag);
}

DepEmbeddingTable load_dep_embeddings(const std::filesystem::path& path, const Vocab& vocab,
                                      std::size_t dep_dim, std::uint64_t seed,
                                      DepLoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dependency embedding file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("dependency embedding file is empty");
  std::size_t count = 0, dim = 0;
  {
    std::istringstream header(line);
    if (!(header >> count >> dim)) {
      throw DataError("dependency embedding header must be 'count dim', got '" + line + "'");
    }
  }
  if (dim != dep_dim) {
    throw ConfigError("dependency embeddings have dimension " + std::to_string(dim) +
                      ", model expects " + std::to_string(dep_dim));
  }
  Rng rng(seed);
  DepEmbeddingTable table = DepEmbeddingTable::init_random(vocab.size(), dep_dim, rng);
  auto w = table.weights.mutable_data();
  DepLoadStats s;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ++s.file_rows;
    const char* p = line.c_str();
    while (*p == ' ') ++p;
    const char* start = p;
    while (*p && *p != ' ') ++p;
    const std::string token(start, p);
    std::vector<real> values;
    values.reserve(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) {
        throw DataError("line " + std::to_string(line_no) + " ('" + token + "') has fewer than " +
                        std::to_string(dim) + " values");
      }
      values.push_back(static_cast<real>(v));
      p = end;
    }
    const auto id = vocab.find(token);
    if (!id || *id == vocab.pad_id()) continue;
    std::copy(values.begin(), values.end(), w.begin() + static_cast<std::ptrdiff_t>(*id) * dim);
    ++s.matched;
  }
  if (s.file_rows != count) {
    throw DataError("dependency embedding header announces " + std::to_string(count) +
                    " rows, file has " + std::to_string(s.file_rows));
  }
  if (stats) *stats = s;
  return table;
}

void write_dep_embeddings(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dependency embedding file " + path.string());
  const std::size_t dim = rows.empty() ? 0 : rows.front().second.size();
  out << rows.size() << ' ' << dim << '\n';
  char buf[32];
  for (const auto& [token, vec] : rows) {
    out << token;
    for (double v : vec) {
      std::snprintf(buf, sizeof buf, " %.6f", v);
      out << buf;
    }
    out << '\n';
  }
}

Tensor dep_lookup(std::span<const std::int32_t> ids, const DepEmbeddingTable& table) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      throw DataError("token id " + std::to_string(ids[i]) + " at position " +
                      std::to_string(i) + " is out of range for a dependency table of " +
                      std::to_string(table.rows()) + " rows");
    }
  }
  return embedding_lookup(table.weights, ids, /*padding_id=*/0);
}

SideTransformer SideTransformer::init(std::size_t dep_dim, std::size_t heads,
                                      std::size_t positions, Rng& rng) {
  SideTransformer s;
  s.position_embeddings = truncated_normal({positions, dep_dim}, rng);
  s.block = EncoderBlock::init(dep_dim, heads, 4 * dep_dim, rng);
  return s;
}

ParamList SideTransformer::params() const {
  ParamList out{{"position", position_embeddings}};
  append_params(out, "block.", block.params());
  return out;
}

Tensor side_transform(const Tensor& d, const SideTransformer& side, std::size_t batch,
                      std::size_t seq, std::span<const std::uint8_t> attention_mask,
                      real dropout_p, Mode mode, Rng* rng) {
  const std::size_t dim = side.position_embeddings.dim(1);
  if (d.rank() != 2 || d.dim(0) != batch * seq || d.dim(1) != dim) {
    throw ShapeError("side transformer expects [" + std::to_string(batch * seq) + "," +
                     std::to_string(dim) + "], got " + shape_string(d.shape()));
  }
  if (attention_mask.size() != batch * seq) {
    throw ShapeError("side transformer mask has " + std::to_string(attention_mask.size()) +
                     " entries for " + std::to_string(batch * seq) + " rows");
  }
  if (seq > side.position_embeddings.dim(0)) {
    throw DataError("sequence length " + std::to_string(seq) +
                    " exceeds the side transformer position table");
  }
  std::vector<std::int32_t> positions(batch * seq);
  for (std::size_t r = 0; r < positions.size(); ++r) {
    positions[r] = static_cast<std::int32_t>(r % seq);
  }
  Tensor x = add(d, embedding_lookup(side.position_embeddings, positions));
  return side.block.forward(x, batch, seq, attention_mask, dropout_p, mode, rng);
}

Tensor inject(const Tensor& t, const Tensor& h) {
  if (t.rank() != 2 || h.rank() != 2 || t.dim(0) != h.dim(0)) {
    throw ShapeError("inject: dependency states " + shape_string(t.shape()) +
                     " and encoder states " + shape_string(h.shape()) +
                     " must have equal sequence lengths");
  }
  return concat({t, h});
}

DepInjector DepInjector::init(const ModelConfig& config, Rng& rng) {
  DepInjector inj;
  inj.table = DepEmbeddingTable::init_random(config.vocab_size, config.dep_dim, rng);
  inj.side = SideTransformer::init(config.dep_dim, config.dep_heads, config.position_rows(), rng);
  return inj;
}

ParamList DepInjector::params() const {
  ParamList out;
  if (table.fine_tune) out.push_back({"table", table.weights});
  append_params(out, "side.", side.params());
  return out;
}

ParamList DepInjector::all_params() const {
  ParamList out{{"table", table.weights}};
  append_params(out, "side.", side.params());
  return out;
}

Tensor DepInjector::forward(const SequenceBatch& batch, const Tensor& h, real dropout_p,
                            Mode mode, Rng* rng) const {
  Tensor d = dep_lookup(batch.ids, table);
  Tensor t = side_transform(d, side, batch.batch, batch.seq, batch.attention_mask, dropout_p,
                            mode, rng);
  return inject(t, h);
}

namespace {

void check_dep_width(const ClassifierHead& head, std::size_t hidden, std::size_t dep_dim) {
  if (head.proj.in_features() != hidden + dep_dim) {
    throw ShapeError("dependency head expects input width " + std::to_string(hidden + dep_dim) +
                     " (hidden " + std::to_string(hidden) + " + dep " + std::to_string(dep_dim) +
                     "), weight has " + std::to_string(head.proj.in_features()) + " rows");
  }
}

}  // namespace

HeadOutput dep_classify(const Tensor& c_cls, std::span<const std::int64_t> labels,
                        const ClassifierHead& head, std::size_t hidden, std::size_t dep_dim) {
  check_dep_width(head, hidden, dep_dim);
  return classify(c_cls, labels, head);
}

HeadOutput dep_tag(const Tensor& c, std::span<const std::int64_t> tags, const TaggerHead& head,
                   std::size_t hidden, std::size_t dep_dim) {
  check_dep_width(head.head, hidden, dep_dim);
  return tag(c, tags, head);
}

void dep_param_shapes(const ModelConfig& config, std::vector<ParamShape>& out,
                      const std::string& prefix) {
  out.push_back({prefix + "table", {config.vocab_size, config.dep_dim}});
  out.push_back({prefix + "side.position", {config.position_rows(), config.dep_dim}});
  EncoderBlock::shapes(out, prefix + "side.block.", config.dep_dim, 4 * config.dep_dim);
}

}  // namespace redbert
