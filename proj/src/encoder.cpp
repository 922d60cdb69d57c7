#include "redbert/encoder.hpp"

#include <charconv>

#include "redbert/error.hpp"

namespace redbert {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(hidden_size, "hidden_size");
  positive(num_heads, "num_heads");
  positive(ff_size, "ff_size");
  positive(vocab_size, "vocab_size");
  positive(dep_dim, "dep_dim");
  positive(dep_heads, "dep_heads");
  positive(type_vocab_size, "type_vocab_size");
  if (hidden_size % num_heads != 0) {
    throw ConfigError("hidden_size " + std::to_string(hidden_size) +
                      " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (dep_dim % dep_heads != 0) {
    throw ConfigError("dep_dim " + std::to_string(dep_dim) +
                      " is not divisible by dep_heads " + std::to_string(dep_heads));
  }
  if (max_len < 3) throw ConfigError("max_len must be at least 3");
  if (position_rows() < max_len) {
    throw ConfigError("max_positions must be at least max_len");
  }
  if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0, 1)");
}

ModelConfig ModelConfig::full_size(std::size_t layers) {
  ModelConfig c;
  c.num_layers = layers;
  c.hidden_size = 768;
  c.num_heads = 12;
  c.ff_size = 3072;
  c.vocab_size = 30522;
  c.max_len = 128;
  c.max_positions = 512;
  return c;
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  char dbuf[32];
  std::to_chars_result r = std::to_chars(dbuf, dbuf + sizeof dbuf, dropout);
  return {
      {"num_layers", std::to_string(num_layers)},
      {"hidden_size", std::to_string(hidden_size)},
      {"num_heads", std::to_string(num_heads)},
      {"ff_size", std::to_string(ff_size)},
      {"vocab_size", std::to_string(vocab_size)},
      {"max_len", std::to_string(max_len)},
      {"max_positions", std::to_string(max_positions)},
      {"dropout", std::string(dbuf, r.ptr)},
      {"dep_dim", std::to_string(dep_dim)},
      {"dep_heads", std::to_string(dep_heads)},
      {"use_segment_embeddings", use_segment_embeddings ? "1" : "0"},
      {"type_vocab_size", std::to_string(type_vocab_size)},
  };
}

namespace {

const std::string& require_key(const std::map<std::string, std::string>& m,
                               const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw ConfigError("model config is missing key '" + key + "'");
  return it->second;
}

std::size_t parse_size(const std::string& s, const std::string& key) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "' is not an integer: '" + s + "'");
  }
  return v;
}

}  // namespace

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& m) {
  ModelConfig c;
  auto size = [&](const std::string& key) { return parse_size(require_key(m, key), key); };
  c.num_layers = size("num_layers");
  c.hidden_size = size("hidden_size");
  c.num_heads = size("num_heads");
  c.ff_size = size("ff_size");
  c.vocab_size = size("vocab_size");
  c.max_len = size("max_len");
  c.max_positions = size("max_positions");
  const std::string& d = require_key(m, "dropout");
  auto [ptr, ec] = std::from_chars(d.data(), d.data() + d.size(), c.dropout);
  if (ec != std::errc{}) throw ConfigError("config key 'dropout' is not a number");
  c.dep_dim = size("dep_dim");
  c.dep_heads = size("dep_heads");
  c.use_segment_embeddings = require_key(m, "use_segment_embeddings") == "1";
  c.type_vocab_size = size("type_vocab_size");
  c.validate();
  return c;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.to_map() == b.to_map();
}

ParamList EncoderState::params() const {
  ParamList out;
  out.push_back({"embeddings.token", token_embeddings});
  out.push_back({"embeddings.position", position_embeddings});
  if (config.use_segment_embeddings) out.push_back({"embeddings.segment", segment_embeddings});
  if (embedding_norm.gamma.defined()) {
    append_params(out, "embeddings.norm.", embedding_norm.params());
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    append_params(out, "layer" + std::to_string(i) + ".", layers[i].params());
  }
  return out;
}

Tensor EncoderOutput::cls() const {
  std::vector<std::size_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) rows[b] = b * seq;
  return gather_rows(states, rows);
}

SequenceBatch make_batch(std::span<const TokenizedPair> pairs) {
  if (pairs.empty()) throw DataError("cannot build an empty batch");
  SequenceBatch b;
  b.batch = pairs.size();
  b.seq = pairs.front().length();
  for (const auto& p : pairs) {
    if (p.length() != b.seq || p.segment_ids.size() != b.seq ||
        p.attention_mask.size() != b.seq) {
      throw DataError("batch sequences must share one length: expected " +
                      std::to_string(b.seq) + ", got " + std::to_string(p.length()));
    }
    b.ids.insert(b.ids.end(), p.ids.begin(), p.ids.end());
    b.segment_ids.insert(b.segment_ids.end(), p.segment_ids.begin(), p.segment_ids.end());
    b.attention_mask.insert(b.attention_mask.end(), p.attention_mask.begin(),
                            p.attention_mask.end());
  }
  return b;
}

EncoderState init_random(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  EncoderState s;
  s.config = config;
  const std::size_t h = config.hidden_size;
  s.token_embeddings = truncated_normal({config.vocab_size, h}, rng);
  s.position_embeddings = truncated_normal({config.position_rows(), h}, rng);
  if (config.use_segment_embeddings) {
    s.segment_embeddings = truncated_normal({config.type_vocab_size, h}, rng);
  }
  // An encoder without blocks returns the raw embedding sum.
  if (config.num_layers > 0) s.embedding_norm = LayerNorm::init(h);
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    s.layers.push_back(EncoderBlock::init(h, config.num_heads, config.ff_size, rng));
  }
  return s;
}

EncoderOutput forward(const SequenceBatch& batch, const EncoderState& state, Mode mode,
                      Rng* rng) {
  const ModelConfig& c = state.config;
  if (batch.ids.size() != batch.rows() || batch.attention_mask.size() != batch.rows()) {
    throw ShapeError("encoder forward: batch buffers do not match batch x seq");
  }
  if (batch.seq > c.position_rows()) {
    throw DataError("sequence length " + std::to_string(batch.seq) +
                    " exceeds the position table (" + std::to_string(c.position_rows()) + ")");
  }
  for (std::size_t r = 0; r < batch.ids.size(); ++r) {
    if (batch.ids[r] < 0 || static_cast<std::size_t>(batch.ids[r]) >= c.vocab_size) {
      throw DataError("token id " + std::to_string(batch.ids[r]) + " at example " +
                      std::to_string(r / batch.seq) + " position " +
                      std::to_string(r % batch.seq) + " is out of range for vocab size " +
                      std::to_string(c.vocab_size));
    }
  }
  const auto positions = batch.position_ids();
  Tensor x = add(embedding_lookup(state.token_embeddings, batch.ids),
                 embedding_lookup(state.position_embeddings, positions));
  if (c.use_segment_embeddings) {
    for (std::size_t r = 0; r < batch.segment_ids.size(); ++r) {
      if (batch.segment_ids[r] < 0 ||
          static_cast<std::size_t>(batch.segment_ids[r]) >= c.type_vocab_size) {
        throw DataError("segment id " + std::to_string(batch.segment_ids[r]) +
                        " at position " + std::to_string(r % batch.seq) + " is out of range");
      }
    }
    x = add(x, embedding_lookup(state.segment_embeddings, batch.segment_ids));
  }
  const real p = static_cast<real>(c.dropout);
  if (state.embedding_norm.gamma.defined()) x = state.embedding_norm(x);
  x = apply_dropout(x, p, mode, rng);
  for (const auto& layer : state.layers) {
    x = layer.forward(x, batch.batch, batch.seq, batch.attention_mask, p, mode, rng);
  }
  return {x, batch.batch, batch.seq};
}

std::size_t count_parameters(const EncoderState& state) {
  return count_elements(state.params());
}

void encoder_param_shapes(const ModelConfig& config, std::vector<ParamShape>& out,
                          const std::string& prefix) {
  const std::size_t h = config.hidden_size;
  out.push_back({prefix + "embeddings.token", {config.vocab_size, h}});
  out.push_back({prefix + "embeddings.position", {config.position_rows(), h}});
  if (config.use_segment_embeddings) {
    out.push_back({prefix + "embeddings.segment", {config.type_vocab_size, h}});
  }
  if (config.num_layers > 0) LayerNorm::shapes(out, prefix + "embeddings.norm.", h);
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    EncoderBlock::shapes(out, prefix + "layer" + std::to_string(i) + ".", h, config.ff_size);
  }
}

}  // namespace redbert
