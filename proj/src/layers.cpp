#include "redbert/layers.hpp"

#include "redbert/error.hpp"

namespace redbert {

void append_params(ParamList& out, const std::string& prefix, const ParamList& params) {
  for (const auto& p : params) out.push_back({prefix + p.name, p.tensor});
}

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

std::size_t count_elements(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

std::size_t count_elements(const std::vector<ParamShape>& shapes) {
  std::size_t n = 0;
  for (const auto& s : shapes) n += shape_numel(s.shape);
  return n;
}

Tensor truncated_normal(Shape shape, Rng& rng, double stddev) {
  std::vector<real> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<real>(rng.truncated_normal(stddev));
  return Tensor::from(std::move(shape), std::move(values), true);
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  return {truncated_normal({in, out}, rng), Tensor::zeros({out}, true)};
}

void Linear::shapes(std::vector<ParamShape>& out, const std::string& prefix,
                    std::size_t in, std::size_t out_dim) {
  out.push_back({prefix + "weight", {in, out_dim}});
  out.push_back({prefix + "bias", {out_dim}});
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

ParamList Linear::params() const { return {{"weight", weight}, {"bias", bias}}; }

LayerNorm LayerNorm::init(std::size_t dim) {
  return {Tensor::full({dim}, real(1), true), Tensor::zeros({dim}, true)};
}

void LayerNorm::shapes(std::vector<ParamShape>& out, const std::string& prefix,
                       std::size_t dim) {
  out.push_back({prefix + "gamma", {dim}});
  out.push_back({prefix + "beta", {dim}});
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

ParamList LayerNorm::params() const { return {{"gamma", gamma}, {"beta", beta}}; }

std::vector<std::size_t> SequenceBatch::cls_rows() const {
  std::vector<std::size_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) rows[b] = b * seq;
  return rows;
}

std::vector<std::int32_t> SequenceBatch::position_ids() const {
  std::vector<std::int32_t> pos(rows());
  for (std::size_t r = 0; r < pos.size(); ++r) pos[r] = static_cast<std::int32_t>(r % seq);
  return pos;
}

Tensor apply_dropout(const Tensor& x, real p, Mode mode, Rng* rng) {
  if (mode != Mode::kTrain || p == real(0)) return x;
  if (rng == nullptr) throw ContractError("train-mode dropout needs an rng");
  return dropout(x, p, *rng, true);
}

EncoderBlock EncoderBlock::init(std::size_t hidden, std::size_t heads, std::size_t ff,
                                Rng& rng) {
  EncoderBlock b;
  b.query = Linear::init(hidden, hidden, rng);
  b.key = Linear::init(hidden, hidden, rng);
  b.value = Linear::init(hidden, hidden, rng);
  b.attn_out = Linear::init(hidden, hidden, rng);
  b.attn_norm = LayerNorm::init(hidden);
  b.ff_in = Linear::init(hidden, ff, rng);
  b.ff_out = Linear::init(ff, hidden, rng);
  b.ff_norm = LayerNorm::init(hidden);
  b.heads = heads;
  return b;
}

void EncoderBlock::shapes(std::vector<ParamShape>& out, const std::string& prefix,
                          std::size_t hidden, std::size_t ff) {
  Linear::shapes(out, prefix + "attn.query.", hidden, hidden);
  Linear::shapes(out, prefix + "attn.key.", hidden, hidden);
  Linear::shapes(out, prefix + "attn.value.", hidden, hidden);
  Linear::shapes(out, prefix + "attn.out.", hidden, hidden);
  LayerNorm::shapes(out, prefix + "attn.norm.", hidden);
  Linear::shapes(out, prefix + "ff.in.", hidden, ff);
  Linear::shapes(out, prefix + "ff.out.", ff, hidden);
  LayerNorm::shapes(out, prefix + "ff.norm.", hidden);
}

Tensor EncoderBlock::forward(const Tensor& x, std::size_t batch, std::size_t seq,
                             std::span<const std::uint8_t> mask, real dropout_p,
                             Mode mode, Rng* rng) const {
  Tensor ctx = attention(query(x), key(x), value(x), batch, seq, heads, mask);
  Tensor h = attn_norm(add(x, apply_dropout(attn_out(ctx), dropout_p, mode, rng)));
  Tensor f = ff_out(gelu(ff_in(h)));
  return ff_norm(add(h, apply_dropout(f, dropout_p, mode, rng)));
}

ParamList EncoderBlock::params() const {
  ParamList out;
  append_params(out, "attn.query.", query.params());
  append_params(out, "attn.key.", key.params());
  append_params(out, "attn.value.", value.params());
  append_params(out, "attn.out.", attn_out.params());
  append_params(out, "attn.norm.", attn_norm.params());
  append_params(out, "ff.in.", ff_in.params());
  append_params(out, "ff.out.", ff_out.params());
  append_params(out, "ff.norm.", ff_norm.params());
  return out;
}

}  // namespace redbert
