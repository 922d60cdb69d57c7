#include <cmath>

#include "doctest.h"
#include "redbert/error.hpp"
#include "redbert/model.hpp"
#include "redbert/objectives.hpp"
#include "test_util.hpp"

using namespace redbert;

namespace {

void zero(const ParamList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (auto& x : t.mutable_data()) x = 0;
  }
}

Tensor random_states(std::size_t rows, std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<real> v(rows * width);
  for (auto& x : v) x = static_cast<real>(rng.normal());
  return Tensor::from({rows, width}, v);
}

void check_distribution(const Tensor& probs) {
  const std::size_t c = probs.dim(1);
  const auto d = probs.data();
  for (std::size_t r = 0; r < probs.dim(0); ++r) {
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) {
      CHECK(d[r * c + j] >= 0);
      s += d[r * c + j];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

// Entropy of each row, averaged; computed in double here.
double mean_entropy(const std::vector<std::vector<double>>& t) {
  double total = 0;
  for (const auto& row : t)
    for (const double p : row)
      if (p > 0) total -= p * std::log(p);
  return total / static_cast<double>(t.size());
}

Tensor probs_tensor(const std::vector<std::vector<double>>& t) {
  std::vector<real> v;
  for (const auto& row : t)
    for (const double p : row) v.push_back(static_cast<real>(p));
  return Tensor::from({t.size(), t[0].size()}, v);
}

Tensor logits_of(const std::vector<std::vector<double>>& s) {
  std::vector<real> v;
  for (const auto& row : s)
    for (const double p : row) v.push_back(static_cast<real>(std::log(p)));
  return Tensor::from({s.size(), s[0].size()}, v);
}

}  // namespace

TEST_CASE("zeroed NSP head gives ln 2") {
  Rng rng(1);
  NSPHead head = NSPHead::init(16, rng);
  zero(head.params());
  const std::vector<std::int64_t> labels{0, 1, 1, 0, 1};
  const HeadOutput out = nsp_loss(random_states(5, 16, 2), labels, head);
  CHECK(out.loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  check_distribution(out.probs);
  const std::vector<std::int64_t> bad{0, 2, 1, 0, 1};
  CHECK_THROWS_AS(nsp_loss(random_states(5, 16, 2), bad, head), DataError);
}

TEST_CASE("random NSP head sits near ln 2 over 512 samples") {
  Rng rng(11);
  const NSPHead head = NSPHead::init(16, rng);
  std::vector<std::int64_t> labels(512);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 2;
  const HeadOutput out = nsp_loss(random_states(512, 16, 12), labels, head);
  CHECK(std::abs(out.loss.item() - std::log(2.0)) < 0.1);
}

TEST_CASE("zeroed MLM head gives ln V at every masked position") {
  Rng rng(3);
  const std::size_t vocab = 37;
  MLMHead head = MLMHead::init(16, 16, vocab, rng);
  zero(head.params());
  // Bias zero and transform zero: logits are LN(0)*gamma+beta = 0 against any decoder.
  const Tensor decoder = random_states(vocab, 16, 4);
  const std::vector<std::size_t> rows{1, 4};
  const std::vector<std::int32_t> labels{0, 5, 0, 0, 9, 0};
  const HeadOutput out = mlm_loss(random_states(6, 16, 5), rows, labels, head, decoder);
  CHECK(out.count == 2);
  CHECK(out.loss.item() == doctest::Approx(std::log(double(vocab))).epsilon(1e-6));
}

TEST_CASE("MLM loss ignores labels at unmasked positions") {
  Rng rng(3);
  const MLMHead head = MLMHead::init(16, 16, 30, rng);
  const Tensor decoder = random_states(30, 16, 4);
  const Tensor states = random_states(6, 16, 5);
  const std::vector<std::size_t> rows{1, 4};
  std::vector<std::int32_t> labels{0, 5, 0, 0, 9, 0};
  const double base = mlm_loss(states, rows, labels, head, decoder).loss.item();
  labels[0] = 17;
  labels[3] = 29;
  CHECK(mlm_loss(states, rows, labels, head, decoder).loss.item() == base);
  const HeadOutput none = mlm_loss(states, {}, labels, head, decoder);
  CHECK(none.count == 0);
  CHECK(none.loss.item() == 0);
  const std::vector<std::size_t> beyond{6};
  CHECK_THROWS_AS(mlm_loss(states, beyond, labels, head, decoder), DataError);
}

TEST_CASE("zeroed joint loss is ln 2 + ln V and its gradient is the sum of parts") {
  const Vocab v = testutil::word_vocab(40);
  ModelConfig c;
  c.num_layers = 1;
  c.hidden_size = 16;
  c.num_heads = 2;
  c.ff_size = 32;
  c.vocab_size = 40;
  c.max_len = 12;
  c.dropout = 0;
  PretrainModel m = PretrainModel::init(c, false, 5);
  TrainingInstance inst{encode_pair("w1 w2 w3", "w4 w5", v, 12), {2, 5}, {}, kIsNext};
  inst.mlm_labels = {inst.pair.ids[2], inst.pair.ids[5]};
  inst.pair.ids[2] = v.mask_id();
  const std::vector<TrainingInstance> batch{inst};

  // Linearity: grad(total) == grad(nsp) + grad(mlm).
  const auto params = tensors_of(m.params());
  auto grads_of = [&](auto pick) {
    for (auto p : params) p.zero_grad();
    const PretrainLoss l = joint_pretrain_loss(m, batch, Mode::kEval, nullptr);
    backward(pick(l));
    std::vector<std::vector<double>> g;
    for (const auto& p : params)
      g.emplace_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                  : std::vector<double>(p.numel(), 0));
    return g;
  };
  const auto gt = grads_of([](const PretrainLoss& l) { return l.total; });
  const auto gn = grads_of([](const PretrainLoss& l) { return l.nsp.loss; });
  const auto gm = grads_of([](const PretrainLoss& l) { return l.mlm.loss; });
  for (std::size_t i = 0; i < gt.size(); ++i)
    for (std::size_t j = 0; j < gt[i].size(); ++j)
      CHECK(gt[i][j] == doctest::Approx(gn[i][j] + gm[i][j]).epsilon(1e-4).scale(1e-6));

  zero(m.mlm.params());
  zero(m.nsp.params());
  const PretrainLoss l = joint_pretrain_loss(m, batch, Mode::kEval, nullptr);
  CHECK(l.total.item() == doctest::Approx(std::log(2.0) + std::log(40.0)).epsilon(1e-6));
}

TEST_CASE("zeroed classifier and tagger give ln k") {
  Rng rng(1);
  ClassifierHead cls = ClassifierHead::init(8, 5, rng);
  zero(cls.params());
  const std::vector<std::int64_t> labels{0, 4, 2};
  CHECK(classify(random_states(3, 8, 1), labels, cls).loss.item() ==
        doctest::Approx(std::log(5.0)).epsilon(1e-6));
  const std::vector<std::int64_t> bad{0, 5, 2};
  CHECK_THROWS_AS(classify(random_states(3, 8, 1), bad, cls), DataError);

  TaggerHead tagger = TaggerHead::init(8, 3, rng);
  zero(tagger.params());
  const std::vector<std::int64_t> tags{kIgnoreLabel, 0, 2, 1, kIgnoreLabel, kIgnoreLabel};
  const HeadOutput out = tag(random_states(6, 8, 2), tags, tagger);
  CHECK(out.count == 3);
  CHECK(out.loss.item() == doctest::Approx(std::log(3.0)).epsilon(1e-6));
  const std::vector<std::int64_t> short_tags{0, 1};
  CHECK_THROWS_AS(tag(random_states(6, 8, 2), short_tags, tagger), DataError);
}

TEST_CASE("property: argmax is invariant to a constant logit shift") {
  Rng rng(6);
  ClassifierHead cls = ClassifierHead::init(8, 4, rng);
  const Tensor x = random_states(20, 8, 3);
  const auto before = classify(x, {}, cls).predictions;
  for (auto& b : cls.proj.bias.mutable_data()) b += real(3.5);
  CHECK(classify(x, {}, cls).predictions == before);
}

TEST_CASE("proactive head concatenates a 32-wide intent code") {
  Rng rng(2);
  ProactiveHead head = ProactiveHead::init(64, 7, 32, 7, rng);
  CHECK(head.classifier.proj.in_features() == 96);
  const Tensor h = random_states(2, 64, 1);
  const Tensor one_hot_a = Tensor::from({2, 7}, {1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1});
  const Tensor one_hot_b = Tensor::from({2, 7}, {0, 1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0});
  const std::vector<std::int64_t> labels{3, 5};
  const HeadOutput a = proactive_forward(h, one_hot_a, labels, head);
  CHECK(a.probs.shape() == Shape{2, 7});
  check_distribution(a.probs);
  CHECK(a.probs.to_vector() != proactive_forward(h, one_hot_b, labels, head).probs.to_vector());

  // Zeroed intent network output: the current intent no longer matters.
  zero(head.intent_out.params());
  CHECK(proactive_forward(h, one_hot_a, labels, head).probs.to_vector() ==
        proactive_forward(h, one_hot_b, labels, head).probs.to_vector());

  const Tensor not_one_hot = Tensor::from({2, 7}, {1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1});
  CHECK_THROWS_AS(proactive_forward(h, not_one_hot, labels, head), DataError);
}

TEST_CASE("distillation with a one-hot teacher is hard cross-entropy") {
  const std::vector<std::vector<double>> s{{0.2, 0.5, 0.3}, {0.6, 0.3, 0.1}};
  const std::vector<std::vector<double>> t{{0, 1, 0}, {0, 0, 1}};
  const double expected = -(std::log(0.5) + std::log(0.1)) / 2;
  CHECK(distill_loss(logits_of(s), probs_tensor(t)).item() == doctest::Approx(expected).epsilon(1e-6));
  // Same as the index-based loss.
  const std::vector<std::int64_t> hard{1, 2};
  CHECK(distill_loss(logits_of(s), probs_tensor(t)).item() ==
        doctest::Approx(nll_loss(log_softmax(logits_of(s)), hard).item()).epsilon(1e-6));
}

TEST_CASE("distillation hand-evaluated values") {
  const std::vector<std::vector<double>> half{{0.5, 0.5}};
  CHECK(distill_loss(logits_of(half), probs_tensor(half)).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));
  const std::vector<std::vector<double>> t{{0.9, 0.1}};
  CHECK(distill_loss(logits_of(half), probs_tensor(t)).item() ==
        doctest::Approx(0.9 * std::log(2.0) + 0.1 * std::log(2.0)).epsilon(1e-6));
  const std::vector<std::vector<double>> bad{{0.9, 0.3}};
  CHECK_THROWS_AS(distill_loss(logits_of(half), probs_tensor(bad)), DataError);
}

TEST_CASE("property: distillation is bounded by teacher entropy and tight at s = t") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<double>> t(3, std::vector<double>(5)), s = t;
    for (auto* m : {&t, &s}) {
      for (auto& row : *m) {
        double z = 0;
        for (auto& p : row) z += (p = std::exp(2 * rng.normal()));
        for (auto& p : row) p /= z;
      }
    }
    const double h = mean_entropy(t);
    CHECK(distill_loss(logits_of(s), probs_tensor(t)).item() >= h - 1e-6);
    CHECK(distill_loss(logits_of(t), probs_tensor(t)).item() == doctest::Approx(h).epsilon(1e-6).scale(1e-6));
  }
}
