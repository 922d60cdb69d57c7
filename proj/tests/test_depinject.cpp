#include <sstream>

#include "doctest.h"
#include "redbert/depinject.hpp"
#include "redbert/error.hpp"
#include "redbert/model.hpp"
#include "redbert/objectives.hpp"
#include "redbert/trainkit.hpp"
#include "test_util.hpp"

using namespace redbert;

namespace {

ModelConfig dep_config() {
  ModelConfig c;
  c.num_layers = 1;
  c.hidden_size = 16;
  c.num_heads = 2;
  c.ff_size = 32;
  c.vocab_size = 40;
  c.max_len = 16;
  c.dropout = 0;
  c.dep_dim = 12;
  c.dep_heads = 2;
  return c;
}

Tensor random_states(std::size_t rows, std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<real> v(rows * width);
  for (auto& x : v) x = static_cast<real>(rng.normal());
  return Tensor::from({rows, width}, v);
}

}  // namespace

TEST_CASE("lookup of 128 ids is 128 x dep_dim and [PAD] is a zero row") {
  Rng rng(1);
  const DepEmbeddingTable table = DepEmbeddingTable::init_random(50, 300, rng);
  std::vector<std::int32_t> ids(128);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int32_t>(i % 50);
  const Tensor d = dep_lookup(ids, table);
  CHECK(d.shape() == Shape{128, 300});
  for (std::size_t j = 0; j < 300; ++j) CHECK(d.data()[j] == 0);
  const std::vector<std::int32_t> bad{50};
  CHECK_THROWS_AS(dep_lookup(bad, table), DataError);
}

TEST_CASE("the [PAD] row never receives gradient") {
  Rng rng(2);
  const DepEmbeddingTable table = DepEmbeddingTable::init_random(10, 4, rng);
  const std::vector<std::int32_t> ids{0, 3, 0, 3};
  backward(sum(dep_lookup(ids, table)));
  const auto g = table.weights.grad();
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(g[j] == 0);
    CHECK(g[3 * 4 + j] == 2);
  }
}

TEST_CASE("rows present in the file are copied exactly") {
  testutil::TempDir dir("dep");
  const Vocab v = testutil::small_vocab({"apple", "shoe", "##s", "red"});
  const std::vector<std::pair<std::string, std::vector<double>>> rows{
      {"apple", {0.123456789, -1.5, 2.25}}, {"red", {1e-3, 0.3333333333, -7.0}},
      {"unrelated", {1, 2, 3}}};
  write_dep_embeddings(dir / "dep.txt", rows);
  DepLoadStats stats;
  const DepEmbeddingTable t = load_dep_embeddings(dir / "dep.txt", v, 3, 5, &stats);
  CHECK(stats.file_rows == 3);
  CHECK(stats.matched == 2);
  CHECK(t.rows() == v.size());

  // Independent parse of the file text.
  std::istringstream in(testutil::read_file(dir / "dep.txt"));
  std::size_t count = 0, dim = 0;
  in >> count >> dim;
  REQUIRE(count == 3);
  std::string token;
  while (in >> token) {
    std::vector<double> values(dim);
    for (auto& x : values) in >> x;
    const auto id = v.find(token);
    if (!id) continue;
    for (std::size_t j = 0; j < dim; ++j) {
      CHECK(t.weights.data()[*id * dim + j] == static_cast<real>(values[j]));
    }
  }
  for (std::size_t j = 0; j < 3; ++j) CHECK(t.weights.data()[j] == 0);

  CHECK_THROWS_AS(load_dep_embeddings(dir / "dep.txt", v, 4, 5), ConfigError);
  testutil::write_file(dir / "short.txt", "2 3\napple 1 2 3\n");
  CHECK_THROWS_AS(load_dep_embeddings(dir / "short.txt", v, 3, 5), DataError);
  CHECK_THROWS_AS(load_dep_embeddings(dir / "missing.txt", v, 3, 5), IoError);
}

TEST_CASE("side transform keeps the shape and ignores extra padding") {
  Rng rng(3);
  const SideTransformer side = SideTransformer::init(12, 2, 16, rng);
  const Tensor d6 = random_states(6, 12, 4);
  const std::vector<std::uint8_t> mask6(6, 1);
  const Tensor t6 = side_transform(d6, side, 1, 6, mask6);
  CHECK(t6.shape() == Shape{6, 12});

  std::vector<real> padded = d6.to_vector();
  for (int i = 0; i < 4 * 12; ++i) padded.push_back(static_cast<real>(0.7 * i));
  std::vector<std::uint8_t> mask10(10, 1);
  for (std::size_t i = 6; i < 10; ++i) mask10[i] = 0;
  const Tensor t10 = side_transform(Tensor::from({10, 12}, padded), side, 1, 10, mask10);
  for (std::size_t i = 0; i < 6 * 12; ++i) {
    CHECK(std::abs(t6.data()[i] - t10.data()[i]) < 1e-5);
  }
  CHECK_THROWS_AS(side_transform(random_states(6, 8, 1), side, 1, 6, mask6), ShapeError);
}

TEST_CASE("injection concatenates dependency states in front") {
  CHECK(inject(Tensor::zeros({5, 300}), Tensor::zeros({5, 64})).dim(1) == 364);
  CHECK(inject(Tensor::zeros({5, 300}), Tensor::zeros({5, 768})).dim(1) == 1068);
  const Tensor h = random_states(4, 6, 1);
  const Tensor c = inject(Tensor::zeros({4, 3}), h);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(c.data()[r * 9 + j] == 0);
    for (std::size_t j = 0; j < 6; ++j) CHECK(c.data()[r * 9 + 3 + j] == h.data()[r * 6 + j]);
  }
  CHECK_THROWS_AS(inject(Tensor::zeros({3, 3}), h), ShapeError);
}

TEST_CASE("gradient reaches the dependency table through the side path") {
  const Vocab v = testutil::word_vocab(40);
  const Backbone b = Backbone::init(dep_config(), true, 4);
  const auto batch = make_batch(std::vector{encode_pair("w1 w2", "w3", v, 16)});
  backward(sum(b.forward(batch, Mode::kEval, nullptr).states));
  CHECK(b.injector->table.weights.has_grad());
  const auto g = b.injector->table.weights.grad();
  const std::size_t dim = b.injector->table.dim();
  double norm = 0;
  for (std::size_t j = 0; j < dim; ++j) norm += std::abs(g[v.id("w1") * dim + j]);
  CHECK(norm > 0);
}

TEST_CASE("zeroed dependency states reduce dep heads to plain heads") {
  Rng rng(5);
  const std::size_t hidden = 6, dep = 4;
  const ClassifierHead wide = ClassifierHead::init(hidden + dep, 3, rng);
  ClassifierHead narrow = ClassifierHead::init(hidden, 3, rng);
  // The plain head takes the rows of the wide weight that face H.
  auto nw = narrow.proj.weight.mutable_data();
  for (std::size_t i = 0; i < hidden; ++i)
    for (std::size_t j = 0; j < 3; ++j) nw[i * 3 + j] = wide.proj.weight.data()[(dep + i) * 3 + j];
  std::copy(wide.proj.bias.data().begin(), wide.proj.bias.data().end(),
            narrow.proj.bias.mutable_data().begin());
  const Tensor h = random_states(5, hidden, 6);
  const Tensor c = inject(Tensor::zeros({5, dep}), h);
  const std::vector<std::int64_t> labels{0, 1, 2, 1, 0};
  const HeadOutput a = dep_classify(c, labels, wide, hidden, dep);
  const HeadOutput b = classify(h, labels, narrow);
  CHECK(a.predictions == b.predictions);
  for (std::size_t i = 0; i < 15; ++i) CHECK(a.probs.data()[i] == doctest::Approx(b.probs.data()[i]).epsilon(1e-6));
  CHECK_THROWS_AS(dep_classify(h, labels, wide, hidden, dep), ShapeError);

  TaggerHead tag_wide{wide};
  CHECK(dep_tag(c, labels, tag_wide, hidden, dep).predictions == b.predictions);
}

TEST_CASE("zeroed dep head gives ln k") {
  Rng rng(7);
  ClassifierHead head = ClassifierHead::init(10, 4, rng);
  for (auto& x : head.proj.weight.mutable_data()) x = 0;
  const std::vector<std::int64_t> labels{0, 3};
  CHECK(dep_classify(random_states(2, 10, 1), labels, head, 6, 4).loss.item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("a frozen dependency table is bit-identical after training") {
  const Vocab v = testutil::word_vocab(40);
  std::vector<TrainingInstance> data;
  for (int i = 0; i < 8; ++i) {
    TrainingInstance inst{encode_pair("w1 w2 w" + std::to_string(3 + i), "w9 w10", v, 16),
                          {2}, {}, i % 2 ? kIsNext : kNotNext};
    inst.mlm_labels = {inst.pair.ids[2]};
    inst.pair.ids[2] = v.mask_id();
    data.push_back(inst);
  }
  TrainRunConfig cfg;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-2;
  cfg.max_epochs = 2;
  for (const bool frozen : {true, false}) {
    PretrainModel m = PretrainModel::init(dep_config(), true, 8);
    m.backbone.injector->table.set_fine_tune(!frozen);
    const auto before = m.backbone.injector->table.weights.to_vector();
    const auto side_before = m.backbone.injector->side.position_embeddings.to_vector();
    pretrain(m, data, {}, cfg);
    const auto after = m.backbone.injector->table.weights.to_vector();
    if (frozen) {
      CHECK(after == before);
    } else {
      CHECK(after != before);
      // [PAD] stays zero even while fine-tuning.
      for (std::size_t j = 0; j < 12; ++j) CHECK(after[j] == 0);
    }
    CHECK(m.backbone.injector->side.position_embeddings.to_vector() != side_before);
  }
}
