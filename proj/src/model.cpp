#include "redbert/model.hpp"

#include <sstream>

#include "redbert/error.hpp"

namespace redbert {

namespace {

constexpr std::uint64_t kInjectorSalt = 0xD1B54A32D192ED03ULL;
constexpr std::uint64_t kHeadSalt = 0x8CB92BA72F3D8DD7ULL;

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].find_first_of(",\n") != std::string::npos) {
      throw ConfigError("label '" + items[i] + "' contains a reserved character");
    }
    if (i) out += ',';
    out += items[i];
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) out.push_back(item);
  return out;
}

const std::string& header_value(const Checkpoint& ckpt, const std::string& key) {
  auto it = ckpt.header.find(key);
  if (it == ckpt.header.end()) throw DataError("checkpoint header lacks '" + key + "'");
  return it->second;
}

void write_backbone_header(const Backbone& b, Checkpoint& ckpt) {
  for (const auto& [k, v] : b.config().to_map()) ckpt.header["model." + k] = v;
  ckpt.header["inject_deps"] = b.injects() ? "1" : "0";
  ckpt.header["dep_fine_tune"] = b.injects() && b.injector->table.fine_tune ? "1" : "0";
}

}  // namespace

Backbone Backbone::init(const ModelConfig& config, bool inject_deps, std::uint64_t seed) {
  Backbone b;
  b.encoder = init_random(config, seed);
  if (inject_deps) {
    Rng rng(seed ^ kInjectorSalt);
    b.injector = DepInjector::init(config, rng);
  }
  return b;
}

std::size_t Backbone::output_width() const {
  return config().hidden_size + (injects() ? config().dep_dim : 0);
}

EncoderOutput Backbone::forward(const SequenceBatch& batch, Mode mode, Rng* rng) const {
  EncoderOutput out = redbert::forward(batch, encoder, mode, rng);
  if (injector) {
    out.states = injector->forward(batch, out.states, static_cast<real>(config().dropout), mode,
                                   rng);
  }
  return out;
}

void Backbone::set_dep_table(DepEmbeddingTable table) {
  if (!injector) throw ConfigError("model has no dependency injection path");
  if (table.rows() != config().vocab_size || table.dim() != config().dep_dim) {
    throw ConfigError("dependency table is " + std::to_string(table.rows()) + "x" +
                      std::to_string(table.dim()) + ", model expects " +
                      std::to_string(config().vocab_size) + "x" +
                      std::to_string(config().dep_dim));
  }
  table.set_fine_tune(injector->table.fine_tune);
  injector->table = std::move(table);
}

ParamList Backbone::params() const {
  ParamList out;
  append_params(out, "encoder.", encoder.params());
  if (injector) append_params(out, "dep.", injector->params());
  return out;
}

ParamList Backbone::all_params() const {
  ParamList out;
  append_params(out, "encoder.", encoder.params());
  if (injector) append_params(out, "dep.", injector->all_params());
  return out;
}

PretrainModel PretrainModel::init(const ModelConfig& config, bool inject_deps,
                                  std::uint64_t seed) {
  PretrainModel m;
  m.backbone = Backbone::init(config, inject_deps, seed);
  Rng rng(seed ^ kHeadSalt);
  m.mlm = MLMHead::init(m.backbone.output_width(), config.hidden_size, config.vocab_size, rng);
  m.nsp = NSPHead::init(m.backbone.output_width(), rng);
  return m;
}

ParamList PretrainModel::params() const {
  ParamList out = backbone.params();
  append_params(out, "mlm.", mlm.params());
  append_params(out, "nsp.", nsp.params());
  return out;
}

ParamList PretrainModel::all_params() const {
  ParamList out = backbone.all_params();
  append_params(out, "mlm.", mlm.params());
  append_params(out, "nsp.", nsp.params());
  return out;
}

PretrainLoss joint_pretrain_loss(const PretrainModel& model,
                                 std::span<const TrainingInstance> instances, Mode mode,
                                 Rng* rng, PretrainWeights weights) {
  std::vector<TokenizedPair> pairs;
  std::vector<std::int64_t> nsp_labels;
  pairs.reserve(instances.size());
  for (const auto& inst : instances) {
    pairs.push_back(inst.pair);
    nsp_labels.push_back(inst.nsp_label);
  }
  const SequenceBatch batch = make_batch(pairs);
  const EncoderOutput h = model.backbone.forward(batch, mode, rng);
  PretrainLoss out;
  out.nsp = nsp_loss(h.cls(), nsp_labels, model.nsp);
  out.mlm = mlm_loss(h.states, h.seq, instances, model.mlm,
                     model.backbone.encoder.token_embeddings);
  out.total = add(scale(out.nsp.loss, static_cast<real>(weights.nsp)),
                  scale(out.mlm.loss, static_cast<real>(weights.mlm)));
  return out;
}

std::size_t pretrain_parameter_count(const ModelConfig& config, bool inject_deps) {
  std::vector<ParamShape> shapes;
  encoder_param_shapes(config, shapes);
  std::size_t width = config.hidden_size;
  if (inject_deps) {
    dep_param_shapes(config, shapes);
    width += config.dep_dim;
  }
  Linear::shapes(shapes, "mlm.transform.", width, config.hidden_size);
  LayerNorm::shapes(shapes, "mlm.norm.", config.hidden_size);
  shapes.push_back({"mlm.output_bias", {config.vocab_size}});
  Linear::shapes(shapes, "nsp.", width, 2);
  return count_elements(shapes);
}

TaskModel TaskModel::init(TaskKind kind, Backbone backbone, std::vector<std::string> labels,
                          std::vector<std::string> intent_labels, std::uint64_t seed,
                          std::size_t intent_dim) {
  TaskModel m;
  m.kind = kind;
  m.backbone = std::move(backbone);
  m.labels = std::move(labels);
  m.intent_labels = std::move(intent_labels);
  Rng rng(seed ^ kHeadSalt);
  const std::size_t width = m.backbone.output_width();
  if (is_tagging(kind)) {
    m.head = TaggerHead::init(width, m.labels.size(), rng);
  } else if (kind == TaskKind::kProactive) {
    if (m.intent_labels.empty()) throw ConfigError("proactive task needs intent labels");
    m.head = ProactiveHead::init(width, m.intent_labels.size(), intent_dim, m.labels.size(), rng);
  } else {
    m.head = ClassifierHead::init(width, m.labels.size(), rng);
  }
  return m;
}

HeadOutput TaskModel::forward(const TaskBatch& batch, Mode mode, Rng* rng) const {
  const EncoderOutput h = backbone.forward(batch.sequences, mode, rng);
  const std::size_t hidden = backbone.config().hidden_size;
  const std::size_t dep = backbone.config().dep_dim;
  if (const auto* tagger = std::get_if<TaggerHead>(&head)) {
    return backbone.injects() ? dep_tag(h.states, batch.labels, *tagger, hidden, dep)
                              : tag(h.states, batch.labels, *tagger);
  }
  if (const auto* pro = std::get_if<ProactiveHead>(&head)) {
    return proactive_forward(h.cls(), batch.current_intents, batch.labels, *pro);
  }
  const auto& cls = std::get<ClassifierHead>(head);
  return backbone.injects() ? dep_classify(h.cls(), batch.labels, cls, hidden, dep)
                            : classify(h.cls(), batch.labels, cls);
}

ParamList TaskModel::head_params() const {
  ParamList out;
  std::visit([&](const auto& h) { append_params(out, "head.", h.params()); }, head);
  return out;
}

ParamList TaskModel::params() const {
  if (freeze_encoder) return head_params();
  ParamList out = backbone.params();
  append_params(out, "", head_params());
  return out;
}

ParamList TaskModel::all_params() const {
  ParamList out = backbone.all_params();
  append_params(out, "", head_params());
  return out;
}

Checkpoint to_checkpoint(const PretrainModel& model) {
  Checkpoint ckpt;
  write_backbone_header(model.backbone, ckpt);
  ckpt.header["kind"] = "pretrain";
  ckpt.tensors = model.all_params();
  return ckpt;
}

Backbone backbone_from(const Checkpoint& ckpt) {
  std::map<std::string, std::string> cfg;
  for (const auto& [k, v] : ckpt.header) {
    if (k.rfind("model.", 0) == 0) cfg[k.substr(6)] = v;
  }
  const ModelConfig config = ModelConfig::from_map(cfg);
  const bool inject = header_value(ckpt, "inject_deps") == "1";
  Backbone b = Backbone::init(config, inject, 0);
  if (inject) b.injector->table.set_fine_tune(header_value(ckpt, "dep_fine_tune") == "1");
  restore_params(b.all_params(), ckpt);
  return b;
}

PretrainModel pretrain_model_from(const Checkpoint& ckpt) {
  if (header_value(ckpt, "kind") != "pretrain") {
    throw DataError("checkpoint is not a pretraining checkpoint");
  }
  PretrainModel m;
  m.backbone = backbone_from(ckpt);
  Rng rng(0);
  const auto& c = m.backbone.config();
  m.mlm = MLMHead::init(m.backbone.output_width(), c.hidden_size, c.vocab_size, rng);
  m.nsp = NSPHead::init(m.backbone.output_width(), rng);
  ParamList heads;
  append_params(heads, "mlm.", m.mlm.params());
  append_params(heads, "nsp.", m.nsp.params());
  restore_params(heads, ckpt);
  return m;
}

Checkpoint to_checkpoint(const TaskModel& model) {
  Checkpoint ckpt;
  write_backbone_header(model.backbone, ckpt);
  ckpt.header["kind"] = "task";
  ckpt.header["task"] = task_name(model.kind);
  ckpt.header["labels"] = join(model.labels);
  ckpt.header["intent_labels"] = join(model.intent_labels);
  if (const auto* pro = std::get_if<ProactiveHead>(&model.head)) {
    ckpt.header["intent_dim"] = std::to_string(pro->intent_dim());
  }
  ckpt.tensors = model.all_params();
  return ckpt;
}

TaskModel task_model_from(const Checkpoint& ckpt) {
  if (header_value(ckpt, "kind") != "task") {
    throw DataError("checkpoint is not a fine-tuned task checkpoint");
  }
  const TaskKind kind = parse_task(header_value(ckpt, "task"));
  std::size_t intent_dim = 32;
  if (auto it = ckpt.header.find("intent_dim"); it != ckpt.header.end()) {
    intent_dim = std::stoul(it->second);
  }
  TaskModel m = TaskModel::init(kind, backbone_from(ckpt),
                                split_list(header_value(ckpt, "labels")),
                                split_list(header_value(ckpt, "intent_labels")), 0, intent_dim);
  restore_params(m.head_params(), ckpt);
  return m;
}

}  // namespace redbert
