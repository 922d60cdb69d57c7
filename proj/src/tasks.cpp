#include "redbert/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "redbert/encoder.hpp"
#include "redbert/error.hpp"
#include "redbert/objectives.hpp"

namespace redbert {

const char* task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kIntent: return "intent";
    case TaskKind::kNer: return "ner";
    case TaskKind::kSentiment: return "sentiment";
    case TaskKind::kTitle: return "title";
    case TaskKind::kProactive: return "proactive";
  }
  return "?";
}

TaskKind parse_task(const std::string& name) {
  for (auto k : kAllTasks) {
    if (name == task_name(k)) return k;
  }
  throw ConfigError("unknown task '" + name +
                    "' (expected intent, ner, sentiment, title or proactive)");
}

bool is_tagging(TaskKind kind) { return kind == TaskKind::kNer || kind == TaskKind::kTitle; }

void write_task_examples(const std::vector<TaskExample>& examples, TaskKind kind,
                         const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write task file " + path.string());
  for (const auto& ex : examples) {
    nlohmann::json j = {{"text", ex.text}};
    if (is_tagging(kind)) {
      j["tags"] = ex.tags;
      if (!ex.spans.empty()) {
        auto spans = nlohmann::json::array();
        for (const auto& s : ex.spans) {
          spans.push_back({{"start", s.start}, {"end", s.end}, {"type", s.type}});
        }
        j["spans"] = spans;
      }
    } else {
      j["label"] = ex.label;
    }
    if (kind == TaskKind::kProactive) {
      j["history"] = ex.history;
      j["current_intent"] = ex.current_intent;
    }
    out << j.dump() << '\n';
  }
}

std::vector<TaskExample> read_task_examples(const std::filesystem::path& path, TaskKind kind) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open task file " + path.string());
  std::vector<TaskExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TaskExample ex;
      ex.text = j.at("text").get<std::string>();
      if (is_tagging(kind)) {
        ex.tags = j.at("tags").get<std::vector<std::string>>();
        const auto words = basic_split(ex.text);
        if (words.size() != ex.tags.size()) {
          throw DataError("text has " + std::to_string(words.size()) + " words but " +
                          std::to_string(ex.tags.size()) + " tags");
        }
        if (j.contains("spans")) {
          for (const auto& s : j.at("spans")) {
            ex.spans.push_back({s.at("start").get<std::size_t>(), s.at("end").get<std::size_t>(),
                                s.at("type").get<std::string>()});
          }
        }
      } else {
        ex.label = j.at("label").get<std::string>();
      }
      if (kind == TaskKind::kProactive) {
        ex.history = j.value("history", std::string());
        ex.current_intent = j.at("current_intent").get<std::string>();
      }
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_labels(const std::vector<std::string>& labels, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write label file " + path.string());
  for (const auto& l : labels) out << l << '\n';
}

std::vector<std::string> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label file " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  std::set<std::string> seen;
  for (const auto& l : out) {
    if (!seen.insert(l).second) {
      throw ConfigError("label file " + path.string() + " repeats '" + l + "'");
    }
  }
  if (out.size() < 2) throw ConfigError("label file " + path.string() + " needs 2+ labels");
  return out;
}

std::vector<std::string> infer_labels(const std::vector<TaskExample>& examples, TaskKind kind) {
  std::set<std::string> seen;
  for (const auto& ex : examples) {
    if (is_tagging(kind)) {
      seen.insert(ex.tags.begin(), ex.tags.end());
    } else {
      seen.insert(ex.label);
    }
  }
  return {seen.begin(), seen.end()};
}

namespace {

std::int64_t label_id(const std::vector<std::string>& labels, const std::string& label) {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw ConfigError("label '" + label + "' is not in the label set");
  return it - labels.begin();
}

}  // namespace

void check_label_set(const TaskDataset& dataset) {
  for (std::size_t i = 0; i < dataset.examples.size(); ++i) {
    const auto& ex = dataset.examples[i];
    try {
      if (is_tagging(dataset.kind)) {
        for (const auto& t : ex.tags) label_id(dataset.labels, t);
      } else {
        label_id(dataset.labels, ex.label);
      }
      if (dataset.kind == TaskKind::kProactive) {
        label_id(dataset.intent_labels, ex.current_intent);
      }
    } catch (const ConfigError& e) {
      throw ConfigError("example " + std::to_string(i) + ": " + e.what());
    }
  }
}

std::vector<std::int64_t> align_word_tags(const TokenizedPair& pair,
                                          std::span<const std::int64_t> word_tags,
                                          const std::vector<std::string>& labels) {
  std::vector<std::int64_t> out(pair.length(), kIgnoreLabel);
  std::int32_t prev_word = -1;
  for (std::size_t i = 0; i < pair.length(); ++i) {
    const std::int32_t w = pair.word_index[i];
    if (w < 0) {
      prev_word = -1;
      continue;
    }
    if (static_cast<std::size_t>(w) >= word_tags.size()) {
      throw DataError("word index " + std::to_string(w) + " has no tag (" +
                      std::to_string(word_tags.size()) + " tags)");
    }
    std::int64_t tag = word_tags[w];
    if (w == prev_word) {
      const std::string& name = labels[tag];
      if (name.rfind("B-", 0) == 0) {
        auto it = std::find(labels.begin(), labels.end(), "I-" + name.substr(2));
        if (it != labels.end()) tag = it - labels.begin();
      }
    }
    out[i] = tag;
    prev_word = w;
  }
  return out;
}

TaskBatch encode_task_batch(const TaskDataset& dataset, std::span<const std::size_t> indices,
                            const Vocab& vocab, std::size_t max_len) {
  std::vector<TokenizedPair> pairs;
  pairs.reserve(indices.size());
  TaskBatch batch;
  const bool proactive = dataset.kind == TaskKind::kProactive;
  std::vector<real> intents;
  if (proactive) intents.assign(indices.size() * dataset.intent_labels.size(), real(0));
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const TaskExample& ex = dataset.examples.at(indices[b]);
    const auto words = basic_split(ex.text);
    if (proactive) {
      pairs.push_back(encode_words(words, basic_split(ex.history), true, vocab, max_len));
      const auto k = static_cast<std::size_t>(label_id(dataset.intent_labels, ex.current_intent));
      intents[b * dataset.intent_labels.size() + k] = real(1);
    } else {
      pairs.push_back(encode_words(words, {}, false, vocab, max_len));
    }
    if (is_tagging(dataset.kind)) {
      if (ex.tags.size() != words.size()) {
        throw DataError("example " + std::to_string(indices[b]) + " has " +
                        std::to_string(words.size()) + " words but " +
                        std::to_string(ex.tags.size()) + " tags");
      }
      std::vector<std::int64_t> word_tags;
      word_tags.reserve(ex.tags.size());
      for (const auto& t : ex.tags) word_tags.push_back(label_id(dataset.labels, t));
      const auto rows = align_word_tags(pairs.back(), word_tags, dataset.labels);
      batch.labels.insert(batch.labels.end(), rows.begin(), rows.end());
    } else {
      batch.labels.push_back(label_id(dataset.labels, ex.label));
    }
  }
  batch.sequences = make_batch(pairs);
  if (proactive) {
    batch.current_intents =
        Tensor::from({indices.size(), dataset.intent_labels.size()}, std::move(intents));
  }
  return batch;
}

}  // namespace redbert
