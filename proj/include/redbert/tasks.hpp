#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "redbert/layers.hpp"
#include "redbert/tokenizer.hpp"

namespace redbert {

enum class TaskKind { kIntent, kNer, kSentiment, kTitle, kProactive };

inline constexpr TaskKind kAllTasks[] = {TaskKind::kIntent, TaskKind::kNer,
                                         TaskKind::kSentiment, TaskKind::kTitle,
                                         TaskKind::kProactive};

const char* task_name(TaskKind kind);
TaskKind parse_task(const std::string& name);  // throws ConfigError
bool is_tagging(TaskKind kind);

// Word offsets [start, end) into the whitespace/punctuation split of a text.
struct EntitySpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string type;

  friend bool operator==(const EntitySpan&, const EntitySpan&) = default;
};

struct TaskExample {
  std::string text;
  std::string label;               // classification target
  std::vector<std::string> tags;   // tagging target, one per word of text
  std::vector<EntitySpan> spans;   // entity spans behind BIO tags
  std::string history;             // proactive: earlier turns
  std::string current_intent;      // proactive: intent of text

  friend bool operator==(const TaskExample&, const TaskExample&) = default;
};

struct TaskDataset {
  TaskKind kind = TaskKind::kIntent;
  std::vector<std::string> labels;         // label set, id = index
  std::vector<std::string> intent_labels;  // proactive only
  std::vector<TaskExample> examples;
};

// One JSON object per example; fields depend on the task.
void write_task_examples(const std::vector<TaskExample>& examples, TaskKind kind,
                         const std::filesystem::path& path);
std::vector<TaskExample> read_task_examples(const std::filesystem::path& path, TaskKind kind);

// Label-set files: one label per line, id = line number.
void write_labels(const std::vector<std::string>& labels, const std::filesystem::path& path);
std::vector<std::string> read_labels(const std::filesystem::path& path);

// Sorted distinct labels (or tags) used by the examples.
std::vector<std::string> infer_labels(const std::vector<TaskExample>& examples, TaskKind kind);

// Throws ConfigError naming the first example label outside the label set.
void check_label_set(const TaskDataset& dataset);

// Piece-level tag for every position of an encoded sequence. Continuation
// pieces of a B-x word become I-x; other tags repeat. Specials and padding
// get kIgnoreLabel (-1).
std::vector<std::int64_t> align_word_tags(const TokenizedPair& pair,
                                          std::span<const std::int64_t> word_tags,
                                          const std::vector<std::string>& labels);

// Inputs for one fine-tuning step. labels is per example for classification
// tasks and per row (batch*seq, kIgnoreLabel for pad/special) for tagging.
struct TaskBatch {
  SequenceBatch sequences;
  std::vector<std::int64_t> labels;
  Tensor current_intents;  // proactive only: batch x num_intents
};

TaskBatch encode_task_batch(const TaskDataset& dataset,
                                   std::span<const std::size_t> indices, const Vocab& vocab,
                                   std::size_t max_len);

}  // namespace redbert
