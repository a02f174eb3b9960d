#pragma once

// Topic hierarchy that shapes the conversation flow, plus the per-user
// preference and coverage records kept in the dialogue state.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace nuanced {

struct Topic {
  std::string id;
  std::string label;
  std::optional<std::string> parent;
  std::vector<std::string> children;
};

/// Immutable rooted tree of topics.
class TopicGraph {
 public:
  /// Validates the tree; throws DuplicateId, DanglingParent or CycleDetected.
  TopicGraph(std::vector<Topic> topics, std::string root);

  const std::string& root() const noexcept { return root_; }
  bool contains(std::string_view id) const { return index_.find(std::string(id)) != index_.end(); }
  /// Throws UnknownTopic.
  const Topic& at(std::string_view id) const;
  std::size_t size() const noexcept { return topics_.size(); }
  const std::vector<Topic>& topics() const noexcept { return topics_; }

  /// Parent chain of `id`, nearest first.
  std::vector<std::string> ancestors(std::string_view id) const;
  std::vector<std::string> siblings(std::string_view id) const;
  /// Tree distance between two topics.
  std::size_t distance(std::string_view from, std::string_view to) const;

 private:
  std::vector<Topic> topics_;
  std::map<std::string, std::size_t> index_;
  std::string root_;
};

/// Accepts either a nested tree `{id, label, children: [...]}` or a flat
/// form `{root, topics: [{id, label, parent}]}`.
TopicGraph load_topic_graph(const nlohmann::json& document);
TopicGraph load_topic_graph_file(const std::string& path);
/// The bundled everyday-life ontology.
TopicGraph demo_topic_graph();

enum class Sentiment { positive, negative, neutral };
std::string_view to_string(Sentiment s);
std::optional<Sentiment> sentiment_from_string(std::string_view name);

enum class SentenceType { yes_no_question, positive_statement, open_question, goal_proposal, exhortative };
std::string_view to_string(SentenceType t);
std::optional<SentenceType> sentence_type_from_string(std::string_view name);
inline bool is_question(SentenceType t) {
  return t == SentenceType::yes_no_question || t == SentenceType::open_question;
}

/// Like (+1), unknown (0) or dislike (-1) per topic; absent means 0.
class PreferenceStore {
 public:
  int score(std::string_view topic) const;
  void set(const TopicGraph& graph, const std::string& topic, int score);
  /// No graph check; used when restoring serialized state.
  void assign(const std::string& topic, int score) { scores_[topic] = score; }
  const std::map<std::string, int>& scores() const noexcept { return scores_; }
  bool operator==(const PreferenceStore&) const = default;

 private:
  std::map<std::string, int> scores_;
};

/// Turns spent per topic; counts only ever grow.
class CoverageLedger {
 public:
  std::uint32_t visits(std::string_view topic) const;
  void record_visit(const TopicGraph& graph, const std::string& topic);
  void set(const std::string& topic, std::uint32_t count) { visits_[topic] = count; }
  const std::map<std::string, std::uint32_t>& visits() const noexcept { return visits_; }
  bool operator==(const CoverageLedger&) const = default;

 private:
  std::map<std::string, std::uint32_t> visits_;
};

struct TraversalPolicy {
  std::uint32_t exhaustion_threshold = 3;
  std::size_t candidate_limit = 12;
};

/// Related topics offered to the model: children, then siblings, then the
/// parent chain (nearest first), deduplicated and capped at `limit`.
std::vector<std::string> candidate_topics(const TopicGraph& graph, std::string_view current,
                                          std::size_t limit);

struct TopicPlan {
  std::string topic;
  SentenceType type;
  bool jump = false;  // the model's detected topic moved the conversation
  bool operator==(const TopicPlan&) const = default;
};

/// Decides the topic and sentence type of the next continuation.
TopicPlan next_topic(const TopicGraph& graph, const CoverageLedger& coverage,
                     const PreferenceStore& prefs, std::string_view current,
                     const std::optional<std::string>& model_topic,
                     const TraversalPolicy& policy = {});

/// Last signal wins; neutral leaves the score alone.
PreferenceStore update_preference(const TopicGraph& graph, PreferenceStore prefs,
                                  const std::string& topic, Sentiment sentiment);

}  // namespace nuanced
