#include "nuanced/knowledge_base.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <set>
#include <tuple>

#include "embedded_resources.hpp"
#include "nuanced/errors.hpp"

namespace nuanced {

using nlohmann::json;

// ── TopicGraph ──────────────────────────────────────────────────

TopicGraph::TopicGraph(std::vector<Topic> topics, std::string root)
    : topics_(std::move(topics)), root_(std::move(root)) {
  for (std::size_t i = 0; i < topics_.size(); ++i)
    if (!index_.emplace(topics_[i].id, i).second) throw DuplicateId(topics_[i].id);
  if (!contains(root_)) throw OntologyError("root topic '" + root_ + "' is missing");
  if (topics_[index_.at(root_)].parent) throw OntologyError("root topic has a parent");

  for (auto& t : topics_) t.children.clear();
  for (const auto& t : topics_) {
    if (t.id == root_) continue;
    if (!t.parent) throw OntologyError("topic '" + t.id + "' has no parent but is not the root");
    auto it = index_.find(*t.parent);
    if (it == index_.end()) throw DanglingParent(t.id, *t.parent);
    topics_[it->second].children.push_back(t.id);
  }

  // Every topic must reach the root by walking parents.
  for (const auto& t : topics_) {
    std::set<std::string> seen;
    const Topic* cur = &t;
    while (cur->parent) {
      if (!seen.insert(cur->id).second) throw CycleDetected(cur->id);
      cur = &topics_[index_.at(*cur->parent)];
    }
    if (cur->id != root_) throw CycleDetected(t.id);
  }
}

const Topic& TopicGraph::at(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) throw UnknownTopic(std::string(id));
  return topics_[it->second];
}

std::vector<std::string> TopicGraph::ancestors(std::string_view id) const {
  std::vector<std::string> out;
  const Topic* cur = &at(id);
  while (cur->parent) {
    out.push_back(*cur->parent);
    cur = &at(*cur->parent);
  }
  return out;
}

std::vector<std::string> TopicGraph::siblings(std::string_view id) const {
  const Topic& t = at(id);
  if (!t.parent) return {};
  std::vector<std::string> out;
  for (const auto& c : at(*t.parent).children)
    if (c != t.id) out.push_back(c);
  return out;
}

std::size_t TopicGraph::distance(std::string_view from, std::string_view to) const {
  auto chain_from = ancestors(from);
  chain_from.insert(chain_from.begin(), std::string(from));
  auto chain_to = ancestors(to);
  chain_to.insert(chain_to.begin(), std::string(to));
  for (std::size_t i = 0; i < chain_from.size(); ++i) {
    auto it = std::find(chain_to.begin(), chain_to.end(), chain_from[i]);
    if (it != chain_to.end()) return i + static_cast<std::size_t>(it - chain_to.begin());
  }
  return chain_from.size() + chain_to.size();
}

// ── loading ─────────────────────────────────────────────────────

namespace {

void flatten(const json& node, const std::optional<std::string>& parent,
             std::vector<Topic>& out, std::size_t depth) {
  if (depth > 10000) throw OntologyError("ontology nesting is too deep");
  if (!node.is_object() || !node.contains("id") || !node["id"].is_string())
    throw OntologyError("topic node needs a string id");
  Topic t;
  t.id = node["id"].get<std::string>();
  if (t.id.empty()) throw OntologyError("topic id is empty");
  t.label = node.value("label", t.id);
  t.parent = parent;
  out.push_back(t);
  if (node.contains("children")) {
    if (!node["children"].is_array()) throw OntologyError("children must be an array");
    for (const auto& child : node["children"]) flatten(child, t.id, out, depth + 1);
  }
}

}  // namespace

TopicGraph load_topic_graph(const json& document) {
  std::vector<Topic> topics;
  if (document.is_object() && document.contains("topics")) {
    if (!document.contains("root") || !document["root"].is_string())
      throw OntologyError("flat ontology needs a root id");
    for (const auto& node : document["topics"]) {
      if (!node.is_object() || !node.contains("id") || !node["id"].is_string())
        throw OntologyError("topic node needs a string id");
      Topic t;
      t.id = node["id"].get<std::string>();
      t.label = node.value("label", t.id);
      if (node.contains("parent") && !node["parent"].is_null())
        t.parent = node["parent"].get<std::string>();
      topics.push_back(std::move(t));
    }
    return TopicGraph(std::move(topics), document["root"].get<std::string>());
  }
  flatten(document, std::nullopt, topics, 0);
  std::string root = topics.front().id;
  return TopicGraph(std::move(topics), std::move(root));
}

TopicGraph load_topic_graph_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw OntologyError("cannot open ontology " + path);
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw OntologyError("ontology " + path + ": " + e.what());
  }
  return load_topic_graph(doc);
}

TopicGraph demo_topic_graph() {
  return load_topic_graph(json::parse(detail::embedded_resource("ontology/demo.json")));
}

// ── enums ───────────────────────────────────────────────────────

std::string_view to_string(Sentiment s) {
  switch (s) {
    case Sentiment::positive: return "positive";
    case Sentiment::negative: return "negative";
    case Sentiment::neutral: return "neutral";
  }
  return "neutral";
}

std::optional<Sentiment> sentiment_from_string(std::string_view name) {
  for (auto s : {Sentiment::positive, Sentiment::negative, Sentiment::neutral})
    if (to_string(s) == name) return s;
  return std::nullopt;
}

std::string_view to_string(SentenceType t) {
  switch (t) {
    case SentenceType::yes_no_question: return "yes_no_question";
    case SentenceType::positive_statement: return "positive_statement";
    case SentenceType::open_question: return "open_question";
    case SentenceType::goal_proposal: return "goal_proposal";
    case SentenceType::exhortative: return "exhortative";
  }
  return "open_question";
}

std::optional<SentenceType> sentence_type_from_string(std::string_view name) {
  for (auto t : {SentenceType::yes_no_question, SentenceType::positive_statement,
                 SentenceType::open_question, SentenceType::goal_proposal, SentenceType::exhortative})
    if (to_string(t) == name) return t;
  return std::nullopt;
}

// ── preferences and coverage ────────────────────────────────────

int PreferenceStore::score(std::string_view topic) const {
  auto it = scores_.find(std::string(topic));
  return it == scores_.end() ? 0 : it->second;
}

void PreferenceStore::set(const TopicGraph& graph, const std::string& topic, int score) {
  if (!graph.contains(topic)) throw UnknownTopic(topic);
  if (score < -1 || score > 1) throw InvalidState("preference score must be -1, 0 or +1");
  scores_[topic] = score;
}

std::uint32_t CoverageLedger::visits(std::string_view topic) const {
  auto it = visits_.find(std::string(topic));
  return it == visits_.end() ? 0 : it->second;
}

void CoverageLedger::record_visit(const TopicGraph& graph, const std::string& topic) {
  if (!graph.contains(topic)) throw UnknownTopic(topic);
  ++visits_[topic];
}

PreferenceStore update_preference(const TopicGraph& graph, PreferenceStore prefs,
                                  const std::string& topic, Sentiment sentiment) {
  if (!graph.contains(topic)) throw UnknownTopic(topic);
  switch (sentiment) {
    case Sentiment::positive: prefs.set(graph, topic, +1); break;
    case Sentiment::negative: prefs.set(graph, topic, -1); break;
    case Sentiment::neutral: break;
  }
  return prefs;
}

// ── traversal ───────────────────────────────────────────────────

std::vector<std::string> candidate_topics(const TopicGraph& graph, std::string_view current,
                                          std::size_t limit) {
  const Topic& t = graph.at(current);
  std::vector<std::string> out;
  std::set<std::string> seen{t.id};
  auto add = [&](const std::vector<std::string>& ids) {
    for (const auto& id : ids) {
      if (out.size() >= limit) return;
      if (seen.insert(id).second) out.push_back(id);
    }
  };
  add(t.children);
  add(graph.siblings(current));
  add(graph.ancestors(current));
  return out;
}

namespace {

SentenceType opening_type(int score) {
  return score > 0 ? SentenceType::positive_statement : SentenceType::yes_no_question;
}

// Best of `ids` by (score desc, id asc).
std::optional<std::string> best_by_preference(std::vector<std::string> ids,
                                              const PreferenceStore& prefs) {
  if (ids.empty()) return std::nullopt;
  std::sort(ids.begin(), ids.end(), [&](const std::string& a, const std::string& b) {
    return std::make_tuple(-prefs.score(a), a) < std::make_tuple(-prefs.score(b), b);
  });
  return ids.front();
}

std::string structure_driven(const TopicGraph& graph, const CoverageLedger& coverage,
                             const PreferenceStore& prefs, std::string_view current) {
  auto fresh = [&](const std::string& id) {
    return id != current && coverage.visits(id) == 0 && prefs.score(id) >= 0;
  };
  auto filtered = [&](const std::vector<std::string>& ids) {
    std::vector<std::string> out;
    std::copy_if(ids.begin(), ids.end(), std::back_inserter(out), fresh);
    return out;
  };

  if (auto pick = best_by_preference(filtered(graph.at(current).children), prefs)) return *pick;
  if (auto pick = best_by_preference(filtered(graph.siblings(current)), prefs)) return *pick;

  // Breadth-first over the undirected tree, one distance level at a time.
  std::deque<std::string> frontier{std::string(current)};
  std::set<std::string> seen{std::string(current)};
  while (!frontier.empty()) {
    std::vector<std::string> level;
    const std::size_t width = frontier.size();
    for (std::size_t i = 0; i < width; ++i) {
      const Topic& t = graph.at(frontier.front());
      frontier.pop_front();
      std::vector<std::string> next = t.children;
      if (t.parent) next.push_back(*t.parent);
      for (auto& n : next)
        if (seen.insert(n).second) {
          level.push_back(n);
          frontier.push_back(n);
        }
    }
    if (auto pick = best_by_preference(filtered(level), prefs)) return *pick;
  }

  // Everything acceptable is visited: least visited, then nearest.
  std::vector<std::tuple<std::uint32_t, std::size_t, int, std::string>> visited;
  std::vector<std::tuple<std::size_t, std::string>> disliked;
  for (const auto& t : graph.topics()) {
    if (t.id == current) continue;
    if (prefs.score(t.id) >= 0)
      visited.emplace_back(coverage.visits(t.id), graph.distance(current, t.id), -prefs.score(t.id), t.id);
    else
      disliked.emplace_back(graph.distance(current, t.id), t.id);
  }
  if (!visited.empty()) return std::get<3>(*std::min_element(visited.begin(), visited.end()));
  if (!disliked.empty()) return std::get<1>(*std::min_element(disliked.begin(), disliked.end()));
  return std::string(current);
}

}  // namespace

TopicPlan next_topic(const TopicGraph& graph, const CoverageLedger& coverage,
                     const PreferenceStore& prefs, std::string_view current,
                     const std::optional<std::string>& model_topic, const TraversalPolicy& policy) {
  graph.at(current);
  if (model_topic) graph.at(*model_topic);

  if (model_topic && *model_topic != current)
    return {*model_topic, opening_type(prefs.score(*model_topic)), true};

  const std::uint32_t visits = coverage.visits(current);
  if (visits < policy.exhaustion_threshold) {
    const std::uint32_t step = visits == 0 ? 0 : visits - 1;
    return {std::string(current),
            step % 2 == 0 ? SentenceType::open_question : SentenceType::goal_proposal, false};
  }
  if (visits == policy.exhaustion_threshold)
    return {std::string(current), SentenceType::exhortative, false};

  auto next = structure_driven(graph, coverage, prefs, current);
  if (next == current) return {next, SentenceType::exhortative, false};
  return {next, opening_type(prefs.score(next)), false};
}

}  // namespace nuanced
