#include "nuanced/prompt.hpp"

#include <fstream>
#include <sstream>

#include "embedded_resources.hpp"
#include "nuanced/errors.hpp"

namespace nuanced {

std::string_view to_string(RequestKind kind) {
  switch (kind) {
    case RequestKind::topic: return "topic";
    case RequestKind::sentiment: return "sentiment";
    case RequestKind::reply: return "reply";
    case RequestKind::continuation: return "continuation";
  }
  return "reply";
}

std::optional<RequestKind> request_kind_from_string(std::string_view name) {
  for (auto k : kAllRequests)
    if (to_string(k) == name) return k;
  return std::nullopt;
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

std::string_view to_string(Obligation o) {
  switch (o) {
    case Obligation::compulsory: return "compulsory";
    case Obligation::optional: return "optional";
    case Obligation::neutral_tone: return "neutral_tone";
  }
  return "optional";
}

// ── memory and fillers ──────────────────────────────────────────

void ConversationMemory::append(std::string dialogue, std::string user) {
  turns_.push_back({std::move(user), std::move(dialogue)});
  while (turns_.size() > kCapacity) turns_.pop_front();
}

std::string pick_filler(FillerPool& pool, Rng& rng) {
  const std::size_t n = pool.sentences.size();
  if (n == 0) throw EmptyPool();
  std::size_t pick = 0;
  if (n > 1) {
    if (pool.last_used && *pool.last_used < n) {
      // Draw among the n - 1 others and step over the previous pick.
      pick = uniform_index(rng, n - 1);
      if (pick >= *pool.last_used) ++pick;
    } else {
      pick = uniform_index(rng, n);
    }
  }
  pool.last_used = pick;
  return pool.sentences[pick];
}

// ── directives ──────────────────────────────────────────────────

namespace {

std::string_view nuance_title(NuanceKind kind) {
  switch (kind) {
    case NuanceKind::diversity: return "Diversity";
    case NuanceKind::time: return "Time";
    case NuanceKind::place: return "Place";
    case NuanceKind::tone: return "Tone";
    case NuanceKind::speech_act: return "Speech act";
  }
  return "";
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string trim_final_newline(std::string s) {
  if (!s.empty() && s.back() == '\n') s.pop_back();
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

NuanceDirective render_directive(const NuanceValues& values, const FlagVector& flags) {
  if (flags.size() != values.flag_count()) throw DimensionMismatch(values.flag_count(), flags.size());
  const std::string title{nuance_title(values.kind)};

  if (!flags.is_free()) {
    const auto& value = values.labels[flags.active()];
    std::string text;
    switch (values.kind) {
      case NuanceKind::tone:
        text = title + " (compulsory): reply with a **" + value + "** tone.";
        break;
      case NuanceKind::speech_act:
        text = title + " (compulsory): the sentence must be **" + value + "**.";
        break;
      default:
        text = title + " (compulsory, you must use it): **" + values.fields[flags.active()] + ": " +
               value + "**.";
    }
    return {values.kind, std::move(text), Obligation::compulsory};
  }

  if (values.kind == NuanceKind::tone)
    return {values.kind,
            title + " (compulsory): keep a **neutral** tone and avoid abrupt tone changes.",
            Obligation::neutral_tone};

  if (values.kind == NuanceKind::speech_act)
    return {values.kind,
            title + " (optional): you may use one of these speech acts: **" + join(values.labels, ", ") +
                "**.",
            Obligation::optional};

  std::vector<std::string> pairs;
  for (std::size_t i = 0; i < values.value_count(); ++i)
    pairs.push_back(values.fields[i] + ": " + values.labels[i]);
  return {values.kind,
          title + " (optional, use it only if it fits): **" + join(pairs, "; ") + "**.",
          Obligation::optional};
}

// ── templates ───────────────────────────────────────────────────

namespace {

struct Segment {
  bool slot;
  std::string text;  // literal text or slot name
};

std::vector<Segment> parse_template(std::string_view text) {
  std::vector<Segment> out;
  std::string literal;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '{' && i + 1 < text.size() && text[i + 1] == '{') {
      literal += '{';
      ++i;
    } else if (c == '}' && i + 1 < text.size() && text[i + 1] == '}') {
      literal += '}';
      ++i;
    } else if (c == '{') {
      const auto close = text.find('}', i);
      if (close == std::string_view::npos) throw TemplateError("unterminated placeholder");
      if (!literal.empty()) out.push_back({false, std::move(literal)});
      literal.clear();
      out.push_back({true, std::string(text.substr(i + 1, close - i - 1))});
      i = close;
    } else if (c == '}') {
      throw TemplateError("stray '}' in template");
    } else {
      literal += c;
    }
  }
  if (!literal.empty()) out.push_back({false, std::move(literal)});
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string render_template(std::string_view text, const std::map<std::string, std::string>& values) {
  std::string out;
  for (const auto& seg : parse_template(text)) {
    if (!seg.slot) {
      out += seg.text;
      continue;
    }
    auto it = values.find(seg.text);
    if (it == values.end()) throw TemplateError("no value for placeholder {" + seg.text + "}");
    out += it->second;
  }
  return out;
}

PromptTemplates PromptTemplates::defaults() {
  auto get = [](std::string_view name) {
    return trim_final_newline(std::string(detail::embedded_resource(name)));
  };
  return {get("templates/topic_system.txt"),     get("templates/topic_user.txt"),
          get("templates/sentiment_system.txt"), get("templates/reply_system.txt"),
          get("templates/continuation_system.txt"), get("templates/tone_detection.txt")};
}

PromptTemplates PromptTemplates::load_dir(const std::string& dir) {
  PromptTemplates t = defaults();
  auto load = [&](std::string& slot, const std::string& name) {
    std::ifstream probe(dir + "/" + name + ".txt");
    if (probe) slot = trim_final_newline(read_file(dir + "/" + name + ".txt"));
  };
  load(t.topic_system, "topic_system");
  load(t.topic_user, "topic_user");
  load(t.sentiment_system, "sentiment_system");
  load(t.reply_system, "reply_system");
  load(t.continuation_system, "continuation_system");
  load(t.tone_detection, "tone_detection");
  return t;
}

std::vector<std::string> default_filler_sentences() {
  std::vector<std::string> out;
  std::istringstream in{std::string(detail::embedded_resource("fillers.txt"))};
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(line);
  return out;
}

// ── builder ─────────────────────────────────────────────────────

PromptBuilder::PromptBuilder(PromptTemplates templates, const Tokenizer& tokenizer)
    : templates_(std::move(templates)), tokenizer_(&tokenizer) {}

PromptBundle PromptBuilder::assemble(RequestKind kind, std::string_view system_template,
                                     const std::map<std::string, std::string>& slots,
                                     const std::map<std::string, std::optional<NuanceKind>>& slot_nuance,
                                     std::vector<NuanceDirective> directives) const {
  struct Range {
    std::string label;
    std::optional<NuanceKind> nuance;
    std::size_t begin, end;
  };
  std::string system;
  std::vector<Range> ranges;
  for (const auto& seg : parse_template(system_template)) {
    const std::size_t begin = system.size();
    if (!seg.slot) {
      system += seg.text;
      ranges.push_back({"instructions", std::nullopt, begin, system.size()});
      continue;
    }
    auto it = slots.find(seg.text);
    if (it == slots.end()) throw TemplateError("no value for placeholder {" + seg.text + "}");
    system += it->second;
    auto nu = slot_nuance.find(seg.text);
    ranges.push_back({seg.text, nu == slot_nuance.end() ? std::nullopt : nu->second, begin, system.size()});
  }

  // Each token belongs to the section holding its first byte.
  const auto tokens = tokenizer_->tokenize(system);
  PromptBundle bundle{kind, {{Role::system, system}}, {}, std::move(directives)};
  std::size_t t = 0;
  for (const auto& r : ranges) {
    const std::size_t first = t;
    while (t < tokens.size() && tokens[t].begin < r.end) ++t;
    bundle.sections.push_back({r.label, r.nuance, first, t});
  }
  return bundle;
}

PromptBundle PromptBuilder::build_topic_prompt(std::string_view user_sentence,
                                               const std::vector<std::string>& candidates) const {
  if (candidates.empty()) throw EmptyCandidates();
  auto bundle = assemble(RequestKind::topic, templates_.topic_system, {}, {}, {});
  bundle.messages.push_back(
      {Role::user, render_template(templates_.topic_user, {{"sentence", std::string(user_sentence)},
                                                            {"candidates", join(candidates, ", ")}})});
  return bundle;
}

PromptBundle PromptBuilder::build_sentiment_prompt(std::string_view user_sentence) const {
  if (user_sentence.empty()) throw EmptySentence();
  auto bundle = assemble(RequestKind::sentiment, templates_.sentiment_system, {}, {}, {});
  bundle.messages.push_back({Role::user, std::string(user_sentence)});
  return bundle;
}

namespace {

void add_memory(PromptBundle& bundle, const ConversationMemory& memory) {
  for (const auto& turn : memory.turns()) {
    bundle.messages.push_back({Role::user, turn.user});
    bundle.messages.push_back({Role::assistant, turn.dialogue});
  }
}

void check_nuances(const NuanceState& nuances) {
  validate(nuances);
}

std::map<std::string, std::optional<NuanceKind>> nuance_slots() {
  std::map<std::string, std::optional<NuanceKind>> out;
  for (auto kind : kAllNuances) out[std::string(to_string(kind))] = kind;
  return out;
}

std::string sentence_instruction(SentenceType type, const std::string& topic) {
  const std::string t = "**" + topic + "**";
  switch (type) {
    case SentenceType::yes_no_question:
      return "Ask the person a yes/no question about " + t + ".";
    case SentenceType::positive_statement:
      return "Make a positive statement about " + t + ", a topic the person likes.";
    case SentenceType::open_question:
      return "Ask the person an open question to explore " + t + " further.";
    case SentenceType::goal_proposal:
      return "Propose to the person something to do related to " + t + ".";
    case SentenceType::exhortative:
      return "The topic " + t +
             " has been thoroughly discussed: encourage the person to choose a new subject to talk about.";
  }
  return "";
}

}  // namespace

PromptBundle PromptBuilder::build_reply_prompt(const NuanceState& nuances,
                                               const ConversationMemory& memory,
                                               std::string_view user_sentence,
                                               std::string_view topic_label) const {
  check_nuances(nuances);
  if (user_sentence.empty()) throw EmptySentence();
  std::map<std::string, std::string> slots{{"tone_detection", templates_.tone_detection},
                                           {"topic", std::string(topic_label)}};
  std::vector<NuanceDirective> directives;
  for (auto kind : kAllNuances) {
    auto d = render_directive(nuances.values_of(kind), nuances.flags_of(kind));
    slots[std::string(to_string(kind))] = d.text;
    directives.push_back(std::move(d));
  }
  auto bundle = assemble(RequestKind::reply, templates_.reply_system, slots, nuance_slots(),
                         std::move(directives));
  add_memory(bundle, memory);
  bundle.messages.push_back({Role::user, std::string(user_sentence)});
  return bundle;
}

PromptBundle PromptBuilder::build_continuation_prompt(const NuanceState& nuances,
                                                      const ConversationMemory& memory,
                                                      const TopicPlan& plan, const TopicGraph& graph,
                                                      std::string_view user_sentence,
                                                      std::string_view reply) const {
  check_nuances(nuances);
  const Topic& topic = graph.at(plan.topic);
  std::map<std::string, std::string> slots{
      {"sentence_instruction", sentence_instruction(plan.type, topic.label)},
      {"topic", topic.label}};
  std::vector<NuanceDirective> directives;
  for (auto kind : kAllNuances) {
    FlagVector flags = nuances.flags_of(kind);
    // Questions always carry the directive speech act.
    if (kind == NuanceKind::speech_act && is_question(plan.type))
      flags = FlagVector(kind, flags.size(), kDirectiveIndex);
    auto d = render_directive(nuances.values_of(kind), flags);
    slots[std::string(to_string(kind))] = d.text;
    directives.push_back(std::move(d));
  }
  auto bundle = assemble(RequestKind::continuation, templates_.continuation_system, slots,
                         nuance_slots(), std::move(directives));
  add_memory(bundle, memory);
  if (!user_sentence.empty()) bundle.messages.push_back({Role::user, std::string(user_sentence)});
  if (!reply.empty()) bundle.messages.push_back({Role::assistant, std::string(reply)});
  return bundle;
}

// ── cost accounting ─────────────────────────────────────────────

std::size_t count_prompt_tokens(const std::vector<ChatMessage>& messages, const Tokenizer& tokenizer) {
  std::size_t total = 0;
  for (const auto& m : messages) total += tokenizer.count(m.content);
  return total;
}

DiversityCost diversity_cost(const PromptBundle& bundle, const Tokenizer& tokenizer) {
  DiversityCost cost;
  for (auto kind : kAllNuances) cost.per_nuance[kind] = {};
  cost.system_tokens = bundle.messages.empty() ? 0 : tokenizer.count(bundle.system());
  cost.total_tokens = count_prompt_tokens(bundle.messages, tokenizer);
  for (const auto& s : bundle.sections) {
    if (s.nuance) cost.per_nuance[*s.nuance].tokens += s.tokens();
    else if (s.label == kToneDetectionSection) cost.tone_detection.tokens += s.tokens();
  }
  auto frac = [&](std::size_t tokens) {
    return cost.total_tokens == 0 ? 0.0 : static_cast<double>(tokens) / static_cast<double>(cost.total_tokens);
  };
  for (auto& [kind, c] : cost.per_nuance) c.fraction = frac(c.tokens);
  cost.tone_detection.fraction = frac(cost.tone_detection.tokens);
  return cost;
}

}  // namespace nuanced
