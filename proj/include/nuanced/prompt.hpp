#pragma once

// Prompt construction for the four model requests of a turn.

#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nuanced/knowledge_base.hpp"
#include "nuanced/nuance.hpp"
#include "nuanced/random.hpp"
#include "nuanced/tokenizer.hpp"

namespace nuanced {

enum class RequestKind { topic, sentiment, reply, continuation };
inline constexpr std::array<RequestKind, 4> kAllRequests = {
    RequestKind::topic, RequestKind::sentiment, RequestKind::reply, RequestKind::continuation};
std::string_view to_string(RequestKind kind);
std::optional<RequestKind> request_kind_from_string(std::string_view name);

enum class Role { system, user, assistant };
std::string_view to_string(Role role);

struct ChatMessage {
  Role role;
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

enum class Obligation { compulsory, optional, neutral_tone };
std::string_view to_string(Obligation o);

struct NuanceDirective {
  NuanceKind kind;
  std::string text;
  Obligation obligation;
};

/// A labelled run of system-message tokens [token_begin, token_end).
struct PromptSection {
  std::string label;
  std::optional<NuanceKind> nuance;
  std::size_t token_begin = 0;
  std::size_t token_end = 0;
  std::size_t tokens() const noexcept { return token_end - token_begin; }
};

inline constexpr std::string_view kToneDetectionSection = "tone_detection";

struct PromptBundle {
  RequestKind kind;
  std::vector<ChatMessage> messages;   // system message first
  std::vector<PromptSection> sections; // partition of the system message tokens
  std::vector<NuanceDirective> directives;

  const std::string& system() const { return messages.front().content; }
};

/// Sliding window of the last five (dialogue sentence, user sentence) turns.
class ConversationMemory {
 public:
  static constexpr std::size_t kCapacity = 5;

  struct Turn {
    std::string user;
    std::string dialogue;
    bool operator==(const Turn&) const = default;
  };

  void append(std::string dialogue, std::string user);
  const std::deque<Turn>& turns() const noexcept { return turns_; }
  std::size_t size() const noexcept { return turns_.size(); }
  bool operator==(const ConversationMemory&) const = default;

 private:
  std::deque<Turn> turns_;
};

struct FillerPool {
  std::vector<std::string> sentences;
  std::optional<std::size_t> last_used;
};

/// Uniform pick that never repeats the previous one when the pool has
/// more than one sentence.
std::string pick_filler(FillerPool& pool, Rng& rng);

NuanceDirective render_directive(const NuanceValues& values, const FlagVector& flags);

/// System prompt sources with `{placeholder}` slots; `{{` and `}}` escape braces.
struct PromptTemplates {
  std::string topic_system;
  std::string topic_user;
  std::string sentiment_system;
  std::string reply_system;
  std::string continuation_system;
  std::string tone_detection;

  /// The templates compiled into the library (copies of resources/templates).
  static PromptTemplates defaults();
  /// Reads `<dir>/<name>.txt` for each template; missing files fall back to defaults.
  static PromptTemplates load_dir(const std::string& dir);
};

std::vector<std::string> default_filler_sentences();

/// Renders `text` with `values`; throws TemplateError on an unknown slot.
std::string render_template(std::string_view text, const std::map<std::string, std::string>& values);

class PromptBuilder {
 public:
  explicit PromptBuilder(PromptTemplates templates = PromptTemplates::defaults(),
                         const Tokenizer& tokenizer = default_tokenizer());

  PromptBundle build_topic_prompt(std::string_view user_sentence,
                                  const std::vector<std::string>& candidates) const;
  PromptBundle build_sentiment_prompt(std::string_view user_sentence) const;
  PromptBundle build_reply_prompt(const NuanceState& nuances, const ConversationMemory& memory,
                                  std::string_view user_sentence, std::string_view topic_label) const;
  /// `user_sentence` and `reply` are the current turn's exchange so far.
  PromptBundle build_continuation_prompt(const NuanceState& nuances,
                                         const ConversationMemory& memory, const TopicPlan& plan,
                                         const TopicGraph& graph, std::string_view user_sentence,
                                         std::string_view reply) const;

  const Tokenizer& tokenizer() const noexcept { return *tokenizer_; }

 private:
  PromptBundle assemble(RequestKind kind, std::string_view system_template,
                        const std::map<std::string, std::string>& slots,
                        const std::map<std::string, std::optional<NuanceKind>>& slot_nuance,
                        std::vector<NuanceDirective> directives) const;

  PromptTemplates templates_;
  const Tokenizer* tokenizer_;
};

struct SectionCost {
  std::size_t tokens = 0;
  double fraction = 0.0;  // of all prompt tokens (every message)
};

struct DiversityCost {
  std::map<NuanceKind, SectionCost> per_nuance;
  SectionCost tone_detection;
  std::size_t system_tokens = 0;
  std::size_t total_tokens = 0;
};

DiversityCost diversity_cost(const PromptBundle& bundle,
                             const Tokenizer& tokenizer = default_tokenizer());

/// Prompt tokens of a whole message list.
std::size_t count_prompt_tokens(const std::vector<ChatMessage>& messages,
                                const Tokenizer& tokenizer = default_tokenizer());

}  // namespace nuanced
