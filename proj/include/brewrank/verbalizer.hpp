#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "brewrank/entities.hpp"
#include "brewrank/tokenizer.hpp"
#include "json.hpp"

namespace brewrank {

enum class SectionKind { Instruction, Note, MemberProfile, History, Question, Answer };

const char* to_string(SectionKind kind);
SectionKind section_kind_from_string(std::string_view text);

struct PromptSection {
  SectionKind kind;
  std::string label;  // the History label may contain "{item}"
};

/// Layout of a rendered prompt. The default reproduces the job
/// recommendation prompt: Instruction, Note, Member Profile, Past job
/// interaction data, Question, Answer.
struct PromptTemplate {
  std::string name = "standard";
  std::vector<PromptSection> sections;
  std::string history_group_header = "Member has {action} the following {items}:";
  std::string item_format = "[{fields}]";
  std::string description_key = "Description";
  std::string answer_stub = "The member will";
  std::string section_separator = "\n\n";

  static PromptTemplate standard();

  const PromptSection* find(SectionKind kind) const;
  void check() const;
};

nlohmann::json to_json(const PromptTemplate& tmpl);
PromptTemplate template_from_json(const nlohmann::json& j);
PromptTemplate load_template(const std::filesystem::path& path);

struct TokenBudget {
  std::size_t max_context_tokens = 2048;
  std::size_t reserved_completion_tokens = 0;

  std::size_t prompt_limit() const { return max_context_tokens - reserved_completion_tokens; }
  void check() const;
};

struct RenderedPrompt {
  std::string text;
  std::size_t token_count = 0;
  std::vector<std::string> included_interaction_keys;
  std::vector<std::string> truncated_interaction_keys;
  std::vector<std::string> question_item_ids;
};

using ItemLookup = std::function<const Item*(std::string_view item_id)>;

ItemLookup lookup_in(const Dataset& dataset);

/// Stable identifier of one history entry within a member's history.
std::string interaction_key(const Interaction& interaction);

std::string render_item(const Item& item, const PromptTemplate& tmpl = PromptTemplate::standard());

std::string render_member(const MemberProfile& profile,
                          const PromptTemplate& tmpl = PromptTemplate::standard());

/// One line per action (vocabulary order) that has interactions; items
/// oldest-first within a line. Empty history renders as "".
std::string render_history(std::span<const Interaction> interactions, const ItemLookup& items,
                           const TaskSpec& task,
                           const PromptTemplate& tmpl = PromptTemplate::standard());

struct BuildOptions {
  PromptTemplate tmpl = PromptTemplate::standard();
  /// Extra lines placed before the first section (e.g. an oracle marker).
  std::vector<std::string> preamble;
};

/// Renders the prompt, dropping whole history interactions oldest-first
/// until it fits `budget.prompt_limit()`. The included history is the
/// longest suffix of `history` that fits. Throws
/// Error(IrreducibleOverflow) when even an empty history does not fit.
RenderedPrompt build_prompt(const TaskSpec& task, const MemberProfile& profile,
                            std::span<const Interaction> history, const ItemLookup& items,
                            std::span<const Item> question_items, const TokenBudget& budget,
                            const Tokenizer& tokenizer, const BuildOptions& options = {});

}  // namespace brewrank
