#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

namespace brewrank {

using Timestamp = std::int64_t;
using KeyValue = std::pair<std::string, std::string>;

struct MemberProfile {
  std::string member_id;
  std::vector<KeyValue> fields;
  std::optional<std::string> region_tag;

  bool operator==(const MemberProfile&) const = default;
};

struct Item {
  std::string item_id;
  std::string item_type;
  std::vector<KeyValue> attributes;
  std::string description;

  bool operator==(const Item&) const = default;
};

struct Interaction {
  std::string member_id;
  std::string item_id;
  std::string action;
  Timestamp timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

enum class DomainClass { T1, T2 };

const char* to_string(DomainClass domain);
DomainClass domain_class_from_string(std::string_view text);

/// A prediction task: what the prompt asks and which answers are scored.
///
/// Beyond instruction/vocabulary/answers, a task carries the wording the
/// prompt needs to talk about its items: the item noun ("job"/"jobs"),
/// the question sentence, and optional per-action verb phrases
/// ("applied" -> "applied to").
struct TaskSpec {
  std::string task_id;
  std::string surface;
  std::string instruction;
  std::optional<std::string> note;
  std::vector<std::string> action_vocabulary;
  std::vector<std::string> positive_actions;
  std::string answer_positive;
  std::string answer_negative;
  DomainClass domain_class = DomainClass::T1;

  std::string item_noun = "job";
  std::string item_noun_plural = "jobs";
  std::string question = "Will the member apply to the following job";
  std::map<std::string, std::string> action_phrases;

  /// Phrase used in history group headers; falls back to the action itself.
  std::string phrase_for(std::string_view action) const;
  bool in_vocabulary(std::string_view action) const;
  bool is_positive(std::string_view action) const;

  /// Throws Error(InvalidArgument) when an invariant is broken.
  void check() const;
};

nlohmann::json to_json(const TaskSpec& task);
TaskSpec task_from_json(const nlohmann::json& j);
TaskSpec load_task(const std::filesystem::path& path);

/// Immutable member/item/interaction store with a per-member history index
/// sorted ascending by (timestamp, item_id).
class Dataset {
 public:
  Dataset() = default;

  /// Builds indices; throws on duplicate ids or dangling references.
  Dataset(std::vector<MemberProfile> members, std::vector<Item> items,
          std::vector<Interaction> interactions);

  /// Builds without validating; used to inspect broken data with validate().
  static Dataset unchecked(std::vector<MemberProfile> members, std::vector<Item> items,
                           std::vector<Interaction> interactions);

  const std::vector<MemberProfile>& members() const { return members_; }
  const std::vector<Item>& items() const { return items_; }
  const std::vector<Interaction>& interactions() const { return interactions_; }

  const MemberProfile* find_member(std::string_view member_id) const;
  const Item* find_item(std::string_view item_id) const;
  const MemberProfile& member(std::string_view member_id) const;
  const Item& item(std::string_view item_id) const;

  /// All interactions of a member, ascending by (timestamp, item_id).
  std::span<const Interaction> member_history(std::string_view member_id) const;

  /// Canonical serialization: members, items, interactions each in sorted
  /// order. Equal datasets serialize to identical bytes.
  std::string serialize() const;

 private:
  void build_index();

  std::vector<MemberProfile> members_;
  std::vector<Item> items_;
  std::vector<Interaction> interactions_;  // sorted (member, timestamp, item, action)
  std::unordered_map<std::string, std::size_t> member_pos_;
  std::unordered_map<std::string, std::size_t> item_pos_;
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> history_range_;
};

// JSONL line codecs. Unknown keys are rejected.
nlohmann::json to_json(const MemberProfile& member);
nlohmann::json to_json(const Item& item);
nlohmann::json to_json(const Interaction& interaction);
MemberProfile member_from_json(const nlohmann::json& j);
Item item_from_json(const nlohmann::json& j);
Interaction interaction_from_json(const nlohmann::json& j);

Dataset load_dataset(const std::filesystem::path& member_path,
                     const std::filesystem::path& item_path,
                     const std::filesystem::path& interaction_path);

/// Loads members.jsonl / items.jsonl / interactions.jsonl from a directory.
Dataset load_dataset_dir(const std::filesystem::path& dir);

/// Writes the three JSONL files in canonical order.
void write_dataset_dir(const Dataset& dataset, const std::filesystem::path& dir);

/// The most recent `max_items` interactions strictly before `cutoff`,
/// returned oldest-first.
std::vector<Interaction> history_for(const Dataset& dataset, std::string_view member_id,
                                     Timestamp cutoff, std::size_t max_items);

struct Violation {
  std::string rule;
  std::string detail;
};

/// Every invariant violation in the dataset; empty iff well-formed.
std::vector<Violation> validate(const Dataset& dataset);

}  // namespace brewrank
