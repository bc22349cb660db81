#include "brewrank/entities.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "brewrank/error.hpp"

namespace brewrank {

using nlohmann::json;

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "parse";
    case ErrorKind::DuplicateId: return "duplicate-id";
    case ErrorKind::DanglingReference: return "dangling-reference";
    case ErrorKind::UnknownId: return "unknown-id";
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::UnknownAction: return "unknown-action";
    case ErrorKind::IrreducibleOverflow: return "irreducible-overflow";
    case ErrorKind::Transport: return "transport";
    case ErrorKind::BackendRefusal: return "backend-refusal";
    case ErrorKind::MalformedResponse: return "malformed-response";
    case ErrorKind::CacheMiss: return "cache-miss";
    case ErrorKind::Provenance: return "provenance";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

const char* to_string(DomainClass domain) { return domain == DomainClass::T1 ? "T1" : "T2"; }

DomainClass domain_class_from_string(std::string_view text) {
  if (text == "T1") return DomainClass::T1;
  if (text == "T2") return DomainClass::T2;
  throw Error(ErrorKind::InvalidArgument, "domain_class must be T1 or T2, got '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// TaskSpec

std::string TaskSpec::phrase_for(std::string_view action) const {
  auto it = action_phrases.find(std::string(action));
  return it == action_phrases.end() ? std::string(action) : it->second;
}

bool TaskSpec::in_vocabulary(std::string_view action) const {
  return std::find(action_vocabulary.begin(), action_vocabulary.end(), action) !=
         action_vocabulary.end();
}

bool TaskSpec::is_positive(std::string_view action) const {
  return std::find(positive_actions.begin(), positive_actions.end(), action) !=
         positive_actions.end();
}

void TaskSpec::check() const {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorKind::InvalidArgument, "task '" + task_id + "': " + why);
  };
  if (task_id.empty()) fail("task_id is empty");
  if (instruction.empty()) fail("instruction is empty");
  if (action_vocabulary.empty()) fail("action_vocabulary is empty");
  if (positive_actions.empty()) fail("positive_actions is empty");
  for (const auto& a : positive_actions)
    if (!in_vocabulary(a)) fail("positive action '" + a + "' not in action_vocabulary");
  if (answer_positive.empty() || answer_negative.empty()) fail("answers must be non-empty");
  if (answer_positive == answer_negative) fail("answer_positive equals answer_negative");
  std::set<std::string> seen;
  for (const auto& a : action_vocabulary)
    if (!seen.insert(a).second) fail("duplicate action '" + a + "' in action_vocabulary");
}

namespace {

void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> allowed,
                         std::string_view what) {
  if (!j.is_object()) throw Error(ErrorKind::Parse, std::string(what) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw Error(ErrorKind::Parse, std::string(what) + ": unknown key '" + key + "'");
  }
}

template <typename T>
T required(const json& j, const char* key, std::string_view what) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorKind::Parse, std::string(what) + ": missing key '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string(what) + ": bad value for '" + key + "': " + e.what());
  }
}

std::vector<KeyValue> pairs_from_json(const json& j, const char* key, std::string_view what) {
  auto raw = required<std::vector<std::vector<std::string>>>(j, key, what);
  std::vector<KeyValue> out;
  out.reserve(raw.size());
  for (auto& p : raw) {
    if (p.size() != 2)
      throw Error(ErrorKind::Parse, std::string(what) + ": '" + key + "' entries must be [key, value] pairs");
    out.emplace_back(std::move(p[0]), std::move(p[1]));
  }
  return out;
}

json pairs_to_json(const std::vector<KeyValue>& pairs) {
  json arr = json::array();
  for (const auto& [k, v] : pairs) arr.push_back(json::array({k, v}));
  return arr;
}

}  // namespace

json to_json(const TaskSpec& task) {
  json j = {
      {"task_id", task.task_id},
      {"surface", task.surface},
      {"instruction", task.instruction},
      {"action_vocabulary", task.action_vocabulary},
      {"positive_actions", task.positive_actions},
      {"answer_positive", task.answer_positive},
      {"answer_negative", task.answer_negative},
      {"domain_class", to_string(task.domain_class)},
      {"item_noun", task.item_noun},
      {"item_noun_plural", task.item_noun_plural},
      {"question", task.question},
      {"action_phrases", task.action_phrases},
  };
  j["note"] = task.note ? json(*task.note) : json(nullptr);
  return j;
}

TaskSpec task_from_json(const json& j) {
  constexpr std::string_view what = "task";
  reject_unknown_keys(j,
                      {"task_id", "surface", "instruction", "note", "action_vocabulary",
                       "positive_actions", "answer_positive", "answer_negative", "domain_class",
                       "item_noun", "item_noun_plural", "question", "action_phrases"},
                      what);
  TaskSpec t;
  t.task_id = required<std::string>(j, "task_id", what);
  t.surface = j.value("surface", std::string{});
  t.instruction = required<std::string>(j, "instruction", what);
  if (auto it = j.find("note"); it != j.end() && !it->is_null()) t.note = it->get<std::string>();
  t.action_vocabulary = required<std::vector<std::string>>(j, "action_vocabulary", what);
  t.positive_actions = required<std::vector<std::string>>(j, "positive_actions", what);
  t.answer_positive = required<std::string>(j, "answer_positive", what);
  t.answer_negative = required<std::string>(j, "answer_negative", what);
  if (j.contains("domain_class"))
    t.domain_class = domain_class_from_string(j.at("domain_class").get<std::string>());
  t.item_noun = j.value("item_noun", t.item_noun);
  t.item_noun_plural = j.value("item_noun_plural", t.item_noun_plural);
  t.question = j.value("question", t.question);
  if (j.contains("action_phrases"))
    t.action_phrases = j.at("action_phrases").get<std::map<std::string, std::string>>();
  t.check();
  return t;
}

TaskSpec load_task(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open task file " + path.string());
  try {
    return task_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// JSONL codecs

json to_json(const MemberProfile& member) {
  return {{"member_id", member.member_id},
          {"fields", pairs_to_json(member.fields)},
          {"region_tag", member.region_tag ? json(*member.region_tag) : json(nullptr)}};
}

json to_json(const Item& item) {
  return {{"item_id", item.item_id},
          {"item_type", item.item_type},
          {"attributes", pairs_to_json(item.attributes)},
          {"description", item.description}};
}

json to_json(const Interaction& interaction) {
  return {{"member_id", interaction.member_id},
          {"item_id", interaction.item_id},
          {"action", interaction.action},
          {"timestamp", interaction.timestamp}};
}

MemberProfile member_from_json(const json& j) {
  constexpr std::string_view what = "member";
  reject_unknown_keys(j, {"member_id", "fields", "region_tag"}, what);
  MemberProfile m;
  m.member_id = required<std::string>(j, "member_id", what);
  m.fields = pairs_from_json(j, "fields", what);
  if (auto it = j.find("region_tag"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw Error(ErrorKind::Parse, "member: region_tag must be a string or null");
    m.region_tag = it->get<std::string>();
  }
  return m;
}

Item item_from_json(const json& j) {
  constexpr std::string_view what = "item";
  reject_unknown_keys(j, {"item_id", "item_type", "attributes", "description"}, what);
  Item it;
  it.item_id = required<std::string>(j, "item_id", what);
  it.item_type = required<std::string>(j, "item_type", what);
  it.attributes = pairs_from_json(j, "attributes", what);
  it.description = required<std::string>(j, "description", what);
  return it;
}

Interaction interaction_from_json(const json& j) {
  constexpr std::string_view what = "interaction";
  reject_unknown_keys(j, {"member_id", "item_id", "action", "timestamp"}, what);
  Interaction x;
  x.member_id = required<std::string>(j, "member_id", what);
  x.item_id = required<std::string>(j, "item_id", what);
  x.action = required<std::string>(j, "action", what);
  const auto& ts = j.at("timestamp");
  if (!ts.is_number_integer()) throw Error(ErrorKind::Parse, "interaction: timestamp must be an integer");
  x.timestamp = ts.get<Timestamp>();
  return x;
}

// ---------------------------------------------------------------------------
// Dataset

namespace {

auto interaction_order(const Interaction& a, const Interaction& b) {
  return std::tie(a.member_id, a.timestamp, a.item_id, a.action) <
         std::tie(b.member_id, b.timestamp, b.item_id, b.action);
}

}  // namespace

Dataset Dataset::unchecked(std::vector<MemberProfile> members, std::vector<Item> items,
                           std::vector<Interaction> interactions) {
  Dataset d;
  d.members_ = std::move(members);
  d.items_ = std::move(items);
  d.interactions_ = std::move(interactions);
  d.build_index();
  return d;
}

Dataset::Dataset(std::vector<MemberProfile> members, std::vector<Item> items,
                 std::vector<Interaction> interactions)
    : members_(std::move(members)), items_(std::move(items)), interactions_(std::move(interactions)) {
  build_index();
  std::set<std::string> seen;
  for (const auto& m : members_) {
    if (m.member_id.empty()) throw Error(ErrorKind::InvalidArgument, "empty member_id");
    if (!seen.insert(m.member_id).second)
      throw Error(ErrorKind::DuplicateId, "duplicate member_id '" + m.member_id + "'");
  }
  seen.clear();
  for (const auto& it : items_) {
    if (it.item_id.empty()) throw Error(ErrorKind::InvalidArgument, "empty item_id");
    if (!seen.insert(it.item_id).second)
      throw Error(ErrorKind::DuplicateId, "duplicate item_id '" + it.item_id + "'");
  }
  for (std::size_t i = 0; i < interactions_.size(); ++i) {
    const auto& x = interactions_[i];
    if (!member_pos_.contains(x.member_id))
      throw Error(ErrorKind::DanglingReference, "interaction references unknown member_id '" + x.member_id + "'");
    if (!item_pos_.contains(x.item_id))
      throw Error(ErrorKind::DanglingReference, "interaction references unknown item_id '" + x.item_id + "'");
    if (x.timestamp < 0)
      throw Error(ErrorKind::InvalidArgument, "negative timestamp for member '" + x.member_id + "'");
    if (i > 0 && interactions_[i - 1] == x)
      throw Error(ErrorKind::DuplicateId, "duplicate interaction (" + x.member_id + ", " + x.item_id +
                                              ", " + x.action + ", " + std::to_string(x.timestamp) + ")");
  }
}

void Dataset::build_index() {
  std::sort(members_.begin(), members_.end(),
            [](const auto& a, const auto& b) { return a.member_id < b.member_id; });
  std::sort(items_.begin(), items_.end(), [](const auto& a, const auto& b) { return a.item_id < b.item_id; });
  std::sort(interactions_.begin(), interactions_.end(), interaction_order);
  member_pos_.clear();
  item_pos_.clear();
  history_range_.clear();
  for (std::size_t i = 0; i < members_.size(); ++i) member_pos_.emplace(members_[i].member_id, i);
  for (std::size_t i = 0; i < items_.size(); ++i) item_pos_.emplace(items_[i].item_id, i);
  std::size_t begin = 0;
  while (begin < interactions_.size()) {
    std::size_t end = begin;
    while (end < interactions_.size() && interactions_[end].member_id == interactions_[begin].member_id) ++end;
    history_range_.emplace(interactions_[begin].member_id, std::make_pair(begin, end));
    begin = end;
  }
}

const MemberProfile* Dataset::find_member(std::string_view member_id) const {
  auto it = member_pos_.find(std::string(member_id));
  return it == member_pos_.end() ? nullptr : &members_[it->second];
}

const Item* Dataset::find_item(std::string_view item_id) const {
  auto it = item_pos_.find(std::string(item_id));
  return it == item_pos_.end() ? nullptr : &items_[it->second];
}

const MemberProfile& Dataset::member(std::string_view member_id) const {
  if (const auto* m = find_member(member_id)) return *m;
  throw Error(ErrorKind::UnknownId, "unknown member_id '" + std::string(member_id) + "'");
}

const Item& Dataset::item(std::string_view item_id) const {
  if (const auto* it = find_item(item_id)) return *it;
  throw Error(ErrorKind::UnknownId, "unknown item_id '" + std::string(item_id) + "'");
}

std::span<const Interaction> Dataset::member_history(std::string_view member_id) const {
  auto it = history_range_.find(std::string(member_id));
  if (it == history_range_.end()) return {};
  return std::span<const Interaction>(interactions_).subspan(it->second.first,
                                                             it->second.second - it->second.first);
}

std::string Dataset::serialize() const {
  std::string out;
  for (const auto& m : members_) out += to_json(m).dump() + '\n';
  out += "--\n";
  for (const auto& it : items_) out += to_json(it).dump() + '\n';
  out += "--\n";
  for (const auto& x : interactions_) out += to_json(x).dump() + '\n';
  return out;
}

namespace {

template <typename T, typename Decode>
std::vector<T> read_jsonl(const std::filesystem::path& path, Decode decode) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(decode(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.kind(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& row : rows) out << to_json(row).dump() << '\n';
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& member_path, const std::filesystem::path& item_path,
                     const std::filesystem::path& interaction_path) {
  auto members = read_jsonl<MemberProfile>(member_path, member_from_json);
  auto items = read_jsonl<Item>(item_path, item_from_json);
  auto interactions = read_jsonl<Interaction>(interaction_path, interaction_from_json);
  return Dataset(std::move(members), std::move(items), std::move(interactions));
}

Dataset load_dataset_dir(const std::filesystem::path& dir) {
  return load_dataset(dir / "members.jsonl", dir / "items.jsonl", dir / "interactions.jsonl");
}

void write_dataset_dir(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_jsonl(dir / "members.jsonl", dataset.members());
  write_jsonl(dir / "items.jsonl", dataset.items());
  write_jsonl(dir / "interactions.jsonl", dataset.interactions());
}

std::vector<Interaction> history_for(const Dataset& dataset, std::string_view member_id, Timestamp cutoff,
                                     std::size_t max_items) {
  if (!dataset.find_member(member_id))
    throw Error(ErrorKind::UnknownId, "unknown member_id '" + std::string(member_id) + "'");
  if (max_items == 0) throw Error(ErrorKind::InvalidArgument, "max_items must be positive");
  auto all = dataset.member_history(member_id);
  auto end = std::partition_point(all.begin(), all.end(),
                                  [cutoff](const Interaction& x) { return x.timestamp < cutoff; });
  auto count = static_cast<std::size_t>(end - all.begin());
  auto begin = end - static_cast<std::ptrdiff_t>(std::min(count, max_items));
  return {begin, end};
}

std::vector<Violation> validate(const Dataset& dataset) {
  std::vector<Violation> report;
  std::map<std::string, int> member_counts;
  std::map<std::string, int> item_counts;
  for (const auto& m : dataset.members()) {
    if (m.member_id.empty()) report.push_back({"member-id-empty", "member with empty member_id"});
    ++member_counts[m.member_id];
    for (const auto& [k, v] : m.fields)
      if (k.empty()) report.push_back({"field-key-empty", "member '" + m.member_id + "' has an empty field key"});
  }
  for (const auto& [id, n] : member_counts)
    if (n > 1) report.push_back({"member-id-unique", "member_id '" + id + "' appears " + std::to_string(n) + " times"});
  for (const auto& it : dataset.items()) {
    if (it.item_id.empty()) report.push_back({"item-id-empty", "item with empty item_id"});
    ++item_counts[it.item_id];
  }
  for (const auto& [id, n] : item_counts)
    if (n > 1) report.push_back({"item-id-unique", "item_id '" + id + "' appears " + std::to_string(n) + " times"});

  const auto& xs = dataset.interactions();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto& x = xs[i];
    if (!member_counts.contains(x.member_id))
      report.push_back({"interaction-member-exists", "interaction references unknown member_id '" + x.member_id + "'"});
    if (!item_counts.contains(x.item_id))
      report.push_back({"interaction-item-exists", "interaction references unknown item_id '" + x.item_id + "'"});
    if (x.timestamp < 0)
      report.push_back({"timestamp-non-negative", "interaction (" + x.member_id + ", " + x.item_id + ") has timestamp " +
                                                      std::to_string(x.timestamp)});
    if (i > 0 && xs[i - 1] == x)
      report.push_back({"interaction-unique", "duplicate interaction (" + x.member_id + ", " + x.item_id + ", " +
                                                  x.action + ", " + std::to_string(x.timestamp) + ")"});
  }

  std::size_t indexed = 0;
  std::size_t expected = 0;
  for (const auto& [id, _] : member_counts) indexed += dataset.member_history(id).size();
  for (const auto& x : xs) expected += member_counts.contains(x.member_id) ? 1 : 0;
  if (indexed != expected)
    report.push_back({"index-coverage", "history index covers " + std::to_string(indexed) + " of " +
                                            std::to_string(expected) + " interactions"});
  return report;
}

}  // namespace brewrank
