#include "brewrank/verbalizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "brewrank/error.hpp"

namespace brewrank {

using nlohmann::json;

namespace {

constexpr std::pair<SectionKind, const char*> kSectionNames[] = {
    {SectionKind::Instruction, "instruction"}, {SectionKind::Note, "note"},
    {SectionKind::MemberProfile, "member_profile"}, {SectionKind::History, "history"},
    {SectionKind::Question, "question"}, {SectionKind::Answer, "answer"},
};

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

std::string join_pairs(const std::vector<KeyValue>& pairs) {
  std::string out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (i) out += ", ";
    out += pairs[i].first;
    out += ": ";
    out += pairs[i].second;
  }
  return out;
}

}  // namespace

const char* to_string(SectionKind kind) {
  for (const auto& [k, name] : kSectionNames)
    if (k == kind) return name;
  return "?";
}

SectionKind section_kind_from_string(std::string_view text) {
  for (const auto& [k, name] : kSectionNames)
    if (text == name) return k;
  throw Error(ErrorKind::Parse, "unknown prompt section '" + std::string(text) + "'");
}

PromptTemplate PromptTemplate::standard() {
  PromptTemplate t;
  t.sections = {
      {SectionKind::Instruction, "Instruction:"},
      {SectionKind::Note, "Note:"},
      {SectionKind::MemberProfile, "Member Profile:"},
      {SectionKind::History, "Past {item} interaction data:"},
      {SectionKind::Question, "Question:"},
      {SectionKind::Answer, "Answer:"},
  };
  return t;
}

const PromptSection* PromptTemplate::find(SectionKind kind) const {
  auto it = std::find_if(sections.begin(), sections.end(), [kind](const auto& s) { return s.kind == kind; });
  return it == sections.end() ? nullptr : &*it;
}

void PromptTemplate::check() const {
  std::set<SectionKind> seen;
  for (const auto& s : sections)
    if (!seen.insert(s.kind).second)
      throw Error(ErrorKind::InvalidArgument, std::string("template section repeated: ") + to_string(s.kind));
  for (auto required : {SectionKind::Instruction, SectionKind::MemberProfile, SectionKind::Question, SectionKind::Answer})
    if (!seen.contains(required))
      throw Error(ErrorKind::InvalidArgument, std::string("template lacks section: ") + to_string(required));
  // Answers are scored as continuations, so the stub has to end the prompt.
  if (sections.back().kind != SectionKind::Answer)
    throw Error(ErrorKind::InvalidArgument, "template: the answer section must come last");
  if (history_group_header.find("{action}") == std::string::npos)
    throw Error(ErrorKind::InvalidArgument, "history_group_header must contain {action}");
  if (item_format.find("{fields}") == std::string::npos)
    throw Error(ErrorKind::InvalidArgument, "item_format must contain {fields}");
}

json to_json(const PromptTemplate& tmpl) {
  json sections = json::array();
  for (const auto& s : tmpl.sections) sections.push_back({{"kind", to_string(s.kind)}, {"label", s.label}});
  return {{"name", tmpl.name},
          {"sections", sections},
          {"history_group_header", tmpl.history_group_header},
          {"item_format", tmpl.item_format},
          {"description_key", tmpl.description_key},
          {"answer_stub", tmpl.answer_stub},
          {"section_separator", tmpl.section_separator}};
}

PromptTemplate template_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Parse, "template: expected a JSON object");
  static const std::set<std::string> allowed = {"name", "sections", "history_group_header", "item_format",
                                                "description_key", "answer_stub", "section_separator"};
  for (const auto& [key, _] : j.items())
    if (!allowed.contains(key)) throw Error(ErrorKind::Parse, "template: unknown key '" + key + "'");
  PromptTemplate t = PromptTemplate::standard();
  try {
    t.name = j.at("name").get<std::string>();
    if (j.contains("sections")) {
      t.sections.clear();
      for (const auto& s : j.at("sections")) {
        if (s.is_string()) {
          auto kind = section_kind_from_string(s.get<std::string>());
          t.sections.push_back({kind, PromptTemplate::standard().find(kind)->label});
        } else {
          t.sections.push_back({section_kind_from_string(s.at("kind").get<std::string>()),
                                s.at("label").get<std::string>()});
        }
      }
    }
    t.history_group_header = j.value("history_group_header", t.history_group_header);
    t.item_format = j.value("item_format", t.item_format);
    t.description_key = j.value("description_key", t.description_key);
    t.answer_stub = j.value("answer_stub", t.answer_stub);
    t.section_separator = j.value("section_separator", t.section_separator);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("template: ") + e.what());
  }
  t.check();
  return t;
}

PromptTemplate load_template(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open template file " + path.string());
  try {
    return template_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

void TokenBudget::check() const {
  if (max_context_tokens == 0) throw Error(ErrorKind::InvalidArgument, "max_context_tokens must be positive");
  if (max_context_tokens <= reserved_completion_tokens)
    throw Error(ErrorKind::InvalidArgument, "max_context_tokens must exceed reserved_completion_tokens");
}

ItemLookup lookup_in(const Dataset& dataset) {
  return [&dataset](std::string_view id) { return dataset.find_item(id); };
}

std::string interaction_key(const Interaction& interaction) {
  return interaction.item_id + "@" + std::to_string(interaction.timestamp) + ":" + interaction.action;
}

std::string render_item(const Item& item, const PromptTemplate& tmpl) {
  std::vector<KeyValue> fields = item.attributes;
  if (!item.description.empty()) fields.emplace_back(tmpl.description_key, item.description);
  return replace_all(tmpl.item_format, "{fields}", join_pairs(fields));
}

std::string render_member(const MemberProfile& profile, const PromptTemplate& tmpl) {
  const auto* section = tmpl.find(SectionKind::MemberProfile);
  std::string out = section ? section->label : "Member Profile:";
  if (!profile.fields.empty()) {
    out += ' ';
    out += join_pairs(profile.fields);
    out += '.';
  }
  return out;
}

namespace {

struct RenderedEntry {
  std::size_t action_index;
  std::string text;
};

// Groups already-rendered history entries by action, vocabulary order.
std::string compose_history(std::span<const RenderedEntry> entries, const TaskSpec& task,
                            const PromptTemplate& tmpl) {
  std::string out;
  for (std::size_t a = 0; a < task.action_vocabulary.size(); ++a) {
    std::string line;
    for (const auto& e : entries) {
      if (e.action_index != a) continue;
      line += line.empty() ? " " : ", ";
      line += e.text;
    }
    if (line.empty()) continue;
    if (!out.empty()) out += '\n';
    auto header = replace_all(tmpl.history_group_header, "{action}", task.phrase_for(task.action_vocabulary[a]));
    out += replace_all(std::move(header), "{items}", task.item_noun_plural);
    out += line;
  }
  return out;
}

std::vector<RenderedEntry> render_entries(std::span<const Interaction> interactions, const ItemLookup& items,
                                          const TaskSpec& task, const PromptTemplate& tmpl) {
  std::vector<RenderedEntry> entries;
  entries.reserve(interactions.size());
  for (const auto& x : interactions) {
    auto pos = std::find(task.action_vocabulary.begin(), task.action_vocabulary.end(), x.action);
    if (pos == task.action_vocabulary.end())
      throw Error(ErrorKind::UnknownAction,
                  "action '" + x.action + "' is not in the vocabulary of task '" + task.task_id + "'");
    const Item* item = items ? items(x.item_id) : nullptr;
    if (!item) throw Error(ErrorKind::UnknownId, "unknown item_id '" + x.item_id + "'");
    entries.push_back({static_cast<std::size_t>(pos - task.action_vocabulary.begin()), render_item(*item, tmpl)});
  }
  return entries;
}

}  // namespace

std::string render_history(std::span<const Interaction> interactions, const ItemLookup& items, const TaskSpec& task,
                           const PromptTemplate& tmpl) {
  auto entries = render_entries(interactions, items, task, tmpl);
  return compose_history(entries, task, tmpl);
}

RenderedPrompt build_prompt(const TaskSpec& task, const MemberProfile& profile, std::span<const Interaction> history,
                            const ItemLookup& items, std::span<const Item> question_items, const TokenBudget& budget,
                            const Tokenizer& tokenizer, const BuildOptions& options) {
  budget.check();
  if (question_items.size() != 1)
    throw Error(ErrorKind::InvalidArgument, "exactly one question item per prompt is supported, got " +
                                                std::to_string(question_items.size()));
  const auto& tmpl = options.tmpl;
  const auto entries = render_entries(history, items, task, tmpl);

  // Everything except the history body is fixed; render it once.
  std::string head;
  for (const auto& line : options.preamble) {
    head += line;
    head += '\n';
  }
  std::vector<std::string> before_history;
  std::vector<std::string> after_history;
  std::string history_label;
  bool past_history = false;
  for (const auto& section : tmpl.sections) {
    std::string block;
    switch (section.kind) {
      case SectionKind::Instruction: block = section.label + " " + task.instruction; break;
      case SectionKind::Note:
        if (!task.note) continue;
        block = section.label + " " + *task.note;
        break;
      case SectionKind::MemberProfile: block = render_member(profile, tmpl); break;
      case SectionKind::History:
        history_label = replace_all(section.label, "{item}", task.item_noun);
        past_history = true;
        continue;
      case SectionKind::Question:
        block = section.label + " " + task.question + ": " + render_item(question_items.front(), tmpl);
        break;
      case SectionKind::Answer: block = section.label + " " + tmpl.answer_stub; break;
    }
    (past_history ? after_history : before_history).push_back(std::move(block));
  }
  const bool has_history_section = tmpl.find(SectionKind::History) != nullptr;

  auto compose = [&](std::size_t dropped) {
    std::string text = head;
    bool first = true;
    auto append = [&](const std::string& block) {
      if (!first) text += tmpl.section_separator;
      text += block;
      first = false;
    };
    for (const auto& b : before_history) append(b);
    if (has_history_section) {
      auto body = compose_history(std::span(entries).subspan(dropped), task, tmpl);
      append(body.empty() ? history_label : history_label + "\n" + body);
    }
    for (const auto& b : after_history) append(b);
    return text;
  };

  const std::size_t limit = budget.prompt_limit();
  const std::size_t n = entries.size();
  auto fits = [&](std::size_t dropped, std::string& text, std::size_t& tokens) {
    text = compose(dropped);
    tokens = tokenizer.count(text);
    return tokens <= limit;
  };

  std::string text;
  std::size_t tokens = 0;
  std::size_t dropped = n;
  if (!fits(n, text, tokens))
    throw Error(ErrorKind::IrreducibleOverflow,
                "prompt needs " + std::to_string(tokens) + " tokens with empty history but the limit is " +
                    std::to_string(limit) + "; raise the budget or shrink the profile/question");
  if (n > 0) {
    std::string candidate;
    std::size_t candidate_tokens = 0;
    if (fits(0, candidate, candidate_tokens)) {
      dropped = 0;
      text = std::move(candidate);
      tokens = candidate_tokens;
    } else if (tokenizer.monotone()) {
      // Smallest drop count that fits; fits(n) holds and fits(0) does not.
      std::size_t lo = 1, hi = n;
      while (lo < hi) {
        std::size_t mid = lo + (hi - lo) / 2;
        if (fits(mid, candidate, candidate_tokens)) {
          hi = mid;
          if (mid < dropped) {
            dropped = mid;
            text = std::move(candidate);
            tokens = candidate_tokens;
          }
        } else {
          lo = mid + 1;
        }
      }
    } else {
      for (std::size_t d = 1; d < n; ++d) {
        if (fits(d, candidate, candidate_tokens)) {
          dropped = d;
          text = std::move(candidate);
          tokens = candidate_tokens;
          break;
        }
      }
    }
  }

  RenderedPrompt out;
  out.text = std::move(text);
  out.token_count = tokens;
  for (std::size_t i = 0; i < n; ++i)
    (i < dropped ? out.truncated_interaction_keys : out.included_interaction_keys).push_back(interaction_key(history[i]));
  for (const auto& q : question_items) out.question_item_ids.push_back(q.item_id);
  return out;
}

}  // namespace brewrank
