#include "brewrank/cli.hpp"

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "brewrank/error.hpp"
#include "brewrank/harness.hpp"
#include "brewrank/log.hpp"
#include "brewrank/synthetic.hpp"
#include "brewrank/tokenizer.hpp"
#include "brewrank/verbalizer.hpp"
#include "json.hpp"

namespace brewrank {

using nlohmann::json;

namespace {

struct Override {
  std::string key;
  std::string value;
};

// Pulls "--a.b=v" / "--a.b v" out of argv; CLI11 sees the rest.
std::vector<std::string> split_dotted(int argc, const char* const* argv, std::vector<Override>& dotted) {
  std::vector<std::string> rest;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg.starts_with("--")) {
      const auto eq = arg.find('=');
      const auto name = arg.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
      if (name.find('.') != std::string::npos) {
        if (eq != std::string::npos) {
          dotted.push_back({name, arg.substr(eq + 1)});
        } else if (i + 1 < argc) {
          dotted.push_back({name, argv[++i]});
        } else {
          throw Error(ErrorKind::InvalidArgument, "flag --" + name + " needs a value");
        }
        continue;
      }
    }
    rest.push_back(std::move(arg));
  }
  return rest;
}

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path + ": " + e.what());
  }
}

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> parallelism;
  bool resume = false;
  std::string backend;
  std::string tokenizer;
  std::vector<std::string> set;
  int verbose = 0;
  bool quiet = false;
};

std::vector<Override> collect_overrides(const Globals& g, const std::vector<Override>& dotted, bool experiment) {
  std::vector<Override> all;
  if (experiment) {
    if (!g.out.empty()) all.push_back({"output_dir", json(g.out).dump()});
    if (g.parallelism) all.push_back({"parallelism", std::to_string(*g.parallelism)});
    if (g.resume) all.push_back({"resume", "true"});
    if (!g.backend.empty()) all.push_back({"backend.kind", json(g.backend).dump()});
    if (!g.tokenizer.empty()) all.push_back({"tokenizer", json(g.tokenizer).dump()});
  }
  if (g.seed) all.push_back({"seed", std::to_string(*g.seed)});
  for (const auto& kv : g.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw Error(ErrorKind::InvalidArgument, "--set expects key=value, got '" + kv + "'");
    all.push_back({kv.substr(0, eq), kv.substr(eq + 1)});
  }
  all.insert(all.end(), dotted.begin(), dotted.end());
  return all;
}

void reject_secret_keys(const std::vector<Override>& overrides) {
  for (const auto& o : overrides)
    if (o.key.find("api_key") != std::string::npos)
      throw Error(ErrorKind::InvalidArgument, "credentials are read from BREWRANK_API_KEY only");
}

int cmd_generate(const Globals& g, const std::vector<Override>& dotted, std::ostream& out) {
  if (g.config.empty()) throw Error(ErrorKind::InvalidArgument, "generate needs --config <world.json>");
  if (g.out.empty()) throw Error(ErrorKind::InvalidArgument, "generate needs --out <dir>");
  auto doc = read_config(g.config);
  for (const auto& o : collect_overrides(g, dotted, false)) harness::apply_override(doc, o.key, o.value);
  const auto config = synthetic::world_config_from_json(doc);
  const auto generated = synthetic::generate_world(config);
  synthetic::write_world(generated, g.out);
  out << "wrote " << generated.dataset.members().size() << " members, " << generated.dataset.items().size()
      << " items, " << generated.dataset.interactions().size() << " interactions to " << g.out << "\n";
  return 0;
}

struct RenderArgs {
  std::string dataset;
  std::string task;
  std::string member;
  std::string item;
  std::optional<Timestamp> cutoff;
  std::size_t budget = 2048;
  std::size_t reserved = 0;
  std::size_t max_history = 100;
  std::string template_path;
  bool marker = false;
};

int cmd_render(const Globals& g, const RenderArgs& a, std::ostream& out, std::ostream& err) {
  const auto dataset = load_dataset_dir(a.dataset);
  const auto task = load_task(a.task);
  const auto& profile = dataset.member(a.member);
  const auto tokenizer = make_tokenizer(g.tokenizer.empty() ? "default" : g.tokenizer);

  std::string item_id = a.item;
  std::optional<Timestamp> cutoff = a.cutoff;
  if (item_id.empty()) {
    // Default question: the member's latest in-vocabulary interaction.
    const auto history = dataset.member_history(a.member);
    for (auto it = history.rbegin(); it != history.rend(); ++it) {
      if (!task.in_vocabulary(it->action)) continue;
      item_id = it->item_id;
      if (!cutoff) cutoff = it->timestamp;
      break;
    }
    if (item_id.empty()) throw Error(ErrorKind::InvalidArgument, "member " + a.member + " has no interaction to ask about; pass --item");
  }
  if (!cutoff) {
    Timestamp last = 0;
    for (const auto& x : dataset.member_history(a.member)) last = std::max(last, x.timestamp + 1);
    cutoff = last;
  }
  const auto& question = dataset.item(item_id);

  auto history = history_for(dataset, a.member, *cutoff, a.max_history);
  std::erase_if(history, [&](const Interaction& x) { return !task.in_vocabulary(x.action); });
  BuildOptions options;
  if (!a.template_path.empty()) options.tmpl = load_template(a.template_path);
  if (a.marker) options.preamble.push_back(synthetic::oracle_marker(a.member, item_id, *cutoff));
  TokenBudget budget{a.budget, a.reserved};
  budget.check();

  try {
    const auto prompt = build_prompt(task, profile, history, lookup_in(dataset), std::span(&question, 1), budget,
                                     *tokenizer, options);
    out << prompt.text << "\n";
    err << "tokens: " << prompt.token_count << " / " << budget.prompt_limit() << " (" << tokenizer->name() << ")\n"
        << "history: " << prompt.included_interaction_keys.size() << " included, "
        << prompt.truncated_interaction_keys.size() << " truncated\n";
    if (log::level() >= log::Level::Info)
      for (const auto& key : prompt.truncated_interaction_keys) err << "  dropped " << key << "\n";
    return 0;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::IrreducibleOverflow) throw;
    err << "overflow: " << e.what() << "\n";
    return 3;
  }
}

int cmd_experiment(harness::ExperimentKind kind, const Globals& g, const std::vector<Override>& dotted,
                   std::ostream& out, std::ostream& err) {
  if (g.config.empty()) throw Error(ErrorKind::InvalidArgument, "this command needs --config <experiment.json>");
  auto doc = read_config(g.config);
  if (doc.contains("kind") && doc["kind"] != harness::to_string(kind))
    log::warn(std::string("config kind '") + (doc["kind"].is_string() ? doc["kind"].get<std::string>() : doc["kind"].dump()) + "' replaced by '" + harness::to_string(kind) + "'");
  doc["kind"] = harness::to_string(kind);
  const auto overrides = collect_overrides(g, dotted, true);
  reject_secret_keys(overrides);
  for (const auto& o : overrides) harness::apply_override(doc, o.key, o.value);
  const auto base = std::filesystem::path(g.config).parent_path();
  // output_dir given on the command line is relative to the working directory.
  const bool out_from_flags = std::any_of(overrides.begin(), overrides.end(),
                                          [](const Override& o) { return o.key == "output_dir"; });
  auto spec = harness::experiment_from_json(doc, base);
  if (out_from_flags) spec.output_dir = doc["output_dir"].get<std::string>();

  harness::ExperimentResult result;
  try {
    result = harness::run_experiment(spec);
  } catch (...) {
    err << "run aborted; records written so far are in " << (spec.output_dir / "records.jsonl").string() << "\n";
    throw;
  }
  harness::emit_report(result, spec.output_dir);

  for (const auto& p : result.sweep.points) {
    out << p.task_id << " [" << p.grid_point << "] " << spec.metric << "=";
    if (p.metric) out << *p.metric;
    else out << "n/a";
    if (p.normalized) out << " normalized=" << *p.normalized;
    if (p.gap) out << " gap=" << *p.gap << "%";
    out << " records=" << p.records;
    if (p.overflow) out << " overflow=" << p.overflow;
    if (p.status != "ok") out << " (" << p.status << ")";
    out << "\n";
  }
  err << "scoring calls: " << result.backend_calls << "\n";
  for (const auto& e : result.hard_errors) err << "error: " << e << "\n";
  return result.hard_errors.empty() ? 0 : 1;
}

struct ReportArgs {
  std::string metric = "auc";
  std::optional<std::int64_t> reference;
};

int cmd_report(const Globals& g, const ReportArgs& a, std::ostream& out) {
  if (g.out.empty()) throw Error(ErrorKind::InvalidArgument, "report needs --out <run dir>");
  const auto path = std::filesystem::path(g.out) / "records.jsonl";
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::Io, "no records at " + path.string());
  const auto records = harness::load_records(path);
  std::map<std::string, double> baselines;
  if (!g.config.empty()) {
    const auto doc = read_config(g.config);
    if (doc.contains("baselines")) baselines = doc["baselines"].get<std::map<std::string, double>>();
  }
  out << harness::sweep_to_csv(harness::sweep_from_records(records, a.metric, baselines, a.reference));
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<Override> dotted;
  std::vector<std::string> args;
  try {
    args = split_dotted(argc, argv, dotted);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  CLI::App app{"LLM recommendation-as-prompting harness", "brewrank"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Config file (world config for generate, experiment otherwise)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--seed", g.seed, "Seed override");
  app.add_option("--parallelism", g.parallelism, "Concurrent scoring requests")->check(CLI::PositiveNumber);
  app.add_flag("--resume", g.resume, "Reuse records already in the output directory");
  app.add_option("--backend", g.backend, "Scoring backend")->check(CLI::IsMember({"http", "mock", "replay", "constant"}));
  app.add_option("--tokenizer", g.tokenizer, "Tokenizer name (default, chars4)");
  app.add_option("--set", g.set, "Config override key=value (dotted keys); repeatable");
  app.add_flag("-v,--verbose", g.verbose, "More logging (repeat for debug)");
  app.add_flag("-q,--quiet", g.quiet, "Errors only");

  auto* generate = app.add_subcommand("generate", "Generate a synthetic world");
  RenderArgs render_args;
  auto* render = app.add_subcommand("render", "Print one prompt");
  render->add_option("--dataset", render_args.dataset, "Dataset directory")->required();
  render->add_option("--task", render_args.task, "Task spec JSON")->required();
  render->add_option("--member", render_args.member, "Member id")->required();
  render->add_option("--item", render_args.item, "Question item id (default: latest interaction)");
  render->add_option("--cutoff", render_args.cutoff, "History cutoff timestamp (exclusive)");
  render->add_option("--budget", render_args.budget, "Max context tokens");
  render->add_option("--reserved", render_args.reserved, "Tokens reserved for the completion");
  render->add_option("--max-history", render_args.max_history, "History cap");
  render->add_option("--template", render_args.template_path, "Prompt template JSON");
  render->add_flag("--marker", render_args.marker, "Prepend the synthetic oracle marker");
  auto* eval = app.add_subcommand("eval", "Plain evaluation");
  auto* sweep_context = app.add_subcommand("sweep-context", "Context budget sweep");
  auto* sweep_coldstart = app.add_subcommand("sweep-coldstart", "History cap sweep");
  auto* sweep_temporal = app.add_subcommand("sweep-temporal", "Temporal drift sweep");
  auto* suite = app.add_subcommand("domain-suite", "T1/T2 task suite");
  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Recompute the sweep table from records.jsonl");
  report->add_option("--metric", report_args.metric, "auc or recall@K");
  report->add_option("--reference", report_args.reference, "Grid point used for normalization");
  for (auto* sub : {generate, render, eval, sweep_context, sweep_coldstart, sweep_temporal, suite, report})
    sub->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  log::set_level(g.quiet ? log::Level::Quiet
                         : g.verbose >= 2 ? log::Level::Debug
                         : g.verbose == 1 ? log::Level::Info
                                          : log::Level::Warn);
  using harness::ExperimentKind;
  try {
    if (*generate) return cmd_generate(g, dotted, out);
    if (*render) return cmd_render(g, render_args, out, err);
    if (*eval) return cmd_experiment(ExperimentKind::PlainEval, g, dotted, out, err);
    if (*sweep_context) return cmd_experiment(ExperimentKind::ContextSweep, g, dotted, out, err);
    if (*sweep_coldstart) return cmd_experiment(ExperimentKind::ColdstartSweep, g, dotted, out, err);
    if (*sweep_temporal) return cmd_experiment(ExperimentKind::TemporalSweep, g, dotted, out, err);
    if (*suite) return cmd_experiment(ExperimentKind::DomainSuite, g, dotted, out, err);
    if (*report) return cmd_report(g, report_args, out);
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace brewrank
