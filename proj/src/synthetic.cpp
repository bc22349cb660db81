#include "brewrank/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <tuple>

#include "brewrank/error.hpp"

namespace brewrank::synthetic {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Rng

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "uniform_int(0)");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  const double u1 = 1.0 - uniform01();  // (0, 1]
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---------------------------------------------------------------------------
// Config

std::vector<AttributeDim> default_vocabulary(std::size_t latent_dim) {
  static const std::vector<AttributeDim> base = {
      {"Title", {"Engineer", "Analyst", "Designer", "Manager"}},
      {"Location", {"Seattle", "Austin", "Boston", "Denver"}},
      {"Industry", {"Software", "Finance", "Health", "Retail"}},
      {"Seniority", {"Intern", "Junior", "Senior", "Principal"}},
      {"Skill", {"Python", "Sales", "Illustration", "Statistics"}},
      {"Workplace", {"Onsite", "Hybrid", "Remote", "Flexible"}},
      {"Schedule", {"Full-time", "Part-time", "Contract", "Seasonal"}},
      {"Company size", {"Startup", "Small", "Midsize", "Enterprise"}},
  };
  std::vector<AttributeDim> out;
  for (std::size_t d = 0; d < latent_dim; ++d) {
    if (d < base.size()) {
      out.push_back(base[d]);
    } else {
      AttributeDim dim{"Attribute " + std::to_string(d + 1), {}};
      for (int v = 0; v < 4; ++v) dim.values.push_back("level" + std::to_string(d + 1) + "-" + std::to_string(v));
      out.push_back(std::move(dim));
    }
  }
  return out;
}

std::vector<AttributeDim> WorldConfig::vocabulary() const {
  return attribute_vocabulary.empty() ? default_vocabulary(latent_dim) : attribute_vocabulary;
}

void WorldConfig::check() const {
  auto fail = [](const std::string& why) { throw Error(ErrorKind::InvalidArgument, "world config: " + why); };
  if (n_members == 0 || n_items == 0) fail("n_members and n_items must be positive");
  if (latent_dim == 0) fail("latent_dim must be positive");
  if (generator != "mt19937_64") fail("unsupported generator '" + generator + "' (only mt19937_64)");
  if (t_end <= t_start || t_start < 0) fail("time_span must satisfy 0 <= t_start < t_end");
  if (noise_sigma < 0 || !std::isfinite(noise_sigma)) fail("noise_sigma must be finite and non-negative");
  if (drift_rate < 0 || !std::isfinite(drift_rate)) fail("drift_rate must be finite and non-negative");
  if (drift_rate > 0 && latent_dim < 2) fail("drift needs latent_dim >= 2");
  if (!std::isfinite(alpha) || !std::isfinite(beta)) fail("alpha and beta must be finite");
  const auto vocab = vocabulary();
  if (vocab.size() != latent_dim)
    fail("attribute_vocabulary has " + std::to_string(vocab.size()) + " dimensions but latent_dim is " +
         std::to_string(latent_dim));
  std::set<std::string> keys;
  for (const auto& dim : vocab) {
    if (dim.key.empty() || dim.key.find_first_of(":,[]\n") != std::string::npos)
      fail("attribute key '" + dim.key + "' is empty or contains one of : , [ ]");
    if (dim.key == "Description") fail("attribute key 'Description' is reserved");
    if (!keys.insert(dim.key).second) fail("duplicate attribute key '" + dim.key + "'");
    if (dim.values.size() < 2) fail("attribute '" + dim.key + "' needs at least two values");
    std::set<std::string> values;
    for (const auto& v : dim.values) {
      if (v.empty() || v.find_first_of(",[]\n") != std::string::npos)
        fail("value '" + v + "' of attribute '" + dim.key + "' is empty or contains one of , [ ]");
      if (!values.insert(v).second) fail("duplicate value '" + v + "' in attribute '" + dim.key + "'");
    }
  }
  if (n_interactions > 0 && static_cast<double>(n_interactions) >
                                static_cast<double>(n_members) * static_cast<double>(n_items) *
                                    static_cast<double>(t_end - t_start) / 2.0)
    fail("n_interactions too large for the id/time space");
}

namespace {

const char* to_string(LabelRule rule) { return rule == LabelRule::Bernoulli ? "bernoulli" : "threshold"; }

LabelRule label_rule_from_string(std::string_view text) {
  if (text == "bernoulli") return LabelRule::Bernoulli;
  if (text == "threshold") return LabelRule::Threshold;
  throw Error(ErrorKind::Parse, "label_rule must be bernoulli or threshold, got '" + std::string(text) + "'");
}

}  // namespace

json to_json(const WorldConfig& c) {
  json vocab = json::array();
  for (const auto& d : c.attribute_vocabulary) vocab.push_back({{"key", d.key}, {"values", d.values}});
  return {{"n_members", c.n_members},
          {"n_items", c.n_items},
          {"latent_dim", c.latent_dim},
          {"attribute_vocabulary", vocab},
          {"noise_sigma", c.noise_sigma},
          {"label_rule", to_string(c.label_rule)},
          {"drift_rate", c.drift_rate},
          {"seed", c.seed},
          {"generator", c.generator},
          {"time_span", {c.t_start, c.t_end}},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"n_interactions", c.n_interactions},
          {"item_type", c.item_type}};
}

WorldConfig world_config_from_json(const json& j) {
  static const std::set<std::string> allowed = {
      "n_members", "n_items", "latent_dim", "attribute_vocabulary", "noise_sigma", "label_rule", "drift_rate",
      "seed",      "generator", "time_span", "alpha",  "beta",       "n_interactions", "item_type"};
  if (!j.is_object()) throw Error(ErrorKind::Parse, "world config: expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.contains(key)) throw Error(ErrorKind::Parse, "world config: unknown key '" + key + "'");
  WorldConfig c;
  try {
    c.n_members = j.value("n_members", c.n_members);
    c.n_items = j.value("n_items", c.n_items);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    if (j.contains("attribute_vocabulary"))
      for (const auto& d : j.at("attribute_vocabulary"))
        c.attribute_vocabulary.push_back({d.at("key").get<std::string>(), d.at("values").get<std::vector<std::string>>()});
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    if (j.contains("label_rule")) c.label_rule = label_rule_from_string(j.at("label_rule").get<std::string>());
    c.drift_rate = j.value("drift_rate", c.drift_rate);
    c.seed = j.value("seed", c.seed);
    c.generator = j.value("generator", c.generator);
    if (j.contains("time_span")) {
      auto span = j.at("time_span").get<std::vector<Timestamp>>();
      if (span.size() != 2) throw Error(ErrorKind::Parse, "world config: time_span must be [t_start, t_end]");
      c.t_start = span[0];
      c.t_end = span[1];
    }
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.n_interactions = j.value("n_interactions", c.n_interactions);
    c.item_type = j.value("item_type", c.item_type);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("world config: ") + e.what());
  }
  c.check();
  return c;
}

WorldConfig load_world_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open world config " + path.string());
  try {
    return world_config_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Codec

LatentCodec::LatentCodec(std::vector<AttributeDim> vocabulary) : vocab_(std::move(vocabulary)) {
  value_index_.resize(vocab_.size());
  for (std::size_t d = 0; d < vocab_.size(); ++d) {
    key_index_.emplace(vocab_[d].key, d);
    for (std::size_t v = 0; v < vocab_[d].values.size(); ++v) value_index_[d].emplace(vocab_[d].values[v], v);
  }
}

std::vector<double> LatentCodec::latent_from_indices(std::span<const std::size_t> indices) const {
  std::vector<double> x(vocab_.size());
  double norm2 = 0;
  for (std::size_t d = 0; d < vocab_.size(); ++d) {
    const auto levels = static_cast<double>(vocab_[d].values.size() - 1);
    x[d] = -1.0 + 2.0 * static_cast<double>(indices[d]) / levels;
    norm2 += x[d] * x[d];
  }
  if (norm2 > 0) {
    const double norm = std::sqrt(norm2);
    for (auto& v : x) v /= norm;
  }
  return x;
}

std::vector<KeyValue> LatentCodec::render(std::span<const std::size_t> indices) const {
  std::vector<KeyValue> out;
  out.reserve(vocab_.size());
  for (std::size_t d = 0; d < vocab_.size(); ++d) out.emplace_back(vocab_[d].key, vocab_[d].values[indices[d]]);
  return out;
}

std::optional<std::vector<double>> LatentCodec::decode(std::span<const KeyValue> pairs) const {
  std::vector<std::size_t> indices(vocab_.size());
  std::vector<bool> seen(vocab_.size(), false);
  for (const auto& [key, value] : pairs) {
    auto k = key_index_.find(key);
    if (k == key_index_.end()) continue;
    auto v = value_index_[k->second].find(value);
    if (v == value_index_[k->second].end()) return std::nullopt;
    indices[k->second] = v->second;
    seen[k->second] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) return std::nullopt;
  return latent_from_indices(indices);
}

// ---------------------------------------------------------------------------
// World

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

LatentWorld::LatentWorld(WorldConfig config, std::unordered_map<std::string, std::vector<double>> members,
                         std::unordered_map<std::string, std::vector<double>> items)
    : config_(std::move(config)), codec_(config_.vocabulary()), members_(std::move(members)), items_(std::move(items)) {}

const std::vector<double>& LatentWorld::member_latent(std::string_view member_id) const {
  auto it = members_.find(std::string(member_id));
  if (it == members_.end()) throw Error(ErrorKind::UnknownId, "unknown member_id '" + std::string(member_id) + "'");
  return it->second;
}

const std::vector<double>& LatentWorld::item_latent(std::string_view item_id) const {
  auto it = items_.find(std::string(item_id));
  if (it == items_.end()) throw Error(ErrorKind::UnknownId, "unknown item_id '" + std::string(item_id) + "'");
  return it->second;
}

std::vector<double> LatentWorld::member_latent_at(std::string_view member_id, Timestamp t) const {
  auto u = member_latent(member_id);
  if (config_.drift_rate > 0 && u.size() >= 2) {
    const double days = static_cast<double>(t - config_.t_start) / 86'400.0;
    const double theta = config_.drift_rate * days;
    const double c = std::cos(theta), s = std::sin(theta);
    const double a = u[0], b = u[1];
    u[0] = c * a - s * b;
    u[1] = s * a + c * b;
  }
  return u;
}

double LatentWorld::logit(std::string_view member_id, std::string_view item_id, Timestamp t) const {
  const auto u = member_latent_at(member_id, t);
  const auto& v = item_latent(item_id);
  double dot = 0;
  for (std::size_t d = 0; d < u.size(); ++d) dot += u[d] * v[d];
  // Orthogonal quantized latents should give exactly 0, not +-1e-17.
  if (std::abs(dot) < 1e-12) dot = 0;
  return config_.alpha * dot + config_.beta;
}

double oracle_probability(const LatentWorld& world, std::string_view member_id, std::string_view item_id,
                          Timestamp t) {
  return sigmoid(world.logit(member_id, item_id, t));
}

namespace {

std::string padded_id(char prefix, std::size_t i, std::size_t n) {
  const auto width = std::to_string(n > 0 ? n - 1 : 0).size();
  auto digits = std::to_string(i);
  return std::string(1, prefix) + std::string(width - digits.size(), '0') + digits;
}

}  // namespace

GeneratedWorld generate_world(const WorldConfig& config) {
  config.check();
  Rng rng(config.seed);
  LatentCodec codec(config.vocabulary());
  const auto& vocab = codec.vocabulary();

  auto draw_indices = [&] {
    std::vector<std::size_t> idx(vocab.size());
    for (std::size_t d = 0; d < vocab.size(); ++d) idx[d] = rng.uniform_int(vocab[d].values.size());
    return idx;
  };

  std::vector<MemberProfile> members;
  std::vector<Item> items;
  std::unordered_map<std::string, std::vector<double>> member_latents, item_latents;
  for (std::size_t m = 0; m < config.n_members; ++m) {
    auto idx = draw_indices();
    MemberProfile p{padded_id('m', m, config.n_members), codec.render(idx), std::nullopt};
    member_latents.emplace(p.member_id, codec.latent_from_indices(idx));
    members.push_back(std::move(p));
  }
  for (std::size_t i = 0; i < config.n_items; ++i) {
    auto idx = draw_indices();
    Item it{padded_id('i', i, config.n_items), config.item_type, codec.render(idx), ""};
    it.description = "Synthetic " + config.item_type + " " + it.item_id;
    item_latents.emplace(it.item_id, codec.latent_from_indices(idx));
    items.push_back(std::move(it));
  }
  auto world = std::make_shared<LatentWorld>(config, std::move(member_latents), std::move(item_latents));

  std::vector<Interaction> interactions;
  std::vector<GroundTruthRow> truth;
  interactions.reserve(config.n_interactions);
  std::set<std::tuple<std::size_t, std::size_t, Timestamp>> used;
  const auto span = static_cast<std::uint64_t>(config.t_end - config.t_start);
  for (std::size_t k = 0; k < config.n_interactions; ++k) {
    const auto m = rng.uniform_int(config.n_members);
    const auto i = rng.uniform_int(config.n_items);
    Timestamp t = config.t_start + static_cast<Timestamp>(rng.uniform_int(span));
    while (!used.emplace(m, i, t).second) t = config.t_start + static_cast<Timestamp>(rng.uniform_int(span));
    const double eps = rng.normal();
    const double coin = rng.uniform01();

    const auto& member_id = members[m].member_id;
    const auto& item_id = items[i].item_id;
    const double logit = world->logit(member_id, item_id, t);
    const double noisy = logit + config.noise_sigma * eps;
    // sigmoid(x) >= 0.5 iff x >= 0; comparing the logit avoids rounding near 0.5.
    const bool applied = config.label_rule == LabelRule::Threshold ? noisy >= 0 : coin < sigmoid(noisy);
    interactions.push_back({member_id, item_id, applied ? "applied" : "dismissed", t});
    truth.push_back({member_id, item_id, t, sigmoid(logit)});
  }

  Dataset dataset(std::move(members), std::move(items), interactions);
  // Ground truth follows the dataset's canonical interaction order.
  std::vector<std::size_t> order(truth.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = interactions[a];
    const auto& y = interactions[b];
    return std::tie(x.member_id, x.timestamp, x.item_id, x.action) < std::tie(y.member_id, y.timestamp, y.item_id, y.action);
  });
  std::vector<GroundTruthRow> sorted_truth;
  sorted_truth.reserve(truth.size());
  for (auto k : order) sorted_truth.push_back(std::move(truth[k]));

  return {std::move(world), std::move(dataset), std::move(sorted_truth)};
}

void write_world(const GeneratedWorld& generated, const std::filesystem::path& dir) {
  write_dataset_dir(generated.dataset, dir);
  std::ofstream out(dir / "ground_truth.jsonl", std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + (dir / "ground_truth.jsonl").string());
  for (const auto& row : generated.ground_truth)
    out << json{{"member_id", row.member_id}, {"item_id", row.item_id}, {"t", row.t}, {"p_true", row.p_true}}.dump()
        << '\n';
}

std::vector<GroundTruthRow> load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<GroundTruthRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      rows.push_back({j.at("member_id").get<std::string>(), j.at("item_id").get<std::string>(),
                      j.at("t").get<Timestamp>(), j.at("p_true").get<double>()});
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

std::vector<TemporalSplit> make_temporal_stream(const LatentWorld& world, const Dataset& dataset,
                                                std::size_t n_snapshots, Timestamp gap,
                                                const TemporalOptions& options) {
  const auto& cfg = world.config();
  if (n_snapshots == 0) throw Error(ErrorKind::InvalidArgument, "n_snapshots must be positive");
  if (gap < 0) throw Error(ErrorKind::InvalidArgument, "gap must be non-negative");
  const Timestamp train_end = options.train_end.value_or(cfg.t_start + (cfg.t_end - cfg.t_start) / 2);
  if (train_end <= cfg.t_start || train_end >= cfg.t_end)
    throw Error(ErrorKind::InvalidArgument, "train_end must lie strictly inside the time span");
  const auto k_last = static_cast<Timestamp>(n_snapshots - 1);
  const Timestamp window =
      options.window.value_or(gap > 0 ? gap : (cfg.t_end - train_end) / static_cast<Timestamp>(n_snapshots));
  if (window <= 0) throw Error(ErrorKind::InvalidArgument, "test window must be positive");
  if (train_end + k_last * gap + window > cfg.t_end)
    throw Error(ErrorKind::InvalidArgument, "temporal windows exceed the time span: last window ends at " +
                                                std::to_string(train_end + k_last * gap + window) + " > " +
                                                std::to_string(cfg.t_end));

  std::vector<TemporalSplit> splits(n_snapshots);
  for (std::size_t k = 0; k < n_snapshots; ++k) {
    auto& s = splits[k];
    s.snapshot = k;
    s.train_start = cfg.t_start;
    s.train_end = train_end;
    s.test_start = train_end + static_cast<Timestamp>(k) * gap;
    s.test_end = s.test_start + window;
  }
  for (const auto& x : dataset.interactions()) {
    const bool in_train = x.timestamp >= cfg.t_start && x.timestamp < train_end;
    for (auto& s : splits) {
      if (in_train) s.train.push_back(x);
      else if (x.timestamp >= s.test_start && x.timestamp < s.test_end) s.test.push_back(x);
    }
  }
  return splits;
}

// ---------------------------------------------------------------------------
// Mock oracle

const char* to_string(OracleMode mode) {
  switch (mode) {
    case OracleMode::Full: return "full";
    case OracleMode::Frozen: return "frozen";
    case OracleMode::Masked: return "masked";
  }
  return "?";
}

OracleMode oracle_mode_from_string(std::string_view text) {
  if (text == "full") return OracleMode::Full;
  if (text == "frozen") return OracleMode::Frozen;
  if (text == "masked") return OracleMode::Masked;
  throw Error(ErrorKind::InvalidArgument, "unknown oracle mode '" + std::string(text) + "'");
}

std::string oracle_marker(std::string_view member_id, std::string_view item_id, Timestamp t) {
  return "#oracle:" + std::string(member_id) + "/" + std::string(item_id) + "@" + std::to_string(t);
}

std::vector<KeyValue> parse_item_fields(std::string_view bracketed) {
  if (!bracketed.empty() && bracketed.front() == '[') bracketed.remove_prefix(1);
  if (!bracketed.empty() && bracketed.back() == ']') bracketed.remove_suffix(1);
  std::vector<KeyValue> out;
  while (!bracketed.empty()) {
    auto comma = bracketed.find(", ");
    auto part = bracketed.substr(0, comma);
    auto colon = part.find(": ");
    if (colon != std::string_view::npos)
      out.emplace_back(std::string(part.substr(0, colon)), std::string(part.substr(colon + 2)));
    if (comma == std::string_view::npos) break;
    bracketed.remove_prefix(comma + 2);
  }
  return out;
}

MockOracleClient::MockOracleClient(std::shared_ptr<const LatentWorld> world, OracleMode mode,
                                   std::optional<Timestamp> frozen_time, MaskedParse masked)
    : world_(std::move(world)), mode_(mode), frozen_time_(frozen_time), masked_(std::move(masked)) {
  if (!world_) throw Error(ErrorKind::InvalidArgument, "mock oracle needs a world");
  if (mode_ == OracleMode::Frozen && !frozen_time_)
    throw Error(ErrorKind::InvalidArgument, "frozen oracle needs a frozen_time");
}

std::string MockOracleClient::name() const { return std::string("mock:") + to_string(mode_); }

namespace {

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    auto nl = text.find('\n');
    lines.push_back(text.substr(0, nl));
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  return lines;
}

std::vector<std::string_view> bracketed_items(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while ((pos = line.find('[', pos)) != std::string_view::npos) {
    auto close = line.find(']', pos);
    if (close == std::string_view::npos) break;
    out.push_back(line.substr(pos, close - pos + 1));
    pos = close + 1;
  }
  return out;
}

}  // namespace

double MockOracleClient::masked_logit(std::string_view prompt) const {
  const auto& codec = world_->codec();
  std::vector<double> estimate(codec.dim(), 0.0);
  std::optional<std::vector<double>> question;
  for (auto line : split_lines(prompt)) {
    if (line.starts_with(masked_.question_label)) {
      auto items = bracketed_items(line);
      if (!items.empty()) question = codec.decode(parse_item_fields(items.back()));
      continue;
    }
    for (const auto& [header, weight] : masked_.header_weights) {
      if (!line.starts_with(header)) continue;
      for (auto item : bracketed_items(line.substr(header.size()))) {
        if (auto v = codec.decode(parse_item_fields(item)))
          for (std::size_t d = 0; d < estimate.size(); ++d) estimate[d] += weight * (*v)[d];
      }
      break;
    }
  }
  if (!question) throw Error(ErrorKind::InvalidArgument, "mock oracle: prompt has no decodable question item");
  double norm2 = 0, dot = 0;
  for (std::size_t d = 0; d < estimate.size(); ++d) {
    norm2 += estimate[d] * estimate[d];
    dot += estimate[d] * (*question)[d];
  }
  const auto& cfg = world_->config();
  if (norm2 == 0) return cfg.beta;
  return cfg.alpha * dot / std::sqrt(norm2) + cfg.beta;
}

double MockOracleClient::prompt_logit(std::string_view prompt) const {
  if (mode_ == OracleMode::Masked) return masked_logit(prompt);
  for (auto line : split_lines(prompt)) {
    if (!line.starts_with("#oracle:")) continue;
    line.remove_prefix(8);
    std::optional<Timestamp> t;
    if (auto at = line.rfind('@'); at != std::string_view::npos) {
      t = std::stoll(std::string(line.substr(at + 1)));
      line = line.substr(0, at);
    }
    auto slash = line.find('/');
    if (slash == std::string_view::npos) break;
    const auto member = line.substr(0, slash);
    const auto item = line.substr(slash + 1);
    Timestamp when = mode_ == OracleMode::Frozen ? *frozen_time_ : t.value_or(frozen_time_.value_or(world_->config().t_start));
    return world_->logit(member, item, when);
  }
  throw Error(ErrorKind::InvalidArgument, "mock oracle: prompt carries no #oracle marker");
}

AnswerLogprobs MockOracleClient::logprobs(const ScoringRequest& request) {
  const double s = prompt_logit(request.prompt_text);
  AnswerLogprobs out;
  out.backend = name();
  // log sigmoid(s) and log sigmoid(-s), stable for large |s|.
  auto log_sigmoid = [](double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); };
  out.positive = log_sigmoid(s);
  out.negative = log_sigmoid(-s);
  return out;
}

}  // namespace brewrank::synthetic
