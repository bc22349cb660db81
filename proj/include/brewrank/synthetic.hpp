#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "brewrank/entities.hpp"
#include "brewrank/scoring.hpp"
#include "json.hpp"

namespace brewrank::synthetic {

/// Portable seeded stream: mt19937_64 raw output with hand-rolled
/// uniform/normal transforms (std distributions differ across libraries).
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next_u64();
  double uniform01();                          // [0, 1), 53-bit
  std::uint64_t uniform_int(std::uint64_t n);  // [0, n), unbiased
  double normal();                             // Box-Muller, no caching

 private:
  std::mt19937_64 engine_;
};

/// One latent coordinate: its attribute key and the ordered value names
/// that quantize it onto evenly spaced levels in [-1, 1].
struct AttributeDim {
  std::string key;
  std::vector<std::string> values;
};

enum class LabelRule { Bernoulli, Threshold };

struct WorldConfig {
  std::size_t n_members = 50;
  std::size_t n_items = 500;
  std::size_t latent_dim = 8;
  std::vector<AttributeDim> attribute_vocabulary;  // empty -> default_vocabulary(latent_dim)
  double noise_sigma = 0.0;
  LabelRule label_rule = LabelRule::Bernoulli;
  double drift_rate = 0.0;  // radians per day, rotation in the (0, 1) plane
  std::uint64_t seed = 1;
  std::string generator = "mt19937_64";
  Timestamp t_start = 1'700'000'000;
  Timestamp t_end = 1'700'000'000 + 360 * 86'400;
  double alpha = 4.0;
  double beta = 0.0;
  std::size_t n_interactions = 10'000;
  std::string item_type = "job";

  /// Throws Error(InvalidArgument) on vocabulary/dimension mismatch etc.
  void check() const;
  /// attribute_vocabulary, or the default one when it is empty.
  std::vector<AttributeDim> vocabulary() const;
};

std::vector<AttributeDim> default_vocabulary(std::size_t latent_dim);

nlohmann::json to_json(const WorldConfig& config);
WorldConfig world_config_from_json(const nlohmann::json& j);
WorldConfig load_world_config(const std::filesystem::path& path);

/// Maps attribute text to latent vectors and back. A latent is the vector of
/// per-dimension levels scaled to unit norm (a zero vector stays zero).
class LatentCodec {
 public:
  explicit LatentCodec(std::vector<AttributeDim> vocabulary);

  std::size_t dim() const { return vocab_.size(); }
  const std::vector<AttributeDim>& vocabulary() const { return vocab_; }

  std::vector<double> latent_from_indices(std::span<const std::size_t> indices) const;
  std::vector<KeyValue> render(std::span<const std::size_t> indices) const;

  /// Decodes "Key: value" pairs; keys outside the vocabulary are ignored.
  /// Returns nullopt if any dimension is missing or has an unknown value.
  std::optional<std::vector<double>> decode(std::span<const KeyValue> pairs) const;

 private:
  std::vector<AttributeDim> vocab_;
  std::unordered_map<std::string, std::size_t> key_index_;
  std::vector<std::unordered_map<std::string, std::size_t>> value_index_;
};

struct GroundTruthRow {
  std::string member_id;
  std::string item_id;
  Timestamp t = 0;
  double p_true = 0.5;
};

/// Latent vectors and the closed-form preference function.
class LatentWorld {
 public:
  LatentWorld(WorldConfig config, std::unordered_map<std::string, std::vector<double>> members,
              std::unordered_map<std::string, std::vector<double>> items);

  const WorldConfig& config() const { return config_; }
  const LatentCodec& codec() const { return codec_; }

  const std::vector<double>& member_latent(std::string_view member_id) const;
  const std::vector<double>& item_latent(std::string_view item_id) const;

  /// u rotated by drift_rate * (t - t_start) days in the (0, 1) plane.
  std::vector<double> member_latent_at(std::string_view member_id, Timestamp t) const;

  /// alpha * <u(t), v> + beta
  double logit(std::string_view member_id, std::string_view item_id, Timestamp t) const;

 private:
  WorldConfig config_;
  LatentCodec codec_;
  std::unordered_map<std::string, std::vector<double>> members_;
  std::unordered_map<std::string, std::vector<double>> items_;
};

double sigmoid(double x);

/// sigmoid(alpha * <u(t), v> + beta); throws Error(UnknownId).
double oracle_probability(const LatentWorld& world, std::string_view member_id, std::string_view item_id,
                          Timestamp t);

struct GeneratedWorld {
  std::shared_ptr<const LatentWorld> world;
  Dataset dataset;
  std::vector<GroundTruthRow> ground_truth;  // one per interaction, dataset order
};

GeneratedWorld generate_world(const WorldConfig& config);

/// members.jsonl, items.jsonl, interactions.jsonl, ground_truth.jsonl
void write_world(const GeneratedWorld& generated, const std::filesystem::path& dir);

std::vector<GroundTruthRow> load_ground_truth(const std::filesystem::path& path);

struct TemporalSplit {
  std::size_t snapshot = 0;
  Timestamp train_start = 0;
  Timestamp train_end = 0;  // exclusive
  Timestamp test_start = 0;
  Timestamp test_end = 0;  // exclusive
  std::vector<Interaction> train;
  std::vector<Interaction> test;
};

struct TemporalOptions {
  std::optional<Timestamp> train_end;  // default: middle of the time span
  std::optional<Timestamp> window;     // default: gap, or the rest of the span when gap == 0
};

/// Snapshot k tests on [train_end + k*gap, + window); training data is
/// everything in [t_start, train_end).
std::vector<TemporalSplit> make_temporal_stream(const LatentWorld& world, const Dataset& dataset,
                                                std::size_t n_snapshots, Timestamp gap,
                                                const TemporalOptions& options = {});

// ---------------------------------------------------------------------------

enum class OracleMode {
  Full,    // p_true at the marker's time (or frozen_time when absent)
  Frozen,  // p_true at frozen_time, ignoring the marker's time
  Masked,  // in-context estimate from the history rendered in the prompt
};

const char* to_string(OracleMode mode);
OracleMode oracle_mode_from_string(std::string_view text);

/// Marker line embedded in synthetic prompts: "#oracle:<member>/<item>@<t>".
std::string oracle_marker(std::string_view member_id, std::string_view item_id, Timestamp t);

struct MaskedParse {
  /// (history group header prefix, weight); items under a header contribute
  /// weight * latent to the member estimate.
  std::vector<std::pair<std::string, double>> header_weights;
  std::string question_label = "Question:";
};

/// Deterministic backend driven by the synthetic world. Emits
/// lp_pos = log p, lp_neg = log(1 - p) for the oracle probability p.
class MockOracleClient final : public ModelClient {
 public:
  MockOracleClient(std::shared_ptr<const LatentWorld> world, OracleMode mode, std::optional<Timestamp> frozen_time = {},
                   MaskedParse masked = {});

  std::string name() const override;
  AnswerLogprobs logprobs(const ScoringRequest& request) override;

  /// The logit the backend assigns to a prompt.
  double prompt_logit(std::string_view prompt) const;

 private:
  double masked_logit(std::string_view prompt) const;

  std::shared_ptr<const LatentWorld> world_;
  OracleMode mode_;
  std::optional<Timestamp> frozen_time_;
  MaskedParse masked_;
};

/// Pulls "Key: value" pairs out of one bracketed item rendering.
std::vector<KeyValue> parse_item_fields(std::string_view bracketed);

}  // namespace brewrank::synthetic
