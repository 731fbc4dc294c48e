#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "nfgen/artifact.hpp"
#include "nfgen/detect.hpp"
#include "nfgen/model.hpp"
#include "nfgen/schema.hpp"
#include "nfgen/synth.hpp"
#include "nfgen/train.hpp"

namespace nfgen {

struct Splits {
  MinuteRange train{0, 14336};
  MinuteRange val{14336, 16384};
  MinuteRange finetune{16384, 18192};
  MinuteRange test{18192, 20000};
};

/// Resolved pipeline configuration. Relative paths are resolved against the
/// work directory.
struct PipelineConfig {
  json doc;
  std::filesystem::path workdir;
  std::filesystem::path flows, registry, labels;
  SchemaVariant schema = SchemaVariant::full;
  SynthConfig synth;
  std::int64_t ingest_start = 0;
  int ingest_minutes = 0;
  Splits splits;
  int bins = 10;
  ModelConfig model;
  TrainConfig train;
  DetectionConfig detection;
  std::uint64_t seed = 0;

  /// Section seeds default to the root seed.
  static PipelineConfig from_json(const json& doc);
};

/// The built-in defaults; every key can be overridden.
json default_pipeline_config();

/// Applies `a.b.c=value`; value is parsed as JSON when possible, else kept as
/// a string. Throws ValidationError on malformed input.
void apply_override(json& doc, std::string_view assignment);

/// Recursively merges `patch` into `base` (objects merge, other values replace).
void merge_json(json& base, const json& patch);

inline constexpr std::string_view kStages[] = {"gen-synthetic", "ingest",   "discretize", "pretrain",
                                               "evaluate",      "finetune", "detect",     "report"};

/// Lineage digests: each artifact records the digest of the configuration
/// that produced it, chained through its inputs.
struct Digests {
  std::string raw, tokens, model, head, detections;
};
Digests compute_digests(const PipelineConfig& cfg);

/// Runs one stage and returns its one-line summary. Progress goes to `log`.
json run_stage(std::string_view stage, const PipelineConfig& cfg, std::ostream* log = nullptr);

}  // namespace nfgen
