#include "nfgen/pipeline.hpp"

#include <chrono>
#include <fstream>

#include "nfgen/checkpoint.hpp"
#include "nfgen/discretize.hpp"
#include "nfgen/error.hpp"
#include "nfgen/ingest.hpp"
#include "nfgen/labels.hpp"
#include "nfgen/registry.hpp"

namespace nfgen {

namespace fs = std::filesystem;

json default_pipeline_config() {
  SynthConfig synth;
  Splits s;
  synth.attack_regions = {{20, s.finetune.begin + 100, s.finetune.end - 40}, {20, s.test.begin + 100, s.test.end - 40}};
  json synth_doc = synth.to_json();
  synth_doc.erase("seed");
  synth_doc.erase("attacks");
  json train_doc = TrainConfig{}.to_json();
  train_doc.erase("seed");
  json det_doc = DetectionConfig{}.to_json();
  det_doc.erase("seed");
  json model_doc = ModelConfig{}.to_json();
  model_doc.erase("features");
  model_doc.erase("bins");
  model_doc.erase("nodes");
  model_doc.erase("customers");
  return json{{"paths", {{"flows", "flows.csv"}, {"registry", "registry.csv"}, {"labels", "labels.csv"}, {"workdir", "work"}}},
              {"schema", "full"},
              {"seed", 0},
              {"synth", synth_doc},
              {"ingest", json::object()},
              {"splits",
               {{"train", {s.train.begin, s.train.end}},
                {"val", {s.val.begin, s.val.end}},
                {"finetune", {s.finetune.begin, s.finetune.end}},
                {"test", {s.test.begin, s.test.end}}}},
              {"discretizer", {{"bins", 10}}},
              {"model", model_doc},
              {"train", train_doc},
              {"detection", det_doc}};
}

void merge_json(json& base, const json& patch) {
  if (!base.is_object() || !patch.is_object()) {
    base = patch;
    return;
  }
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object()) {
      merge_json(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ValidationError("override '" + std::string(assignment) + "' must look like key.path=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("empty path component in override '" + key + "'");
    if (!node->is_object()) throw ValidationError("override '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

namespace {

MinuteRange range_from(const json& j, const char* name) {
  if (!j.is_array() || j.size() != 2) throw ValidationError(std::string("split '") + name + "' must be [begin, end]");
  MinuteRange r{j[0].get<int>(), j[1].get<int>()};
  if (r.begin < 0 || r.end <= r.begin) throw ValidationError(std::string("split '") + name + "' is empty or negative");
  return r;
}

fs::path resolve(const fs::path& workdir, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : workdir / path;
}

std::string digest_of(const json& j) { return hex64(fnv1a(j.dump())); }

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& input) {
  json doc = default_pipeline_config();
  merge_json(doc, input);
  PipelineConfig c;
  c.doc = doc;
  c.seed = doc.at("seed").get<std::uint64_t>();
  const auto& paths = doc.at("paths");
  c.workdir = paths.value("workdir", std::string("work"));
  c.flows = resolve(c.workdir, paths.value("flows", std::string("flows.csv")));
  c.registry = resolve(c.workdir, paths.value("registry", std::string("registry.csv")));
  c.labels = resolve(c.workdir, paths.value("labels", std::string("labels.csv")));
  c.schema = parse_schema_variant(doc.at("schema").get<std::string>());

  json synth = doc.at("synth");
  if (!synth.contains("seed")) synth["seed"] = c.seed;
  c.synth = SynthConfig::from_json(synth);
  c.synth.validate();

  const auto& ingest = doc.at("ingest");
  c.ingest_start = ingest.value("start_minute", c.synth.start_minute);
  c.ingest_minutes = ingest.value("minutes", c.synth.span_minutes);
  if (c.ingest_minutes < 1) throw ValidationError("ingest span must be at least one minute");

  const auto& sp = doc.at("splits");
  c.splits.train = range_from(sp.at("train"), "train");
  c.splits.val = range_from(sp.at("val"), "val");
  c.splits.finetune = range_from(sp.at("finetune"), "finetune");
  c.splits.test = range_from(sp.at("test"), "test");
  for (const auto* r : {&c.splits.train, &c.splits.val, &c.splits.finetune, &c.splits.test}) {
    if (r->end > c.ingest_minutes) throw ValidationError("a split extends past the ingested span");
  }
  if (c.splits.val.begin < c.splits.train.end) throw ValidationError("validation split must follow training");

  c.bins = doc.at("discretizer").value("bins", 10);
  if (c.bins < 2 || c.bins > 255) throw ValidationError("discretizer bins must be in [2, 255]");
  c.model = ModelConfig::from_json(doc.at("model"));
  c.model.bins = c.bins;
  c.model.validate();

  json train = doc.at("train");
  if (!train.contains("seed")) train["seed"] = c.seed;
  c.train = TrainConfig::from_json(train);
  c.train.validate();
  json det = doc.at("detection");
  if (!det.contains("seed")) det["seed"] = c.seed;
  c.detection = DetectionConfig::from_json(det);
  c.detection.validate();
  return c;
}

Digests compute_digests(const PipelineConfig& c) {
  Digests d;
  d.raw = digest_of({{"schema", to_string(c.schema)},
                     {"flows", c.doc.at("paths").value("flows", std::string())},
                     {"registry", c.doc.at("paths").value("registry", std::string())},
                     {"start", c.ingest_start},
                     {"minutes", c.ingest_minutes}});
  d.tokens = digest_of({{"raw", d.raw}, {"bins", c.bins}, {"train", {c.splits.train.begin, c.splits.train.end}}});
  json model = c.model.to_json();
  model.erase("nodes");
  model.erase("customers");
  model.erase("features");
  d.model = digest_of({{"tokens", d.tokens},
                       {"model", model},
                       {"train", c.train.to_json()},
                       {"val", {c.splits.val.begin, c.splits.val.end}}});
  d.head = digest_of({{"model", d.model},
                      {"detection", c.detection.to_json()},
                      {"labels", c.doc.at("paths").value("labels", std::string())},
                      {"finetune", {c.splits.finetune.begin, c.splits.finetune.end}}});
  d.detections = digest_of({{"head", d.head}, {"test", {c.splits.test.begin, c.splits.test.end}}});
  return d;
}

namespace {

struct Stage {
  const PipelineConfig& cfg;
  Digests digests;
  FeatureSchema schema;
  std::ostream* log;

  fs::path work(const std::string& name) const { return cfg.workdir / name; }

  void note(const std::string& msg) const {
    if (log) *log << msg << '\n' << std::flush;
  }

  static void require_digest(const json& header, const std::string& expected, const std::string& what) {
    const auto got = header.value("config_digest", std::string{});
    if (got != expected) {
      throw SchemaMismatch(what + " was produced under config digest " + got + " but the current config expects " +
                           expected + "; rerun the producing stage");
    }
  }

  RawTensor load_raw() const {
    json header;
    auto raw = load_raw_tensor(work("raw"), &header);
    require_schema(header, schema.hash(), "raw tensor");
    require_digest(header, digests.raw, "raw tensor");
    return raw;
  }

  TokenTensor load_tokens() const {
    json header;
    auto tokens = load_token_tensor(work("tokens"), &header);
    require_schema(header, schema.hash(), "token tensor");
    require_digest(header, digests.tokens, "token tensor");
    return tokens;
  }

  Checkpoint load_model() const {
    auto ck = load_checkpoint(work("model"));
    if (ck.meta.schema_hash != schema.hash()) throw SchemaMismatch("checkpoint schema differs from the config schema");
    if (ck.meta.config_digest != digests.model) {
      throw SchemaMismatch("checkpoint was produced under config digest " + ck.meta.config_digest +
                           " but the current config expects " + digests.model + "; rerun pretrain");
    }
    return ck;
  }

  std::vector<AttackLabel> load_labels() const {
    if (!fs::exists(cfg.labels)) throw MissingArtifact(cfg.labels.string());
    return read_labels_csv(cfg.labels);
  }

  NodeRegistry load_registry() const {
    if (!fs::exists(cfg.registry)) throw MissingArtifact(cfg.registry.string());
    return NodeRegistry::read_csv(cfg.registry);
  }

  static std::vector<int> customers_from(const Checkpoint& ck) {
    return ck.meta.vocab.at("customer_of").get<std::vector<int>>();
  }

  json gen_synthetic() const {
    SyntheticTraffic gen(cfg.synth);
    fs::create_directories(cfg.workdir);
    for (const auto& p : {cfg.flows, cfg.registry, cfg.labels}) {
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
    }
    std::uint64_t records = 0;
    std::ofstream flows(cfg.flows, std::ios::binary | std::ios::trunc);
    if (!flows) throw Error("cannot write " + cfg.flows.string());
    write_flow_csv_header(flows);
    auto gt = gen.generate([&](std::span<const FlowRecord> batch) {
      for (const auto& r : batch) write_flow_csv_row(flows, r);
      records += batch.size();
    });
    flows.close();
    {
      std::ofstream reg(cfg.registry, std::ios::binary | std::ios::trunc);
      gen.registry().write_csv(reg);
      std::ofstream lab(cfg.labels, std::ios::binary | std::ios::trunc);
      write_labels_csv(lab, gt.attacks);
    }
    json attacks = json::array();
    for (std::size_t i = 0; i < gt.attacks.size(); ++i) {
      const auto& a = gt.attacks[i];
      double total = 0.0;
      for (double b : gt.anomalous_bytes[i]) total += b;
      attacks.push_back({{"node", a.node},
                         {"start_minute", a.start_minute},
                         {"end_minute", a.end_minute},
                         {"type", to_string(a.type)},
                         {"anomalous_bytes", gt.anomalous_bytes[i]},
                         {"total_anomalous_bytes", total}});
    }
    write_json_file(work("ground_truth.json"),
                    {{"kind", "ground_truth"}, {"synth", cfg.synth.to_json()}, {"attacks", attacks}});
    return {{"stage", "gen-synthetic"},
            {"flows", cfg.flows.string()},
            {"records", records},
            {"nodes", cfg.synth.nodes},
            {"customers", cfg.synth.customers},
            {"minutes", cfg.synth.span_minutes},
            {"attacks", gt.attacks.size()}};
  }

  json ingest() const {
    auto registry = load_registry();
    std::ifstream in(cfg.flows, std::ios::binary);
    if (!in) throw MissingArtifact(cfg.flows.string());
    Accumulator acc(registry, schema, {cfg.ingest_start, cfg.ingest_start + cfg.ingest_minutes});
    for_each_flow_csv(in, [&acc](const FlowRecord& r) { acc.add(r); });
    save_tensor(acc.tensor(), work("raw"),
                {{"config_digest", digests.raw}, {"accepted", acc.accepted()}, {"skipped", acc.skipped()}});
    return {{"stage", "ingest"},
            {"nodes", registry.node_count()},
            {"minutes", cfg.ingest_minutes},
            {"features", schema.size()},
            {"accepted", acc.accepted()},
            {"skipped", acc.skipped()},
            {"schema_hash", schema.hash()}};
  }

  json discretize() const {
    auto raw = load_raw();
    auto disc = Discretizer::fit(raw, cfg.bins, cfg.splits.train.begin, cfg.splits.train.end);
    auto tokens = disc.transform(raw);
    json doc = disc.to_json();
    doc["config_digest"] = digests.tokens;
    write_json_file(work("discretizer.json"), doc);
    save_tensor(tokens, work("tokens"), {{"config_digest", digests.tokens}});
    return {{"stage", "discretize"}, {"bins", cfg.bins}, {"schema_hash", schema.hash()}};
  }

  json pretrain_stage() const {
    auto tokens = load_tokens();
    auto registry = load_registry();
    if (registry.node_count() != tokens.nodes()) throw SchemaMismatch("registry and token tensor differ in nodes");
    ModelConfig mc = cfg.model;
    mc.features = tokens.features();
    mc.nodes = registry.node_count();
    mc.customers = registry.customer_count();
    const auto train = tokens.slice_minutes(cfg.splits.train.begin, cfg.splits.train.end);
    const auto val = tokens.slice_minutes(cfg.splits.val.begin, cfg.splits.val.end);
    TokenDataset dtr(train, registry.customers()), dva(val, registry.customers());

    std::ofstream train_log(work("train_log.jsonl"), std::ios::trunc);
    auto res = pretrain(dtr, dva, mc, cfg.train, &train_log);
    const auto bigram = BigramModel::fit(train, cfg.bins).evaluate(val, cfg.train.unit_len);
    note("pretrain: best epoch " + std::to_string(res.best_epoch) + ", val ppl " + std::to_string(res.best_val.ppl) +
         ", bigram ppl " + std::to_string(bigram.ppl));

    CheckpointMeta meta;
    meta.schema_hash = schema.hash();
    meta.config_digest = digests.model;
    meta.steps = res.steps;
    meta.metrics = {{"val", res.best_val.to_json()},
                    {"bigram_val", bigram.to_json()},
                    {"best_epoch", res.best_epoch},
                    {"epochs_run", res.history.size()}};
    json ips = json::array(), names = json::array();
    for (int v = 0; v < registry.node_count(); ++v) ips.push_back(format_ipv4(registry.ip(v)));
    for (int c = 0; c < registry.customer_count(); ++c) names.push_back(registry.customer_name(c));
    meta.vocab = {{"nodes", ips}, {"customers", names}, {"customer_of", registry.customers()}};
    save_checkpoint(work("model"), res.best, meta);
    return {{"stage", "pretrain"},
            {"val_ppl", res.best_val.ppl},
            {"val_acc", res.best_val.accuracy},
            {"bigram_val_ppl", bigram.ppl},
            {"best_epoch", res.best_epoch},
            {"epochs_run", res.history.size()},
            {"steps", res.steps},
            {"parameters", res.best.parameter_count()}};
  }

  json evaluate_stage() const {
    auto ck = load_model();
    auto tokens = load_tokens();
    const auto customers = customers_from(ck);
    const auto train = tokens.slice_minutes(cfg.splits.train.begin, cfg.splits.train.end);
    const auto bigram = BigramModel::fit(train, cfg.bins);
    json out{{"stage", "evaluate"}};
    for (const auto& [name, range] : {std::pair{"val", cfg.splits.val}, std::pair{"test", cfg.splits.test}}) {
      const auto part = tokens.slice_minutes(range.begin, range.end);
      TokenDataset data(part, customers);
      const auto m = evaluate(ck.model, data, cfg.train.unit_len, cfg.train.threads);
      const auto b = bigram.evaluate(part, cfg.train.unit_len);
      out[std::string(name) + "_loss"] = m.loss;
      out[std::string(name) + "_ppl"] = m.ppl;
      out[std::string(name) + "_acc"] = m.accuracy;
      out[std::string(name) + "_bigram_ppl"] = b.ppl;
    }
    json doc = out;
    doc["kind"] = "evaluation";
    doc["schema_hash"] = schema.hash();
    doc["config_digest"] = digests.model;
    write_json_file(work("evaluation.json"), doc);
    return out;
  }

  struct Scored {
    ExampleSet set;
    std::vector<std::vector<double>> curves;
  };

  Scored score(const Checkpoint& ck, const SurvivalHead* head, MinuteRange split, std::vector<Eigen::MatrixXd>* states_out) const {
    auto raw = load_raw();
    auto tokens = load_tokens();
    const auto labels = load_labels();
    const auto customers = customers_from(ck);
    Scored s;
    s.set = build_examples(raw, schema, labels, customers, split, cfg.detection);
    for (const auto& w : s.set.warnings) note("warning: " + w);
    auto states = encode_examples(ck.model, tokens, s.set.examples);
    if (head) {
      for (const auto& st : states) s.curves.push_back(head->survival(st));
    }
    if (states_out) *states_out = std::move(states);
    return s;
  }

  json finetune_stage() const {
    auto ck = load_model();
    std::vector<Eigen::MatrixXd> states;
    auto scored = score(ck, nullptr, cfg.splits.finetune, &states);
    if (scored.set.examples.empty()) throw ValidationError("no fine-tuning examples in the finetune split");
    auto ft = finetune(states, scored.set.examples, cfg.detection);
    for (const auto& st : states) scored.curves.push_back(ft.head.survival(st));
    const auto choice = select_threshold(scored.set.examples, scored.curves, cfg.detection.overhead_cap,
                                         cfg.detection.customer_fraction);
    json doc = ft.head.to_json();
    doc["schema_hash"] = schema.hash();
    doc["config_digest"] = digests.head;
    doc["tau"] = choice.tau;
    doc["tau_feasible"] = choice.feasible;
    doc["finetune_mean_effectiveness"] = choice.mean_effectiveness;
    doc["finetune_violating_fraction"] = choice.violating_fraction;
    doc["final_loss"] = ft.loss_history.empty() ? 0.0 : ft.loss_history.back();
    doc["examples"] = scored.set.examples.size();
    doc["warnings"] = scored.set.warnings;
    write_json_file(work("head.json"), doc);
    return {{"stage", "finetune"},
            {"examples", scored.set.examples.size()},
            {"head_parameters", ft.head.parameter_count()},
            {"final_loss", doc["final_loss"]},
            {"tau", choice.tau},
            {"tau_feasible", choice.feasible},
            {"finetune_mean_effectiveness", choice.mean_effectiveness}};
  }

  json detect_stage() const {
    const json head_doc = read_json_file(work("head.json"));
    require_schema(head_doc, schema.hash(), "survival head");
    require_digest(head_doc, digests.head, "survival head");
    const auto head = SurvivalHead::from_json(head_doc);
    const double tau = head_doc.at("tau").get<double>();
    auto ck = load_model();
    auto scored = score(ck, &head, cfg.splits.test, nullptr);
    json examples = json::array();
    int detected = 0;
    for (std::size_t i = 0; i < scored.set.examples.size(); ++i) {
      const auto& ex = scored.set.examples[i];
      const auto td = detect(scored.curves[i], tau);
      detected += td ? 1 : 0;
      json e{{"node", ex.node},
             {"customer", ex.customer},
             {"type", to_string(ex.type)},
             {"label", ex.label},
             {"window_begin", ex.window_begin},
             {"history_begin", ex.history_begin},
             {"marks", ex.marks},
             {"volume", ex.volume},
             {"survival", scored.curves[i]},
             {"cusum_found", ex.cusum_found},
             {"t_detect", td ? json(*td) : json(nullptr)}};
      e["onset"] = ex.onset ? json(*ex.onset) : json(nullptr);
      e["end"] = ex.end ? json(*ex.end) : json(nullptr);
      e["labeled_start"] = ex.labeled_start ? json(*ex.labeled_start) : json(nullptr);
      examples.push_back(std::move(e));
    }
    write_json_file(work("detections.json"), {{"kind", "detections"},
                                              {"schema_hash", schema.hash()},
                                              {"config_digest", digests.detections},
                                              {"tau", tau},
                                              {"examples", examples},
                                              {"warnings", scored.set.warnings}});
    return {{"stage", "detect"}, {"examples", examples.size()}, {"detected", detected}, {"tau", tau}};
  }

  json report_stage() const {
    const json doc = read_json_file(work("detections.json"));
    require_schema(doc, schema.hash(), "detections");
    require_digest(doc, digests.detections, "detections");
    std::vector<DetectionExample> examples;
    std::vector<std::optional<int>> detections;
    for (const auto& e : doc.at("examples")) {
      DetectionExample ex;
      ex.node = e.at("node").get<int>();
      ex.customer = e.at("customer").get<int>();
      ex.type = parse_attack_type(e.at("type").get<std::string>());
      ex.label = e.at("label").get<int>();
      ex.window_begin = e.at("window_begin").get<int>();
      ex.history_begin = e.at("history_begin").get<int>();
      ex.marks = e.at("marks").get<std::vector<std::uint8_t>>();
      ex.volume = e.at("volume").get<std::vector<double>>();
      if (!e.at("onset").is_null()) ex.onset = e.at("onset").get<int>();
      if (!e.at("end").is_null()) ex.end = e.at("end").get<int>();
      examples.push_back(std::move(ex));
      detections.push_back(e.at("t_detect").is_null() ? std::nullopt : std::optional<int>(e.at("t_detect").get<int>()));
    }
    const auto rep = report(examples, detections, doc.at("tau").get<double>());
    json out = rep.to_json();
    out["kind"] = "report";
    out["schema_hash"] = schema.hash();
    out["config_digest"] = digests.detections;
    write_json_file(work("report.json"), out);
    std::ofstream(work("report.txt"), std::ios::trunc) << rep.to_table();
    note(rep.to_table());
    return {{"stage", "report"},
            {"f1", rep.f1},
            {"fpr_pct", rep.fpr},
            {"fnr_pct", rep.fnr},
            {"effectiveness_pct", rep.effectiveness},
            {"overhead_pct", rep.overhead},
            {"mitigation_median", rep.mitigation_median},
            {"tau", rep.tau}};
  }
};

}  // namespace

json run_stage(std::string_view stage, const PipelineConfig& cfg, std::ostream* log) {
  Stage s{cfg, compute_digests(cfg), FeatureSchema::make(cfg.schema), log};
  const auto start = std::chrono::steady_clock::now();
  json out;
  if (stage == "gen-synthetic") {
    out = s.gen_synthetic();
  } else if (stage == "ingest") {
    out = s.ingest();
  } else if (stage == "discretize") {
    out = s.discretize();
  } else if (stage == "pretrain") {
    out = s.pretrain_stage();
  } else if (stage == "evaluate") {
    out = s.evaluate_stage();
  } else if (stage == "finetune") {
    out = s.finetune_stage();
  } else if (stage == "detect") {
    out = s.detect_stage();
  } else if (stage == "report") {
    out = s.report_stage();
  } else {
    throw ValidationError("unknown stage '" + std::string(stage) + "'");
  }
  out["wall_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace nfgen
