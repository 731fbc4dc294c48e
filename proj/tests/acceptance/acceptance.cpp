// Acceptance gate: one PASS/FAIL line per criterion.
//
//   nfgen_acceptance [--only ID ...] [--workdir DIR] [--pipeline]
//
// Criteria 7, 9 and 10 read the artifacts of one synthetic pipeline run in
// DIR; --pipeline (or a run without --only) produces them first.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "nfgen/checkpoint.hpp"
#include "nfgen/detect.hpp"
#include "nfgen/discretize.hpp"
#include "nfgen/ingest.hpp"
#include "nfgen/labels.hpp"
#include "nfgen/model.hpp"
#include "nfgen/pipeline.hpp"
#include "nfgen/train.hpp"
#include "oracles.hpp"

using namespace nfgen;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

PipelineConfig acceptance_config(const fs::path& workdir) {
  std::ifstream in(NFGEN_ACCEPTANCE_CONFIG);
  if (!in) throw MissingArtifact(NFGEN_ACCEPTANCE_CONFIG);
  json doc = json::parse(in);
  doc["paths"]["workdir"] = workdir.string();
  return PipelineConfig::from_json(doc);
}

// ---------------------------------------------------------------------------

Outcome schema_exactness() {
  const auto full = FeatureSchema::full();
  int groups[4] = {};
  for (const auto& f : full.features()) groups[static_cast<int>(f.kind)]++;
  const int light = FeatureSchema::light().size();
  const bool ok = full.size() == 86 && groups[0] == 6 && groups[1] == 24 && groups[2] == 48 && groups[3] == 8 &&
                  light == 6;
  return {ok, std::to_string(full.size()) + " = " + std::to_string(groups[0]) + "+" + std::to_string(groups[1]) +
                  "+" + std::to_string(groups[2]) + "+" + std::to_string(groups[3]) + ", light " +
                  std::to_string(light)};
}

Outcome feature_sum_conservation() {
  const auto t0 = Clock::now();
  NodeRegistry reg;
  for (int v = 0; v < 5; ++v) reg.add(0x0A000001u + static_cast<Ipv4>(v), "c" + std::to_string(v % 2));
  std::mt19937_64 rng(2024);
  const std::int64_t start = 28'000'000;
  const std::uint8_t protos[] = {1, 6, 17, 47, 50, 132};
  std::vector<FlowRecord> recs(1000);
  for (auto& r : recs) {
    r.timestamp_s = start * 60 + static_cast<std::int64_t>(rng() % 600);
    const Ipv4 outside = 0xC6120000u + static_cast<Ipv4>(rng() % 4096);
    const bool inbound = rng() % 2;
    r.src_ip = inbound ? outside : reg.ip(static_cast<int>(rng() % 5));
    r.dst_ip = inbound ? reg.ip(static_cast<int>(rng() % 5)) : outside;
    if (rng() % 8 == 0) r.src_ip = reg.ip(static_cast<int>(rng() % 5));
    r.src_port = static_cast<std::uint16_t>(rng() % 65536);
    r.dst_port = static_cast<std::uint16_t>(rng() % 65536);
    r.protocol = protos[rng() % std::size(protos)];
    r.tcp_flags = static_cast<std::uint8_t>(rng() % 256);
    r.packets = 1 + rng() % 1000;
    r.bytes = r.packets * (20 + rng() % 9000);
  }
  const auto schema = FeatureSchema::full();
  const auto t = accumulate(recs, reg, schema, {start, start + 10}).tensor;
  std::int64_t checks = 0, mismatches = 0;
  for (int v = 0; v < t.nodes(); ++v) {
    for (int m = 0; m < t.minutes(); ++m) {
      for (int d = 0; d < kDirections; ++d) {
        for (int k = 0; k < kMeasures; ++k) {
          const auto dir = static_cast<Direction>(d);
          const auto meas = static_cast<Measure>(k);
          const auto vol = static_cast<std::uint64_t>(t.at(v, m, schema.volume_index(dir, meas)));
          std::uint64_t proto = 0, port = 0;
          for (int p = 0; p < kProtocolClasses; ++p)
            proto += static_cast<std::uint64_t>(t.at(v, m, schema.protocol_index(static_cast<ProtocolClass>(p), dir, meas)));
          for (int c = 0; c < kPortCategories; ++c)
            port += static_cast<std::uint64_t>(t.at(v, m, schema.port_index(static_cast<PortCategory>(c), dir, meas)));
          checks += 2;
          mismatches += (proto != vol) + (port != vol);
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 1.0, std::to_string(checks) + " (node, minute, direction, measure) sums, " +
                                              std::to_string(mismatches) + " mismatches, " + fmt(secs, 3) + " s"};
}

Outcome binning_fidelity() {
  const auto t0 = Clock::now();
  constexpr int N = 10;
  std::mt19937_64 rng(77);
  int cutoff_mismatch = 0, zero_violations = 0, distinct_series = 0, unbalanced = 0;
  double worst = 0.0;
  for (int s = 0; s < 200; ++s) {
    const int T = std::uniform_int_distribution<int>(20, 5000)(rng);
    const bool distinct = s % 2 == 0;
    const double zero_share = std::uniform_real_distribution<double>(0.0, 0.6)(rng);
    std::vector<double> x(static_cast<std::size_t>(T));
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::uniform_real_distribution<double>(0, 1)(rng) < zero_share) {
        x[i] = 0.0;
      } else if (distinct) {
        x[i] = static_cast<double>(i + 1) + std::uniform_real_distribution<double>(0.0, 0.5)(rng);
      } else {
        x[i] = static_cast<double>(1 + rng() % 40);
      }
    }
    std::shuffle(x.begin(), x.end(), rng);
    const auto c = fit_bins(x, N);
    if (c.cutoffs != oracle::reference_cutoffs(x, N)) ++cutoff_mismatch;
    std::vector<int> counts(N, 0);
    int positives = 0;
    for (double v : x) {
      const int k = discretize_value(v, c);
      if ((k == 0) != (v == 0.0)) ++zero_violations;
      counts[static_cast<std::size_t>(k)]++;
      positives += v > 0.0;
    }
    if (distinct && positives >= N - 1) {
      ++distinct_series;
      const double share = static_cast<double>(positives) / (N - 1);
      double dev = 0.0;
      for (int k = 1; k < N; ++k) dev = std::max(dev, std::abs(counts[static_cast<std::size_t>(k)] - share));
      worst = std::max(worst, dev);
      if (dev > 2.0) ++unbalanced;
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = cutoff_mismatch == 0 && zero_violations == 0 && unbalanced == 0 && secs < 10.0;
  return {ok, "cutoff mismatches " + std::to_string(cutoff_mismatch) + "/200, category-0 violations " +
                  std::to_string(zero_violations) + ", series outside +-2 of balance " + std::to_string(unbalanced) +
                  "/" + std::to_string(distinct_series) + " (worst deviation " + fmt(worst, 3) + "), " +
                  fmt(secs, 3) + " s"};
}

Outcome causality() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.hidden = 32;
  cfg.ff = 64;
  cfg.max_len = 64;
  cfg.features = 86;
  cfg.bins = 10;
  cfg.nodes = 4;
  cfg.customers = 2;
  cfg.dropout = 0.1;
  Model m(cfg);
  m.init_random(5, 0.1);
  std::mt19937_64 rng(6);
  int violations = 0;
  for (int s = 0; s < 50; ++s) {
    const int T = std::uniform_int_distribution<int>(2, 64)(rng);
    std::vector<std::uint8_t> a(static_cast<std::size_t>(T * cfg.features));
    for (auto& v : a) v = static_cast<std::uint8_t>(rng() % 10);
    const int tp = std::uniform_int_distribution<int>(1, T - 1)(rng);
    auto b = a;
    for (int f = 0; f < cfg.features; ++f) {
      for (int t = tp; t < T; ++t) b[static_cast<std::size_t>(t * cfg.features + f)] = static_cast<std::uint8_t>(rng() % 10);
    }
    const SequenceView sa{1, 1, 28'000'000 + s, T, a};
    const SequenceView sb{1, 1, 28'000'000 + s, T, b};
    const auto ra = m.forward(sa);
    const auto rb = m.forward(sb);
    // Rows before tp consumed only minutes before tp.
    if (ra.bos_logits != rb.bos_logits || ra.logits.topRows(tp) != rb.logits.topRows(tp) ||
        ra.hidden.topRows(tp) != rb.hidden.topRows(tp)) {
      ++violations;
    }
  }
  return {violations == 0, std::to_string(violations) + " of 50 sequences changed an output before the perturbation"};
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.hidden = 16;
  cfg.ff = 64;
  cfg.max_len = 5;
  cfg.features = 3;
  cfg.bins = 4;
  cfg.nodes = 2;
  cfg.customers = 2;
  cfg.dropout = 0.0;
  Transformer<double> m(cfg);
  m.init_random(13, 0.4);
  std::mt19937_64 rng(14);
  std::vector<std::uint8_t> toks(5 * 3);
  for (auto& v : toks) v = static_cast<std::uint8_t>(rng() % 4);
  const SequenceView seq{1, 0, 28'000'123, 5, toks};
  Transformer<double>::Vec grad = Transformer<double>::Vec::Zero(m.params().size());
  m.sequence_loss(seq, Mode::eval, 0, &grad, 1.0);
  double worst = 0.0;
  std::string worst_name;
  const double h = 1e-5;
  for (const auto& n : m.layout().tensors()) {
    Eigen::VectorXd a(n.slot.size()), fd(n.slot.size());
    for (std::size_t i = 0; i < n.slot.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(n.slot.offset + i);
      const double orig = m.params()(k);
      m.params()(k) = orig + h;
      const double up = m.sequence_loss(seq, Mode::eval).nll;
      m.params()(k) = orig - h;
      const double dn = m.sequence_loss(seq, Mode::eval).nll;
      m.params()(k) = orig;
      fd(static_cast<Eigen::Index>(i)) = (up - dn) / (2 * h);
      a(static_cast<Eigen::Index>(i)) = grad(k);
    }
    const double scale = std::max(a.norm(), fd.norm());
    if (scale == 0.0) continue;
    const double err = (a - fd).norm() / scale;
    if (err > worst) worst = err, worst_name = n.name;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0, std::to_string(m.parameter_count()) + " parameters, worst relative error " +
                                           fmt(worst, 3) + " (" + worst_name + "), " + fmt(secs, 3) + " s"};
}

Outcome metric_identities() {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.hidden = 16;
  cfg.ff = 32;
  cfg.max_len = 64;
  cfg.features = 5;
  cfg.bins = 10;
  cfg.nodes = 3;
  cfg.customers = 1;
  cfg.dropout = 0.0;
  TokenTensor train(3, 300, 5, 28'000'000, "h"), val(3, 150, 5, 28'000'300, "h");
  std::mt19937_64 rng(8);
  for (auto* t : {&train, &val})
    for (auto& v : t->data()) v = static_cast<std::uint8_t>(std::min<std::uint64_t>(9, rng() % 4 + rng() % 8));
  TokenDataset dval(val, {0, 0, 0});

  Model random(cfg);
  random.init_random(3, 0.2);
  const auto mr = evaluate(random, dval, 64, 1);
  const double ppl_err = std::abs(mr.ppl - std::exp(mr.loss)) / mr.ppl;

  Transformer<double> uniform(cfg);  // zero parameters: uniform predictive distribution
  LossSum u;
  for (int v = 0; v < 3; ++v) {
    for (const auto& unit : make_units(1, 0, val.minutes(), 64)) {
      SequenceView s{v, 0, val.start_minute() + unit.begin, unit.length, val.window(v, unit.begin, unit.length)};
      u += uniform.sequence_loss(s, Mode::eval);
    }
  }
  const double uniform_err = std::abs(u.nll / static_cast<double>(u.count) - std::log(10.0));

  const auto bg = BigramModel::fit(train, 10).evaluate(val, 64);
  const auto oracle = oracle::bigram_oracle(train, val, 10, 64);
  const double oracle_ppl = std::exp(oracle.nll / static_cast<double>(oracle.count));
  const bool ok = ppl_err <= 1e-9 && uniform_err <= 1e-9 && bg.ppl == oracle_ppl;
  return {ok, "|PPL - exp(loss)|/PPL " + fmt(ppl_err, 3) + ", |uniform loss - ln 10| " + fmt(uniform_err, 3) +
                  ", bigram PPL " + fmt(bg.ppl, 10) + " vs oracle " + fmt(oracle_ppl, 10)};
}

Outcome survival_monotonicity() {
  std::mt19937_64 rng(99);
  int violations = 0;
  for (int i = 0; i < 1000; ++i) {
    SurvivalHead head(8, 16);
    head.init_random(rng(), std::uniform_real_distribution<double>(0.001, 0.9)(rng));
    head.params() += Eigen::VectorXd::Random(static_cast<Eigen::Index>(head.parameter_count())) * 2.0;
    const Eigen::MatrixXd states = Eigen::MatrixXd::Random(30, 8) * 4.0;
    const auto s = head.survival(states);
    for (std::size_t t = 0; t < s.size(); ++t) {
      if (s[t] < 0.0 || s[t] > 1.0 || (t > 0 && s[t] > s[t - 1])) {
        ++violations;
        break;
      }
    }
  }
  return {violations == 0, std::to_string(violations) + " of 1000 random heads produced a rising survival curve"};
}

Outcome unseen_node_mapping() {
  RawTensor train(6, 400, 86, 28'000'000, FeatureSchema::full().hash());
  std::mt19937_64 rng(31);
  for (auto& v : train.data()) v = rng() % 3 == 0 ? 0.0 : static_cast<double>(rng() % 5000);
  const auto disc = Discretizer::fit(train, 10);
  RawTensor held(2, 400, 86, 28'000'000, train.schema_hash());
  for (int m = 0; m < 400; ++m)
    for (int f = 0; f < 86; ++f) {
      held.at(0, m, f) = train.at(4, m, f);
      held.at(1, m, f) = train.at(1, m, f);
    }
  const auto map = disc.map_unseen(held);
  const double d0 = l1_distance(summarize_node(held, 0), disc.summaries()[4]);
  // Ties: duplicate summaries at indices 1 and 3; equidistant candidates.
  std::vector<NodeSummary> cand = disc.summaries();
  cand[3] = cand[1];
  const int tie_dup = nearest_training_node(cand[1], cand);
  const std::vector<NodeSummary> eq{{0, 0, 0, 0, 0}, {2, 2, 2, 2, 2}, {0, 0, 0, 0, 0}};
  const int tie_mid = nearest_training_node({1, 1, 1, 1, 1}, eq);
  const bool ok = map == std::vector<int>{4, 1} && d0 == 0.0 && tie_dup == 1 && tie_mid == 0;
  return {ok, "duplicates mapped to " + std::to_string(map[0]) + "," + std::to_string(map[1]) + " (expected 4,1) at L1 " +
                  fmt(d0) + "; ties resolved to " + std::to_string(tie_dup) + " and " + std::to_string(tie_mid)};
}

// ---------------------------------------------------------------------------
// Pipeline-backed criteria

json read_stage_times(const fs::path& workdir) { return read_json_file(workdir / "acceptance_times.json"); }

void run_pipeline(const fs::path& workdir) {
  const auto cfg = acceptance_config(workdir);
  fs::create_directories(workdir);
  json times = json::object();
  for (auto stage : kStages) {
    const auto summary = run_stage(stage, cfg, &std::cerr);
    std::cout << summary.dump() << '\n' << std::flush;
    times[std::string(stage)] = summary.at("wall_s");
  }
  write_json_file(workdir / "acceptance_times.json", times);
}

double sum_times(const json& times, std::initializer_list<const char*> stages) {
  double s = 0.0;
  for (auto st : stages) s += times.at(st).get<double>();
  return s;
}

Outcome perplexity_vs_bigram(const fs::path& workdir) {
  const auto ev = read_json_file(workdir / "evaluation.json");
  const auto times = read_stage_times(workdir);
  const double secs = sum_times(times, {"gen-synthetic", "ingest", "discretize", "pretrain", "evaluate"});
  const double ppl = ev.at("val_ppl").get<double>(), bigram = ev.at("val_bigram_ppl").get<double>();
  return {ppl <= bigram && secs <= 1800.0,
          "val PPL " + fmt(ppl, 5) + " vs bigram " + fmt(bigram, 5) + ", " + fmt(secs, 4) + " s"};
}

Outcome end_to_end_detection(const fs::path& workdir) {
  const auto rep = read_json_file(workdir / "report.json");
  const auto cfg = acceptance_config(workdir);
  const auto labels = read_labels_csv(cfg.labels);
  const auto times = read_stage_times(workdir);
  double secs = 0.0;
  for (auto it = times.begin(); it != times.end(); ++it) secs += it.value().get<double>();
  const double f1 = rep.at("f1").get<double>();
  const double median = rep.at("mitigation_median").get<double>();
  const bool ok = labels.size() == 40 && cfg.synth.magnitude == 10.0 && cfg.detection.overhead_cap == 0.1 &&
                  cfg.detection.customer_fraction == 80.0 && f1 >= 0.9 && median <= 3.0 && secs <= 900.0;
  return {ok, std::to_string(labels.size()) + " attacks, F1 " + fmt(f1, 4) + ", median mitigation " + fmt(median, 3) +
                  " min (TP/FP/TN/FN " + std::to_string(rep.at("tp").get<int>()) + "/" +
                  std::to_string(rep.at("fp").get<int>()) + "/" + std::to_string(rep.at("tn").get<int>()) + "/" +
                  std::to_string(rep.at("fn").get<int>()) + ", tau " + fmt(rep.at("tau").get<double>(), 3) + "), " +
                  fmt(secs, 4) + " s"};
}

Outcome threshold_monotonicity(const fs::path& workdir) {
  const auto cfg = acceptance_config(workdir);
  const auto schema = FeatureSchema::make(cfg.schema);
  const auto raw = load_raw_tensor(workdir / "raw");
  const auto tokens = load_token_tensor(workdir / "tokens");
  const auto ck = load_checkpoint(workdir / "model");
  const auto head = SurvivalHead::from_json(read_json_file(workdir / "head.json"));
  const auto labels = read_labels_csv(cfg.labels);
  const auto customers = ck.meta.vocab.at("customer_of").get<std::vector<int>>();
  const auto set = build_examples(raw, schema, labels, customers, cfg.splits.finetune, cfg.detection);
  std::vector<std::vector<double>> curves;
  for (const auto& s : encode_examples(ck.model, tokens, set.examples)) curves.push_back(head.survival(s));

  const auto grid = default_tau_grid();
  const std::vector<double> caps{100.0, 50.0, 20.0, 10.0, 5.0, 2.0, 1.0, 0.5, 0.2, 0.1, 0.05, 0.01, 0.0};
  int feasible = 0, violations = 0;
  double prev = std::numeric_limits<double>::infinity();
  std::string trace;
  for (double cap : caps) {
    const auto p = select_threshold(set.examples, curves, cap, cfg.detection.customer_fraction, grid);
    if (!p.feasible) continue;
    ++feasible;
    if (p.mean_effectiveness > prev + 1e-12) ++violations;
    prev = p.mean_effectiveness;
    trace += (trace.empty() ? "" : ", ") + fmt(cap, 3) + "%:" + fmt(p.mean_effectiveness, 4);
  }
  return {violations == 0 && feasible > 0, std::to_string(feasible) + " caps with a feasible tau, " +
                                               std::to_string(violations) + " increases when tightening [" + trace +
                                               "]"};
}

struct Criterion {
  int id;
  const char* name;
  bool needs_pipeline;
  std::function<Outcome(const fs::path&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> only;
  fs::path workdir = "acceptance-work";
  bool pipeline = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      only.push_back(std::stoi(argv[++i]));
    } else if (a == "--workdir" && i + 1 < argc) {
      workdir = argv[++i];
    } else if (a == "--pipeline") {
      pipeline = true;
    } else {
      std::cerr << "usage: nfgen_acceptance [--only ID]... [--workdir DIR] [--pipeline]\n";
      return 2;
    }
  }

  const std::vector<Criterion> criteria{
      {1, "Schema exactness", false, [](const fs::path&) { return schema_exactness(); }},
      {2, "Feature-sum conservation", false, [](const fs::path&) { return feature_sum_conservation(); }},
      {3, "Binning algorithm fidelity", false, [](const fs::path&) { return binning_fidelity(); }},
      {4, "Causality", false, [](const fs::path&) { return causality(); }},
      {5, "Gradient check", false, [](const fs::path&) { return gradient_check(); }},
      {6, "Metric identities", false, [](const fs::path&) { return metric_identities(); }},
      {7, "Synthetic PPL vs bigram baseline", true, perplexity_vs_bigram},
      {8, "Survival monotonicity", false, [](const fs::path&) { return survival_monotonicity(); }},
      {9, "End-to-end detection", true, end_to_end_detection},
      {10, "Threshold-selection monotonicity", true, threshold_monotonicity},
      {11, "Unseen-node mapping", false, [](const fs::path&) { return unseen_node_mapping(); }},
  };

  if (pipeline || only.empty()) {
    try {
      run_pipeline(workdir);
    } catch (const std::exception& e) {
      std::cerr << "pipeline failed: " << e.what() << '\n';
      if (pipeline) return 1;
    }
    if (pipeline && only.empty()) return 0;
  }

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    try {
      o = c.run(workdir);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << ": " << o.detail << '\n'
              << std::flush;
  }
  return failed == 0 ? 0 : 1;
}
