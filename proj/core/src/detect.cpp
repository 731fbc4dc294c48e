#include "nfgen/detect.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include "nfgen/error.hpp"
#include "nfgen/seed.hpp"

namespace nfgen {

CusumResult cusum_onset(std::span<const double> reference, std::span<const double> series, double kappa, double h) {
  if (reference.size() < 10) throw ValidationError("CUSUM reference needs at least 10 minutes");
  CusumResult r;
  const double n = static_cast<double>(reference.size());
  for (double x : reference) r.mu += x;
  r.mu /= n;
  double var = 0.0;
  for (double x : reference) var += (x - r.mu) * (x - r.mu);
  r.sigma = std::sqrt(var / n);
  if (r.sigma == 0.0) {
    r.sigma = std::max(1.0, 0.01 * r.mu);
    r.sigma_substituted = true;
  }
  double s = 0.0;
  for (std::size_t t = 0; t < series.size(); ++t) {
    s = std::max(0.0, s + (series[t] - r.mu - kappa * r.sigma));
    if (s > h * r.sigma) {
      r.onset = static_cast<int>(t);
      break;
    }
  }
  return r;
}

int volume_feature(const FeatureSchema& schema) {
  const int f = schema.volume_index(Direction::in, Measure::byt);
  if (f < 0) throw ValidationError("schema has no in-bytes volume feature");
  return f;
}

int matching_feature(const FeatureSchema& schema, AttackType type) {
  int f = -1;
  switch (type) {
    case AttackType::dns:
      f = schema.port_index(PortCategory::p53, Direction::in, Measure::byt);
      break;
    case AttackType::ntp:
      f = schema.port_index(PortCategory::p123, Direction::in, Measure::byt);
      break;
    case AttackType::udp:
      f = schema.protocol_index(ProtocolClass::udp, Direction::in, Measure::byt);
      break;
    case AttackType::none:
      break;
  }
  return f >= 0 ? f : volume_feature(schema);
}

void DetectionConfig::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("detection config: " + what); };
  if (window < 1) fail("window must be >= 1");
  if (history < 0) fail("history must be >= 0");
  if (reference < 10) fail("reference must be >= 10 minutes");
  if (min_lead < 0 || min_lead >= window) fail("min_lead must be in [0, window)");
  if (overhead_cap < 0.0) fail("overhead cap must be >= 0");
  if (!(customer_fraction > 0.0 && customer_fraction <= 100.0)) fail("customer fraction must be in (0, 100]");
  if (head_hidden < 1) fail("head_hidden must be >= 1");
  if (epochs < 0) fail("epochs must be >= 0");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
}

json DetectionConfig::to_json() const {
  return json{{"window", window},
              {"history", history},
              {"reference", reference},
              {"kappa", kappa},
              {"h", h},
              {"min_lead", min_lead},
              {"overhead_cap", overhead_cap},
              {"customer_fraction", customer_fraction},
              {"head_hidden", head_hidden},
              {"learning_rate", learning_rate},
              {"epochs", epochs},
              {"weight_decay", weight_decay},
              {"seed", seed}};
}

DetectionConfig DetectionConfig::from_json(const json& doc) {
  DetectionConfig c;
  c.window = doc.value("window", c.window);
  c.history = doc.value("history", c.history);
  c.reference = doc.value("reference", c.reference);
  c.kappa = doc.value("kappa", c.kappa);
  c.h = doc.value("h", c.h);
  c.min_lead = doc.value("min_lead", c.min_lead);
  c.overhead_cap = doc.value("overhead_cap", c.overhead_cap);
  c.customer_fraction = doc.value("customer_fraction", c.customer_fraction);
  c.head_hidden = doc.value("head_hidden", c.head_hidden);
  c.learning_rate = doc.value("learning_rate", c.learning_rate);
  c.epochs = doc.value("epochs", c.epochs);
  c.weight_decay = doc.value("weight_decay", c.weight_decay);
  c.seed = doc.value("seed", c.seed);
  return c;
}

namespace {

DetectionExample make_window(const RawTensor& raw, int vol_f, int node, int customer, int window_begin,
                             MinuteRange split, const DetectionConfig& cfg) {
  DetectionExample ex;
  ex.node = node;
  ex.customer = customer;
  ex.window_begin = window_begin;
  ex.history_begin = std::max(split.begin, window_begin - cfg.history);
  ex.marks.assign(static_cast<std::size_t>(cfg.window), 0);
  ex.volume = raw.series(node, vol_f, window_begin, window_begin + cfg.window);
  return ex;
}

// Attack on `node` overlapping tensor minutes [begin, end)?
bool touches_attack(std::span<const AttackLabel> labels, std::int64_t t0, int node, int begin, int end) {
  for (const auto& l : labels) {
    if (l.node != node) continue;
    if (l.start_minute - t0 < end && begin < l.end_minute - t0) return true;
  }
  return false;
}

}  // namespace

ExampleSet build_examples(const RawTensor& raw, const FeatureSchema& schema, std::span<const AttackLabel> labels,
                          std::span<const int> customers, MinuteRange split, const DetectionConfig& cfg) {
  cfg.validate();
  if (raw.schema_hash() != schema.hash()) throw SchemaMismatch("raw tensor and schema differ");
  if (split.begin < 0 || split.end > raw.minutes() || split.begin >= split.end) {
    throw ValidationError("split outside the tensor");
  }
  if (static_cast<int>(customers.size()) != raw.nodes()) throw ValidationError("customer map size mismatch");
  const int vol_f = volume_feature(schema);
  const int W = cfg.window;
  const std::int64_t t0 = raw.start_minute();
  const int first_window = split.begin + cfg.reference;
  const int last_window = split.end - W;

  ExampleSet out;
  for (std::size_t li = 0; li < labels.size(); ++li) {
    const auto& l = labels[li];
    if (l.node < 0 || l.node >= raw.nodes()) {
      out.warnings.push_back("label " + std::to_string(li) + " names unknown node " + std::to_string(l.node));
      continue;
    }
    const std::int64_t start = l.start_minute - t0;
    if (start < split.begin || start >= split.end) continue;
    const int a = static_cast<int>(start);
    const int duration = static_cast<int>(l.duration());
    const int customer = customers[static_cast<std::size_t>(l.node)];

    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(l.node), static_cast<std::uint64_t>(l.start_minute)));
    const int lo = std::max(cfg.min_lead, W - duration);
    const int hi = std::max(lo, W - cfg.min_lead);
    const int lead = std::uniform_int_distribution<int>(lo, hi)(rng);
    const int wb = a - lead;
    if (wb < first_window || wb > last_window) {
      out.warnings.push_back("attack on node " + std::to_string(l.node) + " at minute " +
                             std::to_string(l.start_minute) + " does not fit its split; skipped");
      continue;
    }

    DetectionExample ex = make_window(raw, vol_f, l.node, customer, wb, split, cfg);
    ex.type = l.type;
    ex.label = 1;
    ex.labeled_start = a - wb;
    ex.end = std::min(W, static_cast<int>(l.end_minute - t0) - wb);
    const int mf = matching_feature(schema, l.type);
    // The statistic starts at the injected minute; alarms on the preceding
    // background are not onsets.
    const auto ref = raw.series(l.node, mf, wb - cfg.reference, wb);
    const auto series = raw.series(l.node, mf, a, wb + W);
    const auto cu = cusum_onset(ref, series, cfg.kappa, cfg.h);
    ex.cusum_found = cu.onset.has_value();
    ex.onset = cu.onset ? *ex.labeled_start + *cu.onset : *ex.labeled_start;
    if (!cu.onset) {
      out.warnings.push_back("no CUSUM onset for attack on node " + std::to_string(l.node) + " at minute " +
                             std::to_string(l.start_minute) + "; using the labeled start");
    }
    if (*ex.onset >= *ex.end) {
      out.warnings.push_back("CUSUM onset after the attack ended on node " + std::to_string(l.node) +
                             "; using the labeled start");
      ex.onset = ex.labeled_start;
    }
    for (int t = *ex.onset; t < *ex.end; ++t) ex.marks[static_cast<std::size_t>(t)] = 1;
    out.examples.push_back(std::move(ex));

    // Paired non-attack window from the same node and split.
    bool found = false;
    if (last_window >= first_window) {
      std::uniform_int_distribution<int> pick(first_window, last_window);
      for (int attempt = 0; attempt < 1000 && !found; ++attempt) {
        const int nb = pick(rng);
        const int ctx = std::max(split.begin, std::min(nb - cfg.history, nb - cfg.reference));
        if (touches_attack(labels, t0, l.node, ctx, nb + W)) continue;
        DetectionExample neg = make_window(raw, vol_f, l.node, customer, nb, split, cfg);
        out.examples.push_back(std::move(neg));
        found = true;
      }
    }
    if (!found) {
      out.warnings.push_back("node " + std::to_string(l.node) + " has no clean window in the split; non-attack "
                             "example skipped");
    }
  }
  return out;
}

SequenceView example_sequence(const TokenTensor& tokens, const DetectionExample& ex) {
  SequenceView s;
  s.node = ex.node;
  s.customer = ex.customer;
  s.start_minute = tokens.start_minute() + ex.history_begin;
  s.length = ex.context_length();
  s.tokens = tokens.window(ex.node, ex.history_begin, s.length);
  return s;
}

std::vector<Eigen::MatrixXd> encode_examples(const Model& backbone, const TokenTensor& tokens,
                                             std::span<const DetectionExample> examples) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto states = backbone.hidden_states(example_sequence(tokens, ex));
    out.push_back(states.bottomRows(ex.window()).cast<double>());
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double logistic(double u) { return u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u)); }
double softplus(double u) { return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))); }

}  // namespace

SurvivalHead::SurvivalHead(int input, int hidden)
    : input_(input), hidden_(hidden), params_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(input) * hidden + 2 * hidden + 1)) {
  if (input < 1 || hidden < 1) throw ValidationError("survival head needs positive sizes");
}

void SurvivalHead::init_random(std::uint64_t seed, double prior) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> w1(0.0, std::sqrt(2.0 / input_));
  std::normal_distribution<double> w2(0.0, std::sqrt(1.0 / hidden_));
  params_.setZero();
  const Eigen::Index n1 = static_cast<Eigen::Index>(input_) * hidden_;
  for (Eigen::Index i = 0; i < n1; ++i) params_(i) = w1(rng);
  for (Eigen::Index i = 0; i < hidden_; ++i) params_(n1 + hidden_ + i) = w2(rng) * 0.1;
  params_(params_.size() - 1) = std::log(prior / (1.0 - prior));
}

Eigen::VectorXd SurvivalHead::hazards(const Eigen::MatrixXd& states) const {
  if (states.cols() != input_) throw ValidationError("hidden state width does not match the head");
  const Eigen::Index n1 = static_cast<Eigen::Index>(input_) * hidden_;
  Eigen::Map<const RowMat> W1(params_.data(), input_, hidden_);
  auto b1 = params_.segment(n1, hidden_).transpose();
  auto w2 = params_.segment(n1 + hidden_, hidden_);
  const double b2 = params_(params_.size() - 1);
  Eigen::MatrixXd a = ((states * W1).rowwise() + b1).cwiseMax(0.0);
  Eigen::VectorXd u = (a * w2).array() + b2;
  return u.unaryExpr([](double x) { return logistic(x); });
}

std::vector<double> SurvivalHead::survival(const Eigen::MatrixXd& states) const {
  const Eigen::VectorXd h = hazards(states);
  return survival_from_hazards(std::span<const double>(h.data(), static_cast<std::size_t>(h.size())));
}

std::vector<double> survival_from_hazards(std::span<const double> hazards) {
  std::vector<double> s(hazards.size());
  double acc = 1.0;
  for (std::size_t t = 0; t < hazards.size(); ++t) {
    acc *= 1.0 - std::clamp(hazards[t], 0.0, 1.0);
    s[t] = acc;
  }
  return s;
}

double SurvivalHead::loss(std::span<const Eigen::MatrixXd> states, std::span<const DetectionExample> examples,
                          Eigen::VectorXd* grad) const {
  if (states.size() != examples.size()) throw ValidationError("states and examples differ in count");
  Eigen::Index rows = 0;
  for (const auto& s : states) rows += s.rows();
  if (rows == 0) throw ValidationError("no minutes to fine-tune on");
  Eigen::MatrixXd X(rows, input_);
  Eigen::VectorXd m(rows);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i].rows() != examples[i].window()) throw ValidationError("state rows do not match the window");
    X.middleRows(r, states[i].rows()) = states[i];
    for (int t = 0; t < examples[i].window(); ++t) m(r + t) = examples[i].marks[static_cast<std::size_t>(t)];
    r += states[i].rows();
  }

  const Eigen::Index n1 = static_cast<Eigen::Index>(input_) * hidden_;
  Eigen::Map<const RowMat> W1(params_.data(), input_, hidden_);
  auto b1 = params_.segment(n1, hidden_).transpose();
  auto w2 = params_.segment(n1 + hidden_, hidden_);
  const double b2 = params_(params_.size() - 1);
  Eigen::MatrixXd z = (X * W1).rowwise() + b1;
  Eigen::MatrixXd a = z.cwiseMax(0.0);
  Eigen::VectorXd u = (a * w2).array() + b2;

  double total = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) total += softplus(u(i)) - m(i) * u(i);
  const double scale = 1.0 / static_cast<double>(rows);
  if (grad) {
    Eigen::VectorXd du = (u.unaryExpr([](double x) { return logistic(x); }) - m) * scale;
    Eigen::Map<RowMat> gW1(grad->data(), input_, hidden_);
    grad->segment(n1 + hidden_, hidden_) += a.transpose() * du;
    (*grad)(grad->size() - 1) += du.sum();
    Eigen::MatrixXd dz = (du * w2.transpose()).cwiseProduct((z.array() > 0.0).cast<double>().matrix());
    gW1 += X.transpose() * dz;
    grad->segment(n1, hidden_) += dz.colwise().sum().transpose();
  }
  return total * scale;
}

json SurvivalHead::to_json() const {
  return json{{"kind", "survival_head"},
              {"input", input_},
              {"hidden", hidden_},
              {"parameter_count", parameter_count()},
              {"params", std::vector<double>(params_.data(), params_.data() + params_.size())}};
}

SurvivalHead SurvivalHead::from_json(const json& doc) {
  if (doc.value("kind", std::string{}) != "survival_head") throw ValidationError("not a survival head document");
  SurvivalHead h(doc.at("input").get<int>(), doc.at("hidden").get<int>());
  auto p = doc.at("params").get<std::vector<double>>();
  if (p.size() != h.parameter_count()) throw ValidationError("survival head parameter count mismatch");
  h.params_ = Eigen::Map<Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
  return h;
}

FinetuneResult finetune(std::span<const Eigen::MatrixXd> states, std::span<const DetectionExample> examples,
                        const DetectionConfig& cfg) {
  cfg.validate();
  if (states.empty()) throw ValidationError("fine-tuning needs at least one example");
  FinetuneResult res;
  res.head = SurvivalHead(static_cast<int>(states.front().cols()), cfg.head_hidden);

  double marked = 0.0, minutes = 0.0;
  for (const auto& ex : examples) {
    for (auto m : ex.marks) marked += m;
    minutes += ex.window();
  }
  const double prior = std::clamp(marked / std::max(1.0, minutes), 0.01, 0.5);
  res.head.init_random(mix_seed(cfg.seed, 11), prior);

  auto& p = res.head.params();
  // Decay applies to W1 only.
  const Eigen::Index n_weights = static_cast<Eigen::Index>(res.head.input()) * res.head.hidden();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(p.size()), m2 = m1, g(p.size());
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int e = 1; e <= cfg.epochs; ++e) {
    g.setZero();
    const double l = res.head.loss(states, examples, &g);
    if (!std::isfinite(l)) throw Error("non-finite fine-tuning loss at epoch " + std::to_string(e));
    res.loss_history.push_back(l);
    m1 = b1 * m1 + (1 - b1) * g;
    m2 = b2 * m2 + (1 - b2) * g.cwiseProduct(g);
    const double c1 = 1 - std::pow(b1, e), c2 = 1 - std::pow(b2, e);
    p.array() -= cfg.learning_rate / c1 * m1.array() / ((m2.array() / c2).sqrt() + eps);
    if (cfg.weight_decay > 0.0) p.head(n_weights) *= 1.0 - cfg.learning_rate * cfg.weight_decay;
  }
  return res;
}

// ---------------------------------------------------------------------------

std::optional<int> detect(std::span<const double> survival, double tau) {
  for (std::size_t t = 0; t < survival.size(); ++t) {
    if (survival[t] < tau) return static_cast<int>(t);
  }
  return std::nullopt;
}

EffectOverhead effectiveness_overhead(const DetectionExample& ex, std::optional<int> t_detect) {
  EffectOverhead r;
  double anomalous = 0.0, anomalous_after = 0.0, normal = 0.0, normal_after = 0.0;
  for (int t = 0; t < ex.window(); ++t) {
    const double v = ex.volume[static_cast<std::size_t>(t)];
    const bool after = t_detect && t >= *t_detect;
    if (ex.marks[static_cast<std::size_t>(t)]) {
      anomalous += v;
      if (after) anomalous_after += v;
    } else {
      normal += v;
      if (after) normal_after += v;
    }
  }
  if (ex.label == 1) {
    if (anomalous <= 0.0) throw ValidationError("attack example without anomalous volume");
    if (!t_detect) {
      r.effectiveness = 0.0;
    } else if (ex.onset && *t_detect <= *ex.onset) {
      r.effectiveness = 100.0;
    } else {
      r.effectiveness = 100.0 * anomalous_after / anomalous;
    }
  }
  r.overhead = normal > 0.0 ? 100.0 * normal_after / normal : 0.0;
  return r;
}

std::vector<double> default_tau_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 99; ++i) g.push_back(i / 100.0);
  return g;
}

std::vector<GridPoint> sweep_thresholds(std::span<const DetectionExample> examples,
                                        std::span<const std::vector<double>> curves, double overhead_cap,
                                        double customer_fraction, std::span<const double> grid) {
  if (examples.empty() || curves.size() != examples.size()) throw ValidationError("empty or mismatched curve set");
  std::vector<GridPoint> out;
  for (double tau : grid) {
    GridPoint gp;
    gp.tau = tau;
    std::map<int, std::pair<double, int>> per_customer;
    double eff = 0.0;
    int attacks = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const auto eo = effectiveness_overhead(examples[i], detect(curves[i], tau));
      if (examples[i].label == 1) {
        eff += eo.effectiveness;
        ++attacks;
      }
      auto& c = per_customer[examples[i].customer];
      c.first += eo.overhead;
      c.second += 1;
    }
    gp.mean_effectiveness = attacks > 0 ? eff / attacks : 0.0;
    int violating = 0;
    for (const auto& [cust, acc] : per_customer) {
      if (acc.first / acc.second > overhead_cap) ++violating;
    }
    gp.violating_fraction = static_cast<double>(violating) / static_cast<double>(per_customer.size());
    gp.feasible = 100.0 * (1.0 - gp.violating_fraction) >= customer_fraction - 1e-9;
    out.push_back(gp);
  }
  return out;
}

GridPoint select_threshold(std::span<const DetectionExample> examples, std::span<const std::vector<double>> curves,
                           double overhead_cap, double customer_fraction, std::span<const double> grid) {
  if (grid.empty()) throw ValidationError("empty threshold grid");
  const auto points = sweep_thresholds(examples, curves, overhead_cap, customer_fraction, grid);
  const GridPoint* best = nullptr;
  for (const auto& p : points) {
    if (!p.feasible) continue;
    if (!best || p.mean_effectiveness > best->mean_effectiveness ||
        (p.mean_effectiveness == best->mean_effectiveness && p.tau > best->tau)) {
      best = &p;
    }
  }
  if (best) return *best;
  for (const auto& p : points) {
    if (!best || p.violating_fraction < best->violating_fraction ||
        (p.violating_fraction == best->violating_fraction && p.tau < best->tau)) {
      best = &p;
    }
  }
  return *best;
}

// ---------------------------------------------------------------------------

EvalReport report(std::span<const DetectionExample> examples, std::span<const std::optional<int>> detections,
                  double tau) {
  if (examples.size() != detections.size()) throw ValidationError("examples and detections differ in count");
  EvalReport r;
  r.tau = tau;
  double eff = 0.0, ovh = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    const auto& td = detections[i];
    const auto eo = effectiveness_overhead(ex, td);
    ovh += eo.overhead;
    if (ex.label == 1) {
      eff += eo.effectiveness;
      if (td) {
        ++r.tp;
        r.mitigation_times.push_back(std::abs(*td - ex.onset.value_or(0)));
      } else {
        ++r.fn;
      }
    } else {
      td ? ++r.fp : ++r.tn;
    }
  }
  const int attacks = r.tp + r.fn;
  r.effectiveness = attacks > 0 ? eff / attacks : 0.0;
  r.overhead = examples.empty() ? 0.0 : ovh / static_cast<double>(examples.size());
  r.fpr = r.fp + r.tn > 0 ? 100.0 * r.fp / (r.fp + r.tn) : 0.0;
  r.fnr = attacks > 0 ? 100.0 * r.fn / attacks : 0.0;
  const int denom = 2 * r.tp + r.fp + r.fn;
  r.f1 = denom > 0 ? 2.0 * r.tp / denom : 1.0;
  if (!r.mitigation_times.empty()) {
    auto sorted = r.mitigation_times;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (int v : sorted) sum += v;
    r.mitigation_mean = sum / static_cast<double>(sorted.size());
    const std::size_t n = sorted.size();
    r.mitigation_median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  }
  return r;
}

json EvalReport::to_json() const {
  return json{{"tau", tau},
              {"tp", tp},
              {"fp", fp},
              {"tn", tn},
              {"fn", fn},
              {"effectiveness_pct", effectiveness},
              {"overhead_pct", overhead},
              {"fpr_pct", fpr},
              {"fnr_pct", fnr},
              {"f1", f1},
              {"mitigation_times", mitigation_times},
              {"mitigation_mean", mitigation_mean},
              {"mitigation_median", mitigation_median}};
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << std::fixed;
  auto row = [&os](const char* name, double v, int prec, const char* unit) {
    os << std::left << std::setw(26) << name << std::right << std::setw(10) << std::setprecision(prec) << v << unit
       << '\n';
  };
  row("Effectiveness (higher)", effectiveness, 2, " %");
  row("Overhead (lower)", overhead, 2, " %");
  row("FPR (lower)", fpr, 2, " %");
  row("FNR (lower)", fnr, 2, " %");
  row("F1 score (higher)", f1, 3, "");
  row("Mitigation time, median", mitigation_median, 1, " min");
  row("Mitigation time, mean", mitigation_mean, 2, " min");
  row("Threshold tau", tau, 2, "");
  os << std::left << std::setw(26) << "Confusion (TP/FP/TN/FN)" << std::right << std::setw(10)
     << (std::to_string(tp) + "/" + std::to_string(fp) + "/" + std::to_string(tn) + "/" + std::to_string(fn)) << '\n';
  return os.str();
}

}  // namespace nfgen
