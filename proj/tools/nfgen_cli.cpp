#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "nfgen/error.hpp"
#include "nfgen/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kOther = 1, kUsage = 2, kMissing = 3, kInvalid = 4 };

nfgen::json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw nfgen::MissingArtifact(path);
  nfgen::json doc = nfgen::json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw nfgen::ValidationError("config " + path + " is not a JSON object");
  return doc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Per-minute NetFlow tokenization, generative pre-training and DDoS detection"};
  app.require_subcommand(1, 0);

  std::string config_path;
  std::string workdir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool quiet = false;
  app.add_option("-c,--config", config_path, "JSON config merged over the defaults");
  app.add_option("-w,--workdir", workdir, "Directory for artifacts (paths.workdir)");
  app.add_option("-s,--seed", seed, "Root seed");
  app.add_option("--set", overrides, "Override a config key, e.g. train.max_epochs=5")->take_all();
  app.add_flag("-q,--quiet", quiet, "Suppress progress output on stderr");

  std::vector<std::string> selected;
  for (auto stage : nfgen::kStages) {
    auto* sub = app.add_subcommand(std::string(stage), "Run the " + std::string(stage) + " stage");
    sub->fallthrough();
    sub->callback([&selected, stage] { selected.emplace_back(stage); });
  }
  auto* all = app.add_subcommand("all", "Run every stage in order");
  all->fallthrough();
  all->callback([&selected] {
    for (auto stage : nfgen::kStages) selected.emplace_back(stage);
  });
  auto* show = app.add_subcommand("show-config", "Print the resolved config");
  show->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    nfgen::json doc = nfgen::json::object();
    if (!config_path.empty()) doc = load_config(config_path);
    if (!workdir.empty()) doc["paths"]["workdir"] = workdir;
    if (seed) doc["seed"] = *seed;
    for (const auto& o : overrides) nfgen::apply_override(doc, o);
    const auto cfg = nfgen::PipelineConfig::from_json(doc);
    if (show->parsed()) {
      std::cout << cfg.doc.dump(2) << '\n';
      return kOk;
    }
    for (const auto& stage : selected) {
      const auto summary = nfgen::run_stage(stage, cfg, quiet ? nullptr : &std::cerr);
      std::cout << summary.dump() << '\n' << std::flush;
    }
    return kOk;
  } catch (const nfgen::MissingArtifact& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissing;
  } catch (const nfgen::ValidationError& e) {
    std::cerr << "error: invalid input: " << e.what() << '\n';
    return kInvalid;
  } catch (const nfgen::SchemaMismatch& e) {
    std::cerr << "error: schema mismatch: " << e.what() << '\n';
    return kInvalid;
  } catch (const nfgen::ParseError& e) {
    std::cerr << "error: parse error: " << e.what() << '\n';
    return kInvalid;
  } catch (const nfgen::json::exception& e) {
    std::cerr << "error: bad config value: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
}
