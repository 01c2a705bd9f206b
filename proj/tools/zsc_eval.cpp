// zsc_eval: stage runner for partner generation, selection, BR training and
// BR-Prox evaluation.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "zsceval/pipeline.hpp"

namespace {

using namespace zsceval;

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kMissingUpstream = 3, kIntegrity = 4 };

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> criterion;
  std::optional<std::string> ego;
  std::optional<std::string> policy;
  std::string export_output;
  bool quiet = false;
};

int resolve_workers(const Options& o, const PipelineConfig& c) {
  if (o.workers) return std::max(1, *o.workers);
  if (const char* env = std::getenv("ZSC_EVAL_WORKERS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      throw ConfigError(std::string("ZSC_EVAL_WORKERS is not an integer: ") + env);
    }
  }
  return c.workers;
}

PipelineConfig load(const Options& o) {
  require<ConfigError>(!o.config.empty(), "--config is required");
  ConfigOverrides ov;
  if (!o.out.empty()) ov.output_dir = fs::path(o.out);
  ov.seed = o.seed;
  ov.criterion = o.criterion;
  return load_pipeline_config(o.config, ov);
}

fs::path output_root(const Options& o) {
  if (!o.out.empty()) return o.out;
  return load(o).output_dir;
}

void report(const std::string& stage, const StageOutcome& r) {
  std::cout << stage << (r.skipped ? ": up to date " : ": done ") << r.summary.dump() << "\n";
}

int run(const std::string& cmd, const Options& o) {
  if (o.quiet) set_warnings_enabled(false);
  if (cmd == "export-policy") {
    require<ConfigError>(o.policy.has_value(), "export-policy needs --policy");
    const std::string text = dump(policy_to_json(load_policy(*o.policy)));
    if (o.export_output.empty()) std::cout << text;
    else write_file(o.export_output, text);
    return kOk;
  }
  if (cmd == "verify") {
    const fs::path root = output_root(o);
    require<MissingUpstreamError>(fs::exists(root / "manifest.json"), "no manifest in ", root.string(),
                                  "; run `zsc_eval generate` first");
    const Manifest m(root);
    std::cout << "verify: " << m.verify_all() << " artifacts match their recorded hashes\n";
    return kOk;
  }

  const PipelineConfig c = load(o);
  const int workers = resolve_workers(o, c);
  fs::create_directories(c.output_dir);
  Manifest m(c.output_dir, c.config_hash);
  AnyEnv env = make_env(c);
  std::visit(
      [&](const auto& e) {
        if (cmd == "generate") report(cmd, run_generate(e, c, m, workers));
        else if (cmd == "select") report(cmd, run_select(e, c, m));
        else if (cmd == "train-brs") report(cmd, run_train_brs(e, c, m, workers));
        else if (cmd == "evaluate") {
          EvaluateRequest req;
          req.ego_name = o.ego;
          if (o.policy) req.policy_file = fs::path(*o.policy);
          require<ConfigError>(!(req.ego_name && req.policy_file), "evaluate takes --ego or --policy, not both");
          report(cmd, run_evaluate(e, c, m, req));
        } else if (cmd == "benchmark") report(cmd, run_benchmark_stage(e, c, m, workers));
        else if (cmd == "compare-selection") report(cmd, run_compare_selection(e, c, m));
        else if (cmd == "run") {
          report("generate", run_generate(e, c, m, workers));
          report("select", run_select(e, c, m));
          report("train-brs", run_train_brs(e, c, m, workers));
          report("evaluate", run_evaluate(e, c, m, {}));
          if (c.egos.size() >= 2) report("benchmark", run_benchmark_stage(e, c, m, workers));
        }
      },
      env);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot coordination evaluation at desk scale"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string criterion, ego, policy;

  auto common = [&](CLI::App* sub, bool needs_config = true) {
    auto* cfg = sub->add_option("--config", o.config, "pipeline config (JSON)");
    if (needs_config) cfg->required();
    sub->add_option("--out", o.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "global seed (overrides seed)");
    sub->add_option("--workers", workers, "worker threads (fallback: ZSC_EVAL_WORKERS)")->check(CLI::PositiveNumber);
    sub->add_option("--criterion", criterion, "selection criterion")->check(CLI::IsMember({"br-div", "p-div"}));
    sub->add_flag("--quiet", o.quiet, "suppress warnings");
  };
  std::vector<std::pair<std::string, CLI::App*>> subs;
  for (const auto* name : {"generate", "select", "train-brs", "evaluate", "benchmark", "compare-selection", "run"}) {
    static const std::map<std::string, std::string> help = {
        {"generate", "train and embed behavior-preferring candidate pairs"},
        {"select", "pick the partner subset and its checkpoints"},
        {"train-brs", "train a best response for every partner combination"},
        {"evaluate", "BR-Prox of one ego (or self-consistency without one)"},
        {"benchmark", "train and rank the configured egos"},
        {"compare-selection", "BR-Div vs P-Div selection table"},
        {"run", "generate, select, train-brs, evaluate, benchmark"}};
    auto* sub = app.add_subcommand(name, help.at(name));
    common(sub);
    subs.emplace_back(name, sub);
  }
  subs[3].second->add_option("--ego", ego, "ego name from benchmark.egos");
  subs[3].second->add_option("--policy", policy, "ego policy file");

  auto* exp = app.add_subcommand("export-policy", "print a policy table as JSON");
  exp->add_option("--policy", policy, "policy file")->required();
  exp->add_option("--output", o.export_output, "write here instead of stdout");
  subs.emplace_back("export-policy", exp);

  auto* ver = app.add_subcommand("verify", "re-check every artifact against the manifest");
  common(ver, false);
  subs.emplace_back("verify", ver);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  auto given = [](CLI::App* sub, const std::string& name) {
    const CLI::Option* opt = sub->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  std::string cmd;
  for (const auto& [name, sub] : subs)
    if (sub->parsed()) {
      cmd = name;
      if (given(sub, "--seed")) o.seed = seed;
      if (given(sub, "--workers")) o.workers = workers;
      if (given(sub, "--criterion")) o.criterion = criterion;
      if (given(sub, "--ego")) o.ego = ego;
      if (given(sub, "--policy")) o.policy = policy;
    }
  if (cmd == "verify" && o.out.empty() && o.config.empty()) {
    std::cerr << "error: verify needs --out or --config\n";
    return kConfig;
  }

  try {
    return run(cmd, o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const SchemaMismatchError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const MissingUpstreamError& e) {
    std::cerr << "missing upstream: " << e.what() << "\n";
    return kMissingUpstream;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity failure: " << e.what() << "\n";
    return kIntegrity;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
