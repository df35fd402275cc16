// kseg: pipeline driver, one subcommand per stage.
//
// Exit codes: 0 success, 1 runtime failure, 2 bad configuration or usage,
// 3 missing, malformed or incompatible artifact.

#include <iostream>
#include <optional>
#include <string>
#include <vector>
#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "kseg/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::optional<double> score_threshold;
  std::string out;
  std::vector<std::string> inputs;  // path or path:label
};

kseg::InputSpec parse_input(const std::string& arg) {
  kseg::InputSpec in;
  const auto colon = arg.rfind(':');
  if (colon != std::string::npos && colon + 1 < arg.size() &&
      arg.find_first_not_of("0123456789", colon + 1) == std::string::npos) {
    in.path = arg.substr(0, colon);
    in.label = std::stoi(arg.substr(colon + 1));
  } else {
    in.path = arg;
  }
  return in;
}

kseg::PipelineConfig resolve(const Flags& f) {
  kseg::PipelineConfig cfg;
  std::string config_path = f.config;
  if (config_path.empty())
    if (auto v = kseg::process_env("KSEG_CONFIG")) config_path = *v;
  if (!config_path.empty()) cfg = kseg::load_config_file(config_path, cfg);
  kseg::apply_env_overrides(cfg);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.variant.empty()) cfg.dataplane.variant = kseg::parse_variant(f.variant);
  if (f.score_threshold) cfg.score_threshold = *f.score_threshold;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (!f.inputs.empty()) {
    cfg.inputs.clear();
    for (const auto& s : f.inputs) cfg.inputs.push_back(parse_input(s));
  }
  kseg::validate(cfg);
  return cfg;
}

int fail(const char* kind, const std::string& msg, int code) {
  nlohmann::ordered_json j;
  j["level"] = "error";
  j["kind"] = kind;
  j["msg"] = msg;
  std::cerr << j.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Key-segment traffic classification pipeline"};
  app.require_subcommand(1, 1);
  Flags flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON config file (env KSEG_CONFIG)");
    sub->add_option("--seed", flags.seed, "top-level seed (env KSEG_SEED)");
    sub->add_option("--variant", flags.variant, "table variant: tcam or sram (env KSEG_VARIANT)");
    sub->add_option("--score-threshold", flags.score_threshold, "segment score threshold S (env KSEG_SCORE_THRESHOLD)")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--out", flags.out, "artifact directory (env KSEG_OUT)");
  };
  struct Cmd {
    const char* name;
    const char* help;
  };
  const std::vector<Cmd> cmds = {
      {"gen", "generate the planted-motif synthetic dataset"},
      {"ingest", "read flows (pcap or flow records) and split train/validation/test"},
      {"train", "train the CNN"},
      {"discover", "Grad-CAM candidate harvest, clustering and scoring"},
      {"compile", "select segments by score and compile TCAM/SRAM tables and the backup tree"},
      {"simulate", "run the test split through the data-plane simulator"},
      {"report", "compute metrics from the verdict file"},
      {"sweep", "evaluate the configured score thresholds"},
      {"run", "gen (synthetic only), ingest, train, discover, compile, simulate and report"},
      {"config", "print the effective configuration"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& c : cmds) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    if (std::string(c.name) == "ingest" || std::string(c.name) == "run")
      sub->add_option("--input", flags.inputs, "input file, optionally path:label for pcaps (repeatable)");
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    const kseg::PipelineConfig cfg = resolve(flags);
    const std::string cmd = app.get_subcommands().front()->get_name();
    namespace p = kseg::pipeline;
    if (cmd == "gen") p::stage_gen(cfg);
    else if (cmd == "ingest") p::stage_ingest(cfg);
    else if (cmd == "train") p::stage_train(cfg);
    else if (cmd == "discover") p::stage_discover(cfg);
    else if (cmd == "compile") p::stage_compile(cfg);
    else if (cmd == "simulate") p::stage_simulate(cfg);
    else if (cmd == "report") p::stage_report(cfg);
    else if (cmd == "sweep") p::stage_sweep(cfg);
    else if (cmd == "run") p::run_all(cfg);
    else if (cmd == "config") std::cout << kseg::config_to_json(cfg).dump(2) << '\n';
  } catch (const kseg::ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const kseg::ParseError& e) {
    return fail("parse", e.what(), 3);
  } catch (const kseg::FormatError& e) {
    return fail("format", e.what(), 3);
  } catch (const kseg::Error& e) {
    return fail("error", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
