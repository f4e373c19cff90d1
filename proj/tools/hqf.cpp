// SPDX-License-Identifier: Apache-2.0
// Command-line driver: scene generation, decoding runs, report analysis,
// ablation sweeps and weight initialization.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hqf/hqf.hpp"

namespace {

using nlohmann::json;

struct ConfigFlags {
  std::string config_path;
  std::string preset;
  std::vector<std::string> sets;
  std::optional<std::string> qswap_mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> weights;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config patch");
  cmd->add_option("--preset", f.preset, "named preset applied before the config file");
  cmd->add_option("--set", f.sets, "override, e.g. --set decoder.layers=3")->allow_extra_args(false);
  cmd->add_option("--qswap-mode", f.qswap_mode, "append or replace");
  cmd->add_option("--seed", f.seed, "scene seed");
  cmd->add_option("--weights", f.weights, "weight file to load instead of seeded init");
}

hqf::RunConfig resolve(const ConfigFlags& f) {
  std::optional<json> file;
  if (!f.config_path.empty()) file = hqf::read_json_file(f.config_path);
  std::vector<std::string> sets = f.sets;
  if (f.qswap_mode) sets.push_back("decoder.qswap.mode=\"" + *f.qswap_mode + "\"");
  if (f.seed) sets.push_back("scene.seed=" + std::to_string(*f.seed));
  if (f.weights) sets.push_back("weights.path=" + json(*f.weights).dump());
  return hqf::resolve_run_config(f.preset, file, sets);
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
  } else {
    hqf::write_text(path, text);
  }
}

int fail(const std::string& type, const std::string& message) {
  std::cerr << json{{"error", {{"type", type}, {"message", message}}}}.dump() << '\n';
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hqf: heterogeneous-query fusion decoder experiments"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, run_flags, ablate_flags, weight_flags;
  std::string out_path, report_path;
  std::optional<std::size_t> link_layer;
  bool ablate_timing = true;

  auto* gen = app.add_subcommand("gen-scene", "generate a synthetic scene as JSON");
  add_config_flags(gen, gen_flags);
  gen->add_option("-o,--out", out_path, "output path (default stdout)");

  auto* run = app.add_subcommand("run", "decode one scene and write a report");
  add_config_flags(run, run_flags);
  run->add_option("-o,--out", out_path, "report path (overrides output.report; default stdout)");

  auto* attn = app.add_subcommand("analyze-attn", "per-layer 3x3 attention statistics as CSV");
  attn->add_option("report", report_path, "report JSON")->required();
  attn->add_option("-o,--out", out_path, "CSV path (default stdout)");

  auto* links = app.add_subcommand("links", "cross-type attention links as JSON");
  links->add_option("report", report_path, "report JSON")->required();
  links->add_option("--layer", link_layer, "only this layer");
  links->add_option("-o,--out", out_path, "output path (default stdout)");

  auto* ablate = app.add_subcommand("ablate", "run the ablation ladder and placement sweep");
  add_config_flags(ablate, ablate_flags);
  ablate->add_option("-o,--out", out_path, "CSV path (default stdout)");
  ablate->add_flag("!--no-timing", ablate_timing, "omit the seconds column");

  auto* initw = app.add_subcommand("init-weights", "write seeded random weights");
  add_config_flags(initw, weight_flags);
  initw->add_option("-o,--out", out_path, "weight file path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage_error", e.what());
  }

  try {
    if (*gen) {
      const auto cfg = resolve(gen_flags);
      write_output(out_path, hqf::to_json(hqf::generate_scene(cfg.scene_seed, cfg.scene)).dump(1) + "\n");
    } else if (*run) {
      const auto cfg = resolve(run_flags);
      const auto result = hqf::run_experiment(cfg);
      write_output(out_path.empty() ? cfg.report_path : out_path, result.report.dump(1) + "\n");
    } else if (*attn) {
      write_output(out_path, hqf::attention_csv(hqf::read_json_file(report_path)));
    } else if (*links) {
      write_output(out_path, hqf::links_json(hqf::read_json_file(report_path), link_layer).dump(1) + "\n");
    } else if (*ablate) {
      const auto cfg = resolve(ablate_flags);
      write_output(out_path, hqf::ablation_csv(hqf::run_ablation(cfg), cfg, ablate_timing));
    } else if (*initw) {
      const auto cfg = resolve(weight_flags);
      hqf::save_weights(hqf::init_weights(cfg.weights_seed, cfg.decoder), cfg.decoder, out_path);
    }
  } catch (const hqf::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const json::exception& e) {
    return fail("format_error", e.what());
  } catch (const std::exception& e) {
    return fail("internal_error", e.what());
  }
  return 0;
}
