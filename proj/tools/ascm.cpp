// ascm: train, run and evaluate the scale-attention correspondence network.

#include <CLI11.hpp>

#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "ascm/commands.hpp"
#include "ascm/io.hpp"
#include "ascm/parallel.hpp"

namespace {

using Command = std::function<void(const ascm::RunConfig&)>;

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

int fail(const std::string& kind, std::string message, int code) {
  if (message.rfind(kind + ": ", 0) == 0) message.erase(0, kind.size() + 2);
  std::cerr << "error: " << kind << ": " << one_line(message) << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scale-attention dense correspondence: training, matching, flow and evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  const std::map<std::string, std::pair<std::string, Command>> commands = {
      {"train", {"train on synthetic or listed pairs; writes <out>/loss.csv (iteration,lr,loss,val_top1) and "
                 "<out>/model.ascm",
                 [](const auto& c) { ascm::cmd_train(c, std::cout); }}},
      {"flow", {"dense flow between --source and --target; writes --out and <out>_filtered",
                [](const auto& c) { ascm::cmd_flow(c, std::cout); }}},
      {"eval-flow", {"end-point error of --pred against --gt; CSV epe_all,n_all,epe_masked,n_masked",
                     [](const auto& c) { ascm::cmd_eval_flow(c, std::cout); }}},
      {"eval-pck", {"PCK curve from --keypoints and --pred; CSV alpha,pck,visible",
                    [](const auto& c) { ascm::cmd_eval_pck(c, std::cout); }}},
      {"attention", {"export per-scale attention maps of --source to <out>_scale<k>.pgm and <out>_argmax.ppm",
                     [](const auto& c) { ascm::cmd_attention(c, std::cout); }}},
      {"synth", {"write a synthetic pair to <out>/source.pgm, target.pgm, flow.flo",
                 [](const auto& c) { ascm::cmd_synth(c, std::cout); }}},
      {"match", {"score every window candidate of --pixel; CSV index,row,col,score",
                 [](const auto& c) { ascm::cmd_match(c, std::cout); }}},
  };

  std::map<std::string, std::optional<std::string>> overrides;
  std::string config_path;
  for (const auto& k : ascm::config_keys()) overrides[k.name];

  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", config_path, "key = value configuration file");
    for (const auto& k : ascm::config_keys()) {
      std::string help = k.help;
      if (*k.default_value) help += " [" + std::string(k.default_value) + "]";
      sub->add_option("--" + std::string(k.name), overrides[k.name], help);
    }
    subs[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    ascm::RunConfig config;
    if (!config_path.empty()) config.merge_file(config_path);
    for (const auto& [key, value] : overrides) {
      if (value) config.set(key, *value);
    }
    if (config.get_int("threads") < 0) throw ascm::ConfigError("config: key 'threads' must be non-negative");
    ascm::set_num_threads(config.get_int("threads"));
    for (const auto& [name, sub] : subs) {
      if (sub->parsed()) commands.at(name).second(config);
    }
  } catch (const ascm::ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const ascm::FormatError& e) {
    return fail("format", e.what(), 3);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
