#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "cliptta/commands.hpp"

int main(int argc, char** argv) {
  using namespace cliptta;
  CLI::App app{"Test-time adaptation of a synthetic vision-language classifier"};
  app.require_subcommand(1);

  CommandOptions opts;
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";

  auto common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("--config", config, "flat key = value configuration file");
    sub->add_option("--seed", seed, "overrides the configuration seed");
    sub->add_option("--out", out, "output directory")->capture_default_str();
  };

  auto* simulate = app.add_subcommand("simulate", "adapt on a generated stream, write metrics.csv");
  common(simulate, true);
  simulate->add_flag("--dump-memory", opts.dump_memory, "write the final memory to memory.csv");
  simulate->add_option("--multi-seed", opts.multi_seed,
                       "run this many consecutive seeds and summarise mean and 95% half-width");

  auto* gradcheck = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
  common(gradcheck, false);
  gradcheck->add_option("--configurations", opts.configurations, "random configurations")
      ->capture_default_str();
  gradcheck->add_flag("--flip-reg-sign", opts.flip_reg_sign,
                      "negate the regulariser gradient (mutation check)");

  auto* collapse = app.add_subcommand("collapse-demo", "paired TENT vs CLIPTTA stream");
  common(collapse, true);

  auto* openset = app.add_subcommand("openset", "paired runs with and without the OCE term");
  common(openset, true);

  CLI11_PARSE(app, argc, argv);

  for (auto* sub : app.get_subcommands()) {
    if (auto* o = sub->get_option_no_throw("--config"); o != nullptr && o->count() > 0)
      opts.config_path = config;
    if (sub->get_option("--seed")->count() > 0) opts.seed = seed;
  }
  opts.out_dir = out;

  try {
    if (simulate->parsed()) return cmd_simulate(opts, std::cout, std::cerr);
    if (gradcheck->parsed()) return cmd_gradcheck(opts, std::cout, std::cerr);
    if (collapse->parsed()) return cmd_collapse_demo(opts, std::cout, std::cerr);
    if (openset->parsed()) return cmd_openset(opts, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfigError;
  }
  return kExitConfigError;
}
