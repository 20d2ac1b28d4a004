// asldn: simulate -> train -> eval -> report, plus describe.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "asldn/pipeline.hpp"

namespace {

struct Verb {
  CLI::App* app = nullptr;
  std::string config_file;
  std::map<std::string, std::string> flags;
};

// Every config key becomes --<key>; a config file is read first, flags win.
Verb add_verb(CLI::App& root, const std::string& name, const std::string& help) {
  Verb v;
  v.app = root.add_subcommand(name, help);
  return v;
}

void add_config_flags(Verb& v) {
  v.app->add_option("-c,--config", v.config_file, "key = value config file");
  for (const auto& k : asldn::config_keys())
    v.app->add_option(std::string("--") + k.name, v.flags[k.name], k.help)
        ->default_str(k.default_value);
}

asldn::RunConfig resolve(const Verb& v) {
  asldn::RunConfig cfg;
  if (!v.config_file.empty()) cfg.load(v.config_file);
  for (const auto& [key, value] : v.flags)
    if (v.app->count(std::string("--") + key) > 0) cfg.set(key, value);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Graph buffers are freed and reallocated every step; keep them on the heap
  // instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Learning-from-noise ASL denoising: phantom simulation, DWAN training and evaluation"};
  app.set_version_flag("--version", asldn::kVersion);
  app.require_subcommand(1);

  auto simulate = add_verb(app, "simulate", "generate a phantom dataset");
  bool force = false;
  simulate.app->add_flag("--force", force, "overwrite a non-empty output directory");
  auto train = add_verb(app, "train", "train a DWAN on a dataset");
  auto eval = add_verb(app, "eval", "evaluate weights on the test split");
  auto describe = add_verb(app, "describe", "print the network audit table");
  for (auto* v : {&simulate, &train, &eval, &describe}) add_config_flags(*v);

  auto* report = app.add_subcommand("report", "aggregate report CSVs per method");
  std::vector<std::string> csvs;
  std::string report_out;
  report->add_option("csv", csvs, "report CSV files")->required()->check(CLI::ExistingFile);
  report->add_option("-o,--out", report_out, "also write the aggregate table here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate.app) {
      asldn::cmd_simulate(resolve(simulate), force, std::cout);
    } else if (*train.app) {
      asldn::cmd_train(resolve(train), std::cout);
    } else if (*eval.app) {
      asldn::cmd_eval(resolve(eval), std::cout);
    } else if (*describe.app) {
      asldn::cmd_describe(resolve(describe), std::cout);
    } else if (*report) {
      std::vector<std::filesystem::path> paths(csvs.begin(), csvs.end());
      asldn::cmd_report(paths, report_out, std::cout);
    }
  } catch (const asldn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
