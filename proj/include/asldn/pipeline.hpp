#pragma once

// Command implementations behind the asldn CLI. Every command writes its
// resolved configuration to <out>/<command>.config.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "asldn/config.hpp"
#include "asldn/dataset.hpp"
#include "asldn/metrics.hpp"
#include "asldn/network.hpp"
#include "asldn/seed.hpp"
#include "asldn/trainer.hpp"
#include "asldn/weights_io.hpp"

namespace asldn {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;

inline DatasetOptions dataset_options(const RunConfig& cfg) {
  DatasetOptions opt;
  const auto split = cfg.integer_list("split");
  require(split.size() == 3, ErrorCode::Config, "split: expected train,val,test");
  opt.split = {split[0], split[1], split[2]};
  require(cfg.integer("subjects") == opt.split.total(), ErrorCode::Config,
          "subjects (" + cfg.str("subjects") + ") must equal the split total (" +
              std::to_string(opt.split.total()) + ")");
  opt.height = cfg.integer("height");
  opt.width = cfg.integer("width");
  require(opt.height >= 32 && opt.width >= 32, ErrorCode::Config, "slices must be at least 32x32");
  opt.noise.sigma = cfg.real("sigma");
  opt.noise.outlier_rate = cfg.real("outlier_rate");
  opt.noise.outlier_scale = cfg.real("outlier_scale");
  opt.noise.correlation_px = cfg.real("noise_corr_px");
  opt.fwhm_px = cfg.real("fwhm_px");
  opt.seed = cfg.integer("seed");
  opt.noise.validate();
  return opt;
}

inline DwanSpec dwan_spec(const RunConfig& cfg) {
  DwanSpec spec;
  spec.base_channels = cfg.integer("base_channels");
  spec.expansion_channels = cfg.integer("expansion_channels");
  spec.blocks_per_pathway = cfg.integer("blocks");
  const auto d = cfg.integer_list("dilations");
  spec.global_dilations.assign(d.begin(), d.end());
  spec.validate();
  return spec;
}

inline TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig tc;
  tc.loss = parse_loss_kind(cfg.str("loss"));
  tc.batch_size = cfg.integer("batch_size");
  tc.micro_batch = cfg.integer("micro_batch");
  tc.epochs = cfg.integer("epochs");
  tc.seed = derive_seed(cfg.integer("seed"), "shuffle");
  tc.shuffle = cfg.flag("shuffle");
  tc.adam.lr = cfg.real("lr");
  tc.validate();
  return tc;
}

inline ReferenceMode parse_mode(const std::string& s) {
  if (s == "lfn") return ReferenceMode::NoisyPair;
  if (s == "gold") return ReferenceMode::PseudoGold;
  throw Error(ErrorCode::Config, "mode must be 'lfn' or 'gold', got '" + s + "'");
}

inline double intensity_scale(const RunConfig& cfg) {
  const double s = cfg.real("intensity_scale");
  require(s > 0, ErrorCode::Config, "intensity_scale must be > 0");
  return s;
}

inline void echo_config(const fs::path& dir, const std::string& command, const RunConfig& cfg) {
  fs::create_directories(dir);
  write_file_atomic(dir / (command + ".config"), [&](std::ostream& os) {
    os << "# asldn " << kVersion << ' ' << command << '\n';
    cfg.echo(os);
  });
}

// ---------------------------------------------------------------- simulate

inline Manifest cmd_simulate(const RunConfig& cfg, bool force, std::ostream& log) {
  const auto out = cfg.path("out");
  const auto opt = dataset_options(cfg);
  if (fs::exists(out)) {
    require(fs::is_directory(out), ErrorCode::Io, out.string() + " is not a directory");
    require(fs::is_empty(out) || force, ErrorCode::Io,
            out.string() + " is not empty; pass --force to overwrite");
    fs::remove_all(out / "subjects");
    fs::remove(out / "manifest.tsv");
  }
  echo_config(out, "simulate", cfg);
  auto m = build_dataset(out, opt);
  log << "wrote " << m.subjects.size() << " subjects (" << opt.split.train << " train, "
      << opt.split.val << " val, " << opt.split.test << " test) to " << out.string() << '\n';
  return m;
}

// ------------------------------------------------------------------- train

// [1,H,W] float tensor of a stored image divided by `scale`.
inline Tensor<float> load_network_image(const fs::path& root, const std::string& id,
                                        const std::string& name, double scale) {
  auto img = load_subject_image(root, id, name);
  auto out = tensor_cast<float>(img.map([scale](double v) { return v / scale; }));
  return std::move(out).reshape({1, img.dim(0), img.dim(1)});
}

// Runs the network on one [H,W] CBF image; returns CBF units.
inline Image denoise(const Dwan<float>& net, const NetworkParameters<float>& params,
                     const Image& input, double scale) {
  const std::size_t H = input.dim(0), W = input.dim(1);
  auto x = tensor_cast<float>(input.map([scale](double v) { return v / scale; }));
  auto y = net.infer(params, std::move(x).reshape({1, 1, H, W}));
  return tensor_cast<double>(y).map([scale](double v) { return v * scale; }).reshape({H, W});
}

struct SubjectImages {
  Image input, pgs, clean, gm, wm;
};

inline SubjectImages load_eval_images(const fs::path& root, const std::string& id) {
  return {load_subject_image(root, id, "input1"), load_subject_image(root, id, "pgs"),
          load_subject_image(root, id, "clean"), load_subject_image(root, id, "gm_mask"),
          load_subject_image(root, id, "wm_mask")};
}

// Mean PSNR of denoised validation inputs against their pseudo gold standard.
inline double validation_psnr(const Dwan<float>& net, const NetworkParameters<float>& params,
                              const std::vector<SubjectImages>& val, double scale) {
  double total = 0;
  for (const auto& s : val) {
    const auto mask = evaluation_mask(s.gm, s.wm);
    total += psnr(denoise(net, params, s.input, scale), s.pgs, *std::max_element(s.pgs.values().begin(), s.pgs.values().end()), &mask);
  }
  return total / static_cast<double>(val.size());
}

struct TrainOutcome {
  std::vector<double> epoch_loss;
  std::size_t best_epoch = 0;
  double best_val_psnr = 0;
};

inline TrainOutcome cmd_train(const RunConfig& cfg, std::ostream& log) {
  const auto root = cfg.path("dataset");
  const auto out = cfg.path("out");
  const auto spec = dwan_spec(cfg);
  auto tc = train_config(cfg);
  const auto mode = parse_mode(cfg.str("mode"));
  const double scale = intensity_scale(cfg);
  const auto every = cfg.integer("checkpoint_every");
  require(every >= 1, ErrorCode::Config, "checkpoint_every must be >= 1");

  const auto manifest = load_manifest(root);
  std::vector<TrainingPair<float>> pairs;
  for (const auto& p : training_pairs(manifest, mode))
    pairs.push_back({load_network_image(root, p.id, p.input, scale),
                     load_network_image(root, p.id, p.reference, scale)});
  require(!pairs.empty(), ErrorCode::InvalidArgument, "dataset has no training subjects");
  std::vector<SubjectImages> val;
  for (const auto& e : manifest.with_role(Role::Val)) val.push_back(load_eval_images(root, e.id));

  echo_config(out, "train", cfg);
  const Dwan<float> net(spec);
  auto params = build_dwan<float>(spec, derive_seed(cfg.integer("seed"), "init"));
  AdamState<float> state(params, tc.adam);

  TrainOutcome outcome;
  std::ofstream val_csv(out / "validation.csv");
  val_csv << "epoch,step,val_psnr_db\n" << std::setprecision(10);
  bool have_best = false;
  auto on_epoch = [&](const EpochSummary<float>& e) {
    outcome.epoch_loss.push_back(e.mean_loss);
    log << "epoch " << e.epoch << " loss " << e.mean_loss << std::endl;
    if (e.epoch % every != 0 && e.epoch != tc.epochs) return;
    save_parameters(out / ("ckpt_step" + std::to_string(e.step) + ".aslw"), e.params);
    // Without validation subjects the latest checkpoint wins.
    const double v = val.empty() ? static_cast<double>(e.epoch) : validation_psnr(net, e.params, val, scale);
    val_csv << e.epoch << ',' << e.step << ',' << format_metric(v) << std::endl;
    if (!val.empty()) log << "  validation psnr " << v << " dB\n";
    if (!have_best || v > outcome.best_val_psnr) {
      have_best = true;
      outcome.best_val_psnr = v;
      outcome.best_epoch = e.epoch;
      save_parameters(out / "weights.aslw", e.params);
    }
  };

  auto write_trace = [&] {
    write_file_atomic(out / "loss.csv", [&](std::ostream& os) { write_loss_trace(os, outcome.epoch_loss); });
  };
  try {
    train(DwanPredictor<float>{net}, params, std::span<const TrainingPair<float>>(pairs), tc, state,
          on_epoch);
  } catch (const Error& err) {
    if (err.code() != ErrorCode::NumericalFailure) throw;
    write_trace();
    throw Error(ErrorCode::NumericalFailure,
                std::string(err.what()) + (have_best ? "; weights.aslw holds the best checkpoint (epoch " +
                                                           std::to_string(outcome.best_epoch) + ")"
                                                     : "; no checkpoint had been written"));
  }
  write_trace();
  log << "selected epoch " << outcome.best_epoch << '\n';
  return outcome;
}

// -------------------------------------------------------------------- eval

struct EvalOutcome {
  std::vector<MetricsRow> vs_pgs;    // methods: input, <method>
  std::vector<MetricsRow> vs_clean;  // methods: input, pgs, <method>
};

inline std::size_t thread_cap(std::size_t work) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("ASLDN_THREADS")) {
    try {
      n = std::max<std::size_t>(1, std::stoul(env));
    } catch (const std::exception&) {
      throw Error(ErrorCode::Config, std::string("ASLDN_THREADS: bad value '") + env + "'");
    }
  }
  return std::min(n, std::max<std::size_t>(work, 1));
}

// PSNR and SSIM use max(pgs) as the data range whatever the reference, so rows
// against pgs and against clean share one scale per subject.
inline MetricsRow score(const std::string& id, const std::string& method, const Image& test,
                        const Image& truth, const SubjectImages& s) {
  const auto mask = evaluation_mask(s.gm, s.wm);
  const double range = *std::max_element(s.pgs.values().begin(), s.pgs.values().end());
  require(range > 0, ErrorCode::NumericalFailure, id + ": pseudo gold standard has no positive values");
  return {id,
          method,
          psnr(test, truth, range, &mask),
          ssim(test, truth, range, bounding_box(mask)),
          roi_snr(test, s.gm, wm_roi(s.wm)),
          gmwm_contrast(test, s.gm, s.wm)};
}

inline EvalOutcome cmd_eval(const RunConfig& cfg, std::ostream& log) {
  const auto root = cfg.path("dataset");
  const auto out = cfg.path("out");
  const auto method = cfg.str("method");
  require(!method.empty() && method.find(',') == std::string::npos && method != "input" && method != "pgs",
          ErrorCode::Config, "method label must be non-empty, comma-free and not 'input' or 'pgs'");
  const double scale = intensity_scale(cfg);
  const double display_max = cfg.real("display_max");
  const double threshold = cfg.real("corr_threshold");
  const Dwan<float> net(dwan_spec(cfg));
  const auto params = load_parameters<float>(cfg.path("weights"));
  check_parameters(net.spec(), params);

  const auto tests = load_manifest(root).with_role(Role::Test);
  require(!tests.empty(), ErrorCode::InvalidArgument, "dataset has no test subjects");
  echo_config(out, "eval", cfg);
  fs::create_directories(out / "outputs");

  const std::size_t n = tests.size();
  std::vector<SubjectImages> images(n);
  std::vector<Image> outputs(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        images[i] = load_eval_images(root, tests[i].id);
        outputs[i] = denoise(net, params, images[i].input, scale);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < thread_cap(n); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  EvalOutcome res;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& id = tests[i].id;
    const auto& s = images[i];
    res.vs_pgs.push_back(score(id, "input", s.input, s.pgs, s));
    res.vs_pgs.push_back(score(id, method, outputs[i], s.pgs, s));
    res.vs_clean.push_back(score(id, "input", s.input, s.clean, s));
    res.vs_clean.push_back(score(id, "pgs", s.pgs, s.clean, s));
    res.vs_clean.push_back(score(id, method, outputs[i], s.clean, s));

    save_tensor(out / "outputs" / (id + ".aslt"), tensor_cast<float>(outputs[i]));
    const std::size_t H = s.input.dim(0), W = s.input.dim(1);
    std::vector<std::uint8_t> panel;
    for (const Image* row : std::initializer_list<const Image*>{&s.input, &s.pgs, &outputs[i]}) {
      auto px = window_to_gray(*row, 0.0, display_max);
      panel.insert(panel.end(), px.begin(), px.end());
    }
    write_pgm(out / ("panel_" + id + ".pgm"), 3 * H, W, panel);
  }

  if (n >= 3) {
    std::vector<Image> inputs, pgs;
    for (const auto& s : images) {
      inputs.push_back(s.input);
      pgs.push_back(s.pgs);
    }
    auto write_corr = [&](const std::string& name, const std::vector<Image>& a) {
      const auto r = correlation_map(a, pgs, threshold);
      save_tensor(out / ("corr_" + name + ".aslt"), r);
      write_pgm(out / ("corr_" + name + ".pgm"), r.dim(0), r.dim(1), correlation_to_gray(r, threshold));
    };
    write_corr("input", inputs);
    write_corr(method, outputs);
  } else {
    log << "fewer than 3 test subjects; correlation maps skipped\n";
  }

  write_file_atomic(out / "report.csv", [&](std::ostream& os) { write_report(os, res.vs_pgs); });
  write_file_atomic(out / "report_clean.csv", [&](std::ostream& os) { write_report(os, res.vs_clean); });
  log << "evaluated " << n << " test subjects into " << out.string() << '\n';
  return res;
}

// ------------------------------------------------------------------ report

inline std::vector<MethodAggregate> cmd_report(const std::vector<fs::path>& csvs, const fs::path& out,
                                               std::ostream& os) {
  require(!csvs.empty(), ErrorCode::InvalidArgument, "report needs at least one CSV");
  std::vector<MetricsRow> rows;
  for (const auto& p : csvs) {
    std::ifstream is(p);
    require(static_cast<bool>(is), ErrorCode::Io, "cannot open " + p.string());
    try {
      auto r = read_report(is);
      rows.insert(rows.end(), r.begin(), r.end());
    } catch (const Error& e) {
      throw Error(e.code(), p.string() + ": " + e.what());
    }
  }
  require(!rows.empty(), ErrorCode::CorruptFile, "reports contain no rows");
  const auto agg = aggregate(rows);
  write_aggregate(os, agg);
  if (!out.empty()) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_file_atomic(out, [&](std::ostream& f) { write_aggregate(f, agg); });
  }
  return agg;
}

// ---------------------------------------------------------------- describe

inline void cmd_describe(const RunConfig& cfg, std::ostream& os) {
  const auto spec = dwan_spec(cfg);
  const auto layers = dwan_layers(spec);
  os << std::left << std::setw(24) << "layer" << std::right << std::setw(5) << "in" << std::setw(5)
     << "out" << std::setw(4) << "k" << std::setw(5) << "dil" << std::setw(10) << "params" << '\n';
  std::size_t total = 0;
  for (const auto& l : layers) {
    os << std::left << std::setw(24) << l.name << std::right << std::setw(5) << l.in_channels
       << std::setw(5) << l.out_channels << std::setw(4) << l.kernel << std::setw(5) << l.dilation
       << std::setw(10) << l.parameter_count() << '\n';
    total += l.parameter_count();
  }
  Graph<float> g;
  const Dwan<float> net(spec);
  const auto params = build_dwan<float>(spec, 0);
  const auto ids = net.bind(g, params);
  net.forward(g, ids, g.constant(Tensor<float>({1, 1, 8, 8})));
  auto rf = [&](std::optional<Pathway> p) { return 2 * analytic_rf_radius(spec, p) + 1; };
  os << "tensors: " << params.size() << " (" << layers.size() << " weight + " << layers.size()
     << " bias)\n"
     << "scalars: " << total << '\n'
     << "adds: " << g.count(OpKind::Add) << ", concats: " << g.count(OpKind::ConcatChannels)
     << ", convs: " << g.count(OpKind::Conv2d) << '\n'
     << "receptive field: full " << rf(std::nullopt) << " px, local " << rf(Pathway::Local)
     << " px, global " << rf(Pathway::Global) << " px\n";
}

}  // namespace asldn
