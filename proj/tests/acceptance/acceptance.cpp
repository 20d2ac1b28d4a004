// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any selected criterion fails.
//
//   acceptance                 all criteria, scratch data in a temp dir
//   acceptance 1 5 6           selected criteria
//   acceptance --work DIR      keep datasets, runs and logs under DIR

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "asldn/pipeline.hpp"
#include "../oracles.hpp"
#include "../rf_oracle.hpp"

using namespace asldn;
namespace fs = std::filesystem;
using testing_support::central_difference;
using testing_support::random_away_from_zero;
using testing_support::random_tensor;
using testing_support::relative_error;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

// Accumulates sub-checks; the first failures are kept for the summary line.
struct Checks {
  bool ok = true;
  std::vector<std::string> failures;
  void expect(bool cond, const std::string& what) {
    if (cond) return;
    ok = false;
    if (failures.size() < 3) failures.push_back(what);
  }
  std::string failure_text() const {
    std::string s;
    for (const auto& f : failures) s += (s.empty() ? "" : "; ") + f;
    return s;
  }
};

// ------------------------------------------------------------- criterion 1

constexpr double kGradTolerance = 1e-4;

using Builder = std::function<NodeId(Graph<double>&, const std::vector<NodeId>&)>;

// Worst relative error of backward() against central differences over every
// element of every variable.
double worst_gradient_error(std::vector<Tensor<double>>& vars, const Builder& build) {
  Graph<double> g;
  std::vector<NodeId> ids;
  for (auto& v : vars) ids.push_back(g.variable(v));
  g.backward(build(g, ids));
  auto evaluate = [&] {
    Graph<double> h;
    std::vector<NodeId> hid;
    for (auto& v : vars) hid.push_back(h.variable(v));
    return h.value(build(h, hid))[0];
  };
  double worst = 0;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    const auto analytic = g.grad(ids[k]);
    for (std::size_t i = 0; i < vars[k].size(); ++i)
      worst = std::max(worst, relative_error(analytic[i], central_difference(evaluate, vars[k], i)));
  }
  return worst;
}

Outcome criterion_gradients() {
  std::mt19937_64 rng(101);
  std::vector<std::pair<std::string, double>> ops;

  for (std::size_t d : {1, 2, 4}) {
    std::vector<Tensor<double>> v{random_tensor(Shape{2, 2, 7, 6}, rng), random_tensor(Shape{3, 2, 3, 3}, rng),
                                  random_tensor(Shape{3}, rng)};
    const auto target = random_tensor(Shape{2, 3, 7, 6}, rng);
    ops.emplace_back("conv2d(d=" + std::to_string(d) + ")",
                     worst_gradient_error(v, [&](Graph<double>& g, const std::vector<NodeId>& x) {
                       return g.loss_l2(g.conv2d(x[0], x[1], x[2], d), g.constant(target));
                     }));
  }
  {
    std::vector<Tensor<double>> v{random_away_from_zero(Shape{2, 3, 4, 4}, rng)};
    const auto target = random_tensor(Shape{2, 3, 4, 4}, rng);
    ops.emplace_back("relu", worst_gradient_error(v, [&](Graph<double>& g, const std::vector<NodeId>& x) {
                       return g.loss_l2(g.relu(x[0]), g.constant(target));
                     }));
  }
  {
    std::vector<Tensor<double>> v{random_tensor(Shape{2, 1, 3, 3}, rng), random_tensor(Shape{2, 2, 3, 3}, rng),
                                  random_tensor(Shape{1, 3, 3, 3}, rng)};
    const auto target = random_tensor(Shape{2, 3, 3, 3}, rng);
    ops.emplace_back("add+concat+broadcast",
                     worst_gradient_error(v, [&](Graph<double>& g, const std::vector<NodeId>& x) {
                       auto cat = g.concat_channels(x[0], x[1]);
                       return g.loss_l2(g.add(cat, g.broadcast_batch(x[2], 2)), g.constant(target));
                     }));
  }
  {
    std::vector<Tensor<double>> v{random_tensor(Shape{3, 4}, rng), random_tensor(Shape{3, 4}, rng)};
    ops.emplace_back("sum+mean", worst_gradient_error(v, [](Graph<double>& g, const std::vector<NodeId>& x) {
                       return g.add(g.sum(x[0]), g.mean(x[1]));
                     }));
  }
  {
    auto p = random_tensor(Shape{2, 1, 4, 4}, rng);
    auto r = random_away_from_zero(p.shape(), rng);
    Tensor<double> t(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) t[i] = p[i] + r[i];
    std::vector<Tensor<double>> v{p, t};
    ops.emplace_back("loss_l1", worst_gradient_error(v, [](Graph<double>& g, const std::vector<NodeId>& x) {
                       return g.loss_l1(x[0], x[1]);
                     }));
    ops.emplace_back("loss_l2", worst_gradient_error(v, [](Graph<double>& g, const std::vector<NodeId>& x) {
                       return g.loss_l2(x[0], x[1]);
                     }));
  }

  // 20 scalar parameters of a full-width DWAN on a 32x32 input.
  const DwanSpec spec;
  const Dwan<double> net(spec);
  auto params = build_dwan<double>(spec, 202);
  std::uniform_real_distribution<double> bias(-0.05, 0.05);
  for (auto& p : params)
    if (p.tensor.rank() == 1)
      for (auto& b : p.tensor.values()) b = bias(rng);
  const auto input = random_tensor(Shape{1, 1, 32, 32}, rng, 0.0, 1.5);
  const auto target = random_tensor(Shape{1, 1, 32, 32}, rng, 0.0, 1.5);
  auto loss_of = [&](Graph<double>& g, const std::vector<NodeId>& ids) {
    return g.loss_l2(net.forward(g, ids, g.constant(input)).output, g.constant(target));
  };
  // ReLU activation pattern of a forward pass. A central difference is only a
  // valid reference when the pattern is the same at both probe points, so the
  // step is shrunk until that holds.
  using Pattern = std::vector<bool>;
  auto run = [&](Graph<double>& h, Pattern* pattern) {
    const double loss = h.value(loss_of(h, net.bind(h, params)))[0];
    if (pattern)
      for (std::size_t n = 0; n < h.size(); ++n) {
        const auto& node = h.node(NodeId{n});
        if (node.kind != OpKind::Relu) continue;
        for (double v : h.value(node.inputs[0]).values()) pattern->push_back(v > 0);
      }
    return loss;
  };
  Graph<double> g;
  const auto ids = net.bind(g, params);
  g.backward(loss_of(g, ids));
  std::uniform_int_distribution<std::size_t> pick_tensor(0, params.size() - 1);
  double dwan_worst = 0;
  std::string dwan_worst_name;
  std::size_t shrunk = 0;
  for (int k = 0; k < 20; ++k) {
    const auto t = pick_tensor(rng);
    std::uniform_int_distribution<std::size_t> pick_elem(0, params[t].tensor.size() - 1);
    const auto i = pick_elem(rng);
    auto& theta = params[t].tensor[i];
    const double saved = theta;
    double step = 1e-6, numeric = 0;
    for (; step >= 1e-9; step /= 10) {
      Pattern up_pattern, down_pattern;
      theta = saved + step;
      Graph<double> hu;
      const double up = run(hu, &up_pattern);
      theta = saved - step;
      Graph<double> hd;
      const double down = run(hd, &down_pattern);
      theta = saved;
      numeric = (up - down) / (2 * step);
      if (up_pattern == down_pattern) break;
    }
    shrunk += step < 1e-6;
    const double analytic = g.grad(ids[t])[i];
    const double err = relative_error(analytic, numeric);
    if (err >= dwan_worst) {
      dwan_worst = err;
      dwan_worst_name = params[t].name + "[" + std::to_string(i) + "], analytic " + fmt(analytic, 10) +
                        ", numeric " + fmt(numeric, 10);
    }
  }

  Checks c;
  double op_worst = 0;
  for (const auto& [name, err] : ops) {
    c.expect(err < kGradTolerance, name + " rel err " + fmt(err));
    op_worst = std::max(op_worst, err);
  }
  c.expect(dwan_worst < kGradTolerance, dwan_worst_name + " rel err " + fmt(dwan_worst));
  return {c.ok, "worst op rel err " + fmt(op_worst) + " over " + std::to_string(ops.size()) +
                    " ops; worst of 20 DWAN parameters " + fmt(dwan_worst) + " (" + dwan_worst_name + "); " +
                    std::to_string(shrunk) + " of 20 needed a step below 1e-6 to avoid a ReLU kink" +
                    (c.ok ? "" : "; " + c.failure_text())};
}

// ------------------------------------------------------------- criterion 2

Tensor<double> fit_constant_predictor(const std::vector<Tensor<double>>& targets, LossKind loss,
                                      std::size_t epochs) {
  NetworkParameters<double> p;
  const auto& s = targets.front().shape();
  p.add("bias_image", Tensor<double>(Shape{1, s[0], s[1], s[2]}));
  std::vector<TrainingPair<double>> pairs;
  for (const auto& t : targets) pairs.push_back({Tensor<double>(t.shape()), t});
  TrainConfig tc;
  tc.loss = loss;
  tc.batch_size = targets.size();
  tc.micro_batch = targets.size();
  tc.epochs = epochs;
  tc.seed = 7;
  AdamState<double> state(p, tc.adam);
  train(BiasImagePredictor<double>{}, p, std::span<const TrainingPair<double>>(pairs), tc, state);
  return p[0].tensor;
}

Outcome criterion_mean_median() {
  std::mt19937_64 rng(303);
  std::gamma_distribution<double> skewed(2.0, 0.2);
  std::vector<Tensor<double>> targets;
  for (int k = 0; k < 21; ++k) {
    Tensor<double> t(Shape{1, 8, 8});
    for (auto& v : t.values()) v = skewed(rng);
    targets.push_back(t);
  }
  const auto l2 = fit_constant_predictor(targets, LossKind::L2, 3000);
  const auto l1 = fit_constant_predictor(targets, LossKind::L1, 3000);
  double worst_mean = 0, worst_median = 0, gap = 0;
  for (std::size_t i = 0; i < l2.size(); ++i) {
    std::vector<double> v;
    for (const auto& t : targets) v.push_back(t[i]);
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
    const double median = v[v.size() / 2];  // odd count
    worst_mean = std::max(worst_mean, std::abs(l2[i] - mean));
    worst_median = std::max(worst_median, std::abs(l1[i] - median));
    gap = std::max(gap, std::abs(mean - median));
  }
  const bool pass = worst_mean <= 1e-2 && worst_median <= 2e-2;
  return {pass, "L2 fit vs sample mean max |diff| " + fmt(worst_mean) + " (tol 1e-2); L1 fit vs sample median " +
                    fmt(worst_median) + " (tol 2e-2); largest mean-median gap " + fmt(gap)};
}

// ---------------------------------------------------- criteria 3, 4 and 8

struct Workspace {
  fs::path root;
  std::ofstream log;
};

RunConfig base_config() {
  RunConfig cfg;
  cfg.set("seed", "1");
  return cfg;
}

// Reduced-width training recipe used for the desk-scale comparisons.
void apply_training_recipe(RunConfig& cfg) {
  cfg.set("base_channels", "8");
  cfg.set("expansion_channels", "32");
  cfg.set("batch_size", "4");
  cfg.set("micro_batch", "4");
  cfg.set("lr", "0.003");
  cfg.set("epochs", "200");
  cfg.set("checkpoint_every", "20");
}

void simulate(Workspace& ws, RunConfig cfg, const fs::path& out) {
  cfg.set("out", out.string());
  if (fs::exists(out / "manifest.tsv")) {
    ws.log << "reusing dataset " << out.string() << std::endl;
    return;
  }
  cmd_simulate(cfg, true, ws.log);
}

struct MethodScore {
  double psnr = 0, ssim = 0;
};

MethodScore mean_score(const std::vector<MetricsRow>& rows, const std::string& method) {
  MethodScore s;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (r.method == method) {
      s.psnr += r.psnr_db;
      s.ssim += r.ssim;
      ++n;
    }
  require(n > 0, ErrorCode::InvalidArgument, "no rows for method " + method);
  s.psnr /= static_cast<double>(n);
  s.ssim /= static_cast<double>(n);
  return s;
}

// Trains on `dataset` and evaluates the selected weights; returns rows vs clean.
std::vector<MetricsRow> train_and_eval(Workspace& ws, RunConfig cfg, const fs::path& dataset,
                                       const std::string& name) {
  const auto run = ws.root / ("run_" + name);
  cfg.set("dataset", dataset.string());
  cfg.set("out", run.string());
  cfg.set("method", name);
  ws.log << "== train " << name << std::endl;
  const auto t0 = std::chrono::steady_clock::now();
  const auto outcome = cmd_train(cfg, ws.log);
  ws.log << "selected epoch " << outcome.best_epoch << ", "
         << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s" << std::endl;
  cfg.set("weights", (run / "weights.aslw").string());
  cfg.set("out", (ws.root / ("eval_" + name)).string());
  return cmd_eval(cfg, ws.log).vs_clean;
}

Outcome criterion_lfn_parity(Workspace& ws) {
  auto cfg = base_config();
  cfg.set("sigma", fmt(kDefaultSigma, 10));
  const auto data = ws.root / "data_clean";
  simulate(ws, cfg, data);
  apply_training_recipe(cfg);
  cfg.set("loss", "l1");
  cfg.set("mode", "lfn");
  const auto lfn_rows = train_and_eval(ws, cfg, data, "lfn");
  cfg.set("mode", "gold");
  const auto gold_rows = train_and_eval(ws, cfg, data, "gold");

  const double input = mean_score(lfn_rows, "input").psnr;
  const double pgs = mean_score(lfn_rows, "pgs").psnr;
  const double lfn = mean_score(lfn_rows, "lfn").psnr;
  const double gold = mean_score(gold_rows, "gold").psnr;
  Checks c;
  c.expect(lfn >= gold - 0.5, "lfn trails gold by " + fmt(gold - lfn) + " dB");
  c.expect(lfn >= input + 2.0, "lfn gains only " + fmt(lfn - input) + " dB over input");
  c.expect(gold >= input + 2.0, "gold gains only " + fmt(gold - input) + " dB over input");
  return {c.ok, "PSNR vs clean: input " + fmt(input) + ", pgs " + fmt(pgs) + ", lfn " + fmt(lfn) + ", gold " +
                    fmt(gold) + " dB (lfn - gold " + fmt(lfn - gold) + " dB, need >= -0.5; gains over input " +
                    fmt(lfn - input) + " / " + fmt(gold - input) + " dB, need >= 2)"};
}

Outcome criterion_l1_robustness(Workspace& ws) {
  auto cfg = base_config();
  cfg.set("sigma", fmt(kDefaultSigma, 10));
  cfg.set("outlier_rate", "0.1");
  cfg.set("outlier_scale", "10");
  const auto data = ws.root / "data_outliers";
  simulate(ws, cfg, data);
  apply_training_recipe(cfg);
  cfg.set("mode", "lfn");
  cfg.set("loss", "l1");
  const auto l1_rows = train_and_eval(ws, cfg, data, "l1");
  cfg.set("loss", "l2");
  const auto l2_rows = train_and_eval(ws, cfg, data, "l2");

  const auto input = mean_score(l1_rows, "input");
  const auto l1 = mean_score(l1_rows, "l1");
  const auto l2 = mean_score(l2_rows, "l2");
  const bool pass = l1.psnr - l2.psnr >= 0.5 && l1.ssim - l2.ssim >= 0.02;
  return {pass, "vs clean with 10% outlier frames: input " + fmt(input.psnr) + " dB / SSIM " + fmt(input.ssim) +
                    ", L1 " + fmt(l1.psnr) + " dB / " + fmt(l1.ssim) + ", L2 " + fmt(l2.psnr) + " dB / " +
                    fmt(l2.ssim) + " (PSNR gain " + fmt(l1.psnr - l2.psnr) + ", need >= 0.5; SSIM gain " +
                    fmt(l1.ssim - l2.ssim) + ", need >= 0.02)"};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

Outcome criterion_determinism(Workspace& ws) {
  auto cfg = base_config();
  cfg.set("seed", "2024");
  cfg.set("subjects", "7");
  cfg.set("split", "3,1,3");
  cfg.set("height", "32");
  cfg.set("width", "32");
  cfg.set("sigma", "60");
  cfg.set("base_channels", "4");
  cfg.set("expansion_channels", "8");
  cfg.set("batch_size", "4");
  cfg.set("micro_batch", "2");
  cfg.set("epochs", "4");
  cfg.set("checkpoint_every", "2");

  std::vector<fs::path> runs;
  for (const char* name : {"det_a", "det_b"}) {
    const auto dir = ws.root / name;
    fs::remove_all(dir);
    auto c = cfg;
    c.set("out", (dir / "data").string());
    cmd_simulate(c, false, ws.log);
    c.set("dataset", (dir / "data").string());
    c.set("out", (dir / "train").string());
    cmd_train(c, ws.log);
    c.set("weights", (dir / "train" / "weights.aslw").string());
    c.set("out", (dir / "eval").string());
    cmd_eval(c, ws.log);
    cmd_report({dir / "eval" / "report.csv"}, dir / "aggregate.csv", ws.log);
    runs.push_back(dir);
  }

  // Config echoes name their own output directory; everything else must match.
  std::size_t compared = 0;
  Checks c;
  for (const auto& e : fs::recursive_directory_iterator(runs[0])) {
    if (!e.is_regular_file() || e.path().extension() == ".config") continue;
    const auto rel = fs::relative(e.path(), runs[0]);
    ++compared;
    c.expect(fs::exists(runs[1] / rel) && slurp(e.path()) == slurp(runs[1] / rel), rel.string() + " differs");
  }
  std::size_t other = 0;
  for (const auto& e : fs::recursive_directory_iterator(runs[1]))
    other += e.is_regular_file() && e.path().extension() != ".config";
  c.expect(other == compared, "file sets differ");
  return {c.ok, std::to_string(compared) + " files compared across two full runs (dataset, checkpoints, weights, "
                    "outputs, reports)" + (c.ok ? ", all byte-identical" : ": " + c.failure_text())};
}

// ------------------------------------------------------------- criterion 5

Outcome criterion_metric_identities() {
  std::mt19937_64 rng(505);
  Checks c;
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_tensor(Shape{24, 24}, rng, 0, 100);
    const auto y = random_tensor(Shape{24, 24}, rng, 0, 100);
    c.expect(psnr(x, x, 100) == kPsnrCap, "psnr(x,x) is not the cap");
    c.expect(std::abs(ssim(x, x, 100) - 1.0) <= 1e-12, "ssim(x,x) != 1");
    c.expect(std::abs(ssim(x, y, 100) - ssim(y, x, 100)) <= 1e-12, "ssim not symmetric");

    // Every pixel off by exactly range/10.
    auto z = x;
    std::bernoulli_distribution sign(0.5);
    for (auto& v : z.values()) v += sign(rng) ? 10.0 : -10.0;
    c.expect(psnr(z, x, 100) == 20.0, "MSE = range^2/100 gives " + fmt(psnr(z, x, 100), 17) + " dB");

    Image gm(Shape{24, 24}), wm(Shape{24, 24});
    for (std::size_t i = 0; i < 24; ++i)
      for (std::size_t j = 2; j < 22; ++j) (i < 12 ? gm : wm).at({i, j}) = 1;
    std::uniform_real_distribution<double> k(0.01, 100.0), shift(-50, 50);
    const double a = k(rng), b = shift(rng);
    auto kx = x;
    for (auto& v : kx.values()) v *= a;
    c.expect(std::abs(roi_snr(kx, gm, wm) / roi_snr(x, gm, wm) - 1) <= 1e-12, "roi_snr not scale invariant");
    c.expect(std::abs(gmwm_contrast(kx, gm, wm) / gmwm_contrast(x, gm, wm) - 1) <= 1e-12,
             "contrast not scale invariant");

    std::vector<Image> outs, refs, refs_affine;
    for (int s = 0; s < 6; ++s) {
      outs.push_back(random_tensor(Shape{4, 4}, rng, 0, 1));
      refs.push_back(random_tensor(Shape{4, 4}, rng, 0, 1));
      for (std::size_t i = 0; i < 16; ++i) refs.back()[i] += outs.back()[i];
      refs_affine.push_back(refs.back().map([&](double v) { return a * v + b; }));
    }
    const auto r1 = correlation_map(outs, refs, -1.0);
    const auto r2 = correlation_map(outs, refs_affine, -1.0);
    for (std::size_t i = 0; i < r1.size(); ++i)
      c.expect(std::abs(r1[i] - r2[i]) <= 1e-12, "Pearson r not affine invariant");
  }
  return {c.ok, c.ok ? "psnr cap, exact 20 dB, ssim(x,x)=1, ssim symmetry, ROI SNR/contrast scale invariance, "
                       "Pearson affine invariance: 20 random trials each"
                     : c.failure_text()};
}

// ------------------------------------------------------------- criterion 6

Outcome criterion_architecture() {
  const DwanSpec spec;
  const Dwan<float> net(spec);
  const auto params = build_dwan<float>(spec, 606);
  std::size_t weights = 0, biases = 0;
  std::vector<std::size_t> global_first;
  for (const auto& p : params) {
    const bool w = p.name.ends_with(".weight");
    (w ? weights : biases)++;
  }
  for (const auto& l : dwan_layers(spec))
    if (l.name.starts_with("global.") && l.name.ends_with(".conv1")) global_first.push_back(l.dilation);

  Graph<float> g;
  const auto ids = net.bind(g, params);
  net.forward(g, ids, g.constant(Tensor<float>(Shape{1, 1, 16, 16})));
  const auto adds = g.count(OpKind::Add), concats = g.count(OpKind::ConcatChannels);
  const auto convs = g.count(OpKind::Conv2d);

  // Receptive fields in double so no sensitivity underflows.
  const Dwan<double> netd(spec);
  const auto pd = parameters_cast<double>(params);
  std::mt19937_64 rng(607);
  const auto probe = random_tensor(Shape{1, 1, 97, 97}, rng, 0.5, 1.5);
  const auto full = empirical_receptive_field(netd, pd, probe);
  const auto local = empirical_receptive_field(netd, pd, probe, Pathway::Local);
  const auto global = empirical_receptive_field(netd, pd, probe, Pathway::Global);
  std::vector<long> dil(spec.global_dilations.begin(), spec.global_dilations.end());
  const auto oracle = testing_support::dwan_rf_oracle(dil);

  // Enumerated topology: 1 head + 2 pathways x 4 blocks x 2 convs + fuse + skip.
  const std::size_t expected_convs = 1 + 2 * spec.blocks_per_pathway * 2 + 1 + 1;
  Checks c;
  c.expect(weights == expected_convs && biases == expected_convs,
           "tensor count " + std::to_string(weights) + "+" + std::to_string(biases));
  c.expect(global_first == std::vector<std::size_t>{2, 4, 8, 16}, "global block dilations");
  c.expect(concats == 1, "concats " + std::to_string(concats));
  c.expect(adds == 9, "adds " + std::to_string(adds));
  c.expect(convs == expected_convs, "convs " + std::to_string(convs));
  c.expect(full.height == oracle.full && full.width == oracle.full,
           "empirical RF " + std::to_string(full.height) + "x" + std::to_string(full.width));
  c.expect(oracle.full == 73, "oracle RF " + std::to_string(oracle.full));
  c.expect(global.height > local.height, "global RF not larger than local");
  return {c.ok, std::to_string(weights) + " weight + " + std::to_string(biases) +
                    " bias tensors (1 head + 16 block + fuse + skip convs), global dilations [2,4,8,16], " +
                    std::to_string(concats) + " concat, " + std::to_string(adds) + " adds; RF empirical " +
                    std::to_string(full.height) + " px = oracle " + std::to_string(oracle.full) +
                    " px; local " + std::to_string(local.height) + " < global " + std::to_string(global.height) +
                    " px" + (c.ok ? "" : "; " + c.failure_text())};
}

// ------------------------------------------------------------- criterion 7

Outcome criterion_simulator() {
  const auto cfg = base_config();  // default sigma is the paper-like preset
  const auto opt = dataset_options(cfg);
  const double sigma = opt.noise.sigma;
  const std::size_t subjects = 20;
  double err_std = 0, snr = 0;
  double cmin = 1e9, cmax = -1e9, snr_min = 1e9, snr_max = -1e9;
  for (std::size_t k = 0; k < subjects; ++k) {
    const auto s = generate_subject(derive_seed(derive_seed(opt.seed, "criterion7"), k), opt);
    const auto brain = s.brain_mask();
    const auto mean40 = frame_mean(s.series, 0, kSeriesFrames);
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < brain.size(); ++i)
      if (in_mask(brain, i)) {
        const double e = mean40[i] - s.clean[i];
        sum += e;
        sq += e * e;
        ++n;
      }
    const double m = sum / static_cast<double>(n);
    err_std += std::sqrt(sq / static_cast<double>(n) - m * m);
    const auto pgs = pseudo_gold_standard(s, opt.fwhm_px).image;
    const double v = roi_snr(pgs, s.gm_mask, wm_roi(s.wm_mask));
    snr += v;
    snr_min = std::min(snr_min, v);
    snr_max = std::max(snr_max, v);
    const double contrast = gmwm_contrast(s.clean, s.gm_mask, s.wm_mask);
    cmin = std::min(cmin, contrast);
    cmax = std::max(cmax, contrast);
  }
  err_std /= subjects;
  snr /= subjects;
  const double want = sigma / std::sqrt(40.0);
  Checks c;
  c.expect(std::abs(err_std - want) <= 0.1 * want, "40-frame error std");
  c.expect(snr >= 4 && snr <= 8, "pgs SNR");
  c.expect(cmin >= 2.2 && cmax <= 2.6, "clean contrast");
  return {c.ok, "sigma " + fmt(sigma) + ": 40-frame mean error std " + fmt(err_std) + " vs " + fmt(want) +
                    " +/- 10%; pgs ROI SNR mean " + fmt(snr) + " (range " + fmt(snr_min) + ".." + fmt(snr_max) +
                    ", need [4, 8]); clean GM/WM contrast " + fmt(cmin) + ".." + fmt(cmax) +
                    " (need [2.2, 2.6]) over " + std::to_string(subjects) + " subjects"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("acceptance checks");
  std::vector<int> selected;
  std::string work;
  app.add_option("criteria", selected, "criteria to run (default: all)")->check(CLI::Range(1, 8));
  app.add_option("--work", work, "keep scratch data in this directory");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};

  Workspace ws;
  const bool keep = !work.empty();
  ws.root = keep ? fs::path(work) : fs::temp_directory_path() / ("asldn_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(ws.root);
  ws.log.open(ws.root / "acceptance.log");
  if (keep) std::cout << "scratch: " << ws.root.string() << '\n';

  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria = {
      {1, {"gradient correctness", criterion_gradients}},
      {2, {"mean/median law", criterion_mean_median}},
      {3, {"learning-from-noise parity", [&] { return criterion_lfn_parity(ws); }}},
      {4, {"L1 outlier robustness", [&] { return criterion_l1_robustness(ws); }}},
      {5, {"metric identities", criterion_metric_identities}},
      {6, {"architecture audit", criterion_architecture}},
      {7, {"simulator statistics", criterion_simulator}},
      {8, {"determinism", [&] { return criterion_determinism(ws); }}},
  };

  int failed = 0;
  for (int id : std::set<int>(selected.begin(), selected.end())) {
    const auto& [name, run] = criteria.at(id);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << id << " [" << name << "]: " << (o.pass ? "PASS" : "FAIL") << " | " << o.detail
              << " | " << fmt(secs, 3) << " s" << std::endl;
    failed += !o.pass;
  }
  ws.log.close();
  if (!keep) fs::remove_all(ws.root);
  return failed == 0 ? 0 : 1;
}
