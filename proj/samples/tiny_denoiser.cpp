// Trains a narrow DWAN on noisy segment pairs of a few phantom subjects and
// compares a held-out subject before and after denoising.

#include <algorithm>
#include <iostream>
#include <vector>

#include "asldn/dataset.hpp"
#include "asldn/metrics.hpp"
#include "asldn/network.hpp"
#include "asldn/trainer.hpp"

int main() {
  using namespace asldn;
  constexpr double scale = 64.0;
  DatasetOptions opt;
  opt.height = opt.width = 32;
  opt.noise.sigma = 60.0;

  auto to_net = [&](const Image& img) {
    return tensor_cast<float>(img.map([](double v) { return v / scale; })).reshape({1, img.dim(0), img.dim(1)});
  };

  std::vector<TrainingPair<float>> pairs;
  for (std::uint64_t i = 0; i < 6; ++i) {
    const auto seg = segment_means(generate_subject(derive_seed(7, i), opt));
    pairs.push_back({to_net(seg.input1), to_net(seg.ref1)});
    pairs.push_back({to_net(seg.input2), to_net(seg.ref2)});
  }

  DwanSpec spec;
  spec.base_channels = 8;
  spec.expansion_channels = 16;
  const Dwan<float> net(spec);
  auto params = build_dwan<float>(spec, 1);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.micro_batch = 4;
  tc.epochs = 120;
  tc.adam.lr = 3e-3;
  tc.seed = 2;
  AdamState<float> state(params, tc.adam);
  train(DwanPredictor<float>{net}, params, std::span<const TrainingPair<float>>(pairs), tc, state,
        [](const EpochSummary<float>& e) { std::cout << "epoch " << e.epoch << " L1 " << e.mean_loss << '\n'; });

  const auto held_out = generate_subject(derive_seed(7, 100), opt);
  const auto input = segment_means(held_out).test_input;
  const auto out = tensor_cast<double>(net.infer(params, to_net(input).reshape({1, 1, 32, 32})))
                       .map([](double v) { return v * scale; })
                       .reshape({32, 32});
  const auto mask = evaluation_mask(held_out.gm_mask, held_out.wm_mask);
  const double range = *std::max_element(held_out.clean.values().begin(), held_out.clean.values().end());
  std::cout << "PSNR vs clean: input " << psnr(input, held_out.clean, range, &mask) << " dB, output "
            << psnr(out, held_out.clean, range, &mask) << " dB\n";
}
