// SPDX-License-Identifier: Apache-2.0
//
// Trains the 16-pixel preset for a few iterations on moving-shape clips,
// prints the cost estimate and writes a frame grid of dense samples.
//
//   quickstart [output_dir] [iterations]

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "vidgan/costmodel.hpp"
#include "vidgan/image_io.hpp"
#include "vidgan/training.hpp"

int main(int argc, char** argv) {
  using namespace vidgan;
  const std::filesystem::path out = argc > 1 ? argv[1] : "quickstart_run";
  RunConfig cfg = preset("cpu-16px");
  cfg.output_dir = out.string();
  cfg.train.iterations = argc > 2 ? std::atoll(argv[2]) : 50;
  cfg.train.snapshot_interval = 25;

  std::cout << cost_table(cfg.model, cfg.discriminator, {2, 4}, cfg.train.batch_size) << '\n';

  TrainOptions opts;
  opts.on_step = [](const LossReport& r) {
    if (r.iteration % 10 == 0)
      std::cout << "iter " << r.iteration << "  d " << r.d_loss << "  g " << r.g_loss << "  r1 " << r.r1 << '\n';
  };
  const TrainState<float> st = run_training<float>(cfg, opts);

  // Training drops frames between levels; inference renders every frame.
  Rng rng(1);
  const Tensor<float> video = st.gen.infer(sample_noise<float>(4, cfg.model.latent_dim, rng));
  write_png(out / "grid.png", frame_grid(video, 2));
  std::cout << "wrote " << (out / "grid.png").string() << '\n';
  return 0;
}
