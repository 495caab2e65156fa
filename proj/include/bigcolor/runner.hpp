#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <memory>
#include <ostream>
#include <string>

#include "bigcolor/config.hpp"
#include "bigcolor/data.hpp"
#include "bigcolor/training.hpp"

namespace bigcolor {

inline nlohmann::json progress_record(long long step, int epoch, const losses::LossReport& r, double lr_gen,
                                      double lr_disc, double elapsed) {
  return {{"step", step},       {"epoch", epoch},         {"mse", r.mse},         {"perceptual", r.perceptual},
          {"gen_adv", r.gen_adv}, {"disc", r.disc},       {"total_gen", r.total_gen}, {"lr_gen", lr_gen},
          {"lr_disc", lr_disc}, {"elapsed_s", elapsed}};
}

struct RunResult {
  long long steps = 0;
  std::filesystem::path last_checkpoint;
};

/// Full training loop: batches from the run's manifest, one trainer step per
/// batch, LR decay at each epoch boundary, periodic and final checkpoints.
/// Progress is written to `progress` as one JSON object per line every
/// `log_every` steps. `on_step` (optional) sees every report.
template <typename T = float>
RunResult run_training(const RunConfig& run, const std::string& resume, std::ostream& progress,
                       const std::function<void(long long, const losses::LossReport&)>& on_step = {}) {
  std::unique_ptr<Trainer<T>> trainer =
      resume.empty() ? std::make_unique<Trainer<T>>(run.model, run.train) : Trainer<T>::load_checkpoint(resume);
  const TrainConfig& tc = trainer->train_config();
  const ModelConfig& mc = trainer->model_config();
  if (!run.class_manifest.empty()) {
    const auto classes = ClassManifest::load(run.class_manifest);
    if (classes.size() != mc.num_classes)
      throw std::runtime_error("class manifest has " + std::to_string(classes.size()) + " classes, model expects " +
                               std::to_string(mc.num_classes));
  }
  data::BatchSource<T> source(data::DatasetManifest::load(run.manifest), mc.num_classes, tc.image_size, tc.batch_size,
                              tc.random_crop, tc.seed);
  const int per_epoch = source.batches_per_epoch();
  const long long total = run.max_steps > 0 ? run.max_steps : static_cast<long long>(tc.epochs) * per_epoch;
  std::filesystem::create_directories(run.checkpoint_dir);
  const auto start = std::chrono::steady_clock::now();
  const auto save = [&](const std::string& name) {
    const auto path = std::filesystem::path(run.checkpoint_dir) / name;
    trainer->save_checkpoint(path);
    return path;
  };

  RunResult result;
  long long step = trainer->step();
  if (step < total) {
    data::Prefetcher<T> prefetch(source, static_cast<int>(step / per_epoch), static_cast<int>(step % per_epoch));
    for (; step < total; step = trainer->step()) {
      const auto batch = prefetch.next();
      const auto report = trainer->train_step(batch.rgb, batch.class_vec);
      const long long done = trainer->step();
      if (on_step) on_step(done, report);
      if (done % per_epoch == 0) trainer->epoch_end();
      if (run.log_every > 0 && (done % run.log_every == 0 || done == total)) {
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        progress << progress_record(done, trainer->epoch(), report, trainer->lr_gen(), trainer->lr_disc(), elapsed).dump()
                 << std::endl;
      }
      if (run.checkpoint_every > 0 && done % run.checkpoint_every == 0) save("step_" + std::to_string(done) + ".ckpt");
    }
  }
  result.steps = trainer->step();
  result.last_checkpoint = save("last.ckpt");
  return result;
}

}  // namespace bigcolor
