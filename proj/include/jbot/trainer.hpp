#pragma once

// Epoch/batch driver around train_step: seeded shuffling, metrics.csv,
// periodic and final checkpoints, and the non-finite-loss diagnostic dump.

#include <jbot/distill.hpp>

#include <cstdio>
#include <filesystem>
#include <ostream>

namespace jbot {

struct PretrainResult {
  std::string student_dir, teacher_dir, metrics_path;
  long steps = 0;
  double final_loss = 0;
};

namespace detail {

inline void write_metrics_row(std::FILE* f, const StepMetrics& m) {
  std::fprintf(f, "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", m.step, m.lr, m.tau_ema,
               m.loss_total, m.loss_part, m.loss_cls, m.loss_koleo, m.teacher_entropy,
               m.center_cls_norm, m.center_part_norm);
}

}  // namespace detail

template <typename S>
PretrainResult pretrain(const JetDataset& train, const NetworkConfig& net,
                        const DistillConfig& cfg, const AugmentConfig& aug, std::uint64_t seed,
                        const std::string& out_dir, long checkpoint_every_epochs = 0,
                        std::ostream* progress = nullptr) {
  cfg.validate();
  aug.validate();
  net.validate();
  long n = static_cast<long>(train.jets.size());
  if (n < 2) throw TrainError("pretrain: need at least 2 jets");

  long bs = std::min<long>(cfg.batch_size, n);
  long steps_per_epoch = 0;
  for (long at = 0; at < n; at += bs)
    if (std::min(bs, n - at) >= 2) ++steps_per_epoch;
  if (steps_per_epoch == 0) throw TrainError("pretrain: no usable batches");
  long total_steps = steps_per_epoch * cfg.epochs;

  std::filesystem::create_directories(out_dir);
  std::string metrics_path = out_dir + "/metrics.csv";
  std::FILE* mf = std::fopen(metrics_path.c_str(), "w");
  if (!mf) throw TrainError("pretrain: cannot write " + metrics_path);
  std::fprintf(mf, "step,lr,tau_ema,loss_total,loss_part,loss_cls,loss_koleo,teacher_entropy,"
                   "center_cls_norm,center_part_norm\n");

  auto st = TrainState<S>::init(net, seed, total_steps, steps_per_epoch);

  StepMetrics last{};
  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffler = Rng::stream(seed, "batch", static_cast<std::uint64_t>(epoch));
    shuffler.shuffle(order);

    for (long at = 0; at < n; at += bs) {
      long take = std::min(bs, n - at);
      if (take < 2) continue;
      std::vector<const Jet*> batch;
      batch.reserve(static_cast<std::size_t>(take));
      for (long k = 0; k < take; ++k)
        batch.push_back(&train.jets[order[static_cast<std::size_t>(at + k)]]);
      try {
        last = train_step(st, batch, cfg, aug);
      } catch (const TrainError& e) {
        std::fclose(mf);
        JetDataset dump;
        dump.n_classes = train.n_classes;
        for (const Jet* j : batch) dump.jets.push_back(*j);
        std::string fp = out_dir + "/diagnostic_batch_features.npy";
        std::string lp = out_dir + "/diagnostic_batch_labels.npy";
        save_npy_dataset(dump, fp, lp);
        throw TrainError(std::string(e.what()) + "; offending batch dumped to " + fp);
      }
      detail::write_metrics_row(mf, last);
    }
    std::fflush(mf);
    if (progress)
      (*progress) << "epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << last.loss_total
                  << "\n";

    if (checkpoint_every_epochs > 0 && (epoch + 1) % checkpoint_every_epochs == 0 &&
        epoch + 1 < cfg.epochs) {
      std::string dir = out_dir + "/checkpoints/epoch_" + std::to_string(epoch + 1);
      save_checkpoint(dir + "/student", st.student, st.step, "student");
      save_checkpoint(dir + "/teacher", st.teacher, st.step, "teacher");
    }
  }
  std::fclose(mf);

  PretrainResult res;
  res.student_dir = out_dir + "/student";
  res.teacher_dir = out_dir + "/teacher";
  res.metrics_path = metrics_path;
  res.steps = st.step;
  res.final_loss = last.loss_total;
  save_checkpoint(res.student_dir, st.student, st.step, "student");
  save_checkpoint(res.teacher_dir, st.teacher, st.step, "teacher");
  return res;
}

}  // namespace jbot
