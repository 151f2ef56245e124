#pragma once

// Training loop: samples a batch of frame triples, averages the per-triple
// losses, backpropagates once, and applies one Adam update with the
// group-specific scheduled rates. Runs single-threaded and, for a fixed
// seed and dataset, reproduces the loss log bit for bit.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "umbra/config.hpp"
#include "umbra/core/error.hpp"
#include "umbra/core/graph.hpp"
#include "umbra/core/init.hpp"
#include "umbra/data/dataset.hpp"
#include "umbra/net/losses.hpp"
#include "umbra/net/model.hpp"
#include "umbra/train/adam.hpp"
#include "umbra/train/checkpoint.hpp"
#include "umbra/train/schedule.hpp"

namespace umbra {

struct StepLog {
  std::int64_t step = 0;
  double lr = 0;     // effective scratch-group rate this step
  double seg = 0;    // batch-mean segmentation loss
  double aux = 0;    // batch-mean auxiliary loss
  double total = 0;  // batch-mean total
};

struct TrainResult {
  std::vector<StepLog> log;
  double initial_total = 0;
  double final_total = 0;
};

/// Formats a double with full round-trip precision (shortest exact form
/// printf offers for doubles).
inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class Trainer {
 public:
  Trainer(Model& model, const DatasetIndex& index, std::ostream* diag = &std::cerr)
      : model_(model),
        index_(index),
        diag_(diag),
        sample_rng_(stream_seed(model.config().train.seed, kSampleStream)) {
    const Config& cfg = model.config();
    for (const auto& [name, var] : model.params().items()) {
      vars_.push_back(var);
      base_lr_.push_back(model.is_pretrained_param(name) ? cfg.train.lr_pretrained
                                                         : cfg.train.lr_scratch);
    }
    AdamConfig ac;
    ac.weight_decay = cfg.train.weight_decay;
    adam_ = Adam(vars_, ac);
    spe_ = steps_per_epoch(index.frame_count(), cfg.train.batch_size);
    total_steps_ = spe_ * cfg.train.epochs;
    warmup_steps_ = std::llround(cfg.train.warmup_epochs * static_cast<double>(spe_));
  }

  std::int64_t steps_per_epoch_count() const { return spe_; }
  std::int64_t total_steps() const { return total_steps_; }
  std::int64_t current_step() const { return step_; }
  Adam& optimizer() { return adam_; }
  Rng& sampler() { return sample_rng_; }

  /// Samples one batch, runs the forward/backward pass, applies the
  /// optimizer update for the current step, and returns the log row.
  StepLog step() {
    const Config& cfg = model_.config();
    if (step_ >= total_steps_) throw Error("trainer: schedule exhausted");
    double factor =
        lr_factor(step_, total_steps_, warmup_steps_, cfg.train.warmup_start_factor);

    std::vector<TripleSample> batch;
    batch.reserve(cfg.train.batch_size);
    for (int i = 0; i < cfg.train.batch_size; ++i)
      batch.push_back(sample_triple(index_, sample_rng_, cfg.train.max_offset,
                                    cfg.data.input_size, cfg.data.mean, cfg.data.std));

    ag::Var total_sum;
    double seg_mean = 0, aux_mean = 0;
    std::vector<LossBreakdown> parts;
    parts.reserve(batch.size());
    for (const TripleSample& s : batch) {
      TripleOut out = model_.forward_triple(s.img_a1, s.img_a2, s.img_b);
      LossBreakdown lb = total_loss(out.logits_a1, s.mask_a1, out.logits_a2, s.mask_a2,
                                    out.logits_b, s.mask_b, out.aux, cfg.train.beta);
      total_sum = total_sum ? ag::add(total_sum, lb.total) : lb.total;
      seg_mean += lb.seg->value[0];
      aux_mean += lb.aux->value[0];
      parts.push_back(lb);
    }
    double inv = 1.0 / static_cast<double>(batch.size());
    ag::Var total = ag::scale(total_sum, inv);
    seg_mean *= inv;
    aux_mean *= inv;

    if (!std::isfinite(total->value[0])) {
      dump_batch(batch, parts, factor);
      throw NumericError("non-finite loss at step " + std::to_string(step_) +
                         "; diagnostic dump written");
    }

    ag::backward(total);
    std::vector<double> lr(base_lr_.size());
    for (std::size_t i = 0; i < lr.size(); ++i) lr[i] = base_lr_[i] * factor;
    adam_.step(lr);
    ag::zero_grad(vars_);

    StepLog row;
    row.step = step_;
    row.lr = model_.config().train.lr_scratch * factor;
    row.seg = seg_mean;
    row.aux = aux_mean;
    row.total = total->value[0];
    ++step_;
    return row;
  }

  static void write_csv_header(std::ostream& os) { os << "step,lr,seg,aux,total\n"; }

  static void append_csv(std::ostream& os, const StepLog& row) {
    os << row.step << ',' << format_g17(row.lr) << ',' << format_g17(row.seg) << ','
       << format_g17(row.aux) << ',' << format_g17(row.total) << '\n';
    os.flush();
  }

  /// Runs the remaining schedule, appending one CSV row per step. When
  /// `checkpoint_path` is non-empty the final state is saved there.
  TrainResult run(std::ostream* csv, const std::string& checkpoint_path = "") {
    if (csv && step_ == 0) write_csv_header(*csv);
    TrainResult result;
    while (step_ < total_steps_) {
      StepLog row = step();
      if (csv) append_csv(*csv, row);
      if (result.log.empty()) result.initial_total = row.total;
      result.final_total = row.total;
      result.log.push_back(row);
    }
    if (!checkpoint_path.empty()) save(checkpoint_path);
    return result;
  }

  void save(const std::string& path) const {
    TrainProgress p;
    p.step = step_;
    p.epoch = spe_ > 0 ? step_ / spe_ : 0;
    p.rng_state = sample_rng_.state();
    save_checkpoint(path, model_.params(), &adam_, p, config_hash(model_.config()));
  }

  /// Restores parameters, optimizer moments, sampler state, and the step
  /// counter, so a resumed run continues the original trajectory.
  void restore(const std::string& path, std::ostream* warn = &std::cerr) {
    CheckpointInfo info =
        load_checkpoint(path, model_.params(), &adam_, config_hash(model_.config()), warn);
    step_ = info.progress.step;
    if (!info.progress.rng_state.empty()) sample_rng_.set_state(info.progress.rng_state);
  }

 private:
  void dump_batch(const std::vector<TripleSample>& batch,
                  const std::vector<LossBreakdown>& parts, double factor) const {
    if (!diag_) return;
    *diag_ << "=== non-finite loss diagnostic (step " << step_ << ", lr factor " << factor
           << ") ===\n";
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const TripleSample& s = batch[i];
      *diag_ << "  sample " << i << ": a1=" << s.a1.video_id << "/" << s.a1.frame_index
             << " a2=" << s.a2.video_id << "/" << s.a2.frame_index << " b=" << s.b.video_id
             << "/" << s.b.frame_index;
      if (i < parts.size())
        *diag_ << "  seg=" << parts[i].seg->value[0] << " aux=" << parts[i].aux->value[0]
               << " total=" << parts[i].total->value[0];
      *diag_ << '\n';
    }
    diag_->flush();
  }

  Model& model_;
  const DatasetIndex& index_;
  std::ostream* diag_;
  Rng sample_rng_;
  std::vector<ag::Var> vars_;
  std::vector<double> base_lr_;
  Adam adam_;
  std::int64_t spe_ = 0;
  std::int64_t total_steps_ = 0;
  std::int64_t warmup_steps_ = 0;
  std::int64_t step_ = 0;
};

}  // namespace umbra
