#include "shcanet/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "shcanet/data/augment.hpp"
#include "shcanet/rng.hpp"

namespace shcanet::train {

Snapshot snapshot(const nn::ParamStore<float>& store) {
  Snapshot s;
  for (const auto& p : store.params()) s.params.push_back(p.value);
  for (const auto& b : store.buffers()) s.buffers.push_back(b.value);
  return s;
}

void restore(nn::ParamStore<float>& store, const Snapshot& s) {
  require(s.params.size() == store.params().size() && s.buffers.size() == store.buffers().size(),
          "snapshot does not fit this model");
  for (std::size_t i = 0; i < s.params.size(); ++i) store.params()[i].value = s.params[i];
  for (std::size_t i = 0; i < s.buffers.size(); ++i) store.buffers()[i].value = s.buffers[i];
}

std::string format_log_line(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g", r.step, r.lr, r.parts.box, r.parts.obj,
                r.parts.cls, r.parts.total);
  return buf;
}

std::vector<std::vector<Detection>> detect_samples(Model& model, const std::vector<data::Sample>& samples,
                                                   const nn::PredictOptions& opt, int batch) {
  const int size = model.config().input_size;
  std::vector<std::vector<Detection>> out;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch));
    std::vector<data::Letterboxed> boxed;
    std::vector<const data::Image*> imgs;
    for (std::size_t i = start; i < end; ++i) boxed.push_back(data::letterbox(samples[i].image, size));
    for (const auto& b : boxed) imgs.push_back(&b.image);
    const auto dets = nn::predict(model, data::to_tensor<float>(imgs), opt);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      std::vector<Detection> mapped;
      for (const auto& d : dets[i]) {
        const Detection m = nn::unletterbox(d, boxed[i].meta);
        if (m.box.valid()) mapped.push_back(m);
      }
      out.push_back(std::move(mapped));
    }
  }
  return out;
}

eval::EvalReport evaluate_model(Model& model, const std::vector<data::Sample>& samples,
                                const std::vector<std::string>& class_names, const nn::PredictOptions& opt,
                                double operating_conf) {
  const auto preds = detect_samples(model, samples, opt);
  std::vector<std::vector<Annotation>> gts;
  for (const auto& s : samples) gts.push_back(s.annotations);
  return eval::evaluate(preds, gts, class_names, {0.5, operating_conf});
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1))]);
  return idx;
}

bool finite(const loss::LossComponents& c) {
  return std::isfinite(c.box) && std::isfinite(c.obj) && std::isfinite(c.cls) && std::isfinite(c.total);
}

}  // namespace

TrainResult train(Model& model, const std::vector<data::Sample>& train_set, const std::vector<data::Sample>& val,
                  const std::vector<std::string>& class_names, const TrainOptions& opt, std::uint64_t seed,
                  const BestCallback& on_best) {
  require(!train_set.empty(), "training set is empty");
  opt.optim.validate();
  opt.gains.validate();
  const auto& mcfg = model.config();
  require(static_cast<int>(class_names.size()) == mcfg.head.num_classes,
          "class names (" + std::to_string(class_names.size()) + ") do not match the head's " +
              std::to_string(mcfg.head.num_classes) + " classes");
  for (const auto& s : train_set) s.validate(mcfg.head.num_classes);
  const int size = mcfg.input_size;

  std::vector<data::Sample> boxed;
  for (const auto& s : train_set) boxed.push_back(data::letterbox(s, size));

  const std::size_t n = train_set.size();
  const std::size_t bs = static_cast<std::size_t>(opt.optim.batch_size);
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(opt.optim.epochs);
  if (opt.max_steps > 0) total_steps = std::min(total_steps, opt.max_steps);

  TrainResult result;
  OptimState<float> state = make_state(model.store());
  std::size_t step = 0;
  for (int epoch = 0; epoch < opt.optim.epochs && step < total_steps; ++epoch) {
    const auto order = shuffled(n, derive_seed(seed, {0, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t b = 0; b < steps_per_epoch && step < total_steps; ++b, ++step) {
      std::vector<data::Sample> batch;
      for (std::size_t k = b * bs; k < std::min(n, (b + 1) * bs); ++k) {
        const std::size_t idx = order[k];
        if (!opt.mosaic) {
          batch.push_back(boxed[idx]);
          continue;
        }
        const std::uint64_t s = derive_seed(seed, {1, static_cast<std::uint64_t>(epoch), idx});
        Rng pick(s);
        std::vector<const data::Sample*> four{&train_set[idx]};
        for (int j = 0; j < 3; ++j)
          four.push_back(&train_set[static_cast<std::size_t>(uniform_int(pick, 0, static_cast<std::int64_t>(n) - 1))]);
        batch.push_back(data::mosaic(four, mix64(s), size));
      }

      std::vector<const data::Image*> imgs;
      std::vector<loss::GroundTruth> gts;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        imgs.push_back(&batch[i].image);
        for (const auto& a : batch[i].annotations) gts.push_back({static_cast<int>(i), a.class_id, a.box});
      }
      const Schedule sched = schedule_at(step, steps_per_epoch, opt.optim);

      ad::Tape<float> tape;
      auto ctx = model.context(tape, ad::BnMode::train);
      const auto raw = model.forward(ctx, tape.constant(data::to_tensor<float>(imgs)));
      const auto targets = loss::assign_targets(gts, mcfg.head, size, opt.gains.anchor_t);
      const auto res = loss::total_loss(raw, targets, mcfg.head, opt.gains);
      const StepRecord rec{step, sched.lr, res.parts};
      if (opt.log) *opt.log << format_log_line(rec) << '\n';
      if (!finite(res.parts)) {
        if (opt.log) *opt.log << "# aborted: non-finite loss at step " << step << '\n' << std::flush;
        throw TrainingDiverged(step, "non-finite loss at step " + std::to_string(step) + " (" +
                                         format_log_line(rec) + ")");
      }
      result.steps.push_back(rec);
      tape.backward(res.loss);
      sgd_step(model.store(), ctx.gradients(), state, sched.lr, sched.momentum, opt.optim.weight_decay);
    }

    const bool last = epoch + 1 == opt.optim.epochs || step >= total_steps;
    if (opt.eval_every > 0 && !val.empty() && ((epoch + 1) % opt.eval_every == 0 || last)) {
      const auto rep = evaluate_model(model, val, class_names, opt.eval_predict, opt.operating_conf);
      const EvalRecord er{epoch, step, rep.map};
      result.evals.push_back(er);
      if (rep.map > result.best_map) {
        result.best_map = rep.map;
        result.best_epoch = epoch;
        result.best = snapshot(model.store());
        if (on_best) on_best(er, model);
      }
    }
  }
  if (opt.log) opt.log->flush();
  return result;
}

}  // namespace shcanet::train
