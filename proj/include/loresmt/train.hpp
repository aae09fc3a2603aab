#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "loresmt/rng.hpp"
#include "loresmt/transformer.hpp"

namespace loresmt::train {

template <class S>
using Mat = model::Mat<S>;

struct DivergedLoss : std::runtime_error {
  DivergedLoss(std::int64_t at_step, double value)
      : std::runtime_error("loss diverged at step " + std::to_string(at_step) +
                           " (value " + std::to_string(value) + ")"),
        step(at_step),
        loss(value) {}
  std::int64_t step;
  double loss;
};

struct OptimConfig {
  double lr_peak = 3e-3;
  int warmup_steps = 40;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double label_smoothing = 0.1;
  double grad_clip = 1.0;  // global L2 norm cap; 0 disables clipping

  nlohmann::json to_json() const {
    return nlohmann::json{{"lr_peak", lr_peak},
                          {"warmup_steps", warmup_steps},
                          {"beta1", beta1},
                          {"beta2", beta2},
                          {"eps", eps},
                          {"label_smoothing", label_smoothing},
                          {"grad_clip", grad_clip}};
  }
  static OptimConfig from_json(const nlohmann::json& j) {
    OptimConfig c;
    c.lr_peak = j.value("lr_peak", c.lr_peak);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    return c;
  }
};

// Inverse-square-root schedule with linear warmup: both branches meet at the
// peak when step == warmup_steps. `step` is 1-based.
inline double lr_at(const OptimConfig& c, std::int64_t step) {
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(std::max(c.warmup_steps, 1));
  return c.lr_peak * std::min(s / w, std::sqrt(w / s));
}

// Adam with bias correction. Moment tensors mirror the parameter layout; the
// update order is the for_each_tensor order, so results are reproducible.
template <class S>
class Adam {
 public:
  Adam(const model::Params<S>& like, OptimConfig cfg)
      : cfg_(cfg), m_(model::zeros_like(like)), v_(model::zeros_like(like)) {}

  std::int64_t step_count() const { return t_; }
  const OptimConfig& config() const { return cfg_; }

  void step(model::Params<S>& params, model::Params<S>& grads, double lr) {
    ++t_;
    if (cfg_.grad_clip > 0) {
      double sq = 0;
      grads.for_each_tensor([&](const std::string&, const Mat<S>& g) {
        sq += static_cast<double>(g.squaredNorm());
      });
      const double norm = std::sqrt(sq);
      if (norm > cfg_.grad_clip) {
        const S scale = static_cast<S>(cfg_.grad_clip / norm);
        grads.for_each_tensor(
            [&](const std::string&, Mat<S>& g) { g *= scale; });
      }
    }

    const S b1 = static_cast<S>(cfg_.beta1);
    const S b2 = static_cast<S>(cfg_.beta2);
    const S eps = static_cast<S>(cfg_.eps);
    const S bc1 = S(1) - static_cast<S>(std::pow(cfg_.beta1, t_));
    const S bc2 = S(1) - static_cast<S>(std::pow(cfg_.beta2, t_));
    const S a = static_cast<S>(lr);

    std::vector<Mat<S>*> ps, gs, ms, vs;
    params.for_each_tensor([&](const std::string&, Mat<S>& x) { ps.push_back(&x); });
    grads.for_each_tensor([&](const std::string&, Mat<S>& x) { gs.push_back(&x); });
    m_.for_each_tensor([&](const std::string&, Mat<S>& x) { ms.push_back(&x); });
    v_.for_each_tensor([&](const std::string&, Mat<S>& x) { vs.push_back(&x); });
    for (std::size_t i = 0; i < ps.size(); ++i) {
      Mat<S>& p = *ps[i];
      const Mat<S>& g = *gs[i];
      Mat<S>& m = *ms[i];
      Mat<S>& v = *vs[i];
      m = b1 * m + (S(1) - b1) * g;
      v.array() = b2 * v.array() + (S(1) - b2) * g.array().square();
      p.array() -=
          a * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
    }
  }

 private:
  OptimConfig cfg_;
  model::Params<S> m_, v_;
  std::int64_t t_ = 0;
};

// One training example; sequences are token ids. tgt ends with eos and does
// not start with bos (the loop adds it to the decoder input).
struct Example {
  std::vector<int> src;
  std::vector<int> tgt;
};

enum class StageKind { pretrain, finetune };

inline std::string stage_kind_name(StageKind k) {
  return k == StageKind::pretrain ? "pretrain" : "finetune";
}
inline StageKind stage_kind_from_name(const std::string& s) {
  if (s == "pretrain") return StageKind::pretrain;
  if (s == "finetune") return StageKind::finetune;
  throw std::runtime_error("unknown stage kind: " + s);
}

// A stage trains on one dataset for a fixed number of steps. Fine-tuning
// stages continue from the incoming parameters; whether the optimizer state
// and schedule restart is controlled per stage.
struct StageConfig {
  std::string name = "train";
  StageKind kind = StageKind::pretrain;
  int steps = 0;
  int batch_size = 8;
  double dropout = 0.0;
  std::uint64_t seed = 1;
  bool reset_optimizer = true;
  OptimConfig optim;

  nlohmann::json to_json() const {
    return nlohmann::json{{"name", name},
                          {"kind", stage_kind_name(kind)},
                          {"steps", steps},
                          {"batch_size", batch_size},
                          {"dropout", dropout},
                          {"seed", seed},
                          {"reset_optimizer", reset_optimizer},
                          {"optim", optim.to_json()}};
  }
  static StageConfig from_json(const nlohmann::json& j) {
    StageConfig c;
    c.name = j.value("name", c.name);
    c.kind = stage_kind_from_name(j.value("kind", "pretrain"));
    c.steps = j.value("steps", 0);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.dropout = j.value("dropout", 0.0);
    c.seed = j.value("seed", std::uint64_t{1});
    c.reset_optimizer = j.value("reset_optimizer", true);
    if (j.contains("optim")) c.optim = OptimConfig::from_json(j.at("optim"));
    return c;
  }
};

// Called once per step with {"stage","step","loss","lr","tokens"}.
using MetricsHook = std::function<void(const nlohmann::json&)>;

// Cycles through a shuffled epoch ordering, reshuffling at each wrap, so runs
// are deterministic in (data, seed).
class BatchCursor {
 public:
  BatchCursor(std::size_t n, std::uint64_t seed)
      : rng_(mix_seed(seed, 0x62617463ull)), order_(n) {
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  std::size_t next() {
    if (at_ == order_.size()) {
      rng_.shuffle(order_);
      at_ = 0;
    }
    return order_[at_++];
  }

 private:
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t at_ = 0;
};

// Runs one stage of training. Gradients are accumulated per sequence in batch
// order and normalized by the total reference-token count of the batch, so
// the result does not depend on how work might be split up. Throws
// DivergedLoss when the batch loss stops being finite.
template <class S>
void train_stage(model::Params<S>& params, const model::ModelConfig& cfg,
                 const std::vector<Example>& data, const StageConfig& stage,
                 Adam<S>& opt, const MetricsHook& hook = nullptr) {
  if (stage.steps <= 0) return;
  if (data.empty()) throw std::runtime_error("no training examples");
  for (const auto& ex : data)
    if (ex.src.empty() || ex.tgt.empty())
      throw std::runtime_error("empty example in training data");

  BatchCursor cursor(data.size(), stage.seed);
  model::DropoutCtx drop;
  drop.rate = stage.dropout;

  for (int step = 1; step <= stage.steps; ++step) {
    model::Params<S> grads = model::zeros_like(params);
    double loss_sum = 0;
    std::size_t token_sum = 0;
    const std::uint64_t step_key =
        mix_seed(mix_seed(stage.seed, 0x64726f70ull), static_cast<std::uint64_t>(step));

    for (int b = 0; b < stage.batch_size; ++b) {
      const Example& ex = data[cursor.next()];
      std::vector<int> input(ex.tgt.size());
      input[0] = cfg.bos_id;
      for (std::size_t i = 0; i + 1 < ex.tgt.size(); ++i)
        input[i + 1] = ex.tgt[i];

      drop.reset(mix_seed(step_key, static_cast<std::uint64_t>(b)));
      model::Cache<S> cache;
      Mat<S> logits =
          model::forward(params, cfg, std::span<const int>(ex.src),
                         std::span<const int>(input), nullptr, &cache,
                         drop.active() ? &drop : nullptr);
      Mat<S> dlogits;
      const S l = model::loss(logits, std::span<const int>(ex.tgt),
                              stage.optim.label_smoothing, &dlogits,
                              /*mean=*/false);
      loss_sum += static_cast<double>(l);
      token_sum += ex.tgt.size();
      model::backward(params, cfg, cache, dlogits, grads);
    }

    const double mean_loss = loss_sum / static_cast<double>(token_sum);
    if (!std::isfinite(mean_loss))
      throw DivergedLoss(opt.step_count() + 1, mean_loss);
    const S inv_tokens = S(1) / static_cast<S>(token_sum);
    grads.for_each_tensor(
        [&](const std::string&, Mat<S>& g) { g *= inv_tokens; });

    const double lr = lr_at(stage.optim, opt.step_count() + 1);
    opt.step(params, grads, lr);

    if (hook)
      hook(nlohmann::json{{"stage", stage.name},
                          {"step", step},
                          {"loss", mean_loss},
                          {"lr", lr},
                          {"tokens", token_sum}});
  }
}

}  // namespace loresmt::train
