#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "omnigf/eval/evaluator.hpp"
#include "omnigf/model/bundle.hpp"
#include "omnigf/scene/canonical_io.hpp"
#include "omnigf/scene/synthetic.hpp"
#include "omnigf/train/checkpoint.hpp"
#include "omnigf/train/objectives.hpp"
#include "omnigf/train/optimizer.hpp"

namespace omnigf {

struct TrainConfig {
  BackboneConfig backbone;
  TaskMode task_mode = TaskMode::LocalizeSemantic;
  int batch_size = 8;
  int accum_steps = 2;
  double lr_adapter = 1e-4;   // LoRA adapter group
  double lr_head = 2.5e-4;    // gaze prediction heads
  double weight_decay = 0.0;
  int total_steps = 1000;
  std::uint64_t seed = 0;
  LossWeights weights;
  double heatmap_sigma = 3.0;

  // Ablation arms: the language branch toggle covers both the LM loss and
  // adapter training; the injection toggle covers placeholder overwriting.
  bool train_language_branch = true;
  bool enable_injection = true;

  // data: either a canonical JSONL path or the synthetic generator
  std::string data_path;
  SynthConfig synth;
  int synth_count = 64;
  std::uint64_t synth_seed = 0;

  std::string out_dir = ".";
  std::string finetune_from;  // load matching tensors, reset step counter
  std::string resume_from;    // load tensors + optimizer state + counters
  int checkpoint_every = 0;   // 0: only at the end
  int max_new_tokens = 256;   // generation budget at evaluation time
};

// Per-scene loss pieces, combined across a batch with exact normalization.
template <class T>
struct LossParts {
  Var<T> lm_sum;      // mask-weighted CE sum (null when language branch off)
  double lm_weight = 0;
  std::vector<Var<T>> hm_means;  // per inside person: mean cell MSE
  Var<T> io_sum;      // BCE sum over annotated persons
  int io_count = 0;
  Var<T> soc_sum;     // BCE sum over labeled ordered pairs x 3 categories
  int soc_count = 0;  // number of summed logits (3 * pairs)
};

template <class T>
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg)
      : cfg_(cfg),
        model_(cfg.backbone),
        opt_(model_.registry().group(ParamGroup::Adapter), model_.registry().group(ParamGroup::Head),
             typename AdamW<T>::Hyper{0.9, 0.999, 1e-8, cfg.weight_decay}),
        data_rng_(Rng(cfg.seed).split(77)) {
    load_data();
    if (!cfg_.finetune_from.empty()) {
      last_load_report_ = load_into_model(cfg_.finetune_from, /*with_optimizer=*/false);
    } else if (!cfg_.resume_from.empty()) {
      last_load_report_ = load_into_model(cfg_.resume_from, /*with_optimizer=*/true);
    }
  }

  const TrainConfig& config() const { return cfg_; }
  ModelBundle<T>& model() { return model_; }
  const std::vector<Scene>& data() const { return data_; }
  int step() const { return step_; }
  int nonfinite_incidents() const { return nonfinite_incidents_; }
  const std::optional<LoadReport>& last_load_report() const { return last_load_report_; }

  // ---- one scene through the full pipeline (teacher-forced) ----

  LossParts<T> scene_forward(const Scene& scene) const {
    const auto& bcfg = cfg_.backbone;
    LossParts<T> parts;

    const PromptPlan plan = build_prompt(scene, cfg_.task_mode);
    const TargetEncoding enc = serialize_targets(scene, cfg_.task_mode);
    std::vector<int> full_ids = plan.token_ids;
    full_ids.insert(full_ids.end(), enc.token_ids.begin(), enc.token_ids.end());

    const auto seq = model_.backbone.embed(scene.image, full_ids);
    Var<T> x0 = make_var(seq.embeddings);
    if (cfg_.enable_injection && !seq.placeholder_abs.empty()) {
      auto embs = model_.head_encoder.encode_all(scene, bcfg.head_side);
      x0 = overwrite_rows(x0, seq.placeholder_abs, embs);
    }

    const int prompt_len = static_cast<int>(plan.token_ids.size());
    const int sup_lo = seq.text_offset + prompt_len - 1;
    const int sup_len = static_cast<int>(enc.token_ids.size()) + 1;
    const auto tf = model_.backbone.forward_teacher_forced(x0, sup_lo, sup_len);

    if (cfg_.train_language_branch) {
      std::vector<int> targets = enc.token_ids;
      targets.push_back(Tokenizer::kEosId);
      const auto mask = supervision_weights<T>(enc);
      parts.lm_sum = masked_ce_sum(tf.logits, targets, mask);
      for (T w : mask) parts.lm_weight += w;
    }

    // Anchors come from the teacher-forced pass at training time.
    std::vector<int> anchors;
    for (int off : enc.anchor_offsets) anchors.push_back(seq.text_offset + prompt_len + off);
    const auto ext = model_.heads.extract_tokens(
        tf.hidden, seq.vision_count, anchors, std::vector<bool>(anchors.size(), true));

    const int n = static_cast<int>(scene.persons.size());
    const int hm_side = bcfg.heatmap_side();
    std::vector<int> known_rows;
    std::vector<T> io_labels;
    for (int i = 0; i < n; ++i) {
      const auto& p = scene.persons[static_cast<size_t>(i)];
      if (p.gaze_status == GazeStatus::Inside) {
        auto token = slice_rows(ext.person_tokens, i, i + 1);
        auto hm = model_.heads.decode_heatmap(ext.vision, token);
        const auto gt = render_gaussian<T>(p.targets[0], hm_side, hm_side, cfg_.heatmap_sigma);
        parts.hm_means.push_back(scale(mse_sum(hm, gt), T(1) / static_cast<T>(gt.size())));
      }
      if (p.gaze_status != GazeStatus::Unknown) {
        known_rows.push_back(i);
        io_labels.push_back(p.gaze_status == GazeStatus::Inside ? T(1) : T(0));
      }
    }
    if (!known_rows.empty()) {
      auto logits = model_.heads.predict_inout(gather_rows(ext.person_tokens, known_rows));
      Tensor<T> labels({static_cast<int>(io_labels.size()), 1});
      for (size_t i = 0; i < io_labels.size(); ++i) labels.at(static_cast<int>(i), 0) = io_labels[i];
      parts.io_sum = bce_logits_sum(logits, labels);
      parts.io_count = static_cast<int>(io_labels.size());
    }

    std::vector<int> pi, pj;
    std::vector<T> soc_labels;
    for (const auto& [key, lab] : scene.pair_labels) {
      const auto& a = scene.persons[static_cast<size_t>(key.first)];
      const auto& b = scene.persons[static_cast<size_t>(key.second)];
      if (a.gaze_status == GazeStatus::Unknown || b.gaze_status == GazeStatus::Unknown) continue;
      pi.push_back(key.first);
      pj.push_back(key.second);
      soc_labels.push_back(lab.lah ? T(1) : T(0));
      soc_labels.push_back(lab.laeo ? T(1) : T(0));
      soc_labels.push_back(lab.sa ? T(1) : T(0));
    }
    if (!pi.empty()) {
      auto logits = model_.heads.predict_social(gather_rows(ext.person_tokens, pi),
                                                gather_rows(ext.person_tokens, pj));
      Tensor<T> labels({static_cast<int>(pi.size()), 3});
      std::copy(soc_labels.begin(), soc_labels.end(), labels.ptr());
      parts.soc_sum = bce_logits_sum(logits, labels);
      parts.soc_count = static_cast<int>(soc_labels.size());
    }
    return parts;
  }

  // Combine per-scene parts into the four batch losses plus the weighted total.
  struct BatchLoss {
    Var<T> lm, hm, inout, soc, total;
    LossReport report;
  };

  BatchLoss combine(const std::vector<LossParts<T>>& parts) const {
    BatchLoss out;
    std::vector<Var<T>> lm_terms, hm_terms, io_terms, soc_terms;
    double lm_w = 0;
    int hm_n = 0, io_n = 0, soc_n = 0;
    for (const auto& p : parts) {
      if (p.lm_sum) {
        lm_terms.push_back(p.lm_sum);
        lm_w += p.lm_weight;
      }
      for (const auto& h : p.hm_means) hm_terms.push_back(h);
      hm_n += static_cast<int>(p.hm_means.size());
      if (p.io_sum) {
        io_terms.push_back(p.io_sum);
        io_n += p.io_count;
      }
      if (p.soc_sum) {
        soc_terms.push_back(p.soc_sum);
        soc_n += p.soc_count;
      }
    }
    auto combine_mean = [](std::vector<Var<T>>& terms, double denom) -> Var<T> {
      if (terms.empty() || denom == 0) return constant_scalar(T(0));
      auto s = weighted_sum(terms, std::vector<T>(terms.size(), T(1)));
      return scale(s, T(1.0 / denom));
    };
    out.lm = cfg_.train_language_branch && lm_w > 0 ? combine_mean(lm_terms, lm_w)
                                                    : constant_scalar(T(0));
    out.hm = combine_mean(hm_terms, hm_n);
    out.inout = combine_mean(io_terms, io_n);
    out.soc = combine_mean(soc_terms, soc_n);
    LossWeights w = cfg_.weights;
    if (!cfg_.train_language_branch) w.lm = 0.0;
    out.total = total_loss(out.lm, out.hm, out.inout, out.soc, w);
    out.report.l_lm = static_cast<double>(out.lm->value.item());
    out.report.l_hm = static_cast<double>(out.hm->value.item());
    out.report.l_inout = static_cast<double>(out.inout->value.item());
    out.report.l_soc = static_cast<double>(out.soc->value.item());
    out.report.l_total = static_cast<double>(out.total->value.item());
    out.report.lm_tokens = static_cast<std::int64_t>(lm_w);
    out.report.hm_persons = hm_n;
    out.report.inout_persons = io_n;
    out.report.soc_pairs = soc_n / 3;
    return out;
  }

  // Forward+backward over one micro-batch; gradients accumulate. Returns the
  // (unscaled) loss report, or nullopt when the loss was non-finite and the
  // micro-batch was discarded.
  std::optional<LossReport> micro_step(const std::vector<const Scene*>& batch) {
    std::vector<LossParts<T>> parts;
    for (const Scene* s : batch) parts.push_back(scene_forward(*s));
    auto bl = combine(parts);
    if (!std::isfinite(bl.report.l_total)) return std::nullopt;
    // Scale so that accumulated gradients equal the mean over micro-batches.
    auto scaled = scale(bl.total, T(1.0 / cfg_.accum_steps));
    backward(scaled);
    return bl.report;
  }

  void apply_update() {
    const double lr_a = cosine_lr(step_, cfg_.total_steps, cfg_.lr_adapter);
    const double lr_h = cosine_lr(step_, cfg_.total_steps, cfg_.lr_head);
    if (cfg_.train_language_branch) {
      opt_.step(lr_a, lr_h);
    } else {
      // Spatial-only arm: heads train, the backbone adapters stay frozen.
      opt_.step(0.0, lr_h);
    }
    zero_all_grads();
    ++step_;
  }

  void zero_all_grads() {
    for (auto& e : model_.registry().entries())
      if (e.var->requires_grad) e.var->zero_grad();
  }

  // One full optimizer step: accum_steps micro-batches then an update.
  // A non-finite micro-loss aborts the whole step and rolls back (gradients
  // cleared, parameters untouched).
  std::optional<LossReport> train_step() {
    LossReport agg;
    int micros = 0;
    for (int a = 0; a < cfg_.accum_steps; ++a) {
      std::vector<const Scene*> batch;
      for (int b = 0; b < cfg_.batch_size; ++b)
        batch.push_back(&data_[static_cast<size_t>(
            data_rng_.uniform_int(0, static_cast<int>(data_.size()) - 1))]);
      auto rep = micro_step(batch);
      if (!rep) {
        zero_all_grads();
        ++nonfinite_incidents_;
        ++step_;  // the step is consumed, not retried
        return std::nullopt;
      }
      agg.l_lm += rep->l_lm;
      agg.l_hm += rep->l_hm;
      agg.l_inout += rep->l_inout;
      agg.l_soc += rep->l_soc;
      agg.l_total += rep->l_total;
      agg.lm_tokens += rep->lm_tokens;
      agg.hm_persons += rep->hm_persons;
      agg.inout_persons += rep->inout_persons;
      agg.soc_pairs += rep->soc_pairs;
      ++micros;
    }
    agg.l_lm /= micros;
    agg.l_hm /= micros;
    agg.l_inout /= micros;
    agg.l_soc /= micros;
    agg.l_total /= micros;
    apply_update();
    return agg;
  }

  // Full training loop; writes one JSONL line per step to `log` when given.
  void train(std::ostream* log = nullptr) {
    while (step_ < cfg_.total_steps) {
      const int this_step = step_;
      const double lr_a = cosine_lr(this_step, cfg_.total_steps, cfg_.lr_adapter);
      const double lr_h = cosine_lr(this_step, cfg_.total_steps, cfg_.lr_head);
      auto rep = train_step();
      if (log) {
        nlohmann::json j;
        j["step"] = this_step;
        if (rep) {
          j["l_lm"] = rep->l_lm;
          j["l_hm"] = rep->l_hm;
          j["l_inout"] = rep->l_inout;
          j["l_soc"] = rep->l_soc;
          j["l_total"] = rep->l_total;
        } else {
          j["incident"] = "non-finite loss, step aborted and state rolled back";
        }
        j["lr_adapter"] = lr_a;
        j["lr_head"] = lr_h;
        (*log) << j.dump() << "\n";
      }
      if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0)
        save(default_ckpt_path());
    }
  }

  // ---- checkpointing ----

  std::string default_ckpt_path() const {
    return (std::filesystem::path(cfg_.out_dir) / "checkpoint.ogf").string();
  }

  void save(const std::string& path) const {
    std::vector<NamedTensor<T>> tensors;
    for (const auto& e : model_.registry().entries())
      if (e.group != ParamGroup::Base) tensors.push_back({e.name, &e.var->value});
    for (const auto& s : opt_.slots()) {
      tensors.push_back({"opt.m." + s.entry.name, &s.m});
      tensors.push_back({"opt.v." + s.entry.name, &s.v});
    }
    CheckpointMeta meta;
    meta.step = step_;
    meta.opt_step = opt_.step_count();
    meta.task_mode = to_string(cfg_.task_mode);
    meta.data_rng_state = data_rng_.state();
    save_checkpoint(path, cfg_.backbone, tensors, meta);
  }

  LoadReport load_into_model(const std::string& path, bool with_optimizer) {
    auto file = read_checkpoint<T>(path);
    LoadReport report;
    for (auto& e : model_.registry().entries()) {
      if (e.group == ParamGroup::Base) continue;
      auto it = file.tensors.find(e.name);
      if (it == file.tensors.end()) {
        report.missing.push_back(e.name);
        continue;
      }
      if (it->second.shape != e.var->value.shape) {
        report.missing.push_back(e.name + " (shape mismatch)");
        continue;
      }
      e.var->value = it->second;
      report.loaded.push_back(e.name);
    }
    std::set<std::string> known;
    for (const auto& e : model_.registry().entries()) known.insert(e.name);
    for (const auto& [name, t] : file.tensors) {
      (void)t;
      if (name.rfind("opt.", 0) == 0) continue;
      if (!known.count(name)) report.unexpected.push_back(name);
    }
    if (with_optimizer) {
      for (auto& s : opt_.slots()) {
        auto im = file.tensors.find("opt.m." + s.entry.name);
        auto iv = file.tensors.find("opt.v." + s.entry.name);
        if (im != file.tensors.end() && im->second.shape == s.m.shape) s.m = im->second;
        if (iv != file.tensors.end() && iv->second.shape == s.v.shape) s.v = iv->second;
      }
      opt_.set_step_count(file.meta.opt_step);
      step_ = file.meta.step;
      data_rng_ = Rng(file.meta.data_rng_state);
    }
    return report;
  }

 private:
  void load_data() {
    if (!cfg_.data_path.empty()) {
      data_ = load_canonical(cfg_.data_path);
    } else {
      for (int i = 0; i < cfg_.synth_count; ++i)
        data_.push_back(generate_synthetic_scene(cfg_.synth_seed + static_cast<std::uint64_t>(i),
                                                 cfg_.synth));
    }
    if (data_.empty()) throw std::runtime_error("trainer: empty dataset");
    for (const auto& s : data_) s.validate(true);
  }

  TrainConfig cfg_;
  ModelBundle<T> model_;
  AdamW<T> opt_;
  Rng data_rng_;
  std::vector<Scene> data_;
  int step_ = 0;
  int nonfinite_incidents_ = 0;
  std::optional<LoadReport> last_load_report_;
};

// Desk-scale stand-in for full benchmark training: train on n fixed synthetic
// scenes, then evaluate on the same scenes.
struct HarnessResult {
  nlohmann::json metrics;
  double first_total = 0, last_total = 0;
  int steps_run = 0;
};

template <class T>
HarnessResult overfit_harness(TrainConfig cfg, int n_scenes, int budget_steps,
                              std::ostream* log = nullptr,
                              std::unique_ptr<Trainer<T>>* keep_trainer = nullptr) {
  cfg.synth_count = n_scenes;
  cfg.total_steps = budget_steps;
  auto trainer = std::make_unique<Trainer<T>>(cfg);
  HarnessResult res;
  bool first = true;
  while (trainer->step() < budget_steps) {
    const int s = trainer->step();
    auto rep = trainer->train_step();
    if (rep) {
      if (first) {
        res.first_total = rep->l_total;
        first = false;
      }
      res.last_total = rep->l_total;
      if (log) {
        nlohmann::json j{{"step", s}, {"l_total", rep->l_total}, {"l_lm", rep->l_lm},
                         {"l_hm", rep->l_hm}};
        (*log) << j.dump() << "\n";
      }
    }
  }
  res.steps_run = trainer->step();

  PredictOptions popt;
  popt.task_mode = cfg.task_mode;
  popt.enable_injection = cfg.enable_injection;
  popt.max_new_tokens = cfg.max_new_tokens;
  std::vector<ScenePrediction> preds;
  const auto& scenes = trainer->data();
  for (size_t i = 0; i < scenes.size(); ++i)
    preds.push_back(predict_scene(trainer->model(), scenes[i], popt, std::to_string(i)));
  EvalTasks tasks;
  tasks.gaze = true;
  tasks.semantic = cfg.task_mode == TaskMode::LocalizeSemantic;
  tasks.social = true;
  CharNgramEmbedder embedder;
  res.metrics = compute_metrics(preds, scenes, tasks, embedder);
  if (keep_trainer) *keep_trainer = std::move(trainer);
  return res;
}

}  // namespace omnigf
