#pragma once

#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "omnigf/eval/metrics.hpp"
#include "omnigf/model/bundle.hpp"
#include "omnigf/train/objectives.hpp"

namespace omnigf {

// One scene's predictions in the shape of the prediction file schema.
struct PersonEval {
  std::optional<Point> point;  // peak of the decoded heatmap
  double inout_score = 0.5;    // sigmoid of the gaze-branch logit
  std::string status_text = "outside";
  std::optional<std::string> category;
  bool valid = true;
};

struct PairEval {
  int i = 0, j = 0;
  double lah = 0.5, laeo = 0.5, sa = 0.5;  // LAEO/SA symmetrized over both orders
};

struct ScenePrediction {
  std::string scene_id;
  std::vector<PersonEval> persons;
  std::vector<PairEval> pairs;
  bool truncated = false;
};

struct PredictOptions {
  TaskMode task_mode = TaskMode::LocalizeSemantic;
  bool enable_injection = true;
  int max_new_tokens = 256;
};

template <class T>
ScenePrediction predict_scene(const ModelBundle<T>& model, const Scene& scene,
                              const PredictOptions& opt, const std::string& scene_id) {
  const auto& cfg = model.config();
  const int n = static_cast<int>(scene.persons.size());
  ScenePrediction out;
  out.scene_id = scene_id;

  const PromptPlan plan = build_prompt(scene, opt.task_mode);
  EmbeddedSequence<T> seq = model.backbone.embed(scene.image, plan.token_ids);
  if (opt.enable_injection) {
    auto embs = model.head_encoder.encode_all(scene, cfg.head_side);
    seq = inject(seq, plan, embs->value);
  }
  const auto gen = model.backbone.generate(seq, opt.max_new_tokens);
  out.truncated = gen.truncated;
  const std::string text = Tokenizer::decode_until_eos(gen.generated);
  const auto records = parse_output(text);

  // Align generated records with prompted persons by header index.
  const int prompt_rows = seq.length();
  std::vector<int> anchors(static_cast<size_t>(n), 0);
  std::vector<bool> valid(static_cast<size_t>(n), false);
  std::vector<PersonOutputRecord> aligned(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    for (const auto& r : records) {
      if (r.person_index != k) continue;
      aligned[static_cast<size_t>(k)] = r;
      const int row = prompt_rows + r.anchor_index;
      if (r.valid && row < gen.hidden.dim(0)) {
        anchors[static_cast<size_t>(k)] = row;
        valid[static_cast<size_t>(k)] = true;
      }
      break;
    }
    if (!valid[static_cast<size_t>(k)] && aligned[static_cast<size_t>(k)].person_index < 0) {
      aligned[static_cast<size_t>(k)].note = "no generated block";
      aligned[static_cast<size_t>(k)].valid = false;
    }
  }

  auto hidden = make_var(gen.hidden);
  const auto ext = model.heads.extract_tokens(hidden, seq.vision_count, anchors, valid);

  for (int k = 0; k < n; ++k) {
    PersonEval pe;
    pe.valid = valid[static_cast<size_t>(k)];
    const auto& rec = aligned[static_cast<size_t>(k)];
    pe.status_text = to_string(rec.status);
    if (rec.category) pe.category = rec.category;
    auto token = slice_rows(ext.person_tokens, k, k + 1);
    auto hm = model.heads.decode_heatmap(ext.vision, token);
    pe.point = heatmap_to_point(hm->value);
    out.persons.push_back(std::move(pe));
  }
  auto io_logits = model.heads.predict_inout(ext.person_tokens);
  for (int k = 0; k < n; ++k)
    out.persons[static_cast<size_t>(k)].inout_score =
        kern::sigmoid_scalar(static_cast<double>(io_logits->value.at(k, 0)));

  if (n >= 2) {
    std::vector<int> is, js;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) {
          is.push_back(i);
          js.push_back(j);
        }
    auto soc = model.heads.predict_social(gather_rows(ext.person_tokens, is),
                                          gather_rows(ext.person_tokens, js));
    auto sig = [&](size_t p, int c) {
      return kern::sigmoid_scalar(static_cast<double>(soc->value.at(static_cast<int>(p), c)));
    };
    auto find_pair = [&](int a, int b) -> size_t {
      for (size_t p = 0; p < is.size(); ++p)
        if (is[p] == a && js[p] == b) return p;
      throw std::logic_error("pair lookup");
    };
    for (size_t p = 0; p < is.size(); ++p) {
      PairEval pr;
      pr.i = is[p];
      pr.j = js[p];
      const size_t q = find_pair(js[p], is[p]);
      pr.lah = sig(p, 0);
      // Symmetric relations report the mean of both orders' sigmoids.
      pr.laeo = 0.5 * (sig(p, 1) + sig(q, 1));
      pr.sa = 0.5 * (sig(p, 2) + sig(q, 2));
      out.pairs.push_back(pr);
    }
  }
  return out;
}

// ---- prediction file (JSONL) ----

inline nlohmann::json prediction_to_json(const ScenePrediction& sp) {
  nlohmann::json j;
  j["scene_id"] = sp.scene_id;
  nlohmann::json persons = nlohmann::json::array();
  for (const auto& p : sp.persons) {
    nlohmann::json jp;
    if (p.point)
      jp["point"] = {p.point->x, p.point->y};
    else
      jp["point"] = nullptr;
    jp["inout_score"] = p.inout_score;
    jp["status_text"] = p.status_text;
    if (p.category)
      jp["category"] = *p.category;
    else
      jp["category"] = nullptr;
    jp["valid"] = p.valid;
    persons.push_back(jp);
  }
  j["persons"] = persons;
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& pr : sp.pairs)
    pairs.push_back(
        {{"i", pr.i}, {"j", pr.j}, {"lah", pr.lah}, {"laeo", pr.laeo}, {"sa", pr.sa}});
  j["pairs"] = pairs;
  return j;
}

// Schema check used before metric consumption; throws on violations.
inline void validate_prediction_json(const nlohmann::json& j) {
  if (!j.contains("scene_id") || !j.contains("persons") || !j["persons"].is_array())
    throw std::runtime_error("prediction: missing scene_id/persons");
  for (const auto& p : j["persons"]) {
    for (const char* key : {"inout_score", "status_text", "valid"})
      if (!p.contains(key)) throw std::runtime_error(std::string("prediction: missing ") + key);
    if (!std::isfinite(p["inout_score"].get<double>()))
      throw std::runtime_error("prediction: non-finite inout score");
    if (p.contains("point") && !p["point"].is_null()) {
      if (p["point"].size() != 2 || !std::isfinite(p["point"][0].get<double>()) ||
          !std::isfinite(p["point"][1].get<double>()))
        throw std::runtime_error("prediction: bad point");
    }
  }
  if (j.contains("pairs"))
    for (const auto& pr : j["pairs"])
      for (const char* key : {"lah", "laeo", "sa"}) {
        if (!pr.contains(key) || !std::isfinite(pr[key].get<double>()))
          throw std::runtime_error(std::string("prediction: bad pair score ") + key);
      }
}

inline void save_predictions(const std::vector<ScenePrediction>& preds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  for (const auto& sp : preds) {
    auto j = prediction_to_json(sp);
    validate_prediction_json(j);
    f << j.dump() << "\n";
  }
}

// ---- metric aggregation ----

struct EvalTasks {
  bool gaze = true;
  bool semantic = false;
  bool social = false;
};

inline constexpr double kInvalidDistance = 1.4142135623730951;  // sqrt(2)

// Aggregates predictions against ground truth. Persons whose ground-truth
// status is unknown are excluded everywhere, mirroring the training-time
// exclusion. Invalid predictions penalize: distance sqrt(2), AP score -inf.
inline nlohmann::json compute_metrics(const std::vector<ScenePrediction>& preds,
                                      const std::vector<Scene>& scenes, const EvalTasks& tasks,
                                      const TextEmbedder& embedder) {
  if (preds.size() != scenes.size())
    throw std::invalid_argument("compute_metrics: prediction/scene count mismatch");
  nlohmann::json out;

  if (tasks.gaze) {
    std::vector<double> avg_d, min_d, io_scores;
    std::vector<int> io_labels;
    for (size_t s = 0; s < scenes.size(); ++s) {
      const auto& scene = scenes[s];
      const auto& pred = preds[s];
      for (size_t k = 0; k < scene.persons.size(); ++k) {
        const auto& gt = scene.persons[k];
        const auto& pe = pred.persons.at(k);
        if (gt.gaze_status == GazeStatus::Unknown) continue;
        io_labels.push_back(gt.gaze_status == GazeStatus::Inside ? 1 : 0);
        io_scores.push_back(pe.valid ? pe.inout_score
                                     : -std::numeric_limits<double>::infinity());
        if (gt.gaze_status == GazeStatus::Inside) {
          if (pe.valid && pe.point) {
            const auto d = l2_distances(*pe.point, gt.targets);
            avg_d.push_back(d.avg);
            min_d.push_back(d.min);
          } else {
            avg_d.push_back(kInvalidDistance);
            min_d.push_back(kInvalidDistance);
          }
        }
      }
    }
    auto mean = [](const std::vector<double>& v) {
      double s = 0;
      for (double x : v) s += x;
      return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    if (!avg_d.empty()) {
      out["avg_dist"] = mean(avg_d);
      out["min_dist"] = mean(min_d);
      out["dist_count"] = avg_d.size();
    }
    if (auto ap = average_precision(io_scores, io_labels)) {
      out["inout_ap"] = *ap;
      out["inout_count"] = io_scores.size();
    }
  }

  if (tasks.semantic) {
    // Test-class vocabulary: every ground-truth category in the eval set.
    std::set<std::string> vocab_set;
    for (const auto& scene : scenes)
      for (const auto& p : scene.persons)
        if (p.category) vocab_set.insert(*p.category);
    const std::vector<std::string> vocab(vocab_set.begin(), vocab_set.end());
    int acc = 0, multi = 0, total = 0, ga_hit = 0, ga_total = 0;
    for (size_t s = 0; s < scenes.size(); ++s) {
      const auto& scene = scenes[s];
      for (size_t k = 0; k < scene.persons.size(); ++k) {
        const auto& gt = scene.persons[k];
        const auto& pe = preds[s].persons.at(k);
        if (gt.gaze_status == GazeStatus::Inside && gt.category && !vocab.empty()) {
          ++total;
          const std::string pred_text = (pe.valid && pe.category) ? *pe.category : "";
          const std::string match = semantic_match(pred_text, vocab, embedder);
          if (match == *gt.category) ++acc;
          // Single-label data: the ground-truth label set is {category}.
          if (!match.empty() && match == *gt.category) ++multi;
        }
        if (gt.gaze_status == GazeStatus::Inside && k < scene.object_boxes.size()) {
          ++ga_total;
          if (pe.valid && pe.point) ga_hit += gaze_acc(*pe.point, scene.object_boxes[k]);
        }
      }
    }
    if (total > 0) {
      out["acc1"] = static_cast<double>(acc) / total;
      out["multiacc1"] = static_cast<double>(multi) / total;
      out["semantic_count"] = total;
    }
    if (ga_total > 0) {
      out["gaze_acc"] = static_cast<double>(ga_hit) / ga_total;
      out["gaze_acc_count"] = ga_total;
    }
  }

  if (tasks.social) {
    std::vector<double> lah_s, laeo_s, sa_s;
    std::vector<int> lah_l, laeo_l, sa_l;
    for (size_t s = 0; s < scenes.size(); ++s) {
      const auto& scene = scenes[s];
      const auto& pred = preds[s];
      auto find_pred = [&](int i, int j) -> const PairEval* {
        for (const auto& pr : pred.pairs)
          if (pr.i == i && pr.j == j) return &pr;
        return nullptr;
      };
      for (const auto& [key, lab] : scene.pair_labels) {
        const PairEval* pr = find_pred(key.first, key.second);
        if (!pr) continue;
        lah_s.push_back(pr->lah);
        lah_l.push_back(lab.lah ? 1 : 0);
        if (key.first < key.second) {  // symmetric relations use unordered pairs
          laeo_s.push_back(pr->laeo);
          laeo_l.push_back(lab.laeo ? 1 : 0);
          sa_s.push_back(pr->sa);
          sa_l.push_back(lab.sa ? 1 : 0);
        }
      }
    }
    if (!lah_s.empty()) {
      out["lah_f1"] = f1_at_threshold(lah_s, lah_l, 0.5);
      out["laeo_f1"] = f1_at_threshold(laeo_s, laeo_l, 0.5);
      if (auto ap = average_precision(sa_s, sa_l)) out["sa_ap"] = *ap;
      out["social_pair_count"] = lah_s.size();
    }
  }
  return out;
}

}  // namespace omnigf
