// omnigf command line: synthetic data generation, training, evaluation and
// single-image prediction.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime/numeric error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "omnigf/omnigf.hpp"

namespace fs = std::filesystem;
using namespace omnigf;

namespace {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw DataError(std::string(what) + " not found: " + path);
}

EvalTasks parse_tasks(const std::string& spec) {
  EvalTasks t;
  t.gaze = false;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "gaze") t.gaze = true;
    else if (item == "semantic") t.semantic = true;
    else if (item == "social") t.social = true;
    else if (item == "all") t.gaze = t.semantic = t.social = true;
    else throw DataError("unknown task '" + item + "' (expected gaze|semantic|social|all)");
  }
  return t;
}

// Blend the person's heatmap into the scene in red and mark the predicted
// point; ground truth, when present, is drawn in yellow.
Raster render_overlay(const Scene& scene, const Tensor<float>& heatmap, Point pred,
                      const std::optional<Point>& gt) {
  Raster out = scene.image;
  const int h = out.h, w = out.w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int hr = std::min(heatmap.dim(0) - 1, y * heatmap.dim(0) / h);
      const int hc = std::min(heatmap.dim(1) - 1, x * heatmap.dim(1) / w);
      const float a = 0.5f * heatmap.at(hr, hc);
      float* p = out.px(y, x);
      p[0] = p[0] * (1 - a) + a;  // red channel up
      p[1] *= (1 - a);
      p[2] *= (1 - a);
    }
  auto mark = [&](Point pt, float r, float g, float b) {
    const int cy = std::clamp(static_cast<int>(pt.y * h), 0, h - 1);
    const int cx = std::clamp(static_cast<int>(pt.x * w), 0, w - 1);
    for (int d = -2; d <= 2; ++d) {
      if (cy + d >= 0 && cy + d < h) out.set(cy + d, cx, r, g, b);
      if (cx + d >= 0 && cx + d < w) out.set(cy, cx + d, r, g, b);
    }
  };
  if (gt) mark(*gt, 1.f, 1.f, 0.f);
  mark(pred, 1.f, 0.f, 0.f);
  return out;
}

int cmd_synth(std::uint64_t seed, int count, const std::string& out_dir, int side, int pmin,
              int pmax, double unknown_prob) {
  const fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw DataError("cannot create output directory: " + out_dir);
  SynthConfig cfg;
  cfg.side = side;
  cfg.persons_min = pmin;
  cfg.persons_max = pmax;
  cfg.unknown_prob = unknown_prob;
  std::vector<Scene> scenes;
  for (int i = 0; i < count; ++i)
    scenes.push_back(generate_synthetic_scene(seed + static_cast<std::uint64_t>(i), cfg));
  save_canonical(scenes, (dir / "scenes.jsonl").string(), /*inline_images=*/false);
  std::cout << "wrote " << count << " scenes to " << (dir / "scenes.jsonl").string() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path) {
  require_file(config_path, "config file");
  TrainConfig cfg = load_train_config(config_path);
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  Trainer<float> trainer(cfg);
  if (trainer.last_load_report()) {
    const auto& r = *trainer.last_load_report();
    std::cout << "loaded " << r.loaded.size() << " tensors";
    if (!r.missing.empty()) {
      std::cout << "; missing:";
      for (const auto& m : r.missing) std::cout << " " << m;
    }
    if (!r.unexpected.empty()) {
      std::cout << "; unexpected:";
      for (const auto& u : r.unexpected) std::cout << " " << u;
    }
    std::cout << "\n";
  }
  std::ofstream log((fs::path(cfg.out_dir) / "train_log.jsonl").string());
  trainer.train(&log);
  trainer.save(trainer.default_ckpt_path());
  std::cout << "trained " << trainer.step() << " steps; checkpoint at "
            << trainer.default_ckpt_path() << "\n";
  if (trainer.nonfinite_incidents() > 0)
    std::cout << "warning: " << trainer.nonfinite_incidents() << " non-finite steps skipped\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& tasks,
             const std::string& out_dir, int max_new_tokens) {
  require_file(ckpt_path, "checkpoint");
  require_file(data_path, "data file");
  const EvalTasks et = parse_tasks(tasks);
  auto file = read_checkpoint<float>(ckpt_path);
  ModelBundle<float> model(file.config);
  // Install trained tensors.
  for (auto& e : model.registry().entries()) {
    if (e.group == ParamGroup::Base) continue;
    auto it = file.tensors.find(e.name);
    if (it != file.tensors.end() && it->second.shape == e.var->value.shape)
      e.var->value = it->second;
  }
  auto scenes = load_canonical(data_path);
  for (auto& s : scenes) s.validate(true);

  PredictOptions popt;
  popt.task_mode =
      file.meta.task_mode == "localize" ? TaskMode::Localize : TaskMode::LocalizeSemantic;
  popt.max_new_tokens = max_new_tokens;
  std::vector<ScenePrediction> preds;
  for (size_t i = 0; i < scenes.size(); ++i)
    preds.push_back(predict_scene(model, scenes[i], popt, std::to_string(i)));

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw DataError("cannot create output directory: " + out_dir);
  save_predictions(preds, (fs::path(out_dir) / "predictions.jsonl").string());
  CharNgramEmbedder embedder;
  const auto metrics = compute_metrics(preds, scenes, et, embedder);
  std::ofstream mf((fs::path(out_dir) / "metrics.json").string());
  mf << metrics.dump(2) << "\n";
  std::cout << metrics.dump(2) << "\n";
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& image_path,
                const std::vector<std::string>& head_specs, bool semantic,
                const std::string& out_path, const std::string& visualize_out,
                int max_new_tokens) {
  require_file(ckpt_path, "checkpoint");
  require_file(image_path, "image");
  if (head_specs.empty()) throw DataError("at least one --heads box is required");

  auto file = read_checkpoint<float>(ckpt_path);
  ModelBundle<float> model(file.config);
  for (auto& e : model.registry().entries()) {
    if (e.group == ParamGroup::Base) continue;
    auto it = file.tensors.find(e.name);
    if (it != file.tensors.end() && it->second.shape == e.var->value.shape)
      e.var->value = it->second;
  }

  Scene scene;
  scene.image = read_ppm(image_path);
  scene.width = scene.image.w;
  scene.height = scene.image.h;
  scene.image_ref = image_path;
  for (const auto& spec : head_specs) {
    std::stringstream ss(spec);
    std::string tok;
    std::vector<double> vals;
    while (std::getline(ss, tok, ',')) vals.push_back(std::stod(tok));
    if (vals.size() != 4) throw DataError("head box must be x1,y1,x2,y2 (got '" + spec + "')");
    PersonAnnotation p;
    p.head_box = {vals[0], vals[1], vals[2], vals[3]};
    p.gaze_status = GazeStatus::Unknown;
    const Box cb = p.head_box.clamped(scene.width, scene.height);
    if (cb.x1 != p.head_box.x1 || cb.y1 != p.head_box.y1 || cb.x2 != p.head_box.x2 ||
        cb.y2 != p.head_box.y2)
      std::cerr << "warning: head box '" << spec << "' clamped to image bounds\n";
    if (!cb.valid()) throw DataError("head box lies fully outside the image: " + spec);
    scene.persons.push_back(p);
  }
  scene.validate(true);

  PredictOptions popt;
  popt.task_mode = semantic ? TaskMode::LocalizeSemantic : TaskMode::Localize;
  popt.max_new_tokens = max_new_tokens;
  auto pred = predict_scene(model, scene, popt, image_path);

  std::vector<ScenePrediction> preds{pred};
  save_predictions(preds, out_path);
  std::cout << prediction_to_json(pred).dump(2) << "\n";

  if (!visualize_out.empty()) {
    std::error_code ec;
    fs::create_directories(visualize_out, ec);
    if (!fs::is_directory(visualize_out))
      throw DataError("cannot create visualization directory: " + visualize_out);
    // Re-decode the heatmaps for the overlays.
    const PromptPlan plan = build_prompt(scene, popt.task_mode);
    auto seq = model.backbone.embed(scene.image, plan.token_ids);
    auto embs = model.head_encoder.encode_all(scene, file.config.head_side);
    seq = inject(seq, plan, embs->value);
    auto gen = model.backbone.generate(seq, popt.max_new_tokens);
    auto hidden = make_var(gen.hidden);
    std::vector<int> anchors(scene.persons.size(), 0);
    std::vector<bool> valid(scene.persons.size(), false);
    const auto records = parse_output(Tokenizer::decode_until_eos(gen.generated));
    for (size_t k = 0; k < scene.persons.size(); ++k)
      for (const auto& r : records)
        if (r.person_index == static_cast<int>(k) && r.valid) {
          const int row = seq.length() + r.anchor_index;
          if (row < gen.hidden.dim(0)) {
            anchors[k] = row;
            valid[k] = true;
          }
          break;
        }
    auto ext = model.heads.extract_tokens(hidden, seq.vision_count, anchors, valid);
    for (size_t k = 0; k < scene.persons.size(); ++k) {
      auto hm = model.heads.decode_heatmap(ext.vision, slice_rows(ext.person_tokens,
                                                                  static_cast<int>(k),
                                                                  static_cast<int>(k) + 1));
      const Point pt = heatmap_to_point(hm->value);
      const Raster overlay = render_overlay(scene, hm->value, pt, std::nullopt);
      write_ppm((fs::path(visualize_out) / ("person" + std::to_string(k) + ".ppm")).string(),
                overlay);
    }
    std::cout << "overlays written to " << visualize_out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"omnigf: multi-person gaze reasoning"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate synthetic scenes");
  std::uint64_t seed = 0;
  int count = 64, side = 64, pmin = 2, pmax = 2;
  double unknown_prob = 0.0;
  std::string out_dir = "synth_out";
  synth->add_option("--seed", seed, "base seed");
  synth->add_option("--count", count, "number of scenes");
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--side", side, "image side in pixels");
  synth->add_option("--persons-min", pmin);
  synth->add_option("--persons-max", pmax);
  synth->add_option("--unknown-prob", unknown_prob, "fraction of unannotated persons");

  auto* train = app.add_subcommand("train", "train from a key=value config file");
  std::string config_path;
  train->add_option("--config", config_path, "config file")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on canonical data");
  std::string ckpt, data, tasks = "all", eval_out = "eval_out";
  int max_new = 256;
  eval->add_option("--checkpoint", ckpt)->required();
  eval->add_option("--data", data, "canonical JSONL")->required();
  eval->add_option("--tasks", tasks, "comma list: gaze,semantic,social or all");
  eval->add_option("--out", eval_out, "output directory");
  eval->add_option("--max-new-tokens", max_new);

  auto* predict = app.add_subcommand("predict", "predict gaze for one image");
  std::string p_ckpt, p_image, p_out = "prediction.jsonl", p_vis;
  std::vector<std::string> p_heads;
  bool p_semantic = false;
  predict->add_option("--checkpoint", p_ckpt)->required();
  predict->add_option("--image", p_image, "PPM image")->required();
  predict->add_option("--heads", p_heads, "head box x1,y1,x2,y2 (repeatable)")->required();
  predict->add_flag("--semantic", p_semantic, "also predict gaze target categories");
  predict->add_option("--out", p_out, "prediction JSONL path");
  predict->add_option("--visualize-out", p_vis, "directory for overlay images");
  predict->add_option("--max-new-tokens", max_new);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(seed, count, out_dir, side, pmin, pmax, unknown_prob);
    if (train->parsed()) return cmd_train(config_path);
    if (eval->parsed()) return cmd_eval(ckpt, data, tasks, eval_out, max_new);
    if (predict->parsed())
      return cmd_predict(p_ckpt, p_image, p_heads, p_semantic, p_out, p_vis, max_new);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::runtime_error& e) {
    // Library throws runtime_error for unreadable/malformed inputs.
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
