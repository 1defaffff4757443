// SPDX-License-Identifier: Apache-2.0
#include "ocg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "ocg/kernels.hpp"

namespace ocg::pipeline {

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidConfig("learning_rate must be finite and >= 0");
  }
  if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
  if (max_steps < 0) throw InvalidConfig("max_steps must be >= 0");
  if (eval_every < 0) throw InvalidConfig("eval_every must be >= 0");
  if (sigma_drone && !(*sigma_drone > 0.0)) throw InvalidConfig("sigma_drone must be > 0");
  if (sigma_ground && !(*sigma_ground > 0.0)) throw InvalidConfig("sigma_ground must be > 0");
  if (lr_schedule != "constant" && lr_schedule != "cosine") {
    throw InvalidConfig("lr_schedule must be 'constant' or 'cosine', got '" + lr_schedule + "'");
  }
  if (device != "cpu") throw InvalidConfig("unsupported device '" + device + "' (only cpu)");
  model.validate();
}

detection::AnchorTable fit_manifest_anchors(const data::Manifest& manifest, const ModelConfig& model,
                                            uint64_t seed) {
  std::vector<Box> boxes;
  std::map<std::string, ImageSize> sizes;
  for (const auto& s : manifest.split(data::Split::kTrain)) {
    auto it = sizes.find(s.satellite_path);
    if (it == sizes.end()) {
      it = sizes.emplace(s.satellite_path, image::read(manifest.resolve(s.satellite_path)).size()).first;
    }
    boxes.push_back(data::scale_box(s.gt_box, it->second, model.satellite_size));
  }
  return detection::fit_anchors(boxes, seed, ModelConfig::kNumAnchors);
}

double scheduled_learning_rate(const TrainConfig& cfg, int64_t step, int64_t total_steps) {
  if (cfg.lr_schedule != "cosine" || total_steps <= 0) return cfg.learning_rate;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

TrainConfig default_fewshot_config() {
  TrainConfig c;
  c.batch_size = 6;
  c.epochs = 20;
  return c;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"epochs", c.epochs},
       {"seed", c.seed},
       {"max_steps", c.max_steps},
       {"mse_weight", c.mse_weight},
       {"weight_decay", c.weight_decay},
       {"checkpoint_dir", c.checkpoint_dir.generic_string()},
       {"device", c.device},
       {"deterministic", c.deterministic},
       {"eval_split", data::to_string(c.eval_split)},
       {"eval_every", c.eval_every},
       {"augment", c.augment},
       {"lr_schedule", c.lr_schedule},
       {"model", c.model}};
  if (c.sigma_drone) j["sigma_drone"] = *c.sigma_drone;
  if (c.sigma_ground) j["sigma_ground"] = *c.sigma_ground;
  if (!c.log_path.empty()) j["log_path"] = c.log_path.generic_string();
  if (c.init_checkpoint) j["init_checkpoint"] = c.init_checkpoint->generic_string();
  if (c.pretrained_backbones) j["pretrained_backbones"] = c.pretrained_backbones->generic_string();
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.mse_weight = j.value("mse_weight", c.mse_weight);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.device = j.value("device", c.device);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.augment = j.value("augment", c.augment);
  c.lr_schedule = j.value("lr_schedule", c.lr_schedule);
  if (j.contains("sigma_drone")) c.sigma_drone = j.at("sigma_drone").get<double>();
  if (j.contains("sigma_ground")) c.sigma_ground = j.at("sigma_ground").get<double>();
  if (j.contains("checkpoint_dir")) c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
  if (j.contains("log_path")) c.log_path = j.at("log_path").get<std::string>();
  if (j.contains("init_checkpoint")) c.init_checkpoint = j.at("init_checkpoint").get<std::string>();
  if (j.contains("pretrained_backbones")) {
    c.pretrained_backbones = j.at("pretrained_backbones").get<std::string>();
  }
  if (j.contains("eval_split")) c.eval_split = data::split_from_string(j.at("eval_split"));
  if (j.contains("eval_every")) c.eval_every = j.at("eval_every").get<int64_t>();
  if (j.contains("model_preset")) {
    const auto p = j.at("model_preset").get<std::string>();
    if (p == "tiny") {
      c.model = ModelConfig::tiny();
    } else if (p == "standard") {
      c.model = ModelConfig::standard();
    } else {
      throw InvalidConfig("unknown model_preset '" + p + "'");
    }
  }
  if (j.contains("model")) {
    nlohmann::json base = c.model;
    base.merge_patch(j.at("model"));
    c.model = base.get<ModelConfig>();
  }
}

void SweepConfig::validate() const {
  if (!(sigma_start > 0.0)) throw InvalidConfig("sigma_start must be > 0");
  if (!(sigma_step > 0.0)) throw InvalidConfig("sigma_step must be > 0");
  if (sigma_end < sigma_start) throw InvalidConfig("sigma_end must be >= sigma_start");
}

std::vector<double> SweepConfig::values() const {
  validate();
  const auto count = static_cast<int64_t>(std::floor((sigma_end - sigma_start) / sigma_step + 1e-9)) + 1;
  std::vector<double> out;
  for (int64_t i = 0; i < count; ++i) {
    // Round to 1e-9 so the grid prints cleanly and reruns agree.
    out.push_back(std::round((sigma_start + static_cast<double>(i) * sigma_step) * 1e9) / 1e9);
  }
  return out;
}

Tensor<float> stack(const std::vector<const Tensor<float>*>& items) {
  if (items.empty()) throw InvalidInput("stack: no tensors");
  const Shape& s0 = items.front()->shape();
  Shape out_shape{static_cast<int64_t>(items.size())};
  out_shape.insert(out_shape.end(), s0.begin(), s0.end());
  Tensor<float> out(out_shape);
  const int64_t per = items.front()->numel();
  for (size_t i = 0; i < items.size(); ++i) {
    if (items[i]->shape() != s0) {
      throw ShapeError("stack: " + shape_str(items[i]->shape()) + " vs " + shape_str(s0));
    }
    std::copy_n(items[i]->data(), per, out.data() + static_cast<int64_t>(i) * per);
  }
  return out;
}

namespace {

Tensor<float> slice0(const Tensor<float>& t, int64_t i, Shape shape) {
  const int64_t per = t.numel() / t.size(0);
  Tensor<float> out(std::move(shape));
  std::copy_n(t.data() + i * per, per, out.data());
  return out;
}

}  // namespace

std::vector<Prediction> Predictor::run(const std::vector<const data::ModelInputs*>& batch,
                                       bool with_attention) {
  if (batch.empty()) return {};
  std::vector<const Tensor<float>*> q, h, s;
  for (const auto* in : batch) {
    if (in->kind != batch.front()->kind) throw InvalidInput("predict batch mixes query kinds");
    q.push_back(&in->query);
    h.push_back(&in->heatmap);
    s.push_back(&in->satellite);
  }
  ad::NoGradGuard no_grad;
  auto out = model_.forward(ad::Var<float>(stack(q)), ad::Var<float>(stack(h)),
                            ad::Var<float>(stack(s)), false);
  const Tensor<float>& raw = out.raw.value();
  const int64_t n = raw.size(0), gh = raw.size(2), gw = raw.size(3);
  std::vector<Prediction> preds(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    Prediction& p = preds[static_cast<size_t>(i)];
    p.box = detection::decode_and_select(slice0(raw, i, {raw.size(1), gh, gw}),
                                         model_.config().anchors, ModelConfig::kStrideC3);
    if (with_attention) {
      const Tensor<float>& a = out.match.a_s.value();
      p.a_s = slice0(a, i, {a.size(2), a.size(3)});
      const Tensor<float>& l = out.match.f_u_l.value();
      p.f_u_l = slice0(l, i, {l.size(2), l.size(3)});
      const Tensor<float>& w = out.match.attention.value();
      const int64_t heads = model_.config().heads;
      Tensor<float> wi({heads, w.size(1), w.size(2)});
      std::copy_n(w.data() + i * wi.numel(), wi.numel(), wi.data());
      p.mhca_weights = std::move(wi);
    }
  }
  return preds;
}

Prediction Predictor::run_one(const data::ModelInputs& in, bool with_attention) {
  return std::move(run({&in}, with_attention).front());
}

namespace {

// Evaluation over already preprocessed inputs, batched per query kind.
EvalOutput evaluate_inputs(OcgNet<float>& model, const std::vector<const data::ModelInputs*>& inputs,
                           const std::optional<std::vector<std::string>>& known_classes,
                           int64_t batch_size) {
  if (inputs.empty()) throw InvalidInput("evaluate: split is empty");
  Predictor predictor(model);
  std::vector<detection::PredictedBox> boxes(inputs.size());
  for (QueryKind kind : {QueryKind::kDrone, QueryKind::kGround}) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < inputs.size(); ++i)
      if (inputs[i]->kind == kind) idx.push_back(i);
    for (size_t b = 0; b < idx.size(); b += static_cast<size_t>(batch_size)) {
      std::vector<const data::ModelInputs*> batch;
      for (size_t k = b; k < std::min(idx.size(), b + static_cast<size_t>(batch_size)); ++k) {
        batch.push_back(inputs[idx[k]]);
      }
      auto preds = predictor.run(batch);
      for (size_t k = 0; k < preds.size(); ++k) boxes[idx[b + k]] = preds[k].box;
    }
  }
  EvalOutput out;
  std::vector<metrics::EvalPair> pairs;
  for (size_t i = 0; i < inputs.size(); ++i) {
    pairs.push_back({boxes[i].box, inputs[i]->gt, inputs[i]->class_label});
    out.predictions.push_back(detection::prediction_record(inputs[i]->sample_id, boxes[i]));
  }
  out.report = metrics::per_class_report(pairs, known_classes);
  return out;
}

std::vector<data::ModelInputs> preprocess_all(const std::vector<data::GeoSample>& samples,
                                              const data::Manifest& manifest,
                                              const ModelConfig& cfg,
                                              const data::PreprocessOptions& opts) {
  std::vector<data::ModelInputs> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(data::preprocess(s, manifest, cfg, opts));
  return out;
}

std::vector<const data::ModelInputs*> pointers(const std::vector<data::ModelInputs>& v) {
  std::vector<const data::ModelInputs*> out;
  for (const auto& x : v) out.push_back(&x);
  return out;
}

}  // namespace

EvalOutput evaluate(OcgNet<float>& model, const data::Manifest& manifest, data::Split split,
                    const data::PreprocessOptions& opts,
                    const std::optional<std::vector<std::string>>& known_classes,
                    int64_t batch_size) {
  const auto samples = manifest.split(split);
  if (samples.empty()) {
    throw InvalidInput("manifest has no samples in split '" + data::to_string(split) + "'");
  }
  const auto inputs = preprocess_all(samples, manifest, model.config(), opts);
  return evaluate_inputs(model, pointers(inputs), known_classes, batch_size);
}

EvalOutput evaluate_checkpoint(const std::filesystem::path& checkpoint,
                               const data::Manifest& manifest, data::Split split,
                               const std::optional<ModelConfig>& expected,
                               const data::PreprocessOptions& opts) {
  Checkpoint ck = read_checkpoint(checkpoint);
  if (expected) check_compatible(*expected, ck.config);
  OcgNet<float> model(ck.config);
  load_into(model, ck);
  return evaluate(model, manifest, split, opts);
}

nlohmann::json EpochLog::to_json() const {
  nlohmann::json j{{"epoch", epoch},
                   {"steps", steps},
                   {"loss", {{"total", loss.total}, {"mse", loss.mse_component}, {"bce", loss.bce_component}}}};
  if (eval) {
    j["eval"] = {{"acc_at_25", eval->acc_at_25},
                 {"acc_at_50", eval->acc_at_50},
                 {"mean_iou", eval->mean_iou},
                 {"n", eval->n}};
  } else {
    j["eval"] = nullptr;
  }
  return j;
}

namespace {

// Batches never mix query kinds since the two kinds have different sizes.
std::vector<std::vector<size_t>> make_batches(const std::vector<data::ModelInputs>& inputs,
                                              int64_t batch_size, std::mt19937_64& rng) {
  std::vector<std::vector<size_t>> batches;
  for (QueryKind kind : {QueryKind::kDrone, QueryKind::kGround}) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < inputs.size(); ++i)
      if (inputs[i].kind == kind) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (size_t b = 0; b < idx.size(); b += static_cast<size_t>(batch_size)) {
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(b),
                           idx.begin() + static_cast<std::ptrdiff_t>(
                                             std::min(idx.size(), b + static_cast<size_t>(batch_size))));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

}  // namespace

TrainResult train(const TrainConfig& cfg_in, const data::Manifest& manifest,
                  const EpochCallback& on_epoch) {
  TrainConfig cfg = cfg_in;
  std::optional<Checkpoint> init;
  if (cfg.init_checkpoint) {
    init = read_checkpoint(*cfg.init_checkpoint);
    cfg.model = init->config;
  }
  if (cfg.sigma_drone) cfg.model.sigma_drone = *cfg.sigma_drone;
  if (cfg.sigma_ground) cfg.model.sigma_ground = *cfg.sigma_ground;
  cfg.validate();

  const auto train_samples = manifest.split(data::Split::kTrain);
  if (train_samples.empty()) throw InvalidInput("manifest has no train samples");
  const auto eval_samples = manifest.split(cfg.eval_split);

  TrainResult result;
  OcgNet<float> model(cfg.model, cfg.seed);
  if (init) {
    load_into(model, *init);
  } else if (cfg.pretrained_backbones) {
    if (std::filesystem::exists(*cfg.pretrained_backbones)) {
      if (load_backbones(model, read_checkpoint(*cfg.pretrained_backbones)) == 0) {
        result.warnings.push_back("no encoder tensors in " + cfg.pretrained_backbones->string());
      }
    } else {
      result.warnings.push_back("pretrained backbones " + cfg.pretrained_backbones->string() +
                                " not found; encoders use random initialization");
    }
  }

  const data::PreprocessOptions popts{};  // sigmas already folded into the model config
  const auto train_inputs = preprocess_all(train_samples, manifest, cfg.model, popts);
  const auto eval_inputs = preprocess_all(eval_samples, manifest, cfg.model, popts);

  optim::AdamConfig acfg;
  acfg.learning_rate = cfg.learning_rate;
  acfg.weight_decay = cfg.weight_decay;
  optim::Adam<float> adam(model.parameters(), acfg);

  std::set<std::string> classes;
  for (const auto& s : train_samples) classes.insert(s.class_label);
  if (init)
    for (const auto& c : init->meta.train_classes) classes.insert(c);
  CheckpointMeta meta;
  meta.optimizer = acfg;
  meta.train_classes.assign(classes.begin(), classes.end());

  std::filesystem::create_directories(cfg.checkpoint_dir);
  const auto log_path = cfg.log_path.empty() ? cfg.checkpoint_dir / "train_log.jsonl" : cfg.log_path;
  if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot open training log " + log_path.string());
  nlohmann::json start_cfg = cfg;
  log << nlohmann::json{{"event", "start"},
                        {"config", start_cfg},
                        {"train_samples", train_inputs.size()},
                        {"eval_samples", eval_inputs.size()},
                        {"parameters", model.parameter_count()}}
             .dump()
      << "\n";
  log.flush();

  result.best_checkpoint = cfg.checkpoint_dir / "best.ckpt";
  result.final_checkpoint = cfg.checkpoint_dir / "final.ckpt";
  std::mt19937_64 rng(cfg.seed ^ 0x5eedull);
  int64_t total_steps = 0;
  for (QueryKind kind : {QueryKind::kDrone, QueryKind::kGround}) {
    const auto n = std::count_if(train_inputs.begin(), train_inputs.end(),
                                 [&](const data::ModelInputs& in) { return in.kind == kind; });
    total_steps += (n + cfg.batch_size - 1) / cfg.batch_size;
  }
  total_steps *= cfg.epochs;
  if (cfg.max_steps > 0) total_steps = std::min(total_steps, cfg.max_steps);
  std::mt19937_64 flip_rng(cfg.seed ^ 0xf11full);
  std::bernoulli_distribution coin(0.5);
  double best_acc = -1.0;
  bool stop = false;
  for (int64_t epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    EpochLog row;
    row.epoch = epoch;
    int64_t nb = 0;
    for (const auto& batch : make_batches(train_inputs, cfg.batch_size, rng)) {
      std::vector<const Tensor<float>*> q, h, s;
      std::vector<Box> gts;
      std::vector<std::string> ids;
      std::vector<data::ModelInputs> mirrored;
      mirrored.reserve(batch.size());
      for (size_t i : batch) {
        const data::ModelInputs* in = &train_inputs[i];
        if (cfg.augment && coin(flip_rng)) in = &mirrored.emplace_back(data::mirror_horizontal(*in));
        q.push_back(&in->query);
        h.push_back(&in->heatmap);
        s.push_back(&in->satellite);
        gts.push_back(in->gt);
        ids.push_back(in->sample_id);
      }
      auto out = model.forward(ad::Var<float>(stack(q)), ad::Var<float>(stack(h)),
                               ad::Var<float>(stack(s)), true);
      auto loss = detection::compute_loss(out.raw, gts, cfg.model.anchors, ModelConfig::kStrideC3,
                                          cfg.model.satellite_size, cfg.mse_weight);
      if (!std::isfinite(loss.parts.total)) {
        log << nlohmann::json{{"event", "diverged"}, {"epoch", epoch}, {"batch", ids}}.dump() << "\n";
        std::string list;
        for (const auto& id : ids) list += (list.empty() ? "" : ", ") + id;
        throw TrainingDiverged("non-finite loss in epoch " + std::to_string(epoch) +
                                   " on batch [" + list + "]",
                               ids);
      }
      adam.zero_grad();
      loss.value.backward();
      adam.set_learning_rate(scheduled_learning_rate(cfg, result.steps, total_steps));
      adam.step();
      row.loss.total += loss.parts.total;
      row.loss.mse_component += loss.parts.mse_component;
      row.loss.bce_component += loss.parts.bce_component;
      ++nb;
      ++result.steps;
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) {
        stop = true;
        break;
      }
    }
    row.steps = result.steps;
    row.loss.mse_component /= static_cast<double>(nb);
    row.loss.bce_component /= static_cast<double>(nb);
    row.loss.total = row.loss.mse_component + row.loss.bce_component;
    const bool last = stop || epoch == cfg.epochs;
    const bool due = cfg.eval_every > 0 && epoch % cfg.eval_every == 0;
    if (!eval_inputs.empty() && (due || last)) {
      row.eval = evaluate_inputs(model, pointers(eval_inputs), {}, 8).report;
    }
    log << row.to_json().dump() << "\n";
    log.flush();
    if (row.eval && row.eval->acc_at_25 > best_acc) {
      best_acc = row.eval->acc_at_25;
      meta.extra = {{"epoch", epoch}, {"steps", result.steps}, {"seed", cfg.seed},
                    {"eval_acc_at_25", row.eval->acc_at_25}};
      save_checkpoint(result.best_checkpoint, model, meta);
    }
    if (on_epoch) on_epoch(row);
    result.epochs.push_back(std::move(row));
  }
  meta.extra = {{"epoch", result.epochs.back().epoch}, {"steps", result.steps}, {"seed", cfg.seed}};
  save_checkpoint(result.final_checkpoint, model, meta);
  if (best_acc < 0.0) {
    std::filesystem::copy_file(result.final_checkpoint, result.best_checkpoint,
                               std::filesystem::copy_options::overwrite_existing);
    if (eval_samples.empty()) {
      result.warnings.push_back("no " + data::to_string(cfg.eval_split) +
                                " samples; best.ckpt is the final model");
    }
  }
  return result;
}

std::string sweep_sigma(const SweepConfig& sweep, const TrainConfig& train_cfg,
                        const data::Manifest& manifest, const std::filesystem::path& csv_path,
                        std::vector<SweepRow>* rows_out) {
  std::string csv = std::string(kSweepHeader) + "\n";
  const std::string split = data::to_string(sweep.split);
  std::vector<SweepRow> rows;
  for (double sigma : sweep.values()) {
    SweepRow row;
    row.sigma = sigma;
    char tag[32];
    std::snprintf(tag, sizeof(tag), "sigma_%.3f", sigma);
    try {
      TrainConfig c = train_cfg;
      c.sigma_drone = sigma;
      c.sigma_ground = sigma;
      c.checkpoint_dir = train_cfg.checkpoint_dir / tag;
      c.log_path.clear();
      c.eval_split = sweep.split;
      std::filesystem::remove(c.checkpoint_dir / "train_log.jsonl");
      const TrainResult r = train(c, manifest);
      const EvalOutput e = evaluate_checkpoint(r.best_checkpoint, manifest, sweep.split);
      row.acc_at_25 = e.report.acc_at_25;
      row.acc_at_50 = e.report.acc_at_50;
    } catch (const std::exception& ex) {
      row.failed = true;
      row.error = ex.what();
    }
    char line[128];
    if (row.failed) {
      std::snprintf(line, sizeof(line), "%.3f,failed,failed,%s\n", sigma, split.c_str());
    } else {
      std::snprintf(line, sizeof(line), "%.3f,%.4f,%.4f,%s\n", sigma, row.acc_at_25, row.acc_at_50,
                    split.c_str());
    }
    csv += line;
    rows.push_back(std::move(row));
  }
  if (!csv_path.empty()) {
    if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + csv_path.string());
    out << csv;
  }
  if (rows_out) *rows_out = std::move(rows);
  return csv;
}

FewShotResult finetune_fewshot(const std::filesystem::path& base_checkpoint,
                               const data::FewShotSpec& spec, TrainConfig cfg) {
  data::validate_fewshot(spec);
  FewShotResult result;
  const Checkpoint base = read_checkpoint(base_checkpoint);
  std::vector<std::string> overlap;
  for (const auto& c : spec.categories) {
    if (std::find(base.meta.train_classes.begin(), base.meta.train_classes.end(), c) !=
        base.meta.train_classes.end()) {
      overlap.push_back(c);
    }
  }
  if (!overlap.empty()) {
    std::string list;
    for (const auto& c : overlap) list += (list.empty() ? "" : ", ") + c;
    result.warnings.push_back("few-shot categories overlap base training classes: " + list);
  }

  cfg.init_checkpoint = base_checkpoint;
  // The support set has no held-out split; report its fit once at the end.
  cfg.eval_split = data::Split::kTrain;
  cfg.eval_every = 0;
  const data::Manifest train_m = data::load_manifest(spec.train_manifest);
  const TrainResult tr = train(cfg, train_m);
  for (const auto& w : tr.warnings) result.warnings.push_back(w);
  result.checkpoint = tr.final_checkpoint;

  const data::Manifest test_m = data::load_manifest(spec.test_manifest);
  Checkpoint ck = read_checkpoint(result.checkpoint);
  OcgNet<float> model(ck.config);
  load_into(model, ck);
  result.report = evaluate(model, test_m, data::Split::kTest, {}, spec.categories).report;
  return result;
}

}  // namespace ocg::pipeline
