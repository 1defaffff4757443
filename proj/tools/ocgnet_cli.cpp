// SPDX-License-Identifier: Apache-2.0
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ocg/attention_export.hpp"
#include "ocg/kernels.hpp"
#include "ocg/serve.hpp"

namespace {

using namespace ocg;

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

struct Common {
  std::string config;
  std::string manifest;
  std::string checkpoint;
  std::optional<uint64_t> seed;
  bool deterministic = false;
  std::string preset;
  int threads = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file");
  app->add_option("--manifest", c.manifest, "dataset manifest (JSONL)");
  app->add_option("--checkpoint", c.checkpoint, "checkpoint file or output directory");
  app->add_option("--seed", c.seed, "random seed");
  app->add_flag("--deterministic", c.deterministic, "record a deterministic run; kernels are always order-stable");
  app->add_option("--preset", c.preset, "model preset: standard or tiny")
      ->check(CLI::IsMember({"standard", "tiny"}));
  app->add_option("--threads", c.threads, "worker threads (0 = all)");
}

pipeline::TrainConfig train_config(const Common& c) {
  pipeline::TrainConfig cfg;
  if (!c.config.empty()) cfg = read_json(c.config).get<pipeline::TrainConfig>();
  if (c.preset == "tiny") cfg.model = ModelConfig::tiny();
  if (c.preset == "standard") cfg.model = ModelConfig::standard();
  if (c.seed) cfg.seed = *c.seed;
  if (c.deterministic) cfg.deterministic = true;
  return cfg;
}

void apply_threads(const Common& c) {
  if (c.threads > 0) kernels::set_num_threads(c.threads);
}

void print_warnings(const std::vector<std::string>& w) {
  for (const auto& s : w) std::cerr << "warning: " << s << "\n";
}

void report_rejects(const data::Manifest& m) {
  for (const auto& r : m.rejects) {
    std::cerr << "warning: manifest line " << r.line << " (" << r.sample_id << ") rejected: " << r.reason
              << "\n";
  }
}

data::Manifest need_manifest(const Common& c) {
  if (c.manifest.empty()) throw InvalidInput("--manifest is required");
  auto m = data::load_manifest(c.manifest);
  report_rejects(m);
  return m;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

ocg::serve::Server* g_server = nullptr;
void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Click-prompted cross-view object localization"};
  app.require_subcommand(1);

  Common train_c, eval_c, sweep_c, few_c, pred_c, serve_c;

  auto* train_cmd = app.add_subcommand("train", "train a model on the manifest's train split");
  add_common(train_cmd, train_c);
  std::optional<int64_t> epochs, batch, max_steps;
  std::optional<double> lr;
  train_cmd->add_option("--epochs", epochs);
  train_cmd->add_option("--batch-size", batch);
  train_cmd->add_option("--lr", lr);
  train_cmd->add_option("--max-steps", max_steps);
  bool augment = false;
  std::optional<std::string> lr_schedule, pretrained;
  train_cmd->add_option("--pretrained", pretrained, "checkpoint holding encoder weights to start from");
  train_cmd->add_option("--lr-schedule", lr_schedule)->check(CLI::IsMember({"constant", "cosine"}));
  train_cmd->add_flag("--augment", augment, "mirror training samples left-right at random");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(eval_cmd, eval_c);
  std::string eval_split = "test", eval_out, eval_preds;
  eval_cmd->add_option("--split", eval_split)->check(CLI::IsMember({"train", "validation", "test"}));
  eval_cmd->add_option("--out", eval_out, "write the report as JSON");
  eval_cmd->add_option("--predictions", eval_preds, "write prediction records as JSONL");

  auto* sweep_cmd = app.add_subcommand("sweep-sigma", "train and evaluate one model per sigma");
  add_common(sweep_cmd, sweep_c);
  pipeline::SweepConfig sweep;
  std::string sweep_out = "sigma_sweep.csv", sweep_split = "validation";
  sweep_cmd->add_option("--start", sweep.sigma_start);
  sweep_cmd->add_option("--end", sweep.sigma_end);
  sweep_cmd->add_option("--step", sweep.sigma_step);
  sweep_cmd->add_option("--split", sweep_split)->check(CLI::IsMember({"validation", "test"}));
  sweep_cmd->add_option("--out", sweep_out, "CSV output path");

  auto* few_cmd = app.add_subcommand("finetune-fewshot", "fine-tune a checkpoint on novel classes");
  add_common(few_cmd, few_c);
  std::string few_train, few_test, few_cats, few_out = "fewshot";
  int64_t few_shots = 7;
  few_cmd->add_option("--train-manifest", few_train)->required();
  few_cmd->add_option("--test-manifest", few_test)->required();
  few_cmd->add_option("--categories", few_cats, "comma-separated novel classes")->required();
  few_cmd->add_option("--shots", few_shots);
  few_cmd->add_option("--out", few_out, "output directory");

  auto* pred_cmd = app.add_subcommand("predict", "localize one clicked object");
  add_common(pred_cmd, pred_c);
  std::string pred_id, pred_query, pred_sat, pred_kind = "drone", pred_attention;
  std::vector<double> pred_click;
  double pred_sigma = 0.0;
  int latency_runs = 0;
  pred_cmd->add_option("--sample-id", pred_id);
  pred_cmd->add_option("--query", pred_query, "query image file");
  pred_cmd->add_option("--satellite", pred_sat, "satellite image file");
  pred_cmd->add_option("--kind", pred_kind)->check(CLI::IsMember({"drone", "ground"}));
  pred_cmd->add_option("--click", pred_click, "normalized x y")->expected(2)->required();
  pred_cmd->add_option("--sigma", pred_sigma);
  pred_cmd->add_option("--attention-dir", pred_attention, "export attention maps as .npy");
  pred_cmd->add_option("--latency-runs", latency_runs, "report mean latency over N warm runs");

  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP prediction service");
  add_common(serve_cmd, serve_c);
  ocg::serve::ServeConfig scfg;
  serve_cmd->add_option("--host", scfg.host);
  serve_cmd->add_option("--port", scfg.port);
  serve_cmd->add_option("--cors-origin", scfg.cors_origin);

  auto* fix_cmd = app.add_subcommand("make-fixture", "write a synthetic corpus");
  data::FixtureOptions fopts;
  std::string fix_out = "fixture";
  bool fewshot = false;
  fix_cmd->add_option("--out", fix_out);
  fix_cmd->add_option("--seed", fopts.seed);
  fix_cmd->add_option("--n", fopts.n);
  fix_cmd->add_option("--kind", fopts.query_kind)->check(CLI::IsMember({"drone", "ground", "mixed"}));
  fix_cmd->add_option("--satellite-px", fopts.satellite_px);
  fix_cmd->add_flag("--all-train", fopts.all_train);
  fix_cmd->add_flag("--fewshot", fewshot, "write the 4 x 7 few-shot corpus instead");

  auto* anchor_cmd = app.add_subcommand("fit-anchors", "k-means anchors over the train split's boxes");
  Common anchor_c;
  add_common(anchor_cmd, anchor_c);

  auto* imp_cmd = app.add_subcommand("import-cvogl", "convert a CSV annotation export to a manifest");
  std::string imp_csv, imp_out = "manifest.jsonl";
  imp_cmd->add_option("--csv", imp_csv)->required();
  imp_cmd->add_option("--out", imp_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      apply_threads(train_c);
      auto cfg = train_config(train_c);
      if (epochs) cfg.epochs = *epochs;
      if (batch) cfg.batch_size = *batch;
      if (lr) cfg.learning_rate = *lr;
      if (max_steps) cfg.max_steps = *max_steps;
      if (augment) cfg.augment = true;
      if (lr_schedule) cfg.lr_schedule = *lr_schedule;
      if (pretrained) cfg.pretrained_backbones = *pretrained;
      if (!train_c.checkpoint.empty()) cfg.checkpoint_dir = train_c.checkpoint;
      const auto m = need_manifest(train_c);
      auto r = pipeline::train(cfg, m, [](const pipeline::EpochLog& e) {
        std::cerr << e.to_json().dump() << "\n";
      });
      print_warnings(r.warnings);
      std::cout << "best: " << r.best_checkpoint.string() << "\nfinal: " << r.final_checkpoint.string()
                << "\n";
    } else if (*eval_cmd) {
      apply_threads(eval_c);
      if (eval_c.checkpoint.empty()) throw InvalidInput("--checkpoint is required");
      const auto m = need_manifest(eval_c);
      std::optional<ModelConfig> expected;
      if (!eval_c.config.empty()) expected = read_json(eval_c.config).get<pipeline::TrainConfig>().model;
      const auto split = data::split_from_string(eval_split);
      auto out = pipeline::evaluate_checkpoint(eval_c.checkpoint, m, split, expected);
      print_warnings(out.report.warnings);
      metrics::TableRow row{"model", {}, {}};
      (split == data::Split::kTest ? row.test : row.validation) = out.report;
      std::cout << metrics::format_table(std::span<const metrics::TableRow>(&row, 1)) << "\n"
                << metrics::format_class_table(out.report);
      if (!eval_out.empty()) write_text(eval_out, metrics::to_json(out.report).dump(2) + "\n");
      if (!eval_preds.empty()) {
        std::string text;
        for (const auto& p : out.predictions) text += p.dump() + "\n";
        write_text(eval_preds, text);
      }
    } else if (*sweep_cmd) {
      apply_threads(sweep_c);
      auto cfg = train_config(sweep_c);
      if (!sweep_c.checkpoint.empty()) cfg.checkpoint_dir = sweep_c.checkpoint;
      sweep.split = data::split_from_string(sweep_split);
      const auto m = need_manifest(sweep_c);
      std::vector<pipeline::SweepRow> rows;
      std::cout << pipeline::sweep_sigma(sweep, cfg, m, sweep_out, &rows);
      for (const auto& r : rows)
        if (r.failed) std::cerr << "warning: sigma " << r.sigma << " failed: " << r.error << "\n";
    } else if (*few_cmd) {
      apply_threads(few_c);
      if (few_c.checkpoint.empty()) throw InvalidInput("--checkpoint (base model) is required");
      auto cfg = pipeline::default_fewshot_config();
      if (!few_c.config.empty()) cfg = read_json(few_c.config).get<pipeline::TrainConfig>();
      if (few_c.seed) cfg.seed = *few_c.seed;
      cfg.checkpoint_dir = few_out;
      data::FewShotSpec spec{split_list(few_cats), few_shots, few_train, few_test};
      auto r = pipeline::finetune_fewshot(few_c.checkpoint, spec, cfg);
      print_warnings(r.warnings);
      char line[160];
      std::snprintf(line, sizeof(line), "acc@0.25 %.2f  acc@0.50 %.2f  IoU %.2f  (n=%lld)\n",
                    r.report.acc_at_25, r.report.acc_at_50, r.report.mean_iou,
                    static_cast<long long>(r.report.n));
      std::cout << "checkpoint: " << r.checkpoint.string() << "\n" << line;
    } else if (*pred_cmd) {
      apply_threads(pred_c);
      if (pred_c.checkpoint.empty()) throw InvalidInput("--checkpoint is required");
      ocg::serve::Service svc;
      svc.load_checkpoint(pred_c.checkpoint);
      nlohmann::json req{{"v", ocg::serve::kApiVersion}, {"click", pred_click},
                         {"return_attention", !pred_attention.empty()}};
      if (!pred_id.empty()) {
        if (pred_c.manifest.empty()) throw InvalidInput("--sample-id needs --manifest");
        svc.set_manifest(pred_c.manifest);
        req["sample_id"] = pred_id;
      } else {
        auto b64 = [](const std::string& p) {
          std::ifstream in(p, std::ios::binary);
          if (!in) throw IoError("cannot open " + p);
          std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
          return ocg::serve::base64_encode(bytes);
        };
        req["query_image"] = b64(pred_query);
        req["satellite_image"] = b64(pred_sat);
        req["query_kind"] = pred_kind;
      }
      if (pred_sigma > 0.0) req["sigma"] = pred_sigma;
      auto res = svc.predict(req);
      if (res.status != 200) {
        std::cerr << "error " << res.status << ": " << res.body.value("error", "") << "\n";
        return 1;
      }
      if (!pred_attention.empty()) {
        const std::string id = pred_id.empty() ? "query" : pred_id;
        const std::filesystem::path dir(pred_attention);
        for (const char* key : {"a_s", "f_u_l"}) {
          io::write_npy(dir / (id + "_" + key + ".npy"),
                        ocg::serve::heatmap_from_payload(res.body["attention"][key]));
        }
        res.body.erase("attention");
      }
      std::cout << res.body.dump(2) << "\n";
      if (latency_runs > 0) {
        req["return_attention"] = false;
        std::printf("mean latency over %d warm runs: %.2f ms\n", latency_runs,
                    svc.measure_latency(req, latency_runs));
      }
    } else if (*serve_cmd) {
      apply_threads(serve_c);
      ocg::serve::Service svc;
      if (!serve_c.checkpoint.empty()) svc.load_checkpoint(serve_c.checkpoint);
      if (!serve_c.manifest.empty()) svc.set_manifest(serve_c.manifest);
      ocg::serve::Server server(svc, scfg);
      const int port = server.bind();
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on " << scfg.host << ":" << port << "\n";
      server.run();
    } else if (*fix_cmd) {
      if (fewshot) {
        auto spec = data::make_fewshot_fixture(fix_out, fopts.seed);
        std::cout << spec.train_manifest.string() << "\n" << spec.test_manifest.string() << "\n";
      } else {
        std::cout << data::make_synthetic_fixture(fix_out, fopts).string() << "\n";
      }
    } else if (*anchor_cmd) {
      const auto cfg = train_config(anchor_c);
      const auto anchors = pipeline::fit_manifest_anchors(need_manifest(anchor_c), cfg.model, cfg.seed);
      std::cout << nlohmann::json{{"anchors", anchors}}.dump() << "\n";
    } else if (*imp_cmd) {
      auto r = data::import_cvogl_csv(imp_csv, imp_out);
      for (const auto& s : r.skipped) {
        std::cerr << "warning: line " << s.line << " skipped: " << s.reason << "\n";
      }
      std::cout << r.written << " samples written to " << imp_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
