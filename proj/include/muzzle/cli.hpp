// Copyright 2026 The MuzzleID Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <omp.h>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "muzzle/dataset.hpp"
#include "muzzle/detector/detector.hpp"
#include "muzzle/embedder.hpp"
#include "muzzle/error.hpp"
#include "muzzle/evalkit.hpp"
#include "muzzle/fileio.hpp"
#include "muzzle/gallery.hpp"
#include "muzzle/nn/checkpoint.hpp"
#include "muzzle/runconfig.hpp"
#include "muzzle/synthgen.hpp"
#include "muzzle/trainer.hpp"
#include "muzzle/service.hpp"

// Exit codes: 0 success, 1 runtime error (code on stderr), 2 usage error.
namespace muzzle::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using image::GrayImage;

inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

struct Streams {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

// Config file, then --set overrides, then dedicated flags.
struct ConfigOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::string> run_id, runs_dir;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "INI run config")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "Override a config key: section.key=value")->take_all();
    cmd->add_option("--run-id", run_id, "Run directory name under the runs dir");
    cmd->add_option("--runs-dir", runs_dir, "Root for run artifacts");
  }

  config::RunConfig resolve() const {
    config::RunConfig c;
    if (!config_path.empty()) c = config::load(config_path);
    for (const auto& o : overrides) config::apply_override(c, o);
    if (run_id) c.run_id = *run_id;
    if (runs_dir) c.runs_dir = *runs_dir;
    return c;
  }
};

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.8g", v);
  return buf;
}

inline int cmd_gen_data(const synth::GenConfig& cfg, const std::string& out, Streams io) {
  const auto m = synth::gen_dataset(out, cfg);
  const auto all = data::dataset_stats(m);
  json j = {{"identities", all.identities}, {"images", all.images}, {"cv_percent", all.cv_percent}};
  for (const auto& [split, _] : m.splits) {
    const auto s = data::dataset_stats(m, split);
    j["splits"][split] = {{"identities", s.identities}, {"images", s.images}};
  }
  io.out << j.dump(2) << "\n";
  return 0;
}

inline int cmd_gen_scenes(int count, std::uint64_t seed, const synth::SceneConfig& cfg, const std::string& out,
                          Streams io) {
  synth::gen_scenes(out, count, seed, cfg);
  io.out << json{{"scenes", count}, {"out", out}}.dump() << "\n";
  return 0;
}

inline int cmd_train_detector(const config::RunConfig& c, Streams io) {
  if (c.scenes.empty()) fail(ErrorCode::kSpecError, "no scene directory: set data.scenes or pass --scenes");
  const fs::path dir = c.run_dir();
  fs::create_directories(dir);
  config::write_resolved(c, dir);
  const auto samples = detect::load_annotations(c.scenes);
  const auto [tr_idx, te_idx] = detect::split_indices(samples.size(), c.detector_train_fraction, c.detector.seed);
  std::vector<detect::DetectionSample> train, held;
  for (auto i : tr_idx) train.push_back(samples[i]);
  for (auto i : te_idx) held.push_back(samples[i]);

  std::string csv = "epoch,object_loss,box_loss\n";
  auto hook = [&](const detect::DetectorEpochReport& r, const nn::Network<float>&, const nn::OptimizerState<float>&) {
    io.err << "detector epoch " << r.epoch << " object " << fmt(r.object_loss) << " box " << fmt(r.box_loss) << "\n";
  };
  auto res = detect::train_detector(train, c.detector, hook);
  for (const auto& r : res.epochs) csv += std::to_string(r.epoch) + "," + fmt(r.object_loss) + "," + fmt(r.box_loss) + "\n";
  write_file_atomic(dir / "detector_epochs.csv", csv);

  detect::Detector det(std::move(res.net), c.detection);
  det.save(dir / "detector.ckpt", &res.opt, c.detector.epochs);
  json summary = {{"train_images", train.size()}, {"holdout_images", held.size()}};
  if (!held.empty()) {
    const auto ev = detect::evaluate_detector(det, held);
    summary["map50"] = ev.map.map50;
    summary["map50_95"] = ev.map.map50_95;
    summary["top_box_accuracy"] = ev.top_box_accuracy;
    summary["ap"] = ev.map.ap;
  }
  write_file_atomic(dir / "detector_eval.json", summary.dump(2) + "\n");
  io.out << summary.dump() << "\n";
  return 0;
}

inline train::PreparedSet load_prepared(const fs::path& root, const std::string& split, const image::PreprocessParams& pp) {
  const auto m = data::open_dataset(root);
  return train::prepare(data::load_split(root, m, split), pp);
}

inline json eval_json(const train::EvalReport& r) {
  json j = {{"same_pairs", r.same_pairs},
            {"diff_pairs", r.diff_pairs},
            {"accuracy", r.best_f1.accuracy},
            {"f1", r.best_f1.f1},
            {"threshold", r.best_f1.threshold},
            {"median_same", r.distances.median_same},
            {"median_diff", r.distances.median_diff}};
  j["val"] = r.at_far ? json(r.at_far->val) : json(nullptr);
  j["far"] = r.at_far ? json(r.at_far->far) : json(nullptr);
  return j;
}

inline int cmd_train_embedder(config::RunConfig c, Streams io) {
  if (c.dataset.empty()) fail(ErrorCode::kSpecError, "no dataset: set data.dataset or pass --data");
  const fs::path dir = c.run_dir();
  fs::create_directories(dir);
  config::write_resolved(c, dir);
  c.embedder.run_dir = dir;
  auto& pp = c.embedder.preprocess;
  pp.output_size = image::kEmbedderInputSize;
  const auto train_set = load_prepared(c.dataset, "train", pp);
  const auto val_set = load_prepared(c.dataset, "val", pp);

  nn::Network<float> net(nn::small_conv_net(c.embedder.dim, c.embedder.seed, pp.output_size));
  const auto base = train::evaluate(net, val_set, c.embedder.far_target, c.embedder.val_pairs_per_class,
                                    mix_seed(c.embedder.seed, 0x7a1));
  write_file_atomic(dir / "baseline.json", eval_json(base).dump(2) + "\n");
  io.err << "untrained val accuracy " << fmt(base.best_f1.accuracy) << "\n";
  {
    nn::CheckpointMeta meta;
    meta.role = "embedder";
    meta.dim = c.embedder.dim;
    meta.threshold = base.best_f1.threshold;
    fs::create_directories(dir / "checkpoints");
    nn::save_checkpoint(dir / "checkpoints" / "init.ckpt", net, nullptr, meta);
  }

  auto opt = nn::OptimizerState<float>::fresh(net.parameter_count(), c.embedder.adam);
  auto hook = [&](const train::EpochMiningReport& r, const train::EpochMetrics& m) {
    io.err << "epoch " << r.epoch << " semi_hard " << r.semi_hard << " hard " << r.hard << " loss " << fmt(m.loss)
           << " val " << fmt(m.val) << " accuracy " << fmt(m.accuracy) << "\n";
  };
  const auto res = train::train_embedder(train_set, val_set, std::move(net), std::move(opt), c.embedder, hook);
  const auto& last = res.metrics.back();
  json summary = {{"epochs", res.metrics.size()}, {"threshold", res.threshold}, {"val", last.val},
                  {"accuracy", last.accuracy}, {"checkpoint", (dir / "checkpoints" / "last.ckpt").string()},
                  {"best_epoch", res.best_epoch}, {"best_accuracy", res.best_accuracy},
                  {"best_checkpoint", (dir / "checkpoints" / "best.ckpt").string()}};
  write_file_atomic(dir / "summary.json", summary.dump(2) + "\n");
  io.out << summary.dump() << "\n";
  return 0;
}

struct EvalOptions {
  std::string checkpoint, dataset, split = "test", out;
  std::size_t pairs = 995;
  double far = 1e-2;
  std::uint64_t seed = 5;
  int resamples = 10;
};

inline int cmd_evaluate(const EvalOptions& o, const config::RunConfig& c, Streams io) {
  const auto emb = embed::Embedder::load(o.checkpoint);
  image::PreprocessParams pp = c.embedder.preprocess;
  pp.output_size = emb.input_size();
  const auto m = data::open_dataset(o.dataset);
  const auto raw = data::load_split(o.dataset, m, o.split);
  const auto set = train::prepare(raw, pp);
  const fs::path dir = o.out.empty() ? c.run_dir() : fs::path(o.out);
  fs::create_directories(dir);
  config::write_resolved(c, dir);

  std::vector<const GrayImage*> ptrs;
  for (const auto& im : set.images) ptrs.push_back(&im);
  const auto e = emb.embed_matrix(ptrs);
  const auto pairs = eval::sample_balanced_pairs(set.labels, o.pairs, o.seed);
  const auto scored = eval::pair_distances(e, pairs);

  std::string pcsv = "a,b,same,distance\n";
  char buf[128];
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::snprintf(buf, sizeof buf, ",%d,%.9g\n", scored[i].same ? 1 : 0, scored[i].distance);
    pcsv += raw[pairs[i].a].file + "," + raw[pairs[i].b].file + buf;
  }
  write_file_atomic(dir / "pairs.csv", pcsv);

  std::vector<embed::EmbeddingRow> rows;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto r = e.row(i);
    rows.push_back({raw[i].file, raw[i].identity, {r.begin(), r.end()}});
  }
  embed::write_embeddings_csv(dir / "embeddings.csv", rows);

  std::string roc = "threshold,tpr,fpr,precision,f1,accuracy\n";
  for (const auto& p : eval::sweep(scored)) {
    roc += fmt(p.threshold) + "," + fmt(p.tpr) + "," + fmt(p.fpr) + "," + fmt(p.precision) + "," + fmt(p.f1) + "," +
           fmt(p.accuracy) + "\n";
  }
  write_file_atomic(dir / "roc.csv", roc);

  const auto best = eval::select_threshold(scored);
  const auto dist = eval::distance_summary(scored);
  std::optional<eval::OperatingPoint> at_far;
  std::optional<eval::ValStats> stats;
  try {
    at_far = eval::val_at_far(scored, o.far);
    stats = eval::val_at_far_resampled(scored, o.far, o.resamples, mix_seed(o.seed, 1));
  } catch (const Error& err) {
    if (err.code() != ErrorCode::kInsufficientPairs) throw;
  }
  const auto [same, diff] = eval::class_counts(scored);
  std::string mcsv = "split,same_pairs,diff_pairs,threshold,accuracy,precision,f1,tpr,fpr,far_target,val,far,val_mean,val_std,median_same,median_diff\n";
  const auto nan = std::numeric_limits<double>::quiet_NaN();
  mcsv += o.split + "," + std::to_string(same) + "," + std::to_string(diff) + "," + fmt(best.threshold) + "," +
          fmt(best.accuracy) + "," + fmt(best.precision) + "," + fmt(best.f1) + "," + fmt(best.tpr) + "," +
          fmt(best.fpr) + "," + fmt(o.far) + "," + fmt(at_far ? at_far->val : nan) + "," +
          fmt(at_far ? at_far->far : nan) + "," + fmt(stats ? stats->mean : nan) + "," +
          fmt(stats ? stats->stddev : nan) + "," + fmt(dist.median_same) + "," + fmt(dist.median_diff) + "\n";
  write_file_atomic(dir / "metrics.csv", mcsv);

  json j = {{"split", o.split}, {"same_pairs", same}, {"diff_pairs", diff}, {"threshold", best.threshold},
            {"accuracy", best.accuracy}, {"f1", best.f1}, {"tpr", best.tpr}, {"fpr", best.fpr},
            {"median_same", dist.median_same}, {"median_diff", dist.median_diff}};
  j["val"] = at_far ? json(at_far->val) : json(nullptr);
  j["far"] = at_far ? json(at_far->far) : json(nullptr);
  io.out << j.dump() << "\n";
  return 0;
}

struct ModelOptions {
  std::string gallery, checkpoint, detector;
  std::optional<double> threshold_override;

  void attach(CLI::App* cmd, bool env) {
    auto* g = cmd->add_option("--gallery-path,--gallery", gallery, "Gallery JSONL file")->required();
    auto* k = cmd->add_option("--checkpoint", checkpoint, "Embedder checkpoint")->required();
    auto* d = cmd->add_option("--detector-checkpoint,--detector", detector, "Detector checkpoint")->required();
    auto* t = cmd->add_option("--threshold-override", threshold_override, "Decision threshold instead of the gallery value");
    if (env) {
      g->envname("MUZZLE_GALLERY_PATH");
      k->envname("MUZZLE_CHECKPOINT");
      d->envname("MUZZLE_DETECTOR_CHECKPOINT");
      t->envname("MUZZLE_THRESHOLD_OVERRIDE");
    }
  }
};

// Loaded models plus the gallery; a new gallery takes the checkpoint threshold.
struct Runtime {
  embed::Embedder embedder;
  detect::Detector detector;
  gallery::SharedGallery store;
  service::Service service;

  explicit Runtime(const ModelOptions& o, const image::PreprocessParams& pp = {})
      : embedder(embed::Embedder::load(o.checkpoint)),
        detector(detect::Detector::load(o.detector)),
        store(open_store(o, embedder)),
        service(service::Pipeline(detector, embedder, {service::kMinCropSide, pp}), store, o.threshold_override) {}

 private:
  static gallery::SharedGallery open_store(const ModelOptions& o, const embed::Embedder& emb) {
    double t = o.threshold_override.value_or(emb.threshold());
    if (!fs::exists(o.gallery) && !(t > 0)) {
      fail(ErrorCode::kSpecError, "checkpoint carries no calibrated threshold; pass --threshold-override");
    }
    if (!(t > 0)) t = 1.0;
    return gallery::SharedGallery::open(o.gallery, emb.dim(), t);
  }
};

inline int emit(const service::ApiResponse& r, Streams io) {
  io.out << r.body.dump(2) << "\n";
  if (r.status >= 300) {
    io.err << "error: " << r.body.value("code", std::string("UNKNOWN")) << ": " << r.body.value("message", std::string())
           << "\n";
    return kExitError;
  }
  return 0;
}

inline service::ApiRequest image_request(const std::string& image_path) {
  service::ApiRequest req;
  req.image = read_file(image_path);
  return req;
}

inline std::atomic<httplib::Server*>& active_server() {
  static std::atomic<httplib::Server*> s{nullptr};
  return s;
}

inline int cmd_serve(const ModelOptions& o, const std::string& host, int port, Streams io) {
  Runtime rt(o);
  httplib::Server server;
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  service::install_routes(server, rt.service);
  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) fail(ErrorCode::kIoError, "cannot bind " + host + ":" + std::to_string(port));
  io.err << "listening on " << host << ":" << bound << " gallery " << o.gallery << " (" << rt.store.size()
         << " records, threshold " << fmt(rt.service.threshold()) << ")\n";
  active_server() = &server;
  std::signal(SIGINT, [](int) {
    if (auto* s = active_server().load()) s->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (auto* s = active_server().load()) s->stop();
  });
  server.listen_after_bind();
  active_server() = nullptr;
  return 0;
}

inline int run(int argc, const char* const* argv, Streams io = {}) {
  CLI::App app{"Muzzle-based cattle identification engine", "muzzle"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker thread cap (0: runtime default)")->check(CLI::NonNegativeNumber);

  synth::GenConfig gen;
  std::string gen_out;
  auto* gd = app.add_subcommand("gen-data", "Generate a synthetic identity dataset");
  gd->add_option("--train-ids", gen.train_ids)->capture_default_str();
  gd->add_option("--val-ids", gen.val_ids)->capture_default_str();
  gd->add_option("--test-ids", gen.test_ids)->capture_default_str();
  gd->add_option("--images", gen.images_per_id, "Images per identity")->capture_default_str();
  gd->add_option("--seed", gen.master_seed)->capture_default_str();
  gd->add_option("--out", gen_out, "Empty output directory")->required();

  int scene_count = 200;
  std::uint64_t scene_seed = 0;
  synth::SceneConfig scene_cfg;
  std::string scene_out;
  auto* gs = app.add_subcommand("gen-scenes", "Generate annotated detection scenes");
  gs->add_option("--count", scene_count)->capture_default_str()->check(CLI::PositiveNumber);
  gs->add_option("--seed", scene_seed)->capture_default_str();
  gs->add_option("--size", scene_cfg.size)->capture_default_str();
  gs->add_option("--out", scene_out, "Empty output directory")->required();

  ConfigOptions det_opts;
  std::optional<std::string> det_scenes;
  std::optional<int> det_epochs;
  auto* td = app.add_subcommand("train-detector", "Train the muzzle detector");
  det_opts.attach(td);
  td->add_option("--scenes", det_scenes, "Annotated scene directory");
  td->add_option("--epochs", det_epochs);

  ConfigOptions emb_opts;
  std::optional<std::string> emb_data;
  std::optional<int> emb_epochs, emb_dim;
  std::optional<double> emb_lr;
  auto* te = app.add_subcommand("train-embedder", "Train the embedding network with online mining");
  emb_opts.attach(te);
  te->add_option("--data", emb_data, "Dataset root with manifest.json");
  te->add_option("--epochs", emb_epochs);
  te->add_option("--dim", emb_dim);
  te->add_option("--lr", emb_lr);

  ConfigOptions ev_cfg;
  EvalOptions ev;
  auto* evc = app.add_subcommand("evaluate", "Pair-verification metrics on a dataset split");
  ev_cfg.attach(evc);
  evc->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  evc->add_option("--data", ev.dataset)->required();
  evc->add_option("--split", ev.split)->capture_default_str();
  evc->add_option("--pairs", ev.pairs, "Pairs per class")->capture_default_str();
  evc->add_option("--far", ev.far, "FAR target for VAL")->capture_default_str();
  evc->add_option("--seed", ev.seed)->capture_default_str();
  evc->add_option("--out", ev.out, "Output directory (default: runs dir / run id)");

  ModelOptions en_m, ve_m, id_m, sv_m;
  std::string en_img, en_id, en_meta;
  std::map<std::string, std::string> en_fields;
  auto* en = app.add_subcommand("enroll", "Enroll one image under a cattle id");
  en_m.attach(en, false);
  en->add_option("--image", en_img)->required()->check(CLI::ExistingFile);
  en->add_option("--id", en_id, "Cattle id")->required();
  for (auto key : gallery::kMetadataKeys) {
    std::string flag = "--" + std::string(key);
    std::replace(flag.begin(), flag.end(), '_', '-');
    en->add_option_function<std::string>(flag, [&en_fields, k = std::string(key)](const std::string& v) { en_fields[k] = v; });
  }
  en->add_option("--metadata", en_meta, "Extra metadata as a JSON object");

  std::string ve_img, ve_id;
  auto* ve = app.add_subcommand("verify", "Verify an image against a claimed cattle id");
  ve_m.attach(ve, false);
  ve->add_option("--image", ve_img)->required()->check(CLI::ExistingFile);
  ve->add_option("--id", ve_id, "Claimed cattle id")->required();

  std::string id_img;
  int id_k = 5;
  auto* idc = app.add_subcommand("identify", "Rank enrolled cattle against an image");
  id_m.attach(idc, false);
  idc->add_option("--image", id_img)->required()->check(CLI::ExistingFile);
  idc->add_option("-k,--k", id_k)->capture_default_str()->check(CLI::PositiveNumber);

  std::string host = "127.0.0.1";
  int port = 8080;
  auto* sv = app.add_subcommand("serve", "Run the HTTP service");
  sv_m.attach(sv, true);
  sv->add_option("--host", host)->capture_default_str()->envname("MUZZLE_HOST");
  sv->add_option("--port", port)->capture_default_str()->envname("MUZZLE_PORT");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    io.out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    io.out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    io.err << "error: " << e.what() << "\n";
    const CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) failing = sub;
    io.err << failing->help();
    return kExitUsage;
  }

  if (threads > 0) omp_set_num_threads(threads);
  try {
    if (gd->parsed()) return cmd_gen_data(gen, gen_out, io);
    if (gs->parsed()) return cmd_gen_scenes(scene_count, scene_seed, scene_cfg, scene_out, io);
    if (td->parsed()) {
      auto c = det_opts.resolve();
      if (det_scenes) c.scenes = *det_scenes;
      if (det_epochs) c.detector.epochs = *det_epochs;
      return cmd_train_detector(c, io);
    }
    if (te->parsed()) {
      auto c = emb_opts.resolve();
      if (emb_data) c.dataset = *emb_data;
      if (emb_epochs) c.embedder.epochs = *emb_epochs;
      if (emb_dim) c.embedder.dim = *emb_dim;
      if (emb_lr) c.embedder.adam.learning_rate = *emb_lr;
      if (!embed::supported_dim(c.embedder.dim)) {
        fail(ErrorCode::kSpecError, "embedding dimension must be 64, 128 or 256, got " + std::to_string(c.embedder.dim));
      }
      return cmd_train_embedder(c, io);
    }
    if (evc->parsed()) {
      auto c = ev_cfg.resolve();
      if (!ev_cfg.run_id && c.run_id == "run") c.run_id = "eval-" + ev.split;
      return cmd_evaluate(ev, c, io);
    }
    if (en->parsed()) {
      Runtime rt(en_m);
      auto req = image_request(en_img);
      req.fields = en_fields;
      req.fields["cattle_id"] = en_id;
      if (!en_meta.empty()) req.fields["metadata"] = en_meta;
      return emit(rt.service.enroll(req), io);
    }
    if (ve->parsed()) {
      Runtime rt(ve_m);
      auto req = image_request(ve_img);
      req.fields["cattle_id"] = ve_id;
      return emit(rt.service.verify(req), io);
    }
    if (idc->parsed()) {
      Runtime rt(id_m);
      auto req = image_request(id_img);
      req.fields["k"] = std::to_string(id_k);
      return emit(rt.service.identify(req), io);
    }
    if (sv->parsed()) return cmd_serve(sv_m, host, port, io);
  } catch (const Error& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    io.err << "error: INTERNAL_ERROR: " << e.what() << "\n";
    return kExitError;
  }
  return kExitUsage;
}

}  // namespace muzzle::cli
