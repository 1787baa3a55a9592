#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cytonet/checkpoint.hpp"
#include "cytonet/explain.hpp"
#include "cytonet/kvconfig.hpp"
#include "cytonet/manifest.hpp"
#include "cytonet/metrics.hpp"
#include "cytonet/render.hpp"
#include "cytonet/synth.hpp"
#include "cytonet/trainer.hpp"
#include "cytonet/version.hpp"

namespace cytonet::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write file: " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open file: " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

struct ResolvedTrainSetup {
  ModelConfig model;
  TrainConfig train;
  std::string data_path;
  bool lenient = false;
  std::uint64_t seed = 7;
};

/// Flat dotted-key config with documented defaults; unknown keys are hard
/// errors. `seed_override` (from --seed) wins over the config value.
ResolvedTrainSetup resolve_train_config(KvConfig& kv, const std::uint64_t* seed_override) {
  ResolvedTrainSetup setup;
  setup.seed = kv.get_u64("seed", 7);
  if (seed_override) setup.seed = *seed_override;

  setup.data_path = kv.require_string("data.path");
  setup.lenient = kv.get_bool("data.lenient", false);

  const std::string family_str = kv.get_string("model.family", "rcan_densenet");
  const ModelFamily family = parse_family(family_str);
  const std::string preset = kv.get_string("model.preset", "mini");
  ModelConfig mc;
  if (preset == "mini") {
    mc = ModelConfig::mini(family);
  } else if (preset == "full") {
    mc = ModelConfig::full_scale(family);
  } else {
    throw ConfigError("config key 'model.preset': expected mini|full, got '" + preset + "'");
  }
  mc.input_resolution = kv.get_int("model.input_resolution", 96);
  mc.num_classes = kv.get_int("model.classes", mc.num_classes);
  mc.stem_channels = kv.get_int("model.stem_channels", mc.stem_channels);
  mc.stem_kernel = kv.get_int("model.stem_kernel", mc.stem_kernel);
  mc.stage_blocks = kv.get_int_list("model.stage_blocks", mc.stage_blocks);
  mc.stage_channels = kv.get_int_list("model.stage_channels", mc.stage_channels);
  mc.growth_rate = kv.get_int("model.growth_rate", mc.growth_rate);
  mc.compression = kv.get_double("model.compression", mc.compression);
  mc.dense_bottleneck = kv.get_bool("model.dense_bottleneck", mc.dense_bottleneck);
  const std::string placement = kv.get_string("model.attention_placement", "per_stage");
  if (placement == "per_stage") {
    mc.attention_placement = AttentionPlacement::per_stage;
  } else if (placement == "per_block") {
    mc.attention_placement = AttentionPlacement::per_block;
  } else {
    throw ConfigError("config key 'model.attention_placement': expected per_stage|per_block");
  }
  mc.reduction_ratio = kv.get_int("model.reduction_ratio", mc.reduction_ratio);
  mc.attention_depth = kv.get_int("model.attention_depth", mc.attention_depth);
  mc.attention_trunk_units = kv.get_int("model.trunk_units", mc.attention_trunk_units);
  mc.seed = setup.seed;
  setup.model = mc;

  setup.train.learning_rate = kv.get_double("train.learning_rate", 0.001);
  setup.train.beta1 = kv.get_double("train.beta1", 0.9);
  setup.train.beta2 = kv.get_double("train.beta2", 0.999);
  setup.train.eps = kv.get_double("train.eps", 1e-8);
  setup.train.epochs = kv.get_int("train.epochs", 50);
  setup.train.batch_size = kv.get_int("train.batch_size", 16);
  setup.train.early_stop = kv.get_bool("train.early_stop", false);
  setup.train.early_stop_patience = kv.get_int("train.early_stop_patience", 5);
  setup.train.seed = setup.seed;
  kv.finish();
  return setup;
}

std::string resolved_config_text(const ResolvedTrainSetup& s) {
  std::ostringstream os;
  os << "seed=" << s.seed << "\n";
  os << "data.path=" << s.data_path << "\n";
  os << "data.lenient=" << (s.lenient ? 1 : 0) << "\n";
  const ModelConfig& m = s.model;
  os << "model.family=" << family_name(m.family) << "\n";
  os << "model.input_resolution=" << m.input_resolution << "\n";
  os << "model.classes=" << m.num_classes << "\n";
  os << "model.stem_channels=" << m.stem_channels << "\n";
  os << "model.stem_kernel=" << m.stem_kernel << "\n";
  auto join = [](const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
  };
  os << "model.stage_blocks=" << join(m.stage_blocks) << "\n";
  os << "model.stage_channels=" << join(m.stage_channels) << "\n";
  os << "model.growth_rate=" << m.growth_rate << "\n";
  os << "model.compression=" << m.compression << "\n";
  os << "model.dense_bottleneck=" << (m.dense_bottleneck ? 1 : 0) << "\n";
  os << "model.attention_placement="
     << (m.attention_placement == AttentionPlacement::per_stage ? "per_stage" : "per_block")
     << "\n";
  os << "model.reduction_ratio=" << m.reduction_ratio << "\n";
  os << "model.attention_depth=" << m.attention_depth << "\n";
  os << "model.trunk_units=" << m.attention_trunk_units << "\n";
  const TrainConfig& t = s.train;
  os << "train.learning_rate=" << t.learning_rate << "\n";
  os << "train.beta1=" << t.beta1 << "\n";
  os << "train.beta2=" << t.beta2 << "\n";
  os << "train.eps=" << t.eps << "\n";
  os << "train.epochs=" << t.epochs << "\n";
  os << "train.batch_size=" << t.batch_size << "\n";
  os << "train.early_stop=" << (t.early_stop ? 1 : 0) << "\n";
  os << "train.early_stop_patience=" << t.early_stop_patience << "\n";
  return os.str();
}

int cmd_synth(const std::string& spec_file, const std::string& out_dir, const std::uint64_t* seed,
              const int* count, const int* size, bool single_cell, std::ostream& out) {
  SyntheticSpec spec = spec_file.empty() ? SyntheticSpec::default_five()
                                         : parse_synthetic_spec(read_text(spec_file));
  if (seed) spec.seed = *seed;
  if (count) spec.per_class = *count;
  if (size) spec.image_size = *size;
  if (single_cell) spec.single_cell = true;
  write_synthetic_dataset(spec, out_dir);
  out << "wrote " << spec.classes.size() << " classes x " << spec.per_class << " images ("
      << spec.image_size << "x" << spec.image_size << ") to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_file, const std::string& out_dir,
              const std::uint64_t* seed_override, std::ostream& out) {
  KvConfig kv = KvConfig::from_file(config_file);
  ResolvedTrainSetup setup = resolve_train_config(kv, seed_override);
  setup.model.validate();

  fs::create_directories(out_dir);
  Dataset ds = load_image_directory(setup.data_path, setup.model.input_resolution, setup.lenient);
  if (ds.num_classes() != setup.model.num_classes) {
    throw ConfigError("config key 'model.classes': dataset has " +
                      std::to_string(ds.num_classes()) + " classes, config says " +
                      std::to_string(setup.model.num_classes));
  }
  DatasetSplit split = stratified_split(ds, {0.7, 0.2, 0.1}, setup.seed);
  const NormStats stats = normalize_in_place(ds, split);

  auto model = build_model<float>(setup.model);
  out << "training " << family_name(setup.model.family) << " ("
      << count_parameters(*model) << " parameters) on " << split.train.size()
      << " train / " << split.validation.size() << " validation / " << split.test.size()
      << " test samples\n";
  TrainResult result = train_model(*model, ds, split, setup.train);

  const fs::path dir(out_dir);
  write_file_bytes(dir / "checkpoint.cyt", result.best_checkpoint);
  {
    std::ostringstream hist;
    hist << "epoch,train_loss,val_accuracy\n";
    for (const auto& r : result.history) {
      hist << format_history_row(r.epoch, r.train_loss, r.val_accuracy);
    }
    write_text(dir / "history.csv", hist.str());
  }
  write_text(dir / "split_manifest.txt", format_split_manifest(ds, split));
  write_text(dir / "resolved_config.txt", resolved_config_text(setup));

  RunManifest manifest;
  manifest.tool_version = kVersion;
  manifest.command = "train";
  manifest.seed = setup.seed;
  const KvConfig config_echo = KvConfig::parse(resolved_config_text(setup));
  for (const auto& [k, v] : config_echo.values()) {
    manifest.config[k] = v;
  }
  manifest.norm_stats = stats;
  manifest.has_norm_stats = true;
  manifest.artifacts["checkpoint"] = (dir / "checkpoint.cyt").string();
  manifest.artifacts["history"] = (dir / "history.csv").string();
  manifest.artifacts["split_manifest"] = (dir / "split_manifest.txt").string();
  manifest.artifacts["resolved_config"] = (dir / "resolved_config.txt").string();

  if (setup.train.epochs > 0) {
    checkpoint_load_into(*model, result.best_checkpoint);
    const MetricsReport test = evaluate_model(*model, ds, split.test, setup.train.batch_size);
    write_text(dir / "metrics_test.txt", format_metrics_report(test, ds.class_names));
    manifest.artifacts["metrics_test"] = (dir / "metrics_test.txt").string();
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", test.accuracy);
    manifest.metrics["test_accuracy"] = buf;
    std::snprintf(buf, sizeof(buf), "%.6f", test.weighted_f1);
    manifest.metrics["test_weighted_f1"] = buf;
    std::snprintf(buf, sizeof(buf), "%.6f", result.best_val_accuracy);
    manifest.metrics["best_val_accuracy"] = buf;
    manifest.metrics["best_epoch"] = std::to_string(result.best_epoch);
    out << "best epoch " << result.best_epoch << " (validation accuracy "
        << result.best_val_accuracy << "); test accuracy " << test.accuracy << ", weighted F1 "
        << test.weighted_f1 << "\n";
  } else {
    out << "epochs=0: wrote initial-weights checkpoint, empty history\n";
  }
  manifest.write_file((dir / "manifest.txt").string());
  out << "run artifacts in " << out_dir << "\n";
  return 0;
}

struct LoadedRun {
  RunManifest manifest;
  Dataset dataset;
  DatasetSplit split;
  std::unique_ptr<NetworkGraph<float>> model;
};

LoadedRun load_run(const std::string& run_dir, bool with_dataset) {
  LoadedRun run;
  run.manifest = RunManifest::from_file((fs::path(run_dir) / "manifest.txt").string());
  auto cfg_it = run.manifest.artifacts.find("checkpoint");
  if (cfg_it == run.manifest.artifacts.end()) {
    throw IoError("manifest has no checkpoint artifact");
  }
  run.model = checkpoint_load<float>(read_file_bytes(cfg_it->second));
  if (with_dataset) {
    const auto path_it = run.manifest.config.find("data.path");
    if (path_it == run.manifest.config.end()) throw IoError("manifest has no data.path");
    const int res = run.model->config().input_resolution;
    const bool lenient = run.manifest.config.count("data.lenient")
                             ? run.manifest.config.at("data.lenient") == "1"
                             : false;
    run.dataset = load_image_directory(path_it->second, res, lenient);
    run.split = stratified_split(run.dataset, {0.7, 0.2, 0.1}, run.manifest.seed);
    for (auto& s : run.dataset.samples) apply_normalization(s.image, run.manifest.norm_stats);
  }
  return run;
}

int cmd_eval(const std::string& run_dir, const std::string& split_name, const std::string& out_file,
             std::ostream& out) {
  LoadedRun run = load_run(run_dir, true);
  const std::vector<int>& indices = run.split.part(split_name);
  const MetricsReport rep = evaluate_model(*run.model, run.dataset, indices, 16);
  const std::string text = format_metrics_report(rep, run.dataset.class_names);
  const fs::path target = out_file.empty()
                              ? fs::path(run_dir) / ("metrics_" + split_name + ".txt")
                              : fs::path(out_file);
  write_text(target, text);
  out << text;
  out << "report written to " << target.string() << "\n";
  return 0;
}

int cmd_explain(const std::string& run_dir, const std::string& image_path,
                const std::string& sample_id, int steps, const std::string& baseline_mode,
                const int* target_flag, const std::string& out_dir, std::ostream& out) {
  if ((image_path.empty()) == (sample_id.empty())) {
    throw ConfigError("explain: exactly one of --image / --sample is required");
  }
  if (steps < 1) throw ConfigError("explain: --steps must be >= 1");
  if (baseline_mode != "black") {
    throw ConfigError("explain: unsupported baseline '" + baseline_mode + "' (available: black)");
  }

  LoadedRun run = load_run(run_dir, !sample_id.empty());
  const int res = run.model->config().input_resolution;
  const NormStats& stats = run.manifest.norm_stats;

  Tensor<float> pixels;  // (3,res,res) in [0,1], pre-normalization
  std::string source;
  if (!image_path.empty()) {
    const ImageU8 img = decode_image(read_file_bytes(image_path), image_path);
    pixels = image_to_tensor(img);
    if (img.height != res || img.width != res) {
      out << "notice: resizing " << img.width << "x" << img.height << " input to " << res << "x"
          << res << "\n";
      pixels = resize_bilinear(pixels, res, res);
    }
    source = image_path;
  } else {
    bool found = false;
    for (const auto& s : run.dataset.samples) {
      if (s.id == sample_id) {
        pixels = s.image;  // already normalized by load_run
        // de-normalize back to pixel space for rendering
        for (int c = 0; c < 3; ++c) {
          const float m = static_cast<float>(stats.mean[static_cast<std::size_t>(c)]);
          const float sd = static_cast<float>(stats.stdev[static_cast<std::size_t>(c)]);
          float* p = pixels.data() + static_cast<std::size_t>(c) * res * res;
          for (int i = 0; i < res * res; ++i) p[static_cast<std::size_t>(i)] = p[static_cast<std::size_t>(i)] * sd + m;
        }
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("explain: sample id '" + sample_id + "' not found in dataset");
    source = sample_id;
  }

  Tensor<float> input = pixels;
  apply_normalization(input, stats);
  Tensor<float> baseline({3, res, res});  // black image in pixel space
  apply_normalization(baseline, stats);

  auto fn = model_logit_fn(*run.model, Mode::eval);
  Shape batched{1, 3, res, res};
  const Tensor<float> probs = predict_probs(*run.model, Tensor<float>(batched, input.vec()));
  const int predicted = argmax_rows(probs)[0];
  const int target = target_flag ? *target_flag : predicted;
  if (target < 0 || target >= run.model->config().num_classes) {
    throw ConfigError("explain: --target out of range");
  }

  AttributionMap ig = integrated_gradients(fn, input, baseline, steps, target);
  ig.baseline_desc = "black (zeros in pixel space, normalized by training statistics)";
  const Tensor<double> grad = saliency(fn, input, target);

  fs::create_directories(out_dir);
  const std::string stem =
      fs::path(source).stem().string().empty() ? "sample" : fs::path(source).stem().string();
  const fs::path dir(out_dir);
  const ImageU8 original = tensor_to_image(pixels);
  write_file_bytes(dir / (stem + "_original.png"), encode_png(original));
  bool zero_warning = false;
  write_file_bytes(dir / (stem + "_gradient_overlay.png"),
                   encode_png(render_attribution(original, grad, RenderMode::overlay, &zero_warning)));
  write_file_bytes(dir / (stem + "_ig_overlay.png"),
                   encode_png(render_attribution(original, ig.attributions, RenderMode::overlay)));
  write_file_bytes(dir / (stem + "_gradient.png"),
                   encode_png(render_attribution(original, grad, RenderMode::raw)));
  write_file_bytes(dir / (stem + "_ig.png"),
                   encode_png(render_attribution(original, ig.attributions, RenderMode::raw)));
  write_text(dir / (stem + "_report.txt"), format_attribution_report(ig, predicted, source));
  if (zero_warning) out << "warning: all-zero attributions; overlays show the plain image\n";
  out << "target class " << target << " (predicted " << predicted << "), steps " << steps
      << ", completeness gap " << ig.completeness_gap << "\n";
  out << "wrote 5 panels + report to " << out_dir << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"train, evaluate and explain attention-based image classifiers"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-cell dataset");
  std::string synth_spec, synth_out;
  std::uint64_t synth_seed = 0;
  int synth_count = 0, synth_size = 0;
  bool synth_single = false;
  synth->add_option("--spec", synth_spec, "spec file (key=value)");
  synth->add_option("--out", synth_out, "output directory")->required();
  auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "generator seed");
  auto* synth_count_opt = synth->add_option("--count", synth_count, "images per class");
  auto* synth_size_opt = synth->add_option("--size", synth_size, "image size in pixels");
  synth->add_flag("--single-cell", synth_single, "one centered blob per image");

  // train
  auto* train = app.add_subcommand("train", "train a model from a config file");
  std::string train_config, train_out;
  std::uint64_t train_seed = 0;
  train->add_option("--config", train_config, "config file")->required();
  train->add_option("--out", train_out, "output directory")->required();
  auto* train_seed_opt = train->add_option("--seed", train_seed, "seed override");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a trained run on one split");
  std::string eval_run, eval_split = "test", eval_out;
  eval->add_option("--run", eval_run, "run directory (contains manifest.txt)")->required();
  eval->add_option("--split", eval_split, "train|validation|test");
  eval->add_option("--out", eval_out, "metrics output file");

  // explain
  auto* explain = app.add_subcommand("explain", "attribution maps for one input");
  std::string ex_run, ex_image, ex_sample, ex_baseline = "black", ex_out = ".";
  int ex_steps = 50, ex_target = 0;
  explain->add_option("--run", ex_run, "run directory")->required();
  explain->add_option("--image", ex_image, "input image file (PNG/BMP)");
  explain->add_option("--sample", ex_sample, "dataset sample id");
  explain->add_option("--steps", ex_steps, "integration steps");
  explain->add_option("--baseline", ex_baseline, "baseline mode (black)");
  auto* ex_target_opt = explain->add_option("--target", ex_target, "target class index");
  explain->add_option("--out", ex_out, "output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) {
      return cmd_synth(synth_spec, synth_out, synth_seed_opt->count() ? &synth_seed : nullptr,
                       synth_count_opt->count() ? &synth_count : nullptr,
                       synth_size_opt->count() ? &synth_size : nullptr, synth_single, out);
    }
    if (train->parsed()) {
      return cmd_train(train_config, train_out,
                       train_seed_opt->count() ? &train_seed : nullptr, out);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_run, eval_split, eval_out, out);
    }
    if (explain->parsed()) {
      return cmd_explain(ex_run, ex_image, ex_sample, ex_steps, ex_baseline,
                         ex_target_opt->count() ? &ex_target : nullptr, ex_out, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << "error: no command\n";
  return 2;
}

}  // namespace cytonet::cli
