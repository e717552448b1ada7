#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "tidm/checkpoint.hpp"
#include "tidm/codec.hpp"
#include "tidm/conditioning.hpp"
#include "tidm/dataset.hpp"
#include "tidm/evaluate.hpp"
#include "tidm/gradcheck.hpp"
#include "tidm/image_io.hpp"
#include "tidm/metrics_log.hpp"
#include "tidm/probe.hpp"
#include "tidm/sampler.hpp"
#include "tidm/schedule.hpp"
#include "tidm/trainer.hpp"

namespace tidm::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string normalise_key(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

// Records what a run consumed and produced; written as out-dir/run.manifest.
class Manifest {
 public:
  void input(const std::string& path) { lines_.push_back("input " + path + " fnv1a64=" + hex(file_checksum(path))); }
  void output(const std::string& path) { lines_.push_back("output " + path + " fnv1a64=" + hex(file_checksum(path))); }
  void note(const std::string& line) { lines_.push_back(line); }

  void write(const fs::path& dir, const std::string& command, std::uint64_t seed, const std::string& config) const {
    std::ofstream out(dir / "run.manifest", std::ios::binary);
    out << "tool " << kToolVersion << "\ncommand " << command << "\nseed " << seed << "\n[config]\n" << config;
    if (!config.empty() && config.back() != '\n') out << '\n';
    out << "[files]\n";
    for (const auto& l : lines_) out << l << '\n';
    if (!out) throw RuntimeFailure("cannot write " + (dir / "run.manifest").string());
  }

 private:
  std::vector<std::string> lines_;
};

struct Globals {
  std::string config;
  std::uint64_t seed = 1;
  std::string out_dir = ".";
};

// Identity/background counts come from the grammar tokens of a vocabulary.
std::pair<int, int> grammar_size(const Vocabulary& vocab) {
  int k = 0, m = 0;
  for (const auto& t : vocab.tokens()) {
    if (identity_of(t)) ++k;
    if (t.size() > 2 && t.starts_with("bg") && std::all_of(t.begin() + 2, t.end(), ::isdigit)) ++m;
  }
  return {k, m};
}

Vocabulary data_vocab(const std::string& data_dir) {
  const fs::path p = fs::path(data_dir) / "vocab.txt";
  if (!fs::exists(p)) throw ValueError("no vocab.txt in " + data_dir + " (written by make-data)");
  return Vocabulary::load(p.string());
}

std::vector<std::string> sorted_ppm(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ValueError("not a directory: " + dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".ppm") out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

// One generated sample directory: samples.manifest lines are
// "file<TAB>seed<TAB>index<TAB>prompt".
struct SampleDir {
  Tensor<float> images;
  std::string prompt;
};

SampleDir read_samples(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "samples.manifest");
  if (!in) throw ValueError("no samples.manifest in " + dir);
  SampleDir s;
  std::vector<Tensor<float>> images;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    if (fields.size() != 4) throw ValueError("malformed samples.manifest line: " + line);
    if (!s.prompt.empty() && s.prompt != fields[3]) throw ValueError("samples in " + dir + " mix prompts");
    s.prompt = fields[3];
    images.push_back(read_ppm((fs::path(dir) / fields[0]).string()));
  }
  if (images.empty()) throw ValueError("empty sample directory " + dir);
  s.images = stack<float>(images);
  return s;
}

int prompt_identity(const std::string& subject, int placeholder_identity) {
  if (auto k = identity_of(subject)) return *k;
  return placeholder_identity;
}

}  // namespace

std::map<std::string, std::string> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValueError("cannot open config file " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValueError(path + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    std::string key = normalise_key(trim(line.substr(0, eq)));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw ValueError(path + ":" + std::to_string(number) + ": empty key");
    out[key] = value;
  }
  return out;
}

int run(const std::vector<std::string>& args_in) {
  CLI::App app{"Text- and anchor-guided latent diffusion on a toy sprite corpus", "tidm"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kToolVersion);

  Globals g;
  app.add_option("--config", g.config, "key = value file; command-line flags override it");
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out-dir", g.out_dir, "Output directory");

  // make-data
  DatasetConfig data_cfg;
  auto* make_data = app.add_subcommand("make-data", "Render the captioned sprite corpus");
  make_data->add_option("--scenes", data_cfg.scenes);
  make_data->add_option("--identities", data_cfg.identities);
  make_data->add_option("--backgrounds", data_cfg.backgrounds);
  make_data->add_option("--group-size", data_cfg.group_size);
  make_data->add_flag("--include-held-out", data_cfg.include_held_out, "Also use the held-out identity");

  // train-codec
  std::string data_dir;
  CodecConfig codec_cfg;
  CodecTrainConfig codec_train;
  auto* train_codec_cmd = app.add_subcommand("train-codec", "Train the latent autoencoder");
  train_codec_cmd->add_option("--data", data_dir)->required();
  train_codec_cmd->add_option("--epochs", codec_train.epochs);
  train_codec_cmd->add_option("--batch", codec_train.batch_size);
  train_codec_cmd->add_option("--lr", codec_train.learning_rate);
  train_codec_cmd->add_option("--latent-channels", codec_cfg.latent_channels);

  // train-probe
  ProbeConfig probe_cfg;
  auto* train_probe_cmd = app.add_subcommand("train-probe", "Train the evaluation classifier");
  train_probe_cmd->add_option("--data", data_dir)->required();
  train_probe_cmd->add_option("--epochs", probe_cfg.epochs);
  train_probe_cmd->add_option("--batch", probe_cfg.batch_size);
  train_probe_cmd->add_option("--lr", probe_cfg.learning_rate);
  train_probe_cmd->add_option("--noise", probe_cfg.noise_std);
  train_probe_cmd->add_flag("--shuffle-labels", probe_cfg.shuffle_labels);

  // train-base
  std::string codec_path;
  TrainConfig train_cfg;
  ModelConfig model_cfg;
  auto* train_base_cmd = app.add_subcommand("train-base", "Train the text + two-stream denoiser");
  train_base_cmd->add_option("--data", data_dir)->required();
  train_base_cmd->add_option("--codec", codec_path)->required();
  train_base_cmd->add_option("--epochs", train_cfg.epochs);
  train_base_cmd->add_option("--batch", train_cfg.batch_size);
  train_base_cmd->add_option("--lr", train_cfg.learning_rate);
  train_base_cmd->add_option("--max-steps", train_cfg.max_steps, "Stop after this many steps (0 = all epochs)");
  train_base_cmd->add_option("--text-drop", train_cfg.text_drop_prob);
  train_base_cmd->add_option("--anchor-drop", train_cfg.anchor_drop_prob);
  train_base_cmd->add_option("--base-channels", model_cfg.denoiser.base_channels);
  train_base_cmd->add_option("--embed-dim", model_cfg.text.embed_dim);
  train_base_cmd->add_option("--text-length", model_cfg.text.length);

  // finetune
  std::string base_path, vocab_path, instances_dir;
  std::vector<std::string> instance_files;
  DreamboothConfig db;
  auto* finetune_cmd = app.add_subcommand("finetune", "Bind a placeholder token to 3-5 instance images");
  finetune_cmd->add_option("--base", base_path)->required();
  finetune_cmd->add_option("--codec", codec_path)->required();
  finetune_cmd->add_option("--vocab", vocab_path)->required();
  finetune_cmd->add_option("--instance", instance_files, "Instance image (repeatable)");
  finetune_cmd->add_option("--instances", instances_dir, "Directory of instance .ppm images");
  finetune_cmd->add_option("--placeholder", db.placeholder);
  finetune_cmd->add_option("--instance-prompt", db.instance_prompt)->required();
  finetune_cmd->add_option("--class-prompt", db.class_prompt)->required();
  finetune_cmd->add_option("--lambda", db.lambda_prior);
  finetune_cmd->add_option("--prior-size", db.prior_set_size);
  finetune_cmd->add_option("--prior-batch", db.prior_batch);
  finetune_cmd->add_option("--steps", db.steps);
  finetune_cmd->add_option("--lr", db.learning_rate);

  // generate
  std::string model_path, prompt, anchor_path;
  SamplerConfig sample_cfg;
  std::optional<double> strength;
  auto* generate_cmd = app.add_subcommand("generate", "Sample images for a prompt");
  generate_cmd->add_option("--model", model_path)->required();
  generate_cmd->add_option("--codec", codec_path)->required();
  generate_cmd->add_option("--vocab", vocab_path)->required();
  generate_cmd->add_option("--prompt", prompt)->required();
  generate_cmd->add_option("--anchor", anchor_path, "Anchor image (.ppm)");
  generate_cmd->add_option("--steps", sample_cfg.steps);
  generate_cmd->add_option("--guidance", sample_cfg.guidance);
  generate_cmd->add_option("--strength", strength, "Default 1.0, or 0.75 with an anchor");
  generate_cmd->add_option("--batch", sample_cfg.batch);

  // eval
  std::string probe_path, mask_path, reference_dir;
  std::vector<std::string> sample_dirs, class_dirs;
  int placeholder_identity = -1;
  auto* eval_cmd = app.add_subcommand("eval", "Score generated sample directories");
  eval_cmd->add_option("--probe", probe_path)->required();
  eval_cmd->add_option("--samples", sample_dirs, "Directory written by generate (repeatable)");
  eval_cmd->add_option("--class-samples", class_dirs, "Class-prompt sample directory (repeatable)");
  eval_cmd->add_option("--mask", mask_path, "Background mask for the consistency metric");
  eval_cmd->add_option("--placeholder-identity", placeholder_identity, "Identity a placeholder token stands for");
  eval_cmd->add_option("--codec", codec_path);
  eval_cmd->add_option("--reference", reference_dir, "Data directory for codec round-trip PSNR");

  // gradcheck
  bool full = false;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op and loss");
  gradcheck_cmd->add_flag("--full", full, "Probe every coordinate of the model losses");

  // Config file values are spliced in front of the user's own flags, and
  // only for flags the user did not give.
  std::vector<std::string> args(args_in.begin() + (args_in.empty() ? 0 : 1), args_in.end());
  try {
    std::string config_path;
    CLI::App* selected = nullptr;
    std::size_t selected_at = 0;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
      if (args[i].starts_with("--config=")) config_path = args[i].substr(9);
      if (!selected && !args[i].starts_with("-")) {
        for (auto* sub : app.get_subcommands([](CLI::App*) { return true; })) {
          if (sub->get_name() == args[i]) {
            selected = sub;
            selected_at = i;
          }
        }
      }
    }
    if (!config_path.empty()) {
      const auto given = [&](const std::string& key) {
        return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
          return a == "--" + key || a.starts_with("--" + key + "=");
        });
      };
      std::vector<std::string> global_extra, sub_extra;
      for (const auto& [key, value] : read_config(config_path)) {
        if (key == "config" || given(key)) continue;
        const std::string flag = "--" + key + "=" + value;
        if (app.get_option_no_throw("--" + key)) {
          global_extra.push_back(flag);
        } else if (selected && selected->get_option_no_throw("--" + key)) {
          sub_extra.push_back(flag);
        } else {
          bool known = false;
          for (auto* sub : app.get_subcommands([](CLI::App*) { return true; }))
            known = known || sub->get_option_no_throw("--" + key);
          if (!known) throw ValueError(config_path + ": unknown key '" + key + "'");
        }
      }
      if (selected) args.insert(args.begin() + static_cast<std::ptrdiff_t>(selected_at) + 1, sub_extra.begin(), sub_extra.end());
      args.insert(args.begin(), global_extra.begin(), global_extra.end());
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return invalid;
  }

  const fs::path out(g.out_dir);
  Manifest manifest;
  auto config_text = [&](CLI::App* sub) {
    std::string text;
    for (CLI::App* a : {&app, sub}) {
      for (const CLI::Option* opt : a->get_options()) {
        if (opt->get_name() == "--help" || opt->get_name() == "--version") continue;
        std::string value;
        if (opt->count() > 0) {
          for (const auto& r : opt->results()) value += (value.empty() ? "" : " ") + r;
        } else {
          value = opt->get_default_str();
          if (value.empty() && opt->get_expected_min() == 0) value = "false";
        }
        text += opt->get_name().substr(2) + " = " + value + "\n";
      }
    }
    return text;
  };
  auto logger = [&]() { return std::make_shared<MetricsLog>((out / "metrics.log").string()); };
  const NoiseSchedule schedule = make_linear_schedule();

  try {
    fs::create_directories(out);
    if (*make_data) {
      data_cfg.seed = g.seed;
      const Dataset data = make_dataset(data_cfg);
      write_dataset(data, out.string());
      Vocabulary::grammar(data_cfg.identities, data_cfg.backgrounds).save((out / "vocab.txt").string());
      manifest.output((out / "captions.txt").string());
      manifest.output((out / "scenes.txt").string());
      manifest.output((out / "vocab.txt").string());
      manifest.note("scenes " + std::to_string(data.size()));
      manifest.write(out, "make-data", g.seed, config_text(make_data));
      std::cout << "wrote " << data.size() << " scenes to " << out.string() << '\n';
    } else if (*train_codec_cmd) {
      const Dataset data = read_dataset(data_dir);
      codec_train.seed = g.seed;
      auto log = logger();
      const CodecTrainResult r = train_codec(data.images, codec_cfg, codec_train, log->sink());
      const std::string path = (out / "codec.ckpt").string();
      save_checkpoint(path, r.params);
      manifest.input((fs::path(data_dir) / "scenes.txt").string());
      manifest.output(path);
      manifest.write(out, "train-codec", g.seed, config_text(train_codec_cmd));
      std::cout << "codec final mse " << r.final_mse << " -> " << path << '\n';
    } else if (*train_probe_cmd) {
      const Dataset data = read_dataset(data_dir);
      const auto [k, m] = grammar_size(data_vocab(data_dir));
      probe_cfg.seed = g.seed;
      auto log = logger();
      const ProbeTrainResult r = train_probe_classifier(data, k, m, probe_cfg, log->sink());
      const std::string path = (out / "probe.ckpt").string();
      save_checkpoint(path, r.params);
      manifest.input((fs::path(data_dir) / "scenes.txt").string());
      manifest.output(path);
      manifest.write(out, "train-probe", g.seed, config_text(train_probe_cmd));
      std::cout << "probe train accuracy left " << r.train_accuracy.left << " right " << r.train_accuracy.right
                << " background " << r.train_accuracy.background << '\n';
    } else if (*train_base_cmd) {
      const Dataset data = read_dataset(data_dir);
      Vocabulary vocab = data_vocab(data_dir);
      const LatentCodec codec(load_checkpoint(codec_path));
      model_cfg.denoiser.latent_channels = codec.config().latent_channels;
      model_cfg.denoiser.context_dim = model_cfg.text.embed_dim;
      train_cfg.seed = g.seed;
      auto log = logger();
      const TrainResult r = train_base(codec, data, vocab, schedule, model_cfg, train_cfg, log->sink());
      const std::string path = (out / "base.ckpt").string();
      save_checkpoint(path, r.params);
      vocab.save((out / "vocab.txt").string());
      manifest.input(codec_path);
      manifest.input((fs::path(data_dir) / "scenes.txt").string());
      manifest.output(path);
      manifest.output((out / "vocab.txt").string());
      manifest.note("steps " + std::to_string(r.steps));
      manifest.write(out, "train-base", g.seed, config_text(train_base_cmd));
      std::cout << "base loss " << r.epoch_loss.front() << " -> " << r.epoch_loss.back() << " after " << r.steps
                << " steps -> " << path << '\n';
    } else if (*finetune_cmd) {
      std::vector<std::string> files = instance_files;
      if (!instances_dir.empty()) {
        const auto more = sorted_ppm(instances_dir);
        files.insert(files.end(), more.begin(), more.end());
      }
      if (files.empty()) throw ValueError("finetune: give --instance images or --instances <dir>");
      for (const auto& f : files) db.instance_images.push_back(read_ppm(f));
      db.seed = g.seed;
      const LatentCodec codec(load_checkpoint(codec_path));
      auto log = logger();
      const DreamboothResult r =
          finetune_dreambooth(load_checkpoint(base_path), codec, Vocabulary::load(vocab_path), schedule, db, log->sink());
      const std::string path = (out / "finetuned.ckpt").string();
      save_checkpoint(path, r.params);
      Vocabulary vocab = r.vocab;
      vocab.save((out / "vocab.txt").string());
      manifest.input(base_path);
      manifest.input(codec_path);
      for (const auto& f : files) manifest.input(f);
      manifest.output(path);
      manifest.output((out / "vocab.txt").string());
      manifest.write(out, "finetune", g.seed, config_text(finetune_cmd));
      std::cout << "finetuned '" << db.placeholder << "' over " << db.steps << " steps -> " << path << '\n';
    } else if (*generate_cmd) {
      const LatentCodec codec(load_checkpoint(codec_path));
      const ParamStore<float> params = load_checkpoint(model_path);
      const Vocabulary vocab = Vocabulary::load(vocab_path);
      std::optional<Tensor<float>> anchor;
      if (!anchor_path.empty()) anchor = read_ppm(anchor_path);
      sample_cfg.strength = strength;
      sample_cfg.seed = g.seed;
      const Tensor<float> images = generate(codec, params, vocab, schedule, prompt, anchor, sample_cfg);
      std::ofstream lines(out / "samples.manifest", std::ios::binary);
      for (int i = 0; i < images.dim(0); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%02d.ppm", i);
        write_ppm((out / name).string(), images.slice0(i));
        lines << name << '\t' << g.seed << '\t' << i << '\t' << prompt << '\n';
        manifest.output((out / name).string());
      }
      lines.close();
      if (!lines) throw RuntimeFailure("cannot write samples.manifest");
      manifest.input(model_path);
      manifest.input(codec_path);
      manifest.input(vocab_path);
      if (anchor) manifest.input(anchor_path);
      manifest.note("strength " + std::to_string(sample_cfg.resolved_strength(anchor.has_value())));
      manifest.write(out, "generate", g.seed, config_text(generate_cmd));
      std::cout << "wrote " << images.dim(0) << " samples to " << out.string() << '\n';
    } else if (*eval_cmd) {
      if (sample_dirs.empty() && class_dirs.empty()) throw ValueError("eval: no --samples or --class-samples given");
      const ParamStore<float> probe = load_checkpoint(probe_path);
      std::optional<Tensor<float>> mask;
      if (!mask_path.empty()) mask = read_mask(mask_path);
      std::vector<GeneratedBatch> batches;
      auto add = [&](const std::string& dir, bool cls) {
        SampleDir s = read_samples(dir);
        const CaptionParts parts = parse_caption(s.prompt);
        GeneratedBatch b;
        b.images = std::move(s.images);
        b.identity_a = prompt_identity(parts.subject_a, placeholder_identity);
        b.identity_b = prompt_identity(parts.subject_b, placeholder_identity);
        b.class_prompt = cls;
        b.mask = mask;
        batches.push_back(std::move(b));
        manifest.input((fs::path(dir) / "samples.manifest").string());
      };
      for (const auto& d : sample_dirs) add(d, false);
      for (const auto& d : class_dirs) add(d, true);
      std::optional<LatentCodec> codec;
      std::optional<Tensor<float>> reference;
      if (!reference_dir.empty()) {
        if (codec_path.empty()) throw ValueError("eval: --reference needs --codec");
        codec.emplace(load_checkpoint(codec_path));
        reference = read_dataset(reference_dir).images;
      }
      const EvalReport r = evaluate(probe, batches, codec ? &*codec : nullptr, reference ? &*reference : nullptr);
      std::ostringstream report;
      report << "identity_accuracy = " << r.identity_accuracy << "\nidentity_accuracy_a = " << r.identity_accuracy_a
             << "\nidentity_accuracy_b = " << r.identity_accuracy_b << "\nclass_accuracy = " << r.class_accuracy
             << "\nbackground_consistency = " << r.background_consistency
             << "\nreconstruction_psnr = " << r.reconstruction_psnr << "\nidentity_samples = " << r.identity_samples
             << "\nclass_samples = " << r.class_samples << "\nconsistency_batches = " << r.consistency_batches
             << "\npsnr_samples = " << r.psnr_samples << '\n';
      std::ofstream((out / "eval.txt").string(), std::ios::binary) << report.str();
      manifest.input(probe_path);
      manifest.output((out / "eval.txt").string());
      manifest.write(out, "eval", g.seed, config_text(eval_cmd));
      std::cout << report.str();
    } else if (*gradcheck_cmd) {
      const auto cases = run_gradcheck_suite(g.seed, full);
      bool pass = true;
      for (const auto& c : cases) {
        const bool ok_case = c.report.max_rel_error <= kGradCheckTolerance;
        pass = pass && ok_case;
        std::printf("%-26s max_rel_error %.3e over %zu coords (worst %s) %s\n", c.name.c_str(), c.report.max_rel_error,
                    c.report.coordinates, c.report.worst_param.c_str(), ok_case ? "ok" : "FAIL");
      }
      manifest.note(std::string("result ") + (pass ? "pass" : "fail"));
      manifest.write(out, "gradcheck", g.seed, config_text(gradcheck_cmd));
      return pass ? ok : failure;
    }
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return invalid;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return failure;
  }
  return ok;
}

}  // namespace tidm::cli
