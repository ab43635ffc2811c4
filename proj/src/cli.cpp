// Copyright 2026 The histoclean Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "histoclean/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "histoclean/evaluation.hpp"
#include "histoclean/image.hpp"

namespace histoclean::cli {
namespace {

namespace fs = std::filesystem;

struct Raw {
  std::uint64_t seed = 0;
  bool deterministic = false;
  int verbosity = 0;

  SynthArgs synth;
  SplitArgs split;
  TrainArgs train;
  std::string variant = "base";
  std::string arch;
  EvalArgs eval;
  CleanArgs clean;
  MosaicArgs mosaic;
};

void add_globals(CLI::App& app, Raw& r) {
  app.add_option("--seed", r.seed, "Random seed for every stochastic step")->capture_default_str();
  app.add_flag("--deterministic", r.deterministic, "Bit-reproducible outputs (wall-clock column written as 0)");
  app.add_flag("-v,--verbose", r.verbosity, "Progress output (repeat for more)");
}

void setup(CLI::App& app, Raw& r) {
  app.require_subcommand(1, 1);
  app.fallthrough();
  add_globals(app, r);

  auto* synth = app.add_subcommand("synth", "Render a synthetic paired artifact/clean corpus");
  synth->add_option("--scenes", r.synth.spec.n_scenes, "Number of scenes")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--classes", r.synth.spec.classes, "Artifact classes to render (0-6)")
      ->delimiter(',')
      ->capture_default_str()
      ->check(CLI::Range(0, 6));
  synth->add_option("--tile-size", r.synth.spec.tile_size, "Tile edge in pixels")->capture_default_str()->check(CLI::Range(16, 4096));
  synth->add_option("--out", r.synth.out, "Output directory")->required();

  auto* split = app.add_subcommand("split", "Assign a stratified train/test split to a manifest");
  split->add_option("--data", r.split.data, "Input manifest")->required()->check(CLI::ExistingFile);
  split->add_option("--fraction", r.split.fraction, "Train fraction")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  split->add_option("--out", r.split.out, "Output manifest (default: overwrite input)");

  auto* train = app.add_subcommand("train", "Train one model variant");
  auto& c = r.train.config;
  train->add_option("--variant", r.variant, "Model variant")
      ->capture_default_str()
      ->check(CLI::IsMember({"base", "dpa", "cond", "no_aba", "attn", "ws"}));
  train->add_option("--data", r.train.data, "Training manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--out", r.train.out, "Run directory")->required();
  train->add_option("--resume", r.train.resume, "Checkpoint, marker or run directory to continue from");
  train->add_option("--epochs", c.epochs, "Training epochs")->capture_default_str()->check(CLI::NonNegativeNumber);
  train->add_option("--batch-size", c.batch_size, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--lr", c.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--beta1", c.beta1, "Adam beta1")->capture_default_str()->check(CLI::Range(0.0, 0.999999));
  train->add_option("--beta2", c.beta2, "Adam beta2")->capture_default_str()->check(CLI::Range(0.0, 0.999999));
  train->add_option("--lr-decay", c.lr_decay, "Per-epoch exponential learning-rate decay")
      ->capture_default_str()
      ->check(CLI::Range(1e-12, 1.0));
  train->add_option("--weight-decay", c.weight_decay, "Decoupled weight decay")->capture_default_str()->check(CLI::NonNegativeNumber);
  train->add_option("--real-label", c.real_label, "Smoothed real target of the discriminators")
      ->capture_default_str()
      ->check(CLI::Range(1e-6, 1.0));
  train->add_option("--d-loss-factor", c.d_loss_factor, "Factor on the discriminator squared errors")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train->add_option("--lambda-aba", c.weights.aba, "A->B->A cycle weight")->capture_default_str()->check(CLI::NonNegativeNumber);
  train->add_option("--lambda-bab", c.weights.bab, "B->A->B cycle weight")->capture_default_str()->check(CLI::NonNegativeNumber);
  train->add_option("--lambda-a", c.weights.id_a, "Identity weight G_BA(a)~a")->capture_default_str()->check(CLI::NonNegativeNumber);
  train->add_option("--lambda-b", c.weights.id_b, "Identity weight G_AB(b)~b")->capture_default_str()->check(CLI::NonNegativeNumber);
  train->add_option("--lambda-cls", c.weights.cls, "Classifier weight (ws)")->capture_default_str()->check(CLI::NonNegativeNumber);
  train->add_option("--lambda-smooth", c.weights.smooth, "Mask smoothness weight (ws)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  train->add_option("--lambda-sparse", c.weights.sparse, "Mask sparsity weight (ws)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  train->add_option("--crop", c.augment.crop_size, "Random crop size")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--size", c.augment.out_size, "Network input size after resizing")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train->add_option("--flip-h", c.augment.flip_h_prob, "Horizontal flip probability")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  train->add_option("--flip-v", c.augment.flip_v_prob, "Vertical flip probability")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  train->add_option("--arch", r.arch, "Generator architecture (default: attention_unet for dpa, unet otherwise)")
      ->check(CLI::IsMember({"unet", "attention_unet"}));
  train->add_option("--base-width", c.base_width, "Generator base width")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--depth", c.depth, "Generator down/up levels")->capture_default_str()->check(CLI::Range(1, 8));
  train->add_option("--disc-widths", c.disc_widths, "Discriminator widths (four values)")
      ->delimiter(',')
      ->capture_default_str()
      ->expected(4)
      ->check(CLI::PositiveNumber);
  train->add_option("--image-pool", c.image_pool, "Past-fake buffer size per discriminator (0 = off)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  train->add_option("--workers", c.workers, "Batch preparation threads")->capture_default_str()->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "FID, paired PSNR and mask metrics of a checkpoint");
  eval->add_option("--checkpoint", r.eval.checkpoint, "Checkpoint, marker or run directory")->required();
  eval->add_option("--data", r.eval.data, "Manifest with split assignments")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", r.eval.report, "Report path (default: eval_report.json beside the checkpoint)");
  eval->add_option("--extractor", r.eval.extractor,
                   std::string("Feature extractor; inception reads weights from $") + eval::kInceptionWeightsEnv)
      ->capture_default_str()
      ->check(CLI::IsMember({"random_projection", "inception"}));
  eval->add_option("--feature-dim", r.eval.feature_dim, "Random-projection dimension")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  eval->add_option("--max-per-split", r.eval.max_per_split, "Cap on tiles per split and domain (0 = all)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);

  auto* clean = app.add_subcommand("clean", "Remove artifacts from a directory or manifest of tiles");
  clean->add_option("--checkpoint", r.clean.checkpoint, "Checkpoint, marker or run directory")->required();
  clean->add_option("--input", r.clean.input, "Manifest file or directory of PNG tiles")->required()->check(CLI::ExistingPath);
  clean->add_option("--out", r.clean.out, "Output directory (masks under <out>/masks)")->required();

  auto* mosaic = app.add_subcommand("mosaic", "Input/output/attention grid of test tiles");
  mosaic->add_option("--checkpoint", r.mosaic.checkpoint, "Checkpoint, marker or run directory")->required();
  mosaic->add_option("--data", r.mosaic.data, "Manifest")->required()->check(CLI::ExistingFile);
  mosaic->add_option("--n", r.mosaic.n, "Number of samples (columns)")->capture_default_str()->check(CLI::Range(1, 256));
  mosaic->add_option("--out", r.mosaic.out, "Output PNG")->required();
}

std::vector<fs::path> png_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Image8 mask_image(const Tensor& m) {
  Image8 img;
  img.height = static_cast<int>(m.height());
  img.width = static_cast<int>(m.width());
  img.channels = 1;
  img.pixels.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::nearbyint(std::clamp(m.data()[i], 0.0f, 1.0f) * 255.0f));
  }
  return img;
}

int do_synth(const Command& cmd, const SynthArgs& a, std::ostream& out) {
  data::SyntheticSpec spec = a.spec;
  spec.seed = cmd.seed;
  const auto m = data::synthesize_corpus(spec, a.out);
  out << "wrote " << m.records.size() << " tiles and " << (a.out / "manifest.txt").string() << "\n";
  return kExitOk;
}

int do_split(const Command& cmd, const SplitArgs& a, std::ostream& out) {
  const auto m = data::split_manifest(data::load_manifest(a.data), a.fraction, cmd.seed);
  const fs::path dst = a.out.empty() ? a.data : a.out;
  // Paths stay relative to the original root.
  data::Manifest copy = m;
  for (auto& r : copy.records) {
    if (r.image_path.is_relative()) r.image_path = fs::relative(fs::absolute(m.resolve(r)), fs::absolute(dst).parent_path());
  }
  data::save_manifest(copy, dst);
  out << "train " << m.subset(data::Split::train).records.size() << ", test "
      << m.subset(data::Split::test).records.size() << " -> " << dst.string() << "\n";
  return kExitOk;
}

int do_train(const Command& cmd, const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const auto manifest = data::load_manifest(a.data);
  train::Progress progress;
  int last_epoch = 0;
  if (cmd.verbosity > 0) {
    progress = [&](const train::StepMetrics& m) {
      if (cmd.verbosity > 1 || m.epoch != last_epoch) {
        err << "epoch " << m.epoch << " step " << m.step << " total_g " << m.losses.get("total_g") << " total_d "
            << m.losses.get("total_d") << "\n";
        last_epoch = m.epoch;
      }
    };
  }
  const auto result = a.resume ? train::resume(*a.resume, manifest, a.out, a.config, std::nullopt, progress)
                               : train::run_training(a.config, manifest, a.out, progress);
  out << "trained " << result.epochs_completed << " epochs; latest checkpoint " << result.last_checkpoint.string()
      << "\n";
  return kExitOk;
}

eval::FeatureExtractor make_extractor(const Command& cmd, const EvalArgs& a) {
  if (a.extractor == "inception") {
    const char* env = std::getenv(eval::kInceptionWeightsEnv);
    return eval::FeatureExtractor::inception(env ? fs::path(env) : fs::path());
  }
  return eval::FeatureExtractor::random_projection(cmd.seed, a.feature_dim);
}

int do_eval(const Command& cmd, const EvalArgs& a, std::ostream& out) {
  const auto ex = make_extractor(cmd, a);
  const auto ckpt = train::resolve_checkpoint(a.checkpoint);
  const auto report = eval::evaluate_model(ckpt, data::load_manifest(a.data), ex, {a.max_per_split, 16});
  const fs::path dst = a.report.empty() ? ckpt.parent_path() / "eval_report.json" : a.report;
  if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
  std::ofstream f(dst, std::ios::trunc);
  f << report.to_json() << "\n";
  if (!f) throw IoError("cannot write report " + dst.string());
  out << report.to_table() << "report: " << dst.string() << "\n";
  return kExitOk;
}

int do_clean(const CleanArgs& a, std::ostream& out) {
  const auto lm = train::load_model(a.checkpoint);
  std::vector<std::pair<std::string, fs::path>> inputs;  // output stem, source
  if (fs::is_directory(a.input)) {
    for (const auto& p : png_files(a.input)) inputs.emplace_back(p.stem().string(), p);
  } else {
    const auto m = data::load_manifest(a.input);
    for (const auto& r : m.records) {
      if (r.domain == data::Domain::artifact) inputs.emplace_back(r.id, m.resolve(r));
    }
  }
  if (inputs.empty()) throw Error("no input tiles in " + a.input.string());
  fs::create_directories(a.out);
  for (const auto& [stem, path] : inputs) {
    const Tensor tile = normalize(read_png(path));
    data::validate(lm.config.augment, static_cast<int>(std::min(tile.height(), tile.width())));
    const auto res = lm.model->clean(data::eval_transform(tile, lm.config.augment));
    write_png(a.out / (stem + ".png"), denormalize(res.image));
    if (res.mask) write_png(a.out / "masks" / (stem + ".png"), mask_image(*res.mask));
  }
  out << "cleaned " << inputs.size() << " tiles into " << a.out.string() << "\n";
  return kExitOk;
}

int do_mosaic(const MosaicArgs& a, std::ostream& out) {
  const auto lm = train::load_model(a.checkpoint);
  const auto m = data::load_manifest(a.data);
  data::Manifest pool = m.subset(data::Split::test);
  if (pool.count(data::Domain::artifact) == 0) pool = m;
  std::vector<Tensor> tiles;
  for (const auto& r : pool.records) {
    if (r.domain != data::Domain::artifact) continue;
    tiles.push_back(data::eval_transform(data::load_tile(m.resolve(r), m.tile_size), lm.config.augment));
    if (static_cast<int>(tiles.size()) == a.n) break;
  }
  if (tiles.empty()) throw Error("manifest has no artifact tiles");
  const Tensor inputs = concat_batch(tiles);
  const auto res = lm.model->clean(inputs);
  eval::render_mosaic(inputs, res.image, res.mask, a.out);
  out << "wrote " << (res.mask ? 3 : 2) << "x" << tiles.size() << " mosaic " << a.out.string() << "\n";
  return kExitOk;
}

}  // namespace

ParseResult parse_args(const std::vector<std::string>& argv) {
  CLI::App app{"Artifact removal for histopathology tiles with cycle-consistent GANs", "histoclean"};
  Raw r;
  setup(app, r);
  ParseResult result;
  std::vector<std::string> args(argv.rbegin(), argv.rend());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, eo;
    result.exit_code = app.exit(e, o, eo) == 0 ? kExitOk : kExitUsage;
    result.message = o.str() + eo.str();
    return result;
  }

  Command cmd;
  cmd.seed = r.seed;
  cmd.deterministic = r.deterministic;
  cmd.verbosity = r.verbosity;
  auto* sub = app.get_subcommands().front();
  cmd.name = sub->get_name();
  try {
    if (cmd.name == "synth") {
      cmd.args = r.synth;
    } else if (cmd.name == "split") {
      cmd.args = r.split;
    } else if (cmd.name == "train") {
      TrainArgs t = r.train;
      t.config.variant = train::parse_variant(r.variant);
      if (!r.arch.empty()) t.config.arch = nets::parse_arch(r.arch);
      t.config.seed = r.seed;
      t.config.deterministic = r.deterministic;
      t.config.validate();
      cmd.args = t;
    } else if (cmd.name == "eval") {
      cmd.args = r.eval;
    } else if (cmd.name == "clean") {
      cmd.args = r.clean;
    } else {
      cmd.args = r.mosaic;
    }
  } catch (const Error& e) {
    result.exit_code = kExitUsage;
    result.message = std::string("error: ") + e.what() + "\nRun with --help for more information.\n";
    return result;
  }
  result.command = std::move(cmd);
  return result;
}

int run(const Command& cmd, std::ostream& out, std::ostream& err) {
  try {
    return std::visit(
        [&](const auto& a) -> int {
          using T = std::decay_t<decltype(a)>;
          if constexpr (std::is_same_v<T, SynthArgs>) return do_synth(cmd, a, out);
          if constexpr (std::is_same_v<T, SplitArgs>) return do_split(cmd, a, out);
          if constexpr (std::is_same_v<T, TrainArgs>) return do_train(cmd, a, out, err);
          if constexpr (std::is_same_v<T, EvalArgs>) return do_eval(cmd, a, out);
          if constexpr (std::is_same_v<T, CleanArgs>) return do_clean(a, out);
          if constexpr (std::is_same_v<T, MosaicArgs>) return do_mosaic(a, out);
        },
        cmd.args);
  } catch (const std::exception& e) {
    err << "error: " << cmd.name << ": " << e.what() << "\n";
    return kExitRuntime;
  }
}

int main_entry(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  const ParseResult p = parse_args(argv);
  if (!p.command) {
    (p.exit_code == kExitOk ? out : err) << p.message;
    return p.exit_code;
  }
  return run(*p.command, out, err);
}

}  // namespace histoclean::cli
