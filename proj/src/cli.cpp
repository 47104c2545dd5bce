#include "wmf/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "wmf/metrics.hpp"
#include "wmf/synth.hpp"
#include "wmf/trainer.hpp"
#include "wmf/verify.hpp"

namespace wmf {

namespace fs = std::filesystem;

namespace {

struct SynthArgs {
  fs::path backgrounds, assets, out;
  std::int64_t n = -1;
  synth::SynthesisParams params;
};

struct AssetArgs {
  fs::path backgrounds, assets;
  int n_backgrounds = 8, n_assets = 6, size = 128;
  std::uint64_t seed = 0;
};

struct TrainArgs {
  fs::path data, out, resume;
  NetworkConfig network;
  TrainConfig train;
  std::vector<int> blocks{1, 1, 1, 1}, heads{1, 2, 4, 8};
  std::vector<double> lambda_depth{1.0, 1.0, 1.0};
  bool no_nested = false, no_deep_sup = false, no_gdfn = false;
  std::int64_t print_every = 50;
};

struct InferArgs {
  fs::path ckpt, input, out;
  bool verbose = false;
};

struct EvalArgs {
  fs::path pred_dir, gt_dir, mask_dir, pred_mask_dir, report;
  double threshold = metrics::kMaskThreshold;
};

struct GradcheckArgs {
  std::string scope = "all";
  std::string dtype = "f64";
  double eps = 1e-5;
};

void require_flags(std::initializer_list<std::pair<const char*, const fs::path*>> flags) {
  for (const auto& [flag, value] : flags)
    require(!value->empty(), ErrorKind::Config, std::string(flag) + " is required");
}

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->allow_config_extras(CLI::config_extras_mode::error);
  sub->add_flag("--dump-config", "Print the effective configuration as a --config file and exit")
      ->configurable(false);
  return sub;
}

void add_synthesis_options(CLI::App* sub, synth::SynthesisParams& p) {
  sub->add_option("--size", p.size, "Output side length in pixels");
  sub->add_option("--seed", p.seed, "Dataset seed");
  sub->add_option("--alpha-min", p.alpha_min, "Lower opacity bound");
  sub->add_option("--alpha-max", p.alpha_max, "Upper opacity bound");
  sub->add_option("--scale-min", p.scale_min, "Lower mark scale (longest side / image side)");
  sub->add_option("--scale-max", p.scale_max, "Upper mark scale");
  sub->add_option("--rotation-min", p.rotation_min, "Lower rotation in degrees");
  sub->add_option("--rotation-max", p.rotation_max, "Upper rotation in degrees");
  sub->add_option("--mask-threshold", p.mask_threshold, "Opacity above which a pixel counts as watermarked");
}

void add_train_options(CLI::App* sub, TrainArgs& a) {
  sub->add_option("--data", a.data, "Dataset directory (synth layout) (required)");
  sub->add_option("--out", a.out, "Output directory for checkpoint.wmfk and log.jsonl (required)");
  sub->add_option("--resume", a.resume, "Continue from this checkpoint; its stored configuration wins");
  sub->add_option("--steps", a.train.steps, "Total step target");
  sub->add_option("--batch", a.train.batch, "Samples per step");
  sub->add_option("--seed", a.train.seed, "Initialization and sampling seed");
  sub->add_option("--lr", a.train.optim.lr, "AdamW learning rate");
  sub->add_option("--beta1", a.train.optim.beta1, "AdamW first-moment decay");
  sub->add_option("--beta2", a.train.optim.beta2, "AdamW second-moment decay");
  sub->add_option("--adam-eps", a.train.optim.eps, "AdamW epsilon");
  sub->add_option("--weight-decay", a.train.optim.weight_decay, "Decoupled weight decay");
  sub->add_option("--lambda-depth", a.lambda_depth, "Per-depth loss weights for F1 F2 F3")->expected(3);
  sub->add_option("--lambda-mask", a.train.loss.mask, "Mask loss weight");
  sub->add_option("--lambda-perc", a.train.loss.perceptual, "Perceptual loss weight");
  sub->add_option("--eval-every", a.train.eval_every, "Evaluate every N steps (0 = never)");
  sub->add_option("--checkpoint-every", a.train.checkpoint_every, "Checkpoint every N steps (0 = end only)");
  sub->add_option("--eval-holdout", a.train.eval_holdout, "Trailing samples held out for evaluation");
  sub->add_option("--extractor-seed", a.train.extractor_seed, "Seed of the frozen feature extractor");
  sub->add_option("--base-channels", a.network.base_channels, "Channels at level 0");
  sub->add_option("--blocks", a.blocks, "Transformer blocks per level")->expected(4);
  sub->add_option("--heads", a.heads, "Attention heads per level")->expected(4);
  sub->add_option("--ffn-expansion", a.network.ffn_expansion, "GDFN hidden expansion factor");
  sub->add_flag("--gdfn-dconv", a.network.gdfn_dconv, "Depthwise 3x3 conv inside GDFN");
  sub->add_flag("--no-nested", a.no_nested, "Plain UNet decoder (diagonal nodes only)");
  sub->add_flag("--no-deep-sup", a.no_deep_sup, "Supervise only the deepest output");
  sub->add_flag("--no-gdfn", a.no_gdfn, "Drop the GDFN sublayer from every block");
  sub->add_option("--print-every", a.print_every, "Progress line cadence on stdout");
}

void finish_train_args(TrainArgs& a) {
  std::copy(a.blocks.begin(), a.blocks.end(), a.network.blocks_per_level.begin());
  std::copy(a.heads.begin(), a.heads.end(), a.network.heads_per_level.begin());
  std::copy(a.lambda_depth.begin(), a.lambda_depth.end(), a.train.loss.depth.begin());
  a.network.nested_enabled = !a.no_nested;
  a.network.deep_supervision_enabled = !a.no_deep_sup;
  a.network.gdfn_enabled = !a.no_gdfn;
  a.network.validate();
  a.train.validate();
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  require_flags({{"--backgrounds", &a.backgrounds}, {"--assets", &a.assets}, {"--out", &a.out}});
  require(a.n >= 0, ErrorKind::Config, "--n is required and must be >= 0");
  const auto records = synth::generate_dataset(a.backgrounds, a.assets, a.params, a.n, a.out);
  out << "wrote " << records.size() << " samples to " << a.out.string() << "\n";
  return 0;
}

int cmd_make_assets(const AssetArgs& a, std::ostream& out) {
  require_flags({{"--backgrounds", &a.backgrounds}, {"--assets", &a.assets}});
  synth::write_procedural_inputs(a.backgrounds, a.assets, a.n_backgrounds, a.n_assets, a.size, a.seed);
  out << "wrote " << a.n_backgrounds << " backgrounds and " << a.n_assets << " marks\n";
  return 0;
}

int cmd_train(TrainArgs& a, std::ostream& out) {
  require_flags({{"--data", &a.data}, {"--out", &a.out}});
  Dataset data = load_dataset(a.data);
  fs::create_directories(a.out);
  const fs::path ckpt = a.out / "checkpoint.wmfk";
  std::optional<Trainer> trainer;
  if (!a.resume.empty()) {
    trainer.emplace(Trainer::resume(CheckpointFile::load(a.resume), std::move(data), a.train.steps));
  } else {
    finish_train_args(a);
    trainer.emplace(a.network, a.train, std::move(data));
  }
  std::ofstream log(a.out / "log.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
  require(static_cast<bool>(log), ErrorKind::Io, "cannot write " + (a.out / "log.jsonl").string());
  const std::int64_t every = std::max<std::int64_t>(a.print_every, 1);
  trainer->run(
      [&](const StepLog& l) {
        log << l.to_json() << "\n" << std::flush;
        if (l.step % every == 0 || l.step == trainer->config().steps || l.eval) {
          out << "step " << l.step << " loss " << std::setprecision(6) << l.loss_total;
          if (l.eval) out << " psnr " << l.eval->psnr << " iou " << l.eval->iou;
          out << std::endl;
        }
      },
      [&](const CheckpointFile& f) { f.save(ckpt); });
  out << "checkpoint " << ckpt.string() << " at step " << trainer->step_count() << "\n";
  return 0;
}

std::string node_list(const std::vector<GridPos>& nodes) {
  std::string s;
  for (const auto& [i, j] : nodes) s += (s.empty() ? "" : " ") + std::string("(") + std::to_string(i) + "," + std::to_string(j) + ")";
  return s;
}

int cmd_infer(const InferArgs& a, std::ostream& out) {
  require_flags({{"--ckpt", &a.ckpt}, {"--input", &a.input}, {"--out", &a.out}});
  const ModelParams model = load_model(CheckpointFile::load(a.ckpt));
  std::vector<fs::path> inputs;
  if (fs::is_directory(a.input)) {
    inputs = list_pngs(a.input);
    require(!inputs.empty(), ErrorKind::Input, "no PNG files in " + a.input.string());
  } else {
    require(fs::is_regular_file(a.input), ErrorKind::Io, "input not found: " + a.input.string());
    inputs.push_back(a.input);
  }
  const std::size_t expected_nodes = decoder_schedule(model.config).size();
  NoGradScope no_grad;
  for (const fs::path& p : inputs) {
    const Image j = read_png(p, 3);
    const ForwardOutputs f = forward(to_tensor(std::vector<Image>{j}), model, Mode::Infer);
    require(f.trace.head_evaluations == 1 && f.trace.decoder_nodes.size() == expected_nodes, ErrorKind::Graph,
            "inference evaluated an unexpected subgraph");
    const DepthOutput& d = f.final_output();
    const std::string name = p.filename().string();
    write_png(a.out / "image" / name, from_tensor(d.image, 0));
    write_png(a.out / "mask" / name, from_tensor(d.mask, 0));
    if (a.verbose)
      out << name << ": output F" << d.depth << " decoder_nodes " << f.trace.decoder_nodes.size() << " ["
          << node_list(f.trace.decoder_nodes) << "] head_evaluations " << f.trace.head_evaluations << "\n";
  }
  out << "wrote " << inputs.size() << " predictions to " << a.out.string() << "\n";
  return 0;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  require_flags({{"--pred-dir", &a.pred_dir}, {"--gt-dir", &a.gt_dir}});
  const metrics::EvalReport r = metrics::evaluate_dirs(a.pred_dir, a.gt_dir, a.mask_dir, a.pred_mask_dir, a.threshold);
  if (!a.report.empty()) {
    if (a.report.has_parent_path()) fs::create_directories(a.report.parent_path());
    std::ofstream f(a.report);
    require(static_cast<bool>(f), ErrorKind::Io, "cannot write " + a.report.string());
    f << metrics::to_csv(r);
  }
  const metrics::EvalRow& m = r.mean;
  out << std::setprecision(6) << "images " << r.rows.size() << " psnr " << m.psnr << " ssim " << m.ssim << " rmse "
      << m.rmse;
  if (m.rmse_w) out << " rmse_w " << *m.rmse_w;
  if (m.f1) out << " f1 " << *m.f1 << " iou " << *m.iou;
  out << "\n";
  return 0;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const DType dtype = a.dtype == "f32" ? DType::F32 : DType::F64;
  std::vector<verify::GradcheckRow> rows;
  auto add = [&](const std::vector<verify::GradcheckRow>& r) { rows.insert(rows.end(), r.begin(), r.end()); };
  if (a.scope == "ops" || a.scope == "all") add(verify::gradcheck_ops(dtype, a.eps));
  if (a.scope == "block" || a.scope == "all") add(verify::gradcheck_block(dtype, a.eps));
  if (a.scope == "net" || a.scope == "all") add(verify::gradcheck_net(dtype, a.eps));
  std::size_t failed = 0;
  out << std::left << std::setw(34) << "name" << std::setw(14) << "max_rel_err" << std::setw(10) << "tol"
      << std::setw(8) << "coords" << std::setw(8) << "skipped" << "result\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(34) << r.name << std::setw(14) << std::setprecision(3) << std::scientific
        << r.max_rel_error << std::setw(10) << r.tolerance << std::defaultfloat << std::setw(8) << r.coords
        << std::setw(8) << r.skipped << (r.passed() ? "PASS" : "FAIL") << "\n";
    failed += r.passed() ? 0 : 1;
  }
  require(failed == 0, ErrorKind::Numeric, std::to_string(failed) + " of " + std::to_string(rows.size()) +
                                               " gradient checks exceeded tolerance");
  out << rows.size() << " checks passed\n";
  return 0;
}

// One canonical rendering per value so that dump -> load -> dump is stable.
std::string dump_config(const CLI::App& sub) {
  std::ostringstream os;
  os << "[" << sub.get_name() << "]\n";
  for (const CLI::Option* opt : sub.get_options()) {
    if (!opt->get_configurable() || opt->get_lnames().empty() || opt->get_single_name() == "help") continue;
    os << opt->get_single_name() << "=";
    if (opt->get_expected_max() == 0) {
      os << (opt->as<bool>() ? "true" : "false");
    } else if (opt->get_expected_max() > 1) {
      std::vector<std::string> items = opt->results();
      if (opt->count() == 0) {
        std::string d = opt->get_default_str();
        d.erase(std::remove_if(d.begin(), d.end(), [](char c) { return c == '[' || c == ']' || c == ' '; }), d.end());
        items.clear();
        for (std::size_t pos = 0; !d.empty();) {
          const std::size_t comma = d.find(',', pos);
          items.push_back(d.substr(pos, comma - pos));
          if (comma == std::string::npos) break;
          pos = comma + 1;
        }
      }
      os << "[";
      for (std::size_t i = 0; i < items.size(); ++i) os << (i ? ", " : "") << items[i];
      os << "]";
    } else {
      const std::string v = opt->count() > 0 ? opt->results().back() : opt->get_default_str();
      if (opt->get_type_name() == "TEXT") os << std::quoted(v);
      else os << v;
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Nested-Transformer visible watermark removal", "wmf"};
  app.require_subcommand(1, 1);
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "Configuration file with one [command] section per subcommand; flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);

  SynthArgs sa;
  CLI::App* synth_cmd = add_command(app, "synth", "Composite marks onto backgrounds into a dataset");
  synth_cmd->add_option("--backgrounds", sa.backgrounds, "Directory of background PNGs");
  synth_cmd->add_option("--assets", sa.assets, "Directory of RGBA watermark PNGs");
  synth_cmd->add_option("--out", sa.out, "Output dataset directory");
  synth_cmd->add_option("--n", sa.n, "Number of samples (required)");
  add_synthesis_options(synth_cmd, sa.params);

  AssetArgs aa;
  CLI::App* assets_cmd = add_command(app, "make-assets", "Write procedural backgrounds and watermark marks");
  assets_cmd->add_option("--backgrounds", aa.backgrounds, "Output directory for backgrounds");
  assets_cmd->add_option("--assets", aa.assets, "Output directory for marks");
  assets_cmd->add_option("--n-backgrounds", aa.n_backgrounds, "Number of backgrounds");
  assets_cmd->add_option("--n-assets", aa.n_assets, "Number of marks");
  assets_cmd->add_option("--size", aa.size, "Background side length");
  assets_cmd->add_option("--seed", aa.seed, "Seed");

  TrainArgs ta;
  CLI::App* train_cmd = add_command(app, "train", "Train with deep supervision and AdamW");
  add_train_options(train_cmd, ta);

  InferArgs ia;
  CLI::App* infer_cmd = add_command(app, "infer", "Predict the background and mask from the deepest output");
  infer_cmd->add_option("--ckpt", ia.ckpt, "Checkpoint file (required)");
  infer_cmd->add_option("--input", ia.input, "PNG file or directory of PNGs (required)");
  infer_cmd->add_option("--out", ia.out, "Output directory (image/ and mask/)");
  infer_cmd->add_flag("--verbose", ia.verbose, "Report evaluated decoder nodes and head calls");

  EvalArgs ea;
  CLI::App* eval_cmd = add_command(app, "eval", "Score predictions against ground truth");
  eval_cmd->add_option("--pred-dir", ea.pred_dir, "Predicted images (required)");
  eval_cmd->add_option("--gt-dir", ea.gt_dir, "Ground-truth backgrounds (required)");
  eval_cmd->add_option("--mask-dir", ea.mask_dir, "Ground-truth masks (enables rmse_w and mask scores)");
  eval_cmd->add_option("--pred-mask-dir", ea.pred_mask_dir, "Predicted masks for F1/IoU");
  eval_cmd->add_option("--threshold", ea.threshold, "Binarization threshold for predicted masks");
  eval_cmd->add_option("--report", ea.report, "CSV report path");

  GradcheckArgs ga;
  CLI::App* grad_cmd = add_command(app, "gradcheck", "Finite-difference gradient verification");
  grad_cmd->add_option("--scope", ga.scope, "ops, block, net or all")
      ->check(CLI::IsMember({"ops", "block", "net", "all"}));
  grad_cmd->add_option("--dtype", ga.dtype, "f64 or f32")->check(CLI::IsMember({"f64", "f32"}));
  grad_cmd->add_option("--eps", ga.eps, "Central-difference step");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ConfigError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: config: " << msg << "\n";
    return 2;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: usage: " << msg << "\n";
    return 2;
  }

  try {
    for (CLI::App* sub : app.get_subcommands()) {
      if (sub->get_option("--dump-config")->as<bool>()) {
        out << dump_config(*sub);
        return 0;
      }
    }
    if (synth_cmd->parsed()) return cmd_synth(sa, out);
    if (assets_cmd->parsed()) return cmd_make_assets(aa, out);
    if (train_cmd->parsed()) return cmd_train(ta, out);
    if (infer_cmd->parsed()) return cmd_infer(ia, out);
    if (eval_cmd->parsed()) return cmd_eval(ea, out);
    return cmd_gradcheck(ga, out);
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << to_string(e.kind()) << ": " << msg << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace wmf
