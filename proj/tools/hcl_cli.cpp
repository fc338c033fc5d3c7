// Command-line front end: two-stage contrastive pre-training, the offline
// analysis protocols, and data/embedding utilities.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "hcl/config.hpp"
#include "hcl/data.hpp"
#include "hcl/eval_protocol.hpp"
#include "hcl/report_json.hpp"
#include "hcl/trainer.hpp"

namespace {

using namespace hcl;
using pipeline::Config;

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "config file (key = value lines)");
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--out", args.out, "output directory (or file where noted)");
  cmd->add_option("--set", args.sets, "override a config key, e.g. --set train.lr0=0.01")
      ->take_all();
}

Config resolve_config(const CommonArgs& args) {
  Config cfg;
  if (!args.config_path.empty()) cfg = pipeline::load_config_file(args.config_path);
  pipeline::apply_overrides(cfg, args.sets);
  if (args.seed) cfg.seed = *args.seed;
  pipeline::finalize_config(cfg);
  return cfg;
}

nlohmann::json config_json(const Config& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : pipeline::config_echo(cfg)) j[k] = v;
  return j;
}

void write_report(const std::string& out_dir, const std::string& name, nlohmann::json doc) {
  std::filesystem::create_directories(out_dir);
  const auto path = (std::filesystem::path(out_dir) / name).string();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw serial::IoError("cannot open '" + path + "'");
  out << doc.dump(2) << "\n";
  std::cout << "wrote " << path << "\n";
}

std::shared_ptr<pipeline::BoundModel> load_model(const Config& cfg, const std::string& ckpt_path) {
  auto ckpt = pipeline::load_checkpoint(ckpt_path);
  return std::make_shared<pipeline::BoundModel>(pipeline::bind_checkpoint_model(cfg, ckpt));
}

eval::ProtocolConfig protocol_config(const Config& cfg) {
  eval::ProtocolConfig pc;
  pc.gallery_capacity = cfg.eval_gallery_capacity;
  pc.aug = cfg.aug;
  pc.seed = cfg.seed;
  pc.passes = cfg.eval_passes;
  return pc;
}

int run(int argc, char** argv) {
  CLI::App app{"heterogeneous contrastive learning workbench"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic corpus file");
  add_common(gen, gen_args);
  std::string gen_file = "corpus.bin";
  gen->add_option("--file", gen_file, "corpus file name inside --out");

  CommonArgs s1_args;
  auto* s1 = app.add_subcommand("pretrain-stage1", "semantic-only warm-up stage");
  add_common(s1, s1_args);

  CommonArgs s2_args;
  std::string s2_ckpt;
  auto* s2 = app.add_subcommand("pretrain-stage2", "full two-branch stage");
  add_common(s2, s2_args);
  s2->add_option("--ckpt", s2_ckpt, "stage-1 checkpoint")->required();

  CommonArgs ec_args;
  std::string ec_ckpt;
  auto* ec = app.add_subcommand("eval-contrastive",
                                "instance-discrimination accuracy under training augmentation");
  add_common(ec, ec_args);
  ec->add_option("--ckpt", ec_ckpt, "checkpoint to evaluate")->required();

  CommonArgs iou_args;
  std::string iou_ckpt;
  auto* iou = app.add_subcommand("analyze-iou", "IoU-binned retrieval accuracy (crop-only views)");
  add_common(iou, iou_args);
  iou->add_option("--ckpt", iou_ckpt, "checkpoint to evaluate")->required();

  CommonArgs sweep_args;
  std::string sweep_ckpt, sweep_mode = "both";
  auto* sweep = app.add_subcommand("dim-sweep", "accuracy under PCA compression");
  add_common(sweep, sweep_args);
  sweep->add_option("--ckpt", sweep_ckpt, "checkpoint to evaluate")->required();
  sweep->add_option("--mode", sweep_mode, "semantic | hcl | both");

  CommonArgs exp_args;
  std::string exp_ckpt, exp_branch = "concat", exp_file = "embeddings.bin";
  auto* exp = app.add_subcommand("export-embeddings", "write per-record embeddings");
  add_common(exp, exp_args);
  exp->add_option("--ckpt", exp_ckpt, "checkpoint to export from")->required();
  exp->add_option("--branch", exp_branch, "semantic | spatial | concat");
  exp->add_option("--file", exp_file, "embedding file name inside --out");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    auto cfg = resolve_config(gen_args);
    auto ds = data::generate_synthetic(cfg.seed, cfg.data_synthetic_n, cfg.data_image_size);
    std::filesystem::create_directories(gen_args.out);
    const auto path = (std::filesystem::path(gen_args.out) / gen_file).string();
    data::save_corpus(ds, path);
    std::cout << "wrote " << path << " (" << ds.records.size() << " records of "
              << cfg.data_image_size << "x" << cfg.data_image_size << ")\n";
    return 0;
  }

  if (s1->parsed() || s2->parsed()) {
    const bool stage1 = s1->parsed();
    const auto& args = stage1 ? s1_args : s2_args;
    auto cfg = resolve_config(args);
    auto ds = pipeline::build_dataset(cfg);
    pipeline::TrainOutput out;
    if (stage1) {
      out = pipeline::train_stage1(cfg, ds);
    } else {
      auto warm = pipeline::load_checkpoint(s2_ckpt);
      out = pipeline::train_stage2(cfg, warm, ds);
    }
    std::filesystem::create_directories(args.out);
    const std::string tag = stage1 ? "stage1" : "stage2";
    const auto dir = std::filesystem::path(args.out);
    pipeline::save_checkpoint(out.checkpoint, (dir / (tag + ".ckpt")).string());
    pipeline::write_metrics_jsonl((dir / ("metrics_" + tag + ".jsonl")).string(), out.metrics);
    std::ofstream cfg_out(dir / "config.txt", std::ios::trunc);
    cfg_out << pipeline::config_to_text(cfg);
    const double final_loss = out.metrics.empty() ? 0.0 : out.metrics.back().loss;
    std::cout << tag << ": " << out.metrics.size() << " steps, final loss " << final_loss
              << ", wrote " << (dir / (tag + ".ckpt")).string() << "\n";
    return 0;
  }

  if (ec->parsed()) {
    auto cfg = resolve_config(ec_args);
    auto ds = pipeline::eval_split(pipeline::build_dataset(cfg), cfg.data_holdout_fraction);
    auto bound = load_model(cfg, ec_ckpt);
    auto res = eval::contrastive_test(pipeline::make_encoder(bound), ds, protocol_config(cfg),
                                      eval::ScoringSpec{});
    nlohmann::json doc{{"command", "eval-contrastive"},
                       {"seed", cfg.seed},
                       {"config", config_json(cfg)},
                       {"report", res}};
    write_report(ec_args.out, "eval_contrastive.json", doc);
    std::cout << "top-1 accuracy " << res.accuracy << " over " << res.total << " queries\n";
    return 0;
  }

  if (iou->parsed()) {
    auto cfg = resolve_config(iou_args);
    auto ds = pipeline::eval_split(pipeline::build_dataset(cfg), cfg.data_holdout_fraction);
    auto bound = load_model(cfg, iou_ckpt);
    auto rep = eval::iou_binned_accuracy(pipeline::make_encoder(bound), ds, protocol_config(cfg),
                                         cfg.eval_iou_bins);
    std::vector<double> mids, accs;
    for (std::size_t b = 0; b + 1 < rep.bin_edges.size(); ++b)
      if (rep.counts[b] > 0) {
        mids.push_back(0.5 * (rep.bin_edges[b] + rep.bin_edges[b + 1]));
        accs.push_back(rep.accuracy[b]);
      }
    const double spearman =
        mids.size() >= 2 ? eval::spearman_rank_correlation(mids, accs) : 0.0;
    nlohmann::json doc{{"command", "analyze-iou"},
                       {"seed", cfg.seed},
                       {"config", config_json(cfg)},
                       {"report", rep},
                       {"spearman_iou_accuracy", spearman}};
    write_report(iou_args.out, "analyze_iou.json", doc);
    std::cout << "overall accuracy " << rep.overall_accuracy << ", Spearman(IoU, accuracy) "
              << spearman << "\n";
    return 0;
  }

  if (sweep->parsed()) {
    auto cfg = resolve_config(sweep_args);
    auto ds = pipeline::eval_split(pipeline::build_dataset(cfg), cfg.data_holdout_fraction);
    auto bound = load_model(cfg, sweep_ckpt);
    auto encoder = pipeline::make_encoder(bound);
    nlohmann::json reports = nlohmann::json::array();
    auto run_mode = [&](eval::SweepMode mode) {
      auto rep = eval::dim_sweep(encoder, ds, protocol_config(cfg), cfg.eval_sweep_dims, mode,
                                 cfg.eval_renormalize);
      reports.push_back(rep);
    };
    if (sweep_mode == "semantic" || sweep_mode == "both")
      run_mode(eval::SweepMode::SemanticOnly);
    if (sweep_mode == "hcl" || sweep_mode == "both") {
      if (bound->model.has_spatial()) run_mode(eval::SweepMode::HclHalfHalf);
      else if (sweep_mode == "hcl")
        throw pipeline::ConfigError("hcl mode needs a stage-2 checkpoint");
    }
    nlohmann::json doc{{"command", "dim-sweep"},
                       {"seed", cfg.seed},
                       {"config", config_json(cfg)},
                       {"reports", reports}};
    write_report(sweep_args.out, "dim_sweep.json", doc);
    return 0;
  }

  if (exp->parsed()) {
    auto cfg = resolve_config(exp_args);
    auto ds = pipeline::build_dataset(cfg);
    auto ckpt = pipeline::load_checkpoint(exp_ckpt);
    std::filesystem::create_directories(exp_args.out);
    const auto path = (std::filesystem::path(exp_args.out) / exp_file).string();
    pipeline::export_embeddings(cfg, ckpt, ds, path, pipeline::branch_from_name(exp_branch));
    std::cout << "wrote " << path << " (" << ds.records.size() << " rows)\n";
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
