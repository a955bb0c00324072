// Command-line front end: dataset generation, training, evaluation,
// attention analysis and the gradient-check suite.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "cammac/evalreport.hpp"
#include "cammac/gradcheck.hpp"
#include "cammac/trainer.hpp"

using namespace cammac;
using nlohmann::json;

namespace {

// Command-line misuse detected after CLI11 parsing (maps to exit code 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flag < config file < built-in default, resolved per field. The merged
// config is serialized next to every output so a run can be replayed from it.
struct Merger {
  json file;
  CLI::App* cmd;

  template <typename T>
  T pick(const std::string& key, const T& cli_value, const T& fallback) const {
    if (cmd->count("--" + key) > 0) return cli_value;
    if (file.contains(key)) return file.at(key).get<T>();
    return fallback;
  }
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file '" + path + "'");
  return json::parse(f);
}

std::uint64_t resolve_seed(const Merger& m, std::uint64_t cli_seed) {
  if (m.cmd->count("--seed") > 0) return cli_seed;
  if (m.file.contains("seed")) return m.file.at("seed").get<std::uint64_t>();
  if (const char* env = std::getenv("CAMMAC_SEED")) return std::strtoull(env, nullptr, 10);
  return cli_seed;
}

void write_runconfig(const json& cfg, const std::string& artifact_path) {
  std::ofstream f(artifact_path + ".runconfig.json");
  if (!f) throw std::runtime_error("cannot write runconfig next to '" + artifact_path + "'");
  f << cfg.dump(2) << "\n";
}

std::pair<int, int> parse_grid(const std::string& spec) {
  const auto x = spec.find('x');
  if (x != std::string::npos && x > 0 && x + 1 < spec.size()) {
    try {
      const int h = std::stoi(spec.substr(0, x));
      const int w = std::stoi(spec.substr(x + 1));
      if (h >= 1 && w >= 1) return {h, w};
    } catch (const std::exception&) {
    }
  }
  throw UsageError("invalid grid spec '" + spec + "': expected HxW with positive sides, e.g. 4x4");
}

int cmd_gen(const Merger& m, const std::string& grid, std::uint64_t seed, int dialogs, int turns,
            int min_objects, int max_objects, const std::string& out, int workers) {
  GenConfig cfg;
  const std::string grid_spec = m.pick<std::string>("grid", grid, "4x4");
  std::tie(cfg.grid_h, cfg.grid_w) = parse_grid(grid_spec);
  cfg.seed = resolve_seed(m, seed);
  cfg.dialogs = m.pick("dialogs", dialogs, 100);
  cfg.turns = m.pick("turns", turns, 5);
  cfg.min_objects = m.pick("min-objects", min_objects, 3);
  cfg.max_objects = m.pick("max-objects", max_objects, 6);
  const std::string out_path = m.pick<std::string>("out", out, "dataset.jsonl");
  const int nworkers = m.pick("workers", workers, 1);

  Dataset ds = make_dataset(cfg, generate_dataset(cfg, nworkers));
  write_dataset(ds, out_path);

  const GenStats stats = collect_stats(ds.records);
  std::cout << "wrote " << ds.records.size() << " dialogs to " << out_path << "\n\n";
  std::cout << "template histogram:\n";
  long long total = 0;
  for (const auto& [id, n] : stats.per_template) {
    std::cout << "  " << id << std::string(id.size() < 20 ? 20 - id.size() : 1, ' ') << n << "\n";
    total += n;
  }
  std::cout << "  total               " << total << "\n\n";
  std::cout << "coref distance histogram:\n";
  for (const auto& [dist, n] : stats.per_coref_distance) {
    if (dist < 0)
      std::cout << "  none   " << n << "\n";
    else
      std::cout << "  " << dist << "      " << n << "\n";
  }
  std::cout << "\nfamily mix:";
  for (const auto& [fam, n] : stats.per_family)
    std::cout << " " << fam << " " << static_cast<double>(n) / total;
  std::cout << "\n";

  write_runconfig(json{{"command", "gen"},
                       {"grid", grid_spec},
                       {"seed", cfg.seed},
                       {"dialogs", cfg.dialogs},
                       {"turns", cfg.turns},
                       {"min-objects", cfg.min_objects},
                       {"max-objects", cfg.max_objects},
                       {"workers", nworkers},
                       {"out", out_path}},
                  out_path);
  return 0;
}

int cmd_train(const Merger& m, const std::string& data, const std::string& val, const std::string& model,
              const std::string& out, double lr, int epochs, int patience, int p, int d,
              std::uint64_t seed, int batch_dialogs, int batch_turns, long long max_steps,
              const std::string& resume) {
  TrainConfig cfg;
  const std::string model_name = m.pick<std::string>("model", model, "vanilla");
  cfg.flags = flags_from_name(model_name);
  cfg.learning_rate = m.pick("lr", lr, 2e-4);
  cfg.max_epochs = m.pick("epochs", epochs, 25);
  cfg.early_stop_patience = m.pick("patience", patience, 5);
  cfg.p = m.pick("p", p, 4);
  cfg.d = m.pick("d", d, 64);
  cfg.seed = resolve_seed(m, seed);
  cfg.batch_dialogs = m.pick("batch-dialogs", batch_dialogs, 12);
  cfg.batch_turns = m.pick("batch-turns", batch_turns, 128);
  cfg.max_steps = m.pick("max-steps", max_steps, 0LL);
  const std::string data_path = m.pick<std::string>("data", data, "");
  const std::string val_path = m.pick<std::string>("val", val, "");
  const std::string out_path = m.pick<std::string>("out", out, "model.ckpt");
  const std::string resume_path = m.pick<std::string>("resume", resume, "");

  Dataset train_set = read_dataset(data_path);
  Dataset val_set = read_dataset(val_path);

  TrainResult res;
  if (!resume_path.empty()) {
    Checkpoint resumed = load_checkpoint(resume_path);
    res = train(cfg, train_set, val_set, &resumed);
  } else {
    res = train(cfg, train_set, val_set);
  }

  save_checkpoint(res.best, out_path);
  const std::string metrics_path = out_path + ".metrics.txt";
  {
    std::ofstream mf(metrics_path);
    for (const auto& e : res.metrics) mf << e.epoch << " " << e.train_loss << " " << e.val_accuracy << "\n";
  }
  std::cout << "model " << model_name << ": " << res.metrics.size() << " epochs, " << res.steps_taken
            << " optimizer steps\n";
  if (!res.metrics.empty())
    std::cout << "best val accuracy " << res.best.val_accuracy << " (metrics: " << metrics_path << ")\n";
  std::cout << "checkpoint written to " << out_path << "\n";

  write_runconfig(json{{"command", "train"},
                       {"data", data_path},
                       {"val", val_path},
                       {"model", model_name},
                       {"out", out_path},
                       {"lr", cfg.learning_rate},
                       {"epochs", cfg.max_epochs},
                       {"patience", cfg.early_stop_patience},
                       {"p", cfg.p},
                       {"d", cfg.d},
                       {"seed", cfg.seed},
                       {"batch-dialogs", cfg.batch_dialogs},
                       {"batch-turns", cfg.batch_turns},
                       {"max-steps", cfg.max_steps},
                       {"resume", resume_path}},
                  out_path);
  return 0;
}

void require_vocab_match(const Checkpoint& ckpt, const Dataset& ds) {
  if (ckpt.model_config.vocab == ds.vocab && ckpt.model_config.answer_vocab == ds.answer_vocab) return;
  std::ostringstream os;
  os << "vocabulary mismatch between checkpoint and dataset: checkpoint vocab hash 0x" << std::hex
     << vocab_hash(ckpt.model_config.vocab) << ", dataset vocab hash 0x" << vocab_hash(ds.vocab);
  throw std::runtime_error(os.str());
}

int cmd_eval(const Merger& m, const std::string& ckpt_path, const std::string& data,
             const std::string& outdir) {
  const std::string cp = m.pick<std::string>("ckpt", ckpt_path, "");
  const std::string dp = m.pick<std::string>("data", data, "");
  const std::string od = m.pick<std::string>("outdir", outdir, "eval_out");
  Checkpoint ckpt = load_checkpoint(cp);
  Dataset ds = read_dataset(dp);
  require_vocab_match(ckpt, ds);

  ParamStoreT<float> params = ckpt.param_store();
  BreakdownReport rep = evaluate_model(params, ckpt.model_config, ds.records);
  write_reports(rep, od);
  std::cout << "overall accuracy " << rep.overall.accuracy() << " over " << rep.overall.total
            << " turns; reports in " << od << "\n";
  write_runconfig(json{{"command", "eval"}, {"ckpt", cp}, {"data", dp}, {"outdir", od}},
                  (std::filesystem::path(od) / "reports").string());
  return 0;
}

int cmd_analyze(const Merger& m, const std::string& ckpt_path, const std::string& data,
                const std::string& out) {
  const std::string cp = m.pick<std::string>("ckpt", ckpt_path, "");
  const std::string dp = m.pick<std::string>("data", data, "");
  const std::string op = m.pick<std::string>("out", out, "attention_summary.csv");
  Checkpoint ckpt = load_checkpoint(cp);
  Dataset ds = read_dataset(dp);
  require_vocab_match(ckpt, ds);

  ParamStoreT<float> params = ckpt.param_store();
  const auto summaries = summarize_attention(params, ckpt.model_config, ds.records);
  write_attention_csv(summaries, op);
  std::cout << "attention summaries for " << summaries.size() << " dialogs written to " << op << "\n";
  write_runconfig(json{{"command", "analyze-attn"}, {"ckpt", cp}, {"data", dp}, {"out", op}}, op);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, bool inject_fault) {
  const auto results = run_op_gradchecks(seed, inject_fault);
  bool all_ok = true;
  std::cout << "op                    max_rel_err  tolerance  status\n";
  for (const auto& r : results) {
    std::cout << r.name << std::string(r.name.size() < 22 ? 22 - r.name.size() : 1, ' ')
              << std::scientific << r.max_rel_err << "   " << r.tolerance << "      "
              << (r.passed ? "ok" : "FAIL") << "\n";
    all_ok &= r.passed;
  }

  // End-to-end: one full turn of the all-extensions model in double precision.
  GenConfig g;
  g.grid_h = g.grid_w = 2;
  g.min_objects = 1;
  g.max_objects = 2;
  g.turns = 2;
  g.dialogs = 1;
  g.seed = seed;
  Dataset ds = make_dataset(g, generate_dataset(g));
  ModelConfig mcfg = ModelConfig::from_dataset(ds, flags_from_name("cq+caa+mtm"), 6, 2);
  ParamStoreT<double> store = make_param_store<double>(mcfg);
  init_params(store, mcfg, seed);
  DialogStateT<double> state;
  {
    GradTape<double> tape;
    ParamContext<double> pc(tape, store);
    forward_turn(pc, ds.records[0], 0, state, mcfg);
    state.detach_all();
  }
  const DialogStateT<double> frozen = state;
  const int target = mcfg.answer_id(ds.records[0].turns[0].answer);
  const double e2e = max_rel_err_params(
      [&](ParamContext<double>& pc) {
        DialogStateT<double> s = frozen;
        auto logits = forward_turn(pc, ds.records[0], 1, s, mcfg);
        return cross_entropy_logits(pc.tape(), logits, target);
      },
      store, 1e-5);
  const bool e2e_ok = e2e <= 1e-4;
  std::cout << "model.one_turn        " << std::scientific << e2e << "   1e-04      "
            << (e2e_ok ? "ok" : "FAIL") << "\n";
  all_ok &= e2e_ok;
  return all_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MAC network with context-aware attention and memory: dataset, training and analysis"};
  app.require_subcommand(1);

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file; explicit flags override it");
  };

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic dialog dataset");
  add_config(gen);
  std::string gen_grid = "4x4", gen_out = "dataset.jsonl";
  std::uint64_t gen_seed = 0;
  int gen_dialogs = 100, gen_turns = 5, gen_min = 3, gen_max = 6, gen_workers = 1;
  gen->add_option("--grid", gen_grid, "grid as HxW");
  gen->add_option("--seed", gen_seed, "master seed (env CAMMAC_SEED as fallback)");
  gen->add_option("--dialogs", gen_dialogs, "number of dialogs");
  gen->add_option("--turns", gen_turns, "question turns per dialog");
  gen->add_option("--min-objects", gen_min, "minimum objects per scene");
  gen->add_option("--max-objects", gen_max, "maximum objects per scene");
  gen->add_option("--out", gen_out, "output JSONL path");
  gen->add_option("--workers", gen_workers, "parallel generation workers");

  // train
  auto* tr = app.add_subcommand("train", "train a model variant");
  add_config(tr);
  std::string tr_data, tr_val, tr_model = "vanilla", tr_out = "model.ckpt", tr_resume;
  double tr_lr = 2e-4;
  int tr_epochs = 25, tr_patience = 5, tr_p = 4, tr_d = 64, tr_bd = 12, tr_bt = 128;
  long long tr_max_steps = 0;
  std::uint64_t tr_seed = 0;
  tr->add_option("--data", tr_data, "training dataset (JSONL)");
  tr->add_option("--val", tr_val, "validation dataset (JSONL)");
  tr->add_option("--model", tr_model, "one of: vanilla mtm caa caa+mtm cq cq+caa cq+caa+mtm");
  tr->add_option("--out", tr_out, "checkpoint output path");
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--epochs", tr_epochs, "maximum epochs");
  tr->add_option("--patience", tr_patience, "early stopping patience (epochs)");
  tr->add_option("--p", tr_p, "reasoning steps per turn");
  tr->add_option("--d", tr_d, "hidden dimensionality");
  tr->add_option("--seed", tr_seed, "seed (env CAMMAC_SEED as fallback)");
  tr->add_option("--batch-dialogs", tr_bd, "dialogs per step (context-aware runs)");
  tr->add_option("--batch-turns", tr_bt, "turns per step (history-agnostic runs)");
  tr->add_option("--max-steps", tr_max_steps, "hard optimizer step budget (0 = none)");
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint and write breakdown CSVs");
  add_config(ev);
  std::string ev_ckpt, ev_data, ev_outdir = "eval_out";
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path");
  ev->add_option("--data", ev_data, "dataset path");
  ev->add_option("--outdir", ev_outdir, "directory for CSV reports");

  // analyze-attn
  auto* an = app.add_subcommand("analyze-attn", "export turn-level attention summaries");
  add_config(an);
  std::string an_ckpt, an_data, an_out = "attention_summary.csv";
  an->add_option("--ckpt", an_ckpt, "checkpoint path (must have caa enabled)");
  an->add_option("--data", an_data, "dataset path");
  an->add_option("--out", an_out, "output CSV path");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
  std::uint64_t gc_seed = 20260808;
  bool gc_fault = false;
  gc->add_option("--seed", gc_seed, "seed for random inputs");
  gc->add_flag("--inject-fault", gc_fault, "include a deliberately broken fixture (must fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const json file_cfg = load_config(config_path);
    if (gen->parsed())
      return cmd_gen({file_cfg, gen}, gen_grid, gen_seed, gen_dialogs, gen_turns, gen_min, gen_max,
                     gen_out, gen_workers);
    if (tr->parsed())
      return cmd_train({file_cfg, tr}, tr_data, tr_val, tr_model, tr_out, tr_lr, tr_epochs, tr_patience,
                       tr_p, tr_d, tr_seed, tr_bd, tr_bt, tr_max_steps, tr_resume);
    if (ev->parsed()) return cmd_eval({file_cfg, ev}, ev_ckpt, ev_data, ev_outdir);
    if (an->parsed()) return cmd_analyze({file_cfg, an}, an_ckpt, an_data, an_out);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_fault);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    std::cerr << "error: " << msg << "\n";
    return msg.find("unknown model name") != std::string::npos ? 1 : 2;
  }
  return 1;
}
