// multitrans: generate data, train, evaluate, ablate and gradient-check.
//
// Exit codes: 0 success, 1 usage or config error, 2 data error,
// 3 numeric failure (divergence or a failed gradient check).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "multitrans/ablation.hpp"
#include "multitrans/checkpoint.hpp"
#include "multitrans/config.hpp"
#include "multitrans/grad_suite.hpp"

namespace fs = std::filesystem;
using namespace multitrans;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

// Whole-file write through a temporary, so readers never see a partial file.
void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    out << content;
    if (!out) throw DataError("failed writing " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot finalize " + path.string() + ": " + ec.message());
}

RunConfig read_config(const std::string& path, std::optional<std::uint64_t> seed) {
  RunConfig c = path.empty() ? RunConfig{} : load_config(path);
  apply_seed_overrides(c, seed);
  c.finalize();
  return c;
}

std::string pick_path(const std::string& flag, const std::string& configured, const char* what) {
  if (!flag.empty()) return flag;
  if (!configured.empty()) return configured;
  throw ConfigError(std::string("no ") + what + " given (flag or config)");
}

Dataset read_dataset(const std::string& path, const RunConfig& config) {
  return load_dataset(resolve_manifest(path), config.text_limits());
}

std::string history_tsv(const std::vector<EpochStats>& history) {
  std::ostringstream out;
  out << "#epoch\ttrain_loss\ttrain_acc\tval_acc\n";
  for (const auto& h : history) {
    out << h.epoch << '\t' << num(h.train_loss) << '\t' << num(h.train_accuracy) << '\t'
        << num(h.val_accuracy) << '\n';
  }
  return out.str();
}

std::string report_table(const std::string& split, const EvalReport& r) {
  std::ostringstream out;
  out << "Split  N    ACC    F1-score  AUC\n";
  char line[128];
  std::snprintf(line, sizeof(line), "%-5s  %-3zu  %s  %s     %s\n", split.c_str(), r.n,
                fixed3(r.accuracy).c_str(), fixed3(r.f1).c_str(),
                r.auc ? fixed3(*r.auc).c_str() : "undefined");
  out << line;
  return out.str();
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) seeds.push_back(parse_seed(item));
  }
  if (seeds.empty()) throw ConfigError("--seeds: no seeds given");
  return seeds;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

int gen_data(const GenArgs& a) {
  auto c = read_config(a.config, a.seed);
  const fs::path root = pick_path(a.out, c.data_path, "output directory");
  auto data = generate_synthetic(c.synth);
  fs::create_directories(root);
  write_generator_log(root / "generator_log.tsv", data.log);
  write_file(root / "config.yaml", echo_config(c));
  const auto manifest = write_dataset(data.dataset, root);
  std::size_t poor = 0;
  for (const auto& s : data.dataset.samples) poor += s.label == kPoorOutcome;
  std::cout << "wrote " << data.dataset.samples.size() << " samples (" << poor << " poor, "
            << data.dataset.samples.size() - poor << " good) to " << manifest.string() << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, data, mode, out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int train_cmd(const TrainArgs& a) {
  auto c = read_config(a.config, a.seed);
  if (!a.mode.empty()) c.model.mode = parse_fusion_mode(a.mode);
  const fs::path out = pick_path(a.out, c.output_path, "checkpoint path (--out)");
  const auto dataset = read_dataset(pick_path(a.data, c.data_path, "dataset (--data)"), c);
  adapt_to_dataset(c, dataset);
  c.finalize();

  auto e = run_experiment(dataset, c, [&](const EpochStats& s) {
    if (a.quiet) return;
    std::printf("epoch %zu  loss %.4f  train_acc %.3f  val_acc %.3f\n", s.epoch, s.train_loss,
                s.train_accuracy, s.val_accuracy);
    std::fflush(stdout);
  });
  const auto echo = echo_config(c);
  save_checkpoint(out, make_checkpoint(e.model.parameters(), echo, e.result.best_epoch,
                                       e.result.best_val_accuracy));
  write_file(out.string() + ".history.tsv", history_tsv(e.result.history));
  write_file(out.string() + ".config.yaml", echo);
  std::printf("best epoch %zu  val_acc %.3f", e.result.best_epoch, e.result.best_val_accuracy);
  if (e.test) std::printf("  test_acc %.3f", e.test->accuracy);
  std::printf("\ncheckpoint %s\n", out.string().c_str());
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, split = "test", out;
};

int eval_cmd(const EvalArgs& a) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  auto c = parse_config(ckpt.config_text, a.checkpoint + " (embedded config)");
  c.finalize();
  const auto dataset = read_dataset(pick_path(a.data, c.data_path, "dataset (--data)"), c);
  MultitransModel<float> model(c.model, c.seed);
  apply_checkpoint(ckpt, model.parameters());

  std::vector<std::size_t> rows;
  if (a.split == "all") {
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) rows.push_back(i);
  } else {
    const auto split = split_dataset(dataset.samples, c.train.ratios, c.seed, c.train.stratify);
    if (a.split == "train") rows = split.train;
    else if (a.split == "val") rows = split.val;
    else if (a.split == "test") rows = split.test;
    else throw ConfigError("--split must be train, val, test or all");
  }
  if (rows.empty()) throw DataError("split '" + a.split + "' is empty");
  const auto samples = select(dataset.samples, rows);
  const auto report = evaluate(model, std::span<const Sample* const>(samples), c.positive_class);
  std::cout << report_table(a.split, report);
  const auto out = a.out.empty() ? a.checkpoint + "." + a.split + ".results.txt" : a.out;
  write_file(out, format_results(a.split, report));
  std::cout << "results " << out << "\n";
  return 0;
}

struct AblateArgs {
  std::string config, data, grid = "table1", seeds, out;
  std::size_t jobs = 1;
};

int ablate_cmd(const AblateArgs& a) {
  auto c = read_config(a.config, std::nullopt);
  const auto grid = parse_grid(a.grid);
  const auto seeds = a.seeds.empty() ? std::vector<std::uint64_t>{c.seed} : parse_seed_list(a.seeds);
  Dataset dataset;
  const auto data_path = a.data.empty() ? c.data_path : a.data;
  if (data_path.empty()) {
    dataset = generate_synthetic(c.synth).dataset;
  } else {
    dataset = read_dataset(data_path, c);
  }
  auto rows = ablate(dataset, c, grid, seeds, a.jobs,
                     [](const AblationCell& cell, std::uint64_t seed, const std::string& error) {
                       std::fprintf(stderr, "done %s seed %llu%s%s\n", cell.key().c_str(),
                                    static_cast<unsigned long long>(seed),
                                    error.empty() ? "" : ": ", error.c_str());
                     });
  rows = sort_rows(std::move(rows));
  const auto table = format_table(rows);
  std::cout << table;
  if (!a.out.empty()) {
    write_file(a.out, table);
    write_file(a.out + ".runs.tsv", format_runs(rows));
  }
  for (const auto& r : rows) {
    if (r.failed()) return kNumeric;
  }
  return 0;
}

struct GradArgs {
  std::string config, fault, filter;
  std::optional<std::uint64_t> seed;
};

int grad_cmd(const GradArgs& a) {
  auto c = read_config(a.config, a.seed);
  GradSuiteOptions opts;
  opts.seed = c.seed;
  opts.fault_op = a.fault;
  opts.filter = a.filter;
  const auto entries = run_grad_suite(opts);
  if (entries.empty()) throw ConfigError("no grad-check entries match '" + a.filter + "'");
  std::size_t failed = 0;
  std::printf("%-28s %-6s %-5s %-12s %-9s %s\n", "name", "kind", "cases", "max_rel_err", "tol",
              "result");
  for (const auto& e : entries) {
    std::printf("%-28s %-6s %-5zu %-12.3e %-9.0e %s\n", e.name.c_str(), e.kind.c_str(), e.cases,
                e.report.max_rel_error, e.tolerance, e.passed() ? "pass" : "FAIL");
    failed += !e.passed();
  }
  std::printf("%zu/%zu passed\n", entries.size() - failed, entries.size());
  return failed == 0 ? 0 : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal transformer outcome classifier"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write the synthetic XOR-coupled dataset");
  gen_cmd->add_option("--config", gen.config, "Config file");
  gen_cmd->add_option("--out", gen.out, "Output directory");
  gen_cmd->add_option("--seed", gen.seed, "Seed (overrides MULTITRANS_SEED and the config)");

  TrainArgs tr;
  auto* train_sub = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_sub->add_option("--config", tr.config, "Config file");
  train_sub->add_option("--data", tr.data, "Dataset directory or manifest");
  train_sub->add_option("--mode", tr.mode, "multimodal, text or image");
  train_sub->add_option("--out", tr.out, "Checkpoint path");
  train_sub->add_option("--seed", tr.seed, "Seed (overrides MULTITRANS_SEED and the config)");
  train_sub->add_flag("--quiet", tr.quiet, "No per-epoch lines");

  EvalArgs ev;
  auto* eval_sub = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval_sub->add_option("--checkpoint", ev.checkpoint, "Checkpoint path")->required();
  eval_sub->add_option("--data", ev.data, "Dataset directory or manifest");
  eval_sub->add_option("--split", ev.split, "train, val, test or all");
  eval_sub->add_option("--out", ev.out, "Results file (default <checkpoint>.<split>.results.txt)");

  AblateArgs ab;
  auto* ablate_sub = app.add_subcommand("ablate", "Train a grid of variants and print a table");
  ablate_sub->add_option("--config", ab.config, "Base config file");
  ablate_sub->add_option("--data", ab.data, "Dataset (default: generate from the config)");
  ablate_sub->add_option("--grid", ab.grid, "Comma-separated image:text:mode cells, or table1");
  ablate_sub->add_option("--seeds", ab.seeds, "Comma-separated seeds (default: config seed)");
  ablate_sub->add_option("--jobs", ab.jobs, "Parallel workers")->check(CLI::PositiveNumber);
  ablate_sub->add_option("--out", ab.out, "Table file; per-run metrics go to <out>.runs.tsv");

  GradArgs gr;
  auto* grad_sub = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  grad_sub->add_option("--config", gr.config, "Config file (supplies the seed)");
  grad_sub->add_option("--seed", gr.seed, "Seed");
  grad_sub->add_option("--inject-fault", gr.fault, "Corrupt the backward pass of this op");
  grad_sub->add_option("--filter", gr.filter, "Only entries whose name contains this");

  auto* keys_sub = app.add_subcommand("config-keys", "List every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*gen_cmd) return gen_data(gen);
    if (*train_sub) return train_cmd(tr);
    if (*eval_sub) return eval_cmd(ev);
    if (*ablate_sub) return ablate_cmd(ab);
    if (*grad_sub) return grad_cmd(gr);
    if (*keys_sub) {
      std::cout << describe_config();
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
