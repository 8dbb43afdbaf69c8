#include "multitrans/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <mutex>
#include <sstream>
#include <thread>

namespace multitrans {

Experiment run_experiment(const Dataset& dataset, const RunConfig& config,
                          const EpochCallback& on_epoch) {
  RunConfig c = config;
  adapt_to_dataset(c, dataset);
  c.finalize();
  auto split = split_dataset(dataset.samples, c.train.ratios, c.seed, c.train.stratify);
  MultitransModel<float> model(c.model, c.seed);
  const auto train_set = select(dataset.samples, split.train);
  const auto val_set = select(dataset.samples, split.val);
  const auto test_set = select(dataset.samples, split.test);
  auto result = train(model, std::span<const Sample* const>(train_set),
                      std::span<const Sample* const>(val_set), c.train, on_epoch);
  Experiment e{std::move(model), std::move(split), std::move(result), std::nullopt, std::nullopt};
  if (!val_set.empty()) e.val = evaluate(e.model, std::span<const Sample* const>(val_set), c.positive_class);
  if (!test_set.empty()) e.test = evaluate(e.model, std::span<const Sample* const>(test_set), c.positive_class);
  return e;
}

std::string AblationCell::key() const {
  return std::string(image ? to_string(*image) : "none") + ":" +
         std::string(text ? to_string(*text) : "none") + ":" + std::string(to_string(mode));
}

AblationCell parse_cell(std::string_view triple) {
  const auto a = triple.find(':');
  const auto b = a == std::string_view::npos ? a : triple.find(':', a + 1);
  if (b == std::string_view::npos || triple.find(':', b + 1) != std::string_view::npos) {
    throw ConfigError("grid cell '" + std::string(triple) + "': expected image:text:mode");
  }
  const auto image = triple.substr(0, a);
  const auto text = triple.substr(a + 1, b - a - 1);
  AblationCell cell;
  cell.mode = parse_fusion_mode(triple.substr(b + 1));
  if (image != "none") cell.image = parse_image_variant(image);
  if (text != "none") cell.text = parse_text_variant(text);
  const bool want_image = cell.mode != FusionMode::text_only;
  const bool want_text = cell.mode != FusionMode::image_only;
  if (want_image != cell.image.has_value() || want_text != cell.text.has_value()) {
    throw ConfigError("grid cell '" + std::string(triple) + "': mode " +
                      std::string(to_string(cell.mode)) +
                      " needs exactly the encoders it uses (\"none\" for the others)");
  }
  return cell;
}

std::vector<AblationCell> parse_grid(std::string_view spec) {
  if (spec == "table1") {
    return parse_grid(
        "none:base:text,none:roberta:text,none:albert:text,"
        "standard:none:image,distill:none:image,windowed:none:image,"
        "standard:base:multimodal,windowed:base:multimodal,windowed:roberta:multimodal");
  }
  std::vector<AblationCell> cells;
  std::size_t start = 0;
  while (start <= spec.size()) {
    auto comma = spec.find(',', start);
    if (comma == std::string_view::npos) comma = spec.size();
    auto item = spec.substr(start, comma - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) cells.push_back(parse_cell(item));
    start = comma + 1;
  }
  if (cells.empty()) throw ConfigError("ablation grid is empty");
  return cells;
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

CellMetrics metrics_of(const EvalReport& r) { return {r.accuracy, r.f1, r.auc}; }

}  // namespace

CellMetrics median(const std::vector<CellMetrics>& runs) {
  CellMetrics m;
  if (runs.empty()) return m;
  std::vector<double> acc, f1, auc;
  for (const auto& r : runs) {
    acc.push_back(r.accuracy);
    f1.push_back(r.f1);
    if (r.auc) auc.push_back(*r.auc);
  }
  m.accuracy = median_of(acc);
  m.f1 = median_of(f1);
  if (!auc.empty()) m.auc = median_of(auc);
  return m;
}

std::vector<AblationRow> ablate(const Dataset& dataset, const RunConfig& base,
                                const std::vector<AblationCell>& grid,
                                const std::vector<std::uint64_t>& seeds, std::size_t jobs,
                                const CellCallback& on_done) {
  if (grid.empty()) throw ConfigError("ablation grid is empty");
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  struct Task {
    std::size_t cell;
    std::size_t seed;
  };
  struct Outcome {
    std::optional<CellMetrics> test, val;
    std::string error;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    for (std::size_t s = 0; s < seeds.size(); ++s) tasks.push_back({c, s});
  }
  std::vector<Outcome> outcomes(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex report_mutex;

  auto worker = [&] {
    for (auto t = next++; t < tasks.size(); t = next++) {
      const auto& task = tasks[t];
      const auto& cell = grid[task.cell];
      auto& out = outcomes[t];
      try {
        RunConfig c = base;
        c.seed = seeds[task.seed];
        c.model.mode = cell.mode;
        if (cell.image) c.model.image.variant = *cell.image;
        if (cell.text) c.model.text.variant = *cell.text;
        auto e = run_experiment(dataset, c);
        if (e.test) out.test = metrics_of(*e.test);
        if (e.val) out.val = metrics_of(*e.val);
      } catch (const std::exception& ex) {
        out.error = ex.what();
      }
      if (on_done) {
        std::lock_guard lock(report_mutex);
        on_done(cell, seeds[task.seed], out.error);
      }
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, tasks.size());
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::vector<AblationRow> rows;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    AblationRow row;
    row.cell = grid[c];
    row.seeds = seeds;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      if (tasks[t].cell != c) continue;
      const auto& out = outcomes[t];
      if (!out.error.empty()) {
        if (row.error.empty()) {
          row.error = "seed " + std::to_string(seeds[tasks[t].seed]) + ": " + out.error;
        }
        continue;
      }
      if (out.test) row.test.push_back(*out.test);
      if (out.val) row.val.push_back(*out.val);
    }
    if (!row.failed()) {
      row.median_test = median(row.test);
      row.median_val = median(row.val);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<AblationRow> sort_rows(std::vector<AblationRow> rows) {
  auto method_rank = [](const AblationRow& r) { return r.cell.mode == FusionMode::multimodal ? 1 : 0; };
  std::stable_sort(rows.begin(), rows.end(), [&](const AblationRow& a, const AblationRow& b) {
    if (method_rank(a) != method_rank(b)) return method_rank(a) < method_rank(b);
    if (a.failed() != b.failed()) return !a.failed();
    return a.median_test.accuracy > b.median_test.accuracy;
  });
  return rows;
}

namespace {

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

std::string format_table(const std::vector<AblationRow>& rows) {
  std::vector<std::vector<std::string>> cells = {
      {"Method", "Image-modal", "Text-Modal", "ACC", "F1-score", "AUC"}};
  for (const auto& r : rows) {
    std::vector<std::string> line = {
        r.cell.mode == FusionMode::multimodal ? "Multimodal" : "Unimodal",
        r.cell.image ? std::string(display_name(*r.cell.image)) : "None",
        r.cell.text ? std::string(display_name(*r.cell.text)) : "None"};
    if (r.failed()) {
      line.insert(line.end(), {"failed", "failed", "failed"});
    } else {
      line.push_back(fixed3(r.median_test.accuracy));
      line.push_back(fixed3(r.median_test.f1));
      line.push_back(r.median_test.auc ? fixed3(*r.median_test.auc) : "undefined");
    }
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::ostringstream out;
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      out << line[i];
      if (i + 1 < line.size()) out << std::string(width[i] - line[i].size() + 2, ' ');
    }
    out << "\n";
  }
  for (const auto& r : rows) {
    if (r.failed()) out << "# failed " << r.cell.key() << ": " << r.error << "\n";
  }
  return out.str();
}

std::string format_runs(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "#cell\tseed\tsplit\tacc\tf1\tauc\n";
  auto emit = [&](const AblationRow& r, const std::vector<CellMetrics>& runs, const char* split) {
    for (std::size_t i = 0; i < runs.size() && i < r.seeds.size(); ++i) {
      out << r.cell.key() << "\t" << r.seeds[i] << "\t" << split << "\t"
          << fixed3(runs[i].accuracy) << "\t" << fixed3(runs[i].f1) << "\t"
          << (runs[i].auc ? fixed3(*runs[i].auc) : "undefined") << "\n";
    }
  };
  for (const auto& r : rows) {
    emit(r, r.val, "val");
    emit(r, r.test, "test");
  }
  return out.str();
}

}  // namespace multitrans
