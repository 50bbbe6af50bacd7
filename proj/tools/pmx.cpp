// pmx - patch-mixed cross-modality retrieval lab.
//
// Subcommands: train, eval, sweep, mix, synth, report. Run directories land
// under --out, or $PMX_RUN_ROOT/seed<seed> when --out is not given.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pmx/runner.hpp"

namespace fs = std::filesystem;
using namespace pmx;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config file");
  cmd->add_option("--set", opts.sets, "override, key.path=value (repeatable)");
  cmd->add_option("--out", opts.out, "run directory");
  cmd->add_option("--seed", opts.seed, "run seed");
}

ExperimentConfig make_config(const CommonOpts& opts) {
  ExperimentConfig cfg = parse_config(opts.config_path, opts.sets);
  if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
  if (!opts.out.empty()) cfg.run_dir = opts.out;
  return cfg;
}

int cmd_train(const CommonOpts& opts) {
  ExperimentConfig cfg = make_config(opts);
  TrainResult result = train(cfg);
  std::cout << "run dir:    " << result.run_dir << "\n"
            << "checkpoint: " << result.checkpoint_path << "\n"
            << "steps:      " << result.log.steps.size() << "\n";
  if (!result.log.steps.empty()) {
    std::cout << "final losses:";
    for (const auto& [k, v] : result.log.steps.back().losses) std::cout << " " << k << "=" << v;
    std::cout << "\n";
  }
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint) {
  ExperimentConfig cfg = make_config(opts);
  EvalOutput out = evaluate(checkpoint, cfg);
  std::cout << "rank1 " << cmc_at(out.result, 1) << "  rank10 " << cmc_at(out.result, 10)
            << "  rank20 " << cmc_at(out.result, 20) << "  mAP " << out.result.map << "\n"
            << "report: " << out.report_path << "\n"
            << "table:  " << out.table_path << "\n";
  return 0;
}

int cmd_sweep(const CommonOpts& opts, const std::string& param,
              const std::vector<std::string>& values) {
  ExperimentConfig cfg = make_config(opts);
  auto rows = sweep(param, values, cfg);
  std::cout << param << "  rank1  rank10  mAP\n";
  for (const auto& row : rows)
    std::cout << row.value << "  " << row.rank1 << "  " << row.rank10 << "  " << row.map << "\n";
  return 0;
}

int cmd_mix(const std::string& rgb_path, const std::string& ir_path, std::uint64_t seed,
            real ratio, int patch_h, int patch_w, const std::string& out_image,
            const std::string& out_mask) {
  ModalityImage rgb = read_ppm(rgb_path);
  rgb.modality = Modality::RGB;
  ModalityImage ir = read_ppm(ir_path);
  ir.modality = Modality::IR;
  ir.identity = rgb.identity;  // the pair is same-identity by assumption

  MixConfig cfg(patch_h, patch_w, ratio);
  auto [rows, cols] = mix_grid_dims(cfg, rgb.height(), rgb.width());
  Rng rng = make_rng(seed, rng_stream::kMix);
  MixMask mask = sample_mix_mask(cfg, rows, cols, rng);
  ModalityImage mixed = apply_patch_mix(rgb, ir, mask, cfg);
  write_ppm(out_image, mixed);

  std::ofstream mf(out_mask);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) mf << (mask.at(r, c) ? '1' : '0');
    mf << "\n";
  }
  std::cout << "mixed image: " << out_image << " (" << rows << "x" << cols << " grid, "
            << mask.count_true() << " RGB patches)\nmask: " << out_mask << "\n";
  return 0;
}

int cmd_synth(const CommonOpts& opts, const std::string& out_dir, bool test_split) {
  ExperimentConfig cfg = make_config(opts);
  Rng rng = make_rng(cfg.dataset.seed, rng_stream::kSynth);
  DatasetIndex idx = synth_dataset(test_split ? cfg.dataset.test : cfg.dataset.train, rng);
  materialize_flat(idx, out_dir);
  std::cout << "wrote " << idx.records.size() << " images (" << idx.identity_count
            << " identities) to " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report: render CSV tables as ASCII charts and an SVG
// ---------------------------------------------------------------------------

struct Table {
  std::vector<std::string> header;
  std::vector<std::string> row_labels;
  std::vector<std::vector<real>> columns;  // indexed [series][row]
};

Table read_table(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("report: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("report: empty table " + path);
  Table t;
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) t.header.push_back(cell);
  if (t.header.size() < 2) throw std::runtime_error("report: need at least two columns");
  t.columns.resize(t.header.size() - 1);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != t.header.size()) continue;
    t.row_labels.push_back(cells[0]);
    for (size_t i = 1; i < cells.size(); ++i) {
      try {
        t.columns[i - 1].push_back(std::stod(cells[i]));
      } catch (...) {
        t.columns[i - 1].push_back(0);
      }
    }
  }
  return t;
}

void ascii_chart(const Table& t) {
  for (size_t s = 0; s < t.columns.size(); ++s) {
    const auto& col = t.columns[s];
    if (col.empty()) continue;
    real lo = col[0], hi = col[0];
    for (real v : col) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const real span = hi - lo > 0 ? hi - lo : 1;
    std::cout << "\n" << t.header[s + 1] << "\n";
    for (size_t r = 0; r < col.size(); ++r) {
      const int width = 4 + static_cast<int>(44 * (col[r] - lo) / span);
      std::cout << "  " << t.row_labels[r];
      for (size_t pad = t.row_labels[r].size(); pad < 10; ++pad) std::cout << ' ';
      std::cout << std::string(static_cast<size_t>(width), '#') << " " << col[r] << "\n";
    }
  }
}

void svg_chart(const Table& t, const std::string& path) {
  const int w = 640, h = 400, margin = 50;
  real lo = 1e300, hi = -1e300;
  for (const auto& col : t.columns)
    for (real v : col) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!(hi > lo)) hi = lo + 1;
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

  std::ofstream f(path);
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  f << "<rect width='100%' height='100%' fill='white'/>\n";
  f << "<line x1='" << margin << "' y1='" << h - margin << "' x2='" << w - margin << "' y2='"
    << h - margin << "' stroke='black'/>\n";
  f << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin << "' y2='"
    << h - margin << "' stroke='black'/>\n";
  const size_t n = t.row_labels.size();
  for (size_t s = 0; s < t.columns.size(); ++s) {
    const auto& col = t.columns[s];
    f << "<polyline fill='none' stroke='" << colors[s % 5] << "' stroke-width='2' points='";
    for (size_t r = 0; r < col.size(); ++r) {
      const real x = margin + (w - 2.0 * margin) * (n > 1 ? static_cast<real>(r) / (n - 1) : 0.5);
      const real y = h - margin - (h - 2.0 * margin) * (col[r] - lo) / (hi - lo);
      f << x << "," << y << " ";
    }
    f << "'/>\n";
    f << "<text x='" << w - margin + 4 << "' y='" << margin + 16 * s << "' font-size='12' fill='"
      << colors[s % 5] << "'>" << t.header[s + 1] << "</text>\n";
  }
  for (size_t r = 0; r < n; ++r) {
    const real x = margin + (w - 2.0 * margin) * (n > 1 ? static_cast<real>(r) / (n - 1) : 0.5);
    f << "<text x='" << x << "' y='" << h - margin + 16 << "' font-size='11' text-anchor='middle'>"
      << t.row_labels[r] << "</text>\n";
  }
  f << "</svg>\n";
}

int cmd_report(const std::string& table_path, const std::string& svg_path) {
  Table t = read_table(table_path);
  ascii_chart(t);
  if (!svg_path.empty()) {
    svg_chart(t, svg_path);
    std::cout << "\nsvg: " << svg_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"patch-mixed cross-modality retrieval lab"};
  app.require_subcommand(1);

  CommonOpts train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  add_common(train_cmd, train_opts);

  CommonOpts eval_opts;
  std::string checkpoint;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  CommonOpts sweep_opts;
  std::string sweep_param;
  std::vector<std::string> sweep_values;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "sweep one config path");
  add_common(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--param", sweep_param, "config path, e.g. mix.ratio_p")->required();
  sweep_cmd->add_option("--values", sweep_values, "values to sweep")->required();

  std::string mix_rgb, mix_ir, mix_out = "mixed.ppm", mix_mask = "mask.txt";
  std::uint64_t mix_seed = 0;
  real mix_ratio = 0.1;
  int mix_ph = 16, mix_pw = 16;
  CLI::App* mix_cmd = app.add_subcommand("mix", "patch-mix two images for inspection");
  mix_cmd->add_option("--rgb", mix_rgb, "visible image (PPM)")->required();
  mix_cmd->add_option("--ir", mix_ir, "infrared image (PPM)")->required();
  mix_cmd->add_option("--seed", mix_seed, "mask seed");
  mix_cmd->add_option("--ratio", mix_ratio, "probability of an RGB patch");
  mix_cmd->add_option("--patch-height", mix_ph, "patch height in pixels");
  mix_cmd->add_option("--patch-width", mix_pw, "patch width in pixels");
  mix_cmd->add_option("--out-image", mix_out, "output PPM");
  mix_cmd->add_option("--out-mask", mix_mask, "output mask grid (text)");

  CommonOpts synth_opts;
  std::string synth_out = "synth_data";
  bool synth_test = false;
  CLI::App* synth_cmd = app.add_subcommand("synth", "materialize the synthetic dataset");
  add_common(synth_cmd, synth_opts);
  synth_cmd->add_option("--dataset-out", synth_out, "output directory (FLAT layout)");
  synth_cmd->add_flag("--test-split", synth_test, "write the test split instead of train");

  std::string report_table, report_svg;
  CLI::App* report_cmd = app.add_subcommand("report", "render a results table");
  report_cmd->add_option("--table", report_table, "CSV table")->required();
  report_cmd->add_option("--svg", report_svg, "output SVG path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(train_opts);
    if (eval_cmd->parsed()) return cmd_eval(eval_opts, checkpoint);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_opts, sweep_param, sweep_values);
    if (mix_cmd->parsed())
      return cmd_mix(mix_rgb, mix_ir, mix_seed, mix_ratio, mix_ph, mix_pw, mix_out, mix_mask);
    if (synth_cmd->parsed()) return cmd_synth(synth_opts, synth_out, synth_test);
    if (report_cmd->parsed()) return cmd_report(report_table, report_svg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
