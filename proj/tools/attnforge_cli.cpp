#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnforge/datasets.hpp"
#include "attnforge/harness.hpp"

using namespace attnforge;

namespace {

void usage() {
  std::cerr << "usage:\n"
               "  attnforge gen-data --spec <file> --out <dir>\n"
               "  attnforge train --config <file> --out <report.json>\n"
               "  attnforge sweep-intrinsic --config <file> --grid 1,2,4,8 --out <file>\n"
               "  attnforge compare <report.json>... --out <prefix>\n"
               "  attnforge pe --score <s> --params <n>\n"
               "\n"
               "config files are 'section.key = value' lines; '#' comments.\n"
               "ATTNFORGE_SEED overrides train.seed when set.\n";
}

std::string need_value(int argc, char** argv, int& i, const std::string& flag) {
  if (i + 1 >= argc) throw std::invalid_argument(flag + " needs a value");
  return argv[++i];
}

[[noreturn]] void unknown_flag(const std::string& flag) {
  throw std::invalid_argument("unknown argument '" + flag + "'");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("short write to " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

double parse_number(const std::string& flag, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != value.size()) throw std::invalid_argument(flag + ": '" + value + "' is not a number");
  return v;
}

long long parse_integer(const std::string& flag, const std::string& value) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != value.size())
    throw std::invalid_argument(flag + ": '" + value + "' is not an integer");
  return v;
}

std::vector<int> parse_grid(const std::string& value) {
  std::vector<int> grid;
  std::stringstream ss(value);
  std::string token;
  while (std::getline(ss, token, ',')) {
    grid.push_back(static_cast<int>(parse_integer("--grid", token)));
  }
  if (grid.empty()) throw std::invalid_argument("--grid needs a comma list of sizes");
  return grid;
}

int cmd_gen_data(int argc, char** argv) {
  std::string spec_path, out_dir;
  for (int i = 2; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--spec") spec_path = need_value(argc, argv, i, arg);
    else if (arg == "--out") out_dir = need_value(argc, argv, i, arg);
    else unknown_flag(arg);
  }
  if (spec_path.empty() || out_dir.empty())
    throw std::invalid_argument("gen-data needs --spec and --out");
  DatasetSpec spec = dataset_spec_from_map(load_config(spec_path));
  Dataset data = generate_dataset(spec);
  write_dataset(data, out_dir);
  std::printf("wrote %s: %d train / %d val / %d test (%s, %d classes, side %d)\n",
              out_dir.c_str(), spec.train_size, spec.val_size, spec.test_size,
              spec.generator.c_str(), spec.classes, spec.image_side);
  return 0;
}

int cmd_train(int argc, char** argv) {
  std::string config_path, out_path;
  for (int i = 2; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--config") config_path = need_value(argc, argv, i, arg);
    else if (arg == "--out") out_path = need_value(argc, argv, i, arg);
    else unknown_flag(arg);
  }
  if (config_path.empty() || out_path.empty())
    throw std::invalid_argument("train needs --config and --out");
  TrainConfig config = train_config_from_map(load_config(config_path));
  RunReport report = train(config);
  write_text(out_path, run_report_to_json(report) + "\n");
  std::printf("%s: accuracy %.4f, %lld trainable params, pe %.4f (%.1fs)\n",
              report.method.c_str(), report.accuracy, report.exact_params, report.pe,
              report.seconds);
  return 0;
}

int cmd_sweep(int argc, char** argv) {
  std::string config_path, out_path, grid_text;
  for (int i = 2; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--config") config_path = need_value(argc, argv, i, arg);
    else if (arg == "--grid") grid_text = need_value(argc, argv, i, arg);
    else if (arg == "--out") out_path = need_value(argc, argv, i, arg);
    else unknown_flag(arg);
  }
  if (config_path.empty() || out_path.empty() || grid_text.empty())
    throw std::invalid_argument("sweep-intrinsic needs --config, --grid and --out");
  SweepConfig config = sweep_config_from_map(load_config(config_path));
  SweepResult result = sweep_intrinsic(config, parse_grid(grid_text));
  write_text(out_path, sweep_result_to_json(result) + "\n");
  if (result.search.reached) {
    std::printf("intrinsic dimension %d (reference accuracy %.4f, threshold %.2f)\n",
                result.search.d_t, result.reference_accuracy, result.threshold);
  } else {
    std::printf("no grid point reached %.2f of reference accuracy %.4f\n", result.threshold,
                result.reference_accuracy);
  }
  return 0;
}

int cmd_compare(int argc, char** argv) {
  std::vector<std::string> report_paths;
  std::string prefix;
  for (int i = 2; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--out") prefix = need_value(argc, argv, i, arg);
    else if (!arg.empty() && arg[0] == '-') unknown_flag(arg);
    else report_paths.push_back(arg);
  }
  if (report_paths.empty() || prefix.empty())
    throw std::invalid_argument("compare needs report files and --out");
  std::vector<RunReport> reports;
  for (const std::string& path : report_paths) {
    reports.push_back(run_report_from_json(read_text(path)));
  }
  std::string csv = compare_csv(reports);
  write_text(prefix + ".csv", csv);
  write_text(prefix + ".json", compare_json(reports) + "\n");
  std::fputs(csv.c_str(), stdout);
  return 0;
}

int cmd_pe(int argc, char** argv) {
  std::string score_text, params_text;
  for (int i = 2; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--score") score_text = need_value(argc, argv, i, arg);
    else if (arg == "--params") params_text = need_value(argc, argv, i, arg);
    else unknown_flag(arg);
  }
  if (score_text.empty() || params_text.empty())
    throw std::invalid_argument("pe needs --score and --params");
  double value = pe_metric(parse_number("--score", score_text),
                           parse_integer("--params", params_text));
  std::printf("%.6f\n", value);
  return 0;
}

int run(int argc, char** argv) {
  if (argc < 2) {
    usage();
    return 1;
  }
  std::string cmd = argv[1];
  if (cmd == "gen-data") return cmd_gen_data(argc, argv);
  if (cmd == "train") return cmd_train(argc, argv);
  if (cmd == "sweep-intrinsic") return cmd_sweep(argc, argv);
  if (cmd == "compare") return cmd_compare(argc, argv);
  if (cmd == "pe") return cmd_pe(argc, argv);
  if (cmd == "--help" || cmd == "-h" || cmd == "help") {
    usage();
    return 0;
  }
  std::cerr << "unknown command '" << cmd << "'\n";
  usage();
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "attnforge: " << e.what() << "\n";
    return 1;
  }
}
