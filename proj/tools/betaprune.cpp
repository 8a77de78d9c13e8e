// betaprune: train / decapitate / prune / fine-tune lab for the
// Beta-VAE-with-classifier and CNN baselines, with Table-1-style reporting.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "betaprune/experiment.hpp"
#include "oracles/verify_suite.hpp"

namespace fs = std::filesystem;
using namespace betaprune;

namespace {

std::vector<uint64_t> parse_seeds(const std::string& csv) {
  std::vector<uint64_t> seeds;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw Error(ErrorKind::config, "no seeds given");
  return seeds;
}

std::array<int, 3> parse_epochs(const std::string& csv) {
  std::array<int, 3> out{};
  std::stringstream ss(csv);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',') && i < 3) out[i++] = std::stoi(item);
  if (i != 3) throw Error(ErrorKind::config, "--epochs wants three comma-separated counts");
  return out;
}

std::string default_data_dir() {
  const char* env = std::getenv("BETAPRUNE_DATA_DIR");
  return env ? env : "data";
}

std::string row_file_name(const ResultRow& row) {
  std::string name = "row_" + to_string(row.dataset) + "_" +
                     (row.kind == ModelKind::cnn_classif ? "cnn" : "bvae");
  if (row.kind == ModelKind::beta_vae_classif) {
    std::ostringstream os;
    os << row.beta;
    name += "_b" + os.str();
  }
  name += row.pruned ? "_pruned" : "_unpruned";
  name += "_seed" + std::to_string(row.seed) + ".json";
  return name;
}

int cmd_run(const RunConfig& base) {
  auto [train, test] = base.dataset == DatasetKind::mnist ? load_mnist(base.data_dir)
                                                          : load_cifar10(base.data_dir);
  fs::create_directories(base.out_dir);
  for (uint64_t seed : base.seeds) {
    ResultRow row = run_protocol(base, seed, train, test);
    write_row_json(row, base.out_dir + "/" + row_file_name(row));
    std::cout << to_string(row.dataset) << " " << to_string(row.kind)
              << (row.kind == ModelKind::beta_vae_classif
                      ? " beta=" + std::to_string(static_cast<int>(row.beta))
                      : "")
              << (row.pruned ? " pruned" : "") << " seed=" << seed
              << ": acc=" << row.accuracy_pct << "% compressed=" << row.compressed_bytes
              << "B" << (row.collapsed ? " [collapsed]" : "") << "\n";
  }
  return 0;
}

int cmd_table(const std::string& in_dir, const std::string& format, std::string out_path) {
  std::map<std::string, std::vector<ResultRow>> groups;
  for (const auto& entry : fs::directory_iterator(in_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("row_", 0) != 0 || entry.path().extension() != ".json") continue;
    ResultRow row = read_row_json(entry.path().string());
    std::ostringstream key;
    key << to_string(row.dataset) << '|' << to_string(row.kind) << '|' << row.beta << '|'
        << row.pruned;
    groups[key.str()].push_back(std::move(row));
  }
  std::vector<AggregateRow> aggs;
  aggs.reserve(groups.size());
  for (auto& [key, rows] : groups) aggs.push_back(aggregate(rows));
  const TableFormat fmt = format == "md" ? TableFormat::markdown : TableFormat::csv;
  if (out_path.empty()) {
    out_path = in_dir + "/table." + (fmt == TableFormat::csv ? "csv" : "md");
  }
  emit_table(aggs, fmt, out_path);
  std::cout << "wrote " << out_path << " (" << aggs.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Beta-VAE / CNN training and pruning lab"};
  app.require_subcommand(1);

  RunConfig cfg;
  cfg.data_dir = default_data_dir();
  cfg.out_dir = "results";
  std::string dataset = "mnist", model = "cnn", seeds = "1,2,3", epochs = "30,2,2";
  double beta = -1.0;

  auto* run = app.add_subcommand("run", "train with the full protocol and record a result row");
  run->add_option("--dataset", dataset, "mnist or cifar10")
      ->check(CLI::IsMember({"mnist", "cifar10"}));
  run->add_option("--model", model, "cnn or bvae")->check(CLI::IsMember({"cnn", "bvae"}));
  run->add_option("--beta", beta, "KL weight (bvae only)");
  run->add_flag("--prune", cfg.prune, "prune at 50% sparsity and fine-tune");
  run->add_option("--seeds", seeds, "comma-separated run seeds");
  run->add_option("--epochs", epochs, "phase epochs: train,decap,prune (default 30,2,2)");
  run->add_option("--batch", cfg.batch_size, "batch size");
  run->add_option("--lr", cfg.lr, "Adam learning rate");
  run->add_option("--sparsity", cfg.sparsity, "pruning sparsity fraction");
  run->add_option("--data-dir", cfg.data_dir, "dataset directory (env BETAPRUNE_DATA_DIR)");
  run->add_option("--out", cfg.out_dir, "output directory for rows and model files");

  std::string table_in = "results", table_format = "csv", table_out;
  auto* table = app.add_subcommand("table", "aggregate recorded rows into a results table");
  table->add_option("--in", table_in, "directory with row_*.json files");
  table->add_option("--format", table_format, "csv or md")->check(CLI::IsMember({"csv", "md"}));
  table->add_option("--out", table_out, "output file (default <in>/table.<ext>)");

  auto* verify = app.add_subcommand("verify", "run the oracle check suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) {
      cfg.dataset = dataset == "mnist" ? DatasetKind::mnist : DatasetKind::cifar10;
      cfg.kind = model == "cnn" ? ModelKind::cnn_classif : ModelKind::beta_vae_classif;
      if (cfg.kind == ModelKind::beta_vae_classif) {
        if (beta < 0.0) throw Error(ErrorKind::config, "--beta is required for --model bvae");
        cfg.beta = beta;
      } else if (beta >= 0.0) {
        throw Error(ErrorKind::config, "--beta is only valid for --model bvae");
      }
      cfg.seeds = parse_seeds(seeds);
      const auto e = parse_epochs(epochs);
      cfg.phase1_epochs = e[0];
      cfg.phase2_epochs = e[1];
      cfg.phase3_epochs = e[2];
      cfg.validate();
      return cmd_run(cfg);
    }
    if (table->parsed()) return cmd_table(table_in, table_format, table_out);
    if (verify->parsed()) return run_verify_suite(std::cout) ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
