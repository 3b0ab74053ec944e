// Command-line entry point: build-index, train, retrieve, evaluate, bench.
// Configuration comes from an optional flat key-value file (--config) with
// any key overridable as a flag, e.g. `--tree.k 8`. Flags win over the file.

#include <iostream>
#include <string>
#include <vector>

#include "seater/commands.hpp"
#include "seater/config.hpp"

namespace {

void print_usage(std::ostream& os) {
  os << "usage: seater_cli <command> [--config PATH] [--seed INT] [--out DIR] [--KEY VALUE]...\n"
        "\n"
        "commands:\n"
        "  build-index   build item embeddings and the identifier tree\n"
        "  train         train the retrieval model on the train split\n"
        "  retrieve      beam-search top-n items for eval users\n"
        "  evaluate      score a results file (HR/Recall/NDCG@K)\n"
        "  bench         tree/beam complexity benchmark over a k grid\n"
        "\n"
        "Any config key can be passed as --KEY VALUE (for example\n"
        "--data.interactions data.tsv --tree.k 8 --train.max_epochs 20).\n"
        "--seed and --out are shorthands for the seed/out keys.\n";
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty()) {
    print_usage(std::cerr);
    return 2;
  }
  if (args[0] == "-h" || args[0] == "--help") {
    print_usage(std::cout);
    return 0;
  }
  const std::string command = args[0];

  std::string config_path;
  seater::ConfigMap overrides;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "-h" || a == "--help") {
      print_usage(std::cout);
      return 0;
    }
    if (a.rfind("--", 0) != 0) {
      std::cerr << "error: unexpected argument `" << a << "`\n";
      return 2;
    }
    if (i + 1 >= args.size()) {
      std::cerr << "error: flag " << a << " expects a value\n";
      return 2;
    }
    const std::string key = a.substr(2);
    const std::string value = args[++i];
    if (key == "config")
      config_path = value;
    else
      overrides[key] = value;
  }

  try {
    seater::ConfigMap map;
    if (!config_path.empty()) map = seater::parse_config_file(config_path);
    for (const auto& [k, v] : overrides) map[k] = v;
    const seater::RunConfig cfg = seater::make_run_config(map);

    if (command == "build-index") return seater::cmd_build_index(cfg);
    if (command == "train") return seater::cmd_train(cfg);
    if (command == "retrieve") return seater::cmd_retrieve(cfg);
    if (command == "evaluate") return seater::cmd_evaluate(cfg);
    if (command == "bench") return seater::cmd_bench(cfg);
    std::cerr << "error: unknown command `" << command << "`\n";
    print_usage(std::cerr);
    return 2;
  } catch (const seater::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const seater::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
