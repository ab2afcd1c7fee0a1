// Command-line front end: test generation, fuzzing, BN abstractions, model
// generation and evaluation.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "concov/bn.hpp"
#include "concov/coverage.hpp"
#include "concov/data.hpp"
#include "concov/error.hpp"
#include "concov/model_io.hpp"
#include "concov/rng.hpp"
#include "concov/runner.hpp"

using namespace concov;

namespace {

struct DataArgs {
  std::string dataset;
  std::string model;
  std::string normalize = "none";
  std::string label_column = "class";
  std::string data_dir = "data";
  double test_fraction = 0.2;
  std::uint64_t seed = 0;

  void attach(CLI::App* app) {
    app->add_option("--dataset", dataset, "csv:TRAIN[,TEST], idx:IMAGES,LABELS[,TEST_IMAGES,TEST_LABELS], "
                                          "mnist or fashion_mnist")
        ->required();
    app->add_option("--model", model, "Model manifest (JSON)")->required();
    app->add_option("--normalize", normalize, "Tabular feature scaling: div255, minmax or none")
        ->capture_default_str();
    app->add_option("--label-column", label_column, "CSV label column")->capture_default_str();
    app->add_option("--data-dir", data_dir, "Directory holding named IDX datasets")->capture_default_str();
    app->add_option("--test-fraction", test_fraction, "Held-out fraction when a single file is given")
        ->capture_default_str();
    app->add_option("--rng-seed", seed, "Seed for every random choice")->capture_default_str();
  }

  std::pair<Network, Dataset> load() const {
    Network net = load_model(model);
    DatasetOptions opt;
    opt.normalize = parse_normalization(normalize);
    opt.label_column = label_column;
    opt.test_fraction = test_fraction;
    opt.seed = seed;
    opt.data_dir = data_dir;
    Dataset data = load_dataset(dataset, opt);
    if (data.n_features != net.input_size()) {
      throw InputError(fmt::format("model {} expects {} features, dataset {} has {}", model, net.input_size(),
                                   dataset, data.n_features));
    }
    return {std::move(net), std::move(data)};
  }
};

void print_setup(const RunConfig& cfg, const Network& net) {
  if (cfg.criterion == Criterion::nc) {
    const auto layers = select_relu_layers(net, cfg.layers);
    std::vector<std::string> names;
    for (const auto& l : layers) names.push_back(l.display);
    fmt::print("DNN under test has {} layer functions, {} of which {} to be covered:\n[{}]\n", net.depth(),
               layers.size(), layers.size() > 1 ? "are" : "is", fmt::join(names, ", "));
  } else if (cfg.criterion == Criterion::ssclp) {
    for (const auto& l : select_ssc_layers(net, cfg.layers)) {
      fmt::print("Considering {}(/{}) neuron pairs w.r.t decision layer {}\n", l.pair_count(), l.pair_count(),
                 l.decision_name);
    }
  }
}

std::optional<LofEstimator> lof_filter(const std::vector<std::string>& filters, const Dataset& data,
                                       OracleConfig& oracle, std::uint64_t seed) {
  if (filters.empty()) return std::nullopt;
  for (const auto& f : filters) {
    if (f != "LOF" && f != "lof") throw InputError(fmt::format("unknown filter '{}' (expected LOF)", f));
  }
  oracle.lof_enabled = true;
  const std::size_t n = std::min(oracle.lof_sample, data.train_x.size());
  fmt::print("Initializing LOF-based novelty estimator with {} training samples... ", n);
  std::cout.flush();
  LofEstimator lof = make_lof(data, oracle.lof_sample, oracle.lof_k, derive_seed(seed, 7));
  fmt::print("done\nLOF-based novelty offset is {}\n", -oracle.lof_threshold);
  return lof;
}

double dthr_from_factor(Norm norm, double factor, std::size_t n_features) {
  if (!(factor > 0)) throw InputError("--norm-factor must be positive");
  if (norm == Norm::linf) return factor;
  return std::max(1.0, std::floor(factor * static_cast<double>(n_features)));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coverage-guided test generation for feed-forward classifiers"};
  app.require_subcommand(1);

  // test -------------------------------------------------------------------
  auto* test = app.add_subcommand("test", "Generate tests for a coverage criterion");
  DataArgs test_data;
  test_data.attach(test);
  std::string outputs, criterion, norm, bn_path;
  std::vector<std::string> layers, filters;
  std::size_t init = 1, max_iterations = 100;
  std::optional<double> lb_hard;
  double norm_factor = 0.25, lb_noise = 0.1, cond_ratio = 0.01, lp_timeout = 60.0;
  bool save_all = false;
  test->add_option("--outputs", outputs, "Output directory")->required();
  test->add_option("--criterion", criterion, "nc, ssclp, bfc or bfdc")->required();
  test->add_option("--norm", norm, "l0 or linf")->required();
  test->add_option("--layers", layers, "Layers to cover (ReLU layer names)");
  test->add_option("--init", init, "Initial test suite size")->capture_default_str();
  test->add_option("--max-iterations", max_iterations, "Iteration budget")->capture_default_str();
  test->add_option("--norm-factor", norm_factor,
                   "Oracle distance threshold: absolute for linf, fraction of the features for l0")
      ->capture_default_str();
  test->add_option("--lb-hard", lb_hard, "Hard lower bound on the LP distance (default 1/255 for images, 1/100 "
                                         "otherwise)");
  test->add_option("--lb-noise", lb_noise, "Random extra lower bound on the LP distance")->capture_default_str();
  test->add_option("--lp-timeout", lp_timeout, "Time limit per LP, in seconds")->capture_default_str();
  test->add_option("--filters", filters, "Oracle post-filters (LOF)");
  test->add_option("--mcdc-cond-ratio", cond_ratio, "Fraction of fan-in conditions allowed to flip")
      ->capture_default_str();
  test->add_option("--bn-abstr", bn_path, "BN abstraction for bfc and bfdc");
  test->add_flag("--save-all-tests", save_all, "Save every generated test, not only adversarial ones");

  // fuzz -------------------------------------------------------------------
  auto* fz = app.add_subcommand("fuzz", "Mutation-based fuzzing");
  DataArgs fuzz_data;
  fuzz_data.attach(fz);
  FuzzRunConfig fuzz_cfg;
  std::string fuzz_outputs, fuzz_norm = "linf";
  std::vector<std::string> fuzz_filters;
  std::optional<double> fuzz_factor;
  fz->add_option("--outputs", fuzz_outputs, "Output directory")->required();
  fz->add_option("--sample", fuzz_cfg.sample, "Number of seed inputs")->capture_default_str();
  fz->add_option("-N,--iterations", fuzz_cfg.fuzz.iterations, "Total number of mutants")->required();
  fz->add_option("--processes", fuzz_cfg.fuzz.workers, "Worker threads")->capture_default_str();
  fz->add_option("--max-changes", fuzz_cfg.fuzz.max_changes, "Features changed per mutant at most (0: a quarter)");
  fz->add_option("--norm", fuzz_norm, "Oracle norm, l0 or linf")->capture_default_str();
  fz->add_option("--norm-factor", fuzz_factor, "Oracle distance threshold");
  fz->add_option("--filters", fuzz_filters, "Oracle post-filters (LOF)");
  fz->add_flag("--save-all-tests", fuzz_cfg.save_all_tests, "Also write test_<id>.pgm for image data");

  // dbnabstr ---------------------------------------------------------------
  auto* bn = app.add_subcommand("dbnabstr", "Create or show a BN abstraction");
  bn->require_subcommand(1);
  auto* create = bn->add_subcommand("create", "Fit an abstraction on training data");
  auto* show = bn->add_subcommand("show", "Print the features and intervals of an abstraction");
  DataArgs bn_data;
  bn_data.attach(create);
  std::string create_path, show_path, extraction = "pca", strategy = "uniform";
  CreateOptions create_opt;
  std::size_t train_size = 1000;
  create->add_option("file", create_path, "Abstraction file to write")->required();
  create->add_option("--layers", create_opt.layers, "Layers to abstract")->required();
  create->add_option("--feature-extraction", extraction, "Only pca")->capture_default_str();
  create->add_option("--num-features", create_opt.num_features, "Features per layer")->capture_default_str();
  create->add_option("--num-intervals", create_opt.num_intervals, "Intervals per feature")->capture_default_str();
  create->add_option("--discr-strategy", strategy, "uniform or quantile")->capture_default_str();
  create->add_flag("--extended-discr", create_opt.extended, "Add open intervals outside the training range");
  create->add_option("--train-size", train_size, "Training inputs used for fitting")->capture_default_str();
  show->add_option("file", show_path, "Abstraction file")->required();

  // gen-model --------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-model", "Generate a model with seeded random parameters");
  std::string gen_spec, gen_out, gen_shape;
  std::uint64_t gen_seed = 0;
  gen->add_option("--spec", gen_spec, "Architecture, e.g. dense:8,relu,dense:3,softmax")->required();
  gen->add_option("--input-shape", gen_shape, "Input shape, e.g. 28,28,1")->required();
  gen->add_option("--seed", gen_seed, "Parameter seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Model file to write")->required();

  // eval -------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Print the test accuracy of a model");
  DataArgs eval_data;
  eval_data.attach(ev);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*test) {
      RunConfig cfg;
      cfg.criterion = parse_criterion(criterion);
      cfg.norm = parse_norm(norm);
      check_supported(cfg.criterion, cfg.norm);
      auto [net, data] = test_data.load();
      cfg.init_size = init;
      cfg.max_iterations = max_iterations;
      cfg.save_all_tests = save_all;
      cfg.rng_seed = test_data.seed;
      cfg.outputs = outputs;
      cfg.layers = layers;
      cfg.cond_ratio = cond_ratio;
      cfg.engine.dmin_hard = lb_hard.value_or(data.kind == DataKind::image ? 1.0 / 255.0 : 0.01);
      cfg.engine.dmin_noise = lb_noise;
      cfg.engine.lp_time_limit = lp_timeout;
      cfg.oracle.norm = cfg.norm;
      cfg.oracle.dthr = dthr_from_factor(cfg.norm, norm_factor, data.n_features);
      if (cfg.criterion == Criterion::bfc || cfg.criterion == Criterion::bfdc) {
        if (bn_path.empty()) throw InputError("criteria bfc and bfdc need --bn-abstr");
        cfg.abstraction = load_abstraction(bn_path);
      }
      print_setup(cfg, net);
      const auto lof = lof_filter(filters, data, cfg.oracle, cfg.rng_seed);
      run(cfg, net, data, lof ? &*lof : nullptr, std::cout);
      fmt::print("Reporting into: {}\n", (std::filesystem::path(outputs) / report_file_name(cfg.criterion, cfg.norm)).string());
      return 0;
    }
    if (*fz) {
      auto [net, data] = fuzz_data.load();
      fuzz_cfg.fuzz.seed = fuzz_data.seed;
      fuzz_cfg.outputs = fuzz_outputs;
      fuzz_cfg.oracle.norm = parse_norm(fuzz_norm);
      fuzz_cfg.oracle.dthr = fuzz_factor ? dthr_from_factor(fuzz_cfg.oracle.norm, *fuzz_factor, data.n_features)
                                         : default_dthr(fuzz_cfg.oracle.norm, data.n_features);
      const auto lof = lof_filter(fuzz_filters, data, fuzz_cfg.oracle, fuzz_data.seed);
      run_fuzz(fuzz_cfg, net, data, lof ? &*lof : nullptr, std::cout);
      return 0;
    }
    if (*create) {
      if (extraction != "pca") throw InputError(fmt::format("unsupported feature extraction '{}' (only pca)", extraction));
      create_opt.strategy = parse_discr_strategy(strategy);
      auto [net, data] = bn_data.load();
      std::vector<std::size_t> order(data.train_x.size());
      std::iota(order.begin(), order.end(), 0);
      Rng rng(bn_data.seed);
      rng.shuffle(std::span<std::size_t>(order));
      order.resize(std::min(order.size(), train_size));
      std::vector<Tensor> sample;
      for (std::size_t i : order) sample.push_back(data.train_x[i].reshaped(net.input_shape()));
      const auto abstr = create_abstraction(net, sample, create_opt, std::cout);
      save_abstraction(abstr, create_path);
      fmt::print("Saved abstraction into: {}\n", create_path);
      return 0;
    }
    if (*show) {
      show_abstraction(load_abstraction(show_path), std::cout);
      return 0;
    }
    if (*gen) {
      save_model(generate_model(gen_spec, parse_shape(gen_shape), gen_seed), gen_out);
      fmt::print("Saved model into: {}\n", gen_out);
      return 0;
    }
    if (*ev) {
      auto [net, data] = eval_data.load();
      if (data.test_x.empty()) throw DataError("the dataset has no test inputs");
      std::size_t correct = 0;
      for (std::size_t i = 0; i < data.test_x.size(); ++i) {
        correct += forward(net, data.test_x[i].reshaped(net.input_shape())).label == data.test_y[i] ? 1 : 0;
      }
      fmt::print("Test accuracy: {:.2f}% ({}/{})\n", 100.0 * static_cast<double>(correct) /
                                                         static_cast<double>(data.test_x.size()),
                 correct, data.test_x.size());
      return 0;
    }
  } catch (const InputError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const DataError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 3;
  } catch (const SolverError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 4;
  }
  return 2;
}
