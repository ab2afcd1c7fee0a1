#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "concov/bn.hpp"
#include "concov/data.hpp"
#include "concov/engines.hpp"
#include "concov/network.hpp"
#include "concov/oracle.hpp"
#include "concov/rng.hpp"

namespace concov {

enum class Criterion { nc, ssclp, bfc, bfdc };

/// Accepts nc, ssclp, bfc and bfdc (any case). "ssc" gets a dedicated
/// message since only its LP variant is available.
Criterion parse_criterion(const std::string& text);
/// "NC", "SSC", "BFC" or "BFdC", as shown in coverage lines.
const char* criterion_label(Criterion c);
/// Throws InputError unless the pair is one of nc x {l0, linf}, ssclp x linf,
/// bfc x {l0, linf} or bfdc x linf.
void check_supported(Criterion c, Norm n);

/// One test of the suite. Initial tests have no parent.
struct SuiteTest {
  std::size_t id = 0;
  Tensor x;
  std::size_t label = 0;
  std::optional<std::size_t> parent;
  std::size_t source = 0;     // initial tests: index in the test split
  std::size_t iteration = 0;  // iteration that added the test, 0 for initial tests
  double distance = 0.0;
  bool adversarial = false;
  std::string target;
};

/// Draws `size` correctly classified inputs from the test split, without
/// replacement, in an order fixed by `rng`. Throws DataError when fewer are
/// available.
std::vector<SuiteTest> init_suite(const Dataset& data, const Network& net, std::size_t size, Rng& rng);

/// "Randomly selecting an input from test data." for a single test,
/// "Initializing with K randomly selected test cases that are correctly
/// classified." otherwise.
std::string init_message(std::size_t size);

/// "#k CRIT: v" with 8 decimals; iteration 0 carries a percent sign.
std::string coverage_line(std::size_t iteration, Criterion c, std::uint64_t covered, std::uint64_t total);

/// "Terminating after N iterations: G tests generated, A of which are
/// adversarial." Nouns and verbs are plural only for counts above one.
std::string termination_line(std::size_t iterations, std::size_t generated, std::size_t adversarial);

struct RunConfig {
  Criterion criterion = Criterion::nc;
  Norm norm = Norm::linf;
  std::size_t init_size = 1;
  std::size_t max_iterations = 100;
  bool save_all_tests = false;
  std::uint64_t rng_seed = 0;
  std::filesystem::path outputs;  // empty: nothing is written
  std::vector<std::string> layers;
  double cond_ratio = 0.01;
  EngineConfig engine;
  OracleConfig oracle;
  /// Required for bfc and bfdc.
  std::optional<std::vector<BnLayer>> abstraction;
};

/// Coverage after an iteration as an exact fraction.
struct CoveragePoint {
  std::uint64_t covered = 0;
  std::uint64_t total = 0;
};

struct RunReport {
  std::vector<SuiteTest> suite;
  std::vector<CoveragePoint> coverage;  // index k: after iteration k
  std::size_t iterations = 0;
  std::size_t generated = 0;
  std::size_t adversarial = 0;
  bool exhausted = false;
  std::vector<std::string> log;  // report lines
};

/// The testing loop. Each iteration selects a target and a candidate test,
/// runs the engine matching the criterion and norm, vets the result and, on
/// acceptance, adds it to the suite. Report lines go to `log` as they are
/// produced. With a non-empty `outputs` directory the report, the CSV of
/// generated tests and, for image data, PGM files are written there.
RunReport run(const RunConfig& config, const Network& net, const Dataset& data, const LofEstimator* lof,
              std::ostream& log);

/// File name of the report: "<CRIT>_<NORM>_report.txt", e.g. "NC_L0_report.txt".
std::string report_file_name(Criterion c, Norm n);

/// Writes `tests` as CSV rows "id,parent,label,distance,adversarial,f0,...".
/// Initial tests are skipped.
void write_new_inputs(const std::vector<SuiteTest>& tests, const std::filesystem::path& path);

/// Binary grayscale PGM (P5, maxval 255) of an H x W x 1 image; pixels are
/// round(255 v) after clamping to [0, 1].
void write_pgm(const Tensor& image, const std::filesystem::path& path);
Tensor read_pgm(const std::filesystem::path& path);

/// Fits an LOF estimator on up to `sample_size` training inputs chosen by a
/// seeded shuffle.
LofEstimator make_lof(const Dataset& data, std::size_t sample_size, std::size_t k, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct FuzzRunConfig {
  std::size_t sample = 10;
  FuzzConfig fuzz;
  OracleConfig oracle;
  bool save_all_tests = false;
  std::filesystem::path outputs;
};

struct FuzzRunReport {
  std::vector<SuiteTest> seeds;
  FuzzResult result;
};

/// Fuzzes `sample` correctly classified test inputs and writes the
/// adversarial mutants like run() writes generated tests.
FuzzRunReport run_fuzz(const FuzzRunConfig& config, const Network& net, const Dataset& data,
                       const LofEstimator* lof, std::ostream& log);

}  // namespace concov
