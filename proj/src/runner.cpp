#include "concov/runner.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>

#include "concov/coverage.hpp"
#include "concov/error.hpp"

namespace concov {

Criterion parse_criterion(const std::string& text) {
  std::string t(text);
  std::ranges::transform(t, t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t == "nc") return Criterion::nc;
  if (t == "ssclp") return Criterion::ssclp;
  if (t == "bfc") return Criterion::bfc;
  if (t == "bfdc") return Criterion::bfdc;
  if (t == "ssc") {
    throw InputError("criterion 'ssc' (gradient-based search) is not supported; use 'ssclp' for sign-sign "
                     "coverage with the LP engine");
  }
  throw InputError(fmt::format("unknown criterion '{}' (expected nc, ssclp, bfc or bfdc)", text));
}

const char* criterion_label(Criterion c) {
  switch (c) {
    case Criterion::nc: return "NC";
    case Criterion::ssclp: return "SSC";
    case Criterion::bfc: return "BFC";
    case Criterion::bfdc: return "BFdC";
  }
  return "?";
}

void check_supported(Criterion c, Norm n) {
  const bool ok = c == Criterion::nc || c == Criterion::bfc || n == Norm::linf;
  if (!ok) {
    throw InputError(fmt::format("criterion {} is not available with norm {}; supported pairs are nc with l0 or "
                                 "linf, ssclp with linf, bfc with l0 or linf, bfdc with linf",
                                 criterion_label(c), norm_name(n)));
  }
}

std::vector<SuiteTest> init_suite(const Dataset& data, const Network& net, std::size_t size, Rng& rng) {
  if (size == 0) throw InputError("the initial test suite needs at least one input");
  if (data.test_x.empty()) throw DataError("the dataset has no test inputs");
  std::vector<std::size_t> order(data.test_x.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<SuiteTest> suite;
  for (std::size_t i : order) {
    const Tensor x = data.test_x[i].reshaped(net.input_shape());
    const std::size_t label = forward(net, x).label;
    if (label != data.test_y[i]) continue;
    SuiteTest t;
    t.id = suite.size();
    t.x = x;
    t.label = label;
    t.source = i;
    suite.push_back(std::move(t));
    if (suite.size() == size) return suite;
  }
  throw DataError(fmt::format("only {} of {} test inputs are correctly classified, {} requested", suite.size(),
                              data.test_x.size(), size));
}

std::string init_message(std::size_t size) {
  if (size == 1) return "Randomly selecting an input from test data.";
  return fmt::format("Initializing with {} randomly selected test cases that are correctly classified.", size);
}

std::string coverage_line(std::size_t iteration, Criterion c, std::uint64_t covered, std::uint64_t total) {
  const double v = total == 0 ? 0.0 : 100.0 * static_cast<double>(covered) / static_cast<double>(total);
  return fmt::format("#{} {}: {:.8f}{}", iteration, criterion_label(c), v, iteration == 0 ? "%" : "");
}

std::string termination_line(std::size_t iterations, std::size_t generated, std::size_t adversarial) {
  return fmt::format("Terminating after {} iteration{}: {} test{} generated, {} of which {} adversarial.", iterations,
                     iterations > 1 ? "s" : "", generated, generated > 1 ? "s" : "", adversarial,
                     adversarial > 1 ? "are" : "is");
}

std::string report_file_name(Criterion c, Norm n) {
  std::string crit = criterion_label(c);
  std::string norm = norm_name(n);
  std::ranges::transform(crit, crit.begin(), [](unsigned char ch) { return static_cast<char>(std::toupper(ch)); });
  std::ranges::transform(norm, norm.begin(), [](unsigned char ch) { return static_cast<char>(std::toupper(ch)); });
  return fmt::format("{}_{}_report.txt", crit, norm);
}

// ---------------------------------------------------------------------------
// Output files

namespace {

std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  return out;
}

bool is_grayscale_image(const Shape& s) { return s.size() == 3 && s[2] == 1; }

}  // namespace

void write_new_inputs(const std::vector<SuiteTest>& tests, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  std::size_t n = 0;
  for (const auto& t : tests) n = std::max(n, t.x.size());
  out << "id,parent,label,distance,adversarial";
  for (std::size_t i = 0; i < n; ++i) out << fmt::format(",f{}", i);
  out << '\n';
  for (const auto& t : tests) {
    if (!t.parent) continue;
    out << fmt::format("{},{},{},{},{}", t.id, *t.parent, t.label, t.distance, t.adversarial ? 1 : 0);
    for (double v : t.x.values()) out << fmt::format(",{}", v);
    out << '\n';
  }
  if (!out) throw DataError(fmt::format("failed writing {}", path.string()));
}

void write_pgm(const Tensor& image, const std::filesystem::path& path) {
  if (!is_grayscale_image(image.shape())) {
    throw InputError(fmt::format("PGM output needs an HxWx1 image, got {}", shape_string(image.shape())));
  }
  std::ofstream out = open_out(path, true);
  out << fmt::format("P5\n{} {}\n255\n", image.shape()[1], image.shape()[0]);
  for (double v : image.values()) {
    const auto byte = static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
    out.put(static_cast<char>(byte));
  }
  if (!out) throw DataError(fmt::format("failed writing {}", path.string()));
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read {}", path.string()));
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255 || w == 0 || h == 0) {
    throw DataError(fmt::format("{} is not an 8-bit binary PGM", path.string()));
  }
  in.get();
  std::vector<double> data(w * h);
  for (double& v : data) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw DataError(fmt::format("{} is truncated", path.string()));
    v = static_cast<double>(c) / 255.0;
  }
  return Tensor({h, w, 1}, std::move(data));
}

LofEstimator make_lof(const Dataset& data, std::size_t sample_size, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> order(data.train_x.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  order.resize(std::min(order.size(), sample_size));
  std::vector<std::vector<double>> sample;
  sample.reserve(order.size());
  for (std::size_t i : order) sample.emplace_back(data.train_x[i].data());
  return LofEstimator(std::move(sample), k);
}

namespace {

void write_outputs(const std::vector<SuiteTest>& suite, const std::vector<std::string>& report_lines,
                   const std::string& report_name, const std::filesystem::path& dir, bool save_all) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  if (!report_name.empty()) {
    std::ofstream report = open_out(dir / report_name);
    for (const auto& line : report_lines) report << line << '\n';
    if (!report) throw DataError(fmt::format("failed writing {}", (dir / report_name).string()));
  }
  write_new_inputs(suite, dir / "new_inputs.csv");
  for (const auto& t : suite) {
    if (!t.parent || !is_grayscale_image(t.x.shape())) continue;
    if (save_all) write_pgm(t.x, dir / fmt::format("test_{}.pgm", t.id));
    if (t.adversarial) write_pgm(t.x, dir / fmt::format("adv_{}.pgm", t.id));
  }
}

// ---------------------------------------------------------------------------
// The loop, with one set of hooks per criterion

class Loop {
public:
  Loop(const RunConfig& cfg, const Network& net, const Dataset& data, const LofEstimator* lof, std::ostream& log)
      : cfg_(cfg), net_(net), data_(data), lof_(lof), out_(log), rng_(derive_seed(cfg.rng_seed, 1)) {
    bounds_.lower = data.lower;
    bounds_.upper = data.upper;
    if (bounds_.lower.size() != net.input_size() || bounds_.upper.size() != net.input_size()) {
      throw InputError(fmt::format("the model takes {} features but the dataset has {}", net.input_size(),
                                   data.n_features));
    }
    ctx_.net = &net_;
    switch (cfg.criterion) {
      case Criterion::nc: nc_.emplace(select_relu_layers(net, cfg.layers)); break;
      case Criterion::ssclp:
        ssc_.emplace(net, select_ssc_layers(net, cfg.layers), cfg.cond_ratio);
        ctx_.ssc = &*ssc_;
        break;
      case Criterion::bfc:
      case Criterion::bfdc:
        if (!cfg.abstraction) throw InputError("criteria bfc and bfdc need a BN abstraction (--bn-abstr)");
        bn_.emplace(net, *cfg.abstraction);
        if (cfg.criterion == Criterion::bfdc && bn_->layers().size() < 2) {
          throw InputError("criterion bfdc needs an abstraction of at least two layers");
        }
        ctx_.bn = &*bn_;
        break;
    }
  }

  RunReport run() {
    emit(fmt::format("Starting tests for criterion {} with norm {} ({} max iteration{}).",
                     criterion_label(cfg_.criterion), norm_name(cfg_.norm), cfg_.max_iterations,
                     cfg_.max_iterations > 1 ? "s" : ""));
    Rng init_rng(derive_seed(cfg_.rng_seed, 0));
    emit(init_message(cfg_.init_size));
    for (auto& t : init_suite(data_, net_, cfg_.init_size, init_rng)) add(std::move(t), nullptr);
    if (bn_) {
      std::vector<Tensor> xs;
      for (const auto& t : report_.suite) xs.push_back(t.x);
      bn_fit(*bn_, net_, xs);
    }
    record(0);

    std::size_t i = 0;
    for (; i < cfg_.max_iterations; ++i) {
      if (!step()) {
        emit("Unable to find a new candidate input!");
        report_.exhausted = true;
        break;
      }
      record(i + 1);
    }
    report_.iterations = i;
    emit(termination_line(i, report_.generated, report_.adversarial));
    if (!cfg_.outputs.empty()) {
      write_outputs(report_.suite, report_.log, report_file_name(cfg_.criterion, cfg_.norm), cfg_.outputs,
                    cfg_.save_all_tests);
    }
    return std::move(report_);
  }

private:
  void emit(std::string line) {
    out_ << line << '\n';
    report_.log.push_back(std::move(line));
  }

  CoveragePoint coverage() const {
    switch (cfg_.criterion) {
      case Criterion::nc: return {nc_->covered_count(), nc_->total()};
      case Criterion::ssclp: return {ssc_->covered_count(), ssc_->total()};
      case Criterion::bfc: return {bn_->bfc_covered(), bn_->bfc_total()};
      case Criterion::bfdc: return {bn_->bfdc_covered(), bn_->bfdc_total()};
    }
    return {};
  }

  void record(std::size_t iteration) {
    const CoveragePoint p = coverage();
    report_.coverage.push_back(p);
    emit(coverage_line(iteration, cfg_.criterion, p.covered, p.total));
  }

  // Adds a test and its coverage; `parent` is null for initial tests, whose
  // BN counts are fitted in one go afterwards.
  void add(SuiteTest t, const ActivationTrace* parent) {
    ActivationTrace trace = forward_trace(net_, t.x);
    if (nc_) nc_->update(trace);
    if (ssc_ && parent != nullptr) ssc_->update(*parent, trace);
    if (bn_) {
      features_.push_back(bn_->features_of(trace));
      if (parent != nullptr) bn_->add(features_.back());
    }
    traces_.push_back(std::move(trace));
    report_.suite.push_back(std::move(t));
  }

  std::string describe(const NcTarget& t) const {
    for (const auto& l : nc_->layers()) {
      if (l.index == t.layer) return fmt::format("activation of {} in {}", index_string(l.shape, t.neuron), l.display);
    }
    return fmt::format("activation of {} in layer {}", t.neuron, t.layer);
  }

  std::string describe(const SscTarget& t) const {
    const SscLayer& l = ssc_->layers()[t.layer];
    return fmt::format("decision {} in {}, subject to condition {} in {}", index_string(l.decision_shape, t.decision),
                       l.decision_name, index_string(l.condition_shape, t.condition), l.condition_name);
  }

  std::string describe(const BfcTarget& t) const {
    const BnLayer& l = bn_->layers()[t.layer];
    return fmt::format("interval {} of feature {} in layer {}", l.intervals[t.feature].format(t.interval), t.feature,
                       l.name);
  }

  std::string describe(const BfdcTarget& t) const {
    const BnLayer& l = bn_->layers()[t.layer];
    return fmt::format("interval {} of feature {} in layer {}, subject to feature intervals ({}) in layer {}",
                       l.intervals[t.feature].format(t.interval), t.feature, l.name,
                       fmt::join(t.parent_bins, ", "), bn_->layers()[t.layer - 1].name);
  }

  template <class Target>
  std::optional<Selection<TestTarget>> widen(std::optional<Selection<Target>> s) {
    if (!s) return std::nullopt;
    return Selection<TestTarget>{s->target, s->candidate};
  }

  std::optional<Selection<TestTarget>> select() {
    switch (cfg_.criterion) {
      case Criterion::nc: return widen(nc_select_target(*nc_, traces_, attempted_));
      case Criterion::ssclp: return widen(ssc_select_target(*ssc_, traces_.size(), rng_, attempted_));
      case Criterion::bfc: return widen(bfc_select_target(*bn_, features_, attempted_));
      case Criterion::bfdc: return widen(bfdc_select_target(*bn_, features_, attempted_));
    }
    return std::nullopt;
  }

  // One iteration; false when no target is left.
  bool step() {
    const auto sel = select();
    if (!sel) return false;
    const std::size_t cand = sel->candidate;
    std::string what = std::visit([&](const auto& t) { return describe(t); }, sel->target);
    const bool from_test = cfg_.criterion == Criterion::bfc || cfg_.criterion == Criterion::bfdc;
    emit(fmt::format("| Targeting {}{}", what, from_test ? fmt::format(" (from test {})", cand) : ""));
    attempted_.insert(std::visit([&](const auto& t) { return attempt_key(t, cand); }, sel->target));

    const ActivationTrace& candidate = traces_[cand];
    EngineConfig ecfg = cfg_.engine;
    ecfg.norm = cfg_.norm;
    const EngineResult res = cfg_.norm == Norm::l0 ? pixelwise_search(ctx_, candidate, sel->target, bounds_, ecfg, rng_)
                                                   : lp_search(ctx_, candidate, sel->target, bounds_, ecfg, rng_);
    if (res.status != EngineStatus::found) return true;

    const SuiteTest& parent = report_.suite[cand];
    const Tensor x = res.x.reshaped(net_.input_shape());
    const std::size_t label = forward(net_, x).label;
    const Verdict v = vet(cfg_.oracle, lof_, parent.x.values(), parent.label, x.values(), label);
    if (!v.accepted) return true;

    SuiteTest t;
    t.id = report_.suite.size();
    t.x = x;
    t.label = label;
    t.parent = cand;
    t.source = parent.source;
    t.iteration = report_.coverage.size();
    t.distance = v.distance;
    t.adversarial = v.adversarial;
    t.target = std::move(what);
    ++report_.generated;
    if (v.adversarial) ++report_.adversarial;
    // the candidate's trace must outlive the push_back into traces_
    const ActivationTrace before = candidate;
    add(std::move(t), &before);
    return true;
  }

  const RunConfig& cfg_;
  const Network& net_;
  const Dataset& data_;
  const LofEstimator* lof_;
  std::ostream& out_;
  Rng rng_;
  InputBounds bounds_;
  TargetContext ctx_;
  std::optional<NcState> nc_;
  std::optional<SscState> ssc_;
  std::optional<BnAbstraction> bn_;
  std::vector<ActivationTrace> traces_;
  std::vector<TestFeatures> features_;
  AttemptSet attempted_;
  RunReport report_;
};

}  // namespace

RunReport run(const RunConfig& config, const Network& net, const Dataset& data, const LofEstimator* lof,
              std::ostream& log) {
  check_supported(config.criterion, config.norm);
  config.engine.validate();
  if (config.max_iterations > 0 && config.init_size == 0) throw InputError("--init must be at least 1");
  return Loop(config, net, data, lof, log).run();
}

// ---------------------------------------------------------------------------

FuzzRunReport run_fuzz(const FuzzRunConfig& config, const Network& net, const Dataset& data,
                       const LofEstimator* lof, std::ostream& log) {
  FuzzRunReport rep;
  Rng init_rng(derive_seed(config.fuzz.seed, 0));
  log << init_message(config.sample) << '\n';
  rep.seeds = init_suite(data, net, config.sample, init_rng);
  std::vector<Tensor> seeds;
  for (const auto& s : rep.seeds) seeds.push_back(s.x);
  const InputBounds bounds{data.lower, data.upper};
  log << fmt::format("Fuzzing with {} mutant{} over {} worker{}.\n", config.fuzz.iterations,
                     config.fuzz.iterations > 1 ? "s" : "", config.fuzz.workers, config.fuzz.workers > 1 ? "s" : "");
  rep.result = fuzz(net, seeds, bounds, config.fuzz, config.oracle, lof);
  log << fmt::format("{} mutant{} accepted, {} of which {} adversarial.\n", rep.result.accepted,
                     rep.result.accepted > 1 ? "s" : "", rep.result.adversarials.size(),
                     rep.result.adversarials.size() > 1 ? "are" : "is");
  if (!config.outputs.empty()) {
    std::vector<SuiteTest> tests;
    for (const auto& m : rep.result.adversarials) {
      SuiteTest t;
      t.id = rep.seeds.size() + m.index;
      t.x = m.x;
      t.label = m.verdict.label;
      t.parent = m.seed_index;
      t.source = rep.seeds[m.seed_index].source;
      t.distance = m.verdict.distance;
      t.adversarial = true;
      tests.push_back(std::move(t));
    }
    write_outputs(tests, {}, "", config.outputs, config.save_all_tests);
  }
  return rep;
}

}  // namespace concov
