#include "bamifun/errors.hpp"
#include "bamifun/harness.hpp"
#include "bamifun/inference.hpp"
#include "bamifun/io.hpp"
#include "bamifun/selection.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace bamifun;

namespace {

struct Settings {
  std::uint64_t seed = 1;
  std::string out_dir = ".";
  std::string format = "bin";
  int R = 0;  // 0: choose from the data
  int L = 15;
  int degree = 3;
  int burn_in = 500;
  int draws = 100;
  int thinning = 5;
  bool center = true;
  double smooth_var = 0.0;  // 0: sample it
  double level = 0.95;
  int min_obs = 2;
  double factor_precision = 0.01;
};

struct ScenarioArgs {
  std::string kind = "single";
  Eigen::Index N = 100;
  Eigen::Index J = 0;  // 0: 1 for single-level, 4 for multiway
  Eigen::Index K = 100;
  double missing = 0.8;
  double noise_var = 1.0;
  bool constant = false;

  SimScenario build(const Settings& s) const {
    SimScenario sc;
    sc.kind = parse_scenario_kind(kind);
    sc.N = N;
    sc.K = K;
    sc.J = J > 0 ? J : (sc.is_multiway() ? 4 : 1);
    sc.missing_prop = missing;
    sc.noise_var = noise_var;
    sc.seed = s.seed;
    sc.min_obs = s.min_obs;
    sc.constant_eigenfunction = constant;
    sc.eigen_values = sc.is_multiway() ? multiway_factor_variances() : single_level_eigenvalues();
    return sc;
  }
};

McmcConfig mcmc_config(const Settings& s) {
  McmcConfig m;
  m.burn_in = s.burn_in;
  m.draws = s.draws;
  m.thinning = s.thinning;
  m.seed = s.seed;
  m.center = s.center;
  if (s.smooth_var > 0.0) m.fixed_smooth_var = s.smooth_var;
  m.validate();
  return m;
}

fs::path out_path(const Settings& s, const std::string& name) {
  fs::create_directories(s.out_dir);
  return fs::path(s.out_dir) / name;
}

std::ofstream open_table(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  out.precision(17);
  return out;
}

std::string array_name(const std::string& stem, const Settings& s) { return stem + (s.format == "csv" ? ".csv" : ".bin"); }

int choose_rank(const ObservedFunctionalMatrix& data, const SplineDesign& design, const Settings& s,
                std::vector<int> grid) {
  if (s.R > 0) return s.R;
  if (grid.empty()) grid = default_rank_grid(estimate_rank_pve(data));
  McmcConfig cv = McmcConfig::cross_validation();
  cv.seed = s.seed;
  cv.center = s.center;
  const RankSelection sel = cross_validate_rank(data, grid, design, cv);
  std::cout << "selected R = " << sel.rank << "\n";
  return sel.rank;
}

void write_mean(const Settings& s, const DrawArchive& archive, const LongFormatData& in) {
  const Eigen::MatrixXd mean = archive.posterior_mean();
  write_long_csv(out_path(s, "imputed_mean.csv"), mean, MaskMatrix::Ones(mean.rows(), mean.cols()),
                 in.feature_count(), in.times, in.subjects, in.features);
}

void report_archive(const fs::path& dir, const DrawArchive& a) {
  std::cout << "wrote " << a.size() << " completed datasets to " << dir.string() << " (R = " << a.rank
            << ", L = " << a.basis_size << ")\n";
}

int impute_single(const Settings& s, const std::string& input, const std::vector<int>& grid) {
  const LongFormatData in = read_long_csv(input);
  const ObservedFunctionalMatrix data = in.as_matrix();
  const SplineDesign design = make_spline_design(data.grid, s.L, s.degree);
  const int R = choose_rank(data, design, s, grid);
  const DrawArchive archive = run_single_chain(data, R, design, mcmc_config(s));
  const fs::path dir = out_path(s, "archive");
  write_archive(archive, dir, parse_archive_format(s.format));
  write_mean(s, archive, in);
  report_archive(dir, archive);
  return 0;
}

int impute_multiway(const Settings& s, const std::string& input) {
  if (s.R < 1) throw InvalidConfiguration("impute-multiway needs --R");
  const LongFormatData in = read_long_csv(input);
  const ObservedFunctionalTensor data = in.as_tensor();
  const SplineDesign design = make_spline_design(data.grid, s.L, s.degree);
  McmcConfig m = mcmc_config(s);
  m.prior.score_precision = s.factor_precision;
  const DrawArchive archive = run_multiway_chain(data, s.R, design, m);
  const fs::path dir = out_path(s, "archive");
  write_archive(archive, dir, parse_archive_format(s.format));
  write_mean(s, archive, in);
  report_archive(dir, archive);
  return 0;
}

void write_candidates(const fs::path& path, const char* column, const std::vector<CandidateScore>& table) {
  std::ofstream out = open_table(path);
  out << column << ",validation_mse\n";
  for (const auto& row : table) out << row.candidate << "," << row.mse << "\n";
}

int cv_rank(const Settings& s, const std::string& input, std::vector<int> grid) {
  const ObservedFunctionalMatrix data = read_long_csv(input).as_matrix();
  const SplineDesign design = make_spline_design(data.grid, s.L, s.degree);
  if (grid.empty()) grid = default_rank_grid(estimate_rank_pve(data));
  McmcConfig m = mcmc_config(s);
  const RankSelection sel = cross_validate_rank(data, grid, design, m);
  write_candidates(out_path(s, "cv_rank.csv"), "R", sel.table);
  std::cout << "selected R = " << sel.rank << "\n";
  return 0;
}

int cv_smooth(const Settings& s, const std::string& input, std::vector<double> candidates) {
  const ObservedFunctionalMatrix data = read_long_csv(input).as_matrix();
  const SplineDesign design = make_spline_design(data.grid, s.L, s.degree);
  if (candidates.empty()) candidates = default_smooth_candidates();
  const int R = s.R > 0 ? s.R : estimate_rank_pve(data);
  const SmoothSelection sel = grid_select_smooth_var(data, candidates, R, design, mcmc_config(s));
  write_candidates(out_path(s, "cv_smooth.csv"), "smooth_var", sel.table);
  std::cout << "selected smooth-var = " << sel.smooth_var << " (R = " << R << ")\n";
  return 0;
}

Eigen::VectorXd read_outcome(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  std::string line;
  std::vector<double> y;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const std::string field = line.substr(line.find_last_of(',') == std::string::npos ? 0 : line.find_last_of(',') + 1);
    try {
      std::size_t used = 0;
      y.push_back(std::stod(field, &used));
      if (used != field.size()) throw std::invalid_argument(field);
    } catch (const std::exception&) {
      throw InvalidInput(path + ": cannot parse outcome '" + field + "'");
    }
  }
  return Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
}

int pool_sofr(const Settings& s, const std::string& archive_dir, const std::string& outcome, const std::string& input,
              int beta_L, double lambda) {
  const DrawArchive archive = read_archive(archive_dir);
  const Eigen::VectorXd y = read_outcome(outcome);
  if (y.size() != archive.subjects) {
    throw InvalidInput("outcome has " + std::to_string(y.size()) + " rows but the archive has " +
                       std::to_string(archive.subjects) + " subjects");
  }
  const TimeGrid grid = input.empty() ? TimeGrid::linspace(static_cast<std::size_t>(archive.grid_size))
                                      : read_long_csv(input).grid;
  if (static_cast<Eigen::Index>(grid.size()) != archive.grid_size) throw InvalidInput("--input grid does not match the archive");
  SofrOptions opt;
  if (lambda >= 0.0) opt.smooth = lambda;
  PooledFunctional pooled = pooled_sofr(archive, y, make_spline_design(grid, beta_L, s.degree), opt, s.level);
  pooled.grid = grid.points();
  std::ofstream out = open_table(out_path(s, "sofr.csv"));
  out << "time,estimate,lower,upper,within_var,between_var,total_var,dof\n";
  for (Eigen::Index k = 0; k < pooled.estimate.size(); ++k) {
    out << pooled.grid[static_cast<std::size_t>(k)] << "," << pooled.estimate(k) << "," << pooled.lower(k) << ","
        << pooled.upper(k) << "," << pooled.within_var(k) << "," << pooled.between_var(k) << ","
        << pooled.total_var(k) << "," << pooled.dof(k) << "\n";
  }
  std::cout << "pooled " << pooled.imputations << " imputations into sofr.csv\n";
  return 0;
}

int intervals(const Settings& s, const std::string& archive_dir) {
  const DrawArchive archive = read_archive(archive_dir);
  const EntryIntervals iv = entry_credible_intervals(archive, archive.mask, s.level);
  std::ofstream out = open_table(out_path(s, "intervals.csv"));
  out << "subject,feature,time_index,mean,lower,upper\n";
  const Eigen::Index J = archive.features;
  std::size_t rows = 0;
  for (Eigen::Index i = 0; i < archive.subjects; ++i)
    for (Eigen::Index j = 0; j < J; ++j)
      for (Eigen::Index k = 0; k < archive.grid_size; ++k) {
        const Eigen::Index c = j + J * k;
        if (archive.mask(i, c)) continue;
        out << i + 1 << "," << j + 1 << "," << k + 1 << "," << iv.mean(i, c) << "," << iv.lower(i, c) << ","
            << iv.upper(i, c) << "\n";
        ++rows;
      }
  std::cout << rows << " missing cells written to intervals.csv\n";
  return 0;
}

int simulate(const Settings& s, const ScenarioArgs& args) {
  const SimScenario sc = args.build(s);
  sc.validate();
  Rng rng(s.seed);
  const TimeGrid grid = TimeGrid::unit_fractions(static_cast<std::size_t>(sc.K));
  Eigen::MatrixXd truth, full;
  if (sc.is_multiway()) {
    const MultiwaySample sample = generate_multiway(sc, rng);
    truth = sample.truth.mode1();
    full = sample.observed.mode1();
  } else {
    const SingleSample sample = generate_single(sc, rng);
    truth = sample.truth;
    full = sample.observed;
    if (sample.outcome) {
      std::ofstream y = open_table(out_path(s, "outcome.csv"));
      y << "subject,y\n";
      for (Eigen::Index i = 0; i < sample.outcome->size(); ++i) y << i + 1 << "," << (*sample.outcome)(i) << "\n";
      std::ofstream b = open_table(out_path(s, "beta.csv"));
      b << "time,beta\n";
      for (Eigen::Index k = 0; k < sample.beta.size(); ++k) b << grid[static_cast<std::size_t>(k)] << "," << sample.beta(k) << "\n";
    }
  }
  const MaskMatrix mask = sc.is_multiway() ? apply_missingness(sc.N, sc.J, sc.K, sc.missing_prop, sc.min_obs, rng)
                                           : apply_missingness(sc.N, sc.K, sc.missing_prop, sc.min_obs, rng);
  const std::vector<std::string> features =
      sc.is_multiway() ? [&] {
        std::vector<std::string> f;
        for (Eigen::Index j = 0; j < sc.J; ++j) f.push_back(std::to_string(j + 1));
        return f;
      }()
                       : std::vector<std::string>{};
  write_long_csv(out_path(s, "data.csv"), full, mask, sc.J, grid.points(), {}, features);
  const ArchiveFormat format = parse_archive_format(s.format);
  write_array(out_path(s, array_name("truth", s)), truth, sc.J, format);
  write_array(out_path(s, array_name("complete", s)), full, sc.J, format);
  std::cout << "simulated " << to_string(sc.kind) << " data: N = " << sc.N << ", J = " << sc.J << ", K = " << sc.K
            << ", " << mask.cast<int>().sum() << " observed cells\n";
  return 0;
}

int replicate(const Settings& s, const ScenarioArgs& args, const std::string& method, int reps, unsigned threads,
              const std::vector<int>& grid) {
  const SimScenario sc = args.build(s);
  ReplicationOptions o;
  if (s.R > 0) o.rank = s.R;
  o.rank_grid = grid;
  o.basis_size = s.L;
  o.degree = s.degree;
  o.beta_basis_size = s.L;
  o.mcmc = mcmc_config(s);
  o.mcmc.center = false;
  if (sc.is_multiway()) o.mcmc.prior.score_precision = s.factor_precision;
  o.level = s.level;
  if (threads > 0) o.threads = threads;
  const StudyResult r = run_replication_study(sc, parse_method(method), reps, o, s.seed);

  std::ofstream out = open_table(out_path(s, "replicates.csv"));
  out << "replicate,seed,rank,relative_mse,coverage,relative_ise,beta_coverage,runtime,error\n";
  auto opt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string(); };
  for (const auto& row : r.rows) {
    std::string err = row.error;
    for (char& ch : err)
      if (ch == ',' || ch == '\n') ch = ';';
    out << row.replicate << "," << row.seed << "," << row.rank << "," << row.relative_mse << "," << row.coverage << ","
        << opt(row.relative_ise) << "," << opt(row.beta_coverage) << "," << row.runtime << "," << err << "\n";
  }
  std::cout << method << " on " << to_string(sc.kind) << ", " << reps << " replicates\n"
            << "  relative MSE " << r.relative_mse.mean << " (se " << r.relative_mse.se << ")\n"
            << "  coverage     " << r.coverage.mean << " (se " << r.coverage.se << ")\n";
  if (r.beta_coverage.count > 0) {
    std::cout << "  relative ISE " << r.relative_ise.mean << " (se " << r.relative_ise.se << ")\n"
              << "  beta coverage " << r.beta_coverage.mean << " (se " << r.beta_coverage.se << ")\n";
  }
  if (r.failures > 0) std::cout << "  " << r.failures << " replicates failed; see replicates.csv\n";
  return 0;
}

void add_scenario_options(CLI::App* cmd, ScenarioArgs& a) {
  cmd->add_option("--scenario", a.kind, "single, single+outcome, multiway-lowrank or multiway-nonlowrank")
      ->capture_default_str();
  cmd->add_option("--N", a.N, "subjects")->capture_default_str();
  cmd->add_option("--J", a.J, "features (multiway; default 4)");
  cmd->add_option("--K", a.K, "grid points")->capture_default_str();
  cmd->add_option("--missing", a.missing, "missing proportion per curve")->capture_default_str();
  cmd->add_option("--noise-var", a.noise_var, "measurement-error variance")->capture_default_str();
  cmd->add_flag("--constant", a.constant, "lead the eigenfunction system with the constant function");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian multiple imputation for sparse functional data"};
  app.require_subcommand(1);
  Settings s;
  app.set_config("--config", "", "key=value file; every key matches a long option name");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.add_option("--seed", s.seed, "random seed")->capture_default_str();
  app.add_option("--out-dir", s.out_dir, "output directory")->capture_default_str();
  app.add_option("--format", s.format, "archive storage")->check(CLI::IsMember({"bin", "csv"}))->capture_default_str();
  app.add_option("--R", s.R, "number of components (0 = choose)")->check(CLI::NonNegativeNumber);
  app.add_option("--L", s.L, "spline basis size")->capture_default_str();
  app.add_option("--degree", s.degree, "spline degree")->capture_default_str();
  app.add_option("--burn-in", s.burn_in, "burn-in iterations")->capture_default_str();
  app.add_option("--draws", s.draws, "retained draws S")->capture_default_str();
  app.add_option("--thinning", s.thinning, "thinning interval")->capture_default_str();
  app.add_option("--center", s.center, "subtract observed column means (true/false)")->capture_default_str();
  app.add_option("--smooth-var", s.smooth_var, "fix sigma_B^2 (0 = sample)")->capture_default_str();
  app.add_option("--level", s.level, "interval level")->capture_default_str();
  app.add_option("--min-obs", s.min_obs, "minimum observed points per simulated curve")->capture_default_str();
  app.add_option("--factor-precision", s.factor_precision, "prior precision of multiway factor rows")
      ->capture_default_str();

  std::string input, archive_dir, outcome, method = "bamifun";
  std::vector<int> grid;
  std::vector<double> candidates;
  int beta_L = 15, reps = 10;
  double lambda = -1.0;
  unsigned threads = 0;
  ScenarioArgs scenario;

  auto* imp1 = app.add_subcommand("impute-single", "run the single-level sampler on a long CSV");
  imp1->add_option("--input", input, "subject,time,value CSV")->required()->check(CLI::ExistingFile);
  imp1->add_option("--grid", grid, "candidate ranks when --R is not given")->delimiter(',');

  auto* imp3 = app.add_subcommand("impute-multiway", "run the multiway sampler on a long CSV");
  imp3->add_option("--input", input, "subject,feature,time,value CSV")->required()->check(CLI::ExistingFile);

  auto* cvr = app.add_subcommand("cv-rank", "cross-validate the number of components");
  cvr->add_option("--input", input, "subject,time,value CSV")->required()->check(CLI::ExistingFile);
  cvr->add_option("--grid", grid, "candidate ranks")->delimiter(',');

  auto* cvs = app.add_subcommand("cv-smooth", "grid-search sigma_B^2");
  cvs->add_option("--input", input, "subject,time,value CSV")->required()->check(CLI::ExistingFile);
  cvs->add_option("--candidates", candidates, "sigma_B^2 values")->delimiter(',');

  auto* pool = app.add_subcommand("pool-sofr", "scalar-on-function regression pooled over an archive");
  pool->add_option("--archive", archive_dir, "archive directory")->required()->check(CLI::ExistingDirectory);
  pool->add_option("--outcome", outcome, "CSV with a header; the last column is y")->required()->check(CLI::ExistingFile);
  pool->add_option("--input", input, "original CSV, for its time grid")->check(CLI::ExistingFile);
  pool->add_option("--beta-L", beta_L, "basis size for beta")->capture_default_str();
  pool->add_option("--lambda", lambda, "fixed smoothing parameter (default: GCV)");

  auto* ivl = app.add_subcommand("intervals", "per-entry credible intervals from an archive");
  ivl->add_option("--archive", archive_dir, "archive directory")->required()->check(CLI::ExistingDirectory);

  auto* sim = app.add_subcommand("simulate", "write a simulated data set");
  add_scenario_options(sim, scenario);

  auto* rep = app.add_subcommand("replicate", "run a replication study");
  add_scenario_options(rep, scenario);
  rep->add_option("--method", method, "bamifun, no-smooth-proxy or single-impute-proxy")->capture_default_str();
  rep->add_option("--reps", reps, "replicates")->capture_default_str();
  rep->add_option("--threads", threads, "worker threads (default: hardware)");
  rep->add_option("--grid", grid, "candidate ranks when --R is not given")->delimiter(',');

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*imp1) return impute_single(s, input, grid);
    if (*imp3) return impute_multiway(s, input);
    if (*cvr) return cv_rank(s, input, grid);
    if (*cvs) return cv_smooth(s, input, candidates);
    if (*pool) return pool_sofr(s, archive_dir, outcome, input, beta_L, lambda);
    if (*ivl) return intervals(s, archive_dir);
    if (*sim) return simulate(s, scenario);
    if (*rep) return replicate(s, scenario, method, reps, threads, grid);
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
