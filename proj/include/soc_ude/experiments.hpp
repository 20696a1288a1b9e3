#pragma once

// The six synthetic cases, benchmark metrics and the end-to-end case runner.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "soc_ude/tuning.hpp"

namespace socude {

/// Per-case settings: observation time, noise levels and the final hyperparameters.
struct CaseTable {
  int id = 1;
  double target_time = 50.0;
  double driver_noise = 0.0;  // relative level, 0 = clean
  double target_noise = 0.0;
  MlpSpec mlp;
  double lr = 3e-3;
  LossWeights weights;
  int adam_iters = 200;
  int lbfgs_iters = 400;
  SearchSpace search;
};

/// Every constant of the experiments, all overridable through the JSON config.
struct ExperimentConfig {
  SimulationConfig sim;
  ModelConfig model;
  double train_dt = 0.1;
  double tune_rtol = 1e-5;
  double tune_atol = 1e-5;
  TrainConfig train;
  LossConfig loss;
  NoiseKind driver_noise_kind = NoiseKind::multiplicative_ar1;
  NoiseKind target_noise_kind = NoiseKind::multiplicative_iid;
  double noise_rho = 0.8;
  std::array<CaseTable, 6> cases;
  int heatmap_times = 51;
  int heatmap_scale = 8;

  ExperimentConfig();
  void validate() const;
};

/// Resolved, seed-specific description of one case.
struct CaseSpec {
  int id = 1;
  std::uint64_t seed = 7;
  DataSpec data;
  SearchSpace search;
  TrialConfig final_trial;
  TrainConfig final_train;
  LossConfig loss;
};

/// Throws std::invalid_argument unless 1 <= id <= 6.
CaseSpec case_spec(int id, const ExperimentConfig& cfg, std::uint64_t seed);

double mse(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth);
double rmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth);
/// 1 - SSE / SST. Throws std::domain_error when truth is constant or shorter than 2.
double r_squared(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth);
Eigen::VectorXd residual_profile(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth);

enum class RunMode { tune_then_final, final_only };

std::string to_string(RunMode m);
RunMode parse_run_mode(const std::string& text);

struct CaseMetrics {
  double mse_noisy = 0.0;  // against the training target
  double rmse_noisy = 0.0;
  double r2_noisy = 0.0;
  double mse_clean = 0.0;  // against the noise-free profile
  double rmse_clean = 0.0;
  double r2_clean = 0.0;
  double max_abs_residual = 0.0;
};

CaseMetrics compute_metrics(const Eigen::VectorXd& pred, const Eigen::VectorXd& target, const Eigen::VectorXd& clean);

struct CaseOptions {
  RunMode mode = RunMode::tune_then_final;
  int workers = 1;
  Precision precision = Precision::f64;
  /// Empty: no files are written.
  std::filesystem::path out_dir;
  /// Replaces the final hyperparameters (e.g. read from a tuning manifest).
  std::optional<TrialConfig> final_override;
  /// Forced solver failures during final training (global iteration numbers).
  std::set<int> fail_iterations;
  std::ostream* log = nullptr;
};

struct CaseReport {
  int id = 0;
  std::uint64_t seed = 0;
  RunMode mode = RunMode::tune_then_final;
  Precision precision = Precision::f64;
  bool ok = false;
  std::string status;
  TrialConfig best;
  std::vector<TrialResult> trials;
  TrainHistory history;
  double final_train_loss = 0.0;
  int best_iter = -1;
  CaseMetrics metrics;
  Eigen::VectorXd z;
  Eigen::VectorXd truth;  // clean profile at the target time
  Eigen::VectorXd target;
  Eigen::VectorXd pred;
  Eigen::VectorXd residual;  // pred - truth
  std::map<std::string, std::string> artifacts;  // name -> path relative to out_dir
  std::map<std::string, std::string> hashes;     // name -> FNV-1a 64 of deterministic content
  double tune_ms = 0.0;
  double final_ms = 0.0;
};

/// Model and clean trajectories over [t_start, t_end] (rows = depth, columns = time).
struct TrajectoryPair {
  std::vector<double> times;
  Eigen::MatrixXd truth;
  Eigen::MatrixXd pred;
};

template <typename Scalar>
std::optional<TrajectoryPair> evaluate_trajectories(const UdeParams<Scalar>& params, const Dataset& data,
                                                    const ModelConfig& model, int n_times, double rtol, double atol);

/// Builds the dataset, optionally tunes, retrains, evaluates and writes
/// artifacts. Never throws for run failures; they are reported in status.
CaseReport run_case(const CaseSpec& spec, const ExperimentConfig& cfg, const CaseOptions& opts);

/// Dataset of a case as used by run_case.
Dataset case_dataset(const CaseSpec& spec, const ExperimentConfig& cfg);

/// Final training of one configuration; the returned parameters are double.
struct FinalFit {
  UdeParams<double> params;
  TrainHistory history;
  double best_loss = 0.0;
  int best_iter = -1;
};

FinalFit final_fit(const CaseSpec& spec, const ExperimentConfig& cfg, const Dataset& data, const TrialConfig& trial,
                   Precision precision, const std::set<int>& fail_iterations = {}, std::ostream* log = nullptr);

/// Metrics, profile, heatmap and checkpoint for trained parameters. Fills the
/// corresponding fields of report; writes files when out_dir is non-empty.
void evaluate_into(CaseReport& report, const UdeParams<double>& params, const Dataset& data,
                   const ExperimentConfig& cfg, Precision precision, const std::filesystem::path& out_dir);

}  // namespace socude
