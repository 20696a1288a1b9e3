#pragma once

// Text and binary artifacts: CSV tables, PPM heatmaps, parameter checkpoints.
// Every writer goes through write_file_atomic (write to a temporary, then rename).

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "soc_ude/experiments.hpp"

namespace socude {

/// %.{digits}g formatting.
std::string format_sig(double x, int digits = 9);

/// Throws std::runtime_error naming the path on failure.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

/// FNV-1a 64 as 16 lowercase hex digits.
std::string hash_hex(const std::string& content);

/// Header z,true,pred,residual; one row per node, residual = pred - true.
std::string profile_csv(const Eigen::VectorXd& z, const Eigen::VectorXd& truth, const Eigen::VectorXd& pred);
void write_profile_csv(const std::filesystem::path& path, const DepthGrid& grid, const Eigen::VectorXd& truth,
                       const Eigen::VectorXd& pred);

struct ProfileRow {
  double z = 0.0, truth = 0.0, pred = 0.0, residual = 0.0;
};
std::vector<ProfileRow> parse_profile_csv(const std::string& text);

/// iter,phase,loss,grad_norm,failed,clipped[,wall_ms]
std::string history_csv(const TrainHistory& history, bool with_wall = true);
/// trial_id,h1,h2,activation,lr,lambda_term,lambda_coll,lambda_wd,params,tuning_loss,train_loss,iterations,seed,status[,wall_ms]
std::string sweep_csv(const std::vector<TrialResult>& trials, bool with_wall = true);
/// z,initial,target,clean_target
std::string dataset_csv(const Dataset& data);
/// time,z,ph,cec,clay on the driver lattice
std::string drivers_csv(const Dataset& data);

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

struct HeatmapBounds {
  double truth_min = 0.0, truth_max = 0.0;
  double pred_min = 0.0, pred_max = 0.0;
  double residual_min = 0.0, residual_max = 0.0;
  /// Shared color range of the truth and prediction panels.
  double value_min = 0.0, value_max = 0.0;
  /// Residual colors span [-residual_scale, residual_scale].
  double residual_scale = 0.0;
  int scale = 1;
};

/// Sequential map for t in [0, 1].
std::array<std::uint8_t, 3> sequential_color(double t);
/// Diverging map for t in [-1, 1], white at 0.
std::array<std::uint8_t, 3> diverging_color(double t);

/// [truth | pred | pred - truth] side by side, each cell a scale x scale block.
Image render_heatmap(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& pred, int scale, HeatmapBounds* bounds);
std::string encode_ppm(const Image& image);
Image decode_ppm(const std::string& data);

/// Writes the PPM and a "<path>.bounds.txt" sidecar.
HeatmapBounds write_heatmap(const std::filesystem::path& path, const Eigen::MatrixXd& truth,
                            const Eigen::MatrixXd& pred, int scale);
std::string bounds_text(const HeatmapBounds& b);

/// params.bin (float64 little-endian, production then respiration) and params.json.
void write_checkpoint(const std::filesystem::path& dir, const UdeParams<double>& params, const ModelConfig& model);
std::pair<UdeParams<double>, ModelConfig> read_checkpoint(const std::filesystem::path& dir);
std::string encode_params(const Eigen::VectorXd& flat);
Eigen::VectorXd decode_params(const std::string& bytes);

nlohmann::json trial_to_json(const TrialConfig& t);
TrialConfig trial_from_json(const nlohmann::json& j);
nlohmann::json metrics_to_json(const CaseMetrics& m);

}  // namespace socude
