#include "soc_ude/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#ifdef SOC_UDE_HAVE_PNG
#include <png.h>
#endif

namespace socude {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_sig(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), std::streamsize(content.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp, ec);
      throw std::runtime_error("write failed for '" + path.string() + "'");
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw std::runtime_error("cannot rename into '" + path.string() + "': " + ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hash_hex(const std::string& content) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(content)));
  return buf;
}

std::string profile_csv(const Eigen::VectorXd& z, const Eigen::VectorXd& truth, const Eigen::VectorXd& pred) {
  if (z.size() != truth.size() || z.size() != pred.size())
    throw std::invalid_argument("profile_csv: column lengths differ");
  std::string out = "z,true,pred,residual\n";
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    out += format_sig(z[i]) + ',' + format_sig(truth[i]) + ',' + format_sig(pred[i]) + ',' +
           format_sig(pred[i] - truth[i]) + '\n';
  }
  return out;
}

void write_profile_csv(const fs::path& path, const DepthGrid& grid, const Eigen::VectorXd& truth,
                       const Eigen::VectorXd& pred) {
  write_file_atomic(path, profile_csv(grid.nodes, truth, pred));
}

std::vector<ProfileRow> parse_profile_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "z,true,pred,residual")
    throw std::runtime_error("profile csv: unexpected header");
  std::vector<ProfileRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ProfileRow r;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &r.z, &r.truth, &r.pred, &r.residual) != 4)
      throw std::runtime_error("profile csv: malformed row '" + line + "'");
    rows.push_back(r);
  }
  return rows;
}

std::string history_csv(const TrainHistory& history, bool with_wall) {
  std::string out = with_wall ? "iter,phase,loss,grad_norm,failed,clipped,wall_ms\n"
                              : "iter,phase,loss,grad_norm,failed,clipped\n";
  for (const HistoryRecord& r : history.records) {
    out += std::to_string(r.iter) + ',' + r.phase + ',' + format_sig(r.loss, 17) + ',' +
           format_sig(r.grad_norm, 17) + ',' + (r.failed ? "1" : "0") + ',' + (r.clipped ? "1" : "0");
    if (with_wall) out += ',' + format_sig(r.wall_ms, 6);
    out += '\n';
  }
  return out;
}

std::string sweep_csv(const std::vector<TrialResult>& trials, bool with_wall) {
  std::string out =
      "trial_id,h1,h2,activation,lr,lambda_term,lambda_coll,lambda_wd,params,tuning_loss,train_loss,iterations,"
      "seed,status";
  out += with_wall ? ",wall_ms\n" : "\n";
  for (const TrialResult& r : trials) {
    const TrialConfig& c = r.config;
    out += std::to_string(c.id) + ',' + std::to_string(c.mlp.h1) + ',' + std::to_string(c.mlp.h2) + ',' +
           to_string(c.mlp.activation) + ',' + format_sig(c.lr) + ',' + format_sig(c.weights.term) + ',' +
           format_sig(c.weights.coll) + ',' + format_sig(c.weights.wd) + ',' +
           std::to_string(2 * c.mlp.param_count()) + ',' + format_sig(r.tuning_loss, 17) + ',' +
           format_sig(r.train_loss, 17) + ',' + std::to_string(r.iterations) + ',' + std::to_string(r.seed) + ',' +
           r.status;
    if (with_wall) out += ',' + format_sig(r.wall_ms, 6);
    out += '\n';
  }
  return out;
}

std::string dataset_csv(const Dataset& data) {
  std::string out = "z,initial,target,clean_target\n";
  for (int i = 0; i < data.grid.nz; ++i) {
    out += format_sig(data.grid.nodes[i]) + ',' + format_sig(data.initial_profile.values[i], 17) + ',' +
           format_sig(data.target_profile.values[i], 17) + ',' + format_sig(data.clean_target.values[i], 17) + '\n';
  }
  return out;
}

std::string drivers_csv(const Dataset& data) {
  std::string out = "time,z,ph,cec,clay\n";
  const auto& times = data.drivers.times();
  for (std::size_t k = 0; k < times.size(); ++k) {
    for (int i = 0; i < data.grid.nz; ++i) {
      const Eigen::Index r = Eigen::Index(k);
      out += format_sig(times[k]) + ',' + format_sig(data.grid.nodes[i]) + ',' +
             format_sig(data.drivers.ph()(r, i), 17) + ',' + format_sig(data.drivers.cec()(r, i), 17) + ',' +
             format_sig(data.drivers.clay()(r, i), 17) + '\n';
    }
  }
  return out;
}

namespace {

using Rgb = std::array<std::uint8_t, 3>;

Rgb lerp_stops(const std::vector<std::array<double, 3>>& stops, double t) {
  t = std::clamp(t, 0.0, 1.0);
  const double pos = t * double(stops.size() - 1);
  const std::size_t j = std::min(std::size_t(pos), stops.size() - 2);
  const double w = pos - double(j);
  Rgb out;
  for (int c = 0; c < 3; ++c) {
    const double v = (1.0 - w) * stops[j][c] + w * stops[j + 1][c];
    out[c] = std::uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
  }
  return out;
}

}  // namespace

std::array<std::uint8_t, 3> sequential_color(double t) {
  // Viridis anchor points.
  static const std::vector<std::array<double, 3>> stops{
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  return lerp_stops(stops, t);
}

std::array<std::uint8_t, 3> diverging_color(double t) {
  static const std::vector<std::array<double, 3>> stops{
      {33, 102, 172}, {146, 197, 222}, {255, 255, 255}, {244, 165, 130}, {178, 24, 43}};
  return lerp_stops(stops, 0.5 * (std::clamp(t, -1.0, 1.0) + 1.0));
}

Image render_heatmap(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& pred, int scale, HeatmapBounds* bounds) {
  if (truth.rows() != pred.rows() || truth.cols() != pred.cols())
    throw std::invalid_argument("render_heatmap: matrices differ in shape");
  if (truth.size() == 0) throw std::invalid_argument("render_heatmap: empty matrix");
  if (scale < 1) throw std::invalid_argument("render_heatmap: scale must be >= 1");
  const Eigen::MatrixXd resid = pred - truth;

  HeatmapBounds b;
  b.scale = scale;
  b.truth_min = truth.minCoeff();
  b.truth_max = truth.maxCoeff();
  b.pred_min = pred.minCoeff();
  b.pred_max = pred.maxCoeff();
  b.residual_min = resid.minCoeff();
  b.residual_max = resid.maxCoeff();
  b.value_min = std::min(b.truth_min, b.pred_min);
  b.value_max = std::max(b.truth_max, b.pred_max);
  b.residual_scale = std::max(std::abs(b.residual_min), std::abs(b.residual_max));
  if (bounds) *bounds = b;

  const int rows = int(truth.rows()), cols = int(truth.cols());
  Image img;
  img.width = 3 * cols * scale;
  img.height = rows * scale;
  img.rgb.assign(std::size_t(img.width) * std::size_t(img.height) * 3, 0);
  const double span = b.value_max - b.value_min;
  auto value_t = [&](double v) { return span > 0.0 ? (v - b.value_min) / span : 0.5; };
  auto resid_t = [&](double v) { return b.residual_scale > 0.0 ? v / b.residual_scale : 0.0; };

  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const std::array<Rgb, 3> cells{sequential_color(value_t(truth(r, c))), sequential_color(value_t(pred(r, c))),
                                     diverging_color(resid_t(resid(r, c)))};
      for (int p = 0; p < 3; ++p) {
        for (int dy = 0; dy < scale; ++dy) {
          for (int dx = 0; dx < scale; ++dx) {
            const std::size_t x = std::size_t((p * cols + c) * scale + dx);
            const std::size_t y = std::size_t(r * scale + dy);
            std::memcpy(&img.rgb[(y * std::size_t(img.width) + x) * 3], cells[p].data(), 3);
          }
        }
      }
    }
  }
  return img;
}

std::string encode_ppm(const Image& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
  return out;
}

Image decode_ppm(const std::string& data) {
  std::istringstream in(data);
  std::string magic;
  Image img;
  int maxval = 0;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P6" || maxval != 255 || img.width <= 0 || img.height <= 0)
    throw std::runtime_error("decode_ppm: unsupported header");
  in.get();
  img.rgb.resize(std::size_t(img.width) * std::size_t(img.height) * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), std::streamsize(img.rgb.size()));
  if (in.gcount() != std::streamsize(img.rgb.size())) throw std::runtime_error("decode_ppm: truncated pixel data");
  return img;
}

std::string bounds_text(const HeatmapBounds& b) {
  std::string out;
  auto kv = [&](const char* k, double v) { out += std::string(k) + '=' + format_sig(v, 17) + '\n'; };
  out += "layout=true|pred|residual\n";
  kv("value_min", b.value_min);
  kv("value_max", b.value_max);
  kv("truth_min", b.truth_min);
  kv("truth_max", b.truth_max);
  kv("pred_min", b.pred_min);
  kv("pred_max", b.pred_max);
  kv("residual_min", b.residual_min);
  kv("residual_max", b.residual_max);
  kv("residual_scale", b.residual_scale);
  out += "scale=" + std::to_string(b.scale) + '\n';
  return out;
}

#ifdef SOC_UDE_HAVE_PNG
namespace {
void write_png(const fs::path& path, const Image& img) {
  const fs::path tmp = path.string() + ".tmp";
  FILE* fp = std::fopen(tmp.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    std::remove(tmp.c_str());
    throw std::runtime_error("png encoding failed for '" + path.string() + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(&img.rgb[std::size_t(y) * std::size_t(img.width) * 3]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot rename into '" + path.string() + "': " + ec.message());
}
}  // namespace
#endif

HeatmapBounds write_heatmap(const fs::path& path, const Eigen::MatrixXd& truth, const Eigen::MatrixXd& pred,
                            int scale) {
  HeatmapBounds b;
  const Image img = render_heatmap(truth, pred, scale, &b);
  write_file_atomic(path, encode_ppm(img));
  write_file_atomic(path.string() + ".bounds.txt", bounds_text(b));
#ifdef SOC_UDE_HAVE_PNG
  fs::path png_path = path;
  png_path.replace_extension(".png");
  write_png(png_path, img);
#endif
  return b;
}

std::string encode_params(const Eigen::VectorXd& flat) {
  std::string out(std::size_t(flat.size()) * 8, '\0');
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &flat[i], 8);
    for (int b = 0; b < 8; ++b) out[std::size_t(i) * 8 + std::size_t(b)] = char((bits >> (8 * b)) & 0xff);
  }
  return out;
}

Eigen::VectorXd decode_params(const std::string& bytes) {
  if (bytes.size() % 8 != 0) throw std::runtime_error("decode_params: size is not a multiple of 8");
  Eigen::VectorXd flat(Eigen::Index(bytes.size() / 8));
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= std::uint64_t(std::uint8_t(bytes[std::size_t(i) * 8 + std::size_t(b)])) << (8 * b);
    std::memcpy(&flat[i], &bits, 8);
  }
  return flat;
}

void write_checkpoint(const fs::path& dir, const UdeParams<double>& params, const ModelConfig& model) {
  const std::string bin = encode_params(params.flatten());
  const LayerOffsets off = layer_offsets(params.spec);
  json header;
  header["format"] = "float64-le";
  header["h1"] = params.spec.h1;
  header["h2"] = params.spec.h2;
  header["activation"] = to_string(params.spec.activation);
  header["params_per_network"] = off.total;
  header["networks"] = {"production", "respiration"};
  header["layout"] = {{"w1", off.w1}, {"b1", off.b1}, {"w2", off.w2}, {"b2", off.b2}, {"w3", off.w3}, {"b3", off.b3}};
  header["weight_order"] = "column-major, rows = fan_out";
  header["feature_shift"] = model.scaling.shift;
  header["feature_scale"] = model.scaling.scale;
  header["rate_scale"] = model.rate_scale;
  header["hash"] = hash_hex(bin);
  write_file_atomic(dir / "params.bin", bin);
  write_file_atomic(dir / "params.json", header.dump(2) + "\n");
}

std::pair<UdeParams<double>, ModelConfig> read_checkpoint(const fs::path& dir) {
  const json header = json::parse(read_file(dir / "params.json"));
  if (header.at("format") != "float64-le") throw std::runtime_error("checkpoint: unsupported format");
  MlpSpec spec;
  spec.h1 = header.at("h1").get<int>();
  spec.h2 = header.at("h2").get<int>();
  spec.activation = parse_activation(header.at("activation").get<std::string>());
  spec.validate();
  const std::string bin = read_file(dir / "params.bin");
  if (header.contains("hash") && header.at("hash").get<std::string>() != hash_hex(bin))
    throw std::runtime_error("checkpoint: params.bin does not match its header hash");
  ModelConfig model;
  model.scaling.shift = header.at("feature_shift").get<std::array<double, 6>>();
  model.scaling.scale = header.at("feature_scale").get<std::array<double, 6>>();
  model.rate_scale = header.at("rate_scale").get<double>();
  return {UdeParams<double>::unflatten(spec, decode_params(bin)), model};
}

json trial_to_json(const TrialConfig& t) {
  return {{"id", t.id},
          {"h1", t.mlp.h1},
          {"h2", t.mlp.h2},
          {"activation", to_string(t.mlp.activation)},
          {"lr", t.lr},
          {"lambda_term", t.weights.term},
          {"lambda_coll", t.weights.coll},
          {"lambda_wd", t.weights.wd}};
}

TrialConfig trial_from_json(const json& j) {
  TrialConfig t;
  t.id = j.value("id", 0);
  t.mlp.h1 = j.at("h1").get<int>();
  t.mlp.h2 = j.at("h2").get<int>();
  t.mlp.activation = parse_activation(j.at("activation").get<std::string>());
  t.mlp.validate();
  t.lr = j.at("lr").get<double>();
  t.weights.term = j.at("lambda_term").get<double>();
  t.weights.coll = j.at("lambda_coll").get<double>();
  t.weights.wd = j.at("lambda_wd").get<double>();
  return t;
}

json metrics_to_json(const CaseMetrics& m) {
  return {{"mse_noisy", m.mse_noisy},   {"rmse_noisy", m.rmse_noisy}, {"r2_noisy", m.r2_noisy},
          {"mse_clean", m.mse_clean},   {"rmse_clean", m.rmse_clean}, {"r2_clean", m.r2_clean},
          {"max_abs_residual", m.max_abs_residual}};
}

}  // namespace socude
