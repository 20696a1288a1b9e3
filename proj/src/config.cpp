#include "soc_ude/config.hpp"

#include "soc_ude/io.hpp"

namespace socude {

using nlohmann::json;

namespace {

json search_to_json(const SearchSpace& s) {
  json acts = json::array();
  for (Activation a : s.activations) acts.push_back(to_string(a));
  json weights = json::array();
  for (const LossWeights& w : s.loss_weight_options) weights.push_back({w.term, w.coll, w.wd});
  return {{"h1", s.h1_options},
          {"h2", s.h2_options},
          {"activations", acts},
          {"learning_rates", s.learning_rates},
          {"loss_weights", weights},
          {"adam_iters", s.adam_iters},
          {"lbfgs_iters", s.lbfgs_iters}};
}

SearchSpace search_from_json(const json& j) {
  SearchSpace s;
  s.h1_options = j.at("h1").get<std::vector<int>>();
  s.h2_options = j.at("h2").get<std::vector<int>>();
  s.activations.clear();
  for (const auto& a : j.at("activations")) s.activations.push_back(parse_activation(a.get<std::string>()));
  s.learning_rates = j.at("learning_rates").get<std::vector<double>>();
  s.loss_weight_options.clear();
  for (const auto& w : j.at("loss_weights")) {
    const auto v = w.get<std::vector<double>>();
    if (v.size() != 3) throw std::invalid_argument("config: loss_weights entries are [term, coll, wd]");
    s.loss_weight_options.push_back({v[0], v[1], v[2]});
  }
  s.adam_iters = j.at("adam_iters").get<int>();
  s.lbfgs_iters = j.at("lbfgs_iters").get<int>();
  return s;
}

void reject_unknown(const json& patch, const json& reference, const std::string& where) {
  if (!patch.is_object() || !reference.is_object()) return;
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!reference.contains(it.key())) throw std::invalid_argument("config: unknown key '" + path + "'");
    reject_unknown(it.value(), reference.at(it.key()), path);
  }
}

}  // namespace

json config_to_json(const ExperimentConfig& c) {
  json j;
  const SimulationConfig& s = c.sim;
  j["simulation"] = {{"nz", s.nz},
                     {"z_min", s.z_min},
                     {"z_max", s.z_max},
                     {"t_end", s.t_end},
                     {"c0", s.initial.c0},
                     {"k_decay", s.initial.k_decay},
                     {"depth_scale", s.initial.depth_scale},
                     {"diffusion", s.transport.diffusion},
                     {"advection", s.transport.advection},
                     {"driver_lattice_times", s.driver_lattice_times},
                     {"clip_noisy_target", s.clip_noisy_target},
                     {"eval_rtol", s.eval_rtol},
                     {"eval_atol", s.eval_atol}};
  j["model"] = {{"feature_shift", c.model.scaling.shift},
                {"feature_scale", c.model.scaling.scale},
                {"rate_scale", c.model.rate_scale}};
  j["integrator"] = {{"train_dt", c.train_dt}, {"tune_rtol", c.tune_rtol}, {"tune_atol", c.tune_atol}};
  j["training"] = {{"lbfgs_memory", c.train.lbfgs_memory},
                   {"early_stop_patience", c.train.early_stop_patience},
                   {"early_stop_min_delta", c.train.early_stop_min_delta},
                   {"clip_norm", c.train.clip_norm},
                   {"lbfgs_initial_step", c.train.lbfgs_initial_step}};
  j["loss"] = {{"collocation_times", c.loss.collocation_times},
               {"collocation_stride", c.loss.collocation_stride},
               {"collocation_delta", c.loss.collocation_delta}};
  j["noise"] = {{"driver_kind", to_string(c.driver_noise_kind)},
                {"target_kind", to_string(c.target_noise_kind)},
                {"rho", c.noise_rho}};
  json cases = json::object();
  for (const CaseTable& t : c.cases) {
    cases[std::to_string(t.id)] = {{"target_time", t.target_time},
                                   {"driver_noise", t.driver_noise},
                                   {"target_noise", t.target_noise},
                                   {"h1", t.mlp.h1},
                                   {"h2", t.mlp.h2},
                                   {"activation", to_string(t.mlp.activation)},
                                   {"lr", t.lr},
                                   {"lambda_term", t.weights.term},
                                   {"lambda_coll", t.weights.coll},
                                   {"lambda_wd", t.weights.wd},
                                   {"adam_iters", t.adam_iters},
                                   {"lbfgs_iters", t.lbfgs_iters},
                                   {"search", search_to_json(t.search)}};
  }
  j["cases"] = cases;
  j["output"] = {{"heatmap_times", c.heatmap_times}, {"heatmap_scale", c.heatmap_scale}};
  return j;
}

ExperimentConfig config_from_json(const json& patch, const ExperimentConfig& base) {
  const json defaults = config_to_json(base);
  if (!patch.is_null() && !patch.is_object()) throw std::invalid_argument("config: top level must be an object");
  reject_unknown(patch, defaults, "");
  json j = defaults;
  if (patch.is_object()) j.merge_patch(patch);

  ExperimentConfig c = base;
  try {
    const json& s = j.at("simulation");
    c.sim.nz = s.at("nz").get<int>();
    c.sim.z_min = s.at("z_min").get<double>();
    c.sim.z_max = s.at("z_max").get<double>();
    c.sim.t_end = s.at("t_end").get<double>();
    c.sim.initial.c0 = s.at("c0").get<double>();
    c.sim.initial.k_decay = s.at("k_decay").get<double>();
    c.sim.initial.depth_scale = s.at("depth_scale").get<double>();
    c.sim.transport.diffusion = s.at("diffusion").get<double>();
    c.sim.transport.advection = s.at("advection").get<double>();
    c.sim.driver_lattice_times = s.at("driver_lattice_times").get<int>();
    c.sim.clip_noisy_target = s.at("clip_noisy_target").get<bool>();
    c.sim.eval_rtol = s.at("eval_rtol").get<double>();
    c.sim.eval_atol = s.at("eval_atol").get<double>();

    const json& m = j.at("model");
    c.model.scaling.shift = m.at("feature_shift").get<std::array<double, 6>>();
    c.model.scaling.scale = m.at("feature_scale").get<std::array<double, 6>>();
    c.model.rate_scale = m.at("rate_scale").get<double>();

    const json& in = j.at("integrator");
    c.train_dt = in.at("train_dt").get<double>();
    c.tune_rtol = in.at("tune_rtol").get<double>();
    c.tune_atol = in.at("tune_atol").get<double>();

    const json& tr = j.at("training");
    c.train.lbfgs_memory = tr.at("lbfgs_memory").get<int>();
    c.train.early_stop_patience = tr.at("early_stop_patience").get<int>();
    c.train.early_stop_min_delta = tr.at("early_stop_min_delta").get<double>();
    c.train.clip_norm = tr.at("clip_norm").get<double>();
    c.train.lbfgs_initial_step = tr.at("lbfgs_initial_step").get<double>();

    const json& l = j.at("loss");
    c.loss.collocation_times = l.at("collocation_times").get<std::vector<double>>();
    c.loss.collocation_stride = l.at("collocation_stride").get<int>();
    c.loss.collocation_delta = l.at("collocation_delta").get<double>();

    const json& n = j.at("noise");
    c.driver_noise_kind = parse_noise_kind(n.at("driver_kind").get<std::string>());
    c.target_noise_kind = parse_noise_kind(n.at("target_kind").get<std::string>());
    c.noise_rho = n.at("rho").get<double>();

    for (CaseTable& t : c.cases) {
      const json& cj = j.at("cases").at(std::to_string(t.id));
      t.target_time = cj.at("target_time").get<double>();
      t.driver_noise = cj.at("driver_noise").get<double>();
      t.target_noise = cj.at("target_noise").get<double>();
      t.mlp.h1 = cj.at("h1").get<int>();
      t.mlp.h2 = cj.at("h2").get<int>();
      t.mlp.activation = parse_activation(cj.at("activation").get<std::string>());
      t.lr = cj.at("lr").get<double>();
      t.weights = {cj.at("lambda_term").get<double>(), cj.at("lambda_coll").get<double>(),
                   cj.at("lambda_wd").get<double>()};
      t.adam_iters = cj.at("adam_iters").get<int>();
      t.lbfgs_iters = cj.at("lbfgs_iters").get<int>();
      t.search = search_from_json(cj.at("search"));
    }

    const json& o = j.at("output");
    c.heatmap_times = o.at("heatmap_times").get<int>();
    c.heatmap_scale = o.at("heatmap_scale").get<int>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  json patch;
  try {
    patch = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config '" + path.string() + "': " + e.what());
  }
  return config_from_json(patch);
}

}  // namespace socude
