#include "pnec/config.hpp"

#include <json.hpp>

namespace pnec {

using nlohmann::json;

namespace {

json scene_to_json(const SceneConfig& s) {
  return json{{"num_points", s.num_points},
              {"depth_min", s.depth_min},
              {"depth_max", s.depth_max},
              {"pose_mode", s.pose_mode == PoseMode::kFixed ? "fixed" : "random_second_frame"},
              {"rotation_scale", s.rotation_scale},
              {"translation_norm", s.translation_norm},
              {"forward_bias", s.forward_bias},
              {"point_region", s.point_region},
              {"noise",
               {{"scale_min", s.noise.scale_min},
                {"scale_max", s.noise.scale_max},
                {"beta_min", s.noise.beta_min},
                {"beta_max", s.noise.beta_max}}},
              {"outlier_fraction", s.outlier_fraction},
              {"focal", s.focal},
              {"image_width", s.image_width},
              {"image_height", s.image_height},
              {"seed", s.seed}};
}

SceneConfig scene_from_json(const json& j) {
  SceneConfig s;
  s.num_points = j.value("num_points", s.num_points);
  s.depth_min = j.value("depth_min", s.depth_min);
  s.depth_max = j.value("depth_max", s.depth_max);
  const std::string mode = j.value("pose_mode", "fixed");
  if (mode == "fixed") {
    s.pose_mode = PoseMode::kFixed;
  } else if (mode == "random_second_frame") {
    s.pose_mode = PoseMode::kRandomSecondFrame;
  } else {
    throw InvalidInput("unknown pose_mode: " + mode);
  }
  s.rotation_scale = j.value("rotation_scale", s.rotation_scale);
  s.translation_norm = j.value("translation_norm", s.translation_norm);
  s.forward_bias = j.value("forward_bias", s.forward_bias);
  s.point_region = j.value("point_region", s.point_region);
  if (j.contains("noise")) {
    const json& n = j.at("noise");
    s.noise.scale_min = n.value("scale_min", s.noise.scale_min);
    s.noise.scale_max = n.value("scale_max", s.noise.scale_max);
    s.noise.beta_min = n.value("beta_min", s.noise.beta_min);
    s.noise.beta_max = n.value("beta_max", s.noise.beta_max);
  }
  s.outlier_fraction = j.value("outlier_fraction", s.outlier_fraction);
  s.focal = j.value("focal", s.focal);
  s.image_width = j.value("image_width", s.image_width);
  s.image_height = j.value("image_height", s.image_height);
  s.seed = j.value("seed", s.seed);
  return s;
}

json solver_to_json(const SolverConfig& s) {
  return json{{"lm_max_iterations", s.lm_max_iterations},
              {"lm_initial_damping", s.lm_initial_damping},
              {"ransac_iterations", s.ransac_iterations},
              {"ransac_threshold", s.ransac_threshold},
              {"perturbation_scale", s.perturbation_scale},
              {"seed", s.seed},
              {"regularization", s.regularization},
              {"parallax_sv_ratio", s.parallax_sv_ratio}};
}

SolverConfig solver_from_json(const json& j) {
  SolverConfig s;
  s.lm_max_iterations = j.value("lm_max_iterations", s.lm_max_iterations);
  s.lm_initial_damping = j.value("lm_initial_damping", s.lm_initial_damping);
  s.ransac_iterations = j.value("ransac_iterations", s.ransac_iterations);
  s.ransac_threshold = j.value("ransac_threshold", s.ransac_threshold);
  s.perturbation_scale = j.value("perturbation_scale", s.perturbation_scale);
  s.seed = j.value("seed", s.seed);
  s.regularization = j.value("regularization", s.regularization);
  s.parallax_sv_ratio = j.value("parallax_sv_ratio", s.parallax_sv_ratio);
  if (s.lm_max_iterations < 1 || s.ransac_iterations < 1)
    throw InvalidInput("iteration counts must be at least 1");
  if (s.ransac_threshold <= 0.0) throw InvalidInput("ransac_threshold must be positive");
  return s;
}

json adam_to_json(const AdamConfig& a) {
  return json{{"learning_rate", a.learning_rate},
              {"beta1", a.beta1},
              {"beta2", a.beta2},
              {"epsilon", a.epsilon}};
}

AdamConfig adam_from_json(const json& j) {
  AdamConfig a;
  a.learning_rate = j.value("learning_rate", a.learning_rate);
  a.beta1 = j.value("beta1", a.beta1);
  a.beta2 = j.value("beta2", a.beta2);
  a.epsilon = j.value("epsilon", a.epsilon);
  return a;
}

}  // namespace

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out"] = cfg.out_dir;
  j["format"] = cfg.format;
  j["rng"] = "splitmix64-counter-v1";
  j["camera"] = {{"fx", cfg.camera.fx},
                 {"fy", cfg.camera.fy},
                 {"cx", cfg.camera.cx},
                 {"cy", cfg.camera.cy}};
  j["scene"] = scene_to_json(cfg.scene);
  j["solver"] = solver_to_json(cfg.solver);
  j["train"] = {{"scene", scene_to_json(cfg.train.scene)},
                {"solver", solver_to_json(cfg.train.solver)},
                {"adam", adam_to_json(cfg.train.adam)},
                {"num_problems", cfg.train.num_problems},
                {"batch_size", cfg.train.batch_size},
                {"epochs", cfg.train.epochs},
                {"lr_decay", cfg.train.lr_decay},
                {"init", cfg.train.init == CovInit::kScaledIdentity ? "scaled_identity"
                                                                    : "ground_truth"},
                {"init_axis_variance", cfg.train.init_axis_variance},
                {"frame1_iso_variance", cfg.train.frame1_iso_variance},
                {"seed", cfg.train.seed},
                {"divergence_factor", cfg.train.divergence_factor}};
  j["varapprox"] = {{"focals", cfg.varapprox.focals},
                    {"samples", cfg.varapprox.samples},
                    {"cov_trace", cfg.varapprox.cov_trace}};
  j["gradcheck"] = {{"derivative_configs", cfg.gradcheck.derivative_configs},
                    {"argmin_problems", cfg.gradcheck.argmin_problems},
                    {"argmin_correspondences", cfg.gradcheck.argmin_correspondences},
                    {"seed", cfg.gradcheck.seed},
                    {"inject", cfg.gradcheck.inject}};
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("config parse error: ") + e.what());
  }
  RunConfig cfg;
  cfg.seed = j.value("seed", cfg.seed);
  cfg.out_dir = j.value("out", cfg.out_dir);
  cfg.format = j.value("format", cfg.format);
  if (cfg.format != "csv" && cfg.format != "json")
    throw InvalidInput("format must be csv or json");
  if (j.contains("camera")) {
    const json& c = j.at("camera");
    cfg.camera.fx = c.value("fx", cfg.camera.fx);
    cfg.camera.fy = c.value("fy", cfg.camera.fy);
    cfg.camera.cx = c.value("cx", cfg.camera.cx);
    cfg.camera.cy = c.value("cy", cfg.camera.cy);
    if (cfg.camera.fx <= 0.0 || cfg.camera.fy <= 0.0)
      throw InvalidInput("focal lengths must be positive");
  }
  if (j.contains("scene")) cfg.scene = scene_from_json(j.at("scene"));
  if (j.contains("solver")) cfg.solver = solver_from_json(j.at("solver"));
  if (j.contains("train")) {
    const json& t = j.at("train");
    if (t.contains("scene")) cfg.train.scene = scene_from_json(t.at("scene"));
    if (t.contains("solver")) cfg.train.solver = solver_from_json(t.at("solver"));
    if (t.contains("adam")) cfg.train.adam = adam_from_json(t.at("adam"));
    cfg.train.num_problems = t.value("num_problems", cfg.train.num_problems);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.lr_decay = t.value("lr_decay", cfg.train.lr_decay);
    const std::string init = t.value("init", "scaled_identity");
    if (init == "scaled_identity") {
      cfg.train.init = CovInit::kScaledIdentity;
    } else if (init == "ground_truth") {
      cfg.train.init = CovInit::kGroundTruth;
    } else {
      throw InvalidInput("unknown train.init: " + init);
    }
    cfg.train.init_axis_variance = t.value("init_axis_variance", cfg.train.init_axis_variance);
    cfg.train.frame1_iso_variance =
        t.value("frame1_iso_variance", cfg.train.frame1_iso_variance);
    cfg.train.seed = t.value("seed", cfg.train.seed);
    cfg.train.divergence_factor = t.value("divergence_factor", cfg.train.divergence_factor);
    if (cfg.train.num_problems < 1 || cfg.train.batch_size < 1 || cfg.train.epochs < 1)
      throw InvalidInput("train counts must be at least 1");
  }
  if (j.contains("varapprox")) {
    const json& v = j.at("varapprox");
    if (v.contains("focals")) cfg.varapprox.focals = v.at("focals").get<std::vector<double>>();
    cfg.varapprox.samples = v.value("samples", cfg.varapprox.samples);
    cfg.varapprox.cov_trace = v.value("cov_trace", cfg.varapprox.cov_trace);
  }
  if (j.contains("gradcheck")) {
    const json& g = j.at("gradcheck");
    cfg.gradcheck.derivative_configs = g.value("derivative_configs", cfg.gradcheck.derivative_configs);
    cfg.gradcheck.argmin_problems = g.value("argmin_problems", cfg.gradcheck.argmin_problems);
    cfg.gradcheck.argmin_correspondences =
        g.value("argmin_correspondences", cfg.gradcheck.argmin_correspondences);
    cfg.gradcheck.seed = g.value("seed", cfg.gradcheck.seed);
    cfg.gradcheck.inject = g.value("inject", cfg.gradcheck.inject);
  }
  return cfg;
}

std::string make_manifest(const std::string& command, const RunConfig& cfg,
                          const std::vector<std::pair<std::string, std::string>>& input_hashes) {
  json j;
  j["format"] = "pnec-manifest";
  j["version"] = 1;
  j["command"] = command;
  j["config"] = json::parse(run_config_to_json(cfg));
  json inputs = json::object();
  for (const auto& [name, hash] : input_hashes) inputs[name] = hash;
  j["inputs"] = inputs;
  return j.dump(2) + "\n";
}

}  // namespace pnec
