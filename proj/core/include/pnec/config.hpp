#pragma once

#include <string>
#include <vector>

#include "pnec/learning.hpp"
#include "pnec/solver.hpp"
#include "pnec/synthgen.hpp"
#include "pnec/types.hpp"

namespace pnec {

struct VarApproxConfig {
  std::vector<double> focals{180.0, 360.0, 720.0, 1440.0};
  int samples = 1000000;
  double cov_trace = 2.0;  // px^2, KITTI-scale (<= 4)
};

struct GradcheckConfig {
  int derivative_configs = 100;  // random configurations for the FD suite
  int argmin_problems = 3;       // perturb-and-re-solve problems
  int argmin_correspondences = 20;
  uint64_t seed = 12345;
  // Test hook: name of a derivative whose sign is flipped before comparison,
  // to prove the suite catches mutations ("dn_dx_sign").
  std::string inject;
};

// Full run configuration for the CLI; serializes to JSON and round-trips
// exactly. The thread count intentionally comes from the PNEC_THREADS
// environment variable, not from here.
struct RunConfig {
  uint64_t seed = 7;
  std::string out_dir = "out";
  std::string format = "csv";  // csv | json where a choice exists
  Camera camera{720.0, 720.0, 620.0, 185.0};
  SceneConfig scene;
  SolverConfig solver;
  TrainConfig train;
  VarApproxConfig varapprox;
  GradcheckConfig gradcheck;
};

std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);

// Manifest written next to every command's artifacts: enough to reproduce
// the run (resolved config, seed, format version, input hashes, RNG id).
std::string make_manifest(const std::string& command, const RunConfig& cfg,
                          const std::vector<std::pair<std::string, std::string>>& input_hashes);

}  // namespace pnec
