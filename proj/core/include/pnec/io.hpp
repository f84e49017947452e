#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pnec/learning.hpp"
#include "pnec/metrics.hpp"
#include "pnec/solver.hpp"
#include "pnec/synthgen.hpp"
#include "pnec/types.hpp"

namespace pnec {

// Doubles are written with enough digits to round-trip bit-exactly.
std::string format_double(double v);

// --- synthetic problems: versioned JSON ---
// Poses are stored as a row-major 3x3 rotation plus a 3-vector; 2x2
// covariances as upper-triangle triples (xx, xy, yy).
std::string problem_to_json(const SyntheticProblem& problem);
SyntheticProblem problem_from_json(const std::string& text);

// --- correspondence files: CSV ---
// Header `x1,y1,x2,y2[,s1,a1,b1,s2,a2,b2]`; the optional raw covariance
// parameters default to an isotropic 1 px^2 covariance per frame.
std::string correspondences_to_csv(const std::vector<Correspondence>& corrs);
std::vector<Correspondence> correspondences_from_csv(const std::string& text);

// --- pose files: KITTI convention ---
// One pose per line, 12 numbers, row-major 3x4 [R | position].
std::string trajectory_to_kitti(const Trajectory& traj);
Trajectory trajectory_from_kitti(const std::string& text);

// --- learning curves: CSV with columns epoch,mean_e_rot,mean_sigma_norm_err,mean_cov_err ---
std::string learning_curve_to_csv(const LearningCurve& curve);

// Learned per-point covariance parameters (raw and filtered) as JSON.
std::string learned_covariances_to_json(const LearningCurve& curve);

// git-style content hash: SHA-1 of "blob <size>\0<content>", hex-encoded.
std::string git_blob_sha1(const std::string& content);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace pnec
