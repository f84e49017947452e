#include "pnec/io.hpp"

#include <Eigen/Dense>
#include <array>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace pnec {

using nlohmann::json;

std::string format_double(double v) {
  std::array<char, 32> buf;
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

namespace {

json mat2_to_json(const Mat2& m) { return json::array({m(0, 0), m(0, 1), m(1, 1)}); }

Mat2 mat2_from_json(const json& j) {
  Mat2 m;
  m << j.at(0).get<double>(), j.at(1).get<double>(), j.at(1).get<double>(), j.at(2).get<double>();
  return m;
}

json mat3_to_json(const Mat3& m) {
  json out = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.push_back(m(r, c));
  return out;
}

Mat3 mat3_from_json(const json& j) {
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j.at(3 * r + c).get<double>();
  return m;
}

json vec_to_json(const auto& v) {
  json out = json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

}  // namespace

std::string problem_to_json(const SyntheticProblem& problem) {
  json j;
  j["format"] = "pnec-problem";
  j["version"] = 1;
  j["camera"] = {{"fx", problem.camera.fx},
                 {"fy", problem.camera.fy},
                 {"cx", problem.camera.cx},
                 {"cy", problem.camera.cy}};
  j["gt_pose"] = {{"rotation", mat3_to_json(problem.gt_pose.R)},
                  {"translation", vec_to_json(problem.gt_pose.t)}};
  j["gt_translation_full"] = vec_to_json(problem.gt_translation_full);
  json pts = json::array();
  for (const SyntheticPoint& pt : problem.points) {
    pts.push_back({{"clean1", vec_to_json(pt.clean1)},
                   {"clean2", vec_to_json(pt.clean2)},
                   {"noisy1", vec_to_json(pt.noisy1)},
                   {"noisy2", vec_to_json(pt.noisy2)},
                   {"sigma1", mat2_to_json(pt.gt_cov1)},
                   {"sigma2", mat2_to_json(pt.gt_cov2)},
                   {"outlier", pt.outlier}});
  }
  j["points"] = std::move(pts);
  json lms = json::array();
  for (const Vec3& lm : problem.landmarks) lms.push_back(vec_to_json(lm));
  j["landmarks"] = std::move(lms);
  return j.dump(2) + "\n";
}

SyntheticProblem problem_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("problem JSON parse error: ") + e.what());
  }
  if (j.value("format", "") != "pnec-problem" || j.value("version", 0) != 1)
    throw InvalidInput("unrecognized problem format/version");
  SyntheticProblem out;
  const json& cam = j.at("camera");
  out.camera = {cam.at("fx"), cam.at("fy"), cam.at("cx"), cam.at("cy")};
  out.gt_pose.R = mat3_from_json(j.at("gt_pose").at("rotation"));
  for (int i = 0; i < 3; ++i) out.gt_pose.t[i] = j.at("gt_pose").at("translation").at(i);
  for (int i = 0; i < 3; ++i) out.gt_translation_full[i] = j.at("gt_translation_full").at(i);
  for (const json& p : j.at("points")) {
    SyntheticPoint pt;
    for (int i = 0; i < 2; ++i) {
      pt.clean1[i] = p.at("clean1").at(i);
      pt.clean2[i] = p.at("clean2").at(i);
      pt.noisy1[i] = p.at("noisy1").at(i);
      pt.noisy2[i] = p.at("noisy2").at(i);
    }
    pt.gt_cov1 = mat2_from_json(p.at("sigma1"));
    pt.gt_cov2 = mat2_from_json(p.at("sigma2"));
    pt.outlier = p.at("outlier").get<bool>();
    out.points.push_back(pt);
  }
  if (j.contains("landmarks")) {
    for (const json& lm : j.at("landmarks")) {
      Vec3 v;
      for (int i = 0; i < 3; ++i) v[i] = lm.at(i);
      out.landmarks.push_back(v);
    }
  }
  return out;
}

namespace {

Mat2 cov_from_raw(double s_raw, double a_raw, double b_raw) {
  CovarianceParams p{s_raw, a_raw, b_raw};
  return p.cov();
}

}  // namespace

std::string correspondences_to_csv(const std::vector<Correspondence>& corrs) {
  std::ostringstream out;
  out << "x1,y1,x2,y2,s1,a1,b1,s2,a2,b2\n";
  for (const Correspondence& c : corrs) {
    // Covariances are exported through the (s, alpha, beta) raw values of
    // their eigendecompositions.
    const auto raw = [](const Mat2& m) {
      Eigen::SelfAdjointEigenSolver<Mat2> eig(m);
      const double trace = eig.eigenvalues().sum();
      const double beta = eig.eigenvalues()[1] / trace;
      const Vec2 axis = eig.eigenvectors().col(1);
      const double alpha = std::atan2(axis.y(), axis.x());
      return std::array<double, 3>{CovarianceParams::s_raw_for(trace), alpha,
                                   std::log(beta / (1.0 - beta))};
    };
    const auto r1 = raw(c.cov1);
    const auto r2 = raw(c.cov2);
    out << format_double(c.p1.x()) << ',' << format_double(c.p1.y()) << ','
        << format_double(c.p2.x()) << ',' << format_double(c.p2.y());
    for (const auto& r : {r1, r2})
      for (double v : r) out << ',' << format_double(v);
    out << '\n';
  }
  return out.str();
}

std::vector<Correspondence> correspondences_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<Correspondence> out;
  bool first = true;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (first) {
      first = false;
      if (line.rfind("x1", 0) == 0) continue;  // header optional
    }
    std::vector<double> vals;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw InvalidInput("correspondence CSV: bad number at line " + std::to_string(line_no));
      }
    }
    if (vals.size() != 4 && vals.size() != 10)
      throw InvalidInput("correspondence CSV: line " + std::to_string(line_no) +
                         " needs 4 or 10 columns");
    Correspondence c;
    c.p1 = {vals[0], vals[1]};
    c.p2 = {vals[2], vals[3]};
    if (vals.size() == 10) {
      c.cov1 = cov_from_raw(vals[4], vals[5], vals[6]);
      c.cov2 = cov_from_raw(vals[7], vals[8], vals[9]);
    }
    out.push_back(c);
  }
  return out;
}

std::string trajectory_to_kitti(const Trajectory& traj) {
  std::ostringstream out;
  for (const TrajectoryPose& pose : traj) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        out << format_double(pose.R(r, c)) << ' ';
      }
      out << format_double(pose.position[r]);
      if (r < 2) out << ' ';
    }
    out << '\n';
  }
  return out.str();
}

Trajectory trajectory_from_kitti(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Trajectory out;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    std::vector<double> vals;
    double v;
    while (ls >> v) vals.push_back(v);
    if (vals.size() != 12)
      throw InvalidInput("pose file: line " + std::to_string(line_no) + " needs 12 numbers");
    TrajectoryPose pose;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) pose.R(r, c) = vals[4 * r + c];
      pose.position[r] = vals[4 * r + 3];
    }
    out.push_back(pose);
  }
  return out;
}

std::string learning_curve_to_csv(const LearningCurve& curve) {
  std::ostringstream out;
  out << "epoch,mean_e_rot,mean_sigma_norm_err,mean_cov_err\n";
  for (const EpochRecord& rec : curve.records) {
    out << rec.epoch << ',' << format_double(rec.mean_e_rot) << ','
        << format_double(rec.mean_sigma_norm_err) << ',' << format_double(rec.mean_cov_err)
        << '\n';
  }
  return out.str();
}

std::string learned_covariances_to_json(const LearningCurve& curve) {
  json j;
  j["format"] = "pnec-learned-covariances";
  j["version"] = 1;
  j["baseline_unit_erot"] = curve.baseline_unit_erot;
  j["baseline_necls_erot"] = curve.baseline_necls_erot;
  j["diverged"] = curve.diverged;
  const auto dump = [](const std::vector<CovarianceParams>& params) {
    json arr = json::array();
    for (const CovarianceParams& p : params) {
      arr.push_back({{"s_raw", p.s_raw},
                     {"alpha_raw", p.alpha_raw},
                     {"beta_raw", p.beta_raw},
                     {"cov", mat2_to_json(p.cov())}});
    }
    return arr;
  };
  j["frame1"] = dump(curve.params_frame1);
  j["frame2"] = dump(curve.params_frame2);
  return j.dump(2) + "\n";
}

namespace {

// SHA-1, needed only for the git-style manifest hash.
class Sha1 {
 public:
  void update(const unsigned char* data, size_t len) {
    total_ += len;
    while (len > 0) {
      const size_t take = std::min(len, size_t{64} - fill_);
      std::memcpy(block_ + fill_, data, take);
      fill_ += take;
      data += take;
      len -= take;
      if (fill_ == 64) {
        process();
        fill_ = 0;
      }
    }
  }

  std::string hex_digest() {
    const uint64_t bits = total_ * 8;
    const unsigned char one = 0x80;
    update(&one, 1);
    const unsigned char zero = 0x00;
    while (fill_ != 56) update(&zero, 1);
    unsigned char len_be[8];
    for (int i = 0; i < 8; ++i) len_be[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    std::memcpy(block_ + 56, len_be, 8);
    fill_ = 64;
    process();
    std::string out;
    static const char* hex = "0123456789abcdef";
    for (uint32_t word : h_) {
      for (int i = 28; i >= 0; i -= 4) out.push_back(hex[(word >> i) & 0xF]);
    }
    return out;
  }

 private:
  static uint32_t rol(uint32_t v, int s) { return (v << s) | (v >> (32 - s)); }

  void process() {
    uint32_t w[80];
    for (int i = 0; i < 16; ++i) {
      w[i] = (uint32_t{block_[4 * i]} << 24) | (uint32_t{block_[4 * i + 1]} << 16) |
             (uint32_t{block_[4 * i + 2]} << 8) | uint32_t{block_[4 * i + 3]};
    }
    for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
    uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
    for (int i = 0; i < 80; ++i) {
      uint32_t f, k;
      if (i < 20) {
        f = (b & c) | (~b & d);
        k = 0x5A827999;
      } else if (i < 40) {
        f = b ^ c ^ d;
        k = 0x6ED9EBA1;
      } else if (i < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8F1BBCDC;
      } else {
        f = b ^ c ^ d;
        k = 0xCA62C1D6;
      }
      const uint32_t tmp = rol(a, 5) + f + e + k + w[i];
      e = d;
      d = c;
      c = rol(b, 30);
      b = a;
      a = tmp;
    }
    h_[0] += a;
    h_[1] += b;
    h_[2] += c;
    h_[3] += d;
    h_[4] += e;
  }

  uint32_t h_[5] = {0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476, 0xC3D2E1F0};
  unsigned char block_[64] = {};
  size_t fill_ = 0;
  uint64_t total_ = 0;
};

}  // namespace

std::string git_blob_sha1(const std::string& content) {
  Sha1 sha;
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  sha.update(reinterpret_cast<const unsigned char*>(header.data()), header.size());
  sha.update(reinterpret_cast<const unsigned char*>(content.data()), content.size());
  return sha.hex_digest();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << content;
}

}  // namespace pnec
