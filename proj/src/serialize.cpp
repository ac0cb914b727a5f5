#include "graspstn/serialize.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "graspstn/checkpoint.hpp"
#include "graspstn/error.hpp"

namespace graspstn {

nlohmann::json rect_to_json(const GraspRect& r) {
  return {{"x", r.x},
          {"y", r.y},
          {"theta_deg", r.theta_deg},
          {"w", r.w},
          {"h", r.h}};
}

GraspRect rect_from_json(const nlohmann::json& j) {
  GraspRect r;
  r.x = j.at("x").get<double>();
  r.y = j.at("y").get<double>();
  r.theta_deg = j.at("theta_deg").get<double>();
  r.w = j.at("w").get<double>();
  r.h = j.at("h").get<double>();
  return r;
}

nlohmann::json grasp_to_json(const GraspRect& rect, double score) {
  nlohmann::json j = rect_to_json(rect);
  j["score"] = score;
  j["schema_version"] = 1;
  return j;
}

nlohmann::json trace_to_json(const CandidateTrace& trace) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["winner"] = trace.winner;
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : trace.candidates) {
    nlohmann::json e;
    e["location"] = {{"tx", c.tx}, {"ty", c.ty}};
    e["theta_rad"] = c.theta_rad;
    e["refinement"] = {
        {"sw", c.sw}, {"sh", c.sh}, {"dx", c.dx}, {"dy", c.dy}};
    e["score"] = c.score;
    e["rect_stage1"] = rect_to_json(c.rect_stage1);
    e["rect_stage2"] = rect_to_json(c.rect_stage2);
    e["rect_final"] = rect_to_json(c.rect_final);
    cands.push_back(e);
  }
  j["candidates"] = cands;
  return j;
}

nlohmann::json eval_report_to_json(const EvalReport& report,
                                   const std::string& method) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["method"] = method;
  j["total"] = report.total;
  j["successes"] = report.successes;
  j["accuracy_pct"] = report.accuracy_pct;
  j["mean_ms_per_image"] = report.mean_ms;
  j["median_ms_per_image"] = report.median_ms;
  nlohmann::json outcomes = nlohmann::json::array();
  for (const auto& o : report.outcomes) {
    outcomes.push_back({{"id", o.id},
                        {"success", o.success},
                        {"jaccard", o.jaccard},
                        {"angle_diff_deg", o.angle_diff_deg},
                        {"ms", o.ms},
                        {"rect", rect_to_json(o.rect)}});
  }
  j["outcomes"] = outcomes;
  return j;
}

std::string eval_report_table(const EvalReport& report,
                              const std::string& method) {
  char line[160];
  std::string out;
  out += "Method                           | Accuracy (%) | Time / Image\n";
  out += "---------------------------------+--------------+-------------\n";
  std::snprintf(line, sizeof(line), "%-33s| %12.2f | %8.1f msec\n",
                method.c_str(), report.accuracy_pct, report.mean_ms);
  out += line;
  return out;
}

std::string hash_dataset_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) {
    throw IoError("hash_dataset_dir: not a directory: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::string acc;
  for (const auto& f : files) {
    acc += fs::relative(f, dir).generic_string();
    acc += ':';
    acc += std::to_string(fs::file_size(f));
    acc += ';';
    if (f.extension() == ".txt" || f.extension() == ".json") {
      std::ifstream in(f, std::ios::binary);
      std::string content((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
      acc += fnv1a_hex(content);
      acc += ';';
    }
  }
  return fnv1a_hex(acc);
}

std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm_utc;
  gmtime_r(&t, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void write_run_manifest(const std::filesystem::path& out_dir,
                        const RunManifest& manifest) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["command"] = manifest.command;
  j["artifact_version"] = kArtifactVersion;
  j["config_hash"] = manifest.config_hash;
  j["dataset_hash"] = manifest.dataset_hash;
  j["seed"] = manifest.seed;
  j["outputs"] = manifest.outputs;
  j["started_at"] = manifest.started_at;
  j["finished_at"] = manifest.finished_at;
  std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
  if (!out) {
    throw IoError("write_run_manifest: cannot write manifest in " +
                  out_dir.string());
  }
  out << j.dump(2) << "\n";
}

}  // namespace graspstn
