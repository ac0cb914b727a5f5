#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "graspstn/geometry.hpp"
#include "graspstn/model.hpp"
#include "graspstn/trainer.hpp"

// JSON schemas for the file artifacts the CLI writes: grasp, trace, report,
// and run manifest. Every schema carries a schema_version field.

namespace graspstn {

inline constexpr const char* kArtifactVersion = "0.1.0";

nlohmann::json rect_to_json(const GraspRect& r);
GraspRect rect_from_json(const nlohmann::json& j);

/// {schema_version, rect:{x,y,theta_deg,w,h}, score}
nlohmann::json grasp_to_json(const GraspRect& rect, double score);

/// Per-candidate location/angle/refinement/score and the decoded
/// rectangles for every stage, plus the winner index.
nlohmann::json trace_to_json(const CandidateTrace& trace);

nlohmann::json eval_report_to_json(const EvalReport& report,
                                   const std::string& method);

/// Plain-text table with the accuracy/time columns.
std::string eval_report_table(const EvalReport& report,
                              const std::string& method);

/// Identity hash over a dataset directory: sorted relative file names,
/// sizes, and content digests of the annotation text files.
std::string hash_dataset_dir(const std::filesystem::path& dir);

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::string dataset_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;
  std::string started_at;
  std::string finished_at;
};

void write_run_manifest(const std::filesystem::path& out_dir,
                        const RunManifest& manifest);

std::string iso8601_now();

}  // namespace graspstn
