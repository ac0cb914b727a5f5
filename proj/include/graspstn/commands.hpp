#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>

namespace graspstn {

// Exit codes shared by every subcommand:
//   0 success, 2 input error, 3 numeric failure, 4 artifact mismatch.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitArtifact = 4;

struct DetectOptions {
  std::filesystem::path image;
  std::filesystem::path depth;  // point-cloud .txt or 16-bit depth .png
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir;
  std::string plate_color = "00c800";    // hex RGB
  std::string opening_color = "e6c800";
};

int cmd_validate_data(const std::filesystem::path& data_dir, std::ostream& out);

int cmd_train(const std::filesystem::path& data_dir,
              const std::filesystem::path& config_file,
              const std::filesystem::path& out_dir,
              const std::optional<std::string>& phases_csv, std::ostream& out);

int cmd_eval(const std::filesystem::path& data_dir,
             const std::filesystem::path& checkpoint_file,
             std::uint64_t split_seed, const std::filesystem::path& out_dir,
             std::ostream& out);

int cmd_detect(const DetectOptions& options, std::ostream& out);

int cmd_trace(const DetectOptions& options, std::ostream& out);

int cmd_fixture(const std::filesystem::path& out_dir, int items,
                std::uint64_t seed, std::ostream& out);

/// Map a thrown library error to the stable exit-code contract.
int run_command_catching(const std::function<int()>& body, std::ostream& err);

}  // namespace graspstn
