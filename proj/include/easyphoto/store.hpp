#pragma once

#include "easyphoto/inference.hpp"
#include "easyphoto/records.hpp"
#include "easyphoto/training.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace easyphoto {

// Filesystem registry under one data directory:
//   users/<uid>/{raw/, processed/, lora/, validation/, ensemble/, report.json,
//                face_id.png, manifest.json}
//   templates/<id>.png
//   jobs/<job_id>.json, tasks/<task_id>.json
//   results/<task_id>/{image.png, provenance.json}
// Every JSON record is replaced atomically (temp file + rename).

struct UserProfile {
  std::string user_id;
  int image_count = 0;
  bool trained = false;
  /// Paths relative to the user directory; empty while untrained.
  std::string ensemble;
  std::string face_id;
  std::string roop;
  int manifest_version = 0;
};

std::string to_json(const UserProfile& profile);

/// Ids are 1-64 characters of [A-Za-z0-9_-]; throws InvalidArgument otherwise.
void check_id(const std::string& id, const char* what);

class DataStore {
 public:
  explicit DataStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path user_dir(const std::string& uid) const;
  std::filesystem::path raw_dir(const std::string& uid) const;
  std::filesystem::path templates_dir() const { return root_ / "templates"; }
  std::filesystem::path jobs_dir() const { return root_ / "jobs"; }
  std::filesystem::path tasks_dir() const { return root_ / "tasks"; }
  std::filesystem::path result_dir(const std::string& task_id) const;

  /// Sorted raw upload paths.
  std::vector<std::filesystem::path> raw_images(const std::string& uid) const;

  /// Appends images as raw/NNNN.png with the next free ordinals; returns the stored total.
  int add_raw_images(const std::string& uid, const std::vector<Image>& images);
  void clear_raw_images(const std::string& uid);

  /// Missing users read as an untrained empty profile. A trained profile whose
  /// artifacts are missing is rewritten as untrained.
  UserProfile load_profile(const std::string& uid) const;
  void save_profile(UserProfile profile) const;
  std::vector<std::string> list_users() const;

  /// Throws UserNotTrained.
  UserBundle load_bundle(const std::string& uid) const;

  void write_job(const TrainingJob& job) const;
  void write_task(const GenerationTask& task) const;
  std::vector<TrainingJob> read_jobs() const;
  std::vector<GenerationTask> read_tasks() const;

  std::vector<std::string> template_ids() const;
  std::optional<std::filesystem::path> template_path(const std::string& id) const;
  /// Writes the built-in templates when the template directory is empty.
  void seed_builtin_templates() const;

 private:
  std::filesystem::path root_;
};

/// Trains on the stored raw images and records the result in the user's manifest.
/// The roop image is the first raw image (by name) that survived preprocessing.
TrainingArtifacts train_user(const DataStore& store, const std::string& uid, TrainingConfig cfg,
                             const TrainingContext& ctx, const TrainingProgressFn& progress = {});

}  // namespace easyphoto
