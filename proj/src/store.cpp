#include "easyphoto/store.hpp"

#include "easyphoto/error.hpp"
#include "easyphoto/fixtures.hpp"
#include "easyphoto/image_io.hpp"
#include "log.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace easyphoto {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ext) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::string to_json(const UserProfile& p) {
  nlohmann::json j{{"v", 1},
                   {"user_id", p.user_id},
                   {"image_count", p.image_count},
                   {"trained", p.trained},
                   {"ensemble", p.ensemble},
                   {"face_id", p.face_id},
                   {"roop", p.roop},
                   {"manifest_version", p.manifest_version}};
  return j.dump();
}

void check_id(const std::string& id, const char* what) {
  const bool ok = !id.empty() && id.size() <= 64 &&
                  std::all_of(id.begin(), id.end(), [](char c) {
                    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
                  });
  if (!ok) throw Error(Errc::InvalidArgument, std::string("invalid ") + what + " '" + id + "'");
}

DataStore::DataStore(fs::path root) : root_(std::move(root)) {
  for (const char* sub : {"users", "templates", "jobs", "tasks", "results"}) {
    fs::create_directories(root_ / sub);
  }
}

fs::path DataStore::user_dir(const std::string& uid) const {
  check_id(uid, "user id");
  return root_ / "users" / uid;
}

fs::path DataStore::raw_dir(const std::string& uid) const { return user_dir(uid) / "raw"; }

fs::path DataStore::result_dir(const std::string& task_id) const {
  check_id(task_id, "task id");
  return root_ / "results" / task_id;
}

std::vector<fs::path> DataStore::raw_images(const std::string& uid) const {
  return sorted_files(raw_dir(uid), ".png");
}

int DataStore::add_raw_images(const std::string& uid, const std::vector<Image>& images) {
  const fs::path dir = raw_dir(uid);
  fs::create_directories(dir);
  int next = 1;
  for (const auto& p : raw_images(uid)) {
    try {
      next = std::max(next, std::stoi(p.stem().string()) + 1);
    } catch (const std::exception&) {
    }
  }
  for (const auto& img : images) {
    char name[32];
    std::snprintf(name, sizeof name, "%04d.png", next++);
    write_png(dir / name, img);
  }
  UserProfile profile = load_profile(uid);
  profile.image_count = static_cast<int>(raw_images(uid).size());
  save_profile(profile);
  return profile.image_count;
}

void DataStore::clear_raw_images(const std::string& uid) {
  fs::remove_all(raw_dir(uid));
  UserProfile profile = load_profile(uid);
  profile.image_count = 0;
  save_profile(profile);
}

UserProfile DataStore::load_profile(const std::string& uid) const {
  const fs::path manifest = user_dir(uid) / "manifest.json";
  UserProfile p;
  p.user_id = uid;
  if (!fs::exists(manifest)) {
    p.image_count = static_cast<int>(raw_images(uid).size());
    return p;
  }
  try {
    const auto j = nlohmann::json::parse(read_text(manifest));
    p.image_count = j.value("image_count", 0);
    p.trained = j.value("trained", false);
    p.ensemble = j.value("ensemble", "");
    p.face_id = j.value("face_id", "");
    p.roop = j.value("roop", "");
    p.manifest_version = j.value("manifest_version", 0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::IoError, "corrupt manifest for " + uid + ": " + e.what());
  }
  if (p.trained) {
    const fs::path dir = user_dir(uid);
    const bool intact = !p.ensemble.empty() && fs::exists(dir / p.ensemble / "merged.json") &&
                        !p.face_id.empty() && fs::exists(dir / p.face_id) && !p.roop.empty() &&
                        fs::exists(dir / p.roop);
    if (!intact) {
      logger().warn("user {}: trained artifacts missing, marking untrained", uid);
      p.trained = false;
      save_profile(p);
      ++p.manifest_version;
    }
  }
  return p;
}

void DataStore::save_profile(UserProfile profile) const {
  const fs::path dir = user_dir(profile.user_id);
  fs::create_directories(dir);
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    try {
      const auto j = nlohmann::json::parse(read_text(manifest));
      profile.manifest_version = std::max(profile.manifest_version, j.value("manifest_version", 0));
    } catch (const nlohmann::json::exception&) {
    }
  }
  ++profile.manifest_version;
  write_file_atomic(manifest, to_json(profile) + "\n");
}

std::vector<std::string> DataStore::list_users() const {
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(root_ / "users")) {
    if (entry.is_directory()) out.push_back(entry.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

UserBundle DataStore::load_bundle(const std::string& uid) const {
  const UserProfile p = load_profile(uid);
  if (!p.trained) throw Error(Errc::UserNotTrained, "user '" + uid + "' is not trained");
  const fs::path dir = user_dir(uid);
  UserBundle b;
  b.user_id = uid;
  b.lora = std::make_shared<MergedLora>(read_merged(dir / p.ensemble));
  b.face_id = read_image(dir / p.face_id);
  b.roop = read_image(dir / p.roop);
  return b;
}

void DataStore::write_job(const TrainingJob& job) const {
  check_id(job.job_id, "job id");
  write_file_atomic(jobs_dir() / (job.job_id + ".json"), to_json(job) + "\n");
}

void DataStore::write_task(const GenerationTask& task) const {
  check_id(task.task_id, "task id");
  write_file_atomic(tasks_dir() / (task.task_id + ".json"), to_json(task) + "\n");
}

std::vector<TrainingJob> DataStore::read_jobs() const {
  std::vector<TrainingJob> out;
  for (const auto& p : sorted_files(jobs_dir(), ".json")) {
    try {
      out.push_back(job_from_json(read_text(p)));
    } catch (const Error& e) {
      logger().warn("skipping {}: {}", p.string(), e.what());
    }
  }
  return out;
}

std::vector<GenerationTask> DataStore::read_tasks() const {
  std::vector<GenerationTask> out;
  for (const auto& p : sorted_files(tasks_dir(), ".json")) {
    try {
      out.push_back(task_from_json(read_text(p)));
    } catch (const Error& e) {
      logger().warn("skipping {}: {}", p.string(), e.what());
    }
  }
  return out;
}

std::vector<std::string> DataStore::template_ids() const {
  std::vector<std::string> out;
  for (const auto& p : sorted_files(templates_dir(), ".png")) out.push_back(p.stem().string());
  return out;
}

std::optional<fs::path> DataStore::template_path(const std::string& id) const {
  check_id(id, "template id");
  const fs::path p = templates_dir() / (id + ".png");
  if (!fs::exists(p)) return std::nullopt;
  return p;
}

void DataStore::seed_builtin_templates() const {
  if (!template_ids().empty()) return;
  write_png(templates_dir() / "single.png", fixtures::single_template());
  write_png(templates_dir() / "group.png", fixtures::group_template());
}

TrainingArtifacts train_user(const DataStore& store, const std::string& uid, TrainingConfig cfg,
                             const TrainingContext& ctx, const TrainingProgressFn& progress) {
  cfg.user_id = uid;
  const auto paths = store.raw_images(uid);
  cfg.check(paths.size());
  std::vector<Image> images;
  for (const auto& p : paths) images.push_back(read_image(p));

  UserProfile profile = store.load_profile(uid);
  profile.trained = false;
  profile.image_count = static_cast<int>(paths.size());
  store.save_profile(profile);

  const auto art = run_training(images, cfg, ctx, store.user_dir(uid), progress);
  profile = store.load_profile(uid);
  profile.trained = true;
  profile.ensemble = "ensemble";
  profile.face_id = "face_id.png";
  profile.roop = (fs::path("raw") / paths.at(art.source_index.front()).filename()).string();
  store.save_profile(profile);
  return art;
}

}  // namespace easyphoto
