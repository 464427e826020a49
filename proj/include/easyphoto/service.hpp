#pragma once

#include "easyphoto/inference.hpp"
#include "easyphoto/records.hpp"
#include "easyphoto/store.hpp"
#include "easyphoto/training.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace easyphoto {

struct ServiceConfig {
  std::filesystem::path data_dir = "data";
  std::string host = "127.0.0.1";
  int port = 7861;
  std::string backend = "mock";
  int workers = 2;
  /// Empty disables the token check.
  std::string api_token;
  /// Directory of a built UI bundle served under /ui; empty disables it.
  std::filesystem::path ui_dir;
  int min_images = 5;
  int max_images = 20;
  int stages = 4;
  /// adapter.* keys, passed to AdapterRegistry::from_config.
  std::map<std::string, std::string> adapters;
};

/// key = value lines; '#' starts a comment; an optional [section] header prefixes keys
/// with "section.".
std::map<std::string, std::string> parse_key_value(const std::string& text);

/// Defaults, then the optional config file, then EP_DATA_DIR, EP_PORT, EP_BACKEND,
/// EP_WORKERS and EP_API_TOKEN.
ServiceConfig load_service_config(const std::optional<std::filesystem::path>& file);

struct ServiceDeps {
  AdapterRegistry adapters = AdapterRegistry::reference();
  std::shared_ptr<const DiffusionBackend> backend = std::make_shared<MockBackend>();
  std::shared_ptr<const LoraTrainer> trainer = std::make_shared<MockTrainer>();
};

ServiceDeps make_deps(const ServiceConfig& cfg);

/// Job queue and worker pool over a DataStore. Records are persisted on every state
/// change; handlers read in-memory snapshots.
class Service {
 public:
  Service(ServiceConfig cfg, ServiceDeps deps);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Recovers persisted records (queued ones are re-enqueued, started ones fail as
  /// "interrupted"), seeds templates and starts the workers.
  void start();

  /// Graceful drain: running items finish, queued items stay queued on disk.
  void shutdown();

  /// Decodes every file first; nothing is stored unless all decode (UndecodableImage)
  /// and the total stays within max_images (TooManyImages) or `force` is set.
  int upload_images(const std::string& uid, const std::vector<std::string>& files, bool force);

  /// overrides: {"stages", "top_k", "force", "seed"}. Throws JobAlreadyRunning,
  /// NotEnoughImages, TooManyImages.
  std::string start_training(const std::string& uid, const std::string& overrides_json);

  std::optional<TrainingJob> get_job(const std::string& job_id) const;

  /// {"template_id": id | "template_png": base64, "user_ids": [...], "seed": n,
  ///  "options": {...}}. Throws UserNotTrained, UserCountMismatch, TemplateNotFound.
  std::string create_generation(const std::string& request_json);

  std::optional<GenerationTask> get_task(const std::string& task_id) const;

  /// Result PNG of a finished task.
  std::optional<std::filesystem::path> result_image(const std::string& task_id) const;

  /// {"v":1,"templates":[{"id","faces","width","height","image"}]}
  std::string templates_json() const;

  std::string user_json(const std::string& uid) const;
  std::string users_json() const;

  /// Blocks until the queue is empty and no item is running, or the timeout passes.
  bool wait_idle(std::chrono::milliseconds timeout) const;

  const DataStore& store() const { return store_; }
  const ServiceConfig& config() const { return cfg_; }

 private:
  struct WorkItem {
    bool is_job = false;
    std::string id;
  };

  void worker_loop();
  void run_job(const std::string& job_id);
  void run_task(const std::string& task_id);
  void enqueue(WorkItem item);
  bool update_job(const std::string& id, JobState to, double progress, std::string message = {});
  bool update_task(const std::string& id, TaskState to, double progress, std::string message = {},
                   std::string result = {});
  Image load_template(const GenerationTask& task) const;

  ServiceConfig cfg_;
  ServiceDeps deps_;
  DataStore store_;

  std::mutex upload_mu_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  mutable std::condition_variable idle_cv_;
  std::map<std::string, TrainingJob> jobs_;
  std::map<std::string, GenerationTask> tasks_;
  std::deque<WorkItem> queue_;
  int running_ = 0;
  bool stopping_ = false;
  bool started_ = false;
  std::vector<std::thread> workers_;
};

/// HTTP front end (REST/JSON under /api/v1, static /templates and /results).
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  /// Binds host:port (0 picks an ephemeral port) and returns the bound port.
  /// Throws IoError when the port is unavailable.
  int bind(const std::string& host, int port);

  /// Serves until stop(); requires a successful bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// HTTP status for an error code.
int http_status(Errc code);

}  // namespace easyphoto
