#include "easyphoto/service.hpp"

#include "easyphoto/error.hpp"
#include "easyphoto/image_io.hpp"
#include "http_json.hpp"
#include "log.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace easyphoto {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error(Errc::InvalidArgument, key + " must be an integer, got '" + value + "'");
  }
}

}  // namespace

std::map<std::string, std::string> parse_key_value(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::InvalidArgument, "config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    out[section.empty() ? key : section + "." + key] = value;
  }
  return out;
}

ServiceConfig load_service_config(const std::optional<fs::path>& file) {
  ServiceConfig cfg;
  std::map<std::string, std::string> kv;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw Error(Errc::IoError, "cannot read config " + file->string());
    std::ostringstream ss;
    ss << in.rdbuf();
    kv = parse_key_value(ss.str());
  }
  auto env = [&](const char* name, const char* key) {
    if (const char* v = std::getenv(name)) kv[key] = v;
  };
  env("EP_DATA_DIR", "data_dir");
  env("EP_PORT", "port");
  env("EP_BACKEND", "backend");
  env("EP_WORKERS", "workers");
  env("EP_API_TOKEN", "api_token");

  for (const auto& [key, value] : kv) {
    if (key == "data_dir") cfg.data_dir = value;
    else if (key == "host") cfg.host = value;
    else if (key == "port") cfg.port = parse_int(key, value);
    else if (key == "backend") cfg.backend = value;
    else if (key == "workers") cfg.workers = parse_int(key, value);
    else if (key == "api_token") cfg.api_token = value;
    else if (key == "ui_dir") cfg.ui_dir = value;
    else if (key == "min_images") cfg.min_images = parse_int(key, value);
    else if (key == "max_images") cfg.max_images = parse_int(key, value);
    else if (key == "stages") cfg.stages = parse_int(key, value);
    else if (key.rfind("adapter.", 0) == 0) cfg.adapters[key] = value;
    else throw Error(Errc::InvalidArgument, "unknown config key '" + key + "'");
  }
  if (cfg.port < 0 || cfg.port > 65535) throw Error(Errc::InvalidArgument, "port out of range");
  if (cfg.workers < 1) throw Error(Errc::InvalidArgument, "workers must be >= 1");
  return cfg;
}

ServiceDeps make_deps(const ServiceConfig& cfg) {
  ServiceDeps deps;
  deps.adapters = AdapterRegistry::from_config(cfg.adapters);
  deps.backend = make_backend(cfg.backend);
  return deps;
}

// ---------------------------------------------------------------------------
// Service
// ---------------------------------------------------------------------------

Service::Service(ServiceConfig cfg, ServiceDeps deps)
    : cfg_(std::move(cfg)), deps_(std::move(deps)), store_(cfg_.data_dir) {}

Service::~Service() { shutdown(); }

void Service::start() {
  std::lock_guard lock(mu_);
  if (started_) return;
  std::vector<std::pair<std::string, WorkItem>> ordered;
  for (auto job : store_.read_jobs()) {
    if (job.state == JobState::Queued) {
      ordered.push_back({job.created + job.job_id, {true, job.job_id}});
    } else if (!is_terminal(job.state)) {
      advance(job, JobState::Failed, job.progress, "interrupted");
      store_.write_job(job);
      logger().warn("job {} was interrupted", job.job_id);
    }
    jobs_[job.job_id] = job;
  }
  for (auto task : store_.read_tasks()) {
    if (task.state == TaskState::Queued) {
      ordered.push_back({task.created + task.task_id, {false, task.task_id}});
    } else if (!is_terminal(task.state)) {
      advance(task, TaskState::Failed, task.progress, "interrupted");
      store_.write_task(task);
      logger().warn("task {} was interrupted", task.task_id);
    }
    tasks_[task.task_id] = task;
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [key, item] : ordered) queue_.push_back(std::move(item));

  store_.seed_builtin_templates();
  stopping_ = false;
  started_ = true;
  for (int i = 0; i < std::max(1, cfg_.workers); ++i) {
    workers_.emplace_back([this] { worker_loop(); });
  }
  logger().info("service started: data dir {}, {} workers, backend {}", cfg_.data_dir.string(),
               cfg_.workers, deps_.backend->id());
}

void Service::shutdown() {
  {
    std::lock_guard lock(mu_);
    if (!started_) return;
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : workers_) t.join();
  workers_.clear();
  std::lock_guard lock(mu_);
  started_ = false;
  idle_cv_.notify_all();
}

void Service::worker_loop() {
  for (;;) {
    WorkItem item;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      item = std::move(queue_.front());
      queue_.pop_front();
      ++running_;
    }
    try {
      if (item.is_job) run_job(item.id);
      else run_task(item.id);
    } catch (const std::exception& e) {
      logger().error("worker: {}", e.what());
    }
    {
      std::lock_guard lock(mu_);
      --running_;
    }
    idle_cv_.notify_all();
  }
}

void Service::enqueue(WorkItem item) {
  queue_.push_back(std::move(item));
  cv_.notify_one();
}

bool Service::wait_idle(std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  return idle_cv_.wait_for(lock, timeout, [&] { return queue_.empty() && running_ == 0; });
}

bool Service::update_job(const std::string& id, JobState to, double progress, std::string message) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return false;
  TrainingJob next = it->second;
  if (!advance(next, to, progress, std::move(message))) return false;
  store_.write_job(next);
  it->second = std::move(next);
  return true;
}

bool Service::update_task(const std::string& id, TaskState to, double progress,
                          std::string message, std::string result) {
  std::lock_guard lock(mu_);
  auto it = tasks_.find(id);
  if (it == tasks_.end()) return false;
  GenerationTask next = it->second;
  if (!result.empty()) next.result = std::move(result);
  if (!advance(next, to, progress, std::move(message))) return false;
  store_.write_task(next);
  it->second = std::move(next);
  return true;
}

int Service::upload_images(const std::string& uid, const std::vector<std::string>& files,
                           bool force) {
  check_id(uid, "user id");
  if (files.empty()) throw Error(Errc::InvalidArgument, "no files uploaded");
  std::vector<Image> images;
  for (size_t i = 0; i < files.size(); ++i) {
    try {
      images.push_back(decode_image(files[i]));
    } catch (const Error& e) {
      throw Error(Errc::UndecodableImage, "file " + std::to_string(i) + ": " + e.message());
    }
  }
  std::lock_guard lock(upload_mu_);
  const size_t existing = store_.raw_images(uid).size();
  if (!force && existing + images.size() > static_cast<size_t>(cfg_.max_images)) {
    throw Error(Errc::TooManyImages, "at most " + std::to_string(cfg_.max_images) +
                                         " images per user; " + std::to_string(existing) +
                                         " already stored");
  }
  return store_.add_raw_images(uid, images);
}

std::string Service::start_training(const std::string& uid, const std::string& overrides_json) {
  check_id(uid, "user id");
  json overrides = json::object();
  if (!trim(overrides_json).empty()) {
    try {
      overrides = json::parse(overrides_json);
    } catch (const json::exception& e) {
      throw Error(Errc::InvalidArgument, std::string("overrides are not valid JSON: ") + e.what());
    }
    if (!overrides.is_object()) throw Error(Errc::InvalidArgument, "overrides must be an object");
  }
  TrainingConfig tc;
  tc.user_id = uid;
  tc.stages = cfg_.stages;
  tc.min_images = cfg_.min_images;
  tc.max_images = cfg_.max_images;
  if (overrides.contains("seed") && !overrides["seed"].is_number_unsigned()) {
    throw Error(Errc::InvalidArgument, "seed must be a non-negative integer");
  }
  try {
    tc.stages = overrides.value("stages", tc.stages);
    tc.top_k = overrides.value("top_k", std::min(tc.top_k, tc.stages));
    tc.force = overrides.value("force", false);
    tc.validation_seed = overrides.value("seed", tc.validation_seed);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("bad override: ") + e.what());
  }

  std::lock_guard lock(mu_);
  for (const auto& [id, job] : jobs_) {
    if (job.user_id == uid && !is_terminal(job.state)) {
      throw Error(Errc::JobAlreadyRunning, "user '" + uid + "' already has job " + id);
    }
  }
  tc.check(store_.raw_images(uid).size());

  TrainingJob job;
  job.job_id = make_uuid();
  job.user_id = uid;
  job.created = job.updated = utc_timestamp();
  job.overrides = overrides.dump();
  store_.write_job(job);
  jobs_[job.job_id] = job;
  enqueue({true, job.job_id});
  return job.job_id;
}

std::optional<TrainingJob> Service::get_job(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

void Service::run_job(const std::string& job_id) {
  const auto job = get_job(job_id);
  if (!job) return;
  try {
    const json overrides = json::parse(job->overrides);
    TrainingConfig tc;
    tc.stages = overrides.value("stages", cfg_.stages);
    tc.top_k = overrides.value("top_k", std::min(tc.top_k, tc.stages));
    tc.force = overrides.value("force", false);
    tc.validation_seed = overrides.value("seed", std::uint64_t{0});
    tc.min_images = cfg_.min_images;
    tc.max_images = cfg_.max_images;
    TrainingContext ctx{deps_.adapters, deps_.backend, deps_.trainer};
    const auto art = train_user(store_, job->user_id, tc, ctx, [&](TrainingPhase p, double f) {
      static constexpr JobState kStates[] = {JobState::Preprocessing, JobState::Training,
                                             JobState::Validating, JobState::Merging};
      update_job(job_id, kStates[static_cast<int>(p)], f);
    });
    char msg[64];
    std::snprintf(msg, sizeof msg, "best face-id score %.6f", art.best_score);
    update_job(job_id, JobState::Done, 1.0, msg);
    logger().info("job {} done ({})", job_id, msg);
  } catch (const std::exception& e) {
    update_job(job_id, JobState::Failed, 0.0, e.what());
    logger().warn("job {} failed: {}", job_id, e.what());
  }
}

std::string Service::create_generation(const std::string& request_json) {
  json req;
  try {
    req = json::parse(request_json);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("request is not valid JSON: ") + e.what());
  }
  if (!req.is_object()) throw Error(Errc::InvalidArgument, "request must be an object");
  std::vector<std::string> user_ids;
  try {
    user_ids = req.at("user_ids").get<std::vector<std::string>>();
  } catch (const json::exception&) {
    throw Error(Errc::InvalidArgument, "user_ids must be a list of strings");
  }
  if (user_ids.empty()) throw Error(Errc::InvalidArgument, "user_ids is empty");
  for (const auto& uid : user_ids) {
    check_id(uid, "user id");
    if (!store_.load_profile(uid).trained) {
      throw Error(Errc::UserNotTrained, "user '" + uid + "' is not trained");
    }
  }

  GenerationTask task;
  task.task_id = make_uuid();
  Image template_img;
  if (req.contains("template_png")) {
    if (!req["template_png"].is_string()) throw Error(Errc::InvalidArgument, "template_png must be base64");
    try {
      template_img = detail::image_from_base64(req["template_png"].get<std::string>());
    } catch (const Error& e) {
      throw Error(Errc::UndecodableImage, "inline template: " + e.message());
    }
    task.template_id = "inline";
  } else {
    if (!req.contains("template_id") || !req["template_id"].is_string()) {
      throw Error(Errc::InvalidArgument, "template_id or template_png is required");
    }
    task.template_id = req["template_id"].get<std::string>();
    const auto path = store_.template_path(task.template_id);
    if (!path) throw Error(Errc::TemplateNotFound, "no template '" + task.template_id + "'");
    template_img = read_image(*path);
  }
  const size_t faces = deps_.adapters.detector->detect(template_img).size();
  if (faces == 0) throw Error(Errc::NoFacesFound, "template has no detectable face");
  if (faces != user_ids.size()) {
    throw Error(Errc::UserCountMismatch, "template has " + std::to_string(faces) + " faces but " +
                                             std::to_string(user_ids.size()) + " users were given");
  }

  GenerationOptions opts =
      options_from_json(req.contains("options") ? req["options"].dump() : std::string("{}"));
  if (req.contains("seed")) {
    // get<uint64_t> would silently wrap negative numbers.
    if (!req["seed"].is_number_unsigned()) {
      throw Error(Errc::InvalidArgument, "seed must be a non-negative integer");
    }
    opts.seed = req["seed"].get<std::uint64_t>();
  }
  if (task.template_id == "inline") {
    fs::create_directories(store_.result_dir(task.task_id));
    write_png(store_.result_dir(task.task_id) / "template.png", template_img);
  }
  task.user_ids = user_ids;
  task.options = options_to_json(opts);
  task.created = task.updated = utc_timestamp();

  std::lock_guard lock(mu_);
  store_.write_task(task);
  tasks_[task.task_id] = task;
  enqueue({false, task.task_id});
  return task.task_id;
}

std::optional<GenerationTask> Service::get_task(const std::string& task_id) const {
  std::lock_guard lock(mu_);
  const auto it = tasks_.find(task_id);
  if (it == tasks_.end()) return std::nullopt;
  return it->second;
}

Image Service::load_template(const GenerationTask& task) const {
  if (task.template_id == "inline") return read_image(store_.result_dir(task.task_id) / "template.png");
  const auto path = store_.template_path(task.template_id);
  if (!path) throw Error(Errc::TemplateNotFound, "no template '" + task.template_id + "'");
  return read_image(*path);
}

void Service::run_task(const std::string& task_id) {
  const auto task = get_task(task_id);
  if (!task) return;
  try {
    const GenerationOptions opts = options_from_json(task->options);
    const Image template_img = load_template(*task);
    std::vector<UserBundle> users;
    for (const auto& uid : task->user_ids) users.push_back(store_.load_bundle(uid));
    const InferenceContext ctx{deps_.adapters, deps_.backend};
    auto result = generate(template_img, users, opts, ctx, [&](GenerationStage stage) {
      switch (stage) {
        case GenerationStage::Preparing: update_task(task_id, TaskState::Preparing, 0.1); break;
        case GenerationStage::FirstDiffusion: update_task(task_id, TaskState::Stage1, 0.3); break;
        case GenerationStage::SecondDiffusion: update_task(task_id, TaskState::Stage2, 0.55); break;
        case GenerationStage::Merging: update_task(task_id, TaskState::Merging, 0.8); break;
        case GenerationStage::PostProcess: update_task(task_id, TaskState::PostProcess, 0.9); break;
      }
    });
    result.provenance.template_ref = task->template_id;
    const fs::path dir = store_.result_dir(task_id);
    fs::create_directories(dir);
    write_png(dir / "image.png", result.image);
    write_file_atomic(dir / "provenance.json", provenance_json(result.provenance) + "\n");
    update_task(task_id, TaskState::Done, 1.0, {}, "/api/v1/results/" + task_id + "/image");
    logger().info("task {} done", task_id);
  } catch (const std::exception& e) {
    update_task(task_id, TaskState::Failed, 0.0, e.what());
    logger().warn("task {} failed: {}", task_id, e.what());
  }
}

std::optional<fs::path> Service::result_image(const std::string& task_id) const {
  const auto task = get_task(task_id);
  if (!task || task->state != TaskState::Done) return std::nullopt;
  const fs::path p = store_.result_dir(task_id) / "image.png";
  if (!fs::exists(p)) return std::nullopt;
  return p;
}

std::string Service::templates_json() const {
  json list = json::array();
  for (const auto& id : store_.template_ids()) {
    try {
      const Image img = read_image(*store_.template_path(id));
      list.push_back({{"id", id},
                      {"faces", deps_.adapters.detector->detect(img).size()},
                      {"width", img.width()},
                      {"height", img.height()},
                      {"image", "/templates/" + id + ".png"}});
    } catch (const Error& e) {
      logger().warn("template {}: {}", id, e.what());
    }
  }
  return json{{"v", 1}, {"templates", list}}.dump();
}

namespace {

json profile_view(const UserProfile& p) {
  json j = json::parse(to_json(p));
  j["face_id_image"] = p.trained ? json("/api/v1/users/" + p.user_id + "/face_id") : json(nullptr);
  return j;
}

}  // namespace

std::string Service::user_json(const std::string& uid) const {
  return profile_view(store_.load_profile(uid)).dump();
}

std::string Service::users_json() const {
  json list = json::array();
  for (const auto& uid : store_.list_users()) {
    try {
      list.push_back(profile_view(store_.load_profile(uid)));
    } catch (const Error& e) {
      logger().warn("user {}: {}", uid, e.what());
    }
  }
  return json{{"v", 1}, {"users", list}}.dump();
}

// ---------------------------------------------------------------------------
// HTTP
// ---------------------------------------------------------------------------

int http_status(Errc code) {
  switch (code) {
    case Errc::InvalidArgument:
    case Errc::InvalidRequest:
    case Errc::UndecodableImage:
    case Errc::LengthMismatch:
    case Errc::DimensionMismatch:
      return 400;
    case Errc::NotFound:
    case Errc::TemplateNotFound:
      return 404;
    case Errc::JobAlreadyRunning:
      return 409;
    case Errc::NotEnoughImages:
    case Errc::TooManyImages:
    case Errc::UserNotTrained:
    case Errc::UserCountMismatch:
    case Errc::NoFacesFound:
    case Errc::AmbiguousFace:
      return 422;
    case Errc::BackendUnavailable:
    case Errc::AdapterFailure:
      return 503;
    default:
      return 500;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const std::string& body) {
  res.status = status;
  res.set_content(body, "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code,
                const std::string& message) {
  send_json(res, status, json{{"v", 1}, {"error", {{"code", code}, {"message", message}}}}.dump());
}

void send_file(httplib::Response& res, const fs::path& path, const char* type) {
  const auto bytes = read_bytes(path);
  res.status = 200;
  res.set_content(std::string(bytes.begin(), bytes.end()), type);
}

// Runs a handler, mapping exceptions to the error envelope.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), to_string(e.code()), e.message());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what());
    }
  };
}

bool truthy(const std::string& v) { return v == "1" || v == "true" || v == "yes"; }

}  // namespace

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  bool bound = false;
  std::atomic<bool> listening{false};
  std::atomic<bool> stop_requested{false};

  explicit Impl(Service& s) : service(s) {}
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& svr = impl_->server;
  Service& s = service;
  const std::string token = s.config().api_token;

  // httplib defaults to SO_REUSEPORT, which lets a second server share a busy port.
  svr.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });

  if (!token.empty()) {
    svr.set_pre_routing_handler([token](const httplib::Request& req, httplib::Response& res) {
      if (req.path.rfind("/api/", 0) != 0) return httplib::Server::HandlerResponse::Unhandled;
      const bool ok = req.get_header_value("Authorization") == "Bearer " + token ||
                      req.get_header_value("X-API-Token") == token;
      if (ok) return httplib::Server::HandlerResponse::Unhandled;
      send_error(res, 401, "Unauthorized", "missing or wrong API token");
      return httplib::Server::HandlerResponse::Handled;
    });
  }

  svr.Get("/api/v1/health", guarded([](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, json{{"v", 1}, {"status", "ok"}}.dump());
  }));

  svr.Get("/api/v1/templates", guarded([&s](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, s.templates_json());
  }));

  svr.Get("/api/v1/users", guarded([&s](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, s.users_json());
  }));

  svr.Get(R"(/api/v1/users/([A-Za-z0-9_-]+))",
          guarded([&s](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, s.user_json(req.matches[1]));
          }));

  svr.Get(R"(/api/v1/users/([A-Za-z0-9_-]+)/face_id)",
          guarded([&s](const httplib::Request& req, httplib::Response& res) {
            const std::string uid = req.matches[1];
            const auto profile = s.store().load_profile(uid);
            if (!profile.trained) throw Error(Errc::NotFound, "user '" + uid + "' is not trained");
            send_file(res, s.store().user_dir(uid) / profile.face_id, "image/png");
          }));

  svr.Post(R"(/api/v1/users/([A-Za-z0-9_-]+)/images)",
           guarded([&s](const httplib::Request& req, httplib::Response& res) {
             const std::string uid = req.matches[1];
             std::vector<std::string> files;
             for (const auto& [name, part] : req.files) files.push_back(part.content);
             const bool force = truthy(req.get_param_value("force"));
             try {
               const int count = s.upload_images(uid, files, force);
               send_json(res, 200, json{{"v", 1}, {"user_id", uid}, {"count", count}}.dump());
             } catch (const Error& e) {
               // Upload-time overflow is a conflict with what is already stored.
               if (e.code() != Errc::TooManyImages) throw;
               send_error(res, 409, to_string(e.code()), e.message());
             }
           }));

  svr.Post(R"(/api/v1/users/([A-Za-z0-9_-]+)/train)",
           guarded([&s](const httplib::Request& req, httplib::Response& res) {
             const std::string job_id = s.start_training(req.matches[1], req.body);
             send_json(res, 202, json{{"v", 1}, {"job_id", job_id}}.dump());
           }));

  svr.Get(R"(/api/v1/jobs/([A-Za-z0-9_-]+))",
          guarded([&s](const httplib::Request& req, httplib::Response& res) {
            const auto job = s.get_job(req.matches[1]);
            if (!job) throw Error(Errc::NotFound, "no job " + std::string(req.matches[1]));
            send_json(res, 200, to_json(*job));
          }));

  svr.Post("/api/v1/generate", guarded([&s](const httplib::Request& req, httplib::Response& res) {
    const std::string task_id = s.create_generation(req.body);
    send_json(res, 202, json{{"v", 1}, {"task_id", task_id}}.dump());
  }));

  svr.Get(R"(/api/v1/tasks/([A-Za-z0-9_-]+))",
          guarded([&s](const httplib::Request& req, httplib::Response& res) {
            const auto task = s.get_task(req.matches[1]);
            if (!task) throw Error(Errc::NotFound, "no task " + std::string(req.matches[1]));
            send_json(res, 200, to_json(*task));
          }));

  svr.Get(R"(/api/v1/results/([A-Za-z0-9_-]+)/image)",
          guarded([&s](const httplib::Request& req, httplib::Response& res) {
            const auto path = s.result_image(req.matches[1]);
            if (!path) throw Error(Errc::NotFound, "no result for " + std::string(req.matches[1]));
            send_file(res, *path, "image/png");
          }));

  svr.set_mount_point("/templates", s.store().templates_dir().string());
  svr.set_mount_point("/results", (s.store().root() / "results").string());
  if (!s.config().ui_dir.empty()) svr.set_mount_point("/ui", s.config().ui_dir.string());
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& svr = impl_->server;
  int bound = -1;
  if (port == 0) {
    bound = svr.bind_to_any_port(host);
  } else if (svr.bind_to_port(host, port)) {
    bound = port;
  }
  if (bound <= 0) {
    throw Error(Errc::IoError, "cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->bound = true;
  return bound;
}

void HttpServer::listen() {
  if (!impl_->bound) throw Error(Errc::IoError, "listen() before bind()");
  impl_->listening = true;
  if (!impl_->stop_requested) impl_->server.listen_after_bind();
  impl_->listening = false;
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->stop_requested = true;
  // A listen() that has started but not yet entered its accept loop must be waited for,
  // otherwise stop() would be a no-op and the loop would never exit.
  while (impl_->listening && !impl_->server.is_running()) std::this_thread::yield();
  impl_->server.stop();
}

}  // namespace easyphoto
