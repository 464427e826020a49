#include "easyphoto/records.hpp"

#include "easyphoto/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <random>

namespace easyphoto {

namespace {

constexpr std::array<const char*, 7> kJobNames{"queued",     "preprocessing", "training", "validating",
                                               "merging",    "done",          "failed"};
constexpr std::array<const char*, 8> kTaskNames{"queued", "preparing",   "stage1", "stage2",
                                                "merging", "postprocess", "done",   "failed"};

template <typename E, size_t N>
std::optional<E> parse_state(const std::array<const char*, N>& names, std::string_view s) {
  for (size_t i = 0; i < N; ++i) {
    if (s == names[i]) return static_cast<E>(i);
  }
  return std::nullopt;
}

template <typename E>
bool forward_or_fail(E from, E to) noexcept {
  if (is_terminal(from)) return false;
  if (to == E::Failed) return true;
  return static_cast<int>(to) > static_cast<int>(from);
}

template <typename Record, typename E>
bool apply(Record& r, E to, double progress, std::string message) {
  if (to != r.state && !can_transition(r.state, to)) return false;
  if (to == r.state && is_terminal(to)) return false;
  r.state = to;
  r.progress = std::clamp(std::max(r.progress, progress), 0.0, 1.0);
  if (to == E::Done) r.progress = 1.0;
  if (!message.empty() || to == E::Failed) r.message = std::move(message);
  r.updated = utc_timestamp();
  return true;
}

}  // namespace

const char* to_string(JobState s) noexcept { return kJobNames[static_cast<size_t>(s)]; }
const char* to_string(TaskState s) noexcept { return kTaskNames[static_cast<size_t>(s)]; }

std::optional<JobState> job_state_from_string(std::string_view s) {
  return parse_state<JobState>(kJobNames, s);
}

std::optional<TaskState> task_state_from_string(std::string_view s) {
  return parse_state<TaskState>(kTaskNames, s);
}

bool is_terminal(JobState s) noexcept { return s == JobState::Done || s == JobState::Failed; }
bool is_terminal(TaskState s) noexcept { return s == TaskState::Done || s == TaskState::Failed; }

bool can_transition(JobState from, JobState to) noexcept { return forward_or_fail(from, to); }
bool can_transition(TaskState from, TaskState to) noexcept { return forward_or_fail(from, to); }

bool advance(TrainingJob& job, JobState to, double progress, std::string message) {
  return apply(job, to, progress, std::move(message));
}

bool advance(GenerationTask& task, TaskState to, double progress, std::string message) {
  if (to == TaskState::Done && task.result.empty()) return false;
  const bool ok = apply(task, to, progress, std::move(message));
  if (ok && to != TaskState::Done) task.result.clear();
  return ok;
}

std::string to_json(const TrainingJob& job) {
  nlohmann::json j{{"v", 1},
                   {"job_id", job.job_id},
                   {"user_id", job.user_id},
                   {"state", to_string(job.state)},
                   {"progress", job.progress},
                   {"message", job.message},
                   {"created", job.created},
                   {"updated", job.updated},
                   {"overrides", nlohmann::json::parse(job.overrides)}};
  return j.dump();
}

std::string to_json(const GenerationTask& task) {
  nlohmann::json j{{"v", 1},
                   {"task_id", task.task_id},
                   {"template_id", task.template_id},
                   {"user_ids", task.user_ids},
                   {"options", nlohmann::json::parse(task.options)},
                   {"state", to_string(task.state)},
                   {"progress", task.progress},
                   {"message", task.message},
                   {"created", task.created},
                   {"updated", task.updated}};
  j["result"] = task.result.empty() ? nlohmann::json(nullptr) : nlohmann::json(task.result);
  return j.dump();
}

TrainingJob job_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    TrainingJob job;
    job.job_id = j.at("job_id").get<std::string>();
    job.user_id = j.at("user_id").get<std::string>();
    const auto state = job_state_from_string(j.at("state").get<std::string>());
    if (!state) throw Error(Errc::IoError, "unknown job state");
    job.state = *state;
    job.progress = j.at("progress").get<double>();
    job.message = j.value("message", "");
    job.created = j.value("created", "");
    job.updated = j.value("updated", "");
    job.overrides = j.value("overrides", nlohmann::json::object()).dump();
    return job;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::IoError, std::string("corrupt job record: ") + e.what());
  }
}

GenerationTask task_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    GenerationTask task;
    task.task_id = j.at("task_id").get<std::string>();
    task.template_id = j.at("template_id").get<std::string>();
    task.user_ids = j.at("user_ids").get<std::vector<std::string>>();
    task.options = j.value("options", nlohmann::json::object()).dump();
    const auto state = task_state_from_string(j.at("state").get<std::string>());
    if (!state) throw Error(Errc::IoError, "unknown task state");
    task.state = *state;
    task.progress = j.at("progress").get<double>();
    task.message = j.value("message", "");
    task.created = j.value("created", "");
    task.updated = j.value("updated", "");
    if (j.contains("result") && j["result"].is_string()) task.result = j["result"].get<std::string>();
    return task;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::IoError, std::string("corrupt task record: ") + e.what());
  }
}

std::string utc_timestamp() {
  using namespace std::chrono;
  const auto now = system_clock::now();
  const std::time_t t = system_clock::to_time_t(now);
  const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

std::string make_uuid() {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  std::uint64_t hi = rng();
  std::uint64_t lo = rng();
  hi = (hi & 0xFFFFFFFFFFFF0FFFULL) | 0x0000000000004000ULL;
  lo = (lo & 0x3FFFFFFFFFFFFFFFULL) | 0x8000000000000000ULL;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%08x-%04x-%04x-%04x-%012llx", static_cast<unsigned>(hi >> 32),
                static_cast<unsigned>((hi >> 16) & 0xFFFF), static_cast<unsigned>(hi & 0xFFFF),
                static_cast<unsigned>(lo >> 48),
                static_cast<unsigned long long>(lo & 0xFFFFFFFFFFFFULL));
  return buf;
}

}  // namespace easyphoto
