#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace easyphoto {

// Persisted state machines. States only move forward along the declared order;
// any non-terminal state may move to failed; done and failed are terminal.

enum class JobState { Queued, Preprocessing, Training, Validating, Merging, Done, Failed };
enum class TaskState { Queued, Preparing, Stage1, Stage2, Merging, PostProcess, Done, Failed };

const char* to_string(JobState s) noexcept;
const char* to_string(TaskState s) noexcept;
std::optional<JobState> job_state_from_string(std::string_view s);
std::optional<TaskState> task_state_from_string(std::string_view s);

bool is_terminal(JobState s) noexcept;
bool is_terminal(TaskState s) noexcept;
bool can_transition(JobState from, JobState to) noexcept;
bool can_transition(TaskState from, TaskState to) noexcept;

struct TrainingJob {
  std::string job_id;
  std::string user_id;
  JobState state = JobState::Queued;
  double progress = 0.0;
  std::string message;
  std::string created;
  std::string updated;
  /// Raw override document accepted at submission ({} when none).
  std::string overrides = "{}";
};

struct GenerationTask {
  std::string task_id;
  std::string template_id;
  std::vector<std::string> user_ids;
  /// GenerationOptions as submitted, serialized JSON.
  std::string options = "{}";
  TaskState state = TaskState::Queued;
  double progress = 0.0;
  std::string message;
  /// Set iff state == Done.
  std::string result;
  std::string created;
  std::string updated;
};

/// Applies a state event. Backward or post-terminal moves are rejected (returns false,
/// record untouched). Progress never decreases; reaching Done pins it to 1.
bool advance(TrainingJob& job, JobState to, double progress, std::string message = {});
bool advance(GenerationTask& task, TaskState to, double progress, std::string message = {});

std::string to_json(const TrainingJob& job);
std::string to_json(const GenerationTask& task);
TrainingJob job_from_json(std::string_view text);
GenerationTask task_from_json(std::string_view text);

/// RFC 3339 UTC timestamp with millisecond precision.
std::string utc_timestamp();

/// Random version-4 UUID.
std::string make_uuid();

}  // namespace easyphoto
