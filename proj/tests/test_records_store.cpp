#include "easyphoto/error.hpp"
#include "easyphoto/fixtures.hpp"
#include "easyphoto/image_io.hpp"
#include "easyphoto/records.hpp"
#include "easyphoto/store.hpp"

#include "support.hpp"
#include "users.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <random>
#include <regex>
#include <set>

namespace ep = easyphoto;
using ep::Errc;
using ep::JobState;
using ep::TaskState;

namespace fs = std::filesystem;

TEST(StateMachine, TransitionTable) {
  EXPECT_TRUE(ep::can_transition(JobState::Queued, JobState::Preprocessing));
  EXPECT_TRUE(ep::can_transition(JobState::Queued, JobState::Done));
  EXPECT_TRUE(ep::can_transition(JobState::Training, JobState::Failed));
  EXPECT_FALSE(ep::can_transition(JobState::Training, JobState::Preprocessing));
  EXPECT_FALSE(ep::can_transition(JobState::Done, JobState::Failed));
  EXPECT_FALSE(ep::can_transition(JobState::Failed, JobState::Queued));
  EXPECT_TRUE(ep::can_transition(TaskState::Stage1, TaskState::Stage2));
  EXPECT_FALSE(ep::can_transition(TaskState::PostProcess, TaskState::Stage1));
  EXPECT_FALSE(ep::can_transition(TaskState::Done, TaskState::Done));
}

TEST(StateMachine, NamesRoundTrip) {
  for (int i = 0; i <= static_cast<int>(JobState::Failed); ++i) {
    const auto s = static_cast<JobState>(i);
    EXPECT_EQ(ep::job_state_from_string(ep::to_string(s)), s);
  }
  for (int i = 0; i <= static_cast<int>(TaskState::Failed); ++i) {
    const auto s = static_cast<TaskState>(i);
    EXPECT_EQ(ep::task_state_from_string(ep::to_string(s)), s);
  }
  EXPECT_FALSE(ep::job_state_from_string("running").has_value());
  EXPECT_STREQ(ep::to_string(TaskState::Stage1), "stage1");
  EXPECT_STREQ(ep::to_string(JobState::Preprocessing), "preprocessing");
}

// Random event streams: the observed state sequence only moves forward, terminal states
// stick, and progress never decreases.
TEST(StateMachine, RandomEventStreamsRespectTheInvariants) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-0.2, 1.2);
  for (int trial = 0; trial < 2000; ++trial) {
    ep::TrainingJob job;
    ep::GenerationTask task;
    for (int step = 0; step < 12; ++step) {
      const auto jprev = job;
      const auto jto = static_cast<JobState>(rng() % 7);
      const bool jok = ep::advance(job, jto, u(rng));
      if (ep::is_terminal(jprev.state)) {
        ASSERT_FALSE(jok);
      }
      if (jok) {
        ASSERT_TRUE(jto == jprev.state || ep::can_transition(jprev.state, jto));
        ASSERT_EQ(job.state, jto);
      } else {
        ASSERT_EQ(job.state, jprev.state);
        ASSERT_EQ(job.progress, jprev.progress);
      }
      // Failed ranks after every other state.
      auto rank = [](JobState s) { return s == JobState::Failed ? 99 : static_cast<int>(s); };
      ASSERT_GE(rank(job.state), rank(jprev.state));
      ASSERT_GE(job.progress, jprev.progress);
      ASSERT_GE(job.progress, 0.0);
      ASSERT_LE(job.progress, 1.0);
      if (job.state == JobState::Done) ASSERT_EQ(job.progress, 1.0);

      const auto tprev = task;
      const auto tto = static_cast<TaskState>(rng() % 8);
      if (rng() % 2) task.result = "results/x/image.png";
      const bool tok = ep::advance(task, tto, u(rng));
      if (ep::is_terminal(tprev.state)) ASSERT_FALSE(tok);
      if (!tok) ASSERT_EQ(task.state, tprev.state);
      ASSERT_GE(task.progress, tprev.progress);
      ASSERT_EQ(!task.result.empty() && task.state == TaskState::Done,
                task.state == TaskState::Done);
    }
  }
}

TEST(StateMachine, DoneRequiresAResult) {
  ep::GenerationTask task;
  EXPECT_FALSE(ep::advance(task, TaskState::Done, 1.0));
  EXPECT_EQ(task.state, TaskState::Queued);
  task.result = "results/t/image.png";
  EXPECT_TRUE(ep::advance(task, TaskState::Done, 0.3));
  EXPECT_EQ(task.progress, 1.0);
}

TEST(StateMachine, FailureMessage) {
  ep::TrainingJob job;
  EXPECT_TRUE(ep::advance(job, JobState::Training, 0.4, "training"));
  EXPECT_TRUE(ep::advance(job, JobState::Failed, 0.0, "boom"));
  EXPECT_EQ(job.message, "boom");
  EXPECT_EQ(job.progress, 0.4);
  EXPECT_FALSE(ep::advance(job, JobState::Failed, 0.0, "again"));
  EXPECT_EQ(job.message, "boom");
}

TEST(Records, JsonRoundTrip) {
  ep::TrainingJob job{"j-1", "alice", JobState::Validating, 0.5, "msg", "c", "u", R"({"stages":2})"};
  const auto jb = ep::job_from_json(ep::to_json(job));
  EXPECT_EQ(jb.job_id, job.job_id);
  EXPECT_EQ(jb.user_id, job.user_id);
  EXPECT_EQ(jb.state, job.state);
  EXPECT_EQ(jb.progress, job.progress);
  EXPECT_EQ(jb.message, job.message);
  EXPECT_EQ(jb.overrides, job.overrides);
  EXPECT_EQ(ep::to_json(jb), ep::to_json(job));

  ep::GenerationTask task;
  task.task_id = "t-1";
  task.template_id = "single";
  task.user_ids = {"a", "b"};
  task.options = R"({"seed":3})";
  task.state = TaskState::Done;
  task.progress = 1.0;
  task.result = "results/t-1/image.png";
  const auto tb = ep::task_from_json(ep::to_json(task));
  EXPECT_EQ(ep::to_json(tb), ep::to_json(task));
  EXPECT_EQ(tb.user_ids, task.user_ids);

  const auto j = nlohmann::json::parse(ep::to_json(ep::GenerationTask{}));
  EXPECT_TRUE(j["result"].is_null());
  EXPECT_EQ(j["state"], "queued");

  try {
    ep::job_from_json(R"({"job_id":"x"})");
    FAIL();
  } catch (const ep::Error& e) {
    EXPECT_EQ(e.code(), Errc::IoError);
  }
  EXPECT_THROW(ep::task_from_json(R"({"task_id":"x","template_id":"t","user_ids":[],"state":"nope","progress":0})"),
               ep::Error);
}

TEST(Records, UuidAndTimestampFormats) {
  const std::regex uuid("^[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}$");
  std::set<std::string> seen;
  for (int i = 0; i < 500; ++i) {
    const auto id = ep::make_uuid();
    EXPECT_TRUE(std::regex_match(id, uuid)) << id;
    seen.insert(id);
    EXPECT_NO_THROW(ep::check_id(id, "id"));
  }
  EXPECT_EQ(seen.size(), 500u);
  const std::regex ts(R"(^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}\.\d{3}Z$)");
  EXPECT_TRUE(std::regex_match(ep::utc_timestamp(), ts));
}

TEST(DataStore, CheckId) {
  EXPECT_NO_THROW(ep::check_id("alice_01-x", "user id"));
  EXPECT_NO_THROW(ep::check_id(std::string(64, 'a'), "user id"));
  const std::vector<std::string> bad_ids = {"", "../etc", "a b", "a/b", std::string(65, 'a'), "é"};
  for (const std::string& bad : bad_ids) {
    try {
      ep::check_id(bad, "user id");
      FAIL() << bad;
    } catch (const ep::Error& e) {
      EXPECT_EQ(e.code(), Errc::InvalidArgument);
    }
  }
}

TEST(DataStore, UploadsAppendWithOrdinalNames) {
  ep::testing::TempDir dir;
  ep::DataStore store(dir.path());
  const auto photos = ep::fixtures::training_photos(1, 5);
  EXPECT_EQ(store.add_raw_images("alice", {photos[0], photos[1]}), 2);
  EXPECT_EQ(store.add_raw_images("alice", {photos[2]}), 3);
  const auto raw = store.raw_images("alice");
  ASSERT_EQ(raw.size(), 3u);
  EXPECT_EQ(raw[0].filename(), "0001.png");
  EXPECT_EQ(raw[2].filename(), "0003.png");
  EXPECT_EQ(ep::read_image(raw[2]), ep::quantize8(photos[2]));
  EXPECT_EQ(store.load_profile("alice").image_count, 3);
  EXPECT_FALSE(store.load_profile("alice").trained);
  EXPECT_EQ(store.list_users(), (std::vector<std::string>{"alice"}));

  store.clear_raw_images("alice");
  EXPECT_TRUE(store.raw_images("alice").empty());
  EXPECT_EQ(store.load_profile("alice").image_count, 0);

  EXPECT_THROW(store.add_raw_images("../x", {photos[0]}), ep::Error);
}

TEST(DataStore, ManifestVersionIncreases) {
  ep::testing::TempDir dir;
  ep::DataStore store(dir.path());
  ep::UserProfile p;
  p.user_id = "bob";
  store.save_profile(p);
  const int v1 = store.load_profile("bob").manifest_version;
  store.save_profile(p);
  EXPECT_GT(store.load_profile("bob").manifest_version, v1);
}

TEST(DataStore, UntrainedUserHasNoBundle) {
  ep::testing::TempDir dir;
  ep::DataStore store(dir.path());
  try {
    store.load_bundle("ghost");
    FAIL();
  } catch (const ep::Error& e) {
    EXPECT_EQ(e.code(), Errc::UserNotTrained);
  }
}

TEST(DataStore, TrainUserRecordsArtifactsAndSelfHeals) {
  ep::testing::TempDir dir;
  ep::DataStore store(dir.path());
  const auto art = ep::testing::train_fixture_user(store, "carol", 5);
  const auto profile = store.load_profile("carol");
  EXPECT_TRUE(profile.trained);
  EXPECT_EQ(profile.roop, "raw/0001.png");
  EXPECT_EQ(profile.face_id, "face_id.png");
  EXPECT_TRUE(fs::exists(store.user_dir("carol") / profile.ensemble / "merged.json"));
  const auto bundle = store.load_bundle("carol");
  EXPECT_EQ(bundle.user_id, "carol");
  EXPECT_EQ(bundle.face_id, ep::read_image(art.face_id_png));
  EXPECT_FALSE(bundle.lora->tensors.empty());

  // Deleting an artifact flips the manifest back to untrained.
  fs::remove(store.user_dir("carol") / "face_id.png");
  EXPECT_FALSE(store.load_profile("carol").trained);
  const auto manifest = nlohmann::json::parse(ep::testing::slurp(store.user_dir("carol") / "manifest.json"));
  EXPECT_FALSE(manifest["trained"].get<bool>());
  EXPECT_THROW(store.load_bundle("carol"), ep::Error);
}

TEST(DataStore, RoopSkipsFacelessUploads) {
  ep::testing::TempDir dir;
  ep::DataStore store(dir.path());
  auto photos = ep::fixtures::training_photos(6, 5);
  photos.insert(photos.begin(), ep::fixtures::textured_background(256, 256, 1));
  store.add_raw_images("dave", photos);
  auto cfg = ep::testing::default_training_config("dave");
  const auto art = ep::train_user(store, "dave", cfg, ep::TrainingContext{});
  EXPECT_EQ(art.warnings.size(), 1u);
  EXPECT_EQ(store.load_profile("dave").roop, "raw/0002.png");
}

TEST(DataStore, JobsTasksAndTemplates) {
  ep::testing::TempDir dir;
  ep::DataStore store(dir.path());
  ep::TrainingJob job{"job-b", "alice"};
  ep::TrainingJob job2{"job-a", "bob"};
  store.write_job(job);
  store.write_job(job2);
  const auto jobs = store.read_jobs();
  ASSERT_EQ(jobs.size(), 2u);
  EXPECT_EQ(jobs[0].job_id, "job-a");

  ep::GenerationTask task;
  task.task_id = "task-1";
  task.template_id = "single";
  task.user_ids = {"alice"};
  store.write_task(task);
  ASSERT_EQ(store.read_tasks().size(), 1u);
  EXPECT_EQ(ep::to_json(store.read_tasks()[0]), ep::to_json(task));

  EXPECT_TRUE(store.template_ids().empty());
  store.seed_builtin_templates();
  const auto ids = store.template_ids();
  EXPECT_FALSE(ids.empty());
  for (const auto& id : ids) EXPECT_TRUE(store.template_path(id).has_value());
  EXPECT_FALSE(store.template_path("missing").has_value());
}
