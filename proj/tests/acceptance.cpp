// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "easyphoto/fixtures.hpp"
#include "easyphoto/image_io.hpp"
#include "easyphoto/inference.hpp"
#include "easyphoto/lora.hpp"
#include "easyphoto/records.hpp"
#include "easyphoto/service.hpp"
#include "easyphoto/store.hpp"

#include "contract.hpp"
#include "fake_models.hpp"
#include "support.hpp"
#include "users.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

namespace ep = easyphoto;
namespace fs = std::filesystem;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

// Thrown by require() with the reason for a failed check.
struct Failure {
  std::string why;
};

void require(bool ok, const std::string& why) {
  if (!ok) throw Failure{why};
}

template <typename Fn>
std::optional<ep::Errc> error_code(Fn&& fn) {
  try {
    fn();
  } catch (const ep::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

bool inside(const ep::Mask& m, Eigen::Index y, Eigen::Index x) { return m(y, x) >= 0.5f; }

std::string png(const ep::Image& img) {
  const auto b = ep::encode_png(img);
  return {b.begin(), b.end()};
}

// ---------------------------------------------------------------------------

std::string affine_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20241);
  std::uniform_real_distribution<double> lin(-2.0, 2.0), trans(-50.0, 50.0), coord(0.0, 200.0);
  std::normal_distribution<double> noise(0.0, 0.01);
  double worst_exact = 0.0, worst_noisy = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    ep::AffineMatrix truth;
    do {
      truth << lin(rng), lin(rng), trans(rng), lin(rng), lin(rng), trans(rng);
    } while (std::abs(truth.leftCols<2>().determinant()) < 0.5 ||
             std::abs(truth.leftCols<2>().determinant()) > 2.0);
    // Noise-free recovery on arbitrary pixel-frame points.
    ep::LandmarkSet pixels(5, 2);
    for (int i = 0; i < 5; ++i) pixels.row(i) << coord(rng), coord(rng);
    worst_exact = std::max(
        worst_exact,
        (ep::estimate_affine(pixels, ep::transform_points(truth, pixels)) - truth).cwiseAbs().maxCoeff());
    // Noisy recovery on face-shaped sets in their own centroid frame.
    const ep::LandmarkSet src = ep::testing::random_face_landmarks(rng);
    const ep::LandmarkSet dst = ep::transform_points(truth, src);
    worst_exact = std::max(worst_exact, (ep::estimate_affine(src, dst) - truth).cwiseAbs().maxCoeff());
    ep::LandmarkSet noisy = dst;
    for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy.data()[i] += noise(rng);
    worst_noisy = std::max(worst_noisy, (ep::estimate_affine(src, noisy) - truth).cwiseAbs().maxCoeff());
  }
  const double elapsed = seconds_since(t0);
  require(worst_exact <= 1e-9, "noise-free max entry error " + fmt(worst_exact));
  require(worst_noisy <= 0.05, "noisy max entry error " + fmt(worst_noisy));
  require(elapsed < 5.0, "took " + fmt(elapsed) + " s");
  return "max error " + fmt(worst_exact) + " exact, " + fmt(worst_noisy) + " noisy, " + fmt(elapsed) + " s";
}

std::string mask_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20242);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = ep::testing::random_binary_mask(rng, 32, 32, 0.05 + 0.5 * (trial % 10) / 10.0);
    const int r = 1 + static_cast<int>(rng() % 6);
    const int r_in = static_cast<int>(rng() % 4);
    const auto same = [](const ep::Mask& a, const ep::Mask& b) { return ep::testing::same_mask(a, b); };
    require(same(ep::dilate(m, r), ep::testing::brute_dilate(m, r)), "dilate differs, trial " + std::to_string(trial));
    require(same(ep::erode(m, r), ep::testing::brute_erode(m, r)), "erode differs, trial " + std::to_string(trial));
    require(same(ep::boundary_ring(m, r, r_in), ep::testing::brute_ring(m, r, r_in)),
            "ring differs, trial " + std::to_string(trial));
  }
  const double elapsed = seconds_since(t0);
  require(elapsed < 10.0, "took " + fmt(elapsed) + " s");
  return "200 masks bit-exact, " + fmt(elapsed) + " s";
}

std::string inpaint_contract() {
  const std::string mock = ep::testing::check_inpaint_contract(ep::MockBackend{}, 100);
  require(mock.empty(), "mock: " + mock);
  ep::testing::FakeModelServer server;
  const auto external = ep::make_backend("external:" + server.url());
  const std::string ext = ep::testing::check_inpaint_contract(*external, 100);
  require(ext.empty(), "external: " + ext);
  return "mock and external backends, 100 requests each";
}

ep::LoraCheckpoint random_checkpoint(std::mt19937_64& rng, const std::string& id, int stage) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  ep::LoraCheckpoint c{id, stage, {}};
  for (const auto& [key, n] : {std::pair{"lora.down", 128}, std::pair{"lora.up", 96}}) {
    ep::Tensor t;
    t.shape = {n};
    t.values.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) t.values[i] = u(rng);
    c.tensors[key] = t;
  }
  return c;
}

std::string ensemble_math() {
  // Ranked weights from a three-checkpoint report.
  std::mt19937_64 rng(20244);
  std::vector<ep::LoraCheckpoint> cks;
  ep::ValidationReport report;
  const std::vector<double> means = {0.9, 0.7, 0.5};
  for (int s = 0; s < 3; ++s) {
    cks.push_back(random_checkpoint(rng, "ck-" + std::to_string(s), s));
    ep::CheckpointScores cs;
    cs.checkpoint_id = cks.back().checkpoint_id;
    cs.stage = s;
    cs.scores = {means[static_cast<size_t>(s)]};
    cs.failed = {false};
    cs.mean = means[static_cast<size_t>(s)];
    report.checkpoints.push_back(cs);
    report.images.push_back({ep::Image(2, 2, static_cast<float>(s) / 4.0f)});
  }
  const auto merged = ep::ensemble_merge(report, cks, 2);
  require(merged.provenance.size() == 2, "expected 2 merged checkpoints");
  require(merged.provenance[0].first == "ck-0" && merged.provenance[1].first == "ck-1", "wrong top-2");
  require(merged.provenance[0].second == 0.5625 && merged.provenance[1].second == 0.4375,
          "weights " + fmt(merged.provenance[0].second) + ", " + fmt(merged.provenance[1].second));

  // merge_lora properties on random sets.
  std::uniform_real_distribution<double> w(0.01, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    const size_t n = 2 + rng() % 5;
    std::vector<ep::LoraCheckpoint> set;
    std::vector<double> ws;
    for (size_t i = 0; i < n; ++i) {
      set.push_back(random_checkpoint(rng, "c" + std::to_string(i), static_cast<int>(i)));
      ws.push_back(w(rng));
    }
    const auto m = ep::merge_lora(set, ws);
    for (const auto& [key, t] : m.tensors) {
      for (Eigen::Index i = 0; i < t.values.size(); ++i) {
        float lo = set[0].tensors.at(key).values[i], hi = lo;
        for (const auto& c : set) {
          lo = std::min(lo, c.tensors.at(key).values[i]);
          hi = std::max(hi, c.tensors.at(key).values[i]);
        }
        require(t.values[i] >= lo - 1e-6f && t.values[i] <= hi + 1e-6f, "convexity violated");
      }
    }
    std::vector<size_t> perm(n);
    std::iota(perm.begin(), perm.end(), size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<ep::LoraCheckpoint> ps;
    std::vector<double> pw;
    for (size_t i : perm) {
      ps.push_back(set[i]);
      pw.push_back(ws[i]);
    }
    require(ep::merge_lora(ps, pw).tensors == m.tensors, "not permutation invariant");
    const std::vector<ep::LoraCheckpoint> copies(n, set[0]);
    const auto idem = ep::merge_lora(copies, ws);
    for (const auto& [key, t] : idem.tensors) {
      require((t.values - set[0].tensors.at(key).values).abs().maxCoeff() <= 1e-6f, "not idempotent");
    }
    require(ep::merge_lora(std::vector{set[0]}, std::vector{ws[0]}).tensors == set[0].tensors,
            "singleton merge not exact");
  }

  // Face-id tie-break: equal best scores resolve to the lower stage, then lower template.
  ep::ValidationReport tie;
  for (const auto& [stage, scores] : {std::pair{2, std::vector<double>{0.8, 0.8}},
                                      std::pair{1, std::vector<double>{0.3, 0.8}}}) {
    ep::CheckpointScores cs;
    cs.checkpoint_id = "s" + std::to_string(stage);
    cs.stage = stage;
    cs.scores = scores;
    cs.failed = {false, false};
    tie.checkpoints.push_back(cs);
    tie.images.push_back({ep::Image(1, 1, static_cast<float>(stage) / 8.0f),
                          ep::Image(1, 1, static_cast<float>(stage) / 8.0f + 0.5f)});
  }
  require(ep::select_face_id_image(tie) == tie.images[1][1], "tie-break did not pick stage 1, template 1");
  return "weights [0.5625, 0.4375]; 200 random merges; tie-break ok";
}

struct RunOutput {
  std::map<std::string, std::string> files;
  std::string image;
};

RunOutput clean_run() {
  ep::testing::TempDir dir;
  ep::DataStore store(dir.path());
  ep::testing::train_fixture_user(store, "u1", 1);
  RunOutput out;
  const fs::path user = store.user_dir("u1");
  for (const auto& entry : fs::directory_iterator(user / "ensemble")) {
    out.files["ensemble/" + entry.path().filename().string()] = ep::testing::slurp(entry.path());
  }
  out.files["face_id.png"] = ep::testing::slurp(user / "face_id.png");
  ep::GenerationOptions opts;
  opts.seed = 42;
  out.image = png(ep::generate_portrait(ep::fixtures::single_template(), store.load_bundle("u1"), opts,
                                        ep::InferenceContext{})
                      .image);
  return out;
}

std::string end_to_end_determinism() {
  const auto a = clean_run();
  const auto b = clean_run();
  require(a.files.size() >= 3, "ensemble files missing");
  for (const auto& [name, bytes] : a.files) {
    require(b.files.count(name) && b.files.at(name) == bytes, name + " differs between runs");
  }
  require(a.image == b.image, "output PNG differs between runs");
  const fs::path golden = fs::path(EP_GOLDEN_DIR) / "single_portrait.png";
  require(fs::exists(golden), "golden file missing: " + golden.string());
  require(ep::testing::slurp(golden) == a.image, "output differs from the golden file");
  return std::to_string(a.files.size()) + " artifacts and output identical; golden matches";
}

class RecordingBackend final : public ep::DiffusionBackend {
 public:
  ep::Image inpaint(const ep::InpaintRequest& req) const override {
    std::lock_guard lock(mu_);
    std::vector<ep::ControlKind> k;
    for (const auto& c : req.controls) k.push_back(c.kind);
    kinds_.push_back(k);
    return ep::mock_inpaint(req);
  }
  std::string id() const override { return "recording"; }
  std::vector<std::vector<ep::ControlKind>> kinds() const {
    std::lock_guard lock(mu_);
    return kinds_;
  }

 private:
  mutable std::mutex mu_;
  mutable std::vector<std::vector<ep::ControlKind>> kinds_;
};

std::string control_structure() {
  const auto& u = ep::testing::TrainedUsers::get().user("u1");
  auto backend = std::make_shared<RecordingBackend>();
  ep::InferenceContext ctx{ep::AdapterRegistry::reference(), backend};
  ep::GenerationOptions opts;
  opts.seed = 5;
  ep::generate_portrait(ep::fixtures::single_template(), u, opts, ctx);
  using K = ep::ControlKind;
  const auto kinds = backend->kinds();
  require(kinds.size() == 2, std::to_string(kinds.size()) + " diffusion calls");
  require(kinds[0] == std::vector{K::Canny, K::Color, K::OpenPose}, "first call controls differ");
  require(kinds[1] == std::vector{K::Canny, K::Tile}, "second call controls differ");
  return "(canny, color, openpose) then (canny, tile)";
}

std::string multi_id() {
  const auto& users = ep::testing::TrainedUsers::get();
  const auto& u1 = users.user("u1");
  const auto& u2 = users.user("u2");
  const ep::Image g = ep::fixtures::group_template();
  ep::GenerationOptions opts;
  opts.seed = 77;
  const auto adapters = ep::AdapterRegistry::reference();
  const auto splits = ep::split_masks_multi(g, opts, adapters);
  require(splits.size() == 2, "expected 2 faces");
  require(((splits[0].mask > 0.5f) && (splits[1].mask > 0.5f)).count() == 0, "masks overlap");
  require(splits[0].face.bbox.center_x() < splits[1].face.bbox.center_x(), "splits not left to right");
  const ep::Mask seams = ep::group_seam_mask(splits, opts);

  const auto result = ep::generate(g, {u1, u2}, opts, ep::InferenceContext{});
  require(result.provenance.user_ids == std::vector<std::string>{"u1", "u2"}, "user order");
  const std::vector<const ep::UserBundle*> order = {&u1, &u2};
  for (size_t i = 0; i < 2; ++i) {
    ep::GenerationOptions face_opts = opts;
    face_opts.seed = opts.seed + 2 * i;
    const auto single = ep::generate_portrait(splits[i].sub_image, *order[i], face_opts, ep::InferenceContext{});
    const float d = ep::testing::max_abs_diff_where(result.raw, single.raw, [&](auto y, auto x) {
      return inside(splits[i].mask, y, x) && !inside(seams, y, x);
    });
    require(d == 0.0f, "face " + std::to_string(i) + " is not user " + std::to_string(i + 1) + "'s output");
  }
  const float outside = ep::testing::max_abs_diff_where(result.raw, g, [&](auto y, auto x) {
    return !inside(seams, y, x) && !inside(splits[0].mask, y, x) && !inside(splits[1].mask, y, x);
  });
  require(outside == 0.0f, "pixels outside masks and rings changed by " + fmt(outside));

  const ep::Image t = ep::fixtures::single_template();
  const auto group = ep::generate_group(t, {u1}, opts, ep::InferenceContext{});
  const auto single = ep::generate_portrait(t, u1, opts, ep::InferenceContext{});
  const auto one = ep::split_masks_multi(t, opts, adapters);
  const ep::Mask ring = ep::group_seam_mask(one, opts);
  const float off_ring = ep::testing::max_abs_diff_where(group.raw, single.raw,
                                                         [&](auto y, auto x) { return !inside(ring, y, x); });
  require(off_ring == 0.0f, "1-face group differs from single-ID outside the ring by " + fmt(off_ring));
  return "disjoint masks, left-to-right, nil changes outside masks and rings";
}

class GateTrainer final : public ep::LoraTrainer {
 public:
  std::vector<ep::LoraCheckpoint> train(const std::vector<ep::Image>& processed,
                                        const ep::TrainingConfig& cfg) const override {
    std::unique_lock lock(mu_);
    entered_ = true;
    cv_.notify_all();
    cv_.wait(lock, [&] { return open_; });
    return ep::MockTrainer{}.train(processed, cfg);
  }
  std::string id() const override { return "gate"; }
  void open() {
    std::lock_guard lock(mu_);
    open_ = true;
    cv_.notify_all();
  }
  bool wait_entered() const {
    std::unique_lock lock(mu_);
    return cv_.wait_for(lock, 30s, [&] { return entered_; });
  }

 private:
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  mutable bool entered_ = false;
  bool open_ = false;
};

std::string service_state_machines() {
  // Fuzzed event streams never move a record backwards.
  std::mt19937_64 rng(20248);
  auto job_rank = [](ep::JobState s) { return s == ep::JobState::Failed ? 99 : static_cast<int>(s); };
  auto task_rank = [](ep::TaskState s) { return s == ep::TaskState::Failed ? 99 : static_cast<int>(s); };
  for (int trial = 0; trial < 5000; ++trial) {
    ep::TrainingJob job;
    ep::GenerationTask task;
    task.result = "r";
    for (int step = 0; step < 10; ++step) {
      const auto jb = job.state;
      ep::advance(job, static_cast<ep::JobState>(rng() % 7), 0.1 * step);
      require(job_rank(job.state) >= job_rank(jb) && !(ep::is_terminal(jb) && job.state != jb),
              "backward job transition");
      const auto tb = task.state;
      ep::advance(task, static_cast<ep::TaskState>(rng() % 8), 0.1 * step);
      require(task_rank(task.state) >= task_rank(tb) && !(ep::is_terminal(tb) && task.state != tb),
              "backward task transition");
    }
  }

  // Crash-restart.
  ep::testing::TempDir crash;
  {
    ep::DataStore store(crash.path());
    store.write_job({"in-flight", "x", ep::JobState::Validating, 0.6});
    ep::GenerationTask t;
    t.task_id = "in-flight-task";
    t.template_id = "single";
    t.user_ids = {"x"};
    t.state = ep::TaskState::Stage1;
    store.write_task(t);
  }
  {
    ep::ServiceConfig cfg;
    cfg.data_dir = crash.path();
    ep::Service service(cfg, {});
    service.start();
    const auto job = service.get_job("in-flight");
    require(job && job->state == ep::JobState::Failed && job->message == "interrupted",
            "in-flight job not failed/interrupted");
    const auto task = service.get_task("in-flight-task");
    require(task && task->state == ep::TaskState::Failed && task->message == "interrupted",
            "in-flight task not failed/interrupted");
    service.shutdown();
  }
  require(ep::job_from_json(ep::testing::slurp(crash / "jobs/in-flight.json")).state == ep::JobState::Failed,
          "restart did not persist the failure");

  // HTTP preconditions.
  ep::testing::TempDir dir;
  auto gate = std::make_shared<GateTrainer>();
  ep::ServiceConfig cfg;
  cfg.data_dir = dir.path();
  cfg.stages = 2;
  ep::ServiceDeps deps;
  deps.trainer = gate;
  ep::Service service(cfg, deps);
  service.start();
  ep::HttpServer http(service);
  const int port = http.bind("127.0.0.1", 0);
  std::thread listener([&] { http.listen(); });
  httplib::Client client("127.0.0.1", port);
  std::string failure;
  try {
    auto upload = [&](const std::string& uid, int n, std::uint64_t seed) {
      httplib::MultipartFormDataItems items;
      for (const auto& img : ep::fixtures::training_photos(seed, n)) items.push_back({"files", png(img), "p.png", "image/png"});
      return client.Post("/api/v1/users/" + uid + "/images", items);
    };
    require(upload("few", 4, 1)->status == 200, "upload failed");
    auto res = client.Post("/api/v1/users/few/train", "", "application/json");
    require(res && res->status == 422, "4 images did not give 422");
    require(upload("busy", 5, 2)->status == 200, "upload failed");
    res = client.Post("/api/v1/users/busy/train", "", "application/json");
    require(res && res->status == 202, "training did not start");
    const std::string job_id = json::parse(res->body)["job_id"];
    require(gate->wait_entered(), "trainer never started");
    res = client.Post("/api/v1/users/busy/train", "", "application/json");
    require(res && res->status == 409, "concurrent training did not give 409");
    gate->open();
    require(service.wait_idle(60s), "training did not finish");
    require(service.get_job(job_id)->state == ep::JobState::Done, "training failed");
    res = client.Post("/api/v1/generate", R"({"template_id":"group","user_ids":["busy"]})", "application/json");
    require(res && res->status == 422, "user-count mismatch did not give 422");
  } catch (const Failure& f) {
    failure = f.why;
  }
  gate->open();
  http.stop();
  listener.join();
  service.shutdown();
  require(failure.empty(), failure);
  return "5000 fuzzed streams; crash-restart; 409/422 enforced";
}

std::string identity_reward() {
  const auto adapters = ep::AdapterRegistry::reference();
  const auto photos = ep::fixtures::training_photos(31, 5);
  const auto refs = ep::reference_embeddings(photos, adapters);
  require(refs.size() == photos.size(), "reference embeddings missing");
  for (size_t i = 0; i < photos.size(); ++i) {
    const double r = ep::identity_reward(photos[i], refs, adapters);
    require(std::abs(r - 1.0) <= 1e-6, "self reward " + fmt(r));
  }
  require(ep::identity_reward(ep::Image(128, 128, 0.5f), refs, adapters) == -1.0, "blank image reward is not -1");

  // Per-pair oracle: explicit dot products of the embeddings.
  const auto others = ep::fixtures::training_photos(32, 4);
  for (const auto& img : others) {
    const auto faces = ep::detect_faces(img);
    require(faces.size() == 1, "fixture face missing");
    const auto e = ep::embed_face(img, faces[0].bbox);
    double want = -1.0;
    for (const auto& r : refs) want = std::max(want, e.vector.dot(r.vector));
    const double got = ep::identity_reward(img, refs, adapters);
    require(std::abs(got - want) <= 1e-12, "reward " + fmt(got) + " vs oracle " + fmt(want));
  }
  return "self 1, blank -1, max over references";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<std::string()>>> criteria = {
      {"affine recovery", affine_recovery},
      {"mask calculus oracle equivalence", mask_oracle},
      {"inpaint contract conformance", inpaint_contract},
      {"ensemble math", ensemble_math},
      {"end-to-end determinism", end_to_end_determinism},
      {"first/second diffusion control structure", control_structure},
      {"multi-ID", multi_id},
      {"service state machines", service_state_machines},
      {"identity reward", identity_reward},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    std::string detail;
    bool ok = false;
    try {
      detail = fn();
      ok = true;
    } catch (const Failure& f) {
      detail = f.why;
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    if (!ok) ++failed;
    std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  }
  std::cout << (9 - failed) << "/9 criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
