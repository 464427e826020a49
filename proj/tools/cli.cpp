#include "cli.hpp"

#include "easyphoto/error.hpp"
#include "easyphoto/fixtures.hpp"
#include "easyphoto/image_io.hpp"
#include "easyphoto/inference.hpp"
#include "easyphoto/service.hpp"
#include "easyphoto/store.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <pthread.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <csignal>
#include <ctime>
#include <iostream>
#include <optional>
#include <thread>

namespace easyphoto::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_user_error(Errc code) {
  switch (code) {
    case Errc::InvalidArgument:
    case Errc::NotEnoughImages:
    case Errc::TooManyImages:
    case Errc::UndecodableImage:
    case Errc::NoFacesFound:
    case Errc::AmbiguousFace:
    case Errc::UserCountMismatch:
    case Errc::UserNotTrained:
    case Errc::TemplateNotFound:
    case Errc::NotFound:
      return true;
    default:
      return false;
  }
}

int report_error(const std::exception& e, bool as_json, std::ostream& out, std::ostream& err,
                 std::optional<int> forced_code = std::nullopt) {
  const auto* ep = dynamic_cast<const Error*>(&e);
  const int code = forced_code ? *forced_code
                   : (ep && is_user_error(ep->code())) ? kUserError
                                                       : kInternalError;
  err << "error: " << e.what() << "\n";
  if (as_json) {
    out << json{{"v", 1},
                {"error",
                 {{"code", ep ? to_string(ep->code()) : "Internal"},
                  {"message", ep ? ep->message() : std::string(e.what())}}}}
               .dump()
        << "\n";
  }
  return code;
}

std::vector<fs::path> image_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::InvalidArgument, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct Common {
  std::string config_file;
  std::string data_dir;
  std::string backend;
  bool as_json = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "key=value config file");
    cmd->add_option("--data-dir", data_dir, "data directory (default: EP_DATA_DIR or ./data)");
    cmd->add_option("--backend", backend, "mock | external:<url>");
    cmd->add_flag("--json", as_json, "print one JSON document on stdout");
  }

  ServiceConfig resolve() const {
    ServiceConfig cfg =
        load_service_config(config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file));
    if (!data_dir.empty()) cfg.data_dir = data_dir;
    if (!backend.empty()) cfg.backend = backend;
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string user;
  std::string images;
  int stages = 0;
  int top_k = 0;
  std::uint64_t seed = 0;
  bool force = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  ServiceConfig cfg;
  ServiceDeps deps;
  try {
    cfg = a.common.resolve();
    deps = make_deps(cfg);
  } catch (const std::exception& e) {
    return report_error(e, a.common.as_json, out, err, kInternalError);
  }
  try {
    TrainingConfig tc;
    tc.user_id = a.user;
    tc.stages = a.stages > 0 ? a.stages : cfg.stages;
    tc.top_k = a.top_k > 0 ? a.top_k : std::min(tc.top_k, tc.stages);
    tc.min_images = cfg.min_images;
    tc.max_images = cfg.max_images;
    tc.force = a.force;
    tc.validation_seed = a.seed;
    check_id(a.user, "user id");

    const auto files = image_files(a.images);
    tc.check(files.size());
    std::vector<Image> images;
    for (const auto& f : files) {
      try {
        images.push_back(read_image(f));
      } catch (const Error& e) {
        throw Error(Errc::UndecodableImage, f.filename().string() + ": " + e.message());
      }
    }

    DataStore store(cfg.data_dir);
    store.clear_raw_images(a.user);
    store.add_raw_images(a.user, images);
    const TrainingContext ctx{deps.adapters, deps.backend, deps.trainer};
    const auto art = train_user(store, a.user, tc, ctx, [&](TrainingPhase p, double f) {
      if (!a.common.as_json) {
        out << to_string(p) << " " << static_cast<int>(f * 100.0 + 0.5) << "%\n" << std::flush;
      }
    });
    for (const auto& w : art.warnings) err << "warning: " << w << "\n";
    if (a.common.as_json) {
      out << json{{"v", 1},
                  {"user_id", a.user},
                  {"report", art.report_json.string()},
                  {"face_id", art.face_id_png.string()},
                  {"ensemble", art.ensemble_dir.string()},
                  {"best_score", art.best_score},
                  {"warnings", art.warnings}}
                 .dump()
          << "\n";
    } else {
      out << "report: " << art.report_json.string() << "\n";
      out << "best face-id score: " << art.best_score << "\n";
    }
    return kOk;
  } catch (const std::exception& e) {
    return report_error(e, a.common.as_json, out, err);
  }
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
  Common common;
  std::string template_ref;
  std::vector<std::string> users;
  std::uint64_t seed = 0;
  std::string out_path;
  std::string options_json;
  std::optional<double> first_strength, second_strength;
  std::optional<int> first_steps, second_steps;
  bool no_mouth_refine = false;
  std::string style;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out, std::ostream& err) {
  ServiceConfig cfg;
  ServiceDeps deps;
  try {
    cfg = a.common.resolve();
    deps = make_deps(cfg);
  } catch (const std::exception& e) {
    return report_error(e, a.common.as_json, out, err, kInternalError);
  }
  try {
    GenerationOptions opts = options_from_json(a.options_json);
    opts.seed = a.seed;
    if (a.first_strength) opts.first.denoise_strength = *a.first_strength;
    if (a.second_strength) opts.second.denoise_strength = *a.second_strength;
    if (a.first_steps) opts.first.steps = *a.first_steps;
    if (a.second_steps) opts.second.steps = *a.second_steps;
    if (a.no_mouth_refine) opts.mouth_refine = false;
    if (!a.style.empty()) opts.style = a.style;
    opts.check();

    DataStore store(cfg.data_dir);
    Image template_img;
    if (fs::is_regular_file(a.template_ref)) {
      template_img = read_image(a.template_ref);
    } else {
      std::optional<fs::path> path;
      try {
        path = store.template_path(a.template_ref);
      } catch (const Error&) {
      }
      if (!path) {
        store.seed_builtin_templates();
        path = store.template_path(a.template_ref);
      }
      if (!path) throw Error(Errc::TemplateNotFound, "no template file or id '" + a.template_ref + "'");
      template_img = read_image(*path);
    }

    std::vector<UserBundle> users;
    for (const auto& uid : a.users) users.push_back(store.load_bundle(uid));
    const InferenceContext ctx{deps.adapters, deps.backend};
    auto result = generate(template_img, users, opts, ctx);
    result.provenance.template_ref = a.template_ref;

    const fs::path png = a.out_path;
    fs::path provenance = png;
    provenance.replace_extension(".json");
    if (png.has_parent_path()) fs::create_directories(png.parent_path());
    write_png(png, result.image);
    write_file_atomic(provenance, provenance_json(result.provenance) + "\n");
    if (a.common.as_json) {
      out << json{{"v", 1},
                  {"image", png.string()},
                  {"provenance", provenance.string()},
                  {"users", a.users},
                  {"faces", a.users.size()}}
                 .dump()
          << "\n";
    } else {
      out << "wrote " << png.string() << " and " << provenance.string() << "\n";
    }
    return kOk;
  } catch (const std::exception& e) {
    return report_error(e, a.common.as_json, out, err);
  }
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

struct ServeArgs {
  Common common;
  std::optional<int> port;
  std::optional<int> workers;
  std::string host;
};

int cmd_serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
  ServiceConfig cfg;
  ServiceDeps deps;
  try {
    cfg = a.common.resolve();
    if (a.port) cfg.port = *a.port;
    if (a.workers) cfg.workers = *a.workers;
    if (!a.host.empty()) cfg.host = a.host;
    deps = make_deps(cfg);
  } catch (const std::exception& e) {
    return report_error(e, a.common.as_json, out, err, kInternalError);
  }

  // SIGINT/SIGTERM are taken synchronously by a watcher thread.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  sigset_t previous;
  pthread_sigmask(SIG_BLOCK, &signals, &previous);

  int code = kOk;
  try {
    Service service(cfg, deps);
    HttpServer server(service);
    const int port = server.bind(cfg.host, cfg.port);
    service.start();
    if (a.common.as_json) {
      out << json{{"v", 1}, {"host", cfg.host}, {"port", port}}.dump() << "\n" << std::flush;
    } else {
      out << "listening on http://" << cfg.host << ":" << port << "\n" << std::flush;
    }

    std::atomic<bool> done{false};
    std::thread watcher([&] {
      const timespec tick{0, 200'000'000};
      while (!done) {
        if (sigtimedwait(&signals, nullptr, &tick) > 0) {
          spdlog::info("signal received, draining");
          server.stop();
          return;
        }
      }
    });
    server.listen();
    done = true;
    watcher.join();
    service.shutdown();
  } catch (const std::exception& e) {
    code = report_error(e, a.common.as_json, out, err, kInternalError);
  }
  pthread_sigmask(SIG_SETMASK, &previous, nullptr);
  return code;
}

// ---------------------------------------------------------------------------
// fixtures
// ---------------------------------------------------------------------------

struct FixtureArgs {
  std::string out_dir;
  std::uint64_t user_seed = 1;
  int count = 5;
};

int cmd_fixtures(const FixtureArgs& a, std::ostream& out, std::ostream& err) {
  try {
    const fs::path dir = a.out_dir;
    fs::create_directories(dir / "photos");
    const auto photos = fixtures::training_photos(a.user_seed, a.count);
    for (size_t i = 0; i < photos.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "photo-%02zu.png", i + 1);
      write_png(dir / "photos" / name, photos[i]);
    }
    write_png(dir / "template-single.png", fixtures::single_template());
    write_png(dir / "template-group.png", fixtures::group_template());
    out << "wrote " << photos.size() << " photos and 2 templates under " << dir.string() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    return report_error(e, false, out, err);
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  // stdout is reserved for results.
  static const bool stderr_logging = [] {
    auto logger = spdlog::get("easyphoto");
    if (!logger) logger = spdlog::stderr_color_mt("easyphoto");
    spdlog::set_default_logger(logger);
    return true;
  }();
  (void)stderr_logging;
  CLI::App app{"Portrait training and generation"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a user model from a directory of photos");
  t->add_option("--user", train.user, "user id")->required();
  t->add_option("--images", train.images, "directory of PNG/JPEG photos")->required();
  t->add_option("--stages", train.stages, "number of checkpoints");
  t->add_option("--top-k", train.top_k, "checkpoints merged into the ensemble");
  t->add_option("--seed", train.seed, "validation seed");
  t->add_flag("--force", train.force, "skip the 5-20 image bounds");
  train.common.add_to(t);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "generate a portrait for one or more trained users");
  g->add_option("--template", gen.template_ref, "template PNG/JPEG file or template id")->required();
  g->add_option("--user", gen.users, "trained user id; repeat for group templates (left to right)")
      ->required();
  g->add_option("--seed", gen.seed, "generation seed");
  g->add_option("--out", gen.out_path, "output PNG; provenance goes next to it as .json")->required();
  g->add_option("--options", gen.options_json, "JSON object of generation options");
  g->add_option("--first-strength", gen.first_strength, "first diffusion denoise strength");
  g->add_option("--second-strength", gen.second_strength, "second diffusion denoise strength");
  g->add_option("--first-steps", gen.first_steps, "first diffusion steps");
  g->add_option("--second-steps", gen.second_steps, "second diffusion steps");
  g->add_flag("--no-mouth-refine", gen.no_mouth_refine, "leave the mouth out of the second pass");
  g->add_option("--style", gen.style, "base model style id");
  gen.common.add_to(g);

  ServeArgs serve;
  auto* s = app.add_subcommand("serve", "run the REST service");
  s->add_option("--port", serve.port, "port; 0 picks a free one");
  s->add_option("--host", serve.host, "bind address");
  s->add_option("--workers", serve.workers, "worker threads");
  serve.common.add_to(s);

  FixtureArgs fix;
  auto* f = app.add_subcommand("fixtures", "write synthetic fiducial photos and templates");
  f->add_option("--out", fix.out_dir, "output directory")->required();
  f->add_option("--user-seed", fix.user_seed, "seed of the synthetic user");
  f->add_option("--count", fix.count, "number of photos");

  std::vector<std::string> reversed(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(reversed.begin(), reversed.end());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUserError;
  }

  if (t->parsed()) return cmd_train(train, out, err);
  if (g->parsed()) return cmd_generate(gen, out, err);
  if (s->parsed()) return cmd_serve(serve, out, err);
  return cmd_fixtures(fix, out, err);
}

}  // namespace easyphoto::cli
