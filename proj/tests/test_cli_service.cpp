#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "wavegen/eval.hpp"
#include "wavegen/generate.hpp"
#include "wavegen/service.hpp"
#include "wavegen/train.hpp"

using namespace wavegen;

#ifndef WAVEGEN_CLI_PATH
#error "WAVEGEN_CLI_PATH must point at the CLI binary"
#endif

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("wavegen_cli_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string str(const std::string& name = "") const { return (path / name).string(); }
};

int run_cli(const std::string& args, const std::string& env = "") {
  std::string cmd = env + (env.empty() ? "" : " ") + WAVEGEN_CLI_PATH + " " + args +
                    " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_toy_wavs(const std::string& dir, int n_classes, int per_class, uint64_t seed) {
  std::filesystem::create_directories(dir);
  Dataset d = synth_toy_dataset(n_classes, per_class, seed);
  for (long i = 0; i < d.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "ex_%03ld.wav", i);
    save_wav(d.examples[(size_t)i], (std::filesystem::path(dir) / name).string());
  }
}

/// Minimal waveform-generator checkpoint for service tests.
std::string make_generator_ckpt(const TempDir& tmp) {
  ModelSpec gs;
  gs.kind = ModelKind::WaveganG;
  gs.d = 1;
  std::mt19937_64 rng(1);
  auto g = build_model<float>(gs, rng);
  Checkpoint ck;
  ck.meta["g_spec"] = model_spec_to_json(gs);
  ck.meta["iteration"] = 17;
  append_model_tensors(ck, g, "g.");
  auto path = tmp.str("g.ckpt");
  save_checkpoint(path, ck);
  return path;
}

/// In-process service bound to an ephemeral port.
struct TestService {
  LoadedGenerator lg;
  httplib::Server srv;
  std::thread thread;
  int port = 0;

  explicit TestService(const std::string& ckpt_path) {
    lg = load_generator(load_checkpoint(ckpt_path));
    setup_service_routes(srv, lg);
    port = srv.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { srv.listen_after_bind(); });
    while (!srv.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  ~TestService() {
    srv.stop();
    thread.join();
  }
  httplib::Client client() { return httplib::Client("127.0.0.1", port); }
};

}  // namespace

// ---------------------------------------------------------------------------
// CLI exit codes and workflows

TEST_CASE("cli: usage errors exit 2, help exits 0") {
  CHECK(run_cli("") == 2);                       // missing subcommand
  CHECK(run_cli("frobnicate") == 2);             // unknown subcommand
  CHECK(run_cli("generate --bogus x") == 2);     // unknown flag
  CHECK(run_cli("generate") == 2);               // missing required options
  CHECK(run_cli("train --toy --arch dcgan --out /tmp/x") == 2);  // bad choice
  CHECK(run_cli("--help") == 0);
}

TEST_CASE("cli: runtime failures exit 1") {
  TempDir tmp;
  CHECK(run_cli("generate --ckpt " + tmp.str("missing.ckpt") + " --n 1 --out " +
                tmp.str("out")) == 1);
  CHECK(run_cli("preprocess --data " + tmp.str("nodir") + " --out " + tmp.str("s.json")) == 1);
}

TEST_CASE("cli: train then generate produces deterministic WAV files") {
  TempDir tmp;
  write_toy_wavs(tmp.str("data"), 2, 2, 5);
  CHECK(run_cli("train --data " + tmp.str("data") + " --arch wavegan --out " +
                tmp.str("run") + " --d 1 --iters 1 --batch 2 --n-critic 1 --seed 3") == 0);
  REQUIRE(std::filesystem::exists(tmp.str("run/latest.ckpt")));
  REQUIRE(std::filesystem::exists(tmp.str("run/metrics.jsonl")));

  const std::string ckpt = tmp.str("run/latest.ckpt");
  CHECK(run_cli("generate --ckpt " + ckpt + " --n 3 --seed 7 --out " + tmp.str("g1")) == 0);
  for (const char* f : {"gen_000.wav", "gen_001.wav", "gen_002.wav"})
    CHECK(std::filesystem::exists(tmp.str("g1/") + f));
  CHECK(!std::filesystem::exists(tmp.str("g1/gen_003.wav")));

  CHECK(run_cli("generate --ckpt " + ckpt + " --n 3 --seed 7 --out " + tmp.str("g2")) == 0);
  CHECK(slurp(tmp.str("g1/gen_000.wav")) == slurp(tmp.str("g2/gen_000.wav")));
  CHECK(slurp(tmp.str("g1/gen_002.wav")) == slurp(tmp.str("g2/gen_002.wav")));

  // WAVEGEN_SEED env matches an explicit --seed
  CHECK(run_cli("generate --ckpt " + ckpt + " --n 1 --out " + tmp.str("g3"),
                "WAVEGEN_SEED=7") == 0);
  CHECK(slurp(tmp.str("g3/gen_000.wav")) == slurp(tmp.str("g1/gen_000.wav")));
}

TEST_CASE("cli: preprocess writes parseable per-bin statistics") {
  TempDir tmp;
  write_toy_wavs(tmp.str("data"), 2, 2, 9);
  CHECK(run_cli("preprocess --data " + tmp.str("data") + " --out " + tmp.str("stats.json")) ==
        0);
  auto stats = bin_stats_from_json(slurp(tmp.str("stats.json")));
  CHECK(stats.bins() == 128);
  CHECK(stats.win_len == 256);
}

TEST_CASE("cli: analyze impulse and pca emit JSON artifacts") {
  TempDir tmp;
  CHECK(run_cli("analyze impulse --out " + tmp.str("imp.json") +
                " --d 1 --trials 2 --seed 1") == 0);
  auto imp = nlohmann::json::parse(slurp(tmp.str("imp.json")));
  CHECK(imp["magnitude"].size() == 8193);
  CHECK(imp["trials"].get<long>() == 2);

  write_toy_wavs(tmp.str("data"), 2, 2, 4);
  CHECK(run_cli("analyze pca --data " + tmp.str("data") + " --out " + tmp.str("pca.json") +
                " --k 3 --slice-len 32 --n-slices 256") == 0);
  auto pca = nlohmann::json::parse(slurp(tmp.str("pca.json")));
  CHECK(pca["eigenvalues"].size() == 3);
  CHECK(pca["components"].size() == 3);
  CHECK(pca["components"][0].size() == 32);
}

TEST_CASE("cli: eval scores a checkpoint against real data") {
  TempDir tmp;
  write_toy_wavs(tmp.str("data"), 10, 1, 5);

  // Tiny 10-class classifier; accuracy is irrelevant here, wiring is.
  Dataset ctrain = synth_toy_dataset(10, 2, 1);
  Dataset cvalid = synth_toy_dataset(10, 1, 2);
  ClassifierConfig ccfg;
  ccfg.max_epochs = 1;
  auto clf = train_classifier(ctrain, cvalid, ccfg);
  save_classifier(tmp.str("clf.ckpt"), clf);

  auto ckpt = make_generator_ckpt(tmp);
  // capture stdout through a file
  std::string cmd = std::string(WAVEGEN_CLI_PATH) + " eval --ckpt " + ckpt +
                    " --classifier " + tmp.str("clf.ckpt") + " --data " + tmp.str("data") +
                    " --n-gen 20 --seed 1 > " + tmp.str("report.json") + " 2>/dev/null";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  auto rep = nlohmann::json::parse(slurp(tmp.str("report.json")));
  CHECK(rep["n_samples"].get<long>() == 20);
  CHECK(rep["inception_score"]["mean"].get<double>() >= 1.0);
  CHECK(rep["d_self"].get<double>() >= 0.0);
  CHECK(rep["d_train"].get<double>() >= 0.0);
}

// ---------------------------------------------------------------------------
// HTTP service

TEST_CASE("service: /api/model reports the loaded generator") {
  TempDir tmp;
  TestService svc(make_generator_ckpt(tmp));
  auto cli = svc.client();
  auto res = cli.Get("/api/model");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  auto j = nlohmann::json::parse(res->body);
  CHECK(j["arch"] == "wavegan");
  CHECK(j["d"].get<long>() == 1);
  CHECK(j["c"].get<long>() == 1);
  CHECK(j["latent_dim"].get<long>() == 100);
  CHECK(j["sample_rate"].get<int>() == 16000);
  CHECK(j["ckpt_iteration"].get<long>() == 17);
}

TEST_CASE("service: seeded generation returns byte-identical WAV bytes") {
  TempDir tmp;
  TestService svc(make_generator_ckpt(tmp));
  auto cli = svc.client();
  auto r1 = cli.Post("/api/generate", R"({"seed": 7})", "application/json");
  REQUIRE(r1);
  CHECK(r1->status == 200);
  CHECK(r1->get_header_value("Content-Type") == "audio/wav");
  CHECK(r1->body.substr(0, 4) == "RIFF");
  CHECK(!r1->get_header_value("X-Latent-Z").empty());

  auto r2 = cli.Post("/api/generate", R"({"seed": 7})", "application/json");
  REQUIRE(r2);
  CHECK(r2->body == r1->body);
}

TEST_CASE("service: multi-sample generation returns base64 WAVs echoing z") {
  TempDir tmp;
  TestService svc(make_generator_ckpt(tmp));
  auto cli = svc.client();
  auto res = cli.Post("/api/generate", R"({"seed": 3, "count": 3})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  auto arr = nlohmann::json::parse(res->body);
  REQUIRE(arr.is_array());
  REQUIRE(arr.size() == 3);
  auto expect_z = latent_vectors(3, 100, 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(arr[i]["z"].get<std::vector<float>>() == expect_z[i]);
    // base64("RIFF...") starts with "UklGR"
    CHECK(arr[i]["wav_base64"].get<std::string>().substr(0, 5) == "UklGR");
  }
}

TEST_CASE("service: explicit z is honored and echoed") {
  TempDir tmp;
  TestService svc(make_generator_ckpt(tmp));
  auto cli = svc.client();
  nlohmann::json body;
  body["z"] = std::vector<float>(100, 0.25f);
  auto r1 = cli.Post("/api/generate", body.dump(), "application/json");
  REQUIRE(r1);
  CHECK(r1->status == 200);
  auto echoed = nlohmann::json::parse(r1->get_header_value("X-Latent-Z"));
  CHECK(echoed.get<std::vector<float>>() == std::vector<float>(100, 0.25f));
  auto r2 = cli.Post("/api/generate", body.dump(), "application/json");
  CHECK(r2->body == r1->body);
}

TEST_CASE("service: error statuses — 400 malformed, 422 z length") {
  TempDir tmp;
  TestService svc(make_generator_ckpt(tmp));
  auto cli = svc.client();

  auto bad = cli.Post("/api/generate", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  nlohmann::json shortz;
  shortz["z"] = std::vector<float>(99, 0.0f);
  auto r422 = cli.Post("/api/generate", shortz.dump(), "application/json");
  REQUIRE(r422);
  CHECK(r422->status == 422);

  nlohmann::json both;
  both["z"] = std::vector<float>(100, 0.0f);
  both["seed"] = 1;
  auto rboth = cli.Post("/api/generate", both.dump(), "application/json");
  REQUIRE(rboth);
  CHECK(rboth->status == 400);  // z and seed are mutually exclusive

  nlohmann::json interp;
  interp["z_a"] = std::vector<float>(100, 0.0f);
  interp["z_b"] = std::vector<float>(50, 0.0f);
  interp["steps"] = 2;
  auto ri = cli.Post("/api/interpolate", interp.dump(), "application/json");
  REQUIRE(ri);
  CHECK(ri->status == 422);

  auto rs = cli.Post("/api/interpolate",
                     R"({"z_a": [], "z_b": [], "steps": 1})", "application/json");
  REQUIRE(rs);
  CHECK(rs->status == 400);  // steps must be >= 2 (length check follows)
}

TEST_CASE("service: interpolation includes endpoints and midpoints") {
  TempDir tmp;
  TestService svc(make_generator_ckpt(tmp));
  auto cli = svc.client();

  std::vector<float> za(100, -0.5f), zb(100, 0.5f);
  nlohmann::json body;
  body["z_a"] = za;
  body["z_b"] = zb;
  body["steps"] = 2;
  auto r2 = cli.Post("/api/interpolate", body.dump(), "application/json");
  REQUIRE(r2);
  CHECK(r2->status == 200);
  auto arr2 = nlohmann::json::parse(r2->body);
  REQUIRE(arr2.size() == 2);
  CHECK(arr2[0]["z"].get<std::vector<float>>() == za);
  CHECK(arr2[1]["z"].get<std::vector<float>>() == zb);

  body["steps"] = 3;
  auto r3 = cli.Post("/api/interpolate", body.dump(), "application/json");
  REQUIRE(r3);
  auto arr3 = nlohmann::json::parse(r3->body);
  REQUIRE(arr3.size() == 3);
  auto mid = arr3[1]["z"].get<std::vector<float>>();
  for (float v : mid) CHECK(v == doctest::Approx(0.0f).epsilon(1e-6));
  CHECK(arr3[0]["z"].get<std::vector<float>>() == za);
  CHECK(arr3[2]["z"].get<std::vector<float>>() == zb);

  // midpoint equals a direct generation at the midpoint z
  nlohmann::json gen;
  gen["z"] = mid;
  auto rg = cli.Post("/api/generate", gen.dump(), "application/json");
  REQUIRE(rg);
  CHECK(base64_encode(std::vector<uint8_t>(rg->body.begin(), rg->body.end())) ==
        arr3[1]["wav_base64"].get<std::string>());
}

TEST_CASE("service: OPTIONS preflight carries CORS headers") {
  TempDir tmp;
  TestService svc(make_generator_ckpt(tmp));
  auto cli = svc.client();
  auto res = cli.Options("/api/generate");
  REQUIRE(res);
  CHECK(res->status == 204);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(res->get_header_value("Access-Control-Allow-Methods").find("POST") !=
        std::string::npos);
}
