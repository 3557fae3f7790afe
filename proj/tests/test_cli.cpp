#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <random>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ALTSFM_CLI) + " " + args + " > /tmp/altsfm_cli_out.txt 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string cli_output() {
  std::ifstream in("/tmp/altsfm_cli_out.txt");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::path("/tmp/altsfm_cli") / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Tiny fast scene for train/ablate smoke tests.
fs::path tiny_scene_file() {
  const fs::path path = "/tmp/altsfm_cli/tiny_scene.txt";
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "size 32 24\nchannels 1\nintrinsics 28 28 15.5 11.5\ndepth_range 0.5 60\n"
         "texture 0 0.5\ntexture_sin 0 0.25 0.9 0.3 0.7\ntexture_sin 0 0.1 1.6 1.9 2.1\n"
         "texture 1 0.5\ntexture_sin 1 0.25 1.6 2.3 0.4\ntexture_sin 1 0.1 2.8 0.7 2.0\n"
         "plane 0 0 1 8 0\n"
         "patch 0 0 1 4.5 1 -1.2 0.9 -0.9 0.6\npatch_motion 0 0 0 0 0 0\npatch_motion 0 0 0 0 0 0\n"
         "frame 0 0 0 0 0 0\nframe 0 0 0 -0.25 0.03 0\n";
  return path;
}

std::string scene_path(const char* name) { return std::string(ALTSFM_SCENE_DIR) + "/" + name; }

}  // namespace

TEST_CASE("gen-scene writes a complete, byte-reproducible scene directory") {
  const fs::path out1 = fresh_dir("gen1");
  const fs::path out2 = fresh_dir("gen2");
  REQUIRE(run_cli("gen-scene " + scene_path("fronto_parallel.txt") + " " + out1.string()) == 0);
  REQUIRE(run_cli("gen-scene " + scene_path("fronto_parallel.txt") + " " + out2.string()) == 0);
  for (const char* name : {"frame_000.pgm", "frame_001.pgm", "depth_000.raw", "depth_001.raw", "poses.txt",
                           "intrinsics.txt", "corr_000_001.txt", "corr_001_000.txt"}) {
    CAPTURE(name);
    REQUIRE(fs::exists(out1 / name));
    CHECK(read_file(out1 / name) == read_file(out2 / name));
  }
}

TEST_CASE("gen-scene with a missing spec exits 2") {
  CHECK(run_cli("gen-scene /tmp/no_such_scene_file.txt /tmp/altsfm_cli/nowhere") == 2);
}

TEST_CASE("unknown flags and missing arguments exit 2") {
  CHECK(run_cli("gen-scene") == 2);
  CHECK(run_cli("train --bogus-flag x y") == 2);
  CHECK(run_cli("no-such-command") == 2);
}

TEST_CASE("train writes loss, metrics, depth rasters, poses; deterministic given seed") {
  const fs::path scene_dir = fresh_dir("train_scene");
  REQUIRE(run_cli("gen-scene " + tiny_scene_file().string() + " " + scene_dir.string()) == 0);

  const fs::path out1 = fresh_dir("train_out1");
  const fs::path out2 = fresh_dir("train_out2");
  const std::string flags = " --steps 6 --lr 0.01 --seed 9";
  REQUIRE(run_cli("train " + scene_dir.string() + " " + out1.string() + flags) == 0);
  REQUIRE(run_cli("train " + scene_dir.string() + " " + out2.string() + flags) == 0);

  for (const char* name : {"loss.csv", "metrics.csv", "poses_pred.txt", "depth_pred_000.raw",
                           "depth_pred_000.ppm", "config_used.txt"}) {
    CAPTURE(name);
    CHECK(fs::exists(out1 / name));
  }
  CHECK(read_file(out1 / "loss.csv") == read_file(out2 / "loss.csv"));

  const std::string metrics = read_file(out1 / "metrics.csv");
  CHECK(metrics.find("depth,0,") != std::string::npos);
  CHECK(metrics.find("pose,0,") != std::string::npos);
  const std::string loss = read_file(out1 / "loss.csv");
  CHECK(loss.find("step,L_ph,L_s,L_3d,L_ep,L_lr,L_sub") == 0);
}

TEST_CASE("joint and alternating modes produce distinct loss logs from the same seed") {
  const fs::path scene_dir = fresh_dir("mode_scene");
  REQUIRE(run_cli("gen-scene " + tiny_scene_file().string() + " " + scene_dir.string()) == 0);
  const fs::path out_a = fresh_dir("mode_alt");
  const fs::path out_j = fresh_dir("mode_joint");
  REQUIRE(run_cli("train " + scene_dir.string() + " " + out_a.string() +
                  " --steps 5 --lr 0.01 --seed 3 --mode alternating") == 0);
  REQUIRE(run_cli("train " + scene_dir.string() + " " + out_j.string() +
                  " --steps 5 --lr 0.01 --seed 3 --mode joint") == 0);
  CHECK(read_file(out_a / "loss.csv") != read_file(out_j / "loss.csv"));
}

TEST_CASE("grad-check passes, reports each term once, and fails on a corrupted gradient") {
  REQUIRE(run_cli("grad-check --states 1 --coords 20 --seed 4") == 0);
  const std::string out = cli_output();
  for (const char* term : {"L_ph", "L_s", "L_3d", "L_ep", "L_lr", "L_sub"}) {
    CAPTURE(term);
    const std::string padded = std::string(term) + " ";
    size_t first = out.find(padded);
    REQUIRE(first != std::string::npos);
    CHECK(out.find(padded, first + 1) == std::string::npos);  // exactly once
  }
  CHECK(run_cli("grad-check --states 1 --coords 20 --seed 4 --corrupt-term L_3d") == 3);
}

TEST_CASE("icp-demo registers identical and transformed clouds") {
  const fs::path dir = fresh_dir("icp");
  const fs::path a = dir / "a.txt";
  {
    std::ofstream out(a);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 120; ++i)
      out << (rng() % 1000) * 0.01 << " " << (rng() % 1000) * 0.01 << " " << (rng() % 1000) * 0.01 + 1.0
          << "\n";
  }
  REQUIRE(run_cli("icp-demo " + a.string() + " " + a.string()) == 0);
  std::string out = cli_output();
  CHECK(out.find("converged=1") != std::string::npos);
  {
    std::istringstream ss(out.substr(out.find('\n') + 1));
    double r00, r01, r02, t0;
    ss >> r00 >> r01 >> r02 >> t0;
    CHECK(r00 == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r01 == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(t0 == doctest::Approx(0.0).epsilon(1e-9));
  }

  // known transform: rotate/translate the cloud and recover it
  const fs::path b = dir / "b.txt";
  {
    std::ifstream in(a);
    std::ofstream outf(b);
    double x, y, z;
    const double c = std::cos(0.05), s = std::sin(0.05);
    while (in >> x >> y >> z) outf << c * x - s * y + 0.1 << " " << s * x + c * y - 0.05 << " " << z + 0.2 << "\n";
  }
  REQUIRE(run_cli("icp-demo " + a.string() + " " + b.string() + " --max-iters 30") == 0);
  out = cli_output();
  std::istringstream ss(out.substr(out.find('\n') + 1));
  double r00, r01, r02, t0;
  ss >> r00 >> r01 >> r02 >> t0;
  CHECK(r00 == doctest::Approx(std::cos(0.05)).epsilon(1e-4));
  CHECK(r01 == doctest::Approx(-std::sin(0.05)).epsilon(1e-3));
  CHECK(t0 == doctest::Approx(0.1).epsilon(1e-3));
}

TEST_CASE("icp-demo with a malformed file exits 2") {
  const fs::path bad = fresh_dir("icp_bad") / "bad.txt";
  {
    std::ofstream out(bad);
    out << "1.0 2.0\n";
  }
  CHECK(run_cli("icp-demo " + bad.string() + " " + bad.string()) == 2);
}

TEST_CASE("ablate emits the nine-row comparison grid") {
  const fs::path scene_dir = fresh_dir("ablate_scene");
  REQUIRE(run_cli("gen-scene " + tiny_scene_file().string() + " " + scene_dir.string()) == 0);
  const fs::path out = fresh_dir("ablate_out");
  REQUIRE(run_cli("ablate " + scene_dir.string() + " " + out.string() + " --steps 3 --seed 2") == 0);
  const std::string csv = read_file(out / "ablation.csv");
  int rows = 0;
  for (char c : csv) rows += c == '\n';
  CHECK(rows == 10);  // header + 9 configurations
  CHECK(csv.find("baseline,") != std::string::npos);
  CHECK(csv.find("all+alt,") != std::string::npos);
  // every configuration finished with finite metrics
  CHECK(csv.find("nan") == std::string::npos);
  CHECK(csv.find("inf") == std::string::npos);
}

TEST_CASE("regenerated reference suite matches the committed fixture hashes") {
  std::ifstream hashes(std::string(ALTSFM_SOURCE_DIR) + "/scenes/fixture_hashes.txt");
  REQUIRE(hashes.good());
  std::string scene, file;
  uint64_t expect;
  int checked = 0;
  fs::path out;
  std::string generated;
  while (hashes >> scene >> file >> std::hex >> expect >> std::dec) {
    if (scene != generated) {
      out = fresh_dir("fixture_" + scene);
      REQUIRE(run_cli("gen-scene " + scene_path((scene + ".txt").c_str()) + " " + out.string()) == 0);
      generated = scene;
    }
    const std::string bytes = read_file(out / file);
    // FNV-1a 64-bit
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 1099511628211ull;
    }
    CAPTURE(scene);
    CAPTURE(file);
    CHECK(h == expect);
    ++checked;
  }
  CHECK(checked >= 12);
}
