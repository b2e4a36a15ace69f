// End-to-end checks of the command-line tool: exit codes, output schemas,
// regeneration stability. The binary path arrives via CONSEG_CLI.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

TEST_SUITE_BEGIN("cli");

namespace {

std::string cli_path() {
  const char* p = std::getenv("CONSEG_CLI");
  REQUIRE_MESSAGE(p != nullptr, "CONSEG_CLI must point at the built binary");
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = "\"" + cli_path() + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / "conseg_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
      std::ofstream out(dir / "genspec.json");
      out << R"({"seed": 11, "things": 4, "stuffs": 2, "split": [4, 2],
                 "images_per_step": 10, "val_images": 6, "h": 8, "w": 8, "d": 4,
                 "noise_sigma": 0.25, "frequency_exponent": 0.5, "distractor_prob": 0.5})";
    }
    {
      std::ofstream out(dir / "config.json");
      out << R"({"task_file": "data/task.json", "data_dir": "data", "split": "4-2",
                 "replay_capacity": 4, "learning_rate_first": 0.1,
                 "learning_rate_incremental": 0.05, "iterations_per_class": 4,
                 "batch_size": 4, "seed": 2,
                 "model": {"d": 4, "n_queries": 8, "layers": 2, "init_scale": 0.1},
                 "pseudo_label_confidence": 0.5,
                 "ablation": {"distill": "pcbd", "replay": "cpm", "bag": true,
                              "basis": "segment", "pseudo_labels": true}})";
    }
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string q(const fs::path& p) const { return "\"" + p.string() + "\""; }
};

std::vector<std::string> csv_lines(const fs::path& p) {
  std::vector<std::string> lines;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

TEST_CASE("gen: missing spec exits 2, valid spec writes stable files") {
  Workspace ws;
  CHECK(run_cli("gen --spec " + ws.q(ws.dir / "absent.json") + " --out " +
                ws.q(ws.dir / "d")) == 2);

  REQUIRE(run_cli("gen --spec " + ws.q(ws.dir / "genspec.json") + " --out " +
                  ws.q(ws.dir / "data")) == 0);
  for (const char* f : {"task.json", "step_1.jsonl", "step_2.jsonl", "val.jsonl"}) {
    CHECK(fs::exists(ws.dir / "data" / f));
  }
  REQUIRE(run_cli("gen --spec " + ws.q(ws.dir / "genspec.json") + " --out " +
                  ws.q(ws.dir / "data_again")) == 0);
  for (const char* f : {"task.json", "step_1.jsonl", "step_2.jsonl", "val.jsonl"}) {
    CHECK(slurp(ws.dir / "data" / f) == slurp(ws.dir / "data_again" / f));
  }
}

TEST_CASE("run: dry-run validates without writing, bad configs exit 2") {
  Workspace ws;
  REQUIRE(run_cli("gen --spec " + ws.q(ws.dir / "genspec.json") + " --out " +
                  ws.q(ws.dir / "data")) == 0);
  CHECK(run_cli("run --config " + ws.q(ws.dir / "config.json") + " --out " +
                ws.q(ws.dir / "out") + " --dry-run") == 0);
  CHECK_FALSE(fs::exists(ws.dir / "out"));

  {
    std::ofstream out(ws.dir / "bad.json");
    out << R"({"task_file": "data/task.json", "data_dir": "data", "split": "4-2",
               "seed": 1, "unknown_knob": true})";
  }
  CHECK(run_cli("run --config " + ws.q(ws.dir / "bad.json") + " --out " +
                ws.q(ws.dir / "out_bad")) == 2);

  {
    std::ofstream out(ws.dir / "bad_split.json");
    out << R"({"task_file": "data/task.json", "data_dir": "data", "split": "5-1", "seed": 1})";
  }
  CHECK(run_cli("run --config " + ws.q(ws.dir / "bad_split.json") + " --out " +
                ws.q(ws.dir / "out_bad2")) == 2);
}

TEST_CASE("run: outputs parse and follow their schemas") {
  Workspace ws;
  REQUIRE(run_cli("gen --spec " + ws.q(ws.dir / "genspec.json") + " --out " +
                  ws.q(ws.dir / "data")) == 0);
  REQUIRE(run_cli("run --config " + ws.q(ws.dir / "config.json") + " --out " +
                  ws.q(ws.dir / "out")) == 0);

  const auto metrics = nlohmann::json::parse(slurp(ws.dir / "out" / "metrics.json"));
  REQUIRE(metrics.at("steps").size() == 2);
  CHECK(metrics.at("steps")[0].at("inc").is_null());
  CHECK(metrics.at("steps")[1].at("inc").is_number());
  CHECK(metrics.at("final").at("step") == 2);

  const auto manifest = nlohmann::json::parse(slurp(ws.dir / "out" / "manifest.json"));
  CHECK(manifest.at("config_hash").get<std::string>().size() == 16);
  CHECK(manifest.at("seed") == 2);
  CHECK(manifest.contains("version"));

  const auto summary = csv_lines(ws.dir / "out" / "summary.csv");
  REQUIRE(summary.size() == 3);
  CHECK(summary[0] == "step,base,inc,all");
  CHECK(summary[1].substr(0, 2) == "1,");

  const auto per_class = csv_lines(ws.dir / "out" / "per_class.csv");
  CHECK(per_class[0] == "step,class_id,pq,miou");
  CHECK(per_class.size() > 2);
}

TEST_CASE("run: numeric blow-ups exit 3") {
  Workspace ws;
  REQUIRE(run_cli("gen --spec " + ws.q(ws.dir / "genspec.json") + " --out " +
                  ws.q(ws.dir / "data")) == 0);
  {
    std::ofstream out(ws.dir / "explode.json");
    out << R"({"task_file": "data/task.json", "data_dir": "data", "split": "4-2",
               "replay_capacity": 4, "learning_rate_first": 1e120,
               "learning_rate_incremental": 1e120, "iterations_per_class": 10,
               "batch_size": 4, "seed": 2,
               "model": {"d": 4, "n_queries": 8, "layers": 2, "init_scale": 0.1}})";
  }
  CHECK(run_cli("run --config " + ws.q(ws.dir / "explode.json") + " --out " +
                ws.q(ws.dir / "out_explode")) == 3);
}

TEST_CASE("ablate: one row per cell per seed plus averaged rows") {
  Workspace ws;
  REQUIRE(run_cli("gen --spec " + ws.q(ws.dir / "genspec.json") + " --out " +
                  ws.q(ws.dir / "data")) == 0);
  REQUIRE(run_cli("ablate --config " + ws.q(ws.dir / "config.json") + " --out " +
                  ws.q(ws.dir / "abl") + " --seeds 2") == 0);
  const auto lines = csv_lines(ws.dir / "abl" / "ablation_summary.csv");
  CHECK(lines[0] == "cell,distill,replay,bag,basis,pseudo_labels,seed,step,base,inc,all,avg");
  // 6 cells x 2 seeds + 6 averaged rows
  CHECK(lines.size() == 1 + 12 + 6);
  std::size_t avg_rows = 0;
  for (const std::string& line : lines) {
    if (line.find(",avg,") != std::string::npos) ++avg_rows;
  }
  CHECK(avg_rows == 6);
}

TEST_SUITE_END();
