#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dip/checkpoint.hpp"
#include "dip/run_config.hpp"
#include "dip/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dip;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Workspace {
 public:
  Workspace() {
    root_ = fs::temp_directory_path() / ("dip_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  ~Workspace() { fs::remove_all(root_); }
  fs::path path(const std::string& name) const { return root_ / name; }

  fs::path config(json j, const std::string& name = "cfg.json") const {
    const fs::path p = path(name);
    std::ofstream(p) << j.dump(2);
    return p;
  }

  Result run(const std::string& args) const {
    const fs::path out = path("stdout.txt"), err = path("stderr.txt");
    const std::string cmd = std::string("\"") + DIP_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

 private:
  fs::path root_;
  static inline int counter_ = 0;
};

// Small model and dataset so each subcommand runs in well under a second.
json tiny(const Workspace& ws) {
  return {{"frame_size", 16},   {"patch_size", 8},      {"video_length", 8},      {"region_row0", 4},
          {"region_col0", 4},   {"region_rows", 8},     {"region_cols", 8},       {"embed_dim", 8},
          {"heads", 2},         {"units", 1},           {"spatial_layers", 1},    {"dica_layers", 1},
          {"k_n", 3},           {"n_train_pairs", 3},   {"n_heldout_pairs", 2},   {"eval_clips_per_video", 2},
          {"steps", 4},         {"checkpoint_every", 0}, {"data_dir", ws.path("data").string()},
          {"checkpoint_out", ws.path("model.ckpt").string()}, {"out_dir", ws.path("inspect").string()}};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return files;
}

std::vector<std::vector<double>> read_csv(const fs::path& p) {
  std::vector<std::vector<double>> rows;
  std::ifstream is(p);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<double> r;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) r.push_back(std::stod(cell));
    rows.push_back(r);
  }
  return rows;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string l;
  while (std::getline(ss, l))
    if (!l.empty()) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("usage errors") {
  Workspace ws;
  CHECK(ws.run("").code == 1);
  CHECK(ws.run("frobnicate").code == 1);
  CHECK(ws.run("synth --config " + ws.path("missing.json").string()).code == 1);
  CHECK(ws.run("--help").code == 0);
  const auto bad_key = ws.config({{"no_such_key", 1}});
  const auto r = ws.run("synth --config " + bad_key.string());
  CHECK(r.code == 1);
  CHECK(r.err.find("no_such_key") != std::string::npos);
}

TEST_CASE("synth") {
  Workspace ws;
  SUBCASE("default size") {
    const auto r = ws.run("synth --out " + ws.path("full").string());
    REQUIRE(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j["train_pairs"] == 64);
    CHECK(j["entries"] == 128);
    const json manifest = json::parse(slurp(ws.path("full") / "manifest.json"));
    CHECK(manifest["entries"].size() == 128);
    CHECK(manifest["heldout"].size() == 64);
    CHECK(manifest["config"]["fake_jitter_strength"] == 3.0);
  }
  SUBCASE("same seed gives identical files") {
    const auto cfg = ws.config(tiny(ws));
    REQUIRE(ws.run("synth --config " + cfg.string()).code == 0);
    const auto first = snapshot(ws.path("data"));
    fs::remove_all(ws.path("data"));
    REQUIRE(ws.run("synth --config " + cfg.string()).code == 0);
    CHECK(snapshot(ws.path("data")) == first);
    REQUIRE(ws.run("synth --config " + cfg.string() + " --seed 99").code == 0);
    CHECK(snapshot(ws.path("data")) != first);
  }
  SUBCASE("invalid region") {
    json j = tiny(ws);
    j["region_row0"] = 12;
    const auto r = ws.run("synth --config " + ws.config(j).string());
    CHECK(r.code == 1);
    CHECK(r.err.find("fake_region") != std::string::npos);
  }
}

TEST_CASE("train, resume, eval, inspect") {
  Workspace ws;
  json base = tiny(ws);
  REQUIRE(ws.run("synth --config " + ws.config(base).string()).code == 0);

  SUBCASE("missing data directory") {
    json j = base;
    j["data_dir"] = ws.path("nowhere").string();
    CHECK(ws.run("train --config " + ws.config(j).string()).code != 0);
  }
  SUBCASE("zero steps keep the initialization") {
    json j = base;
    j["steps"] = 0;
    const auto r = ws.run("train --config " + ws.config(j).string());
    REQUIRE(r.code == 0);
    CHECK(r.out.empty());
    const RunConfig rc = parse_run_config(j.dump());
    const auto loaded = train::load_state(ws.path("model.ckpt"), rc.model_config());
    const auto init = train::init_state(rc.model_config(), rc.init_seed());
    CHECK(loaded.step == 0);
    for (std::size_t i = 0; i < init.student.size(); ++i) {
      CHECK(loaded.student[i].value == init.student[i].value);
      CHECK(loaded.teacher[i].value == init.teacher[i].value);
    }
  }
  SUBCASE("resume matches an uninterrupted run") {
    json straight = base;
    straight["steps"] = 100;
    straight["checkpoint_out"] = ws.path("straight.ckpt").string();
    straight["metrics_out"] = ws.path("straight.jsonl").string();
    const auto a = ws.run("train --config " + ws.config(straight, "a.json").string());
    REQUIRE(a.code == 0);
    const auto full = lines(a.out);
    REQUIRE(full.size() == 100);
    CHECK(lines(slurp(ws.path("straight.jsonl"))) == full);

    json first = base;
    first["steps"] = 50;
    first["checkpoint_out"] = ws.path("half.ckpt").string();
    REQUIRE(ws.run("train --config " + ws.config(first, "b.json").string()).code == 0);
    json second = base;
    second["steps"] = 100;
    second["checkpoint_in"] = ws.path("half.ckpt").string();
    second["checkpoint_out"] = ws.path("resumed.ckpt").string();
    const auto c = ws.run("train --config " + ws.config(second, "c.json").string());
    REQUIRE(c.code == 0);
    const auto tail = lines(c.out);
    REQUIRE(tail.size() == 50);
    CHECK(tail.back() == full.back());
    CHECK(json::parse(tail.back())["step"] == 100);
    CHECK(dip::read_records(ws.path("resumed.ckpt")) == dip::read_records(ws.path("straight.ckpt")));

    const auto e = ws.run("eval --config " + ws.config(straight, "a.json").string() + " --out " +
                          ws.path("report.json").string());
    REQUIRE(e.code == 0);
    const json report = json::parse(e.out);
    CHECK(report["n_videos"] == 4);
    CHECK(report["auc"].get<double>() >= 0.0);
    CHECK(json::parse(slurp(ws.path("report.json"))) == report);
  }
  SUBCASE("inspect writes a symmetric Dt") {
    REQUIRE(ws.run("train --config " + ws.config(base).string()).code == 0);
    const auto r = ws.run("inspect --config " + ws.config(base).string());
    REQUIRE(r.code == 0);
    const auto dt = read_csv(ws.path("inspect") / "Dt.csv");
    REQUIRE(dt.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      REQUIRE(dt[i].size() == 4);
      CHECK(dt[i][i] == 0.0);
      for (std::size_t j = 0; j < 4; ++j) CHECK(dt[i][j] == dt[j][i]);
    }
    const auto hv = read_csv(ws.path("inspect") / "Dt_hv.csv");
    const auto vh = read_csv(ws.path("inspect") / "Dt_vh.csv");
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        CHECK(hv[i][j] == dt[i][2 + j]);
        CHECK(hv[i][j] == vh[j][i]);
      }
    const auto p = read_csv(ws.path("inspect") / "P.csv");
    for (const auto& rrow : p) {
      double s = 0.0;
      for (double x : rrow) s += x;
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
    json j = base;
    j["inspect_video"] = 99;
    CHECK(ws.run("inspect --config " + ws.config(j).string()).code == 1);
  }
  SUBCASE("numerical failure exits with 2") {
    json j = base;
    j["lr"] = 1e300;
    j["steps"] = 3;
    const auto r = ws.run("train --config " + ws.config(j).string());
    CHECK(r.code == 2);
  }
}

TEST_CASE("gradcheck subcommand") {
  Workspace ws;
  json j = tiny(ws);
  j["gradcheck_max_elements"] = 4;
  const auto r = ws.run("gradcheck --config " + ws.config(j).string());
  CAPTURE(r.out);
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  const json out = json::parse(r.out);
  CHECK(out["pass"] == true);
  CHECK(out["max_rel_error"].get<double>() <= 1e-4);
  CHECK(out.contains("rel_error_idm.mu"));
  CHECK(out.contains("rel_error_dica.tau1"));
  CHECK(out.contains("rel_error_da.tau2"));

  j["gradcheck_tolerance"] = 1e-30;
  CHECK(ws.run("gradcheck --config " + ws.config(j).string()).code == 2);
}
