#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "ascm/commands.hpp"
#include "ascm/io.hpp"
#include "ascm/rng.hpp"

using namespace ascm;
namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("ascm_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

struct Run {
  int status;
  std::string output;
};

Run run_cli(const std::string& args) {
  const std::string cmd = std::string(ASCM_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

RunConfig small_train_config(const Scratch& s) {
  RunConfig c;
  c.set("width", "4");
  c.set("negatives", "20");
  c.set("window", "3");
  c.set("max_flow", "2");
  c.set("synth_height", "16");
  c.set("synth_width", "16");
  c.set("batch", "4");
  c.set("train_pairs", "2");
  c.set("val_pairs", "1");
  c.set("val_triplets", "8");
  c.set("out", s / "run");
  return c;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults, file values and overrides") {
    RunConfig c;
    CHECK(c.get_int("negatives") == 200);
    CHECK(c.get_doubles("scales") == std::vector<double>{1, 2});
    c.merge_text("# comment\nnegatives = 50   # trailing\n\nscales = 0.5, 1, 1.5, 2\n", "test");
    CHECK(c.get_int("negatives") == 50);
    CHECK(c.model_config().scales.size() == 4);
    c.set("negatives", "30");
    CHECK(c.train_config().negatives == 30);
  }

  TEST_CASE("unknown keys are errors") {
    RunConfig c;
    CHECK_THROWS_WITH_AS(c.merge_text("negatvies = 3\n", "f.cfg"), doctest::Contains("unknown key 'negatvies'"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(c.merge_text("ok\n", "f.cfg"), doctest::Contains("f.cfg:1"), ConfigError);
    CHECK_THROWS_AS(c.set("nope", "1"), ConfigError);
  }

  TEST_CASE("bad values name their key") {
    RunConfig c;
    c.set("lr", "fast");
    CHECK_THROWS_WITH_AS(c.train_config(), doctest::Contains("'lr'"), ConfigError);
    RunConfig d;
    d.set("fusion", "max");
    CHECK_THROWS_AS(d.model_config(), ConfigError);
  }

  TEST_CASE("window forms") {
    RunConfig c;
    c.set("window", "4");
    CHECK(c.window().area() == 81);
    c.set("window", "2,5");
    CHECK(c.window().rows() == 5);
    CHECK(c.window().cols() == 11);
    c.set("window", "-210,200,-210,200");
    CHECK(c.window().y_min == -210);
    CHECK(c.window().y_max == 200);
    c.set("window", "1,2,3");
    CHECK_THROWS_AS(c.window(), ConfigError);
  }
}

TEST_SUITE("commands") {
  TEST_CASE("synthetic ground truth evaluates to zero error") {
    Scratch s;
    RunConfig c;
    c.set("out", s / "pair");
    std::ostringstream log;
    cmd_synth(c, log);
    RunConfig e;
    e.set("pred", s / "pair/flow.flo");
    e.set("gt", s / "pair/flow.flo");
    std::ostringstream csv;
    cmd_eval_flow(e, csv);
    std::istringstream in(csv.str());
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "epe_all,n_all,epe_masked,n_masked");
    CHECK(row.rfind("0,", 0) == 0);
  }

  TEST_CASE("radius zero on identical images gives zero flow") {
    Scratch s;
    RunConfig c;
    c.set("width", "4");
    save_checkpoint(s / "m.ascm", ModelParams<float>::init(c.model_config(), 1));
    Image8 img(20, 16, 1);
    Rng rng(2);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    write_pnm(s / "a.pgm", img);
    c.set("checkpoint", s / "m.ascm");
    c.set("source", s / "a.pgm");
    c.set("target", s / "a.pgm");
    c.set("window", "0");
    c.set("out", s / "f.flo");
    std::ostringstream log;
    cmd_flow(c, log);
    CHECK(read_flo(s / "f.flo") == FlowField::constant(16, 20, 0, 0));
    CHECK(read_flo(s / "f_filtered.flo") == FlowField::constant(16, 20, 0, 0));
  }

  TEST_CASE("zero iterations writes the initialization") {
    Scratch s;
    RunConfig c = small_train_config(s);
    c.set("iterations", "0");
    std::ostringstream log;
    cmd_train(c, log);
    const auto ck = load_checkpoint(s / "run/model.ascm");
    const auto init = ModelParams<float>::init(c.model_config(), mix_seed(1, 0));
    CHECK(encode_checkpoint(ck.model) == encode_checkpoint(init));
  }

  TEST_CASE("training writes a loss log and resumes") {
    Scratch s;
    RunConfig c = small_train_config(s);
    c.set("iterations", "2");
    c.set("val_interval", "2");
    std::ostringstream log;
    cmd_train(c, log);
    std::ifstream csv(s / "run/loss.csv");
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(csv, line)) lines.push_back(line);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "iteration,lr,loss,val_top1");
    CHECK(lines[2].back() != ',');

    RunConfig r = c;
    r.set("checkpoint", s / "run/model.ascm");
    r.set("iterations", "3");
    r.set("out", s / "resumed");
    cmd_train(r, log);
    CHECK(load_checkpoint(s / "resumed/model.ascm").optim->iteration == 3);
  }

  TEST_CASE("pck from keypoint files") {
    Scratch s;
    std::ofstream(s / "kp.csv") << "src_x,src_y,gt_x,gt_y,visible,src_w,src_h,tgt_w,tgt_h\n"
                                << "1,1,10,10,1,30,40,30,40\n"
                                << "2,2,20,20,1,30,40,30,40\n"
                                << "3,3,5,5,0,30,40,30,40\n";
    std::ofstream(s / "pred.csv") << "pred_x,pred_y\n10,14\n20,26\n0,0\n";
    RunConfig c;
    c.set("keypoints", s / "kp.csv");
    c.set("pred", s / "pred.csv");
    c.set("alphas", "0.05,0.1,0.2");
    std::ostringstream out;
    cmd_eval_pck(c, out);
    CHECK(out.str() == "alpha,pck,visible\n0.05,0,2\n0.1,0.5,2\n0.2,1,2\n");
  }

  TEST_CASE("match prints the window scores") {
    Scratch s;
    RunConfig c;
    c.set("width", "4");
    save_checkpoint(s / "m.ascm", ModelParams<float>::init(c.model_config(), 3));
    Image8 img(12, 12, 1);
    Rng rng(4);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    write_pnm(s / "a.pgm", img);
    c.set("checkpoint", s / "m.ascm");
    c.set("source", s / "a.pgm");
    c.set("target", s / "a.pgm");
    c.set("window", "1");
    c.set("pixel", "0,5");
    std::ostringstream out;
    cmd_match(c, out);
    std::istringstream in(out.str());
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 1 + 6 + 1);
    CHECK(out.str().find("best,") != std::string::npos);
  }

  TEST_CASE("attention export for a checkpoint") {
    Scratch s;
    RunConfig c;
    c.set("width", "4");
    save_checkpoint(s / "m.ascm", ModelParams<float>::init(c.model_config(), 5));
    write_pnm(s / "a.pgm", Image8(10, 9, 1, 90));
    c.set("checkpoint", s / "m.ascm");
    c.set("source", s / "a.pgm");
    c.set("out", s / "att");
    std::ostringstream log;
    cmd_attention(c, log);
    CHECK(fs::exists(s / "att_scale0.pgm"));
    CHECK(fs::exists(s / "att_scale1.pgm"));
    CHECK(fs::exists(s / "att_argmax.ppm"));
  }
}

TEST_SUITE("executable") {
  TEST_CASE("success and composability through files") {
    Scratch s;
    auto r = run_cli("synth --seed 3 --out " + (s / "p"));
    CHECK(r.status == 0);
    r = run_cli("eval-flow --pred " + (s / "p/flow.flo") + " --gt " + (s / "p/flow.flo"));
    CHECK(r.status == 0);
    CHECK(r.output.find("\n0,") != std::string::npos);
  }

  TEST_CASE("failures print one machine-readable line") {
    Scratch s;
    for (const std::string& args : std::vector<std::string>{"eval-flow --pred /nonexistent.flo --gt /nonexistent.flo",
                                   "synth --bogus 1",
                                   "synth --max_flow 9 --out " + (s / "x"),
                                   "flow --checkpoint " + (s / "missing.ascm")}) {
      const auto r = run_cli(args);
      CHECK(r.status != 0);
      CHECK(r.output.rfind("error: ", 0) == 0);
      CHECK(std::count(r.output.begin(), r.output.end(), '\n') == 1);
    }
    std::ofstream(s / "bad.cfg") << "negatives = 10\ntypo_key = 1\n";
    const auto r = run_cli("train --config " + (s / "bad.cfg"));
    CHECK(r.status == 2);
    CHECK(r.output.find("typo_key") != std::string::npos);
  }

  TEST_CASE("flags override the config file") {
    Scratch s;
    std::ofstream(s / "c.cfg") << "max_flow = 9\n";
    CHECK(run_cli("synth --config " + (s / "c.cfg") + " --out " + (s / "p")).status != 0);
    CHECK(run_cli("synth --config " + (s / "c.cfg") + " --max_flow 2 --out " + (s / "p")).status == 0);
  }

  TEST_CASE("corrupted checkpoint is rejected") {
    Scratch s;
    RunConfig c;
    c.set("width", "4");
    auto bytes = encode_checkpoint(ModelParams<float>::init(c.model_config(), 1));
    bytes[40] ^= 1;
    write_file(s / "bad.ascm", bytes);
    write_pnm(s / "a.pgm", Image8(8, 8, 1, 3));
    const auto r = run_cli("attention --checkpoint " + (s / "bad.ascm") + " --source " + (s / "a.pgm") +
                           " --out " + (s / "att"));
    CHECK(r.status == 3);
    CHECK(r.output.find("checksum") != std::string::npos);
  }
}
