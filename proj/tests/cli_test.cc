// Copyright 2026 The CMI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cmi/checkpoint.h"
#include "cmi/cli.h"
#include "cmi/data.h"
#include "cmi/error.h"
#include "doctest.h"

namespace cmi {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome Run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = RunCli(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string Slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Scratch {
 public:
  explicit Scratch(const std::string& name)
      : dir_(fs::temp_directory_path() / ("cmi_cli_test_" + name)) {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Scratch() { fs::remove_all(dir_); }
  fs::path operator/(const std::string& leaf) const { return dir_ / leaf; }
  std::string str(const std::string& leaf) const { return (dir_ / leaf).string(); }

 private:
  fs::path dir_;
};

// Small planted dataset plus a config that trains in well under a second.
void Prepare(const Scratch& s) {
  const auto r = Run({"synth", "--out", s.str("data"), "--users", "40",
                      "--items", "120", "--interactions-per-user", "30",
                      "--seed", "5"});
  REQUIRE(r.code == 0);
  std::ofstream cfg(s / "run.cfg");
  cfg << "# tiny\n"
      << "interactions = " << s.str("data/interactions.csv") << "\n"
      << "output_dir = " << s.str("run") << "\n"
      << "m = 2\nd = 4\nf = 10\nbatch_size = 32\n"
      << "max_epochs = 2\ninstances_per_user = 3\n";
}

TEST_CASE("config parses keys, comments and blank lines") {
  std::istringstream in(
      "# comment\n\n m = 3 \nepsilon=0.5  # trailing\nuse_general_interest = "
      "false\ndelimiter = tab\nrank_mode = multi_cosine\n");
  const auto c = ParseRunConfig(in);
  CHECK(c.hyper.num_interests == 3);
  CHECK(c.hyper.epsilon == 0.5);
  CHECK_FALSE(c.hyper.use_general_interest);
  CHECK(c.delimiter == '\t');
  CHECK(c.rank_mode == RankMode::kMultiCosine);
  CHECK(c.hyper.dim == 64);
}

TEST_CASE("config errors carry the line number") {
  std::istringstream unknown("m = 2\nbogus = 1\n");
  try {
    ParseRunConfig(unknown);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("bogus") != std::string::npos);
  }
  std::istringstream bad("d = 2.5\n");
  CHECK_THROWS_AS(ParseRunConfig(bad), ParseError);
  std::istringstream missing_eq("m 4\n");
  CHECK_THROWS_AS(ParseRunConfig(missing_eq), ParseError);
  RunConfig c;
  CHECK_THROWS_AS(ApplySetting(c, "use_general_interest", "maybe"),
                  ConfigError);
  CHECK_THROWS_AS(ApplySetting(c, "delimiter", "ab"), ConfigError);
  CHECK_THROWS_AS(ApplySetting(c, "rank_mode", "nearest"), ConfigError);
}

TEST_CASE("defaults match the published settings") {
  const RunConfig c;
  CHECK(c.hyper.epsilon == 0.1);
  CHECK(c.hyper.tau == 0.1);
  CHECK(c.hyper.lambda_cl == 0.01);
  CHECK(c.hyper.lambda_orth == 10.0);
  CHECK(c.hyper.sample_ratio == 0.5);
  CHECK(c.hyper.dim == 64);
  CHECK(c.hyper.batch_size == 1024);
  CHECK(c.hyper.num_interests == 8);
  CHECK(c.hyper.max_length == 100);
  CHECK(c.hyper.num_negatives == 1);
  CHECK(c.hyper.patience == 5);
}

TEST_CASE("config round trip on the default config") {
  const RunConfig c;
  std::ostringstream out;
  WriteRunConfig(out, c);
  std::istringstream in(out.str());
  CHECK(ParseRunConfig(in) == c);
}

TEST_CASE("config round trip on random configs") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> small(1, 200);
  for (int trial = 0; trial < 50; ++trial) {
    RunConfig c;
    c.hyper.num_interests = small(rng);
    c.hyper.dim = small(rng);
    c.hyper.epsilon = unit(rng) * 3 + 1e-9;
    c.hyper.tau = unit(rng) / 7 + 1e-3;
    c.hyper.sample_ratio = 0.01 + 0.99 * unit(rng);
    c.hyper.lambda_cl = unit(rng) * 1e-3;
    c.hyper.lambda_orth = unit(rng) * 100;
    c.hyper.learning_rate = unit(rng) * 1e-2 + 1e-12;
    c.hyper.use_general_interest = trial % 2 == 0;
    c.delimiter = trial % 3 == 0 ? '\t' : ';';
    c.rank_mode = trial % 2 ? RankMode::kMultiCosine : RankMode::kCombined;
    c.seed = rng();
    c.threads = small(rng);
    c.interactions = "dir with space/log_" + std::to_string(trial) + ".csv";
    c.day_length = small(rng) * 1000;
    c.Validate(false);
    std::ostringstream out;
    WriteRunConfig(out, c);
    std::istringstream in(out.str());
    CHECK(ParseRunConfig(in) == c);
  }
}

TEST_CASE("usage errors exit 2") {
  CHECK(Run({}).code == 2);
  CHECK(Run({"fly"}).code == 2);
  CHECK(Run({"train", "--set", "m"}).code == 2);
  CHECK(Run({"train", "--set", "nosuch=1"}).code == 2);
  CHECK(Run({"train", "--config", "/nonexistent/run.cfg"}).code == 2);
  CHECK(Run({"--help"}).code == 0);
}

TEST_CASE("train reports a missing interactions file by path") {
  const auto r = Run({"train", "--set", "interactions=/no/such/file.csv"});
  CHECK(r.code == 2);
  CHECK(r.err.find("/no/such/file.csv") != std::string::npos);
  CHECK(Run({"train"}).code == 2);
}

TEST_CASE("train writes a checkpoint and an epoch log") {
  Scratch s("train");
  Prepare(s);
  const auto r = Run({"train", "--config", s.str("run.cfg"), "--threads", "1"});
  REQUIRE(r.code == 0);
  CHECK(Slurp(s / "run/model.cmi").substr(0, 4) == "CMI1");
  const auto log = Slurp(s / "run/epochs.tsv");
  CHECK(log.rfind("epoch\tmain\t", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 3);
  CHECK(r.out.find("validation") != std::string::npos);
  CHECK(r.out.find("\n50\t") != std::string::npos);
}

TEST_CASE("train with the default hyperparameters") {
  Scratch s("default");
  Prepare(s);
  const auto r = Run({"train", "--set",
                      "interactions=" + s.str("data/interactions.csv"), "--set",
                      "output_dir=" + s.str("out"), "--set", "max_epochs=1",
                      "--set", "instances_per_user=2"});
  REQUIRE(r.code == 0);
  CHECK(Slurp(s / "out/model.cmi").substr(0, 4) == "CMI1");
  const auto p = LoadCheckpoint(s / "out/model.cmi");
  CHECK(p.dims().dim == 64);
  CHECK(p.dims().num_interests == 8);
}

TEST_CASE("--set overrides the config file") {
  Scratch s("override");
  Prepare(s);
  REQUIRE(Run({"train", "--config", s.str("run.cfg"), "--set", "m=3",
               "--set", "max_epochs=1"})
              .code == 0);
  CHECK(LoadCheckpoint(s / "run/model.cmi").dims().num_interests == 3);
}

TEST_CASE("train is byte reproducible with one thread") {
  Scratch s("repro");
  Prepare(s);
  const std::vector<std::string> base = {"train", "--config", s.str("run.cfg"),
                                         "--threads", "1", "--seed", "9"};
  auto args = base;
  args.insert(args.end(), {"--set", "output_dir=" + s.str("a")});
  REQUIRE(Run(args).code == 0);
  args = base;
  args.insert(args.end(), {"--set", "output_dir=" + s.str("b")});
  REQUIRE(Run(args).code == 0);
  CHECK(Slurp(s / "a/model.cmi") == Slurp(s / "b/model.cmi"));
  CHECK(Slurp(s / "a/epochs.tsv") == Slurp(s / "b/epochs.tsv"));
  args = {"train", "--config", s.str("run.cfg"), "--threads", "1", "--seed",
          "10", "--set", "output_dir=" + s.str("c")};
  REQUIRE(Run(args).code == 0);
  CHECK(Slurp(s / "a/model.cmi") != Slurp(s / "c/model.cmi"));
}

TEST_CASE("training divergence exits 3") {
  Scratch s("diverge");
  Prepare(s);
  const auto r = Run({"train", "--config", s.str("run.cfg"), "--set",
                      "lr=1e38", "--set", "max_epochs=3"});
  CHECK(r.code == 3);
  CHECK(r.err.find("non-finite") != std::string::npos);
}

TEST_CASE("eval prints metrics at 10, 20 and 50") {
  Scratch s("eval");
  Prepare(s);
  REQUIRE(Run({"train", "--config", s.str("run.cfg")}).code == 0);
  const auto a = Run({"eval", "--config", s.str("run.cfg")});
  REQUIRE(a.code == 0);
  CHECK(a.out.rfind("test\nk\trecall\thitrate\n10\t", 0) == 0);
  CHECK(a.out.find("\n20\t") != std::string::npos);
  CHECK(a.out.find("\n50\t") != std::string::npos);
  const auto b = Run({"eval", "--config", s.str("run.cfg")});
  CHECK(a.out == b.out);
  const auto v = Run({"eval", "--config", s.str("run.cfg"), "--split",
                      "validation"});
  CHECK(v.code == 0);
  CHECK(v.out.rfind("validation\n", 0) == 0);
  CHECK(Run({"eval", "--config", s.str("run.cfg"), "--split", "train"}).code ==
        2);
}

TEST_CASE("eval rejects damaged or mismatched checkpoints") {
  Scratch s("evalbad");
  Prepare(s);
  REQUIRE(Run({"train", "--config", s.str("run.cfg")}).code == 0);
  auto bytes = Slurp(s / "run/model.cmi");
  bytes[0] = 'X';
  std::ofstream(s / "bad.cmi", std::ios::binary) << bytes;
  const auto bad = Run({"eval", "--config", s.str("run.cfg"), "--checkpoint",
                        s.str("bad.cmi")});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("magic") != std::string::npos);

  SaveCheckpoint(s / "small.cmi", InitParameters<float>({7, 4, 2}, 1));
  const auto small = Run({"eval", "--config", s.str("run.cfg"),
                          "--checkpoint", s.str("small.cmi")});
  CHECK(small.code == 2);
  CHECK(small.err.find("items") != std::string::npos);
  CHECK(Run({"eval", "--config", s.str("run.cfg"), "--checkpoint",
             s.str("absent.cmi")})
            .code == 2);
}

TEST_CASE("recommend") {
  Scratch s("recommend");
  Prepare(s);
  REQUIRE(Run({"train", "--config", s.str("run.cfg")}).code == 0);
  const std::string cfg = s.str("run.cfg");

  const auto one = Run({"recommend", "--config", cfg, "--users", "3", "-k", "7"});
  REQUIRE(one.code == 0);
  CHECK(std::count(one.out.begin(), one.out.end(), '\n') == 1);
  CHECK(one.out.rfind("3\t", 0) == 0);
  CHECK(std::count(one.out.begin(), one.out.end(), ':') == 7);

  const auto deflt = Run({"recommend", "--config", cfg, "--users", "3"});
  REQUIRE(deflt.code == 0);
  CHECK(std::count(deflt.out.begin(), deflt.out.end(), ':') == 50);

  const auto mixed =
      Run({"recommend", "--config", cfg, "--users", "3,99999,4", "-k", "2"});
  CHECK(mixed.code == 0);
  CHECK(std::count(mixed.out.begin(), mixed.out.end(), '\n') == 2);
  CHECK(mixed.err.find("unknown user 99999") != std::string::npos);

  const auto none =
      Run({"recommend", "--config", cfg, "--users", "99999,abc"});
  CHECK(none.code == 1);
  CHECK(none.out.empty());

  CHECK(Run({"recommend", "--config", cfg}).code == 2);
  CHECK(Run({"recommend", "--config", cfg, "--users", "3", "-k", "0"}).code ==
        2);
}

TEST_CASE("recommend excludes items the user has seen") {
  Scratch s("seen");
  Prepare(s);
  REQUIRE(Run({"train", "--config", s.str("run.cfg")}).code == 0);
  const auto r = Run({"recommend", "--config", s.str("run.cfg"), "--users",
                      "0", "-k", "200"});
  REQUIRE(r.code == 0);
  const auto log = ParseInteractions(s / "data/interactions.csv");
  std::size_t seen = 0;
  for (const auto& rec : log.records) {
    if (log.raw_user_ids[rec.user] != 0) continue;
    const auto item = "," + std::to_string(log.raw_item_ids[rec.item]) + ":";
    CHECK(("," + r.out.substr(2)).find(item) == std::string::npos);
    ++seen;
  }
  CHECK(seen > 0);
  CHECK(r.err.find("eligible") != std::string::npos);
}

TEST_CASE("synth writes files that parse back") {
  Scratch s("synth");
  const auto r = Run({"synth", "--out", s.str("d"), "--users", "30",
                      "--items", "80", "--interactions-per-user", "20"});
  REQUIRE(r.code == 0);
  const auto log = ParseInteractions(s / "d/interactions.csv");
  CHECK(log.num_users == 30);
  CHECK(log.records.size() == 600);
  CHECK(fs::file_size(s / "d/item_categories.tsv") > 0);
  CHECK(fs::file_size(s / "d/user_categories.tsv") > 0);
  std::ifstream users(s / "d/user_categories.tsv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(users, line)) ++lines;
  CHECK(lines == 30);
}

TEST_CASE("synth is deterministic in the seed") {
  Scratch s("synthseed");
  const std::vector<std::string> small = {"--users", "20", "--items", "50",
                                          "--interactions-per-user", "10"};
  auto run = [&](const std::string& dir, const std::string& seed) {
    std::vector<std::string> args = {"synth", "--out", s.str(dir), "--seed",
                                     seed};
    args.insert(args.end(), small.begin(), small.end());
    REQUIRE(Run(args).code == 0);
    return Slurp(s / dir / "interactions.csv") +
           Slurp(s / dir / "item_categories.tsv");
  };
  CHECK(run("a", "4") == run("b", "4"));
  CHECK(run("a", "4") != run("c", "5"));
}

TEST_CASE("synth accepts pure noise and rejects invalid specs") {
  Scratch s("synthspec");
  CHECK(Run({"synth", "--out", s.str("noise"), "--users", "10", "--items",
             "40", "--noise-rate", "1.0"})
            .code == 0);
  CHECK(Run({"synth", "--out", s.str("x"), "--noise-rate", "1.5"}).code == 2);
  CHECK(Run({"synth", "--out", s.str("x"), "--users", "0"}).code == 2);
  CHECK(Run({"synth", "--out", s.str("x"), "--items", "abc"}).code == 2);
  CHECK(Run({"synth"}).code == 2);
}

}  // namespace
}  // namespace cmi
