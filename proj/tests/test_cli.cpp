#include "gcr/commands.hpp"
#include "gcr/synthetic.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace gcr;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> small_overrides(const fs::path& root) {
  return {"data_dir=" + (root / "data").string(),
          "output_dir=" + (root / "runs").string(),
          "gen.num_identities=6",
          "gen.height=20",
          "gen.width=12",
          "gen.min_frames=5",
          "gen.max_frames=7",
          "train.crop_height=16",
          "train.crop_width=8",
          "train.subseq_len=4",
          "train.pos_pairs_per_batch=2",
          "train.neg_pairs_per_batch=2",
          "train.epochs=1",
          "net.conv1_out=4",
          "net.conv1_of_out=4",
          "net.gate_hidden=8",
          "net.state_dim=16",
          "net.feature_dim=16",
          "net.conv2_out=6",
          "net.conv3_out=8"};
}

class CommandTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("gcr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    unsetenv("GCR_OUTPUT_DIR");
    unsetenv("GCR_THREADS");
  }
  void TearDown() override {
    fs::remove_all(root_);
    unsetenv("GCR_OUTPUT_DIR");
    unsetenv("GCR_THREADS");
  }
  RunConfig config(std::vector<std::string> extra = {}) const {
    auto o = small_overrides(root_);
    o.insert(o.end(), extra.begin(), extra.end());
    return resolve_run_config(std::nullopt, o);
  }
  fs::path root_;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

std::map<std::string, double> read_cmc(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);
  std::map<std::string, double> out;
  std::string rank;
  double value;
  while (in >> rank >> value) out[rank] = value;
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GCR_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_F(CommandTest, ConfigLayeringFileEnvironmentOverride) {
  write_file(root_ / "cfg.txt", "# comment\ntrain.epochs = 7\noutput_dir = from_file\nsplit.seed = 3\n");
  auto c = resolve_run_config(root_ / "cfg.txt", {});
  EXPECT_EQ(c.train.epochs, 7u);
  EXPECT_EQ(c.output_dir, "from_file");
  EXPECT_EQ(c.split_seed, 3u);

  setenv("GCR_OUTPUT_DIR", "from_env", 1);
  setenv("GCR_THREADS", "3", 1);
  c = resolve_run_config(root_ / "cfg.txt", {});
  EXPECT_EQ(c.output_dir, "from_env");
  EXPECT_EQ(c.train.threads, 3u);
  EXPECT_EQ(c.eval.threads, 3u);

  c = resolve_run_config(root_ / "cfg.txt", {"output_dir=from_flag", "train.threads=2"});
  EXPECT_EQ(c.output_dir, "from_flag");
  EXPECT_EQ(c.train.threads, 2u);
  EXPECT_EQ(c.eval.threads, 3u);
}

TEST_F(CommandTest, ConfigRejectsUnknownKeysAndBadValues) {
  write_file(root_ / "bad.txt", "train.epochz = 2\n");
  EXPECT_THROW(resolve_run_config(root_ / "bad.txt", {}), std::invalid_argument);
  EXPECT_THROW(resolve_run_config(std::nullopt, {"net.frame_height=32"}), std::invalid_argument);
  EXPECT_THROW(resolve_run_config(std::nullopt, {"train.epochs=many"}), std::invalid_argument);
  EXPECT_THROW(resolve_run_config(std::nullopt, {"precision=float16"}), std::invalid_argument);
  EXPECT_THROW(resolve_run_config(std::nullopt, {"split.fraction=1"}), std::invalid_argument);
  EXPECT_THROW(parse_override("no_equals_sign"), std::invalid_argument);
  EXPECT_EQ(parse_override(" a.b = c ").second, "c");
}

TEST_F(CommandTest, NetworkInputFollowsTheCrop) {
  const auto c = config();
  EXPECT_EQ(c.network.frame_height, 16u);
  EXPECT_EQ(c.network.frame_width, 8u);
  RunConfig back;
  back.apply(c.to_map());
  EXPECT_EQ(back.to_map().entries(), c.to_map().entries());
  EXPECT_EQ(back.network.frame_height, 16u);
}

TEST_F(CommandTest, GenerateIsByteIdenticalAndLaysOutOneDirectoryPerView) {
  auto a = config({"gen.num_identities=20", "data_dir=" + (root_ / "a").string()});
  auto b = config({"gen.num_identities=20", "data_dir=" + (root_ / "b").string()});
  std::ostringstream sink;
  cmd_generate(a, sink);
  cmd_generate(b, sink);
  std::size_t files = 0, view_dirs = 0;
  for (const auto& e : fs::recursive_directory_iterator(root_ / "a")) {
    if (e.is_directory() && e.path().filename().string().starts_with("cam_")) ++view_dirs;
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), root_ / "a");
    if (rel == "resolved_config.txt") continue;  // holds the differing data_dir
    EXPECT_EQ(slurp(e.path()), slurp(root_ / "b" / rel)) << rel;
  }
  EXPECT_EQ(view_dirs, 40u);
  EXPECT_GT(files, 40u);
}

TEST_F(CommandTest, TrainEvalWithRepeatsAveragesSplits) {
  std::ostringstream sink;
  const auto c = config({"repeats=2"});
  cmd_generate(c, sink);
  cmd_train(c, false, sink);
  for (const char* split : {"split_00", "split_01"}) {
    EXPECT_TRUE(fs::exists(c.output_dir / split / "manifest.txt"));
    EXPECT_TRUE(fs::exists(c.output_dir / split / "training_log.tsv"));
    EXPECT_TRUE(fs::exists(c.output_dir / split / "resolved_config.txt"));
  }
  const auto mean = cmd_eval(c, c.output_dir, sink);
  const auto r0 = read_cmc(c.output_dir / "split_00" / "cmc.tsv");
  const auto r1 = read_cmc(c.output_dir / "split_01" / "cmc.tsv");
  const auto rm = read_cmc(c.output_dir / "cmc_mean.tsv");
  ASSERT_EQ(r0.size(), 3u);  // 3 held-out identities
  for (const auto& [rank, v] : rm) EXPECT_NEAR(v, (r0.at(rank) + r1.at(rank)) / 2, 0.0051);
  EXPECT_EQ(mean.ranks.back(), 100.0);
  EXPECT_TRUE(fs::exists(c.output_dir / "eval_config.txt"));

  // repeat r uses split seed split.seed + r
  const auto all = load_dataset(c.data_dir);
  EXPECT_EQ(split_for_repeat(all, c, 1).first.identities(), train_test_split(all, 0.5, 1).first.identities());
  EXPECT_EQ(load_train_state<float>(c.output_dir / "split_01").model.class_ids,
            train_test_split(all, 0.5, 1).first.identities());
}

TEST_F(CommandTest, ResumeContinuesAndRejectsChangedConfig) {
  std::ostringstream sink;
  const auto one = config();
  cmd_generate(one, sink);
  cmd_train(one, false, sink);
  const auto two = config({"train.epochs=2"});
  cmd_train(two, true, sink);
  EXPECT_NE(sink.str().find("resuming"), std::string::npos);
  EXPECT_EQ(load_train_state<float>(two.output_dir).epochs_done, 2u);
  const auto changed = config({"train.epochs=3", "train.margin=1.5"});
  EXPECT_THROW(cmd_train(changed, true, sink), std::invalid_argument);
}

TEST_F(CommandTest, VisualizeZeroParametersGivesMidGrayGates) {
  std::ostringstream sink;
  const auto c = config();
  cmd_generate(c, sink);
  VisualizeRequest req;
  req.zero_params = true;
  req.person = 2;
  req.max_frames = 3;
  req.out_dir = root_ / "gates";
  const auto summary = cmd_visualize_gates(c, req, sink);
  EXPECT_EQ(summary.frames, 3u);
  EXPECT_EQ(summary.gate_height, 8u);
  EXPECT_EQ(summary.gate_width, 4u);
  ASSERT_TRUE(summary.mean_overlap.has_value());
  for (const char* kind : {"color", "flow"}) {
    const auto img = read_pgm(root_ / "gates" / (std::string("frame_001_") + kind + ".pgm"));
    EXPECT_EQ(img.width, 4u);
    EXPECT_EQ(img.height, 8u);
    for (auto p : img.pixels) EXPECT_EQ(p, 128) << kind;
  }
  const auto fused = read_pgm(root_ / "gates" / "frame_000_fused.pgm");
  for (auto p : fused.pixels) EXPECT_EQ(p, 191);  // 0.75
  const auto input = read_pgm(root_ / "gates" / "frame_000_input.pgm");
  EXPECT_EQ(input.width, 8u);
  EXPECT_TRUE(fs::exists(root_ / "gates" / "gate_ranges.txt"));
}

TEST_F(CommandTest, VisualizeF3AndF4FusedImagesAreIdentical) {
  std::ostringstream sink;
  auto f3 = config({"net.fusion=f3"});
  auto f4 = config({"net.fusion=f4"});
  cmd_generate(f3, sink);
  VisualizeRequest req;
  req.person = 1;
  req.camera = 1;
  req.max_frames = 4;
  req.out_dir = root_ / "g3";
  cmd_visualize_gates(f3, req, sink);
  req.out_dir = root_ / "g4";
  cmd_visualize_gates(f4, req, sink);
  for (int t = 0; t < 4; ++t) {
    const auto name = "frame_00" + std::to_string(t) + "_fused.pgm";
    EXPECT_EQ(slurp(root_ / "g3" / name), slurp(root_ / "g4" / name));
  }
}

TEST(PgmTest, RoundTripAndGrayMapping) {
  const auto dir = fs::temp_directory_path() / "gcr_pgm_test";
  fs::create_directories(dir);
  const std::vector<std::uint8_t> px{0, 10, 255, 128, 7, 99};
  write_pgm(dir / "x.pgm", 3, 2, px);
  const auto img = read_pgm(dir / "x.pgm");
  EXPECT_EQ(img.width, 3u);
  EXPECT_EQ(img.height, 2u);
  EXPECT_EQ(img.pixels, px);
  fs::remove_all(dir);
  const std::vector<double> v{-1, 0, 0.5, 1, 2};
  EXPECT_EQ(to_gray(v, 0, 1), (std::vector<std::uint8_t>{0, 0, 128, 255, 255}));
  EXPECT_EQ(to_gray(v, 0, 2), (std::vector<std::uint8_t>{0, 0, 64, 128, 255}));
}

TEST(GradcheckCommandTest, InjectedFaultFails) {
  GradCheckSuiteOptions options;
  options.end_to_end = false;
  std::ostringstream out;
  EXPECT_TRUE(cmd_gradcheck(options, "", out));
  EXPECT_FALSE(cmd_gradcheck(options, "maxpool_2x2", out));
  EXPECT_NE(out.str().find("FAIL"), std::string::npos);
  EXPECT_TRUE(cmd_gradcheck(options, "", out));  // the fault does not linger
}

TEST(CliTest, ExitCodes) {
  const auto root = fs::temp_directory_path() / "gcr_cli_exit";
  fs::remove_all(root);
  fs::create_directories(root);
  std::string sets;
  for (const auto& o : small_overrides(root)) sets += " -s " + o;

  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("generate -s no.such.key=1"), 1);
  EXPECT_EQ(run_cli("generate -s gen.num_identities=lots"), 1);
  EXPECT_EQ(run_cli("generate --config " + (root / "missing.txt").string()), 1);
  EXPECT_EQ(run_cli("eval" + sets), 2);  // no dataset yet
  EXPECT_EQ(run_cli("generate" + sets), 0);
  EXPECT_EQ(run_cli("train --fusion f9" + sets), 1);
  EXPECT_EQ(run_cli("train" + sets), 0);
  EXPECT_EQ(run_cli("eval" + sets), 0);
  EXPECT_EQ(run_cli("visualize-gates --person 0 --frames 2" + sets), 0);
  EXPECT_EQ(run_cli("visualize-gates --person 99" + sets), 1);
  EXPECT_EQ(run_cli("gradcheck --operators-only"), 0);
  EXPECT_EQ(run_cli("gradcheck --operators-only --inject-fault dense"), 2);
  EXPECT_TRUE(fs::exists(root / "runs" / "cmc.tsv"));
  EXPECT_TRUE(fs::exists(root / "runs" / "gates" / "frame_001_fused.pgm"));
  fs::remove_all(root);
}
