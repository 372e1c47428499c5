#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "lumafuse/lumafuse.hpp"

using namespace lumafuse;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded unless `merge_stderr`.
CliRun cli(const std::string& args, bool merge_stderr = false) {
  const std::string cmd = std::string(LUMAFUSE_CLI_PATH) + " " + args + (merge_stderr ? " 2>&1" : " 2>/dev/null");
  CliRun r;
  FILE* p = ::popen(cmd.c_str(), "r");
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = ::pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("lumafuse_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

std::string slurp(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_F(CliTest, EnhanceMatchesLibraryByteForByte) {
  ASSERT_EQ(cli("init-weights encoder " + path("e.nnw") + " --seed 5").code, 0);
  ASSERT_EQ(cli("init-weights detail " + path("d.nnw") + " --seed 6").code, 0);
  EXPECT_EQ(read_file(path("e.nnw")), save_weights(random_weights(encoder_arch(), 5)));
  const Image img = load_ppm(save_ppm(synthetic::scaled(synthetic::scene(64, 64, 12), 0.3)));
  write_ppm_file(path("in.ppm"), img);
  const std::string w = " --encoder " + path("e.nnw") + " --detail " + path("d.nnw");
  ASSERT_EQ(cli("enhance " + path("in.ppm") + " " + path("out.ppm") + w + " --params-out " + path("p.txt")).code, 0);
  const WeightStore enc = random_weights(encoder_arch(), 5), det = random_weights(detail_arch(), 6);
  const EnhanceResult lib = enhance_with_params(img, enc, det);
  EXPECT_EQ(read_file(path("out.ppm")), save_ppm(lib.output));
  EXPECT_EQ(parse_params(slurp(path("p.txt"))), lib.params);
  ASSERT_EQ(cli("enhance " + path("in.ppm") + " " + path("out2.ppm") + w + " --wiring enhanced").code, 0);
  EXPECT_EQ(read_file(path("out2.ppm")), save_ppm(enhance(img, enc, det, DetailInput::Enhanced)));
}

TEST_F(CliTest, MetricsEmitsCsvRow) {
  const Image a = synthetic::scene(40, 40, 1);
  write_ppm_file(path("a.ppm"), a);
  write_ppm_file(path("b.ppm"), synthetic::with_noise(a, 0.05, 2));
  const CliRun r = cli("metrics " + path("a.ppm") + " " + path("b.ppm") + " --name noisy");
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(std::regex_match(r.out, std::regex("name,psnr,ssim,vif\nnoisy,[0-9.]+,-?[0-9.]+,[0-9.]+\n"))) << r.out;
  const CliRun kv = cli("metrics " + path("a.ppm") + " " + path("a.ppm") + " --format kv");
  EXPECT_EQ(kv.out, "psnr=100.000000 ssim=1.000000 vif=1.000000 vif_variant=pixel-multiscale\n");
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(cli("").code, 2);
  const CliRun bad = cli("enhance --frobnicate", true);
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.out.find("Usage"), std::string::npos);
  EXPECT_EQ(cli("--help").code, 0);
  write_file(path("junk.ppm"), Bytes{'P', '5'});
  ASSERT_EQ(cli("init-weights encoder " + path("e.nnw")).code, 0);
  ASSERT_EQ(cli("init-weights detail " + path("d.nnw")).code, 0);
  const CliRun rt = cli("enhance " + path("junk.ppm") + " " + path("o.ppm") + " --encoder " + path("e.nnw") +
                         " --detail " + path("d.nnw"),
                     true);
  EXPECT_EQ(rt.code, 1);
  EXPECT_NE(rt.out.find("error:"), std::string::npos);
  // Swapped weight files are a runtime error, not a crash.
  EXPECT_EQ(cli("enhance " + path("junk.ppm") + " " + path("o.ppm") + " --encoder " + path("d.nnw") + " --detail " +
                path("d.nnw"))
                .code,
            1);
}

TEST_F(CliTest, SimulateShippedConfigs) {
  const CliRun r = cli("simulate " + std::string(LUMAFUSE_SOURCE_DIR) + "/configs/edge.conf --step 20");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "images,total_ms\n0,1.700000\n20,5.700000\n40,9.700000\n");
}

TEST_F(CliTest, FitIspAndIterate) {
  const Image img = synthetic::scene(24, 24, 3);
  IspParams target = IspParams::identity();
  target.gamma = 0.7;
  write_ppm_file(path("in.ppm"), img);
  write_ppm_file(path("ref.ppm"), apply_pipeline(img, target));
  const CliRun r = cli("fit-isp " + path("in.ppm") + " " + path("ref.ppm") + " --params-out " + path("p.txt") +
                    " --trace " + path("t.csv"));
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("objective=mse-surrogate"), std::string::npos);
  const IspParams fitted = parse_params(slurp(path("p.txt")));
  EXPECT_NEAR(fitted.gamma, 0.7, 0.05);
  EXPECT_EQ(slurp(path("t.csv")).rfind("iter,loss\n0,", 0), 0u);

  ASSERT_EQ(cli("iterate " + path("in.ppm") + " " + path("p.txt") + " --prefix " + path("it")).code, 0);
  const IterateSeries s = generate_iterates(load_ppm(read_file(path("in.ppm"))), fitted);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(read_file(path("it_en" + std::to_string(k) + ".ppm")), save_ppm(s.images[k]));
  }
  EXPECT_EQ(read_file(path("it_en.ppm")), save_ppm(s.final_image));
}

TEST_F(CliTest, RefinePromptWritesTable) {
  EmbeddingTable t;
  Rng rng(8);
  for (const char* name : {"tt", "neg", "normal", "low", "en0", "en1", "en2", "en3", "en"}) {
    std::vector<double> v(6);
    for (double& x : v) x = rng.normal();
    t.add(name, Embedding::normalized(v));
  }
  write_file(path("in.emb"), save_embeddings(t));
  const CliRun r = cli("refine-prompt " + path("in.emb") +
                    " --prompt tt --negative neg --normal normal --low low --series en0 en1 en2 en3 en --output " +
                    path("out.emb") + " --trace " + path("t.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  const LoadedEmbeddings out = load_embeddings(read_file(path("out.emb")));
  ASSERT_EQ(out.table.size(), 10u);
  const RefinementSet set{t.at("normal"), t.at("low"), {t.at("en0"), t.at("en1"), t.at("en2"), t.at("en3"), t.at("en")}};
  const PromptRefinement lib = refine_prompt(t.at("tt"), t.at("neg"), set);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(out.table.at("tt.refined")[i], lib.prompt[i], 1e-7);
  EXPECT_EQ(cli("refine-prompt " + path("in.emb") +
                " --prompt missing --negative neg --normal normal --low low --series en0 en1 en2 en3 en --output " +
                path("x.emb"))
                .code,
            1);
}

TEST_F(CliTest, BenchReportsOrderedFps) {
  ASSERT_EQ(cli("init-weights encoder " + path("e.nnw")).code, 0);
  ASSERT_EQ(cli("init-weights detail " + path("d.nnw")).code, 0);
  const std::string cfg = std::string(LUMAFUSE_SOURCE_DIR) + "/configs/";
  const CliRun r = cli("bench --encoder " + path("e.nnw") + " --detail " + path("d.nnw") +
                    " --repetitions 1 --edge " + cfg + "edge.conf --cloud " + cfg + "cloud.conf");
  ASSERT_EQ(r.code, 0);
  std::smatch m;
  ASSERT_TRUE(std::regex_search(r.out, m, std::regex("edge_fps=([0-9.]+)")));
  const double edge = std::stod(m[1]);
  ASSERT_TRUE(std::regex_search(r.out, m, std::regex("cloud_fps=([0-9.]+)")));
  const double cloud = std::stod(m[1]);
  EXPECT_GT(edge, cloud);
  EXPECT_GT(cloud, 0.0);
  EXPECT_NE(r.out.find("deterministic=1"), std::string::npos);
}
