#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "msdml/cli.hpp"
#include "msdml/msdml.hpp"
#include "msdml/synthetic.hpp"

using namespace msdml;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "msdml");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh(const std::string& name) {
  const auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST(Cli, HelpExitsZero) { EXPECT_EQ(run({"--help"}).code, 0); }

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"split"}).code, 1);
  EXPECT_EQ(run({"--seed", "x", "split", "--manifest", "m.csv"}).code, 1);
}

TEST(Cli, DataErrorsExitTwo) {
  const auto dir = fresh("msdml_cli_data");
  std::ofstream(dir / "bad.csv") << "example_id,audio_path\nx,y.wav\n";
  EXPECT_EQ(run({"split", "--manifest", (dir / "bad.csv").string()}).code, 2);
  EXPECT_EQ(run({"features", "verify", "--store", (dir / "nostore").string()}).code, 2);
  EXPECT_EQ(run({"split", "--manifest", (dir / "missing.csv").string()}).code, 1);
  fs::remove_all(dir);
}

TEST(Cli, SplitIsDeterministic) {
  const auto dir = fresh("msdml_cli_split");
  {
    std::ofstream m(dir / "m.csv");
    m << "example_id,audio_path,class_label\n";
    for (int i = 0; i < 20; ++i) m << "r" << i << ",r" << i << ".wav," << (i % 2 ? "owl" : "wren") << "\n";
  }
  const auto m = (dir / "m.csv").string();
  const auto a = run({"--seed", "7", "split", "--manifest", m});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, "train 10\tval 4\ttest 6\n");
  const std::string first = slurp(dir / "split.csv");
  ASSERT_EQ(run({"--seed", "7", "split", "--manifest", m}).code, 0);
  EXPECT_EQ(slurp(dir / "split.csv"), first);
  ASSERT_EQ(run({"--seed", "8", "split", "--manifest", m, "--out", (dir / "s8.csv").string()}).code, 0);
  EXPECT_NE(slurp(dir / "s8.csv"), first);
  fs::remove_all(dir);
}

TEST(Cli, ExtractWritesOneFilePerExample) {
  const auto dir = fresh("msdml_cli_extract");
  const auto manifest = synthetic::write_dataset(dir / "data", 10, 3, 2);
  const auto store = (dir / "store").string();
  const auto r = run({"features", "extract", "--manifest", manifest.string(), "--store", store, "--jobs", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto s = FeatureStore::open(store);
  ASSERT_EQ(s.size(), 20u);
  for (const auto& [id, e] : s.entries()) EXPECT_EQ(fs::file_size(fs::path(store) / e.file), 40u * 200u * 3u * 4u);
  EXPECT_EQ(run({"features", "verify", "--store", store}).code, 0);
  fs::resize_file(fs::path(store) / s.entries().begin()->second.file, 10);
  const auto v = run({"features", "--verify", "--store", store});
  EXPECT_EQ(v.code, 2);
  EXPECT_NE(v.out.find("size_mismatch"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, ClassifyRejectsFarEmbedding) {
  const auto dir = fresh("msdml_cli_classify");
  std::vector<Embedding> train, val, query;
  auto add = [](std::vector<Embedding>& v, const std::string& label, float x, float y) {
    Embedding e;
    e.label = label;
    e.example_id = label + std::to_string(v.size());
    e.values = Eigen::Vector2f(x, y);
    v.push_back(e);
  };
  for (int i = 0; i < 5; ++i) add(train, "a", 1.0f + 0.02f * i, 0.0f), add(train, "b", 0.0f, 1.0f + 0.02f * i);
  add(val, "a", 1.0f, 0.05f), add(val, "a", 1.05f, -0.02f), add(val, "b", 0.03f, 1.0f), add(val, "b", 0.0f, 1.06f);
  add(query, "a", 1.02f, 0.01f), add(query, "a", 40.0f, -0.5f);
  MLPConfig mc;
  mc.epochs = 30;
  mc.learning_rate = 0.01;
  train_mlp(train, mc).save(dir / "head.ck");
  save_gaussians(fit_class_gaussians(train, val, Likelihood::peak_normalized), dir / "g.json");
  write_embeddings(query, dir / "q.tsv");
  const auto r = run({"classify", "--head", (dir / "head.ck").string(), "--embeddings", (dir / "q.tsv").string(),
                      "--reject", "--gaussians", (dir / "g.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string header, first, second;
  std::getline(lines, header);
  std::getline(lines, first);
  std::getline(lines, second);
  EXPECT_EQ(first.substr(0, first.find('\t')), "a0");
  EXPECT_NE(first.find("\ta\ta\t"), std::string::npos) << first;
  EXPECT_NE(second.find(kRejectedLabel), std::string::npos) << second;
  EXPECT_EQ(run({"classify", "--head", (dir / "head.ck").string(), "--embeddings", (dir / "q.tsv").string(), "--reject"})
                .code,
            1);
  fs::remove_all(dir);
}

TEST(Cli, TrainMetricRunsAreIdentical) {
  const auto dir = fresh("msdml_cli_det");
  const auto manifest = synthetic::write_dataset(dir / "data", 6, 5, 2).string();
  const auto store = (dir / "store").string();
  const std::string config = MSDML_SOURCE_DIR "/configs/tiny.json";
  ASSERT_EQ(run({"features", "extract", "--manifest", manifest, "--store", store}).code, 0);
  std::string logs[2];
  for (int k = 0; k < 2; ++k) {
    const auto split = (dir / ("split" + std::to_string(k) + ".csv")).string();
    const auto log = (dir / ("log" + std::to_string(k) + ".tsv")).string();
    ASSERT_EQ(run({"--seed", "3", "split", "--manifest", manifest, "--out", split, "--store", store}).code, 0);
    const auto r = run({"--seed", "3", "--config", config, "train", "metric", "--store", store, "--split", split,
                        "--out", (dir / ("net" + std::to_string(k) + ".ck")).string(), "--log", log});
    ASSERT_EQ(r.code, 0) << r.err;
    logs[k] = slurp(log);
  }
  EXPECT_FALSE(logs[0].empty());
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(slurp(dir / "net0.ck"), slurp(dir / "net1.ck"));
  fs::remove_all(dir);
}
