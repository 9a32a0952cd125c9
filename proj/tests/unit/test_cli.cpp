#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "fixtures.hpp"
#include "isoprune/cli.hpp"
#include "isoprune/executor.hpp"
#include "json.hpp"

using namespace isoprune;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "isoprune");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::string saved(const ModelBundle& m, const std::string& tag) {
  const fs::path dir = fixtures::temp_dir(tag);
  save_bundle(m, dir);
  return dir.string();
}

// Gradients from a fixed seed, written next to the bundle.
std::string saved_grads(const ModelBundle& m, const std::string& tag) {
  std::mt19937 rng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  TensorStore g;
  for (Tensor t : m.weights.tensors()) {
    for (float& x : t.data) x = static_cast<float>(u(rng));
    g.put(std::move(t));
  }
  const fs::path dir = fixtures::temp_dir(tag);
  save_tensor_store(g, dir / "grads.json", dir / "grads.bin");
  return dir.string();
}

}  // namespace

TEST(Cli, GroupsListsOneLinePerGroup) {
  const Result r = cli({"groups", saved(fixtures::toy_vit(), "cli_groups")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ls = lines(r.out);
  ASSERT_EQ(ls.size(), 4u);
  for (const auto& l : ls) EXPECT_NE(l.find("members="), std::string::npos);
}

TEST(Cli, InspectAndSubstructures) {
  const std::string b = saved(fixtures::coupled_mlp(), "cli_inspect");
  const Result r = cli({"inspect", b});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(r.out)[0], "nodes 10");
  const Result s = cli({"substructures", b});
  EXPECT_EQ(lines(s.out).size(), 20u);
  const Result j = cli({"substructures", b, "--json"});
  EXPECT_EQ(nlohmann::json::parse(j.out)["substructures"].size(), 20u);
}

TEST(Cli, ZeroRatioKeepsTensorsByteIdentical) {
  const std::string b = saved(fixtures::toy_vit(), "cli_zero_in");
  const fs::path out = fixtures::temp_dir("cli_zero_out");
  const Result r = cli({"prune", b, "--ratio", "0.0", "-o", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_binary(fs::path(b) / "tensors.bin"), read_binary(out / "tensors.bin"));
  EXPECT_TRUE(fs::exists(out / "plan.json"));
  EXPECT_TRUE(fs::exists(out / "run_manifest.json"));
}

TEST(Cli, PruneThenVerifyAndReload) {
  const ModelBundle m = fixtures::toy_vit();
  const std::string b = saved(m, "cli_prune_in");
  const fs::path out = fixtures::temp_dir("cli_prune_out");
  ASSERT_EQ(cli({"prune", b, "--ratio", "0.25", "-o", out.string()}).code, 0);
  const ModelBundle p = load_bundle(out);
  EXPECT_LT(p.weights.at("embed.weight").shape[0], 16);

  const auto in = fixtures::random_batches(m, 1, 2, 3)[0];
  std::vector<std::uint8_t> raw(in.data.size() * 4);
  for (std::size_t i = 0; i < in.data.size(); ++i) {
    const float f = static_cast<float>(in.data[i]);
    std::memcpy(raw.data() + 4 * i, &f, 4);
  }
  const fs::path inputs = fixtures::temp_dir("cli_verify") / "x.f32";
  write_file(inputs, raw);
  const Result self = cli({"verify", b, b, "--inputs", inputs.string()});
  ASSERT_EQ(self.code, 0) << self.err;
  EXPECT_EQ(nlohmann::json::parse(self.out)["max_abs_diff"].get<double>(), 0.0);
  const Result diff = cli({"verify", b, out.string(), "--inputs", inputs.string()});
  ASSERT_EQ(diff.code, 0) << diff.err;
  EXPECT_GT(nlohmann::json::parse(diff.out)["max_abs_diff"].get<double>(), 0.0);
}

TEST(Cli, PlanOnlyWritesNoBundle) {
  const std::string b = saved(fixtures::coupled_mlp(), "cli_plan_in");
  const fs::path out = fixtures::temp_dir("cli_plan_out");
  ASSERT_EQ(cli({"prune", b, "--ratio", "0.5", "--plan-only", "-o", out.string()}).code, 0);
  EXPECT_TRUE(fs::exists(out / "plan.json"));
  EXPECT_FALSE(fs::exists(out / "graph.json"));
  const auto plan = nlohmann::json::parse(read_file(out / "plan.json"));
  EXPECT_EQ(plan["schema"], "isoprune.plan/1");
}

TEST(Cli, HistogramCsvRowCount) {
  const ModelBundle m = fixtures::toy_vit();
  const std::string b = saved(m, "cli_hist_in");
  const std::string g = saved_grads(m, "cli_hist_grads");
  const fs::path csv = fixtures::temp_dir("cli_hist_out") / "hist.csv";
  const Result r = cli({"report", b, "--criterion", "taylor", "--grads", g, "--bins", "20", "-o", csv.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ls = lines(read_file(csv));
  ASSERT_EQ(ls.size(), 81u);
  EXPECT_EQ(ls[0], "group_id,bin_lo,bin_hi,count,group_threshold,global_threshold");
  EXPECT_TRUE(fs::exists(csv.string() + ".run_manifest.json"));
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli({"groups", "x", "--no-such-flag"}).code, 2);
  EXPECT_EQ(cli({}).code, 2);
  const fs::path bad = fixtures::temp_dir("cli_bad");
  write_file(bad / "graph.json", std::string("{\"nodes\": 3}"));
  const Result r = cli({"inspect", bad.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
  const std::string b = saved(fixtures::coupled_mlp(), "cli_codes");
  EXPECT_EQ(cli({"prune", b, "--ratio", "0.5", "--strategy", "sideways", "-o", (bad / "o").string()}).code, 2);
  EXPECT_EQ(cli({"score", b, "--criterion", "taylor"}).code, 2);  // taylor without --grads
}

TEST(Cli, ReportDirectoryIsDeterministic) {
  const std::string b = saved(fixtures::planted_two_group(), "cli_report_in");
  const fs::path o1 = fixtures::temp_dir("cli_report_1"), o2 = fixtures::temp_dir("cli_report_2");
  ASSERT_EQ(cli({"report", b, "-o", o1.string()}).code, 0);
  ASSERT_EQ(cli({"report", b, "-o", o2.string()}).code, 0);
  for (const char* f : {"report.json", "histogram.csv", "groupstats.csv"}) {
    EXPECT_EQ(read_file(o1 / f), read_file(o2 / f)) << f;
  }
  const auto rep = nlohmann::json::parse(read_file(o1 / "report.json"));
  EXPECT_EQ(rep["schema"], "isoprune.report/1");
  EXPECT_FALSE(rep.contains("removals"));
  const fs::path o3 = fixtures::temp_dir("cli_report_3");
  ASSERT_EQ(cli({"report", b, "--strategy", "global", "-o", o3.string()}).code, 0);
  EXPECT_TRUE(nlohmann::json::parse(read_file(o3 / "report.json")).contains("removals"));
}

TEST(Cli, PlantedGlobalThresholdSitsAboveWeakGroup) {
  const std::string b = saved(fixtures::planted_two_group(), "cli_planted");
  const fs::path csv = fixtures::temp_dir("cli_planted_out") / "h.csv";
  ASSERT_EQ(cli({"report", b, "--bins", "5", "-o", csv.string()}).code, 0);
  const auto ls = lines(read_file(csv));
  ASSERT_EQ(ls.size(), 11u);
  // Group thresholds differ; the shared global one exceeds the weaker group's.
  std::vector<double> group_t;
  double global_t = 0.0;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    std::vector<std::string> cells;
    std::istringstream row(ls[i]);
    for (std::string c; std::getline(row, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 6u);
    group_t.push_back(std::stod(cells[4]));
    global_t = std::stod(cells[5]);
  }
  const double weak = *std::min_element(group_t.begin(), group_t.end());
  EXPECT_GT(global_t, weak);
}

TEST(Cli, FdgradWritesGradientsUsableByTaylor) {
  const ModelBundle m = fixtures::linear_softmax(4, 3);
  const std::string b = saved(m, "cli_fd_in");
  const auto batches = fixtures::random_batches(m, 2, 3, 6);
  TensorStore data;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const auto& x = batches[i];
    data.put({"batch" + std::to_string(i) + ".input", x.shape, std::vector<float>(x.data.begin(), x.data.end())});
    data.put({"batch" + std::to_string(i) + ".target", {3}, {0, 2, 1}});
  }
  const fs::path d = fixtures::temp_dir("cli_fd_data");
  save_tensor_store(data, d / "tensors.json", d / "tensors.bin");
  const fs::path g = fixtures::temp_dir("cli_fd_out");
  const Result r = cli({"fdgrad", b, "--data", d.string(), "--eps", "1e-4", "-o", g.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const TensorStore grads = load_tensor_store(g / "grads.json", g / "grads.bin");
  EXPECT_EQ(grads.at("fc.weight").shape, (Shape{3, 4}));
  // Cross-entropy gradients of the bias sum to zero over classes.
  double s = 0.0;
  for (float v : grads.at("fc.bias").data) s += v;
  EXPECT_NEAR(s, 0.0, 1e-6);
  EXPECT_EQ(cli({"score", b, "--criterion", "taylor", "--grads", g.string()}).code, 0);
}
