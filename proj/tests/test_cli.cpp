// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <sstream>
#include <string>

#include "moeprec/assigner.hpp"
#include "moeprec/container.hpp"
#include "moeprec/importance.hpp"
#include "moeprec/model.hpp"
#include "moeprec/model_io.hpp"
#include "moeprec/pipeline.hpp"
#include "test_support.hpp"

namespace moeprec {
namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result cli(const std::string& args) {
  const std::string cmd = std::string(MOEPREC_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p) != nullptr) r.out += buf;
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  Cli() : dir_("cli") {}
  std::string f(const std::string& name) const { return dir_.file(name); }
  void generate(const std::string& extra = "") {
    const Result r = cli("generate --layers 2 --experts 4 --topk 2 --dim 8 --ffn 16 --seed 3 --heterogeneity 10 " +
                         extra + " -o " + f("m.mopq"));
    ASSERT_EQ(r.code, 0) << r.out;
  }
  test::TempDir dir_;
};

TEST_F(Cli, GenerateAndCheck) {
  generate();
  EXPECT_EQ(cli("check " + f("m.mopq")).code, 0);
  const MoEModel m = load_model(f("m.mopq"));
  EXPECT_EQ(m.config.experts_per_layer, 4u);
}

TEST_F(Cli, ZeroExpertsIsValidationError) {
  const Result r = cli("generate --experts 0 -o " + f("bad.mopq"));
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("error[validation]"), std::string::npos) << r.out;
  EXPECT_EQ(cli("generate --bogus-flag -o " + f("bad.mopq")).code, 2);
}

TEST_F(Cli, FirstLayerDenseHasNoRouter) {
  generate("--first-layer-dense");
  const Container c = decode_container(read_file(f("m.mopq")));
  for (const auto& t : c.tensors) EXPECT_NE(t.name, "layers.0.router");
  bool has_router1 = false;
  for (const auto& t : c.tensors) has_router1 = has_router1 || t.name == "layers.1.router";
  EXPECT_TRUE(has_router1);
}

TEST_F(Cli, ProfileMetrics) {
  generate();
  const Result h = cli("profile --model " + f("m.mopq") + " --metric hessian --samples 8 -o " + f("h.json"));
  ASSERT_EQ(h.code, 0) << h.out;
  EXPECT_NE(h.out.find("std_error"), std::string::npos) << h.out;
  EXPECT_EQ(cli("profile --model " + f("m.mopq") + " --metric combined -o " + f("c.json")).code, 2);
  EXPECT_EQ(cli("profile --model " + f("m.mopq") + " --metric frequency -o " + f("c.json")).code, 2);

  ASSERT_EQ(cli("profile --model " + f("m.mopq") + " --metric frequency --calib-tokens 200 --seed 5 -o " +
                f("fr.json")).code, 0);
  ASSERT_EQ(cli("profile --model " + f("m.mopq") + " --metric frequency --calib-tokens 200 --seed 5 -o " +
                f("fr2.json")).code, 0);
  EXPECT_EQ(read_text_file(f("fr.json")), read_text_file(f("fr2.json")));
  // Each CSV row sums to the token count.
  std::istringstream csv(read_text_file(f("fr.csv")));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "layer,expert_0,expert_1,expert_2,expert_3");
  int rows = 0;
  while (std::getline(csv, line)) {
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    double sum = 0.0;
    while (std::getline(cells, cell, ',')) sum += std::stod(cell);
    EXPECT_DOUBLE_EQ(sum, 400.0) << line;  // T * k
    ++rows;
  }
  EXPECT_EQ(rows, 2);
}

TEST_F(Cli, AssignFixture) {
  ImportanceMap m;
  m.metric = Metric::Hessian;
  m.layers = {0};
  m.values = {{0.1, 0.12, 0.5, 0.9, 0.95}};
  m.std_error = {{0, 0, 0, 0, 0}};
  write_text_file(f("map.json"), json_text(map_to_json(m)));
  ASSERT_EQ(cli("assign --map " + f("map.json") + " --mode model --palette 2,3,4 -o " + f("p.json")).code, 0);
  EXPECT_EQ(plan_from_json(read_json_file(f("p.json"))).expert_bits[0], (std::vector<int>{2, 2, 3, 4, 4}));
  ASSERT_EQ(cli("assign --map " + f("map.json") + " --mode model --palette 4 -o " + f("p4.json")).code, 0);
  EXPECT_EQ(plan_from_json(read_json_file(f("p4.json"))).expert_bits[0], (std::vector<int>{4, 4, 4, 4, 4}));
  const Result bad = cli("assign --map " + f("map.json") + " --palette 5,3 -o " + f("px.json"));
  EXPECT_EQ(bad.code, 2) << bad.out;
  EXPECT_EQ(cli("assign --map " + f("missing.json") + " -o " + f("px.json")).code, 3);
}

TEST_F(Cli, QuantizeEvaluateReport) {
  // Unit-scale experts for the fine-grid identity check.
  ASSERT_EQ(cli("generate --layers 2 --experts 4 --dim 8 --ffn 16 --seed 3 -o " + f("unit.mopq")).code, 0);
  ASSERT_EQ(cli("assign --uniform 16 --shared-bits 16 --model " + f("unit.mopq") + " -o " + f("u16.json")).code, 0);
  ASSERT_EQ(cli("quantize --model " + f("unit.mopq") + " --plan " + f("u16.json") + " -o " + f("q16.mopq")).code, 0);
  const Result e = cli("evaluate --model " + f("unit.mopq") + " --quantized " + f("q16.mopq") +
                       " --eval-tokens 32 -o " + f("e16.json"));
  ASSERT_EQ(e.code, 0) << e.out;
  EXPECT_NE(e.out.find("output MSE"), std::string::npos);
  EXPECT_LE(report_from_json(read_json_file(f("e16.json"))).output_mse, 1e-6);
  std::filesystem::remove(f("u16.json"));
  std::filesystem::remove(f("e16.json"));

  generate();

  ASSERT_EQ(cli("profile --model " + f("m.mopq") + " --metric hessian --samples 8 -o " + f("h.json")).code, 0);
  ASSERT_EQ(cli("assign --map " + f("h.json") + " --mode layer -o " + f("plan.json")).code, 0);
  const Result q = cli("quantize --model " + f("m.mopq") + " --plan " + f("plan.json") +
                       " --mode signround --calib-tokens 32 --steps 5 -o " + f("q.mopq"));
  ASSERT_EQ(q.code, 0) << q.out;
  EXPECT_EQ(cli("quantize --model " + f("m.mopq") + " --plan " + f("plan.json") + " --mode signround -o " +
                f("q2.mopq")).code, 2);
  ASSERT_EQ(cli("evaluate --model " + f("m.mopq") + " --quantized " + f("q.mopq") + " -o " + f("e.json")).code, 0);
  ASSERT_EQ(cli("report --run " + dir_.path().string() + " -o " + f("rep")).code, 0);
  EXPECT_TRUE(std::filesystem::exists(f("rep/summary.md")));
  EXPECT_TRUE(std::filesystem::exists(f("rep/plan.bits.csv")));
}

TEST_F(Cli, CorruptFilesExitThree) {
  generate();
  const auto bytes = read_file(f("m.mopq"));
  write_file(f("trunc.mopq"), std::span<const std::uint8_t>(bytes.data(), bytes.size() / 2));
  const Result r = cli("check " + f("trunc.mopq"));
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_NE(r.out.find("offset"), std::string::npos) << r.out;
  EXPECT_EQ(cli("profile --model " + f("trunc.mopq") + " --metric hessian -o " + f("x.json")).code, 3);
  EXPECT_EQ(cli("check " + f("nope.mopq")).code, 3);
}

TEST_F(Cli, RunIsDeterministic) {
  const std::string flags = "run --layers 2 --experts 4 --topk 2 --dim 8 --ffn 16 --seed 2 ";
  ASSERT_EQ(cli("--threads 1 " + flags + "-o " + f("a")).code, 0);
  ASSERT_EQ(cli("--threads 4 " + flags + "-o " + f("b")).code, 0);
  for (const char* name : {"model.mopq", "hessian.json", "plan-combined-model.json", "q-hessian-layer.mopq",
                           "eval-frequency-model.json", "report/summary.md"})
    EXPECT_EQ(read_text_file(f(std::string("a/") + name)), read_text_file(f(std::string("b/") + name))) << name;
}

}  // namespace
}  // namespace moeprec
