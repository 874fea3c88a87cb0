#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "distillkit/checkpoint.hpp"
#include "distillkit/error.hpp"
#include "distillkit/experiment.hpp"

using namespace dk;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kManifests = std::string(DK_SOURCE_DIR) + "/configs/manifests";

json example() {
  std::ifstream in(kManifests + "/example.json");
  return json::parse(in);
}

// The example manifest cut down to run in well under a second.
json small() {
  json m = example();
  m["task"]["n_train"] = 48;
  m["task"]["n_dev"] = 16;
  m["schedule"] = {{"num_epochs", 2}, {"batch_size", 16}, {"learning_rate", 0.001}, {"teacher_epochs", 1},
                   {"teacher_learning_rate", 0.001}};
  return m;
}

fs::path scratch() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = fs::temp_directory_path() / "dk_experiment_test" / info->name();
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ValidationCode code_of(const json& m) {
  try {
    parse_experiment(m, kManifests);
  } catch (const ValidationError& e) {
    return e.code();
  }
  ADD_FAILURE() << "manifest was accepted";
  return ValidationCode::unknown_key;
}

}  // namespace

TEST(Manifest, ExampleParses) {
  const auto x = load_experiment(kManifests + "/example.json");
  EXPECT_EQ(x.distiller, "general");
  EXPECT_EQ(x.teacher_spec.num_layers, 4u);
  EXPECT_EQ(x.student_spec.hidden_size, 16u);
  ASSERT_EQ(x.tasks.size(), 1u);
  EXPECT_EQ(x.tasks[0].n_train, 400u);
  EXPECT_EQ(x.distillation.intermediate_matches.size(), 2u);
  EXPECT_EQ(x.schedule.num_epochs, 2u);
}

TEST(Manifest, MalformedJsonIsParseError) {
  const auto dir = scratch();
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{\"distiller\": \"general\",";
  EXPECT_THROW(load_experiment((dir / "bad.json").string()), ParseError);
  EXPECT_THROW(load_experiment((dir / "missing.json").string()), ConfigError);
}

TEST(Manifest, ValidationCodes) {
  json m = example();
  m["distillation"]["intermediate_matches"][1]["loss"] = "nst_v2";
  EXPECT_EQ(code_of(m), ValidationCode::unregistered_name);

  m = example();
  m["schedule"]["epochs"] = 3;
  EXPECT_EQ(code_of(m), ValidationCode::unknown_key);

  m = example();
  m["distillation"]["intermediate_matches"][0]["layer_T"] = 5;
  EXPECT_EQ(code_of(m), ValidationCode::layer_range);

  m = example();
  m["distillation"]["intermediate_matches"][0].erase("proj");
  EXPECT_EQ(code_of(m), ValidationCode::dim_mismatch);

  m = example();
  m["distiller"] = "basic";
  EXPECT_EQ(code_of(m), ValidationCode::incompatible);

  m = example();
  m["distiller"] = "fancy";
  EXPECT_EQ(code_of(m), ValidationCode::unregistered_name);

  m = example();
  m["task"]["length"] = 64;  // longer than max_positions
  EXPECT_THROW(parse_experiment(m, kManifests), ValidationError);

  m = example();
  m["training"]["device"] = "cuda";
  EXPECT_EQ(code_of(m), ValidationCode::out_of_range);

  m = example();
  m["teacher_weights"] = "nowhere.bin";
  EXPECT_EQ(code_of(m), ValidationCode::out_of_range);
}

TEST(Manifest, RejectedBeforeAnyOutput) {
  const auto dir = scratch();
  json m = small();
  m["distillation"]["temperature"] = -1;
  EXPECT_THROW(parse_experiment(m, kManifests), Error);
  EXPECT_FALSE(fs::exists(dir));
}

TEST(Run, ReportAndCheckpoints) {
  const auto dir = scratch();
  const auto report = run_experiment(parse_experiment(small(), kManifests), dir.string());
  // 48 examples in batches of 16, two epochs, checkpoint every 2 of 3 steps per epoch.
  EXPECT_EQ(report["steps_per_epoch"], 3);
  const auto want = compute_checkpoint_steps(3, 2, 2, 1);
  ASSERT_EQ(report["checkpoints"].size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(report["checkpoints"][i]["step"], want[i]);
    EXPECT_TRUE(fs::exists(checkpoint_path((dir / "checkpoints").string(), want[i])));
    EXPECT_TRUE(report["checkpoints"][i]["dev"].contains("accuracy"));
  }
  EXPECT_EQ(report["final"], report["checkpoints"].back()["dev"]);
  EXPECT_EQ(report["teachers"].size(), 1u);
  EXPECT_EQ(json::parse(slurp(dir / "report.json")), report);

  std::ifstream log(dir / "train.log");
  std::size_t lines = 0, totals = 0;
  for (std::string line; std::getline(log, line); ++lines) totals += line.find("\ttotal\t") != std::string::npos;
  EXPECT_EQ(totals, 6u);
  EXPECT_EQ(lines, 6u * 5u);  // total, kd, kd_weight, two matches
}

TEST(Run, SameManifestSameBytes) {
  const auto a = scratch() / "a", b = scratch().parent_path() / "SameManifestSameBytes_b";
  fs::remove_all(b);
  const auto x = parse_experiment(small(), kManifests);
  run_experiment(x, a.string());
  run_experiment(x, b.string());
  EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
  EXPECT_EQ(slurp(a / "train.log"), slurp(b / "train.log"));
  // A rerun into the same directory replaces the log rather than appending.
  run_experiment(x, a.string());
  EXPECT_EQ(slurp(a / "train.log"), slurp(b / "train.log"));
}

TEST(Run, SeedChangesResult) {
  json m = small();
  const auto r1 = run_experiment(parse_experiment(m, kManifests), (scratch() / "1").string());
  m["training"]["seed"] = 2;
  const auto r2 = run_experiment(parse_experiment(m, kManifests), (scratch() / "2").string());
  EXPECT_NE(r1["student_checksum"], r2["student_checksum"]);
}

TEST(Run, MultiTaskAndTrainerOnly) {
  json m = small();
  m.erase("task");
  m["distiller"] = "multi_task";
  m["distillation"].erase("intermediate_matches");
  m["student_spec"] = json::parse(R"({"name": "mt", "num_layers": 1, "hidden_size": 16, "feed_forward_size": 32,
      "num_heads": 2, "vocab_size": 64, "max_positions": 32,
      "heads": [{"type": "classification", "num_labels": 3}, {"type": "tagging", "num_labels": 3}]})");
  m["tasks"] = json::array({{{"kind", "classification"}, {"n_train", 32}, {"n_dev", 8}, {"length", 12}},
                            {{"kind", "tagging"}, {"n_train", 32}, {"n_dev", 8}, {"length", 12}, {"num_labels", 3}}});
  const auto report = run_experiment(parse_experiment(m, kManifests), scratch().string());
  EXPECT_EQ(report["teachers"].size(), 2u);
  ASSERT_TRUE(report["final"].is_array());
  EXPECT_EQ(report["final"][1]["task"], "tagging");

  json t = small();
  t["distiller"] = "basic_trainer";
  t.erase("distillation");
  const auto r = run_experiment(parse_experiment(t, kManifests), (scratch() / "trainer").string());
  EXPECT_TRUE(r["teachers"].empty());
}

TEST(SizeTable, RelativeToFirst) {
  const auto t = load_model_spec(std::string(DK_SOURCE_DIR) + "/configs/specs/desk_teacher.json");
  std::ostringstream out;
  print_size_table({t, t}, out);
  const auto s = out.str();
  EXPECT_NE(s.find("desk-teacher"), std::string::npos);
  EXPECT_NE(s.find("100.0%"), std::string::npos);
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 3);
}
