#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "sparsefcn/errors.hpp"
#include "sparsefcn/run_config.hpp"

using namespace sparsefcn;

TEST(RunConfig, ParsesKeysCommentsAndBlanks) {
  const RunConfig c = parse_run_config(
      "# toy run\n"
      "fusion = sctf\n"
      "\n"
      "plan_full=1, 2, 1, 0   # trailing comment\n"
      "optimized=yes\r\n"
      "p=0.4\n"
      "lambda=2.5\n"
      "iterations=7\n"
      "seed=9");
  EXPECT_EQ(c.fusion, FusionKind::Sctf);
  EXPECT_EQ(c.plan_full.units, (std::array<int, 4>{1, 2, 1, 0}));
  EXPECT_TRUE(c.optimized);
  EXPECT_DOUBLE_EQ(c.p, 0.4);
  EXPECT_DOUBLE_EQ(c.train.lambda, 2.5);
  EXPECT_EQ(c.train.iterations, 7);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.height, 64);  // untouched default
}

TEST(RunConfig, LaterSettingsOverrideBase) {
  RunConfig base;
  base.set("batch", "2");
  const RunConfig c = parse_run_config("lr=0.5", base);
  EXPECT_EQ(c.train.batch, 2);
  EXPECT_DOUBLE_EQ(c.train.lr, 0.5);
}

TEST(RunConfig, ErrorsNameTheLine) {
  try {
    parse_run_config("p=0.2\nfrobnicate=1\n");
    FAIL();
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("config line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("frobnicate"), std::string::npos);
  }
  EXPECT_THROW(parse_run_config("p 0.2"), ParameterError);
  EXPECT_THROW(parse_run_config("iterations=1.5"), ParameterError);
  EXPECT_THROW(parse_run_config("plan_half=1,1,1"), ParameterError);
  EXPECT_THROW(parse_run_config("plan_half=1,1,1,1,1"), ParameterError);
  EXPECT_THROW(parse_run_config("fusion=blend"), ParameterError);
  EXPECT_THROW(parse_run_config("optimized=maybe"), ParameterError);
  EXPECT_THROW(parse_run_config("seed=-3"), ParameterError);
}

TEST(RunConfig, ValidateAndModelConfig) {
  RunConfig c;
  c.set("classes", "5");
  c.set("widths", "8,16,32,64");
  c.set("decoder", "classic");
  c.set("p", "0.5");
  EXPECT_NO_THROW(c.validate());
  const TwoColumnConfig m = c.model_config();
  EXPECT_EQ(m.classes, 5);
  EXPECT_EQ(m.plan_half.widths, (std::array<int, 4>{8, 16, 32, 64}));
  EXPECT_EQ(m.decoder, DecoderVariant::Classic);
  EXPECT_DOUBLE_EQ(m.target_rate, 0.5);
  c.set("p", "1.5");
  EXPECT_THROW(c.validate(), ParameterError);
  RunConfig d;
  d.set("plan_full", "1,0,1,0");
  EXPECT_THROW(d.validate(), ConstructionError);
}

TEST(RunConfig, LoadsFiles) {
  const auto path = std::filesystem::temp_directory_path() / "sparsefcn_config_test.cfg";
  std::ofstream(path) << "height=128\nwidth=256\n";
  const RunConfig c = load_run_config(path.string());
  EXPECT_EQ(c.height, 128);
  EXPECT_EQ(c.width, 256);
  std::filesystem::remove(path);
  EXPECT_THROW(load_run_config(path.string()), IoError);
}
