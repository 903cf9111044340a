#include "support.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace causalpred;
using namespace causalpred::testing;

namespace {

io::LabeledMatrix parse(const std::string& text) {
  std::istringstream in(text);
  return io::parse_matrix_csv(in, "t.csv");
}

std::string parse_error(const std::string& text) {
  try {
    parse(text);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(MatrixCsv, ParsesLabelsAndValues) {
  const auto m = parse("condition,aMEK,\"a,PKC\"\nc1,0.5,1e-3\r\n\nc2, -2 ,3\n");
  EXPECT_EQ(m.corner, "condition");
  EXPECT_EQ(m.col_labels, (std::vector<std::string>{"aMEK", "a,PKC"}));
  EXPECT_EQ(m.row_labels, (std::vector<std::string>{"c1", "c2"}));
  EXPECT_EQ(m.values(0, 1), 1e-3);
  EXPECT_EQ(m.values(1, 0), -2.0);
}

TEST(MatrixCsv, RoundTripIsExact) {
  auto rng = rng_for(60);
  io::LabeledMatrix m;
  m.values = gaussian(7, 4, rng, 1e3);
  m.values(0, 0) = 1.0 / 3.0;
  m.values(1, 1) = -4.9406564584124654e-324;
  m.row_labels = {"r1", "r 2", "r,3", "r\"4", "r5", "r6", "r7"};
  m.col_labels = {"A", "B", "C", "D"};
  std::stringstream buf;
  io::write_matrix_csv(buf, m);
  const auto back = io::parse_matrix_csv(buf);
  EXPECT_EQ(back.values, m.values);
  EXPECT_EQ(back.row_labels, m.row_labels);
  EXPECT_EQ(back.col_labels, m.col_labels);
}

TEST(MatrixCsv, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "causalpred_io_test";
  std::filesystem::remove_all(dir);
  io::LabeledMatrix m{Matrix::Identity(2, 2), {"a", "b"}, {"x", "y"}, "id"};
  io::write_matrix_csv(dir / "nested" / "m.csv", m);
  EXPECT_EQ(io::load_matrix_csv(dir / "nested" / "m.csv").values, m.values);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(io::load_matrix_csv(dir / "missing.csv"), ParseError);
}

TEST(MatrixCsv, StructuredErrors) {
  EXPECT_NE(parse_error("").find("empty file"), std::string::npos);
  EXPECT_NE(parse_error("c,a,b\nr1,1\n").find("t.csv:2: ragged row"), std::string::npos);
  const std::string bad = parse_error("c,a,b\nr1,1,2\nr2,1,x1\n");
  EXPECT_NE(bad.find("t.csv:3"), std::string::npos);
  EXPECT_NE(bad.find("column 3"), std::string::npos);
  EXPECT_NE(bad.find("'b'"), std::string::npos);
  EXPECT_NE(parse_error("c,a,a\nr1,1,2\n").find("duplicate column label 'a'"), std::string::npos);
  EXPECT_NE(parse_error("c,a\nr1,1\nr1,2\n").find("duplicate row label 'r1'"), std::string::npos);
  EXPECT_FALSE(parse_error("c,a\nr1,1.5.2\n").empty());
  EXPECT_FALSE(parse_error("c,a\nr1,1;5\n").empty());
  EXPECT_FALSE(parse_error("c,a\nr1,nan\n").empty());
  EXPECT_FALSE(parse_error("c,a\nr1,\n").empty());
}

TEST(MatrixCsv, PeriodOnlyDecimals) {
  EXPECT_NE(parse_error("c,a\nr1,\"1,5\"\n").find("non-numeric"), std::string::npos);
  EXPECT_EQ(parse("c,a\nr1,+1.25\n").values(0, 0), 1.25);
}

TEST(Alignment, ReordersByNameAndReportsMissing) {
  const auto m = parse("c,b,a\nr1,1,2\nr2,3,4\n");
  const Matrix cols = io::align_columns(m, {"a", "b"}, "conditions");
  EXPECT_EQ(cols(0, 0), 2.0);
  EXPECT_EQ(cols(1, 1), 3.0);
  try {
    io::align_columns(m, {"a", "zz"}, "conditions");
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("zz"), std::string::npos);
  }
  const Matrix rows = io::align_rows(m, {"r2", "r1"}, "responses");
  EXPECT_EQ(rows(0, 0), 3.0);
}

TEST(Alignment, RenameMapAndTargets) {
  const auto dir = std::filesystem::temp_directory_path() / "causalpred_rename_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "renames.csv");
    f << "# old,new\nMEKi,aMEK\n";
  }
  auto m = parse("c,MEKi,aPKC\nr1,1,2\n");
  io::apply_renames(m.col_labels, io::load_rename_map(dir / "renames.csv"));
  EXPECT_EQ(m.col_labels.front(), "aMEK");
  std::filesystem::remove_all(dir);

  const auto b = parse("response,d2,d1\nx2,0,1\nx1,1,0\n");
  const TargetMap t = io::to_targets(b, {"x1", "x2"}, {"d1", "d2"});
  Matrix expected(2, 2);
  expected << 0, 1, 1, 0;
  EXPECT_EQ(t.values(), expected);
  const auto mask = io::to_mask(parse("r,x1,x2\nx1,1,0\nx2,1,1\n"), {"x1", "x2"});
  EXPECT_FALSE(mask.allowed()(0, 1));
  EXPECT_TRUE(mask.allowed()(1, 0));
}

TEST(RunConfigFile, AcceptsKnownKeysRejectsOthers) {
  std::istringstream ok("# comment\nseed = 7\n\nlambda=0.1\n");
  const auto cfg = io::RunConfig::parse(ok, {"seed", "lambda"});
  EXPECT_EQ(cfg.values().at("seed"), "7");
  EXPECT_EQ(cfg.values().at("lambda"), "0.1");
  std::istringstream unknown("seed=1\nbogus=2\n");
  EXPECT_THROW(io::RunConfig::parse(unknown, {"seed"}), ParseError);
  std::istringstream dup("seed=1\nseed=2\n");
  EXPECT_THROW(io::RunConfig::parse(dup, {"seed"}), ParseError);
  std::istringstream noeq("seed\n");
  EXPECT_THROW(io::RunConfig::parse(noeq, {"seed"}), ParseError);
  std::istringstream missing("conditions=/definitely/not/here.csv\n");
  EXPECT_THROW(io::RunConfig::parse(missing, {"conditions"}, {"conditions"}), ParseError);
}

TEST(NetworkExportFormat, ThresholdAndOrientation) {
  const auto net = io::export_network(sim::build_dag(), sim::response_names(), 0.2);
  ASSERT_EQ(net.edges.size(), 3u);
  for (const auto& e : net.edges) EXPECT_GE(std::abs(e.weight), net.threshold);
  EXPECT_EQ(net.edges[0].source, "X1");
  EXPECT_EQ(net.edges[0].target, "X2");
  EXPECT_EQ(net.edges[0].weight, 1.6);
  EXPECT_EQ(net.edges[2].source, "X3");
  EXPECT_EQ(net.edges[2].target, "X4");

  // W-form input is converted: the -1 diagonal vanishes.
  const auto from_w = io::export_network(dag_to_w(sim::build_dag()), sim::response_names(), 0.2);
  ASSERT_EQ(from_w.edges.size(), 3u);
  EXPECT_NEAR(from_w.edges[1].weight, 1.2, 1e-15);

  Matrix slow_decay = -Matrix::Identity(2, 2);
  slow_decay(0, 0) = -0.5;
  EXPECT_TRUE(io::export_network(w_form(slow_decay), {"a", "b"}, 0.2).edges.empty());
  Matrix self_loop = Matrix::Zero(2, 2);
  self_loop(0, 0) = 0.5;
  EXPECT_EQ(io::export_network(a_form(self_loop), {"a", "b"}, 0.2).edges.size(), 1u);

  Matrix small = Matrix::Zero(2, 2);
  small(1, 0) = 0.19;
  EXPECT_TRUE(io::export_network(a_form(small), {"a", "b"}, 0.2).edges.empty());
  EXPECT_THROW(io::export_network(a_form(small), {"a"}, 0.2), DimensionError);
}

TEST(NetworkExportFormat, CsvAndDot) {
  const auto net = io::export_network(sim::build_dag(), sim::response_names());
  std::ostringstream csv, dot;
  io::write_network_csv(csv, net);
  io::write_network_dot(dot, net, "sim");
  EXPECT_EQ(csv.str().substr(0, 21), "source,target,weight\n");
  EXPECT_NE(csv.str().find("X1,X2,1.6"), std::string::npos);
  EXPECT_NE(dot.str().find("digraph \"sim\""), std::string::npos);
  EXPECT_NE(dot.str().find("\"X3\" -> \"X4\""), std::string::npos);
}

TEST(JsonReports, FitAndMetricShapes) {
  FitReport fr;
  fr.final_objective = 1.5;
  fr.objective_trace = {3.0, 1.5};
  const auto j = io::to_json(fr);
  EXPECT_EQ(j["objective_trace"].size(), 2u);
  EXPECT_EQ(j["converged"], false);

  MetricReport mr;
  mr.mae = 0.1;
  mr.per_response_r = {0.5, std::nullopt};
  const auto jm = io::to_json(mr);
  EXPECT_TRUE(jm["pearson_r"].is_null());
  EXPECT_TRUE(jm["per_response_r"][1].is_null());

  std::ostringstream scatter;
  io::write_scatter_csv(scatter, {{1, 0, 0.25, 0.5}}, {"c1", "c2"}, {"x"});
  EXPECT_EQ(scatter.str(), "condition,response,observed,predicted\nc2,x,0.25,0.5\n");
}
