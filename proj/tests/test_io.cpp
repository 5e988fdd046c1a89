#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "dwpnp/io.hpp"
#include "test_util.hpp"

namespace dwpnp {
namespace {

TEST(Io, PointRoundTripIsExact) {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  PointSet3D p;
  for (int i = 0; i < 200; ++i) {
    p.points.emplace_back(u(rng), u(rng) * 1e-7, u(rng) * 1e9);
    p.labels.push_back(i % 3 == 0 ? 1 : 0);
  }
  std::stringstream ss;
  write_points3d(ss, p, {"generated"});
  const PointSet3D q = parse_points3d(ss);
  EXPECT_EQ(q.points, p.points);
  EXPECT_EQ(q.labels, p.labels);

  PointSet2D t;
  for (int i = 0; i < 50; ++i) t.emplace_back(u(rng), u(rng));
  std::stringstream s2;
  write_points2d(s2, t);
  EXPECT_EQ(parse_points2d(s2), t);
}

TEST(Io, CommentsAndBlankLinesSkipped) {
  std::istringstream in("# header\n\n1 2 3   # trailing\n\t4 5 6\r\n");
  const auto p = parse_points3d(in);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[1], Vec3(4, 5, 6));
  EXPECT_FALSE(p.has_labels());
}

TEST(Io, ParseErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& text, bool three_d) -> std::size_t {
    std::istringstream in(text);
    try {
      if (three_d) {
        parse_points3d(in, "f");
      } else {
        parse_points2d(in, "f");
      }
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("1 2 3\n# c\n1 2 x\n", true), 3u);
  EXPECT_EQ(line_of("1 2 3\n1 2\n", true), 2u);
  EXPECT_EQ(line_of("1 2 3 1\n1 2 3\n", true), 2u);
  EXPECT_EQ(line_of("1 2 3 1.5\n", true), 1u);
  EXPECT_EQ(line_of("1 nan 3\n", true), 1u);
  EXPECT_EQ(line_of("1 2\n3 4 5\n", false), 2u);
}

TEST(Io, CsvWriter) {
  std::ostringstream out;
  CsvWriter csv(out, {"a", "b", "c"});
  csv.cell("x,y").cell(0.5).cell(std::size_t{3});
  csv.end_row();
  EXPECT_EQ(out.str(), "a,b,c\n\"x,y\",0.5,3\n");
  csv.cell(1.0);
  EXPECT_THROW(csv.end_row(), Error);
}

TEST(Io, FormatDouble) {
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(format_double(2.0), "2");
  EXPECT_EQ(format_double(std::numeric_limits<double>::quiet_NaN()), "nan");
}

TEST(Io, PoseJsonRoundTrip) {
  std::mt19937_64 rng(72);
  for (int k = 0; k < 20; ++k) {
    const Pose T = exp_map(test::random_twist(rng, 5.0, 2.0));
    const Json j = Json::parse(pose_to_json(T).dump());
    const Pose back = pose_from_json(j);
    EXPECT_EQ(back.matrix(), T.matrix());
    Json tw;
    tw["twist"] = j["twist"];
    EXPECT_LT((pose_from_json(tw).matrix() - T.matrix()).cwiseAbs().maxCoeff(), 1e-9);
  }
  EXPECT_THROW(pose_from_json(Json::object()), ConfigError);
}

TEST(Io, PoseOnCutLocusHasNullTwist) {
  Vec6 xi = Vec6::Zero();
  xi[3] = kPi;
  EXPECT_TRUE(pose_to_json(exp_map(xi))["twist"].is_null());
}

TEST(Io, CameraJsonRoundTrip) {
  const auto K = test::test_camera();
  const auto back = camera_from_json(camera_to_json(K));
  EXPECT_EQ(back.fx, K.fx);
  EXPECT_EQ(back.height, K.height);
  EXPECT_THROW(camera_from_json(Json{{"fx", 1}}), std::exception);
}

TEST(Io, JsonKeyOrderIsStable) {
  MetricsReport m;
  const std::string s = metrics_to_json(m, false).dump();
  EXPECT_LT(s.find("mean_pr"), s.find("gfr"));
  EXPECT_EQ(s.find("runtime_ms"), std::string::npos);
  EXPECT_NE(metrics_to_json(m, true).dump().find("runtime_ms"), std::string::npos);
}

}  // namespace
}  // namespace dwpnp
