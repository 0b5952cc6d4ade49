#include <gtest/gtest.h>

#include <cmath>

#include "lcnet/analysis.hpp"
#include "oracles.hpp"

using namespace lcnet;

namespace {
LCNetConfig at_scale(double s) {
  LCNetConfig c;
  c.scale = s;
  return c;
}
}  // namespace

TEST(CountParams, StemConv) {
  const Network net = build_network(at_scale(1.0));
  EXPECT_EQ(layer_params(net.layers.front()), 432);
  EXPECT_EQ(layer_macs(net.layers.front(), 224, 224), 5419008);
}

TEST(CountParams, MatchesHandCountAcrossScalesAndMasks) {
  const char *se_masks[] = {"0000000000011", "1111111111111", "1100000000000", "0000000000000"};
  const char *k_masks[] = {"0000001111111", "1111111000000", "0000000000000", "1111111111111"};
  for (double s : {0.25, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5})
    for (const char *se : se_masks)
      for (const char *km : k_masks) {
        LCNetConfig c = at_scale(s);
        c.se_mask = se;
        c.kernel_mask = km;
        const Network net = build_network(c);
        const auto ref = oracle::lcnet_cost(s, se, km, 1000, 224);
        EXPECT_EQ(count_params(net), ref.params) << s << " " << se << " " << km;
        EXPECT_EQ(count_macs(net, 224, 224), ref.macs) << s << " " << se << " " << km;
      }
}

TEST(CountParams, EqualsAllocatedTrainableElements) {
  for (double s : {0.25, 1.0, 2.0}) {
    const Model m = build_model(at_scale(s), 0);
    std::int64_t allocated = 0;
    for (const auto &info : m.network.params())
      if (!info.is_buffer()) allocated += static_cast<std::int64_t>(m.params.at(info.name).size());
    EXPECT_EQ(count_params(m), allocated);
  }
}

TEST(CountParams, ReportedScales) {
  const double params_m[] = {1.5, 1.6, 1.9, 2.4, 3.0, 4.5, 6.5, 9.0};
  const double macs_m[] = {18, 29, 47, 99, 161, 342, 590, 906};
  const double scales[] = {0.25, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5};
  for (int i = 0; i < 8; ++i) {
    const Network net = build_network(at_scale(scales[i]));
    const double p = count_params(net) / 1e6, f = count_macs(net, 224, 224) / 1e6;
    EXPECT_LE(std::fabs(p - params_m[i]) / params_m[i], 0.05) << scales[i] << "x params " << p;
    EXPECT_LE(std::fabs(f - macs_m[i]) / macs_m[i], 0.10) << scales[i] << "x macs " << f;
  }
}

TEST(CountParams, MonotoneInScaleAndSE) {
  std::int64_t prev_p = 0, prev_m = 0;
  for (double s = 0.25; s <= 2.5; s += 0.05) {
    const Network net = build_network(at_scale(s));
    const auto p = count_params(net), m = count_macs(net, 224, 224);
    EXPECT_GE(p, prev_p) << s;
    EXPECT_GE(m, prev_m) << s;
    prev_p = p;
    prev_m = m;
  }
  for (int bit = 0; bit < 13; ++bit) {
    LCNetConfig a, b;
    a.se_mask = "0000000000000";
    b.se_mask = a.se_mask;
    b.se_mask[bit] = '1';
    EXPECT_GT(count_params(build_network(b)), count_params(build_network(a)));
    EXPECT_GT(count_macs(build_network(b), 224, 224), count_macs(build_network(a), 224, 224));
  }
}

TEST(CountMacs, IndependentOfBatchAndScalesWithInput) {
  const Network net = build_network(at_scale(1.0));
  // Convs scale with spatial area; SE and FC do not.
  const auto m224 = count_macs(net, 224, 224), m448 = count_macs(net, 448, 448);
  EXPECT_GT(m448, 3 * m224);
  EXPECT_LT(m448, 4 * m224);
}

TEST(Summarize, RowsAndShapes) {
  const auto rep = summarize(at_scale(1.0), 224, 224);
  ASSERT_EQ(rep.rows.size(), 17u);
  EXPECT_EQ(rep.rows[0].layer, "stem");
  EXPECT_EQ(rep.rows[0].out_shape, Dims({1, 16, 112, 112}));
  for (int b = 1; b <= 13; ++b) EXPECT_EQ(rep.rows[b].layer, "blocks." + std::to_string(b));
  EXPECT_EQ(rep.rows[13].out_shape, Dims({1, 512, 7, 7}));
  EXPECT_EQ(rep.rows[14].layer, "gap");
  EXPECT_EQ(rep.rows[14].out_shape, Dims({1, 512, 1, 1}));
  EXPECT_EQ(rep.rows[15].layer, "last_conv");
  EXPECT_EQ(rep.rows[15].out_shape, Dims({1, 1280, 1, 1}));
  EXPECT_EQ(rep.rows[16].layer, "fc");
  EXPECT_EQ(rep.rows[16].out_shape, Dims({1, 1000}));

  std::int64_t p = 0, m = 0;
  for (const auto &r : rep.rows) {
    p += r.params;
    m += r.macs;
  }
  EXPECT_EQ(rep.total_params, p);
  EXPECT_EQ(rep.total_macs, m);
  const Network net = build_network(at_scale(1.0));
  EXPECT_EQ(rep.total_params, count_params(net));
  EXPECT_EQ(rep.total_macs, count_macs(net, 224, 224));
}

TEST(Summarize, MaskMonotonicity) {
  LCNetConfig all_se, no_large;
  all_se.se_mask = "1111111111111";
  no_large.kernel_mask = "0000000000000";
  const auto base = summarize(LCNetConfig{}, 224, 224).total_macs;
  EXPECT_GT(summarize(all_se, 224, 224).total_macs, base);
  EXPECT_LT(summarize(no_large, 224, 224).total_macs, base);
}

TEST(Summarize, TextAndCsv) {
  const auto rep = summarize(at_scale(1.0), 224, 224);
  const std::string csv = rep.to_csv();
  EXPECT_EQ(csv.rfind("layer,out_shape,params,macs\n", 0), 0u);
  EXPECT_NE(csv.find("stem,1x16x112x112,464,5419008\n"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 18);
  const std::string text = rep.to_text();
  EXPECT_NE(text.find("params: 2.95M"), std::string::npos) << text;
  EXPECT_NE(text.find("macs: 156M"), std::string::npos) << text;
}

TEST(FormatMillions, ThreeSignificantDigits) {
  EXPECT_EQ(format_millions(2953800), "2.95M");
  EXPECT_EQ(format_millions(155700480), "156M");
  EXPECT_EQ(format_millions(18000000), "18M");
}
