#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "lcnet/random.hpp"
#include "lcnet/weights_io.hpp"

using namespace lcnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string &name) {
  return fs::temp_directory_path() / ("lcnet_test_" + std::to_string(::getpid()) + "_" + name);
}

LCNetConfig small() {
  LCNetConfig c;
  c.scale = 0.25;
  c.num_classes = 10;
  return c;
}

void put_u32(std::vector<std::uint8_t> &b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

// Hand-assembled container, independent of the encoder.
std::vector<std::uint8_t> handmade(const std::string &name, std::vector<std::uint32_t> dims,
                                   std::vector<float> payload, std::uint8_t dtype = 0) {
  std::vector<std::uint8_t> b = {'L', 'C', 'N', 'W'};
  put_u32(b, 1);
  put_u32(b, 1);
  put_u32(b, static_cast<std::uint32_t>(name.size()));
  b.insert(b.end(), name.begin(), name.end());
  b.push_back(dtype);
  b.push_back(static_cast<std::uint8_t>(dims.size()));
  for (auto d : dims) put_u32(b, d);
  for (float f : payload) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(b, u);
  }
  return b;
}

template <typename F>
std::uint64_t corrupt_offset(F &&f) {
  try {
    f();
  } catch (const CorruptFile &e) {
    return e.offset();
  }
  ADD_FAILURE() << "expected CorruptFile";
  return ~0ull;
}

}  // namespace

TEST(Init, DeterministicPerSeed) {
  const Model a = build_model(small(), 5), b = build_model(small(), 5), c = build_model(small(), 6);
  for (const auto &[name, t] : a.params) EXPECT_TRUE(tensor_bit_equal(t, b.params.at(name))) << name;
  EXPECT_FALSE(tensor_bit_equal(a.param("stem.conv.weight"), c.param("stem.conv.weight")));
}

TEST(Init, ConstantsForBnAndBiases) {
  const Model m = build_model(small(), 1);
  for (const auto &[name, t] : m.params) {
    auto ends = [&](const char *s) { return name.ends_with(s); };
    float expect = -1;
    if (ends(".gamma") || ends(".running_var")) expect = 1.0f;
    else if (ends(".beta") || ends(".running_mean") || ends(".bias") || ends(".b1") || ends(".b2"))
      expect = 0.0f;
    if (expect < 0) continue;
    for (float v : t.values()) ASSERT_EQ(v, expect) << name;
  }
}

TEST(Init, ConvVarianceMatchesFanOut) {
  Network net;
  Layer l;
  l.kind = LayerKind::Conv;
  l.name = "probe";
  l.group = "probe";
  l.conv = ConvDesc::standard(16, 32, 3, 1);
  net.layers.push_back(l);
  ParamMap<float> p;
  init_params(net, p, 9);
  const Tensor &w = p.at("probe.weight");
  ASSERT_EQ(w.size(), 4608u);
  double s = 0, s2 = 0;
  for (float v : w.values()) {
    s += v;
    s2 += double(v) * v;
  }
  const double mean = s / 4608, var = s2 / 4608 - mean * mean;
  const double target = 2.0 / (32 * 9);
  EXPECT_LE(std::fabs(var - target) / target, 0.10) << var;
}

TEST(Init, FcAndDepthwiseStd) {
  LCNetConfig c = small();
  c.scale = 1.0;
  const Model m = build_model(c, 2);
  auto sample_std = [](const Tensor &t) {
    double s2 = 0;
    for (float v : t.values()) s2 += double(v) * v;
    return std::sqrt(s2 / t.size());
  };
  EXPECT_NEAR(sample_std(m.param("fc.weight")), 0.01, 0.0005);
  // Depthwise 5x5 over 512 channels: fan_out = 512 * 25 / 512.
  EXPECT_NEAR(sample_std(m.param("blocks.13.dw.weight")), std::sqrt(2.0 / 25), 0.02);
  EXPECT_NEAR(conv_init_std(ConvDesc::dw(512, 5, 1)), std::sqrt(2.0 / 25), 1e-12);
}

TEST(WeightFile, EncodesDocumentedLayout) {
  ParamMap<float> m;
  m.emplace("ab", Tensor({2}, std::vector<float>{1.5f, -2.0f}));
  EXPECT_EQ(encode_weights(m), handmade("ab", {2}, {1.5f, -2.0f}));
  const auto back = decode_weights(handmade("ab", {2}, {1.5f, -2.0f}));
  EXPECT_EQ(back.at("ab"), m.at("ab"));
}

TEST(WeightFile, ModelRoundTripBitExact) {
  for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
    Model m = build_model(small(), seed);
    // Include special values to prove the payload is copied, not reformatted.
    Tensor &b = m.params.at("fc.bias");
    b[0] = -0.0f;
    b[1] = std::numeric_limits<float>::denorm_min();
    b[2] = std::numeric_limits<float>::infinity();
    b[3] = std::nanf("0x123");
    const auto path = temp_path("model.lcnw");
    save_weights(m, path);
    const auto loaded = load_weights(path);
    fs::remove(path);
    ASSERT_EQ(loaded.size(), m.params.size());
    for (const auto &[name, t] : m.params) EXPECT_TRUE(tensor_bit_equal(t, loaded.at(name))) << name;
    Model fresh = build_model(small(), seed + 1000);
    assign_params(fresh, loaded);
    EXPECT_TRUE(tensor_bit_equal(fresh.param("fc.bias"), b));
  }
}

TEST(WeightFile, RandomTensorSetsRoundTrip) {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    ParamMap<float> m;
    const auto count = rng.below(6);
    for (std::uint64_t i = 0; i < count; ++i) {
      std::string name;
      for (auto len = 1 + rng.below(20); len > 0; --len) name += static_cast<char>(33 + rng.below(90));
      Dims d;
      for (auto r = 1 + rng.below(4); r > 0; --r) d.push_back(1 + static_cast<std::int64_t>(rng.below(5)));
      Tensor t(d);
      for (auto &v : t.values()) {
        const auto bits = static_cast<std::uint32_t>(rng.next());
        std::memcpy(&v, &bits, 4);
      }
      m[name] = t;
    }
    const auto bytes = encode_weights(m);
    const auto back = decode_weights(bytes);
    ASSERT_EQ(back.size(), m.size());
    for (const auto &[name, t] : m) EXPECT_TRUE(tensor_bit_equal(t, back.at(name)));
    EXPECT_EQ(encode_weights(back), bytes);
  }
}

TEST(WeightFile, CorruptionsReportOffsets) {
  auto good = handmade("w", {2, 2}, {1, 2, 3, 4});
  auto bad_magic = good;
  std::memcpy(bad_magic.data(), "XXXX", 4);
  EXPECT_EQ(corrupt_offset([&] { decode_weights(bad_magic); }), 0u);

  auto bad_version = good;
  bad_version[4] = 7;
  EXPECT_EQ(corrupt_offset([&] { decode_weights(bad_version); }), 4u);

  // header 12, name_len 4, name 1 -> dtype at 17
  EXPECT_EQ(corrupt_offset([&] { decode_weights(handmade("w", {2, 2}, {1, 2, 3, 4}, 3)); }), 17u);
  EXPECT_EQ(corrupt_offset([&] { decode_weights(handmade("w", {}, {})); }), 18u);
  EXPECT_EQ(corrupt_offset([&] { decode_weights(handmade("w", {2, 0}, {})); }), 23u);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(corrupt_offset([&] { decode_weights(trailing); }), good.size());

  auto truncated = good;
  truncated.resize(truncated.size() - 1);
  try {
    decode_weights(truncated);
    FAIL();
  } catch (const CorruptFile &e) {
    EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos) << e.what();
  }

  // Two tensors with the same name.
  std::vector<std::uint8_t> dup = {'L', 'C', 'N', 'W'};
  put_u32(dup, 1);
  put_u32(dup, 2);
  for (int i = 0; i < 2; ++i) {
    auto one = handmade("same", {1}, {0.5f});
    dup.insert(dup.end(), one.begin() + 12, one.end());
  }
  // first entry: name_len 4 + "same" 4 + dtype 1 + ndim 1 + dim 4 + payload 4 = 18 bytes
  EXPECT_EQ(corrupt_offset([&] { decode_weights(dup); }), 12u + 18 + 4);
}

TEST(WeightFile, FuzzNeverCrashesAndAlwaysLocates) {
  const auto base = encode_weights(build_model(small(), 3).params);
  Rng rng(1);
  int must_reject = 0, rejected_of_those = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    auto b = base;
    switch (trial % 4) {
      case 0:  // truncate
        b.resize(rng.below(b.size()));
        break;
      case 1:  // flip bytes, biased toward the header region
        for (int k = 0; k < 4; ++k) {
          const auto span = std::min<std::size_t>(b.size(), 64 + rng.below(b.size()));
          b[rng.below(span)] ^= static_cast<std::uint8_t>(1 + rng.below(255));
        }
        break;
      case 2:  // random garbage
        b.resize(rng.below(256));
        for (auto &x : b) x = static_cast<std::uint8_t>(rng.next());
        break;
      case 3:  // huge length fields
        b[12 + rng.below(8)] = 0xff;
        break;
    }
    // Truncations and garbage can never decode; flips and length edits may.
    const bool must = trial % 4 == 0 || trial % 4 == 2;
    must_reject += must;
    try {
      (void)decode_weights(b);
    } catch (const CorruptFile &e) {
      rejected_of_those += must;
      EXPECT_LE(e.offset(), b.size());
    }
  }
  EXPECT_EQ(rejected_of_those, must_reject);
}

TEST(TensorFile, RoundTripAndEmpty) {
  Tensor t({1, 3, 224, 224});
  Rng rng(2);
  for (auto &v : t.values()) v = static_cast<float>(rng.normal());
  const auto path = temp_path("x.lct");
  save_tensor(t, path);
  EXPECT_TRUE(tensor_bit_equal(load_tensor(path), t));
  save_tensor(Tensor({1, 1000}, 0.25f), path);
  EXPECT_EQ(load_tensor(path).dims(), Dims({1, 1000}));
  fs::remove(path);

  EXPECT_THROW(decode_tensor({}), CorruptFile);
  EXPECT_THROW(decode_tensor(handmade("other", {1}, {1.0f})), CorruptFile);
  try {
    load_tensor(temp_path("missing.lct"));
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), Errc::IoError);
  }
}
