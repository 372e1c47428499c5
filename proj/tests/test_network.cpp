#include <gtest/gtest.h>

#include <cstring>

#include "lumafuse/network.hpp"
#include "lumafuse/synthetic.hpp"
#include "oracles.hpp"

using namespace lumafuse;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

Image quantized(const Image& img) { return load_ppm(save_ppm(img)); }

// Frozen from tests/oracles/net_reference.py run on the weights and images
// below (files written by the library, read back by the numpy reference).
constexpr std::uint32_t kEncoder7Crc = 0xd6cc1eb5;
constexpr std::uint32_t kDetail8Crc = 0x92e9e438;
constexpr double kEncoderGolden[6] = {1.1431340409174262, 1.3890049970450469, 1.28608097715356,
                                      1.1894677368734823, 0.47421842071319376, 2.5203888959610312};

std::uint32_t stored_crc(const Bytes& file) {
  std::uint32_t crc;
  std::memcpy(&crc, file.data() + file.size() - 4, 4);
  return crc;
}

}  // namespace

TEST(Conv2d, OnesKernelCountsNeighbours) {
  const Tensor x({1, 3, 3}, std::vector<float>(9, 1.0f));
  const Tensor w({1, 1, 3, 3}, std::vector<float>(9, 1.0f));
  const Tensor out = conv2d(x, w, Tensor({1}));
  EXPECT_EQ(out.shape(), (std::vector<std::size_t>{1, 3, 3}));
  EXPECT_EQ(out[4], 9.0f);
  EXPECT_EQ(out[0], 4.0f);
  EXPECT_EQ(out[8], 4.0f);
  EXPECT_EQ(out[1], 6.0f);
}

TEST(Conv2d, CentreTapIsIdentity) {
  Rng rng(1);
  const Tensor x = random_tensor({1, 6, 5}, rng);
  Tensor w({1, 1, 3, 3});
  w[4] = 1.0f;
  EXPECT_EQ(conv2d(x, w, Tensor({1})), x);
}

TEST(Conv2d, MatchesNaiveOracleExactly) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t C = 1 + rng.bits() % 4, O = 1 + rng.bits() % 4;
    const std::size_t H = 1 + rng.bits() % 7, W = 1 + rng.bits() % 7;
    const Tensor x = random_tensor({C, H, W}, rng);
    const Tensor w = random_tensor({O, C, 3, 3}, rng);
    const Tensor b = random_tensor({O}, rng);
    EXPECT_EQ(conv2d(x, w, b), oracle::naive_conv2d(x, w, b));
  }
}

TEST(Conv2d, StridedAndUnpaddedMatchOracle) {
  Rng rng(3);
  const Tensor x = random_tensor({2, 9, 8}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor b = random_tensor({3}, rng);
  EXPECT_EQ(conv2d(x, w, b, 2, 1), oracle::naive_conv2d(x, w, b, 2, 1));
  EXPECT_EQ(conv2d(x, w, b, 1, 0), oracle::naive_conv2d(x, w, b, 1, 0));
  EXPECT_EQ(conv2d(x, w, b, 3, 0), oracle::naive_conv2d(x, w, b, 3, 0));
}

TEST(Conv2d, ShapeErrorsNameTheDimension) {
  Rng rng(4);
  const Tensor x = random_tensor({2, 4, 4}, rng);
  try {
    conv2d(x, random_tensor({1, 3, 3, 3}, rng), Tensor({1}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("in-channels"), std::string::npos);
  }
  EXPECT_THROW(conv2d(x, random_tensor({2, 2, 3, 3}, rng), Tensor({3})), ShapeError);
  EXPECT_THROW(conv2d(Tensor({4, 4}), random_tensor({1, 1, 3, 3}, rng), Tensor({1})), ShapeError);
}

TEST(MaxPool, Examples) {
  Rng rng(5);
  const Tensor x = random_tensor({1, 3, 3}, rng);
  const Tensor g = max_pool(x);
  ASSERT_EQ(g.shape(), (std::vector<std::size_t>{1, 1, 1}));
  EXPECT_EQ(g[0], *std::max_element(x.values().begin(), x.values().end()));

  const Tensor flat({2, 7, 7}, std::vector<float>(98, 0.25f));
  const Tensor pf = max_pool(flat);
  EXPECT_EQ(pf.shape(), (std::vector<std::size_t>{2, 3, 3}));
  for (float v : pf.values()) EXPECT_EQ(v, 0.25f);

  std::vector<float> ramp(25);
  for (int i = 0; i < 25; ++i) ramp[i] = static_cast<float>(i);
  const Tensor pr = max_pool(Tensor({1, 5, 5}, ramp));
  EXPECT_EQ(pr.values(), (std::vector<float>{12, 14, 22, 24}));

  EXPECT_THROW(max_pool(Tensor({1, 2, 5})), ShapeError);
}

TEST(BatchNorm, UnitStatisticsAreIdentity) {
  Rng rng(6);
  Tensor x = random_tensor({4, 3, 3}, rng);
  const Tensor before = x;
  const Tensor ones({4}, std::vector<float>(4, 1.0f));
  const Tensor var({4}, std::vector<float>(4, 1.0f - 1e-5f));
  batch_norm_inplace(x, ones, Tensor({4}), Tensor({4}), var);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(x[i], before[i]);
}

TEST(Weights, RoundTripIsBitExact) {
  for (const ArchSpec* spec : {&encoder_arch(), &detail_arch()}) {
    const WeightStore ws = random_weights(*spec, 99);
    const Bytes bytes = save_weights(ws);
    const WeightStore back = load_weights(bytes);
    EXPECT_EQ(back, ws);
    EXPECT_EQ(save_weights(back), bytes);
  }
}

TEST(Weights, SeededWeightsAreStable) {
  EXPECT_EQ(stored_crc(save_weights(random_weights(encoder_arch(), 7))), kEncoder7Crc);
  EXPECT_EQ(stored_crc(save_weights(random_weights(detail_arch(), 8))), kDetail8Crc);
}

TEST(Weights, HeaderLayout) {
  const Bytes b = save_weights(zero_weights(encoder_arch()));
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "NNW1");
  std::uint32_t count;
  std::memcpy(&count, b.data() + 4, 4);
  EXPECT_EQ(count, encoder_arch().layers.size());
  std::uint16_t name_len;
  std::memcpy(&name_len, b.data() + 8, 2);
  EXPECT_EQ(std::string(b.begin() + 10, b.begin() + 10 + name_len), "encoder.conv1.weight");
  EXPECT_EQ(b[10 + name_len], 4);  // rank
}

TEST(Weights, LoadErrors) {
  Bytes b = save_weights(random_weights(detail_arch(), 1));
  Bytes bad_magic = b;
  bad_magic[0] = 'X';
  EXPECT_THROW(load_weights(bad_magic), FormatError);

  Bytes flipped = b;
  flipped[100] ^= 0x01;
  try {
    load_weights(flipped);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("CRC"), std::string::npos);
  }

  EXPECT_THROW(load_weights(Bytes(b.begin(), b.begin() + 50)), FormatError);

  // A valid container whose shapes disagree with the architecture.
  std::map<std::string, Tensor> t;
  for (const auto& l : encoder_arch().layers) t.emplace(l.name, Tensor(l.shape));
  t["encoder.fc.bias"] = Tensor({7});
  EXPECT_THROW(WeightStore("encoder", t), ShapeError);
  t.erase("encoder.fc.bias");
  EXPECT_THROW(WeightStore("encoder", t), ShapeError);
}

TEST(Encoder, ZeroWeightsGiveSigmoidMidpoints) {
  const IspParams p = encoder_forward(synthetic::scene(64, 64, 1), zero_weights(encoder_arch()));
  EXPECT_DOUBLE_EQ(p.w_r, 1.25);
  EXPECT_DOUBLE_EQ(p.w_g, 1.25);
  EXPECT_DOUBLE_EQ(p.w_b, 1.25);
  EXPECT_DOUBLE_EQ(p.gamma, 1.65);
  EXPECT_DOUBLE_EQ(p.alpha, 0.5);
  EXPECT_DOUBLE_EQ(p.lambda, 2.5);
}

TEST(Encoder, SizeLimits) {
  const WeightStore w = zero_weights(encoder_arch());
  EXPECT_THROW(encoder_forward(Image::filled(62, 62, 0.5, 0.5, 0.5), w), ShapeError);
  EXPECT_THROW(encoder_forward(Image::filled(63, 62, 0.5, 0.5, 0.5), w), ShapeError);
  EXPECT_NO_THROW(encoder_forward(Image::filled(63, 63, 0.5, 0.5, 0.5), w));
  EXPECT_THROW(encoder_forward(Image::filled(64, 64, 0.5, 0.5, 0.5), zero_weights(detail_arch())),
               ShapeError);
}

TEST(Encoder, MatchesReferenceForwardPass) {
  const Image img = quantized(synthetic::scene(64, 64, 5));
  const IspParams p = encoder_forward(img, random_weights(encoder_arch(), 7));
  for (std::size_t i = 0; i < kIspParamCount; ++i) EXPECT_NEAR(p[i], kEncoderGolden[i], 1e-5) << i;
}

TEST(Detail, ZeroWeightsGiveZeroResidual) {
  const Raster r = detail_forward(synthetic::scene(9, 13, 2), zero_weights(detail_arch()));
  EXPECT_EQ(r.height, 9u);
  EXPECT_EQ(r.width, 13u);
  for (double v : r.values) EXPECT_EQ(v, 0.0);
}

TEST(Detail, ShapePreservedAndBounded) {
  const WeightStore w = random_weights(detail_arch(), 3);
  for (auto [h, wd] : {std::pair<std::size_t, std::size_t>{1, 1}, {2, 7}, {11, 4}}) {
    const Raster r = detail_forward(synthetic::uniform_noise(h, wd, h * wd), w);
    EXPECT_EQ(r.height, h);
    EXPECT_EQ(r.width, wd);
    EXPECT_EQ(r.channels, 3u);
    for (double v : r.values) EXPECT_LT(std::abs(v), 1.0);
  }
}

TEST(Detail, LargeWeightsStillInsideTanhRange) {
  WeightStore base = random_weights(detail_arch(), 4);
  std::map<std::string, Tensor> t = base.tensors();
  for (float& v : t["detail.conv_out.weight"].values()) v *= 50.0f;
  const Raster r = detail_forward(synthetic::scene(12, 12, 3), WeightStore("detail", t));
  for (double v : r.values) EXPECT_LE(std::abs(v), 1.0);
}

TEST(Detail, MatchesReferenceForwardPass) {
  const Raster r = detail_forward(quantized(synthetic::scene(16, 16, 6)), random_weights(detail_arch(), 8));
  double sum = 0.0, sumsq = 0.0;
  for (double v : r.values) {
    sum += v;
    sumsq += v * v;
  }
  EXPECT_NEAR(sum, 17.798796835296628, 1e-3);
  EXPECT_NEAR(sumsq, 7.8364307454106781, 1e-3);
  EXPECT_NEAR(r.at(0, 0, 0), 0.10386718351483815, 1e-5);
  EXPECT_NEAR(r.at(3, 7, 1), 0.13643930939223323, 1e-5);
  EXPECT_NEAR(r.at(8, 8, 2), -0.087801539241783175, 1e-5);
  EXPECT_NEAR(r.at(15, 15, 0), -0.033678613050634174, 1e-5);
  EXPECT_NEAR(r.at(15, 0, 1), -0.137793786668511, 1e-5);
}

TEST(Enhance, ZeroDetailEqualsPipeline) {
  const Image img = synthetic::scene(64, 64, 11);
  const WeightStore enc = random_weights(encoder_arch(), 12);
  const Image expected = apply_pipeline(img, encoder_forward(img, enc));
  EXPECT_EQ(enhance(img, enc, zero_weights(detail_arch())), expected);
}

TEST(Enhance, BlackInputGivesClampedResidual) {
  const Image black = Image::filled(64, 64, 0, 0, 0);
  const WeightStore det = random_weights(detail_arch(), 13);
  const Image out = enhance(black, random_weights(encoder_arch(), 14), det);
  const Raster r = detail_forward(black, det);
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    EXPECT_EQ(out.data()[i], std::clamp(r.values[i], 0.0, 1.0));
  }
}

TEST(Enhance, MatchesReferenceEndToEnd) {
  const Image low = quantized(synthetic::scaled(synthetic::scene(64, 64, 9), 0.3));
  const auto res = enhance_with_params(low, random_weights(encoder_arch(), 7), random_weights(detail_arch(), 8));
  const double golden_params[6] = {1.2433338710131361, 1.3361106140639079, 1.2967535671798773,
                                   1.3519859102472873, 0.46896357797103932, 2.6793717232979128};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(res.params[i], golden_params[i], 1e-5);
  EXPECT_NEAR(mean_value(res.output.data()), 0.06487046614899776, 1e-5);
  EXPECT_NEAR(res.output.at(0, 0, 0), 0.12369785842061276, 1e-4);
  EXPECT_NEAR(res.output.at(10, 20, 1), 0.084852919923136871, 1e-4);
  EXPECT_EQ(res.output.at(32, 32, 2), 0.0);
  EXPECT_NEAR(res.output.at(63, 63, 0), 0.025442579374421129, 1e-4);
}

TEST(Enhance, DeterministicAcrossRuns) {
  const Image img = synthetic::scene(64, 64, 15);
  const WeightStore enc = random_weights(encoder_arch(), 16), det = random_weights(detail_arch(), 17);
  EXPECT_EQ(enhance(img, enc, det), enhance(img, enc, det));
  EXPECT_EQ(enhance(img, enc, det, DetailInput::Enhanced), enhance(img, enc, det, DetailInput::Enhanced));
}

TEST(Enhance, WiringSwitchFeedsDetailNetTheIspOutput) {
  const Image img = synthetic::scene(64, 64, 18);
  const WeightStore enc = random_weights(encoder_arch(), 19), det = random_weights(detail_arch(), 20);
  const Image base = apply_pipeline(img, encoder_forward(img, enc));
  const Raster r = detail_forward(base, det);
  Raster sum = base.to_raster();
  for (std::size_t i = 0; i < sum.values.size(); ++i) sum.values[i] += r.values[i];
  EXPECT_EQ(enhance(img, enc, det, DetailInput::Enhanced), Image::clamped(sum));
}
