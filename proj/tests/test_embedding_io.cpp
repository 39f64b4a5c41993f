// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "support.hpp"

using namespace metaseq;
namespace mt = metaseq::testing;

namespace {

StaticEmbeddingTable parse_static(const std::string& text) {
  std::istringstream in(text);
  return read_static_text(in, "vectors.txt");
}

ContextualLayerFile random_layer(std::uint32_t layer, std::uint32_t dim, std::vector<std::uint32_t> lengths,
                                 std::uint64_t seed) {
  RngStream rng(seed, 0);
  ContextualLayerFile f(layer, dim);
  for (std::uint32_t s = 0; s < lengths.size(); ++s) {
    std::vector<double> rows(lengths[s] * dim);
    for (auto& v : rows) v = static_cast<float>(rng.normal());
    f.add(s, rows, lengths[s]);
  }
  return f;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kUsage;
}

}  // namespace

TEST(StaticText, MinimalFileAndOov) {
  const auto t = parse_static("a 1.0 2.0\nb 3.0 4.0\n");
  EXPECT_EQ(t.dimension(), 2u);
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.lookup("b")[1], 4.0);
  const auto oov = t.lookup("zzz");
  ASSERT_EQ(oov.size(), 2u);
  EXPECT_EQ(oov[0], 0.0);
  EXPECT_EQ(oov[1], 0.0);
}

TEST(StaticText, LengthMismatchReportsLine) {
  try {
    parse_static("a 1.0 2.0\nb 3.0 4.0\nc 1.0\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

TEST(StaticText, NonNumericFieldAndDuplicates) {
  EXPECT_EQ(kind_of([] { parse_static("a 1.0 x\n"); }), ErrorKind::kParse);
  const auto t = parse_static("a 1 2\na 9 9\n");
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(t.lookup("a")[0], 1.0);
}

TEST(StaticText, WriteReadRoundTrip) {
  const auto t = parse_static("x 0.1 -2.5 3\ny 1e-3 4 5\n");
  std::ostringstream out;
  write_static_text(out, t);
  const auto back = parse_static(out.str());
  ASSERT_EQ(back.tokens(), t.tokens());
  for (const auto& tok : t.tokens())
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back.lookup(tok)[i], t.lookup(tok)[i]);
}

TEST(Contextual, RoundTripIsBitwise) {
  const auto f = random_layer(17, 6, {3, 1, 4}, 5);
  const auto back = decode_contextual(encode_contextual(f));
  EXPECT_EQ(back.layer_index(), 17u);
  EXPECT_EQ(back.dimension(), 6u);
  ASSERT_EQ(back.sentence_count(), 3u);
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& a = f.sentences()[s].values;
    const auto& b = back.sentences()[s].values;
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0);
  }
  EXPECT_EQ(encode_contextual(back), encode_contextual(f));
}

TEST(Contextual, RoundTripThroughDisk) {
  const auto dir = mt::scratch_dir("contextual_disk");
  const auto f = random_layer(3, 4, {2, 2}, 9);
  write_contextual((dir / "l3.cemb").string(), f);
  EXPECT_EQ(encode_contextual(load_contextual((dir / "l3.cemb").string())), encode_contextual(f));
}

TEST(Contextual, EmptyContainerIsValid) {
  const auto back = decode_contextual(encode_contextual(ContextualLayerFile(1, 1024)));
  EXPECT_EQ(back.sentence_count(), 0u);
  EXPECT_EQ(back.dimension(), 1024u);
}

TEST(Contextual, HeaderLayout) {
  const auto bytes = encode_contextual(random_layer(2, 3, {1}, 1));
  ASSERT_EQ(bytes.size(), 20u + 8u + 12u);
  EXPECT_EQ(bytes.substr(0, 4), "CEMB");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);  // version, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);  // layer index
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 3);  // dimension
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 1);  // sentence count
}

TEST(Contextual, CorruptionKinds) {
  const auto good = encode_contextual(random_layer(1, 4, {2, 3}, 2));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(kind_of([&] { decode_contextual(bad_magic); }), ErrorKind::kFormat);
  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_EQ(kind_of([&] { decode_contextual(bad_version); }), ErrorKind::kFormat);
  EXPECT_EQ(kind_of([&] { decode_contextual(good.substr(0, good.size() - 3)); }), ErrorKind::kIo);
  EXPECT_EQ(kind_of([&] { decode_contextual(good.substr(0, 30)); }), ErrorKind::kIo);
  EXPECT_EQ(kind_of([&] { decode_contextual(good + "abcd"); }), ErrorKind::kFormat);
}

TEST(Contextual, RowShorterThanHeaderDimensionIsFormatError) {
  // header says 1024 dims; the only sentence carries 1000 floats
  std::string bytes("CEMB", 4);
  for (std::uint32_t v : {1u, 1u, 1024u, 1u, 0u, 1u}) detail::put_u32(bytes, v);
  for (int i = 0; i < 1000; ++i) detail::put_u32(bytes, std::bit_cast<std::uint32_t>(0.5f));
  EXPECT_EQ(kind_of([&] { decode_contextual(bytes); }), ErrorKind::kFormat);
}

TEST(Contextual, MissingFileIsIoError) {
  EXPECT_EQ(kind_of([] { load_contextual("/nonexistent/layer.cemb"); }), ErrorKind::kIo);
}

TEST(Channels, ParseAndNormaliseOrder) {
  EXPECT_EQ(channels_string(parse_channels("GEB")), "GEB");
  EXPECT_EQ(channels_string(parse_channels("b,g")), "GB");
  EXPECT_EQ(kind_of([] { parse_channels("GQ"); }), ErrorKind::kParse);
}

TEST(StackChannels, ShapesAndMismatch) {
  Tape tape;
  RngStream rng(1, 1);
  std::vector<Tensor> three;
  for (int i = 0; i < 3; ++i) three.push_back(mt::random_tensor({5, 1024}, rng, false));
  const auto s = stack_channels(tape, three, {Channel::kGlove, Channel::kElmo, Channel::kBert});
  EXPECT_EQ(s.values.shape(), Shape({3, 5, 1024}));
  const auto one = stack_channels(tape, {three[0]}, {Channel::kBert});
  EXPECT_EQ(one.values.shape(), Shape({1, 5, 1024}));
  EXPECT_EQ(kind_of([&] {
              stack_channels(tape, {Tensor::zeros({5, 4}), Tensor::zeros({6, 4})}, {Channel::kElmo, Channel::kBert});
            }),
            ErrorKind::kDimension);
}

TEST(StackChannels, UnstackInvertsStack) {
  Tape tape;
  RngStream rng(2, 2);
  std::vector<Tensor> mats;
  for (int i = 0; i < 3; ++i) mats.push_back(mt::random_tensor({4, 7}, rng, false));
  const auto back = unstack(stack_channels(tape, mats, {Channel::kGlove, Channel::kElmo, Channel::kBert}));
  ASSERT_EQ(back.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(back[i].values(), mats[i].values());
}

TEST(ProjectStatic, ZeroMapShapeAndBasisVector) {
  Tape tape;
  const std::vector<double> e1 = [] {
    std::vector<double> v(300, 0.0);
    v[0] = 1.0;
    return v;
  }();
  const Tensor zero = project_static(tape, e1, Tensor::zeros({1024, 300}), Tensor::zeros({1024}));
  EXPECT_EQ(zero.shape(), Shape({1024}));
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);

  std::vector<double> w(1024 * 300, 0.0);
  for (std::size_t i = 0; i < 300; ++i) w[i * 300 + i] = 1.0;  // identity padded with zero rows
  const Tensor out = project_static(tape, e1, Tensor::matrix(1024, 300, w), Tensor::zeros({1024}));
  for (std::size_t i = 0; i < 1024; ++i) EXPECT_EQ(out[i], i == 0 ? 1.0 : 0.0);

  EXPECT_EQ(kind_of([&] { project_static(tape, e1, Tensor::zeros({1024, 299}), Tensor::zeros({1024})); }),
            ErrorKind::kDimension);
}

TEST(ProjectStatic, AffineIdentity) {
  // f(ax + by) = a f(x) + b f(y) - (a + b - 1) bias
  RngStream rng(4, 4);
  const Tensor w = mt::random_tensor({6, 4}, rng, false), b = mt::random_tensor({6}, rng, false);
  const Tensor x = mt::random_tensor({4}, rng, false), y = mt::random_tensor({4}, rng, false);
  const double alpha = 1.7, beta = -0.4;
  std::vector<double> mix(4);
  for (int i = 0; i < 4; ++i) mix[i] = alpha * x[i] + beta * y[i];
  Tape tape;
  const Tensor fm = project_static(tape, mix, w, b);
  const Tensor fx = project_static(tape, x.values(), w, b), fy = project_static(tape, y.values(), w, b);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(fm[i], alpha * fx[i] + beta * fy[i] - (alpha + beta - 1.0) * b[i], 1e-10);
}

TEST(BuildGpa, LengthOrderAndRange) {
  const std::vector<double> glove(300, 0.25);
  const auto hot = pos_one_hot("VERB", PosVocabulary::universal());
  EXPECT_EQ(build_gpa(glove, hot, 0.3).size(), 318u);

  const auto zeros = build_gpa(std::vector<double>(3, 0.0), std::vector<double>(2, 0.0), 0.0);
  for (double v : zeros) EXPECT_EQ(v, 0.0);

  const PosVocabulary small({"NOUN", "VERB", "ADJ"}, "NOUN");
  const auto gpa = build_gpa(std::vector<double>{9.0}, pos_one_hot("VERB", small), 0.75);
  EXPECT_EQ(gpa, (std::vector<double>{9.0, 0.0, 1.0, 0.0, 0.75}));

  EXPECT_EQ(kind_of([] { build_gpa(std::vector<double>{1.0}, std::vector<double>{1.0}, 1.5); }), ErrorKind::kRange);
  EXPECT_EQ(kind_of([] { build_gpa(std::vector<double>{1.0}, std::vector<double>{1.0}, -0.01); }), ErrorKind::kRange);
}
