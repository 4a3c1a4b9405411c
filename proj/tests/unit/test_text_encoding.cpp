#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "vtc/errors.hpp"
#include "vtc/io.hpp"
#include "vtc/text.hpp"

using namespace vtc;

namespace {

using Tokens = std::vector<std::string>;

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.vocab_buckets = 64;
  c.embed_dim = 8;
  c.encoder_hidden = 12;
  c.sweeper_dim = 4;
  c.dropout_rate = 0.3;
  return c;
}

std::vector<std::uint8_t> le32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v >> 16),
          static_cast<std::uint8_t>(v >> 24)};
}

std::vector<std::uint8_t> vtcf_bytes(std::uint32_t frames, std::uint32_t dim, const std::vector<float>& payload) {
  std::vector<std::uint8_t> out{'V', 'T', 'C', 'F'};
  for (std::uint32_t v : {1u, frames, dim}) {
    const auto b = le32(v);
    out.insert(out.end(), b.begin(), b.end());
  }
  for (float f : payload) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    const auto b = le32(bits);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "vtc_unit_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize("A man driving a car"), (Tokens{"a", "man", "driving", "a", "car"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("Hello, world!  It's\tfine."), (Tokens{"hello", "world", "it", "s", "fine"}));
}

TEST(Tokenize, IdempotentOnCleanText) {
  for (const char* raw : {"a man driving a car", "The QUICK, brown fox; jumps!"}) {
    const Tokens once = tokenize(raw);
    std::string joined;
    for (const auto& t : once) joined += (joined.empty() ? "" : " ") + t;
    EXPECT_EQ(tokenize(joined), once);
  }
}

TEST(Tokenize, NeverProducesReservedTokens) {
  for (const char* raw : {"[CLS] x [SEP]", "[cls][sep]", "a[SEP]b"}) {
    for (const auto& t : tokenize(raw)) {
      EXPECT_NE(t, SpecialTokens::cls);
      EXPECT_NE(t, SpecialTokens::sep);
    }
  }
}

TEST(FeatureHashing, GoldenBuckets) {
  // Independently computed seeded FNV-1a values.
  EXPECT_EQ(fnv1a64("cat", 7), 0x4277c63dffc15796ULL);
  EXPECT_EQ(hash_bucket("cat", 4096, 7), 1942u);
  EXPECT_EQ(hash_bucket("dog", 4096, 7), 3280u);
  EXPECT_EQ(hash_bucket("a", 4096, 7), 969u);
}

TEST(FeatureHashing, CountsAreSortedAndTotalTokenCount) {
  const auto counts = bucket_counts({"a", "cat", "a", "dog"}, 4096, 7);
  ASSERT_EQ(counts.size(), 3u);
  double total = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (i) { EXPECT_LT(counts[i - 1].first, counts[i].first); }
    total += counts[i].second;
  }
  EXPECT_EQ(total, 4.0);
  EXPECT_EQ(counts[0], (std::pair<std::size_t, double>{969, 2.0}));
}

TEST(TextEncoder, OutputHasEmbedDim) {
  TextEncoder enc("enc", small_encoder(), 3);
  EXPECT_EQ(enc.embed(make_text_item("x", "a cat sits", "v")).cols(), 8u);
  EXPECT_EQ(enc.embed(make_text_item("x", "a cat sits", "v")).rows(), 1u);
}

TEST(TextEncoder, EmptyTokensRejected) {
  TextEncoder enc("enc", small_encoder(), 3);
  EXPECT_THROW(enc.embed(make_text_item("x", " ,. ", "v")), DegenerateInputError);
}

TEST(TextEncoder, DeterministicGivenSeed) {
  TextEncoder a("enc", small_encoder(), 3);
  TextEncoder b("enc", small_encoder(), 3);
  const TextItem item = make_text_item("x", "a dog runs on the grass", "v");
  EXPECT_EQ(a.embed(item), b.embed(item));
  Tape t1, t2;
  EXPECT_EQ(a.encode(t1, item, 11).value(), b.encode(t2, item, 11).value());
}

TEST(TextEncoder, DropoutSeedsGiveDifferentVectors) {
  TextEncoder enc("enc", small_encoder(), 3);
  const TextItem item = make_text_item("x", "a dog runs on the grass", "v");
  Tape tape;
  const Matrix a = enc.encode(tape, item, 1).value();
  const Matrix b = enc.encode(tape, item, 2).value();
  EXPECT_NE(a, b);
}

TEST(TextEncoder, TokenDropoutKeepsAtLeastOneToken) {
  EncoderConfig c = small_encoder();
  c.token_dropout = 0.9;
  TextEncoder enc("enc", c, 3);
  const TextItem item = make_text_item("x", "solo", "v");
  Tape tape;
  for (Seed s = 0; s < 50; ++s) EXPECT_TRUE(enc.encode(tape, item, s).value().all_finite());
}

TEST(EncoderConfig, HeadDivisibility) {
  EncoderConfig c = small_encoder();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SampleFrames, Examples) {
  using Idx = std::vector<std::size_t>;
  EXPECT_EQ(sample_frames(10, 5), (Idx{0, 2, 4, 6, 8}));
  EXPECT_EQ(sample_frames(3, 3), (Idx{0, 1, 2}));
  EXPECT_EQ(sample_frames(2, 4), (Idx{0, 1, 1, 1}));
}

TEST(SampleFrames, LengthAndMonotone) {
  for (std::size_t total = 1; total <= 20; ++total) {
    for (std::size_t target = 1; target <= 20; ++target) {
      const auto idx = sample_frames(total, target);
      ASSERT_EQ(idx.size(), target);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        EXPECT_LT(idx[i], total);
        if (i) { EXPECT_LE(idx[i - 1], idx[i]); }
      }
    }
  }
}

TEST(Vtcf, SingleFrameExample) {
  const Matrix m = decode_vtcf(vtcf_bytes(1, 2, {1.0f, 2.0f}));
  EXPECT_EQ(m, (Matrix{{1, 2}}));
}

TEST(Vtcf, RoundTripIsBitExact) {
  Matrix frames(3, 4);
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = static_cast<float>(0.37 * i - 1.1);
  const auto path = temp_path("v001.vtcf");
  write_vtcf(path, {"v001", frames});
  const VideoItem back = load_frame_embeddings(path, 4);
  EXPECT_EQ(back.video_id, "v001");
  EXPECT_EQ(back.frames, frames);
  EXPECT_EQ(encode_vtcf(back.frames), read_file_bytes(path));
}

TEST(Vtcf, CorruptMagicReportsOffsetZero) {
  auto bytes = vtcf_bytes(1, 2, {1.0f, 2.0f});
  bytes[0] = 'X';
  try {
    decode_vtcf(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(Vtcf, TruncatedPayload) {
  auto bytes = vtcf_bytes(2, 2, {1, 2, 3, 4});
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode_vtcf(bytes), FormatError);
}

TEST(Vtcf, DimensionMismatchPointsAtDimensionField) {
  try {
    decode_vtcf(vtcf_bytes(1, 2, {1, 2}), 3);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 12u);
  }
}

TEST(Vtcf, BadVersion) {
  auto bytes = vtcf_bytes(1, 1, {1});
  bytes[4] = 2;
  EXPECT_THROW(decode_vtcf(bytes), FormatError);
}

TEST(Manifest, RoundTrip) {
  const std::vector<TextItem> items{make_text_item("t1", "A cat, sitting.", "v1"),
                                    make_text_item("t2", "\"quoted\" text", "v2")};
  const auto path = temp_path("manifest.jsonl");
  write_manifest(path, items);
  const auto back = read_manifest(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].raw, items[1].raw);
  EXPECT_EQ(back[0].tokens, (Tokens{"a", "cat", "sitting"}));
  EXPECT_EQ(back[1].video_id, "v2");
}

TEST(EmbeddingsJsonl, RoundTripAndBadLine) {
  const auto path = temp_path("emb.jsonl");
  write_embeddings_jsonl(path, {{"a", Matrix{{1, 2}}}, {"b", Matrix{{0.5, -1}, {3, 4}}}});
  const auto back = read_embeddings_jsonl(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].vectors, (Matrix{{0.5, -1}, {3, 4}}));

  write_file_bytes(path, std::vector<std::uint8_t>{'{', '"', 'i', '\n'});
  EXPECT_THROW(read_embeddings_jsonl(path), FormatError);
}

TEST(Corpus, LookupAndDuplicates) {
  const Corpus corpus({make_text_item("a", "x", ""), make_text_item("b", "y", "")});
  EXPECT_EQ(corpus.index_of("b"), 1u);
  EXPECT_THROW(corpus.at("zz"), LookupError);
  EXPECT_THROW(Corpus({make_text_item("a", "x", ""), make_text_item("a", "y", "")}), ConfigError);
}
