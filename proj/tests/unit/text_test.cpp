#include <gtest/gtest.h>

#include "iimmr/io.hpp"
#include "iimmr/text.hpp"
#include "test_util.hpp"

using namespace iimmr;

TEST(Text, TrimAndLower) {
  EXPECT_EQ(text::trim("  a b \t\n"), "a b");
  EXPECT_EQ(text::trim("   "), "");
  EXPECT_EQ(text::lower("MiXeD"), "mixed");
}

TEST(Text, SplitKeepsEmptyPieces) {
  EXPECT_EQ(text::split("a,,b", ','), (std::vector<std::string>{"a", "", "b"}));
  EXPECT_EQ(text::split_ws("  a  b "), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(text::split_lines("x\r\ny"), (std::vector<std::string>{"x", "y"}));
}

TEST(Text, PrefixChecks) {
  EXPECT_TRUE(text::starts_with_icase("Answer: no", "answer:"));
  EXPECT_FALSE(text::starts_with_icase("Ans", "answer:"));
  EXPECT_TRUE(text::ends_with("wetsuit", "suit"));
}

TEST(Io, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Io, WriteOnceKeepsFirstWriter) {
  testkit::TempDir dir;
  auto p = dir / "a/b/entry.json";
  EXPECT_TRUE(write_file_once(p, "first"));
  EXPECT_FALSE(write_file_once(p, "second"));
  EXPECT_EQ(read_file(p), "first");
}

TEST(Io, JsonlRoundTripAndLineNumbers) {
  testkit::TempDir dir;
  auto p = dir / "x.jsonl";
  write_jsonl(p, {json{{"a", 1}}, json{{"b", "two"}}});
  auto back = read_jsonl(p);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1]["b"], "two");
  write_file_atomic(p, "{\"a\":1}\n\n{oops\n");
  try {
    read_jsonl(p);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
}

TEST(Io, CsvRoundTripWithQuotesAndNewlines) {
  std::vector<std::string> row{"plain", "with,comma", "with \"quote\"", "two\nlines", ""};
  auto parsed = parse_csv(csv_row({"h1", "h2", "h3", "h4", "h5"}) + csv_row(row));
  ASSERT_EQ(parsed.size(), 2u);
  EXPECT_EQ(parsed[1], row);
  EXPECT_THROW(parse_csv("\"open"), ParseError);
}
