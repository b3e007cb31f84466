#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "shotvae/data.hpp"

using namespace shotvae;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("shotvae_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void put_be32(std::string& s, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((v >> shift) & 0xff));
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Four 2x2 images written byte by byte.
struct Fixture {
  fs::path images, labels;
  explicit Fixture(const fs::path& dir, std::uint32_t img_magic = 0x803, std::uint32_t n_labels = 4,
                   std::size_t drop_bytes = 0) {
    std::string img, lab;
    put_be32(img, img_magic);
    put_be32(img, 4);
    put_be32(img, 2);
    put_be32(img, 2);
    const unsigned char px[16] = {0, 255, 51, 102, 255, 255, 0, 0, 10, 20, 30, 40, 200, 150, 100, 50};
    for (unsigned char c : px) img.push_back(static_cast<char>(c));
    img.resize(img.size() - drop_bytes);
    put_be32(lab, 0x801);
    put_be32(lab, n_labels);
    for (std::uint32_t i = 0; i < n_labels; ++i) lab.push_back(static_cast<char>((3 - i % 4)));
    images = dir / "img.idx";
    labels = dir / "lab.idx";
    write_bytes(images, img);
    write_bytes(labels, lab);
  }
};

Dataset labeled_toy(std::size_t per_class, std::size_t k) {
  SynthSpec s;
  s.num_classes = k;
  s.input_dim = 4 * k;
  s.per_class = per_class;
  return synth_generate(s);
}

}  // namespace

TEST(Idx, FixtureRoundTrip) {
  const Fixture f(scratch("fixture"));
  const Dataset ds = load_idx(f.images.string(), f.labels.string());
  ASSERT_EQ(ds.size(), 4u);
  EXPECT_EQ(ds.input_dim, 4u);
  EXPECT_EQ(ds.image_rows, 2u);
  EXPECT_EQ(ds.labels, (std::vector<std::size_t>{3, 2, 1, 0}));
  EXPECT_EQ(ds.num_classes, 4u);
  EXPECT_DOUBLE_EQ(ds.row(0)[1], 1.0);
  EXPECT_DOUBLE_EQ(ds.row(0)[2], 0.2);
  EXPECT_DOUBLE_EQ(ds.row(0)[3], 0.4);
  EXPECT_DOUBLE_EQ(ds.row(3)[0], 200.0 / 255.0);
}

TEST(Idx, CountMismatch) {
  const Fixture f(scratch("count"), 0x803, 3);
  EXPECT_THROW(load_idx(f.images.string(), f.labels.string()), IdxCountMismatchError);
}

TEST(Idx, WrongMagicNamesObservedValue) {
  const Fixture f(scratch("magic"), 0x1234abcd);
  try {
    load_idx(f.images.string(), f.labels.string());
    FAIL() << "expected IdxMagicError";
  } catch (const IdxMagicError& e) {
    EXPECT_EQ(e.observed(), 0x1234abcdu);
    EXPECT_NE(std::string(e.what()).find("1234abcd"), std::string::npos) << e.what();
  }
}

TEST(Idx, Truncated) {
  const Fixture f(scratch("trunc"), 0x803, 4, 3);
  EXPECT_THROW(load_idx(f.images.string(), f.labels.string()), IdxTruncatedError);
}

TEST(Idx, ErrorsAreDistinctTypes) {
  // Each failure is catchable by its own type, and all are IO errors.
  const Fixture f(scratch("distinct"), 0x803, 3);
  EXPECT_THROW(load_idx(f.images.string(), f.labels.string()), IoError);
  EXPECT_THROW(load_idx("/nonexistent/a", "/nonexistent/b"), IoError);
}

TEST(Idx, WriteThenReadIsIdentityOnQuantizedData) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    Dataset ds;
    ds.input_dim = 6;
    ds.image_rows = 2;
    ds.image_cols = 3;
    ds.num_classes = 5;
    const std::size_t n = 1 + rng.index(20);
    for (std::size_t i = 0; i < n * 6; ++i) ds.inputs.push_back(static_cast<double>(rng.index(256)) / 255.0);
    for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(rng.index(5));
    const fs::path dir = scratch("rt" + std::to_string(trial));
    write_idx(ds, (dir / "i").string(), (dir / "l").string());
    const Dataset back = load_idx((dir / "i").string(), (dir / "l").string(), 5);
    EXPECT_EQ(back.inputs, ds.inputs);
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(back.image_cols, 3u);
  }
}

TEST(Synth, DegenerateGeneratorReproducesTemplates) {
  SynthSpec s;
  s.noise_sigma = 0.0;
  s.style_scale = 0.0;
  const Dataset ds = synth_generate(s);
  const auto t = synth_templates(s);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = ds.row(i);
    EXPECT_TRUE(std::equal(r.begin(), r.end(), t[ds.labels[i]].begin())) << "row " << i;
  }
}

TEST(Synth, SameSeedIdentical) {
  SynthSpec s;
  s.seed = 17;
  const Dataset a = synth_generate(s), b = synth_generate(s);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.labels, b.labels);
  s.seed = 18;
  EXPECT_NE(synth_generate(s).inputs, a.inputs);
}

TEST(Synth, RoundRobinLabelsAndValidRange) {
  const Dataset ds = synth_generate(SynthSpec{});
  EXPECT_NO_THROW(ds.validate());
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ds.labels[i], i % 4);
  EXPECT_EQ(ds.class_counts(), (std::vector<std::size_t>{100, 100, 100, 100}));
}

TEST(Synth, NearestTemplateInsideMargin) {
  SynthSpec s;
  s.noise_sigma = 0.0;
  s.style_scale = 0.1;
  s.per_class = 500;
  const Dataset ds = synth_generate(s);
  const auto t = synth_templates(s);
  const double block = static_cast<double>(s.input_dim / s.num_classes);
  const double margin = s.separation * std::sqrt(block / 2.0);
  std::size_t inside = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = ds.row(i);
    std::vector<double> d(s.num_classes, 0.0);
    for (std::size_t k = 0; k < s.num_classes; ++k)
      for (std::size_t j = 0; j < s.input_dim; ++j) d[k] += (r[j] - t[k][j]) * (r[j] - t[k][j]);
    const std::size_t nearest = static_cast<std::size_t>(std::min_element(d.begin(), d.end()) - d.begin());
    if (std::sqrt(d[ds.labels[i]]) < margin) {
      ++inside;
      EXPECT_EQ(nearest, ds.labels[i]) << "row " << i;
    }
  }
  EXPECT_GT(inside, ds.size() / 2);
}

TEST(Synth, DimensionConstraints) {
  SynthSpec s;
  s.input_dim = 15;
  EXPECT_THROW(synth_generate(s), DomainError);
  s = SynthSpec{};
  s.noise_sigma = -1.0;
  EXPECT_THROW(synth_generate(s), DomainError);
}

TEST(Split, AllLabeledLeavesUnlabeledEmpty) {
  const Dataset ds = labeled_toy(5, 4);
  const auto sp = split(ds, SplitSpec{20, 0, true});
  EXPECT_EQ(sp.labeled.size(), 20u);
  EXPECT_TRUE(sp.unlabeled.empty());
}

TEST(Split, StratifiedTenPerClass) {
  const Dataset ds = labeled_toy(30, 10);
  const auto sp = split(ds, SplitSpec{100, 5, true});
  EXPECT_EQ(sp.labeled.class_counts(), std::vector<std::size_t>(10, 10));
}

TEST(Split, StratifiedRemainderGetsOneExtra) {
  const Dataset ds = labeled_toy(30, 4);
  const auto counts = split(ds, SplitSpec{10, 2, true}).labeled.class_counts();
  for (auto c : counts) EXPECT_TRUE(c == 2 || c == 3);
  EXPECT_EQ(counts[0] + counts[1] + counts[2] + counts[3], 10u);
}

TEST(Split, SeedDeterminism) {
  const Dataset ds = labeled_toy(50, 4);
  const auto a = split(ds, SplitSpec{20, 1, true});
  const auto b = split(ds, SplitSpec{20, 1, true});
  const auto c = split(ds, SplitSpec{20, 2, true});
  EXPECT_EQ(a.labeled_indices, b.labeled_indices);
  std::vector<std::size_t> common;
  std::set_intersection(a.labeled_indices.begin(), a.labeled_indices.end(), c.labeled_indices.begin(),
                        c.labeled_indices.end(), std::back_inserter(common));
  EXPECT_LT(common.size(), a.labeled_indices.size());
}

TEST(Split, DisjointAndCoveringForRandomSizes) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng.index(5);
    const Dataset ds = labeled_toy(1 + rng.index(12), k);
    const bool strat = rng.uniform() < 0.5;
    const std::size_t want = strat ? rng.index(ds.size() / k + 1) * k : rng.index(ds.size() + 1);
    const auto sp = split(ds, SplitSpec{want, rng.next_u64(), strat});
    ASSERT_EQ(sp.labeled.size(), want);
    std::vector<std::size_t> all = sp.labeled_indices;
    all.insert(all.end(), sp.unlabeled_indices.begin(), sp.unlabeled_indices.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], i);
    EXPECT_EQ(all.size(), ds.size());
  }
}

TEST(Split, UnlabeledLabelsOnlyThroughDiagnosticAccessor) {
  const Dataset ds = labeled_toy(10, 4);
  const auto sp = split(ds, SplitSpec{8, 0, true});
  const auto& truth = sp.unlabeled.diagnostic_labels();
  ASSERT_EQ(truth.size(), sp.unlabeled_indices.size());
  for (std::size_t i = 0; i < truth.size(); ++i) EXPECT_EQ(truth[i], ds.labels[sp.unlabeled_indices[i]]);
}

TEST(Split, Errors) {
  const Dataset ds = labeled_toy(3, 4);
  EXPECT_THROW(split(ds, SplitSpec{13, 0, false}), DomainError);
  // 16 stratified labels need 4 per class, only 3 available.
  EXPECT_THROW(split(ds, SplitSpec{16, 0, true}), DomainError);
}

TEST(Batches, FullBatchIsPermutation) {
  const Dataset ds = labeled_toy(5, 4);
  const auto bs = batches(ds, ds.size(), 3, 1);
  ASSERT_EQ(bs.size(), 1u);
  auto idx = bs[0].indices;
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(idx[i], i);
  ASSERT_TRUE(bs[0].labels.has_value());
  for (std::size_t i = 0; i < bs[0].size(); ++i) EXPECT_EQ((*bs[0].labels)[i], ds.labels[bs[0].indices[i]]);
}

TEST(Batches, FixedSeedAndEpochGiveSameOrder) {
  const Dataset ds = labeled_toy(10, 4);
  const auto a = batches(ds, 7, 9, 2), b = batches(ds, 7, 9, 2), c = batches(ds, 7, 9, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].indices, b[i].indices);
  EXPECT_NE(a[0].indices, c[0].indices);
}

TEST(Batches, UnlabeledDropsShortTail) {
  const Dataset ds = labeled_toy(4, 4);  // 16 rows
  const auto sp = split(ds, SplitSpec{3, 0, false});
  const auto bs = batches(sp.unlabeled, 4, 1, 1);  // 13 rows: 4 + 4 + 4, tail of 1 dropped
  ASSERT_EQ(bs.size(), 3u);
  std::set<std::size_t> seen;
  for (const auto& b : bs) {
    EXPECT_FALSE(b.labels.has_value());
    seen.insert(b.indices.begin(), b.indices.end());
  }
  EXPECT_EQ(seen.size(), 12u);
  // A tail of exactly 2 is kept.
  EXPECT_EQ(batches(sp.unlabeled, 11, 1, 1).size(), 2u);
}

TEST(Batches, LabeledKeepsShortTailAndUnionIsComplete) {
  const Dataset ds = labeled_toy(4, 4);
  const auto bs = batches(ds, 5, 2, 7);
  ASSERT_EQ(bs.size(), 4u);
  EXPECT_EQ(bs.back().size(), 1u);
  std::set<std::size_t> seen;
  for (const auto& b : bs) seen.insert(b.indices.begin(), b.indices.end());
  EXPECT_EQ(seen.size(), ds.size());
}

TEST(Batches, InvalidSizes) {
  const Dataset ds = labeled_toy(4, 4);
  EXPECT_THROW(batches(ds, 0, 0, 0), DomainError);
  const auto sp = split(ds, SplitSpec{4, 0, false});
  EXPECT_THROW(batches(sp.unlabeled, 1, 0, 0), DomainError);
}
