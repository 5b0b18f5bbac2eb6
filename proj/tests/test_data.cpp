#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "arnas/data.hpp"
#include "test_support.hpp"

namespace arnas {
namespace {

DatasetSpec spec(const std::string& query) { return DatasetSpec::from_uri("synthetic://blobs?" + query); }

TEST(Synthetic, UriParsing) {
  const DatasetSpec s = spec("classes=4&n=12&size=16&seed=9&test=5&noise=0.01");
  EXPECT_EQ(s.source, DatasetSpec::Source::kSynthetic);
  EXPECT_EQ(s.num_classes, 4);
  EXPECT_EQ(s.per_class_limit, 12);
  EXPECT_EQ(s.image_size, 16);
  EXPECT_EQ(s.seed, 9u);
  EXPECT_EQ(s.test_per_class, 5);
  EXPECT_DOUBLE_EQ(s.blobs.noise_std, 0.01);
  EXPECT_EQ(spec("n=12").test_per_class, 6);
  EXPECT_THROW(spec("colour=red"), ConfigError);
  EXPECT_THROW(spec("n=abc"), ConfigError);
  EXPECT_THROW(spec("size=4"), ConfigError);
  EXPECT_THROW(DatasetSpec::from_uri("synthetic://blobs&n=3"), ConfigError);
  EXPECT_EQ(DatasetSpec::from_uri("/data/cifar").source, DatasetSpec::Source::kArchive);
}

TEST(Synthetic, DeterministicBalancedAndInRange) {
  const DatasetSpec s = spec("classes=3&n=20&size=8&seed=4");
  const LabeledImages a = synth_blobs(s, 20, 1);
  const LabeledImages b = synth_blobs(s, 20, 1);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.images, synth_blobs(s, 20, 2).images);
  std::vector<int> counts(3);
  for (int y : a.labels) ++counts[y];
  EXPECT_EQ(counts, (std::vector<int>{20, 20, 20}));
  for (double v : a.images.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Splits, SizesAreStratifiedAndDisjoint) {
  for (SplitMode mode : {SplitMode::kSearch, SplitMode::kTrain}) {
    const DatasetSplits d = load(spec("classes=3&n=20&size=8&test=4"), mode);
    const int train = mode == SplitMode::kSearch ? 30 : 54;
    EXPECT_EQ(d.train.size(), train);
    EXPECT_EQ(d.val.size(), 60 - train);
    EXPECT_EQ(d.test.size(), 12);
    EXPECT_EQ(d.num_classes, 3);
    EXPECT_EQ(d.input_shape, (InputShape{3, 8, 8}));
    std::set<std::vector<double>> seen;
    const Shape s = d.train.data().images.shape();
    const std::size_t per = s.numel() / s.n;
    auto add = [&](const DataStream& st) {
      const auto& v = st.data().images.values();
      for (int i = 0; i < st.size(); ++i)
        seen.emplace(v.begin() + i * per, v.begin() + (i + 1) * per);
    };
    add(d.train);
    add(d.val);
    add(d.test);
    EXPECT_EQ(seen.size(), 72u);
    ASSERT_EQ(d.normalization.mean.size(), 3u);
    EXPECT_EQ(d.normalization, channel_statistics(d.train.data().images));
  }
}

TEST(DataStream, BatchesArePureFunctionsOfEpochAndIndex) {
  const DatasetSplits d = load(spec("classes=3&n=10&size=8"), SplitMode::kTrain);
  EXPECT_EQ(d.train.num_batches(10), 3);
  const Batch a = d.train.batch(2, 1, 10);
  const Batch b = d.train.batch(2, 1, 10);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  std::multiset<int> labels;
  for (int i = 0; i < 3; ++i)
    for (int y : d.train.batch(5, i, 10).labels) labels.insert(y);
  EXPECT_EQ(labels.size(), 27u);
  EXPECT_EQ(d.train.batch(5, 2, 10).size(), 7);
  EXPECT_THROW(d.train.batch(0, 3, 10), std::out_of_range);
  EXPECT_THROW(d.train.num_batches(0), std::invalid_argument);
}

TEST(DataStream, AugmentationShiftsAndFlips) {
  LabeledImages img;
  img.images = testing::random_tensor({1, 3, 8, 8}, 2);
  img.labels = {0};
  const DataStream plain(img, false, false, false, 0);
  const DataStream flip(img, false, false, true, 0);
  EXPECT_EQ(plain.batch(0, 0, 1).images, img.images);
  int flipped = 0;
  for (int e = 0; e < 16; ++e) {
    const Tensor t = flip.batch(e, 0, 1).images;
    if (t == img.images) continue;
    ++flipped;
    for (int c = 0; c < 3; ++c)
      for (int h = 0; h < 8; ++h)
        for (int w = 0; w < 8; ++w) EXPECT_EQ(t.at(0, c, h, w), img.images.at(0, c, h, 7 - w));
  }
  EXPECT_GT(flipped, 0);
  EXPECT_LT(flipped, 16);
}

void write_archive(const std::string& path, const std::vector<int>& labels, int shift) {
  std::ofstream out(path, std::ios::binary);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out.put(static_cast<char>(labels[i]));
    for (int p = 0; p < 3 * 32 * 32; ++p) out.put(static_cast<char>((p + static_cast<int>(i) * 7 + shift) % 256));
  }
}

TEST(Archive, RecordsAreDecodedByteForByte) {
  const auto dir = testing::scratch_dir("archive");
  const std::string file = (dir / "one.bin").string();
  write_archive(file, {3, 0, 9}, 0);
  const LabeledImages d = read_image_archive(file);
  ASSERT_EQ(d.size(), 3);
  EXPECT_EQ(d.labels, (std::vector<int>{3, 0, 9}));
  EXPECT_EQ(d.images.shape(), (Shape{3, 3, 32, 32}));
  EXPECT_DOUBLE_EQ(d.images.at(1, 0, 0, 0), 7 / 255.0);
  EXPECT_DOUBLE_EQ(d.images.at(2, 2, 31, 31), ((3 * 1024 - 1 + 14) % 256) / 255.0);

  std::ofstream(file, std::ios::binary | std::ios::app).put('x');
  EXPECT_THROW(read_image_archive(file), std::runtime_error);
  EXPECT_THROW(read_image_archive((dir / "missing.bin").string()), std::runtime_error);
}

TEST(Archive, DirectoryLayoutAndLabelChecks) {
  const auto dir = testing::scratch_dir("archive_dir");
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(i % 10);
  write_archive((dir / "data_batch_1.bin").string(), labels, 0);
  write_archive((dir / "data_batch_2.bin").string(), labels, 1);
  write_archive((dir / "test_batch.bin").string(), labels, 2);
  DatasetSpec s = DatasetSpec::from_uri(dir.string());
  s.per_class_limit = 6;
  s.test_per_class = 2;
  s.image_size = 16;
  const DatasetSplits d = load(s, SplitMode::kSearch);
  EXPECT_EQ(d.train.size() + d.val.size(), 60);
  EXPECT_EQ(d.test.size(), 20);
  EXPECT_EQ(d.input_shape, (InputShape{3, 16, 16}));

  s.num_classes = 5;
  EXPECT_THROW(load(s, SplitMode::kSearch), ConfigError);
  const auto empty = testing::scratch_dir("archive_empty");
  EXPECT_THROW(load(DatasetSpec::from_uri(empty.string()), SplitMode::kSearch), std::runtime_error);
}

// The blob task must be learnable: nearest class centroid in pixel space
// beats chance clearly on held-out data.
TEST(Synthetic, NearestCentroidBeatsChance) {
  const DatasetSplits d = load(spec("classes=3&n=60&size=16&test=40"), SplitMode::kTrain);
  const auto& tr = d.train.data();
  const Shape s = tr.images.shape();
  const std::size_t per = s.numel() / s.n;
  std::vector<std::vector<double>> centroid(3, std::vector<double>(per));
  std::vector<int> count(3);
  for (int i = 0; i < tr.size(); ++i) {
    ++count[tr.labels[i]];
    for (std::size_t p = 0; p < per; ++p) centroid[tr.labels[i]][p] += tr.images[i * per + p];
  }
  for (int k = 0; k < 3; ++k)
    for (double& v : centroid[k]) v /= count[k];
  const auto& te = d.test.data();
  int correct = 0;
  for (int i = 0; i < te.size(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int k = 0; k < 3; ++k) {
      double dist = 0.0;
      for (std::size_t p = 0; p < per; ++p) dist += std::pow(te.images[i * per + p] - centroid[k][p], 2);
      if (dist < best_d) best_d = dist, best = k;
    }
    correct += best == te.labels[i];
  }
  EXPECT_GT(static_cast<double>(correct) / te.size(), 0.5);
}

}  // namespace
}  // namespace arnas
