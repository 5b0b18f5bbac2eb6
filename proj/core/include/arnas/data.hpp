#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "arnas/network.hpp"
#include "arnas/search_space.hpp"
#include "arnas/tensor.hpp"

namespace arnas {

/// Knobs of the synthetic generator. Each image is a dark background with
/// one elongated Gaussian blob whose orientation encodes the class (the
/// large-amplitude feature), a faint class-specific color tint (a
/// low-amplitude feature an 8/255 attack can overturn) and pixel noise.
struct BlobParams {
  double background = 0.3;
  double amplitude = 0.45;
  double sigma_major = 0.2;   // fraction of image size
  double sigma_minor = 0.06;  // fraction of image size
  double jitter = 0.125;      // max center offset, fraction of image size
  double distractor_prob = 0.2;  // blob drawn with another class's orientation
  double tint = 0.02;
  double noise_std = 0.06;
};

struct DatasetSpec {
  enum class Source { kSynthetic, kArchive };
  Source source = Source::kSynthetic;
  std::string path;  // archive file or directory
  int num_classes = 3;
  int per_class_limit = 200;
  int test_per_class = 100;
  int image_size = 16;
  bool augment_crop = false;  // random crop with 4-pixel zero padding
  bool augment_flip = false;  // random horizontal flip
  std::uint64_t seed = 0;
  BlobParams blobs;

  /// Accepts "synthetic://blobs?classes=K&n=N&size=S&seed=R[&test=T&noise=..]"
  /// or a filesystem path to a binary image archive.
  static DatasetSpec from_uri(std::string_view uri);
  void validate() const;
};

struct LabeledImages {
  Tensor images;  // (N, C, H, W), pixels in [0, 1]
  std::vector<int> labels;
  int size() const { return static_cast<int>(labels.size()); }
};

struct Batch {
  Tensor images;
  std::vector<int> labels;
  int size() const { return static_cast<int>(labels.size()); }
};

/// Restartable batch iterator over a fixed sample set. Batches of an epoch
/// are a pure function of (seed, epoch, index).
class DataStream {
 public:
  DataStream() = default;
  DataStream(LabeledImages data, bool shuffle, bool augment_crop, bool augment_flip,
             std::uint64_t seed);

  int size() const { return data_.size(); }
  int num_batches(int batch_size) const;
  Batch batch(int epoch, int index, int batch_size) const;
  /// Every sample in stored order, without augmentation.
  Batch all() const;
  const LabeledImages& data() const { return data_; }
  bool augments() const { return crop_ || flip_; }

 private:
  std::vector<int> order(int epoch) const;

  LabeledImages data_;
  bool shuffle_ = false;
  bool crop_ = false;
  bool flip_ = false;
  std::uint64_t seed_ = 0;
};

enum class SplitMode {
  kSearch,  // training portion split 50/50 into train and validation
  kTrain,   // 90/10 train/validation split of the training portion
};

struct DatasetSplits {
  DataStream train;
  DataStream val;
  DataStream test;
  int num_classes = 0;
  InputShape input_shape;
  InputNormalization normalization;
};

DatasetSplits load(const DatasetSpec& spec, SplitMode mode);

/// Class-balanced blob images: `per_class` samples of each class, labels
/// cycling 0..K-1.
LabeledImages synth_blobs(const DatasetSpec& spec, int per_class, std::uint64_t stream_seed);

/// Reads records of one label byte followed by 3x32x32 channel-major pixel
/// bytes. Throws std::runtime_error on a truncated file.
LabeledImages read_image_archive(const std::string& path);

/// Per-channel mean and standard deviation of a sample set.
InputNormalization channel_statistics(const Tensor& images);

}  // namespace arnas
