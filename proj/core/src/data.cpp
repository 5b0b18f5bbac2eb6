#include "arnas/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>

namespace arnas {

namespace {

constexpr int kArchiveSide = 32;
constexpr int kArchiveChannels = 3;
constexpr std::size_t kArchiveRecord = 1 + kArchiveChannels * kArchiveSide * kArchiveSide;

std::mt19937_64 stream_rng(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
  return std::mt19937_64(seq);
}

std::map<std::string, std::string> parse_query(std::string_view q) {
  std::map<std::string, std::string> out;
  while (!q.empty()) {
    const auto amp = q.find('&');
    const std::string_view item = q.substr(0, amp);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw ConfigError("malformed query item \"" + std::string(item) + "\"");
    out[std::string(item.substr(0, eq))] = std::string(item.substr(eq + 1));
    if (amp == std::string_view::npos) break;
    q.remove_prefix(amp + 1);
  }
  return out;
}

LabeledImages select(const LabeledImages& src, const std::vector<int>& idx) {
  const Shape s = src.images.shape();
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  LabeledImages out;
  out.images = Tensor(Shape{static_cast<int>(idx.size()), s.c, s.h, s.w});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(src.images.raw() + static_cast<std::size_t>(idx[i]) * per, per,
                out.images.raw() + i * per);
    out.labels.push_back(src.labels[idx[i]]);
  }
  return out;
}

LabeledImages downsample(const LabeledImages& src, int size) {
  const Shape s = src.images.shape();
  if (s.h == size) return src;
  if (s.h % size != 0) {
    throw ConfigError("image_size " + std::to_string(size) + " must divide " + std::to_string(s.h));
  }
  const int f = s.h / size;
  LabeledImages out;
  out.labels = src.labels;
  out.images = Tensor(Shape{s.n, s.c, size, size});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int h = 0; h < size; ++h)
        for (int w = 0; w < size; ++w) {
          double acc = 0.0;
          for (int i = 0; i < f; ++i)
            for (int j = 0; j < f; ++j) acc += src.images.at(n, c, h * f + i, w * f + j);
          out.images.at(n, c, h, w) = acc / (f * f);
        }
  return out;
}

/// First `limit` samples of each class in file order, after skipping `skip`.
std::vector<int> per_class_prefix(const std::vector<int>& labels, int num_classes, int skip, int limit) {
  std::vector<int> seen(num_classes, 0);
  std::vector<int> idx;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    const int y = labels[i];
    if (seen[y] >= skip && seen[y] < skip + limit) idx.push_back(i);
    ++seen[y];
  }
  for (int k = 0; k < num_classes; ++k) {
    if (seen[k] < skip + limit) {
      throw ConfigError("archive has only " + std::to_string(seen[k]) + " samples of class " +
                        std::to_string(k) + ", need " + std::to_string(skip + limit));
    }
  }
  return idx;
}

}  // namespace

DatasetSpec DatasetSpec::from_uri(std::string_view uri) {
  DatasetSpec spec;
  constexpr std::string_view kPrefix = "synthetic://blobs";
  if (uri.substr(0, kPrefix.size()) != kPrefix) {
    spec.source = Source::kArchive;
    spec.path = std::string(uri);
    spec.num_classes = 10;
    spec.image_size = 32;
    spec.per_class_limit = 100;
    spec.test_per_class = 50;
    return spec;
  }
  std::string_view rest = uri.substr(kPrefix.size());
  if (!rest.empty()) {
    if (rest.front() != '?') throw ConfigError("malformed synthetic uri \"" + std::string(uri) + "\"");
    rest.remove_prefix(1);
  }
  bool test_given = false;
  for (const auto& [key, value] : parse_query(rest)) {
    try {
      if (key == "classes") {
        spec.num_classes = std::stoi(value);
      } else if (key == "n") {
        spec.per_class_limit = std::stoi(value);
      } else if (key == "size") {
        spec.image_size = std::stoi(value);
      } else if (key == "seed") {
        spec.seed = std::stoull(value);
      } else if (key == "test") {
        spec.test_per_class = std::stoi(value);
        test_given = true;
      } else if (key == "noise") {
        spec.blobs.noise_std = std::stod(value);
      } else if (key == "tint") {
        spec.blobs.tint = std::stod(value);
      } else if (key == "distractor") {
        spec.blobs.distractor_prob = std::stod(value);
      } else if (key == "jitter") {
        spec.blobs.jitter = std::stod(value);
      } else {
        throw ConfigError("unknown synthetic dataset key \"" + key + "\"");
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad value \"" + value + "\" for synthetic dataset key \"" + key + "\"");
    }
  }
  if (!test_given) spec.test_per_class = std::max(1, spec.per_class_limit / 2);
  spec.validate();
  return spec;
}

void DatasetSpec::validate() const {
  if (image_size < 8) throw ConfigError("image_size must be >= 8");
  if (per_class_limit < 1) throw ConfigError("per_class_limit must be >= 1");
  if (test_per_class < 0) throw ConfigError("test_per_class must be >= 0");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (source == Source::kArchive && path.empty()) throw ConfigError("archive path is empty");
}

DataStream::DataStream(LabeledImages data, bool shuffle, bool augment_crop, bool augment_flip,
                       std::uint64_t seed)
    : data_(std::move(data)), shuffle_(shuffle), crop_(augment_crop), flip_(augment_flip), seed_(seed) {}

int DataStream::num_batches(int batch_size) const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  return (size() + batch_size - 1) / batch_size;
}

std::vector<int> DataStream::order(int epoch) const {
  std::vector<int> idx(size());
  for (int i = 0; i < size(); ++i) idx[i] = i;
  if (shuffle_) {
    auto rng = stream_rng(seed_, static_cast<std::uint64_t>(epoch), 0x5eed);
    for (int i = size() - 1; i > 0; --i) {
      std::uniform_int_distribution<int> pick(0, i);
      std::swap(idx[i], idx[pick(rng)]);
    }
  }
  return idx;
}

Batch DataStream::batch(int epoch, int index, int batch_size) const {
  const int nb = num_batches(batch_size);
  if (index < 0 || index >= nb) throw std::out_of_range("batch index out of range");
  const std::vector<int> idx = order(epoch);
  const int begin = index * batch_size;
  const int end = std::min(size(), begin + batch_size);
  std::vector<int> chosen(idx.begin() + begin, idx.begin() + end);
  LabeledImages sel = select(data_, chosen);
  if (crop_ || flip_) {
    const Shape s = sel.images.shape();
    Tensor out(s);
    for (int n = 0; n < s.n; ++n) {
      auto rng = stream_rng(seed_ ^ 0xa5a5a5a5ull, static_cast<std::uint64_t>(epoch),
                            static_cast<std::uint64_t>(chosen[n]));
      std::uniform_int_distribution<int> shift(-4, 4);
      const int dy = crop_ ? shift(rng) : 0;
      const int dx = crop_ ? shift(rng) : 0;
      const bool mirror = flip_ && std::bernoulli_distribution(0.5)(rng);
      for (int c = 0; c < s.c; ++c)
        for (int h = 0; h < s.h; ++h)
          for (int w = 0; w < s.w; ++w) {
            const int sh = h + dy;
            int sw = w + dx;
            if (mirror) sw = s.w - 1 - sw;
            out.at(n, c, h, w) = (sh >= 0 && sh < s.h && sw >= 0 && sw < s.w)
                                     ? sel.images.at(n, c, sh, sw)
                                     : 0.0;
          }
    }
    sel.images = std::move(out);
  }
  return Batch{std::move(sel.images), std::move(sel.labels)};
}

Batch DataStream::all() const { return Batch{data_.images, data_.labels}; }

LabeledImages synth_blobs(const DatasetSpec& spec, int per_class, std::uint64_t stream_seed) {
  const int k = spec.num_classes;
  const int size = spec.image_size;
  const int channels = 3;
  const BlobParams& p = spec.blobs;
  const int total = k * per_class;
  LabeledImages out;
  out.images = Tensor(Shape{total, channels, size, size});
  out.labels.resize(total);
  const double s_major = p.sigma_major * size;
  const double s_minor = p.sigma_minor * size;
  for (int i = 0; i < total; ++i) {
    const int label = i % k;
    out.labels[i] = label;
    auto rng = stream_rng(spec.seed, stream_seed, static_cast<std::uint64_t>(i));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    int shape_class = label;
    if (k > 1 && p.distractor_prob > 0.0 && unit(rng) < p.distractor_prob) {
      std::uniform_int_distribution<int> other(0, k - 2);
      shape_class = other(rng);
      if (shape_class >= label) ++shape_class;
    }
    const double angle = std::numbers::pi * shape_class / k;
    const double ca = std::cos(angle);
    const double sa = std::sin(angle);
    const double center = (size - 1) / 2.0;
    const double cy = center + (2.0 * unit(rng) - 1.0) * p.jitter * size;
    const double cx = center + (2.0 * unit(rng) - 1.0) * p.jitter * size;
    for (int c = 0; c < channels; ++c) {
      const double sign = ((label / channels) % 2 == 0) ? 1.0 : -1.0;
      const double tint = (c == label % channels) ? sign * p.tint : 0.0;
      for (int h = 0; h < size; ++h)
        for (int w = 0; w < size; ++w) {
          const double dy = h - cy;
          const double dx = w - cx;
          const double u = dx * ca + dy * sa;
          const double v = -dx * sa + dy * ca;
          const double blob = std::exp(-0.5 * (u * u / (s_major * s_major) + v * v / (s_minor * s_minor)));
          const double noise = p.noise_std > 0.0 ? p.noise_std * gauss(rng) : 0.0;
          out.images.at(i, c, h, w) =
              std::clamp(p.background + p.amplitude * blob + tint + noise, 0.0, 1.0);
        }
    }
  }
  return out;
}

LabeledImages read_image_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image archive " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kArchiveRecord != 0) {
    throw std::runtime_error("corrupt image archive " + path + ": " + std::to_string(bytes.size()) +
                             " bytes is not a multiple of the " + std::to_string(kArchiveRecord) +
                             "-byte record size");
  }
  const int n = static_cast<int>(bytes.size() / kArchiveRecord);
  LabeledImages out;
  out.images = Tensor(Shape{n, kArchiveChannels, kArchiveSide, kArchiveSide});
  out.labels.resize(n);
  const std::size_t pixels = kArchiveRecord - 1;
  for (int i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + static_cast<std::size_t>(i) * kArchiveRecord;
    out.labels[i] = rec[0];
    for (std::size_t j = 0; j < pixels; ++j)
      out.images[static_cast<std::size_t>(i) * pixels + j] = rec[1 + j] / 255.0;
  }
  return out;
}

InputNormalization channel_statistics(const Tensor& images) {
  const Shape s = images.shape();
  InputNormalization norm;
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * plane;
  for (int c = 0; c < s.c; ++c) {
    double sum = 0.0;
    double sq = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const double* p = images.raw() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum += p[i];
        sq += p[i] * p[i];
      }
    }
    const double mean = sum / count;
    const double var = std::max(0.0, sq / count - mean * mean);
    norm.mean.push_back(mean);
    norm.stddev.push_back(var > 1e-12 ? std::sqrt(var) : 1.0);
  }
  return norm;
}

namespace {

void load_archive(const DatasetSpec& spec, LabeledImages& training, LabeledImages& test) {
  namespace fs = std::filesystem;
  LabeledImages train_raw;
  LabeledImages test_raw;
  bool separate_test = false;
  if (fs::is_directory(spec.path)) {
    std::vector<Tensor> parts;
    for (int b = 1; b <= 5; ++b) {
      const fs::path f = fs::path(spec.path) / ("data_batch_" + std::to_string(b) + ".bin");
      if (!fs::exists(f)) continue;
      LabeledImages part = read_image_archive(f.string());
      parts.push_back(std::move(part.images));
      train_raw.labels.insert(train_raw.labels.end(), part.labels.begin(), part.labels.end());
    }
    if (parts.empty()) throw std::runtime_error("no data_batch_*.bin files under " + spec.path);
    train_raw.images = concat_batch(parts);
    const fs::path t = fs::path(spec.path) / "test_batch.bin";
    if (fs::exists(t)) {
      test_raw = read_image_archive(t.string());
      separate_test = true;
    }
  } else {
    train_raw = read_image_archive(spec.path);
  }
  auto check_labels = [&](const LabeledImages& d) {
    for (int y : d.labels)
      if (y >= spec.num_classes) {
        throw ConfigError("archive label " + std::to_string(y) + " exceeds num_classes " +
                          std::to_string(spec.num_classes));
      }
  };
  check_labels(train_raw);
  training = select(train_raw, per_class_prefix(train_raw.labels, spec.num_classes, 0, spec.per_class_limit));
  if (separate_test) {
    check_labels(test_raw);
    test = select(test_raw, per_class_prefix(test_raw.labels, spec.num_classes, 0, spec.test_per_class));
  } else {
    test = select(train_raw, per_class_prefix(train_raw.labels, spec.num_classes, spec.per_class_limit,
                                              spec.test_per_class));
  }
  training = downsample(training, spec.image_size);
  test = downsample(test, spec.image_size);
}

}  // namespace

DatasetSplits load(const DatasetSpec& spec, SplitMode mode) {
  spec.validate();
  LabeledImages training;
  LabeledImages test;
  if (spec.source == DatasetSpec::Source::kSynthetic) {
    training = synth_blobs(spec, spec.per_class_limit, 1);
    test = synth_blobs(spec, spec.test_per_class, 2);
  } else {
    load_archive(spec, training, test);
  }

  // Stratified split of the training portion.
  std::vector<std::vector<int>> by_class(spec.num_classes);
  for (int i = 0; i < training.size(); ++i) by_class[training.labels[i]].push_back(i);
  auto rng = stream_rng(spec.seed, 0x5b117ull);
  std::vector<int> train_idx;
  std::vector<int> val_idx;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t cut = mode == SplitMode::kSearch ? members.size() / 2
                                                       : members.size() - members.size() / 10;
    train_idx.insert(train_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(cut));
    val_idx.insert(val_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(cut), members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  DatasetSplits out;
  out.num_classes = spec.num_classes;
  const Shape s = training.images.shape();
  out.input_shape = InputShape{s.c, s.h, s.w};
  LabeledImages train_set = select(training, train_idx);
  out.normalization = channel_statistics(train_set.images);
  out.train = DataStream(std::move(train_set), true, spec.augment_crop, spec.augment_flip, spec.seed + 11);
  out.val = DataStream(select(training, val_idx), mode == SplitMode::kSearch, false, false, spec.seed + 13);
  out.test = DataStream(std::move(test), false, false, false, spec.seed + 17);
  return out;
}

}  // namespace arnas
