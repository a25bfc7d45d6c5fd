#include "fracdet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "fracdet/codec.hpp"
#include "fracdet/error.hpp"

namespace fracdet {

namespace fs = std::filesystem;

namespace {

std::mt19937_64 seeded_rng(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".pgm" || ext == ".ppm" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

ColorImage Sample::load() const {
  if (image) return *image;
  return read_image(path);
}

std::string Sample::name() const { return path.empty() ? std::string("<memory>") : path.string(); }

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (const auto& s : samples) {
    if (s.label >= counts.size()) counts.resize(s.label + 1, 0);
    ++counts[s.label];
  }
  return counts;
}

void validate(const SplitRatios& r) {
  if (r.train < 0.0 || r.val < 0.0 || r.test < 0.0) throw_invalid("split ratios must be non-negative");
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) throw_invalid("split ratios must sum to 1");
}

std::array<std::size_t, 3> split_class_count(std::size_t n, const SplitRatios& ratios) {
  validate(ratios);
  const auto take = [n](double r) {
    return std::min(n, static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9)));
  };
  const std::size_t train = take(ratios.train);
  const std::size_t val = std::min(n - train, take(ratios.val));
  return {train, val, n - train - val};
}

std::vector<std::array<std::size_t, 3>> split_counts(const std::vector<std::size_t>& class_counts,
                                                     const SplitRatios& ratios) {
  std::vector<std::array<std::size_t, 3>> out;
  for (std::size_t c = 0; c < class_counts.size(); ++c) {
    if (class_counts[c] == 0) throw_invalid("class " + std::to_string(c) + " has no samples");
    out.push_back(split_class_count(class_counts[c], ratios));
  }
  return out;
}

DatasetSplit stratified_split(const LabeledDataset& dataset, const SplitRatios& ratios, std::uint64_t seed) {
  const auto counts = dataset.class_counts();
  const auto plan = split_counts(counts, ratios);
  DatasetSplit out;
  for (auto* part : {&out.train, &out.val, &out.test}) part->class_names = dataset.class_names;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
      if (dataset.samples[i].label == c) members.push_back(i);
    }
    auto rng = seeded_rng({seed, c});
    std::shuffle(members.begin(), members.end(), rng);
    const auto [n_train, n_val, n_test] = plan[c];
    for (std::size_t k = 0; k < members.size(); ++k) {
      LabeledDataset& dst = k < n_train ? out.train : (k < n_train + n_val ? out.val : out.test);
      dst.samples.push_back(dataset.samples[members[k]]);
    }
  }
  return out;
}

void write_split_manifest(const DatasetSplit& split, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "path,label,split\n";
  const std::pair<const LabeledDataset*, const char*> parts[] = {
      {&split.train, "train"}, {&split.val, "val"}, {&split.test, "test"}};
  for (const auto& [ds, name] : parts) {
    for (const auto& s : ds->samples) out << csv_field(s.name()) << ',' << s.label << ',' << name << '\n';
  }
}

LabeledDataset load_directory(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw Error(ErrorCode::kIo, "not a directory: " + root.string());
  LabeledDataset ds;
  ds.class_names.clear();
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());

  std::map<std::string, BoundingBox> cracks;
  if (std::ifstream in(root / "cracks.csv"); in) {
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) continue;
      BoundingBox b;
      if (std::sscanf(line.c_str() + comma + 1, "%d,%d,%d,%d", &b.x0, &b.y0, &b.x1, &b.y1) == 4) {
        cracks[line.substr(0, comma)] = b;
      }
    }
  }

  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    ds.class_names.push_back(class_dirs[c].filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[c])) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      if (!has_image_extension(f)) {
        ds.warnings.push_back("skipped non-image file " + f.string());
        continue;
      }
      try {
        (void)read_image(f);
      } catch (const Error& e) {
        ds.warnings.push_back("skipped unreadable image " + f.string() + ": " + e.what());
        continue;
      }
      Sample s;
      s.path = f;
      s.label = c;
      const std::string key = class_dirs[c].filename().string() + "/" + f.filename().string();
      if (auto it = cracks.find(key); it != cracks.end()) s.crack = it->second;
      ds.samples.push_back(std::move(s));
    }
  }
  if (ds.class_names.empty()) ds.class_names = {"fractured", "not fractured"};
  if (ds.samples.empty()) ds.warnings.push_back("no images found under " + root.string());
  return ds;
}

LabeledDataset generate_synthetic(const SyntheticConfig& cfg, std::size_t n_per_class) {
  if (cfg.size < 16) throw_invalid("synthetic images must be at least 16x16");
  if (cfg.band_min_width < 2 || cfg.band_max_width < cfg.band_min_width || cfg.band_max_width > cfg.size / 2) {
    throw_invalid("invalid bone band width range");
  }
  if (cfg.crack_thickness < 1 || cfg.crack_thickness >= cfg.band_min_width) {
    throw_invalid("crack thickness must be positive and narrower than the bone band");
  }
  if (cfg.crack_amplitude < 0.0 || cfg.noise_std < 0.0) throw_invalid("amplitude and noise must be non-negative");

  LabeledDataset ds;
  const int n = cfg.size;
  for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
    const bool fractured = i % 2 == 0;
    auto rng = seeded_rng({cfg.seed, i});
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    const double background = 35.0 + 25.0 * uni(rng);
    const double bone = 120.0 + 60.0 * uni(rng);
    const double width = cfg.band_min_width + (cfg.band_max_width - cfg.band_min_width) * uni(rng);
    const double center = n * (0.35 + 0.30 * uni(rng));
    const double tilt = -0.08 + 0.16 * uni(rng);
    const double half = width / 2.0;

    std::vector<double> field(static_cast<std::size_t>(n) * n);
    auto band_center = [&](int y) { return center + tilt * (y - n / 2.0); };
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const double u = (x - band_center(y)) / half;
        field[static_cast<std::size_t>(y) * n + x] = background + (bone - background) * std::exp(-std::pow(u * u, 4.0));
      }
    }

    Sample s;
    s.label = fractured ? 0 : 1;
    if (fractured) {
      const double y0 = n * (0.3 + 0.4 * uni(rng));
      const double freq = 0.6 + 0.8 * uni(rng);
      const double phase = 6.283185307179586 * uni(rng);
      const double t = cfg.crack_thickness / 2.0;
      BoundingBox box{n, n, -1, -1};
      for (int x = 0; x < n; ++x) {
        const double yc = y0 + cfg.crack_amplitude * std::sin(freq * x + phase);
        // Crack spans the band horizontally at its own row.
        if (std::abs(x - band_center(static_cast<int>(yc))) > half) continue;
        for (int y = 0; y < n; ++y) {
          if (std::abs(y - yc) > t) continue;
          field[static_cast<std::size_t>(y) * n + x] = background + 0.15 * (bone - background);
          box.x0 = std::min(box.x0, x);
          box.x1 = std::max(box.x1, x + 1);
          box.y0 = std::min(box.y0, y);
          box.y1 = std::max(box.y1, y + 1);
        }
      }
      s.crack = box;
    }
    PixelGrid8 gray(n, n);
    for (std::size_t k = 0; k < field.size(); ++k) gray.values[k] = to_u8(field[k] + cfg.noise_std * noise(rng));
    s.image = gray_to_color(gray);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void write_dataset(const LabeledDataset& dataset, const fs::path& root) {
  fs::create_directories(root);
  for (const auto& name : dataset.class_names) fs::create_directories(root / name);
  std::ofstream cracks(root / "cracks.csv");
  if (!cracks) throw Error(ErrorCode::kIo, "cannot write " + (root / "cracks.csv").string());
  cracks << "file,x0,y0,x1,y1\n";
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const Sample& s = dataset.samples[i];
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.pgm", i);
    const std::string& cls = dataset.class_names.at(s.label);
    write_image(root / cls / name, to_grayscale(s.load()));
    if (s.crack) {
      cracks << cls << '/' << name << ',' << s.crack->x0 << ',' << s.crack->y0 << ',' << s.crack->x1 << ','
             << s.crack->y1 << '\n';
    }
  }
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t shuffle_seed,
                                              std::uint64_t epoch) {
  if (batch_size == 0) throw_invalid("batch size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  auto rng = seeded_rng({shuffle_seed, epoch});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    out.emplace_back(order.begin() + start, order.begin() + std::min(n, start + batch_size));
  }
  return out;
}

std::vector<TensorSample> prepare_tensors(const LabeledDataset& dataset, const PipelineConfig& cfg) {
  std::vector<TensorSample> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset.samples) out.push_back({model_input(s.load(), cfg), s.label});
  return out;
}

}  // namespace fracdet
