#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "dfr/data_synth.hpp"
#include "dfr/error.hpp"
#include "dfr/log.hpp"
#include "dfr/png_io.hpp"
#include "dfr/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace dfr {

namespace {

// Built-in sampling ranges for dataset construction, chosen so each kind is visible at 64px.
const std::map<std::string, std::pair<double, double>>& default_recipe_ranges() {
  static const std::map<std::string, std::pair<double, double>> table = {
      {"noise.sigma", {50.0 / 255.0, 50.0 / 255.0}},
      {"low_light.gamma", {2.0, 4.0}},
      {"low_light.scale", {0.1, 0.4}},
      {"low_light.sigma", {0.005, 0.02}},
      {"haze.beta", {0.8, 1.6}},
      {"haze.airlight", {0.75, 0.95}},
      {"rain.density", {0.004, 0.008}},
      {"rain.length_frac", {0.15, 0.35}},
      {"rain.angle_deg", {-30.0, 30.0}},
      {"rain.intensity", {0.35, 0.6}},
      {"raindrop.count", {3.0, 6.0}},
      {"raindrop.radius_frac", {0.07, 0.13}},
      {"raindrop.blur_sigma", {1.5, 3.0}},
      {"raindrop.magnify", {1.1, 1.3}},
      {"snow.density", {0.01, 0.02}},
      {"snow.radius_max", {1.0, 2.5}},
      {"snow.intensity", {0.6, 0.9}},
      {"blur.kernel_sigma", {1.5, 3.0}},
      {"blur.motion_length", {0.0, 0.0}},
      {"blur.motion_angle_deg", {0.0, 0.0}},
      {"jpeg.quality", {10.0, 10.0}},
  };
  return table;
}

DegradationSpec sample_spec(const DatasetRecipe& recipe, DegradationKind kind, Rng& rng) {
  DegradationSpec spec;
  spec.kind = kind;
  for (const auto& range : param_schema(kind)) {
    auto [lo, hi] = recipe_range(recipe, kind, range.name);
    double v = lo == hi ? lo : rng.uniform(lo, hi);
    if (range.name == "count" || range.name == "quality") v = std::round(v);
    spec.params[range.name] = v;
  }
  return spec;
}

std::string relative_to(const fs::path& target, const fs::path& base_dir) {
  return fs::relative(fs::absolute(target), fs::absolute(base_dir)).generic_string();
}

std::string padded(std::size_t v, int width) {
  std::string s = std::to_string(v);
  return std::string(std::max(0, width - static_cast<int>(s.size())), '0') + s;
}

std::uint64_t string_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

// Antialiased coverage of a shape predicate via 4x4 supersampling.
template <typename Inside>
double coverage(int y, int x, Inside inside) {
  int hits = 0;
  for (int sy = 0; sy < 4; ++sy)
    for (int sx = 0; sx < 4; ++sx) hits += inside(y + (sy + 0.5) / 4.0, x + (sx + 0.5) / 4.0);
  return hits / 16.0;
}

}  // namespace

// ---------------------------------------------------------------------------------------------

Image generate_clean_image(int side, std::uint64_t seed) {
  Rng rng(seed);
  Image img(side, side);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.15, 0.85);
    c1[c] = rng.uniform(0.15, 0.85);
  }
  const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double fy = rng.uniform(1.0, 3.0), fx = rng.uniform(1.0, 3.0), phase = rng.uniform(0, 6.3);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double u = ((y + 0.5) / side - 0.5) * std::sin(dir) + ((x + 0.5) / side - 0.5) * std::cos(dir) + 0.5;
      const double tex = 0.04 * std::sin(2 * std::numbers::pi * (fy * y + fx * x) / side + phase);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = c0[c] * (1 - u) + c1[c] * u + tex;
    }

  const int shapes = static_cast<int>(rng.integer(3, 7));
  for (int s = 0; s < shapes; ++s) {
    const int type = static_cast<int>(rng.integer(0, 2));
    const double cy = rng.uniform(0.1, 0.9) * side, cx = rng.uniform(0.1, 0.9) * side;
    const double ry = rng.uniform(0.08, 0.3) * side, rx = rng.uniform(0.08, 0.3) * side;
    const double rot = rng.uniform(0.0, std::numbers::pi);
    const double alpha = rng.uniform(0.7, 1.0);
    double color[3];
    for (double& v : color) v = rng.uniform(0.05, 0.95);
    const bool striped = rng.uniform() < 0.25;
    const double stripe_freq = rng.uniform(0.15, 0.35);
    const double cr = std::cos(rot), sr = std::sin(rot);
    auto local = [&](double y, double x, double& ly, double& lx) {
      const double dy = y - cy, dx = x - cx;
      ly = -sr * dx + cr * dy;
      lx = cr * dx + sr * dy;
    };
    auto inside = [&](double y, double x) -> bool {
      double ly, lx;
      local(y, x, ly, lx);
      switch (type) {
        case 0: return (ly * ly) / (ry * ry) + (lx * lx) / (rx * rx) <= 1.0;
        case 1: return std::abs(ly) <= ry && std::abs(lx) <= rx;
        default: return ly <= ry && ly >= -ry && std::abs(lx) <= rx * (ry - ly) / (2 * ry);
      }
    };
    const int y0 = std::max(0, static_cast<int>(cy - 1.5 * std::max(rx, ry)) - 1);
    const int y1 = std::min(side - 1, static_cast<int>(cy + 1.5 * std::max(rx, ry)) + 1);
    const int x0 = std::max(0, static_cast<int>(cx - 1.5 * std::max(rx, ry)) - 1);
    const int x1 = std::min(side - 1, static_cast<int>(cx + 1.5 * std::max(rx, ry)) + 1);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double cov = coverage(y, x, inside);
        if (cov <= 0.0) continue;
        const double a = alpha * cov;
        double shade = 1.0;
        if (striped) {
          double ly, lx;
          local(y + 0.5, x + 0.5, ly, lx);
          shade = 0.8 + 0.2 * std::sin(2 * std::numbers::pi * stripe_freq * lx);
        }
        for (int c = 0; c < 3; ++c)
          img.at(y, x, c) = img.at(y, x, c) * (1 - a) + color[c] * shade * a;
      }
  }
  img.clamp();
  return img;
}

std::vector<fs::path> generate_clean_corpus(const fs::path& dir, int count, int side,
                                            std::uint64_t seed) {
  if (count <= 0) throw ValidationError("clean corpus count must be positive");
  fs::create_directories(dir);
  std::vector<fs::path> paths;
  for (int i = 0; i < count; ++i) {
    fs::path p = dir / ("clean_" + padded(i, 5) + ".png");
    write_png(p, generate_clean_image(side, derive_seed(seed, i)));
    paths.push_back(p);
  }
  return paths;
}

// ---------------------------------------------------------------------------------------------

std::string_view split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(name) + "'");
}

std::string SampleRecord::task() const {
  std::string t;
  for (std::size_t i = 0; i < degradations.size(); ++i) {
    if (i) t += '+';
    t += kind_name(degradations[i].kind);
  }
  return t;
}

int SampleRecord::label() const {
  return degradations.size() == 1 ? kind_index(degradations.front().kind) : -1;
}

ordered_json record_to_json(const SampleRecord& r) {
  ordered_json j;
  j["id"] = r.id;
  j["split"] = split_name(r.split);
  j["hq_path"] = r.hq_path;
  j["lq_path"] = r.lq_path;
  ordered_json degs = ordered_json::array();
  for (const auto& d : r.degradations) {
    ordered_json dj;
    dj["kind"] = kind_name(d.kind);
    ordered_json params = ordered_json::object();
    for (const auto& [k, v] : d.params) params[k] = v;
    dj["params"] = params;
    dj["seed_offset"] = d.seed_offset;
    degs.push_back(dj);
  }
  j["degradations"] = degs;
  if (r.augment) {
    const auto& a = *r.augment;
    ordered_json aj;
    aj["source_id"] = a.source_id;
    aj["angle_deg"] = a.geometry.angle_deg;
    aj["shear"] = a.geometry.shear;
    aj["scale"] = a.geometry.scale;
    aj["crop_x"] = a.geometry.crop_x;
    aj["crop_y"] = a.geometry.crop_y;
    aj["crop_size"] = a.geometry.crop_size;
    aj["noise_sigma"] = a.noise_sigma;
    aj["noise_seed"] = a.noise_seed;
    j["augment"] = aj;
  }
  return j;
}

SampleRecord record_from_json(const json& j) {
  static const std::set<std::string> allowed = {"id", "split", "hq_path", "lq_path",
                                                "degradations", "augment"};
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw ValidationError("manifest record has unknown field '" + key + "'");
  }
  SampleRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.split = parse_split(j.at("split").get<std::string>());
    r.hq_path = j.at("hq_path").get<std::string>();
    r.lq_path = j.at("lq_path").get<std::string>();
    for (const auto& dj : j.at("degradations")) {
      DegradationSpec d;
      d.kind = parse_kind(dj.at("kind").get<std::string>());
      for (const auto& [k, v] : dj.at("params").items()) d.params[k] = v.get<double>();
      d.seed_offset = dj.value("seed_offset", std::int64_t{0});
      validate_spec(d);
      r.degradations.push_back(std::move(d));
    }
    if (j.contains("augment")) {
      const auto& aj = j.at("augment");
      AugmentLog a;
      a.source_id = aj.at("source_id").get<std::string>();
      a.geometry.angle_deg = aj.at("angle_deg").get<double>();
      a.geometry.shear = aj.at("shear").get<double>();
      a.geometry.scale = aj.at("scale").get<double>();
      a.geometry.crop_x = aj.at("crop_x").get<double>();
      a.geometry.crop_y = aj.at("crop_y").get<double>();
      a.geometry.crop_size = aj.at("crop_size").get<double>();
      a.noise_sigma = aj.at("noise_sigma").get<double>();
      a.noise_seed = aj.at("noise_seed").get<std::uint64_t>();
      r.augment = a;
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest record: ") + e.what());
  }
  if (r.degradations.empty()) throw ValidationError("manifest record '" + r.id + "' has no degradations");
  return r;
}

std::vector<SampleRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot read manifest: " + path.string());
  std::vector<SampleRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

void write_manifest(const fs::path& path, std::span<const SampleRecord> records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write manifest: " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

void validate_manifest(const fs::path& path) {
  const fs::path base = path.parent_path();
  for (const auto& r : read_manifest(path)) {
    for (const auto& rel : {r.hq_path, r.lq_path}) {
      try {
        validate_image(read_png(base / rel), rel);
      } catch (const RuntimeFailure& e) {
        throw ValidationError("record '" + r.id + "': " + e.what());
      }
    }
  }
}

std::vector<LoadedSample> load_samples(const fs::path& manifest, std::optional<Split> split,
                                       bool single_only) {
  const fs::path base = manifest.parent_path();
  std::vector<LoadedSample> out;
  for (const auto& r : read_manifest(manifest)) {
    if (split && r.split != *split) continue;
    if (single_only && r.degradations.size() != 1) continue;
    LoadedSample s;
    s.id = r.id;
    s.task = r.task();
    s.label = r.label();
    s.split = r.split;
    s.lq = read_png(base / r.lq_path);
    s.hq = read_png(base / r.hq_path);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

void DatasetRecipe::validate() const {
  if (side < kMinImageSide) throw ValidationError("recipe.side must be >= 16");
  if (target_count <= 0) throw ValidationError("recipe.target_count must be > 0");
  for (const auto& [kind, n] : per_kind) {
    if (n < 0) throw ValidationError("recipe.per_kind." + std::string(kind_name(kind)) + " must be >= 0");
  }
  for (const auto& m : mixtures) {
    if (m.kinds.size() < 2 || m.kinds.size() > 3) {
      throw ValidationError("recipe mixtures must list 2 or 3 degradation kinds");
    }
    if (m.count < 0) throw ValidationError("recipe mixture count must be >= 0");
  }
  if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1.0) {
    throw ValidationError("recipe split fractions must be >= 0 and sum below 1");
  }
  for (const auto& [key, range] : ranges) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) throw ValidationError("recipe range key '" + key + "' must be kind.param");
    DegradationSpec probe;
    probe.kind = parse_kind(key.substr(0, dot));
    probe.params[key.substr(dot + 1)] = range.first;
    validate_spec(probe);
    probe.params[key.substr(dot + 1)] = range.second;
    validate_spec(probe);
    if (range.first > range.second) throw ValidationError("recipe range " + key + " has lo > hi");
  }
}

std::pair<double, double> recipe_range(const DatasetRecipe& recipe, DegradationKind kind,
                                       const std::string& param) {
  const std::string key = std::string(kind_name(kind)) + "." + param;
  if (auto it = recipe.ranges.find(key); it != recipe.ranges.end()) return it->second;
  if (auto it = default_recipe_ranges().find(key); it != default_recipe_ranges().end()) {
    return it->second;
  }
  for (const auto& r : param_schema(kind)) {
    if (r.name == param) return {r.fallback, r.fallback};
  }
  throw ValidationError("no parameter " + key);
}

DatasetRecipe recipe_from_json(const json& j) {
  DatasetRecipe r;
  try {
    r.side = j.value("side", r.side);
    if (j.contains("per_kind")) {
      for (const auto& [k, v] : j.at("per_kind").items()) r.per_kind[parse_kind(k)] = v.get<int>();
    }
    if (j.contains("mixtures")) {
      for (const auto& mj : j.at("mixtures")) {
        MixtureRecipe m;
        for (const auto& k : mj.at("kinds")) m.kinds.push_back(parse_kind(k.get<std::string>()));
        m.count = mj.at("count").get<int>();
        r.mixtures.push_back(std::move(m));
      }
    }
    if (j.contains("ranges")) {
      for (const auto& [k, v] : j.at("ranges").items()) {
        r.ranges[k] = {v.at(0).get<double>(), v.at(1).get<double>()};
      }
    }
    r.val_fraction = j.value("val_fraction", r.val_fraction);
    r.test_fraction = j.value("test_fraction", r.test_fraction);
    r.target_count = j.value("target_count", r.target_count);
    if (j.contains("augment")) {
      const auto& a = j.at("augment");
      r.augment_rotation = a.value("rotation", true);
      r.augment_affine = a.value("affine", true);
      r.augment_noise = a.value("noise", true);
      r.augment_crop = a.value("crop", true);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed dataset recipe: ") + e.what());
  }
  r.validate();
  return r;
}

json recipe_to_json(const DatasetRecipe& r) {
  json j;
  j["side"] = r.side;
  json per_kind = json::object();
  for (const auto& [k, n] : r.per_kind) per_kind[std::string(kind_name(k))] = n;
  j["per_kind"] = per_kind;
  json mixtures = json::array();
  for (const auto& m : r.mixtures) {
    json kinds = json::array();
    for (auto k : m.kinds) kinds.push_back(kind_name(k));
    mixtures.push_back({{"kinds", kinds}, {"count", m.count}});
  }
  j["mixtures"] = mixtures;
  json ranges = json::object();
  for (const auto& [k, v] : r.ranges) ranges[k] = {v.first, v.second};
  j["ranges"] = ranges;
  j["val_fraction"] = r.val_fraction;
  j["test_fraction"] = r.test_fraction;
  j["target_count"] = r.target_count;
  j["augment"] = {{"rotation", r.augment_rotation}, {"affine", r.augment_affine},
                  {"noise", r.augment_noise}, {"crop", r.augment_crop}};
  return j;
}

BuildSummary build_dataset(const fs::path& clean_dir, const DatasetRecipe& recipe,
                           const fs::path& out_dir, std::uint64_t seed) {
  recipe.validate();
  if (!fs::is_directory(clean_dir)) throw RuntimeFailure("clean directory not found: " + clean_dir.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(clean_dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  fs::create_directories(out_dir / "lq");
  BuildSummary summary;
  std::vector<std::string> hq_paths;
  std::vector<Image> clean;
  for (const auto& f : files) {
    Image img;
    try {
      img = read_png(f);
      validate_image(img, f.string());
    } catch (const std::exception& e) {
      log::warn("synth.skip_file", {{"path", f.string()}, {"reason", e.what()}});
      ++summary.skipped_files;
      continue;
    }
    if (img.height() != recipe.side || img.width() != recipe.side) {
      img = quantize8(resize_bilinear(img, recipe.side, recipe.side));
      const fs::path hq = out_dir / "hq" / (f.stem().string() + ".png");
      write_png(hq, img);
      hq_paths.push_back(relative_to(hq, out_dir));
    } else {
      hq_paths.push_back(relative_to(f, out_dir));
    }
    clean.push_back(std::move(img));
  }
  if (clean.empty()) {
    throw ValidationError("clean corpus " + clean_dir.string() + " contains no decodable images");
  }
  summary.clean_images = clean.size();

  // Partition clean images so held-out records never share a source with training records.
  std::vector<std::size_t> order(clean.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), Rng(derive_seed(seed, 0xC1EA)).engine());
  const auto n = order.size();
  const auto n_test = static_cast<std::size_t>(std::lround(n * recipe.test_fraction));
  const auto n_val = static_cast<std::size_t>(std::lround(n * recipe.val_fraction));
  std::map<Split, std::vector<std::size_t>> pools;
  pools[Split::test].assign(order.begin(), order.begin() + std::min(n, n_test));
  pools[Split::val].assign(order.begin() + std::min(n, n_test),
                           order.begin() + std::min(n, n_test + n_val));
  pools[Split::train].assign(order.begin() + std::min(n, n_test + n_val), order.end());
  for (auto& [split, pool] : pools) {
    if (pool.empty()) pool = order;
  }

  std::vector<SampleRecord> records;
  std::size_t global = 0;
  auto emit_group = [&](const std::string& task, const std::vector<DegradationKind>& kinds,
                        int count, std::size_t group) {
    const auto c_test = static_cast<int>(std::lround(count * recipe.test_fraction));
    const auto c_val = static_cast<int>(std::lround(count * recipe.val_fraction));
    const int c_train = count - c_test - c_val;
    for (int j = 0; j < count; ++j, ++global) {
      const Split split = j < c_train ? Split::train : (j < c_train + c_val ? Split::val : Split::test);
      const int within = split == Split::train ? j : (split == Split::val ? j - c_train : j - c_train - c_val);
      const auto& pool = pools[split];
      const std::size_t src = pool[(static_cast<std::size_t>(within) + group * 7) % pool.size()];

      const std::uint64_t record_seed = derive_seed(seed, global + 1);
      Rng param_rng(record_seed);
      SampleRecord r;
      r.id = task + "_" + padded(j, 4);
      r.split = split;
      for (auto k : kinds) r.degradations.push_back(sample_spec(recipe, k, param_rng));
      const Image lq = compose_mixture(clean[src], r.degradations, record_seed);
      const fs::path lq_file = out_dir / "lq" / (r.id + ".png");
      write_png(lq_file, lq);
      r.lq_path = relative_to(lq_file, out_dir);
      r.hq_path = hq_paths[src];
      records.push_back(std::move(r));
    }
  };

  std::size_t group = 0;
  for (auto kind : kAllKinds) {
    auto it = recipe.per_kind.find(kind);
    if (it == recipe.per_kind.end() || it->second == 0) continue;
    emit_group(std::string(kind_name(kind)), {kind}, it->second, group++);
  }
  for (const auto& m : recipe.mixtures) {
    if (m.count == 0) continue;
    std::string task;
    for (auto k : m.kinds) task += (task.empty() ? "" : "+") + std::string(kind_name(k));
    emit_group(task, m.kinds, m.count, group++);
  }

  summary.manifest = out_dir / "manifest.jsonl";
  summary.records = records.size();
  write_manifest(summary.manifest, records);
  log::info("synth.done", {{"manifest", summary.manifest.string()},
                           {"records", std::to_string(summary.records)},
                           {"clean", std::to_string(summary.clean_images)},
                           {"skipped", std::to_string(summary.skipped_files)}});
  return summary;
}

// ---------------------------------------------------------------------------------------------

Image apply_geometric(const Image& img, const GeometricAugment& aug) {
  const int h = img.height(), w = img.width();
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double th = aug.angle_deg * std::numbers::pi / 180.0;
  // Forward map M = R(theta) * Shear * Scale about the image center.
  const double c = std::cos(th), s = std::sin(th);
  const double m00 = aug.scale * c, m01 = aug.scale * (c * aug.shear - s);
  const double m10 = aug.scale * s, m11 = aug.scale * (s * aug.shear + c);
  const double det = m00 * m11 - m01 * m10;
  const double i00 = m11 / det, i01 = -m01 / det, i10 = -m10 / det, i11 = m00 / det;
  const double crop = aug.crop_size > 0.0 ? aug.crop_size : static_cast<double>(std::max(h, w));
  const double ox = aug.crop_size > 0.0 ? aug.crop_x : 0.0;
  const double oy = aug.crop_size > 0.0 ? aug.crop_y : 0.0;
  const double sx = aug.crop_size > 0.0 ? crop / w : 1.0;
  const double sy = aug.crop_size > 0.0 ? crop / h : 1.0;

  Image out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double qy = oy + (y + 0.5) * sy - 0.5 - cy;
      const double qx = ox + (x + 0.5) * sx - 0.5 - cx;
      const double px = cx + i00 * qx + i01 * qy;
      const double py = cy + i10 * qx + i11 * qy;
      for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = sample_bilinear(img, py, px, ch);
    }
  out.clamp();
  return out;
}

fs::path balance_and_augment(const fs::path& manifest, int target_count, std::uint64_t seed,
                             const AugmentOptions& options, std::optional<fs::path> out_manifest) {
  const auto records = read_manifest(manifest);
  const fs::path base = manifest.parent_path();

  std::vector<std::string> tasks;
  std::map<std::string, std::vector<std::size_t>> by_task;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto t = records[i].task();
    if (!by_task.contains(t)) tasks.push_back(t);
    by_task[t].push_back(i);
  }
  for (const auto& t : tasks) {
    if (static_cast<int>(by_task[t].size()) > target_count) {
      throw ValidationError("target_count " + std::to_string(target_count) + " is below the " +
                            std::to_string(by_task[t].size()) + " records of task '" + t +
                            "' (balance_and_augment never subsamples)");
    }
  }

  std::vector<SampleRecord> out = records;
  for (const auto& t : tasks) {
    const auto& sources = by_task[t];
    const int missing = target_count - static_cast<int>(sources.size());
    for (int m = 0; m < missing; ++m) {
      const SampleRecord& src = records[sources[m % sources.size()]];
      Rng rng(derive_seed(seed, string_hash(t) + static_cast<std::uint64_t>(m)));
      const Image lq_src = read_png(base / src.lq_path);
      const Image hq_src = read_png(base / src.hq_path);
      const int side = lq_src.height();

      AugmentLog log;
      log.source_id = src.id;
      if (options.rotation) log.geometry.angle_deg = rng.uniform(-20.0, 20.0);
      if (options.affine) {
        log.geometry.shear = rng.uniform(-0.15, 0.15);
        log.geometry.scale = rng.uniform(0.9, 1.1);
      }
      if (options.crop) {
        const double size = std::round(rng.uniform(0.75, 1.0) * side);
        log.geometry.crop_size = size;
        log.geometry.crop_x = std::round(rng.uniform(0.0, side - size));
        log.geometry.crop_y = std::round(rng.uniform(0.0, side - size));
      }
      if (options.noise) log.noise_sigma = rng.uniform(0.005, 0.03);
      log.noise_seed = derive_seed(seed, string_hash(src.id) ^ static_cast<std::uint64_t>(m));

      Image lq = apply_geometric(lq_src, log.geometry);
      const Image hq = apply_geometric(hq_src, log.geometry);
      if (log.noise_sigma > 0.0) {
        Rng noise(log.noise_seed);
        for (double& v : lq.data()) v += log.noise_sigma * noise.normal();
        lq.clamp();
      }

      SampleRecord r = src;
      r.id = src.id + "_aug" + padded(m, 4);
      const fs::path lq_file = base / "aug" / (r.id + "_lq.png");
      const fs::path hq_file = base / "aug" / (r.id + "_hq.png");
      write_png(lq_file, lq);
      write_png(hq_file, hq);
      r.lq_path = relative_to(lq_file, base);
      r.hq_path = relative_to(hq_file, base);
      r.augment = log;
      out.push_back(std::move(r));
    }
  }

  const fs::path dest = out_manifest.value_or(base / (manifest.stem().string() + ".balanced.jsonl"));
  write_manifest(dest, out);
  log::info("synth.balanced", {{"manifest", dest.string()},
                               {"records", std::to_string(out.size())},
                               {"target", std::to_string(target_count)}});
  return dest;
}

}  // namespace dfr
