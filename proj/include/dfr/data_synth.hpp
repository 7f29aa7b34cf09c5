#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dfr/image.hpp"

namespace dfr {

enum class DegradationKind { noise, low_light, haze, rain, raindrop, snow, blur, jpeg };

inline constexpr int kNumDegradationKinds = 8;
inline constexpr std::array<DegradationKind, kNumDegradationKinds> kAllKinds = {
    DegradationKind::noise, DegradationKind::low_light, DegradationKind::haze,
    DegradationKind::rain,  DegradationKind::raindrop,  DegradationKind::snow,
    DegradationKind::blur,  DegradationKind::jpeg};

std::string_view kind_name(DegradationKind kind);
// Throws ValidationError listing the valid names.
DegradationKind parse_kind(std::string_view name);
int kind_index(DegradationKind kind);

struct ParamRange {
  std::string name;
  double lo;
  double hi;
  double fallback;
};

// Documented closed ranges for every parameter of a kind, with the value used when absent.
const std::vector<ParamRange>& param_schema(DegradationKind kind);

struct DegradationSpec {
  DegradationKind kind = DegradationKind::noise;
  std::map<std::string, double> params;
  std::int64_t seed_offset = 0;

  // Parameter value, or the schema fallback when unset.
  double param(const std::string& name) const;
  bool operator==(const DegradationSpec&) const = default;
};

// Throws ValidationError naming the offending parameter.
void validate_spec(const DegradationSpec& spec);

Image apply_degradation(const Image& img, const DegradationSpec& spec, std::uint64_t seed);

// Applies specs in order; stage i uses derive_seed(seed, first_index + i). Splitting a chain
// at position k and passing first_index = k to the tail reproduces the full chain.
Image compose_mixture(const Image& img, std::span<const DegradationSpec> specs,
                      std::uint64_t seed, std::size_t first_index = 0);

// Individual degradation primitives, exposed for testing and for the augmentation path.
Image gaussian_blur(const Image& img, double sigma);
Image convolve(const Image& img, const std::vector<double>& kernel, int ksize);
std::vector<double> motion_kernel(double length, double angle_deg, int& ksize);
Image jpeg_roundtrip(const Image& img, int quality);
double haze_transmission(double beta);
Image haze_synthesize(const Image& clear, double transmission, double airlight);
Image haze_invert(const Image& hazy, double transmission, double airlight);

// Procedural clean images: smooth backgrounds, antialiased shapes, low-frequency texture.
Image generate_clean_image(int side, std::uint64_t seed);
// Writes clean_<i>.png into dir; returns the written paths.
std::vector<std::filesystem::path> generate_clean_corpus(const std::filesystem::path& dir,
                                                        int count, int side, std::uint64_t seed);

// ---------------------------------------------------------------------------------------------
// Manifests

enum class Split { train, val, test };
std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct GeometricAugment {
  double angle_deg = 0.0;
  double shear = 0.0;
  double scale = 1.0;
  double crop_x = 0.0;  // crop window origin and side, in source pixels
  double crop_y = 0.0;
  double crop_size = 0.0;  // 0 means full frame
  bool operator==(const GeometricAugment&) const = default;
};

// Same geometric map for any image of the given shape; used identically on LQ and HQ.
Image apply_geometric(const Image& img, const GeometricAugment& aug);

struct AugmentLog {
  std::string source_id;
  GeometricAugment geometry;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

struct SampleRecord {
  std::string id;
  Split split = Split::train;
  std::string hq_path;  // relative to the manifest directory
  std::string lq_path;
  std::vector<DegradationSpec> degradations;
  std::optional<AugmentLog> augment;

  // "kind" for single degradations, "kind1+kind2" for mixtures.
  std::string task() const;
  // Class index of a single-degradation record; -1 for mixtures.
  int label() const;
};

nlohmann::ordered_json record_to_json(const SampleRecord& record);
SampleRecord record_from_json(const nlohmann::json& j);

std::vector<SampleRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const SampleRecord> records);
// Decodes every referenced image; throws ValidationError on the first bad record.
void validate_manifest(const std::filesystem::path& path);

struct LoadedSample {
  std::string id;
  std::string task;
  int label = -1;
  Split split = Split::train;
  Image lq;
  Image hq;
};

std::vector<LoadedSample> load_samples(const std::filesystem::path& manifest,
                                       std::optional<Split> split = std::nullopt,
                                       bool single_only = false);

// ---------------------------------------------------------------------------------------------
// Dataset construction

struct MixtureRecipe {
  std::vector<DegradationKind> kinds;  // length 2 or 3, application order
  int count = 0;
};

struct DatasetRecipe {
  int side = 64;
  std::map<DegradationKind, int> per_kind;
  std::vector<MixtureRecipe> mixtures;
  // Sampling ranges per "kind.param"; unset parameters use the built-in recipe ranges.
  std::map<std::string, std::pair<double, double>> ranges;
  double val_fraction = 0.0;
  double test_fraction = 0.2;
  int target_count = 10000;  // unified size per task for balance_and_augment
  bool augment_rotation = true;
  bool augment_affine = true;
  bool augment_noise = true;
  bool augment_crop = true;

  void validate() const;
};

DatasetRecipe recipe_from_json(const nlohmann::json& j);
nlohmann::json recipe_to_json(const DatasetRecipe& recipe);

struct BuildSummary {
  std::filesystem::path manifest;
  std::size_t records = 0;
  std::size_t clean_images = 0;
  std::size_t skipped_files = 0;
};

// Sampling range used for a recipe parameter (recipe override or built-in default).
std::pair<double, double> recipe_range(const DatasetRecipe& recipe, DegradationKind kind,
                                       const std::string& param);

BuildSummary build_dataset(const std::filesystem::path& clean_dir, const DatasetRecipe& recipe,
                           const std::filesystem::path& out_dir, std::uint64_t seed);

struct AugmentOptions {
  bool rotation = true;
  bool affine = true;
  bool noise = true;
  bool crop = true;
};

// Oversamples every task up to exactly target_count with augmented copies. Writes
// <stem>.balanced.jsonl next to the input unless out_manifest is given.
std::filesystem::path balance_and_augment(const std::filesystem::path& manifest, int target_count,
                                          std::uint64_t seed, const AugmentOptions& options = {},
                                          std::optional<std::filesystem::path> out_manifest = {});

}  // namespace dfr
