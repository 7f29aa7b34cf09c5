#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "dfr/data_synth.hpp"
#include "dfr/embeddings.hpp"
#include "dfr/image.hpp"

namespace dfr {

struct Models;

inline constexpr double kPsnrCap = 99.0;

// 10 log10(1 / MSE), capped at 99 dB when MSE < 1e-10.
double psnr(const Image& a, const Image& b);
// Mean SSIM over valid 11x11 windows (Gaussian, sigma 1.5) and channels; C1 = 0.01^2, C2 = 0.03^2.
double ssim(const Image& a, const Image& b);

// Pluggable per-image metric; psnr and ssim ship built in.
class Metric {
 public:
  virtual ~Metric() = default;
  virtual std::string name() const = 0;
  virtual double compute(const Image& output, const Image& reference) const = 0;
};
std::vector<std::unique_ptr<Metric>> builtin_metrics();

// Frechet distance between Gaussian fits of two embedding sets ([n, d] each). Covariances get
// eps * I added; the result is the average of both argument orders and clamped at 0.
double frechet_distance(const torch::Tensor& a, const torch::Tensor& b, double eps = 1e-6);
double feature_distance(const std::vector<Image>& set_a, const std::vector<Image>& set_b, VisionEncoder& encoder);
// Uses the LQ images of every record in each manifest.
double feature_distance(const std::filesystem::path& manifest_a, const std::filesystem::path& manifest_b,
                        VisionEncoder& encoder);

// Mean silhouette coefficient with cosine distance. Fewer than two labels is rejected.
double silhouette(const torch::Tensor& points, const std::vector<int>& labels);

struct Separability {
  double silhouette_pd = 0.0;
  double silhouette_clip = 0.0;
  std::size_t samples = 0;
};
Separability embedding_separability(const std::vector<LoadedSample>& samples, Models& models);
Separability embedding_separability(const std::filesystem::path& manifest, Models& models);

// Fraction of samples whose similarity argmax names their own kind.
double similarity_accuracy(const EncoderBundle& bundle, const std::vector<LoadedSample>& samples);
// Fraction of samples whose classifier C(P_D) argmax equals their label.
double classifier_accuracy(Models& models, const std::vector<LoadedSample>& samples);

struct ReportRow {
  std::string id;
  std::string task;
  std::map<std::string, double> metrics;
  Image lq;
  Image restored;
  Image gt;
};

struct Report {
  std::vector<ReportRow> rows;
  std::string config_digest;
  std::string provenance;
};

inline constexpr int kReportSchemaVersion = 1;

struct ReportFiles {
  std::filesystem::path json;
  std::filesystem::path csv;
  std::filesystem::path grid;
};

// Per-task means of every metric, keyed task -> metric -> mean, tasks in first-seen order.
std::vector<std::pair<std::string, std::map<std::string, double>>> task_aggregates(const Report& report);

// report.json (rows + aggregates), report.csv (task,count,<metrics sorted by name>) and
// grid.png (one row per record in order: LQ | restored | GT).
ReportFiles make_report(const Report& report, const std::filesystem::path& out_dir);

}  // namespace dfr
