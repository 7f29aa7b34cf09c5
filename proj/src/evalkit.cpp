#include "dfr/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "dfr/error.hpp"
#include "dfr/models.hpp"
#include "dfr/png_io.hpp"
#include "dfr/tensor_image.hpp"

namespace dfr {

namespace {

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ValidationError(std::string(what) + ": image shapes differ (" + std::to_string(a.height()) + "x" +
                          std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                          std::to_string(b.width()) + ")");
  }
}

constexpr int kSsimWindow = 11;

std::array<double, kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow> k{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable valid-mode filtering of one channel.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w) {
  static const auto k = ssim_kernel();
  const int ow = w - kSsimWindow + 1;
  const int oh = h - kSsimWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) s += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

class PsnrMetric : public Metric {
 public:
  std::string name() const override { return "psnr"; }
  double compute(const Image& o, const Image& r) const override { return psnr(o, r); }
};

class SsimMetric : public Metric {
 public:
  std::string name() const override { return "ssim"; }
  double compute(const Image& o, const Image& r) const override { return ssim(o, r); }
};

std::vector<Image> load_lq_images(const std::filesystem::path& manifest) {
  std::vector<Image> out;
  for (auto& s : load_samples(manifest)) out.push_back(std::move(s.lq));
  return out;
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b, "psnr");
  double sum = 0.0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = da[i] - db[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(da.size());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  const int h = a.height();
  const int w = a.width();
  if (h < kSsimWindow || w < kSsimWindow) throw ValidationError("ssim needs images of at least 11x11");
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  double total = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> x(static_cast<std::size_t>(h) * w), y(x.size()), xx(x.size()), yy(x.size()), xy(x.size());
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const std::size_t k = static_cast<std::size_t>(i) * w + j;
        x[k] = a.at(i, j, c);
        y[k] = b.at(i, j, c);
        xx[k] = x[k] * x[k];
        yy[k] = y[k] * y[k];
        xy[k] = x[k] * y[k];
      }
    const auto mx = filter_valid(x, h, w), my = filter_valid(y, h, w);
    const auto sxx = filter_valid(xx, h, w), syy = filter_valid(yy, h, w), sxy = filter_valid(xy, h, w);
    for (std::size_t k = 0; k < mx.size(); ++k) {
      const double vx = sxx[k] - mx[k] * mx[k];
      const double vy = syy[k] - my[k] * my[k];
      const double cov = sxy[k] - mx[k] * my[k];
      total += ((2 * mx[k] * my[k] + c1) * (2 * cov + c2)) /
               ((mx[k] * mx[k] + my[k] * my[k] + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

std::vector<std::unique_ptr<Metric>> builtin_metrics() {
  std::vector<std::unique_ptr<Metric>> m;
  m.push_back(std::make_unique<PsnrMetric>());
  m.push_back(std::make_unique<SsimMetric>());
  return m;
}

namespace {

// tr(sqrt(A^1/2 B A^1/2)) via symmetric eigendecompositions.
double trace_sqrt_product(const torch::Tensor& a, const torch::Tensor& b) {
  auto [la, va] = torch::linalg_eigh(a);
  auto sa = torch::matmul(va * la.clamp_min(0).sqrt().unsqueeze(0), va.t());
  auto m = torch::matmul(torch::matmul(sa, b), sa);
  m = 0.5 * (m + m.t());
  auto lm = std::get<0>(torch::linalg_eigh(m));
  return lm.clamp_min(0).sqrt().sum().item<double>();
}

}  // namespace

double frechet_distance(const torch::Tensor& a_in, const torch::Tensor& b_in, double eps) {
  if (a_in.dim() != 2 || b_in.dim() != 2 || a_in.size(1) != b_in.size(1)) {
    throw ValidationError("frechet distance needs two [n, d] embedding sets of equal width");
  }
  if (a_in.size(0) < 1 || b_in.size(0) < 1) throw ValidationError("frechet distance needs non-empty sets");
  const auto a = a_in.to(torch::kFloat64);
  const auto b = b_in.to(torch::kFloat64);
  const int64_t d = a.size(1);
  auto cov = [&](const torch::Tensor& x) {
    auto centered = x - x.mean(0, true);
    auto c = x.size(0) > 1 ? torch::matmul(centered.t(), centered) / static_cast<double>(x.size(0) - 1)
                           : torch::zeros({d, d}, x.options());
    return 0.5 * (c + c.t()) + eps * torch::eye(d, x.options());
  };
  const auto ca = cov(a);
  const auto cb = cov(b);
  const double mean_term = (a.mean(0) - b.mean(0)).pow(2).sum().item<double>();
  const double traces = (ca.trace() + cb.trace()).item<double>();
  const double cross = 0.5 * (trace_sqrt_product(ca, cb) + trace_sqrt_product(cb, ca));
  return std::max(0.0, mean_term + traces - 2.0 * cross);
}

double feature_distance(const std::vector<Image>& set_a, const std::vector<Image>& set_b, VisionEncoder& encoder) {
  if (set_a.empty() || set_b.empty()) throw ValidationError("feature distance needs two non-empty image sets");
  torch::NoGradGuard guard;
  auto embed = [&](const std::vector<Image>& set) {
    std::vector<torch::Tensor> parts;
    for (std::size_t s = 0; s < set.size(); s += 64) {
      const std::size_t e = std::min(set.size(), s + 64);
      parts.push_back(encoder.encode(images_to_batch(std::span<const Image>(set.data() + s, e - s))));
    }
    return torch::cat(parts);
  };
  return frechet_distance(embed(set_a), embed(set_b));
}

double feature_distance(const std::filesystem::path& manifest_a, const std::filesystem::path& manifest_b,
                        VisionEncoder& encoder) {
  return feature_distance(load_lq_images(manifest_a), load_lq_images(manifest_b), encoder);
}

double silhouette(const torch::Tensor& points, const std::vector<int>& labels) {
  if (points.dim() != 2 || points.size(0) != static_cast<int64_t>(labels.size())) {
    throw ValidationError("silhouette: need one label per point");
  }
  std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) throw ValidationError("silhouette needs at least 2 distinct labels");
  const auto x = torch::nn::functional::normalize(points.to(torch::kFloat64),
                                                  torch::nn::functional::NormalizeFuncOptions().dim(1));
  const auto dist = (1.0 - torch::matmul(x, x.t())).clamp_min(0).contiguous();
  const double* dp = dist.data_ptr<double>();
  const std::size_t n = labels.size();
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, double> sums;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sums[labels[j]] += dp[i * n + j];
    }
    const std::size_t own = sizes[labels[i]];
    if (own <= 1) continue;  // singleton clusters score 0
    const double a = sums[labels[i]] / static_cast<double>(own - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, sz] : sizes) {
      if (label != labels[i]) b = std::min(b, sums[label] / static_cast<double>(sz));
    }
    const double denom = std::max(a, b);
    total += denom > 0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

Separability embedding_separability(const std::vector<LoadedSample>& samples, Models& models) {
  std::vector<Image> images;
  std::vector<int> labels;
  for (const auto& s : samples) {
    if (s.label < 0) continue;
    images.push_back(s.lq);
    labels.push_back(s.label);
  }
  if (images.empty()) throw ValidationError("separability needs single-degradation samples");
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> clip, pd;
  for (std::size_t s = 0; s < images.size(); s += 64) {
    const std::size_t e = std::min(images.size(), s + 64);
    const auto p = compute_prompts(models, images_to_batch(std::span<const Image>(images.data() + s, e - s)));
    clip.push_back(p.p_clip);
    pd.push_back(p.p_d);
  }
  Separability out;
  out.samples = images.size();
  out.silhouette_pd = silhouette(torch::cat(pd), labels);
  out.silhouette_clip = silhouette(torch::cat(clip), labels);
  return out;
}

Separability embedding_separability(const std::filesystem::path& manifest, Models& models) {
  return embedding_separability(load_samples(manifest, Split::test, true), models);
}

double similarity_accuracy(const EncoderBundle& bundle, const std::vector<LoadedSample>& samples) {
  if (samples.empty()) throw ValidationError("accuracy needs samples");
  torch::NoGradGuard guard;
  auto encoder = bundle.encoder;
  std::size_t correct = 0, counted = 0;
  for (std::size_t s = 0; s < samples.size(); s += 64) {
    const std::size_t e = std::min(samples.size(), s + 64);
    std::vector<Image> batch;
    for (std::size_t i = s; i < e; ++i) batch.push_back(samples[i].lq);
    const auto scores = similarity_scores(encoder->encode(images_to_batch(batch)), bundle.bank);
    const auto arg = scores.argmax(1);
    for (std::size_t i = s; i < e; ++i) {
      const int want = bundle.bank.index_of(samples[i].task);
      if (want < 0) continue;
      ++counted;
      if (arg[static_cast<int64_t>(i - s)].item<int64_t>() == want) ++correct;
    }
  }
  if (counted == 0) throw ValidationError("no sample kind is present in the prototype bank");
  return static_cast<double>(correct) / static_cast<double>(counted);
}

double classifier_accuracy(Models& models, const std::vector<LoadedSample>& samples) {
  torch::NoGradGuard guard;
  std::size_t correct = 0, counted = 0;
  for (std::size_t s = 0; s < samples.size(); s += 64) {
    const std::size_t e = std::min(samples.size(), s + 64);
    std::vector<Image> batch;
    for (std::size_t i = s; i < e; ++i) batch.push_back(samples[i].lq);
    const auto p = compute_prompts(models, images_to_batch(batch));
    const auto arg = models.prompt->classify(p.p_d).argmax(1);
    for (std::size_t i = s; i < e; ++i) {
      if (samples[i].label < 0) continue;
      ++counted;
      if (arg[static_cast<int64_t>(i - s)].item<int64_t>() == samples[i].label) ++correct;
    }
  }
  if (counted == 0) throw ValidationError("classifier accuracy needs single-degradation samples");
  return static_cast<double>(correct) / static_cast<double>(counted);
}

std::vector<std::pair<std::string, std::map<std::string, double>>> task_aggregates(const Report& report) {
  std::vector<std::pair<std::string, std::map<std::string, double>>> out;
  std::map<std::string, std::size_t> index, counts;
  for (const auto& row : report.rows) {
    if (!index.count(row.task)) {
      index[row.task] = out.size();
      out.emplace_back(row.task, std::map<std::string, double>{});
    }
    auto& agg = out[index[row.task]].second;
    for (const auto& [k, v] : row.metrics) agg[k] += v;
    ++counts[row.task];
  }
  for (auto& [task, agg] : out) {
    for (auto& [k, v] : agg) v /= static_cast<double>(counts[task]);
  }
  return out;
}

ReportFiles make_report(const Report& report, const std::filesystem::path& out_dir) {
  if (report.rows.empty()) throw ValidationError("report needs at least one result row");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw ValidationError("report directory " + out_dir.string() + " is not writable");
  }
  ReportFiles files{out_dir / "report.json", out_dir / "report.csv", out_dir / "grid.png"};
  const auto aggregates = task_aggregates(report);

  std::set<std::string> metric_names;
  for (const auto& row : report.rows)
    for (const auto& [k, v] : row.metrics) metric_names.insert(k);

  nlohmann::ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["config_digest"] = report.config_digest;
  j["provenance"] = report.provenance;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : report.rows) {
    nlohmann::ordered_json r;
    r["id"] = row.id;
    r["task"] = row.task;
    nlohmann::ordered_json m = nlohmann::ordered_json::object();
    for (const auto& [k, v] : row.metrics) m[k] = v;
    r["metrics"] = m;
    j["rows"].push_back(r);
  }
  nlohmann::ordered_json agg = nlohmann::ordered_json::object();
  for (const auto& [task, metrics] : aggregates) {
    nlohmann::ordered_json m = nlohmann::ordered_json::object();
    for (const auto& [k, v] : metrics) m[k] = v;
    agg[task] = m;
  }
  j["aggregates"] = agg;
  {
    std::ofstream out(files.json, std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + files.json.string());
    out << j.dump(2) << "\n";
  }
  {
    std::ofstream out(files.csv, std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + files.csv.string());
    out << "task,count";
    for (const auto& name : metric_names) out << "," << name;
    out << "\n";
    for (const auto& [task, metrics] : aggregates) {
      std::size_t count = 0;
      for (const auto& row : report.rows) count += row.task == task;
      out << task << "," << count;
      for (const auto& name : metric_names) {
        const auto it = metrics.find(name);
        out << "," << (it == metrics.end() ? std::string() : fmt6(it->second));
      }
      out << "\n";
    }
  }
  const int th = report.rows.front().gt.height();
  const int tw = report.rows.front().gt.width();
  Image grid(th * static_cast<int>(report.rows.size()), tw * 3);
  for (std::size_t r = 0; r < report.rows.size(); ++r) {
    const Image* tiles[3] = {&report.rows[r].lq, &report.rows[r].restored, &report.rows[r].gt};
    for (int c = 0; c < 3; ++c) {
      const Image tile = tiles[c]->height() == th && tiles[c]->width() == tw ? *tiles[c]
                                                                             : resize_bilinear(*tiles[c], th, tw);
      for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x)
          for (int k = 0; k < 3; ++k) grid.at(static_cast<int>(r) * th + y, c * tw + x, k) = tile.at(y, x, k);
    }
  }
  write_png(files.grid, grid);
  return files;
}

}  // namespace dfr
