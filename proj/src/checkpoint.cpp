#include "dfr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "dfr/error.hpp"
#include "dfr/hash.hpp"

namespace dfr {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'F', 'R', 'P', 'A', 'R', 'A', 'M'};

uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 1;
    case torch::kFloat64: return 2;
    case torch::kInt64: return 3;
    default: throw ValidationError("checkpoint: unsupported tensor dtype");
  }
}

torch::ScalarType dtype_from_code(uint8_t code) {
  switch (code) {
    case 1: return torch::kFloat32;
    case 2: return torch::kFloat64;
    case 3: return torch::kInt64;
    default: throw RuntimeFailure("checkpoint integrity: unknown dtype code " + std::to_string(code));
  }
}

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void pod(T v) { raw(&v, sizeof v); }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::size_t end) : buf_(buf), end_(end) {}
  void raw(void* p, std::size_t n) {
    if (pos_ + n > end_) throw RuntimeFailure("checkpoint integrity: params.bin is truncated");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

void hash_tensor(uint64_t& h, const std::string& name, const torch::Tensor& t) {
  auto c = t.detach().cpu().contiguous();
  h = fnv1a64(name, h);
  const uint8_t code = dtype_code(c.scalar_type());
  h = fnv1a64(&code, 1, h);
  for (auto d : c.sizes()) {
    const int64_t dim = d;
    h = fnv1a64(&dim, sizeof dim, h);
  }
  h = fnv1a64(c.data_ptr(), c.numel() * c.element_size(), h);
}

}  // namespace

bool Checkpoint::has_prefix(const std::string& prefix) const {
  auto it = params.lower_bound(prefix + ".");
  return it != params.end() && it->first.rfind(prefix + ".", 0) == 0;
}

std::string Checkpoint::stage() const { return meta.value("stage", std::string{}); }

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw RuntimeFailure("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.pod<uint32_t>(kCheckpointVersion);
  w.pod<uint64_t>(ckpt.params.size());
  for (const auto& [name, tensor] : ckpt.params) {
    auto t = tensor.detach().cpu().contiguous();
    w.pod<uint32_t>(static_cast<uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.pod<uint8_t>(dtype_code(t.scalar_type()));
    w.pod<uint32_t>(static_cast<uint32_t>(t.dim()));
    for (auto d : t.sizes()) w.pod<int64_t>(d);
    w.raw(t.data_ptr(), t.numel() * t.element_size());
  }
  const uint64_t checksum = fnv1a64(w.bytes().data(), w.bytes().size());
  w.pod<uint64_t>(checksum);

  {
    std::ofstream out(dir / "params.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + (dir / "params.bin").string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  }
  nlohmann::json meta = ckpt.meta;
  meta["format_version"] = kCheckpointVersion;
  meta["params_digest"] = hex64(tensor_map_hash(ckpt.params));
  std::ofstream out(dir / "meta.json", std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto bin = dir / "params.bin";
  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::exists(bin) || !std::filesystem::exists(meta_path)) {
    throw RuntimeFailure("checkpoint not found at " + dir.string());
  }
  Checkpoint ckpt;
  {
    std::ifstream in(meta_path);
    try {
      ckpt.meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw RuntimeFailure("checkpoint integrity: meta.json unreadable: " + std::string(e.what()));
    }
  }
  const auto meta_version = ckpt.meta.value("format_version", 0u);
  if (meta_version != kCheckpointVersion) {
    throw RuntimeFailure("checkpoint version mismatch: file has " + std::to_string(meta_version) +
                         ", expected " + std::to_string(kCheckpointVersion));
  }

  std::ifstream in(bin, std::ios::binary);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic + 4 + 8 + 8 || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
    throw RuntimeFailure("checkpoint integrity: " + bin.string() + " is not a parameter file");
  }
  Reader r(buf, buf.size() - 8);
  char magic[8];
  r.raw(magic, sizeof magic);
  const auto version = r.pod<uint32_t>();
  if (version != kCheckpointVersion) {
    throw RuntimeFailure("checkpoint version mismatch: file has " + std::to_string(version) +
                         ", expected " + std::to_string(kCheckpointVersion));
  }
  uint64_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  if (stored != fnv1a64(buf.data(), buf.size() - 8)) {
    throw RuntimeFailure("checkpoint integrity: checksum mismatch in " + bin.string());
  }
  const auto count = r.pod<uint64_t>();
  for (uint64_t i = 0; i < count; ++i) {
    const auto len = r.pod<uint32_t>();
    std::string name(len, '\0');
    r.raw(name.data(), len);
    const auto dtype = dtype_from_code(r.pod<uint8_t>());
    const auto ndim = r.pod<uint32_t>();
    if (ndim > 8) throw RuntimeFailure("checkpoint integrity: implausible rank for " + name);
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = r.pod<int64_t>();
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    r.raw(t.data_ptr(), t.numel() * t.element_size());
    ckpt.params.emplace(std::move(name), std::move(t));
  }
  if (r.pos() != buf.size() - 8) throw RuntimeFailure("checkpoint integrity: trailing bytes in " + bin.string());
  return ckpt;
}

void export_module(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters(true)) {
    ckpt.params[prefix + "." + item.key()] = item.value().detach().cpu().clone();
  }
  for (const auto& item : module.named_buffers(true)) {
    ckpt.params[prefix + "." + item.key()] = item.value().detach().cpu().clone();
  }
}

void import_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& module) {
  torch::NoGradGuard guard;
  auto load_one = [&](const std::string& key, torch::Tensor& dst) {
    const auto it = ckpt.params.find(prefix + "." + key);
    if (it == ckpt.params.end()) throw RuntimeFailure("checkpoint is missing tensor " + prefix + "." + key);
    if (it->second.sizes() != dst.sizes()) {
      std::ostringstream os;
      os << "checkpoint tensor " << it->first << " has shape " << it->second.sizes() << ", model expects "
         << dst.sizes();
      throw RuntimeFailure(os.str());
    }
    dst.copy_(it->second.to(dst.dtype()));
  };
  for (auto& item : module.named_parameters(true)) load_one(item.key(), item.value());
  for (auto& item : module.named_buffers(true)) load_one(item.key(), item.value());
}

uint64_t tensor_map_hash(const std::map<std::string, torch::Tensor>& params) {
  uint64_t h = kFnvOffset;
  for (const auto& [name, t] : params) hash_tensor(h, name, t);
  return h;
}

uint64_t module_hash(const torch::nn::Module& module) {
  std::map<std::string, torch::Tensor> all;
  for (const auto& item : module.named_parameters(true)) all[item.key()] = item.value();
  for (const auto& item : module.named_buffers(true)) all[item.key()] = item.value();
  return tensor_map_hash(all);
}

}  // namespace dfr
