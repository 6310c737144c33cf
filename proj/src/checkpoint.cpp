// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout (little-endian):
//   "QSVLM1" | u32 version | u64 header length | header JSON
//   | u64 tensor count | per tensor: u32 name length, name, u8 dtype, u32 rank,
//     i64 dims[rank], u64 byte count, raw data
//   | SHA-256 of all preceding bytes

#include <torch/torch.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "qsvlm/config.hpp"
#include "qsvlm/hashing.hpp"
#include "qsvlm/objective.hpp"

namespace qsvlm {

namespace {

constexpr char kMagic[] = {'Q', 'S', 'V', 'L', 'M', '1'};
constexpr size_t kDigestSize = 32;

enum class DType : uint8_t { kFloat32 = 1, kFloat64 = 2, kInt64 = 3 };

DType dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return DType::kFloat32;
    case torch::kFloat64: return DType::kFloat64;
    case torch::kInt64: return DType::kInt64;
    default: throw InvalidArgument("save_checkpoint: unsupported tensor dtype");
  }
}

torch::ScalarType scalar_type(uint8_t code) {
  switch (static_cast<DType>(code)) {
    case DType::kFloat32: return torch::kFloat32;
    case DType::kFloat64: return torch::kFloat64;
    case DType::kInt64: return torch::kInt64;
  }
  throw FormatError("checkpoint: unknown dtype code " + std::to_string(code));
}

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    bytes(&v, sizeof(T));
  }
  void bytes(const void* p, size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void str(const std::string& s) {
    pod<uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  template <typename T>
  T pod() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError("checkpoint: unexpected end of data");
  }
  std::string_view data_;
  size_t pos_ = 0;
};

std::vector<std::pair<std::string, torch::Tensor>> named_params(PretrainModel& model) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : model->named_parameters(/*recurse=*/true)) out.emplace_back(item.key(), item.value());
  return out;
}

void load_params(PretrainModel& model, const Checkpoint& ckpt) {
  torch::NoGradGuard no_grad;
  for (auto& [name, param] : named_params(model)) {
    const auto* stored = ckpt.find("param/" + name);
    if (stored == nullptr) throw FormatError("checkpoint: missing parameter " + name);
    if (stored->sizes() != param.sizes()) throw FormatError("checkpoint: shape mismatch for parameter " + name);
    param.copy_(*stored);
  }
}

}  // namespace

const torch::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.config = config_;
  ckpt.step = step_;
  std::ostringstream rng;
  rng << rng_;
  ckpt.rng_state = rng.str();
  auto model = model_;
  auto& state = optimizer_->state();
  for (auto& [name, param] : named_params(model)) {
    ckpt.tensors.emplace_back("param/" + name, param.detach().clone());
  }
  for (auto& [name, param] : named_params(model)) {
    auto it = state.find(param.unsafeGetTensorImpl());
    if (it == state.end()) continue;
    auto& s = static_cast<torch::optim::AdamWParamState&>(*it->second);
    ckpt.tensors.emplace_back("adamw/" + name + "/step", torch::tensor(s.step(), torch::kInt64));
    ckpt.tensors.emplace_back("adamw/" + name + "/exp_avg", s.exp_avg().clone());
    ckpt.tensors.emplace_back("adamw/" + name + "/exp_avg_sq", s.exp_avg_sq().clone());
  }
  return ckpt;
}

Trainer::Trainer(const Checkpoint& ckpt) : Trainer(ckpt.config) {
  load_params(model_, ckpt);
  auto& state = optimizer_->state();
  for (auto& [name, param] : named_params(model_)) {
    const auto* step = ckpt.find("adamw/" + name + "/step");
    if (step == nullptr) continue;
    const auto* m = ckpt.find("adamw/" + name + "/exp_avg");
    const auto* v = ckpt.find("adamw/" + name + "/exp_avg_sq");
    if (m == nullptr || v == nullptr) throw FormatError("checkpoint: incomplete optimizer state for " + name);
    auto s = std::make_unique<torch::optim::AdamWParamState>();
    s->step(step->item<int64_t>());
    s->exp_avg(m->clone());
    s->exp_avg_sq(v->clone());
    state[param.unsafeGetTensorImpl()] = std::move(s);
  }
  std::istringstream rng(ckpt.rng_state);
  rng >> rng_;
  if (!rng) throw FormatError("checkpoint: bad RNG state");
  step_ = ckpt.step;
}

PretrainModel model_from_checkpoint(const Checkpoint& ckpt) {
  ckpt.config.validate();
  PretrainModel model(ckpt.config.model_options());
  load_params(model, ckpt);
  model->eval();
  return model;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<uint32_t>(Checkpoint::kVersion);
  nlohmann::ordered_json header;
  header["config"] = to_json(ckpt.config);
  header["step"] = ckpt.step;
  header["rng_state"] = ckpt.rng_state;
  w.str(header.dump());
  w.pod<uint64_t>(ckpt.tensors.size());
  for (const auto& [name, tensor] : ckpt.tensors) {
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    w.pod<uint32_t>(static_cast<uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.pod<uint8_t>(static_cast<uint8_t>(dtype_code(t.scalar_type())));
    w.pod<uint32_t>(static_cast<uint32_t>(t.dim()));
    for (auto d : t.sizes()) w.pod<int64_t>(d);
    const auto nbytes = static_cast<uint64_t>(t.numel() * t.element_size());
    w.pod<uint64_t>(nbytes);
    w.bytes(t.data_ptr(), nbytes);
  }
  Sha256 h;
  h.update(w.buffer());
  auto digest = h.digest();
  w.bytes(digest.data(), digest.size());

  // Write to a sibling file, then rename, so readers never see half a checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("save_checkpoint: cannot open " + tmp.string());
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw Error("save_checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (data.size() < sizeof(kMagic) || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("checkpoint: " + path.string() + " is not a QSVLM1 checkpoint");
  }
  if (data.size() < sizeof(kMagic) + sizeof(uint32_t) + kDigestSize) {
    throw FormatError("checkpoint: " + path.string() + " is truncated");
  }
  uint32_t version = 0;
  std::memcpy(&version, data.data() + sizeof(kMagic), sizeof(version));
  if (version != Checkpoint::kVersion) {
    throw FormatError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(Checkpoint::kVersion) + ")");
  }
  const auto body = std::string_view(data).substr(0, data.size() - kDigestSize);
  Sha256 h;
  h.update(body);
  auto digest = h.digest();
  if (std::memcmp(digest.data(), data.data() + body.size(), kDigestSize) != 0) {
    throw FormatError("checkpoint: " + path.string() + " is truncated or corrupt (checksum mismatch)");
  }

  Reader r(body);
  r.take(sizeof(kMagic));
  r.pod<uint32_t>();
  Checkpoint ckpt;
  try {
    const auto header_len = r.pod<uint64_t>();
    auto header = nlohmann::json::parse(r.take(header_len));
    ckpt.config = train_config_from_json(header.at("config"));
    ckpt.step = header.at("step").get<int64_t>();
    ckpt.rng_state = header.at("rng_state").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("checkpoint: bad config: ") + e.what());
  }
  const auto count = r.pod<uint64_t>();
  for (uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.pod<uint32_t>();
    std::string name(r.take(name_len));
    const auto type = scalar_type(r.pod<uint8_t>());
    const auto rank = r.pod<uint32_t>();
    std::vector<int64_t> dims;
    for (uint32_t d = 0; d < rank; ++d) dims.push_back(r.pod<int64_t>());
    const auto nbytes = r.pod<uint64_t>();
    auto raw = r.take(nbytes);
    auto t = torch::empty(dims, torch::TensorOptions().dtype(type));
    if (static_cast<uint64_t>(t.numel() * t.element_size()) != nbytes) {
      throw FormatError("checkpoint: size mismatch for tensor " + name);
    }
    std::memcpy(t.data_ptr(), raw.data(), nbytes);
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes after tensor table");
  return ckpt;
}

}  // namespace qsvlm
