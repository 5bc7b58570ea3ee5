#include <cmath>
#include <set>

#include <json.hpp>

#include "vnn/binary_io.hpp"
#include "vnn/errors.hpp"
#include "vnn/trainer.hpp"

namespace vnn {

namespace {

constexpr const char* kLossHistoryName = "train.loss_history";
constexpr const char* kVelocityPrefix = "velocity.";

nlohmann::json config_to_json(const Checkpoint& c) {
  nlohmann::json j;
  nlohmann::json branches = nlohmann::json::array();
  for (const auto& b : c.model_config.branches) {
    branches.push_back({{"n", b.n},
                        {"d_prime", b.d_prime},
                        {"circular", b.circular},
                        {"post_conv_activation", b.post_conv_activation}});
  }
  j["model"] = {{"input_dim", c.model_config.input_dim},
                {"num_classes", c.model_config.num_classes},
                {"descriptor_dim", kDescriptorDim},
                {"branches", branches},
                {"aggregation", to_string(c.model_config.aggregation)},
                {"layer_norm_eps", static_cast<double>(c.model_config.layer_norm_eps)}};
  const auto& t = c.train_config;
  j["train"] = {{"learning_rate", t.learning_rate}, {"momentum", t.momentum}, {"weight_decay", t.weight_decay},
                {"clip_bound", t.clip_bound},       {"epochs", t.epochs},     {"batch_size", t.batch_size},
                {"seed", t.seed}};
  j["epoch"] = c.epoch;
  j["rng_state"] = c.rng_state;
  return j;
}

void write_tensor(io::ByteWriter& w, const std::string& name, const Shape& shape, std::span<const Real> data) {
  w.string(name);
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (std::size_t e : shape) w.u32(static_cast<std::uint32_t>(e));
  for (Real x : data) w.f64(static_cast<double>(x));
}

struct RawTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

RawTensor read_tensor(io::ByteReader& r) {
  RawTensor t;
  t.name = r.string();
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw FormatError("tensor '" + t.name + "' has implausible rank " + std::to_string(rank));
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    t.shape.push_back(r.u32());
    count *= t.shape.back();
  }
  if (count * 8 > r.remaining()) {
    throw TruncationError("tensor '" + t.name + "' payload extends past end of checkpoint");
  }
  t.data.resize(count);
  for (auto& x : t.data) x = r.f64();
  return t;
}

void fill(Tensor& dst, const RawTensor& src) {
  if (dst.shape() != src.shape) {
    throw FormatError("tensor '" + src.name + "' has shape " + shape_string(src.shape) + ", expected " +
                      shape_string(dst.shape()));
  }
  auto d = dst.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<Real>(src.data[i]);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  io::ByteWriter w;
  w.bytes("VNC1");
  w.u32(kCheckpointVersion);
  w.string(config_to_json(c).dump());
  const auto& params = c.params.tensors;
  if (c.optimizer.velocity.size() != params.size()) {
    throw DimensionError("optimizer state does not mirror the model parameters");
  }
  w.u32(static_cast<std::uint32_t>(2 * params.size() + 1));
  for (const auto& p : params) write_tensor(w, p.name, p.tensor.shape(), p.tensor.data());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& v = c.optimizer.velocity[i];
    write_tensor(w, kVelocityPrefix + params[i].name, v.shape(), v.data());
  }
  std::vector<Real> history(c.loss_history.begin(), c.loss_history.end());
  write_tensor(w, kLossHistoryName, {history.size()}, history);
  return w.buffer();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(4) != "VNC1") throw FormatError("bad magic in checkpoint (expected VNC1)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint c;
  try {
    const auto j = nlohmann::json::parse(r.string());
    const auto& m = j.at("model");
    c.model_config.input_dim = m.at("input_dim").get<std::size_t>();
    c.model_config.num_classes = m.at("num_classes").get<std::size_t>();
    if (m.at("descriptor_dim").get<std::size_t>() != kDescriptorDim) {
      throw FormatError("checkpoint descriptor dimension differs from " + std::to_string(kDescriptorDim));
    }
    for (const auto& b : m.at("branches")) {
      c.model_config.branches.push_back({b.at("n").get<std::size_t>(), b.at("d_prime").get<std::size_t>(),
                                         b.at("circular").get<bool>(), b.at("post_conv_activation").get<bool>()});
    }
    c.model_config.aggregation = parse_aggregation(m.at("aggregation").get<std::string>());
    c.model_config.layer_norm_eps = static_cast<Real>(m.at("layer_norm_eps").get<double>());
    const auto& t = j.at("train");
    c.train_config.learning_rate = t.at("learning_rate").get<double>();
    c.train_config.momentum = t.at("momentum").get<double>();
    c.train_config.weight_decay = t.at("weight_decay").get<double>();
    c.train_config.clip_bound = t.at("clip_bound").get<double>();
    c.train_config.epochs = t.at("epochs").get<std::size_t>();
    c.train_config.batch_size = t.at("batch_size").get<std::size_t>();
    c.train_config.seed = t.at("seed").get<std::uint64_t>();
    c.epoch = j.at("epoch").get<std::size_t>();
    c.rng_state = j.at("rng_state").get<Rng::State>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint config: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid checkpoint config: ") + e.what());
  }

  try {
    c.model_config.validate();
    c.train_config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid checkpoint config: ") + e.what());
  }
  c.params = zero_parameters(c.model_config, true);
  c.optimizer = make_optimizer(c.params.tensors, static_cast<Real>(c.train_config.learning_rate),
                               static_cast<Real>(c.train_config.momentum),
                               static_cast<Real>(c.train_config.weight_decay),
                               static_cast<Real>(c.train_config.clip_bound));

  const std::uint32_t count = r.u32();
  const std::size_t n = c.params.tensors.size();
  if (count != 2 * n + 1) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, expected " + std::to_string(2 * n + 1));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const RawTensor t = read_tensor(r);
    if (t.name != c.params.tensors[i].name) {
      throw FormatError("unexpected tensor '" + t.name + "', expected '" + c.params.tensors[i].name + "'");
    }
    fill(c.params.tensors[i].tensor, t);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const RawTensor t = read_tensor(r);
    if (t.name != kVelocityPrefix + c.params.tensors[i].name) {
      throw FormatError("unexpected tensor '" + t.name + "' in optimizer state");
    }
    fill(c.optimizer.velocity[i], t);
  }
  const RawTensor history = read_tensor(r);
  if (history.name != kLossHistoryName || history.shape.size() != 1) {
    throw FormatError("checkpoint is missing its loss history");
  }
  c.loss_history = history.data;
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint tensors");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  io::write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace vnn
