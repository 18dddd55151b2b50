#include "inbiased/error.hpp"
#include "inbiased/io.hpp"
#include "inbiased/trainer.hpp"

#include <cstring>

// Layout: "INBIASED" | u32 version | u64 header bytes | JSON header | float32 payload.
// The header lists every tensor with its offset into the payload.

namespace inbiased {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'I', 'N', 'B', 'I', 'A', 'S', 'E', 'D'};

json spec_to_json(const ModelSpec& s) {
  return {{"arch", std::string(to_string(s.arch))},
          {"num_classes", s.num_classes},
          {"input", {s.input.channels, s.input.height, s.input.width}},
          {"latent_dim", s.latent_dim},
          {"mlp_hidden", s.mlp_hidden}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.arch = parse_arch(j.at("arch").get<std::string>());
  s.num_classes = j.at("num_classes").get<int>();
  const auto in = j.at("input").get<std::vector<int>>();
  if (in.size() != 3) throw DataError("checkpoint: malformed input dims");
  s.input = {in[0], in[1], in[2]};
  s.latent_dim = j.at("latent_dim").get<int>();
  s.mlp_hidden = j.at("mlp_hidden").get<std::vector<int>>();
  return s;
}

json pipeline_to_json(const InputPipeline& p) {
  json stages = json::array();
  for (Stage s : p.stages) stages.push_back(s == Stage::extract_shape ? "extract_shape" : "augment");
  return {{"stages", stages},
          {"augmentation", p.augmentation == Augmentation::crop_flip ? "crop_flip" : "none"},
          {"shape",
           {{"upsample_factor", p.shape.upsample_factor},
            {"blur_kernel", p.shape.blur_kernel},
            {"blur_sigma", p.shape.blur_sigma},
            {"output_channels", p.shape.output_channels == ShapeChannels::replicate3 ? "replicate3" : "single"}}}};
}

InputPipeline pipeline_from_json(const json& j) {
  InputPipeline p;
  for (const auto& s : j.at("stages")) {
    const auto name = s.get<std::string>();
    if (name == "extract_shape") {
      p.stages.push_back(Stage::extract_shape);
    } else if (name == "augment") {
      p.stages.push_back(Stage::augment);
    } else {
      throw DataError("checkpoint: unknown pipeline stage '" + name + "'");
    }
  }
  p.augmentation = j.at("augmentation").get<std::string>() == "crop_flip" ? Augmentation::crop_flip : Augmentation::none;
  const auto& sh = j.at("shape");
  p.shape.upsample_factor = sh.at("upsample_factor").get<int>();
  p.shape.blur_kernel = sh.at("blur_kernel").get<int>();
  p.shape.blur_sigma = sh.at("blur_sigma").get<double>();
  p.shape.output_channels = sh.at("output_channels").get<std::string>() == "single" ? ShapeChannels::single
                                                                                    : ShapeChannels::replicate3;
  return p;
}

class PayloadWriter {
 public:
  json add(const std::string& name, const RowMatrix<float>& m) {
    json entry{{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", bytes_.size()}};
    const auto* p = reinterpret_cast<const char*>(m.data());
    bytes_.append(p, static_cast<std::size_t>(m.size()) * sizeof(float));
    return entry;
  }
  [[nodiscard]] const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

void read_into(const std::string& payload, const json& entry, RowMatrix<float>& dst, const std::string& expected_name) {
  const auto name = entry.at("name").get<std::string>();
  const auto rows = entry.at("rows").get<Index>();
  const auto cols = entry.at("cols").get<Index>();
  const auto offset = entry.at("offset").get<std::size_t>();
  if (!expected_name.empty() && name != expected_name) {
    throw DataError("checkpoint: expected tensor '" + expected_name + "', found '" + name + "'");
  }
  if (dst.size() != 0 && (rows != dst.rows() || cols != dst.cols())) {
    throw DataError("checkpoint: tensor '" + name + "' has the wrong shape");
  }
  const std::size_t bytes = static_cast<std::size_t>(rows * cols) * sizeof(float);
  if (offset + bytes > payload.size()) throw DataError("checkpoint: truncated payload");
  dst.resize(rows, cols);
  std::memcpy(dst.data(), payload.data() + offset, bytes);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  if (ckpt.networks.size() != ckpt.pipelines.size()) throw InvalidArgument("checkpoint networks and pipelines differ in count");
  PayloadWriter payload;
  json networks = json::array();
  for (std::size_t k = 0; k < ckpt.networks.size(); ++k) {
    const Model& m = ckpt.networks[k];
    json params = json::array();
    for (const auto* p : m.parameters()) params.push_back(payload.add(p->name, p->value));
    json buffers = json::array();
    std::size_t b = 0;
    for (const auto* buf : m.buffers()) buffers.push_back(payload.add("buffer" + std::to_string(b++), *buf));
    json optimizer = json::array();
    if (k < ckpt.optimizer_state.size()) {
      for (const auto& v : ckpt.optimizer_state[k]) optimizer.push_back(payload.add("velocity", v));
    }
    networks.push_back({{"role", k < ckpt.roles.size() ? ckpt.roles[k] : ""},
                        {"spec", spec_to_json(m.spec())},
                        {"pipeline", pipeline_to_json(ckpt.pipelines[k])},
                        {"parameters", params},
                        {"buffers", buffers},
                        {"optimizer", optimizer}});
  }
  json history = json::array();
  for (const auto& e : ckpt.history) history.push_back(to_json(e));
  const json header{{"method", ckpt.method},
                    {"config_hash", ckpt.config_hash},
                    {"config", ckpt.config},
                    {"epoch", ckpt.epoch},
                    {"classes", ckpt.classes},
                    {"networks", networks},
                    {"history", history},
                    {"payload_sha256", io::sha256_hex(std::string_view(payload.bytes()))}};
  const std::string text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t length = text.size();
  out.append(reinterpret_cast<const char*>(&version), sizeof version);
  out.append(reinterpret_cast<const char*>(&length), sizeof length);
  out += text;
  out += payload.bytes();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("checkpoint not found: " + path.string());
  const std::string raw = io::read_file(path);
  const std::size_t prefix = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (raw.size() < prefix || std::memcmp(raw.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError(path.string() + " is not a checkpoint");
  }
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  std::memcpy(&version, raw.data() + sizeof kMagic, sizeof version);
  std::memcpy(&length, raw.data() + sizeof kMagic + sizeof version, sizeof length);
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  if (raw.size() < prefix + length) throw DataError(path.string() + ": truncated header");
  const json header = json::parse(raw.begin() + static_cast<std::ptrdiff_t>(prefix),
                                  raw.begin() + static_cast<std::ptrdiff_t>(prefix + length));
  const std::string payload = raw.substr(prefix + length);
  if (io::sha256_hex(std::string_view(payload)) != header.at("payload_sha256").get<std::string>()) {
    throw ChecksumError(path.string() + ": payload checksum mismatch");
  }

  Checkpoint ckpt;
  ckpt.method = header.at("method").get<std::string>();
  ckpt.config_hash = header.at("config_hash").get<std::string>();
  ckpt.config = header.at("config");
  ckpt.epoch = header.at("epoch").get<int>();
  ckpt.classes = header.at("classes").get<std::vector<std::string>>();
  for (const auto& e : header.at("history")) ckpt.history.push_back(epoch_metrics_from_json(e));
  for (const auto& n : header.at("networks")) {
    Model model(spec_from_json(n.at("spec")), 0);
    const auto params = model.parameters();
    const auto& pj = n.at("parameters");
    if (pj.size() != params.size()) throw DataError("checkpoint: parameter count does not match the architecture");
    for (std::size_t i = 0; i < params.size(); ++i) read_into(payload, pj[i], params[i]->value, params[i]->name);
    const auto buffers = model.buffers();
    const auto& bj = n.at("buffers");
    if (bj.size() != buffers.size()) throw DataError("checkpoint: buffer count does not match the architecture");
    for (std::size_t i = 0; i < buffers.size(); ++i) read_into(payload, bj[i], *buffers[i], "");
    std::vector<RowMatrix<float>> velocity;
    for (const auto& v : n.at("optimizer")) {
      RowMatrix<float> m;
      read_into(payload, v, m, "");
      velocity.push_back(std::move(m));
    }
    ckpt.roles.push_back(n.at("role").get<std::string>());
    ckpt.pipelines.push_back(pipeline_from_json(n.at("pipeline")));
    if (!velocity.empty()) ckpt.optimizer_state.push_back(std::move(velocity));
    ckpt.networks.push_back(std::move(model));
  }
  return ckpt;
}

Checkpoint inference_only(const Checkpoint& ckpt) {
  Checkpoint out;
  out.method = ckpt.method;
  out.config_hash = ckpt.config_hash;
  out.config = ckpt.config;
  out.epoch = ckpt.epoch;
  out.classes = ckpt.classes;
  out.history = ckpt.history;
  out.roles = {ckpt.roles.at(0)};
  out.networks.push_back(ckpt.networks.at(0));
  out.pipelines = {ckpt.pipelines.at(0)};
  return out;
}

}  // namespace inbiased
