#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "histoad/config.hpp"
#include "histoad/error.hpp"
#include "histoad/models.hpp"

namespace histoad {

namespace {

constexpr char kMagic[4] = {'H', 'A', 'D', 'C'};

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const AnomalyModel& model, const std::string& path) {
  model.params.validate();
  nlohmann::ordered_json header;
  header["format"] = "histoad-checkpoint";
  header["version"] = 1;
  header["objective"] = to_string(model.objective);
  auto arch = nlohmann::ordered_json::array();
  for (const auto& l : model.params.layers)
    arch.push_back({{"in", l.weight.cols()},
                    {"out", l.weight.rows()},
                    {"activation", to_string(l.activation)}});
  header["architecture"] = arch;
  header["center_dim"] = model.center.size();
  header["config"] = nlohmann::ordered_json::parse(train_config_to_json(model.config));
  header["seed"] = model.config.seed;
  const std::string text = header.dump();

  std::string buf(kMagic, 4);
  put_u64(buf, text.size());
  buf += text;
  Eigen::VectorXd blob(model.params.parameter_count() + model.center.size());
  blob << model.params.flatten(), model.center;
  for (double v : blob) put_u64(buf, std::bit_cast<std::uint64_t>(v));

  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

AnomalyModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot read checkpoint " + path);
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
  require(data.size() >= 12 && std::memcmp(bytes, kMagic, 4) == 0, ErrorCode::bad_magic,
          path + ": not a checkpoint file");
  const auto header_len = get_u64(bytes + 4);
  require(data.size() - 12 >= header_len, ErrorCode::truncated_payload,
          path + ": truncated checkpoint header");

  AnomalyModel model;
  std::size_t n_values = 0;
  try {
    const auto header = nlohmann::json::parse(data.substr(12, header_len));
    model.objective = parse_objective(header.at("objective").get<std::string>());
    model.config = train_config_from_json(header.at("config").dump());
    for (const auto& l : header.at("architecture")) {
      DenseLayer<double> layer;
      layer.weight.resize(l.at("out").get<int>(), l.at("in").get<int>());
      layer.bias.resize(l.at("out").get<int>());
      layer.activation = parse_activation(l.at("activation").get<std::string>());
      model.params.layers.push_back(std::move(layer));
    }
    model.center.resize(header.at("center_dim").get<int>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::malformed_metadata, path + ": bad checkpoint header: " + e.what());
  }
  model.params.validate();
  n_values = static_cast<std::size_t>(model.params.parameter_count() + model.center.size());
  const std::size_t offset = 12 + header_len;
  require(data.size() - offset == n_values * 8, ErrorCode::truncated_payload,
          path + ": parameter blob length does not match the architecture");
  Eigen::VectorXd blob(static_cast<Eigen::Index>(n_values));
  for (std::size_t i = 0; i < n_values; ++i)
    blob[static_cast<Eigen::Index>(i)] = std::bit_cast<double>(get_u64(bytes + offset + 8 * i));
  model.params.assign(blob.head(model.params.parameter_count()));
  model.center = blob.tail(model.center.size());
  return model;
}

}  // namespace histoad
