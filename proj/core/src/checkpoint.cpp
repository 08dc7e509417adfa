#include "dal/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dal/error.hpp"

namespace dal::model {

using nlohmann::json;

namespace {

json tensor_json(const Tensor& t) { return json{{"shape", t.shape()}, {"data", t.storage()}}; }

Tensor tensor_from(const json& j, const char* what) {
  try {
    auto shape = j.at("shape").get<num::Shape>();
    auto data = j.at("data").get<std::vector<double>>();
    return Tensor(std::move(shape), std::move(data));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad tensor '") + what + "': " + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint: bad tensor '") + what + "': " + e.what());
  } catch (const NumericError& e) {
    throw FormatError(std::string("checkpoint: bad tensor '") + what + "': " + e.what());
  }
}

json layer_json(const Layer& l) {
  return json{{"weight", tensor_json(l.weight)}, {"bias", tensor_json(l.bias)}};
}

Layer layer_from(const json& j) {
  return Layer{tensor_from(j.at("weight"), "weight"), tensor_from(j.at("bias"), "bias")};
}

void check_layer(const Layer& l, std::size_t in, std::size_t out) {
  if (l.weight.shape() != num::Shape{in, out} || l.bias.shape() != num::Shape{out}) {
    throw FormatError("checkpoint: layer shape does not match the architecture");
  }
}

}  // namespace

std::string checkpoint_to_json(const ModelParams& params) {
  json layers = json::array();
  for (const auto& l : params.extractor) layers.push_back(layer_json(l));
  json doc{
      {"format_version", kCheckpointFormatVersion},
      {"architecture",
       {{"input_dim", params.arch.input_dim},
        {"extractor_widths", params.arch.extractor_widths},
        {"num_classes", params.arch.num_classes}}},
      {"extractor", layers},
      {"head", layer_json(params.head)},
  };
  return doc.dump(1);
}

ModelParams checkpoint_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw FormatError("checkpoint: unsupported format_version " + std::to_string(version));
    }
    ModelParams p;
    const auto& a = doc.at("architecture");
    p.arch.input_dim = a.at("input_dim").get<std::size_t>();
    p.arch.extractor_widths = a.at("extractor_widths").get<std::vector<std::size_t>>();
    p.arch.num_classes = a.at("num_classes").get<std::size_t>();
    p.arch.validate();
    for (const auto& l : doc.at("extractor")) p.extractor.push_back(layer_from(l));
    p.head = layer_from(doc.at("head"));

    if (p.extractor.size() != p.arch.extractor_widths.size()) {
      throw FormatError("checkpoint: layer count does not match the architecture");
    }
    std::size_t in = p.arch.input_dim;
    for (std::size_t k = 0; k < p.extractor.size(); ++k) {
      check_layer(p.extractor[k], in, p.arch.extractor_widths[k]);
      in = p.arch.extractor_widths[k];
    }
    check_layer(p.head, in, p.arch.num_classes);
    return p;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << checkpoint_to_json(params) << '\n';
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace dal::model
