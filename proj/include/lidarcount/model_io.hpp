#pragma once

#include "lidarcount/quantization.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace lidarcount {

// Model container: a single JSON object on one line,
//   {"format_version":1,"model_type":"autoencoder|cnn2d","quantized":false,
//    "input_shape":[h,w,c],"layers":[...],"metadata":{...}}
// Float tensors are decimal arrays written with round-trip precision; 8-bit
// payloads are base64 strings with their scale and zero point.

inline constexpr int kModelFormatVersion = 1;

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

nlohmann::json model_to_json(const nn::TrainedModel& model);
nlohmann::json model_to_json(const quant::QuantizedModel& model);

using AnyModel = std::variant<nn::TrainedModel, quant::QuantizedModel>;

AnyModel model_from_json(const nlohmann::json& j);

void save_model(std::ostream& out, const AnyModel& model);
AnyModel load_model(std::istream& in);

void save_model_file(const std::string& path, const AnyModel& model);
AnyModel load_model_file(const std::string& path);

const nn::ModelSpec& model_spec(const AnyModel& model);
const nlohmann::json& model_metadata(const AnyModel& model);
std::optional<double> model_threshold(const AnyModel& model);

}  // namespace lidarcount
