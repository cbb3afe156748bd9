#include "lidarcount/model_io.hpp"

#include <array>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace lidarcount {

using json = nlohmann::json;
using nn::LayerKind;

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

json tensor_json(const RowMatrix& m) {
    return json{{"shape", {m.rows(), m.cols()}}, {"values", std::vector<double>(m.data(), m.data() + m.size())}};
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

RowMatrix tensor_from_json(const json& j) {
    const auto rows = j.at("shape").at(0).get<Eigen::Index>();
    const auto cols = j.at("shape").at(1).get<Eigen::Index>();
    const auto values = j.at("values").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != values.size())
        throw DataError("model: tensor shape does not match value count");
    RowMatrix m(rows, cols);
    std::copy(values.begin(), values.end(), m.data());
    return m;
}

Eigen::VectorXd vector_from_json(const json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json layer_spec_json(const nn::LayerSpec& l) {
    json j{{"kind", nn::to_string(l.kind)}};
    switch (l.kind) {
        case LayerKind::Dense:
            j["units"] = l.units;
            break;
        case LayerKind::Conv2d:
            j["filters"] = l.units;
            j["kernel"] = l.kernel;
            j["stride"] = l.stride;
            j["padding"] = "valid";
            break;
        case LayerKind::MaxPool:
            j["pool"] = l.pool;
            break;
        case LayerKind::Dropout:
            j["rate"] = l.rate;
            break;
        default:
            break;
    }
    return j;
}

nn::LayerSpec layer_spec_from_json(const json& j) {
    nn::LayerSpec l;
    l.kind = nn::layer_kind_from_string(j.at("kind").get<std::string>());
    switch (l.kind) {
        case LayerKind::Dense:
            l.units = j.at("units").get<int>();
            break;
        case LayerKind::Conv2d:
            l.units = j.at("filters").get<int>();
            l.kernel = j.at("kernel").get<int>();
            l.stride = j.at("stride").get<int>();
            if (j.value("padding", "valid") != "valid") throw DataError("model: only valid padding is supported");
            break;
        case LayerKind::MaxPool:
            l.pool = j.at("pool").get<int>();
            break;
        case LayerKind::Dropout:
            l.rate = j.at("rate").get<double>();
            break;
        default:
            break;
    }
    return l;
}

json header(const nn::ModelSpec& spec, bool quantized) {
    return json{{"format_version", kModelFormatVersion},
                {"model_type", spec.name},
                {"quantized", quantized},
                {"input_shape", {spec.input.h, spec.input.w, spec.input.c}}};
}

nn::ModelSpec spec_from_header(const json& j) {
    nn::ModelSpec spec;
    spec.name = j.at("model_type").get<std::string>();
    const auto& s = j.at("input_shape");
    spec.input = nn::Shape{s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()};
    return spec;
}

json qtensor_json(const quant::QuantizedTensor& t) {
    return json{{"shape", {t.rows, t.cols}},
                {"scale", t.params.scale},
                {"zero_point", t.params.zero_point},
                {"payload", base64_encode(t.payload)}};
}

quant::QuantizedTensor qtensor_from_json(const json& j) {
    quant::QuantizedTensor t;
    t.rows = j.at("shape").at(0).get<Eigen::Index>();
    t.cols = j.at("shape").at(1).get<Eigen::Index>();
    t.params.scale = j.at("scale").get<double>();
    t.params.zero_point = j.at("zero_point").get<int>();
    t.payload = base64_decode(j.at("payload").get<std::string>());
    if (static_cast<std::size_t>(t.rows * t.cols) != t.payload.size())
        throw DataError("model: quantized payload size does not match shape");
    if (!(t.params.scale > 0.0) || t.params.zero_point < 0 || t.params.zero_point > 255)
        throw DataError("model: invalid quantization parameters");
    return t;
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    if (i + 1 == bytes.size()) {
        const std::uint32_t v = bytes[i] << 16;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == bytes.size()) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    std::array<int, 256> lut;
    lut.fill(-1);
    for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(kAlphabet[i])] = i;
    if (text.size() % 4 != 0) throw DataError("base64: length is not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int vals[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + static_cast<std::size_t>(k)];
            if (c == '=' && i + 4 == text.size() && k >= 2) {
                vals[k] = 0;
                ++pad;
                continue;
            }
            if (pad > 0) throw DataError("base64: data after padding");
            vals[k] = lut[static_cast<unsigned char>(c)];
            if (vals[k] < 0) throw DataError("base64: invalid character");
        }
        const std::uint32_t v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
        out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    }
    return out;
}

json model_to_json(const nn::TrainedModel& model) {
    json j = header(model.spec, false);
    json layers = json::array();
    for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
        json l = layer_spec_json(model.spec.layers[i]);
        const auto& p = model.params[i];
        switch (model.spec.layers[i].kind) {
            case LayerKind::Dense:
            case LayerKind::Conv2d:
                l["weight"] = tensor_json(p.weight);
                l["bias"] = vector_json(p.bias);
                break;
            case LayerKind::BatchNorm:
                l["gamma"] = vector_json(p.gamma);
                l["beta"] = vector_json(p.beta);
                l["moving_mean"] = vector_json(p.moving_mean);
                l["moving_var"] = vector_json(p.moving_var);
                break;
            default:
                break;
        }
        layers.push_back(std::move(l));
    }
    j["layers"] = std::move(layers);
    json meta = model.metadata;
    if (model.threshold) meta["threshold"] = *model.threshold;
    j["metadata"] = std::move(meta);
    return j;
}

json model_to_json(const quant::QuantizedModel& model) {
    json j = header(model.spec, true);
    json layers = json::array();
    for (const auto& ql : model.layers) {
        json l = layer_spec_json(ql.spec);
        json tensors = json::array();
        for (const auto& t : ql.tensors) tensors.push_back(qtensor_json(t));
        if (!tensors.empty()) l["tensors"] = std::move(tensors);
        layers.push_back(std::move(l));
    }
    j["layers"] = std::move(layers);
    json acts = json::array();
    for (const auto& a : model.activations) acts.push_back({{"scale", a.scale}, {"zero_point", a.zero_point}});
    j["activations"] = std::move(acts);
    json meta = model.metadata;
    if (model.threshold) meta["threshold"] = *model.threshold;
    j["metadata"] = std::move(meta);
    return j;
}

AnyModel model_from_json(const json& j) {
    try {
        if (j.at("format_version").get<int>() != kModelFormatVersion) throw DataError("model: unsupported format_version");
        nn::ModelSpec spec = spec_from_header(j);
        json meta = j.value("metadata", json::object());
        std::optional<double> threshold;
        if (meta.contains("threshold")) {
            threshold = meta["threshold"].get<double>();
            meta.erase("threshold");
        }
        const auto& layers = j.at("layers");
        for (const auto& l : layers) spec.layers.push_back(layer_spec_from_json(l));
        spec.shapes();

        if (!j.at("quantized").get<bool>()) {
            nn::TrainedModel m = nn::init_model(spec, 0);
            m.threshold = threshold;
            m.metadata = std::move(meta);
            for (std::size_t i = 0; i < spec.layers.size(); ++i) {
                const auto& l = layers[i];
                auto& p = m.params[i];
                switch (spec.layers[i].kind) {
                    case LayerKind::Dense:
                    case LayerKind::Conv2d: {
                        auto w = tensor_from_json(l.at("weight"));
                        auto b = vector_from_json(l.at("bias"));
                        if (w.rows() != p.weight.rows() || w.cols() != p.weight.cols() || b.size() != p.bias.size())
                            throw DataError("model: layer " + std::to_string(i) + " parameter shape mismatch");
                        p.weight = std::move(w);
                        p.bias = std::move(b);
                        break;
                    }
                    case LayerKind::BatchNorm: {
                        const auto c = p.gamma.size();
                        p.gamma = vector_from_json(l.at("gamma"));
                        p.beta = vector_from_json(l.at("beta"));
                        p.moving_mean = vector_from_json(l.at("moving_mean"));
                        p.moving_var = vector_from_json(l.at("moving_var"));
                        if (p.gamma.size() != c || p.beta.size() != c || p.moving_mean.size() != c ||
                            p.moving_var.size() != c)
                            throw DataError("model: batchnorm " + std::to_string(i) + " parameter shape mismatch");
                        if ((p.moving_var.array() < 0.0).any()) throw DataError("model: negative moving variance");
                        break;
                    }
                    default:
                        break;
                }
            }
            return m;
        }

        quant::QuantizedModel q;
        q.spec = spec;
        q.threshold = threshold;
        q.metadata = std::move(meta);
        for (std::size_t i = 0; i < spec.layers.size(); ++i) {
            quant::QuantizedLayer ql{spec.layers[i], {}};
            if (layers[i].contains("tensors"))
                for (const auto& t : layers[i]["tensors"]) ql.tensors.push_back(qtensor_from_json(t));
            const std::size_t expected = spec.layers[i].kind == LayerKind::BatchNorm ? 4
                                         : spec.layers[i].has_params()               ? 2
                                                                                     : 0;
            if (ql.tensors.size() != expected)
                throw DataError("model: layer " + std::to_string(i) + " has wrong tensor count");
            q.layers.push_back(std::move(ql));
        }
        for (const auto& a : j.at("activations"))
            q.activations.push_back(quant::QuantParams{a.at("scale").get<double>(), a.at("zero_point").get<int>()});
        q.finalize();
        return q;
    } catch (const json::exception& e) {
        throw DataError(std::string("model: ") + e.what());
    } catch (const PreconditionError& e) {
        throw DataError(std::string("model: ") + e.what());
    }
}

void save_model(std::ostream& out, const AnyModel& model) {
    std::visit([&out](const auto& m) { out << model_to_json(m).dump() << '\n'; }, model);
    if (!out) throw DataError("save_model: write failed");
}

AnyModel load_model(std::istream& in) {
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw DataError("model: invalid JSON");
        return model_from_json(j);
    }
    throw DataError("model: empty file");
}

void save_model_file(const std::string& path, const AnyModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    save_model(out, model);
}

AnyModel load_model_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model '" + path + "'");
    return load_model(in);
}

const nn::ModelSpec& model_spec(const AnyModel& model) {
    return std::visit([](const auto& m) -> const nn::ModelSpec& { return m.spec; }, model);
}

const nlohmann::json& model_metadata(const AnyModel& model) {
    return std::visit([](const auto& m) -> const nlohmann::json& { return m.metadata; }, model);
}

std::optional<double> model_threshold(const AnyModel& model) {
    return std::visit([](const auto& m) { return m.threshold; }, model);
}

}  // namespace lidarcount
