#include "fineprune/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fineprune {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "FPN1";

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[static_cast<std::size_t>(i)]);
    return v;
}

void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

std::size_t get_size(const json& j, const char* key) { return j.at(key).get<std::size_t>(); }

}  // namespace

json model_to_json(const ModelSpec& spec) {
    json layers = json::array();
    for (const Layer& layer : spec.layers()) {
        std::visit(overloaded{
                       [&](const ConvLayer& c) {
                           layers.push_back({{"type", "conv"},
                                             {"filters", c.filters},
                                             {"channels", c.channels},
                                             {"kernel_h", c.kernel_h},
                                             {"kernel_w", c.kernel_w},
                                             {"stride", c.stride},
                                             {"padding", c.padding},
                                             {"relu", c.relu}});
                       },
                       [&](const PoolLayer& p) {
                           layers.push_back({{"type", "maxpool"}, {"window", p.window}, {"stride", p.stride}});
                       },
                       [&](const FlattenLayer&) { layers.push_back({{"type", "flatten"}}); },
                       [&](const DenseLayer& d) {
                           layers.push_back({{"type", "fc"},
                                             {"inputs", d.inputs},
                                             {"outputs", d.outputs},
                                             {"relu", d.relu}});
                       },
                       [&](const OutputLayer& o) {
                           layers.push_back({{"type", "output"}, {"inputs", o.inputs}, {"outputs", o.outputs}});
                       },
                   },
                   layer);
    }
    const auto& in = spec.input();
    return {{"input", {in[0], in[1], in[2]}}, {"layers", layers}};
}

ModelSpec model_from_json(const json& j) {
    const auto in = j.at("input").get<std::vector<std::size_t>>();
    if (in.size() != 3) throw ShapeError("model input must list C,H,W");
    std::vector<Layer> layers;
    for (const json& l : j.at("layers")) {
        const std::string type = l.at("type").get<std::string>();
        if (type == "conv") {
            layers.push_back(ConvLayer{get_size(l, "filters"), get_size(l, "channels"),
                                       get_size(l, "kernel_h"), get_size(l, "kernel_w"),
                                       get_size(l, "stride"), get_size(l, "padding"),
                                       l.at("relu").get<bool>()});
        } else if (type == "maxpool") {
            layers.push_back(PoolLayer{get_size(l, "window"), get_size(l, "stride")});
        } else if (type == "flatten") {
            layers.push_back(FlattenLayer{});
        } else if (type == "fc") {
            layers.push_back(DenseLayer{get_size(l, "inputs"), get_size(l, "outputs"), l.at("relu").get<bool>()});
        } else if (type == "output") {
            layers.push_back(OutputLayer{get_size(l, "inputs"), get_size(l, "outputs")});
        } else {
            throw ShapeError("unknown layer type '" + type + "'");
        }
    }
    return ModelSpec::make({in[0], in[1], in[2]}, std::move(layers));
}

std::string encode_checkpoint(const ModelSpec& spec, const Parameters& params, const PruneMask* mask) {
    params.check_against(spec);
    json tensors = json::array();
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        if (!spec.has_params(i)) continue;
        tensors.push_back({{"layer", i}, {"name", "weight"}, {"shape", params.layers[i].weight.shape()}});
        tensors.push_back({{"layer", i}, {"name", "bias"}, {"shape", params.layers[i].bias.shape()}});
    }
    json header = {{"format", "FPN1"}, {"model", model_to_json(spec)}, {"tensors", tensors}};
    if (mask) {
        mask->check_against(spec);
        std::vector<int> live(mask->live.begin(), mask->live.end());
        header["mask"] = {{"layer", mask->layer}, {"live", live}};
    }
    const std::string text = header.dump();

    std::string out(kMagic);
    put_u64(out, text.size());
    out += text;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        if (!spec.has_params(i)) continue;
        for (double v : params.layers[i].weight.data()) put_f64(out, v);
        for (double v : params.layers[i].bias.data()) put_f64(out, v);
    }
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source) {
    if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
        throw CheckpointError(source + ": bad magic, not an FPN1 checkpoint");
    }
    if (bytes.size() < kMagic.size() + 8) throw CheckpointError(source + ": truncated header length");
    const std::uint64_t header_len = get_u64(bytes.substr(kMagic.size(), 8));
    std::size_t pos = kMagic.size() + 8;
    if (header_len > bytes.size() - pos) throw CheckpointError(source + ": truncated header");

    json header;
    try {
        header = json::parse(bytes.substr(pos, header_len));
    } catch (const json::exception& e) {
        throw CheckpointError(source + ": malformed header: " + e.what());
    }
    pos += header_len;

    try {
        Checkpoint ck{model_from_json(header.at("model")), {}, std::nullopt};
        ck.params.layers.resize(ck.spec.layers().size());
        for (const json& t : header.at("tensors")) {
            const std::size_t layer = t.at("layer").get<std::size_t>();
            const std::string name = t.at("name").get<std::string>();
            auto shape = t.at("shape").get<std::vector<std::size_t>>();
            const std::size_t n = element_count(shape);
            if (n > (bytes.size() - pos) / 8) {
                throw CheckpointError(source + ": truncated tensor data for layer " +
                                      std::to_string(layer) + " " + name);
            }
            std::vector<double> data(n);
            for (std::size_t k = 0; k < n; ++k, pos += 8) {
                data[k] = std::bit_cast<double>(get_u64(bytes.substr(pos, 8)));
            }
            if (layer >= ck.params.layers.size()) {
                throw CheckpointError(source + ": tensor for missing layer " + std::to_string(layer));
            }
            Tensor tensor(std::move(shape), std::move(data));
            if (name == "weight") {
                ck.params.layers[layer].weight = std::move(tensor);
            } else if (name == "bias") {
                ck.params.layers[layer].bias = std::move(tensor);
            } else {
                throw CheckpointError(source + ": unknown tensor name '" + name + "'");
            }
        }
        if (pos != bytes.size()) {
            throw CheckpointError(source + ": " + std::to_string(bytes.size() - pos) +
                                  " trailing bytes after tensor data");
        }
        ck.params.check_against(ck.spec);
        if (header.contains("mask")) {
            PruneMask mask;
            mask.layer = header["mask"].at("layer").get<std::size_t>();
            for (int v : header["mask"].at("live").get<std::vector<int>>()) mask.live.push_back(v != 0);
            mask.check_against(ck.spec);
            ck.mask = std::move(mask);
        }
        return ck;
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError(source + ": inconsistent checkpoint: " + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec,
                     const Parameters& params, const PruneMask* mask) {
    const std::string bytes = encode_checkpoint(spec, params, mask);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_checkpoint(ss.str(), path.string());
}

}  // namespace fineprune
