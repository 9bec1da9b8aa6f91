#include "pcada/snapshot.hpp"

#include <fstream>
#include <map>

#include "pcada/errors.hpp"

namespace pcada {

using nlohmann::json;

namespace {

json tensor(const std::string& name, std::size_t rows, std::size_t cols, std::span<const double> values) {
    return {{"name", name}, {"shape", {rows, cols}}, {"values", std::vector<double>(values.begin(), values.end())}};
}

void put_net(json& arch, json& tensors, const std::string& name, const DenseNet& net) {
    std::vector<std::size_t> dims{net.input_dim()};
    std::vector<std::string> acts;
    for (std::size_t i = 0; i < net.num_layers(); ++i) {
        const DenseLayer& l = net.layer(i);
        dims.push_back(l.out_dim());
        acts.emplace_back(to_string(l.activation));
        const std::string p = name + ".layer" + std::to_string(i);
        tensors.push_back(tensor(p + ".weight", l.in_dim(), l.out_dim(), l.weight.values()));
        tensors.push_back(tensor(p + ".bias", 1, l.out_dim(), l.bias));
        tensors.push_back(tensor(p + ".weight.momentum", l.in_dim(), l.out_dim(), l.momentum_weight.values()));
        tensors.push_back(tensor(p + ".bias.momentum", 1, l.out_dim(), l.momentum_bias));
    }
    arch[name] = {{"dims", dims}, {"activations", acts}};
}

using TensorMap = std::map<std::string, const json*>;

const json& find(const TensorMap& m, const std::string& name, std::size_t rows, std::size_t cols) {
    const auto it = m.find(name);
    if (it == m.end()) throw ParseError("model snapshot: missing tensor " + name);
    const json& t = *it->second;
    if (t.at("shape") != json{rows, cols} || t.at("values").size() != rows * cols)
        throw ParseError("model snapshot: tensor " + name + " has the wrong shape");
    return t.at("values");
}

void fill(std::span<double> dst, const json& values) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = values[i].get<double>();
}

DenseNet get_net(const json& arch, const TensorMap& tensors, const std::string& name) {
    const json& a = arch.at(name);
    const auto dims = a.at("dims").get<std::vector<std::size_t>>();
    const auto acts = a.at("activations").get<std::vector<std::string>>();
    if (dims.size() != acts.size() + 1 || acts.empty()) throw ParseError("model snapshot: bad architecture for " + name);
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i < acts.size(); ++i) {
        DenseLayer l;
        const std::size_t in = dims[i], out = dims[i + 1];
        l.activation = activation_from_string(acts[i]);
        l.weight = Matrix(in, out);
        l.bias.assign(out, 0.0);
        l.grad_weight = Matrix(in, out);
        l.grad_bias.assign(out, 0.0);
        l.momentum_weight = Matrix(in, out);
        l.momentum_bias.assign(out, 0.0);
        const std::string p = name + ".layer" + std::to_string(i);
        fill(l.weight.values(), find(tensors, p + ".weight", in, out));
        fill(l.bias, find(tensors, p + ".bias", 1, out));
        fill(l.momentum_weight.values(), find(tensors, p + ".weight.momentum", in, out));
        fill(l.momentum_bias, find(tensors, p + ".bias.momentum", 1, out));
        layers.push_back(std::move(l));
    }
    return DenseNet(std::move(layers));
}

} // namespace

json model_to_json(const PCAdaModel& model, const json& config_echo) {
    json arch = json::object();
    json tensors = json::array();
    put_net(arch, tensors, "phi", model.phi);
    put_net(arch, tensors, "classifier", model.classifier);
    put_net(arch, tensors, "encoder", model.sam.encoder);
    put_net(arch, tensors, "decoder", model.sam.decoder);
    const Matrix& c = model.bank.centers;
    tensors.push_back(tensor("prototypes", c.rows(), c.cols(), c.values()));
    std::size_t levels = 0;
    if (model.retained)
        for (const Matrix& m : *model.retained)
            tensors.push_back(tensor("retained.level" + std::to_string(levels++), m.rows(), m.cols(), m.values()));
    return {{"format", "pcada-model"},
            {"version", 1},
            {"config", config_echo},
            {"architecture", arch},
            {"tensors", tensors},
            {"state",
             {{"use_sam", model.use_sam},
              {"use_apm", model.use_apm},
              {"pretrained", model.pretrained},
              {"encoder_frozen", model.sam.encoder_frozen()},
              {"retained_levels", model.retained ? json(levels) : json(nullptr)},
              {"counters", model.counters.to_json()}}}};
}

PCAdaModel model_from_json(const json& j) {
    try {
        if (j.value("format", "") != "pcada-model") throw ParseError("not a model snapshot");
        if (j.at("version").get<int>() != 1) throw ParseError("model snapshot: unsupported version");
        TensorMap tensors;
        for (const auto& t : j.at("tensors")) tensors[t.at("name").get<std::string>()] = &t;
        const json& arch = j.at("architecture");
        PCAdaModel m;
        m.phi = get_net(arch, tensors, "phi");
        m.classifier = get_net(arch, tensors, "classifier");
        m.sam.encoder = get_net(arch, tensors, "encoder");
        m.sam.decoder = get_net(arch, tensors, "decoder");
        if (m.phi.output_dim() != m.classifier.input_dim() || m.phi.output_dim() != m.sam.feature_dim() ||
            m.sam.decoder.output_dim() != m.phi.output_dim() || m.sam.encoder.output_dim() != m.sam.decoder.input_dim())
            throw ParseError("model snapshot: inconsistent dimensions");
        const std::size_t k = m.classifier.output_dim(), d = m.phi.output_dim();
        m.bank.centers = Matrix(k, d);
        fill(m.bank.centers.values(), find(tensors, "prototypes", k, d));
        const json& s = j.at("state");
        m.use_sam = s.at("use_sam").get<bool>();
        m.use_apm = s.at("use_apm").get<bool>();
        m.pretrained = s.at("pretrained").get<bool>();
        m.sam.encoder.set_frozen(s.at("encoder_frozen").get<bool>());
        if (!s.at("retained_levels").is_null()) {
            std::vector<Matrix> ret;
            for (std::size_t l = 0; l < s.at("retained_levels").get<std::size_t>(); ++l) {
                const std::string name = "retained.level" + std::to_string(l);
                const auto it = tensors.find(name);
                if (it == tensors.end()) throw ParseError("model snapshot: missing tensor " + name);
                const auto shape = it->second->at("shape").get<std::vector<std::size_t>>();
                Matrix r(shape.at(0), shape.at(1));
                fill(r.values(), find(tensors, name, r.rows(), r.cols()));
                ret.push_back(std::move(r));
            }
            m.retained = std::move(ret);
        }
        const json& c = s.at("counters");
        m.counters.pretrain_steps = c.at("pretrain_steps").get<std::uint64_t>();
        m.counters.prototype_sweeps = c.at("prototype_sweeps").get<std::uint64_t>();
        m.counters.prototype_updates = c.at("prototype_updates").get<std::uint64_t>();
        m.counters.inner_steps = c.at("inner_steps").get<std::uint64_t>();
        m.counters.outer_steps = c.at("outer_steps").get<std::uint64_t>();
        return m;
    } catch (const json::exception& e) {
        throw ParseError(std::string("model snapshot: ") + e.what());
    } catch (const ShapeError& e) {
        throw ParseError(std::string("model snapshot: ") + e.what());
    }
}

void save_model(const std::filesystem::path& path, const PCAdaModel& model, const json& config_echo) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << model_to_json(model, config_echo).dump() << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

PCAdaModel load_model(const std::filesystem::path& path, json* config_echo) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read model " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ParseError("model snapshot " + path.string() + ": malformed JSON");
    if (config_echo) *config_echo = j.value("config", json::object());
    return model_from_json(j);
}

} // namespace pcada
