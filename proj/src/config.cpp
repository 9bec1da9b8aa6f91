#include "pcada/config.hpp"

#include <fstream>

#include "pcada/errors.hpp"

namespace pcada {

using nlohmann::json;

const json& RunConfig::defaults() {
    static const json d = json::parse(R"({
        "seed": 0,
        "data": {
            "kind": "gaussians",
            "classes": 5,
            "input_dim": 2,
            "source_samples": 400,
            "support_samples": 64,
            "query_samples": 64,
            "eval_samples": 200,
            "angle_range": [0.0, 60.0],
            "domains": 20,
            "test_angle_range": [120.0, 174.0],
            "test_domains": 10,
            "noise": 0.5,
            "radius": 3.0
        },
        "model": {
            "feature_hidden": 32,
            "feature_dim": 16,
            "classifier_hidden": 16
        },
        "sam": {
            "encoder_dim": 0,
            "init_scale": 1.0,
            "decoder_bias_init": 0.0
        },
        "apm": {
            "delta_d": 0.8,
            "sce_a": 0.2,
            "sce_b": 1.0,
            "t1": 20.0,
            "t2": 40.0,
            "eta_f": 0.1,
            "eta_prime_f": 0.1
        },
        "optim": {
            "alpha_pretrain": 0.01,
            "alpha_in": 0.01,
            "alpha_out": 0.001,
            "momentum": 0.9,
            "weight_decay_in": 0.0,
            "weight_decay_out": 0.001
        },
        "divergence": {
            "bandwidth": "median",
            "levels": ["features", "predictions"]
        },
        "meta": {
            "max_outer": 100,
            "max_inner": 5,
            "test_inner": 0,
            "pretrain_epochs": 50,
            "batch_size": 16,
            "trajectory_length": 10,
            "r_mode": "online"
        },
        "run": {
            "variant": "pcada-full"
        },
        "ablate": {
            "seeds": [0, 1, 2, 3, 4],
            "variants": ["source-only", "jmmd-sequential", "pcada-no-apm", "pcada-no-sam", "pcada-full"]
        }
    })");
    return d;
}

RunConfig::RunConfig() : tree_(defaults()) {}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("config " + path.string() + ": " + e.what());
    }
    RunConfig cfg;
    cfg.merge(j);
    return cfg;
}

namespace {

bool is_count(const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); }

void check_type(const std::string& key, const json& def, const json& v) {
    if (key == "divergence.bandwidth") {
        if ((v.is_string() && v == "median") || (v.is_number() && v.get<double>() > 0.0)) return;
        throw ConfigError(key + ": expected \"median\" or a positive number");
    }
    bool ok = false;
    if (def.is_number_integer())
        ok = is_count(v);
    else if (def.is_number_float())
        ok = v.is_number();
    else if (def.is_string())
        ok = v.is_string();
    else if (def.is_boolean())
        ok = v.is_boolean();
    else if (def.is_array()) {
        ok = v.is_array();
        if (ok && !def.empty())
            for (const auto& e : v)
                ok = ok && ((def[0].is_number_integer() && is_count(e)) ||
                            (def[0].is_number_float() && e.is_number()) || (def[0].is_string() && e.is_string()));
    }
    if (!ok) throw ConfigError(key + ": expected a value like " + def.dump() + ", got " + v.dump());
}

void merge_into(json& dst, const json& src, const json& def, const std::string& prefix) {
    if (!src.is_object()) throw ConfigError((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
    for (const auto& [k, v] : src.items()) {
        const std::string key = prefix.empty() ? k : prefix + "." + k;
        if (!def.contains(k)) throw ConfigError("unknown config key '" + key + "'");
        if (def[k].is_object())
            merge_into(dst[k], v, def[k], key);
        else {
            check_type(key, def[k], v);
            dst[k] = v;
        }
    }
}

std::vector<std::string> split_key(std::string_view key) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        parts.emplace_back(key.substr(start, dot == std::string_view::npos ? key.size() - start : dot - start));
        if (dot == std::string_view::npos) break;
        start = dot + 1;
    }
    return parts;
}

} // namespace

void RunConfig::merge(const json& overrides) { merge_into(tree_, overrides, defaults(), ""); }

void RunConfig::set(std::string_view key, const json& value) {
    const auto parts = split_key(key);
    json patch = value;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        if (it->empty()) throw ConfigError("malformed config key '" + std::string(key) + "'");
        patch = json{{*it, std::move(patch)}};
    }
    merge(patch);
}

void RunConfig::set(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0)
        throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
    const std::string_view key = assignment.substr(0, eq);
    const std::string text(assignment.substr(eq + 1));
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    set(key, value);
}

const json& RunConfig::get(std::string_view dotted_key) const {
    const json* node = &tree_;
    for (const auto& p : split_key(dotted_key)) {
        if (!node->is_object() || !node->contains(p))
            throw ConfigError("unknown config key '" + std::string(dotted_key) + "'");
        node = &(*node)[p];
    }
    return *node;
}

std::uint64_t RunConfig::seed() const { return tree_.at("seed").get<std::uint64_t>(); }

GeneratorConfig RunConfig::generator() const {
    const json& d = tree_.at("data");
    GeneratorConfig g;
    const auto kind = d.at("kind").get<std::string>();
    if (kind == "gaussians")
        g.kind = GeneratorKind::gaussians;
    else if (kind == "glyphs")
        g.kind = GeneratorKind::glyphs;
    else
        throw ConfigError("data.kind: expected \"gaussians\" or \"glyphs\", got \"" + kind + "\"");
    g.classes = d.at("classes").get<int>();
    g.input_dim = d.at("input_dim").get<std::size_t>();
    g.source_samples = d.at("source_samples").get<std::size_t>();
    g.support_samples = d.at("support_samples").get<std::size_t>();
    g.query_samples = d.at("query_samples").get<std::size_t>();
    g.eval_samples = d.at("eval_samples").get<std::size_t>();
    const auto& ar = d.at("angle_range");
    const auto& tr = d.at("test_angle_range");
    if (ar.size() != 2) throw ConfigError("data.angle_range: expected [start, end]");
    if (tr.size() != 2) throw ConfigError("data.test_angle_range: expected [start, end]");
    g.angle_start = ar[0].get<double>();
    g.angle_end = ar[1].get<double>();
    g.test_angle_start = tr[0].get<double>();
    g.test_angle_end = tr[1].get<double>();
    g.domain_count = d.at("domains").get<std::size_t>();
    g.test_domain_count = d.at("test_domains").get<std::size_t>();
    g.noise = d.at("noise").get<double>();
    g.radius = d.at("radius").get<double>();
    g.seed = seed();
    return g;
}

EngineConfig RunConfig::engine() const {
    EngineConfig e;
    const json& m = tree_.at("model");
    e.model.feature_hidden = m.at("feature_hidden").get<std::size_t>();
    e.model.feature_dim = m.at("feature_dim").get<std::size_t>();
    e.model.classifier_hidden = m.at("classifier_hidden").get<std::size_t>();
    const json& s = tree_.at("sam");
    e.model.code_dim = s.at("encoder_dim").get<std::size_t>();
    e.model.sam_init_scale = s.at("init_scale").get<double>();
    e.model.decoder_bias = s.at("decoder_bias_init").get<double>();

    const json& a = tree_.at("apm");
    e.apm.delta_d = a.at("delta_d").get<double>();
    e.apm.sce_a = a.at("sce_a").get<double>();
    e.apm.sce_b = a.at("sce_b").get<double>();
    e.apm.eta = {a.at("t1").get<double>(), a.at("t2").get<double>(), a.at("eta_f").get<double>()};
    e.apm.eta_prime = {a.at("t1").get<double>(), a.at("t2").get<double>(), a.at("eta_prime_f").get<double>()};

    const json& o = tree_.at("optim");
    const double mom = o.at("momentum").get<double>();
    e.optim.pretrain = {o.at("alpha_pretrain").get<double>(), mom, 0.0};
    e.optim.inner = {o.at("alpha_in").get<double>(), mom, o.at("weight_decay_in").get<double>()};
    e.optim.outer = {o.at("alpha_out").get<double>(), mom, o.at("weight_decay_out").get<double>()};

    const json& dv = tree_.at("divergence");
    if (dv.at("bandwidth").is_number()) e.divergence.kernel.bandwidth = dv.at("bandwidth").get<double>();
    e.divergence.features = e.divergence.predictions = false;
    for (const auto& l : dv.at("levels")) {
        if (l == "features")
            e.divergence.features = true;
        else if (l == "predictions")
            e.divergence.predictions = true;
        else
            throw ConfigError("divergence.levels: unknown level " + l.dump());
    }

    const json& mt = tree_.at("meta");
    e.plan.max_outer = mt.at("max_outer").get<std::size_t>();
    e.plan.max_inner = mt.at("max_inner").get<std::size_t>();
    e.plan.test_inner = mt.at("test_inner").get<std::size_t>();
    if (e.plan.test_inner == 0) e.plan.test_inner = e.plan.max_inner;
    e.plan.pretrain_epochs = mt.at("pretrain_epochs").get<std::size_t>();
    e.plan.batch_size = mt.at("batch_size").get<std::size_t>();
    e.plan.trajectory_length = mt.at("trajectory_length").get<std::size_t>();
    const auto rm = mt.at("r_mode").get<std::string>();
    if (rm == "online")
        e.plan.r_mode = RMode::online;
    else if (rm == "prefix")
        e.plan.r_mode = RMode::prefix;
    else
        throw ConfigError("meta.r_mode: expected \"online\" or \"prefix\", got \"" + rm + "\"");
    e.plan.test_domains = tree_.at("data").at("test_domains").get<std::size_t>();
    e.plan.seed = seed();
    e.variant = variant_from_string(tree_.at("run").at("variant").get<std::string>());
    return e;
}

std::vector<std::uint64_t> RunConfig::ablate_seeds() const {
    auto s = tree_.at("ablate").at("seeds").get<std::vector<std::uint64_t>>();
    if (s.empty()) throw ConfigError("ablate.seeds must not be empty");
    return s;
}

std::vector<Variant> RunConfig::ablate_variants() const {
    std::vector<Variant> out;
    for (const auto& v : tree_.at("ablate").at("variants")) {
        try {
            out.push_back(variant_from_string(v.get<std::string>()));
        } catch (const ConfigError&) {
            throw ConfigError("ablate.variants: unknown variant " + v.dump());
        }
    }
    if (out.empty()) throw ConfigError("ablate.variants must not be empty");
    return out;
}

void RunConfig::validate() const {
    const GeneratorConfig g = generator();
    g.validate();
    const EngineConfig e = engine();
    try {
        e.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& ex) {
        throw ConfigError(ex.what());
    }
    if (e.model.sam_init_scale <= 0.0) throw ConfigError("sam.init_scale must be > 0");
    if (e.plan.test_domains < 1) throw ConfigError("data.test_domains must be >= 1");
    ablate_seeds();
    ablate_variants();
}

} // namespace pcada
