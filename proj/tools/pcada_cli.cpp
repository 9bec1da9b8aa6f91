// pcada: dataset generation, meta-training, online meta-testing, ablation
// sweeps and the gradient-check suite.
//
// Exit codes: 0 ok, 1 other, 2 validation (config / input / parse),
// 3 numeric (including gradient-check failures), 4 I/O.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "pcada/config.hpp"
#include "pcada/data.hpp"
#include "pcada/engine.hpp"
#include "pcada/errors.hpp"
#include "pcada/gradcheck.hpp"
#include "pcada/metrics.hpp"
#include "pcada/snapshot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pcada;

namespace {

constexpr int kExitOther = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct CommonOptions {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
    std::string data;
    std::string model;
};

RunConfig resolve_config(const CommonOptions& o, const json* base = nullptr) {
    RunConfig cfg;
    if (base && o.config.empty()) cfg.merge(*base);
    if (!o.config.empty()) cfg = RunConfig::from_file(o.config);
    for (const auto& s : o.sets) cfg.set(s);
    if (o.seed) cfg.set_seed(*o.seed);
    cfg.validate();
    return cfg;
}

// Refuses to write into a directory that already holds `marker` unless forced.
void prepare_out(const fs::path& dir, const char* marker, bool force) {
    if (dir.empty()) throw ConfigError("--out is required");
    if (fs::exists(dir / marker) && !force)
        throw IoError((dir / marker).string() + " exists; pass --force to overwrite");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

Dataset obtain_data(const CommonOptions& o, const RunConfig& cfg) {
    if (!o.data.empty()) return load_external(o.data);
    return generate(cfg.generator());
}

json data_echo(const CommonOptions& o, const RunConfig& cfg) {
    json echo = cfg.tree();
    echo["data_source"] = o.data.empty() ? json("generated") : json(fs::absolute(o.data).string());
    return echo;
}

RunReport build_report(const EngineConfig& ec, std::span<const DomainSnapshot> stream, MetaTestResult& mt,
                       const PCAdaModel& model, json checksums, const json& echo) {
    RunReport rep;
    rep.method = std::string(to_string(ec.variant));
    rep.seed = ec.plan.seed;
    rep.config = echo;
    for (const auto& d : stream) {
        rep.timestamps.push_back(d.timestamp);
        rep.angles.push_back(d.angle);
    }
    rep.r = std::move(mt.r);
    rep.acc = acc(rep.r);
    if (rep.r.size() >= 2) rep.bwt = bwt(rep.r);
    rep.counters = model.counters.to_json();
    checksums["after_meta_test"] = mt.checksums["after_meta_test"];
    rep.checksums = std::move(checksums);
    return rep;
}

void emit_run(const fs::path& out, const RunReport& rep, std::span<const MaskRecord> masks) {
    write_json(out / "report.json", rep.to_json());
    write_per_domain_csv(out / "per_domain.csv", std::span<const RunReport>(&rep, 1));
    write_masks_csv(out / "masks.csv", masks);
    write_json(out / "timing.json", {{"method", rep.method}, {"seed", rep.seed}, {"wall_clock_s", rep.wall_clock_s}});
}

void print_summary(const RunReport& rep) {
    std::printf("%-16s seed=%llu ACC=%.4f BWT=%s\n", rep.method.c_str(), static_cast<unsigned long long>(rep.seed),
                rep.acc, rep.bwt ? std::to_string(*rep.bwt).c_str() : "n/a");
}

int cmd_generate(const CommonOptions& o) {
    const RunConfig cfg = resolve_config(o);
    const GeneratorConfig g = cfg.generator();
    g.validate();
    const fs::path out = o.out;
    prepare_out(out, "manifest.json", o.force);
    const Dataset d = generate(g);
    export_dataset(d, out);
    write_json(out / "config.json", cfg.tree());
    std::printf("wrote 1 source + %zu domains to %s\n", d.domains.size(), out.string().c_str());
    return 0;
}

int cmd_train(const CommonOptions& o) {
    const RunConfig cfg = resolve_config(o);
    const EngineConfig ec = cfg.engine();
    const fs::path out = o.out;
    prepare_out(out, "model.json", o.force);
    const Dataset data = obtain_data(o, cfg);
    const auto split = split_domains(data, ec);
    const auto t0 = std::chrono::steady_clock::now();
    PCAdaModel model = make_model(ec, data.input_dim(), data.classes);
    MetaTrainResult mt = meta_train(model, ec, data.source, split.train);
    mt.checksums["after_meta_train"] = model.checksums();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const json echo = data_echo(o, cfg);
    save_model(out / "model.json", model, echo);
    write_masks_csv(out / "masks.csv", mt.masks);
    write_json(out / "train.json", {{"format", "pcada-train-report"},
                                    {"version", 1},
                                    {"method", to_string(ec.variant)},
                                    {"seed", ec.plan.seed},
                                    {"config", echo},
                                    {"counters", model.counters.to_json()},
                                    {"checksums", mt.checksums}});
    write_json(out / "timing.json", {{"phase", "train"}, {"wall_clock_s", secs}});
    std::printf("trained %s in %.2fs -> %s\n", std::string(to_string(ec.variant)).c_str(), secs,
                (out / "model.json").string().c_str());
    return 0;
}

int cmd_test(const CommonOptions& o) {
    if (o.model.empty()) throw ConfigError("--model is required");
    json model_cfg;
    PCAdaModel model = load_model(o.model, &model_cfg);
    if (model_cfg.is_object()) model_cfg.erase("data_source");
    const RunConfig cfg = resolve_config(o, model_cfg.is_object() ? &model_cfg : nullptr);
    const EngineConfig ec = cfg.engine();
    const fs::path out = o.out;
    prepare_out(out, "report.json", o.force);
    const Dataset data = obtain_data(o, cfg);
    if (data.input_dim() != model.phi.input_dim() || data.classes != model.classes())
        throw InputError("dataset shape does not match the model (input_dim / classes)");
    const auto split = split_domains(data, ec);
    const auto t0 = std::chrono::steady_clock::now();
    json checksums = json::object();
    checksums["after_meta_train"] = model.checksums();
    MetaTestResult mt = meta_test(model, ec, split.test);
    RunReport rep = build_report(ec, split.test, mt, model, checksums, data_echo(o, cfg));
    rep.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    emit_run(out, rep, mt.masks);
    print_summary(rep);
    return 0;
}

int cmd_run(const CommonOptions& o) {
    const RunConfig cfg = resolve_config(o);
    const EngineConfig ec = cfg.engine();
    const fs::path out = o.out;
    prepare_out(out, "report.json", o.force);
    const Dataset data = obtain_data(o, cfg);
    const json echo = data_echo(o, cfg);
    RunResult res = run_baseline(data, ec, echo);
    emit_run(out, res.report, res.masks);
    save_model(out / "model.json", res.model, echo);
    print_summary(res.report);
    return 0;
}

int cmd_ablate(const CommonOptions& o) {
    const RunConfig base = resolve_config(o);
    const fs::path out = o.out;
    prepare_out(out, "aggregate.csv", o.force);
    const auto seeds = base.ablate_seeds();
    const auto variants = base.ablate_variants();
    std::vector<Aggregate> rows;
    std::vector<RunReport> all;
    std::vector<int> timestamps;
    json timing = json::array();
    for (Variant v : variants) {
        std::vector<RunReport> reports;
        for (std::uint64_t s : seeds) {
            RunConfig cfg = base;
            cfg.set_seed(s);
            cfg.set("run.variant", json(std::string(to_string(v))));
            const Dataset data = obtain_data(o, cfg);
            const json echo = data_echo(o, cfg);
            RunResult res = run_baseline(data, cfg.engine(), echo);
            const fs::path dir = out / std::string(to_string(v)) / ("seed_" + std::to_string(s));
            fs::create_directories(dir);
            emit_run(dir, res.report, res.masks);
            timing.push_back({{"method", res.report.method}, {"seed", s}, {"wall_clock_s", res.report.wall_clock_s}});
            print_summary(res.report);
            timestamps = res.report.timestamps;
            reports.push_back(res.report);
            all.push_back(std::move(res.report));
        }
        rows.push_back(aggregate(reports));
    }
    write_per_domain_csv(out / "per_domain.csv", all);
    write_aggregate_csv(out / "aggregate.csv", rows, timestamps);
    json agg = {{"format", "pcada-aggregate"}, {"version", 1}, {"config", data_echo(o, base)}, {"methods", json::array()}};
    for (const auto& a : rows) agg["methods"].push_back(a.to_json());
    write_json(out / "aggregate.json", agg);
    write_json(out / "timing.json", timing);
    std::printf("%zu runs, aggregate -> %s\n", all.size(), (out / "aggregate.csv").string().c_str());
    return 0;
}

int cmd_gradcheck(const CommonOptions& o, const std::string& corrupt) {
    GradSuiteOptions opts;
    if (o.seed) opts.seed = *o.seed;
    opts.corrupt = corrupt;
    const auto t0 = std::chrono::steady_clock::now();
    const auto entries = run_grad_suite(opts);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool ok = true;
    std::printf("%-14s %-6s %-12s %-8s %s\n", "loss", "status", "max_rel_err", "checked", "worst");
    for (const auto& e : entries) {
        std::printf("%-14s %-6s %-12.3e %-8zu %s\n", e.loss.c_str(), e.passed ? "PASS" : "FAIL", e.result.max_rel_error,
                    e.result.checked, e.result.worst_parameter.c_str());
        ok = ok && e.passed;
    }
    std::printf("tolerance %.0e, h %.0e, %.2fs\n", opts.tolerance, opts.h, secs);
    if (!o.out.empty()) {
        prepare_out(o.out, "gradcheck.json", o.force);
        json j = json::array();
        for (const auto& e : entries)
            j.push_back({{"loss", e.loss},
                         {"passed", e.passed},
                         {"max_rel_error", e.result.max_rel_error},
                         {"checked", e.result.checked},
                         {"worst_parameter", e.result.worst_parameter}});
        write_json(fs::path(o.out) / "gradcheck.json", {{"tolerance", opts.tolerance}, {"h", opts.h}, {"losses", j}});
    }
    if (!ok) {
        for (const auto& e : entries)
            if (!e.passed) std::fprintf(stderr, "gradcheck failed: %s\n", e.loss.c_str());
        return kExitNumeric;
    }
    return 0;
}

void add_common(CLI::App* sub, CommonOptions& o, bool needs_data) {
    sub->add_option("--config", o.config, "JSON config file");
    sub->add_option("--set", o.sets, "dotted-key override, key=value (repeatable)");
    sub->add_option("--seed", o.seed, "seed override");
    sub->add_option("--out", o.out, "output directory");
    sub->add_flag("--force", o.force, "overwrite existing outputs");
    if (needs_data) sub->add_option("--data", o.data, "dataset directory (default: generate from config)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"pcada: evolving domain adaptation lab"};
    app.require_subcommand(1);
    CommonOptions o;
    std::string corrupt;

    auto* gen = app.add_subcommand("generate", "write a synthetic evolving-domain dataset");
    add_common(gen, o, false);
    auto* train = app.add_subcommand("train", "pretrain + meta-train, write model.json");
    add_common(train, o, true);
    auto* test = app.add_subcommand("test", "online meta-test a trained model");
    add_common(test, o, true);
    test->add_option("--model", o.model, "model.json from train")->required();
    auto* run = app.add_subcommand("run", "train and test one variant");
    add_common(run, o, true);
    auto* ablate = app.add_subcommand("ablate", "variants x seeds sweep with aggregate table");
    add_common(ablate, o, true);
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every registered loss");
    grad->add_option("--seed", o.seed, "fixture seed");
    grad->add_option("--out", o.out, "optional directory for gradcheck.json");
    grad->add_flag("--force", o.force, "overwrite existing outputs");
    grad->add_option("--corrupt", corrupt, "perturb the analytic gradient of this loss (fault injection)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitValidation;
    }

    try {
        if (*gen) return cmd_generate(o);
        if (*train) return cmd_train(o);
        if (*test) return cmd_test(o);
        if (*run) return cmd_run(o);
        if (*ablate) return cmd_ablate(o);
        if (*grad) return cmd_gradcheck(o, corrupt);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kExitIo;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kExitIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitOther;
    }
    return kExitOther;
}
