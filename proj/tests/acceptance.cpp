// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "pcada/config.hpp"
#include "pcada/divergence.hpp"
#include "pcada/engine.hpp"
#include "pcada/errors.hpp"
#include "pcada/gradcheck.hpp"
#include "pcada/metrics.hpp"
#include "pcada/prototype.hpp"
#include "pcada/sam.hpp"
#include "test_util.hpp"

using namespace pcada;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool report(int n, bool ok, const std::string& detail) {
    std::printf("criterion %d: %s  %s\n", n, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    return ok;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. gradient suite
// ---------------------------------------------------------------------------

bool criterion_1() {
    const auto t0 = Clock::now();
    const auto entries = run_grad_suite();
    const double secs = seconds_since(t0);
    bool ok = secs < 60.0;
    double worst = 0.0;
    std::string failed;
    for (const auto& e : entries) {
        worst = std::max(worst, e.result.max_rel_error);
        if (!e.passed || !(e.result.max_rel_error < 1e-4)) {
            ok = false;
            failed += " " + e.loss;
        }
    }
    return report(1, ok,
                  fmt("%zu losses, max rel err %.2e (< 1e-4), %.2fs (< 60s)%s%s", entries.size(), worst, secs,
                      failed.empty() ? "" : ", failed:", failed.c_str()));
}

// ---------------------------------------------------------------------------
// 2. MMD oracle
// ---------------------------------------------------------------------------

bool criterion_2() {
    Rng rng = make_stream(2024, "acceptance");
    double worst = 0.0, self = 0.0;
    bool symmetric = true;
    for (int rep = 0; rep < 20; ++rep) {
        const std::vector<Matrix> a{testutil::random_matrix(6, 4, rng), testutil::random_matrix(6, 3, rng)};
        const std::vector<Matrix> b{testutil::random_matrix(6, 4, rng, 1.0, 0.7),
                                    testutil::random_matrix(6, 3, rng, 1.3)};
        const auto sigma = std::vector<double>{testutil::oracle_median_sq(a[0], b[0]),
                                               testutil::oracle_median_sq(a[1], b[1])};
        worst = std::max(worst, std::abs(joint_mmd(a, b, {}).value - testutil::oracle_joint_mmd(a, b, sigma)));
        self = std::max(self, std::abs(joint_mmd(a, a, {}).value));
        symmetric = symmetric && joint_mmd(a, b, {}).value == joint_mmd(b, a, {}).value;
    }
    const bool ok = worst <= 1e-10 && self <= 1e-12 && symmetric;
    return report(2, ok,
                  fmt("20 cases 6v6: max |module - oracle| %.2e (<= 1e-10), max MMD(A,A) %.2e (<= 1e-12), symmetry %s",
                      worst, self, symmetric ? "exact" : "broken"));
}

// ---------------------------------------------------------------------------
// 3. unit metrics and closed forms
// ---------------------------------------------------------------------------

bool criterion_3() {
    std::vector<std::string> fails;
    auto near = [&](const char* what, double got, double want) {
        if (!(std::abs(got - want) <= 1e-9)) fails.push_back(fmt("%s got %.12g want %.12g", what, got, want));
    };

    RMatrix r(3);
    r.set(0, 0, {9, 10});
    r.set(1, 0, {8, 10});
    r.set(1, 1, {7, 10});
    r.set(2, 0, {6, 10});
    r.set(2, 1, {5, 10});
    r.set(2, 2, {4, 10});
    if (acc(r) != 0.5) fails.push_back("acc != 0.5");
    if (bwt(r) != -0.25) fails.push_back("bwt != -0.25");

    const AnnealSchedule s{20.0, 40.0, 0.1};
    near("anneal(10)", anneal(10, s), 0.0);
    near("anneal(30)", anneal(30, s), 0.05);
    near("anneal(50)", anneal(50, s), 0.1);

    const PrototypeBank far{Matrix::from_rows({{1, 0}, {3, 0}})};
    const PrototypeBank close{Matrix::from_rows({{1, 0}, {1.5, 0}})};
    const PrototypeBank tie{Matrix::from_rows({{1, 0}, {0, 1}})};
    const Vector origin{0, 0};
    if (assign_pseudo_label(origin, far, 0.8) != PseudoLabel{0}) fails.push_back("pseudo-label (1,3)");
    if (assign_pseudo_label(origin, close, 0.8).has_value()) fails.push_back("pseudo-label (1,1.5)");
    if (assign_pseudo_label(origin, tie, 0.0).has_value()) fails.push_back("pseudo-label tie");

    PrototypeBank bank{Matrix::from_rows({{0, 0}, {5, 5}})};
    progressive_update(bank, Vector{2, 2}, 0, 0.5);
    near("update c0[0]", bank.centers(0, 0), 1.0);
    near("update c0[1]", bank.centers(0, 1), 1.0);
    progressive_update(bank, Vector{7, -3}, 1, 1.0);
    near("update eta=1", bank.centers(1, 0), 7.0);
    const auto before = bank.checksum();
    progressive_update(bank, Vector{9, 9}, 0, 0.0);
    if (bank.checksum() != before) fails.push_back("update eta=0 moved the bank");
    progressive_update(bank, Vector{9, 9}, std::nullopt, 0.7);
    if (bank.checksum() != before) fails.push_back("absent label moved the bank");

    const std::vector<int> labels{0, 0, 1};
    const PrototypeBank init = init_prototypes(Matrix::from_rows({{0, 0}, {2, 2}, {4, 1}}), labels, 2);
    near("init c0", init.centers(0, 0), 1.0);
    near("distance (0,0)-(3,4)", prototype_distances(origin, PrototypeBank{Matrix::from_rows({{3, 4}, {0, 0}})})[0], 5.0);

    const ChannelMask m = build_mask(DomainEmbedding{Vector{0.0, 0.1, -0.1}, 0});
    near("mask e=0", m.a[0], 0.5);
    near("mask e=0.1", m.a[1], 1.0 / (1.0 + std::exp(-10.0)));
    near("mask e=-0.1", m.a[2], 1.0 / (1.0 + std::exp(10.0)));
    near("mask e=0.1 literal", m.a[1], 0.9999546021);
    near("mask e=-0.1 literal", m.a[2], 4.5397868702e-5);

    std::string detail = "acc 0.5 / bwt -0.25 exact; anneal, pseudo-label, prototype update, mask closed forms to 1e-9";
    for (const auto& f : fails) detail += "; " + f;
    return report(3, fails.empty(), detail);
}

// ---------------------------------------------------------------------------
// 4 + 5. directional benchmark and ablation ordering
// ---------------------------------------------------------------------------

struct BenchRun {
    double acc = 0.0;
    double bwt = 0.0;
    double secs = 0.0;
};

BenchRun bench_run(Variant v, std::uint64_t seed) {
    RunConfig cfg;
    cfg.set_seed(seed);
    cfg.set("run.variant", nlohmann::json(std::string(to_string(v))));
    cfg.validate();
    const auto t0 = Clock::now();
    const Dataset data = generate(cfg.generator());
    const RunResult r = run_baseline(data, cfg.engine(), cfg.tree());
    return {r.report.acc, r.report.bwt.value_or(0.0), seconds_since(t0)};
}

bool criteria_4_5() {
    const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    const std::vector<Variant> variants{Variant::source_only, Variant::pcada_no_apm, Variant::pcada_no_sam,
                                        Variant::pcada_full};
    std::map<Variant, std::vector<BenchRun>> runs;
    for (Variant v : variants)
        for (std::uint64_t s : seeds) runs[v].push_back(bench_run(v, s));

    const auto& full = runs[Variant::pcada_full];
    const auto& src = runs[Variant::source_only];
    const auto& no_sam = runs[Variant::pcada_no_sam];
    const auto& no_apm = runs[Variant::pcada_no_apm];

    int wins4 = 0, bwt_wins = 0, acc_wins = 0;
    double slowest = 0.0;
    std::string per_seed4, per_seed5;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const double gap = full[i].acc - src[i].acc;
        wins4 += gap >= 0.10;
        bwt_wins += full[i].bwt >= no_sam[i].bwt;
        acc_wins += full[i].acc >= no_apm[i].acc;
        double seed_secs = 0.0;
        for (Variant v : variants) seed_secs += runs[v][i].secs;
        slowest = std::max(slowest, seed_secs);
        per_seed4 += fmt(" s%zu:%.3f/%.3f", i, full[i].acc, src[i].acc);
        per_seed5 += fmt(" s%zu:bwt %.3f/%.3f acc %.3f/%.3f", i, full[i].bwt, no_sam[i].bwt, full[i].acc, no_apm[i].acc);
    }
    const bool ok4 = wins4 >= 4 && slowest < 300.0;
    const bool ok5 = bwt_wins >= 4 && acc_wins >= 4;
    const bool r4 = report(4, ok4,
                           fmt("full vs source-only ACC >= +10pt in %d/5 seeds (need 4), slowest seed %.1fs (< 300s);",
                               wins4, slowest) +
                               per_seed4);
    const bool r5 = report(5, ok5,
                           fmt("full >= no-sam on BWT in %d/5, full >= no-apm on ACC in %d/5 (need 4 each);",
                               bwt_wins, acc_wins) +
                               per_seed5);
    return r4 && r5;
}

// ---------------------------------------------------------------------------
// 6. protocol invariants
// ---------------------------------------------------------------------------

bool same(const nlohmann::json& a, const nlohmann::json& b, std::initializer_list<const char*> keys) {
    for (const char* k : keys)
        if (a.at(k) != b.at(k)) return false;
    return true;
}

bool criterion_6() {
    RunConfig cfg;
    cfg.validate();
    const EngineConfig ec = cfg.engine();
    const Dataset data = generate(cfg.generator());
    const auto [pool, stream] = split_domains(data, ec);

    // Meta-training and meta-testing driven step by step with the public step
    // functions, checking the parameter partition around every step.
    PCAdaModel m = make_model(ec, data.input_dim(), data.classes);
    pretrain_source(m, ec, data.source);
    std::size_t inner_checked = 0, outer_checked = 0, violations = 0;
    auto inner = [&](const LabeledBatch* src, const Matrix& support, double t) {
        const auto before = m.checksums();
        inner_step(m, ec, src, support, t);
        violations += !same(before, m.checksums(), {"phi", "encoder", "decoder"});
        ++inner_checked;
    };
    Rng rng = make_stream(ec.plan.seed, "acceptance");
    auto rows = [&](const Matrix& x) {
        std::vector<std::size_t> idx(ec.plan.batch_size);
        std::uniform_int_distribution<std::size_t> pick(0, x.rows() - 1);
        for (auto& i : idx) i = pick(rng);
        return select_rows(x, idx);
    };
    auto labeled = [&] {
        std::vector<std::size_t> idx(ec.plan.batch_size);
        std::uniform_int_distribution<std::size_t> pick(0, data.source.size() - 1);
        for (auto& i : idx) i = pick(rng);
        LabeledBatch b{select_rows(data.source.x, idx), {}};
        for (std::size_t i : idx) b.y.push_back(data.source.y[i]);
        return b;
    };
    set_encoder_frozen(m.sam, false);
    for (std::size_t t = 0; t < ec.plan.max_outer; ++t) {
        const auto idx = sample_trajectory(pool.size(), std::min(ec.plan.trajectory_length, pool.size()), rng);
        std::vector<Matrix> query;
        for (std::size_t i : idx) {
            const LabeledBatch src = labeled();
            inner(&src, rows(pool[i].support), static_cast<double>(t));
            query.push_back(rows(pool[i].query));
        }
        const LabeledBatch src = labeled();
        const auto before = m.checksums();
        outer_step(m, ec, &src, query);
        violations += !same(before, m.checksums(), {"classifier", "prototypes"});
        ++outer_checked;
        if (t + 1 == ec.plan.max_outer) m.retained = batch_reps(forward_batch(m, query.back()), ec.divergence);
    }
    set_encoder_frozen(m.sam, true);
    const auto encoder = m.checksums()["encoder"];
    for (const auto& d : stream) {
        for (std::size_t s = 0; s < ec.plan.test_inner; ++s) inner(nullptr, rows(d.support), ec.apm.eta.t2);
        const auto before = m.checksums();
        online_outer_step(m, ec, rows(d.query));
        violations += !same(before, m.checksums(), {"classifier", "prototypes", "encoder"});
        ++outer_checked;
    }
    const bool frozen_manual = m.checksums()["encoder"] == encoder;

    // Full pipeline: encoder checksum across meta_test, bitwise report.json.
    const RunResult a = run_baseline(data, ec, cfg.tree());
    const RunResult b = run_baseline(data, ec, cfg.tree());
    const auto& ck = a.report.checksums;
    const bool frozen_run = ck.at("after_meta_train").at("encoder") == ck.at("after_meta_test").at("encoder");
    const bool bitwise = a.report.to_json().dump() == b.report.to_json().dump();

    const bool ok = violations == 0 && frozen_manual && frozen_run && bitwise;
    return report(6, ok,
                  fmt("partition held at %zu inner + %zu outer steps (%zu violations); encoder frozen across meta_test: "
                      "%s; report.json bitwise identical across runs: %s",
                      inner_checked, outer_checked, violations, frozen_manual && frozen_run ? "yes" : "no",
                      bitwise ? "yes" : "no"));
}

// ---------------------------------------------------------------------------
// 7. mask behaviour on glyphs
// ---------------------------------------------------------------------------

bool criterion_7() {
    double worst_binary = 1.0, worst_agree = 1.0;
    std::size_t domains = 0;
    for (std::uint64_t seed : {0, 1, 2}) {
        RunConfig cfg;
        cfg.set_seed(seed);
        cfg.set("data.kind=glyphs");
        cfg.set("data.input_dim=64");
        cfg.validate();
        const EngineConfig ec = cfg.engine();
        const Dataset data = generate(cfg.generator());
        const auto [pool, stream] = split_domains(data, ec);
        PCAdaModel m = make_model(ec, data.input_dim(), data.classes);
        meta_train(m, ec, data.source, pool);

        const std::size_t b = ec.plan.batch_size;
        for (const auto& d : data.domains) {
            // Disjoint batches: consecutive B-row chunks of support and of query.
            std::vector<Vector> sup, qry;
            auto chunks = [&](const Matrix& x, std::vector<Vector>& out) {
                for (std::size_t s = 0; s + b <= x.rows(); s += b) {
                    std::vector<std::size_t> idx(b);
                    for (std::size_t i = 0; i < b; ++i) idx[i] = s + i;
                    out.push_back(batch_mask(m, select_rows(x, idx)).a);
                }
            };
            chunks(d.support, sup);
            chunks(d.query, qry);
            std::size_t binary = 0, total = 0;
            for (const auto* set : {&sup, &qry})
                for (const auto& a : *set)
                    for (double v : a) {
                        binary += std::abs(v - std::round(v)) < 0.01;
                        ++total;
                    }
            worst_binary = std::min(worst_binary, static_cast<double>(binary) / static_cast<double>(total));
            for (std::size_t i = 0; i < std::min(sup.size(), qry.size()); ++i) {
                std::size_t agree = 0;
                for (std::size_t j = 0; j < sup[i].size(); ++j) agree += std::round(sup[i][j]) == std::round(qry[i][j]);
                worst_agree = std::min(worst_agree, static_cast<double>(agree) / static_cast<double>(sup[i].size()));
            }
            ++domains;
        }
    }
    const bool ok = worst_binary >= 0.9 && worst_agree >= 0.9;
    return report(7, ok,
                  fmt("glyphs, 3 seeds x %zu domains: worst near-binary share %.3f (>= 0.9), worst support/query "
                      "rounded agreement %.3f (>= 0.9)",
                      domains / 3, worst_binary, worst_agree));
}

} // namespace

int main() {
    bool ok = true;
    try {
        ok = criterion_1() && ok;
        ok = criterion_2() && ok;
        ok = criterion_3() && ok;
        ok = criteria_4_5() && ok;
        ok = criterion_6() && ok;
        ok = criterion_7() && ok;
    } catch (const std::exception& e) {
        std::printf("acceptance aborted: %s\n", e.what());
        return 2;
    }
    std::printf("acceptance: %s\n", ok ? "all criteria PASS" : "one or more criteria FAIL");
    return ok ? 0 : 1;
}
