#include "pcada/engine.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "pcada/errors.hpp"

namespace pcada {

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::source_only: return "source-only";
        case Variant::jmmd_sequential: return "jmmd-sequential";
        case Variant::pcada_no_apm: return "pcada-no-apm";
        case Variant::pcada_no_sam: return "pcada-no-sam";
        case Variant::pcada_full: return "pcada-full";
    }
    return "pcada-full";
}

Variant variant_from_string(std::string_view name) {
    for (Variant v : all_variants())
        if (to_string(v) == name) return v;
    throw ConfigError("unknown variant '" + std::string(name) + "'");
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v{Variant::source_only, Variant::jmmd_sequential, Variant::pcada_no_apm,
                                        Variant::pcada_no_sam, Variant::pcada_full};
    return v;
}

void TrainPlan::validate() const {
    if (max_outer < 1 || max_inner < 1 || pretrain_epochs < 1 || batch_size < 1 || test_inner < 1)
        throw ConfigError("meta: max_outer, max_inner, pretrain_epochs, batch_size and test_inner must be >= 1");
    if (trajectory_length < 2) throw ConfigError("meta.trajectory_length must be >= 2");
    if (test_domains < 1) throw ConfigError("meta.test_domains must be >= 1");
}

namespace {

template <class F>
void keyed(const char* key, F&& check) {
    try {
        check();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string(key) + ": " + e.what());
    }
}

} // namespace

void EngineConfig::validate() const {
    plan.validate();
    keyed("optim.alpha_pretrain / optim.momentum", [&] { optim.pretrain.validate(); });
    keyed("optim.alpha_in / optim.momentum / optim.weight_decay_in", [&] { optim.inner.validate(); });
    keyed("optim.alpha_out / optim.momentum / optim.weight_decay_out", [&] { optim.outer.validate(); });
    keyed("apm.t1 / apm.t2 / apm.eta_f", [&] { apm.eta.validate(); });
    keyed("apm.t1 / apm.t2 / apm.eta_prime_f", [&] { apm.eta_prime.validate(); });
    keyed("divergence.bandwidth", [&] { divergence.kernel.validate(); });
    if (!divergence.features && !divergence.predictions)
        throw ConfigError("divergence.levels must name at least one level");
    if (!(apm.delta_d >= 0.0)) throw ConfigError("apm.delta_d must be >= 0");
    if (!(apm.sce_a >= 0.0 && apm.sce_b >= 0.0)) throw ConfigError("apm.sce_a / apm.sce_b must be >= 0");
    if (model.feature_dim == 0 || model.classifier_hidden == 0)
        throw ConfigError("model.feature_dim and model.classifier_hidden must be >= 1");
}

nlohmann::json StepCounters::to_json() const {
    return {{"pretrain_steps", pretrain_steps},
            {"prototype_sweeps", prototype_sweeps},
            {"prototype_updates", prototype_updates},
            {"inner_steps", inner_steps},
            {"outer_steps", outer_steps}};
}

namespace {

std::string hex(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace

PCAdaModel PCAdaModel::make(const ModelConfig& cfg, std::size_t input_dim, int classes, std::uint64_t seed) {
    if (classes < 2) throw ConfigError("model: need at least 2 classes");
    Rng rng = make_stream(seed, "init");
    PCAdaModel m;
    const auto k = static_cast<std::size_t>(classes);
    if (cfg.feature_hidden > 0) {
        const std::array<std::size_t, 3> dims{input_dim, cfg.feature_hidden, cfg.feature_dim};
        const std::array<Activation, 2> acts{Activation::relu, Activation::relu};
        m.phi = DenseNet::make(dims, acts, rng);
    } else {
        const std::array<std::size_t, 2> dims{input_dim, cfg.feature_dim};
        const std::array<Activation, 1> acts{Activation::relu};
        m.phi = DenseNet::make(dims, acts, rng);
    }
    const std::array<std::size_t, 3> cdims{cfg.feature_dim, cfg.classifier_hidden, k};
    const std::array<Activation, 2> cacts{Activation::relu, Activation::identity};
    m.classifier = DenseNet::make(cdims, cacts, rng);
    const std::size_t code = cfg.code_dim ? cfg.code_dim : cfg.feature_dim;
    m.sam = SamState::make(cfg.feature_dim, code, rng, {cfg.sam_init_scale, cfg.decoder_bias});
    m.bank.centers = Matrix(k, cfg.feature_dim);
    return m;
}

void PCAdaModel::zero_grad() {
    phi.zero_grad();
    classifier.zero_grad();
    sam.zero_grad();
}

nlohmann::json PCAdaModel::checksums() const {
    return {{"phi", hex(phi.checksum())},
            {"classifier", hex(classifier.checksum())},
            {"encoder", hex(sam.encoder.checksum())},
            {"decoder", hex(sam.decoder.checksum())},
            {"prototypes", hex(bank.checksum())}};
}

// ---------------------------------------------------------------------------
// Forward / backward plumbing
// ---------------------------------------------------------------------------

BatchForward forward_batch(const PCAdaModel& model, const Matrix& x) {
    BatchForward f;
    f.feats = model.phi.forward(x, &f.phi);
    if (model.use_sam) {
        f.mask_trace = sam_forward(model.sam, f.feats);
        f.mask = f.mask_trace->mask;
        f.masked = masked_features(f.feats, f.mask);
    } else {
        f.mask = ChannelMask::ones(f.feats.cols());
        f.masked = f.feats;
    }
    f.logits = model.classifier.forward(f.masked, &f.cls);
    f.probs = softmax_rows(f.logits);
    return f;
}

std::vector<Matrix> batch_reps(const BatchForward& f, const DivergenceConfig& cfg) {
    std::vector<Matrix> reps;
    if (cfg.features) reps.push_back(f.masked);
    if (cfg.predictions) reps.push_back(f.probs);
    return reps;
}

ChannelMask batch_mask(const PCAdaModel& model, const Matrix& x) {
    const Matrix feats = model.phi.predict(x);
    if (!model.use_sam) return ChannelMask::ones(feats.cols());
    return sam_forward(model.sam, feats).mask;
}

std::vector<double> BandwidthMemo::resolve(std::span<const Matrix> a, std::span<const Matrix> b,
                                           const KernelConfig& cfg) {
    if (replaying_) {
        if (cursor_ >= entries_.size()) throw StateError("BandwidthMemo: more divergence terms than recorded");
        return entries_[cursor_++];
    }
    entries_.push_back(resolve_bandwidths(a, b, cfg));
    return entries_.back();
}

namespace {

std::vector<double> bandwidths(BandwidthMemo* memo, std::span<const Matrix> a, std::span<const Matrix> b,
                               const KernelConfig& cfg) {
    return memo ? memo->resolve(a, b, cfg) : resolve_bandwidths(a, b, cfg);
}

// Gradient accumulators for one forwarded batch, matching batch_reps' levels.
struct BatchGrad {
    Matrix dmasked;
    Matrix dprobs;
    Matrix dlogits;

    explicit BatchGrad(const BatchForward& f)
        : dmasked(f.masked.rows(), f.masked.cols()),
          dprobs(f.probs.rows(), f.probs.cols()),
          dlogits(f.logits.rows(), f.logits.cols()) {}

    void add_reps(const std::vector<Matrix>& g, const DivergenceConfig& cfg, double scale) {
        std::size_t l = 0;
        if (cfg.features) add_scaled(dmasked, g[l++], scale);
        if (cfg.predictions) add_scaled(dprobs, g[l++], scale);
    }

    static void add_scaled(Matrix& dst, const Matrix& src, double s) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += s * src.data()[i];
    }

    Matrix logits_grad(const BatchForward& f) const {
        Matrix g = softmax_backward(f.probs, dprobs);
        g += dlogits;
        return g;
    }
};

void backward_classifier(PCAdaModel& model, const BatchForward& f, const BatchGrad& g) {
    model.classifier.backward(f.cls, g.logits_grad(f));
}

// Through the classifier (optionally accumulating theta), the mask, and phi.
void backward_feature_path(PCAdaModel& model, const BatchForward& f, const BatchGrad& g, bool accumulate_theta) {
    Matrix dmasked = g.dmasked;
    dmasked += model.classifier.backward(f.cls, g.logits_grad(f), accumulate_theta);
    Matrix dfeats;
    if (model.use_sam) {
        MaskedGrad mg = masked_features_backward(f.feats, f.mask, dmasked);
        dfeats = std::move(mg.grad_features);
        dfeats += sam_backward(model.sam, *f.mask_trace, mg.grad_mask);
    } else {
        dfeats = std::move(dmasked);
    }
    model.phi.backward(f.phi, dfeats);
}

Matrix draw_rows(const Matrix& m, std::size_t count, Rng& rng) {
    std::vector<std::size_t> idx(m.rows());
    std::iota(idx.begin(), idx.end(), 0);
    if (count < m.rows()) {
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(count);
    }
    return select_rows(m, idx);
}

LabeledBatch draw_labeled(const LabeledBatch& b, std::size_t count, Rng& rng) {
    std::vector<std::size_t> idx(b.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (count < b.size()) {
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(count);
    }
    LabeledBatch out{select_rows(b.x, idx), {}};
    for (std::size_t i : idx) out.y.push_back(b.y[i]);
    return out;
}

// Rows [start, start + count) of m, wrapping around.
Matrix cyclic_rows(const Matrix& m, std::size_t start, std::size_t count) {
    count = std::min(count, m.rows());
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < count; ++i) idx.push_back((start + i) % m.rows());
    return select_rows(m, idx);
}

std::vector<Matrix> detached_reps(const PCAdaModel& model, const EngineConfig& cfg, const Matrix& x) {
    return batch_reps(forward_batch(model, x), cfg.divergence);
}

} // namespace

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

double inner_loss(PCAdaModel& model, const EngineConfig& cfg, const LabeledBatch* source, const Matrix& target,
                  double t, bool with_grad, BandwidthMemo* memo) {
    double loss = 0.0;
    if (source) {
        const BatchForward fs = forward_batch(model, source->x);
        const BatchForward ft = forward_batch(model, target);
        const LossAndGrad ce = softmax_cross_entropy(fs.logits, source->y);
        const auto rs = batch_reps(fs, cfg.divergence);
        const auto rt = batch_reps(ft, cfg.divergence);
        const auto sig = bandwidths(memo, rs, rt, cfg.divergence.kernel);
        const DivergenceValue d = joint_mmd_fixed(rs, rt, sig);
        loss += ce.loss + d.value;
        if (with_grad) {
            BatchGrad gs(fs), gt(ft);
            gs.dlogits += ce.grad;
            gs.add_reps(d.grad_a, cfg.divergence, 1.0);
            gt.add_reps(d.grad_b, cfg.divergence, 1.0);
            backward_classifier(model, fs, gs);
            backward_classifier(model, ft, gt);
        }
    }
    if (model.use_apm) {
        const double w = anneal(t, cfg.apm.eta_prime);
        if (w != 0.0) {
            const double l_in = sce_loss(model.bank, model.classifier, cfg.apm.sce_a, cfg.apm.sce_b, with_grad ? w : 0.0);
            loss += w * l_in;
        }
    }
    return loss;
}

double outer_loss(PCAdaModel& model, const EngineConfig& cfg, const LabeledBatch* source_query,
                  std::span<const Matrix> query_trajectory, bool with_grad, BandwidthMemo* memo) {
    const std::size_t n = query_trajectory.size();
    if (n < 2) throw InputError("outer_step: query trajectory needs at least 2 domains");

    std::vector<BatchForward> ft;
    std::vector<std::vector<Matrix>> rt;
    for (const auto& q : query_trajectory) {
        ft.push_back(forward_batch(model, q));
        rt.push_back(batch_reps(ft.back(), cfg.divergence));
    }
    std::vector<BatchGrad> gt;
    for (const auto& f : ft) gt.emplace_back(f);

    double loss = 0.0;
    std::optional<BatchForward> fs;
    std::optional<BatchGrad> gs;
    if (source_query) {
        fs = forward_batch(model, source_query->x);
        gs.emplace(*fs);
        const LossAndGrad ce = softmax_cross_entropy(fs->logits, source_query->y);
        loss += ce.loss;
        gs->dlogits += ce.grad;
        const auto rs = batch_reps(*fs, cfg.divergence);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto sig = bandwidths(memo, rs, rt[i], cfg.divergence.kernel);
            const DivergenceValue d = joint_mmd_fixed(rs, rt[i], sig);
            loss += inv_n * d.value;
            gs->add_reps(d.grad_a, cfg.divergence, inv_n);
            gt[i].add_reps(d.grad_b, cfg.divergence, inv_n);
        }
    }

    // max over consecutive pairs; the subgradient flows through the first argmax only
    std::optional<DivergenceValue> best;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const auto sig = bandwidths(memo, rt[i], rt[i + 1], cfg.divergence.kernel);
        DivergenceValue d = joint_mmd_fixed(rt[i], rt[i + 1], sig);
        if (!best || d.value > best->value) {
            best = std::move(d);
            best_i = i;
        }
    }
    loss += best->value;
    gt[best_i].add_reps(best->grad_a, cfg.divergence, 1.0);
    gt[best_i + 1].add_reps(best->grad_b, cfg.divergence, 1.0);

    if (with_grad) {
        if (fs) backward_feature_path(model, *fs, *gs, false);
        for (std::size_t i = 0; i < n; ++i) backward_feature_path(model, ft[i], gt[i], false);
    }
    return loss;
}

double online_outer_loss(PCAdaModel& model, const EngineConfig& cfg, std::span<const Matrix> previous,
                         const Matrix& current, bool with_grad, BandwidthMemo* memo) {
    const BatchForward fc = forward_batch(model, current);
    const auto rc = batch_reps(fc, cfg.divergence);
    const auto sig = bandwidths(memo, previous, rc, cfg.divergence.kernel);
    const DivergenceValue d = joint_mmd_fixed(previous, rc, sig);
    if (with_grad) {
        BatchGrad g(fc);
        g.add_reps(d.grad_b, cfg.divergence, 1.0);
        backward_feature_path(model, fc, g, false);
    }
    return d.value;
}

// ---------------------------------------------------------------------------
// Steps
// ---------------------------------------------------------------------------

void pretrain_source(PCAdaModel& model, const EngineConfig& cfg, const LabeledBatch& source) {
    if (source.size() == 0) throw InputError("pretrain_source: empty source");
    if (cfg.plan.pretrain_epochs < 1) throw ConfigError("meta.pretrain_epochs must be >= 1");
    const std::size_t b = cfg.plan.batch_size;
    Rng rng = make_stream(cfg.plan.seed, "pretrain");
    std::vector<std::size_t> order(source.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.plan.pretrain_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += b) {
            const std::size_t end = std::min(order.size(), start + b);
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            const Matrix x = select_rows(source.x, idx);
            std::vector<int> y;
            for (std::size_t i : idx) y.push_back(source.y[i]);
            // the mask is all ones during pretraining
            ForwardTrace tp, tc;
            const Matrix feats = model.phi.forward(x, &tp);
            const Matrix logits = model.classifier.forward(feats, &tc);
            const LossAndGrad ce = softmax_cross_entropy(logits, y);
            model.phi.zero_grad();
            model.classifier.zero_grad();
            model.phi.backward(tp, model.classifier.backward(tc, ce.grad));
            sgd_step(model.phi, cfg.optim.pretrain);
            sgd_step(model.classifier, cfg.optim.pretrain);
            ++model.counters.pretrain_steps;
        }
    }

    // prototypes on masked source features, one mask per batch-sized chunk
    Matrix masked;
    for (std::size_t start = 0; start < source.size(); start += b) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(source.size(), start + b); ++i) idx.push_back(i);
        masked = concat_rows(masked, forward_batch(model, select_rows(source.x, idx)).masked);
    }
    model.bank = init_prototypes(masked, source.y, static_cast<std::size_t>(model.classes()));
    model.pretrained = true;
}

void inner_step(PCAdaModel& model, const EngineConfig& cfg, const LabeledBatch* source_batch,
                const Matrix& target_support, double t) {
    if (!model.pretrained) throw StateError("inner_step: model has not been pretrained");
    const double eta = anneal(t, cfg.apm.eta);
    if (eta != 0.0) {
        const BatchForward ft = forward_batch(model, target_support);
        model.counters.prototype_updates += update_prototypes(model.bank, ft.masked, cfg.apm.delta_d, eta);
    }
    model.classifier.zero_grad();
    inner_loss(model, cfg, source_batch, target_support, t, true);
    sgd_step(model.classifier, cfg.optim.inner);
    ++model.counters.inner_steps;
}

void outer_step(PCAdaModel& model, const EngineConfig& cfg, const LabeledBatch* source_query,
                std::span<const Matrix> query_trajectory) {
    if (!model.pretrained) throw StateError("outer_step: model has not been pretrained");
    model.phi.zero_grad();
    model.sam.zero_grad();
    outer_loss(model, cfg, source_query, query_trajectory, true);
    sgd_step(model.phi, cfg.optim.outer);
    if (model.use_sam) {
        sgd_step(model.sam.encoder, cfg.optim.outer);
        sgd_step(model.sam.decoder, cfg.optim.outer);
    }
    ++model.counters.outer_steps;
}

void online_outer_step(PCAdaModel& model, const EngineConfig& cfg, const Matrix& current) {
    if (!model.pretrained) throw StateError("online_outer_step: model has not been pretrained");
    if (!model.retained) throw StateError("online_outer_step: no previous-domain summary retained");
    model.phi.zero_grad();
    model.sam.zero_grad();
    online_outer_loss(model, cfg, *model.retained, current, true);
    sgd_step(model.phi, cfg.optim.outer);
    if (model.use_sam) {
        sgd_step(model.sam.encoder, cfg.optim.outer);
        sgd_step(model.sam.decoder, cfg.optim.outer);
    }
    ++model.counters.outer_steps;
    model.retained = detached_reps(model, cfg, current);
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

namespace {

// CE + joint MMD on (phi, theta) jointly, one domain at a time.
void jmmd_step(PCAdaModel& model, const EngineConfig& cfg, const LabeledBatch* source, const Matrix& target,
               const std::vector<Matrix>* previous, const SgdConfig& sgd) {
    model.phi.zero_grad();
    model.classifier.zero_grad();
    const BatchForward ft = forward_batch(model, target);
    const auto rt = batch_reps(ft, cfg.divergence);
    BatchGrad gt(ft);
    if (source) {
        const BatchForward fs = forward_batch(model, source->x);
        const auto rs = batch_reps(fs, cfg.divergence);
        const LossAndGrad ce = softmax_cross_entropy(fs.logits, source->y);
        const DivergenceValue d = joint_mmd(rs, rt, cfg.divergence.kernel);
        BatchGrad gs(fs);
        gs.dlogits += ce.grad;
        gs.add_reps(d.grad_a, cfg.divergence, 1.0);
        gt.add_reps(d.grad_b, cfg.divergence, 1.0);
        backward_feature_path(model, fs, gs, true);
    } else if (previous) {
        const DivergenceValue d = joint_mmd(*previous, rt, cfg.divergence.kernel);
        gt.add_reps(d.grad_b, cfg.divergence, 1.0);
    }
    backward_feature_path(model, ft, gt, true);
    sgd_step(model.phi, sgd);
    sgd_step(model.classifier, sgd);
    ++model.counters.inner_steps;
}

void record_mask(std::vector<MaskRecord>& out, const PCAdaModel& model, const char* phase, int timestamp,
                 std::size_t batch, const Matrix& x) {
    out.push_back({phase, timestamp, batch, batch_mask(model, x).a});
}

} // namespace

MetaTrainResult meta_train(PCAdaModel& model, const EngineConfig& cfg, const LabeledBatch& source,
                           std::span<const DomainSnapshot> train_domains) {
    cfg.validate();
    MetaTrainResult res;
    pretrain_source(model, cfg, source);
    res.checksums["after_pretrain"] = model.checksums();
    if (cfg.variant == Variant::source_only) return res;

    const std::size_t b = cfg.plan.batch_size;
    Rng batch_rng = make_stream(cfg.plan.seed, "batches");

    if (cfg.variant == Variant::jmmd_sequential) {
        if (train_domains.empty()) throw InputError("meta_train: no training domains");
        for (const auto& d : train_domains) {
            for (std::size_t s = 0; s < cfg.plan.max_inner; ++s) {
                const LabeledBatch src = draw_labeled(source, b, batch_rng);
                jmmd_step(model, cfg, &src, draw_rows(d.support, b, batch_rng), nullptr, cfg.optim.inner);
            }
        }
        model.retained = detached_reps(model, cfg, cyclic_rows(train_domains.back().query, 0, b));
        return res;
    }

    if (train_domains.size() < 2) throw InputError("meta_train: need at least 2 training domains");
    set_encoder_frozen(model.sam, false);
    Rng traj_rng = make_stream(cfg.plan.seed, "trajectory");
    const std::size_t len = std::min(cfg.plan.trajectory_length, train_domains.size());
    std::vector<Matrix> last_query;
    for (std::size_t t = 0; t < cfg.plan.max_outer; ++t) {
        const auto idx = sample_trajectory(train_domains.size(), len, traj_rng);
        std::vector<Matrix> support, query;
        for (std::size_t i : idx) {
            support.push_back(draw_rows(train_domains[i].support, b, batch_rng));
            query.push_back(draw_rows(train_domains[i].query, b, batch_rng));
        }
        const auto tt = static_cast<double>(t);
        for (std::size_t inner = 0; inner < cfg.plan.max_inner; ++inner) {
            ++model.counters.prototype_sweeps;
            for (const auto& s : support) {
                const LabeledBatch src = draw_labeled(source, b, batch_rng);
                inner_step(model, cfg, &src, s, tt);
            }
        }
        const LabeledBatch src_q = draw_labeled(source, b, batch_rng);
        outer_step(model, cfg, &src_q, query);
        if (model.use_sam && t + 1 == cfg.plan.max_outer)
            for (std::size_t i = 0; i < idx.size(); ++i)
                record_mask(res.masks, model, "meta-train", train_domains[idx[i]].timestamp, t, query[i]);
        last_query = std::move(query);
    }
    model.retained = detached_reps(model, cfg, last_query.back());
    return res;
}

Fraction evaluate(const PCAdaModel& model, const LabeledBatch& eval, std::size_t batch_size) {
    if (eval.size() == 0) throw InputError("evaluate: empty eval set");
    std::vector<int> pred;
    for (std::size_t start = 0; start < eval.size(); start += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(eval.size(), start + batch_size); ++i) idx.push_back(i);
        const auto p = argmax_rows(forward_batch(model, select_rows(eval.x, idx)).logits);
        pred.insert(pred.end(), p.begin(), p.end());
    }
    return accuracy(pred, eval.y);
}

namespace {

void adapt_online(PCAdaModel& model, const EngineConfig& cfg, const DomainSnapshot& d,
                  std::vector<MaskRecord>& masks) {
    const std::size_t b = cfg.plan.batch_size;
    const Matrix query = cyclic_rows(d.query, 0, b);
    switch (cfg.variant) {
        case Variant::source_only: return;
        case Variant::jmmd_sequential:
            for (std::size_t s = 0; s < cfg.plan.test_inner; ++s) {
                const Matrix batch = cyclic_rows(d.support, s * b, b);
                jmmd_step(model, cfg, nullptr, batch, model.retained ? &*model.retained : nullptr, cfg.optim.inner);
            }
            model.retained = detached_reps(model, cfg, query);
            return;
        default: break;
    }
    // source inaccessible: eta and eta' sit on their plateaus
    const double t = std::max(cfg.apm.eta.t2, cfg.apm.eta_prime.t2);
    for (std::size_t s = 0; s < cfg.plan.test_inner; ++s) {
        ++model.counters.prototype_sweeps;
        inner_step(model, cfg, nullptr, cyclic_rows(d.support, s * b, b), t);
    }
    if (model.retained)
        online_outer_step(model, cfg, query);
    else
        model.retained = detached_reps(model, cfg, query);
    if (model.use_sam) record_mask(masks, model, "meta-test", d.timestamp, 0, query);
}

} // namespace

MetaTestResult meta_test(PCAdaModel& model, const EngineConfig& cfg, std::span<const DomainSnapshot> stream) {
    cfg.validate();
    if (!model.pretrained) throw StateError("meta_test: model has not been trained");
    if (stream.empty()) throw InputError("meta_test: empty stream");
    for (std::size_t i = 1; i < stream.size(); ++i)
        if (stream[i].timestamp <= stream[i - 1].timestamp)
            throw InputError("meta_test: domain timestamps out of order at position " + std::to_string(i));

    set_encoder_frozen(model.sam, true);
    MetaTestResult res{RMatrix(stream.size()), {}, nlohmann::json::object()};
    res.checksums["before_meta_test"] = model.checksums();
    const std::size_t b = cfg.plan.batch_size;

    if (cfg.plan.r_mode == RMode::online) {
        for (std::size_t i = 0; i < stream.size(); ++i) {
            adapt_online(model, cfg, stream[i], res.masks);
            for (std::size_t j = 0; j <= i; ++j) res.r.set(i, j, evaluate(model, stream[j].eval, b));
        }
    } else {
        const PCAdaModel start = model;
        for (std::size_t i = 0; i < stream.size(); ++i) {
            PCAdaModel run = start;
            std::vector<MaskRecord> masks;
            for (std::size_t k = 0; k <= i; ++k) adapt_online(run, cfg, stream[k], masks);
            for (std::size_t j = 0; j <= i; ++j) res.r.set(i, j, evaluate(run, stream[j].eval, b));
            if (i + 1 == stream.size()) {
                res.masks = std::move(masks);
                model = std::move(run);
            }
        }
    }
    res.checksums["after_meta_test"] = model.checksums();
    return res;
}

PCAdaModel make_model(const EngineConfig& cfg, std::size_t input_dim, int classes) {
    PCAdaModel model = PCAdaModel::make(cfg.model, input_dim, classes, cfg.plan.seed);
    model.use_sam = cfg.variant == Variant::pcada_full || cfg.variant == Variant::pcada_no_apm;
    model.use_apm = cfg.variant == Variant::pcada_full || cfg.variant == Variant::pcada_no_sam;
    return model;
}

DomainSplit split_domains(const Dataset& data, const EngineConfig& cfg) {
    const std::size_t n_test = cfg.plan.test_domains;
    if (data.domains.size() <= n_test)
        throw InputError("dataset has " + std::to_string(data.domains.size()) + " domains; data.test_domains = " +
                         std::to_string(n_test) + " leaves none for training");
    const std::size_t split = data.domains.size() - n_test;
    return {{data.domains.data(), split}, {data.domains.data() + split, n_test}};
}

RunResult run_baseline(const Dataset& data, const EngineConfig& cfg, const nlohmann::json& config_echo) {
    cfg.validate();
    const auto [pool, stream] = split_domains(data, cfg);
    const auto t0 = std::chrono::steady_clock::now();
    PCAdaModel model = make_model(cfg, data.input_dim(), data.classes);

    MetaTrainResult mt = meta_train(model, cfg, data.source, pool);
    nlohmann::json checksums = mt.checksums;
    checksums["after_meta_train"] = model.checksums();
    MetaTestResult mtest = meta_test(model, cfg, stream);
    checksums["after_meta_test"] = mtest.checksums["after_meta_test"];
    const auto t1 = std::chrono::steady_clock::now();

    RunResult out{RunReport{}, std::move(mt.masks), std::move(model)};
    out.masks.insert(out.masks.end(), mtest.masks.begin(), mtest.masks.end());
    RunReport& rep = out.report;
    rep.method = std::string(to_string(cfg.variant));
    rep.seed = cfg.plan.seed;
    rep.config = config_echo;
    for (const auto& d : stream) {
        rep.timestamps.push_back(d.timestamp);
        rep.angles.push_back(d.angle);
    }
    rep.r = std::move(mtest.r);
    rep.acc = acc(rep.r);
    if (rep.r.size() >= 2) rep.bwt = bwt(rep.r);
    rep.counters = out.model.counters.to_json();
    rep.checksums = std::move(checksums);
    rep.wall_clock_s = std::chrono::duration<double>(t1 - t0).count();
    return out;
}

void write_masks_csv(const std::filesystem::path& path, std::span<const MaskRecord> masks) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "phase,timestamp,batch";
    const std::size_t dim = masks.empty() ? 0 : masks.front().mask.size();
    for (std::size_t j = 0; j < dim; ++j) out << ",a" << j;
    out << '\n' << std::setprecision(9);
    for (const auto& m : masks) {
        out << m.phase << ',' << m.timestamp << ',' << m.batch;
        for (double v : m.mask) out << ',' << v;
        out << '\n';
    }
}

} // namespace pcada
