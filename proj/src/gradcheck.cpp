#include "pcada/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <limits>
#include <random>

#include "pcada/divergence.hpp"
#include "pcada/engine.hpp"
#include "pcada/errors.hpp"
#include "pcada/kernels.hpp"
#include "pcada/prototype.hpp"

namespace pcada {

namespace {

Matrix gaussian(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(r, c);
    for (double& v : m.values()) v = n(rng);
    return m;
}

std::vector<int> labels(std::size_t n, int k) {
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % static_cast<std::size_t>(k));
    return y;
}

// Perturbs the first gradient entry of every listed net after the analytic pass.
LossFn corrupted(LossFn f, std::vector<DenseNet*> nets) {
    return [f = std::move(f), nets](bool with_grad) {
        const double v = f(with_grad);
        if (with_grad)
            for (DenseNet* n : nets)
                if (!n->frozen()) {
                    auto p = n->parameters();
                    p.front().grad[0] += 0.1 + p.front().grad[0];
                }
        return v;
    };
}

// Smallest |pre-activation| over the relu layers; fixtures keep it away from
// zero so central differences do not straddle a kink.
double relu_margin(const DenseNet& net, const Matrix& x) {
    ForwardTrace tr;
    net.forward(x, &tr);
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const DenseLayer& layer = net.layer(l);
        if (layer.activation != Activation::relu) continue;
        const Matrix z = kernels::matmul(tr.inputs[l], layer.weight);
        for (std::size_t r = 0; r < z.rows(); ++r)
            for (std::size_t c = 0; c < z.cols(); ++c) margin = std::min(margin, std::abs(z.row(r)[c] + layer.bias[c]));
    }
    return margin;
}

double model_margin(const PCAdaModel& m, const Matrix& x) {
    return std::min(relu_margin(m.phi, x), relu_margin(m.classifier, forward_batch(m, x).masked));
}

constexpr double kMinMargin = 1e-3;
constexpr int kMaxDraws = 1000;

// Draws r x c gaussian batches (shifted by `offset`) until `ok` accepts one.
template <class Ok>
Matrix draw_fixture(std::size_t r, std::size_t c, double offset, Rng& rng, Ok&& ok) {
    for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
        Matrix m = gaussian(r, c, rng);
        for (double& v : m.values()) v += offset;
        if (ok(m)) return m;
    }
    throw NumericError("gradcheck: no kink-free fixture found");
}

struct Case {
    LossFn loss;
    std::vector<NamedNet> nets;
};

PCAdaModel small_model(std::uint64_t seed) {
    ModelConfig mc;
    mc.feature_hidden = 6;
    mc.feature_dim = 5;
    mc.classifier_hidden = 6;
    mc.code_dim = 4;
    mc.sam_init_scale = 0.02;
    mc.decoder_bias = 0.0;
    PCAdaModel m = PCAdaModel::make(mc, 4, 3, seed);
    Rng rng = make_stream(seed, "gradcheck-bank");
    m.bank.centers = draw_fixture(3, 5, 0.0, rng, [&](const Matrix& c) {
        Matrix a = c;
        for (double& v : a.values()) v = std::abs(v);
        return relu_margin(m.classifier, a) > kMinMargin;
    });
    for (double& v : m.bank.centers.values()) v = std::abs(v);
    m.pretrained = true;
    return m;
}

EngineConfig small_engine() {
    EngineConfig cfg;
    cfg.plan.batch_size = 8;
    return cfg;
}

} // namespace

const std::vector<std::string>& grad_suite_losses() {
    static const std::vector<std::string> names{"cross_entropy", "sce_l_in", "joint_mmd",
                                                "l_out",         "l_inner",  "l_out_online"};
    return names;
}

std::vector<GradSuiteEntry> run_grad_suite(const GradSuiteOptions& opts) {
    if (!opts.corrupt.empty() &&
        std::find(grad_suite_losses().begin(), grad_suite_losses().end(), opts.corrupt) == grad_suite_losses().end())
        throw ConfigError("gradcheck: unknown loss '" + opts.corrupt + "'");

    Rng rng = make_stream(opts.seed, "gradcheck");
    std::vector<GradSuiteEntry> out;
    auto run = [&](const std::string& name, Case c) {
        std::vector<DenseNet*> nets;
        for (const auto& n : c.nets) nets.push_back(n.net);
        const LossFn f = name == opts.corrupt ? corrupted(c.loss, nets) : c.loss;
        GradSuiteEntry e{name, grad_check(f, c.nets, opts.h), false};
        e.passed = e.result.max_rel_error < opts.tolerance;
        out.push_back(std::move(e));
    };

    // cross_entropy: 4 -> 6 -> 3
    {
        const std::array<std::size_t, 3> dims{4, 6, 3};
        const std::array<Activation, 2> acts{Activation::relu, Activation::identity};
        DenseNet net = DenseNet::make(dims, acts, rng);
        const Matrix x = draw_fixture(8, 4, 0.0, rng, [&](const Matrix& m) { return relu_margin(net, m) > kMinMargin; });
        const auto y = labels(8, 3);
        run("cross_entropy", {[&](bool g) {
                                  ForwardTrace tr;
                                  const Matrix logits = net.forward(x, &tr);
                                  const LossAndGrad ce = softmax_cross_entropy(logits, y);
                                  if (g) net.backward(tr, ce.grad);
                                  return ce.loss;
                              },
                              {{"classifier", &net}}});
    }

    // sce_l_in on prototypes through a 5 -> 6 -> 3 classifier
    {
        const std::array<std::size_t, 3> dims{5, 6, 3};
        const std::array<Activation, 2> acts{Activation::relu, Activation::identity};
        DenseNet net = DenseNet::make(dims, acts, rng);
        PrototypeBank bank{
            draw_fixture(3, 5, 0.0, rng, [&](const Matrix& m) { return relu_margin(net, m) > kMinMargin; })};
        run("sce_l_in", {[&](bool g) { return sce_loss(bank, net, 0.2, 1.0, g ? 1.0 : 0.0); }, {{"classifier", &net}}});
    }

    // joint_mmd on (features, softmax predictions) of two batches through shared nets
    {
        const std::array<std::size_t, 3> fdims{4, 6, 5};
        const std::array<Activation, 2> facts{Activation::relu, Activation::identity};
        const std::array<std::size_t, 2> cdims{5, 3};
        const std::array<Activation, 1> cacts{Activation::identity};
        DenseNet feat = DenseNet::make(fdims, facts, rng);
        DenseNet head = DenseNet::make(cdims, cacts, rng);
        const auto ok = [&](const Matrix& m) { return relu_margin(feat, m) > kMinMargin; };
        const Matrix xa = draw_fixture(6, 4, 0.0, rng, ok);
        const Matrix xb = draw_fixture(6, 4, 0.5, rng, ok);
        BandwidthMemo memo;
        run("joint_mmd", {[&](bool g) {
                              if (!g) memo.replay();
                              ForwardTrace fa, fb, ha, hb;
                              const Matrix za = feat.forward(xa, &fa), zb = feat.forward(xb, &fb);
                              const Matrix pa = softmax_rows(head.forward(za, &ha));
                              const Matrix pb = softmax_rows(head.forward(zb, &hb));
                              const std::vector<Matrix> ra{za, pa}, rb{zb, pb};
                              const auto sig = memo.resolve(ra, rb, KernelConfig{});
                              const DivergenceValue d = joint_mmd_fixed(ra, rb, sig);
                              if (g) {
                                  Matrix dza = d.grad_a[0];
                                  dza += head.backward(ha, softmax_backward(pa, d.grad_a[1]));
                                  Matrix dzb = d.grad_b[0];
                                  dzb += head.backward(hb, softmax_backward(pb, d.grad_b[1]));
                                  feat.backward(fa, dza);
                                  feat.backward(fb, dzb);
                              }
                              return d.value;
                          },
                          {{"features", &feat}, {"head", &head}}});
    }

    const EngineConfig cfg = small_engine();

    // l_out: source query + 3-domain query trajectory through the mask path
    {
        PCAdaModel m = small_model(opts.seed);
        const auto ok = [&](const Matrix& x) { return model_margin(m, x) > kMinMargin; };
        const LabeledBatch src{draw_fixture(8, 4, 0.0, rng, ok), labels(8, 3)};
        std::vector<Matrix> traj;
        for (int i = 0; i < 3; ++i) traj.push_back(draw_fixture(6, 4, i == 2 ? 1.5 : 0.2 * i, rng, ok));
        BandwidthMemo memo;
        run("l_out", {[&](bool g) {
                          if (!g) memo.replay();
                          return outer_loss(m, cfg, &src, traj, g, &memo);
                      },
                      {{"phi", &m.phi}, {"encoder", &m.sam.encoder}, {"decoder", &m.sam.decoder}}});
    }

    // l_inner: CE + d + eta'(t) L_in on theta, t on the plateau
    {
        PCAdaModel m = small_model(opts.seed + 1);
        const auto ok = [&](const Matrix& x) { return model_margin(m, x) > kMinMargin; };
        const LabeledBatch src{draw_fixture(8, 4, 0.0, rng, ok), labels(8, 3)};
        const Matrix tgt = draw_fixture(8, 4, -0.3, rng, ok);
        BandwidthMemo memo;
        run("l_inner", {[&](bool g) {
                            if (!g) memo.replay();
                            return inner_loss(m, cfg, &src, tgt, cfg.apm.eta_prime.t2, g, &memo);
                        },
                        {{"classifier", &m.classifier}}});
    }

    // l_out_online: d(retained summary, current batch), encoder frozen
    {
        PCAdaModel m = small_model(opts.seed + 2);
        set_encoder_frozen(m.sam, true);
        const auto ok = [&](const Matrix& x) { return model_margin(m, x) > kMinMargin; };
        const Matrix prev_x = gaussian(6, 4, rng);
        const std::vector<Matrix> prev = batch_reps(forward_batch(m, prev_x), cfg.divergence);
        const Matrix cur = draw_fixture(6, 4, 0.5, rng, ok);
        BandwidthMemo memo;
        run("l_out_online", {[&](bool g) {
                                 if (!g) memo.replay();
                                 return online_outer_loss(m, cfg, prev, cur, g, &memo);
                             },
                             {{"phi", &m.phi}, {"encoder", &m.sam.encoder}, {"decoder", &m.sam.decoder}}});
    }
    return out;
}

} // namespace pcada
