#include "pcada/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pcada/errors.hpp"
#include "pcada/kernels.hpp"

namespace pcada {

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::softmax: return "softmax";
    }
    return "identity";
}

Activation activation_from_string(std::string_view name) {
    if (name == "identity") return Activation::identity;
    if (name == "relu") return Activation::relu;
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "softmax") return Activation::softmax;
    throw ParseError("unknown activation '" + std::string(name) + "'");
}

void SgdConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("sgd: learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("sgd: momentum must be in [0,1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("sgd: weight_decay must be >= 0");
}

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& l = layers_[i];
        if (l.bias.size() != l.out_dim())
            throw ShapeError("DenseNet: layer " + std::to_string(i) + " bias length mismatch");
        if (i > 0 && layers_[i - 1].out_dim() != l.in_dim())
            throw ShapeError("DenseNet: layer " + std::to_string(i) + " input dim does not chain");
        if (l.grad_weight.rows() != l.in_dim() || l.grad_weight.cols() != l.out_dim())
            l.grad_weight = Matrix(l.in_dim(), l.out_dim());
        if (l.momentum_weight.rows() != l.in_dim() || l.momentum_weight.cols() != l.out_dim())
            l.momentum_weight = Matrix(l.in_dim(), l.out_dim());
        if (l.grad_bias.size() != l.out_dim()) l.grad_bias.assign(l.out_dim(), 0.0);
        if (l.momentum_bias.size() != l.out_dim()) l.momentum_bias.assign(l.out_dim(), 0.0);
    }
}

DenseNet DenseNet::make(std::span<const std::size_t> dims, std::span<const Activation> activations,
                        Rng& rng, InitOptions init) {
    if (dims.size() < 2 || activations.size() + 1 != dims.size())
        throw ConfigError("DenseNet::make: need dims.size() == activations.size() + 1 >= 2");
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        if (dims[i] == 0 || dims[i + 1] == 0) throw ConfigError("DenseNet::make: zero-width layer");
        DenseLayer l;
        l.activation = activations[i];
        const double gain = activations[i] == Activation::relu ? std::sqrt(2.0) : 1.0;
        std::normal_distribution<double> dist(
            0.0, init.weight_scale * gain / std::sqrt(static_cast<double>(dims[i])));
        l.weight = Matrix(dims[i], dims[i + 1]);
        for (double& w : l.weight.values()) w = dist(rng);
        l.bias.assign(dims[i + 1], init.bias);
        layers.push_back(std::move(l));
    }
    return DenseNet(std::move(layers));
}

std::size_t DenseNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
std::size_t DenseNet::output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

std::size_t DenseNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
}

namespace {

void apply_activation(Matrix& z, Activation act) {
    switch (act) {
        case Activation::identity: break;
        case Activation::relu:
            for (double& v : z.values()) v = v > 0.0 ? v : 0.0;
            break;
        case Activation::sigmoid:
            for (double& v : z.values()) v = 1.0 / (1.0 + std::exp(-v));
            break;
        case Activation::softmax: z = softmax_rows(z); break;
    }
}

Matrix activation_backward(const Matrix& out, const Matrix& g, Activation act) {
    switch (act) {
        case Activation::identity: return g;
        case Activation::relu: {
            Matrix r = g;
            for (std::size_t i = 0; i < r.size(); ++i)
                if (!(out.data()[i] > 0.0)) r.data()[i] = 0.0;
            return r;
        }
        case Activation::sigmoid: {
            Matrix r = g;
            for (std::size_t i = 0; i < r.size(); ++i) {
                const double s = out.data()[i];
                r.data()[i] *= s * (1.0 - s);
            }
            return r;
        }
        case Activation::softmax: return softmax_backward(out, g);
    }
    return g;
}

} // namespace

Matrix DenseNet::forward(const Matrix& batch, ForwardTrace* trace) const {
    if (layers_.empty()) throw StateError("DenseNet::forward: empty network");
    if (batch.cols() != input_dim())
        throw ShapeError("DenseNet::forward: batch has " + std::to_string(batch.cols()) +
                         " columns, network expects " + std::to_string(input_dim()));
    if (trace) {
        trace->inputs.clear();
        trace->outputs.clear();
    }
    Matrix x = batch;
    for (const auto& l : layers_) {
        Matrix z = kernels::matmul(x, l.weight);
        for (std::size_t r = 0; r < z.rows(); ++r) {
            auto row = z.row(r);
            for (std::size_t c = 0; c < z.cols(); ++c) row[c] += l.bias[c];
        }
        apply_activation(z, l.activation);
        if (trace) {
            trace->inputs.push_back(std::move(x));
            trace->outputs.push_back(z);
        }
        x = std::move(z);
    }
    if (!x.all_finite()) throw NumericError("DenseNet::forward: non-finite activation");
    return x;
}

Matrix DenseNet::forward(const Matrix& batch) {
    ForwardTrace t;
    Matrix out = forward(batch, &t);
    cached_ = std::move(t);
    return out;
}

Matrix DenseNet::backward(const ForwardTrace& trace, const Matrix& upstream, bool accumulate_params) {
    if (trace.outputs.size() != layers_.size() || trace.inputs.size() != layers_.size())
        throw StateError("DenseNet::backward: trace does not belong to this network");
    const Matrix& out = trace.output();
    if (upstream.rows() != out.rows() || upstream.cols() != out.cols())
        throw ShapeError("DenseNet::backward: upstream gradient shape mismatch");
    const bool accumulate = accumulate_params && !frozen_;
    Matrix g = upstream;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        auto& l = layers_[li];
        Matrix gz = activation_backward(trace.outputs[li], g, l.activation);
        if (accumulate) {
            l.grad_weight += kernels::matmul_tn(trace.inputs[li], gz);
            for (std::size_t r = 0; r < gz.rows(); ++r)
                for (std::size_t c = 0; c < gz.cols(); ++c) l.grad_bias[c] += gz(r, c);
        }
        g = kernels::matmul_nt(gz, l.weight);
    }
    return g;
}

Matrix DenseNet::backward(const Matrix& upstream) {
    if (!cached_) throw StateError("DenseNet::backward: no forward pass cached");
    return backward(*cached_, upstream);
}

void DenseNet::zero_grad() {
    for (auto& l : layers_) {
        l.grad_weight.fill(0.0);
        std::fill(l.grad_bias.begin(), l.grad_bias.end(), 0.0);
    }
}

void DenseNet::set_frozen(bool frozen) {
    frozen_ = frozen;
    if (frozen_) zero_grad();
}

std::vector<ParamView> DenseNet::parameters() {
    std::vector<ParamView> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& l = layers_[i];
        const std::string p = "layer" + std::to_string(i);
        out.push_back({p + ".weight", l.weight.values(), l.grad_weight.values(), l.momentum_weight.values()});
        out.push_back({p + ".bias", l.bias, l.grad_bias, l.momentum_bias});
    }
    return out;
}

std::uint64_t DenseNet::checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& l : layers_) {
        h = fnv1a(l.weight.values(), h);
        h = fnv1a(l.bias, h);
    }
    return h;
}

double DenseNet::grad_norm_sq() const {
    double s = 0.0;
    for (const auto& l : layers_) {
        for (double g : l.grad_weight.values()) s += g * g;
        for (double g : l.grad_bias) s += g * g;
    }
    return s;
}

void sgd_step(DenseNet& net, const SgdConfig& cfg) {
    if (net.frozen()) return;
    for (auto& p : net.parameters()) {
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            double& v = p.momentum[i];
            v = cfg.momentum * v + p.grad[i] + cfg.weight_decay * p.value[i];
            p.value[i] -= cfg.learning_rate * v;
        }
    }
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto in = logits.row(r);
        auto out = p.row(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            out[c] = std::exp(in[c] - mx);
            sum += out[c];
        }
        for (double& v : out) v /= sum;
    }
    return p;
}

Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
    if (probs.rows() != grad_probs.rows() || probs.cols() != grad_probs.cols())
        throw ShapeError("softmax_backward: shape mismatch");
    Matrix out(probs.rows(), probs.cols());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        auto p = probs.row(r);
        auto g = grad_probs.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < p.size(); ++c) dot += g[c] * p[c];
        auto o = out.row(r);
        for (std::size_t c = 0; c < p.size(); ++c) o[c] = p[c] * (g[c] - dot);
    }
    return out;
}

LossAndGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
    if (labels.size() != logits.rows())
        throw ShapeError("softmax_cross_entropy: label count does not match batch rows");
    if (logits.rows() == 0) throw InputError("softmax_cross_entropy: empty batch");
    const auto k = static_cast<int>(logits.cols());
    const double inv_b = 1.0 / static_cast<double>(logits.rows());
    LossAndGrad out{0.0, Matrix(logits.rows(), logits.cols())};
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const int y = labels[r];
        if (y < 0 || y >= k)
            throw InputError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," +
                             std::to_string(k) + ")");
        auto z = logits.row(r);
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - mx);
        const double log_sum = std::log(sum);
        out.loss += -(z[static_cast<std::size_t>(y)] - mx - log_sum);
        auto g = out.grad.row(r);
        for (std::size_t c = 0; c < z.size(); ++c) {
            const double p = std::exp(z[c] - mx - log_sum);
            g[c] = (p - (static_cast<int>(c) == y ? 1.0 : 0.0)) * inv_b;
        }
    }
    out.loss *= inv_b;
    return out;
}

std::vector<int> argmax_rows(const Matrix& m) {
    std::vector<int> out(m.rows(), 0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        std::size_t best = 0;
        for (std::size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[best]) best = c;
        out[r] = static_cast<int>(best);
    }
    return out;
}

GradCheckResult grad_check(const LossFn& loss, std::span<const NamedNet> nets, double h) {
    if (!(h > 0.0)) throw ConfigError("grad_check: step must be positive");
    for (const auto& n : nets) n.net->zero_grad();
    const double base = loss(true);
    if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss");

    GradCheckResult result;
    for (const auto& n : nets) {
        if (n.net->frozen()) continue;
        for (auto& p : n.net->parameters()) {
            const std::vector<double> analytic(p.grad.begin(), p.grad.end());
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const double saved = p.value[i];
                p.value[i] = saved + h;
                const double up = loss(false);
                p.value[i] = saved - h;
                const double down = loss(false);
                p.value[i] = saved;
                if (!std::isfinite(up) || !std::isfinite(down))
                    throw NumericError("grad_check: non-finite loss at " + n.name + "." + p.name);
                const double numeric = (up - down) / (2.0 * h);
                const double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
                const double rel = std::abs(analytic[i] - numeric) / denom;
                ++result.checked;
                if (rel > result.max_rel_error) {
                    result.max_rel_error = rel;
                    result.worst_parameter = n.name + "." + p.name + "[" + std::to_string(i) + "]";
                }
            }
        }
    }
    return result;
}

GradCheckResult grad_check(const LossFn& loss, DenseNet& net, double h) {
    const NamedNet n{"net", &net};
    return grad_check(loss, std::span<const NamedNet>(&n, 1), h);
}

} // namespace pcada
