#pragma once

// ---------------------------------------------------------------------------
// Minimal dense-network core with hand-written backward passes.
//
// Gradient buffers accumulate: backward() adds into them and only
// zero_grad() clears them, so several loss terms can be summed before a
// single sgd_step(). A net can be forwarded several times before the
// backward passes if each forward writes its own ForwardTrace.
//
// Momentum SGD, applied per parameter w with gradient g and velocity v:
//     v <- momentum * v + g + weight_decay * w
//     w <- w - learning_rate * v
// ---------------------------------------------------------------------------

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcada/matrix.hpp"
#include "pcada/random.hpp"

namespace pcada {

enum class Activation { identity, relu, sigmoid, softmax };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

struct SgdConfig {
    double learning_rate = 0.01;
    double momentum = 0.0;
    double weight_decay = 0.0;

    void validate() const;
};

struct DenseLayer {
    Matrix weight;  // in x out
    Vector bias;    // out
    Activation activation = Activation::identity;

    Matrix grad_weight;
    Vector grad_bias;
    Matrix momentum_weight;
    Vector momentum_bias;

    std::size_t in_dim() const { return weight.rows(); }
    std::size_t out_dim() const { return weight.cols(); }
};

// Per-layer inputs and post-activation outputs of one forward pass.
struct ForwardTrace {
    std::vector<Matrix> inputs;
    std::vector<Matrix> outputs;

    const Matrix& output() const { return outputs.back(); }
};

struct ParamView {
    std::string name;
    std::span<double> value;
    std::span<double> grad;
    std::span<double> momentum;
};

struct InitOptions {
    double weight_scale = 1.0;  // multiplies the fan-in scaled std
    double bias = 0.0;
};

class DenseNet {
public:
    DenseNet() = default;
    explicit DenseNet(std::vector<DenseLayer> layers);

    // dims = {in, h1, ..., out}; one activation per layer.
    static DenseNet make(std::span<const std::size_t> dims, std::span<const Activation> activations,
                         Rng& rng, InitOptions init = {});

    std::size_t input_dim() const;
    std::size_t output_dim() const;
    std::size_t num_layers() const { return layers_.size(); }
    std::size_t parameter_count() const;

    const std::vector<DenseLayer>& layers() const { return layers_; }
    DenseLayer& layer(std::size_t i) { return layers_.at(i); }
    const DenseLayer& layer(std::size_t i) const { return layers_.at(i); }

    // Stateless forward; fills `trace` when given.
    Matrix forward(const Matrix& batch, ForwardTrace* trace) const;
    // Forward that keeps its trace inside the net for the single-argument backward().
    Matrix forward(const Matrix& batch);
    Matrix predict(const Matrix& batch) const { return forward(batch, nullptr); }

    // Returns the gradient w.r.t. the net input. Parameter gradients are added
    // into the buffers unless `accumulate_params` is false or the net is frozen.
    Matrix backward(const ForwardTrace& trace, const Matrix& upstream, bool accumulate_params = true);
    Matrix backward(const Matrix& upstream);

    void zero_grad();
    void set_frozen(bool frozen);
    bool frozen() const { return frozen_; }

    std::vector<ParamView> parameters();
    std::uint64_t checksum() const;
    double grad_norm_sq() const;

private:
    std::vector<DenseLayer> layers_;
    std::optional<ForwardTrace> cached_;
    bool frozen_ = false;
};

void sgd_step(DenseNet& net, const SgdConfig& cfg);

// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);
// Given softmax outputs p and dL/dp, returns dL/dlogits = p * (g - <g, p>) per row.
Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs);

struct LossAndGrad {
    double loss = 0.0;
    Matrix grad;
};

// Mean over the batch of -log softmax(logits)[label]; grad = (softmax - onehot) / B.
LossAndGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

// Argmax per row, ties to the lowest index.
std::vector<int> argmax_rows(const Matrix& m);

struct NamedNet {
    std::string name;
    DenseNet* net;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t checked = 0;
};

// `loss(true)` must evaluate the loss and add its analytic gradient into the
// nets' buffers; `loss(false)` only evaluates. Frozen nets are skipped.
using LossFn = std::function<double(bool with_grad)>;

GradCheckResult grad_check(const LossFn& loss, std::span<const NamedNet> nets, double h = 1e-5);
GradCheckResult grad_check(const LossFn& loss, DenseNet& net, double h = 1e-5);

} // namespace pcada
