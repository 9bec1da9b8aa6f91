#include "pcada/sam.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "pcada/errors.hpp"

namespace pcada {

namespace {

bool row_less(std::span<const double> x, std::span<const double> y) {
    return std::lexicographical_compare(x.begin(), x.end(), y.begin(), y.end());
}

std::vector<std::size_t> sorted_row_order(const Matrix& m) {
    std::vector<std::size_t> idx(m.rows());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t i, std::size_t j) { return row_less(m.row(i), m.row(j)); });
    return idx;
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double ez = std::exp(z);
    return ez / (1.0 + ez);
}

} // namespace

SamState SamState::make(std::size_t feature_dim, std::size_t code_dim, Rng& rng, SamInit init) {
    if (feature_dim == 0 || code_dim == 0) throw ConfigError("SamState: zero dimension");
    const std::array<std::size_t, 2> enc_dims{feature_dim, code_dim};
    const std::array<std::size_t, 2> dec_dims{code_dim, feature_dim};
    const std::array<Activation, 1> id{Activation::identity};
    SamState s;
    s.encoder = DenseNet::make(enc_dims, id, rng, {init.weight_scale, 0.0});
    s.decoder = DenseNet::make(dec_dims, id, rng, {init.weight_scale, init.decoder_bias});
    return s;
}

void SamState::zero_grad() {
    encoder.zero_grad();
    decoder.zero_grad();
}

MaskTrace sam_forward(const SamState& sam, const Matrix& feats) {
    if (feats.rows() == 0) throw InputError("domain_embedding: empty batch");
    if (feats.cols() != sam.feature_dim())
        throw ShapeError("domain_embedding: feature dim " + std::to_string(feats.cols()) + " vs SAM dim " +
                         std::to_string(sam.feature_dim()));
    MaskTrace t;
    const Matrix h = sam.encoder.forward(feats, &t.encoder);
    t.pooled = Matrix(1, h.cols());
    for (std::size_t r : sorted_row_order(h)) {
        auto row = h.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) t.pooled(0, c) += row[c];
    }
    t.code = softmax_rows(t.pooled);
    const Matrix e = sam.decoder.forward(t.code, &t.decoder);
    t.embedding.e.assign(e.values().begin(), e.values().end());

    std::uint64_t fp = 1469598103934665603ULL;
    for (std::size_t r : sorted_row_order(feats)) fp = fnv1a(feats.row(r), fp);
    t.embedding.batch_fingerprint = fp;

    t.mask = build_mask(t.embedding);
    return t;
}

DomainEmbedding domain_embedding(const SamState& sam, const Matrix& feats) {
    return sam_forward(sam, feats).embedding;
}

ChannelMask build_mask(const DomainEmbedding& e) {
    ChannelMask m;
    m.a.reserve(e.e.size());
    for (double v : e.e) m.a.push_back(sigmoid(kMaskSharpness * v));
    return m;
}

Matrix masked_features(const Matrix& phi_out, const ChannelMask& mask) {
    if (phi_out.cols() != mask.a.size())
        throw ShapeError("masked_features: feature dim " + std::to_string(phi_out.cols()) + " vs mask dim " +
                         std::to_string(mask.a.size()));
    Matrix out = phi_out;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] *= mask.a[c];
    }
    return out;
}

MaskedGrad masked_features_backward(const Matrix& phi_out, const ChannelMask& mask, const Matrix& grad_out) {
    if (grad_out.rows() != phi_out.rows() || grad_out.cols() != phi_out.cols() || mask.a.size() != phi_out.cols())
        throw ShapeError("masked_features_backward: shape mismatch");
    MaskedGrad g{Matrix(phi_out.rows(), phi_out.cols()), Vector(mask.a.size(), 0.0)};
    for (std::size_t r = 0; r < phi_out.rows(); ++r) {
        for (std::size_t c = 0; c < phi_out.cols(); ++c) {
            g.grad_features(r, c) = grad_out(r, c) * mask.a[c];
            g.grad_mask[c] += grad_out(r, c) * phi_out(r, c);
        }
    }
    return g;
}

Matrix sam_backward(SamState& sam, const MaskTrace& trace, std::span<const double> grad_mask) {
    const auto& a = trace.mask.a;
    if (grad_mask.size() != a.size()) throw ShapeError("sam_backward: mask gradient length mismatch");
    Matrix de(1, a.size());
    for (std::size_t c = 0; c < a.size(); ++c) de(0, c) = grad_mask[c] * kMaskSharpness * a[c] * (1.0 - a[c]);
    const Matrix dcode = sam.decoder.backward(trace.decoder, de);
    const Matrix dpooled = softmax_backward(trace.code, dcode);
    const std::size_t batch = trace.encoder.inputs.front().rows();
    Matrix dh(batch, dpooled.cols());
    for (std::size_t r = 0; r < batch; ++r)
        std::copy(dpooled.row(0).begin(), dpooled.row(0).end(), dh.row(r).begin());
    return sam.encoder.backward(trace.encoder, dh);
}

void set_encoder_frozen(SamState& sam, bool frozen) { sam.encoder.set_frozen(frozen); }

} // namespace pcada
