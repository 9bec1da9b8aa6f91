#pragma once

// ---------------------------------------------------------------------------
// Conservative sparse attention over feature channels.
//
// For one batch of feature-extractor outputs X (B x D):
//
//   h_j  = A_e(x_j)                       encoder, per sample
//   s    = sum_j h_j                      batch sum (not mean)
//   e    = A_d(softmax(s))                decoder -> mask logits
//   a    = sigmoid(100 * e)               near-binary channel mask
//   X'   = a (.) X                        every row gated by the same mask
//
// The batch sum runs over rows in lexicographic order of h, so the embedding
// of a batch is bitwise independent of its row order. Because the sum is not
// normalised, the embedding depends on B; runs keep the batch size fixed.
// ---------------------------------------------------------------------------

#include <cstddef>
#include <cstdint>
#include <span>

#include "pcada/matrix.hpp"
#include "pcada/nn.hpp"
#include "pcada/random.hpp"

namespace pcada {

inline constexpr double kMaskSharpness = 100.0;

struct SamInit {
    double weight_scale = 1.0;
    double decoder_bias = 0.0;
};

struct SamState {
    DenseNet encoder;  // A_e: D -> E, identity activation
    DenseNet decoder;  // A_d: E -> D, identity activation

    static SamState make(std::size_t feature_dim, std::size_t code_dim, Rng& rng, SamInit init = {});

    bool encoder_frozen() const { return encoder.frozen(); }
    std::size_t feature_dim() const { return encoder.input_dim(); }
    void zero_grad();
};

struct DomainEmbedding {
    Vector e;
    std::uint64_t batch_fingerprint = 0;  // row-order independent
};

struct ChannelMask {
    Vector a;

    static ChannelMask ones(std::size_t dim) { return {Vector(dim, 1.0)}; }
};

struct MaskTrace {
    ForwardTrace encoder;
    Matrix pooled;  // 1 x E
    Matrix code;    // softmax(pooled)
    ForwardTrace decoder;
    DomainEmbedding embedding;
    ChannelMask mask;
};

MaskTrace sam_forward(const SamState& sam, const Matrix& feats);
DomainEmbedding domain_embedding(const SamState& sam, const Matrix& feats);
ChannelMask build_mask(const DomainEmbedding& e);

Matrix masked_features(const Matrix& phi_out, const ChannelMask& mask);

struct MaskedGrad {
    Matrix grad_features;  // dL/dX through the direct product only
    Vector grad_mask;      // dL/da
};
MaskedGrad masked_features_backward(const Matrix& phi_out, const ChannelMask& mask, const Matrix& grad_out);

// Pushes dL/da through sigmoid, decoder, softmax and encoder. Parameter
// gradients go to the SAM buffers (not to a frozen encoder); the return value
// is dL/dX along the encoder path (B x D).
Matrix sam_backward(SamState& sam, const MaskTrace& trace, std::span<const double> grad_mask);

// Freezing discards the encoder's gradient buffers and makes sgd_step a no-op
// for it; gradients still pass through the encoder to its input.
void set_encoder_frozen(SamState& sam, bool frozen);

} // namespace pcada
