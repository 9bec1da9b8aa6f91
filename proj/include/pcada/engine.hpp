#pragma once

// ---------------------------------------------------------------------------
// Meta-training and online meta-testing.
//
// Parameter partition:
//   inner steps  -> classifier (theta) and the prototype bank
//   outer steps  -> feature extractor (phi), decoder, and the encoder unless frozen
//
// Inner loss (source available):
//   CE(f(X^s), Y^s) + d(reps(X^s), reps(X^t)) + eta'(t) * L_in
// Outer loss (meta-training):
//   CE(f(X~^s), Y~^s) + 1/n sum_i d(reps(X~^s), reps(X~^{t_i}))
//                     + max_i d(reps(X~^{t_{i-1}}), reps(X~^{t_i}))
// Meta-testing has no source: the inner loss keeps eta'_f * L_in, the outer
// loss keeps d(previous-domain summary, current batch), and the encoder is
// frozen.
//
// reps(X) are the divergence levels of a batch: masked features and/or
// softmax predictions. Each batch is gated by the mask computed from itself.
// ---------------------------------------------------------------------------

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "pcada/data.hpp"
#include "pcada/divergence.hpp"
#include "pcada/metrics.hpp"
#include "pcada/nn.hpp"
#include "pcada/prototype.hpp"
#include "pcada/sam.hpp"

namespace pcada {

enum class Variant { source_only, jmmd_sequential, pcada_no_apm, pcada_no_sam, pcada_full };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view name);
const std::vector<Variant>& all_variants();

enum class RMode { online, prefix };

struct ModelConfig {
    std::size_t feature_hidden = 32;
    std::size_t feature_dim = 16;
    std::size_t classifier_hidden = 16;
    std::size_t code_dim = 0;  // 0 = feature_dim
    double sam_init_scale = 1.0;
    double decoder_bias = 0.0;
};

struct ApmConfig {
    double delta_d = 0.8;
    double sce_a = 0.2;
    double sce_b = 1.0;
    AnnealSchedule eta{20.0, 40.0, 0.1};
    AnnealSchedule eta_prime{20.0, 40.0, 0.1};
};

struct OptimConfig {
    SgdConfig pretrain{0.01, 0.9, 0.0};
    SgdConfig inner{0.01, 0.9, 0.0};
    SgdConfig outer{0.001, 0.9, 0.001};
};

struct DivergenceConfig {
    KernelConfig kernel;
    bool features = true;
    bool predictions = true;
};

struct TrainPlan {
    std::size_t max_outer = 100;
    std::size_t max_inner = 5;
    std::size_t pretrain_epochs = 50;
    std::size_t batch_size = 16;
    std::size_t trajectory_length = 10;
    std::size_t test_domains = 10;  // trailing domains of the dataset that form the online stream
    std::size_t test_inner = 5;
    RMode r_mode = RMode::online;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EngineConfig {
    ModelConfig model;
    ApmConfig apm;
    OptimConfig optim;
    DivergenceConfig divergence;
    TrainPlan plan;
    Variant variant = Variant::pcada_full;

    void validate() const;
};

struct StepCounters {
    std::uint64_t pretrain_steps = 0;
    std::uint64_t prototype_sweeps = 0;
    std::uint64_t prototype_updates = 0;  // accepted pseudo-labels
    std::uint64_t inner_steps = 0;
    std::uint64_t outer_steps = 0;

    nlohmann::json to_json() const;
};

struct MaskRecord {
    std::string phase;
    int timestamp = 0;
    std::size_t batch = 0;
    Vector mask;
};

struct PCAdaModel {
    DenseNet phi;
    DenseNet classifier;
    SamState sam;
    PrototypeBank bank;
    bool use_sam = true;
    bool use_apm = true;
    bool pretrained = false;
    StepCounters counters;
    // Masked-feature / prediction levels of the last processed query batch.
    std::optional<std::vector<Matrix>> retained;

    static PCAdaModel make(const ModelConfig& cfg, std::size_t input_dim, int classes, std::uint64_t seed);

    int classes() const { return static_cast<int>(classifier.output_dim()); }
    void zero_grad();
    nlohmann::json checksums() const;
};

// One batch through phi, the mask, and the classifier.
struct BatchForward {
    ForwardTrace phi;
    Matrix feats;
    std::optional<MaskTrace> mask_trace;
    ChannelMask mask;
    Matrix masked;
    ForwardTrace cls;
    Matrix logits;
    Matrix probs;
};

BatchForward forward_batch(const PCAdaModel& model, const Matrix& x);
std::vector<Matrix> batch_reps(const BatchForward& f, const DivergenceConfig& cfg);
ChannelMask batch_mask(const PCAdaModel& model, const Matrix& x);

// Replays the bandwidths chosen on the first evaluation so repeated loss
// evaluations (finite differences) see the same kernel.
class BandwidthMemo {
public:
    std::vector<double> resolve(std::span<const Matrix> a, std::span<const Matrix> b, const KernelConfig& cfg);
    void replay() {
        replaying_ = true;
        cursor_ = 0;
    }

private:
    std::vector<std::vector<double>> entries_;
    std::size_t cursor_ = 0;
    bool replaying_ = false;
};

// Loss evaluations; with_grad adds gradients into the buffers of the
// parameters the step is allowed to move.
double inner_loss(PCAdaModel& model, const EngineConfig& cfg, const LabeledBatch* source, const Matrix& target,
                  double t, bool with_grad, BandwidthMemo* memo = nullptr);
double outer_loss(PCAdaModel& model, const EngineConfig& cfg, const LabeledBatch* source_query,
                  std::span<const Matrix> query_trajectory, bool with_grad, BandwidthMemo* memo = nullptr);
double online_outer_loss(PCAdaModel& model, const EngineConfig& cfg, std::span<const Matrix> previous,
                         const Matrix& current, bool with_grad, BandwidthMemo* memo = nullptr);

void pretrain_source(PCAdaModel& model, const EngineConfig& cfg, const LabeledBatch& source);
void inner_step(PCAdaModel& model, const EngineConfig& cfg, const LabeledBatch* source_batch,
                const Matrix& target_support, double t);
void outer_step(PCAdaModel& model, const EngineConfig& cfg, const LabeledBatch* source_query,
                std::span<const Matrix> query_trajectory);
void online_outer_step(PCAdaModel& model, const EngineConfig& cfg, const Matrix& current);

struct MetaTrainResult {
    std::vector<MaskRecord> masks;
    nlohmann::json checksums = nlohmann::json::object();
};

// Pretraining, prototype initialisation, then max_outer outer iterations over
// sampled trajectories of `train_domains`.
MetaTrainResult meta_train(PCAdaModel& model, const EngineConfig& cfg, const LabeledBatch& source,
                           std::span<const DomainSnapshot> train_domains);

struct MetaTestResult {
    RMatrix r;
    std::vector<MaskRecord> masks;
    nlohmann::json checksums = nlohmann::json::object();
};

MetaTestResult meta_test(PCAdaModel& model, const EngineConfig& cfg, std::span<const DomainSnapshot> stream);

Fraction evaluate(const PCAdaModel& model, const LabeledBatch& eval, std::size_t batch_size);

// Fresh model with the variant's component switches set.
PCAdaModel make_model(const EngineConfig& cfg, std::size_t input_dim, int classes);

struct DomainSplit {
    std::span<const DomainSnapshot> train;
    std::span<const DomainSnapshot> test;
};

// Trailing plan.test_domains domains form the online stream.
DomainSplit split_domains(const Dataset& data, const EngineConfig& cfg);

struct RunResult {
    RunReport report;
    std::vector<MaskRecord> masks;
    PCAdaModel model;
};

// Splits `data` into the meta-training pool and the trailing plan.test_domains
// stream, then runs `cfg.variant` end to end.
RunResult run_baseline(const Dataset& data, const EngineConfig& cfg, const nlohmann::json& config_echo = {});

void write_masks_csv(const std::filesystem::path& path, std::span<const MaskRecord> masks);

} // namespace pcada
