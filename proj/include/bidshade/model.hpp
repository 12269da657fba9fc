#pragma once
// Minimal differentiable modeling kernel: a DeepFM-shaped base model with
// per-field embeddings, first-order weights, FM pairwise interactions, numeric
// pseudo-embeddings, a small ReLU MLP, and one-or-more logit heads. Reverse
// mode is hand-rolled over a per-sample Tape; gradients are available both for
// parameters and for the numeric inputs (the bid path used by end-to-end
// shading training). All math in double; checkpoints store float32.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bidshade/common.hpp"
#include "bidshade/landscape.hpp"

namespace bidshade {

enum class NumericTransform { kIdentity, kLog1p, kLogit };

const char* transform_name(NumericTransform t);
NumericTransform transform_from_name(const std::string& name);

struct NumericSpec {
    std::string name;
    NumericTransform transform = NumericTransform::kIdentity;
    // Standardization applied after the transform; fit on training data.
    double mean = 0.0;
    double stdev = 1.0;
};

// Standardization stats (population mean/stdev after the transform) fitted on
// training values; the stdev is floored at 1e-6.
NumericSpec fit_numeric(const std::string& name, NumericTransform transform,
                        const std::vector<double>& values);

struct ModelConfig {
    std::vector<FieldDef> fields;       // categorical schema
    std::vector<NumericSpec> numerics;  // dense inputs, physical units
    int embed_dim = 8;
    std::vector<int> hidden = {64, 32, 16};
    int heads = 1;
    double out_bias_init = 0.0;  // e.g. logit of the positive base rate

    int n_fields() const { return static_cast<int>(fields.size()); }
    int n_numerics() const { return static_cast<int>(numerics.size()); }
    void validate() const;
};

// Per-field embedding matrices, shareable between models. Once frozen the
// bytes must never change.
struct EmbeddingTable {
    int dim = 0;
    std::vector<std::vector<double>> field;  // [field] -> vocab*dim, row-major
    bool frozen = false;

    static std::shared_ptr<EmbeddingTable> create(const std::vector<FieldDef>& fields, int dim,
                                                  std::uint64_t seed);
    std::uint64_t fingerprint() const;
};

struct TensorRef {
    std::string name;
    std::vector<double>* data = nullptr;
    std::vector<int> shape;
    bool trainable = true;
};

// Gradient accumulator keyed by tensor name (same shapes as the tensors).
struct GradBuffer {
    std::map<std::string, std::vector<double>> g;

    std::vector<double>& at(const std::string& name) { return g.at(name); }
    void init_like(const std::vector<TensorRef>& tensors);
    void zero();
};

// Forward cache for one sample; reusable across samples.
struct Tape {
    std::vector<int> cats;
    std::vector<double> nums_raw;   // physical inputs
    std::vector<double> nums_std;   // after transform + standardization
    std::vector<double> dstd_draw;  // d(standardized)/d(physical)
    std::vector<double> sumv;       // FM vector sum
    std::vector<double> z0;         // MLP input: all embeddings concatenated
    std::vector<std::vector<double>> acts;  // post-ReLU activations per layer
    double fm = 0.0;
    double lo = 0.0;
    std::vector<double> logits;  // one per head
    bool ready = false;
};

class BaseModel {
public:
    // Creates parameters; `shared` non-null reuses that embedding table
    // (typically frozen), otherwise the model owns a fresh one.
    BaseModel(ModelConfig cfg, std::shared_ptr<EmbeddingTable> shared, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ModelConfig& mutable_config() { return cfg_; }  // for fitting norm stats
    const std::shared_ptr<EmbeddingTable>& embedding() const { return embed_; }
    bool owns_embedding() const { return owns_embed_; }

    // cats: n_fields ids; nums: n_numerics physical values.
    void forward(const int* cats, const double* nums, Tape& tape) const;

    // dlogits: dL/dlogit per head. `grads` may be null (input-gradient-only
    // backward through a frozen model); `dnums` may be null. Embedding
    // gradients are skipped when the table is frozen.
    void backward(const Tape& tape, const double* dlogits, GradBuffer* grads,
                  double* dnums) const;

    // Single-head convenience.
    double logit1(const int* cats, const double* nums, Tape& tape) const;

    std::vector<TensorRef> tensors();
    std::vector<TensorRef> tensors() const;  // const view (trainability still reported)

    std::uint64_t parameter_fingerprint() const;

private:
    ModelConfig cfg_;
    std::shared_ptr<EmbeddingTable> embed_;
    bool owns_embed_ = false;

    std::vector<std::vector<double>> lin_;  // first-order per-category weights
    std::vector<double> lin_num_;           // first-order numeric weights
    std::vector<std::vector<double>> num_p_, num_q_;  // pseudo-embedding P·n + Q
    std::vector<std::vector<double>> w_, b_;          // hidden layers
    std::vector<double> out_w_, out_b_;               // heads x last_hidden

    int in_dim() const { return (cfg_.n_fields() + cfg_.n_numerics()) * cfg_.embed_dim; }
};

// Pairwise FM interaction: sum over unordered pairs of dot products.
double fm_interaction(const std::vector<std::vector<double>>& field_embeddings);

// ------------------------------------------------------------------ optimizer

struct AdamConfig {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    struct Slot {
        std::vector<double> m, v;
    };
    std::map<std::string, Slot> slots;
    std::int64_t t = 0;
};

// One update over every trainable tensor with an entry in `grads`. NaN/Inf
// gradients abort with a diagnostic naming the tensor.
void adam_step(std::vector<TensorRef> tensors, GradBuffer& grads, AdamState& state,
               const AdamConfig& cfg);

// ----------------------------------------------------------------- grad check

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst;  // "tensor[i]" or numeric-input label
};

// Central finite differences over every trainable parameter entry.
// loss_value re-evaluates the scalar loss; loss_grad fills analytic grads.
GradCheckResult grad_check(BaseModel& model,
                           const std::function<double()>& loss_value,
                           const std::function<void(GradBuffer&)>& loss_grad, double h);

double rel_err(double a, double b);

// ----------------------------------------------------------------- checkpoint

// Versioned JSON envelope; tensors as base64 little-endian float32.
// save -> load -> save is byte-identical. `extra_json` is a free-form JSON
// object carried verbatim (r_min, bid grids, ...); "{}" when unused.
void save_checkpoint(const BaseModel& model, const std::string& model_kind,
                     const std::string& extra_json, const std::string& path);

struct LoadedCheckpoint {
    std::unique_ptr<BaseModel> model;
    std::string model_kind;
    std::string extra_json;  // free-form extras (r_min, bid grids, ...)
};

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 std::shared_ptr<EmbeddingTable> shared = nullptr);

}  // namespace bidshade
