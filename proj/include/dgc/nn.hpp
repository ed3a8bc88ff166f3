#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dgc/random.hpp"

namespace dgc::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;    // out
};

/// Fully connected network, ReLU on hidden layers, linear output.
/// Batches are column-major: one sample per column.
class Mlp {
public:
    struct Cache {
        const Mlp* owner = nullptr;
        std::uint64_t revision = 0;
        std::vector<Matrix> inputs;  // input to layer l
        std::vector<Matrix> pre;     // pre-activation of layer l
    };

    Mlp() = default;
    /// Zero-initialized network with the given layer widths (input first).
    explicit Mlp(std::vector<int> sizes);

    const std::vector<int>& sizes() const { return sizes_; }
    int input_size() const { return sizes_.front(); }
    int output_size() const { return sizes_.back(); }
    const std::vector<DenseLayer>& layers() const { return layers_; }
    /// Mutable access invalidates outstanding caches.
    std::vector<DenseLayer>& mutable_layers();
    std::size_t parameter_count() const;

    /// Orthogonal weights scaled by `hidden_gain` (hidden layers) or
    /// `output_gain` (last layer); zero biases.
    void init_orthogonal(Rng& rng, double hidden_gain, double output_gain);

    /// Throws std::invalid_argument on a row-count mismatch.
    Matrix forward(const Matrix& input, Cache* cache = nullptr) const;

    /// Gradients of sum_b <grad_output_b, output_b> with respect to every
    /// parameter, summed over the batch. Throws std::logic_error if `cache`
    /// does not belong to the current parameters of this network.
    std::vector<DenseLayer> backward(const Cache& cache, const Matrix& grad_output) const;

    /// Flat layout: per layer, weight (column-major) then bias.
    void write_flat(double* dst) const;
    void read_flat(const double* src);

private:
    std::vector<int> sizes_;
    std::vector<DenseLayer> layers_;
    std::uint64_t revision_ = 0;
};

/// Flattens gradients in the same order as Mlp::write_flat.
void write_flat(const std::vector<DenseLayer>& grads, double* dst);

// Policy heads --------------------------------------------------------------

struct CategoricalHead {};

/// Gaussian with a state-independent log standard deviation. Sampled actions
/// are clipped to [0, 1] only after the log-probability is evaluated.
struct GaussianHead {
    double log_std = 0.0;
};

struct PolicySample {
    double action = 0.0;      // what the environment receives
    double raw_action = 0.0;  // pre-clip sample, used for log-probabilities
    double log_prob = 0.0;
    double entropy = 0.0;
};

Vector softmax(const Vector& logits);
double categorical_log_prob(const Vector& logits, int action);
double categorical_entropy(const Vector& logits);
/// d log p(action) / d logits = onehot(action) - p
Vector categorical_log_prob_grad(const Vector& logits, int action);
/// dH / d logit_j = -p_j (log p_j + H)
Vector categorical_entropy_grad(const Vector& logits);

double gaussian_log_prob(double mean, double log_std, double x);
double gaussian_entropy(double log_std);

/// Deterministic mode returns the most probable action (argmax, ties to 0) or
/// the mean, and never touches `rng`.
PolicySample sample_and_logprob(const CategoricalHead& head, const Vector& logits, Rng& rng,
                                bool deterministic);
PolicySample sample_and_logprob(const GaussianHead& head, const Vector& mean, Rng& rng,
                                bool deterministic);

// Actor-critic ----------------------------------------------------------------

enum class ActionKind { Categorical, Gaussian };

class ActorCritic {
public:
    struct Step {
        double action = 0.0;
        double raw_action = 0.0;
        double log_prob = 0.0;
        double entropy = 0.0;
        double value = 0.0;
    };

    struct BatchEval {
        Matrix head_out;  // logits (2 x B) or means (1 x B)
        Vector log_prob;
        Vector entropy;
        Vector value;
        Mlp::Cache policy_cache;
        Mlp::Cache value_cache;
    };

    ActorCritic() = default;
    ActorCritic(ActionKind kind, Mlp policy, Mlp value, double log_std = 0.0);

    /// Separate policy and value trunks of widths `hidden`, orthogonal init
    /// with gain sqrt(2); policy output scaled by 0.01 and value output by 1.
    /// A Gaussian head starts with its mean bias at `mean_init`.
    static ActorCritic create(ActionKind kind, int obs_dim, const std::vector<int>& hidden, Rng& rng,
                              double log_std_init, double mean_init = 0.0);

    ActionKind kind() const { return kind_; }
    const Mlp& policy() const { return policy_; }
    const Mlp& value_net() const { return value_; }
    Mlp& mutable_policy() { return policy_; }
    Mlp& mutable_value_net() { return value_; }
    double log_std() const { return log_std_; }
    void set_log_std(double log_std) { log_std_ = log_std; }

    Step act(const Vector& obs, Rng& rng, bool deterministic) const;
    double value(const Vector& obs) const;

    /// Log-probabilities of `raw_actions` (action index for categorical),
    /// entropies and values for a batch of observations (one per column).
    BatchEval evaluate(const Matrix& obs, const Vector& raw_actions) const;

    /// Flat gradient of sum_b (d_log_prob_b log_prob_b + d_entropy_b entropy_b
    /// + d_value_b value_b) given the evaluation that produced them.
    Vector gradient(const BatchEval& eval, const Vector& raw_actions, const Vector& d_log_prob,
                    const Vector& d_entropy, const Vector& d_value) const;

    /// Flat layout: policy, value, then log_std (Gaussian only).
    std::size_t parameter_count() const;
    Vector flat_parameters() const;
    void set_flat_parameters(const Vector& params);

private:
    ActionKind kind_ = ActionKind::Categorical;
    Mlp policy_;
    Mlp value_;
    double log_std_ = 0.0;
};

// Optimizer -------------------------------------------------------------------

struct AdamState {
    Vector m;
    Vector v;
    std::int64_t step = 0;
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-5;

    AdamState() = default;
    AdamState(std::size_t size, double learning_rate);
};

/// One bias-corrected Adam step. Throws std::invalid_argument on shape mismatch.
void adam_update(Vector& params, const Vector& grads, AdamState& state);

// Checkpoints -----------------------------------------------------------------

struct Checkpoint {
    std::string variant;
    std::uint64_t config_hash = 0;
    ActorCritic model;
};

/// Text format, see docs/checkpoint-format.md.
void save_checkpoint(std::ostream& out, const ActorCritic& model, const std::string& variant,
                     std::uint64_t config_hash);
void save_checkpoint(const std::string& path, const ActorCritic& model, const std::string& variant,
                     std::uint64_t config_hash);
/// Throws std::runtime_error with the offending line number.
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dgc::nn
