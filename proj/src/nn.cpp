#include "dgc/nn.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace dgc::nn {

// Mlp -------------------------------------------------------------------------

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
    for (int s : sizes_)
        if (s <= 0) throw std::invalid_argument("Mlp: layer sizes must be positive");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l)
        layers_.push_back({Matrix::Zero(sizes_[l + 1], sizes_[l]), Vector::Zero(sizes_[l + 1])});
}

std::vector<DenseLayer>& Mlp::mutable_layers() {
    ++revision_;
    return layers_;
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
    return n;
}

namespace {

Matrix orthogonal(Rng& rng, int rows, int cols, double gain) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const bool tall = rows >= cols;
    const int r = tall ? rows : cols;
    const int c = tall ? cols : rows;
    Matrix a(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) a(i, j) = normal(rng);
    Eigen::HouseholderQR<Matrix> qr(a);
    Matrix q = qr.householderQ() * Matrix::Identity(r, c);
    const Matrix upper = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
    for (int j = 0; j < c; ++j)
        if (upper(j, j) < 0.0) q.col(j) = -q.col(j);
    q *= gain;
    return tall ? q : Matrix(q.transpose());
}

}  // namespace

void Mlp::init_orthogonal(Rng& rng, double hidden_gain, double output_gain) {
    ++revision_;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const double gain = l + 1 == layers_.size() ? output_gain : hidden_gain;
        layers_[l].weight = orthogonal(rng, sizes_[l + 1], sizes_[l], gain);
        layers_[l].bias.setZero();
    }
}

Matrix Mlp::forward(const Matrix& input, Cache* cache) const {
    if (input.rows() != input_size())
        throw std::invalid_argument("Mlp::forward: expected " + std::to_string(input_size()) +
                                    " inputs, got " + std::to_string(input.rows()));
    if (cache) {
        cache->owner = this;
        cache->revision = revision_;
        cache->inputs.resize(layers_.size());
        cache->pre.resize(layers_.size());
    }
    Matrix x = input;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Matrix z = layers_[l].weight * x;
        z.colwise() += layers_[l].bias;
        if (cache) {
            cache->inputs[l] = std::move(x);
            cache->pre[l] = z;
        }
        if (l + 1 < layers_.size()) {
            x = z.cwiseMax(0.0);
        } else {
            x = std::move(z);
        }
    }
    return x;
}

std::vector<DenseLayer> Mlp::backward(const Cache& cache, const Matrix& grad_output) const {
    if (cache.owner != this || cache.revision != revision_ || cache.pre.size() != layers_.size())
        throw std::logic_error("Mlp::backward: stale or foreign cache");
    if (grad_output.rows() != output_size() || grad_output.cols() != cache.pre.back().cols())
        throw std::invalid_argument("Mlp::backward: output gradient shape mismatch");
    std::vector<DenseLayer> grads(layers_.size());
    Matrix delta = grad_output;
    for (std::size_t l = layers_.size(); l-- > 0;) {
        if (l + 1 < layers_.size())
            delta = delta.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
        grads[l].weight = delta * cache.inputs[l].transpose();
        grads[l].bias = delta.rowwise().sum();
        if (l > 0) delta = layers_[l].weight.transpose() * delta;
    }
    return grads;
}

void Mlp::write_flat(double* dst) const { nn::write_flat(layers_, dst); }

void Mlp::read_flat(const double* src) {
    ++revision_;
    for (auto& layer : layers_) {
        std::copy_n(src, layer.weight.size(), layer.weight.data());
        src += layer.weight.size();
        std::copy_n(src, layer.bias.size(), layer.bias.data());
        src += layer.bias.size();
    }
}

void write_flat(const std::vector<DenseLayer>& grads, double* dst) {
    for (const auto& layer : grads) {
        dst = std::copy_n(layer.weight.data(), layer.weight.size(), dst);
        dst = std::copy_n(layer.bias.data(), layer.bias.size(), dst);
    }
}

// Heads -----------------------------------------------------------------------

namespace {

Vector log_softmax(const Vector& logits) {
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    return logits.array() - lse;
}

constexpr double kLogSqrtTwoPi = 0.91893853320467274178;

}  // namespace

Vector softmax(const Vector& logits) { return log_softmax(logits).array().exp(); }

double categorical_log_prob(const Vector& logits, int action) {
    if (action < 0 || action >= logits.size()) throw std::invalid_argument("categorical: bad action index");
    return log_softmax(logits)(action);
}

double categorical_entropy(const Vector& logits) {
    const Vector logp = log_softmax(logits);
    return -(logp.array().exp() * logp.array()).sum();
}

Vector categorical_log_prob_grad(const Vector& logits, int action) {
    Vector g = -softmax(logits);
    g(action) += 1.0;
    return g;
}

Vector categorical_entropy_grad(const Vector& logits) {
    const Vector logp = log_softmax(logits);
    const Vector p = logp.array().exp();
    const double h = -(p.array() * logp.array()).sum();
    return -(p.array() * (logp.array() + h));
}

double gaussian_log_prob(double mean, double log_std, double x) {
    const double z = (x - mean) * std::exp(-log_std);
    return -0.5 * z * z - log_std - kLogSqrtTwoPi;
}

double gaussian_entropy(double log_std) { return 0.5 + kLogSqrtTwoPi + log_std; }

PolicySample sample_and_logprob(const CategoricalHead&, const Vector& logits, Rng& rng, bool deterministic) {
    const Vector logp = log_softmax(logits);
    int action = 0;
    if (deterministic) {
        logp.maxCoeff(&action);
    } else {
        double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        action = static_cast<int>(logp.size()) - 1;
        for (int k = 0; k < logp.size(); ++k) {
            u -= std::exp(logp(k));
            if (u < 0.0) {
                action = k;
                break;
            }
        }
    }
    PolicySample out;
    out.action = action;
    out.raw_action = action;
    out.log_prob = logp(action);
    out.entropy = -(logp.array().exp() * logp.array()).sum();
    return out;
}

PolicySample sample_and_logprob(const GaussianHead& head, const Vector& mean, Rng& rng, bool deterministic) {
    const double mu = mean(0);
    double raw = mu;
    if (!deterministic) raw = mu + std::exp(head.log_std) * std::normal_distribution<double>(0.0, 1.0)(rng);
    PolicySample out;
    out.raw_action = raw;
    out.action = std::clamp(raw, 0.0, 1.0);
    out.log_prob = gaussian_log_prob(mu, head.log_std, raw);
    out.entropy = gaussian_entropy(head.log_std);
    return out;
}

// ActorCritic -----------------------------------------------------------------

ActorCritic::ActorCritic(ActionKind kind, Mlp policy, Mlp value, double log_std)
    : kind_(kind), policy_(std::move(policy)), value_(std::move(value)), log_std_(log_std) {
    const int expected = kind_ == ActionKind::Categorical ? 2 : 1;
    if (policy_.output_size() != expected) throw std::invalid_argument("ActorCritic: policy head width mismatch");
    if (value_.output_size() != 1) throw std::invalid_argument("ActorCritic: value head must be scalar");
    if (policy_.input_size() != value_.input_size())
        throw std::invalid_argument("ActorCritic: policy and value inputs differ");
}

ActorCritic ActorCritic::create(ActionKind kind, int obs_dim, const std::vector<int>& hidden, Rng& rng,
                                double log_std_init, double mean_init) {
    std::vector<int> policy_sizes{obs_dim};
    policy_sizes.insert(policy_sizes.end(), hidden.begin(), hidden.end());
    std::vector<int> value_sizes = policy_sizes;
    policy_sizes.push_back(kind == ActionKind::Categorical ? 2 : 1);
    value_sizes.push_back(1);
    Mlp policy(policy_sizes);
    Mlp value(value_sizes);
    policy.init_orthogonal(rng, std::sqrt(2.0), 0.01);
    value.init_orthogonal(rng, std::sqrt(2.0), 1.0);
    if (kind == ActionKind::Gaussian) policy.mutable_layers().back().bias.setConstant(mean_init);
    return ActorCritic(kind, std::move(policy), std::move(value),
                       kind == ActionKind::Gaussian ? log_std_init : 0.0);
}

ActorCritic::Step ActorCritic::act(const Vector& obs, Rng& rng, bool deterministic) const {
    const Vector out = policy_.forward(obs);
    const PolicySample s = kind_ == ActionKind::Categorical
                               ? sample_and_logprob(CategoricalHead{}, out, rng, deterministic)
                               : sample_and_logprob(GaussianHead{log_std_}, out, rng, deterministic);
    Step step;
    step.action = s.action;
    step.raw_action = s.raw_action;
    step.log_prob = s.log_prob;
    step.entropy = s.entropy;
    step.value = value(obs);
    return step;
}

double ActorCritic::value(const Vector& obs) const { return value_.forward(obs)(0, 0); }

ActorCritic::BatchEval ActorCritic::evaluate(const Matrix& obs, const Vector& raw_actions) const {
    const Eigen::Index batch = obs.cols();
    if (raw_actions.size() != batch) throw std::invalid_argument("ActorCritic::evaluate: batch size mismatch");
    BatchEval ev;
    ev.head_out = policy_.forward(obs, &ev.policy_cache);
    ev.value = value_.forward(obs, &ev.value_cache).row(0).transpose();
    ev.log_prob.resize(batch);
    ev.entropy.resize(batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
        if (kind_ == ActionKind::Categorical) {
            const Vector logits = ev.head_out.col(b);
            ev.log_prob(b) = categorical_log_prob(logits, static_cast<int>(raw_actions(b)));
            ev.entropy(b) = categorical_entropy(logits);
        } else {
            ev.log_prob(b) = gaussian_log_prob(ev.head_out(0, b), log_std_, raw_actions(b));
            ev.entropy(b) = gaussian_entropy(log_std_);
        }
    }
    return ev;
}

Vector ActorCritic::gradient(const BatchEval& ev, const Vector& raw_actions, const Vector& d_log_prob,
                             const Vector& d_entropy, const Vector& d_value) const {
    const Eigen::Index batch = ev.head_out.cols();
    Matrix d_head(ev.head_out.rows(), batch);
    double d_log_std = 0.0;
    for (Eigen::Index b = 0; b < batch; ++b) {
        if (kind_ == ActionKind::Categorical) {
            const Vector logits = ev.head_out.col(b);
            d_head.col(b) = d_log_prob(b) * categorical_log_prob_grad(logits, static_cast<int>(raw_actions(b))) +
                            d_entropy(b) * categorical_entropy_grad(logits);
        } else {
            const double inv_var = std::exp(-2.0 * log_std_);
            const double diff = raw_actions(b) - ev.head_out(0, b);
            d_head(0, b) = d_log_prob(b) * diff * inv_var;
            d_log_std += d_log_prob(b) * (diff * diff * inv_var - 1.0) + d_entropy(b);
        }
    }
    const auto policy_grads = policy_.backward(ev.policy_cache, d_head);
    const auto value_grads = value_.backward(ev.value_cache, d_value.transpose());

    Vector flat(parameter_count());
    nn::write_flat(policy_grads, flat.data());
    nn::write_flat(value_grads, flat.data() + policy_.parameter_count());
    if (kind_ == ActionKind::Gaussian) flat(flat.size() - 1) = d_log_std;
    return flat;
}

std::size_t ActorCritic::parameter_count() const {
    return policy_.parameter_count() + value_.parameter_count() + (kind_ == ActionKind::Gaussian ? 1 : 0);
}

Vector ActorCritic::flat_parameters() const {
    Vector flat(parameter_count());
    policy_.write_flat(flat.data());
    value_.write_flat(flat.data() + policy_.parameter_count());
    if (kind_ == ActionKind::Gaussian) flat(flat.size() - 1) = log_std_;
    return flat;
}

void ActorCritic::set_flat_parameters(const Vector& params) {
    if (static_cast<std::size_t>(params.size()) != parameter_count())
        throw std::invalid_argument("ActorCritic::set_flat_parameters: size mismatch");
    policy_.read_flat(params.data());
    value_.read_flat(params.data() + policy_.parameter_count());
    if (kind_ == ActionKind::Gaussian) log_std_ = params(params.size() - 1);
}

// Adam ------------------------------------------------------------------------

AdamState::AdamState(std::size_t size, double lr)
    : m(Vector::Zero(static_cast<Eigen::Index>(size))),
      v(Vector::Zero(static_cast<Eigen::Index>(size))),
      learning_rate(lr) {}

void adam_update(Vector& params, const Vector& grads, AdamState& state) {
    if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw std::invalid_argument("adam_update: shape mismatch");
    ++state.step;
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    params.array() -= state.learning_rate * (state.m.array() / c1) /
                      ((state.v.array() / c2).sqrt() + state.epsilon);
}

// Checkpoints -----------------------------------------------------------------

namespace {

constexpr const char* kMagic = "dgc-checkpoint";
constexpr int kFormatVersion = 1;

std::string join_sizes(const std::vector<int>& sizes) {
    std::string out;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(sizes[i]);
    }
    return out;
}

std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

void write_block(std::ostream& out, const std::string& name, const Matrix& m) {
    out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c) out << ' ';
            out << format_double(m(r, c));
        }
        out << '\n';
    }
}

struct LineReader {
    std::istream& in;
    int line_no = 0;

    std::string next() {
        std::string line;
        if (!std::getline(in, line)) fail("unexpected end of file");
        ++line_no;
        return line;
    }
    [[noreturn]] void fail(const std::string& what) const {
        throw std::runtime_error("checkpoint line " + std::to_string(line_no) + ": " + what);
    }
};

std::vector<int> parse_sizes(const std::string& text, LineReader& reader) {
    std::vector<int> sizes;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        int v = 0;
        const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
        if (res.ec != std::errc() || res.ptr != item.data() + item.size() || v <= 0)
            reader.fail("bad layer size '" + item + "'");
        sizes.push_back(v);
    }
    if (sizes.size() < 2) reader.fail("need at least two layer sizes");
    return sizes;
}

Matrix read_block(LineReader& reader, const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    std::istringstream head(reader.next());
    std::string got;
    Eigen::Index r = 0;
    Eigen::Index c = 0;
    if (!(head >> got >> r >> c) || got != name || r != rows || c != cols)
        reader.fail("expected block '" + name + " " + std::to_string(rows) + " " + std::to_string(cols) + "'");
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const std::string line = reader.next();
        const char* p = line.data();
        const char* end = p + line.size();
        for (Eigen::Index j = 0; j < cols; ++j) {
            while (p < end && *p == ' ') ++p;
            double v = 0.0;
            const auto res = std::from_chars(p, end, v);
            if (res.ec != std::errc()) reader.fail("bad number in block '" + name + "'");
            m(i, j) = v;
            p = res.ptr;
        }
        while (p < end && *p == ' ') ++p;
        if (p != end) reader.fail("trailing data in block '" + name + "'");
    }
    return m;
}

void write_mlp(std::ostream& out, const std::string& prefix, const Mlp& net) {
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        const auto& layer = net.layers()[l];
        write_block(out, prefix + "." + std::to_string(l) + ".weight", layer.weight);
        write_block(out, prefix + "." + std::to_string(l) + ".bias", layer.bias);
    }
}

void read_mlp(LineReader& reader, const std::string& prefix, Mlp& net) {
    auto& layers = net.mutable_layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto& layer = layers[l];
        layer.weight = read_block(reader, prefix + "." + std::to_string(l) + ".weight", layer.weight.rows(),
                                  layer.weight.cols());
        layer.bias = read_block(reader, prefix + "." + std::to_string(l) + ".bias", layer.bias.size(), 1);
    }
}

}  // namespace

void save_checkpoint(std::ostream& out, const ActorCritic& model, const std::string& variant,
                     std::uint64_t config_hash) {
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash));
    out << kMagic << ' ' << kFormatVersion << " variant=" << variant
        << " head=" << (model.kind() == ActionKind::Categorical ? "categorical" : "gaussian")
        << " policy=" << join_sizes(model.policy().sizes()) << " value=" << join_sizes(model.value_net().sizes())
        << " config=" << hash << '\n';
    write_mlp(out, "policy", model.policy());
    write_mlp(out, "value", model.value_net());
    if (model.kind() == ActionKind::Gaussian) write_block(out, "log_std", Matrix::Constant(1, 1, model.log_std()));
    out << "end\n";
}

void save_checkpoint(const std::string& path, const ActorCritic& model, const std::string& variant,
                     std::uint64_t config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    save_checkpoint(out, model, variant, config_hash);
    if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(std::istream& in) {
    LineReader reader{in};
    std::istringstream header(reader.next());
    std::string magic;
    int version = 0;
    if (!(header >> magic >> version) || magic != kMagic) reader.fail("not a dgc checkpoint");
    if (version != kFormatVersion) reader.fail("unsupported format version " + std::to_string(version));

    Checkpoint ckpt;
    std::string head_kind;
    std::vector<int> policy_sizes;
    std::vector<int> value_sizes;
    bool have_hash = false;
    std::string field;
    while (header >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) reader.fail("malformed header field '" + field + "'");
        const std::string key = field.substr(0, eq);
        const std::string val = field.substr(eq + 1);
        if (key == "variant") {
            ckpt.variant = val;
        } else if (key == "head") {
            head_kind = val;
        } else if (key == "policy") {
            policy_sizes = parse_sizes(val, reader);
        } else if (key == "value") {
            value_sizes = parse_sizes(val, reader);
        } else if (key == "config") {
            const auto res = std::from_chars(val.data(), val.data() + val.size(), ckpt.config_hash, 16);
            if (res.ec != std::errc() || res.ptr != val.data() + val.size()) reader.fail("bad config hash");
            have_hash = true;
        } else {
            reader.fail("unknown header field '" + key + "'");
        }
    }
    if (ckpt.variant.empty() || policy_sizes.empty() || value_sizes.empty() || !have_hash)
        reader.fail("incomplete header");
    if (head_kind != "categorical" && head_kind != "gaussian") reader.fail("unknown head '" + head_kind + "'");
    const ActionKind kind = head_kind == "categorical" ? ActionKind::Categorical : ActionKind::Gaussian;

    Mlp policy(policy_sizes);
    Mlp value(value_sizes);
    read_mlp(reader, "policy", policy);
    read_mlp(reader, "value", value);
    double log_std = 0.0;
    if (kind == ActionKind::Gaussian) log_std = read_block(reader, "log_std", 1, 1)(0, 0);
    if (reader.next() != "end") reader.fail("expected 'end'");
    try {
        ckpt.model = ActorCritic(kind, std::move(policy), std::move(value), log_std);
    } catch (const std::invalid_argument& e) {
        reader.fail(e.what());
    }
    return ckpt;
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    return load_checkpoint(in);
}

}  // namespace dgc::nn
