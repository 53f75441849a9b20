#include "probelab/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "probelab/optimize.hpp"

namespace probelab::probes {

namespace {

constexpr double kLn2 = 0.69314718055994530942;

// log(1 + exp(z)) without overflow.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

std::vector<Eigen::Index> layer_widths(ProbeKind kind, Eigen::Index in, std::size_t hidden) {
    const auto h = static_cast<Eigen::Index>(hidden);
    switch (kind) {
        case ProbeKind::linear: return {in, 1};
        case ProbeKind::mlp1: return {in, h, 1};
        case ProbeKind::mlp2: return {in, h, h, 1};
    }
    return {in, 1};
}

Eigen::Index parameter_count(const std::vector<Eigen::Index>& widths) {
    Eigen::Index n = 0;
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) n += widths[k + 1] * widths[k] + widths[k + 1];
    return n;
}

// Views into a flat parameter vector: for each layer, W (out x in) then b.
struct ParamViews {
    std::vector<Eigen::Map<Eigen::MatrixXd>> W;
    std::vector<Eigen::Map<Eigen::VectorXd>> b;

    ParamViews(Eigen::VectorXd& flat, const std::vector<Eigen::Index>& widths) {
        Eigen::Index off = 0;
        for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
            const Eigen::Index out = widths[k + 1], in = widths[k];
            W.emplace_back(flat.data() + off, out, in);
            off += out * in;
            b.emplace_back(flat.data() + off, out);
            off += out;
        }
    }
};

struct ConstParamViews {
    std::vector<Eigen::Map<const Eigen::MatrixXd>> W;
    std::vector<Eigen::Map<const Eigen::VectorXd>> b;

    ConstParamViews(const Eigen::VectorXd& flat, const std::vector<Eigen::Index>& widths) {
        Eigen::Index off = 0;
        for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
            const Eigen::Index out = widths[k + 1], in = widths[k];
            W.emplace_back(flat.data() + off, out, in);
            off += out * in;
            b.emplace_back(flat.data() + off, out);
            off += out;
        }
    }
};

// Mean cross-entropy plus (l2/2)*sum of squared weights (biases unpenalized).
class ProbeObjective {
public:
    ProbeObjective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                   std::vector<Eigen::Index> widths, double l2)
        : X_(X), y_(y), widths_(std::move(widths)), l2_(l2) {}

    double operator()(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
        ConstParamViews p(theta, widths_);
        const std::size_t layers = p.W.size();
        const double n = static_cast<double>(X_.rows());

        std::vector<Eigen::MatrixXd> acts;  // hidden activations
        acts.reserve(layers);
        const Eigen::MatrixXd* in = &X_;
        for (std::size_t k = 0; k + 1 < layers; ++k) {
            Eigen::MatrixXd z = (*in) * p.W[k].transpose();
            z.rowwise() += p.b[k].transpose();
            acts.push_back(z.array().tanh().matrix());
            in = &acts.back();
        }
        Eigen::VectorXd z = (*in) * p.W.back().transpose().col(0);
        z.array() += p.b.back()(0);

        double loss = 0.0;
        Eigen::VectorXd r(z.size());
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            loss += softplus(z(i)) - y_(i) * z(i);
            r(i) = (sigmoid(z(i)) - y_(i)) / n;
        }
        loss /= n;
        double reg = 0.0;
        for (const auto& W : p.W) reg += W.squaredNorm();
        loss += 0.5 * l2_ * reg;

        grad.setZero(theta.size());
        ParamViews gp(grad, widths_);
        // Output layer.
        const Eigen::MatrixXd& last_in = layers > 1 ? acts.back() : X_;
        gp.W.back() = (r.transpose() * last_in) + l2_ * p.W.back();
        gp.b.back()(0) = r.sum();
        if (layers == 1) return loss;
        Eigen::MatrixXd delta = r * p.W.back();  // n x width of last hidden
        for (std::size_t k = layers - 1; k-- > 0;) {
            delta.array() *= 1.0 - acts[k].array().square();
            const Eigen::MatrixXd& prev = k > 0 ? acts[k - 1] : X_;
            gp.W[k] = delta.transpose() * prev + l2_ * p.W[k];
            gp.b[k] = delta.colwise().sum().transpose();
            if (k > 0) delta = delta * p.W[k];
        }
        return loss;
    }

private:
    const Eigen::MatrixXd& X_;
    const Eigen::VectorXd& y_;
    std::vector<Eigen::Index> widths_;
    double l2_;
};

void check_inputs(const Eigen::MatrixXd& X, std::span<const int> labels) {
    if (static_cast<std::size_t>(X.rows()) != labels.size())
        throw DataError("feature rows (" + std::to_string(X.rows()) + ") and labels (" +
                        std::to_string(labels.size()) + ") differ");
    if (!X.allFinite()) throw DataError("non-finite feature value");
    for (int y : labels) {
        if (y != 0 && y != 1) throw DataError("labels must be 0 or 1");
    }
}

Eigen::VectorXd flatten(const ProbeModel& m) {
    std::vector<Eigen::Index> widths;
    for (const auto& W : m.weights) widths.push_back(W.cols());
    widths.push_back(1);
    Eigen::VectorXd flat(parameter_count(widths));
    ParamViews v(flat, widths);
    for (std::size_t k = 0; k < m.weights.size(); ++k) {
        v.W[k] = m.weights[k];
        v.b[k] = m.biases[k];
    }
    return flat;
}

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& rows) {
    return X(rows, Eigen::all);
}

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string_view to_string(ProbeKind k) {
    switch (k) {
        case ProbeKind::linear: return "linear";
        case ProbeKind::mlp1: return "mlp1";
        case ProbeKind::mlp2: return "mlp2";
    }
    return "linear";
}

std::optional<ProbeKind> parse_probe_kind(std::string_view s) {
    for (ProbeKind k : {ProbeKind::linear, ProbeKind::mlp1, ProbeKind::mlp2}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

ProbeConfig ProbeConfig::defaults(ProbeKind kind) {
    ProbeConfig cfg;
    cfg.kind = kind;
    if (kind != ProbeKind::linear) cfg.l2_strength = 3e-2;
    return cfg;
}

void ProbeConfig::validate() const {
    if (kind != ProbeKind::linear && hidden_width != 100)
        throw ConfigError("hidden_width must be 100 for mlp probes");
    if (!(l2_strength >= 0.0)) throw ConfigError("l2_strength must be non-negative");
    if (!(convergence_tol > 0.0)) throw ConfigError("convergence_tol must be positive");
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& X, bool standardize) {
    Standardizer s;
    const Eigen::Index d = X.cols();
    if (!standardize) {
        for (Eigen::Index j = 0; j < d; ++j) s.kept.push_back(j);
        s.mean = Eigen::RowVectorXd::Zero(d);
        s.scale = Eigen::RowVectorXd::Ones(d);
        return s;
    }
    const Eigen::RowVectorXd mu = X.colwise().mean();
    const Eigen::RowVectorXd var =
        (X.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(X.rows());
    std::vector<double> means, scales;
    for (Eigen::Index j = 0; j < d; ++j) {
        const double sd = std::sqrt(var(j));
        if (sd > 1e-12 * std::max(1.0, std::abs(mu(j)))) {
            s.kept.push_back(j);
            means.push_back(mu(j));
            scales.push_back(sd);
        } else {
            s.dropped.push_back(j);
        }
    }
    s.mean = Eigen::Map<Eigen::RowVectorXd>(means.data(), static_cast<Eigen::Index>(means.size()));
    s.scale = Eigen::Map<Eigen::RowVectorXd>(scales.data(), static_cast<Eigen::Index>(scales.size()));
    return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& X) const {
    Eigen::MatrixXd out = X(Eigen::all, kept);
    out.rowwise() -= mean;
    out.array().rowwise() /= scale.array();
    return out;
}

Eigen::VectorXd ProbeModel::logits(const Eigen::MatrixXd& X) const {
    const Eigen::Index n = X.rows();
    if (degenerate) {
        // Constant predictor; Laplace-smoothed frequency stored in biases[0].
        return Eigen::VectorXd::Constant(n, biases.empty() ? 0.0 : biases[0](0));
    }
    Eigen::MatrixXd a = standardizer.apply(X);
    for (std::size_t k = 0; k + 1 < weights.size(); ++k) {
        Eigen::MatrixXd z = a * weights[k].transpose();
        z.rowwise() += biases[k].transpose();
        a = z.array().tanh().matrix();
    }
    Eigen::VectorXd z = a * weights.back().transpose().col(0);
    z.array() += biases.back()(0);
    return z;
}

Eigen::VectorXd ProbeModel::predict_proba(const Eigen::MatrixXd& X) const {
    Eigen::VectorXd z = logits(X);
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = sigmoid(z(i));
    return z;
}

std::vector<int> ProbeModel::predict(const Eigen::MatrixXd& X) const {
    const Eigen::VectorXd p = predict_proba(X);
    std::vector<int> out(static_cast<std::size_t>(p.size()));
    for (Eigen::Index i = 0; i < p.size(); ++i) out[static_cast<std::size_t>(i)] = p(i) >= 0.5 ? 1 : 0;
    return out;
}

ProbeModel train_probe(const Eigen::MatrixXd& X, std::span<const int> labels,
                       const ProbeConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    check_inputs(X, labels);
    if (labels.size() < 2) throw DataError("probe training needs at least two instances");

    ProbeModel model;
    model.kind = cfg.kind;
    const auto positives = std::count(labels.begin(), labels.end(), 1);
    const auto n = static_cast<long>(labels.size());
    if (positives == 0 || positives == n) {
        model.degenerate = true;
        model.constant_class = positives == n ? 1 : 0;
        const double p = (static_cast<double>(positives) + 1.0) / (static_cast<double>(n) + 2.0);
        model.biases.push_back(Eigen::VectorXd::Constant(1, std::log(p / (1.0 - p))));
        model.converged = true;
        return model;
    }

    model.standardizer = Standardizer::fit(X, cfg.standardize);
    const Eigen::MatrixXd Z = model.standardizer.apply(X);
    Eigen::VectorXd y(static_cast<Eigen::Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Eigen::Index>(i)) = labels[i];

    const auto widths = layer_widths(cfg.kind, Z.cols(), cfg.hidden_width);
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(parameter_count(widths));
    if (cfg.kind != ProbeKind::linear) {
        // Glorot-uniform weights; zero biases.
        std::mt19937_64 rng(mix_seed(seed, "probe-init"));
        ParamViews v(theta, widths);
        for (std::size_t k = 0; k < v.W.size(); ++k) {
            const double lim = std::sqrt(6.0 / static_cast<double>(widths[k] + widths[k + 1]));
            std::uniform_real_distribution<double> u(-lim, lim);
            for (Eigen::Index c = 0; c < v.W[k].cols(); ++c)
                for (Eigen::Index r = 0; r < v.W[k].rows(); ++r) v.W[k](r, c) = u(rng);
        }
    }

    ProbeObjective objective(Z, y, widths, cfg.l2_strength);
    optimize::LbfgsOptions opts;
    opts.max_iterations = cfg.max_iterations;
    opts.grad_tol = cfg.convergence_tol;
    auto res = optimize::minimize_lbfgs(
        [&](const Eigen::VectorXd& t, Eigen::VectorXd& g) { return objective(t, g); },
        std::move(theta), opts);

    ParamViews v(res.x, widths);
    for (std::size_t k = 0; k < v.W.size(); ++k) {
        model.weights.emplace_back(v.W[k]);
        model.biases.emplace_back(v.b[k]);
    }
    model.iterations = res.iterations;
    model.converged = res.converged;
    model.grad_norm = res.grad_norm;
    model.loss_history = std::move(res.loss_history);
    return model;
}

double training_objective(const ProbeModel& model, const Eigen::MatrixXd& X,
                          std::span<const int> labels, double l2_strength) {
    check_inputs(X, labels);
    if (model.degenerate) throw InvariantError("degenerate models have no training objective");
    const Eigen::MatrixXd Z = model.standardizer.apply(X);
    Eigen::VectorXd y(static_cast<Eigen::Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Eigen::Index>(i)) = labels[i];
    std::vector<Eigen::Index> widths;
    for (const auto& W : model.weights) widths.push_back(W.cols());
    widths.push_back(1);
    Eigen::VectorXd theta = flatten(model);
    Eigen::VectorXd grad(theta.size());
    return ProbeObjective(Z, y, widths, l2_strength)(theta, grad);
}

std::size_t fold_of(std::string_view instance_id, std::uint64_t seed, std::size_t folds) {
    return static_cast<std::size_t>(mix_seed(seed, sibling_key(instance_id)) % folds);
}

ProbeStats cross_validate(const Eigen::MatrixXd& X, std::span<const int> labels,
                          std::span<const std::string> instance_ids, const ProbeConfig& cfg,
                          const CvOptions& opts) {
    cfg.validate();
    check_inputs(X, labels);
    if (opts.folds < 2) throw ConfigError("cross-validation needs at least 2 folds (no held-out data)");
    if (opts.seeds.empty()) throw ConfigError("cross-validation needs at least one seed");
    if (instance_ids.size() != labels.size()) throw DataError("instance ids and labels differ in length");

    const std::size_t N = labels.size();
    ProbeStats st;
    std::vector<int> votes_pos(N, 0), votes_total(N, 0);
    std::size_t correct_total = 0, evaluated_total = 0;

    for (std::uint64_t seed : opts.seeds) {
        std::vector<std::size_t> fold(N);
        for (std::size_t i = 0; i < N; ++i) fold[i] = fold_of(instance_ids[i], seed, opts.folds);
        for (std::size_t k = 0; k < opts.folds; ++k) {
            std::vector<Eigen::Index> train, test;
            std::vector<int> ytrain, ytest;
            for (std::size_t i = 0; i < N; ++i) {
                if (fold[i] == k) {
                    test.push_back(static_cast<Eigen::Index>(i));
                    ytest.push_back(labels[i]);
                } else {
                    train.push_back(static_cast<Eigen::Index>(i));
                    ytrain.push_back(labels[i]);
                }
            }
            auto single_class = [](const std::vector<int>& v) {
                return std::all_of(v.begin(), v.end(), [&](int x) { return x == v.front(); });
            };
            const std::string where = "seed " + std::to_string(seed) + " fold " + std::to_string(k);
            if (test.empty()) {
                st.skipped.push_back(where + ": empty held-out fold");
                continue;
            }
            if (single_class(ytest)) {
                st.skipped.push_back(where + ": held-out fold has a single class");
                continue;
            }
            if (ytrain.size() < 2 || single_class(ytrain)) {
                st.skipped.push_back(where + ": training folds have a single class");
                continue;
            }
            const ProbeModel m = train_probe(select_rows(X, train), ytrain, cfg, seed);
            st.max_dropped_dims = std::max(st.max_dropped_dims, m.standardizer.dropped.size());
            const std::vector<int> pred = m.predict(select_rows(X, test));
            std::size_t correct = 0;
            for (std::size_t t = 0; t < test.size(); ++t) {
                const auto i = static_cast<std::size_t>(test[t]);
                correct += pred[t] == ytest[t];
                votes_pos[i] += pred[t];
                votes_total[i] += 1;
            }
            st.accuracies.push_back(static_cast<double>(correct) / static_cast<double>(test.size()));
            correct_total += correct;
            evaluated_total += test.size();
        }
    }
    if (st.accuracies.empty()) throw DataError("every cross-validation fold was skipped");
    st.mean = mean_of(st.accuracies);
    if (st.accuracies.size() > 1) {
        double ss = 0.0;
        for (double a : st.accuracies) ss += (a - st.mean) * (a - st.mean);
        st.stddev = std::sqrt(ss / static_cast<double>(st.accuracies.size() - 1));
    }
    st.pooled_accuracy = static_cast<double>(correct_total) / static_cast<double>(evaluated_total);
    st.predictions.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
        st.predictions[i] = votes_total[i] == 0 ? -1 : (2 * votes_pos[i] >= votes_total[i] ? 1 : 0);
    }
    return st;
}

ProbeStats cross_validate(const actstore::ActivationRun& run, Role role, std::size_t layer,
                          const ProbeConfig& cfg, const CvOptions& opts) {
    const Eigen::MatrixXd X = run.layer_features(role, layer);
    const std::vector<int> y = run.label_bits();
    ProbeStats st = cross_validate(X, y, run.manifest.instance_ids, cfg, opts);
    st.layer = layer;
    st.role = role;
    return st;
}

std::vector<int> control_labels(std::span<const std::string> instance_ids, std::uint64_t seed) {
    const std::size_t N = instance_ids.size();
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::uint64_t> key(N);
    for (std::size_t i = 0; i < N; ++i) key[i] = mix_seed(mix_seed(seed, "control"), instance_ids[i]);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return key[a] != key[b] ? key[a] < key[b] : instance_ids[a] < instance_ids[b];
    });
    std::vector<int> out(N, 0);
    for (std::size_t r = 0; r < N / 2; ++r) out[order[r]] = 1;
    return out;
}

std::vector<double> default_mdl_schedule(std::size_t n) {
    std::vector<double> s;
    for (double f : kDefaultMdlSchedule) {
        if (s.empty() && f < 1.0 && std::ceil(f * static_cast<double>(n) - 1e-9) < 2.0) continue;
        s.push_back(f);
    }
    return s;
}

namespace {

// Held-out cross-entropy in nats over `folds` interleaved folds of a prefix.
double prefix_cv_loss(const Eigen::MatrixXd& X, std::span<const int> y, const ProbeConfig& cfg,
                      std::uint64_t seed, std::size_t folds) {
    const std::size_t n = y.size();
    double loss = 0.0;
    for (std::size_t f = 0; f < folds; ++f) {
        std::vector<Eigen::Index> train, test;
        for (std::size_t i = 0; i < n; ++i) (i % folds == f ? test : train).push_back(static_cast<Eigen::Index>(i));
        std::vector<int> ytr;
        for (Eigen::Index i : train) ytr.push_back(y[static_cast<std::size_t>(i)]);
        const ProbeModel m = train_probe(select_rows(X, train), ytr, cfg, seed);
        const Eigen::VectorXd z = m.logits(select_rows(X, test));
        for (std::size_t t = 0; t < test.size(); ++t) {
            const double zi = z(static_cast<Eigen::Index>(t));
            loss += softplus(y[static_cast<std::size_t>(test[t])] == 1 ? -zi : zi);
        }
    }
    return loss;
}

// Ties go to the stronger penalty, as do prefixes too small to split into
// folds with two training instances each.
double select_l2(const Eigen::MatrixXd& X, std::span<const int> y, const ProbeConfig& cfg, std::uint64_t seed) {
    const double base = cfg.l2_strength > 0.0 ? cfg.l2_strength : 1e-3;
    double best_l2 = base * 1e5, best_loss = std::numeric_limits<double>::infinity();
    if (y.size() < 4) return best_l2;
    const std::size_t folds = std::min<std::size_t>(4, y.size() / 2);
    for (int k = 5; k >= 0; --k) {
        ProbeConfig c = cfg;
        c.l2_strength = k == 0 ? cfg.l2_strength : base * std::pow(10.0, k);
        const double loss = prefix_cv_loss(X, y, c, seed, folds);
        if (loss < best_loss) {
            best_loss = loss;
            best_l2 = c.l2_strength;
        }
    }
    return best_l2;
}

}  // namespace

MdlResult mdl_codelength(const Eigen::MatrixXd& X, std::span<const int> labels,
                         const ProbeConfig& cfg, std::span<const double> schedule,
                         std::uint64_t seed) {
    cfg.validate();
    check_inputs(X, labels);
    if (schedule.empty() || schedule.back() != 1.0)
        throw ConfigError("MDL schedule must end at 1.0");
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        if (!(schedule[i] > 0.0) || (i > 0 && !(schedule[i] > schedule[i - 1])))
            throw ConfigError("MDL schedule must be strictly increasing and positive");
    }
    const std::size_t N = labels.size();
    auto boundary = [&](double f) {
        return static_cast<std::size_t>(std::ceil(f * static_cast<double>(N) - 1e-9));
    };

    MdlResult res;
    const std::size_t first = boundary(schedule.front());
    if (first < 2)
        throw ConfigError("first MDL block holds " + std::to_string(first) +
                          " instances; at least 2 are required");
    res.block_ends.push_back(first);
    for (std::size_t i = 1; i < schedule.size(); ++i) {
        const std::size_t b = std::min(boundary(schedule[i]), N);
        if (b - res.block_ends.back() >= 2) res.block_ends.push_back(b);
    }
    if (res.block_ends.back() != N) {
        if (res.block_ends.size() > 1) res.block_ends.back() = N;
        else res.block_ends.push_back(N);
    }

    // Transmission order: a seeded permutation of the instances.
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::uint64_t> key(N);
    for (std::size_t i = 0; i < N; ++i) key[i] = mix_seed(seed, 0x6d646cULL, i);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return key[a] != key[b] ? key[a] < key[b] : a < b;
    });
    std::vector<Eigen::Index> rows(order.begin(), order.end());
    const Eigen::MatrixXd Xo = select_rows(X, rows);
    std::vector<int> yo(N);
    for (std::size_t i = 0; i < N; ++i) yo[i] = labels[order[i]];

    res.block_bits.push_back(static_cast<double>(first));
    res.block_l2.push_back(0.0);
    for (std::size_t k = 1; k < res.block_ends.size(); ++k) {
        const std::size_t lo = res.block_ends[k - 1], hi = res.block_ends[k];
        ProbeConfig block_cfg = cfg;
        block_cfg.l2_strength = select_l2(Xo.topRows(static_cast<Eigen::Index>(lo)),
                                          std::span<const int>(yo).first(lo), cfg, seed);
        res.block_l2.push_back(block_cfg.l2_strength);
        const ProbeModel m = train_probe(Xo.topRows(static_cast<Eigen::Index>(lo)),
                                         std::span<const int>(yo).first(lo), block_cfg, seed);
        const Eigen::VectorXd z =
            m.logits(Xo.middleRows(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo)));
        double bits = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            const double zi = z(static_cast<Eigen::Index>(i - lo));
            // -log2 p(y | x) for a Bernoulli with logit zi.
            bits += softplus(yo[i] == 1 ? -zi : zi) / kLn2;
        }
        res.block_bits.push_back(bits);
    }
    res.codelength_bits = std::accumulate(res.block_bits.begin(), res.block_bits.end(), 0.0);
    res.uniform_bits = static_cast<double>(N);
    res.compression = res.codelength_bits > 0.0 ? res.uniform_bits / res.codelength_bits : 0.0;
    return res;
}

MdlResult mdl_codelength(const actstore::ActivationRun& run, Role role, std::size_t layer,
                         const ProbeConfig& cfg, std::span<const double> schedule,
                         std::uint64_t seed) {
    return mdl_codelength(run.layer_features(role, layer), run.label_bits(), cfg, schedule, seed);
}

nlohmann::ordered_json to_json(const ProbeStats& s) {
    using oj = nlohmann::ordered_json;
    auto opt = [](const std::optional<double>& v) { return v ? oj(*v) : oj(nullptr); };
    oj j;
    j["layer"] = s.layer;
    j["role"] = probelab::to_string(s.role);
    j["accuracies"] = s.accuracies;
    j["mean"] = s.mean;
    j["stddev"] = s.stddev;
    j["pooled_accuracy"] = s.pooled_accuracy;
    j["control_mean"] = opt(s.control_mean);
    j["selectivity"] = opt(s.selectivity());
    j["mdl_codelength_bits"] = opt(s.mdl_codelength_bits);
    j["mdl_compression"] = opt(s.mdl_compression);
    j["skipped"] = s.skipped;
    j["max_dropped_dims"] = s.max_dropped_dims;
    j["predictions"] = s.predictions;
    return j;
}

ProbeStats stats_from_json(const nlohmann::json& j) {
    try {
        ProbeStats s;
        s.layer = j.at("layer").get<std::size_t>();
        auto role = parse_role(j.at("role").get<std::string>());
        if (!role) throw DataError("stats: bad role");
        s.role = *role;
        s.accuracies = j.at("accuracies").get<std::vector<double>>();
        s.mean = j.at("mean").get<double>();
        s.stddev = j.at("stddev").get<double>();
        s.pooled_accuracy = j.at("pooled_accuracy").get<double>();
        auto opt = [&](const char* k) -> std::optional<double> {
            const auto& v = j.at(k);
            return v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
        };
        s.control_mean = opt("control_mean");
        s.mdl_codelength_bits = opt("mdl_codelength_bits");
        s.mdl_compression = opt("mdl_compression");
        s.skipped = j.at("skipped").get<std::vector<std::string>>();
        s.max_dropped_dims = j.at("max_dropped_dims").get<std::size_t>();
        s.predictions = j.at("predictions").get<std::vector<int>>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed probe stats record: ") + e.what());
    }
}

}  // namespace probelab::probes
