#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "probelab/actstore.hpp"
#include "probelab/common.hpp"

namespace probelab::probes {

enum class ProbeKind { linear, mlp1, mlp2 };

std::string_view to_string(ProbeKind k);
std::optional<ProbeKind> parse_probe_kind(std::string_view s);

struct ProbeConfig {
    ProbeKind kind = ProbeKind::linear;
    std::size_t hidden_width = 100;  // used by mlp kinds only
    double l2_strength = 1e-3;
    std::size_t max_iterations = 500;
    double convergence_tol = 1e-6;
    bool standardize = true;

    /// Defaults per kind: MLP probes carry a stronger weight decay
    /// (3e-2) since at 1e-3 they memorize desk-scale training sets.
    static ProbeConfig defaults(ProbeKind kind);

    /// Throws ConfigError when the invariants do not hold.
    void validate() const;
};

/// Per-dimension training statistics. Zero-variance dimensions are dropped.
struct Standardizer {
    std::vector<Eigen::Index> kept;
    std::vector<Eigen::Index> dropped;
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd scale;

    static Standardizer fit(const Eigen::MatrixXd& X, bool standardize);
    Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
};

struct ProbeModel {
    ProbeKind kind = ProbeKind::linear;
    Standardizer standardizer;
    // Layer k maps width_k -> width_{k+1}; weights[k] is (out x in).
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    bool degenerate = false;
    int constant_class = 0;  // prediction of a degenerate model
    std::size_t iterations = 0;
    bool converged = false;
    double grad_norm = 0.0;
    std::vector<double> loss_history;

    /// Logit of P(label = acceptable) per row.
    Eigen::VectorXd logits(const Eigen::MatrixXd& X) const;
    Eigen::VectorXd predict_proba(const Eigen::MatrixXd& X) const;
    /// Threshold 0.5; a probability of exactly 0.5 predicts the positive class.
    std::vector<int> predict(const Eigen::MatrixXd& X) const;
};

/// Fits an L2-regularized cross-entropy probe. Labels are 0/1.
/// Throws DataError on non-finite features or mismatched sizes.
ProbeModel train_probe(const Eigen::MatrixXd& X, std::span<const int> labels,
                       const ProbeConfig& cfg, std::uint64_t seed);

/// Mean regularized training objective of a model; exposed for tests.
double training_objective(const ProbeModel& model, const Eigen::MatrixXd& X,
                          std::span<const int> labels, double l2_strength);

inline const std::vector<std::uint64_t> kDefaultSeeds{0, 1, 2, 3, 4};

struct CvOptions {
    std::size_t folds = 4;
    std::vector<std::uint64_t> seeds = kDefaultSeeds;
};

/// Fold index of an instance for one seed. Siblings share a fold.
std::size_t fold_of(std::string_view instance_id, std::uint64_t seed, std::size_t folds);

struct MdlResult {
    double codelength_bits = 0.0;
    double uniform_bits = 0.0;
    double compression = 0.0;
    std::vector<std::size_t> block_ends;   // cumulative instance counts
    std::vector<double> block_bits;
    std::vector<double> block_l2;          // l2 strength chosen for each coded block
};

struct ProbeStats {
    std::size_t layer = 0;
    Role role = Role::sample;
    std::vector<double> accuracies;       // one per (seed, held-out fold), seed-major
    double mean = 0.0;                    // macro average over entries
    double stddev = 0.0;                  // sample standard deviation
    double pooled_accuracy = 0.0;         // correct / evaluated over all entries
    std::optional<double> control_mean;
    std::optional<double> mdl_codelength_bits;
    std::optional<double> mdl_compression;
    std::vector<std::string> skipped;     // "seed S fold K: reason"
    std::size_t max_dropped_dims = 0;
    // Held-out prediction per instance, majority over seeds (ties -> 1).
    std::vector<int> predictions;

    std::optional<double> selectivity() const {
        if (!control_mean) return std::nullopt;
        return mean - *control_mean;
    }
};

ProbeStats cross_validate(const Eigen::MatrixXd& X, std::span<const int> labels,
                          std::span<const std::string> instance_ids, const ProbeConfig& cfg,
                          const CvOptions& opts = {});

ProbeStats cross_validate(const actstore::ActivationRun& run, Role role, std::size_t layer,
                          const ProbeConfig& cfg, const CvOptions& opts = {});

/// Seeded pseudo-random labels, balanced to within one instance and
/// independent of the true labels.
std::vector<int> control_labels(std::span<const std::string> instance_ids, std::uint64_t seed);

inline const std::vector<double> kDefaultMdlSchedule{0.001, 0.002, 0.004, 0.008, 0.016, 0.032,
                                                      0.0625, 0.125, 0.25, 0.5, 1.0};

/// The default schedule with leading fractions that would leave fewer than
/// two instances in the first block removed.
std::vector<double> default_mdl_schedule(std::size_t n);

/// Online (prequential) codelength of the labels given the features. The
/// probe for each block has its l2 strength chosen from cfg.l2 * 10^k,
/// k = 0..5, by cross-validated cross-entropy on the preceding blocks.
MdlResult mdl_codelength(const Eigen::MatrixXd& X, std::span<const int> labels,
                         const ProbeConfig& cfg, std::span<const double> schedule,
                         std::uint64_t seed);

MdlResult mdl_codelength(const actstore::ActivationRun& run, Role role, std::size_t layer,
                         const ProbeConfig& cfg, std::span<const double> schedule,
                         std::uint64_t seed);

nlohmann::ordered_json to_json(const ProbeStats& s);
ProbeStats stats_from_json(const nlohmann::json& j);

}  // namespace probelab::probes
