#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dedtwin/grid.hpp"
#include "dedtwin/nn.hpp"
#include "dedtwin/ode.hpp"
#include "dedtwin/optim.hpp"
#include "dedtwin/trajectory.hpp"

namespace dedtwin {

/// Read-out points: a uniform sub-lattice of grid nodes, index round(i (n - 1) / (m - 1)) per axis.
struct PointSet {
    std::vector<std::int64_t> nodes;

    static PointSet sublattice(const StructuredGrid& grid, int mx = 17, int my = 6, int mz = 3);
    std::size_t size() const noexcept { return nodes.size(); }
    std::uint64_t hash() const;
};

/// Global standardisation of one field.
struct Normalizer {
    double mean = 0.0;
    double stddev = 1.0;

    /// Mean and standard deviation over every entry of every matrix.
    static Normalizer fit(const std::vector<const Eigen::MatrixXd*>& data);
    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const { return (x.array() - mean) / stddev; }
    Eigen::MatrixXd invert(const Eigen::MatrixXd& x) const { return (x.array() * stddev + mean).matrix(); }
};

enum class Integrator { rk4, dopri5 };

struct SurrogateConfig {
    int n_l = 4;
    std::vector<int> encoder_hidden{1024, 128};
    std::vector<int> node_hidden{16, 16};
    /// Inference must see the inputs and discretisation the dynamics were fitted under;
    /// mixing holds or integrators costs an order of magnitude in accuracy.
    InputHold train_hold = InputHold::linear;
    InputHold infer_hold = InputHold::linear;
    Integrator train_integrator = Integrator::rk4;
    Integrator infer_integrator = Integrator::rk4;
    int rk4_substeps = 1;
    double rtol = 1e-6;
    double atol = 1e-8;
};

/// Encoders phi_y (state) and psi_u (input), decoder, and latent dynamics f.
struct SurrogateModel {
    Mlp phi_y, psi_u, decoder, node;
    Normalizer y_norm, u_norm;
    int n_l = 0;
    double dt = 0.1;
    std::uint64_t point_hash = 0;
    SurrogateConfig cfg;

    static SurrogateModel create(int n_s, const SurrogateConfig& cfg, std::mt19937_64& rng);
    std::size_t n_s() const { return static_cast<std::size_t>(phi_y.input_size()); }

    Eigen::VectorXd encode_state(const Eigen::VectorXd& y0) const;
    /// Row-wise: n_t x n_s -> n_t x n_l.
    Eigen::MatrixXd encode_input(const Eigen::MatrixXd& u_series) const;
    /// Row-wise: n_t x n_l -> n_t x n_s, denormalised.
    Eigen::MatrixXd decode(const Eigen::MatrixXd& z_series) const;
    /// Latent trajectory from z0 and the encoded inputs.
    Eigen::MatrixXd integrate(const Eigen::VectorXd& z0, const Eigen::MatrixXd& v, Integrator integrator) const;
    /// Full prediction at every read-out time, t0 included.
    Eigen::MatrixXd predict(const Eigen::VectorXd& y0, const Eigen::MatrixXd& u_series) const;

    void check_points(std::uint64_t dataset_hash) const;
};

/// One trajectory pair: input u and output y, both n_t x n_s.
struct TrainingPair {
    Eigen::MatrixXd u;
    Eigen::MatrixXd y;
};

struct TrainConfig {
    int epochs = 12000;
    AdaBeliefConfig optimizer;
    double lr_final = 1e-5;       // cosine decay from optimizer.lr
    double clip_factor = 0.01;
    double clip_floor = 1e-3;
    double recon_weight = 1.0;
    std::uint64_t seed = 1234;
};

struct LossBreakdown {
    double total = 0.0;
    double prediction = 0.0;
    double reconstruction = 0.0;
};

struct TrainResult {
    SurrogateModel model;  // best-loss parameters
    std::vector<double> loss_history;
    int best_epoch = -1;
    double best_loss = 0.0;
};

using TrainObserver = std::function<void(int epoch, const LossBreakdown&)>;

/// Gradients of the joint prediction + reconstruction loss for the four networks.
struct ModelGradient {
    Mlp phi_y, psi_u, decoder, node;
};

/// Loss on normalised data and, when `grad` is given, its gradient (accumulated, scaled by `weight`).
LossBreakdown surrogate_loss(const SurrogateModel& model, const std::vector<TrainingPair>& normalized,
                             double recon_weight, ModelGradient* grad);

TrainResult train_surrogate(const std::vector<TrainingPair>& data, std::uint64_t point_hash, double dt,
                            const SurrogateConfig& cfg, const TrainConfig& tcfg, const TrainObserver& observer = {});

struct ChainPrediction {
    Eigen::MatrixXd temperature;
    Eigen::MatrixXd stress;
};

/// Q -> T with the thermal model, then T -> sigma_11 from a zero initial stress field.
ChainPrediction chain_predict(const SurrogateModel& model_t, const SurrogateModel& model_s,
                              const Eigen::MatrixXd& q_series, const Eigen::VectorXd& t0);

void save_bundle(const std::filesystem::path& path, const SurrogateModel& model);
SurrogateModel load_bundle(const std::filesystem::path& path);

/// Sampled single-component data as an n_t x n_s matrix.
Eigen::MatrixXd as_matrix(const FieldTrajectory& sampled);

}  // namespace dedtwin
