#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace dedtwin {

/// Contiguous parameter or gradient storage, viewed flat.
struct Span {
    double* data;
    Eigen::Index size;

    Eigen::Map<Eigen::VectorXd> vec() const { return {data, size}; }
};

/// ln(1 + e^a) without overflow.
inline double softplus(double a) { return a > 0.0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a)); }
inline double sigmoid(double a) {
    if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
    const double e = std::exp(a);
    return e / (1.0 + e);
}

/// Uniform double in [0, 1) from the top 53 bits; portable across standard libraries.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Dense feed-forward net: softplus on hidden layers, identity output.
/// Batched calls take one sample per column.
class Mlp {
public:
    struct Layer {
        Eigen::MatrixXd w;  // out x in
        Eigen::VectorXd b;
    };
    /// Pre-activations and activations saved by a batched forward pass.
    struct Tape {
        std::vector<Eigen::MatrixXd> input;  // input[l] feeds layer l
        std::vector<Eigen::MatrixXd> pre;    // affine output of hidden layers
    };

    Mlp() = default;
    /// All parameters zero.
    explicit Mlp(std::vector<int> sizes);
    /// Fan-in scaled uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
    static Mlp initialized(std::vector<int> sizes, std::mt19937_64& rng, bool zero_output_layer = false);

    const std::vector<int>& sizes() const noexcept { return sizes_; }
    int input_size() const { return sizes_.front(); }
    int output_size() const { return sizes_.back(); }
    std::size_t layer_count() const noexcept { return layers_.size(); }
    Layer& layer(std::size_t l) { return layers_[l]; }
    const Layer& layer(std::size_t l) const { return layers_[l]; }
    std::size_t parameter_count() const;

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
    Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x) const;
    Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x, Tape& tape) const;
    /// Accumulates parameter gradients of sum(cotangent .* output) into `grad`; returns d/dx.
    Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& cotangent, Mlp& grad) const;

    /// Same shape, all zero.
    Mlp zeros_like() const { return Mlp(sizes_); }
    void set_zero();
    /// Weights then bias of each layer, in layer order.
    std::vector<Span> spans();

private:
    std::vector<int> sizes_;
    std::vector<Layer> layers_;
};

struct VjpResult {
    Mlp grad_params;
    Eigen::VectorXd grad_x;
};

/// Reverse-mode product cotangent^T d(forward)/d(params, x) at a single input.
VjpResult vjp(const Mlp& net, const Eigen::VectorXd& x, const Eigen::VectorXd& cotangent);

void write_dmlp(std::ostream& os, const Mlp& net);
Mlp read_dmlp(std::istream& is);
void save_dmlp(const std::string& path, const Mlp& net);
Mlp load_dmlp(const std::string& path);

}  // namespace dedtwin
