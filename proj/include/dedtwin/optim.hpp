#pragma once

#include <Eigen/Dense>
#include <vector>

#include "dedtwin/nn.hpp"

namespace dedtwin {

struct AdaBeliefConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-16;
};

/// AdaBelief: the second moment tracks (g - m)^2 instead of g^2.
class AdaBelief {
public:
    explicit AdaBelief(AdaBeliefConfig cfg = {}) : cfg_(cfg) {}

    /// One update; `params` and `grads` must keep the same block layout between calls.
    void step(const std::vector<Span>& params, const std::vector<Span>& grads);

    long steps() const noexcept { return t_; }
    const AdaBeliefConfig& config() const noexcept { return cfg_; }
    void set_learning_rate(double lr) noexcept { cfg_.lr = lr; }
    const std::vector<Eigen::VectorXd>& first_moment() const noexcept { return m_; }
    const std::vector<Eigen::VectorXd>& belief() const noexcept { return s_; }

private:
    AdaBeliefConfig cfg_;
    long t_ = 0;
    std::vector<Eigen::VectorXd> m_, s_;
};

/// Rescales each gradient block so ||g|| <= factor * max(||p||, floor). Returns the number of blocks clipped.
int clip_gradients(const std::vector<Span>& params, const std::vector<Span>& grads, double factor = 0.01,
                   double floor = 1e-3);

}  // namespace dedtwin
