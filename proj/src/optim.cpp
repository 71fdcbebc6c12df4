#include "dedtwin/optim.hpp"

#include <cmath>

#include "dedtwin/error.hpp"

namespace dedtwin {

void AdaBelief::step(const std::vector<Span>& params, const std::vector<Span>& grads) {
    if (params.size() != grads.size()) throw DimensionMismatch("parameter and gradient block counts differ");
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.push_back(Eigen::VectorXd::Zero(p.size));
            s_.push_back(Eigen::VectorXd::Zero(p.size));
        }
    }
    if (m_.size() != params.size()) throw DimensionMismatch("optimizer state layout changed");
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2, eps = cfg_.eps;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k].size != grads[k].size || params[k].size != m_[k].size()) {
            throw DimensionMismatch("parameter block size mismatch");
        }
        auto p = params[k].vec();
        const auto g = grads[k].vec();
        auto& m = m_[k];
        auto& s = s_[k];
        m = b1 * m + (1.0 - b1) * g;
        s = (b2 * s.array() + (1.0 - b2) * (g - m).array().square() + eps).matrix();
        p.array() -= cfg_.lr * (m.array() / c1) / ((s.array() / c2).sqrt() + eps);
    }
}

int clip_gradients(const std::vector<Span>& params, const std::vector<Span>& grads, double factor, double floor) {
    if (!(factor > 0.0)) throw InvalidInput("clipping factor must be positive");
    if (params.size() != grads.size()) throw DimensionMismatch("parameter and gradient block counts differ");
    int clipped = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto g = grads[k].vec();
        const double limit = factor * std::max(params[k].vec().norm(), floor);
        const double gn = g.norm();
        if (gn > limit) {
            g *= limit / gn;
            ++clipped;
        }
    }
    return clipped;
}

}  // namespace dedtwin
