#include "dedtwin/nn.hpp"

#include <fstream>

#include "dedtwin/binary_io.hpp"
#include "dedtwin/error.hpp"

namespace dedtwin {

namespace {

Eigen::MatrixXd softplus_of(const Eigen::MatrixXd& a) {
    return (a.array().max(0.0) + (-a.array().abs()).exp().log1p()).matrix();
}

Eigen::MatrixXd sigmoid_of(const Eigen::MatrixXd& a) { return (1.0 / (1.0 + (-a.array()).exp())).matrix(); }

void check_sizes(const std::vector<int>& sizes) {
    if (sizes.size() < 2) throw InvalidInput("an MLP needs at least input and output widths");
    for (int s : sizes) {
        if (s <= 0) throw InvalidInput("MLP layer widths must be positive");
    }
}

}  // namespace

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    check_sizes(sizes_);
    layers_.resize(sizes_.size() - 1);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        layers_[l].w = Eigen::MatrixXd::Zero(sizes_[l + 1], sizes_[l]);
        layers_[l].b = Eigen::VectorXd::Zero(sizes_[l + 1]);
    }
}

Mlp Mlp::initialized(std::vector<int> sizes, std::mt19937_64& rng, bool zero_output_layer) {
    Mlp net(std::move(sizes));
    for (std::size_t l = 0; l < net.layers_.size(); ++l) {
        if (zero_output_layer && l + 1 == net.layers_.size()) break;
        const double bound = std::sqrt(6.0 / net.sizes_[l]);
        auto& w = net.layers_[l].w;
        // Row-major fill so the stream order matches the file layout.
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = bound * (2.0 * uniform01(rng) - 1.0);
        }
    }
    return net;
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.w.size() + l.b.size());
    return n;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
    if (x.size() != input_size()) throw DimensionMismatch("MLP input width mismatch");
    Eigen::VectorXd h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Eigen::VectorXd a = layers_[l].w * h + layers_[l].b;
        if (l + 1 < layers_.size()) {
            for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = softplus(a(i));
        }
        h = std::move(a);
    }
    return h;
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& x) const {
    if (x.rows() != input_size()) throw DimensionMismatch("MLP input width mismatch");
    Eigen::MatrixXd h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Eigen::MatrixXd a = layers_[l].w * h;
        a.colwise() += layers_[l].b;
        h = (l + 1 < layers_.size()) ? softplus_of(a) : std::move(a);
    }
    return h;
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& x, Tape& tape) const {
    if (x.rows() != input_size()) throw DimensionMismatch("MLP input width mismatch");
    tape.input.resize(layers_.size());
    tape.pre.resize(layers_.size() - 1);
    tape.input[0] = x;
    Eigen::MatrixXd out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Eigen::MatrixXd a = layers_[l].w * tape.input[l];
        a.colwise() += layers_[l].b;
        if (l + 1 < layers_.size()) {
            tape.input[l + 1] = softplus_of(a);
            tape.pre[l] = std::move(a);
        } else {
            out = std::move(a);
        }
    }
    return out;
}

Eigen::MatrixXd Mlp::backward(const Tape& tape, const Eigen::MatrixXd& cotangent, Mlp& grad) const {
    if (cotangent.rows() != output_size() || tape.input.size() != layers_.size() ||
        cotangent.cols() != tape.input[0].cols()) {
        throw DimensionMismatch("MLP cotangent does not match the recorded pass");
    }
    Eigen::MatrixXd delta = cotangent;
    for (std::size_t l = layers_.size(); l-- > 0;) {
        grad.layers_[l].w.noalias() += delta * tape.input[l].transpose();
        grad.layers_[l].b += delta.rowwise().sum();
        Eigen::MatrixXd up = layers_[l].w.transpose() * delta;
        if (l > 0) up.array() *= sigmoid_of(tape.pre[l - 1]).array();
        delta = std::move(up);
    }
    return delta;
}

void Mlp::set_zero() {
    for (auto& l : layers_) {
        l.w.setZero();
        l.b.setZero();
    }
}

std::vector<Span> Mlp::spans() {
    std::vector<Span> out;
    out.reserve(2 * layers_.size());
    for (auto& l : layers_) {
        out.push_back({l.w.data(), l.w.size()});
        out.push_back({l.b.data(), l.b.size()});
    }
    return out;
}

VjpResult vjp(const Mlp& net, const Eigen::VectorXd& x, const Eigen::VectorXd& cotangent) {
    if (x.size() != net.input_size() || cotangent.size() != net.output_size()) {
        throw DimensionMismatch("vjp shapes do not match the network");
    }
    Mlp::Tape tape;
    net.forward_batch(x, tape);
    VjpResult r{net.zeros_like(), {}};
    r.grad_x = net.backward(tape, cotangent, r.grad_params);
    return r;
}

void write_dmlp(std::ostream& os, const Mlp& net) {
    bin::put_magic(os, "DMLP");
    bin::put<std::uint32_t>(os, 1);
    bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(net.sizes().size()));
    for (int s : net.sizes()) bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(s));
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const auto& w = net.layer(l).w;
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) bin::put<double>(os, w(r, c));
        }
        for (Eigen::Index i = 0; i < net.layer(l).b.size(); ++i) bin::put<double>(os, net.layer(l).b(i));
    }
}

Mlp read_dmlp(std::istream& is) {
    bin::expect_magic(is, "DMLP");
    const auto version = bin::get<std::uint32_t>(is);
    if (version != 1) throw FormatError("unsupported DMLP version " + std::to_string(version));
    const auto count = bin::get<std::uint32_t>(is);
    if (count < 2 || count > 64) throw FormatError("implausible DMLP layer count");
    std::vector<int> sizes(count);
    for (auto& s : sizes) {
        const auto v = bin::get<std::uint32_t>(is);
        if (v == 0 || v > (1u << 24)) throw FormatError("implausible DMLP layer width");
        s = static_cast<int>(v);
    }
    Mlp net(sizes);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        auto& w = net.layer(l).w;
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = bin::get<double>(is);
        }
        for (Eigen::Index i = 0; i < net.layer(l).b.size(); ++i) net.layer(l).b(i) = bin::get<double>(is);
    }
    return net;
}

void save_dmlp(const std::string& path, const Mlp& net) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InvalidInput("cannot write " + path);
    write_dmlp(os, net);
}

Mlp load_dmlp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DependencyError("missing network file " + path);
    return read_dmlp(is);
}

}  // namespace dedtwin
