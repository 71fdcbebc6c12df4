#include "dedtwin/mechanics.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <map>

#include "dedtwin/error.hpp"
#include "dedtwin/linear_solvers.hpp"

namespace dedtwin {

namespace {

using Bmat = Eigen::Matrix<double, 6, 24>;
using ElemMat = Eigen::Matrix<double, 24, 24>;
using ElemVec = Eigen::Matrix<double, 24, 1>;

constexpr double kGauss = 0.57735026918962576;

int local_sign(int a, int axis) { return ((a >> axis) & 1) ? 1 : -1; }

}  // namespace

struct MechanicalSolver::GpMaterial {
    ElasticModuli moduli;
    double yield0;
    double thermal;
};

struct MechanicalSolver::ElementGeometry {
    double hx, hy, hz;
    std::array<Bmat, 8> b;
    double weight;  // det J times Gauss weight
};

struct MechanicalSolver::Assembly {
    Eigen::SparseMatrix<double> k;
    std::vector<int> slot;  // per element, 24x24 row-major, index into valuePtr or -1
    std::vector<int> diag_slot;
    // Factor of an earlier tangent, reused as a PCG preconditioner until it goes stale.
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower> llt;
    bool analyzed = false;
    bool factored = false;
    int last_cg_iterations = 0;
};

// Shape values at the Gauss points, shared by all elements.
static const std::array<std::array<double, 8>, 8>& shape_at_gauss() {
    static const auto table = [] {
        std::array<std::array<double, 8>, 8> n{};
        for (int g = 0; g < 8; ++g) {
            for (int a = 0; a < 8; ++a) {
                double v = 0.125;
                for (int ax = 0; ax < 3; ++ax) v *= 1.0 + local_sign(a, ax) * local_sign(g, ax) * kGauss;
                n[g][a] = v;
            }
        }
        return n;
    }();
    return table;
}

MechBoundary MechBoundary::fixture(const StructuredGrid& grid, bool roller_on_top) {
    MechBoundary bc;
    const Face plane = roller_on_top ? Face::z_min : Face::z_max;
    bc.faces.emplace_back(plane, 2);
    if (!grid.spec().full_width) {
        bc.faces.emplace_back(Face::y_min, 1);
    }
    const int kz = roller_on_top ? 0 : grid.nodes_z() - 1;
    const int jy = grid.spec().full_width ? grid.spec().ny : 0;
    const std::size_t corner = grid.node(0, jy, kz);
    for (int c = 0; c < 3; ++c) bc.points.push_back({corner, c});
    if (grid.spec().full_width) {
        // Without the symmetry plane, a second fixture-plane point stops the rotation about z.
        bc.points.push_back({grid.node(grid.nodes_x() - 1, jy, kz), 1});
    }
    return bc;
}

MechBoundary MechBoundary::pinned(const StructuredGrid& grid) {
    MechBoundary bc;
    const int kz = grid.nodes_z() - 1;
    const std::size_t a = grid.node(0, 0, kz);
    const std::size_t b = grid.node(grid.nodes_x() - 1, 0, kz);
    const std::size_t c = grid.node(0, grid.nodes_y() - 1, kz);
    bc.points = {{a, 0}, {a, 1}, {a, 2}, {b, 1}, {b, 2}, {c, 2}};
    return bc;
}

MechanicalSolver::MechanicalSolver(const StructuredGrid& grid, const MaterialModel& material, MechConfig cfg)
    : MechanicalSolver(grid, material, cfg, MechBoundary::fixture(grid, cfg.roller_on_top)) {}

MechanicalSolver::MechanicalSolver(const StructuredGrid& grid, const MaterialModel& material, MechConfig cfg,
                                   MechBoundary bc)
    : grid_(grid), material_(material), cfg_(cfg), assembly_(std::make_unique<Assembly>()) {
    const std::size_t ndof = 3 * grid_.node_count();
    constrained_.assign(ndof, 0);
    for (const auto& [face, comp] : bc.faces) {
        for (int k = 0; k < grid_.nodes_z(); ++k) {
            for (int j = 0; j < grid_.nodes_y(); ++j) {
                for (int i = 0; i < grid_.nodes_x(); ++i) {
                    const bool on = (face == Face::x_min && i == 0) || (face == Face::x_max && i == grid_.nodes_x() - 1) ||
                                    (face == Face::y_min && j == 0) || (face == Face::y_max && j == grid_.nodes_y() - 1) ||
                                    (face == Face::z_min && k == 0) || (face == Face::z_max && k == grid_.nodes_z() - 1);
                    if (on) constrained_[3 * grid_.node(i, j, k) + comp] = 1;
                }
            }
        }
    }
    for (const auto& p : bc.points) {
        if (p.node >= grid_.node_count() || p.component < 0 || p.component > 2) {
            throw InvalidInput("point constraint outside the grid");
        }
        constrained_[3 * p.node + p.component] = 1;
    }

    // Element geometries: axis-aligned boxes, cached by size.
    std::map<std::array<double, 3>, std::size_t> cache;
    element_geometry_.resize(grid_.cell_count());
    for (int k = 0; k < grid_.nz(); ++k) {
        for (int j = 0; j < grid_.ny(); ++j) {
            for (int i = 0; i < grid_.nx(); ++i) {
                const std::array<double, 3> h{grid_.x()[i + 1] - grid_.x()[i], grid_.y()[j + 1] - grid_.y()[j],
                                              grid_.z()[k + 1] - grid_.z()[k]};
                auto it = cache.find(h);
                if (it == cache.end()) {
                    ElementGeometry geo;
                    geo.hx = h[0];
                    geo.hy = h[1];
                    geo.hz = h[2];
                    geo.weight = h[0] * h[1] * h[2] / 8.0;
                    for (int g = 0; g < 8; ++g) {
                        Bmat b = Bmat::Zero();
                        const double xi[3] = {local_sign(g, 0) * kGauss, local_sign(g, 1) * kGauss,
                                              local_sign(g, 2) * kGauss};
                        for (int a = 0; a < 8; ++a) {
                            const double sa[3] = {static_cast<double>(local_sign(a, 0)),
                                                  static_cast<double>(local_sign(a, 1)),
                                                  static_cast<double>(local_sign(a, 2))};
                            const double f[3] = {1.0 + sa[0] * xi[0], 1.0 + sa[1] * xi[1], 1.0 + sa[2] * xi[2]};
                            const double dx = 0.125 * sa[0] * f[1] * f[2] * 2.0 / h[0];
                            const double dy = 0.125 * sa[1] * f[0] * f[2] * 2.0 / h[1];
                            const double dz = 0.125 * sa[2] * f[0] * f[1] * 2.0 / h[2];
                            const int c = 3 * a;
                            b(0, c) = dx;
                            b(1, c + 1) = dy;
                            b(2, c + 2) = dz;
                            b(3, c + 1) = dz;
                            b(3, c + 2) = dy;
                            b(4, c) = dz;
                            b(4, c + 2) = dx;
                            b(5, c) = dy;
                            b(5, c + 1) = dx;
                        }
                        geo.b[g] = b;
                    }
                    it = cache.emplace(h, geometries_.size()).first;
                    geometries_.push_back(geo);
                }
                element_geometry_[(static_cast<std::size_t>(k) * grid_.ny() + j) * grid_.nx() + i] = it->second;
            }
        }
    }

    // Sparse pattern of the lower triangle, with a slot map for direct scatter.
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(grid_.cell_count() * 300 + ndof);
    for (std::size_t e = 0; e < grid_.cell_count(); ++e) {
        const auto nodes = element_nodes(e);
        for (int r = 0; r < 24; ++r) {
            const std::size_t gr = 3 * nodes[r / 3] + r % 3;
            for (int c = 0; c < 24; ++c) {
                const std::size_t gc = 3 * nodes[c / 3] + c % 3;
                if (gr >= gc) trip.emplace_back(static_cast<int>(gr), static_cast<int>(gc), 1.0);
            }
        }
    }
    auto& k = assembly_->k;
    k.resize(static_cast<Eigen::Index>(ndof), static_cast<Eigen::Index>(ndof));
    k.setFromTriplets(trip.begin(), trip.end());
    k.makeCompressed();
    auto find_slot = [&k](std::size_t r, std::size_t c) {
        const int* outer = k.outerIndexPtr();
        const int* inner = k.innerIndexPtr();
        const int* begin = inner + outer[c];
        const int* end = inner + outer[c + 1];
        const int* p = std::lower_bound(begin, end, static_cast<int>(r));
        if (p == end || *p != static_cast<int>(r)) throw ConstraintError("stiffness pattern lookup failed");
        return static_cast<int>(p - inner);
    };
    assembly_->slot.assign(grid_.cell_count() * 576, -1);
    for (std::size_t e = 0; e < grid_.cell_count(); ++e) {
        const auto nodes = element_nodes(e);
        for (int r = 0; r < 24; ++r) {
            const std::size_t gr = 3 * nodes[r / 3] + r % 3;
            for (int c = 0; c < 24; ++c) {
                const std::size_t gc = 3 * nodes[c / 3] + c % 3;
                if (gr < gc || constrained_[gr] || constrained_[gc]) continue;
                assembly_->slot[e * 576 + r * 24 + c] = find_slot(gr, gc);
            }
        }
    }
    assembly_->diag_slot.resize(ndof);
    for (std::size_t d = 0; d < ndof; ++d) assembly_->diag_slot[d] = find_slot(d, d);
}

MechanicalSolver::~MechanicalSolver() = default;

std::array<std::size_t, 8> MechanicalSolver::element_nodes(std::size_t e) const {
    const auto nx = static_cast<std::size_t>(grid_.nx());
    const auto ny = static_cast<std::size_t>(grid_.ny());
    const int i = static_cast<int>(e % nx);
    const int j = static_cast<int>((e / nx) % ny);
    const int k = static_cast<int>(e / (nx * ny));
    std::array<std::size_t, 8> nodes{};
    for (int a = 0; a < 8; ++a) nodes[a] = grid_.node(i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1));
    return nodes;
}

const MechanicalSolver::ElementGeometry& MechanicalSolver::geometry(std::size_t e) const {
    return geometries_[element_geometry_[e]];
}

MechState MechanicalSolver::initial_state() const {
    MechState s;
    const auto npts = static_cast<Eigen::Index>(gauss_point_count());
    s.u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(3 * grid_.node_count()));
    s.sigma = Eigen::Matrix<double, 6, Eigen::Dynamic>::Zero(6, npts);
    s.eps_pl = Eigen::Matrix<double, 6, Eigen::Dynamic>::Zero(6, npts);
    s.eps_pe = Eigen::VectorXd::Zero(npts);
    return s;
}

double MechanicalSolver::assemble(const Eigen::VectorXd& u, const MechState& prev, MechState& trial,
                                  Eigen::VectorXd& residual, bool with_tangent, int* plastic_points) const {
    residual.setZero(u.size());
    auto& k = assembly_->k;
    double* kval = k.valuePtr();
    if (with_tangent) std::fill(kval, kval + k.nonZeros(), 0.0);

    const double hardening = material_.hardening_modulus();
    int plastic = 0;
    ElemVec ue, fe;
    ElemMat ke;
    for (std::size_t e = 0; e < grid_.cell_count(); ++e) {
        const auto nodes = element_nodes(e);
        for (int a = 0; a < 8; ++a) ue.segment<3>(3 * a) = u.segment<3>(static_cast<Eigen::Index>(3 * nodes[a]));
        const auto& geo = geometry(e);
        fe.setZero();
        if (with_tangent) ke.setZero();
        for (int g = 0; g < 8; ++g) {
            const auto p = static_cast<Eigen::Index>(e * 8 + g);
            const auto& gm = gp_material_[static_cast<std::size_t>(p)];
            Voigt6 eps = geo.b[g] * ue;
            eps -= prev.eps_pl.col(p);
            eps.head<3>().array() -= gm.thermal;
            const ReturnResult r = radial_return(from_voigt_strain(eps), gm.moduli, gm.yield0, hardening, prev.eps_pe(p));
            const Voigt6 sv = to_voigt_stress(r.sigma);
            trial.sigma.col(p) = sv;
            trial.eps_pl.col(p) = prev.eps_pl.col(p) + to_voigt_strain(r.plastic_increment);
            trial.eps_pe(p) = r.eps_pe;
            if (r.plastic) ++plastic;
            fe.noalias() += geo.weight * geo.b[g].transpose() * sv;
            if (with_tangent) ke.noalias() += geo.weight * geo.b[g].transpose() * (r.tangent * geo.b[g]);
        }
        for (int a = 0; a < 8; ++a) residual.segment<3>(static_cast<Eigen::Index>(3 * nodes[a])) += fe.segment<3>(3 * a);
        if (with_tangent) {
            const int* slots = &assembly_->slot[e * 576];
            for (int r = 0; r < 24; ++r) {
                for (int c = 0; c < 24; ++c) {
                    const int s = slots[r * 24 + c];
                    if (s >= 0) kval[s] += ke(r, c);
                }
            }
        }
    }
    if (with_tangent) {
        for (std::size_t d = 0; d < constrained_.size(); ++d) {
            if (constrained_[d]) kval[assembly_->diag_slot[d]] = 1.0;
        }
    }
    if (plastic_points) *plastic_points = plastic;
    double norm2 = 0.0;
    for (Eigen::Index d = 0; d < residual.size(); ++d) {
        if (!constrained_[static_cast<std::size_t>(d)]) norm2 += residual(d) * residual(d);
    }
    return std::sqrt(norm2);
}

MechState MechanicalSolver::solve_step(const Eigen::VectorXd& nodal_temperature, const MechState& prev,
                                       NewtonStats* stats) const {
    if (nodal_temperature.size() != static_cast<Eigen::Index>(grid_.node_count())) {
        throw DimensionMismatch("temperature field size does not match the grid");
    }
    const auto& n_at_g = shape_at_gauss();
    gp_material_.resize(gauss_point_count());
    for (std::size_t e = 0; e < grid_.cell_count(); ++e) {
        const auto nodes = element_nodes(e);
        for (int g = 0; g < 8; ++g) {
            double t = 0.0;
            for (int a = 0; a < 8; ++a) t += n_at_g[g][a] * nodal_temperature(static_cast<Eigen::Index>(nodes[a]));
            auto& gm = gp_material_[e * 8 + g];
            gm.moduli = elastic_moduli(t, material_);
            gm.yield0 = material_.yield_stress(t);
            gm.thermal = material_.alpha(t) * (t - cfg_.t_ref);
        }
    }

    MechState trial = prev;
    Eigen::VectorXd u = prev.u;
    Eigen::VectorXd residual;
    NewtonStats st;
    double rnorm = assemble(u, prev, trial, residual, true, &st.plastic_points);
    const double tol = std::max(cfg_.newton_rel_tol * rnorm, cfg_.newton_abs_tol);
    st.tolerance = tol;
    st.residual = rnorm;
    for (int it = 0; it < cfg_.newton_max_iters; ++it) {
        if (!std::isfinite(rnorm)) throw StepFailure("mechanical Newton produced non-finite residual", it, rnorm);
        if (rnorm <= tol) {
            trial.u = u;
            if (stats) *stats = st;
            return trial;
        }
        for (std::size_t d = 0; d < constrained_.size(); ++d) {
            if (constrained_[d]) residual(static_cast<Eigen::Index>(d)) = 0.0;
        }
        Eigen::VectorXd du = solve_tangent(-residual, st);
        u += du;
        rnorm = assemble(u, prev, trial, residual, true, &st.plastic_points);
        st.iterations = it + 1;
        st.residual = rnorm;
    }
    if (stats) *stats = st;
    throw StepFailure("mechanical Newton did not converge", st.iterations, rnorm);
}

void MechanicalSolver::refactor() const {
    auto& asmb = *assembly_;
    if (!asmb.analyzed) {
        asmb.llt.analyzePattern(asmb.k);
        asmb.analyzed = true;
    }
    asmb.llt.factorize(asmb.k);
    if (asmb.llt.info() != Eigen::Success) {
        asmb.factored = false;
        throw ConstraintError("stiffness factorisation failed; check the displacement constraints");
    }
    asmb.factored = true;
    ++factorizations_;
}

Eigen::VectorXd MechanicalSolver::solve_tangent(const Eigen::VectorXd& rhs, NewtonStats& st) const {
    auto& asmb = *assembly_;
    if (!asmb.factored || asmb.last_cg_iterations > cfg_.refactor_cg_iterations) refactor();
    const auto& k = asmb.k;
    auto apply = [&k](const Eigen::VectorXd& x, Eigen::VectorXd& y) { y.noalias() = k.selfadjointView<Eigen::Lower>() * x; };
    auto precondition = [&asmb](const Eigen::VectorXd& r, Eigen::VectorXd& z) { z = asmb.llt.solve(r); };
    Eigen::VectorXd x = Eigen::VectorXd::Zero(rhs.size());
    CgResult cg = preconditioned_cg(apply, precondition, rhs, x, cfg_.linear_tol, cfg_.linear_max_iters);
    if (!cg.converged) {
        refactor();
        x.setZero();
        cg = preconditioned_cg(apply, precondition, rhs, x, cfg_.linear_tol, cfg_.linear_max_iters);
        if (!cg.converged) throw LinearSolveError("tangent solve did not converge");
    }
    asmb.last_cg_iterations = cg.iterations;
    st.linear_iterations += cg.iterations;
    return x;
}

Eigen::VectorXd MechanicalSolver::internal_forces(const MechState& state) const {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(3 * grid_.node_count()));
    for (std::size_t e = 0; e < grid_.cell_count(); ++e) {
        const auto nodes = element_nodes(e);
        const auto& geo = geometry(e);
        ElemVec fe = ElemVec::Zero();
        for (int g = 0; g < 8; ++g) {
            fe.noalias() += geo.weight * geo.b[g].transpose() * state.sigma.col(static_cast<Eigen::Index>(e * 8 + g));
        }
        for (int a = 0; a < 8; ++a) f.segment<3>(static_cast<Eigen::Index>(3 * nodes[a])) += fe.segment<3>(3 * a);
    }
    return f;
}

Eigen::VectorXd MechanicalSolver::nodal_stress(const MechState& state) const {
    const auto nn = static_cast<Eigen::Index>(grid_.node_count());
    Eigen::VectorXd out = Eigen::VectorXd::Zero(6 * nn);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(nn);
    for (std::size_t e = 0; e < grid_.cell_count(); ++e) {
        const auto nodes = element_nodes(e);
        for (int a = 0; a < 8; ++a) {
            const auto n = static_cast<Eigen::Index>(nodes[a]);
            out.segment<6>(6 * n) += state.sigma.col(static_cast<Eigen::Index>(e * 8 + a));
            count(n) += 1.0;
        }
    }
    for (Eigen::Index n = 0; n < nn; ++n) out.segment<6>(6 * n) /= count(n);
    return out;
}

MechState solve_quasistatic_step(const Eigen::VectorXd& nodal_temperature, const MechState& prev,
                                 const StructuredGrid& grid, const MaterialModel& material, const MechConfig& cfg) {
    const MechanicalSolver solver(grid, material, cfg);
    return solver.solve_step(nodal_temperature, prev);
}

MechanicalRun run_mechanical(const FieldTrajectory& temperature, const StructuredGrid& grid,
                             const MaterialModel& material, const MechConfig& cfg, const MechObserver& observer) {
    return run_mechanical(temperature, grid, material, cfg, MechBoundary::fixture(grid, cfg.roller_on_top), observer);
}

MechanicalRun run_mechanical(const FieldTrajectory& temperature, const StructuredGrid& grid,
                             const MaterialModel& material, const MechConfig& cfg, const MechBoundary& bc,
                             const MechObserver& observer) {
    if (temperature.components != 1 || !temperature.points.empty() ||
        temperature.point_count() != grid.node_count()) {
        throw DimensionMismatch("mechanical run needs a full-grid temperature trajectory");
    }
    const MechanicalSolver solver(grid, material, cfg, bc);
    MechanicalRun run;
    run.stress.kind = FieldKind::stress;
    run.stress.grid = grid.spec();
    run.stress.times = temperature.times;
    run.stress.components = 6;
    run.stress.data.resize(static_cast<Eigen::Index>(temperature.time_count()),
                           static_cast<Eigen::Index>(6 * grid.node_count()));
    MechState state = solver.initial_state();
    for (std::size_t t = 0; t < temperature.time_count(); ++t) {
        const Eigen::VectorXd field = temperature.data.row(static_cast<Eigen::Index>(t)).transpose();
        NewtonStats st;
        MechState next = solver.solve_step(field, state, &st);
        if ((next.eps_pe.array() < state.eps_pe.array()).any()) run.eps_pe_monotone = false;
        state = std::move(next);
        run.stress.data.row(static_cast<Eigen::Index>(t)) = solver.nodal_stress(state).transpose();
        if (observer) observer(t, temperature.times[t], state, st);
    }
    run.final_eps_pe = state.eps_pe;
    return run;
}

}  // namespace dedtwin
