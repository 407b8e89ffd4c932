#ifndef SDLTO_GRID_FEM_HPP_
#define SDLTO_GRID_FEM_HPP_

// Structured 2D Q4 finite elements: element matrices, assembly from per-element
// scale factors, Dirichlet elimination and the reduced SPD solve.
//
// Numbering: nodes are column-major with y running fastest from the top row,
//   node(ix, iy) = ix * (nely + 1) + iy,     iy = 0 on the top edge
// and elements likewise, element(ex, ey) = ex * nely + ey.
// Element-local nodes are counterclockwise with y pointing up:
//   lower-left, lower-right, upper-right, upper-left.

#include "errors.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

namespace sdlto {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

enum class Physics { elasticity, heat };

[[nodiscard]] inline char const* to_string (Physics p) noexcept
{
    return p == Physics::elasticity ? "elasticity" : "heat";
}


//-----------------------------------------------------------------------------
class StructuredGrid
{
public:
    StructuredGrid () = default;

    StructuredGrid (int nelx, int nely, double element_size = 1.0):
        nelx_{nelx}, nely_{nely}, element_size_{element_size}
    {
        if (nelx < 1 || nely < 1) {
            throw std::invalid_argument("grid needs at least one element per direction");
        }
        if (!(element_size > 0.0)) {
            throw std::invalid_argument("element size must be positive");
        }
    }

    [[nodiscard]] int nelx () const noexcept { return nelx_; }
    [[nodiscard]] int nely () const noexcept { return nely_; }
    [[nodiscard]] double element_size () const noexcept { return element_size_; }

    [[nodiscard]] int num_elements () const noexcept { return nelx_ * nely_; }
    [[nodiscard]] int num_nodes () const noexcept { return (nelx_ + 1) * (nely_ + 1); }

    [[nodiscard]] int node (int ix, int iy) const noexcept { return ix * (nely_ + 1) + iy; }
    [[nodiscard]] int element (int ex, int ey) const noexcept { return ex * nely_ + ey; }

    // Element-local nodes in counterclockwise order starting lower-left.
    [[nodiscard]] std::array<int,4> element_nodes (int e) const noexcept
    {
        int const ex = e / nely_;
        int const ey = e % nely_;
        return {node(ex, ey + 1), node(ex + 1, ey + 1), node(ex + 1, ey), node(ex, ey)};
    }

    // Center of element e in element units (x right, y up).
    [[nodiscard]] std::array<double,2> element_center (int e) const noexcept
    {
        int const ex = e / nely_;
        int const ey = e % nely_;
        return {ex + 0.5, (nely_ - ey) - 0.5};
    }

    friend bool operator== (StructuredGrid const&, StructuredGrid const&) = default;

private:
    int nelx_ = 1;
    int nely_ = 1;
    double element_size_ = 1.0;
};


//-----------------------------------------------------------------------------
class DofMap
{
public:
    DofMap () = default;

    DofMap (StructuredGrid const& grid, Physics physics):
        dofs_per_node_{physics == Physics::elasticity ? 2 : 1},
        total_dofs_{grid.num_nodes() * dofs_per_node_}
    {
        int const per_elem = dofs_per_element();
        indices_.resize(std::size_t(grid.num_elements()) * per_elem);
        for (int e = 0; e < grid.num_elements(); ++e) {
            auto const nodes = grid.element_nodes(e);
            auto* out = indices_.data() + std::size_t(e) * per_elem;
            for (int a = 0; a < 4; ++a) {
                for (int d = 0; d < dofs_per_node_; ++d) {
                    out[a * dofs_per_node_ + d] = nodes[a] * dofs_per_node_ + d;
                }
            }
        }
    }

    [[nodiscard]] int dofs_per_node () const noexcept { return dofs_per_node_; }
    [[nodiscard]] int dofs_per_element () const noexcept { return 4 * dofs_per_node_; }
    [[nodiscard]] int total_dofs () const noexcept { return total_dofs_; }
    [[nodiscard]] int num_elements () const noexcept {
        return int(indices_.size()) / std::max(1, dofs_per_element());
    }

    [[nodiscard]] std::span<int const> element_dofs (int e) const noexcept
    {
        auto const n = std::size_t(dofs_per_element());
        return {indices_.data() + std::size_t(e) * n, n};
    }

private:
    int dofs_per_node_ = 0;
    int total_dofs_ = 0;
    std::vector<int> indices_;
};


//-----------------------------------------------------------------------------
// Bilinear plane-stress element on a unit square, unit Young's modulus.
// Dof order: (u, v) per node, nodes counterclockwise from lower-left.
[[nodiscard]] inline Matrix element_stiffness_elastic (double poisson_ratio)
{
    double const nu = poisson_ratio;
    if (!(nu > 0.0 && nu < 0.5)) {
        throw std::invalid_argument("poisson ratio must lie in (0, 0.5)");
    }
    double const k[8] = {
        0.5 - nu / 6.0,   0.125 + nu / 8.0, -0.25 - nu / 12.0, -0.125 + 3.0 * nu / 8.0,
        -0.25 + nu / 12.0, -0.125 - nu / 8.0,  nu / 6.0,          0.125 - 3.0 * nu / 8.0};
    int const idx[8][8] = {
        {0, 1, 2, 3, 4, 5, 6, 7},
        {1, 0, 7, 6, 5, 4, 3, 2},
        {2, 7, 0, 5, 6, 3, 4, 1},
        {3, 6, 5, 0, 7, 2, 1, 4},
        {4, 5, 6, 7, 0, 1, 2, 3},
        {5, 4, 3, 2, 1, 0, 7, 6},
        {6, 3, 4, 1, 2, 7, 0, 5},
        {7, 2, 1, 4, 3, 6, 5, 0}};
    Matrix ke(8, 8);
    double const scale = 1.0 / (1.0 - nu * nu);
    for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) {
            ke(i, j) = scale * k[idx[i][j]];
        }
    }
    return ke;
}

// Bilinear conduction element on a unit square, unit conductivity.
[[nodiscard]] inline Matrix element_stiffness_heat ()
{
    Matrix ke(4, 4);
    ke <<  4, -1, -2, -1,
          -1,  4, -1, -2,
          -2, -1,  4, -1,
          -1, -2, -1,  4;
    return ke / 6.0;
}


//-----------------------------------------------------------------------------
// Sparsity pattern of the global matrix plus, for every element entry,
// the slot in the compressed value array it accumulates into.
class AssemblyPattern
{
public:
    AssemblyPattern () = default;

    explicit AssemblyPattern (DofMap const& dofmap):
        per_elem_{dofmap.dofs_per_element()}
    {
        int const n = dofmap.total_dofs();
        int const ne = dofmap.num_elements();
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(std::size_t(ne) * per_elem_ * per_elem_);
        for (int e = 0; e < ne; ++e) {
            auto const dofs = dofmap.element_dofs(e);
            for (int i = 0; i < per_elem_; ++i) {
                for (int j = 0; j < per_elem_; ++j) {
                    trips.emplace_back(dofs[i], dofs[j], 0.0);
                }
            }
        }
        pattern_.resize(n, n);
        pattern_.setFromTriplets(trips.begin(), trips.end());
        pattern_.makeCompressed();

        slots_.resize(trips.size());
        auto const* outer = pattern_.outerIndexPtr();
        auto const* inner = pattern_.innerIndexPtr();
        for (std::size_t t = 0; t < trips.size(); ++t) {
            int const row = trips[t].row();
            int const col = trips[t].col();
            auto const* first = inner + outer[col];
            auto const* last = inner + outer[col + 1];
            slots_[t] = int(std::lower_bound(first, last, row) - inner);
        }
    }

    [[nodiscard]] SparseMatrix const& pattern () const noexcept { return pattern_; }
    [[nodiscard]] int dofs_per_element () const noexcept { return per_elem_; }
    [[nodiscard]] std::span<int const> slots () const noexcept { return slots_; }

private:
    int per_elem_ = 0;
    SparseMatrix pattern_;
    std::vector<int> slots_;
};


// K = sum_e scale_e * scatter(k0) using a prebuilt pattern.
[[nodiscard]] inline SparseMatrix
assemble (AssemblyPattern const& pattern, std::span<double const> per_element_scale, Matrix const& k0)
{
    int const m = pattern.dofs_per_element();
    if (k0.rows() != m || k0.cols() != m) {
        throw std::invalid_argument("element matrix size does not match the dof map");
    }
    auto const slots = pattern.slots();
    if (slots.size() != per_element_scale.size() * std::size_t(m * m)) {
        throw std::invalid_argument("per-element scale vector has the wrong length");
    }
    SparseMatrix k = pattern.pattern();
    double* values = k.valuePtr();
    std::fill(values, values + k.nonZeros(), 0.0);
    std::size_t t = 0;
    for (double s : per_element_scale) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw std::invalid_argument("per-element scales must be finite and positive");
        }
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j, ++t) {
                values[slots[t]] += s * k0(i, j);
            }
        }
    }
    return k;
}

[[nodiscard]] inline SparseMatrix
assemble (StructuredGrid const& grid, std::span<double const> per_element_scale,
          Matrix const& k0, DofMap const& dofmap)
{
    if (per_element_scale.size() != std::size_t(grid.num_elements())) {
        throw std::invalid_argument("per-element scale vector has the wrong length");
    }
    return assemble(AssemblyPattern{dofmap}, per_element_scale, k0);
}


//-----------------------------------------------------------------------------
struct BoundarySpec
{
    std::vector<int> fixed_dofs;  // prescribed to zero
    Vector load;                  // full-length force or heat-source vector
};

enum class SolverKind { cholesky, cg, dense };

[[nodiscard]] inline char const* to_string (SolverKind k) noexcept
{
    switch (k) {
        case SolverKind::cholesky: return "cholesky";
        case SolverKind::cg:       return "cg";
        case SolverKind::dense:    return "dense";
    }
    return "?";
}

struct SolverOptions
{
    SolverKind kind = SolverKind::cholesky;
    double tolerance = 1e-10;
    int max_iterations = 0;  // CG only; 0 means 10 * reduced dofs
};

struct Solution
{
    Vector u;
    double relative_residual = 0.0;
    int iterations = 0;
};

// Largest system the dense elimination route accepts.
inline constexpr int dense_solve_max_dofs = 2000;


namespace detail {

[[nodiscard]] inline std::string scientific (double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

struct ReducedSystem
{
    SparseMatrix k;
    Vector f;
    std::vector<int> free_dofs;
};

inline ReducedSystem reduce (SparseMatrix const& k, BoundarySpec const& bc)
{
    int const n = int(k.rows());
    if (k.cols() != n || bc.load.size() != n) {
        throw std::invalid_argument("matrix and load vector sizes disagree");
    }
    if (bc.fixed_dofs.empty()) {
        throw std::invalid_argument("at least one dof must be fixed");
    }
    if (!bc.load.allFinite()) {
        throw std::invalid_argument("load vector has nonfinite entries");
    }
    std::vector<int> map(n, 0);
    for (int d : bc.fixed_dofs) {
        if (d < 0 || d >= n) throw std::out_of_range("fixed dof index out of range");
        map[d] = -1;
    }
    ReducedSystem r;
    for (int i = 0; i < n; ++i) {
        if (map[i] == 0) {
            map[i] = int(r.free_dofs.size());
            r.free_dofs.push_back(i);
        }
        else {
            map[i] = -1;
        }
    }
    int const nf = int(r.free_dofs.size());
    r.f.resize(nf);
    for (int i = 0; i < nf; ++i) r.f[i] = bc.load[r.free_dofs[i]];

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(std::size_t(k.nonZeros()));
    for (int col = 0; col < k.outerSize(); ++col) {
        if (map[col] < 0) continue;
        for (SparseMatrix::InnerIterator it(k, col); it; ++it) {
            int const row = map[it.row()];
            if (row >= 0) trips.emplace_back(row, map[col], it.value());
        }
    }
    r.k.resize(nf, nf);
    r.k.setFromTriplets(trips.begin(), trips.end());
    r.k.makeCompressed();
    return r;
}

inline double relative_residual (SparseMatrix const& k, Vector const& u, Vector const& f)
{
    double const fn = f.norm();
    double const rn = (f - k * u).norm();
    return fn > 0.0 ? rn / fn : rn;
}

}  // namespace detail


// Jacobi-preconditioned conjugate gradient on an SPD system.
[[nodiscard]] inline Solution
pcg_solve (SparseMatrix const& a, Vector const& b, double tolerance, int max_iterations)
{
    int const n = int(a.rows());
    Solution s;
    s.u = Vector::Zero(n);
    double const bnorm = b.norm();
    if (bnorm == 0.0) return s;

    Vector inv_diag = a.diagonal();
    for (int i = 0; i < n; ++i) {
        if (!(inv_diag[i] > 0.0)) {
            throw SingularSystemError("nonpositive diagonal entry in reduced system");
        }
        inv_diag[i] = 1.0 / inv_diag[i];
    }
    Vector q(n);
    int it = 0;
    // the recurrence drifts from the true residual near tight tolerances, so
    // restart from the true residual until it agrees
    while (it < max_iterations) {
        Vector r = b - a * s.u;
        if (r.norm() <= tolerance * bnorm) break;
        Vector z = inv_diag.cwiseProduct(r);
        Vector p = z;
        double rho = r.dot(z);
        while (it < max_iterations) {
            q.noalias() = a * p;
            double const pq = p.dot(q);
            if (!(pq > 0.0)) {
                throw SingularSystemError("reduced system is not positive definite");
            }
            double const alpha = rho / pq;
            s.u += alpha * p;
            r -= alpha * q;
            ++it;
            if (r.norm() <= tolerance * bnorm) break;
            z = inv_diag.cwiseProduct(r);
            double const rho_next = r.dot(z);
            p = z + (rho_next / rho) * p;
            rho = rho_next;
        }
    }
    s.iterations = it;
    s.relative_residual = detail::relative_residual(a, s.u, b);
    if (s.relative_residual > tolerance) {
        throw SolverError("conjugate gradient did not converge (relative residual "
                          + detail::scientific(s.relative_residual) + ")",
                          s.relative_residual, it);
    }
    return s;
}

// Gaussian elimination with partial pivoting on a dense copy.
[[nodiscard]] inline Vector dense_direct_solve (Matrix a, Vector b)
{
    int const n = int(a.rows());
    double const scale = n > 0 ? a.cwiseAbs().maxCoeff() : 0.0;
    for (int c = 0; c < n; ++c) {
        int piv = c;
        for (int r = c + 1; r < n; ++r) {
            if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
        }
        if (!(std::abs(a(piv, c)) > 1e-14 * scale)) {
            throw SingularSystemError("zero pivot in dense elimination");
        }
        if (piv != c) {
            a.row(piv).swap(a.row(c));
            std::swap(b[piv], b[c]);
        }
        for (int r = c + 1; r < n; ++r) {
            double const f = a(r, c) / a(c, c);
            if (f == 0.0) continue;
            a.row(r).tail(n - c) -= f * a.row(c).tail(n - c);
            b[r] -= f * b[c];
        }
    }
    Vector x(n);
    for (int r = n - 1; r >= 0; --r) {
        double acc = b[r];
        for (int c = r + 1; c < n; ++c) acc -= a(r, c) * x[c];
        x[r] = acc / a(r, r);
    }
    return x;
}


// Solves K U = F with the fixed dofs eliminated; fixed entries of U are zero.
[[nodiscard]] inline Solution
solve (SparseMatrix const& k, BoundarySpec const& bc, SolverOptions const& opt = {})
{
    auto const red = detail::reduce(k, bc);
    int const nf = int(red.free_dofs.size());
    Solution reduced;
    reduced.u = Vector::Zero(nf);

    if (red.f.norm() > 0.0 && nf > 0) {
        switch (opt.kind) {
            case SolverKind::cg: {
                int const maxit = opt.max_iterations > 0 ? opt.max_iterations : 10 * nf;
                reduced = pcg_solve(red.k, red.f, opt.tolerance, maxit);
                break;
            }
            case SolverKind::dense: {
                if (k.rows() > dense_solve_max_dofs) {
                    throw std::invalid_argument("dense solve is limited to "
                        + std::to_string(dense_solve_max_dofs) + " dofs");
                }
                reduced.u = dense_direct_solve(Matrix(red.k), red.f);
                reduced.relative_residual = detail::relative_residual(red.k, reduced.u, red.f);
                break;
            }
            case SolverKind::cholesky: {
                Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> llt(red.k);
                if (llt.info() != Eigen::Success) {
                    throw SingularSystemError("reduced system is not positive definite");
                }
                reduced.u = llt.solve(red.f);
                reduced.relative_residual = detail::relative_residual(red.k, reduced.u, red.f);
                // iterative refinement for badly scaled systems
                for (int pass = 0; pass < 3 && reduced.relative_residual > opt.tolerance; ++pass) {
                    reduced.u += llt.solve(Vector(red.f - red.k * reduced.u));
                    reduced.relative_residual = detail::relative_residual(red.k, reduced.u, red.f);
                    reduced.iterations = pass + 1;
                }
                break;
            }
        }
        if (!reduced.u.allFinite()) {
            throw SingularSystemError("solve produced nonfinite values");
        }
        if (reduced.relative_residual > opt.tolerance) {
            throw SolverError("solve missed the residual tolerance", reduced.relative_residual,
                              reduced.iterations);
        }
    }

    Solution full;
    full.u = Vector::Zero(k.rows());
    for (int i = 0; i < nf; ++i) full.u[red.free_dofs[i]] = reduced.u[i];
    full.relative_residual = reduced.relative_residual;
    full.iterations = reduced.iterations;
    return full;
}

}  // namespace sdlto

#endif
