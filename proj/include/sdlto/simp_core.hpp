#ifndef SDLTO_SIMP_CORE_HPP_
#define SDLTO_SIMP_CORE_HPP_

// Modified SIMP: material interpolation, density filter, and the single
// FEM evaluation (objective + adjoint sensitivity) every optimizer step and
// every surrogate training sample is built on.

#include "errors.hpp"
#include "grid_fem.hpp"

#include <cmath>
#include <span>
#include <utility>

namespace sdlto {

//-----------------------------------------------------------------------------
struct MaterialModel
{
    double e0 = 1.0;     // solid stiffness or conductivity
    double emin = 1e-3;  // void floor, keeps K nonsingular
    double penal = 3.0;

    void validate () const
    {
        if (!(emin > 0.0 && emin < e0)) {
            throw std::invalid_argument("material requires 0 < emin < e0");
        }
        if (!(penal >= 1.0)) {
            throw std::invalid_argument("penalization exponent must be >= 1");
        }
    }
};

// E(x) = Emin + x^p (E0 - Emin)
[[nodiscard]] inline double interpolate (double x, MaterialModel const& m)
{
    if (!(x >= 0.0 && x <= 1.0)) {
        throw std::invalid_argument("density outside [0, 1]");
    }
    return m.emin + std::pow(x, m.penal) * (m.e0 - m.emin);
}

// dE/dx
[[nodiscard]] inline double interpolate_derivative (double x, MaterialModel const& m)
{
    return m.penal * std::pow(x, m.penal - 1.0) * (m.e0 - m.emin);
}


//-----------------------------------------------------------------------------
// Per-element densities on a structured grid, each in [0, 1].
class DensityField
{
public:
    DensityField () = default;

    DensityField (StructuredGrid const& grid, Vector values):
        grid_{grid}, values_{std::move(values)}
    {
        if (values_.size() != grid_.num_elements()) {
            throw std::invalid_argument("density field length does not match the grid");
        }
        for (double v : values_) {
            if (!(v >= 0.0 && v <= 1.0)) {
                throw std::invalid_argument("density outside [0, 1]");
            }
        }
    }

    static DensityField uniform (StructuredGrid const& grid, double value)
    {
        return {grid, Vector::Constant(grid.num_elements(), value)};
    }

    [[nodiscard]] StructuredGrid const& grid () const noexcept { return grid_; }
    [[nodiscard]] Vector const& values () const noexcept { return values_; }
    [[nodiscard]] int size () const noexcept { return int(values_.size()); }
    [[nodiscard]] double operator[] (int e) const noexcept { return values_[e]; }

private:
    StructuredGrid grid_;
    Vector values_;
};

[[nodiscard]] inline double volume_fraction (Vector const& x)
{
    return x.size() > 0 ? x.mean() : 0.0;
}

[[nodiscard]] inline double volume_fraction (DensityField const& x)
{
    return volume_fraction(x.values());
}


//-----------------------------------------------------------------------------
struct FilterSpec
{
    double rmin = 1.5;  // radius in element units
};

// Conic-weight density filter  x~ = W x,  W = diag(1/Hs) H,
// H_ei = max(0, rmin - dist(e, i)).
class DensityFilter
{
public:
    using RowMajorSparse = Eigen::SparseMatrix<double, Eigen::RowMajor>;

    DensityFilter () = default;

    DensityFilter (StructuredGrid const& grid, FilterSpec spec):
        grid_{grid}, spec_{spec}
    {
        if (!(spec.rmin >= 1.0)) {
            throw std::invalid_argument("filter radius must be >= 1");
        }
        int const n = grid.num_elements();
        int const reach = int(std::ceil(spec.rmin)) - 1;
        std::vector<Eigen::Triplet<double>> trips;
        for (int ex = 0; ex < grid.nelx(); ++ex) {
            for (int ey = 0; ey < grid.nely(); ++ey) {
                int const e = grid.element(ex, ey);
                for (int ix = std::max(ex - reach, 0); ix <= std::min(ex + reach, grid.nelx() - 1); ++ix) {
                    for (int iy = std::max(ey - reach, 0); iy <= std::min(ey + reach, grid.nely() - 1); ++iy) {
                        double const w = spec.rmin - std::hypot(double(ex - ix), double(ey - iy));
                        if (w > 0.0) trips.emplace_back(e, grid.element(ix, iy), w);
                    }
                }
            }
        }
        h_.resize(n, n);
        h_.setFromTriplets(trips.begin(), trips.end());
        h_.makeCompressed();
        row_sums_ = h_ * Vector::Ones(n);
    }

    [[nodiscard]] Vector apply (Vector const& x) const
    {
        return (h_ * x).cwiseQuotient(row_sums_);
    }

    // W^T v, the adjoint of apply().
    [[nodiscard]] Vector chain_rule (Vector const& v) const
    {
        return h_.transpose() * v.cwiseQuotient(row_sums_);
    }

    // Row-normalized weights W as a dense matrix (small grids only).
    [[nodiscard]] Matrix weight_matrix () const
    {
        return row_sums_.cwiseInverse().asDiagonal() * Matrix(h_);
    }

    [[nodiscard]] StructuredGrid const& grid () const noexcept { return grid_; }
    [[nodiscard]] FilterSpec spec () const noexcept { return spec_; }

private:
    StructuredGrid grid_;
    FilterSpec spec_;
    RowMajorSparse h_;
    Vector row_sums_;
};

[[nodiscard]] inline DensityField density_filter (DensityField const& x, FilterSpec spec)
{
    DensityFilter const f(x.grid(), spec);
    Vector y = f.apply(x.values()).cwiseMax(0.0).cwiseMin(1.0);
    return {x.grid(), std::move(y)};
}

[[nodiscard]] inline Vector
filter_chain_rule (Vector const& d_filtered, StructuredGrid const& grid, FilterSpec spec)
{
    if (d_filtered.size() != grid.num_elements()) {
        throw std::invalid_argument("sensitivity length does not match the grid");
    }
    return DensityFilter(grid, spec).chain_rule(d_filtered);
}


//-----------------------------------------------------------------------------
struct ProblemSpec
{
    Physics physics = Physics::elasticity;
    StructuredGrid grid;
    MaterialModel material;
    double poisson_ratio = 0.3;  // elasticity only
    BoundarySpec boundary;
    double volume_fraction = 0.5;
    FilterSpec filter;
    SolverOptions solver;
};

struct Evaluation
{
    double objective = 0.0;
    Vector gradient;           // dC/dx on the design variables
    Vector physical_gradient;  // dC/dx~ on the filtered field
    Vector state;              // displacements or temperatures
    int fem_solves = 0;
};

// Prepared evaluation context. evaluate() is const and safe to call
// concurrently from several threads.
class Evaluator
{
public:
    explicit Evaluator (ProblemSpec problem):
        problem_{std::move(problem)},
        dofmap_{problem_.grid, problem_.physics},
        pattern_{dofmap_},
        ke_{problem_.physics == Physics::elasticity
                ? element_stiffness_elastic(problem_.poisson_ratio)
                : element_stiffness_heat()},
        filter_{problem_.grid, problem_.filter}
    {
        problem_.material.validate();
        if (problem_.boundary.load.size() != dofmap_.total_dofs()) {
            throw std::invalid_argument("load vector length does not match the dof count");
        }
        if (problem_.boundary.fixed_dofs.empty()) {
            throw std::invalid_argument("problem has no fixed dofs");
        }
    }

    [[nodiscard]] ProblemSpec const& problem () const noexcept { return problem_; }
    [[nodiscard]] DofMap const& dofmap () const noexcept { return dofmap_; }
    [[nodiscard]] DensityFilter const& filter () const noexcept { return filter_; }
    [[nodiscard]] Matrix const& element_matrix () const noexcept { return ke_; }
    [[nodiscard]] int num_elements () const noexcept { return problem_.grid.num_elements(); }

    [[nodiscard]] Evaluation evaluate (DensityField const& x) const
    {
        if (!(x.grid() == problem_.grid)) {
            throw std::invalid_argument("density field grid does not match the problem");
        }
        return evaluate(x.values());
    }

    [[nodiscard]] Evaluation evaluate (Vector const& x) const
    {
        int const n = num_elements();
        if (x.size() != n) {
            throw std::invalid_argument("density vector has the wrong length");
        }
        auto const& mat = problem_.material;
        Vector const xf = filter_.apply(x).cwiseMax(0.0).cwiseMin(1.0);
        Vector modulus(n);
        for (int e = 0; e < n; ++e) modulus[e] = interpolate(xf[e], mat);

        SparseMatrix const k = assemble(pattern_, {modulus.data(), std::size_t(n)}, ke_);
        Evaluation out;
        out.state = solve(k, problem_.boundary, problem_.solver).u;
        out.fem_solves = 1;

        out.physical_gradient.resize(n);
        double c = 0.0;
        int const m = dofmap_.dofs_per_element();
        Vector ue(m);
        for (int e = 0; e < n; ++e) {
            auto const dofs = dofmap_.element_dofs(e);
            for (int i = 0; i < m; ++i) ue[i] = out.state[dofs[i]];
            double const ce = ue.dot(ke_ * ue);
            c += modulus[e] * ce;
            out.physical_gradient[e] = -interpolate_derivative(xf[e], mat) * ce;
        }
        out.objective = c;
        out.gradient = filter_.chain_rule(out.physical_gradient);
        if (!std::isfinite(c) || !out.gradient.allFinite()) {
            throw NonFiniteError("evaluation produced a nonfinite objective or gradient");
        }
        return out;
    }

private:
    ProblemSpec problem_;
    DofMap dofmap_;
    AssemblyPattern pattern_;
    Matrix ke_;
    DensityFilter filter_;
};

[[nodiscard]] inline Evaluation evaluate (DensityField const& x, ProblemSpec const& problem)
{
    return Evaluator{problem}.evaluate(x);
}

}  // namespace sdlto

#endif
