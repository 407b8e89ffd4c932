#ifndef SDLTO_PRESETS_HPP_
#define SDLTO_PRESETS_HPP_

// Benchmark problems at desk-scale resolution.
//
//   bridge      unit downward load on every top-edge node, both bottom
//               corners pinned
//   cantilever  left edge clamped, unit downward load at the lower-right corner
//   heat        unit heat source on every element, zero-temperature sink on a
//               centered segment (sink_fraction of the nodes) of one edge

#include "errors.hpp"
#include "simp_core.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

namespace sdlto {

enum class PresetName { bridge, cantilever, heat };
enum class Edge { left, right, top, bottom };

[[nodiscard]] inline char const* to_string (PresetName p) noexcept
{
    switch (p) {
        case PresetName::bridge:     return "bridge";
        case PresetName::cantilever: return "cantilever";
        case PresetName::heat:       return "heat";
    }
    return "?";
}

[[nodiscard]] inline char const* to_string (Edge e) noexcept
{
    switch (e) {
        case Edge::left:   return "left";
        case Edge::right:  return "right";
        case Edge::top:    return "top";
        case Edge::bottom: return "bottom";
    }
    return "?";
}

[[nodiscard]] inline std::optional<PresetName> parse_preset (std::string_view s) noexcept
{
    if (s == "bridge") return PresetName::bridge;
    if (s == "cantilever") return PresetName::cantilever;
    if (s == "heat") return PresetName::heat;
    return std::nullopt;
}

[[nodiscard]] inline std::optional<Edge> parse_edge (std::string_view s) noexcept
{
    if (s == "left") return Edge::left;
    if (s == "right") return Edge::right;
    if (s == "top") return Edge::top;
    if (s == "bottom") return Edge::bottom;
    return std::nullopt;
}

struct PresetOptions
{
    double sink_fraction = 0.1;
    Edge sink_edge = Edge::left;
    double rmin = 1.5;
    double poisson_ratio = 0.3;
    SolverOptions solver;
};

// Default resolution of each preset.
[[nodiscard]] inline std::pair<int,int> default_resolution (PresetName p) noexcept
{
    switch (p) {
        case PresetName::bridge:     return {120, 40};
        case PresetName::cantilever: return {60, 20};
        case PresetName::heat:       return {64, 64};
    }
    return {60, 20};
}

[[nodiscard]] inline double default_volume_fraction (PresetName p) noexcept
{
    switch (p) {
        case PresetName::bridge:     return 0.2;
        case PresetName::cantilever: return 0.5;
        case PresetName::heat:       return 0.4;
    }
    return 0.5;
}

// Nodes of a centered segment covering `fraction` of an edge.
[[nodiscard]] inline std::vector<int>
edge_segment_nodes (StructuredGrid const& g, Edge edge, double fraction)
{
    bool const vertical = edge == Edge::left || edge == Edge::right;
    int const count_on_edge = vertical ? g.nely() + 1 : g.nelx() + 1;
    int const count = std::clamp(int(std::ceil(fraction * count_on_edge - 1e-9)), 1, count_on_edge);
    int const start = (count_on_edge - count) / 2;
    std::vector<int> nodes;
    for (int k = start; k < start + count; ++k) {
        switch (edge) {
            case Edge::left:   nodes.push_back(g.node(0, k)); break;
            case Edge::right:  nodes.push_back(g.node(g.nelx(), k)); break;
            case Edge::top:    nodes.push_back(g.node(k, 0)); break;
            case Edge::bottom: nodes.push_back(g.node(k, g.nely())); break;
        }
    }
    return nodes;
}

[[nodiscard]] inline ProblemSpec
build_preset (PresetName name, int nelx, int nely, double volume_fraction,
              PresetOptions const& opt = {})
{
    if (!(volume_fraction > 0.0 && volume_fraction < 1.0)) {
        throw std::invalid_argument("volume fraction must lie in (0, 1)");
    }
    if (!(opt.sink_fraction > 0.0 && opt.sink_fraction <= 1.0)) {
        throw std::invalid_argument("sink fraction must lie in (0, 1]");
    }
    ProblemSpec p;
    p.grid = StructuredGrid(nelx, nely);
    p.volume_fraction = volume_fraction;
    p.filter.rmin = opt.rmin;
    p.poisson_ratio = opt.poisson_ratio;
    p.solver = opt.solver;
    p.material = {1.0, 1e-3, 3.0};
    auto const& g = p.grid;

    switch (name) {
        case PresetName::bridge: {
            p.physics = Physics::elasticity;
            p.boundary.load = Vector::Zero(2 * g.num_nodes());
            for (int ix = 0; ix <= nelx; ++ix) {
                p.boundary.load[2 * g.node(ix, 0) + 1] = -1.0;
            }
            for (int n : {g.node(0, nely), g.node(nelx, nely)}) {
                p.boundary.fixed_dofs.push_back(2 * n);
                p.boundary.fixed_dofs.push_back(2 * n + 1);
            }
            break;
        }
        case PresetName::cantilever: {
            p.physics = Physics::elasticity;
            p.boundary.load = Vector::Zero(2 * g.num_nodes());
            p.boundary.load[2 * g.node(nelx, nely) + 1] = -1.0;
            for (int iy = 0; iy <= nely; ++iy) {
                p.boundary.fixed_dofs.push_back(2 * g.node(0, iy));
                p.boundary.fixed_dofs.push_back(2 * g.node(0, iy) + 1);
            }
            break;
        }
        case PresetName::heat: {
            p.physics = Physics::heat;
            p.boundary.load = Vector::Zero(g.num_nodes());
            double const h = g.element_size();
            for (int e = 0; e < g.num_elements(); ++e) {
                for (int n : g.element_nodes(e)) p.boundary.load[n] += 0.25 * h * h;
            }
            p.boundary.fixed_dofs = edge_segment_nodes(g, opt.sink_edge, opt.sink_fraction);
            break;
        }
    }
    return p;
}

}  // namespace sdlto

#endif
