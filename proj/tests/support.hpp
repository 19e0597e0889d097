#pragma once

#include <cmath>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "surfopt/geometry.hpp"
#include "surfopt/physics.hpp"

namespace testing {

// Random planar graph: a jittered ring plus a few symmetric chords.
inline surfopt::Mesh random_graph(int n, std::mt19937_64& rng, int sinusoids, int chords = 3) {
    std::uniform_real_distribution<double> u(-0.15, 0.15);
    surfopt::Mesh m;
    for (int i = 0; i < n; ++i) {
        const double a = 2.0 * M_PI * i / n;
        m.vertices.emplace_back(std::cos(a) + u(rng), std::sin(a) + u(rng), 0.0);
    }
    m.edges = surfopt::geometry::cycle_edges(n);
    std::set<std::pair<int, int>> have;
    for (const auto& e : m.edges) have.insert({e[0], e[1]});
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int c = 0; c < chords; ++c) {
        const int a = pick(rng);
        const int b = pick(rng);
        if (a == b || have.count({a, b})) continue;
        have.insert({a, b});
        have.insert({b, a});
        m.edges.push_back({a, b});
        m.edges.push_back({b, a});
    }
    surfopt::geometry::build_features(m, sinusoids);
    return m;
}

inline surfopt::FieldSample random_sample(int n, std::mt19937_64& rng, int sinusoids) {
    surfopt::FieldSample s;
    s.mesh = random_graph(n, rng, sinusoids);
    std::normal_distribution<double> g(0.0, 1.0);
    s.field.resize(n);
    for (int i = 0; i < n; ++i) s.field[i] = g(rng);
    s.task = {surfopt::Task::max_stress, 0.0};
    s.performance = s.field.maxCoeff();
    return s;
}

// Axis-aligned rectangle split into 2 * nx * ny counter-clockwise triangles.
inline surfopt::Mesh rectangle(double w, double h, int nx, int ny) {
    surfopt::Mesh m;
    for (int j = 0; j <= ny; ++j) {
        for (int i = 0; i <= nx; ++i) m.vertices.emplace_back(w * i / nx, h * j / ny, 0.0);
    }
    auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            m.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            m.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    }
    m.edges = surfopt::geometry::edges_from_faces(m.faces, m.vertices.size());
    return m;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testing
