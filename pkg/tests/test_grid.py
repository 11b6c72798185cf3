import numpy as np
import pytest

from axonsim.grid import (
    Functional,
    Grid,
    GridFunction,
    NodalField,
    build_grid,
    delta_functional,
    density_functional,
    eval_at,
    h10_norm,
    hminus1_norm,
    l2_norm,
    mass_bands,
    pairing,
    stiffness_bands,
)

GAUSS2 = np.polynomial.legendre.leggauss(2)


def quad_l2sq(u: GridFunction) -> float:
    """Independent oracle: per-cell 2-point Gauss quadrature of u^2.

    Exact for the squared piecewise-linear interpolant.
    """
    nodes = u.grid.nodes
    full = u.full()
    h = u.grid.h
    total = 0.0
    for j in range(u.grid.cells):
        mid = 0.5 * (nodes[j] + nodes[j + 1])
        for z, w in zip(*GAUSS2):
            x = mid + 0.5 * h * z
            frac = (x - nodes[j]) / h
            val = full[j] * (1 - frac) + full[j + 1] * frac
            total += 0.5 * h * w * val * val
    return total


def quad_gradsq(u: GridFunction) -> float:
    full = u.full()
    return float(np.sum(np.diff(full) ** 2) / u.grid.h)


def dense_riesz_norm(F: Functional) -> float:
    """Independent oracle: dense assembly and solve of (K + M) u = loads."""
    n = F.grid.n_interior
    kd, ko = stiffness_bands(F.grid)
    md, mo = mass_bands(F.grid)
    A = np.diag(kd + md)
    off = ko + mo
    A += np.diag(off, 1) + np.diag(off, -1)
    u = np.linalg.solve(A, F.loads)
    return float(np.sqrt(F.loads @ u))


def mode1(grid: Grid) -> GridFunction:
    x = grid.interior_nodes
    l = grid.half_length
    return GridFunction(grid, np.sin(np.pi * (x + l) / (2 * l)))


class TestBuildGrid:
    def test_nodes_and_spacing(self):
        g = build_grid(1.0, 4)
        assert np.allclose(g.nodes, [-1, -0.5, 0, 0.5, 1])
        assert g.h == 0.5

    def test_rejects_single_cell(self):
        with pytest.raises(ValueError):
            build_grid(1.0, 1)

    def test_rejects_nonpositive_length(self):
        with pytest.raises(ValueError):
            build_grid(0.0, 4)

    def test_interior_count(self):
        g = build_grid(2.5, 10)
        assert g.h == 0.5
        assert g.n_interior == 9


class TestL2Norm:
    def test_zero(self):
        g = build_grid(1.0, 8)
        assert l2_norm(GridFunction(g, np.zeros(7))) == 0.0

    def test_sine_mode(self):
        g = build_grid(1.0, 2000)
        u = mode1(g)
        assert l2_norm(u) == pytest.approx(1.0, abs=1e-6)
        assert l2_norm(u) ** 2 == pytest.approx(quad_l2sq(u), abs=1e-12)

    def test_single_hat(self):
        g = build_grid(1.0, 4)
        vals = np.zeros(3)
        vals[1] = 1.0
        u = GridFunction(g, vals)
        assert l2_norm(u) == pytest.approx(np.sqrt(2 * g.h / 3), rel=1e-14)
        assert l2_norm(u) ** 2 == pytest.approx(quad_l2sq(u), abs=1e-14)


class TestH10Norm:
    def test_zero(self):
        g = build_grid(1.0, 8)
        assert h10_norm(GridFunction(g, np.zeros(7))) == 0.0

    def test_sine_mode(self):
        g = build_grid(1.0, 2000)
        u = mode1(g)
        assert h10_norm(u) == pytest.approx(np.sqrt(1 + np.pi**2 / 4), abs=1e-4)

    def test_single_hat(self):
        g = build_grid(1.0, 10)
        vals = np.zeros(9)
        vals[4] = 1.0
        u = GridFunction(g, vals)
        expected = np.sqrt(2 * g.h / 3 + 2 / g.h)
        assert h10_norm(u) == pytest.approx(expected, rel=1e-14)
        quad = np.sqrt(quad_l2sq(u) + quad_gradsq(u))
        assert h10_norm(u) == pytest.approx(quad, rel=1e-13)


class TestDualNorm:
    def test_zero_loads(self):
        g = build_grid(1.0, 8)
        assert hminus1_norm(Functional(g, np.zeros(7))) == 0.0

    def test_delta_at_origin(self):
        g = build_grid(1.0, 2000)
        val = hminus1_norm(delta_functional(0.0, g))
        assert val == pytest.approx(np.sqrt(np.tanh(1.0) / 2), abs=1e-3)

    def test_delta_against_dense_solve(self):
        g = build_grid(1.0, 200)
        F = delta_functional(0.1, g)
        assert hminus1_norm(F) == pytest.approx(dense_riesz_norm(F), rel=1e-12)

    def test_density_of_sine_mode(self):
        g = build_grid(1.0, 2000)
        F = density_functional(NodalField(g, np.sin(np.pi * (g.nodes + 1) / 2)))
        assert hminus1_norm(F) == pytest.approx(1 / np.sqrt(1 + np.pi**2 / 4), abs=1e-3)
        g2 = build_grid(1.0, 120)
        F2 = density_functional(NodalField(g2, np.sin(np.pi * (g2.nodes + 1) / 2)))
        assert hminus1_norm(F2) == pytest.approx(dense_riesz_norm(F2), rel=1e-12)


class TestDelta:
    def test_at_node(self):
        g = build_grid(1.0, 4)
        F = delta_functional(0.0, g)
        assert np.allclose(F.loads, [0, 1, 0])

    def test_midway(self):
        g = build_grid(1.0, 4)
        F = delta_functional(0.25, g)
        assert np.allclose(F.loads, [0, 0.5, 0.5])

    def test_pairing_is_point_evaluation(self):
        rng = np.random.default_rng(7)
        g = build_grid(1.0, 17)
        u = GridFunction(g, rng.normal(size=g.n_interior))
        for y in rng.uniform(-0.99, 0.99, size=20):
            assert pairing(u, delta_functional(y, g)) == pytest.approx(
                eval_at(u, y), abs=1e-13
            )

    def test_rejects_boundary(self):
        g = build_grid(1.0, 4)
        with pytest.raises(ValueError):
            delta_functional(1.0, g)
        with pytest.raises(ValueError):
            delta_functional(-1.5, g)


class TestDensity:
    def test_zero(self):
        g = build_grid(1.0, 6)
        F = density_functional(NodalField(g, np.zeros(7)))
        assert np.all(F.loads == 0)

    def test_constant_one(self):
        g = build_grid(1.0, 10)
        F = density_functional(NodalField(g, np.ones(11)))
        assert np.allclose(F.loads, g.h)

    def test_sine_pairing(self):
        g = build_grid(1.0, 2000)
        u = mode1(g)
        F = density_functional(NodalField(g, u.full()))
        assert pairing(u, F) == pytest.approx(1.0, abs=1e-6)

    def test_against_quadrature(self):
        rng = np.random.default_rng(3)
        g = build_grid(1.0, 12)
        f = NodalField(g, rng.normal(size=13))
        F = density_functional(f)
        # hat x linear is quadratic per cell: Gauss-2 is exact
        nodes = g.nodes
        for j in range(1, g.cells):
            total = 0.0
            for cell in (j - 1, j):
                mid = 0.5 * (nodes[cell] + nodes[cell + 1])
                for z, w in zip(*GAUSS2):
                    x = mid + 0.5 * g.h * z
                    frac = (x - nodes[cell]) / g.h
                    fval = f.values[cell] * (1 - frac) + f.values[cell + 1] * frac
                    hat = frac if cell == j - 1 else 1 - frac
                    total += 0.5 * g.h * w * fval * hat
            assert F.loads[j - 1] == pytest.approx(total, abs=1e-14)


class TestEvalAt:
    def test_boundary_is_zero(self):
        g = build_grid(1.0, 4)
        u = GridFunction(g, np.array([1.0, 2.0, 3.0]))
        assert eval_at(u, -1.0) == 0.0
        assert eval_at(u, 1.0) == 0.0

    def test_nodal_and_midway(self):
        g = build_grid(1.0, 4)
        u = GridFunction(g, np.array([1.0, 2.0, 3.0]))
        assert eval_at(u, -0.5) == 1.0
        assert eval_at(u, -0.25) == pytest.approx(1.5)

    def test_rejects_outside(self):
        g = build_grid(1.0, 4)
        u = GridFunction(g, np.zeros(3))
        with pytest.raises(ValueError):
            eval_at(u, 1.2)


class TestPairing:
    def test_zero_functional(self):
        g = build_grid(1.0, 6)
        u = GridFunction(g, np.ones(5))
        assert pairing(u, Functional(g, np.zeros(5))) == 0.0

    def test_bilinear(self):
        rng = np.random.default_rng(11)
        g = build_grid(1.0, 9)
        phi = GridFunction(g, rng.normal(size=8))
        psi = GridFunction(g, rng.normal(size=8))
        F = Functional(g, rng.normal(size=8))
        lhs = pairing(GridFunction(g, 2 * phi.values + 3 * psi.values), F)
        assert lhs == pytest.approx(2 * pairing(phi, F) + 3 * pairing(psi, F), rel=1e-12)

    def test_grid_mismatch(self):
        u = GridFunction(build_grid(1.0, 4), np.zeros(3))
        F = Functional(build_grid(1.0, 6), np.zeros(5))
        with pytest.raises(ValueError):
            pairing(u, F)


class TestSpaceProperties:
    def test_duality_consistency(self):
        rng = np.random.default_rng(19)
        g = build_grid(1.0, 40)
        for _ in range(25):
            theta = GridFunction(g, rng.normal(size=g.n_interior))
            scale = h10_norm(theta)
            theta = (1.0 / scale) * theta
            F = Functional(g, rng.normal(size=g.n_interior))
            assert pairing(theta, F) <= hminus1_norm(F) + 1e-10

    def test_riesz_sharpness(self):
        from axonsim.grid import riesz_cholesky, riesz_solve

        rng = np.random.default_rng(23)
        g = build_grid(1.0, 30)
        F = Functional(g, rng.normal(size=g.n_interior))
        u = riesz_solve(riesz_cholesky(g), F.loads)
        theta = GridFunction(g, u)
        theta = (1.0 / h10_norm(theta)) * theta
        assert pairing(theta, F) == pytest.approx(hminus1_norm(F), abs=1e-10)

    def test_dual_norm_refinement(self):
        target = np.sqrt(np.tanh(1.0) / 2)
        errors = []
        for cells in (250, 500, 1000, 2000):
            g = build_grid(1.0, cells)
            errors.append(abs(hminus1_norm(delta_functional(0.0, g)) - target))
        for coarse, fine in zip(errors, errors[1:]):
            assert fine <= 0.6 * coarse

    def test_uniform_bound_from_energy(self):
        rng = np.random.default_rng(29)
        g = build_grid(1.5, 33)
        c = np.sqrt(2 * g.half_length)
        for _ in range(50):
            u = GridFunction(g, rng.normal(size=g.n_interior))
            assert np.max(np.abs(u.full())) <= c * h10_norm(u) + 1e-12
