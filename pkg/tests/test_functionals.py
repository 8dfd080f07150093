import numpy as np
import pytest

from haleform import (
    DifferenceOperator,
    DopNormFunctional,
    DopSemiNorm,
    EndpointSemiNorm,
    Functional,
    HistorySegment,
    IntegralQuadraticFunctional,
    L2SemiNorm,
    LadderSpec,
    LinearTerm,
    NfdeSystem,
    PreconditionError,
    QuadraticDopFunctional,
    RhsMap,
    SupNormFunctional,
    WeightedCompositeFunctional,
    WeightedSemiNorm,
    dop_apply,
    driver_derivative,
    integrate,
    phi_h_extend,
    rhs_eval,
    sample_history,
    sup_norm_diff,
    trajectory_consistency,
    trajectory_grid,
)


class TestPhiHExtend:
    def test_shift_and_hold_for_trivial_operator(self, scalar_ode_system):
        # all A_j = 0 and f = 0 history: phi_h(s) = phi(s+h) then hold phi(0)
        rhs0 = RhsMap(n=1, terms=(LinearTerm(0.0, [[0.0]]),))
        system = NfdeSystem(scalar_ode_system.dop, rhs0)
        phi = sample_history(1, 1.0, 1.0, 3, seed=6)
        h = 0.125
        ph = phi_h_extend(system, phi, h)
        for s in np.linspace(-1.0, -h, 23):
            assert np.allclose(ph.eval(float(s)), phi.eval(float(s) + h), atol=1e-12)
        for s in np.linspace(-h, 0.0, 9):
            assert np.allclose(ph.eval(float(s)), phi.eval(0.0), atol=1e-12)

    def test_hand_evaluated_neutral_extension(self, neutral_system, unit_history):
        # phi = 1, h = 0.1: on (-h, 0] the extension is 1 - (s + 0.1)
        ph = phi_h_extend(neutral_system, unit_history, 0.1)
        assert ph.eval(0.0)[0] == pytest.approx(0.9, abs=1e-14)
        for s in (-0.08, -0.05, -0.02):
            assert ph.eval(s)[0] == pytest.approx(1.0 - (s + 0.1), abs=1e-12)
        assert ph.eval(-0.1)[0] == pytest.approx(1.0, abs=1e-14)

    def test_continuity_at_junction(self, neutral_system):
        rng = np.random.default_rng(0)
        for k in range(100):
            phi = sample_history(1, 1.0, 1.0, k % 5, seed=k)
            h = float(rng.uniform(1e-3, 0.9))
            ph = phi_h_extend(neutral_system, phi, h)
            eps = 1e-12
            gap = abs(ph.eval(-h + eps)[0] - ph.eval(-h - eps)[0])
            assert gap <= 1e-9

    def test_operator_identity_on_extension(self, neutral_system):
        # D phi_h = D phi + h f(phi) exactly (delay nodes are in the new grid)
        for seed in range(10):
            phi = sample_history(1, 1.0, 1.0, 3, seed=seed)
            h = 0.0625
            ph = phi_h_extend(neutral_system, phi, h)
            lhs = dop_apply(neutral_system.dop, ph)
            rhs_v = dop_apply(neutral_system.dop, phi) + h * rhs_eval(
                neutral_system.rhs, phi
            )
            assert np.allclose(lhs, rhs_v, atol=1e-14)

    def test_h_bounds(self, neutral_system, unit_history):
        with pytest.raises(PreconditionError):
            phi_h_extend(neutral_system, unit_history, 1.0)
        with pytest.raises(PreconditionError):
            phi_h_extend(neutral_system, unit_history, 0.0)

    def test_extension_converges_to_history(self, neutral_system):
        phi = sample_history(1, 1.0, 1.0, 2, seed=12)
        sups = []
        ladder = [0.2, 0.1, 0.05, 0.025]
        for h in ladder:
            sups.append(sup_norm_diff(phi_h_extend(neutral_system, phi, h), phi))
        for a, b in zip(sups, sups[1:]):
            assert b <= 0.7 * a + 1e-12
        assert sups[-1] <= 0.2


class TestDriverDerivative:
    def test_quadratic_chain_rule_hand_case(self, neutral_system, unit_history):
        V = QuadraticDopFunctional(neutral_system.dop, [[1.0]])
        est = driver_derivative(neutral_system, V, unit_history)
        assert est.value == pytest.approx(-1.0, abs=1e-3)

    def test_constant_functional_gives_exact_zero(self, neutral_system, unit_history):
        class One(Functional):
            kind = "constant"

            def __call__(self, phi):
                return 1.0

        est = driver_derivative(neutral_system, One(), unit_history)
        assert np.all(est.quotients == 0.0)
        assert est.value == 0.0 and est.error_band == 0.0

    def test_norm_directional_derivative(self, neutral_system):
        V = DopNormFunctional(neutral_system.dop, c=2.0)
        for seed in range(10):
            phi = sample_history(1, 1.0, 1.0, 3, seed=100 + seed)
            d = dop_apply(neutral_system.dop, phi)
            if np.linalg.norm(d) < 1e-3:
                continue
            f = rhs_eval(neutral_system.rhs, phi)
            expected = 2.0 * float(d @ f) / float(np.linalg.norm(d))
            est = driver_derivative(neutral_system, V, phi)
            assert abs(est.value - expected) <= 2e-4 + est.error_band

    def test_chain_rule_identity_random(self, neutral_system, planar_system, cubic_system):
        ladder = LadderSpec(levels=14)
        for system in (neutral_system, planar_system, cubic_system):
            P = np.eye(system.n)
            V = QuadraticDopFunctional(system.dop, P)
            for seed in range(15):
                phi = sample_history(system.n, system.delta, 1.0, seed % 5, seed)
                d = dop_apply(system.dop, phi)
                f = rhs_eval(system.rhs, phi)
                expected = 2.0 * float(d @ f)
                est = driver_derivative(system, V, phi, ladder=ladder)
                assert abs(est.value - expected) <= 1e-3 * max(1.0, abs(expected))

    def test_homogeneity_degree_two(self, neutral_system):
        V = QuadraticDopFunctional(neutral_system.dop, [[1.0]])
        phi = sample_history(1, 1.0, 1.0, 2, seed=3)
        scaled = HistorySegment(1.0, phi.grid, 2.0 * phi.values, phi.interp,
                                2.0 * phi.slopes)
        base = driver_derivative(neutral_system, V, phi)
        big = driver_derivative(neutral_system, V, scaled)
        assert abs(big.value - 4.0 * base.value) <= 4.0 * base.error_band + big.error_band + 1e-9

    def test_ladder_h0_must_stay_below_min_delay(self, neutral_system, unit_history):
        V = DopNormFunctional(neutral_system.dop)
        with pytest.raises(PreconditionError):
            driver_derivative(
                neutral_system, V, unit_history, ladder=LadderSpec(h0=2.0)
            )


class TestFunctionalKinds:
    def test_quadratic_requires_psd(self, neutral_system):
        with pytest.raises(PreconditionError):
            QuadraticDopFunctional(neutral_system.dop, [[-1.0]])

    def test_integral_quadratic_value(self, neutral_system):
        # V = (D phi)^2 + int_{-1}^{0} phi(s)^2 ds at phi(s) = s + 1:
        # D phi = 1 - 0.5 * 0 = 1; integral of (s+1)^2 over [-1, 0] = 1/3
        grid = np.linspace(-1.0, 0.0, 9)
        phi = HistorySegment(1.0, grid, (grid + 1.0)[:, None])
        kernel_grid = np.linspace(-1.0, 0.0, 5)
        kernel = np.ones((5, 1, 1))
        V = IntegralQuadraticFunctional(neutral_system.dop, [[1.0]], kernel_grid, kernel)
        assert V(phi) == pytest.approx(1.0 + 1.0 / 3.0, abs=1e-10)

    def test_sup_norm_and_weighted(self, neutral_system):
        phi = HistorySegment.constant([2.0], 1.0)
        Vs = SupNormFunctional(1.5)
        assert Vs(phi) == pytest.approx(3.0)
        Vn = DopNormFunctional(neutral_system.dop)
        W = WeightedCompositeFunctional([Vs, Vn], [1.0, 2.0])
        assert W(phi) == pytest.approx(3.0 + 2.0 * 1.0)

    def test_nonnegativity_on_samples(self, neutral_system):
        V = IntegralQuadraticFunctional(
            neutral_system.dop,
            [[0.5]],
            np.linspace(-1.0, 0.0, 5),
            0.3 * np.ones((5, 1, 1)),
        )
        for seed in range(20):
            phi = sample_history(1, 1.0, 2.0, seed % 5, seed)
            assert V(phi) >= 0.0
        assert V(HistorySegment.zero(1, 1.0)) == 0.0


class TestSemiNorms:
    def test_kinds_and_domination(self, neutral_system):
        dop_sn = DopSemiNorm(neutral_system.dop)
        end_sn = EndpointSemiNorm()
        l2_sn = L2SemiNorm(1.0)
        weighted = WeightedSemiNorm([dop_sn, end_sn], [0.5, 0.5])
        for seed in range(20):
            phi = sample_history(1, 1.0, 1.0, seed % 5, seed)
            sup = phi.sup_norm()
            for sn in (dop_sn, end_sn, l2_sn, weighted):
                assert sn(phi) <= sn.domination_constant() * sup + 1e-9

    def test_absolute_homogeneity_and_triangle(self, neutral_system):
        sn = DopSemiNorm(neutral_system.dop)
        a = sample_history(1, 1.0, 1.0, 2, seed=1)
        b = HistorySegment(1.0, a.grid, np.cos(2 * a.grid)[:, None])
        ab = HistorySegment(1.0, a.grid, a.values + b.values)
        assert sn(ab) <= sn(a) + sn(b) + 1e-12
        scaled = HistorySegment(1.0, a.grid, -2.5 * a.values, a.interp, -2.5 * a.slopes)
        assert sn(scaled) == pytest.approx(2.5 * sn(a), rel=1e-12)

    def test_endpoint_attains_domination(self):
        phi = HistorySegment.constant([3.0], 1.0)
        sn = EndpointSemiNorm()
        assert sn(phi) == pytest.approx(sn.domination_constant() * phi.sup_norm())


class TestTrajectoryConsistency:
    def test_zero_rhs_both_sides_vanish(self, unit_history):
        dop = DifferenceOperator([1.0], [[[0.5]]])
        rhs = RhsMap(n=1, terms=(LinearTerm(0.5, [[0.0]]),))
        system = NfdeSystem(dop, rhs)
        traj = integrate(system, unit_history, 3.0, step=0.05)
        V = QuadraticDopFunctional(dop, [[1.0]])
        grid = trajectory_grid(traj, 10)
        res = trajectory_consistency(system, V, traj, grid, 1e-4)
        assert res.max_deviation <= 1e-8

    def test_exponential_case_relative_deviation(self, neutral_system, unit_history):
        traj = integrate(neutral_system, unit_history, 5.0, step=1e-3)
        V = QuadraticDopFunctional(neutral_system.dop, [[1.0]])
        grid = trajectory_grid(traj, 25)
        res = trajectory_consistency(neutral_system, V, traj, grid, 1e-4)
        assert res.max_relative <= 1e-2

    def test_deviation_first_order_in_fd_step(self, neutral_system, unit_history):
        traj = integrate(neutral_system, unit_history, 5.0, step=1e-3)
        V = QuadraticDopFunctional(neutral_system.dop, [[1.0]])
        grid = trajectory_grid(traj, 10)
        d1 = trajectory_consistency(neutral_system, V, traj, grid, 2e-4).max_deviation
        d2 = trajectory_consistency(neutral_system, V, traj, grid, 1e-4).max_deviation
        assert d2 <= 0.7 * d1
