import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from haleform import HistorySegment, PreconditionError, combine, sample_history, sup_norm_diff
from haleform.histories import fd_slopes


def test_node_values_reproduced_exactly():
    grid = np.array([-1.0, -0.6, -0.25, 0.0])
    values = np.array([[1.0], [-2.0], [0.5], [3.0]])
    for interp in ("linear", "cubic-hermite"):
        seg = HistorySegment(1.0, grid, values, interp)
        out = seg.eval(grid)
        assert np.array_equal(out, values)
        for g, v in zip(grid, values):
            assert seg.eval(float(g))[0] == v[0]


def test_eval_matches_scalar_and_vector_paths():
    seg = sample_history(2, 1.5, 1.0, 3, seed=11)
    pts = np.linspace(-1.5, 0.0, 37)
    batch = seg.eval(pts)
    for k, s in enumerate(pts):
        assert np.allclose(seg.eval(float(s)), batch[k], rtol=0, atol=0)


def test_grid_must_span_horizon():
    with pytest.raises(PreconditionError):
        HistorySegment(1.0, np.array([-0.5, 0.0]), np.array([[1.0], [1.0]]))
    with pytest.raises(PreconditionError):
        HistorySegment(1.0, np.array([-1.0, -0.5]), np.array([[1.0], [1.0]]))


def test_nonfinite_values_rejected():
    with pytest.raises(PreconditionError):
        HistorySegment(1.0, np.array([-1.0, 0.0]), np.array([[np.nan], [1.0]]))


def test_evaluation_outside_domain_raises():
    seg = HistorySegment.constant([1.0], 1.0)
    with pytest.raises(PreconditionError):
        seg.eval(0.5)
    with pytest.raises(PreconditionError):
        seg.eval(-1.5)


def test_continuity_at_nodes():
    seg = sample_history(1, 1.0, 1.0, 4, seed=3)
    eps = 1e-12
    for g in seg.grid[1:-1]:
        left = seg.eval(float(g) - eps)
        right = seg.eval(float(g) + eps)
        assert np.linalg.norm(left - right) < 1e-9


def test_fd_slopes_exact_for_quadratics():
    grid = np.array([-2.0, -1.4, -0.9, -0.3, 0.0])
    values = (grid**2 + 3 * grid)[:, None]
    slopes = fd_slopes(grid, values)
    assert np.allclose(slopes[:, 0], 2 * grid + 3, atol=1e-12)


def test_cubic_interpolation_reproduces_cubics_with_exact_slopes():
    grid = np.linspace(-1.0, 0.0, 5)
    f = lambda s: s**3 - 0.5 * s
    df = lambda s: 3 * s**2 - 0.5
    seg = HistorySegment(1.0, grid, f(grid)[:, None], slopes=df(grid)[:, None])
    pts = np.linspace(-1.0, 0.0, 101)
    assert np.max(np.abs(seg.eval(pts)[:, 0] - f(pts))) < 1e-14


def test_sample_history_roughness_zero_is_constant():
    seg = sample_history(3, 2.0, 1.0, 0, seed=42)
    assert np.allclose(seg.values, seg.values[0])
    assert seg.sup_norm() <= 1.0 + 1e-12


@pytest.mark.parametrize("seed", range(12))
def test_sample_history_sup_norm_bound_on_finer_grid(seed):
    bound = 0.8
    seg = sample_history(2, 1.0, bound, seed % 5, seed)
    pts = seg.eval(seg.refined_grid(10))
    assert np.max(np.linalg.norm(pts, axis=1)) <= bound + 1e-12


def test_sample_history_deterministic_per_seed():
    a = sample_history(2, 1.0, 1.0, 3, seed=7)
    b = sample_history(2, 1.0, 1.0, 3, seed=7)
    assert np.array_equal(a.grid, b.grid)
    assert np.array_equal(a.values, b.values)
    c = sample_history(2, 1.0, 1.0, 3, seed=8)
    assert not np.array_equal(a.values, c.values)


def test_sample_history_family_spans_kinds():
    kinds = set()
    for seed in range(40):
        seg = sample_history(1, 1.0, 1.0, 3, seed=seed)
        if np.allclose(seg.values, seg.values[0]):
            kinds.add("constant")
        else:
            kinds.add("varying")
    assert kinds == {"constant", "varying"}


def test_combine_is_linear_on_matching_grids():
    a = sample_history(1, 1.0, 1.0, 2, seed=1)
    b = HistorySegment(1.0, a.grid, np.cos(a.grid)[:, None])
    c = combine(2.0, a, -0.5, b)
    pts = np.linspace(-1.0, 0.0, 50)
    assert np.allclose(c.eval(pts), 2.0 * a.eval(pts) - 0.5 * b.eval(pts), atol=1e-12)


def test_sup_norm_diff_zero_for_identical():
    a = sample_history(2, 1.0, 1.0, 2, seed=5)
    assert sup_norm_diff(a, a) == 0.0


@settings(max_examples=25, deadline=None)
@given(
    st.integers(min_value=0, max_value=4),
    st.integers(min_value=0, max_value=10_000),
    st.floats(min_value=0.1, max_value=5.0, allow_nan=False),
)
def test_sample_history_contract(roughness, seed, bound):
    seg = sample_history(1, 1.0, bound, roughness, seed)
    assert seg.grid[0] == -1.0 and seg.grid[-1] == 0.0
    assert np.all(np.isfinite(seg.values))
    assert seg.sup_norm(10) <= bound + 1e-9 * bound
