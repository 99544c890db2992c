import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from frlab.alphabet import Alphabet, SequencePlan, make_sequence_plan, search_lambda_p_set
from frlab.cantor import build_stage, unit_stage
from frlab.estimates import (
    Cube,
    DensityOnStage,
    Grid,
    RESTRICTION_CSV_HEADER,
    WeightedNormSpec,
    bump_transform,
    decoupled_function,
    decoupling_check,
    default_C0,
    extension_norm,
    mixed_norm_inequality_check,
    restriction_report,
    weight_integral,
    weight_integral_closed_form,
    weight_overlap_constant,
    weighted_lp_norm,
    write_restriction_csv,
)
from frlab.spectral import lp_growth_of_muhat
from oracles import extension_quadratic_form


def searched(plan, p=None):
    p = p or plan.p
    return [search_lambda_p_set(plan.n_seq[j], plan.d, p, plan.t_seq[j], 10.0)[0] for j in range(plan.depth)]


@pytest.fixture(scope="module")
def small_1d():
    plan = make_sequence_plan(0.5, 1, 4, 2)
    return build_stage(plan, searched(plan), 2, seed=2)


@pytest.fixture(scope="module")
def small_2d():
    plan = make_sequence_plan(1.0, 2, 3, 2)
    return build_stage(plan, searched(plan, 5.0), 2, seed=0)


@pytest.fixture(scope="module")
def C2_1d():
    return weight_overlap_constant(1)


# -- extension norms ----------------------------------------------------------------------


def test_unit_cube_l2_extension_on_unit_interval():
    ref = math.sqrt(integrate.quad(lambda u: np.sinc(u) ** 2, 0, 1, epsrel=1e-13)[0])
    g = DensityOnStage.ones(unit_stage(1))
    assert extension_norm(unit_stage(1), g, 2.0, Cube((0.0,), 1.0), rtol=1e-8) == pytest.approx(ref, rel=1e-7)


def test_ones_density_matches_muhat_growth(small_1d, small_2d):
    for st_, p in ((small_1d, 3.0), (small_2d, 5.0)):
        R = 8.0
        J = Cube((-R,) * st_.d, 2 * R)
        a = extension_norm(st_, DensityOnStage.ones(st_), p, J, rtol=1e-5)
        b = lp_growth_of_muhat(st_, p, [R], rtol=1e-5)[0]
        assert a == pytest.approx(b, rel=1e-4)


def test_l2_norm_matches_quadratic_form(small_1d):
    rng = np.random.default_rng(5)
    g = rng.standard_normal(small_1d.T_k) + 1j * rng.standard_normal(small_1d.T_k)
    dens = DensityOnStage(small_1d, g)
    got = extension_norm(small_1d, dens, 2.0, rtol=1e-7) ** 2
    ref = extension_quadratic_form(small_1d.leaves, g, small_1d.N_k, small_1d.T_k)
    assert got == pytest.approx(ref, rel=1e-4)


def test_quadratic_form_in_two_dimensions(small_2d):
    rng = np.random.default_rng(6)
    g = rng.standard_normal(small_2d.T_k)
    got = extension_norm(small_2d, DensityOnStage(small_2d, g), 2.0, rtol=1e-6) ** 2
    ref = extension_quadratic_form(small_2d.leaves, g, small_2d.N_k, small_2d.T_k, d=2)
    assert got == pytest.approx(ref, rel=1e-4)


@given(st.floats(-3, 3).filter(lambda x: abs(x) > 1e-3), st.integers(0, 1000))
def test_extension_is_homogeneous(lam, seed):
    plan = SequencePlan((4, 8), (2, 3), 1.0, 0.5, 4.0, 1)
    B = [Alphabet.from_points([[0], [1]], 4), Alphabet.from_points([[0], [3], [4]], 8)]
    s = build_stage(plan, B, 2, seed=seed)
    g = DensityOnStage.random_signs(s, seed)
    a = extension_norm(s, g.scaled(lam), 4.0, spacing=0.25, rtol=1e-3)
    b = extension_norm(s, g, 4.0, spacing=0.25, rtol=1e-3)
    assert a == pytest.approx(abs(lam) * b, rel=1e-9)


def test_single_cube_density_modulation():
    # modulating a single-cube stage by a phase leaves |(g dmu)^| unchanged
    plan = SequencePlan((2,), (1,), 0.5, 0.5, 4.0, 1)
    s = build_stage(plan, [Alphabet.from_points([[1]], 2)], 1, seed=0)
    a = extension_norm(s, DensityOnStage(s, [1.0]), 3.0)
    b = extension_norm(s, DensityOnStage(s, [np.exp(0.7j)]), 3.0)
    assert a == pytest.approx(b, rel=1e-12)


def test_single_leaf_norm_is_independent_of_the_leaf(small_1d):
    vals = []
    for i in range(small_1d.T_k):
        g = np.zeros(small_1d.T_k)
        g[i] = 1.0
        vals.append(extension_norm(small_1d, DensityOnStage(small_1d, g), 2.0))
    assert max(vals) - min(vals) <= 1e-6 * max(vals)


def test_extension_input_errors(small_1d):
    g = DensityOnStage.ones(small_1d)
    with pytest.raises(ValueError):
        extension_norm(small_1d, g, 0.5)
    with pytest.raises(ValueError):
        extension_norm(small_1d, g, 3.0, Cube((0.0, 0.0), 4.0))
    with pytest.raises(ValueError):
        DensityOnStage(small_1d, [1.0])


def test_concentrated_density_has_unit_norm(small_2d):
    g = DensityOnStage.concentrated(small_2d, 1)
    assert g.l2_norm() == pytest.approx(1.0)
    assert np.count_nonzero(g.values) == small_2d.T_k // small_2d.T(1)


# -- restriction reports ------------------------------------------------------------------


def test_unit_stage_report_is_at_most_one():
    reps = restriction_report(unit_stage(1), 4.0, C0=2.0)
    assert [r.g_kind for r in reps] == ["ones", "random_signs", "knapp_concentrated", "power_iterated"]
    for r in reps:
        assert r.k == 0 and r.paper_bound == 1.0
        assert r.measured_ratio <= 1.0 + 1e-12


def test_power_iteration_dominates(small_1d, small_2d):
    for s, p in ((small_1d, 4.0), (small_2d, 5.0)):
        reps = {r.g_kind: r for r in restriction_report(s, p, seed=1)}
        top = reps["power_iterated"].measured_ratio
        for name in ("ones", "random_signs", "knapp_concentrated"):
            assert reps[name].measured_ratio <= top * (1 + 1e-12)
        assert reps["ones"].normalized_ratio == pytest.approx(
            reps["ones"].measured_ratio / (s.N_k ** (s.d / p) * s.T_k**-0.5)
        )


def test_restriction_is_deterministic(small_1d):
    a = [r.row() for r in restriction_report(small_1d, 4.0, seed=3)]
    b = [r.row() for r in restriction_report(small_1d, 4.0, seed=3)]
    assert a == b


def test_restriction_errors(small_1d):
    with pytest.raises(ValueError):
        restriction_report(small_1d, 2.0)
    with pytest.raises(ValueError):
        restriction_report(small_1d, 4.0, J=Cube((0.0,), 3.0))
    with pytest.raises(ValueError):
        restriction_report(small_1d, 4.0, strategies=("gaussian",))


def test_default_C0_uses_certified_constants(small_1d):
    assert default_C0(small_1d, 4.0) >= 2.0
    assert default_C0(unit_stage(2), 4.0) == 4.0


def test_restriction_csv(tmp_path, small_1d):
    reps = restriction_report(small_1d, 4.0, strategies=("ones",), C0=3.0)
    write_restriction_csv(tmp_path / "r.csv", reps)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert tuple(lines[0].split(",")) == RESTRICTION_CSV_HEADER
    assert lines[1].startswith("2,4.0,ones,")


# -- weights and weighted norms ---------------------------------------------------------------


@pytest.mark.parametrize("d", [1, 2, 3])
def test_weight_integral_closed_form(d):
    assert weight_integral(d) == pytest.approx(weight_integral_closed_form(d), rel=1e-9)


def test_weight_integral_one_dimension():
    assert weight_integral_closed_form(1) == pytest.approx(2 / 99, rel=1e-14)


@pytest.mark.parametrize("d", [1, 2])
def test_constant_function_gives_weight_integral(d):
    spec = WeightedNormSpec((0.3,) * d, 2.0, 1.0)
    assert weighted_lp_norm(lambda x: np.ones(len(x)), spec) == pytest.approx(weight_integral(d), rel=1e-8)
    raw = weighted_lp_norm(lambda x: np.ones(len(x)), spec, normalized=False)
    assert raw == pytest.approx(weight_integral(d) * 2.0**d, rel=1e-8)


def test_zero_samples_give_zero():
    spec = WeightedNormSpec((0.0,), 1.0, 4.0)
    grid = Grid((-5.0,), 0.25, (45,))
    assert weighted_lp_norm(np.zeros(45), spec, grid) == 0.0


def test_grid_and_callable_agree():
    f = lambda x: np.exp(1j * np.pi * x[:, 0]) * np.cos(0.8 * x[:, 0])  # noqa: E731
    spec = WeightedNormSpec((0.0,), 1.0, 4.0)
    ref = weighted_lp_norm(f, spec)
    vals = {}
    for h in (1 / 32, 1 / 64):
        n = int(round(12 / h)) + 1
        grid = Grid((-6.0,), h, (n,))
        x = grid.axes()[0][:, None]
        vals[h] = weighted_lp_norm(f(x), spec, grid)
    assert vals[1 / 64] == pytest.approx(ref, rel=1e-6)
    assert abs(vals[1 / 32] - vals[1 / 64]) < 1e-4 * ref


def test_grid_must_cover_dilated_cube():
    spec = WeightedNormSpec((0.0,), 1.0, 2.0)
    with pytest.raises(ValueError):
        weighted_lp_norm(np.ones(9), spec, Grid((-1.0,), 0.5, (9,)))


def test_weighted_norm_rejects_three_dimensions():
    with pytest.raises(ValueError):
        weighted_lp_norm(lambda x: np.ones(len(x)), WeightedNormSpec((0.0,) * 3, 1.0, 2.0))


def test_weight_overlap_constant_bounds(C2_1d):
    # the sum over a tiling dominates the centre term and stays below (1 + 1/2)^100 + slack
    assert C2_1d >= 1.0
    assert C2_1d <= 2 * 1.5**100


# -- decoupling ---------------------------------------------------------------------------------


def test_bump_transform_values():
    assert bump_transform(np.array([0.0]))[0] == pytest.approx(0.5)
    ref = integrate.quad(lambda u: np.sin(np.pi * u) ** 2 * np.cos(2 * np.pi * 0.3 * u), 0, 1)[0]
    ref_im = integrate.quad(lambda u: np.sin(np.pi * u) ** 2 * np.sin(2 * np.pi * 0.3 * u), 0, 1)[0]
    assert bump_transform(np.array([0.3]))[0] == pytest.approx(complex(ref, ref_im), abs=1e-12)


def test_single_cube_ratio(small_1d, C2_1d):
    c = np.zeros(small_1d.T(1))
    c[0] = 1.0
    res = decoupling_check(small_1d, 1, c, p=4.0)
    assert res.active == 1
    assert res.ratio <= C2_1d**0.25
    assert abs(res.ratio - 1) <= 0.05


def test_two_cubes_at_p2(small_1d, C2_1d):
    c = np.zeros(small_1d.T(1), dtype=complex)
    c[:2] = [1.0, -0.5j]
    res = decoupling_check(small_1d, 1, c, p=2.0)
    assert res.ratio <= math.sqrt(C2_1d)


def test_rhs_is_permutation_invariant_and_linear(small_1d):
    rng = np.random.default_rng(0)
    c = rng.standard_normal(small_1d.T(2))
    a = decoupling_check(small_1d, 2, c)
    b = decoupling_check(small_1d, 2, rng.permutation(c))
    assert a.rhs == pytest.approx(b.rhs, rel=1e-12)
    s = decoupling_check(small_1d, 2, 3 * c)
    assert s.rhs == pytest.approx(3 * a.rhs, rel=1e-12)
    assert s.lhs == pytest.approx(3 * a.lhs, rel=1e-9)


def test_multiscale_ratio_grows_slowly(small_1d):
    rng = np.random.default_rng(1)
    best = {1: 0.0, 2: 0.0}
    for _ in range(100):
        for j in (1, 2):
            c = rng.standard_normal(small_1d.T(j))
            best[j] = max(best[j], decoupling_check(small_1d, j, c).ratio)
    assert best[2] <= best[1] ** 2 * 1.5


def test_decoupled_function_is_sum_of_pieces(small_1d):
    rng = np.random.default_rng(2)
    c = rng.standard_normal(small_1d.T(1))
    x = rng.uniform(-5, 5, (20, 1))
    total = decoupled_function(small_1d, 1, c)(x)
    parts = sum(decoupled_function(small_1d, 1, np.eye(len(c))[i] * c[i])(x) for i in range(len(c)))
    assert np.allclose(total, parts, atol=1e-14)


def test_decoupling_errors(small_1d):
    with pytest.raises(ValueError):
        decoupling_check(small_1d, 3, [1.0])
    with pytest.raises(ValueError):
        decoupling_check(small_1d, 1, [1.0])
    with pytest.raises(ValueError):
        decoupling_check(small_1d, 1, np.ones(small_1d.T(1)), J=Cube((0.0,), 5.0))


# -- mixed norms -------------------------------------------------------------------------------


def test_mixed_norm_examples():
    lhs, rhs, ok = mixed_norm_inequality_check(np.eye(3), 4.0)
    assert (lhs, rhs, ok) == (3.0, pytest.approx(3.0**2), True)
    lhs, rhs, ok = mixed_norm_inequality_check(np.ones((2, 2)), 3.0)
    assert lhs == pytest.approx(2 * 2**1.5) and rhs == pytest.approx((2 * 2 ** (2 / 3)) ** 1.5) and ok
    # a single column is an equality
    lhs, rhs, ok = mixed_norm_inequality_check(np.array([[1.0], [2.0], [0.5]]), 5.0)
    assert lhs == pytest.approx(rhs) and ok


def test_mixed_norm_errors():
    with pytest.raises(ValueError):
        mixed_norm_inequality_check(-np.ones((2, 2)), 4.0)
    with pytest.raises(ValueError):
        mixed_norm_inequality_check(np.ones((2, 2)), 2.0)
    with pytest.raises(ValueError):
        mixed_norm_inequality_check(np.ones(3), 4.0)


@given(
    st.integers(1, 8),
    st.integers(1, 8),
    st.floats(2.01, 8.0),
    st.integers(0, 2**32 - 1),
)
def test_mixed_norm_holds(m, n, p, seed):
    c = np.random.default_rng(seed).exponential(size=(m, n))
    assert mixed_norm_inequality_check(c, p)[2]
