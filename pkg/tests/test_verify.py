import math

import numpy as np
import pytest

from dbarlab.errors import ParameterError
from dbarlab.grid import SampledField, build_grid, cut_power, unit_disc
from dbarlab.verify import (
    CERTIFIED_SHARP,
    CONVERGENT,
    DIVERGENT,
    EX26,
    EX27,
    EX35,
    INCONCLUSIVE,
    annihilation_defect,
    blowup_probe,
    build_counterexample,
    certify_sharpness,
    contour_functional,
    counterexample,
    perturbed_candidate,
    radial_oracle,
)

# mpmath values (tests/oracles.py): supported-order norms of v over (0,1) x Omega
SUPPORTED_LIMITS = {
    (EX27, 3.0): (2.0, 6.490177190549798),
    (EX26, 2.0): (2.0, 7.315368147823877),
    (EX35, 4.0): (2.5, 4.107853346899114),
}


def test_frozen_supported_limits():
    from oracles import contour_norm, disc_power_norm, ex35_disc_integral

    import mpmath as mp

    # EX27(p=3), q=2: |g|^2 = |z-1|^{-4/3}
    assert float(contour_norm(2, disc_power_norm(-4 / 3))) == pytest.approx(SUPPORTED_LIMITS[(EX27, 3.0)][1], rel=1e-12)
    # EX26(p=2, s=1.5), q=2: |g|^2 mu = |z-1|^{-3 + 1.5}
    assert float(contour_norm(2, disc_power_norm(-1.5))) == pytest.approx(SUPPORTED_LIMITS[(EX26, 2.0)][1], rel=1e-12)
    assert float(contour_norm(2.5, ex35_disc_integral(2.5, 4))) == pytest.approx(SUPPORTED_LIMITS[(EX35, 4.0)][1], rel=1e-10)
    assert mp.mpf(1)  # mpmath available


# ---------------------------------------------------------------- data

def test_ex27_datum():
    form, weight, meta = build_counterexample("ex27", 3.0, resolution=(8, 16))
    w1, w2 = form.grid.coords()
    assert np.allclose(form.components[0].values, cut_power(w2 - 1.0, -2 / 3) + 0 * w1, rtol=0, atol=1e-15)
    assert np.all(form.components[1].values == 0)
    assert meta.forbidden_order == 3.0 and weight.name == "one"


def test_ex26_datum():
    form, weight, meta = build_counterexample(EX26, 2.0, eps=1.0, s_exp=1.5, resolution=(8, 16))
    w1, w2 = form.grid.coords()
    assert np.allclose(form.components[0].values, cut_power(w2 - 1.0, -1.5) + 0 * w1, atol=1e-15)
    z = np.array([0.3 + 0.2j, -0.5j])
    assert np.allclose(weight(0 * z, z), np.abs(z - 1) ** 1.5)
    assert meta.forbidden_order == 3.0 and meta.supported_order == 2.0


def test_ex35_pulls_back():
    from dbarlab.hartogs import pull_back_form

    form, _, meta = build_counterexample(EX35, 4.0, resolution=(8, 16))
    h = pull_back_form(form)
    w1, w2 = form.grid.w_coords()
    assert np.max(np.abs(h.components[0].values - w2 * cut_power(w2 - 1.0, -0.5))) <= 1e-10
    assert np.max(np.abs(h.components[1].values)) <= 1e-10
    assert meta.inner_radius == 0.5


@pytest.mark.parametrize("s", [0.9, 1.0, 2.0, 2.5])
def test_ex26_admissible_interval(s):
    with pytest.raises(ParameterError, match=r"\(2/\(1\+eps\), 2\)"):
        counterexample(EX26, 2.0, eps=1.0, s_exp=s)


def test_counterexample_errors():
    with pytest.raises(ParameterError):
        counterexample("ex99", 2.0)
    with pytest.raises(ParameterError):
        counterexample(EX27, 1.0)
    with pytest.raises(ParameterError):
        counterexample(EX26, 2.0, eps=None, s_exp=1.5)


# ---------------------------------------------------------------- contour functional

def test_holomorphic_annihilation_callable():
    cf = contour_functional(lambda z1, z2: z1**2 * z2 + np.exp(z1) * np.conj(z2), [0.2, 0.5, 0.9], [0.1, -0.3j])
    assert np.max(np.abs(cf.values)) <= 1e-8


@pytest.mark.parametrize("case,p,eps,s", [(EX27, 3.0, None, None), (EX26, 2.0, 1.0, 1.5), (EX35, 4.0, None, None)])
def test_closed_forms_and_radial_scaling(case, p, eps, s):
    meta = counterexample(case, p, eps, s)
    radii = np.array([0.1, 0.4, 0.8])
    base = np.array([0.2 + 0.3j, -0.6, 0.1 - 0.85j]) if case != EX35 else np.array([0.7j, -0.8, 0.6 + 0.2j])
    cf = contour_functional(meta.potential, radii, base)
    assert cf.relative_error(meta.v) <= 5e-3
    scaled = np.abs(cf.values) / radii[:, None] ** 2
    assert np.max(np.abs(scaled / scaled[0] - 1)) <= 5e-3


def test_sampled_field_annihilation():
    g = build_grid([unit_disc()] * 2, [(16, 64), (16, 32)])
    meta = counterexample(EX27, 3.0)
    for seed in range(3):
        assert annihilation_defect(perturbed_candidate(g, meta, seed), meta) <= 1e-8


def test_contour_errors():
    f = lambda a, b: a
    with pytest.raises(ParameterError):
        contour_functional(f, [0.5], [0j], n_nodes=32)
    with pytest.raises(ParameterError):
        contour_functional(f, [1.2], [0j])
    g = build_grid([unit_disc()] * 2, [(8, 64), (8, 16)])
    u = SampledField(g, np.zeros(g.shape))
    with pytest.raises(ParameterError):
        contour_functional(u, [0.01], [0j])
    with pytest.raises(ParameterError):
        contour_functional(u, [0.5], [2.0])
    coarse = build_grid([unit_disc()] * 2, (8, 16))
    with pytest.raises(ParameterError):
        annihilation_defect(SampledField(coarse, np.zeros(coarse.shape)), counterexample(EX27, 3.0))


# ---------------------------------------------------------------- blow-up probe

def test_probe_of_constant_converges():
    one = lambda z: np.ones(np.shape(z))
    bv = blowup_probe(one, 2.0, levels=24)
    assert bv.verdict == CONVERGENT
    # ||2 pi r^2 i||_{L^2((0,1) x D)} = sqrt((2 pi)^2 / 5 * pi)
    assert bv.limit == pytest.approx(math.sqrt((2 * math.pi) ** 2 / 5 * math.pi), rel=1e-9)


@pytest.mark.parametrize("key", sorted(SUPPORTED_LIMITS))
def test_supported_order_matches_oracle(key):
    case, p = key
    q, ref = SUPPORTED_LIMITS[key]
    meta = counterexample(case, p, 1.0 if case == EX26 else None, 1.5 if case == EX26 else None)
    assert meta.supported_order == q
    bv = blowup_probe(meta.g, q, meta.weight, meta.inner_radius, levels=24)
    assert bv.verdict == CONVERGENT
    assert bv.limit == pytest.approx(ref, rel=1e-2)
    assert radial_oracle(meta.g, q, meta.weight, meta.inner_radius) == pytest.approx(ref, rel=1e-4)


@pytest.mark.parametrize("case,p,eps,s", [(EX27, 3.0, None, None), (EX26, 2.0, 1.0, 1.5), (EX35, 4.0, None, None)])
def test_forbidden_order_diverges(case, p, eps, s):
    meta = counterexample(case, p, eps, s)
    bv = blowup_probe(meta.g, meta.forbidden_order, meta.weight, meta.inner_radius, levels=24)
    assert bv.verdict == DIVERGENT
    assert np.all(np.diff(bv.norms) > 0)


def test_ex27_datum_norm_converges_below_p():
    meta = counterexample(EX27, 3.0)
    for q in (2.0, 2.5):
        assert blowup_probe(meta.g, q, levels=24).verdict == CONVERGENT


def test_probe_needs_levels():
    with pytest.raises(ParameterError):
        blowup_probe(lambda z: z, 2.0, levels=3)


def test_log_divergence_growth_is_slow():
    # per-level norm ratios at the forbidden order of EX27 tend to 1, not 1.5
    meta = counterexample(EX27, 3.0)
    bv = blowup_probe(meta.g, 3.0, levels=24)
    assert not bv.meets_growth_factor(1.5, 3)
    assert all(1.0 < gf < 1.05 for gf in bv.growth_factors[-3:])


# ---------------------------------------------------------------- certification

@pytest.mark.parametrize("case,p,eps,s", [(EX27, 3.0, None, None), (EX26, 2.0, 1.0, 1.5), (EX35, 4.0, None, None)])
def test_certify_sharpness(case, p, eps, s):
    rep = certify_sharpness(case, p, eps, s)
    assert rep.verdict == CERTIFIED_SHARP
    assert rep.summary["forbidden_verdict"] == DIVERGENT
    assert rep.summary["supported_verdict"] == CONVERGENT
    assert rep.summary["annihilation_defect"] <= 1e-8
    assert rep.summary["supported_oracle_error"] <= 1e-2
    assert rep.tables["trace"]


def test_certify_with_solver_diagnostic():
    rep = certify_sharpness(EX27, 3.0, solve=True, resolution=(16, 64))
    assert rep.verdict == CERTIFIED_SHARP
    assert "solver_annihilation_defect" in rep.summary
    assert np.isfinite(rep.summary["solver_annihilation_defect"])


def test_certify_reports_failed_gate():
    rep = certify_sharpness(EX27, 3.0, annihilation_tol=0.0)
    assert rep.verdict == INCONCLUSIVE
    assert rep.notes
