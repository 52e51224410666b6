import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lifespan_tree.cohort import partition
from lifespan_tree.errors import DomainError, InsufficientDataError, LookupFailure
from lifespan_tree.simulate import CohortSpec, PopulationSpec, desk_spec, generate_cohort
from lifespan_tree.stats import polyval
from lifespan_tree.trajectory import (
    LifespanModelSet,
    TrajectoryModel,
    assemble_fit_sample,
    bic,
    compute_age_threshold,
    divergence_from_control,
    evaluate_trajectory,
    fit_lifespan_models,
    fit_trajectory,
)


def test_threshold_constant_pool():
    assert compute_age_threshold([57.0] * 30) == 57


def test_threshold_floor_of_first_centile():
    ages = np.linspace(44.1, 90, 200)
    # h = 199*0.01 + 1 = 2.99 -> between the 2nd and 3rd sorted ages
    expected = ages[1] + 0.99 * (ages[2] - ages[1])
    assert compute_age_threshold(ages) == math.floor(expected) == 44


def test_threshold_empty():
    with pytest.raises(DomainError):
        compute_age_threshold([])


def test_bic_formula():
    assert bic(2.0, 10, 3) == pytest.approx(10 * math.log(0.2) + 3 * math.log(10))


class TestFitTrajectory:
    def test_noise_free_quadratic(self, rng):
        ages = rng.uniform(1, 94, 50)
        truth = [0.5, -0.02, 3e-4]
        m = fit_trajectory(ages, polyval(truth, ages))
        assert m.degree == 2
        np.testing.assert_allclose(m.coefficients, truth, atol=1e-8)

    def test_noise_free_constant(self, rng):
        m = fit_trajectory(rng.uniform(1, 94, 60), np.full(60, 0.8))
        assert m.degree == 0 and m.coefficients == pytest.approx((0.8,), abs=1e-12)

    def test_constant_fallback_on_noise(self, rng):
        fallbacks = 0
        for _ in range(20):
            ages = rng.uniform(20, 90, 500)
            vals = rng.standard_normal(500)
            m = fit_trajectory(ages, vals)
            if not m.bic:
                fallbacks += 1
                assert m.degree == 0
                assert m.coefficients[0] == pytest.approx(vals.mean())
        assert fallbacks >= 14

    def test_age_range_recorded(self, rng):
        ages = rng.uniform(30, 70, 40)
        m = fit_trajectory(ages, rng.standard_normal(40))
        assert (m.age_min, m.age_max) == (ages.min(), ages.max())

    def test_too_few(self):
        with pytest.raises(InsufficientDataError):
            fit_trajectory(np.arange(9.0), np.arange(9.0))

    @given(st.integers(0, 2**32 - 1), st.sampled_from([0, 1, 2, 3]))
    def test_selected_has_minimal_bic(self, seed, true_degree):
        r = np.random.default_rng(seed)
        ages = r.uniform(1, 94, 120)
        coef = [0.0, -0.03, 6e-4, -5e-6][: true_degree + 1]
        m = fit_trajectory(ages, polyval(coef, ages) + 0.5 * r.standard_normal(120))
        if m.bic:
            assert m.degree in m.bic
            assert all(m.bic[m.degree] <= v for v in m.bic.values())
        else:
            assert m.degree == 0 and len(m.coefficients) == 1


def _model(pop, coefs, lo=20.0, hi=90.0, structure=0):
    return TrajectoryModel(pop, structure, len(coefs) - 1, tuple(coefs), 100, 1.0, lo, hi)


def _set(control_coefs, patho_coefs):
    pops = {
        "CN": [_model("CN", c, structure=j) for j, c in enumerate(control_coefs)],
        "P": [_model("P", c, 40.0, 85.0, j) for j, c in enumerate(patho_coefs)],
    }
    return LifespanModelSet(pops, 40, "CN")


class TestEvaluate:
    def test_degree_zero_is_constant(self):
        s = _set([[0.7], [1.0, -0.01]], [[0.7], [1.0, -0.02]])
        for age in (20, 55, 90):
            assert evaluate_trajectory(s, "CN", age)[0][0] == 0.7

    def test_matches_horner_at_age_min(self):
        c = [1.0, -0.01, 2e-4, -1e-6]
        s = _set([c], [c])
        v, extrap = evaluate_trajectory(s, "CN", 20.0)
        assert not extrap
        assert v[0] == pytest.approx(((c[3] * 20 + c[2]) * 20 + c[1]) * 20 + c[0], abs=1e-12)

    def test_extrapolation_flag(self):
        s = _set([[0.0]], [[0.0]])
        _, extrap = evaluate_trajectory(s, "CN", 120.0)
        assert extrap

    def test_unknown_population(self):
        s = _set([[0.0]], [[0.0]])
        with pytest.raises(LookupFailure):
            evaluate_trajectory(s, "XX", 60.0)

    def test_divergence_control_is_zero(self):
        s = _set([[0.3, 0.01], [1.0]], [[0.0], [2.0]])
        assert np.all(divergence_from_control(s, "CN", 70.0) == 0)

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.floats(40, 85))
    def test_divergence_constant_offset(self, deltas, age):
        ctl = [[0.2, -0.01, 1e-4]] * len(deltas)
        pat = [[0.2 + d, -0.01, 1e-4] for d in deltas]
        s = _set(ctl, pat)
        np.testing.assert_allclose(divergence_from_control(s, "P", age), np.abs(deltas), atol=1e-9)

    def test_json_roundtrip(self, tmp_path):
        s = _set([[0.3, 0.01], [1.0]], [[0.0], [2.0, 1e-3, -2e-5]])
        p = tmp_path / "t.json"
        s.save(p)
        back = LifespanModelSet.load(p)
        assert back.age_threshold == 40 and back.control == "CN" and back.branches == ("CN", "P")
        assert back.populations == s.populations


class TestAssemble:
    @pytest.fixture
    def cohort(self):
        spec = desk_spec(("A",), n_subjects=60, seed=2)
        recs = generate_cohort(spec)
        return spec, partition(recs, ["CN", "A"], control="CN")

    def test_control_sample_unchanged(self, cohort):
        spec, part = cohort
        ages, Z = assemble_fit_sample(part, "CN", spec.normalization_model(), 55)
        assert ages.size == len(part["CN"]) and Z.shape == (60, 124)

    def test_pathology_mixes_young_controls(self, cohort):
        spec, part = cohort
        ages, _ = assemble_fit_sample(part, "A", spec.normalization_model(), 55)
        young = sum(r.age < 55 for r in part["CN"])
        assert ages.size == len(part["A"]) + young

    def test_empty_pathology(self, cohort):
        spec, part = cohort
        part.groups["A"] = []
        with pytest.raises(InsufficientDataError):
            assemble_fit_sample(part, "A", spec.normalization_model(), 55)

    def test_missing_population(self, cohort):
        spec, part = cohort
        with pytest.raises(LookupFailure):
            assemble_fit_sample(part, "B", spec.normalization_model(), 55)


def test_fitted_divergence_recovers_linear_atrophy():
    """Pathology loses 0.05 z/yr on structure 0 from 50y: divergence at 80y should be about 1.5."""
    m = 124
    flat = np.zeros((m, 2))
    patho = flat.copy()
    patho[0] = [2.5, -0.05]  # -0.05 (age - 50)
    spec = CohortSpec(
        populations=(PopulationSpec("CN", flat, (20.0, 90.0), 600),
                     PopulationSpec("AD", patho, (50.0, 90.0), 400)),
        control="CN",
        cn_mean=np.full(m, 0.5),
        cn_std=np.full(m, 0.025),
        sex_beta=np.zeros(m),
        seed=5,
    )
    recs = generate_cohort(spec)
    part = partition(recs, ["CN", "AD"], control="CN")
    models = fit_lifespan_models(part, spec.normalization_model())
    assert models.age_threshold == 50
    d = divergence_from_control(models, "AD", 80.0)
    # standard error of a fitted mean at 80y with ~100 nearby subjects is about 0.1-0.2
    assert d[0] == pytest.approx(1.5, abs=0.4)
    assert np.median(d[1:]) < 0.3
