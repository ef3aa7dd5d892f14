import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import roc_auc_score

from dada_kit.errors import DomainError
from dada_kit.experiments import (SweepConfig, attractor_figure, kde2d, leading_plane, mixture_counts,
                                  roc_curve, run_sweep, gini_by_contrast, gini_table, task_rng,
                                  twin_experiment)
from dada_kit.models import L63Params


def test_task_rng_is_keyed_and_reproducible():
    a = task_rng(5, 1, 2).standard_normal(4)
    np.testing.assert_array_equal(a, task_rng(5, 1, 2).standard_normal(4))
    assert not np.array_equal(a, task_rng(5, 2, 1).standard_normal(4))
    assert not np.array_equal(a, task_rng(6, 1, 2).standard_normal(4))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(4, 60), st.sampled_from([2, 5, 1000]))
def test_auc_matches_sklearn_with_ties(seed, n, levels):
    rng = np.random.default_rng(seed)
    lab = rng.integers(0, 2, n)
    if lab.all() or not lab.any():
        lab[0] = 1 - lab[0]
    s = rng.integers(0, levels, n).astype(float) + 0.3 * lab
    roc = roc_curve(s, lab)
    assert roc.auc == pytest.approx(roc_auc_score(lab, s), abs=1e-12)
    np.testing.assert_array_equal(roc.points[0], [0, 0])
    np.testing.assert_array_equal(roc.points[-1], [1, 1])
    assert np.all(np.diff(roc.points, axis=0) >= 0)


def test_gini_extremes():
    lab = np.array([0, 0, 1, 1])
    assert roc_curve([0.1, 0.2, 0.8, 0.9], lab).gini == 1.0
    assert roc_curve([0.9, 0.8, 0.2, 0.1], lab).gini == -1.0
    assert roc_curve([0.5, 0.5, 0.5, 0.5], lab).gini == 0.0


def test_roc_needs_both_classes():
    with pytest.raises(DomainError):
        roc_curve([1.0, 2.0], [1, 1])


def test_mixture_counts():
    assert mixture_counts(100, 0.01, 0.03) == (75, 25)
    assert mixture_counts(100, 0.0, 0.02) == (100, 0)
    assert sum(mixture_counts(7, 0.013, 0.021)) == 7


def test_leading_plane_is_orthonormal_and_spans_top_components(rng):
    C = np.diag([9.0, 4.0, 0.5])
    X = rng.multivariate_normal(np.zeros(3), C, size=20000)
    v1, v2 = leading_plane(X)
    assert v1 @ v1 == pytest.approx(1) and v2 @ v2 == pytest.approx(1) and abs(v1 @ v2) < 1e-12
    assert abs(v1[0]) > 0.99 and abs(v2[1]) > 0.99
    assert v1[np.argmax(np.abs(v1))] > 0


def test_kde_integrates_to_one(rng):
    P = rng.standard_normal((500, 2))
    gx = np.linspace(-7, 7, 201)
    gy = np.linspace(-6, 6, 181)
    D = kde2d(P, gx, gy)
    assert D.shape == (201, 181)
    assert np.trapezoid(np.trapezoid(D, gy, axis=1), gx) == pytest.approx(1.0, abs=1e-3)


def test_kde_single_point_is_gaussian():
    D = kde2d(np.array([[1.0, -1.0]]), [1.0, 2.0], [-1.0], bandwidth=[1.0, 2.0])
    assert D[0, 0] == pytest.approx(1 / (2 * np.pi * 2.0))
    assert D[1, 0] == pytest.approx(np.exp(-0.5) / (2 * np.pi * 2.0))


def test_attractor_figure_difference_and_forcing_shift():
    fig = attractor_figure(L63Params(lam=20, theta=-140, sigma_q=0.1), 2000, seed=1, grid_size=21)
    np.testing.assert_allclose(fig.difference, fig.density_factual - fig.density_counterfactual)
    assert not np.allclose(fig.factual.mean, fig.counterfactual.mean, atol=0.5)


def test_twin_without_forcing_has_zero_pn():
    run = twin_experiment(0.0, -140.0, 0.1, 0.5, T=30, seed=2, ensemble_size=20, attractor_samples=1000)
    np.testing.assert_array_equal(run.table.cum0, run.table.cum1)
    assert run.final_pn == 0.0


def test_twin_with_forcing_favours_factual_world():
    run = twin_experiment(20.0, -140.0, 0.1, 0.5, T=100, seed=2, ensemble_size=50, attractor_samples=2000)
    assert run.final_pn > 0
    assert run.table.t[-1] == 100


TINY = dict(lambda_grid=[0.0, 20.0], sigma_q_grid=[0.3], sigma_r_grid=[0.5], n_directions=2,
            n_eval_sequences=12, n_prob_segments=1000, attractor_samples=1000, ensemble_size=20)


@pytest.fixture(scope="module")
def tiny_sweep():
    return run_sweep(SweepConfig(seed=3, **TINY), workers=1)


def test_sweep_structure(tiny_sweep):
    r = tiny_sweep
    assert not r.failures
    assert len(r.quintuplets) == 4
    assert len(r.scores) == 4 * 12
    for q in r.quintuplets:
        assert q.p1 >= 0.01 and q.n_factual + q.n_counterfactual == 12
    lab, dada, conv = r.arrays()
    for q in r.quintuplets:
        m = np.array([s.quintuplet == q.id for s in r.scores])
        assert np.unique(conv[m]).size == 1


def test_sweep_without_forcing_is_uninformative(tiny_sweep):
    m = np.array([s.lam == 0 for s in tiny_sweep.scores])
    _, dada, _ = tiny_sweep.arrays()
    assert np.all(dada[m] == 0)


def test_sweep_is_deterministic_and_worker_independent(tiny_sweep):
    again = run_sweep(SweepConfig(seed=3, **TINY), workers=2)
    assert again.scores == tiny_sweep.scores
    assert again.quintuplets == tiny_sweep.quintuplets


def test_gini_tables(tiny_sweep):
    rows = gini_table(tiny_sweep, "lam")
    assert [r[0] for r in rows] == [0.0, 20.0] and sum(r[1] for r in rows) == 48
    crow = gini_by_contrast(tiny_sweep)
    assert sum(r[2] for r in crow) == 48


def test_sweep_config_rejects_kf():
    with pytest.raises(DomainError):
        SweepConfig(filter="kf")


def test_more_sequences_leave_event_definitions_unchanged(tiny_sweep):
    bigger = run_sweep(SweepConfig(seed=3, **dict(TINY, n_eval_sequences=24)), workers=1)
    for a, b in zip(tiny_sweep.quintuplets, bigger.quintuplets):
        assert (a.phi, a.u, a.p0, a.p1) == (b.phi, b.u, b.p0, b.p1)


def test_forced_minus_free_density_has_both_signs():
    fig = attractor_figure(L63Params(lam=20, theta=-140, sigma_q=0.1), 5000, seed=0, grid_size=41)
    assert fig.difference.max() > 0 > fig.difference.min()
