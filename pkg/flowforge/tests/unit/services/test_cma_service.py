import numpy as np
import pytest

from flowforge.core.exceptions import AllCandidatesFailedError, DimensionMismatchError, InvalidConfigError
from flowforge.core.rng import SeedPath
from flowforge.services.cma_service import CmaParameters, cma_ask, cma_init, cma_tell, rank_weights

OPTIMUM = 0.3


def sphere(x):
    return float(np.sum((np.asarray(x) - OPTIMUM) ** 2))


def _seed(g: int) -> SeedPath:
    return SeedPath(root_seed=11, path=(("generation", g),))


# --- Tests for cma_init ---

@pytest.mark.parametrize("dim, mean0, sigma0, population", [
    (0, [], 0.2, 8),
    (2, [0.5, 0.5], 0.0, 8),
    (2, [0.5, 0.5], -1.0, 8),
    (2, [0.5, 0.5], 0.2, 1),
])
def test_init_rejects_bad_settings(dim, mean0, sigma0, population):
    with pytest.raises(InvalidConfigError):
        cma_init(dim, mean0, sigma0, population)


def test_init_rejects_mismatched_shapes():
    with pytest.raises(DimensionMismatchError):
        cma_init(3, [0.5, 0.5], 0.2, 8)
    with pytest.raises(DimensionMismatchError):
        cma_init(2, [0.5, 0.5], 0.2, 8, base=[0.1, 0.2, 0.3], active_dims=[0, 5])


def test_default_weights():
    par = CmaParameters.default(5, 8)
    assert par.mu == 4
    assert par.weights[:4].sum() == pytest.approx(1.0)
    assert np.all(np.diff(par.weights[:4]) < 0)
    np.testing.assert_array_equal(par.weights[4:], 0.0)


# --- Tests for cma_ask ---

def test_ask_fills_inactive_dims_from_base():
    base = [0.1, 0.2, 0.3, 0.4]
    state = cma_init(2, [0.2, 0.4], 0.5, 6, base=base, active_dims=[1, 3])
    candidates = cma_ask(state, _seed(0))
    assert len(candidates) == 6
    for x in candidates:
        assert x.shape == (4,)
        assert (x[0], x[2]) == (0.1, 0.3)
        assert np.all((x >= 0.0) & (x <= 1.0))


def test_ask_is_deterministic():
    state = cma_init(3, [0.5] * 3, 0.2, 8)
    a, b = cma_ask(state, _seed(0)), cma_ask(state, _seed(0))
    np.testing.assert_array_equal(np.array(a), np.array(b))
    assert not np.array_equal(np.array(a), np.array(cma_ask(state, _seed(1))))


# --- Tests for cma_tell ---

def test_converges_on_sphere():
    state = cma_init(5, [0.8] * 5, 0.2, 8)
    best = np.inf
    for g in range(200):
        candidates = cma_ask(state, _seed(g))
        scores = [sphere(x) for x in candidates]
        best = min(best, min(scores))
        state = cma_tell(state, candidates, scores)
        if best < 1e-6:
            break
    assert best < 1e-6
    assert state.generation <= 200


def test_update_depends_on_ranks_only():
    state = cma_init(4, [0.6] * 4, 0.2, 8)
    candidates = cma_ask(state, _seed(0))
    scores = np.array([sphere(x) for x in candidates])
    a = cma_tell(state, candidates, scores)
    b = cma_tell(state, candidates, 3.0 * np.exp(scores) + 1.0)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.C, b.C)
    assert a.sigma == b.sigma


def test_candidate_order_does_not_matter():
    state = cma_init(3, [0.5] * 3, 0.3, 6)
    candidates = cma_ask(state, _seed(0))
    scores = [sphere(x) for x in candidates]
    perm = [3, 0, 5, 1, 4, 2]
    a = cma_tell(state, candidates, scores)
    b = cma_tell(state, [candidates[i] for i in perm], [scores[i] for i in perm])
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
    np.testing.assert_allclose(a.C, b.C, atol=1e-12)


def test_failed_candidates_rank_last():
    state = cma_init(2, [0.5, 0.5], 0.2, 4)
    candidates = cma_ask(state, _seed(0))
    scores = [0.2, np.inf, 0.1, np.nan]
    out = cma_tell(state, candidates, scores)
    # mu = 2: only the two finite candidates move the mean
    w = CmaParameters.default(2, 4).weights
    np.testing.assert_allclose(out.mean, w[0] * candidates[2] + w[1] * candidates[0])
    assert out.generation == 1 and out.evaluations == 4


def test_all_failed_raises():
    state = cma_init(2, [0.5, 0.5], 0.2, 4)
    with pytest.raises(AllCandidatesFailedError):
        cma_tell(state, cma_ask(state, _seed(0)), [np.inf, np.nan, np.inf, np.inf])


def test_tell_rejects_wrong_count():
    state = cma_init(2, [0.5, 0.5], 0.2, 4)
    with pytest.raises(DimensionMismatchError):
        cma_tell(state, cma_ask(state, _seed(0))[:3], [1.0, 2.0, 3.0])


def test_covariance_stays_symmetric_positive_definite():
    state = cma_init(3, [0.9, 0.1, 0.5], 0.4, 6)
    for g in range(30):
        candidates = cma_ask(state, _seed(g))
        state = cma_tell(state, candidates, [sphere(x) for x in candidates])
    np.testing.assert_allclose(state.C, state.C.T)
    assert np.linalg.eigvalsh(state.C).min() > 0


# --- Tests for rank_weights ---

def test_tied_scores_share_weights():
    weights = np.array([0.5, 0.3, 0.2, 0.0])
    vectors = np.array([[0.1], [0.2], [0.3], [0.4]])
    out = rank_weights(np.array([2.0, 1.0, 1.0, 5.0]), vectors, weights)
    np.testing.assert_allclose(out, [0.2, 0.4, 0.4, 0.0])
    assert out.sum() == pytest.approx(1.0)
