import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.sparse.csgraph import connected_components

from cellcache.cache import CacheState
from cellcache.clustering import build_similarity, cosine_similarity, spectral_decompose
from cellcache.learning import LearnerState, LearningSchedule, gibbs_distribution, update_learner
from cellcache.simulator import SCHEMES, SimConfig, run_episode
from cellcache.traffic import ZipfConfig, make_catalog, make_user_profiles, zipf_popularity

pytestmark = pytest.mark.property

finite = st.floats(-50, 50, allow_nan=False)


@given(C=st.integers(1, 1000), a=st.floats(0, 4), lam=st.floats(1e-3, 1e4))
def test_zipf_normalized_and_ordered(C, a, lam):
    p = zipf_popularity(ZipfConfig(C, a, lam))
    assert p.sum() == pytest.approx(lam, rel=1e-9)
    assert np.all(np.diff(p) <= 1e-12 * lam)
    if a == 0:
        np.testing.assert_allclose(p, lam / C, rtol=1e-9)


@given(C=st.integers(2, 40), types=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_profiles_permute_base_rates(C, types, seed):
    cat = make_catalog(ZipfConfig(C, 0.8, 10.0))
    for p in make_user_profiles(types, np.zeros((7, 2)), cat, np.random.default_rng(seed)):
        np.testing.assert_array_equal(np.sort(p.arrival_rates), np.sort(cat.base_popularity))
        assert p.arrival_rates.sum() == pytest.approx(10.0, rel=1e-9)


@given(r=arrays(float, st.integers(1, 30), elements=st.floats(0, 10)), beta=st.floats(0, 100))
def test_gibbs_on_simplex(r, beta):
    p = gibbs_distribution(r, beta)
    assert np.all(p >= 0) and p.sum() == pytest.approx(1.0, rel=1e-12)


@given(r=arrays(float, st.integers(2, 30), elements=st.floats(0, 10)), beta=st.floats(0, 100))
def test_gibbs_monotone(r, beta):
    p = gibbs_distribution(r, beta)
    order = np.argsort(r, kind="stable")
    assert np.all(np.diff(p[order]) >= -1e-15)


@given(r=arrays(float, st.integers(1, 30), elements=st.floats(0, 10)),
       beta=st.floats(0, 50), shift=st.floats(-100, 100))
def test_gibbs_shift_invariant(r, beta, shift):
    np.testing.assert_allclose(gibbs_distribution(r + shift, beta), gibbs_distribution(r, beta),
                               rtol=1e-9, atol=1e-300)


@settings(max_examples=20)
@given(n=st.integers(2, 12), seed=st.integers(0, 2**32 - 1))
def test_strategy_stays_on_simplex(n, seed):
    g = np.random.default_rng(seed)
    s = LearnerState.initial(n, float(g.uniform(0, 50)))
    sched = LearningSchedule()
    for _ in range(10**4):
        u = None if g.random() < 0.1 else float(g.exponential(10))
        s = update_learner(s, int(g.integers(n)), u, sched)
    assert np.all(s.strategy >= -1e-12)
    assert s.strategy.sum() == pytest.approx(1.0, abs=1e-9)


@given(h=arrays(np.int64, st.tuples(st.integers(2, 12), st.integers(1, 8)), elements=st.integers(0, 30)))
def test_laplacian_psd_and_bounded(h):
    d = spectral_decompose(build_similarity(h))
    assert d.eigenvalues.min() >= -1e-8 and d.eigenvalues.max() <= 2 + 1e-8
    assert np.all(np.diff(d.eigenvalues) >= 0)


@given(sizes=st.lists(st.integers(1, 5), min_size=1, max_size=5), seed=st.integers(0, 2**32 - 1))
def test_zero_eigenvalues_count_components(sizes, seed):
    g = np.random.default_rng(seed)
    blocks = []
    for n in sizes:
        B = g.uniform(0.1, 1.0, (n, n))
        blocks.append((B + B.T) / 2)
    S = scipy.linalg.block_diag(*blocks)
    ev = spectral_decompose(S).eigenvalues
    n_comp, _ = connected_components(S > 0, directed=False)
    assert n_comp == len(sizes)
    assert int(np.sum(np.abs(ev) < 1e-8)) == n_comp


@given(h=arrays(np.int64, 6, elements=st.integers(0, 20)),
       k=arrays(np.int64, 6, elements=st.integers(0, 20)),
       scale=st.floats(1e-3, 1e3))
def test_cosine_scale_invariant(h, k, scale):
    assert cosine_similarity(h * scale, k) == pytest.approx(cosine_similarity(h, k), rel=1e-9, abs=1e-12)
    S = build_similarity(np.vstack([h, k]))
    assert np.array_equal(S, S.T) and S.min() >= 0 and S.max() <= 1


@given(sizes=st.lists(st.floats(0.5, 4.0), min_size=3, max_size=15),
       cap=st.floats(4.0, 12.0),
       ops=st.lists(st.tuples(st.integers(0, 14), st.booleans()), max_size=60),
       seed=st.integers(0, 2**32 - 1))
def test_cache_never_exceeds_capacity(sizes, cap, ops, seed):
    sizes = np.array(sizes)
    c = CacheState(cap, sizes)
    g = np.random.default_rng(seed)
    for t, (item, uniform) in enumerate(ops, start=1):
        item %= len(sizes)
        c.record_request(int(g.integers(len(sizes))))
        c.insert_with_eviction(item, t, g, uniform=uniform)
        assert item in c
        assert c.used_bits <= cap * (1 + 1e-12)
        assert c.used_bits == pytest.approx(sizes[c.cached].sum())


@settings(max_examples=10)
@given(seed=st.integers(0, 10**6), scheme=st.sampled_from(SCHEMES), cap=st.integers(1, 30),
       z=st.floats(0, 1.2))
def test_request_conservation(seed, scheme, cap, z):
    m = run_episode(SimConfig(master_seed=seed, scheme=scheme, storage_capacity_files=cap,
                              zipf_exponent=z, serving_instants=400))
    assert m.requests_served == m.cache_hits + m.mbs_served
    assert 0.0 <= m.cache_hit_rate <= 1.0
    assert m.scbs_bits + m.mbs_bits == pytest.approx(m.requests_served * 1e6)
