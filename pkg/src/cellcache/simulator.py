"""Two-phase caching experiment: training/clustering, then serving."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .cache import CacheState
from .clustering import ClusteringConfig, ContentSpectralClustering, associate_clusters, strongest_cell
from .exceptions import InvalidConfig
from .learning import LearnerState, LearningSchedule, select_action, update_learner
from .radio import (
    BaseStation,
    NetworkGeometry,
    carrier_plan,
    place_small_cells,
    place_users_around,
    place_users_uniform,
    sinr_matrix,
)
from .traffic import ZipfConfig, bernoulli_arrivals, make_catalog, make_user_profiles, type_permutations

__all__ = [
    "SCHEMES",
    "PROPOSED",
    "UNCLUSTERED",
    "RANDOM",
    "SimConfig",
    "MetricsRecord",
    "World",
    "ServingState",
    "build_world",
    "run_training_phase",
    "init_serving",
    "step_serving",
    "run_episode",
    "simulate",
    "offloading_gain",
    "TRACE_COLUMNS",
]

PROPOSED = "proposed"
UNCLUSTERED = "unclustered-learning"
RANDOM = "random-caching"
SCHEMES = (PROPOSED, UNCLUSTERED, RANDOM)
POPULARITY_SCOPES = ("per-content", "per-user")
LAYOUTS = ("hotspot", "uniform")


@dataclass(frozen=True)
class SimConfig:
    """Every knob of one episode; defaults give the standard three-cell scenario."""

    num_contents: int = 30
    zipf_exponent: float = 0.8
    mean_popularity: float = 10.0
    popularity_scope: str = "per-content"
    num_scbs: int = 3
    num_sues: int = 15
    num_mues: int = 50
    num_user_types: int = 3
    scheme: str = PROPOSED
    training_instants: int = 500
    serving_instants: int = 20_000
    instant_s: float = 1e-3
    storage_capacity_files: int = 10
    utility_exponent: float = 0.5
    regret_exponent: float = 0.6
    strategy_exponent: float = 0.7
    boltzmann_beta: float = 20.0
    removal_beta_numerator: float = 10.0
    content_size_bits: float = 1e6
    delay_cap_s: float = 10.0
    macro_radius_m: float = 250.0
    small_cell_radius_m: float = 40.0
    mbs_tx_power_dbm: float = 46.0
    scbs_tx_power_dbm: float = 30.0
    bandwidth_hz: float = 5e6
    noise_density_dbm_hz: float = -174.0
    interference: str = "orthogonal"
    layout: str = "hotspot"
    hotspot_distance_m: float = 120.0
    hotspot_radius_m: float = 30.0
    kmeans_restarts: int = 10
    kmeans_max_iters: int = 100
    master_seed: int = 0

    def __post_init__(self):
        for name in ("num_contents", "num_scbs", "num_sues", "num_user_types",
                     "serving_instants", "storage_capacity_files", "kmeans_restarts",
                     "kmeans_max_iters"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("num_mues", "training_instants"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in ("instant_s", "content_size_bits", "delay_cap_s", "bandwidth_hz",
                     "macro_radius_m", "small_cell_radius_m", "removal_beta_numerator"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive, got {getattr(self, name)}")
        if self.scheme not in SCHEMES:
            raise InvalidConfig(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.popularity_scope not in POPULARITY_SCOPES:
            raise InvalidConfig(f"popularity_scope must be one of {POPULARITY_SCOPES}")
        if self.layout not in LAYOUTS:
            raise InvalidConfig(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        if self.layout == "hotspot" and not (
            self.hotspot_radius_m > 0 and self.hotspot_distance_m + self.hotspot_radius_m <= self.macro_radius_m
        ):
            raise InvalidConfig("the hotspot must lie inside the macro cell")
        carrier_plan(self.num_scbs + 1, self.interference)
        if self.boltzmann_beta < 0:
            raise InvalidConfig("boltzmann_beta must be non-negative")
        self.zipf  # validates the popularity fields
        self.schedule  # validates exponent ordering

    @property
    def zipf(self) -> ZipfConfig:
        # per-content: mean_popularity is the average rate of one content,
        # so a user's total rate is num_contents times larger
        total = self.mean_popularity * (self.num_contents if self.popularity_scope == "per-content" else 1)
        return ZipfConfig(self.num_contents, self.zipf_exponent, total)

    @property
    def schedule(self) -> LearningSchedule:
        return LearningSchedule(self.utility_exponent, self.regret_exponent, self.strategy_exponent)

    @property
    def clustering(self) -> ClusteringConfig:
        return ClusteringConfig(kmeans_restarts=self.kmeans_restarts, kmeans_max_iters=self.kmeans_max_iters)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)


@dataclass
class MetricsRecord:
    average_service_delay_s: float
    offloading_gain: float
    cache_hit_rate: float
    requests_served: int
    cache_hits: int
    mbs_served: int
    scbs_bits: float
    mbs_bits: float
    trace: list | None = None  # (t, scbs_id, action, utility, max_regret) rows


TRACE_COLUMNS = ("t", "scbs_id", "action", "observed_utility", "max_regret")


@dataclass
class World:
    """Everything fixed for an episode: geometry, users and precomputed SINR."""

    config: SimConfig
    geometry: NetworkGeometry
    catalog: object
    sue_profiles: list
    mue_profiles: list
    sue_positions: np.ndarray
    mue_positions: np.ndarray
    sue_types: np.ndarray
    sue_rates: np.ndarray
    mue_rates: np.ndarray
    sue_sinr: np.ndarray  # (B + 1, U)
    mue_sinr: np.ndarray  # (U_mue,) from the MBS
    streams: dict = field(repr=False, default_factory=dict)
    clustering: ContentSpectralClustering | None = None  # set by the proposed scheme's training

    @property
    def num_scbs(self) -> int:
        return len(self.geometry.small_cells)


_STREAMS = ("geometry", "types", "training", "serving", "kmeans", "learners", "caches")


def _streams(master_seed: int, num_scbs: int) -> dict:
    # one child stream per purpose so e.g. the request process does not
    # depend on which caching scheme consumes randomness
    children = np.random.SeedSequence(master_seed).spawn(len(_STREAMS))
    out = {name: np.random.default_rng(ss) for name, ss in zip(_STREAMS, children)}
    learner_ss = children[_STREAMS.index("learners")].spawn(num_scbs)
    cache_ss = children[_STREAMS.index("caches")].spawn(num_scbs)
    out["learners"] = [np.random.default_rng(s) for s in learner_ss]
    out["caches"] = [np.random.default_rng(s) for s in cache_ss]
    return out


def build_world(config: SimConfig) -> World:
    if config.num_sues < 1:
        raise InvalidConfig("num_sues must be positive")
    streams = _streams(config.master_seed, config.num_scbs)
    g = streams["geometry"]

    if config.layout == "hotspot":
        # small cells overlap, so any of them can serve a clustered SUE
        angle = 2 * np.pi * g.random()
        center = config.hotspot_distance_m * np.array([np.cos(angle), np.sin(angle)])
        scbs_pos = place_small_cells(g, config.num_scbs, config.hotspot_radius_m,
                                     config.small_cell_radius_m / 2, center=center)
    else:
        scbs_pos = place_small_cells(g, config.num_scbs, config.macro_radius_m, 2 * config.small_cell_radius_m)
    bs_list = [BaseStation(0, (0.0, 0.0), config.mbs_tx_power_dbm, config.bandwidth_hz)]
    bs_list += [
        BaseStation(b + 1, tuple(p), config.scbs_tx_power_dbm, config.bandwidth_hz)
        for b, p in enumerate(scbs_pos)
    ]
    geometry = NetworkGeometry(bs_list, config.macro_radius_m, config.small_cell_radius_m,
                               config.noise_density_dbm_hz)
    sue_pos = place_users_around(g, config.num_sues, scbs_pos, config.small_cell_radius_m)
    mue_pos = place_users_uniform(g, config.num_mues, config.macro_radius_m)

    catalog = make_catalog(config.zipf, config.content_size_bits)
    perms = type_permutations(config.num_user_types, config.num_contents, streams["types"])
    sues = make_user_profiles(config.num_user_types, sue_pos, catalog, permutations=perms)
    mues = make_user_profiles(config.num_user_types, mue_pos, catalog, permutations=perms,
                              is_macro_user=True, first_user_id=config.num_sues)

    sue_rates = np.vstack([p.arrival_rates for p in sues])
    mue_rates = np.vstack([p.arrival_rates for p in mues]) if mues else np.zeros((0, config.num_contents))
    carriers = carrier_plan(len(bs_list), config.interference)
    sue_sinr = sinr_matrix(geometry, sue_pos, carriers)
    mue_sinr = sinr_matrix(geometry, mue_pos, carriers)[0] if config.num_mues else np.zeros(0)
    return World(
        config=config, geometry=geometry, catalog=catalog,
        sue_profiles=sues, mue_profiles=mues,
        sue_positions=sue_pos, mue_positions=mue_pos,
        sue_types=np.array([p.user_type for p in sues]),
        sue_rates=sue_rates, mue_rates=mue_rates,
        sue_sinr=sue_sinr, mue_sinr=mue_sinr, streams=streams,
    )


def run_training_phase(world: World):
    """Collect per-SUE request histograms, then fix the SUE-to-SCBS association.

    During training every SUE is attached to its strongest small cell and all
    requests are misses, so only the histograms matter. The proposed scheme
    re-associates users by content clustering; the baselines keep the
    strongest-cell association.

    Returns
    -------
    histograms : ndarray of shape (n_sues, n_contents)
    association : ndarray of SCBS ids (1..B), one per SUE
    """
    cfg = world.config
    _, users, contents = bernoulli_arrivals(world.sue_rates, cfg.instant_s, cfg.training_instants,
                                            world.streams["training"])
    histograms = np.zeros((cfg.num_sues, cfg.num_contents), dtype=np.int64)
    np.add.at(histograms, (users, contents), 1)

    small_cells = world.geometry.small_cells
    if cfg.scheme != PROPOSED:
        return histograms, strongest_cell(small_cells, world.sue_positions)

    if (histograms.sum(axis=1) > 0).sum() < 2:
        return histograms, strongest_cell(small_cells, world.sue_positions)
    est = ContentSpectralClustering(
        k_min=cfg.clustering.k_min, k_max=cfg.clustering.k_max,
        n_init=cfg.kmeans_restarts, max_iter=cfg.kmeans_max_iters,
        random_state=world.streams["kmeans"],
    ).fit(histograms)
    world.clustering = est
    association = associate_clusters(est.labels_, est.n_clusters_, world.sue_positions, small_cells, histograms)
    return histograms, association


class UniformTape:
    """Pre-drawn uniforms handed out in order, one ``random()`` call at a time."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)
        self.cursor = 0

    def random(self) -> float:
        u = self.values[self.cursor]
        self.cursor += 1
        return float(u)


def _draw_tapes(world: World):
    """Per-SCBS uniforms for action choices (one per instant) and evictions.

    A single insertion can evict at most as many contents as fit in the
    cache, which bounds the eviction tape length.
    """
    cfg = world.config
    T = cfg.serving_instants
    sizes = world.catalog.sizes
    capacity = cfg.storage_capacity_files * sizes.max()
    max_evictions = int(min(cfg.num_contents, np.floor(capacity / sizes.min())))
    action = np.vstack([rng.random(T) for rng in world.streams["learners"]])
    evict = np.vstack([rng.random(T * max(max_evictions, 1)) for rng in world.streams["caches"]])
    return action, evict


@dataclass
class ServingState:
    association: np.ndarray
    caches: list
    learners: list | None
    action_tapes: list
    evict_tapes: list
    sue_count: int = 0
    hits: int = 0
    mbs_served: int = 0
    delay_sum: float = 0.0
    scbs_bits: float = 0.0
    mbs_bits: float = 0.0
    trace: list | None = None


def init_serving(world: World, association, trace: bool = False, tapes=None) -> ServingState:
    cfg = world.config
    sizes = world.catalog.sizes
    caches = [
        CacheState.with_file_capacity(cfg.storage_capacity_files, sizes, cfg.removal_beta_numerator)
        for _ in range(world.num_scbs)
    ]
    learners = None
    if cfg.scheme != RANDOM:
        learners = [LearnerState.initial(cfg.num_contents, cfg.boltzmann_beta) for _ in range(world.num_scbs)]
    action, evict = tapes if tapes is not None else _draw_tapes(world)
    return ServingState(
        np.asarray(association), caches, learners,
        [UniformTape(a) for a in action], [UniformTape(e) for e in evict],
        trace=[] if trace else None,
    )


def _request_delays(world, sizes, bs_index, sinr, cap):
    """Per-request delays with each BS's bandwidth split over its requests this instant."""
    cfg = world.config
    n_per_bs = np.bincount(bs_index, minlength=world.num_scbs + 1)
    share = cfg.bandwidth_hz / n_per_bs[bs_index]
    rate = share * np.log2(1.0 + sinr)
    with np.errstate(divide="ignore"):
        delay = np.where(rate > 0, sizes / np.where(rate > 0, rate, 1.0), cap)
    return np.minimum(delay, cap)


def step_serving(world: World, state: ServingState, t: int, sue_requests, mue_requests=()):
    """Advance the serving phase by one instant.

    Parameters
    ----------
    t : int
        Serving instant, starting at 1.
    sue_requests : sequence of (user, content) pairs
    mue_requests : sequence of (user, content) pairs

    Returns
    -------
    dict
        ``actions``, ``hits``, ``delays`` (per SUE request) and ``utilities``
        (per SCBS, ``None`` when idle).
    """
    cfg = world.config
    B = world.num_scbs
    schedule = cfg.schedule

    # 1. caching decisions
    actions = []
    for b in range(B):
        cache = state.caches[b]
        if state.learners is None:
            c = min(int(state.action_tapes[b].random() * cfg.num_contents), cfg.num_contents - 1)
            cache.insert_with_eviction(c, t, state.evict_tapes[b], uniform=True)
        else:
            c = select_action(state.learners[b], state.action_tapes[b])
            cache.insert_with_eviction(c, t, state.evict_tapes[b])
        actions.append(c)

    # 2-4. serve this instant's requests
    sue_requests = np.asarray(sue_requests, dtype=np.int64).reshape(-1, 2)
    mue_requests = np.asarray(mue_requests, dtype=np.int64).reshape(-1, 2)
    su, sc = sue_requests[:, 0], sue_requests[:, 1]
    cell = state.association[su]  # SCBS ids, 1..B
    hit = np.array([state.caches[q - 1].contains(c) for q, c in zip(cell, sc)], dtype=bool)
    sue_bs = np.where(hit, cell, 0)
    bs_index = np.concatenate([sue_bs, np.zeros(len(mue_requests), dtype=np.int64)])
    sinr = np.concatenate([world.sue_sinr[sue_bs, su], world.mue_sinr[mue_requests[:, 0]]])
    sizes = world.catalog.sizes[np.concatenate([sc, mue_requests[:, 1]])]
    delays = _request_delays(world, sizes, bs_index, sinr, cfg.delay_cap_s)[: len(su)]

    for q, c in zip(cell, sc):
        state.caches[q - 1].record_request(c)

    bits = world.catalog.sizes[sc]
    state.sue_count += len(su)
    state.hits += int(hit.sum())
    state.mbs_served += int((~hit).sum())
    state.delay_sum += float(delays.sum())
    state.scbs_bits += float(bits[hit].sum())
    state.mbs_bits += float(bits[~hit].sum())

    # 5. learning
    utilities = [None] * B
    if state.learners is not None:
        for b in range(B):
            mine = cell == b + 1
            if mine.any():
                utilities[b] = 1.0 / float(delays[mine].sum())
            state.learners[b] = update_learner(state.learners[b], actions[b], utilities[b], schedule)

    if state.trace is not None:
        for b in range(B):
            regret = math.nan if state.learners is None else float(state.learners[b].regrets.max())
            utility = math.nan if utilities[b] is None else utilities[b]
            state.trace.append((t, b + 1, actions[b], utility, regret))
    return {"actions": actions, "hits": hit, "delays": delays, "utilities": utilities}


def offloading_gain(scbs_bits: float, mbs_bits: float) -> float:
    """Bits delivered to SUEs by small cells over bits delivered to them by the MBS.

    Returns ``inf`` when the MBS delivered nothing.
    """
    if mbs_bits == 0:
        return math.inf
    return scbs_bits / mbs_bits


def _serving_requests(world: World):
    cfg = world.config
    T = cfg.serving_instants
    rates = np.vstack([world.sue_rates, world.mue_rates])
    times, users, contents = bernoulli_arrivals(rates, cfg.instant_s, T, world.streams["serving"])
    bounds = np.searchsorted(times, np.arange(T + 1))
    is_sue = users < cfg.num_sues
    users = np.where(is_sue, users, users - cfg.num_sues)
    return bounds, users, contents, is_sue


def _metrics(count, hits, delay_sum, scbs_bits, mbs_bits, trace=None) -> MetricsRecord:
    return MetricsRecord(
        average_service_delay_s=delay_sum / count if count else math.nan,
        offloading_gain=offloading_gain(scbs_bits, mbs_bits),
        cache_hit_rate=hits / count if count else 0.0,
        requests_served=int(count),
        cache_hits=int(hits),
        mbs_served=int(count - hits),
        scbs_bits=float(scbs_bits),
        mbs_bits=float(mbs_bits),
        trace=trace,
    )


def _run_reference(world, association, bounds, users, contents, is_sue, tapes, trace):
    state = init_serving(world, association, trace, tapes)
    for t in range(1, world.config.serving_instants + 1):
        sl = slice(bounds[t - 1], bounds[t])
        u, c, s = users[sl], contents[sl], is_sue[sl]
        step_serving(world, state, t, np.column_stack([u[s], c[s]]), np.column_stack([u[~s], c[~s]]))
    return _metrics(state.sue_count, state.hits, state.delay_sum, state.scbs_bits, state.mbs_bits, state.trace)


def _run_compiled(world, association, bounds, users, contents, is_sue, tapes, trace):
    from ._engine import serve

    cfg = world.config
    sizes = world.catalog.sizes
    out = serve(
        bounds.astype(np.int64), users.astype(np.int64), contents.astype(np.int64), is_sue,
        np.asarray(association, dtype=np.int64), world.sue_sinr, world.mue_sinr, sizes,
        float(cfg.storage_capacity_files * sizes.max()), float(cfg.bandwidth_hz), float(cfg.delay_cap_s),
        cfg.scheme != RANDOM, float(cfg.boltzmann_beta), float(cfg.removal_beta_numerator),
        float(cfg.utility_exponent), float(cfg.regret_exponent), float(cfg.strategy_exponent),
        tapes[0], tapes[1],
    )
    count, hits, delay_sum, scbs_bits, mbs_bits = out[:5]
    rows = None
    if trace:
        actions, utilities, max_regret = out[5:8]
        B, T = actions.shape
        rows = [
            (t + 1, b + 1, int(actions[b, t]), float(utilities[b, t]), float(max_regret[b, t]))
            for t in range(T) for b in range(B)
        ]
    return _metrics(count, hits, delay_sum, scbs_bits, mbs_bits, rows)


ENGINES = {"compiled": _run_compiled, "reference": _run_reference}


def simulate(world: World, trace: bool = False, engine: str = "compiled") -> MetricsRecord:
    """Train and serve on an already built world."""
    if engine not in ENGINES:
        raise InvalidConfig(f"engine must be one of {sorted(ENGINES)}, got {engine!r}")
    _, association = run_training_phase(world)
    requests = _serving_requests(world)
    tapes = _draw_tapes(world)
    return ENGINES[engine](world, association, *requests, tapes, trace)


def run_episode(config: SimConfig, trace: bool = False, engine: str = "compiled") -> MetricsRecord:
    """Build the world, train, serve, and aggregate metrics over the serving phase.

    ``engine="reference"`` steps through :func:`step_serving`; the default
    compiled loop makes the same decisions much faster.
    """
    if config.num_sues < 1:
        raise InvalidConfig("num_sues must be positive")
    return simulate(build_world(config), trace, engine)
