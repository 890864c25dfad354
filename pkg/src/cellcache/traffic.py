"""Content catalog, typed user popularity profiles and request arrivals."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidConfig

__all__ = [
    "ZipfConfig",
    "ContentCatalog",
    "UserProfile",
    "RequestEvent",
    "zipf_popularity",
    "make_catalog",
    "type_permutations",
    "make_user_profiles",
    "sample_requests",
    "bernoulli_arrivals",
]

# above this per-instant probability, Bernoulli thinning visibly undercounts
# the Poisson process
THINNING_WARN_PROBABILITY = 0.1


@dataclass(frozen=True)
class ZipfConfig:
    num_contents: int = 30
    zipf_exponent: float = 0.8
    mean_popularity: float = 10.0

    def __post_init__(self):
        if int(self.num_contents) != self.num_contents or self.num_contents < 1:
            raise InvalidConfig(f"num_contents must be a positive integer, got {self.num_contents!r}")
        if not self.zipf_exponent >= 0:
            raise InvalidConfig(f"zipf_exponent must be >= 0, got {self.zipf_exponent!r}")
        if not self.mean_popularity > 0:
            raise InvalidConfig(f"mean_popularity must be > 0, got {self.mean_popularity!r}")


@dataclass(frozen=True)
class ContentCatalog:
    """Content sizes (bits) and the rank-ordered base request rates (1/s)."""

    sizes: np.ndarray
    base_popularity: np.ndarray

    def __post_init__(self):
        if len(self.sizes) != len(self.base_popularity):
            raise InvalidConfig("sizes and base_popularity must have the same length")
        if np.any(np.asarray(self.sizes) <= 0):
            raise InvalidConfig("content sizes must be positive")

    @property
    def num_contents(self) -> int:
        return len(self.sizes)


@dataclass
class UserProfile:
    user_id: int
    user_type: int
    position: np.ndarray
    arrival_rates: np.ndarray
    is_macro_user: bool = False


@dataclass(frozen=True, order=True)
class RequestEvent:
    time_instant: int
    user_id: int
    content_id: int


def zipf_popularity(cfg: ZipfConfig) -> np.ndarray:
    """Per-content request rates following a Zipf law.

    The i-th ranked content (1-based) gets a rate proportional to
    ``i ** -zipf_exponent``, scaled so the rates sum to ``mean_popularity``.
    """
    ranks = np.arange(1, cfg.num_contents + 1, dtype=float)
    weights = ranks ** -float(cfg.zipf_exponent)
    return weights / weights.sum() * cfg.mean_popularity


def make_catalog(cfg: ZipfConfig, content_size_bits=1e6) -> ContentCatalog:
    """Build a catalog whose sizes are either a scalar or one value per content."""
    sizes = np.broadcast_to(np.asarray(content_size_bits, dtype=float), (cfg.num_contents,)).copy()
    return ContentCatalog(sizes=sizes, base_popularity=zipf_popularity(cfg))


def type_permutations(num_types: int, num_contents: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Draw one content ranking per user type.

    Type 0 keeps the identity ranking, so a single-type population reduces to
    the plain Zipf model. The remaining rankings are uniform random
    permutations, redrawn until all types differ (when that is possible).
    """
    if num_types < 1:
        raise InvalidConfig(f"num_types must be >= 1, got {num_types}")
    perms = [np.arange(num_contents)]
    seen = {tuple(perms[0])}
    distinct_possible = num_types <= math.factorial(min(num_contents, 20))
    while len(perms) < num_types:
        p = rng.permutation(num_contents)
        key = tuple(p)
        if key in seen and distinct_possible:
            continue
        seen.add(key)
        perms.append(p)
    return perms


def make_user_profiles(
    num_types: int,
    positions,
    catalog: ContentCatalog,
    rng: np.random.Generator | None = None,
    *,
    permutations: list[np.ndarray] | None = None,
    is_macro_user: bool = False,
    first_user_id: int = 0,
) -> list[UserProfile]:
    """Create one profile per position, assigning types round-robin by user id.

    A user of type ``t`` requests content ``c`` at rate
    ``base_popularity[perm_t[c]]``. Pass ``permutations`` to share the type
    rankings between populations (e.g. small-cell and macro users); otherwise
    they are drawn from ``rng``.
    """
    if num_types < 1:
        raise InvalidConfig(f"num_types must be >= 1, got {num_types}")
    if permutations is None:
        if rng is None:
            raise ValueError("either rng or permutations is required")
        permutations = type_permutations(num_types, catalog.num_contents, rng)
    if len(permutations) < num_types:
        raise ValueError("fewer permutations than user types")
    positions = np.atleast_2d(np.asarray(positions, dtype=float)).reshape(-1, 2)
    profiles = []
    for i, pos in enumerate(positions):
        user_type = i % num_types
        profiles.append(UserProfile(
            user_id=first_user_id + i,
            user_type=user_type,
            position=pos.copy(),
            arrival_rates=catalog.base_popularity[permutations[user_type]].copy(),
            is_macro_user=is_macro_user,
        ))
    return profiles


def _rate_matrix(profiles) -> np.ndarray:
    if len(profiles) == 0:
        return np.zeros((0, 0))
    return np.vstack([p.arrival_rates for p in profiles])


def _check_thinning(probs: np.ndarray):
    if probs.size and probs.max() > THINNING_WARN_PROBABILITY:
        warnings.warn(
            f"per-instant request probability {probs.max():.3g} exceeds "
            f"{THINNING_WARN_PROBABILITY}; Bernoulli thinning undercounts Poisson arrivals",
            RuntimeWarning,
            stacklevel=3,
        )


def sample_requests(profiles, time_instant: int, dt: float, rng: np.random.Generator) -> list[RequestEvent]:
    """Sample the requests issued during one instant of length ``dt`` seconds.

    Every (user, content) pair fires independently with probability
    ``rate * dt``. Events are ordered by (user_id, content_id).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    rates = _rate_matrix(profiles)
    if rates.size == 0:
        return []
    probs = rates * dt
    _check_thinning(probs)
    fired = rng.random(probs.shape) < probs
    users, contents = np.nonzero(fired)
    return [
        RequestEvent(int(time_instant), profiles[u].user_id, int(c))
        for u, c in zip(users, contents)
    ]


def bernoulli_arrivals(rates, dt: float, num_instants: int, rng: np.random.Generator):
    """Sample a whole horizon of per-instant Bernoulli requests at once.

    Statistically identical to calling :func:`sample_requests` for every
    instant, but draws geometric inter-arrival gaps per (user, content) pair
    instead of one uniform per pair and instant.

    Parameters
    ----------
    rates : array of shape (n_users, n_contents)
        Request rates in 1/s.
    dt : float
        Instant length in seconds.
    num_instants : int
        Horizon length.

    Returns
    -------
    times, users, contents : int arrays
        Events sorted by (time, user, content).
    """
    rates = np.asarray(rates, dtype=float)
    probs = np.clip(rates * dt, 0.0, 1.0)
    _check_thinning(probs)
    flat = probs.ravel()
    active = np.flatnonzero(flat > 0)
    empty = np.zeros(0, dtype=np.int64)
    if active.size == 0 or num_instants <= 0:
        return empty, empty.copy(), empty.copy()

    p = flat[active]
    # enough gaps per pair to cover the horizon with high probability;
    # pairs that fall short are topped up below
    n_draw = int(np.ceil(num_instants * p.max() + 6 * np.sqrt(num_instants * p.max() + 1) + 4))
    gaps = rng.geometric(p[:, None], size=(active.size, n_draw))
    arrivals = np.cumsum(gaps, axis=1) - 1
    pair_idx = [np.repeat(active, n_draw)]
    times = [arrivals.ravel()]
    last = arrivals[:, -1]
    short = np.flatnonzero(last < num_instants - 1)
    while short.size:
        more = rng.geometric(p[short, None], size=(short.size, n_draw))
        more = last[short, None] + np.cumsum(more, axis=1)
        pair_idx.append(np.repeat(active[short], n_draw))
        times.append(more.ravel())
        last = last.copy()
        last[short] = more[:, -1]
        short = short[last[short] < num_instants - 1]

    pair_idx = np.concatenate(pair_idx)
    times = np.concatenate(times)
    keep = times < num_instants
    pair_idx, times = pair_idx[keep], times[keep]
    users, contents = np.divmod(pair_idx, probs.shape[1])
    order = np.lexsort((contents, users, times))
    return times[order].astype(np.int64), users[order].astype(np.int64), contents[order].astype(np.int64)
