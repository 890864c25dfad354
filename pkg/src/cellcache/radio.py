"""Network geometry, path loss and downlink service delay."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidConfig, ZeroRate

__all__ = [
    "BaseStation",
    "NetworkGeometry",
    "MACRO",
    "SMALL",
    "dbm_to_watts",
    "path_loss_db",
    "rssi_dbm",
    "received_power_w",
    "sinr_linear",
    "sinr_matrix",
    "carrier_plan",
    "rate_bps",
    "service_delay_s",
    "place_small_cells",
    "place_users_around",
    "place_users_uniform",
]

MACRO = "macro"
SMALL = "small"
MIN_DISTANCE_M = 1.0


@dataclass(frozen=True)
class BaseStation:
    bs_id: int
    position: tuple
    tx_power_dbm: float
    bandwidth_hz: float

    def __post_init__(self):
        if not np.isfinite(self.tx_power_dbm):
            raise InvalidConfig(f"tx power of BS {self.bs_id} must be finite")
        if not self.bandwidth_hz > 0:
            raise InvalidConfig(f"bandwidth of BS {self.bs_id} must be positive")

    @property
    def link_kind(self) -> str:
        # id 0 is the macro base station
        return MACRO if self.bs_id == 0 else SMALL


@dataclass
class NetworkGeometry:
    """All base stations (MBS first) plus the radii and noise floor."""

    bs_list: list
    macro_radius: float = 250.0
    small_cell_radius: float = 40.0
    noise_density_dbm_hz: float = -174.0

    def __post_init__(self):
        if not self.bs_list or self.bs_list[0].bs_id != 0:
            raise InvalidConfig("bs_list must start with the macro base station (id 0)")
        mbs = np.asarray(self.bs_list[0].position, dtype=float)
        for bs in self.bs_list[1:]:
            if np.linalg.norm(np.asarray(bs.position, dtype=float) - mbs) > self.macro_radius + 1e-9:
                raise InvalidConfig(f"SCBS {bs.bs_id} lies outside the macro cell")

    @property
    def mbs(self) -> BaseStation:
        return self.bs_list[0]

    @property
    def small_cells(self) -> list:
        return self.bs_list[1:]

    def noise_w(self, bandwidth_hz: float) -> float:
        return dbm_to_watts(self.noise_density_dbm_hz + 10 * np.log10(bandwidth_hz))


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def path_loss_db(distance_m, link_kind: str = SMALL):
    """Distance-based path loss in dB.

    Macro links use ``128.1 + 37.6 log10(d_km)``, small-cell links
    ``140.7 + 36.7 log10(d_km)``. Distances are clamped to 1 m.
    """
    d_km = np.maximum(np.asarray(distance_m, dtype=float), MIN_DISTANCE_M) / 1000.0
    if link_kind == MACRO:
        loss = 128.1 + 37.6 * np.log10(d_km)
    elif link_kind == SMALL:
        loss = 140.7 + 36.7 * np.log10(d_km)
    else:
        raise ValueError(f"unknown link kind {link_kind!r}")
    return loss if loss.ndim else float(loss)


def _distance(bs: BaseStation, position) -> np.ndarray:
    diff = np.asarray(position, dtype=float) - np.asarray(bs.position, dtype=float)
    return np.linalg.norm(np.atleast_2d(diff), axis=-1).reshape(np.shape(diff)[:-1])


def rssi_dbm(bs: BaseStation, user_position):
    d = _distance(bs, user_position)
    out = bs.tx_power_dbm - path_loss_db(d, bs.link_kind)
    return float(out) if np.ndim(out) == 0 else out


def received_power_w(bs_list, positions) -> np.ndarray:
    """Received power in watts, shape ``(len(bs_list), n_positions)``."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    return np.vstack([dbm_to_watts(rssi_dbm(bs, positions)) for bs in bs_list])


def sinr_linear(serving_bs: BaseStation, user_position, all_bs, geometry: NetworkGeometry) -> float:
    """Downlink SINR with every other base station interfering at full power.

    Thermal noise is integrated over the serving station's full bandwidth.
    """
    if serving_bs not in all_bs:
        raise ValueError("serving_bs must be one of all_bs")
    powers = received_power_w(all_bs, user_position)[:, 0]
    idx = list(all_bs).index(serving_bs)
    interference = powers.sum() - powers[idx]
    return float(powers[idx] / (geometry.noise_w(serving_bs.bandwidth_hz) + interference))


def carrier_plan(n_bs: int, interference: str) -> np.ndarray:
    """Carrier index per base station (MBS first) for an interference model.

    ``co-channel``: everyone shares one carrier. ``split-tier``: the MBS and
    the small cells use different carriers. ``orthogonal``: every station has
    its own carrier, so links are noise-limited.
    """
    if interference == "co-channel":
        return np.zeros(n_bs, dtype=int)
    if interference == "split-tier":
        return np.minimum(np.arange(n_bs), 1)
    if interference == "orthogonal":
        return np.arange(n_bs)
    raise InvalidConfig(f"unknown interference model {interference!r}")


def sinr_matrix(geometry: NetworkGeometry, positions, carriers=None) -> np.ndarray:
    """SINR from every base station to every position, shape ``(n_bs, n_positions)``.

    Only stations sharing a carrier interfere with each other; by default all
    of them do.
    """
    powers = received_power_w(geometry.bs_list, positions)
    n_bs = len(geometry.bs_list)
    carriers = np.zeros(n_bs, dtype=int) if carriers is None else np.asarray(carriers)
    same = carriers[:, None] == carriers[None, :]
    interference = same.astype(float) @ powers - powers
    noise = np.array([geometry.noise_w(bs.bandwidth_hz) for bs in geometry.bs_list])[:, None]
    return powers / (noise + interference)


def rate_bps(bandwidth_share_hz, sinr):
    return bandwidth_share_hz * np.log2(1.0 + sinr)


def service_delay_s(content_size_bits: float, rate: float) -> float:
    """Time to deliver ``content_size_bits`` at ``rate`` bits per second."""
    if not content_size_bits > 0:
        raise ValueError("content size must be positive")
    if not rate > 0:
        raise ZeroRate(f"cannot deliver {content_size_bits} bits at rate {rate}")
    return content_size_bits / rate


def _uniform_in_disc(rng, n, radius, center=(0.0, 0.0)):
    r = radius * np.sqrt(rng.random(n))
    theta = 2 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)]) + np.asarray(center, dtype=float)


def place_small_cells(rng, n, radius, min_separation, center=(0.0, 0.0), max_tries=10_000) -> np.ndarray:
    """Uniform SCBS positions in a disc, at least ``min_separation`` apart."""
    placed = []
    for _ in range(max_tries):
        if len(placed) == n:
            break
        cand = _uniform_in_disc(rng, 1, radius, center)[0]
        if all(np.linalg.norm(cand - p) >= min_separation for p in placed):
            placed.append(cand)
    if len(placed) < n:
        raise InvalidConfig(
            f"could not place {n} small cells {min_separation} m apart within {radius} m"
        )
    return np.array(placed).reshape(n, 2)


def place_users_around(rng, n, centers, radius) -> np.ndarray:
    """Each user lands uniformly within ``radius`` of a uniformly chosen center."""
    centers = np.asarray(centers, dtype=float)
    which = rng.integers(len(centers), size=n)
    return _uniform_in_disc(rng, n, radius) + centers[which]


def place_users_uniform(rng, n, radius) -> np.ndarray:
    return _uniform_in_disc(rng, n, radius)
