"""Per-SCBS regret learning with Gibbs action sampling."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import InvalidConfig

__all__ = [
    "LearningRateWarning",
    "LearningSchedule",
    "LearnerState",
    "learning_rates",
    "gibbs_distribution",
    "update_learner",
    "select_action",
]


class LearningRateWarning(UserWarning):
    """A learning-rate schedule breaks a stochastic-approximation condition."""


@dataclass(frozen=True)
class LearningSchedule:
    """Polynomially decaying step sizes ``t ** -exponent``.

    The strategy must move on the slowest time scale and the utility estimate
    on the fastest one, so the exponents have to be strictly ordered.
    """

    utility_exponent: float = 0.5
    regret_exponent: float = 0.6
    strategy_exponent: float = 0.7

    def __post_init__(self):
        if not (self.strategy_exponent > self.regret_exponent > self.utility_exponent):
            raise InvalidConfig(
                "learning-rate exponents must satisfy strategy > regret > utility, got "
                f"{self.strategy_exponent}, {self.regret_exponent}, {self.utility_exponent}"
            )

    def condition_violations(self) -> list[str]:
        """Describe every step size whose sum or sum of squares misbehaves.

        ``sum t**-e`` diverges iff ``e <= 1``; ``sum t**-2e`` converges iff
        ``e > 1/2``.
        """
        problems = []
        for name, e in (
            ("utility", self.utility_exponent),
            ("regret", self.regret_exponent),
            ("strategy", self.strategy_exponent),
        ):
            if e > 1:
                problems.append(f"{name} rate t^-{e:g} is summable (exponent > 1), learning stalls")
            if e <= 0.5:
                problems.append(
                    f"{name} rate t^-{e:g} is not square-summable (exponent <= 0.5), "
                    "so its noise does not average out"
                )
        return problems

    def validate(self) -> list[str]:
        """Emit a :class:`LearningRateWarning` per violated condition and return them."""
        problems = self.condition_violations()
        for msg in problems:
            warnings.warn(msg, LearningRateWarning, stacklevel=2)
        return problems


@dataclass
class LearnerState:
    utility_estimates: np.ndarray
    regrets: np.ndarray
    strategy: np.ndarray
    time: int = 1
    boltzmann_beta: float = 20.0

    @classmethod
    def initial(cls, n_actions: int, boltzmann_beta: float = 20.0) -> "LearnerState":
        return cls(
            utility_estimates=np.zeros(n_actions),
            regrets=np.zeros(n_actions),
            strategy=np.full(n_actions, 1.0 / n_actions),
            time=1,
            boltzmann_beta=boltzmann_beta,
        )

    @property
    def action_count(self) -> int:
        return len(self.strategy)


def learning_rates(schedule: LearningSchedule, t: int):
    """Return ``(alpha, gamma, zeta)`` for instant ``t >= 1``."""
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    t = float(t)
    return (
        t ** -schedule.utility_exponent,
        t ** -schedule.regret_exponent,
        t ** -schedule.strategy_exponent,
    )


def gibbs_distribution(positive_regrets, beta: float) -> np.ndarray:
    """Boltzmann distribution ``exp(beta * r) / sum(exp(beta * r))``."""
    z = beta * np.asarray(positive_regrets, dtype=float)
    z = np.exp(z - z.max())
    return z / z.sum()


def update_learner(state: LearnerState, played_action: int, observed_utility, schedule: LearningSchedule) -> LearnerState:
    """One step of the coupled utility / regret / strategy recursions.

    All right-hand sides use the values from before the step. Pass
    ``observed_utility=None`` for an instant without feedback: the utility
    and regret estimates are then left untouched and only the strategy moves.
    """
    alpha, gamma, zeta = learning_rates(schedule, state.time)
    v_old, r_old, pi_old = state.utility_estimates, state.regrets, state.strategy

    if observed_utility is None:
        v_new, r_new = v_old, r_old
    else:
        if not np.isfinite(observed_utility):
            raise ValueError(f"observed utility must be finite, got {observed_utility}")
        if not 0 <= played_action < len(v_old):
            raise IndexError(f"action {played_action} out of range")
        v_new = v_old.copy()
        v_new[played_action] += alpha * (observed_utility - v_old[played_action])
        r_new = r_old + gamma * (v_old - observed_utility - r_old)

    target = gibbs_distribution(np.maximum(r_old, 0.0), state.boltzmann_beta)
    pi_new = pi_old + zeta * (target - pi_old)
    return replace(state, utility_estimates=v_new, regrets=r_new, strategy=pi_new, time=state.time + 1)


def select_action(state: LearnerState, rng: np.random.Generator) -> int:
    """Sample an action from the current strategy by inverse CDF."""
    cdf = np.cumsum(state.strategy)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))
