"""
Discrete checks of the entropy argument behind rotation augmentation.

A point cloud X = (U, V) is split into an orientation variable U and an
orientation-independent variable V, both over finite alphabets. Replacing the
orientation marginal by the uniform one and decoupling it from V can only raise
the joint entropy, which tightens the log|U|·|V| upper bound on the KL
divergence from any target distribution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, computed_field

from .exceptions import InvalidArgumentError

_LOGGER = logging.getLogger(__name__)

MASS_TOLERANCE = 1e-12
IDENTITY_TOLERANCE = 1e-10
DEFAULT_SIZES = ((2, 2), (3, 4), (6, 5), (8, 8))


def _plogp(p: np.ndarray) -> np.ndarray:
    return np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)


def _check_distribution(p: np.ndarray, tolerance: float = MASS_TOLERANCE) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0 or not np.all(np.isfinite(p)):
        msg = "Distribution must be non-empty and finite"
        raise InvalidArgumentError(msg)
    if np.any(p < 0):
        msg = "Distribution has negative entries"
        raise InvalidArgumentError(msg)
    if abs(float(p.sum()) - 1.0) > tolerance * max(1, p.size):
        msg = f"Distribution mass is {p.sum()!r}, expected 1"
        raise InvalidArgumentError(msg)
    return p


@dataclass(frozen=True, eq=False)
class DiscreteJoint:
    """|U|×|V| joint distribution of orientation U and orientation-independent V."""

    matrix: np.ndarray

    def __post_init__(self) -> None:  # noqa: D105
        matrix = _check_distribution(self.matrix)
        if matrix.ndim != 2:  # noqa: PLR2004
            msg = f"Joint must be a matrix, got shape {matrix.shape}"
            raise InvalidArgumentError(msg)
        matrix = matrix.copy()
        matrix.flags.writeable = False
        object.__setattr__(self, "matrix", matrix)

    @property
    def shape(self) -> tuple[int, int]:
        """(|U|, |V|)."""
        return self.matrix.shape  # type: ignore[return-value]

    def marginal_u(self) -> np.ndarray:
        """p(u) = Σ_v p(u, v)."""
        return self.matrix.sum(axis=1)

    def marginal_v(self) -> np.ndarray:
        """p(v) = Σ_u p(u, v)."""
        return self.matrix.sum(axis=0)


def _joint(j: DiscreteJoint | np.ndarray) -> DiscreteJoint:
    return j if isinstance(j, DiscreteJoint) else DiscreteJoint(np.asarray(j, dtype=np.float64))


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats, 0·log 0 := 0."""
    p = _check_distribution(p)
    return float(-np.sum(_plogp(p)))


def joint_entropy(j: DiscreteJoint | np.ndarray) -> float:
    """H(X) = H(U, V)."""
    return entropy(_joint(j).matrix.reshape(-1))


def mutual_information(j: DiscreteJoint | np.ndarray) -> float:
    """I(U; V) = H(U) + H(V) − H(X)."""
    j = _joint(j)
    return entropy(j.marginal_u()) + entropy(j.marginal_v()) - joint_entropy(j)


def mutual_information_direct(j: DiscreteJoint | np.ndarray) -> float:
    """I(U; V) = Σ p(u,v)·log(p(u,v) / (p(u)·p(v)))."""
    j = _joint(j)
    product = np.outer(j.marginal_u(), j.marginal_v())
    p = j.matrix
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0) / np.where(p > 0, product, 1.0)), 0.0)
    return float(np.sum(terms))


def augmented_joint(j: DiscreteJoint | np.ndarray) -> DiscreteJoint:
    """X_a = uniform(U) ⊗ p(v): orientations made uniform and independent of V."""
    j = _joint(j)
    size_u = j.shape[0]
    return DiscreteJoint(np.outer(np.full(size_u, 1.0 / size_u), j.marginal_v()))


def aug_entropy_gain(j: DiscreteJoint | np.ndarray) -> float:
    """H(X_a) − H(X_s); never negative."""
    j = _joint(j)
    return joint_entropy(augmented_joint(j)) - joint_entropy(j)


def aug_entropy_gain_decomposed(j: DiscreteJoint | np.ndarray) -> float:
    """The same gain as [log|U| − H(U)] + I(U; V)."""
    j = _joint(j)
    return math.log(j.shape[0]) - entropy(j.marginal_u()) + mutual_information_direct(j)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p‖q) in nats; q must be positive wherever p is."""
    p = _check_distribution(p)
    q = _check_distribution(q)
    if p.shape != q.shape:
        msg = f"Shape mismatch: {p.shape} vs {q.shape}"
        raise InvalidArgumentError(msg)
    if np.any((p > 0) & (q <= 0)):
        msg = "KL undefined: q is zero where p is positive"
        raise InvalidArgumentError(msg)
    support = p > 0
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def kl_upper_bound_gap(j: DiscreteJoint | np.ndarray) -> float:
    """
    How much tighter the augmented KL upper bound is than the source one.

    Cross-entropy over finite alphabets is bounded by log(|U|·|V|), so
    sup KL(tgt‖x) ≤ log(|U|·|V|) − H(x); the gap between the source and the
    augmented bound equals the entropy gain.
    """
    j = _joint(j)
    bound = math.log(j.shape[0] * j.shape[1])
    return (bound - joint_entropy(j)) - (bound - joint_entropy(augmented_joint(j)))


def random_joint(rng: np.random.Generator, shape: tuple[int, int], concentration: float = 1.0) -> DiscreteJoint:
    """Joint drawn from a symmetric Dirichlet."""
    flat = rng.dirichlet(np.full(shape[0] * shape[1], concentration))
    return DiscreteJoint(flat.reshape(shape))


class TheoryCheck(BaseModel):
    """Outcome of one randomized check."""

    name: str
    trials: int
    failures: int
    max_error: float

    @computed_field
    @property
    def passed(self) -> bool:
        """True when no trial failed."""
        return self.failures == 0


class TheoryReport(BaseModel):
    """All checks of one run."""

    seed: int
    trials: int
    checks: list[TheoryCheck]

    @computed_field
    @property
    def passed(self) -> bool:
        """True when every check passed."""
        return all(check.passed for check in self.checks)

    def format_table(self) -> str:
        """Fixed-width pass/fail table."""
        lines = [f"{'check':<28} {'trials':>7} {'failures':>9} {'max error':>12}  result"]
        lines.extend(
            f"{check.name:<28} {check.trials:>7d} {check.failures:>9d} {check.max_error:>12.3e}  {'PASS' if check.passed else 'FAIL'}"
            for check in self.checks
        )
        return "\n".join(lines)


def run_theory_check(trials: int = 1000, seed: int = 0, sizes: tuple[tuple[int, int], ...] = DEFAULT_SIZES) -> TheoryReport:
    """
    Run the decomposition identity, the two-path gain and the gain positivity criterion.

    Joints are drawn from symmetric Dirichlets, cycling over `sizes` and over
    concentrations 0.3, 1 and 5.
    """
    if trials < 1:
        msg = f"trials must be >= 1, got {trials}"
        raise InvalidArgumentError(msg)
    rng = np.random.default_rng(seed)
    concentrations = (0.3, 1.0, 5.0)
    decomposition = np.zeros(trials)
    two_path = np.zeros(trials)
    positivity_failures = 0
    lowest_gain = math.inf

    for trial in range(trials):
        j = random_joint(rng, sizes[trial % len(sizes)], concentrations[trial % len(concentrations)])
        h_u, h_v, h_x = entropy(j.marginal_u()), entropy(j.marginal_v()), joint_entropy(j)
        information = mutual_information_direct(j)
        decomposition[trial] = abs(h_x - (h_u + h_v - information))

        gain = aug_entropy_gain(j)
        two_path[trial] = abs(gain - aug_entropy_gain_decomposed(j))

        lowest_gain = min(lowest_gain, gain)
        skewed = float(np.abs(j.marginal_u() - 1.0 / j.shape[0]).sum()) > 1e-3  # noqa: PLR2004
        coupled = information > 1e-3  # noqa: PLR2004
        if gain < -MASS_TOLERANCE or ((skewed or coupled) and gain <= 1e-6):  # noqa: PLR2004
            positivity_failures += 1

    checks = [
        TheoryCheck(
            name="entropy_decomposition",
            trials=trials,
            failures=int(np.sum(decomposition > IDENTITY_TOLERANCE)),
            max_error=float(decomposition.max()),
        ),
        TheoryCheck(
            name="two_path_gain",
            trials=trials,
            failures=int(np.sum(two_path > IDENTITY_TOLERANCE)),
            max_error=float(two_path.max()),
        ),
        TheoryCheck(
            name="gain_positivity",
            trials=trials,
            failures=positivity_failures,
            max_error=max(0.0, -lowest_gain),
        ),
    ]
    report = TheoryReport(seed=seed, trials=trials, checks=checks)
    _LOGGER.info("Theory check over %d joints: %s", trials, "passed" if report.passed else "FAILED")
    return report
