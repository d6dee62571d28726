"""Staged versus pooled SGD on loss families with known PL and smoothness constants.

Curriculum runs warm-start stage j from the endpoint of stage j-1; the pooled
run optimises the uniform mixture of all stages for the same total number of
iterations. Each iteration follows the gradient of the stage's empirical loss
over a mini-batch drawn with replacement, or over the whole stage sample when
``batch_size`` is None.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Tuple

import numpy as np

from .core import ConfigurationError, NumericError, RngStream, ordered_map
from .logger import get_logger

logger = get_logger(__name__)

NOISE_CLIP = 6.0


class LossFamily(Protocol):
    """Per-stage losses with explicit PL (mu), local convexity (L1) and smoothness (L2) constants."""

    mu: float
    l1: float
    l2: float

    @property
    def stages(self) -> int: ...

    def optimum(self, stage: int) -> np.ndarray: ...

    def pooled_optimum(self) -> np.ndarray: ...

    def sample(self, stage: int, n: int, rng: RngStream) -> np.ndarray: ...

    def population_loss(self, stage: int, theta: np.ndarray) -> float: ...

    def population_gradient(self, stage: int, theta: np.ndarray) -> np.ndarray: ...

    def empirical_gradient(self, theta: np.ndarray, samples: np.ndarray) -> np.ndarray: ...

    def empirical_minimizer(self, samples: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class QuadraticFamily:
    """f(theta; y) = ||theta - y||^2 with y ~ N(theta_j*, sigma^2 I) truncated at 6 sigma."""

    theta_stars: np.ndarray
    sigma: float
    mu: float = 2.0
    l1: float = 2.0
    l2: float = 2.0

    def __post_init__(self):
        stars = np.atleast_2d(np.asarray(self.theta_stars, dtype=np.float64))
        if stars.size == 0:
            raise ConfigurationError("at least one stage optimum is required")
        stars.flags.writeable = False
        object.__setattr__(self, "theta_stars", stars)
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be non-negative, got {self.sigma}")

    @property
    def stages(self) -> int:
        return self.theta_stars.shape[0]

    @property
    def dim(self) -> int:
        return self.theta_stars.shape[1]

    def optimum(self, stage: int) -> np.ndarray:
        return self.theta_stars[stage]

    def pooled_optimum(self) -> np.ndarray:
        return self.theta_stars.mean(axis=0)

    def sample(self, stage: int, n: int, rng: RngStream) -> np.ndarray:
        noise = rng.normal((n, self.dim), scale=self.sigma) if self.sigma > 0 else np.zeros((n, self.dim))
        noise = np.clip(noise, -NOISE_CLIP * self.sigma, NOISE_CLIP * self.sigma)
        return self.theta_stars[stage] + noise

    def population_loss(self, stage: int, theta: np.ndarray) -> float:
        """Loss up to the constant dim * sigma^2."""
        return float(np.sum((np.asarray(theta) - self.theta_stars[stage]) ** 2))

    def population_gradient(self, stage: int, theta: np.ndarray) -> np.ndarray:
        return 2.0 * (np.asarray(theta, dtype=np.float64) - self.theta_stars[stage])

    def sample_gradient(self, theta: np.ndarray, y: np.ndarray) -> np.ndarray:
        return 2.0 * (np.asarray(theta, dtype=np.float64) - y)

    def empirical_gradient(self, theta: np.ndarray, samples: np.ndarray) -> np.ndarray:
        return 2.0 * (np.asarray(theta, dtype=np.float64) - samples.mean(axis=0))

    def empirical_minimizer(self, samples: np.ndarray) -> np.ndarray:
        return samples.mean(axis=0)


def make_quadratic_family(theta_stars, sigma: float) -> QuadraticFamily:
    return QuadraticFamily(theta_stars, sigma)


@dataclass(frozen=True, eq=False)
class TheoryInstance:
    family: QuadraticFamily
    n: Tuple[int, ...]
    eta: float
    K: Tuple[int, ...]
    epsilon1: float
    U1: float = 1.0
    theta0: Optional[np.ndarray] = None
    batch_size: Optional[int] = None
    lower_slack: float = 0.02

    def __post_init__(self):
        stages = self.family.stages
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        object.__setattr__(self, "K", tuple(int(v) for v in self.K))
        if len(self.n) != stages or len(self.K) != stages:
            raise ConfigurationError(f"n and K need one entry per stage ({stages})")
        if any(v < 1 for v in self.n) or any(v < 0 for v in self.K):
            raise ConfigurationError("sample counts must be positive and iteration counts non-negative")
        limit = self.family.mu / self.family.l2 ** 2
        if not 0 < self.eta <= limit:
            raise ConfigurationError(f"eta must be in (0, mu/L2^2 = {limit}], got {self.eta}")
        if not 0 < self.epsilon1 < self.U1:
            raise ConfigurationError(f"epsilon1 must be in (0, U1={self.U1}), got {self.epsilon1}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        theta0 = np.zeros(self.family.dim) if self.theta0 is None else np.asarray(self.theta0, dtype=np.float64)
        if theta0.shape != (self.family.dim,):
            raise ConfigurationError(f"theta0 must have dimension {self.family.dim}")
        object.__setattr__(self, "theta0", theta0)

    @property
    def J(self) -> int:
        return self.family.stages

    @property
    def theta_star(self) -> np.ndarray:
        """Target of the last stage."""
        return self.family.optimum(self.J - 1)

    @property
    def delta(self) -> float:
        return float(np.linalg.norm(self.family.pooled_optimum() - self.theta_star))

    @property
    def upper_threshold(self) -> float:
        return 4.0 * self.epsilon1 / self.family.l1

    @property
    def lower_bound_applies(self) -> bool:
        return self.delta > 0 and self.epsilon1 <= self.family.l1 * self.delta ** 2 / 16.0

    @property
    def lower_threshold(self) -> float:
        return self.delta / 2.0 - self.lower_slack


def canonical_instance(sigma: float = 0.1, dim: int = 1, batch_size: Optional[int] = None) -> TheoryInstance:
    """Three stages with optima 0, 1, 2 along the first axis."""
    stars = np.zeros((3, dim))
    stars[:, 0] = [0.0, 1.0, 2.0]
    return TheoryInstance(
        make_quadratic_family(stars, sigma),
        n=(400, 400, 400),
        eta=0.25,
        K=(200, 200, 200),
        epsilon1=0.05,
        batch_size=batch_size,
    )


@dataclass(frozen=True, eq=False)
class StageTrace:
    stage: int
    start: np.ndarray
    end: np.ndarray
    distance_to_optimum: float
    distance_to_empirical_minimizer: float


@dataclass(frozen=True, eq=False)
class CurriculumResult:
    theta: np.ndarray
    stages: Tuple[StageTrace, ...]


def _stage_samples(instance: TheoryInstance, rng: RngStream) -> List[np.ndarray]:
    return [instance.family.sample(j, instance.n[j], rng.derive("samples", [j])) for j in range(instance.J)]


def _descend(instance: TheoryInstance, theta: np.ndarray, samples: np.ndarray, steps: int, rng: RngStream) -> np.ndarray:
    theta = np.array(theta, dtype=np.float64)
    for k in range(steps):
        if instance.batch_size is None:
            batch = samples
        else:
            batch = samples[rng.integers(samples.shape[0], instance.batch_size)]
        theta = theta - instance.eta * instance.family.empirical_gradient(theta, batch)
    return theta


def curriculum_run(instance: TheoryInstance, rng: RngStream) -> CurriculumResult:
    samples = _stage_samples(instance, rng)
    theta = instance.theta0
    traces = []
    for j in range(instance.J):
        start = theta
        theta = _descend(instance, start, samples[j], instance.K[j], rng.derive("curriculum", [j]))
        traces.append(
            StageTrace(
                stage=j,
                start=start,
                end=theta,
                distance_to_optimum=float(np.linalg.norm(theta - instance.family.optimum(j))),
                distance_to_empirical_minimizer=float(
                    np.linalg.norm(theta - instance.family.empirical_minimizer(samples[j]))
                ),
            )
        )
    return CurriculumResult(theta, tuple(traces))


def pooled_run(instance: TheoryInstance, rng: RngStream) -> np.ndarray:
    """SGD on the union of the stage samples for sum(K) iterations."""
    if len(set(instance.n)) != 1:
        raise ConfigurationError(f"pooled run needs equal stage sample counts, got {instance.n}")
    pooled = np.concatenate(_stage_samples(instance, rng), axis=0)
    return _descend(instance, instance.theta0, pooled, sum(instance.K), rng.derive("pooled"))


def iteration_budget(instance: TheoryInstance) -> Tuple[float, float]:
    """Sufficient iteration counts (curriculum, pooled); non-positive log terms count as 0."""
    family = instance.family
    scale = 1.0 / (family.mu * instance.eta)

    def term(distance_sq: float) -> float:
        if distance_sq <= 0:
            return 0.0
        return max(0.0, scale * math.log(family.l2 ** 2 * distance_sq / (family.mu * instance.epsilon1)))

    points = [instance.theta0] + [family.optimum(j) for j in range(instance.J)]
    k_cl = sum(term(float(np.sum((points[j] - points[j + 1]) ** 2))) for j in range(instance.J))
    k_rg = term(float(np.sum((instance.theta0 - family.pooled_optimum()) ** 2)))
    return k_cl, k_rg


def failure_probability_bound(instance: TheoryInstance, b1: float) -> float:
    """Upper bound on the probability that the head-to-head comparison fails."""
    if b1 <= 0:
        raise ConfigurationError(f"B1 must be positive, got {b1}")
    eps = instance.epsilon1
    n_rg = sum(instance.n)
    bound = math.exp(-n_rg * eps ** 2 / (2 * b1 ** 2))
    bound += sum(math.exp(-n * eps ** 2 / (2 * b1 ** 2)) for n in instance.n)
    bound += (instance.J + 1) * eps
    return min(1.0, bound)


def loss_bound(instance: TheoryInstance) -> float:
    """Bound B1 on the truncated per-sample loss over the region the iterates visit."""
    family = instance.family
    points = np.vstack([instance.theta0[None, :], family.theta_stars])
    span = float(np.max(np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)))
    radius = span + NOISE_CLIP * family.sigma * math.sqrt(family.dim)
    return radius ** 2


@dataclass(frozen=True)
class TrialResult:
    seed_index: int
    cl_error_sq: float
    cl_error: float
    rg_error: float
    rg_error_sq: float
    pass_upper: bool
    pass_lower: Optional[bool]
    head_to_head: bool


@dataclass(frozen=True, eq=False)
class TheoryReport:
    """Per-trial errors and pass rates.

    ``cl_error`` holds the squared curriculum error and ``rg_error`` the
    unsquared pooled error, the two sides of the head-to-head comparison.
    """

    trials: int
    delta: float
    upper_threshold: float
    lower_threshold: float
    lower_checked: bool
    results: Tuple[TrialResult, ...]
    iteration_budget: Tuple[float, float]
    failure_bound: float
    pass_rates: dict = field(default_factory=dict)

    @property
    def cl_error(self) -> np.ndarray:
        return np.array([r.cl_error_sq for r in self.results])

    @property
    def rg_error(self) -> np.ndarray:
        return np.array([r.rg_error for r in self.results])

    def rows(self) -> List[dict]:
        return [
            {
                "trial": r.seed_index,
                "cl_error_sq": r.cl_error_sq,
                "cl_error": r.cl_error,
                "rg_error": r.rg_error,
                "rg_error_sq": r.rg_error_sq,
                "pass_upper": int(r.pass_upper),
                "pass_lower": "" if r.pass_lower is None else int(r.pass_lower),
                "head_to_head": int(r.head_to_head),
            }
            for r in self.results
        ]

    def summary(self) -> str:
        lines = [
            f"trials: {self.trials}",
            f"delta: {self.delta:.6g}",
            f"upper bound  ||cl - theta*||^2 < {self.upper_threshold:.6g}: pass rate {self.pass_rates['upper']:.4f}",
        ]
        if self.lower_checked:
            lines.append(
                f"lower bound  ||rg - theta*|| >= {self.lower_threshold:.6g}: pass rate {self.pass_rates['lower']:.4f}"
            )
        else:
            lines.append("lower bound  skipped (precondition epsilon1 <= L1 delta^2 / 16 does not hold)")
        lines.append(
            f"head to head ||cl - theta*||^2 < ||rg - theta*||: pass rate {self.pass_rates['head_to_head']:.4f}"
        )
        lines.append("note: the comparison pits a squared norm against an unsquared one")
        lines.append(f"sufficient iterations: curriculum {self.iteration_budget[0]:.2f}, pooled {self.iteration_budget[1]:.2f}")
        lines.append(
            f"failure probability bound {self.failure_bound:.4g} vs observed "
            f"{1.0 - self.pass_rates['head_to_head']:.4g}"
        )
        return "\n".join(lines)


def run_trial(instance: TheoryInstance, rng: RngStream, seed_index: int = 0) -> TrialResult:
    theta_star = instance.theta_star
    cl = curriculum_run(instance, rng.derive("trial", [seed_index])).theta
    rg = pooled_run(instance, rng.derive("trial", [seed_index]))
    cl_error_sq = float(np.sum((cl - theta_star) ** 2))
    rg_error = float(np.linalg.norm(rg - theta_star))
    return TrialResult(
        seed_index=seed_index,
        cl_error_sq=cl_error_sq,
        cl_error=math.sqrt(cl_error_sq),
        rg_error=rg_error,
        rg_error_sq=rg_error ** 2,
        pass_upper=cl_error_sq < instance.upper_threshold,
        pass_lower=(rg_error >= instance.lower_threshold) if instance.lower_bound_applies else None,
        head_to_head=cl_error_sq < rg_error,
    )


def compare(instance: TheoryInstance, trials: int, rng: RngStream, threads: int = 1) -> TheoryReport:
    if trials < 1:
        raise ConfigurationError(f"trials must be at least 1, got {trials}")
    results = tuple(ordered_map(lambda i: run_trial(instance, rng, i), list(range(trials)), threads))
    lower = [r.pass_lower for r in results if r.pass_lower is not None]
    pass_rates = {
        "upper": float(np.mean([r.pass_upper for r in results])),
        "lower": float(np.mean(lower)) if lower else float("nan"),
        "head_to_head": float(np.mean([r.head_to_head for r in results])),
    }
    report = TheoryReport(
        trials=trials,
        delta=instance.delta,
        upper_threshold=instance.upper_threshold,
        lower_threshold=instance.lower_threshold,
        lower_checked=instance.lower_bound_applies,
        results=results,
        iteration_budget=iteration_budget(instance),
        failure_bound=failure_probability_bound(instance, loss_bound(instance)),
        pass_rates=pass_rates,
    )
    logger.info(
        f"Theory comparison over {trials} trials: upper {pass_rates['upper']:.3f}, "
        f"lower {pass_rates['lower']:.3f}, head-to-head {pass_rates['head_to_head']:.3f}"
    )
    return report


def check_assumptions(family: QuadraticFamily, rng: RngStream, points: int = 100, tol: float = 1e-9) -> None:
    """Assert PL and gradient-Lipschitz identities at random points; raises on violation."""
    for j in range(family.stages):
        thetas = family.optimum(j) + rng.derive("check", [j]).normal((points, family.dim), scale=3.0)
        for a, b in zip(thetas[:-1], thetas[1:]):
            gap = family.population_loss(j, a) - family.population_loss(j, family.optimum(j))
            grad = family.population_gradient(j, a)
            if gap > float(grad @ grad) / (2 * family.mu) + tol:
                raise NumericError(f"PL inequality violated at stage {j}", "pl")
            lhs = np.linalg.norm(family.population_gradient(j, a) - family.population_gradient(j, b))
            if lhs > family.l2 * np.linalg.norm(a - b) + tol:
                raise NumericError(f"gradient Lipschitz bound violated at stage {j}", "smoothness")
