"""Exact checks of the mixer-feedback identities on finite systems.

A finite system has agent supports ``X_1..X_n`` (with coordinates), an output
support ``Y``, real agent marginals, a generated marginal for agent ``i0``
and a conditional kernel ``P(y | x)`` tabulated over the product of the
agent supports.  Everything is computed exactly with the transportation
simplex, so the only error is floating-point rounding.

Finite supports stand in for the compact spaces with continuous densities of
the continuous statement; the joint-continuity assumption on the optimal
dual functions has no finite analogue and plays no role here.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field

import numpy as np

from .ot import TransportPlan, check_probs, pairwise_cost, w1_discrete

METRIC_TOL = 1e-9


@dataclass
class DiscreteSystem:
    supports: list[np.ndarray]
    y_support: np.ndarray
    real: list[np.ndarray]
    gen: np.ndarray
    kernel: np.ndarray
    i0: int = 0

    def __post_init__(self):
        self.supports = [np.atleast_2d(np.asarray(s, dtype=np.float64)).reshape(len(s), -1) for s in self.supports]
        self.y_support = np.asarray(self.y_support, dtype=np.float64).reshape(len(self.y_support), -1)
        self.real = [check_probs(p, tol=1e-12) for p in self.real]
        self.gen = check_probs(self.gen, tol=1e-12)
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        sizes = tuple(len(s) for s in self.supports)
        if not 0 <= self.i0 < len(sizes):
            raise ValueError(f"i0={self.i0} out of range for {len(sizes)} agents")
        if tuple(len(p) for p in self.real) != sizes or len(self.gen) != sizes[self.i0]:
            raise ValueError("marginal lengths do not match the agent supports")
        if self.kernel.shape != sizes + (len(self.y_support),):
            raise ValueError(f"kernel shape {self.kernel.shape} != {sizes + (len(self.y_support),)}")
        if (self.kernel < 0).any() or not np.allclose(self.kernel.sum(axis=-1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("every kernel row must be a probability vector")

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.supports)

    def rows_by_agent(self) -> tuple[np.ndarray, np.ndarray]:
        """Kernel as [|X_i0|, R, |Y|] plus the weights of the R other-agent configurations."""
        k = np.moveaxis(self.kernel, self.i0, 0)
        rows = k.reshape(self.sizes[self.i0], -1, len(self.y_support))
        others = [p for j, p in enumerate(self.real) if j != self.i0]
        w = functools.reduce(np.multiply.outer, others, np.ones(())).reshape(-1)
        return rows, w

    def to_dict(self) -> dict:
        return {
            "supports": [s.tolist() for s in self.supports],
            "y_support": self.y_support.tolist(),
            "real": [p.tolist() for p in self.real],
            "gen": self.gen.tolist(),
            "kernel": self.kernel.tolist(),
            "i0": self.i0,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteSystem":
        return cls([np.array(s) for s in d["supports"]], np.array(d["y_support"]),
                   [np.array(p) for p in d["real"]], np.array(d["gen"]), np.array(d["kernel"]), d["i0"])


def _output_marginal(kernel: np.ndarray, probs: list[np.ndarray]) -> np.ndarray:
    n = len(probs)
    w = functools.reduce(np.multiply.outer, probs, np.ones(()))
    flat = kernel.reshape(-1, kernel.shape[-1])
    anchor = flat[0]
    # anchored at one row so a kernel that is constant returns that row exactly
    out = anchor + np.tensordot(w, kernel - anchor, axes=n)
    return np.clip(out, 0.0, None)


def marginals(system: DiscreteSystem) -> tuple[np.ndarray, np.ndarray]:
    """Output marginals with agent i0 drawn from its real and generated law."""
    real_y = _output_marginal(system.kernel, system.real)
    probs = list(system.real)
    probs[system.i0] = system.gen
    gen_y = _output_marginal(system.kernel, probs)
    return real_y, gen_y


def w1_between_conditionals(system: DiscreteSystem, x, x_prime, y_metric: str = "euclidean") -> float:
    """W1 between the kernel rows at two full agent configurations (index tuples)."""
    x, x_prime = tuple(x), tuple(x_prime)
    for cfg in (x, x_prime):
        if len(cfg) != len(system.sizes) or any(not 0 <= c < s for c, s in zip(cfg, system.sizes)):
            raise IndexError(f"invalid configuration {cfg} for supports {system.sizes}")
    p, q = system.kernel[x], system.kernel[x_prime]
    if np.array_equal(p, q):
        return 0.0
    return w1_discrete(p, q, pairwise_cost(system.y_support, system.y_support, y_metric)).value


def induced_d0(system: DiscreteSystem, y_metric: str = "euclidean") -> np.ndarray:
    """d0(a, b) = E over the other agents of W1(P(y | <x_-, a>), P(y | <x_-, b>))."""
    rows, w = system.rows_by_agent()
    cy = pairwise_cost(system.y_support, system.y_support, y_metric)
    k = rows.shape[0]
    d0 = np.zeros((k, k))
    for a, b in itertools.combinations(range(k), 2):
        total = 0.0
        for r in range(rows.shape[1]):
            if w[r] == 0.0 or np.array_equal(rows[a, r], rows[b, r]):
                continue
            total += w[r] * w1_discrete(rows[a, r], rows[b, r], cy).value
        d0[a, b] = d0[b, a] = total
    return d0


def metric_violations(d: np.ndarray, tol: float = METRIC_TOL, strict: bool = True) -> list[str]:
    """Failed metric axioms of a distance matrix (pseudo-metric when not strict)."""
    d = np.asarray(d, dtype=np.float64)
    bad = []
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        return [f"not a square matrix: {d.shape}"]
    if not np.isfinite(d).all():
        bad.append("non-finite entries")
    if np.abs(np.diag(d)).max(initial=0.0) > tol:
        bad.append("non-zero diagonal")
    if (d < -tol).any():
        bad.append("negative entries")
    if np.abs(d - d.T).max(initial=0.0) > tol:
        bad.append("not symmetric")
    # d[i, k] <= d[i, j] + d[j, k] for all i, j, k
    slack = d[:, None, :] - (d[:, :, None] + d[None, :, :])
    if slack.size and slack.max() > tol:
        bad.append(f"triangle inequality violated by {slack.max():.3g}")
    if strict:
        off = d[~np.eye(len(d), dtype=bool)]
        if (off <= tol).any():
            bad.append("distinct points at zero distance")
    return bad


def ground_metric(system: DiscreteSystem, metric) -> np.ndarray:
    if isinstance(metric, str):
        pts = system.supports[system.i0]
        return pairwise_cost(pts, pts, metric)
    return np.asarray(metric, dtype=np.float64)


@dataclass
class IdentityCheck:
    lhs: float
    rhs: float
    coupling: np.ndarray = field(repr=False)

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)


def verify_theorem1(system: DiscreteSystem, d="euclidean", y_metric: str = "euclidean",
                    d0: np.ndarray | None = None) -> IdentityCheck:
    """Both sides of the feedback identity for ground metric ``d`` on X_i0.

    lhs = W1(P^r_y, P^g_y) on Y.  rhs integrates d0 against an optimal
    coupling of (P^r_i0, P^g_i0) under ``d``.
    """
    dm = ground_metric(system, d)
    problems = metric_violations(dm)
    if problems:
        raise ValueError(f"ground metric on X_i0 is not a metric: {', '.join(problems)}")
    real_y, gen_y = marginals(system)
    cy = pairwise_cost(system.y_support, system.y_support, y_metric)
    lhs = w1_discrete(real_y, gen_y, cy).value
    if d0 is None:
        d0 = induced_d0(system, y_metric)
    plan = w1_discrete(system.real[system.i0], system.gen, dm).plan
    return IdentityCheck(lhs=lhs, rhs=float((plan * d0).sum()), coupling=plan)


@dataclass
class InducedMetricReport:
    d0: np.ndarray = field(repr=False)
    is_pseudometric: bool
    is_metric: bool
    injective: bool
    zero_pairs: list[tuple[int, int]]

    @property
    def counterexample(self) -> tuple[int, int] | None:
        return self.zero_pairs[0] if self.zero_pairs else None


def is_injective(system: DiscreteSystem, atol: float = 0.0) -> bool:
    """x_i0 -> P(y | <x_-, x_i0>) is one-to-one for every other-agent configuration."""
    rows, _ = system.rows_by_agent()
    for r in range(rows.shape[1]):
        for a, b in itertools.combinations(range(rows.shape[0]), 2):
            if np.allclose(rows[a, r], rows[b, r], rtol=0, atol=atol):
                return False
    return True


def verify_lemma1(system: DiscreteSystem, y_metric: str = "euclidean", tol: float = METRIC_TOL) -> InducedMetricReport:
    d0 = induced_d0(system, y_metric)
    k = len(d0)
    zero = [(a, b) for a, b in itertools.combinations(range(k), 2) if d0[a, b] <= tol]
    return InducedMetricReport(
        d0=d0,
        is_pseudometric=not metric_violations(d0, tol, strict=False),
        is_metric=not metric_violations(d0, tol, strict=True),
        injective=is_injective(system),
        zero_pairs=zero,
    )


def corollary_identity(system: DiscreteSystem, y_metric: str = "euclidean",
                       d0: np.ndarray | None = None) -> tuple[float, float, float]:
    """(W1(P^r_y, P^g_y), W1 under d0 between P^r_i0 and P^g_i0, |difference|)."""
    if d0 is None:
        d0 = induced_d0(system, y_metric)
    real_y, gen_y = marginals(system)
    cy = pairwise_cost(system.y_support, system.y_support, y_metric)
    lhs = w1_discrete(real_y, gen_y, cy).value
    rhs = w1_discrete(system.real[system.i0], system.gen, d0).value
    return lhs, rhs, abs(lhs - rhs)


# ------------------------------------------------------------- constructors

GRID = np.array([(i, j) for i in range(5) for j in range(5)], dtype=np.float64)


def random_system(rng, max_sizes=(5, 4), max_y: int = 6, i0: int = 0, constant_kernel: bool = False) -> DiscreteSystem:
    """Supports drawn without replacement from the integer grid [0, 4]^2,
    probabilities and kernel rows from a symmetric Dirichlet(1)."""
    rng = np.random.default_rng(rng)
    sizes = tuple(int(rng.integers(2, m + 1)) for m in max_sizes)
    ny = int(rng.integers(2, max_y + 1))
    supports = [GRID[rng.choice(len(GRID), s, replace=False)] for s in sizes]
    y_support = GRID[rng.choice(len(GRID), ny, replace=False)]
    real = [rng.dirichlet(np.ones(s)) for s in sizes]
    gen = rng.dirichlet(np.ones(sizes[i0]))
    if constant_kernel:
        kernel = np.broadcast_to(rng.dirichlet(np.ones(ny)), sizes + (ny,)).copy()
    else:
        kernel = rng.dirichlet(np.ones(ny), size=sizes)
    return DiscreteSystem(supports, y_support, real, gen, kernel, i0)


def linear_mixer_system(x1_points, x2_points, beta: float, p1, p2, g1) -> DiscreteSystem:
    """Deterministic mixer y = beta * x1 + (1 - beta) * x2 with point-mass rows; i0 = agent 1."""
    x1 = np.asarray(x1_points, dtype=np.float64).reshape(len(x1_points), -1)
    x2 = np.asarray(x2_points, dtype=np.float64).reshape(len(x2_points), -1)
    ys = beta * x1[:, None, :] + (1.0 - beta) * x2[None, :, :]
    flat = ys.reshape(-1, ys.shape[-1])
    keys = np.round(flat, 12)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    y_support = np.array([flat[inverse == u][0] for u in range(len(uniq))])
    kernel = np.zeros((len(x1), len(x2), len(y_support)))
    kernel.reshape(-1, len(y_support))[np.arange(len(flat)), inverse] = 1.0
    return DiscreteSystem([x1, x2], y_support, [p1, p2], g1, kernel, 0)
