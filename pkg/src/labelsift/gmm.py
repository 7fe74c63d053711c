"""Univariate three-component Gaussian mixture fit by expectation-maximization.

The mixture runs over per-sample scalar loss values. Component roles follow
the mean ordering: the lowest-mean component models correctly labeled samples,
the highest-mean component models mislabeled ones, and the middle component
models samples that are hard to learn. The posterior weight of the
highest-mean component at a sample's loss is that sample's noise probability.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, DomainError

VARIANCE_FLOOR = 1e-8
DEFAULT_COMPONENTS = 3

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GmmModel:
    weights: tuple[float, ...]
    means: tuple[float, ...]
    variances: tuple[float, ...]
    log_likelihood_trace: tuple[float, ...]
    restart_final_lls: tuple[float, ...] = ()

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def final_log_likelihood(self) -> float:
        return self.log_likelihood_trace[-1]

    def to_dict(self, roles: "ComponentRoles | None" = None) -> dict:
        out = {
            "weights": list(self.weights),
            "means": list(self.means),
            "variances": list(self.variances),
            "trace": list(self.log_likelihood_trace),
            "restart_final_lls": list(self.restart_final_lls),
        }
        if roles is not None:
            out["roles"] = {"clean": roles.clean, "hard": roles.hard, "noisy": roles.noisy}
        return out

    @staticmethod
    def from_dict(d: dict) -> "GmmModel":
        return GmmModel(tuple(d["weights"]), tuple(d["means"]), tuple(d["variances"]),
                        tuple(d["trace"]), tuple(d.get("restart_final_lls", ())))


@dataclass(frozen=True)
class ComponentRoles:
    clean: int
    hard: int
    noisy: int

    def __post_init__(self):
        if sorted((self.clean, self.hard, self.noisy)) != [0, 1, 2]:
            raise DomainError("roles must be a permutation of {0, 1, 2}")


def _log_component_densities(xs: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """log N(x; mu_k, sigma2_k) for every (x, k) pair, shape (n, k)."""
    diff = xs[:, None] - means[None, :]
    return -0.5 * (_LOG_2PI + np.log(variances)[None, :] + diff * diff / variances[None, :])


def _log_joint(xs, weights, means, variances) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    return log_w[None, :] + _log_component_densities(xs, means, variances)


def _e_step(xs, weights, means, variances):
    log_joint = _log_joint(xs, weights, means, variances)
    norm = _logsumexp(log_joint)
    resp = np.exp(log_joint - norm[:, None])
    return resp, float(norm.sum())


def _logsumexp(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def _m_step(xs, resp, means):
    nk = resp.sum(axis=0)
    weights = nk / len(xs)
    new_means = means.copy()
    new_vars = np.empty_like(means)
    for k in range(len(means)):
        if nk[k] > 0:
            new_means[k] = (resp[:, k] @ xs) / nk[k]
            new_vars[k] = (resp[:, k] @ (xs - new_means[k]) ** 2) / nk[k]
        else:
            new_vars[k] = VARIANCE_FLOOR
    return weights, new_means, np.maximum(new_vars, VARIANCE_FLOOR)


def _run_em(xs, weights, means, variances, max_iter, tol):
    # Convergence on the per-point average log-likelihood change; unlike a
    # threshold relative to |LL| this is exactly invariant under rescaling
    # the data, so fits on a*xs stop at the same iteration.
    trace: list[float] = []
    ll_prev = None
    converged = False
    for _ in range(max_iter):
        resp, ll = _e_step(xs, weights, means, variances)
        trace.append(ll)
        if ll_prev is not None and abs(ll - ll_prev) <= tol * len(xs):
            converged = True
            break
        weights, means, variances = _m_step(xs, resp, means)
        ll_prev = ll
    if not converged:
        _, ll = _e_step(xs, weights, means, variances)
        trace.append(ll)
    return weights, means, variances, trace


def fit_gmm(xs, max_iter: int = 200, tol: float = 1e-6, restarts: int = 5,
            seed: int = 0, k: int = DEFAULT_COMPONENTS) -> GmmModel:
    """Best-of-restarts EM fit.

    Restart 0 initializes deterministically with means at the 1/6, 3/6 and 5/6
    quantiles (reproducible headline runs); later restarts pick k distinct data
    points at random. Convergence is an average per-point log-likelihood change
    below ``tol``. Selection is by final log-likelihood across restarts.
    """
    xs = np.asarray(list(xs), dtype=float).ravel()
    if len(xs) < 10:
        raise DomainError(f"need at least 10 points to fit, got {len(xs)}")
    if not np.all(np.isfinite(xs)):
        raise DomainError("input contains non-finite values")
    if xs.max() == xs.min():
        raise DegenerateInputError("all points identical: loss values carry no separation signal")

    base_var = float(xs.var())
    quantile_points = np.array([1.0 / 6.0, 3.0 / 6.0, 5.0 / 6.0]) if k == 3 else \
        (2.0 * np.arange(k) + 1.0) / (2.0 * k)

    best = None
    restart_lls = []
    for r in range(max(restarts, 1)):
        if r == 0:
            means = np.quantile(xs, quantile_points)
        else:
            rng = np.random.default_rng([seed, r])
            means = xs[rng.choice(len(xs), size=k, replace=False)].astype(float)
        weights = np.full(k, 1.0 / k)
        variances = np.full(k, max(base_var, VARIANCE_FLOOR))
        weights, means, variances, trace = _run_em(xs, weights, means, variances, max_iter, tol)
        restart_lls.append(trace[-1])
        if best is None or trace[-1] > best[3][-1]:
            best = (weights, means, variances, trace)

    weights, means, variances, trace = best
    return GmmModel(tuple(float(w) for w in weights), tuple(float(m) for m in means),
                    tuple(float(v) for v in variances), tuple(trace), tuple(restart_lls))


def responsibilities(m: GmmModel, x: float) -> np.ndarray:
    """Posterior component probabilities gamma_k(x), normalized in log space."""
    if not math.isfinite(x):
        raise DomainError("x must be finite")
    log_joint = _log_joint(np.asarray([float(x)]), np.asarray(m.weights),
                           np.asarray(m.means), np.asarray(m.variances))
    return np.exp(log_joint[0] - _logsumexp(log_joint)[0])


def assign_roles(m: GmmModel) -> ComponentRoles:
    """Order components by mean; equal means tie-break by smaller variance = cleaner."""
    order = sorted(range(m.k), key=lambda i: (m.means[i], m.variances[i]))
    return ComponentRoles(clean=order[0], hard=order[1], noisy=order[2])


def noise_probability(m: GmmModel, roles: ComponentRoles, x: float) -> float:
    """Posterior weight of the highest-mean (noisy) component at x."""
    return float(responsibilities(m, x)[roles.noisy])


def density(m: GmmModel, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Total mixture density and per-component weighted densities on a grid."""
    xs = np.asarray(xs, dtype=float)
    log_joint = _log_joint(xs, np.asarray(m.weights), np.asarray(m.means), np.asarray(m.variances))
    comp = np.exp(log_joint)
    return comp.sum(axis=1), comp


def write_density_csv(m: GmmModel, xs, path: str | Path, points: int = 512) -> Path:
    """Grid the observed loss range and emit total plus per-component densities."""
    xs = np.asarray(list(xs), dtype=float)
    lo, hi = float(xs.min()), float(xs.max())
    pad = 0.05 * (hi - lo) if hi > lo else 1.0
    grid = np.linspace(lo - pad, hi + pad, points)
    total, comp = density(m, grid)
    path = Path(path)
    with path.open("w") as fh:
        cols = ",".join(f"comp_{i}" for i in range(m.k))
        fh.write(f"x,total_density,{cols}\n")
        for i, x in enumerate(grid):
            parts = ",".join(repr(float(c)) for c in comp[i])
            fh.write(f"{float(x)!r},{float(total[i])!r},{parts}\n")
    return path


def write_model_json(m: GmmModel, roles: ComponentRoles, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(m.to_dict(roles), indent=2) + "\n")
    return path
