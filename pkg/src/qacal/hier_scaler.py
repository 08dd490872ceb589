"""Logistic recalibration with partition-level random effects.

The scaler models the correctness probability of a record with confidence h
in partition s as

    g(h, s) = logistic(b0 + u_s + (b1 + v_s) * h)

and fits it as a penalized Bernoulli likelihood: the fixed effects (b0, b1)
are shared, the per-partition offsets (u_s, v_s) are shrunk toward zero by
Gaussian penalties u_s^2 / (2 sigma_u2) and v_s^2 / (2 sigma_v2). Fractional
targets are allowed and enter as Bernoulli weights. "pooled" drops the random
effects; "platt" is the same pooled logistic fit (kept as a distinct mode so
bundles record intent). Both penalty-free modes carry a weak ridge (1e-6) on
the fixed effects, as does "hierarchical", so degenerate data (for example
all-zero targets) cannot push parameters to infinity.

Optimization is full Newton on the penalized log likelihood with step
halving; the Hessian is an arrowhead matrix (dense fixed-effect rows plus a
per-partition block diagonal) solved directly. Records from partitions
unseen at fit time (including out-of-bounds) use zero random effects.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .partitioner import OUT_OF_BOUNDS

MODE_HIERARCHICAL = "hierarchical"
MODE_POOLED = "pooled"
MODE_PLATT = "platt"
MODES = (MODE_HIERARCHICAL, MODE_POOLED, MODE_PLATT)

FIXED_RIDGE = 1e-6
DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-8
DEFAULT_VARIANCE_GRID = (0.01, 0.1, 1.0, 10.0)


@dataclass(frozen=True)
class HierScalerModel:
    """Fitted scaler: fixed effects plus per-partition offsets."""

    mode: str
    b0: float
    b1: float
    u: dict[int, float] = field(default_factory=dict)
    v: dict[int, float] = field(default_factory=dict)
    sigma_u2: float = 1.0
    sigma_v2: float = 1.0
    converged: bool = True
    n_iter: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if set(self.u) != set(self.v):
            raise ValueError("u and v must cover the same partitions")

    def to_dict(self) -> dict:
        return {
            "format": "scaler.v1",
            "mode": self.mode,
            "b0": self.b0,
            "b1": self.b1,
            "sigma_u2": self.sigma_u2,
            "sigma_v2": self.sigma_v2,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "effects": {str(s): [self.u[s], self.v[s]] for s in sorted(self.u)},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "HierScalerModel":
        if obj.get("format") != "scaler.v1":
            raise ValueError(f"expected format 'scaler.v1', got {obj.get('format')!r}")
        effects = obj.get("effects", {})
        return cls(
            mode=obj["mode"],
            b0=float(obj["b0"]),
            b1=float(obj["b1"]),
            u={int(s): float(uv[0]) for s, uv in effects.items()},
            v={int(s): float(uv[1]) for s, uv in effects.items()},
            sigma_u2=float(obj.get("sigma_u2", 1.0)),
            sigma_v2=float(obj.get("sigma_v2", 1.0)),
            converged=bool(obj.get("converged", True)),
            n_iter=int(obj.get("n_iter", 0)),
        )


def save_scaler(model: HierScalerModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model.to_dict(), f)
        f.write("\n")


def load_scaler(path: str) -> HierScalerModel:
    with open(path, "r", encoding="utf-8") as f:
        return HierScalerModel.from_dict(json.load(f))


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def apply_scaler(model: HierScalerModel, confidences, partitions) -> np.ndarray | float:
    """Evaluate g(h, s); unknown or out-of-bounds partitions get zero effects."""
    scalar = np.isscalar(confidences)
    h = np.atleast_1d(np.asarray(confidences, dtype=float))
    s = np.atleast_1d(np.asarray(partitions, dtype=np.int64))
    if h.shape != s.shape:
        raise ValueError("confidences and partitions must have equal shape")
    u = np.array([model.u.get(int(sv), 0.0) for sv in s])
    v = np.array([model.v.get(int(sv), 0.0) for sv in s])
    out = _sigmoid(model.b0 + u + (model.b1 + v) * h)
    return float(out[0]) if scalar else out


def _design(partitions: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Map partition values >= 0 to dense local indices; OUT_OF_BOUNDS -> -1."""
    seen = sorted({int(s) for s in partitions if s != OUT_OF_BOUNDS})
    lookup = {s: i for i, s in enumerate(seen)}
    local = np.array([lookup.get(int(s), -1) for s in partitions], dtype=np.int64)
    return local, seen


def _objective(theta, h, t, local, n_groups, su2, sv2, ridge):
    b0, b1 = theta[0], theta[1]
    u = theta[2 : 2 + n_groups]
    v = theta[2 + n_groups :]
    valid = local >= 0
    eta = b0 + b1 * h
    if n_groups:
        eta = eta + np.where(valid, u[local] + v[local] * h, 0.0)
    loglik = float(np.sum(t * eta - np.logaddexp(0.0, eta)))
    penalty = ridge * (b0 * b0 + b1 * b1) / 2.0
    if n_groups:
        penalty += float(np.sum(u * u)) / (2.0 * su2) + float(np.sum(v * v)) / (2.0 * sv2)
    return loglik - penalty


def _grad_hess(theta, h, t, local, n_groups, su2, sv2, ridge):
    b0, b1 = theta[0], theta[1]
    u = theta[2 : 2 + n_groups]
    v = theta[2 + n_groups :]
    valid = local >= 0
    eta = b0 + b1 * h
    if n_groups:
        eta = eta + np.where(valid, u[local] + v[local] * h, 0.0)
    p = _sigmoid(eta)
    r = t - p
    w = np.clip(p * (1.0 - p), 1e-12, None)

    dim = 2 + 2 * n_groups
    grad = np.zeros(dim)
    grad[0] = np.sum(r) - ridge * b0
    grad[1] = np.sum(r * h) - ridge * b1

    hess = np.zeros((dim, dim))
    sw, swh, swh2 = np.sum(w), np.sum(w * h), np.sum(w * h * h)
    hess[0, 0] = sw + ridge
    hess[0, 1] = hess[1, 0] = swh
    hess[1, 1] = swh2 + ridge

    if n_groups:
        lv = local[valid]
        gw = np.bincount(lv, weights=w[valid], minlength=n_groups)
        gwh = np.bincount(lv, weights=(w * h)[valid], minlength=n_groups)
        gwh2 = np.bincount(lv, weights=(w * h * h)[valid], minlength=n_groups)
        gr = np.bincount(lv, weights=r[valid], minlength=n_groups)
        grh = np.bincount(lv, weights=(r * h)[valid], minlength=n_groups)
        grad[2 : 2 + n_groups] = gr - u / su2
        grad[2 + n_groups :] = grh - v / sv2

        iu = np.arange(2, 2 + n_groups)
        iv = iu + n_groups
        hess[0, iu] = hess[iu, 0] = gw
        hess[0, iv] = hess[iv, 0] = gwh
        hess[1, iu] = hess[iu, 1] = gwh
        hess[1, iv] = hess[iv, 1] = gwh2
        hess[iu, iu] = gw + 1.0 / su2
        hess[iv, iv] = gwh2 + 1.0 / sv2
        hess[iu, iv] = hess[iv, iu] = gwh
    return grad, hess


def fit_scaler(
    confidences,
    partitions,
    targets,
    mode: str = MODE_HIERARCHICAL,
    sigma_u2: float = 1.0,
    sigma_v2: float = 1.0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    trace: list | None = None,
) -> HierScalerModel:
    """MAP fit by damped Newton; converged when the gradient inf-norm <= tol.

    If `trace` is a list, the penalized objective is appended at the start and
    after every accepted step (line search only accepts ascent, so the trace
    is strictly increasing).
    """
    h = np.asarray(confidences, dtype=float)
    t = np.asarray(targets, dtype=float)
    s = np.asarray(partitions, dtype=np.int64)
    if not (h.shape == t.shape == s.shape) or h.ndim != 1 or len(h) == 0:
        raise ValueError("confidences, partitions, targets must be equal-length 1-d")
    if np.any(h < 0) or np.any(h > 1) or not np.all(np.isfinite(h)):
        raise ValueError("confidences must be finite and in [0, 1]")
    if np.any(t < 0) or np.any(t > 1) or not np.all(np.isfinite(t)):
        raise ValueError("targets must be finite and in [0, 1]")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if not (sigma_u2 > 0 and sigma_v2 > 0):
        raise ValueError("prior variances must be positive")

    if mode == MODE_HIERARCHICAL:
        local, seen = _design(s)
        n_groups = len(seen)
    else:
        local = np.full(len(h), -1, dtype=np.int64)
        seen = []
        n_groups = 0
    su2, sv2 = float(sigma_u2), float(sigma_v2)

    theta = np.zeros(2 + 2 * n_groups)
    tbar = min(max(float(np.mean(t)), 1e-6), 1.0 - 1e-6)
    theta[0] = math.log(tbar / (1.0 - tbar))

    args = (h, t, local, n_groups, su2, sv2, FIXED_RIDGE)
    obj = _objective(theta, *args)
    if trace is not None:
        trace.append(obj)
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        grad, hess = _grad_hess(theta, *args)
        if np.max(np.abs(grad)) <= tol:
            converged = True
            n_iter -= 1
            break
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        alpha = 1.0
        improved = False
        while alpha > 1e-15:
            cand = theta + alpha * step
            cand_obj = _objective(cand, *args)
            if cand_obj > obj:
                theta, obj = cand, cand_obj
                improved = True
                if trace is not None:
                    trace.append(obj)
                break
            alpha *= 0.5
        if not improved:
            # No ascent direction left at machine precision; treat as done.
            converged = bool(np.max(np.abs(grad)) <= math.sqrt(tol))
            break
    else:
        grad, _ = _grad_hess(theta, *args)
        converged = bool(np.max(np.abs(grad)) <= tol)

    u = {sv: float(theta[2 + i]) for i, sv in enumerate(seen)}
    v = {sv: float(theta[2 + n_groups + i]) for i, sv in enumerate(seen)}
    return HierScalerModel(
        mode=mode,
        b0=float(theta[0]),
        b1=float(theta[1]),
        u=u,
        v=v,
        sigma_u2=su2,
        sigma_v2=sv2,
        converged=converged,
        n_iter=n_iter,
    )


def holdout_log_likelihood(model: HierScalerModel, confidences, partitions, targets) -> float:
    """Mean Bernoulli log likelihood of held-out records under the scaler."""
    h = np.asarray(confidences, dtype=float)
    t = np.asarray(targets, dtype=float)
    s = np.asarray(partitions, dtype=np.int64)
    u = np.array([model.u.get(int(sv), 0.0) for sv in s])
    v = np.array([model.v.get(int(sv), 0.0) for sv in s])
    eta = model.b0 + u + (model.b1 + v) * h
    return float(np.mean(t * eta - np.logaddexp(0.0, eta)))


def select_prior_variance(
    train: tuple,
    holdout: tuple,
    grid=DEFAULT_VARIANCE_GRID,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> tuple[float, float]:
    """Pick (sigma_u2, sigma_v2) from the grid by held-out log likelihood.

    `train` and `holdout` are (confidences, partitions, targets) triples. Ties
    resolve toward smaller variances (stronger shrinkage).
    """
    values = sorted(float(g) for g in grid)
    if not values or values[0] <= 0:
        raise ValueError("variance grid must contain positive values")
    best = None
    best_ll = -math.inf
    for su2 in values:
        for sv2 in values:
            model = fit_scaler(
                *train,
                mode=MODE_HIERARCHICAL,
                sigma_u2=su2,
                sigma_v2=sv2,
                max_iter=max_iter,
                tol=tol,
            )
            ll = holdout_log_likelihood(model, *holdout)
            if ll > best_ll:
                best, best_ll = (su2, sv2), ll
    return best
