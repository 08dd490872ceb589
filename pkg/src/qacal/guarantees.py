"""Finite-sample conditional-calibration bounds and their empirical check.

For partition-conditional binning with at least b records per bin fit on n
records, every (partition, bin) cell's fitted mean lies within

    eps = sqrt(log2(2 n / (b alpha)) / (2 (b - 1))) + nu

of the cell's true conditional mean, simultaneously, with probability at
least 1 - alpha; nu is the proxy-target bias (zero for ground-truth labels).
The single-partition binning variant with B bins on n records admits

    eps = sqrt(log2(2 B / alpha) / (2 (floor(n / B) - 1))) + nu.

Base-2 logarithms keep the bound conservative. `choose_b` inverts the first
display for the smallest workable b. The Monte-Carlo validator draws fresh
calibration sets from a synthetic cluster model with analytically known
conditional means (smooth quadrature to 1e-9), fits the binning table against
a fixed partitioner, and reports the fraction of trials in which every fitted
per-partition cell sits within eps of the truth. Root fallback calibrators
are marginal, not partition-conditional, and are not part of the check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

from .dataset import Dataset
from .partitioner import OUT_OF_BOUNDS, build_kdtree
from .qa_binning import fit_qa_binning

LOGIT_CLAMP = 1e-3
QUAD_TOL = 1e-9
DEFAULT_SEPARATION = 10.0
DEFAULT_CLUSTER_SCALE = 0.5


def _validate_common(n: int, alpha: float, nu: float) -> None:
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if not 0.0 <= nu <= 1.0:
        raise ValueError(f"nu must be in [0, 1], got {nu}")


def epsilon_bound_qa(n: int, b: int, alpha: float, nu: float = 0.0) -> float:
    """Simultaneous bound for partition-conditional binning with bin mass b."""
    _validate_common(n, alpha, nu)
    if not 2 <= b <= n:
        raise ValueError(f"b must be in [2, n={n}], got {b}")
    return math.sqrt(math.log2(2.0 * n / (b * alpha)) / (2.0 * (b - 1))) + nu


def epsilon_bound_umd(n: int, n_bins: int, alpha: float, nu: float = 0.0) -> float:
    """Simultaneous bound for single-partition binning with n_bins bins."""
    _validate_common(n, alpha, nu)
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    per_bin = n // n_bins
    if per_bin < 2:
        raise ValueError(f"need floor(n / n_bins) >= 2, got {per_bin}")
    return math.sqrt(math.log2(2.0 * n_bins / alpha) / (2.0 * (per_bin - 1))) + nu


def choose_b(n: int, alpha: float, nu: float, eps_target: float) -> int | None:
    """Smallest integer b with epsilon_bound_qa(n, b, alpha, nu) <= eps_target.

    Returns None when infeasible (eps_target <= nu, or even b = n misses the
    target). The bound is strictly decreasing in b on [2, n], so bisection
    applies.
    """
    _validate_common(n, alpha, nu)
    if eps_target <= nu:
        return None
    if epsilon_bound_qa(n, 2, alpha, nu) <= eps_target:
        return 2
    if epsilon_bound_qa(n, n, alpha, nu) > eps_target:
        return None
    lo, hi = 2, n  # bound(lo) > target >= bound(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if epsilon_bound_qa(n, mid, alpha, nu) <= eps_target:
            hi = mid
        else:
            lo = mid
    return hi


def bound_curve(n: int, alpha: float, nus, b_values) -> list[dict]:
    """(b, nu) grid of the partition-conditional bound, for plotting."""
    rows = []
    for nu in nus:
        for b in b_values:
            rows.append(
                {
                    "n": n,
                    "b": int(b),
                    "alpha": alpha,
                    "nu": float(nu),
                    "epsilon": epsilon_bound_qa(n, int(b), alpha, float(nu)),
                }
            )
    return rows


def _hypercube_means(n_clusters: int, separation: float) -> np.ndarray:
    dim = max(1, math.ceil(math.log2(n_clusters)) or 1)
    means = np.empty((n_clusters, dim), dtype=float)
    for c in range(n_clusters):
        bits = [(c >> j) & 1 for j in range(dim)]
        means[c] = [separation * (2 * bit - 1) for bit in bits]
    return means


@dataclass(frozen=True)
class SyntheticSpec:
    """Cluster mixture with per-cluster miscalibration.

    Cluster s has embedding law N(mu_s, scale^2 I) (default: hypercube-corner
    means, far enough apart that a median tree of matching depth separates
    them), a shared confidence law, and correctness probability

        p_s(h) = logistic(a_s + c_s * logit(clip(h, 1e-3, 1 - 1e-3)))

    so c_s = 1, a_s = 0 is a calibrated cluster.
    """

    n_partitions: int
    points_per_partition: int
    miscalibration: tuple[tuple[float, float], ...]  # (a_s, c_s) per cluster
    confidence_law: dict = field(default_factory=lambda: {"kind": "uniform", "lo": 0.02, "hi": 0.98})
    seed: int = 0
    separation: float = DEFAULT_SEPARATION
    cluster_scale: float = DEFAULT_CLUSTER_SCALE

    def __post_init__(self):
        if self.n_partitions < 1:
            raise ValueError("n_partitions must be >= 1")
        if self.points_per_partition < 1:
            raise ValueError("points_per_partition must be >= 1")
        mis = tuple((float(a), float(c)) for a, c in self.miscalibration)
        if len(mis) != self.n_partitions:
            raise ValueError(
                f"need one (a_s, c_s) pair per partition, got {len(mis)} for {self.n_partitions}"
            )
        object.__setattr__(self, "miscalibration", mis)
        kind = self.confidence_law.get("kind")
        if kind == "uniform":
            lo, hi = self.confidence_law["lo"], self.confidence_law["hi"]
            if not 0.0 <= lo < hi <= 1.0:
                raise ValueError(f"uniform law needs 0 <= lo < hi <= 1, got {lo}, {hi}")
        elif kind == "beta":
            if self.confidence_law["a"] <= 0 or self.confidence_law["b"] <= 0:
                raise ValueError("beta law needs positive shape parameters")
        else:
            raise ValueError(f"unknown confidence law kind {kind!r}")

    @property
    def n_total(self) -> int:
        return self.n_partitions * self.points_per_partition

    def cluster_means(self) -> np.ndarray:
        return _hypercube_means(self.n_partitions, self.separation)

    def true_probability(self, h, cluster: int):
        a, c = self.miscalibration[cluster]
        hh = np.clip(np.asarray(h, dtype=float), LOGIT_CLAMP, 1.0 - LOGIT_CLAMP)
        eta = a + c * np.log(hh / (1.0 - hh))
        return 1.0 / (1.0 + np.exp(-eta))

    def _law_parts(self):
        """(support_lo, support_hi, pdf, cdf) as fast scalar callables."""
        law = self.confidence_law
        if law["kind"] == "uniform":
            lo, hi = float(law["lo"]), float(law["hi"])
            dens = 1.0 / (hi - lo)

            def pdf(h: float) -> float:
                return dens if lo <= h <= hi else 0.0

            def cdf(x: float) -> float:
                return min(max((x - lo) * dens, 0.0), 1.0)

            return lo, hi, pdf, cdf
        a, b = float(law["a"]), float(law["b"])
        ln_norm = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)

        def pdf(h: float) -> float:
            if h <= 0.0 or h >= 1.0:
                return 0.0
            return math.exp(ln_norm + (a - 1.0) * math.log(h) + (b - 1.0) * math.log1p(-h))

        def cdf(x: float) -> float:
            return float(special.betainc(a, b, min(max(x, 0.0), 1.0)))

        return 0.0, 1.0, pdf, cdf

    def _true_p_scalar(self, h: float, cluster: int) -> float:
        a, c = self.miscalibration[cluster]
        hh = min(max(h, LOGIT_CLAMP), 1.0 - LOGIT_CLAMP)
        eta = a + c * math.log(hh / (1.0 - hh))
        if eta >= 0:
            return 1.0 / (1.0 + math.exp(-eta))
        ex = math.exp(eta)
        return ex / (1.0 + ex)

    def to_dict(self) -> dict:
        return {
            "n_partitions": self.n_partitions,
            "points_per_partition": self.points_per_partition,
            "miscalibration": [list(pair) for pair in self.miscalibration],
            "confidence_law": dict(self.confidence_law),
            "seed": self.seed,
            "separation": self.separation,
            "cluster_scale": self.cluster_scale,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SyntheticSpec":
        return cls(
            n_partitions=int(obj["n_partitions"]),
            points_per_partition=int(obj["points_per_partition"]),
            miscalibration=tuple(tuple(p) for p in obj["miscalibration"]),
            confidence_law=dict(obj.get("confidence_law", {"kind": "uniform", "lo": 0.02, "hi": 0.98})),
            seed=int(obj.get("seed", 0)),
            separation=float(obj.get("separation", DEFAULT_SEPARATION)),
            cluster_scale=float(obj.get("cluster_scale", DEFAULT_CLUSTER_SCALE)),
        )


def generate_synthetic(
    spec: SyntheticSpec, seed: int | None = None, label_probability_shift: float = 0.0
) -> Dataset:
    """Draw the cluster mixture; records are grouped by cluster in order.

    `label_probability_shift` adds a constant to the correctness probability
    before drawing labels (clipped to [0, 1]); the reported ground truth for
    guarantee checks stays the unshifted model.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    means = spec.cluster_means()
    law = spec.confidence_law
    ids, embs, hs, ys = [], [], [], []
    for c in range(spec.n_partitions):
        m = spec.points_per_partition
        emb = means[c] + spec.cluster_scale * rng.standard_normal((m, means.shape[1]))
        if law["kind"] == "uniform":
            h = rng.uniform(law["lo"], law["hi"], m)
        else:
            h = rng.beta(law["a"], law["b"], m)
        p = np.clip(spec.true_probability(h, c) + label_probability_shift, 0.0, 1.0)
        y = (rng.random(m) < p).astype(float)
        ids.extend(f"c{c}-{i}" for i in range(m))
        embs.append(emb)
        hs.append(h)
        ys.append(y)
    n = spec.n_total
    return Dataset(
        ids=ids,
        embeddings=np.concatenate(embs, axis=0),
        confidences=np.concatenate(hs),
        labels=np.concatenate(ys),
        label_kinds=["ground_truth"] * n,
        metadata={"source": "synthetic"},
    )


def _leaf_boxes(part) -> dict[int, list[tuple[np.ndarray, np.ndarray]]]:
    """Axis-aligned region of every leaf of a median tree.

    Each leaf region is the intersection of the descent path's halfspaces
    and the per-node bounds checks, so it is a box per coordinate. Returned
    as {leaf: (lower, upper)} coordinate interval arrays.
    """
    boxes: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    n_internal = len(part.nodes)

    def walk(key: int, lower: np.ndarray, upper: np.ndarray) -> None:
        if key >= n_internal:
            boxes[key - n_internal] = (lower, upper)
            return
        node = part.nodes[key]
        c = node.coord
        lo = lower.copy()
        lo[c] = max(lo[c], node.lo)
        hi = upper.copy()
        hi[c] = min(hi[c], node.hi)
        left_hi = hi.copy()
        left_hi[c] = min(left_hi[c], node.pivot)
        right_lo = lo.copy()
        right_lo[c] = max(right_lo[c], node.pivot)
        walk(2 * key + 1, lo, left_hi)
        walk(2 * key + 2, right_lo, hi)

    walk(0, np.full(part.dim, -np.inf), np.full(part.dim, np.inf))
    return boxes


def _cluster_leaf_weights(spec: SyntheticSpec, part) -> dict[int, np.ndarray]:
    """P(cluster c lands in leaf s) for every leaf, from Gaussian box mass."""
    means = spec.cluster_means()
    boxes = _leaf_boxes(part)
    weights = {}
    for leaf, (lower, upper) in boxes.items():
        probs = np.empty(spec.n_partitions)
        for c in range(spec.n_partitions):
            per_coord = stats.norm.cdf(
                upper, loc=means[c], scale=spec.cluster_scale
            ) - stats.norm.cdf(lower, loc=means[c], scale=spec.cluster_scale)
            probs[c] = float(np.prod(np.clip(per_coord, 0.0, 1.0)))
        weights[leaf] = probs
    return weights


def _true_cell_mean(
    spec: SyntheticSpec, cluster_weights: np.ndarray, e0: float, e1: float
) -> float | None:
    """E[Y | h in [e0, e1), leaf] for a leaf with the given cluster mixture.

    Confidence is independent of the embedding given the cluster and the law
    is shared, so the mixture weights within any confidence span equal the
    leaf-membership weights.
    """
    lo, hi, pdf, cdf = spec._law_parts()
    mass = cdf(e1) - cdf(e0)
    total_weight = float(np.sum(cluster_weights))
    if mass <= 0.0 or total_weight <= 0.0:
        return None
    a, b = max(e0, lo), min(e1, hi)  # integrand is smooth inside the support
    total = 0.0
    for c in range(spec.n_partitions):
        w = float(cluster_weights[c])
        if w <= total_weight * 1e-15:
            continue
        val, _ = integrate.quad(
            lambda h: spec._true_p_scalar(h, c) * pdf(h),
            a,
            b,
            epsabs=QUAD_TOL,
            epsrel=QUAD_TOL,
            limit=200,
        )
        total += w * val
    return total / (total_weight * mass)


@dataclass(frozen=True)
class GuaranteeReport:
    coverage: float
    worst_gap: float
    epsilon: float
    trials: int
    n: int
    b: int
    per_trial_worst: tuple[float, ...] = ()


def validate_conditional_guarantee(
    spec: SyntheticSpec,
    part_depth: int,
    b: int,
    alpha: float,
    trials: int,
    proxy_shift: float = 0.0,
) -> GuaranteeReport:
    """Monte-Carlo check of the partition-conditional bound.

    A median tree of the given depth is built once from a draw of the spec;
    each trial redraws a calibration set (derived seed), fits the binning
    table, and compares every fitted per-partition cell against the analytic
    conditional mean. Leaf truth is the cluster mixture weighted by each
    cluster's exact Gaussian mass inside the leaf's box, so the check stays
    valid when a few fresh points cross a pivot fitted at the build sample's
    edge. With proxy_shift > 0 the trial labels are drawn from the shifted
    probability while the truth stays unshifted, so the shift plays the role
    of nu in the bound.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n = spec.n_total
    eps = epsilon_bound_qa(n, b, alpha, nu=proxy_shift)

    build = generate_synthetic(spec)
    part = build_kdtree(build.embeddings, part_depth)
    leaf_weights = _cluster_leaf_weights(spec, part)

    worst_overall = 0.0
    per_trial_worst = []
    passed = 0
    for trial in range(trials):
        ds = generate_synthetic(spec, seed=spec.seed + 1 + trial, label_probability_shift=proxy_shift)
        table = fit_qa_binning(ds, part, b)
        worst = 0.0
        for s, cal in table.per_partition.items():
            weights = leaf_weights[s]
            for k in range(cal.n_bins):
                truth = _true_cell_mean(spec, weights, float(cal.edges[k]), float(cal.edges[k + 1]))
                if truth is None:
                    continue
                worst = max(worst, abs(float(cal.bin_means[k]) - truth))
        per_trial_worst.append(worst)
        worst_overall = max(worst_overall, worst)
        if worst <= eps:
            passed += 1
    return GuaranteeReport(
        coverage=passed / trials,
        worst_gap=worst_overall,
        epsilon=eps,
        trials=trials,
        n=n,
        b=b,
        per_trial_worst=tuple(per_trial_worst),
    )
