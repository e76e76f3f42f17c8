"""Distribution metrics and predictive checks for sampled designs.

The metrics compare empirical samples: a topology histogram divergence,
a kernel two-sample statistic, and a classifier two-sample test with the
correlated-channel filter applied in marginal mode.  The predictive check
drives the full hierarchical sampler and re-simulates what comes back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design_space import N_TOPOLOGIES, Topology, topology_from_index
from .errors import DegenerateInput, StatsMismatch


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    n_x: int
    n_y: int
    settings: dict
    seed: int | None = None

    def to_jsonable(self) -> dict:
        return {
            "name": self.name,
            "value": float(self.value),
            "n_x": self.n_x,
            "n_y": self.n_y,
            "settings": self.settings,
            "seed": self.seed,
        }


def kl_topology(counts_p: np.ndarray, counts_q: np.ndarray) -> float:
    """D_KL(p || q) between topology histograms.

    q receives a 0.5 pseudo-count per class, but only when it has a zero
    count somewhere p is supported; otherwise both histograms are used as
    they stand, so identical inputs give exactly zero.
    """
    p = np.asarray(counts_p, dtype=np.float64)
    q = np.asarray(counts_q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("histograms differ in length")
    if p.sum() <= 0:
        raise ValueError("reference histogram is empty")
    if np.any((p > 0) & (q == 0)):
        q = q + 0.5
    p = p / p.sum()
    q = q / q.sum()
    support = p > 0
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def _pairwise_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)


def median_bandwidth(pooled: np.ndarray) -> float:
    """Median pairwise Euclidean distance, the usual RBF heuristic."""
    sq = _pairwise_sq(pooled, pooled)
    upper = sq[np.triu_indices(len(pooled), k=1)]
    med = float(np.sqrt(np.median(upper)))
    if med <= 0.0:
        raise DegenerateInput("all pooled points coincide")
    return med


def mmd(x: np.ndarray, y: np.ndarray, bandwidth: float | None = None) -> float:
    """Unbiased squared-MMD estimate with an RBF kernel."""
    x = _as_points(x)
    y = _as_points(y)
    if len(x) < 2 or len(y) < 2:
        raise ValueError("mmd needs at least two points per sample")
    if bandwidth is None:
        bandwidth = median_bandwidth(np.concatenate([x, y], axis=0))
    g = 1.0 / (2.0 * bandwidth * bandwidth)
    kxx = np.exp(-g * _pairwise_sq(x, x))
    kyy = np.exp(-g * _pairwise_sq(y, y))
    kxy = np.exp(-g * _pairwise_sq(x, y))
    m, n = len(x), len(y)
    np.fill_diagonal(kxx, 0.0)
    np.fill_diagonal(kyy, 0.0)
    return float(
        kxx.sum() / (m * (m - 1))
        + kyy.sum() / (n * (n - 1))
        - 2.0 * kxy.mean()
    )


def mmd_permutation_se(
    x: np.ndarray,
    y: np.ndarray,
    n_permutations: int = 100,
    seed: int = 0,
) -> float:
    """Standard error of the statistic under pooled-label shuffling.

    The bandwidth is fixed from the pooled sample so every permutation
    sees the same kernel.
    """
    x = _as_points(x)
    y = _as_points(y)
    pooled = np.concatenate([x, y], axis=0)
    bw = median_bandwidth(pooled)
    rng = np.random.default_rng(seed)
    m = len(x)
    values = []
    for _ in range(n_permutations):
        perm = rng.permutation(len(pooled))
        values.append(mmd(pooled[perm[:m]], pooled[perm[m:]], bandwidth=bw))
    return float(np.std(values, ddof=1))


def correlation_filter(pooled: np.ndarray, threshold: float = 0.9) -> list[int]:
    """Indices kept after dropping the later member of each highly
    correlated pair."""
    d = pooled.shape[1]
    corr = np.corrcoef(pooled, rowvar=False)
    kept: list[int] = []
    for j in range(d):
        if any(abs(corr[j, i]) > threshold for i in kept):
            continue
        kept.append(j)
    return kept


@dataclass(frozen=True)
class MarginalC2ST:
    per_dimension: dict[int, float]
    kept: list[int]
    mean: float
    max: float


def _fold_accuracy(data: np.ndarray, labels: np.ndarray, folds: int, seed: int) -> float:
    import warnings

    from sklearn.exceptions import ConvergenceWarning
    from sklearn.model_selection import StratifiedKFold
    from sklearn.neural_network import MLPClassifier

    cv = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    accs = []
    for tr, te in cv.split(data, labels):
        clf = MLPClassifier(
            hidden_layer_sizes=(64, 64), max_iter=300, random_state=seed
        )
        with warnings.catch_warnings():
            # a test classifier does not have to reach the optimum
            warnings.simplefilter("ignore", ConvergenceWarning)
            clf.fit(data[tr], labels[tr])
        accs.append(clf.score(data[te], labels[te]))
    return float(np.mean(accs))


def c2st(
    x: np.ndarray,
    y: np.ndarray,
    mode: str = "joint",
    seed: int = 0,
    folds: int = 5,
):
    """Classifier two-sample test: 0.5 means indistinguishable.

    joint mode returns the cross-validated accuracy of one classifier on
    the full vectors; marginal mode drops the later member of every
    |r| > 0.9 pair, trains one classifier per surviving dimension, and
    reports all of them with their mean and max.
    """
    x = _as_points(x)
    y = _as_points(y)
    if len(x) != len(y):
        raise ValueError("c2st expects equal sample sizes")
    if len(x) < 100:
        raise ValueError("c2st needs at least 100 points per sample")
    if mode not in ("joint", "marginal"):
        raise ValueError("mode must be 'joint' or 'marginal'")
    pooled = np.concatenate([x, y], axis=0)
    if np.any(pooled.std(axis=0) == 0.0):
        raise DegenerateInput("a dimension is constant across both samples")
    labels = np.concatenate([np.zeros(len(x)), np.ones(len(y))])
    mu, sd = pooled.mean(axis=0), pooled.std(axis=0)
    pooled = (pooled - mu) / sd

    if mode == "joint":
        return _fold_accuracy(pooled, labels, folds, seed)

    kept = correlation_filter(pooled)
    per = {
        j: _fold_accuracy(pooled[:, [j]], labels, folds, seed) for j in kept
    }
    vals = list(per.values())
    return MarginalC2ST(
        per_dimension=per,
        kept=kept,
        mean=float(np.mean(vals)),
        max=float(np.max(vals)),
    )


@dataclass(frozen=True)
class TopologySummary:
    n: int
    has_second_wing: float
    has_h_tail: float
    has_v_tail: float
    has_nose_prop: float
    lift_arm_hist: tuple[float, float, float]
    fwd_arm_hist: tuple[float, float, float]

    def to_jsonable(self) -> dict:
        return {
            "n": self.n,
            "has_second_wing": self.has_second_wing,
            "has_h_tail": self.has_h_tail,
            "has_v_tail": self.has_v_tail,
            "has_nose_prop": self.has_nose_prop,
            "lift_arm_hist": list(self.lift_arm_hist),
            "fwd_arm_hist": list(self.fwd_arm_hist),
        }


def _as_topologies(taus) -> list[Topology]:
    return [
        topology_from_index(int(t)) if isinstance(t, (int, np.integer)) else t
        for t in taus
    ]


def topology_summary(taus: list[Topology | int]) -> TopologySummary:
    taus = _as_topologies(taus)
    if not taus:
        raise ValueError("cannot summarize an empty topology list")
    n = len(taus)

    def frac(pred) -> float:
        return sum(1 for t in taus if pred(t)) / n

    def hist(attr) -> tuple[float, float, float]:
        counts = [0, 0, 0]
        for t in taus:
            counts[getattr(t, attr)] += 1
        return tuple(c / n for c in counts)

    return TopologySummary(
        n=n,
        has_second_wing=frac(lambda t: t.n_wings == 2),
        has_h_tail=frac(lambda t: t.h_tail == 1),
        has_v_tail=frac(lambda t: t.v_tail == 1),
        has_nose_prop=frac(lambda t: t.nose_prop == 1),
        lift_arm_hist=hist("lift_arms"),
        fwd_arm_hist=hist("fwd_arms"),
    )


def histogram_from_topologies(taus: list[Topology | int]) -> np.ndarray:
    counts = np.zeros(N_TOPOLOGIES, dtype=np.float64)
    for t in taus:
        counts[int(t) if isinstance(t, (int, np.integer)) else t.index] += 1
    return counts


@dataclass
class ChannelCheck:
    channel: str
    target: float
    resim_mean: float
    resim_std: float
    delta_sigma: float


@dataclass
class PPCReport:
    x_target_raw: np.ndarray
    channels: list[ChannelCheck]
    n_requested: int
    n_simulated: int
    failures: list[str] = field(default_factory=list)
    seed: int = 0

    def within(self, band_sigma: float) -> int:
        return sum(1 for c in self.channels if c.delta_sigma <= band_sigma)

    def to_jsonable(self) -> dict:
        return {
            "x_target_raw": self.x_target_raw.tolist(),
            "channels": [vars(c) for c in self.channels],
            "n_requested": self.n_requested,
            "n_simulated": self.n_simulated,
            "failures": self.failures,
            "seed": self.seed,
        }


def posterior_predictive_check(
    mixedit_ckpt,
    maskedit_ckpt,
    x_target: np.ndarray,
    n: int,
    mission=None,
    seed: int = 0,
) -> PPCReport:
    """Condition the full sampler on x_target (standardized units),
    re-simulate every returned design, and report per-channel agreement
    in data-sigma units.  Failed designs are listed, never dropped
    silently."""
    from .pipeline import SampleRequest, sample_designs
    from .surrogate_sim import CHANNELS, DEFAULT_MISSION, resimulate_flat

    if n <= 0:
        raise ValueError("posterior predictive check needs n >= 1")
    if mixedit_ckpt.stats.digest() != maskedit_ckpt.stats.digest():
        raise StatsMismatch("checkpoints were trained on different statistics")
    mission = mission if mission is not None else DEFAULT_MISSION
    stats = mixedit_ckpt.stats
    target_raw = stats.destandardize_x(np.asarray(x_target, dtype=np.float64))

    request = SampleRequest(x_target=target_raw, n=n, seed=seed)
    designs = sample_designs(mixedit_ckpt, maskedit_ckpt, request, mission=mission)

    resims = []
    failures = []
    for d in designs:
        obs, reason = resimulate_flat(
            d.theta, d.topology.index, d.seed, mission=mission
        )
        if obs is None:
            # geometry/structure/simulation rejects have no observation;
            # mission-filter rejects still simulate honestly and count
            failures.append(f"design {d.seed}: {reason}")
        else:
            resims.append(obs.as_vector())

    channels = []
    if resims:
        arr = np.stack(resims)
        mean = arr.mean(axis=0)
        std = arr.std(axis=0)
        for j, name in enumerate(CHANNELS):
            channels.append(
                ChannelCheck(
                    channel=name,
                    target=float(target_raw[j]),
                    resim_mean=float(mean[j]),
                    resim_std=float(std[j]),
                    delta_sigma=float(
                        abs(mean[j] - target_raw[j]) / stats.x_std[j]
                    ),
                )
            )
    return PPCReport(
        x_target_raw=target_raw,
        channels=channels,
        n_requested=n,
        n_simulated=len(resims),
        failures=failures,
        seed=seed,
    )
