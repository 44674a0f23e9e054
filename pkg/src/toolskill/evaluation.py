"""Metrics, baseline comparison, and latent-space analyses.

Slope tracking uses a centered finite-difference estimate of the followed
inclination from recorded end-effector positions; force tracking compares
the applied normal force against a desired profile (a held-out oracle
demonstration, or the task's constant target gated to contact frames);
wiped area discretizes the surface extent into cells and counts the cells
the tool tip touched while in contact. PCA and t-SNE are implemented
directly so their conventions (component signs, perplexity calibration,
exaggeration schedule) are pinned here rather than inherited.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import controller, rollout as rollout_mod, sensing
from .envsim import EnvironmentSpec, ToolSpec
from .errors import InputError, MetricError
from .rollout import RolloutRecord

CONTACT_GATE = 0.02  # N, a frame counts as in-contact above this normal force
SLOPE_WINDOW = 11  # frames, centered window for the followed-inclination estimate
DEFAULT_CELL = 0.5  # cm, wiped-area discretization


def _contact(record: RolloutRecord) -> np.ndarray:
    return record.trajectory.wrench[:, 1] > CONTACT_GATE


def followed_inclination(record: RolloutRecord) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame slope estimate and its validity mask (window in range)."""
    ee = record.trajectory.ee
    n = len(ee)
    half = SLOPE_WINDOW // 2
    slopes = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)
    for i in range(half, n - half):
        dx = ee[i + half, 0] - ee[i - half, 0]
        dz = ee[i + half, 1] - ee[i - half, 1]
        slopes[i] = math.atan2(dz, dx)
        valid[i] = True
    return slopes, valid


def rmse_slope(record: RolloutRecord, env: EnvironmentSpec) -> float:
    """RMSE between the surface inclination and the followed inclination."""
    if env.kind != "inclined":
        raise MetricError("rmse_slope is defined for inclined environments")
    slopes, valid = followed_inclination(record)
    use = valid & _contact(record)
    if not np.any(use):
        raise MetricError("no in-contact frames; slope metric undefined")
    err = slopes[use] - env.inclination
    return float(np.sqrt(np.mean(err**2)))


def rmse_force(record: RolloutRecord, desired) -> float:
    """RMSE of the applied normal force against a desired force.

    `desired` may be a per-frame profile (e.g. a held-out oracle
    demonstration's f_z trace; lengths are truncated to the shorter) or a
    scalar target, in which case only the record's in-contact frames count.
    """
    f = record.trajectory.wrench[:, 1]
    desired = np.asarray(desired, dtype=float)
    if desired.ndim == 0:
        use = _contact(record)
        if not np.any(use):
            raise MetricError("no in-contact frames; force metric undefined")
        err = f[use] - float(desired)
    else:
        n = min(len(f), len(desired))
        err = f[:n] - desired[:n]
    return float(np.sqrt(np.mean(err**2)))


def wiped_area(record: RolloutRecord, env: EnvironmentSpec, cell: float = DEFAULT_CELL,
               tip_width: float | None = None) -> float:
    """Percentage of surface cells the tool tip touched while in contact."""
    if cell <= 0:
        raise InputError("cell size must be positive")
    if tip_width is None:
        tip_width = record.trajectory.meta.get("tool", {}).get("tip_width", 0.8)
    n_cells = int(math.ceil(env.extent_x / cell - 1e-9))
    wiped = np.zeros(n_cells, dtype=bool)
    ee_x = record.trajectory.ee[:, 0]
    for i in np.flatnonzero(_contact(record)):
        lo = max(ee_x[i] - tip_width / 2.0, 0.0)
        hi = min(ee_x[i] + tip_width / 2.0, env.extent_x)
        if hi <= lo:
            continue
        first = int(lo / cell)
        last = min(int(hi / cell - 1e-12), n_cells - 1)
        wiped[first : last + 1] = True
    return 100.0 * wiped.sum() / n_cells


# ---- latent-space analyses -------------------------------------------------


@dataclass
class PCAResult:
    projections: np.ndarray  # (N, k)
    variance_ratios: np.ndarray  # (k,)
    components: np.ndarray  # (k, D) rows are principal directions
    mean: np.ndarray  # (D,)


def pca(latents: np.ndarray, k: int) -> PCAResult:
    """Principal components of row-vector data via eigendecomposition.

    Components are ordered by decreasing explained variance; each is signed
    so its largest-magnitude loading is positive.
    """
    x = np.asarray(latents, dtype=float)
    if x.ndim != 2:
        raise InputError("latents must be a 2-D matrix")
    n, d = x.shape
    if not 1 <= k < n:
        raise InputError(f"need N > k >= 1, got N={n}, k={k}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.maximum(evals[order], 0.0)
    evecs = evecs[:, order]
    comps = []
    for j in range(min(k, d)):
        v = evecs[:, j]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
    components = np.array(comps)
    total = evals.sum()
    ratios = evals[:k] / total if total > 0 else np.zeros(k)
    return PCAResult(
        projections=xc @ components.T,
        variance_ratios=ratios,
        components=components,
        mean=mean,
    )


@dataclass
class TSNEResult:
    embedding: np.ndarray  # (N, 2)
    kl_curve: np.ndarray  # KL divergence per iteration


def _pairwise_sq_dists(x):
    s = np.sum(x**2, axis=1)
    d = s[:, None] + s[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _binary_search_beta(d_row, target_entropy, tol=1e-5, max_iter=64):
    beta, lo, hi = 1.0, 0.0, np.inf
    p = np.exp(-d_row * beta)
    for _ in range(max_iter):
        p = np.exp(-d_row * beta)
        s = p.sum()
        if s <= 0:
            entropy = 0.0
        else:
            p = p / s
            entropy = float(-np.sum(p * np.log(np.maximum(p, 1e-300))))
        diff = entropy - target_entropy
        if abs(diff) < tol:
            break
        if diff > 0:
            lo = beta
            beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
        else:
            hi = beta
            beta = (beta + lo) / 2.0
    return p


def tsne(
    latents: np.ndarray,
    perplexity: float = 30.0,
    lr: float = 200.0,
    iters: int = 1000,
    seed: int = 0,
    early_exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
) -> TSNEResult:
    """Exact t-SNE to 2-D with per-point bandwidths matched to `perplexity`.

    Gaussian affinities in the input space, Student-t in the embedding,
    KL-divergence gradient descent with momentum (0.5, then 0.8 after the
    exaggeration phase). Deterministic for a fixed seed.
    """
    x = np.asarray(latents, dtype=float)
    n = x.shape[0]
    if n <= 3 * perplexity:
        raise InputError(f"need N > 3*perplexity = {3 * perplexity}, got N={n}")
    d = _pairwise_sq_dists(x)
    target_entropy = math.log(perplexity)
    p_cond = np.zeros((n, n))
    for i in range(n):
        row = np.delete(d[i], i)
        p_row = _binary_search_beta(row, target_entropy)
        p_cond[i, np.arange(n) != i] = p_row
    p = (p_cond + p_cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-12)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x75E]))
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    vel = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_curve = np.empty(iters)

    def evaluate(pts):
        num = 1.0 / (1.0 + _pairwise_sq_dists(pts))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        return num, q, float(np.sum(p * np.log(p / q)))

    num, q, kl = evaluate(y)
    for it in range(iters):
        exaggerating = it < exaggeration_iters
        p_eff = p * early_exaggeration if exaggerating else p
        # KL gradient with the Student-t kernel: 4 sum_j (p-q)_ij w_ij (y_i - y_j)
        w = (p_eff - q) * num
        grad = 4.0 * ((np.diag(w.sum(axis=1)) - w) @ y)
        if it == exaggeration_iters:
            # the objective changes here; drop the exaggeration-phase inertia
            vel[:] = 0.0
            gains[:] = 1.0
        momentum = 0.5 if exaggerating else 0.8
        same_sign = np.sign(grad) == np.sign(vel)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.clip(gains, 0.01, None, out=gains)
        vel = momentum * vel - lr * (gains * grad)
        if exaggerating:
            y = y + vel
            num, q, kl = evaluate(y)
        else:
            # descent safeguard keeps the tracked objective nonincreasing:
            # if the adaptive step overshoots, fall back to damped plain
            # gradient steps until the divergence stops rising
            step = vel
            scale = 1.0
            for _ in range(30):
                cand = y + step
                c_num, c_q, c_kl = evaluate(cand)
                if c_kl <= kl + 1e-12:
                    y, num, q, kl = cand, c_num, c_q, c_kl
                    break
                vel[:] = 0.0
                gains[:] = 1.0
                scale *= 0.5
                step = -lr * scale * grad
            # if every damped step still rose, keep y (kl unchanged)
        kl_curve[it] = kl
    return TSNEResult(embedding=y - y.mean(axis=0), kl_curve=kl_curve)


# ---- baseline comparison ----------------------------------------------------


@dataclass
class ConditionSpec:
    """One policy condition entering a comparison."""

    params: object
    stats: sensing.NormalizationStats
    channel_mask: str = "full"


@dataclass
class MetricReport:
    """Per-condition metric table with per-seed values and mean +- std."""

    metrics: tuple
    rows: list = field(default_factory=list)  # dicts: condition, seed values, stats

    def condition(self, name) -> dict:
        for row in self.rows:
            if row["condition"] == name:
                return row
        raise KeyError(name)

    def to_json(self) -> dict:
        return {"metrics": list(self.metrics), "rows": self.rows}

    def save(self, json_path=None, csv_path=None):
        if json_path:
            with open(json_path, "w") as fh:
                json.dump(self.to_json(), fh, indent=1, sort_keys=True)
        if csv_path:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh)
                header = ["condition"]
                for m in self.metrics:
                    header += [f"{m}_mean", f"{m}_std", f"{m}_per_seed"]
                w.writerow(header)
                for row in sorted(self.rows, key=lambda r: r["condition"]):
                    line = [row["condition"]]
                    for m in self.metrics:
                        vals = row["per_seed"][m]
                        line += [repr(row["mean"][m]), repr(row["std"][m]),
                                 "|".join(repr(v) for v in vals)]
                    w.writerow(line)


def compare_baselines(
    conditions: dict,
    env_for_seed,
    tool: ToolSpec,
    seeds,
    target_force: float,
    metrics: tuple = ("rmse_force", "rmse_slope"),
    duration: float = controller.TRAJECTORY_DURATION,
    oracle_seed_base: int = 990_000,
    rollout_kwargs: dict | None = None,
) -> MetricReport:
    """Matched rollouts for every condition over the same seeds and envs.

    `env_for_seed(seed)` supplies the evaluation environment; the desired
    force profile per seed comes from a held-out oracle demonstration run
    in that same environment, so all conditions are scored against the same
    reference behavior. Results are independent of condition or seed order.
    """
    rollout_kwargs = rollout_kwargs or {}
    seeds = list(seeds)
    envs = {s: env_for_seed(s) for s in seeds}
    profiles = {}
    if "rmse_force" in metrics:
        for s in seeds:
            oracle = controller.demo_oracle(
                envs[s], tool, target_force, seed=oracle_seed_base + s
            )
            profiles[s] = oracle.wrench[:, 1]
    report = MetricReport(metrics=tuple(metrics))
    for name in sorted(conditions):
        cond = conditions[name]
        per_seed = {m: [] for m in metrics}
        for s in seeds:
            rec = rollout_mod.rollout(
                cond.params, cond.stats, envs[s], tool, duration, seed=s,
                channel_mask=cond.channel_mask, **rollout_kwargs,
            )
            for m in metrics:
                if m == "rmse_force":
                    per_seed[m].append(rmse_force(rec, profiles[s]))
                elif m == "rmse_slope":
                    per_seed[m].append(rmse_slope(rec, envs[s]))
                elif m == "wiped_area":
                    per_seed[m].append(wiped_area(rec, envs[s]))
                else:
                    raise InputError(f"unknown metric {m!r}")
        report.rows.append(
            {
                "condition": name,
                "seeds": seeds,
                "per_seed": {m: per_seed[m] for m in metrics},
                "mean": {m: float(np.mean(per_seed[m])) for m in metrics},
                "std": {m: float(np.std(per_seed[m])) for m in metrics},
            }
        )
    return report
