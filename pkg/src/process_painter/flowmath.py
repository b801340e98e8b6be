# process_painter/flowmath.py

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from .errors import MathDomainError

DEFAULT_LAMBDA_CE = 1.0


# --- Helpers ---
def _vector(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        raise MathDomainError(f"{name} must be a vector")
    if not np.all(np.isfinite(arr)):
        raise MathDomainError(f"{name} has non-finite entries")
    return arr


def _pair(z0, z1):
    a, b = _vector(z0, "z0"), _vector(z1, "z1")
    if a.shape != b.shape:
        raise MathDomainError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def _finite(value, name):
    value = float(value)
    if not math.isfinite(value):
        raise MathDomainError(f"{name} must be finite, got {value}")
    return value


# --- Rectified flow ---
@dataclass(frozen=True)
class FlowSample:
    """One training point on the straight path from noise z1 (t=0) to data z0 (t=1)."""

    z0: np.ndarray
    z1: np.ndarray
    t: float
    z_t: np.ndarray

    @classmethod
    def draw(cls, rng, dim, t=None):
        z0 = rng.standard_normal(dim)
        z1 = rng.standard_normal(dim)
        t = float(rng.uniform()) if t is None else t
        return cls(z0, z1, t, interpolate(z0, z1, t))


def interpolate(z0, z1, t):
    """z_t = t * z0 + (1 - t) * z1, componentwise."""
    a, b = _pair(z0, z1)
    t = _finite(t, "t")
    if not 0.0 <= t <= 1.0:
        raise MathDomainError(f"t must lie in [0, 1], got {t}")
    if t == 1.0:
        return a.copy()
    if t == 0.0:
        return b.copy()
    return t * a + (1.0 - t) * b


def velocity_target(z0, z1):
    """d z_t / dt, which is z0 - z1 for every t."""
    a, b = _pair(z0, z1)
    return a - b


def mse_flow_loss(pred, z0, z1):
    """Mean over components of (pred - (z0 - z1))^2."""
    target = velocity_target(z0, z1)
    p = _vector(pred, "pred")
    if p.shape != target.shape:
        raise MathDomainError(f"dimension mismatch: {p.shape} vs {target.shape}")
    return float(np.mean((p - target) ** 2))


def mse_gradient(pred, z0, z1):
    """Gradient of mse_flow_loss with respect to pred: 2 (pred - target) / n."""
    target = velocity_target(z0, z1)
    p = _vector(pred, "pred")
    if p.shape != target.shape:
        raise MathDomainError(f"dimension mismatch: {p.shape} vs {target.shape}")
    return 2.0 * (p - target) / p.size


def batch_flow_loss(preds, samples):
    """Expectation over samples, realized as the batch mean of per-sample losses."""
    if len(preds) != len(samples):
        raise MathDomainError(f"{len(preds)} predictions for {len(samples)} samples")
    if not samples:
        return 0.0
    return float(np.mean([mse_flow_loss(p, s.z0, s.z1) for p, s in zip(preds, samples, strict=True)]))


# --- Text loss ---
def log_softmax(scores):
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise MathDomainError("scores must be finite to normalize")
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def masked_ce_loss(logits, targets, mask):
    """
    Negative log-likelihood summed over masked positions.

    Args:
        logits: (n, classes) unnormalized scores.
        targets: n class ids.
        mask: n booleans; an all-false mask gives 0.0.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if logits.ndim != 2 or not (len(logits) == len(targets) == len(mask)):
        raise MathDomainError(f"length mismatch: {logits.shape}, {len(targets)} targets, {len(mask)} mask entries")
    if not mask.any():
        return 0.0
    if np.any(targets < 0) or np.any(targets >= logits.shape[1]):
        raise MathDomainError("target class id out of range")
    log_probs = log_softmax(logits[mask])
    picked = log_probs[np.arange(len(log_probs)), targets[mask]]
    return float(-picked.sum())


# --- Total ---
@dataclass(frozen=True)
class LossBundle:
    ce: float
    mse: float
    lambda_ce: float
    total: float


def total_loss(ce, mse, lambda_ce=DEFAULT_LAMBDA_CE):
    ce, mse, lambda_ce = _finite(ce, "ce"), _finite(mse, "mse"), _finite(lambda_ce, "lambda_ce")
    if lambda_ce < 0:
        raise MathDomainError(f"lambda_ce must be >= 0, got {lambda_ce}")
    return LossBundle(ce, mse, lambda_ce, lambda_ce * ce + mse)


# --- Property table ---
@dataclass(frozen=True)
class PropertyCheck:
    name: str
    passed: bool
    detail: str


def _check_endpoints(rng, instances):
    for _ in range(instances):
        z0, z1 = rng.standard_normal(8), rng.standard_normal(8)
        if not (np.array_equal(interpolate(z0, z1, 1.0), z0) and np.array_equal(interpolate(z0, z1, 0.0), z1)):
            return False, "endpoint mismatch"
    return True, "t=1 gives z0 and t=0 gives z1 bitwise"


def _check_midpoint(rng, instances):
    got = interpolate([1.0, 0.0], [0.0, 1.0], 0.5)
    if not np.allclose(got, [0.5, 0.5], rtol=0, atol=1e-15):
        return False, f"midpoint {got}"
    for _ in range(instances):
        z0, z1, t = rng.standard_normal(8), rng.standard_normal(8), float(rng.uniform())
        if not np.allclose(interpolate(z0, z1, t) + interpolate(z1, z0, t), z0 + z1, rtol=0, atol=1e-12):
            return False, "interpolate(z0, z1, t) + interpolate(z1, z0, t) != z0 + z1"
    return True, "midpoint and swap identity hold"


def _check_velocity(rng, instances, h=1e-5):
    worst = 0.0
    for _ in range(instances):
        z0, z1, t = rng.standard_normal(8), rng.standard_normal(8), float(rng.uniform(0.1, 0.9))
        fd = (interpolate(z0, z1, t + h) - interpolate(z0, z1, t - h)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(fd - velocity_target(z0, z1)))))
    return worst < 1e-9, f"max |FD - v| = {worst:.2e}"


def _check_mse(rng, instances):
    for _ in range(instances):
        z0, z1, eps = rng.standard_normal(8), rng.standard_normal(8), float(rng.uniform(0.1, 1.0))
        target = velocity_target(z0, z1)
        if mse_flow_loss(target, z0, z1) != 0.0:
            return False, "perfect prediction has non-zero loss"
        if not math.isclose(mse_flow_loss(target + eps, z0, z1), eps * eps, rel_tol=1e-9, abs_tol=1e-15):
            return False, "constant offset eps does not give eps^2"
    return True, "zero at the target, eps^2 under a constant offset"


def _check_gradient(rng, instances, h=1e-6):
    worst = 0.0
    for _ in range(instances):
        z0, z1, pred = rng.standard_normal(6), rng.standard_normal(6), rng.standard_normal(6)
        analytic = mse_gradient(pred, z0, z1)
        numeric = np.empty_like(pred)
        for k in range(pred.size):
            step = np.zeros_like(pred)
            step[k] = h
            numeric[k] = (mse_flow_loss(pred + step, z0, z1) - mse_flow_loss(pred - step, z0, z1)) / (2 * h)
        scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / scale))
    return worst < 1e-5, f"max relative error {worst:.2e}"


def _check_ce(rng, instances):
    uniform = masked_ce_loss(np.zeros((1, 4)), [2], [True])
    if not math.isclose(uniform, math.log(4), rel_tol=1e-12):
        return False, f"uniform over 4 classes gave {uniform}"
    if masked_ce_loss([[0.0, -1e4, -1e4]], [0], [True]) > 1e-12:
        return False, "certain prediction has non-zero loss"
    if masked_ce_loss(rng.standard_normal((5, 3)), [0, 1, 2, 0, 1], [False] * 5) != 0.0:
        return False, "empty mask is not zero"
    return True, "ln 4 for uniform, 0 when certain, 0 for an empty mask"


def _check_total(rng, instances, lambda_ce=DEFAULT_LAMBDA_CE):
    if total_loss(2, 3, 1).total != 5 or total_loss(4, 3, 0).total != 3 or total_loss(0.5, 0, 2).total != 1.0:
        return False, "arithmetic examples"
    for _ in range(instances):
        ce, mse, lam, d = (float(v) for v in rng.uniform(0, 5, size=4))
        base = total_loss(ce, mse, lam).total
        if not (
            math.isclose(total_loss(ce + d, mse, lam).total - base, lam * d, abs_tol=1e-9)
            and math.isclose(total_loss(ce, mse + d, lam).total - base, d, abs_tol=1e-9)
        ):
            return False, "total is not affine in ce and mse"
        configured = total_loss(ce, mse, lambda_ce).total
        if not math.isclose(configured, lambda_ce * ce + mse, abs_tol=1e-9):
            return False, f"total off at the configured lambda_ce={lambda_ce}"
    return True, f"total = lambda * ce + mse, affine in each input (configured lambda_ce={lambda_ce})"


def _check_batch(rng, instances):
    samples = [FlowSample.draw(rng, 8) for _ in range(instances)]
    perfect = [velocity_target(s.z0, s.z1) for s in samples]
    if batch_flow_loss(perfect, samples) != 0.0:
        return False, "perfect batch has non-zero loss"
    for s in samples:
        if not np.allclose(s.z_t, s.t * s.z0 + (1 - s.t) * s.z1, rtol=0, atol=1e-12):
            return False, "sample z_t off the path"
    return True, "batch mean of per-sample losses; samples lie on the path"


PROPERTIES = (
    ("interpolate endpoints", _check_endpoints),
    ("interpolate midpoint and swap", _check_midpoint),
    ("constant velocity (finite differences)", _check_velocity),
    ("flow MSE values", _check_mse),
    ("flow MSE gradient (finite differences)", _check_gradient),
    ("masked CE values", _check_ce),
    ("total loss algebra", _check_total),
    ("batch flow loss", _check_batch),
)


def verify_math(seed=0, instances=100, lambda_ce=DEFAULT_LAMBDA_CE):
    """
    Runs every property on seeded random instances and returns one PropertyCheck per property.
    The total-loss property is also checked at `lambda_ce`, the weight training is configured with.
    """
    rng = np.random.default_rng(seed)
    checks = dict(PROPERTIES)
    checks["total loss algebra"] = partial(_check_total, lambda_ce=lambda_ce)
    results = []
    for name, check in checks.items():
        passed, detail = check(rng, instances)
        results.append(PropertyCheck(name, bool(passed), detail))
    return results


def format_checks(results):
    width = max(len(r.name) for r in results)
    lines = [f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}" for r in results]
    return "\n".join(lines)
