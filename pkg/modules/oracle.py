"""
Brute-force references for the attention identities.

Nothing here goes through the fast kernels in numerics/attention for the
reference side: logits, softmax and weighted sums are explicit float64 loops.
Sizes are meant to stay small (L <= 64 tokens, d <= 32).
"""

import math
from dataclasses import dataclass

import numpy as np

from .attention import (
    AttentionWeights,
    HeadActivation,
    ShiftConfig,
    decompose_hs,
    head_activation,
    joint_attention,
    merge_heads,
    partition_attention,
    compute_alphas,
    reweight_query,
    shift_inject,
    shift_terms,
)
from .layout import TokenLayout
from .numerics import ShapeError, frobenius_norm, relative_error

MAX_ORACLE_TOKENS = 64
MAX_ORACLE_DIM = 32


@dataclass(frozen=True)
class CheckReport:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self):
        return bool(np.isfinite(self.max_error)) and self.max_error <= self.tolerance

    def line(self):
        return f"{self.name} max_error={self.max_error:.9g} {'PASS' if self.passed else 'FAIL'}"


def _merge(reports, name, tolerance):
    """Worst error of a list of per-trial reports"""
    return CheckReport(name, max(r.max_error for r in reports), tolerance)


# -----------------------------------------------
# Naive joint attention: explicit logit matrix, explicit softmax, explicit weighted sum.
# Returns the concatenated per-head hidden states before the output projection
def full_softmax_reference(X, layout, w, masked_segments=()):
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (layout.total, w.model_dim):
        raise ShapeError(f"X has shape {X.shape}, expected ({layout.total}, {w.model_dim})")
    if layout.total > MAX_ORACLE_TOKENS or w.model_dim > MAX_ORACLE_DIM:
        raise ShapeError(f"oracle is limited to {MAX_ORACLE_TOKENS} tokens and d <= {MAX_ORACLE_DIM}")

    n, d = X.shape
    dh = w.head_dim
    scale = w.softmax_scale
    Q = X @ w.w_q.astype(np.float64)
    K = X @ w.w_k.astype(np.float64)
    V = X @ w.w_v.astype(np.float64)

    masked = np.zeros(n, dtype=bool)
    for segment in masked_segments:
        masked[layout.slice(segment)] = True

    out = np.zeros((n, d), dtype=np.float64)
    for h in range(w.num_heads):
        cols = slice(h * dh, (h + 1) * dh)
        for i in range(n):
            logits = [-math.inf] * n
            for j in range(n):
                if not masked[j]:
                    logits[j] = float(np.dot(Q[i, cols], K[j, cols])) * scale

            peak = max(logits)
            weights = [math.exp(l - peak) if l != -math.inf else 0.0 for l in logits]
            total = math.fsum(weights)

            acc = np.zeros(dh, dtype=np.float64)
            for j in range(n):
                if weights[j] != 0.0:
                    acc += (weights[j] / total) * V[j, cols]
            out[i, cols] = acc
    return out


def verify_decomposition(X, layout, w, tol, alpha_perturbation=0.0):
    """
    Compare the oracle h_s with alpha_p h(demo_p) + alpha_c h(demo_c) + alpha_s h(query).
    A non-zero `alpha_perturbation` is added to alpha_p of the first row of every head.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    reference = full_softmax_reference(X, layout, w)[layout.slice("s")]

    hidden = decompose_hs(X, layout, w)
    a = hidden.alphas
    alpha_p = a.alpha_p.astype(np.float64).copy()
    alpha_p[:, 0] += alpha_perturbation
    recombined = alpha_p * hidden.demo_p + a.alpha_c * hidden.demo_c + a.alpha_s * hidden.query
    return CheckReport("decomposition", relative_error(merge_heads(recombined), reference), tol)


def verify_shift_linearity(X, layout, w, grid, tol=1e-6):
    """Max relative deviation of the shift delta from a1 * basis_p + a2 * basis_c over the grid"""
    grid = list(grid)
    if not grid:
        raise ValueError("shift grid must not be empty")

    hidden = joint_attention(X, layout, w)
    partition = partition_attention(X, layout, w)
    basis_p = shift_inject(hidden, partition, cfg=ShiftConfig(1.0, 0.0)).shift.astype(np.float64)
    basis_c = shift_inject(hidden, partition, cfg=ShiftConfig(0.0, 1.0)).shift.astype(np.float64)

    worst = 0.0
    for a1, a2 in grid:
        shifted = shift_inject(hidden, partition, cfg=ShiftConfig(a1, a2))
        delta = shifted.shift.astype(np.float64) if shifted.shift is not None else np.zeros_like(basis_p)
        expected = a1 * basis_p + a2 * basis_c
        # relative to the shift itself; terms that cancel fall back to their summed magnitudes
        scale = max(frobenius_norm(expected), 1e-3 * (abs(a1) * frobenius_norm(basis_p) + abs(a2) * frobenius_norm(basis_c)))
        worst = max(worst, frobenius_norm(delta - expected) / scale if scale > 0 else frobenius_norm(delta))
    return CheckReport("shift_linearity", worst, tol)


# -----------------------------------------------
# Further per-instance checks run by the verification suite
def check_oracle_agreement(X, layout, w, tol=1e-5):
    hidden = joint_attention(X, layout, w)
    return CheckReport("oracle_agreement", relative_error(merge_heads(hidden.heads), full_softmax_reference(X, layout, w)), tol)


def check_alpha_normalization(X, layout, w, tol=1e-6):
    alphas = compute_alphas(partition_attention(X, layout, w)).values.astype(np.float64)
    error = float(np.max(np.abs(alphas.sum(axis=-1) - 1.0)))
    if (alphas < -tol).any() or (alphas > 1.0 + tol).any():
        error = math.inf
    return CheckReport("alpha_normalization", error, tol)


def check_shift_identities(X, layout, w, alpha2, tol=1e-6):
    hidden = joint_attention(X, layout, w)
    partition = partition_attention(X, layout, w)

    # zero strengths must be a bit-exact no-op
    untouched = shift_inject(hidden, partition, cfg=ShiftConfig(0.0, 0.0))
    zero_error = 0.0 if np.array_equal(untouched.heads, hidden.heads) else math.inf

    _, ref_term = shift_terms(partition, hidden.values)
    shifted = shift_inject(hidden, partition, cfg=ShiftConfig(0.0, alpha2))
    expected = alpha2 * frobenius_norm(ref_term)
    actual = frobenius_norm(shifted.shift)
    if expected == 0.0:
        homogeneity = actual
    else:
        homogeneity = abs(actual - expected) / expected
    return CheckReport("shift_zero_identity", zero_error, 0.0), CheckReport("shift_homogeneity", homogeneity, tol)


def check_reweighting(X, layout, w, tol=1e-6):
    partition = partition_attention(X, layout, w)
    act = head_activation(partition)

    bounds_error = 0.0
    if (act.normalized < 0).any() or (act.normalized > 1).any():
        bounds_error = math.inf
    if np.ptp(act.raw) > 0 and int(np.argmax(act.raw)) != int(np.argmax(act.normalized)):
        bounds_error = math.inf

    hidden = decompose_hs(X, layout, w)
    zeroed = reweight_query(hidden, HeadActivation(act.raw, np.zeros_like(act.normalized)))
    a = hidden.alphas
    demo_only = (a.alpha_p * hidden.demo_p + a.alpha_c * hidden.demo_c).astype(np.float64)
    zero_head_error = frobenius_norm(zeroed.h_s - demo_only) / max(frobenius_norm(hidden.h_s), 1e-30)
    return CheckReport("reweight_bounds", bounds_error, 0.0), CheckReport("reweight_zero_head", zero_head_error, tol)


def check_uniform_alphas(layout, model_dim=8, num_heads=2, tol=1e-6):
    """Zero query weights give uniform logits, so alphas equal (L_p, L_c, L_s) / L"""
    rng = np.random.default_rng(0)
    w = AttentionWeights.random(rng, model_dim, num_heads)
    w = AttentionWeights(np.zeros_like(w.w_q), w.w_k, w.w_v, w.w_o, num_heads)
    X = rng.standard_normal((layout.total, model_dim)).astype(np.float32)
    alphas = compute_alphas(partition_attention(X, layout, w)).values.astype(np.float64)
    expected = np.array([layout.len_prompt, layout.len_ref, layout.len_target], dtype=np.float64) / layout.total
    return CheckReport("uniform_alphas", float(np.max(np.abs(alphas - expected))), tol)


# -----------------------------------------------
# Seeded random instances: layouts up to (8, 16, 16), d <= 32, H in {1, 2, 4}
def random_instance(rng):
    layout = TokenLayout(int(rng.integers(1, 9)), int(rng.integers(1, 17)), int(rng.integers(1, 17)))
    num_heads = int(rng.choice([1, 2, 4]))
    head_dim = int(rng.choice([2, 4, 8]))
    model_dim = num_heads * head_dim
    w = AttentionWeights.random(rng, model_dim, num_heads)
    X = rng.standard_normal((layout.total, model_dim)).astype(np.float32)
    return X, layout, w


def run_suite(trials=100, seed=0, inject_fault=False, tol=1e-5):
    """Run every check over `trials` seeded instances; one merged report per check"""
    rng = np.random.default_rng(seed)
    collected = {}

    def add(report):
        collected.setdefault(report.name, []).append(report)

    for _ in range(trials):
        X, layout, w = random_instance(rng)
        alpha2 = float(rng.uniform(0.1, 1.0))
        grid = [(float(a1), float(a2)) for a1 in rng.uniform(0, 1, 3) for a2 in rng.uniform(0, 1, 3)]

        add(check_oracle_agreement(X, layout, w, tol))
        add(verify_decomposition(X, layout, w, tol, alpha_perturbation=0.01 if inject_fault else 0.0))
        add(check_alpha_normalization(X, layout, w))
        for report in check_shift_identities(X, layout, w, alpha2):
            add(report)
        add(verify_shift_linearity(X, layout, w, grid))
        for report in check_reweighting(X, layout, w):
            add(report)

    add(check_uniform_alphas(TokenLayout(2, 3, 4)))
    return [_merge(reports, name, reports[0].tolerance) for name, reports in collected.items()]
