"""Training objectives with analytic gradients.

All functions are pure: they return the scalar loss and gradients with
respect to their array inputs.  ``total_loss`` mixes the three terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

_PROB_CLAMP = 1e-12
_NORM_FLOOR = 1e-12
# Cosines of parallel vectors come out a few ulps below 1; disagreement
# weights under this floor are rounding noise and are treated as exactly 0.
_WEIGHT_FLOOR = 1e-12
MIN_TAU = 0.005


@dataclass(frozen=True)
class LossConfig:
    lambda_xmod: float = 0.02
    lambda_sup: float = 0.03
    tau_xmod: float = 0.12
    tau_sup: float = 0.15
    # False reproduces the "no disagreement weighting" ablation (all weights 1).
    disagreement_weighting: bool = True

    def __post_init__(self):
        if self.tau_xmod < MIN_TAU or self.tau_sup < MIN_TAU:
            raise ValueError(f"temperatures must be at least {MIN_TAU}")
        if self.lambda_xmod < 0 or self.lambda_sup < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossReport:
    bce: float
    xmod: float
    supcon: float
    total: float
    batch_size: int
    flags: dict = field(default_factory=dict)


class ClampCounter:
    """Counts probabilities that had to be clamped away from 0/1."""

    count = 0


def bce_loss(probs: np.ndarray, labels: np.ndarray, logits: np.ndarray | None = None):
    """Mean binary cross-entropy and its gradient w.r.t. the logits.

    When ``logits`` are supplied the loss is evaluated in the stable
    softplus form; otherwise probabilities are clamped to ``[1e-12, 1-1e-12]``
    and each clamp is tallied on ``ClampCounter``.
    """
    y = np.asarray(labels, dtype=np.float64).ravel()
    n = y.size
    if logits is not None:
        logits = np.asarray(logits, dtype=np.float64).ravel()
        loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
        return loss, (expit(logits) - y) / n
    p = np.asarray(probs, dtype=np.float64).ravel()
    clipped = (p < _PROB_CLAMP) | (p > 1.0 - _PROB_CLAMP)
    ClampCounter.count += int(clipped.sum())
    p = np.clip(p, _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    loss = float(np.mean(-y * np.log(p) - (1.0 - y) * np.log1p(-p)))
    return loss, (p - y) / n


def _unit_rows(z: np.ndarray):
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    degenerate = norms[:, 0] < _NORM_FLOOR
    safe = np.where(degenerate[:, None], 1.0, norms)
    u = np.where(degenerate[:, None], 0.0, z / safe)
    return u, safe, degenerate


def _unit_rows_backward(du: np.ndarray, u: np.ndarray, norms: np.ndarray, degenerate: np.ndarray):
    dz = (du - u * np.sum(du * u, axis=1, keepdims=True)) / norms
    dz[degenerate] = 0.0
    return dz


def xmod_infonce(z_p: np.ndarray, z_b: np.ndarray, tau: float = 0.12):
    """Symmetric cross-modal InfoNCE over cosine similarities.

    Row ``i`` of each modality is the positive for row ``i`` of the other;
    the remaining batch rows are negatives.  Returns
    ``(loss, (d_zp, d_zb), flags)``.  Zero-norm rows get similarity 0 to
    everything and are reported in ``flags["zero_norm_rows"]``.
    """
    if tau < MIN_TAU:
        raise ValueError(f"tau must be at least {MIN_TAU}")
    B = z_p.shape[0]
    u_p, n_p, deg_p = _unit_rows(z_p)
    u_b, n_b, deg_b = _unit_rows(z_b)
    S = (u_p @ u_b.T) / tau
    # |S| <= 1/tau: shifting by the bound avoids overflow, and the
    # smallest term exp(-2/tau) stays representable for tau >= MIN_TAU
    shift = 1.0 / tau
    E = np.exp(S - shift)
    row_sum = E.sum(axis=1)   # protein anchor -> genome candidates
    col_sum = E.sum(axis=0)   # genome anchor -> protein candidates
    diag = np.diagonal(S) - shift
    loss = -(np.sum(diag - np.log(row_sum)) + np.sum(diag - np.log(col_sum))) / (2.0 * B)

    dS = E / row_sum[:, None] + E / col_sum[None, :]
    dS[np.diag_indices(B)] -= 2.0
    dS /= 2.0 * B
    du_p = dS @ u_b / tau
    du_b = dS.T @ u_p / tau
    d_zp = _unit_rows_backward(du_p, u_p, n_p, deg_p)
    d_zb = _unit_rows_backward(du_b, u_b, n_b, deg_b)
    flags = {"zero_norm_rows": int(deg_p.sum() + deg_b.sum())}
    return float(loss), (d_zp, d_zb), flags


def disagreement_weights(z_p: np.ndarray, z_b: np.ndarray) -> np.ndarray:
    """``(1 - cos(z_p_i, z_b_i)) / 2`` per row, in ``[0, 1]``."""
    u_p, _, _ = _unit_rows(z_p)
    u_b, _, _ = _unit_rows(z_b)
    cos = np.clip(np.sum(u_p * u_b, axis=1), -1.0, 1.0)
    w = (1.0 - cos) / 2.0
    return np.where(w < _WEIGHT_FLOOR, 0.0, w)


def disagreement_supcon(h: np.ndarray, labels: np.ndarray, z_p: np.ndarray, z_b: np.ndarray,
                        tau: float = 0.15, weighted: bool = True):
    """Supervised contrastive loss on L2-normalised ``h`` with per-anchor
    disagreement weights.

    Per anchor ``i`` with same-label partners ``P(i)``::

        L_i = -1/|P(i)| * sum_{p in P(i)} log( exp(s_ip/tau) / sum_{a != i} exp(s_ia/tau) )

    and the loss is ``sum_i d_i L_i / sum_i d_i`` over anchors with a partner,
    where ``d_i`` comes from :func:`disagreement_weights` (or is 1 when
    ``weighted`` is False).  Gradients flow through ``d_i`` into ``z_p`` and
    ``z_b`` as well.  Returns ``(loss, (d_h, d_zp, d_zb), flags)``.
    """
    if tau < MIN_TAU:
        raise ValueError(f"tau must be at least {MIN_TAU}")
    y = np.asarray(labels).ravel()
    B = h.shape[0]
    zeros = (np.zeros_like(h), np.zeros_like(z_p), np.zeros_like(z_b))
    if B < 2:
        return 0.0, zeros, {"empty": True}

    u_h, n_h, deg_h = _unit_rows(h)
    S = (u_h @ u_h.T) / tau
    pos = (y[:, None] == y[None, :]).astype(np.float64)
    pos[np.diag_indices(B)] = 0.0
    n_pos = pos.sum(axis=1)
    valid = n_pos > 0

    shift = 1.0 / tau
    E = np.exp(S - shift)
    E[np.diag_indices(B)] = 0.0
    Z = E.sum(axis=1)
    lse = np.log(Z) + shift
    per_anchor = np.zeros(B)
    pos_sum = np.einsum("ij,ij->i", pos, S)
    per_anchor[valid] = lse[valid] - pos_sum[valid] / n_pos[valid]

    if weighted:
        u_p, n_p, deg_p = _unit_rows(z_p)
        u_b, n_b, deg_b = _unit_rows(z_b)
        cos = np.sum(u_p * u_b, axis=1)
        w = (1.0 - cos) / 2.0
        live = w >= _WEIGHT_FLOOR
        w = np.where(live, w, 0.0)
    else:
        w = np.ones(B)
    w = np.where(valid, w, 0.0)
    wsum = w.sum()
    if not valid.any() or wsum <= 0.0:
        return 0.0, zeros, {"empty": True}
    loss = float(np.dot(w, per_anchor) / wsum)

    # d loss / d S (anchor rows only); S is symmetric in construction.
    coef = w / wsum
    P = E / Z[:, None]
    dS = coef[:, None] * (P - pos / np.maximum(n_pos, 1.0)[:, None])
    du_h = (dS + dS.T) @ u_h / tau
    d_h = _unit_rows_backward(du_h, u_h, n_h, deg_h)

    d_zp = np.zeros_like(z_p)
    d_zb = np.zeros_like(z_b)
    if weighted:
        dw = (per_anchor - loss) / wsum
        dw = np.where(valid & live, dw, 0.0)
        dcos = -0.5 * dw
        d_zp = _unit_rows_backward(dcos[:, None] * u_b, u_p, n_p, deg_p)
        d_zb = _unit_rows_backward(dcos[:, None] * u_p, u_b, n_b, deg_b)
    return loss, (d_h, d_zp, d_zb), {"empty": False}


def total_loss(bce: float, xmod: float, supcon: float, config: LossConfig, batch_size: int,
               flags: dict | None = None) -> LossReport:
    total = bce + config.lambda_xmod * xmod + config.lambda_sup * supcon
    return LossReport(bce=bce, xmod=xmod, supcon=supcon, total=total,
                      batch_size=batch_size, flags=dict(flags or {}))
