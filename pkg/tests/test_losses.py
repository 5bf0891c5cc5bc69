import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microfuse.losses import (ClampCounter, LossConfig, bce_loss, disagreement_supcon, disagreement_weights,
                              total_loss, xmod_infonce)
from microfuse.nn import grad_check, substream


def cos(a, b):
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def infonce_oracle(zp, zb, tau):
    B = zp.shape[0]
    total = 0.0
    for i in range(B):
        num = math.exp(cos(zp[i], zb[i]) / tau)
        total -= math.log(num / sum(math.exp(cos(zp[i], zb[j]) / tau) for j in range(B)))
        num = math.exp(cos(zb[i], zp[i]) / tau)
        total -= math.log(num / sum(math.exp(cos(zb[i], zp[j]) / tau) for j in range(B)))
    return total / (2 * B)


def supcon_oracle(h, y, zp, zb, tau, weighted=True):
    B = h.shape[0]
    num = den = 0.0
    for i in range(B):
        partners = [p for p in range(B) if p != i and y[p] == y[i]]
        if not partners:
            continue
        z = sum(math.exp(cos(h[i], h[a]) / tau) for a in range(B) if a != i)
        li = -sum(math.log(math.exp(cos(h[i], h[p]) / tau) / z) for p in partners) / len(partners)
        w = (1 - cos(zp[i], zb[i])) / 2 if weighted else 1.0
        num += w * li
        den += w
    return 0.0 if den == 0 else num / den


# --------------------------------------------------------------------- BCE

def test_bce_known_value():
    loss, _ = bce_loss(np.array([0.9, 0.2]), np.array([1, 0]))
    assert loss == pytest.approx(-(math.log(0.9) + math.log(0.8)) / 2, abs=1e-12)


def test_bce_logit_path_is_stable_and_agrees():
    logits = np.array([-3.0, 0.5, 2.0])
    y = np.array([0, 1, 1])
    p = 1 / (1 + np.exp(-logits))
    a, ga = bce_loss(p, y, logits=logits)
    b, gb = bce_loss(p, y)
    assert a == pytest.approx(b, abs=1e-12)
    np.testing.assert_allclose(ga, (p - y) / 3, atol=1e-15)
    big, _ = bce_loss(None, np.array([0]), logits=np.array([800.0]))
    assert big == pytest.approx(800.0)


def test_bce_clamps_and_counts():
    before = ClampCounter.count
    loss, _ = bce_loss(np.array([0.0, 1.0]), np.array([1, 0]))
    assert math.isfinite(loss)
    assert ClampCounter.count == before + 2


# ----------------------------------------------------------------- InfoNCE

def test_infonce_single_row_is_zero():
    loss, (gp, gb), _ = xmod_infonce(np.array([[1.0, 2.0]]), np.array([[-3.0, 0.5]]), 0.12)
    assert loss == 0.0
    assert np.all(gp == 0) and np.all(gb == 0)


def test_infonce_worked_example():
    zp = np.array([[1.0, 0.0], [0.0, 1.0]])
    loss, _, _ = xmod_infonce(zp, zp.copy(), 1.0)
    assert loss == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)


def test_infonce_orthogonal_rows_at_low_temperature():
    eye = np.eye(8)
    loss, _, _ = xmod_infonce(eye, eye.copy(), 0.1)
    assert loss == pytest.approx(math.log(1 + 7 * math.exp(-10)), abs=1e-12)
    assert loss < 1e-3


def test_infonce_zero_row_flagged():
    zp = np.array([[0.0, 0.0], [1.0, 1.0]])
    loss, grads, flags = xmod_infonce(zp, np.ones((2, 2)), 0.2)
    assert flags["zero_norm_rows"] == 1
    assert math.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads)


def test_infonce_rejects_tiny_tau():
    with pytest.raises(ValueError):
        xmod_infonce(np.ones((2, 2)), np.ones((2, 2)), 1e-4)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 6), st.floats(0.05, 2.0), st.integers(0, 10**6))
def test_infonce_matches_oracle_and_is_symmetric(B, dim, tau, seed):
    rng = substream(seed, "nce")
    zp = rng.standard_normal((B, dim))
    zb = rng.standard_normal((B, dim))
    loss, _, _ = xmod_infonce(zp, zb, tau)
    swapped, _, _ = xmod_infonce(zb, zp, tau)
    assert loss == pytest.approx(infonce_oracle(zp, zb, tau), rel=1e-10, abs=1e-12)
    assert abs(loss - swapped) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(1e-3, 1e3))
def test_infonce_is_scale_invariant_per_row(seed, scale):
    rng = substream(seed, "scale")
    zp, zb = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    a, _, _ = xmod_infonce(zp, zb, 0.3)
    b, _, _ = xmod_infonce(zp * scale, zb, 0.3)
    assert a == pytest.approx(b, abs=1e-10)


def test_infonce_gradient():
    rng = substream(3, "g")
    zp, zb = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    _, (gp, gb), _ = xmod_infonce(zp, zb, 0.2)
    f = lambda: xmod_infonce(zp, zb, 0.2)[0]
    assert grad_check(f, {"zp": (zp, gp), "zb": (zb, gb)}) < 1e-6


# ------------------------------------------------------------------ SupCon

def test_disagreement_weight_range():
    zp = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    zb = np.array([[2.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    np.testing.assert_allclose(disagreement_weights(zp, zb), [0.0, 0.5, 1.0], atol=1e-15)


def test_supcon_zero_when_modalities_agree():
    rng = substream(0, "agree")
    z = rng.standard_normal((6, 3))
    h = rng.standard_normal((6, 5))
    loss, grads, flags = disagreement_supcon(h, np.array([0, 0, 1, 1, 0, 1]), z, 2 * z, 0.15)
    assert loss == 0.0 and flags["empty"]
    assert all(np.all(g == 0) for g in grads)


def test_supcon_no_partners_is_empty():
    loss, _, flags = disagreement_supcon(np.ones((2, 2)), np.array([0, 1]), np.eye(2), -np.eye(2), 0.2)
    assert loss == 0.0 and flags["empty"]


def test_supcon_unweighted_reduces_to_plain_supcon():
    h = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.1]])
    y = np.array([1, 0, 1])
    loss, _, _ = disagreement_supcon(h, y, np.eye(3, 2), np.eye(3, 2), 1.0, weighted=False)
    assert loss == pytest.approx(supcon_oracle(h, y, None, None, 1.0, weighted=False), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 9), st.integers(1, 5), st.floats(0.05, 2.0), st.booleans(), st.integers(0, 10**6))
def test_supcon_matches_oracle(B, dim, tau, weighted, seed):
    rng = substream(seed, "sup")
    h = rng.standard_normal((B, dim))
    zp, zb = rng.standard_normal((B, 3)), rng.standard_normal((B, 3))
    y = rng.integers(0, 2, B)
    loss, _, _ = disagreement_supcon(h, y, zp, zb, tau, weighted)
    assert loss == pytest.approx(supcon_oracle(h, y, zp, zb, tau, weighted), rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("weighted", [True, False])
def test_supcon_gradient(weighted):
    rng = substream(4, "supg")
    h = rng.standard_normal((6, 4))
    zp, zb = rng.standard_normal((6, 3)), rng.standard_normal((6, 3))
    y = np.array([0, 1, 1, 0, 1, 0])
    _, (gh, gp, gb), _ = disagreement_supcon(h, y, zp, zb, 0.3, weighted)
    f = lambda: disagreement_supcon(h, y, zp, zb, 0.3, weighted)[0]
    assert grad_check(f, {"h": (h, gh), "zp": (zp, gp), "zb": (zb, gb)}) < 1e-6


# ------------------------------------------------------------------- total

def test_total_is_weighted_sum():
    cfg = LossConfig()
    r = total_loss(0.7, 5.1, 3.3, cfg, 16)
    assert r.total == 0.7 + 0.02 * 5.1 + 0.03 * 3.3


def test_ce_only_total_equals_bce():
    cfg = LossConfig(lambda_xmod=0.0, lambda_sup=0.0)
    assert total_loss(0.4321, 9.0, 7.0, cfg, 4).total == 0.4321


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(tau_sup=0.0)
    with pytest.raises(ValueError):
        LossConfig(lambda_xmod=-1.0)


def test_supcon_zero_for_rescaled_views():
    # cosines of parallel rows land a few ulps below 1; those weights are exactly zero
    rng = substream(9, "parallel")
    zp = rng.standard_normal((12, 64))
    zb = zp * rng.uniform(0.3, 3.0, (12, 1))
    assert np.all(disagreement_weights(zp, zb) == 0.0)
    loss, _, flags = disagreement_supcon(rng.standard_normal((12, 5)), np.arange(12) % 2, zp, zb, 0.15)
    assert loss == 0.0 and flags["empty"]
