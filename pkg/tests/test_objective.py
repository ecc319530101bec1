import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lightmbn import tensor as T
from lightmbn.errors import BatchStructureError, ConfigError, ContractError
from lightmbn.model import BackboneConfig, ModelConfig, build_model
from lightmbn.objective import (
    Adam,
    AdamState,
    LossWeights,
    MSLossParams,
    ScheduleParams,
    adam_step,
    ce_label_smoothing,
    lr_schedule,
    ms_loss,
    scaled_drop_epochs,
    step_schedule,
    total_loss,
    triplet_batch_hard,
    write_schedule_csv,
)
from lightmbn.tensor import Tensor, backward, grad_check, smooth_coords

# --- cross-entropy with label smoothing -----------------------------------


def ce_oracle(logits, labels, eps):
    n, k = logits.shape
    total = 0.0
    for i in range(n):
        z = logits[i] - logits[i].max()
        logp = z - math.log(sum(math.exp(v) for v in z))
        for j in range(k):
            q = (1 - eps) * (j == labels[i]) + eps / k
            total -= q * logp[j]
    return total / n


@pytest.mark.parametrize("eps", [0.0, 0.1, 0.5])
def test_ce_uniform_logits_cost_log_k(eps):
    assert ce_label_smoothing(Tensor(np.zeros((3, 4))), [0, 1, 3], eps).item() == pytest.approx(math.log(4), abs=1e-12)


def test_ce_confident_no_smoothing_is_zero():
    logits = np.array([[1000.0, 0.0, 0.0]])
    assert ce_label_smoothing(Tensor(logits), [0], 0.0).item() == pytest.approx(0.0, abs=1e-12)


def test_ce_hand_value():
    logits = np.log(np.array([[0.8, 0.2]]))
    expected = -(0.9 * math.log(0.8) + 0.1 * math.log(0.2))
    assert ce_label_smoothing(Tensor(logits), [0], 0.2).item() == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(0.361773, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(2, 7), st.floats(0.0, 0.9), st.integers(0, 2**31 - 1))
def test_ce_matches_oracle(n, k, eps, seed):
    rng = np.random.default_rng(seed)
    logits, labels = rng.normal(size=(n, k)) * 3, rng.integers(0, k, n)
    assert ce_label_smoothing(Tensor(logits), labels, eps).item() == pytest.approx(ce_oracle(logits, labels, eps),
                                                                                    rel=1e-10, abs=1e-12)


def test_ce_rejects_bad_labels():
    with pytest.raises(IndexError):
        ce_label_smoothing(Tensor(np.zeros((2, 3))), [0, 3])


# --- multi-similarity ------------------------------------------------------


def ms_oracle(emb, labels, a=2.0, b=50.0, lam=0.5, eps=0.1):
    x = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    s = x @ x.T
    n = len(labels)
    total = 0.0
    for i in range(n):
        pos = [j for j in range(n) if j != i and labels[j] == labels[i]]
        neg = [j for j in range(n) if labels[j] != labels[i]]
        # thresholds over an empty set are -inf / +inf, so nothing is mined against it
        pm = [j for j in pos if s[i, j] < max((s[i, k] for k in neg), default=-math.inf) + eps]
        nm = [j for j in neg if s[i, j] > min((s[i, k] for k in pos), default=math.inf) - eps]
        total += math.log(1 + sum(math.exp(-a * (s[i, j] - lam)) for j in pm)) / a
        total += math.log(1 + sum(math.exp(b * (s[i, j] - lam)) for j in nm)) / b
    return total / n


def test_ms_hand_value():
    # anchor with one positive at S=0.2 and one negative at S=0.9, both mined
    a, b, lam = 2.0, 50.0, 0.5
    expected = math.log(1 + math.exp(-a * (0.2 - lam))) / a + math.log(1 + math.exp(b * (0.9 - lam))) / b
    assert expected == pytest.approx(0.5 * math.log(1 + math.exp(0.6)) + 0.02 * math.log(1 + math.exp(20)), abs=1e-15)
    assert expected == pytest.approx(0.918744, abs=1e-6)
    # realise those similarities: e0 . e1 = 0.2, e0 . e2 = 0.9
    e0 = np.array([1.0, 0.0, 0.0])
    e1 = np.array([0.2, math.sqrt(1 - 0.04), 0.0])
    e2 = np.array([0.9, 0.0, math.sqrt(1 - 0.81)])
    emb = np.stack([e0, e1, e2])
    per_anchor = ms_oracle(emb, [0, 0, 1]) * 3
    got = ms_loss(Tensor(emb), [0, 0, 1]).item() * 3
    assert got == pytest.approx(per_anchor, abs=1e-12)
    s = emb @ emb.T
    assert s[0, 1] == pytest.approx(0.2) and s[0, 2] == pytest.approx(0.9)


def test_ms_empty_sets_give_zero():
    # all-distinct labels: no positives, hence no negative is mined either
    assert ms_loss(Tensor(np.random.default_rng(0).normal(size=(5, 3))), [0, 1, 2, 3, 4]).item() == 0.0
    assert ms_loss(Tensor(np.ones((1, 4))), [0]).item() == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 10), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_ms_matches_oracle(n, k, seed):
    rng = np.random.default_rng(seed)
    emb, labels = rng.normal(size=(n, 5)), rng.integers(0, k, n)
    assert ms_loss(Tensor(emb), labels).item() == pytest.approx(ms_oracle(emb, labels), rel=1e-9, abs=1e-12)


# --- triplet ---------------------------------------------------------------


def test_triplet_identical_embeddings_cost_margin():
    emb = np.ones((4, 3))
    assert triplet_batch_hard(Tensor(emb), [0, 0, 1, 1], 0.3).item() == pytest.approx(0.3, abs=1e-5)


def test_triplet_separated_clusters():
    emb = np.array([[0.0], [0.1], [5.0], [5.2]])
    assert triplet_batch_hard(Tensor(emb), [0, 0, 1, 1], 0.3).item() == 0.0
    assert triplet_batch_hard(Tensor(emb), [0, 0, 1, 1], 0.0).item() == 0.0


def test_triplet_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        emb, labels = rng.normal(size=(8, 3)), np.repeat(np.arange(4), 2)
        d = np.linalg.norm(emb[:, None] - emb[None], axis=2)
        same = labels[:, None] == labels[None]
        dp = np.where(same, d, -np.inf).max(axis=1)
        dn = np.where(~same, d, np.inf).min(axis=1)
        expected = np.maximum(dp - dn + 0.3, 0).mean()
        assert triplet_batch_hard(Tensor(emb), labels).item() == pytest.approx(expected, abs=1e-6)


@pytest.mark.parametrize("labels", [[0, 0, 0, 0], [0, 0, 1, 2]])
def test_triplet_requires_pk_structure(labels):
    with pytest.raises(BatchStructureError):
        triplet_batch_hard(Tensor(np.random.default_rng(1).normal(size=(4, 2))), labels)


# --- gradient checks on the losses (100 trials each) -----------------------


def test_grad_check_losses():
    worst = {"ce": 0.0, "ms": 0.0, "triplet": 0.0}
    for trial in range(100):
        rng = np.random.default_rng([21, trial])
        logits = Tensor(rng.normal(size=(6, 5)))
        y = rng.integers(0, 5, 6)
        worst["ce"] = max(worst["ce"], grad_check(lambda t: ce_label_smoothing(t, y, 0.1), logits))

        labels = np.repeat(np.arange(4), 3)
        emb = Tensor(rng.normal(size=(12, 6)))
        f = lambda t: ms_loss(t, labels)  # noqa: E731
        coords = smooth_coords(f, emb)
        worst["ms"] = max(worst["ms"], grad_check(f, emb, coords=coords))

        emb = Tensor(rng.normal(size=(8, 4)))
        g = lambda t: triplet_batch_hard(t, np.repeat(np.arange(4), 2), 0.3)  # noqa: E731
        coords = smooth_coords(g, emb)
        worst["triplet"] = max(worst["triplet"], grad_check(g, emb, coords=coords))
    assert max(worst.values()) < 1e-4, worst


# --- total loss --------------------------------------------------------------


@pytest.fixture(scope="module")
def bundle_and_labels():
    m = build_model(ModelConfig(4, backbone=BackboneConfig("tiny", 4), dtype="float64"))
    x = np.random.default_rng(0).normal(size=(8, 3, 384, 128))
    return m, x, np.repeat(np.arange(4), 2)


def test_total_loss_terms(bundle_and_labels):
    m, x, labels = bundle_and_labels
    loss, terms = total_loss(m(x, "train"), labels)
    assert sum(k.startswith("ce:") for k in terms) == 7
    assert sum(k.startswith("ms:") for k in terms) == 3
    ce = sum(v for k, v in terms.items() if k.startswith("ce:"))
    ms = sum(v for k, v in terms.items() if k.startswith("ms:"))
    assert loss.item() == pytest.approx(0.5 * ce + 0.5 * ms, rel=1e-12)
    _, tri = total_loss(m(x, "train"), labels, ranking="triplet")
    assert sum(k.startswith("triplet:") for k in tri) == 3


class _Bundle:
    def __init__(self, logits, ranking):
        self._logits, self._ranking = logits, ranking

    def identity_set(self):
        return self._logits

    def ranking_set(self):
        return self._ranking


def test_total_loss_equal_sums_algebra():
    # CE of uniform logits over K classes is ln K; pick K so both sums equal ln 4
    logits = {"g": Tensor(np.zeros((4, 4)))}
    emb = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    labels = np.array([0, 1, 2, 3])
    assert ms_loss(Tensor(emb), labels).item() == 0.0
    loss, terms = total_loss(_Bundle(logits, {}), labels)
    assert loss.item() == pytest.approx(0.5 * math.log(4), abs=1e-12)
    s = math.log(4)
    both = {"g": Tensor(np.zeros((4, 4))), "p_g": Tensor(np.zeros((4, 4)))}
    loss, _ = total_loss(_Bundle(both, {}), labels, LossWeights(0.5, 0.5))
    assert loss.item() == pytest.approx(s, abs=1e-12)


def test_total_loss_dead_ranking_term(bundle_and_labels):
    m, x, labels = bundle_and_labels

    def grads(**kw):
        m.zero_grad()
        loss, _ = total_loss(m(x, "train"), labels, **kw)
        backward(loss)
        out = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in m.parameters()]
        m.zero_grad()
        return out

    for g in grads(weights=LossWeights(0.0, 0.0)):
        assert not np.any(g)
    # with lambda_MS = 0 the choice and tuning of the ranking loss cannot matter
    ref = grads(weights=LossWeights(1.0, 0.0), ranking="ms")
    for other in (grads(weights=LossWeights(1.0, 0.0), ranking="triplet"),
                  grads(weights=LossWeights(1.0, 0.0), ms_params=MSLossParams(alpha=7.0))):
        for a, b in zip(ref, other):
            np.testing.assert_array_equal(a, b)


def test_loss_config_guards():
    with pytest.raises(ConfigError):
        LossWeights(-1.0, 0.5)
    with pytest.raises(ConfigError):
        MSLossParams(alpha=0.0)


# --- schedules --------------------------------------------------------------


def test_wca_values():
    p = ScheduleParams()
    assert lr_schedule(1, p) == pytest.approx(6e-5, abs=1e-18)
    assert lr_schedule(10, p) == pytest.approx(6e-4, abs=1e-18)
    assert abs(lr_schedule(75, p) - 3e-4) < 1e-12
    assert lr_schedule(140, p) == pytest.approx(6e-7, abs=1e-18)


def test_wca_monotone_after_warmup_and_continuous():
    p = ScheduleParams()
    lrs = [lr_schedule(t, p) for t in range(1, 141)]
    assert all(a >= b for a, b in zip(lrs[9:], lrs[10:]))
    assert all(a < b for a, b in zip(lrs[:9], lrs[1:10]))
    assert abs(lrs[10] - lrs[9]) < 1e-6
    assert min(lrs) >= p.lr_floor


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 20), st.integers(1, 300))
def test_wca_property(warmup, extra):
    p = ScheduleParams(T=warmup + extra, warmup=warmup)
    lrs = [lr_schedule(t, p) for t in range(1, p.T + 1)]
    assert max(lrs) == pytest.approx(p.lr_peak)
    assert all(p.lr_floor <= v <= p.lr_peak for v in lrs)
    assert all(a >= b - 1e-18 for a, b in zip(lrs[warmup - 1:], lrs[warmup:]))


def test_schedule_out_of_range():
    with pytest.raises(ContractError):
        lr_schedule(0, ScheduleParams())
    with pytest.raises(ContractError):
        lr_schedule(141, ScheduleParams())
    with pytest.raises(ConfigError):
        ScheduleParams(T=10, warmup=10)


def test_step_schedule_drops():
    lrs = [step_schedule(t, 140) for t in range(1, 141)]
    assert lrs[0] == lrs[48] == 6e-4
    assert lrs[49] == pytest.approx(6e-5) and lrs[78] == pytest.approx(6e-5)
    assert lrs[79] == pytest.approx(6e-6) and lrs[109] == pytest.approx(6e-7)
    assert scaled_drop_epochs(140) == (50, 80, 110)
    assert scaled_drop_epochs(70) == (25, 40, 55)


def test_schedule_csv(tmp_path):
    p = ScheduleParams()
    write_schedule_csv(tmp_path / "s.csv", [lr_schedule(t, p) for t in range(1, 141)])
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "epoch,lr" and len(rows) == 141
    assert float(rows[10].split(",")[1]) == pytest.approx(6e-4)


# --- Adam ---------------------------------------------------------------------


def test_adam_zero_gradient_is_fixed_point():
    w = Tensor(np.array([1.0, -2.0]))
    state = AdamState.for_params([w])
    for _ in range(5):
        adam_step([w], [np.zeros(2)], state, 1e-2)
    np.testing.assert_array_equal(w.data, [1.0, -2.0])


def test_adam_constant_gradient_step_is_lr():
    w = Tensor(np.zeros(3))
    state = AdamState.for_params([w])
    prev = w.data.copy()
    for _ in range(200):
        adam_step([w], [np.array([0.5, -3.0, 1e-3])], state, 1e-3)
        step = w.data - prev
        prev = w.data.copy()
    np.testing.assert_allclose(np.abs(step), 1e-3, rtol=1e-4)
    assert np.all(np.sign(step) == [-1, 1, -1])


def test_adam_first_step_matches_closed_form():
    w = Tensor(np.array([0.3]))
    state = AdamState.for_params([w])
    adam_step([w], [np.array([2.0])], state, 0.1)
    # bias-corrected m_hat = g, v_hat = g^2 on step 1
    assert w.data[0] == pytest.approx(0.3 - 0.1 * 2.0 / (2.0 + 1e-8))


def test_adam_runs_are_deterministic():
    def run():
        rng = np.random.default_rng(3)
        w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        opt = Adam([w])
        for _ in range(10):
            opt.zero_grad()
            backward(T.tsum(T.power(w, 2.0)) + T.tsum(w))
            opt.step(1e-2)
        return w.data

    np.testing.assert_array_equal(run(), run())
