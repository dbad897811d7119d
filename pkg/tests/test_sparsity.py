import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from asni.mask import Mask
from asni.sparsity import (SparsitySchedule, asni_one_round, global_prune, lta, prune_count, sparsity_at,
                           stabilized_lta)
from asni.tensor import ParamStore, build_network, linear, loss_and_grad, relu
from asni.training import TrainConfig, seed_for, train_masked
from conftest import small_dataset


def _flat_store(values, bias=True):
    s = ParamStore()
    s.add("w", np.array(values, dtype=np.float32), True, 0)
    if bias:
        s.add("b", np.array([0.0, 0.0], dtype=np.float32), False, 0)
    return s


# -- schedule ---------------------------------------------------------------

def test_midpoint_is_half_alpha():
    s = SparsitySchedule(98, 50, 0.5, 5)
    assert sparsity_at(s, 25) == 49.0


def test_combo1_schedule_values():
    # 98 * sigmoid(5) and 98 * sigmoid(-4.8) at 30 significant digits
    s = SparsitySchedule(98, 50, 0.5, 5)
    assert sparsity_at(s, 50) == pytest.approx(97.3441006094200841551825259226, abs=1e-9)
    assert sparsity_at(s, 1) == pytest.approx(0.79993197300966972765327165324, abs=1e-12)


def test_gamma_defaults_to_tenth_of_epochs():
    assert SparsitySchedule(90, 90).gamma == 9
    assert SparsitySchedule(90, 90).beta == 0.5


@pytest.mark.parametrize("kwargs", [dict(alpha=0), dict(alpha=100), dict(beta=0), dict(beta=1), dict(gamma=0)])
def test_schedule_validation(kwargs):
    base = dict(alpha=90, epochs=10, beta=0.5, gamma=1)
    base.update(kwargs)
    with pytest.raises(ValueError):
        SparsitySchedule(**base)


@settings(max_examples=100, deadline=None)
@given(alpha=st.floats(0.5, 99.5), beta=st.floats(0.05, 0.95), gamma=st.floats(0.5, 20),
       epochs=st.integers(2, 200))
def test_schedule_strictly_increasing_and_bounded(alpha, beta, gamma, epochs):
    # beyond |z| ~ 30 the float64 sigmoid saturates and consecutive values tie
    assume(max(beta * epochs - 1, epochs - beta * epochs) / gamma < 30)
    s = SparsitySchedule(alpha, epochs, beta, gamma)
    ps = [sparsity_at(s, e) for e in range(1, epochs + 1)]
    assert all(0 < p < alpha for p in ps)
    assert all(a < b for a, b in zip(ps, ps[1:]))


# -- global prune -----------------------------------------------------------

def test_prune_four_element_example():
    mask, ev = global_prune(_flat_store([3, 1, 0.5, 2]), 50)
    assert mask.bits.tolist() == [True, False, False, True]
    assert ev.tau == 1.0 and ev.nonzeros_total == 2


def test_prune_zero_percent():
    mask, ev = global_prune(_flat_store([3, -1, 0.5, 2]), 0)
    assert mask.bits.all() and ev.tau == 0.0


def test_prune_existing_zeros_first():
    mask, _ = global_prune(_flat_store([0, 0, 1, 2]), 50)
    assert mask.bits.tolist() == [False, False, True, True]


def test_prune_ties_by_index():
    mask, ev = global_prune(_flat_store([1, 1, 1, 1]), 50)
    assert mask.bits.tolist() == [False, False, True, True]
    assert ev.tau == 1.0


def test_prune_prefers_previously_masked_on_ties():
    params = _flat_store([0, 0, 5, 0])
    prev = Mask.ones(params)
    prev.bits[:] = [True, False, True, False]
    mask, _ = global_prune(params, 50, previous=prev)
    assert mask.bits.tolist() == [True, False, True, False]


@pytest.mark.parametrize("p", [-1, 100, 150])
def test_prune_out_of_range(p):
    with pytest.raises(ValueError):
        global_prune(_flat_store([1, 2]), p)


def test_prune_never_touches_bias():
    params = build_network([linear(5, 4), relu(), linear(4, 3)], seed=0)
    params["layer0.bias"] = np.full(4, 1e-9, np.float32)
    mask, _ = global_prune(params, 90)
    mask.apply(params)
    assert np.all(params["layer0.bias"] == np.float32(1e-9))
    assert len(mask) == 5 * 4 + 4 * 3


def test_prune_does_not_modify_params():
    params = _flat_store([3, 1, 0.5, 2])
    global_prune(params, 50)
    assert params["w"].tolist() == [3, 1, 0.5, 2]


def test_prune_event_per_layer_partition():
    params = build_network([linear(6, 5), relu(), linear(5, 4)], seed=2)
    _, ev = global_prune(params, 37.5)
    assert sum(ev.nonzeros_per_layer) == ev.nonzeros_total == 50 - prune_count(37.5, 50)


@settings(max_examples=200, deadline=None)
@given(values=st.lists(st.sampled_from([0.0, 0.5, -0.5, 1.0, -2.0, 3.0]) | st.floats(-5, 5, width=32),
                       min_size=1, max_size=60),
       p=st.floats(0, 99.99))
def test_prune_exact_count_under_ties(values, p):
    params = _flat_store(values)
    mask, ev = global_prune(params, p)
    d = len(values)
    assert ev.nonzeros_total == mask.popcount == d - prune_count(p, d)
    kept = np.abs(params["w"][mask.bits])
    dropped = np.abs(params["w"][~mask.bits])
    if kept.size and dropped.size:
        assert dropped.max() <= kept.min()
        assert ev.tau == dropped.max()


def test_prune_count_half_rounds_up():
    assert prune_count(50, 3) == 2
    assert prune_count(25, 2) == 1
    assert prune_count(0, 10) == 0


# -- ASNI-I loop ------------------------------------------------------------

def _cfg(**kw):
    base = dict(epochs=6, batch_size=8, optimizer="adam", lr=1e-2, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_one_round_events_monotone_support_and_frozen_zeros(toy_fc_spec, toy_data):
    params = build_network(toy_fc_spec, 0)
    sched = SparsitySchedule(90, 6, 0.5, 1)
    history = []

    def record(rec):
        history.append((rec, params.copy()))

    theta, mask, events = asni_one_round(params, toy_fc_spec, toy_data, _cfg(), sched, on_epoch=record)
    assert len(events) == 6
    assert [ev.epoch for ev in events] == list(range(1, 7))
    d = theta.num_prunable
    masks = [Mask.from_support(snap) for _, snap in history]
    for ev, m in zip(events, masks):
        assert ev.nonzeros_total == d - prune_count(ev.p, d)
    for a, b in zip(masks, masks[1:]):
        assert b.issubset(a)
    # zeros from epoch e stay exactly zero afterwards
    flat = theta.flat_prunable()
    for m in masks:
        assert np.all(flat[~m.bits] == 0)
    assert mask.popcount == d - prune_count(sparsity_at(sched, 6), d)


def test_one_round_tiny_alpha_is_dense_training(toy_fc_spec, toy_data):
    cfg = _cfg(epochs=3)
    a = build_network(toy_fc_spec, 0)
    _, mask, events = asni_one_round(a, toy_fc_spec, toy_data, cfg, SparsitySchedule(1e-6, 3))
    assert mask.bits.all() and all(ev.tau == 0 for ev in events)
    b = build_network(toy_fc_spec, 0)
    train_masked(b, toy_fc_spec, toy_data[0], None, cfg)
    assert a.equals(b)


def test_one_round_matches_hand_stepped_oracle():
    # 20 parameters: 4x4 weights + 4 biases
    spec = [linear(4, 4)]
    train = small_dataset(12, 4, shape=(4,), classes=4)
    cfg = TrainConfig(epochs=2, batch_size=4, optimizer="adam", lr=0.05, seed=9)
    sched = SparsitySchedule(60, 2, 0.5, 1)
    params = build_network(spec, 1)
    theta, mask, _ = asni_one_round(params.copy(), spec, (train, None), cfg, sched)

    w = params["layer0.weight"].copy()
    b = params["layer0.bias"].copy()
    m = {"w": np.zeros_like(w), "b": np.zeros_like(b)}
    v = {"w": np.zeros_like(w), "b": np.zeros_like(b)}
    keep = np.ones(16, dtype=bool)
    t = 0
    for epoch in (1, 2):
        perm = np.random.default_rng([seed_for(9, 0), epoch]).permutation(12)
        for i in range(3):
            idx = perm[4 * i:4 * i + 4]
            store = ParamStore()
            store.add("layer0.weight", w, True, 0)
            store.add("layer0.bias", b, False, 0)
            _, g = loss_and_grad(store, spec, train.images[idx], train.labels[idx])
            t += 1
            km = keep.reshape(4, 4)
            for key, p, grad, msk in (("w", w, g["layer0.weight"], km), ("b", b, g["layer0.bias"], None)):
                if msk is not None:
                    grad = np.where(msk, grad, 0).astype(np.float32)
                m[key] = m[key] * 0.9 + (1 - 0.9) * grad
                v[key] = v[key] * 0.999 + (1 - 0.999) * (grad * grad)
                upd = 0.05 * (m[key] / (1 - 0.9 ** t)) / (np.sqrt(v[key] / (1 - 0.999 ** t)) + 1e-8)
                if msk is not None:
                    upd = np.where(msk, upd, 0)
                p -= upd.astype(np.float32)
        p_target = 60 / (1 + np.exp(-(epoch - 1) / 1))
        k = int(np.floor(p_target / 100 * 16 + 0.5))
        order = np.lexsort((keep, np.abs(w.ravel())))
        keep = np.ones(16, dtype=bool)
        keep[order[:k]] = False
        w[~keep.reshape(4, 4)] = 0
    np.testing.assert_array_equal(theta["layer0.weight"], w)
    np.testing.assert_array_equal(theta["layer0.bias"], b)
    np.testing.assert_array_equal(mask.bits, keep)


def test_one_round_epoch_mismatch(toy_fc_spec, toy_data):
    with pytest.raises(ValueError):
        asni_one_round(build_network(toy_fc_spec, 0), toy_fc_spec, toy_data, _cfg(epochs=4),
                       SparsitySchedule(50, 5))


# -- lottery-ticket baselines ------------------------------------------------

def _hundred_weight_net():
    return [linear(10, 10)], small_dataset(40, 7, shape=(10,), classes=10), small_dataset(20, 8, shape=(10,), classes=10)


def test_lta_geometric_counts_and_rewind_to_original():
    spec, train, test = _hundred_weight_net()
    params0 = build_network(spec, 5)
    seen = []
    res = lta(params0, spec, (train, test), _cfg(epochs=2, batch_size=10), 20, 3,
              on_round=lambda r, theta, m: seen.append((theta.copy(), m.copy())))
    assert res.nonzeros == [100, 80, 64, 51]
    assert len(res.accuracies) == 3
    for theta, m in seen:
        w = theta["layer0.weight"].ravel()
        orig = params0["layer0.weight"].ravel()
        np.testing.assert_array_equal(w[m.bits], orig[m.bits])
        assert not w[~m.bits].any()
        np.testing.assert_array_equal(theta["layer0.bias"], params0["layer0.bias"])
    assert np.count_nonzero(seen[1][1].bits & ~seen[0][1].bits) == 0


def test_lta_zero_rate_single_round_is_identity():
    spec, train, test = _hundred_weight_net()
    params0 = build_network(spec, 5)
    res = lta(params0, spec, (train, test), _cfg(epochs=1, batch_size=10), 0, 1)
    assert res.mask.bits.all()
    assert res.params.equals(params0)


def test_stabilized_lta_rewinds_to_step_k_snapshot():
    spec, train, test = _hundred_weight_net()
    params0 = build_network(spec, 5)
    cfg = _cfg(epochs=2, batch_size=10)
    k = 3
    snap = {}

    def hook(t, p):
        if t == k:
            snap["p"] = p.copy()

    train_masked(params0.copy(), spec, train, test, cfg, step_hook=hook)
    seen = []
    res = stabilized_lta(params0, spec, (train, test), cfg, 20, 2, k,
                         on_round=lambda r, theta, m: seen.append((theta.copy(), m.copy())))
    for theta, m in seen:
        w = theta["layer0.weight"].ravel()
        np.testing.assert_array_equal(w[m.bits], snap["p"]["layer0.weight"].ravel()[m.bits])
        np.testing.assert_array_equal(theta["layer0.bias"], snap["p"]["layer0.bias"])
    assert res.nonzeros == [100, 80, 64]


def test_stabilized_lta_single_round_mask_equals_lta():
    spec, train, test = _hundred_weight_net()
    params0 = build_network(spec, 5)
    cfg = _cfg(epochs=2, batch_size=10)
    a = lta(params0, spec, (train, test), cfg, 30, 1)
    b = stabilized_lta(params0, spec, (train, test), cfg, 30, 1, k=1)
    np.testing.assert_array_equal(a.mask.bits, b.mask.bits)


@pytest.mark.parametrize("k", [0, 9])
def test_stabilized_lta_step_bounds(k):
    spec, train, test = _hundred_weight_net()
    # 2 epochs x 4 batches = 8 steps
    with pytest.raises(ValueError):
        stabilized_lta(build_network(spec, 5), spec, (train, test), _cfg(epochs=2, batch_size=10), 20, 1, k)


def test_lta_rejects_zero_rounds():
    spec, train, test = _hundred_weight_net()
    with pytest.raises(ValueError):
        lta(build_network(spec, 5), spec, (train, test), _cfg(epochs=1, batch_size=10), 20, 0)
