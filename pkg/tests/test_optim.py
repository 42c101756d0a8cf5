import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radnet.data import ArrayDataset
from radnet.errors import ArgumentError, NumericError
from radnet.model import build, load_checkpoint
from radnet.optim import (
    Adam,
    BestTracker,
    EpochRecord,
    ReduceLROnPlateau,
    TrainingLog,
    batch_order,
    encode_targets,
    predicted_labels,
    train_loop,
)
from radnet.synthetic import blob_dataset

from conftest import tiny_spec


def adam_reference(g_seq, lr, b1=0.9, b2=0.999, eps=1e-7):
    """Scalar Adam recurrence written out longhand."""
    theta, m, v = 0.0, 0.0, 0.0
    out = []
    for t, g in enumerate(g_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta -= lr * mhat / (math.sqrt(vhat) + eps)
        out.append(theta)
    return out


def one_param(value=0.0, shape=(3,)):
    return {"w": np.full(shape, value, dtype=np.float64)}


# --- Adam --------------------------------------------------------------------

def test_adam_zero_gradient_is_noop():
    p = one_param(1.5)
    a = Adam(p)
    a.step({"w": np.zeros(3)})
    np.testing.assert_array_equal(p["w"], 1.5)
    assert a.t == 1


def test_adam_first_step():
    p = one_param()
    Adam(p, lr=5e-5).step({"w": np.full(3, 0.5)})
    np.testing.assert_allclose(p["w"], -5e-5 * 0.5 / (0.5 + 1e-7), rtol=1e-12)
    # the quoted -4.99998e-5 is a rounded figure; the exact value is -4.999999e-5
    assert p["w"][0] == pytest.approx(-4.99998e-5, rel=1e-4)


def test_adam_matches_longhand_recurrence(rng):
    gs = rng.standard_normal(25)
    p = {"w": np.zeros(1)}
    a = Adam(p, lr=1e-2)
    ref = adam_reference(gs, 1e-2)
    for g, r in zip(gs, ref):
        a.step({"w": np.array([g])})
        assert p["w"][0] == pytest.approx(r, rel=1e-12, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3), st.sampled_from([-1.0, 1.0]))
def test_adam_constant_gradient_step_tends_to_lr(mag, sign):
    p = {"w": np.zeros(1)}
    a = Adam(p, lr=1e-3)
    prev = 0.0
    for _ in range(100):
        a.step({"w": np.array([sign * mag])})
        step = p["w"][0] - prev
        prev = p["w"][0]
    assert np.sign(step) == -sign
    assert abs(abs(step) - 1e-3) <= 0.01 * 1e-3


def test_adam_non_finite_aborts_unchanged():
    p = {"a": np.ones(2), "b": np.ones(2)}
    a = Adam(p)
    a.step({"a": np.ones(2), "b": np.ones(2)})
    before = ({k: v.copy() for k, v in p.items()}, {k: v.copy() for k, v in a.m.items()}, a.t)
    with pytest.raises(NumericError):
        a.step({"a": np.ones(2), "b": np.array([1.0, np.nan])})
    assert a.t == before[2]
    for k in p:
        np.testing.assert_array_equal(p[k], before[0][k])
        np.testing.assert_array_equal(a.m[k], before[1][k])


def test_adam_shape_mismatch():
    with pytest.raises(ArgumentError):
        Adam(one_param()).step({"w": np.zeros(4)})


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_adam_second_moment_non_negative(gs):
    p = {"w": np.zeros(1)}
    a = Adam(p)
    for i, g in enumerate(gs, start=1):
        a.step({"w": np.array([g])})
        assert a.t == i
        assert a.v["w"][0] >= 0


# --- plateau -----------------------------------------------------------------

def trace(losses, **kw):
    s = ReduceLROnPlateau(**kw)
    return [s.update(v) for v in losses]


def test_plateau_improving_keeps_lr():
    assert trace([1.0, 0.9, 0.8]) == [5e-5] * 3


def test_plateau_reduces_at_epoch_four():
    lrs = trace([1.0, 0.99, 0.995, 0.999])
    assert lrs[:3] == [5e-5] * 3
    assert lrs[3] == pytest.approx(1.5e-5, rel=1e-12)


def test_plateau_flat_losses_reduce_every_two_epochs_until_floor():
    lrs = trace([1.0] * 41)
    expected, lr = [], 5e-5
    for epoch in range(1, 42):
        # epoch 1 sets best; then every second non-improving epoch reduces
        if epoch > 1 and (epoch - 1) % 2 == 0:
            lr = max(lr * 0.3, 1e-8)
        expected.append(lr)
    assert lrs == pytest.approx(expected, rel=1e-12)
    assert lrs[-1] == 1e-8


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=30))
def test_plateau_lr_never_increases(losses):
    s = ReduceLROnPlateau()
    prev = s.lr
    for v in losses:
        lr = s.update(v)
        assert lr <= prev and lr >= s.min_lr
        assert 0 <= s.wait < s.patience
        prev = lr


def test_plateau_nan_and_state_round_trip():
    s = ReduceLROnPlateau()
    with pytest.raises(NumericError):
        s.update(float("nan"))
    assert json.dumps(s.state())  # inf best loss serializes
    s.update(0.5)
    assert ReduceLROnPlateau.from_state(s.state()) == s
    assert ReduceLROnPlateau.from_state(ReduceLROnPlateau().state()).best_loss == math.inf


# --- best tracker ------------------------------------------------------------

def saves(accs):
    t = BestTracker()
    return [e for e, a in enumerate(accs, start=1) if t.update(e, a) == "saved"], t


def test_tracker_examples():
    assert saves([0.5, 0.6, 0.6])[0] == [1, 2]
    assert saves([0.9, 0.8])[0] == [1]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), min_size=1, max_size=20))
def test_tracker_selects_first_argmax(accs):
    epochs, t = saves(accs)
    assert t.best_epoch == int(np.argmax(accs)) + 1
    assert t.best_val_accuracy == max(accs)
    got = [accs[e - 1] for e in epochs]
    assert all(b > a for a, b in zip(got, got[1:]))


def test_tracker_failed_save_leaves_state():
    t = BestTracker()
    t.update(1, 0.5)

    def boom():
        raise OSError("disk full")

    with pytest.raises(OSError):
        t.update(2, 0.9, boom)
    assert (t.best_epoch, t.best_val_accuracy) == (1, 0.5)
    with pytest.raises(ArgumentError):
        t.update(3, 1.5)


# --- loop pieces ---------------------------------------------------------------

def test_encode_targets():
    np.testing.assert_array_equal(encode_targets([0, 1], "binary"), [0.0, 1.0])
    np.testing.assert_array_equal(encode_targets([2, 0], "three_class"), [[0, 0, 1], [1, 0, 0]])
    with pytest.raises(ArgumentError):
        encode_targets([2], "binary")
    with pytest.raises(ArgumentError):
        encode_targets([0], "multi")


def test_predicted_labels():
    np.testing.assert_array_equal(predicted_labels(np.array([[0.2], [0.5], [0.9]])), [0, 1, 1])
    np.testing.assert_array_equal(predicted_labels(np.array([[0.4, 0.4, 0.2]])), [0])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.integers(1, 16), st.integers(0, 2**32), st.integers(0, 50))
def test_batch_order_covers_each_index_once(n, bs, seed, epoch):
    batches = batch_order(n, bs, seed, epoch)
    flat = np.concatenate(batches)
    assert sorted(flat.tolist()) == list(range(n))
    assert len(batches) == math.ceil(n / bs)
    assert all(len(b) == bs for b in batches[:-1])


def test_batch_order_errors():
    with pytest.raises(ArgumentError):
        batch_order(0, 8, 0, 0)
    with pytest.raises(ArgumentError):
        batch_order(4, 0, 0, 0)


def small_sets(n=16, seed=0):
    x, y = blob_dataset(n, 8, seed)
    return ArrayDataset(x, y, np.float64), ArrayDataset(*blob_dataset(8, 8, seed + 1), np.float64)


def test_one_epoch_sixteen_samples_two_steps():
    model = build(tiny_spec(precision="f64"))
    tr, va = small_sets(16)
    adam_steps = []
    import radnet.optim as optim

    orig = optim.Adam.step

    def counting(self, grads):
        adam_steps.append(1)
        return orig(self, grads)

    optim.Adam.step = counting
    try:
        train_loop(model, tr, va, epochs=1, batch_size=8)
    finally:
        optim.Adam.step = orig
    assert len(adam_steps) == 2


def test_train_loop_is_deterministic(tmp_path):
    tr, va = small_sets(16)
    logs = []
    for run in range(2):
        model = build(tiny_spec(precision="f64"))
        log = train_loop(model, tr, va, epochs=3, batch_size=8, seed=4, lr=1e-3,
                         checkpoint_path=tmp_path / f"c{run}.ckpt", log_path=tmp_path / f"l{run}.log")
        logs.append(log)
    assert logs[0].lines() == logs[1].lines()
    assert (tmp_path / "l0.log").read_bytes() == (tmp_path / "l1.log").read_bytes()
    assert (tmp_path / "c0.ckpt").read_bytes() == (tmp_path / "c1.ckpt").read_bytes()
    assert TrainingLog.read(tmp_path / "l0.log").lines() == logs[0].lines()


def test_train_loop_checkpoint_state(tmp_path):
    tr, va = small_sets(16)
    log = train_loop(build(tiny_spec(precision="f64")), tr, va, epochs=4, batch_size=8, lr=1e-3,
                     checkpoint_path=tmp_path / "c.ckpt")
    ck = load_checkpoint(tmp_path / "c.ckpt")
    best = max(range(4), key=lambda i: (log.records[i].val_acc, -i))
    assert ck.state["epoch"] == best + 1
    assert ck.state["best"]["best_val_accuracy"] == log.records[best].val_acc
    assert any(k.startswith("adam.m.") for k in ck.tensors)
    lrs = [r.lr for r in log.records]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_train_loop_errors():
    tr, va = small_sets(16)
    empty = ArrayDataset(np.zeros((0, 3, 8, 8)), np.zeros(0, int))
    with pytest.raises(ArgumentError):
        train_loop(build(tiny_spec()), empty, va, epochs=1)
    with pytest.raises(ArgumentError):
        train_loop(build(tiny_spec()), tr, empty, epochs=1)


def test_train_loop_non_finite_aborts():
    tr, va = small_sets(16)
    model = build(tiny_spec(precision="f64"))
    model.layers[-1].params["W"][...] = np.nan
    with pytest.raises(NumericError):
        train_loop(model, tr, va, epochs=1)


def test_epoch_record_line():
    line = EpochRecord(1, 0.5, 0.75, 0.6, 0.5, 5e-5, True).to_line()
    assert json.loads(line) == {"epoch": 1, "train_loss": 0.5, "train_acc": 0.75, "val_loss": 0.6,
                                "val_acc": 0.5, "lr": 5e-5, "saved": True}
