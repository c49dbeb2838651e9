import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigent.diagnostics import (
    METRICS_HEADER,
    LandscapeGrid,
    MetricsSink,
    entropy_landscape,
    entropy_landscape_2d,
    export_metrics,
    ood_ratio,
    quadratic_bowl,
    read_landscape,
    read_metrics,
    write_landscape,
)
from sigent.errors import ConfigError, StructuralError
from sigent.policy import EntropyConfig
from sigent.replay import Transition, expert_buffer


def expert_of(actions, states=None):
    actions = np.asarray(actions, dtype=float)
    states = np.arange(len(actions) * 2, dtype=float).reshape(len(actions), 2) if states is None else states
    return expert_buffer([Transition(s, a, 0.0, s, False) for s, a in zip(states, actions)], 0.99)


def lookup_policy(buf, answers):
    table = {s.tobytes(): a for s, a in zip(buf.all().states, np.asarray(answers, dtype=float))}
    return lambda states: np.array([table[s.tobytes()] for s in states])


# --- OOD ratio ---


def test_ood_ratio_examples():
    acts = np.array([[0.1, 0.2], [-0.3, 0.4], [0.5, -0.5], [0.0, 0.9]])
    buf = expert_of(acts)
    assert ood_ratio(lookup_policy(buf, acts), buf) == 0.0
    corners = np.sign(acts + 1e-9) * 0.95
    buf_c = expert_of(corners)
    assert ood_ratio(lookup_policy(buf_c, -corners), buf_c) == 1.0
    # two of four states off by more than 0.3 per dimension
    answers = acts + np.array([[0.5, 0.5], [0.0, 0.0], [-0.6, 0.4], [0.1, -0.1]])
    assert ood_ratio(lookup_policy(buf, answers), buf, threshold=0.3) == 0.5


def test_ood_ratio_accepts_policy_objects_and_rejects_empty():
    class Fixed:
        def mean_action(self, states):
            return np.zeros((len(states), 2))

    buf = expert_of([[0.0, 0.0], [0.9, 0.9]])
    assert ood_ratio(Fixed(), buf) == 0.5
    empty = expert_of([[0.0, 0.0]])
    empty._size = 0
    with pytest.raises(ConfigError):
        ood_ratio(Fixed(), empty)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["l2_norm", "per_dim_mse"]))
def test_ood_ratio_nonincreasing_in_threshold(seed, mode):
    rng = np.random.default_rng(seed)
    acts = np.tanh(rng.normal(size=(20, 2)))
    buf = expert_of(acts)
    pol = lookup_policy(buf, np.tanh(rng.normal(size=(20, 2))))
    ratios = [ood_ratio(pol, buf, threshold=t, gate_mode=mode) for t in np.linspace(0.01, 2.0, 25)]
    assert all(a >= b for a, b in zip(ratios, ratios[1:]))
    assert all(0.0 <= r <= 1.0 for r in ratios)


# --- landscape ---


def test_constant_q_only_adds_the_entropy_terms():
    g = entropy_landscape(q_fn=2.5, alpha=0.7)
    inside = g.in_support
    assert np.all(g.q_values == 2.5)
    # the negative-entropy curve moves with -alpha * log pi, here recomputed directly
    a = g.action_grid[inside]
    x = np.arctanh(a)
    sigma = 0.1
    logp = -0.5 * (x / sigma) ** 2 - math.log(sigma * math.sqrt(2 * math.pi)) - np.log(1 - a**2)
    assert np.allclose(g.neg_entropy_adjusted[inside] - 2.5, -0.7 * logp, rtol=1e-9, atol=1e-9)


def test_sigmoid_adjustment_stays_in_band_on_sampled_actions():
    for alpha in (0.2, 1.0, 3.0):
        cfg = EntropyConfig(h_max=1.5)
        g = entropy_landscape(alpha=alpha, cfg=cfg, q_fn=quadratic_bowl(0.2))
        gap = g.sig_entropy_adjusted - g.q_values
        assert np.all(gap[g.in_support] > 0)
        assert np.all(gap[g.in_support] < alpha * 1 * cfg.h_max)
        assert np.all(gap[~g.in_support] == 0)
    g = entropy_landscape(sample_radius=None, alpha=2.0)
    gap = g.sig_entropy_adjusted - g.q_values
    # far from the mean the sigmoid rounds to its cap in float64
    assert np.all((gap > 0) & (gap <= 2.0))


def test_argmax_boundary_versus_interior():
    g = entropy_landscape(q_fn=0.0)
    n = len(g.action_grid)
    assert int(np.argmax(g.neg_entropy_adjusted)) in (0, n - 1)
    k = int(np.argmax(g.sig_entropy_adjusted))
    assert 0 < k < n - 1


@pytest.mark.parametrize("shift", [-3.0, 0.5, 10.0])
def test_landscape_shift_equivariance(shift):
    base = entropy_landscape(q_fn=quadratic_bowl(0.1, 2.0), alpha=0.5)
    moved = entropy_landscape(q_fn=lambda a: quadratic_bowl(0.1, 2.0)(a) + shift, alpha=0.5)
    for name in ("q_values", "neg_entropy_adjusted", "sig_entropy_adjusted"):
        assert np.allclose(getattr(moved, name) - getattr(base, name), shift, rtol=0, atol=1e-12)


def test_landscape_is_finite_and_validated():
    g = entropy_landscape(grid_size=3)
    assert all(np.all(np.isfinite(getattr(g, k))) for k in ("q_values", "neg_entropy_adjusted", "sig_entropy_adjusted"))
    with pytest.raises(ConfigError):
        entropy_landscape(sigma_pi=0.0)
    with pytest.raises(ConfigError):
        entropy_landscape(grid_size=2)
    with pytest.raises(StructuralError):
        entropy_landscape(q_fn=lambda a: np.full(len(a), np.inf))
    with pytest.raises(StructuralError):
        LandscapeGrid(np.zeros(3), np.zeros(2), np.zeros(3), np.zeros(3), np.ones(3, bool))


def test_landscape_2d_matches_1d_slice_structure():
    d = entropy_landscape_2d(grid_size=11, alpha=0.5)
    assert d["q"].shape == (11, 11)
    gap = d["sig_adjusted"] - d["q"]
    assert np.all((gap >= 0) & (gap < 0.5 * 2))
    assert np.allclose(gap, gap.T)


def test_landscape_csv_round_trip(tmp_path):
    g = entropy_landscape(grid_size=21, q_fn=quadratic_bowl())
    write_landscape(g, tmp_path / "l.csv")
    back = read_landscape(tmp_path / "l.csv")
    for name in ("action_grid", "q_values", "neg_entropy_adjusted", "sig_entropy_adjusted"):
        assert np.array_equal(getattr(back, name), getattr(g, name))


# --- metrics ---


def record(step, **over):
    row = {k: 0.25 for k in METRICS_HEADER}
    row["step"] = step
    row.update(over)
    return row


def test_metrics_round_trip_and_order(tmp_path):
    path = tmp_path / "m.csv"
    with MetricsSink(path) as sink:
        export_metrics(sink, record(5, mean_q=1.0 / 3.0))
        export_metrics(sink, record(10, actor_loss=None, critic_loss_1=math.nan))
    rows = read_metrics(path)
    assert [r["step"] for r in rows] == [5, 10]
    assert rows[0] == record(5, mean_q=1.0 / 3.0)
    assert rows[1]["actor_loss"] is None
    assert math.isnan(rows[1]["critic_loss_1"])
    assert "diverged" in path.read_text()


def test_metrics_schema_mismatch(tmp_path):
    with MetricsSink(tmp_path / "m.csv") as sink:
        bad = record(1)
        del bad["alpha"]
        with pytest.raises(StructuralError):
            sink.write(bad)
        with pytest.raises(StructuralError):
            sink.write(record(1, bogus=1.0))


def test_many_rows(tmp_path):
    path = tmp_path / "m.csv"
    with MetricsSink(path) as sink:
        for i in range(10_000):
            sink.write(record(i), flush=False)
    lines = path.read_text().splitlines()
    assert len(lines) == 10_001
    assert lines[0] == ",".join(METRICS_HEADER)
