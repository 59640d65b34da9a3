import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hazeflow.imaging import make_rng
from hazeflow.mcbm import generate_pair, synth_depth, synth_scene
from hazeflow.solver import (
    ConstantField,
    OracleField,
    SWEEP_HEADER,
    one_step_pair,
    solve,
    step_sweep,
    sweep_csv,
)


def _pair(seed, size=32):
    rng = make_rng(seed)
    clean = synth_scene(size, size, rng)
    depth = synth_depth(size, size, "fractal", rng)
    return generate_pair(clean, depth, rng, degrade_enabled=False)


class RandomField:
    """State-dependent field used to exercise refresh mode."""

    def __init__(self, seed, shape):
        rng = make_rng(seed)
        self.w = rng.normal(0, 0.3, shape).astype(np.float32)
        self.t = rng.uniform(0.05, 1, shape[:2]).astype(np.float32)
        self.calls = []

    def __call__(self, image, t_map):
        self.calls.append(t_map.copy())
        return np.tanh(image + self.w) - 0.5, self.t


@pytest.mark.parametrize("n", [1, 2, 4, 8])
@pytest.mark.parametrize("refresh", [True, False])
def test_oracle_exact_for_any_step_count(n, refresh):
    pair = _pair(n)
    field = OracleField(pair.clean, pair.light, pair.transmission)
    out, trace = solve(pair.hazy, pair.transmission, field, n, refresh)
    assert np.max(np.abs(out - pair.clean)) <= 1e-5
    assert len(trace.steps) == n
    assert np.max(np.abs(trace.tau - 1.0)) <= 1e-6


def test_single_step_closed_form():
    rng = make_rng(0)
    hazy = rng.random((8, 8, 3)).astype(np.float32)
    v = rng.normal(0, 0.2, (8, 8, 3)).astype(np.float32)
    t = rng.uniform(0.05, 1, (8, 8)).astype(np.float32)
    out, _ = solve(hazy, t, ConstantField(v, t), 1)
    assert np.array_equal(out, np.maximum(hazy + (1 - t)[..., None] * v, 0))


def test_zero_velocity_is_fixed_point():
    rng = make_rng(1)
    hazy = rng.random((8, 8, 3)).astype(np.float32)
    t = rng.uniform(0.05, 1, (8, 8)).astype(np.float32)
    for n in (1, 3, 5):
        out, _ = solve(hazy, t, ConstantField(np.zeros_like(hazy), t), n)
        assert np.array_equal(out, hazy)


def test_clear_pixels_untouched():
    rng = make_rng(2)
    hazy = rng.random((8, 8, 3)).astype(np.float32)
    field = RandomField(3, hazy.shape)
    field.t[:4] = 1.0
    out, _ = solve(hazy, np.ones((8, 8), np.float32), field, 4)
    assert np.array_equal(out[:4], hazy[:4])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 9))
def test_tau_tiles_to_one(seed, n):
    field = RandomField(seed, (6, 6, 3))
    hazy = make_rng(seed).random((6, 6, 3)).astype(np.float32)
    _, trace = solve(hazy, np.full((6, 6), 0.5, np.float32), field, n)
    assert np.max(np.abs(trace.tau - 1.0)) <= 1e-6


def test_refresh_passes_advancing_tau():
    field = RandomField(4, (6, 6, 3))
    hazy = make_rng(4).random((6, 6, 3)).astype(np.float32)
    t_in = np.full((6, 6), 0.3, np.float32)
    solve(hazy, t_in, field, 3, refresh_velocity=True)
    assert len(field.calls) == 3
    assert np.array_equal(field.calls[0], t_in)
    step = (1 - field.t) / 3
    assert np.allclose(field.calls[1], field.t + step, atol=1e-6)
    assert np.allclose(field.calls[2], field.t + 2 * step, atol=1e-6)
    field.calls.clear()
    solve(hazy, t_in, field, 3, refresh_velocity=False)
    assert len(field.calls) == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_frozen_velocity_is_step_count_invariant(seed):
    field = RandomField(seed, (8, 8, 3))
    hazy = make_rng(seed + 1).random((8, 8, 3)).astype(np.float32)
    t = np.full((8, 8), 0.4, np.float32)
    one, _ = solve(hazy, t, field, 1, refresh_velocity=False)
    four, _ = solve(hazy, t, field, 4, refresh_velocity=False)
    assert np.max(np.abs(one - four)) <= 1e-6


def test_solve_errors():
    hazy = np.zeros((4, 4, 3), np.float32)
    t = np.ones((4, 4), np.float32)
    field = ConstantField(hazy, t)
    with pytest.raises(ValueError):
        solve(hazy, t, field, 0)
    with pytest.raises(ValueError):
        solve(hazy, np.ones((3, 4)), field, 1)
    with pytest.raises(ValueError):
        solve(hazy, np.zeros((4, 4)), field, 1)
    with pytest.raises(ValueError):
        solve(hazy, t, ConstantField(np.zeros((2, 2, 3)), t), 1)


def test_keep_states_records_snapshots():
    pair = _pair(5, 16)
    field = OracleField(pair.clean, pair.light, pair.transmission)
    out, trace = solve(pair.hazy, pair.transmission, field, 3, keep_states=True)
    assert all(s.state is not None for s in trace.steps)
    assert np.allclose(trace.steps[-1].state, out, atol=1e-6)
    assert trace.steps[0].max_update > 0


def test_one_step_pair_oracle_recovers_clean_and_light():
    pair = _pair(6)
    field = OracleField(pair.clean, pair.light, pair.transmission)
    j_hat, a_hat, t_ref = one_step_pair(pair.hazy, pair.transmission, field)
    assert np.max(np.abs(j_hat - pair.clean)) <= 1e-5
    assert np.max(np.abs(a_hat - pair.light)) <= 1e-5
    assert np.array_equal(t_ref, pair.transmission)


def test_one_step_pair_zero_velocity():
    hazy = make_rng(7).random((5, 5, 3)).astype(np.float32)
    t = np.full((5, 5), 0.6, np.float32)
    j_hat, a_hat, _ = one_step_pair(hazy, t, ConstantField(np.zeros_like(hazy), t))
    assert np.array_equal(j_hat, hazy) and np.array_equal(a_hat, hazy)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_one_step_pair_reconstructs_input(seed):
    rng = make_rng(seed)
    hazy = rng.random((6, 7, 3)).astype(np.float32)
    field = RandomField(seed, hazy.shape)
    j_hat, a_hat, t_ref = one_step_pair(hazy, np.ones((6, 7)), field, clamp=False)
    t3 = t_ref[..., None]
    assert np.max(np.abs(t3 * j_hat + (1 - t3) * a_hat - hazy)) <= 1e-5


def test_step_sweep_rows_and_csv():
    pair = _pair(8)
    field = OracleField(pair.clean, pair.light, pair.transmission)
    rows = step_sweep(pair.hazy, pair.transmission, field, [1, 2, 4, 8], reference=pair.clean)
    assert [r["N"] for r in rows] == [1, 2, 4, 8]
    for r in rows[1:]:
        assert np.max(np.abs(r["output"] - rows[0]["output"])) <= 1e-5
        assert r["psnr"] >= 60
    text = sweep_csv(rows)
    lines = text.strip().split("\n")
    assert lines[0] == ",".join(SWEEP_HEADER) == "N,psnr,ssim,ms"
    assert len(lines) == 5
    with pytest.raises(ValueError):
        step_sweep(pair.hazy, pair.transmission, field, [])
