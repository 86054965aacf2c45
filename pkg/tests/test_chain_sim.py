import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlo_r2s2r.chain_sim import (DEFAULT_BOX, LENGTH_RANGE, YOUNGS_RANGE,
                                 ChainState, ParamBox, SimConfig,
                                 SimulationError, SystemParams,
                                 bending_stiffness, init_chain, joint_angles,
                                 mechanical_energy, segment_lengths,
                                 step_physics)


class TestSystemParams:
    def test_valid(self):
        p = SystemParams(0.25, 2.55e4)
        assert p.length == 0.25

    @pytest.mark.parametrize("length,youngs", [
        (0.19, 1e4), (0.31, 1e4), (0.25, 999.0), (0.25, 5.1e4),
        (float("nan"), 1e4), (0.25, float("inf")),
    ])
    def test_out_of_range_rejected(self, length, youngs):
        with pytest.raises(ValueError):
            SystemParams(length, youngs)


class TestParamBox:
    def test_default_matches_declared_ranges(self):
        assert tuple(DEFAULT_BOX.lo_array) == (LENGTH_RANGE[0],
                                               YOUNGS_RANGE[0])
        assert tuple(DEFAULT_BOX.hi_array) == (LENGTH_RANGE[1],
                                               YOUNGS_RANGE[1])
        assert LENGTH_RANGE == (0.195, 0.305)
        assert YOUNGS_RANGE == (1.0e3, 5.0e4)

    def test_median(self):
        m = DEFAULT_BOX.median
        assert m.length == pytest.approx(0.25)
        assert m.youngs_modulus == pytest.approx(2.55e4)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_normalize_roundtrip(self, u, v):
        unit = np.array([u, v])
        back = DEFAULT_BOX.normalize(DEFAULT_BOX.denormalize(unit))
        assert np.allclose(back, unit, atol=1e-12)

    def test_json_roundtrip(self):
        box = ParamBox.from_json_dict(DEFAULT_BOX.to_json_dict())
        assert np.array_equal(box.lo_array, DEFAULT_BOX.lo_array)

    def test_contains(self):
        assert DEFAULT_BOX.contains(SystemParams(0.25, 1e4))


class TestBendingStiffness:
    def test_hand_computed_value(self):
        # I = 0.015^4 / 12 = 4.21875e-9; k = 2.55e4 * I / 0.025
        k = bending_stiffness(2.55e4, 0.015, 0.025)
        assert k == pytest.approx(2.55e4 * 4.21875e-9 / 0.025, rel=1e-12)
        assert k == pytest.approx(4.303125e-3, rel=1e-9)

    def test_quartic_in_width(self):
        k1 = bending_stiffness(1e4, 0.015, 0.025)
        k2 = bending_stiffness(1e4, 0.030, 0.025)
        assert k2 == pytest.approx(16 * k1, rel=1e-12)

    def test_linear_in_modulus(self):
        k_ref = bending_stiffness(2.55e4, 0.015, 0.025)
        k = bending_stiffness(1e3, 0.015, 0.025)
        assert k == pytest.approx(k_ref * 1e3 / 2.55e4, rel=1e-12)

    @pytest.mark.parametrize("args", [(0, 0.015, 0.025), (1e4, 0, 0.025),
                                      (1e4, 0.015, -1)])
    def test_nonpositive_rejected(self, args):
        with pytest.raises(ValueError):
            bending_stiffness(*args)


class TestInitChain:
    def test_straight_hang(self):
        cfg = SimConfig()
        state = init_chain(SystemParams(0.25, 1e4), (0.4, 0.45), cfg)
        assert np.allclose(state.node_pos[10], (0.4, 0.20))
        assert np.all(state.node_vel == 0)
        assert np.array_equal(state.node_pos[0], state.grip_pos)

    def test_no_clamp_above_table(self):
        cfg = SimConfig()
        state = init_chain(SystemParams(0.25, 1e4), (0.4, 0.30), cfg)
        assert np.allclose(state.node_pos[-1], (0.4, 0.05))
        assert np.all(state.node_pos[:, 1] >= 0)

    def test_pooling_clamp_count(self):
        cfg = SimConfig()
        state = init_chain(SystemParams(0.305, 1e4), (0.4, 0.25), cfg)
        seg = 0.305 / cfg.n_segments
        expected = math.ceil((0.305 - 0.25) / seg)
        assert int(np.sum(state.node_pos[:, 1] == 0.0)) == expected


class _Sweep:
    """Fixed horizontal excitation used by the stiffness-ordering checks."""

    ACTIONS = [(0.04, 0.0)] * 4 + [(-0.04, 0.0)] * 4


def _run_sweep(params, cfg):
    state = init_chain(params, (0.4, 0.35), cfg)
    max_angle = 0.0
    for a in _Sweep.ACTIONS:
        target = state.grip_pos + np.asarray(a)
        state = step_physics(state, target, params, cfg)
        max_angle = max(max_angle, float(np.max(np.abs(
            joint_angles(state.node_pos)))))
    return state, max_angle


class TestStepPhysics:
    def test_equilibrium_fixed_point(self):
        cfg = SimConfig(gravity=0.0, linear_damping=0.0)
        params = SystemParams(0.25, 1e4)
        state = init_chain(params, (0.4, 0.45), cfg)
        out = step_physics(state, state.grip_pos, params, cfg)
        assert np.allclose(out.node_pos, state.node_pos, atol=1e-12)
        # velocity is position-correction / dt, so rounding noise in the
        # projections is amplified by 1/dt
        assert np.allclose(out.node_vel, 0.0, atol=1e-8)

    def test_stiffness_ordering(self):
        cfg = SimConfig()
        angles = [_run_sweep(SystemParams(0.25, e), cfg)[1]
                  for e in (1e3, 1e4, 5e4)]
        assert angles[0] >= angles[1] >= angles[2]
        assert angles[0] > angles[2]

    def test_table_projection(self):
        cfg = SimConfig()
        params = SystemParams(0.25, 1e4)
        state = init_chain(params, (0.4, 0.45), cfg)
        state.node_pos[:, 1] -= 0.5  # force the chain through the table
        out = step_physics(state, state.grip_pos, params, cfg)
        assert np.all(out.node_pos[1:, 1] >= cfg.table_height - 1e-12)

    def test_inextensibility(self):
        cfg = SimConfig()
        params = SystemParams(0.25, 1e4)
        state = init_chain(params, (0.4, 0.45), cfg)
        rest = 0.025
        rng = np.random.default_rng(3)
        for _ in range(10):
            target = state.grip_pos + rng.uniform(-0.05, 0.05, 2)
            target[1] = max(target[1], 0.15)
            state = step_physics(state, target, params, cfg)
            seg = segment_lengths(state.node_pos)
            assert np.all(np.abs(seg - rest) <= 0.01 * rest)

    def test_dissipativity_stationary_grip(self):
        cfg = SimConfig()
        params = SystemParams(0.25, 1e4)
        state = init_chain(params, (0.45, 0.40), cfg)
        # perturb so there is energy to dissipate
        state = step_physics(state, (0.40, 0.40), params, cfg)
        prev = mechanical_energy(state, params, cfg)
        for _ in range(30):
            state = step_physics(state, state.grip_pos, params, cfg)
            e = mechanical_energy(state, params, cfg)
            assert e <= prev + 1e-6
            prev = e

    def test_determinism(self):
        cfg = SimConfig()
        params = SystemParams(0.23, 3e4)

        def run():
            state = init_chain(params, (0.4, 0.45), cfg)
            for a in _Sweep.ACTIONS:
                state = step_physics(state, state.grip_pos + np.asarray(a),
                                     params, cfg)
            return state

        s1, s2 = run(), run()
        assert np.array_equal(s1.node_pos, s2.node_pos)
        assert np.array_equal(s1.node_vel, s2.node_vel)

    def test_nan_state_raises(self):
        cfg = SimConfig()
        params = SystemParams(0.25, 1e4)
        state = init_chain(params, (0.4, 0.45), cfg)
        state.node_pos[5] = np.nan
        with pytest.raises(SimulationError):
            step_physics(state, state.grip_pos, params, cfg)


class TestBatchedStepping:
    def test_batch_matches_serial_bitwise(self):
        from dlo_r2s2r.chain_sim import batch_constants, step_chains_batch
        cfg = SimConfig()
        params = [SystemParams(0.2 + 0.03 * i, 5e3 * (i + 1))
                  for i in range(3)]
        states = [init_chain(p, (0.4, 0.45), cfg) for p in params]

        pos = np.stack([s.node_pos for s in states])
        vel = np.stack([s.node_vel for s in states])
        grip = np.stack([s.grip_pos for s in states])
        rest, kb, damp, fric = batch_constants(params, cfg)
        targets = grip + np.array([[0.03, -0.02]] * 3)
        step_chains_batch(pos, vel, grip, targets.copy(), rest, kb, damp,
                          fric, cfg)

        for i, (p, s) in enumerate(zip(params, states)):
            out = step_physics(s, targets[i], p, cfg)
            assert np.array_equal(out.node_pos, pos[i])
            assert np.array_equal(out.node_vel, vel[i])


class TestJointAngles:
    def test_straight_chain_zero(self):
        pos = np.stack([np.zeros(5), -np.arange(5.0)], axis=1)
        assert np.allclose(joint_angles(pos), 0.0)

    def test_right_angle(self):
        pos = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
        assert joint_angles(pos)[0] == pytest.approx(np.pi / 2)


class TestSimConfig:
    @pytest.mark.parametrize("kwargs", [
        {"n_segments": 1}, {"dt": 0.0}, {"substeps_per_control": 0},
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            SimConfig(**kwargs)
