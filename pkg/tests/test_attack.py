from fractions import Fraction

import numpy as np
import pytest

from conftest import synthetic_cover
from revadv.attack import (AttackConfig, AttackState, BeamRecorder, beam_step,
                           objective, random_step, run_attack,
                           success_predicate, write_trace_csv)
from revadv.dctspace import DirectionSampler
from revadv.imagecore import dequantize
from revadv.oracle import CountingOracle, linear_victim, mlp_victim


def targeted_cfg(**kw):
    base = dict(mode="targeted", target_class=3, budget=2000, seed=1)
    base.update(kw)
    return AttackConfig(**base)


class TestObjective:
    def test_targeted_projection(self):
        cfg = targeted_cfg()
        assert objective(np.array([0.1, 0.2, 0.28, 0.42]), cfg) == 0.42

    def test_untargeted_boundary(self):
        cfg = AttackConfig(mode="untargeted", true_class=0, budget=10)
        assert objective(np.array([1.0, 0.0]), cfg) == 0.0

    def test_untargeted_uniform(self):
        cfg = AttackConfig(mode="untargeted", true_class=0, budget=10)
        assert objective(np.full(10, 0.1), cfg) == pytest.approx(0.9)

    def test_predicate(self):
        cfg = targeted_cfg()
        assert success_predicate(np.array([0.1, 0.1, 0.1, 0.7]), cfg)
        assert not success_predicate(np.array([0.7, 0.1, 0.1, 0.1]), cfg)


class TestConfigValidation:
    def test_targeted_needs_target(self):
        with pytest.raises(ValueError):
            AttackConfig(mode="targeted")

    def test_untargeted_needs_true_class(self):
        with pytest.raises(ValueError):
            AttackConfig(mode="untargeted")

    def test_target_equals_true(self):
        with pytest.raises(ValueError):
            AttackConfig(mode="targeted", target_class=1, true_class=1)

    def test_bad_step_and_decay(self):
        with pytest.raises(ValueError):
            targeted_cfg(step_size=0.0)
        with pytest.raises(ValueError):
            targeted_cfg(decay=1.5)


class TestBeamRecorder:
    def test_best_is_argmax(self):
        rec = BeamRecorder()
        rec.record("a", +1, 1.3)
        rec.record("b", -1, 1.1)
        assert rec.best().index == "a"

    def test_tie_prefers_earliest(self):
        rec = BeamRecorder()
        rec.record("a", +1, 1.2)
        rec.record("b", -1, 1.2)
        assert rec.best().index == "a"

    def test_empty(self):
        assert BeamRecorder().best() is None


def make_state(cover, cfg, oracle):
    x = dequantize(cover)
    state = AttackState(x=x, delta=np.zeros_like(x.values), objective=0.0)
    probs = oracle.score(x)
    state.objective = objective(probs, cfg)
    return state


class TestSteps:
    def test_delta_norm_matches_accepted_steps(self):
        # with orthonormal directions, ||delta||^2 == accepted * alpha^2
        cover = synthetic_cover(32, 1)
        cfg = targeted_cfg(beam_enabled=False)
        oracle = CountingOracle(mlp_victim(1, 10, 32, 32), 10_000)
        sampler = DirectionSampler(32, 32, Fraction(1, 3), cfg.seed)
        state = make_state(cover, cfg, oracle)
        accepted = 0
        for _ in range(60):
            before = state.objective
            random_step(state, sampler, oracle, cfg)
            if state.objective > before:
                accepted += 1
        want = accepted * cfg.step_size ** 2
        assert np.linalg.norm(state.delta) ** 2 == pytest.approx(want, abs=1e-6)

    def test_accepted_objectives_non_decreasing(self):
        cover = synthetic_cover(32, 2)
        cfg = targeted_cfg(beam_enabled=False, seed=3)
        oracle = CountingOracle(mlp_victim(2, 10, 32, 32), 10_000)
        sampler = DirectionSampler(32, 32, Fraction(1, 3), cfg.seed)
        state = make_state(cover, cfg, oracle)
        values = [state.objective]
        for _ in range(80):
            random_step(state, sampler, oracle, cfg)
            values.append(state.objective)
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_beam_step_moves_along_best(self):
        cover = synthetic_cover(32, 3)
        cfg = targeted_cfg()
        oracle = CountingOracle(mlp_victim(1, 10, 32, 32), 100)
        state = make_state(cover, cfg, oracle)
        from revadv.dctspace import FrequencyIndex, basis_direction

        state.recorder.record(FrequencyIndex(0, 1, 1), -1, 1.4)
        state.recorder.record(FrequencyIndex(1, 2, 0), +1, 1.2)
        beam_step(state, cfg)
        q = basis_direction(FrequencyIndex(0, 1, 1), 32, 32)
        want = -cfg.decay * cfg.step_size * q
        assert np.allclose(state.delta, want)
        assert state.recorder.best() is None  # cleared

    def test_beam_step_skips_when_no_gain(self):
        cover = synthetic_cover(32, 4)
        cfg = targeted_cfg()
        oracle = CountingOracle(mlp_victim(1, 10, 32, 32), 100)
        state = make_state(cover, cfg, oracle)
        from revadv.dctspace import FrequencyIndex

        state.recorder.record(FrequencyIndex(0, 1, 1), +1, 0.97)
        beam_step(state, cfg)
        assert np.all(state.delta == 0)
        assert state.recorder.best() is None


class TestRunAttack:
    def test_success_on_toy_victim(self):
        cover = synthetic_cover(32, 5)
        cfg = targeted_cfg()
        outcome = run_attack(cover, cfg, mlp_victim(1, 10, 32, 32))
        assert outcome.success
        assert outcome.termination == "success"
        assert outcome.queries_used < cfg.budget
        assert len(outcome.trace) == outcome.queries_used

    def test_immediate_success(self):
        # a victim that already prefers the target class everywhere
        class Biased:
            def class_count(self):
                return 4

            def score(self, x):
                return np.array([0.1, 0.1, 0.1, 0.7])

        cover = synthetic_cover(32, 6)
        outcome = run_attack(cover, targeted_cfg(budget=2), Biased())
        assert outcome.success
        assert outcome.queries_used <= 2
        assert outcome.delta_l2 == 0.0
        assert outcome.adversarial_image == cover

    def test_budget_exhausted(self):
        class Stubborn:
            def class_count(self):
                return 2

            def score(self, x):
                return np.array([1.0, 0.0])

        cover = synthetic_cover(32, 7)
        cfg = AttackConfig(mode="targeted", target_class=1, budget=20, seed=1)
        outcome = run_attack(cover, cfg, Stubborn())
        assert not outcome.success
        assert outcome.termination == "budget_exhausted"
        assert outcome.queries_used == 20

    def test_determinism(self):
        cover = synthetic_cover(32, 8)
        cfg = targeted_cfg(seed=11)
        a = run_attack(cover, cfg, mlp_victim(3, 10, 32, 32))
        b = run_attack(cover, cfg, mlp_victim(3, 10, 32, 32))
        assert a.adversarial_image == b.adversarial_image
        assert a.queries_used == b.queries_used
        assert [(e.query_index, e.action, e.objective) for e in a.trace] == \
            [(e.query_index, e.action, e.objective) for e in b.trace]

    def test_query_accounting(self):
        cover = synthetic_cover(32, 9)
        cfg = targeted_cfg(seed=2)
        counting = CountingOracle(mlp_victim(2, 10, 32, 32), cfg.budget)
        outcome = run_attack(cover, cfg, counting)
        assert outcome.queries_used == counting.used == len(outcome.trace)

    def test_linear_victim_also_works(self):
        cover = synthetic_cover(32, 10)
        outcome = run_attack(cover, targeted_cfg(), linear_victim(1, 10, 32, 32))
        assert outcome.success


def test_trace_csv(tmp_path):
    cover = synthetic_cover(32, 12)
    outcome = run_attack(cover, targeted_cfg(), mlp_victim(1, 10, 32, 32))
    path = tmp_path / "trace.csv"
    write_trace_csv(outcome.trace, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "query_index,action,objective"
    assert len(lines) == len(outcome.trace) + 1
