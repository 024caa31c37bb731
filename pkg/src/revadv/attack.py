"""Beam-search black-box attack.

Random accept/reject steps along low-frequency DCT directions, a recorder of
gain ratios for accepted steps, and a query-free decayed move along the best
recorded direction after every ``beam_size`` random steps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import dctspace
from .imagecore import ColorImage, FloatImage, dequantize, quantize
from .oracle import BudgetExhausted, CountingOracle

RATIO_FLOOR = 1e-12


@dataclass(frozen=True)
class AttackConfig:
    mode: str = "targeted"  # "targeted" | "untargeted"
    target_class: int | None = None
    true_class: int | None = None
    step_size: float = 0.2
    beam_size: int = 3
    decay: float = 1.0 / 3.0
    budget: int = 20000
    frequency_fraction: Fraction | None = None  # None -> size-based default
    seed: int = 1
    beam_enabled: bool = True

    def __post_init__(self):
        if self.mode not in ("targeted", "untargeted"):
            raise ValueError(f"bad mode: {self.mode}")
        if self.mode == "targeted":
            if self.target_class is None:
                raise ValueError("targeted mode requires target_class")
            if self.true_class is not None and self.target_class == self.true_class:
                raise ValueError("target_class must differ from true_class")
        else:
            if self.true_class is None:
                raise ValueError("untargeted mode requires true_class")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must be in (0, 1]")


@dataclass
class TraceEntry:
    query_index: int
    action: str  # init | add | sub | reject | confirm
    objective: float


@dataclass
class BeamEntry:
    index: dctspace.FrequencyIndex
    sign: int
    ratio: float


class BeamRecorder:
    """Insertion-ordered (signed direction -> gain ratio) entries."""

    def __init__(self):
        self.entries: list[BeamEntry] = []

    def record(self, index, sign, ratio):
        self.entries.append(BeamEntry(index, sign, ratio))

    def best(self) -> BeamEntry | None:
        if not self.entries:
            return None
        # ties resolve to the earliest recorded entry
        return max(self.entries, key=lambda e: e.ratio)

    def clear(self):
        self.entries = []


@dataclass
class AttackState:
    x: FloatImage
    delta: np.ndarray
    objective: float
    recorder: BeamRecorder = field(default_factory=BeamRecorder)
    trace: list[TraceEntry] = field(default_factory=list)
    random_steps_done: int = 0
    success_probe: np.ndarray | None = None  # delta of a probe that met the predicate


@dataclass
class AttackOutcome:
    success: bool
    adversarial_image: ColorImage
    queries_used: int
    delta_l2: float
    trace: list[TraceEntry]
    termination: str  # success | budget_exhausted | directions_exhausted


def objective(probs: np.ndarray, cfg: AttackConfig) -> float:
    if cfg.mode == "targeted":
        return float(probs[cfg.target_class])
    return 1.0 - float(probs[cfg.true_class])


def success_predicate(probs: np.ndarray, cfg: AttackConfig) -> bool:
    top = int(np.argmax(probs))
    if cfg.mode == "targeted":
        return top == cfg.target_class
    return top != cfg.true_class


def _evaluate(state: AttackState, delta: np.ndarray, oracle, cfg: AttackConfig,
              action: str) -> tuple[float, bool]:
    """One counted query at clamp(x + delta).  Returns (objective, predicate)."""
    probe = FloatImage(state.x.values + delta)  # FloatImage clamps to [0, 1]
    probs = oracle.score(probe)
    val = objective(probs, cfg)
    state.trace.append(TraceEntry(len(state.trace) + 1, action, val))
    hit = success_predicate(probs, cfg)
    if hit:
        state.success_probe = delta
    return val, hit


def random_step(state: AttackState, sampler: dctspace.DirectionSampler,
                oracle, cfg: AttackConfig) -> bool:
    """One accept/reject step; 1 or 2 queries.  Returns True on predicate hit."""
    idx = sampler.next_direction()
    q = dctspace.basis_direction(idx, state.x.height, state.x.width)
    step = cfg.step_size * q
    state.random_steps_done += 1

    j_plus, hit = _evaluate(state, state.delta + step, oracle, cfg, "add")
    if hit:
        return True
    if j_plus > state.objective:
        ratio = j_plus / max(state.objective, RATIO_FLOOR)
        state.delta = state.delta + step
        state.recorder.record(idx, +1, ratio)
        state.objective = j_plus
        return False
    state.trace[-1].action = "reject"

    j_minus, hit = _evaluate(state, state.delta - step, oracle, cfg, "sub")
    if hit:
        return True
    if j_minus > state.objective:
        ratio = j_minus / max(state.objective, RATIO_FLOOR)
        state.delta = state.delta - step
        state.recorder.record(idx, -1, ratio)
        state.objective = j_minus
        return False
    state.trace[-1].action = "reject"
    return False


def beam_step(state: AttackState, cfg: AttackConfig) -> None:
    """Query-free decayed move along the best recorded direction.

    No-op (beyond clearing the recorder) when nothing recorded or the best
    ratio is <= 1.  The cached objective is kept; the next queried value
    reflects the move implicitly.
    """
    best = state.recorder.best()
    if best is not None and best.ratio > 1.0:
        q = dctspace.basis_direction(best.index, state.x.height, state.x.width)
        state.delta = state.delta + cfg.decay * cfg.step_size * best.sign * q
    state.recorder.clear()


def run_attack(x: ColorImage, cfg: AttackConfig, oracle) -> AttackOutcome:
    if cfg.budget < 2:
        raise ValueError("budget must be at least 2")
    counting = oracle if isinstance(oracle, CountingOracle) else CountingOracle(oracle, cfg.budget)
    fraction = cfg.frequency_fraction or dctspace.default_fraction(x.height, x.width)
    sampler = dctspace.DirectionSampler(x.height, x.width, fraction, cfg.seed)

    x_f = dequantize(x)
    state = AttackState(x=x_f, delta=np.zeros_like(x_f.values), objective=0.0)
    termination = "directions_exhausted"
    try:
        j0, hit = _evaluate(state, state.delta, counting, cfg, "init")
        state.objective = j0
        if not hit:
            while True:
                if random_step(state, sampler, counting, cfg):
                    break
                if (cfg.beam_enabled and state.random_steps_done % cfg.beam_size == 0
                        and state.random_steps_done > 0):
                    beam_step(state, cfg)
        # Confirm on the quantized image; continue from it if the predicate
        # does not survive quantization.
        while True:
            state.delta = state.success_probe
            candidate = quantize(FloatImage(state.x.values + state.delta))
            state.delta = dequantize(candidate).values - state.x.values
            state.success_probe = None
            _, hit = _evaluate(state, state.delta, counting, cfg, "confirm")
            if hit:
                termination = "success"
                break
            state.objective = state.trace[-1].objective
            found = False
            while not found:
                found = random_step(state, sampler, counting, cfg)
                if not found and (cfg.beam_enabled and state.random_steps_done % cfg.beam_size == 0):
                    beam_step(state, cfg)
    except BudgetExhausted:
        termination = "budget_exhausted"
    except dctspace.Exhausted:
        termination = "directions_exhausted"

    final = quantize(FloatImage(state.x.values + state.delta))
    return AttackOutcome(
        success=termination == "success",
        adversarial_image=final,
        queries_used=counting.used,
        delta_l2=float(np.linalg.norm(state.delta)),
        trace=state.trace,
        termination=termination,
    )


def write_trace_csv(trace: list[TraceEntry], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_index", "action", "objective"])
        for entry in trace:
            writer.writerow([entry.query_index, entry.action, repr(entry.objective)])
