"""Latency budget harness and fail-closed safety interlock.

The interlock watches the predicted arm mask against a permitted operating
region: breaches above a fraction threshold are debounced over consecutive
frames before latching an absorbing OVERRIDE.  Any in-loop error or budget
miss yields HALT, never PROCEED.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .nets import Generator, UNetConfig
from .pipeline import DatasetManifest, ImageBuffer
from .tensor import Tensor
from .train import load_checkpoint

NOMINAL = "NOMINAL"
BREACH = "BREACH"
OVERRIDE = "OVERRIDE"

PROCEED = "PROCEED"
HALT = "HALT"


class InterlockError(RuntimeError):
    pass


@dataclass
class LatencyBudget:
    budget_ms: float = 300.0
    policy: str = "record"  # "record" | "abort-frame"

    def __post_init__(self):
        if self.budget_ms <= 0:
            raise ValueError(f"LatencyBudget: budget_ms must be > 0, got {self.budget_ms}")
        if self.policy not in ("record", "abort-frame"):
            raise ValueError(f"LatencyBudget: unknown policy {self.policy!r}")


@dataclass
class LatencyReport:
    frame_ms: list[float]
    budget_ms: float
    hardware_note: str = ""

    @property
    def violations(self) -> int:
        return sum(1 for t in self.frame_ms if t > self.budget_ms)

    def _nearest_rank(self, q: float) -> float:
        ordered = sorted(self.frame_ms)
        rank = max(1, int(np.ceil(q * len(ordered))))
        return ordered[rank - 1]

    def summary(self) -> dict:
        return {
            "frames": len(self.frame_ms),
            "budget_ms": self.budget_ms,
            "violations": self.violations,
            "min_ms": min(self.frame_ms),
            "mean_ms": float(np.mean(self.frame_ms)),
            "p50_ms": self._nearest_rank(0.50),
            "p95_ms": self._nearest_rank(0.95),
            "max_ms": max(self.frame_ms),
            "hardware_note": self.hardware_note,
        }

    def write(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "latency.json").write_text(json.dumps(self.summary(), indent=2) + "\n")
        with open(out_dir / "latency_frames.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["frame", "ms", "violation"])
            for i, t in enumerate(self.frame_ms):
                w.writerow([i, repr(t), int(t > self.budget_ms)])


@dataclass
class SafeRegion:
    mask: ImageBuffer  # 255 = permitted zone
    breach_fraction_threshold: float = 0.01
    consecutive_frames_to_override: int = 2

    def __post_init__(self):
        if not 0.0 <= self.breach_fraction_threshold <= 1.0:
            raise ValueError("SafeRegion: breach_fraction_threshold must be in [0, 1]")
        if self.consecutive_frames_to_override < 1:
            raise ValueError("SafeRegion: consecutive_frames_to_override must be >= 1")

    @property
    def permitted(self) -> np.ndarray:
        return self.mask.gray() >= 128


@dataclass(frozen=True)
class GuardState:
    mode: str = NOMINAL
    consecutive_breach_count: int = 0
    last_breach_fraction: float = 0.0
    frames_processed: int = 0


def guard_step(state: GuardState, predicted_mask: ImageBuffer,
               region: SafeRegion) -> tuple[GuardState, str]:
    """Pure interlock transition: (state, mask, region) -> (state', decision).

    An empty mask counts as no breach (a vanished arm is a model failure,
    flagged upstream, but halting on it would latch the untrained model).
    """
    mask = predicted_mask.gray() >= 128
    permitted = region.permitted
    if mask.shape != permitted.shape:
        raise ValueError(f"guard_step: mask {mask.shape} vs region {permitted.shape}")
    arm_pixels = int(mask.sum())
    outside = int((mask & ~permitted).sum())
    fraction = 0.0 if arm_pixels == 0 else outside / arm_pixels

    frames = state.frames_processed + 1
    if state.mode == OVERRIDE:
        return (replace(state, last_breach_fraction=fraction,
                        frames_processed=frames), HALT)
    if fraction > region.breach_fraction_threshold:
        count = state.consecutive_breach_count + 1
        if count >= region.consecutive_frames_to_override:
            return (GuardState(OVERRIDE, count, fraction, frames), HALT)
        return (GuardState(BREACH, count, fraction, frames), PROCEED)
    return (GuardState(NOMINAL, 0, fraction, frames), PROCEED)


def reset_override(state: GuardState, operator_token: str) -> GuardState:
    if state.mode != OVERRIDE:
        raise InterlockError(f"reset_override: state is {state.mode}, not {OVERRIDE}")
    return GuardState(NOMINAL, 0, 0.0, state.frames_processed)


# ---------------------------------------------------------------------------
# latency harness


def make_segmenter(ckpt: str | Path, gen_cfg: UNetConfig) -> Callable[[np.ndarray], ImageBuffer]:
    """Checkpoint-backed frame -> binary mask callable (infer mode)."""
    gen, *_ = load_checkpoint(ckpt, gen_cfg)

    def segment(cond_chw: np.ndarray) -> ImageBuffer:
        out = gen.forward(Tensor(cond_chw[None].astype(np.float32)), mode="infer")
        values = np.clip(np.rint(out.data[0, 0] * 255.0), 0, 255).astype(np.uint8)
        return ImageBuffer(np.where(values >= 128, 255, 0).astype(np.uint8))

    return segment


def time_inference(ckpt: str | Path, manifest: DatasetManifest, gen_cfg: UNetConfig,
                   budget: LatencyBudget, repetitions: int = 1,
                   injected_delay_ms: float = 0.0,
                   hardware_note: str = "") -> LatencyReport:
    """Wall-clock per-frame inference timings; one warm-up pass excluded.

    `injected_delay_ms` is a test hook adding a synthetic sleep per frame.
    """
    if repetitions < 1:
        raise ValueError("time_inference: repetitions must be >= 1")
    pairs = manifest.load_pairs_unit_interval()
    if not pairs:
        raise ValueError("time_inference: empty manifest")
    segment = make_segmenter(ckpt, gen_cfg)
    segment(pairs[0][0])  # warm-up, excluded
    timings: list[float] = []
    for _ in range(repetitions):
        for cond, _label in pairs:
            t0 = time.perf_counter()
            if injected_delay_ms > 0:
                time.sleep(injected_delay_ms / 1000.0)
            segment(cond)
            timings.append((time.perf_counter() - t0) * 1000.0)
    return LatencyReport(frame_ms=timings, budget_ms=budget.budget_ms,
                         hardware_note=hardware_note)


@dataclass
class GuardEvent:
    frame: int
    ms: float
    breach_fraction: float
    mode: str
    decision: str
    reason: str = ""

    def json_line(self) -> str:
        return json.dumps({"frame": self.frame, "ms": round(self.ms, 3),
                           "breach_fraction": self.breach_fraction, "mode": self.mode,
                           "decision": self.decision, "reason": self.reason})


def guard_run(segmenter: Callable[[np.ndarray], ImageBuffer],
              frames: Iterable[np.ndarray], region: SafeRegion,
              budget: LatencyBudget, injected_delay_ms: float = 0.0,
              log_path: str | Path | None = None) -> list[GuardEvent]:
    """Online loop: segment -> interlock per frame, all inside one budget window.

    Under the abort-frame policy a frame that misses its budget is HALT with
    reason "latency" regardless of the interlock outcome (fail closed).
    `segmenter` is any frame -> binary-mask callable; tests substitute a
    ground-truth oracle for the trained generator.
    """
    state = GuardState()
    events: list[GuardEvent] = []
    expected_shape = None
    log_file = open(log_path, "w") if log_path is not None else None
    try:
        for i, frame in enumerate(frames):
            if expected_shape is None:
                expected_shape = frame.shape
            elif frame.shape != expected_shape:
                raise ValueError(f"guard_run: frame {i} shape {frame.shape} drifted "
                                 f"from {expected_shape}")
            t0 = time.perf_counter()
            if injected_delay_ms > 0:
                time.sleep(injected_delay_ms / 1000.0)
            mask = segmenter(frame)
            state, decision = guard_step(state, mask, region)
            ms = (time.perf_counter() - t0) * 1000.0
            reason = "breach" if decision == HALT else ""
            if ms > budget.budget_ms and budget.policy == "abort-frame":
                decision = HALT
                reason = "latency"
            event = GuardEvent(i, ms, state.last_breach_fraction, state.mode,
                               decision, reason)
            events.append(event)
            if log_file is not None:
                log_file.write(event.json_line() + "\n")
    finally:
        if log_file is not None:
            log_file.close()
    return events
