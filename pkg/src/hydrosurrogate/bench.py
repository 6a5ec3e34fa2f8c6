"""Single-sample latency and sustained-loop benchmarks of the inference pipeline."""
from __future__ import annotations

import json
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAX_TIMER_RESOLUTION = 10e-6


class TimerResolutionError(RuntimeError):
    pass


@dataclass
class LatencyStats:
    n: int
    mean: float
    std: float
    median: float
    p95: float
    p99: float
    precision: str
    machine: str
    durations_ms: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    @classmethod
    def from_durations(cls, durations_s: np.ndarray, precision: str, machine: str | None = None
                       ) -> "LatencyStats":
        ms = np.asarray(durations_s, dtype=np.float64) * 1e3
        return cls(len(ms), float(ms.mean()), float(ms.std()), float(np.percentile(ms, 50)),
                   float(np.percentile(ms, 95)), float(np.percentile(ms, 99)), precision,
                   machine or machine_descriptor(), ms)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("durations_ms")
        return d


def machine_descriptor() -> str:
    return f"{platform.machine()} {platform.processor() or platform.system()} " \
           f"python {platform.python_version()} numpy {np.__version__}"


def check_timer(max_resolution: float = MAX_TIMER_RESOLUTION) -> float:
    """Reported and observed perf_counter resolution; raise if coarser than the limit."""
    res = time.get_clock_info("perf_counter").resolution
    observed = np.inf
    for _ in range(200):
        a = time.perf_counter()
        b = time.perf_counter()
        while b == a:
            b = time.perf_counter()
        observed = min(observed, b - a)
    worst = max(res, observed)
    if worst > max_resolution:
        raise TimerResolutionError(f"timer resolution {worst * 1e6:.1f} us is coarser than "
                                   f"{max_resolution * 1e6:.0f} us")
    return worst


def _precision(pipeline) -> str:
    return f"{8 * np.dtype(pipeline.dtype).itemsize}-bit"


def bench_single(pipeline, inputs: Sequence[dict], n_iters: int = 1000, warmup: int = 100
                 ) -> tuple[LatencyStats, list[np.ndarray]]:
    """Time ``pipeline(**state)`` for states cycled from ``inputs``.

    Returns the stats and the forces from the first pass over ``inputs`` so the
    caller can compare them with an untimed run.
    """
    if n_iters < 100:
        raise ValueError("need at least 100 timed iterations")
    check_timer()
    inputs = list(inputs)
    for i in range(warmup):
        pipeline(**inputs[i % len(inputs)])
    durations = np.empty(n_iters)
    first: list[np.ndarray] = []
    clock = time.perf_counter
    for i in range(n_iters):
        state = inputs[i % len(inputs)]
        t0 = clock()
        out = pipeline(**state)
        durations[i] = clock() - t0
        if i < len(inputs):
            first.append(out)
    return LatencyStats.from_durations(durations, _precision(pipeline)), first


def sinusoidal_state(t: float, base: dict, speed_amp: float = 0.3, depth_amp: float = 0.2,
                     period: float = 2.0) -> dict:
    """Inputs varying smoothly in time around ``base`` (relative amplitudes)."""
    s = np.sin(2 * np.pi * t / period)
    v = np.asarray(base["v"], dtype=np.float64) * (1.0 + speed_amp * s)
    return {**base, "v": v, "depth": base["depth"] * (1.0 + depth_amp * s)}


@dataclass
class SustainedResult:
    duration: float
    iterations: int
    rate_hz: float
    mode: str
    stats: LatencyStats

    def summary(self) -> dict:
        return {"duration_s": self.duration, "iterations": self.iterations,
                "rate_hz": self.rate_hz, "mode": self.mode, **{
                    f"latency_{k}": v for k, v in self.stats.summary().items()}}


def bench_sustained(pipeline, state: dict, duration: float = 10.0, mode: str = "constant"
                    ) -> SustainedResult:
    """Back-to-back calls for ``duration`` seconds with constant or time-varying inputs."""
    if mode not in ("constant", "time-varying"):
        raise ValueError(f"unknown input mode {mode!r}")
    check_timer()
    clock = time.perf_counter
    durations = []
    start = clock()
    now = start
    while now - start < duration:
        s = state if mode == "constant" else sinusoidal_state(now - start, state)
        t0 = clock()
        pipeline(**s)
        now = clock()
        durations.append(now - t0)
    elapsed = now - start
    d = np.array(durations)
    return SustainedResult(elapsed, len(d), len(d) / elapsed, mode,
                           LatencyStats.from_durations(d, _precision(pipeline)))


def write_stats(path: str | Path, stats: LatencyStats, extra: dict | None = None) -> None:
    """Summary as JSON next to a one-column text file of raw durations (ms)."""
    path = Path(path)
    path.write_text(json.dumps({**stats.summary(), **(extra or {})}, indent=2, sort_keys=True))
    np.savetxt(path.with_suffix(".durations.txt"), stats.durations_ms, fmt="%.6f",
               header="duration_ms")
