"""Synthetic logit-stream generation and detection scoring.

The generator is a desk-scale stand-in for a language model: it emits one
dense logit vector per step whose entropy follows a scripted regime.
Distribution shapes are controlled by temperature-flattening a fixed
anchored profile until the requested entropy is met (bisection to 1e-6
nats), which moves entropy precisely without disturbing which token is
argmax. Spike overlays raise the target far enough above the generator's
own running window statistics to be unambiguous to a detector using the
mirrored configuration. Streams are deterministic given (scenario, seed).

evaluate() scores an event log against the injected ground truth with a
step tolerance, reporting detection precision and recall.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .controller import EventRecord
from .detector import DetectorConfig
from .distributions import shannon_entropy
from .errors import ConfigError
from .monitor import EntropyWindow
from .trace_io import TraceRecord

__all__ = [
    "StableRegime",
    "DriftRegime",
    "LoopRegime",
    "SpikeInjection",
    "Scenario",
    "GroundTruth",
    "Metrics",
    "generate",
    "evaluate",
    "BUILTIN_SCENARIOS",
]

BUILTIN_SCENARIOS = ("stable", "fig1-like", "loop50")

_ANCHOR_BOOST = 3.0
_ANCHOR_GAP = 0.05
_NOISE_SCALE = 0.3
_FIT_TOL = 1e-6
_SPIKE_MARGIN = 0.1


@dataclass(frozen=True)
class StableRegime:
    steps: int
    target_entropy: float
    jitter: float = 0.0
    anchors: tuple[int, ...] = ()


@dataclass(frozen=True)
class DriftRegime:
    steps: int
    slope: float
    start_entropy: float | None = None
    anchors: tuple[int, ...] = ()


@dataclass(frozen=True)
class LoopRegime:
    """Argmax cycles through ``tokens`` while entropy ramps gently upward."""

    steps: int
    period: int
    tokens: tuple[int, ...]
    start_entropy: float
    slope: float = 0.0


@dataclass(frozen=True)
class SpikeInjection:
    """Point overlay: flatten the distribution for ``width`` steps."""

    at_step: int
    magnitude: float
    width: int = 1


@dataclass(frozen=True)
class Scenario:
    vocab_size: int
    length: int
    seed: int
    segments: tuple = ()

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.length < 1:
            raise ConfigError(f"length must be >= 1, got {self.length}")
        covered = 0
        for seg in self.segments:
            if isinstance(seg, SpikeInjection):
                if not 0 <= seg.at_step < self.length:
                    raise ConfigError(f"spike at_step {seg.at_step} outside [0, {self.length})")
                if seg.at_step + seg.width > self.length:
                    raise ConfigError("spike overlay extends past the scenario length")
                if seg.magnitude <= 0 or seg.width < 1:
                    raise ConfigError("spike needs magnitude > 0 and width >= 1")
                continue
            if seg.steps < 1:
                raise ConfigError(f"segment steps must be >= 1, got {seg.steps}")
            covered += seg.steps
            for token in self._segment_tokens(seg):
                if not 0 <= token < self.vocab_size:
                    raise ConfigError(f"token {token} outside the vocabulary")
            if isinstance(seg, LoopRegime):
                if seg.period != len(seg.tokens) or seg.period < 1:
                    raise ConfigError("loop period must equal the number of cycled tokens")
                if seg.start_entropy <= 0:
                    raise ConfigError("loop start_entropy must be > 0")
            if isinstance(seg, StableRegime) and (seg.target_entropy <= 0 or seg.jitter < 0):
                raise ConfigError("stable regime needs target_entropy > 0 and jitter >= 0")
        if covered != self.length:
            raise ConfigError(
                f"base regimes cover {covered} steps but the scenario length is {self.length}"
            )

    @staticmethod
    def _segment_tokens(seg) -> tuple[int, ...]:
        if isinstance(seg, LoopRegime):
            return seg.tokens
        return getattr(seg, "anchors", ())

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            segments = tuple(_segment_from_dict(s) for s in d.get("segments", []))
            return cls(
                vocab_size=int(d["vocab_size"]),
                length=int(d["length"]),
                seed=int(d.get("seed", 0)),
                segments=segments,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad scenario: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "Scenario":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load scenario {path}: {exc}") from exc
        return cls.from_dict(payload)

    @classmethod
    def builtin(cls, name: str) -> "Scenario":
        if name not in BUILTIN_SCENARIOS:
            raise ConfigError(
                f"unknown scenario {name!r} (built in: {', '.join(BUILTIN_SCENARIOS)})"
            )
        text = (
            resources.files("spreg")
            .joinpath("data")
            .joinpath("scenarios")
            .joinpath(f"{name}.json")
            .read_text("utf-8")
        )
        return cls.from_dict(json.loads(text))


def _segment_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "stable":
        return StableRegime(
            steps=int(d["steps"]),
            target_entropy=float(d["target_entropy"]),
            jitter=float(d.get("jitter", 0.0)),
            anchors=tuple(int(a) for a in d.get("anchors", [])),
        )
    if kind == "drift":
        start = d.get("start_entropy")
        return DriftRegime(
            steps=int(d["steps"]),
            slope=float(d["slope"]),
            start_entropy=None if start is None else float(start),
            anchors=tuple(int(a) for a in d.get("anchors", [])),
        )
    if kind == "loop":
        return LoopRegime(
            steps=int(d["steps"]),
            period=int(d["period"]),
            tokens=tuple(int(tok) for tok in d["tokens"]),
            start_entropy=float(d["start_entropy"]),
            slope=float(d.get("slope", 0.0)),
        )
    if kind == "spike":
        return SpikeInjection(
            at_step=int(d["at_step"]),
            magnitude=float(d["magnitude"]),
            width=int(d.get("width", 1)),
        )
    raise ConfigError(f"unknown segment kind {kind!r}")


@dataclass(frozen=True)
class GroundTruth:
    injected_spike_steps: tuple[int, ...] = ()
    loop_spans: tuple[tuple[int, int], ...] = ()


def _fit_temperature(profile: np.ndarray, target: float, tol: float = _FIT_TOL) -> np.ndarray:
    """Scale ``profile`` so its softmax entropy hits ``target`` within tol."""
    lo, hi = 1e-4, 1e6
    if not shannon_entropy(profile / lo) - tol <= target <= shannon_entropy(profile / hi) + tol:
        raise ConfigError(f"entropy target {target:.4f} is unreachable for this vocabulary")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        h = shannon_entropy(profile / mid)
        if abs(h - target) <= tol:
            return profile / mid
        if h < target:
            lo = mid
        else:
            hi = mid
    return profile / math.sqrt(lo * hi)


class _ProfileBank:
    """Fixed per-segment logit shapes with a controllable argmax."""

    def __init__(self, vocab_size: int, rng: np.random.Generator):
        self._vocab = vocab_size
        self._rng = rng

    def build(self, anchors: tuple[int, ...]) -> np.ndarray:
        noise = self._rng.normal(0.0, _NOISE_SCALE, self._vocab)
        if not anchors:
            anchors = (int(self._rng.integers(self._vocab)),)
        profile = noise
        for rank, token in enumerate(anchors):
            profile[token] = _ANCHOR_BOOST - _ANCHOR_GAP * rank
        return profile

    @staticmethod
    def with_top(profile: np.ndarray, anchors: tuple[int, ...], top: int) -> np.ndarray:
        """Reorder anchor boosts so ``top`` is argmax, keeping the shape."""
        out = profile.copy()
        ordered = [top] + [a for a in anchors if a != top]
        for rank, token in enumerate(ordered):
            out[token] = _ANCHOR_BOOST - _ANCHOR_GAP * rank
        return out


def generate(
    scenario: Scenario,
    seed: int | None = None,
    detector: DetectorConfig | None = None,
) -> tuple[list[TraceRecord], GroundTruth]:
    """Produce the per-step logit records and the injected ground truth.

    ``detector`` supplies the window size and thresholds the spike overlay
    calibrates against (defaults mirror DetectorConfig defaults), so a
    "3 sigma" injection is meaningful to the detector under test.
    """
    det = detector or DetectorConfig()
    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    bank = _ProfileBank(scenario.vocab_size, rng)
    window = EntropyWindow(capacity=det.window)
    # Raising the final tail point by n*(n+1)/6 * g_min lifts the fitted
    # slope to the pre-filter floor when the prefix is flat.
    gradient_lift = det.g_min * det.n_grad * (det.n_grad + 1) / 6.0

    spikes = sorted(
        (seg for seg in scenario.segments if isinstance(seg, SpikeInjection)),
        key=lambda s: s.at_step,
    )
    spike_lookup: dict[int, SpikeInjection] = {}
    for spike in spikes:
        for offset in range(spike.width):
            spike_lookup[spike.at_step + offset] = spike

    base_segments = [seg for seg in scenario.segments if not isinstance(seg, SpikeInjection)]

    records: list[TraceRecord] = []
    loop_spans: list[tuple[int, int]] = []
    t = 0
    prev_target: float | None = None
    prev_token: int | None = None
    spike_target: dict[int, float] = {}

    for seg in base_segments:
        profile = bank.build(Scenario._segment_tokens(seg))
        if isinstance(seg, LoopRegime):
            loop_spans.append((t, t + seg.steps))
        if isinstance(seg, DriftRegime):
            if seg.start_entropy is not None:
                drift_base, drift_offset = seg.start_entropy, 0
            elif prev_target is not None:
                drift_base, drift_offset = prev_target, 1
            else:
                raise ConfigError("drift segment needs start_entropy when it opens a scenario")
        for i in range(seg.steps):
            if isinstance(seg, StableRegime):
                target = seg.target_entropy
                if seg.jitter > 0:
                    target += float(rng.uniform(-0.9, 0.9)) * seg.jitter
                step_profile = profile
            elif isinstance(seg, DriftRegime):
                target = drift_base + seg.slope * (i + drift_offset)
                step_profile = profile
            else:
                target = seg.start_entropy + seg.slope * i
                top = seg.tokens[i % seg.period]
                step_profile = bank.with_top(profile, seg.tokens, top)

            spike = spike_lookup.get(t)
            if spike is not None:
                if spike.at_step not in spike_target:
                    mu, sigma = window.stats() if len(window) else (target, 0.0)
                    spike_target[spike.at_step] = (
                        max(mu + spike.magnitude * sigma, mu + gradient_lift, det.h_min)
                        + _SPIKE_MARGIN
                    )
                target = spike_target[spike.at_step]

            logits = _fit_temperature(step_profile, target).astype(np.float32)
            measured = shannon_entropy(logits)
            window.push(measured)
            records.append(
                TraceRecord(t=t, logits=logits, token_id=prev_token, token_text="")
            )
            prev_token = int(np.argmax(logits))
            prev_target = target
            t += 1

    truth = GroundTruth(
        injected_spike_steps=tuple(s.at_step for s in spikes),
        loop_spans=tuple(loop_spans),
    )
    return records, truth


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    detections: int
    injections: int
    matched: int
    spikes: int
    repair_steps: int
    aggressive_recoveries: int
    mean_entropy: float
    max_entropy: float

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


def evaluate(
    events: list[EventRecord], truth: GroundTruth, tolerance_steps: int = 2
) -> Metrics:
    """Score detections against injected spikes within a step tolerance.

    Each injection is matched to at most one detection. With no detections
    (or no injections) the corresponding rate is vacuously 1.0.
    """
    if not events:
        raise ValueError("no events to evaluate")
    last_t = events[-1].t
    if any(step > last_t for step in truth.injected_spike_steps):
        raise ValueError("ground truth refers to steps beyond the event log")

    detections = [e.t for e in events if e.spike]
    injections = list(truth.injected_spike_steps)
    unmatched = set(injections)
    matched = 0
    for det_t in detections:
        candidates = [s for s in unmatched if abs(s - det_t) <= tolerance_steps]
        if candidates:
            unmatched.remove(min(candidates, key=lambda s: abs(s - det_t)))
            matched += 1

    precision = matched / len(detections) if detections else 1.0
    recall = matched / len(injections) if injections else 1.0
    entropies = [e.entropy for e in events]
    return Metrics(
        precision=precision,
        recall=recall,
        detections=len(detections),
        injections=len(injections),
        matched=matched,
        spikes=sum(1 for e in events if e.spike),
        repair_steps=sum(1 for e in events if e.mode.value == "repair"),
        aggressive_recoveries=sum(1 for e in events if e.mode.value == "aggressive"),
        mean_entropy=float(np.mean(entropies)),
        max_entropy=float(np.max(entropies)),
    )
