"""Per-stream orchestration of the monitor-detect-repair loop.

One Controller owns the mutable state of a single decoding stream: the
entropy window, the high-entropy counter, the control state machine, the
plan tracker, the reference pool, and the recent-token span. Each call to
process_step consumes one conditional logit vector and returns a Directive
(what the host sampler should do) plus an EventRecord (what happened, for
logs and analysis).

Per-step order: entropy and gradient are computed from the conditional
logits against pre-step window statistics; the plan tracker ingests the
text of the previously sampled token; the detector decides; repair math
runs only on intervened steps; low-entropy steps feed the reference pool
(suppressed while intervening so the prior is never contaminated by our
own edits); finally the window absorbs the step's entropy. Unintervened
steps pass the input logits through bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

import numpy as np

from .detector import Decision, DecisionKind, DetectorConfig, Phase, SpikeDetector
from .distributions import (
    as_logits,
    entropy_and_logprobs,
    log_softmax,
    normalized_entropy,
    shannon_entropy,
)
from .errors import ConfigError, ProtocolError
from .monitor import EntropyWindow, HighEntropyCounter, entropy_gradient
from .plan_tracker import GuidanceTable, PatternSet, PlanTracker, StepType
from .repair import (
    ReferencePool,
    RepairParams,
    adaptive_scale,
    aggressive_recover,
    guided_logits,
    token_weights,
)

__all__ = [
    "Mode",
    "ControllerConfig",
    "Directive",
    "EventRecord",
    "StreamSummary",
    "Controller",
    "drive_records",
]


class Mode(str, Enum):
    NONE = "none"
    REPAIR = "repair"
    AGGRESSIVE = "aggressive"


class ReferenceSource(str, Enum):
    EXTERNAL = "external"
    POOL = "pool"
    UNIFORM = "uniform"
    NA = "n/a"


@dataclass(frozen=True)
class ControllerConfig:
    vocab_size: int
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    repair: RepairParams = field(default_factory=RepairParams)
    guidance: GuidanceTable = field(default_factory=GuidanceTable)
    patterns: PatternSet | None = None

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")


@dataclass(frozen=True)
class Directive:
    """Per-step controller output for the host sampler."""

    logits: np.ndarray
    intervened: bool = False
    mode: Mode = Mode.NONE
    temperature_override: float | None = None

    def __post_init__(self):
        if (self.temperature_override is not None) != (self.mode is Mode.AGGRESSIVE):
            raise ValueError("temperature_override is set exactly for aggressive mode")
        if self.intervened != (self.mode is not Mode.NONE):
            raise ValueError("intervened flag must match mode")


_EVENT_FIELDS = (
    "t",
    "entropy",
    "mu",
    "sigma",
    "gradient",
    "phase",
    "step_type",
    "spike",
    "lambda_applied",
    "repair_index",
    "reference_source",
    "mode",
    "modified_entropy",
)


@dataclass(frozen=True)
class EventRecord:
    """One serializable row per decoding step; carries every plotted quantity."""

    t: int
    entropy: float
    mu: float | None
    sigma: float | None
    gradient: float | None
    phase: Phase
    step_type: StepType
    spike: bool
    lambda_applied: float | None
    repair_index: int | None
    reference_source: ReferenceSource
    mode: Mode
    modified_entropy: float | None

    def to_dict(self) -> dict:
        d = {name: getattr(self, name) for name in _EVENT_FIELDS}
        d["phase"] = self.phase.value
        d["step_type"] = self.step_type.value
        d["reference_source"] = self.reference_source.value
        d["mode"] = self.mode.value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "EventRecord":
        return cls(
            t=int(d["t"]),
            entropy=float(d["entropy"]),
            mu=None if d["mu"] is None else float(d["mu"]),
            sigma=None if d["sigma"] is None else float(d["sigma"]),
            gradient=None if d["gradient"] is None else float(d["gradient"]),
            phase=Phase(d["phase"]),
            step_type=StepType(d["step_type"]),
            spike=bool(d["spike"]),
            lambda_applied=None if d["lambda_applied"] is None else float(d["lambda_applied"]),
            repair_index=None if d["repair_index"] is None else int(d["repair_index"]),
            reference_source=ReferenceSource(d["reference_source"]),
            mode=Mode(d["mode"]),
            modified_entropy=None if d["modified_entropy"] is None else float(d["modified_entropy"]),
        )


@dataclass(frozen=True)
class StreamSummary:
    total_steps: int
    spikes: int
    repair_steps: int
    aggressive_recoveries: int
    mean_entropy: float

    def to_dict(self) -> dict:
        return {
            "total_steps": self.total_steps,
            "spikes": self.spikes,
            "repair_steps": self.repair_steps,
            "aggressive_recoveries": self.aggressive_recoveries,
            "mean_entropy": self.mean_entropy,
        }


class Controller:
    """State and step loop for one decoding stream.

    Calls on one controller must be externally serialized in step order;
    independent controllers may run in parallel and can share immutable
    config and pattern sets.
    """

    def __init__(self, config: ControllerConfig):
        if not isinstance(config, ControllerConfig):
            raise ConfigError(f"expected ControllerConfig, got {type(config).__name__}")
        self.config = config
        det = config.detector
        self._window = EntropyWindow(capacity=det.window, tail_size=det.n_grad)
        self._counter = HighEntropyCounter(threshold=det.c_high)
        self._detector = SpikeDetector(det)
        self._tracker = PlanTracker(config.patterns)
        self._pool = ReferencePool(
            config.vocab_size,
            capacity=config.repair.pool_capacity,
            aggregation=config.repair.pool_aggregation,
        )
        self._recent: list[int] = []
        self._next_t = 0
        self._awaiting_sample = False
        self._steps = 0
        self._spikes = 0
        self._repair_steps = 0
        self._aggressive = 0
        self._entropy_sum = 0.0

    # -- token feedback ----------------------------------------------------

    def notify_sampled(self, token_id: int | None, token_text: str = "") -> None:
        """Report the token the host sampled after the last process_step.

        At most one notification per step; the same information may instead
        arrive inline with the next process_step call.
        """
        if not self._awaiting_sample:
            raise ProtocolError("notify_sampled called twice for one step (or before any step)")
        self._awaiting_sample = False
        self._ingest_token(token_id, token_text)

    def _ingest_token(self, token_id: int | None, token_text: str) -> None:
        if token_id is not None:
            self._recent.append(int(token_id))
            span = self.config.repair.recent_window
            if len(self._recent) > span:
                del self._recent[:-span]
        if token_text:
            self._tracker.ingest(token_text)

    # -- main loop ----------------------------------------------------------

    def process_step(
        self,
        t: int,
        cond_logits,
        ref_logits=None,
        token_id: int | None = None,
        token_text: str | None = None,
    ) -> tuple[Directive, EventRecord]:
        """Consume one step's conditional logits and decide what to do.

        ``token_id``/``token_text`` describe the token sampled at t-1 and
        are ignored as duplicates if notify_sampled already reported it.
        ``ref_logits``, when given, is an externally computed reference
        distribution that takes precedence over the pool synthesis.
        """
        if t != self._next_t:
            raise ProtocolError(f"expected step {self._next_t}, got {t}")
        cond = np.asarray(cond_logits, dtype=np.float64)
        if cond.ndim != 1 or cond.size != self.config.vocab_size:
            raise ValueError(
                f"expected {self.config.vocab_size} logits, got shape {cond.shape}"
            )

        if token_id is not None or token_text:
            if self._awaiting_sample:
                self._awaiting_sample = False
                self._ingest_token(token_id, token_text or "")
            else:
                raise ProtocolError(f"step {t}: sampled token was already notified")
        self._next_t += 1

        entropy, cond_logprobs = entropy_and_logprobs(cond)
        if len(self._window) > 0:
            mu, sigma = self._window.stats()
        else:
            mu = sigma = None
        gradient = self._gradient(entropy)
        step_type = self._tracker.classify()

        count = self._counter.update(entropy, mu)
        phase, decision = self._detector.advance(t, entropy, mu, sigma, gradient, count)

        directive, event = self._apply(
            t, cond, ref_logits, entropy, mu, sigma, gradient, phase, step_type, decision
        )

        if not directive.intervened and mu is not None and entropy < mu:
            self._pool.record(cond_logprobs, entropy, mu)
        self._window.push(entropy)

        self._steps += 1
        self._entropy_sum += entropy
        if decision.kind is DecisionKind.TRIGGER_REPAIR:
            self._spikes += 1
        if event.mode is Mode.REPAIR:
            self._repair_steps += 1
        elif event.mode is Mode.AGGRESSIVE:
            self._aggressive += 1
        self._awaiting_sample = True
        return directive, event

    def _gradient(self, entropy: float) -> float | None:
        n = self.config.detector.n_grad
        prior = self._window.tail(n - 1)
        if len(prior) < n - 1:
            return None
        return entropy_gradient([*prior, entropy], n=n)

    def _reference(self, ref_logits) -> tuple[np.ndarray, ReferenceSource]:
        if ref_logits is not None:
            ref = as_logits(ref_logits, self.config.vocab_size)
            return log_softmax(ref), ReferenceSource.EXTERNAL
        if len(self._pool) > 0:
            return self._pool.synthesize(), ReferenceSource.POOL
        return self._pool.synthesize(), ReferenceSource.UNIFORM

    def _apply(
        self,
        t: int,
        cond: np.ndarray,
        ref_logits,
        entropy: float,
        mu: float | None,
        sigma: float | None,
        gradient: float | None,
        phase: Phase,
        step_type: StepType,
        decision: Decision,
    ) -> tuple[Directive, EventRecord]:
        params = self.config.repair
        spike = decision.kind is DecisionKind.TRIGGER_REPAIR
        lam: float | None = None
        source = ReferenceSource.NA
        modified_entropy: float | None = None

        if decision.kind in (DecisionKind.TRIGGER_REPAIR, DecisionKind.CONTINUE_REPAIR):
            ref, source = self._reference(ref_logits)
            lam = adaptive_scale(
                entropy, mu, step_type, decision.repair_index, self.config.guidance, params
            )
            weights = token_weights(
                ref, normalized_entropy(entropy, self.config.vocab_size), params
            )
            out = guided_logits(cond, ref, lam, weights, direction=params.direction)
            modified_entropy = shannon_entropy(out)
            directive = Directive(logits=out, intervened=True, mode=Mode.REPAIR)
        elif decision.kind is DecisionKind.AGGRESSIVE_RECOVER:
            ref, source = self._reference(ref_logits)
            lam = params.lambda_max
            out, temperature = aggressive_recover(cond, ref, self._recent, params)
            modified_entropy = shannon_entropy(out)
            directive = Directive(
                logits=out,
                intervened=True,
                mode=Mode.AGGRESSIVE,
                temperature_override=temperature,
            )
            # The escalation answered the persistent-high state; require a
            # fresh run of above-mean steps before escalating again.
            self._counter.reset()
        else:
            directive = Directive(logits=cond)

        event = EventRecord(
            t=t,
            entropy=entropy,
            mu=mu,
            sigma=sigma,
            gradient=gradient,
            phase=phase,
            step_type=step_type,
            spike=spike,
            lambda_applied=lam,
            repair_index=decision.repair_index,
            reference_source=source,
            mode=directive.mode,
            modified_entropy=modified_entropy,
        )
        return directive, event

    def finish(self) -> StreamSummary:
        """Cumulative tallies; equal to a recount over the emitted events."""
        mean = self._entropy_sum / self._steps if self._steps else math.nan
        return StreamSummary(
            total_steps=self._steps,
            spikes=self._spikes,
            repair_steps=self._repair_steps,
            aggressive_recoveries=self._aggressive,
            mean_entropy=mean,
        )


def drive_records(
    controller: Controller, records: Iterable
) -> Iterator[tuple[Directive, EventRecord]]:
    """Feed trace records (t, logits, ref_logits, token_id, token_text) through a controller."""
    for rec in records:
        yield controller.process_step(
            rec.t,
            rec.logits,
            ref_logits=rec.ref_logits,
            token_id=rec.token_id,
            token_text=rec.token_text,
        )
