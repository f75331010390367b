"""Trace files, the stdio wire protocol, and CSV export.

Traces and wire frames are line-delimited JSON, UTF-8, one object per
line. Logit arrays travel as 32-bit floats (what inference stacks emit)
and are widened to float64 on ingest; writing renders the exact f32
values so a read/write round trip is bit-identical. Directives for
unintervened steps omit the logits array entirely, so a passthrough step
costs O(1) bandwidth and the host reuses its own buffer.

The stdio server answers every request with exactly one response and
never desynchronizes: protocol violations produce an ``error`` response
(with the session intact), malformed frames are skipped the same way.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .controller import Controller, ControllerConfig, Directive, EventRecord, StreamSummary
from .errors import ConfigError, ProtocolError, TraceFormatError

__all__ = [
    "TraceRecord",
    "write_trace",
    "read_trace",
    "write_events",
    "read_events",
    "export_csv",
    "serve_stdio",
    "replay_records",
]


def _as_f32(values, *, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 1:
        raise ValueError(f"{what} must be 1-D")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    return arr


@dataclass(frozen=True)
class TraceRecord:
    """One decoding step on the wire: conditional logits plus optional extras.

    ``token_id``/``token_text`` describe the token sampled at t-1.
    """

    t: int
    logits: np.ndarray
    ref_logits: np.ndarray | None = None
    token_id: int | None = None
    token_text: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "logits", _as_f32(self.logits, what="logits"))
        if self.ref_logits is not None:
            ref = _as_f32(self.ref_logits, what="ref_logits")
            if ref.shape != self.logits.shape:
                raise ValueError("ref_logits shape differs from logits")
            object.__setattr__(self, "ref_logits", ref)
        if self.t < 0:
            raise ValueError(f"t must be >= 0, got {self.t}")

    def to_dict(self) -> dict:
        d: dict = {"t": self.t, "logits": [float(x) for x in self.logits]}
        if self.ref_logits is not None:
            d["ref_logits"] = [float(x) for x in self.ref_logits]
        if self.token_id is not None:
            d["token_id"] = self.token_id
        if self.token_text is not None:
            d["token_text"] = self.token_text
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TraceRecord":
        try:
            return cls(
                t=int(d["t"]),
                logits=d["logits"],
                ref_logits=d.get("ref_logits"),
                token_id=None if d.get("token_id") is None else int(d["token_id"]),
                token_text=d.get("token_text"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"bad trace record: {exc}") from exc


def _open_for(path_or_file, mode: str):
    if isinstance(path_or_file, (str, Path)):
        return open(path_or_file, mode, encoding="utf-8"), True
    return path_or_file, False


def write_trace(records: Iterable[TraceRecord], path_or_file) -> int:
    """Write records as JSONL; returns the number written."""
    fh, owned = _open_for(path_or_file, "w")
    try:
        n = 0
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), separators=(",", ":")))
            fh.write("\n")
            n += 1
        return n
    finally:
        if owned:
            fh.close()


def read_trace(path_or_file) -> list[TraceRecord]:
    """Parse a JSONL trace, enforcing step order and a constant vocab size."""
    fh, owned = _open_for(path_or_file, "r")
    try:
        records: list[TraceRecord] = []
        vocab: int | None = None
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
                rec = TraceRecord.from_dict(payload)
            except (json.JSONDecodeError, ValueError) as exc:
                raise TraceFormatError(str(exc), line=lineno) from exc
            if rec.t != len(records):
                raise TraceFormatError(
                    f"step index jumped to {rec.t}, expected {len(records)}", line=lineno
                )
            if vocab is None:
                vocab = rec.logits.size
            elif rec.logits.size != vocab:
                raise TraceFormatError(
                    f"vocab size changed mid-trace ({vocab} -> {rec.logits.size})", line=lineno
                )
            records.append(rec)
        return records
    finally:
        if owned:
            fh.close()


def write_events(events: Iterable[EventRecord], path_or_file) -> int:
    fh, owned = _open_for(path_or_file, "w")
    try:
        n = 0
        for event in events:
            fh.write(event.to_json())
            fh.write("\n")
            n += 1
        return n
    finally:
        if owned:
            fh.close()


def read_events(path_or_file) -> list[EventRecord]:
    fh, owned = _open_for(path_or_file, "r")
    try:
        events = []
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                events.append(EventRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise TraceFormatError(str(exc), line=lineno) from exc
        return events
    finally:
        if owned:
            fh.close()


# -- CSV export ---------------------------------------------------------------

_CSV_COLUMNS = (
    "t",
    "H",
    "mu",
    "sigma",
    "gradient",
    "phase",
    "step_type",
    "spike",
    "lambda",
    "mode",
)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def export_csv(events: Iterable[EventRecord], path_or_file) -> int:
    """One row per step with the trajectory quantities, 6 significant digits."""
    fh, owned = _open_for(path_or_file, "w")
    try:
        fh.write(",".join(_CSV_COLUMNS) + "\n")
        n = 0
        for e in events:
            row = (
                e.t,
                e.entropy,
                e.mu,
                e.sigma,
                e.gradient,
                e.phase.value,
                e.step_type.value,
                e.spike,
                e.lambda_applied,
                e.mode.value,
            )
            fh.write(",".join(_cell(v) for v in row) + "\n")
            n += 1
        return n
    finally:
        if owned:
            fh.close()


def replay_records(
    config: ControllerConfig, records: Iterable[TraceRecord]
) -> tuple[list[Directive], list[EventRecord], StreamSummary]:
    """Drive a fresh controller over recorded steps."""
    controller = Controller(config)
    directives: list[Directive] = []
    events: list[EventRecord] = []
    for rec in records:
        directive, event = controller.process_step(
            rec.t,
            rec.logits,
            ref_logits=rec.ref_logits,
            token_id=rec.token_id,
            token_text=rec.token_text,
        )
        directives.append(directive)
        events.append(event)
    return directives, events, controller.finish()


# -- stdio wire protocol --------------------------------------------------------


def _directive_payload(t: int, directive: Directive, event: EventRecord) -> dict:
    payload: dict = {"kind": "directive", "t": t, "intervened": directive.intervened}
    if directive.intervened:
        payload["logits"] = [float(x) for x in directive.logits.astype(np.float32)]
        if directive.temperature_override is not None:
            payload["temperature"] = directive.temperature_override
    payload["event"] = event.to_dict()
    return payload


def _error(code: str, message: str) -> dict:
    return {"kind": "error", "code": code, "message": message}


class _Session:
    """Request dispatch for one stdio session."""

    def __init__(self, base_config: ControllerConfig | dict | None):
        self.base_config = base_config
        self.controller: Controller | None = None

    def handle(self, msg: dict) -> dict:
        kind = msg.get("kind")
        if kind == "init":
            return self._init(msg)
        if kind == "step":
            return self._step(msg)
        if kind == "sampled":
            return self._sampled(msg)
        if kind == "finish":
            return self._finish()
        return _error("bad_frame", f"unknown request kind {kind!r}")

    def _init(self, msg: dict) -> dict:
        from .config import config_from_dict  # local import to avoid a cycle

        try:
            vocab_size = int(msg["vocab_size"])
        except (KeyError, TypeError, ValueError):
            return _error("bad_frame", "init requires an integer vocab_size")
        try:
            if msg.get("config") is not None:
                config = config_from_dict(dict(msg["config"]), vocab_size=vocab_size)
            elif isinstance(self.base_config, ControllerConfig):
                config = replace(self.base_config, vocab_size=vocab_size)
            elif isinstance(self.base_config, dict):
                config = config_from_dict(self.base_config, vocab_size=vocab_size)
            else:
                config = ControllerConfig(vocab_size=vocab_size)
            self.controller = Controller(config)
        except ConfigError as exc:
            return _error("config", str(exc))
        return {"kind": "ready"}

    def _step(self, msg: dict) -> dict:
        if self.controller is None:
            return _error("not_initialized", "send init before step")
        try:
            rec = TraceRecord.from_dict(msg.get("record") or {})
        except ValueError as exc:
            return _error("bad_frame", str(exc))
        try:
            directive, event = self.controller.process_step(
                rec.t,
                rec.logits,
                ref_logits=rec.ref_logits,
                token_id=rec.token_id,
                token_text=rec.token_text,
            )
        except ProtocolError as exc:
            return _error("protocol", str(exc))
        except ValueError as exc:
            return _error("bad_frame", str(exc))
        return _directive_payload(rec.t, directive, event)

    def _sampled(self, msg: dict) -> dict:
        if self.controller is None:
            return _error("not_initialized", "send init before sampled")
        token_id = msg.get("token_id")
        try:
            self.controller.notify_sampled(
                None if token_id is None else int(token_id),
                msg.get("token_text") or "",
            )
        except ProtocolError as exc:
            return _error("protocol", str(exc))
        except (TypeError, ValueError) as exc:
            return _error("bad_frame", str(exc))
        return {"kind": "ready"}

    def _finish(self) -> dict:
        if self.controller is None:
            return _error("not_initialized", "send init before finish")
        summary = self.controller.finish()
        return {"kind": "summary", **summary.to_dict()}


def serve_stdio(
    config: ControllerConfig | dict | None = None,
    stdin: TextIO | None = None,
    stdout: TextIO | None = None,
) -> int:
    """Run the request/response loop until a finish request or EOF.

    ``config`` provides defaults when the init message carries no config
    payload of its own.
    """
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    session = _Session(config)
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ValueError("frame must be a JSON object")
        except (json.JSONDecodeError, ValueError) as exc:
            response = _error("bad_frame", str(exc))
        else:
            response = session.handle(msg)
        stdout.write(json.dumps(response, separators=(",", ":")) + "\n")
        stdout.flush()
        if response.get("kind") == "summary":
            break
    return 0
