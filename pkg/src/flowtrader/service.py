"""Forward-testing HTTP signal service.

Each session loads an instrument, an alpha model, and an agent, then
answers `POST .../signal` requests carrying `{time, ofi[10], mid}` with a
buy/sell action.  The decision and trade accounting run through the same
`SignalEngine` the backtest uses, one row at a time, so replaying a
recorded tick file through the service reproduces the backtest's action
sequence bit-exactly.

Requests within a session are processed strictly serially under a
per-session lock, with timestamps required to increase; sessions never
share mutable state.  A session may carry an append-only JSONL journal
(one record per accepted signal request); creating a session whose
journal file already has content replays it first, which is the
crash-recovery path.  The report endpoint returns the trade log with the
open position closed at the last seen mid, backtest-grade metrics, and
p50/p95/p99 request latency.
"""

from __future__ import annotations

import copy
import json
import math
import os
import threading
import time
import uuid
from dataclasses import asdict

import numpy as np
from fastapi import Body, FastAPI
from fastapi.responses import JSONResponse

from .agents import Action, load_agent
from .alpha_model import load_model
from .backtest import SignalEngine, Trade, TradeLog, compute_metrics
from .errors import DataFormatError
from .labeling import load_instrument_spec
from .lob import N_LEVELS

BIND_ENV = "FLOWTRADER_BIND"
DEFAULT_BIND = "127.0.0.1:8000"

LATENCY_PERCENTILES = (50, 95, 99)


class ServiceError(Exception):
    """Request-level failure carrying an HTTP status code."""

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def _bad_request(message: str) -> ServiceError:
    return ServiceError(400, message)


class Session:
    """One forward-testing stream: engine state, trade log, latency samples."""

    def __init__(self, session_id: str, spec, model, agent, journal_path=None):
        self.session_id = session_id
        self.spec = spec
        self.engine = SignalEngine(agent, model, spec)
        self.lock = threading.Lock()
        self.last_ts: int | None = None
        self.last_mid: float | None = None
        self.last_action: Action | None = None
        self.trades: list[Trade] = []
        self.equity: list[float] = []
        self.equity_ts: list[int] = []
        self.latencies_ms: list[float] = []
        self.n_requests = 0
        self.journal_path = journal_path
        self._journal = None

    def process(self, ts: int, ofi: np.ndarray, mid: float, *, live: bool) -> dict:
        """Run one signal decision; caller must hold the session lock."""
        if self.last_ts is not None and ts <= self.last_ts:
            raise ServiceError(
                409, f"time {ts} is not after the session's last time {self.last_ts}"
            )
        start = time.perf_counter()
        action, changed, closed = self.engine.step(ts, ofi, mid)
        latency_ms = (time.perf_counter() - start) * 1e3
        if closed is not None:
            self.trades.append(closed)
        self.last_ts = ts
        self.last_mid = mid
        self.last_action = action
        self.equity.append(self.engine.equity(mid))
        self.equity_ts.append(ts)
        if live:
            self.n_requests += 1
            self.latencies_ms.append(latency_ms)
            if self._journal is not None:
                record = {"time": ts, "ofi": [float(v) for v in ofi], "mid": mid}
                self._journal.write(json.dumps(record) + "\n")
                self._journal.flush()
        return {
            "action": "buy" if action == Action.BUY else "sell",
            "changed": changed,
            "latency_ms": latency_ms,
        }

    def replay_journal(self) -> int:
        """Feed any existing journal content back through the engine."""
        if self.journal_path is None or not os.path.exists(self.journal_path):
            return 0
        replayed = 0
        with open(self.journal_path, encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line:
                    continue
                try:
                    payload = json.loads(line)
                except json.JSONDecodeError:
                    raise _bad_request(f"journal line {line_no}: invalid JSON") from None
                try:
                    ts, ofi, mid = validate_signal_payload(payload)
                    self.process(ts, ofi, mid, live=False)
                except ServiceError as exc:
                    raise _bad_request(f"journal line {line_no}: {exc.message}") from None
                replayed += 1
        return replayed

    def open_journal(self) -> None:
        if self.journal_path is not None:
            self._journal = open(self.journal_path, "a", encoding="utf-8")

    def close(self) -> None:
        if self._journal is not None:
            self._journal.close()
            self._journal = None

    def report(self) -> dict:
        """Trade log with the open position closed at the last mid, metrics,
        and latency percentiles; caller must hold the session lock."""
        trades = list(self.trades)
        if self.last_mid is not None:
            # close a copy so the live engine keeps its open position
            final = copy.copy(self.engine).close_out(self.last_ts, self.last_mid)
            if final is not None:
                trades.append(final)
        metrics = None
        if trades:
            log = TradeLog(
                trades=trades,
                equity=np.array(self.equity),
                timestamps=np.array(self.equity_ts, dtype=np.int64),
            )
            metrics = asdict(compute_metrics(log))
        latency = None
        if self.latencies_ms:
            samples = np.array(self.latencies_ms)
            latency = {
                "count": len(self.latencies_ms),
                **{
                    f"p{q}": float(np.percentile(samples, q))
                    for q in LATENCY_PERCENTILES
                },
            }
        return {
            "session_id": self.session_id,
            "instrument": self.spec.name,
            "n_requests": self.n_requests,
            "position": None if self.last_action is None
            else ("buy" if self.last_action == Action.BUY else "sell"),
            "trades": [_trade_dict(t) for t in trades],
            "metrics": metrics,
            "latency_ms": latency,
        }


def _trade_dict(t: Trade) -> dict:
    return {
        "entry_ts": t.entry_ts,
        "exit_ts": t.exit_ts,
        "direction": "buy" if t.direction == Action.BUY else "sell",
        "entry_mid": t.entry_mid,
        "exit_mid": t.exit_mid,
        "gross": t.gross,
        "costs": t.costs,
        "net": t.net,
    }


def _require_number(payload: dict, field: str) -> float:
    value = payload.get(field)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _bad_request(f"{field} must be a number")
    value = float(value)
    if not math.isfinite(value):
        raise _bad_request(f"{field} must be finite")
    return value


def validate_signal_payload(payload) -> tuple[int, np.ndarray, float]:
    """Check a `{time, ofi, mid}` body, naming the offending field."""
    if not isinstance(payload, dict):
        raise _bad_request("body must be a JSON object")
    unknown = sorted(set(payload) - {"time", "ofi", "mid"})
    if unknown:
        raise _bad_request(f"unexpected field {unknown[0]!r}")
    for field in ("time", "ofi", "mid"):
        if field not in payload:
            raise _bad_request(f"missing field {field!r}")
    ts = payload["time"]
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise _bad_request("time must be an integer millisecond timestamp")
    ofi = payload["ofi"]
    if not isinstance(ofi, list) or len(ofi) != N_LEVELS:
        raise _bad_request(f"ofi must be a list of {N_LEVELS} numbers")
    values = []
    for v in ofi:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise _bad_request(f"ofi must be a list of {N_LEVELS} finite numbers")
        values.append(float(v))
    mid = _require_number(payload, "mid")
    if mid <= 0:
        raise _bad_request("mid must be positive")
    return ts, np.array(values), mid


def _validate_create_body(payload) -> tuple[str, str, str, str | None]:
    if not isinstance(payload, dict):
        raise _bad_request("body must be a JSON object")
    unknown = sorted(set(payload) - {"instrument", "model", "agent", "journal"})
    if unknown:
        raise _bad_request(f"unexpected field {unknown[0]!r}")
    out = []
    for field in ("instrument", "model", "agent"):
        value = payload.get(field)
        if not isinstance(value, str) or not value:
            raise _bad_request(f"{field} must be a file path string")
        if not os.path.exists(value):
            raise _bad_request(f"{field} file not found: {value}")
        out.append(value)
    journal = payload.get("journal")
    if journal is not None and (not isinstance(journal, str) or not journal):
        raise _bad_request("journal must be a file path string")
    return out[0], out[1], out[2], journal


def create_app() -> FastAPI:
    app = FastAPI(title="flowtrader signal service")
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()

    @app.exception_handler(ServiceError)
    async def _service_error(request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={"error": exc.message})

    def get_session(session_id: str) -> Session:
        with registry_lock:
            session = sessions.get(session_id)
        if session is None:
            raise ServiceError(404, f"unknown session {session_id!r}")
        return session

    @app.post("/v1/session")
    def create_session(payload: dict = Body(...)):
        instrument, model_path, agent_path, journal = _validate_create_body(payload)
        try:
            spec = load_instrument_spec(instrument)
        except DataFormatError as exc:
            raise _bad_request(f"instrument: {exc}") from None
        try:
            model = load_model(model_path)
        except DataFormatError as exc:
            raise _bad_request(f"model: {exc}") from None
        try:
            agent = load_agent(agent_path)
        except DataFormatError as exc:
            raise _bad_request(f"agent: {exc}") from None
        session = Session(uuid.uuid4().hex[:12], spec, model, agent, journal)
        replayed = session.replay_journal()
        session.open_journal()
        with registry_lock:
            sessions[session.session_id] = session
        return {
            "session_id": session.session_id,
            "instrument": spec.name,
            "agent_algo": agent.algo,
            "replayed": replayed,
        }

    @app.post("/v1/session/{session_id}/signal")
    def signal(session_id: str, payload: dict = Body(...)):
        session = get_session(session_id)
        ts, ofi, mid = validate_signal_payload(payload)
        with session.lock:
            return session.process(ts, ofi, mid, live=True)

    @app.get("/v1/session/{session_id}/report")
    def report(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return session.report()

    @app.delete("/v1/session/{session_id}")
    def delete(session_id: str):
        with registry_lock:
            session = sessions.pop(session_id, None)
        if session is None:
            raise ServiceError(404, f"unknown session {session_id!r}")
        with session.lock:
            session.close()
        return {"session_id": session_id, "deleted": True}

    return app


def parse_bind(bind: str) -> tuple[str, int]:
    host, sep, port = bind.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"bind address must be host:port, got {bind!r}")
    return host, int(port)


def serve(bind: str | None = None) -> None:
    """Run the service; `bind` falls back to $FLOWTRADER_BIND, then default."""
    import uvicorn

    resolved = bind or os.environ.get(BIND_ENV) or DEFAULT_BIND
    host, port = parse_bind(resolved)
    uvicorn.run(create_app(), host=host, port=port)
