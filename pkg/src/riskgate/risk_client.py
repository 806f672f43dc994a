"""Non-blocking risk query client used by the control loop.

The loop calls ``submit`` on query steps and ``poll`` every step; neither
ever waits. Two transports exist: ``VirtualTimeTransport`` resolves the
reply in-process and delivers it once sim time passes
``t_issued + latency`` (deterministic), and ``HttpTransport`` runs real
requests on a worker thread.
"""

from __future__ import annotations

import json
import math
import time
import urllib.error
import urllib.request
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional

from .alpha import AlphaPolicyConfig
from .parsing import NoRiskFound, parse_risk_response
from .risk_service import CONTROLLER_INSTRUCTION, RiskService
from .scene import SceneSnapshot


class TransportDown(RuntimeError):
    pass


@dataclass(frozen=True, slots=True)
class RiskEstimate:
    r: float
    t_issued: float
    t_received: float
    request_id: int


@dataclass(frozen=True)
class RiskRequest:
    context: str
    request_id: int
    scene: Optional[SceneSnapshot] = None
    image_png_base64: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "image_png_base64": self.image_png_base64,
            "scene": self.scene.to_json() if self.scene is not None else None,
            "context": self.context,
            "request_id": self.request_id,
        }


@dataclass(frozen=True, slots=True)
class Delivery:
    status: int
    body: str
    t_received: float


@dataclass
class InFlight:
    request_id: int
    t_issued: float
    handle: Any


def build_context(h_min: float, v: float) -> str:
    """Controller-side prompt with the runtime context filled in (3 decimals)."""
    if math.isnan(h_min) or math.isnan(v):
        raise ValueError("context values must not be NaN")
    return CONTROLLER_INSTRUCTION.format(h_min=f"{h_min:.3f}", v=f"{v:.3f}")


def should_query(step: int, cfg: AlphaPolicyConfig, busy: bool = False) -> bool:
    return step % cfg.query_period_steps == 0 and not busy


class VirtualTimeTransport:
    """Calls the service in-process; the reply lands at ``t_issued + sampled delay``."""

    def __init__(self, service: RiskService, down: bool = False):
        self.service = service
        self.down = down

    def dispatch(self, request: RiskRequest, t: float):
        if self.down:
            raise TransportDown("virtual transport marked down")
        resp = self.service.handle(request.to_json())
        return Delivery(resp.status, resp.body, t + resp.delay)

    def collect(self, handle: Delivery, t: float) -> Optional[Delivery]:
        return handle if handle.t_received <= t else None

    def close(self) -> None:
        pass


class HttpTransport:
    """Real HTTP POSTs on a background worker.

    Wall-clock round-trip time is mapped onto sim time: a reply is delivered
    at ``t_issued + elapsed`` once the simulation has reached that time.
    """

    def __init__(self, url: str, timeout: float = 10.0, workers: int = 2):
        self.url = url
        self.timeout = timeout
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="risk-http")
        self._closed = False

    def _post(self, payload: dict) -> tuple[int, str, float]:
        start = time.monotonic()
        req = urllib.request.Request(
            self.url, data=json.dumps(payload).encode(), headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                status, body = resp.status, resp.read().decode("utf-8", errors="replace")
        except urllib.error.HTTPError as exc:
            status, body = exc.code, exc.read().decode("utf-8", errors="replace")
        except (urllib.error.URLError, OSError) as exc:
            status, body = 0, str(exc)
        return status, body, time.monotonic() - start

    def dispatch(self, request: RiskRequest, t: float):
        if self._closed:
            raise TransportDown("transport closed")
        try:
            fut = self._pool.submit(self._post, request.to_json())
        except RuntimeError as exc:
            raise TransportDown(str(exc)) from exc
        return (fut, t)

    def collect(self, handle: tuple[Future, float], t: float) -> Optional[Delivery]:
        fut, t_issued = handle
        if not fut.done():
            return None
        status, body, elapsed = fut.result()
        t_recv = t_issued + elapsed
        if t_recv > t:
            return None
        return Delivery(status, body, t_recv)

    def close(self) -> None:
        self._closed = True
        self._pool.shutdown(wait=False, cancel_futures=True)


@dataclass
class RiskClient:
    """Holds the latest valid estimate and the in-flight requests.

    ``max_in_flight=1`` skips a scheduled query while a reply is pending;
    2 allows a short queue for ablation.
    """

    transport: Any
    cfg: AlphaPolicyConfig
    max_in_flight: int = 1
    latest: Optional[RiskEstimate] = None
    in_flight: list[InFlight] = field(default_factory=list)
    latency_samples: list[float] = field(default_factory=list)
    requests_sent: int = 0
    requests_received: int = 0
    requests_failed: int = 0
    log: list[RiskEstimate] = field(default_factory=list)
    _next_id: int = 0

    def __post_init__(self):
        if self.max_in_flight not in (1, 2):
            raise ValueError("max_in_flight must be 1 or 2")

    def should_query(self, step: int) -> bool:
        return should_query(step, self.cfg, busy=len(self.in_flight) >= self.max_in_flight)

    def submit(
        self, frame: Optional[SceneSnapshot], context: str, t: float, image_png_base64: Optional[str] = None
    ) -> Optional[int]:
        if len(self.in_flight) >= self.max_in_flight:
            raise RuntimeError("request already in flight")
        rid = self._next_id
        self._next_id += 1
        request = RiskRequest(context, rid, frame, image_png_base64)
        self.requests_sent += 1
        try:
            handle = self.transport.dispatch(request, t)
        except TransportDown:
            self.requests_failed += 1
            return None
        self.in_flight.append(InFlight(rid, t, handle))
        return rid

    def poll(self, t: float) -> Optional[RiskEstimate]:
        arrived = None
        for item in list(self.in_flight):
            got = self.transport.collect(item.handle, t)
            if got is None:
                continue
            self.in_flight.remove(item)
            r = None
            if got.status == 200:
                try:
                    r = parse_risk_response(got.body)
                except NoRiskFound:
                    r = None
            if r is None:
                self.requests_failed += 1
                continue
            est = RiskEstimate(r, item.t_issued, got.t_received, item.request_id)
            self.requests_received += 1
            self.latency_samples.append(est.t_received - est.t_issued)
            self.log.append(est)
            if self.latest is None or est.t_received >= self.latest.t_received:
                self.latest = est
                arrived = est
        return arrived

    def latency_stats(self) -> tuple[float, float, int]:
        n = len(self.latency_samples)
        if n == 0:
            return (math.nan, math.nan, 0)
        return (sum(self.latency_samples) / n, max(self.latency_samples), n)

    def close(self) -> None:
        self.transport.close()
