"""Stand-in risk endpoint speaking the same wire protocol as a hosted VLM.

``RiskService.handle`` is transport-agnostic: the virtual-time client calls
it in-process, and ``make_server`` wraps it in a threaded HTTP server for
``POST /risk``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Optional, Protocol

import numpy as np

from .alpha import AlphaPolicyConfig
from .parsing import NoRiskFound, parse_risk_response
from .scene import SceneSnapshot
from .world import ConfigError

log = logging.getLogger(__name__)

DEFAULT_PORT = 8077
PORT_ENV = "RISKGATE_PORT"

SERVER_INSTRUCTION = (
    "You are a risk estimator for mobile robot navigation. Given this scene image, "
    'output ONLY a single-line JSON of the form {"risk": <number between 0 and 1>}. '
    "No prose, no markdown—just JSON."
)

CONTROLLER_INSTRUCTION = (
    "You are a safety estimator for a mobile robot. Given the current RGB view from a camera "
    "mounted on the robot, estimate current collision risk as a number in [0,1]. Lower values "
    "meaning lower imminent collision risk, and higher values meaning imminent collision risk. "
    "Return strict JSON only with keys: risk (0..1 float). "
    "Context: h_min={h_min} and current speed v={v} m/s."
)

ORACLE_W_DIST = 0.7
ORACLE_W_CLOSING = 0.3


class ProviderError(RuntimeError):
    """The provider could not produce a value (maps to HTTP 503)."""


class BadRequest(ValueError):
    """Malformed request payload (maps to HTTP 400)."""


def format_risk_body(r: float) -> str:
    return f'{{"risk": {r:.4f}}}'


def clip01(x: float) -> float:
    return 0.0 if x < 0.0 else 1.0 if x > 1.0 else x


def oracle_risk(
    scene: SceneSnapshot,
    cfg: AlphaPolicyConfig,
    w_d: float = ORACLE_W_DIST,
    w_v: float = ORACLE_W_CLOSING,
) -> float:
    """Ground-truth risk proxy from clearance and closing speed to the nearest obstacle."""
    if not scene.obstacles:
        return 0.0
    p = scene.robot.p
    # robot radius and padding are common to all obstacles, so the nearest
    # inflated boundary is the nearest raw boundary
    nearest = min(scene.obstacles, key=lambda o: (math.hypot(p.x - o.center.x, p.y - o.center.y) - o.radius, o.id))
    dx = p.x - nearest.center.x
    dy = p.y - nearest.center.y
    d = math.hypot(dx, dy)
    if d > 0.0:
        vx = scene.robot.v * math.cos(scene.robot.psi) - nearest.velocity.x
        vy = scene.robot.v * math.sin(scene.robot.psi) - nearest.velocity.y
        m_dot = (dx * vx + dy * vy) / d
    else:
        m_dot = 0.0
    closing = max(0.0, -m_dot) / cfg.v_cap_ref
    proximity = 1.0 - min(1.0, scene.margin / cfg.m_safe)
    return clip01(w_d * proximity + w_v * closing)


# -- providers ---------------------------------------------------------------


class RiskProvider(Protocol):
    def risk(self, request: dict) -> float: ...


@dataclass
class OracleProvider:
    cfg: AlphaPolicyConfig
    w_d: float = ORACLE_W_DIST
    w_v: float = ORACLE_W_CLOSING

    def risk(self, request: dict) -> float:
        if request.get("scene") is None:
            raise BadRequest("oracle provider needs a scene descriptor")
        try:
            scene = SceneSnapshot.from_json(request["scene"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BadRequest(f"bad scene: {exc}") from exc
        return oracle_risk(scene, self.cfg, self.w_d, self.w_v)


@dataclass
class ScriptedProvider:
    values: list[float]
    _cursor: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedProvider":
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read replay file {path}: {exc}") from exc
        try:
            return cls([float(s) for s in lines if s.strip()])
        except ValueError as exc:
            raise ConfigError(f"replay file {path}: {exc}") from exc

    def risk(self, request: dict) -> float:
        with self._lock:
            if self._cursor >= len(self.values):
                raise ProviderError("scripted replay exhausted")
            r = self.values[self._cursor]
            self._cursor += 1
        return clip01(r)


@dataclass
class NoisyProvider:
    base: Any
    outlier_prob: float
    outlier_value: float
    gaussian_sigma: float
    rng: np.random.Generator

    def risk(self, request: dict) -> float:
        r = self.base.risk(request)
        if self.rng.random() < self.outlier_prob:
            return clip01(self.outlier_value)
        if self.gaussian_sigma > 0:
            r += self.gaussian_sigma * self.rng.standard_normal()
        return clip01(r)


@dataclass
class PassthroughProvider:
    """Forward the prompt (server instruction + client context) to a real model endpoint.

    The upstream receives ``{"prompt", "image_png_base64", "scene"}`` and may
    answer in any text; the risk is pulled out with the lenient parser.
    """

    upstream_url: str
    timeout: float = 30.0

    def risk(self, request: dict) -> float:
        payload = {
            "prompt": SERVER_INSTRUCTION + "\n" + request.get("context", ""),
            "image_png_base64": request.get("image_png_base64"),
            "scene": request.get("scene"),
        }
        req = urllib.request.Request(
            self.upstream_url,
            data=json.dumps(payload).encode(),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                text = resp.read().decode("utf-8", errors="replace")
        except (urllib.error.URLError, OSError) as exc:
            raise ProviderError(f"upstream unreachable: {exc}") from exc
        try:
            return parse_risk_response(text)
        except NoRiskFound as exc:
            raise ProviderError(str(exc)) from exc


@dataclass(frozen=True)
class RiskProviderSpec:
    """Serializable description of a provider; ``build`` makes a fresh instance."""

    kind: str = "oracle"
    path: Optional[str] = None
    base: Optional["RiskProviderSpec"] = None
    outlier_prob: float = 0.0
    outlier_value: float = 0.0
    gaussian_sigma: float = 0.0
    rng_seed: int = 0
    upstream_url: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("oracle", "scripted", "noisy", "passthrough"):
            raise ConfigError(f"unknown provider kind {self.kind!r}")
        if self.kind == "scripted" and not self.path:
            raise ConfigError("scripted provider needs a path")
        if self.kind == "passthrough" and not self.upstream_url:
            raise ConfigError("passthrough provider needs an upstream url")
        if self.kind == "noisy":
            if not (0.0 <= self.outlier_prob <= 1.0 and 0.0 <= self.outlier_value <= 1.0):
                raise ConfigError("outlier_prob and outlier_value must lie in [0, 1]")
            if self.gaussian_sigma < 0:
                raise ConfigError("gaussian_sigma must be >= 0")

    def build(self, cfg: AlphaPolicyConfig, seed: int = 0):
        if self.kind == "oracle":
            return OracleProvider(cfg)
        if self.kind == "scripted":
            return ScriptedProvider.from_file(self.path)
        if self.kind == "passthrough":
            return PassthroughProvider(self.upstream_url)
        base = (self.base or RiskProviderSpec()).build(cfg, seed)
        rng = np.random.default_rng([self.rng_seed, seed])
        return NoisyProvider(base, self.outlier_prob, self.outlier_value, self.gaussian_sigma, rng)

    def to_json(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "scripted":
            out["path"] = self.path
        elif self.kind == "passthrough":
            out["upstream_url"] = self.upstream_url
        elif self.kind == "noisy":
            out.update(
                base=(self.base or RiskProviderSpec()).to_json(),
                outlier_prob=self.outlier_prob,
                outlier_value=self.outlier_value,
                gaussian_sigma=self.gaussian_sigma,
                rng_seed=self.rng_seed,
            )
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "RiskProviderSpec":
        obj = dict(obj)
        if "base" in obj and obj["base"] is not None:
            obj["base"] = cls.from_json(obj["base"])
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(f"bad provider spec: {exc}") from exc

    @classmethod
    def parse(cls, text: str) -> "RiskProviderSpec":
        """Parse the CLI form: ``oracle``, ``scripted:<path>``, ``passthrough:<url>``,
        or ``noisy:<outlier_prob>:<outlier_value>[:<sigma>[:<seed>]]`` over the oracle."""
        kind, _, rest = text.partition(":")
        if kind == "oracle" and not rest:
            return cls()
        if kind == "scripted":
            return cls("scripted", path=rest)
        if kind == "passthrough":
            return cls("passthrough", upstream_url=rest)
        if kind == "noisy":
            parts = rest.split(":") if rest else []
            if not 2 <= len(parts) <= 4:
                raise ConfigError("noisy provider: noisy:<outlier_prob>:<outlier_value>[:<sigma>[:<seed>]]")
            try:
                nums = [float(x) for x in parts[:3]]
                seed = int(parts[3]) if len(parts) == 4 else 0
            except ValueError as exc:
                raise ConfigError(f"noisy provider: {exc}") from exc
            sigma = nums[2] if len(nums) == 3 else 0.0
            return cls("noisy", outlier_prob=nums[0], outlier_value=nums[1], gaussian_sigma=sigma, rng_seed=seed)
        raise ConfigError(f"unknown provider {text!r}")


# -- latency -----------------------------------------------------------------

DEFAULT_LOGNORMAL_SIGMA = 0.25
MEAN_ROUND_TRIP_S = 0.695


@dataclass(frozen=True)
class LatencySpec:
    kind: str = "zero"
    d: float = 0.0
    lo: float = 0.0
    hi: float = 0.0
    mu: float = 0.0
    sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("zero", "fixed", "uniform", "lognormal"):
            raise ConfigError(f"unknown latency kind {self.kind!r}")
        for name in ("d", "lo", "hi", "sigma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"latency {name} must be finite and >= 0")
        if self.lo > self.hi:
            raise ConfigError("latency lo must be <= hi")

    @classmethod
    def lognormal_with_mean(cls, mean: float, sigma: float = DEFAULT_LOGNORMAL_SIGMA, rng_seed: int = 0):
        if not mean > 0:
            raise ConfigError("lognormal mean must be > 0")
        return cls("lognormal", mu=math.log(mean) - 0.5 * sigma * sigma, sigma=sigma, rng_seed=rng_seed)

    @property
    def mean(self) -> float:
        if self.kind == "fixed":
            return self.d
        if self.kind == "uniform":
            return 0.5 * (self.lo + self.hi)
        if self.kind == "lognormal":
            return math.exp(self.mu + 0.5 * self.sigma**2)
        return 0.0

    def sampler(self, seed: int = 0):
        """Return a zero-argument callable drawing delays in seconds."""
        if self.kind == "zero":
            return lambda: 0.0
        if self.kind == "fixed":
            d = self.d
            return lambda: d
        rng = np.random.default_rng([self.rng_seed, seed])
        if self.kind == "uniform":
            lo, hi = self.lo, self.hi
            return lambda: float(rng.uniform(lo, hi))
        mu, sigma = self.mu, self.sigma
        return lambda: float(rng.lognormal(mu, sigma))

    def to_json(self) -> dict:
        if self.kind == "fixed":
            return {"kind": "fixed", "d": self.d}
        if self.kind == "uniform":
            return {"kind": "uniform", "lo": self.lo, "hi": self.hi, "rng_seed": self.rng_seed}
        if self.kind == "lognormal":
            return {"kind": "lognormal", "mu": self.mu, "sigma": self.sigma, "rng_seed": self.rng_seed}
        return {"kind": "zero"}

    @classmethod
    def from_json(cls, obj: dict) -> "LatencySpec":
        obj = dict(obj)
        if obj.get("kind") == "lognormal" and "mean" in obj:
            return cls.lognormal_with_mean(
                float(obj["mean"]), float(obj.get("sigma", DEFAULT_LOGNORMAL_SIGMA)), int(obj.get("rng_seed", 0))
            )
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(f"bad latency spec: {exc}") from exc

    @classmethod
    def parse(cls, text: str) -> "LatencySpec":
        """CLI form: ``zero``, ``fixed:<s>``, ``uniform:<lo>:<hi>``, ``lognormal:<mean>[:<sigma>]``."""
        kind, *args = text.split(":")
        try:
            nums = [float(a) for a in args]
        except ValueError as exc:
            raise ConfigError(f"bad latency {text!r}") from exc
        if kind == "zero" and not nums:
            return cls()
        if kind == "fixed" and len(nums) == 1:
            return cls("fixed", d=nums[0])
        if kind == "uniform" and len(nums) == 2:
            return cls("uniform", lo=nums[0], hi=nums[1])
        if kind == "lognormal" and len(nums) in (1, 2):
            return cls.lognormal_with_mean(*nums)
        raise ConfigError(f"bad latency {text!r}")


# -- request handling --------------------------------------------------------


@dataclass(frozen=True)
class ServiceResponse:
    status: int
    body: str
    delay: float


class RiskService:
    """Validates a wire request, asks the provider, and schedules the reply."""

    def __init__(self, provider, latency_sampler=None):
        self.provider = provider
        self.sample_delay = latency_sampler or (lambda: 0.0)

    def handle(self, payload: Any) -> ServiceResponse:
        delay = self.sample_delay()
        try:
            _validate_request(payload)
            r = clip01(float(self.provider.risk(payload)))
        except BadRequest as exc:
            return ServiceResponse(HTTPStatus.BAD_REQUEST, json.dumps({"error": str(exc)}), delay)
        except ProviderError as exc:
            return ServiceResponse(HTTPStatus.SERVICE_UNAVAILABLE, json.dumps({"error": str(exc)}), delay)
        return ServiceResponse(HTTPStatus.OK, format_risk_body(r), delay)


def _validate_request(payload: Any) -> None:
    if not isinstance(payload, dict):
        raise BadRequest("request body must be a JSON object")
    if not isinstance(payload.get("context"), str):
        raise BadRequest("context must be a string")
    rid = payload.get("request_id")
    if not isinstance(rid, int) or isinstance(rid, bool):
        raise BadRequest("request_id must be an integer")
    img = payload.get("image_png_base64")
    scene = payload.get("scene")
    if img is None and scene is None:
        raise BadRequest("one of image_png_base64 or scene is required")
    if img is not None and not isinstance(img, str):
        raise BadRequest("image_png_base64 must be a string")
    if scene is not None and not isinstance(scene, dict):
        raise BadRequest("scene must be an object")


class _Handler(BaseHTTPRequestHandler):
    service: RiskService
    real_sleep = True

    def _reply(self, status: int, body: str) -> None:
        data = body.encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):
        if self.path.rstrip("/") != "/risk":
            self._reply(HTTPStatus.NOT_FOUND, json.dumps({"error": "not found"}))
            return
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length)
        try:
            payload = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError):
            payload = None
        resp = self.service.handle(payload)
        if self.real_sleep and resp.delay > 0:
            time.sleep(resp.delay)
        self._reply(resp.status, resp.body)

    def log_message(self, fmt, *args):
        log.debug("risk service: " + fmt, *args)


def make_server(service: RiskService, host: str = "127.0.0.1", port: int | None = None, real_sleep: bool = True):
    """Bind (but do not start) the HTTP endpoint; ``port=0`` picks a free one."""
    if port is None:
        port = int(os.environ.get(PORT_ENV, DEFAULT_PORT))
    handler = type("RiskHandler", (_Handler,), {"service": service, "real_sleep": real_sleep})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server
