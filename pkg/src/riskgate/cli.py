"""Command-line front end: ``riskgate run|bench|sweep|serve``."""

from __future__ import annotations

import argparse
import errno
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from .alpha import AlphaPolicyConfig
from .bench import DEFAULT_SWEEP_ALPHAS, default_manifest, load_manifest, run_bench, run_sweep, sweep_csv
from .risk_service import MEAN_ROUND_TRIP_S, LatencySpec, RiskProviderSpec, RiskService, make_server
from .simulator import Outcome, PolicyVariant, run_episode
from .world import ConfigError, ScenarioSpec, resolve_scenario

log = logging.getLogger("riskgate")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_COLLISION = 2
EXIT_TIMEOUT = 3
OUTCOME_EXIT = {Outcome.GOAL_REACHED: EXIT_OK, Outcome.COLLISION: EXIT_COLLISION, Outcome.TIMEOUT: EXIT_TIMEOUT}
DEFAULT_LATENCY = f"lognormal:{MEAN_ROUND_TRIP_S}"


def parse_seeds(text: str) -> list[int]:
    """``7``, ``1,2,5`` or an inclusive range ``1..25``."""
    out: list[int] = []
    try:
        for part in text.split(","):
            lo, sep, hi = part.partition("..")
            out.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
    except ValueError as exc:
        raise ConfigError(f"bad seed list {text!r}") from exc
    if not out:
        raise ConfigError("empty seed list")
    return out


def parse_alphas(text: str) -> list[float]:
    try:
        alphas = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad alpha list {text!r}") from exc
    if not alphas or any(not a > 0 for a in alphas):
        raise ConfigError("alphas must be a non-empty list of positive numbers")
    return alphas


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(obj) - {"scenario", "alpha_cfg", "provider", "latency"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return obj


def _scenario(ref: Optional[str], cfg: dict) -> ScenarioSpec:
    if ref is not None:
        return resolve_scenario(ref)
    if "scenario" in cfg:
        s = cfg["scenario"]
        return ScenarioSpec.from_json(s) if isinstance(s, dict) else resolve_scenario(str(s))
    raise ConfigError("no scenario given")


def _alpha_cfg(cfg: dict) -> AlphaPolicyConfig:
    return AlphaPolicyConfig.from_json(cfg["alpha_cfg"]) if "alpha_cfg" in cfg else AlphaPolicyConfig()


def _provider(flag: Optional[str], cfg: dict) -> RiskProviderSpec:
    if flag is not None:
        return RiskProviderSpec.parse(flag)
    p = cfg.get("provider", "oracle")
    return RiskProviderSpec.parse(p) if isinstance(p, str) else RiskProviderSpec.from_json(p)


def _latency(flag: Optional[str], cfg: dict) -> LatencySpec:
    if flag is not None:
        return LatencySpec.parse(flag)
    lat = cfg.get("latency", DEFAULT_LATENCY)
    return LatencySpec.parse(lat) if isinstance(lat, str) else LatencySpec.from_json(lat)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    scenario = _scenario(args.scenario_pos or args.scenario, cfg)
    variant = PolicyVariant.parse(args.variant)
    result = run_episode(
        scenario, variant, _alpha_cfg(cfg), _provider(args.provider, cfg), _latency(args.latency, cfg), args.seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{scenario.name}__{variant.name.replace(':', '-')}__seed{args.seed}"
    result.write_trace(out / f"{stem}.trace.csv")
    result.write_summary(out / f"{stem}.json")
    ttg = f"{result.time_to_goal:.3f}s" if result.time_to_goal is not None else "--"
    print(
        f"{scenario.name} {variant.name} seed={args.seed}: {result.outcome.value} "
        f"time={ttg} min_margin={result.min_margin:.3f} path={result.path_length:.3f} steps={result.steps}"
    )
    return OUTCOME_EXIT[result.outcome]


def cmd_bench(args) -> int:
    manifest = load_manifest(args.manifest) if args.manifest else default_manifest()
    if args.seeds:
        manifest.seeds = parse_seeds(args.seeds)
    out_dir = args.out or manifest.output_dir or "bench_out"
    t0 = time.perf_counter()
    result = run_bench(manifest, out_dir, jobs=args.jobs)
    print(result.table, end="")
    print(f"{len(result.results)} episodes in {time.perf_counter() - t0:.1f}s; artifacts in {out_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    scenario = _scenario(args.scenario, cfg) if (args.scenario or "scenario" in cfg) else resolve_scenario("cluttered")
    alphas = parse_alphas(args.alphas) if args.alphas else list(DEFAULT_SWEEP_ALPHAS)
    rows = run_sweep(scenario, alphas, parse_seeds(args.seeds), _alpha_cfg(cfg), jobs=args.jobs)
    text = sweep_csv(rows)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_serve(args) -> int:
    cfg = load_config(args.config)
    provider = _provider(args.provider, cfg)
    latency = _latency(args.latency, cfg) if (args.latency or "latency" in cfg) else LatencySpec()
    service = RiskService(provider.build(_alpha_cfg(cfg), args.seed), latency.sampler(args.seed))
    try:
        server = make_server(service, args.host, args.port)
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            print(f"error: PORT_IN_USE: {args.host}:{args.port}", file=sys.stderr)
            return EXIT_CONFIG
        raise
    host, port = server.server_address[:2]
    print(f"risk service on http://{host}:{port}/risk (provider={provider.kind}, latency={latency.kind})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riskgate", description="Risk-adaptive CBF safety filter: episodes, benchmarks, sweeps.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one episode and write its trace and summary")
    p.add_argument("scenario_pos", nargs="?", metavar="SCENARIO", help="built-in name or scenario JSON path")
    p.add_argument("--scenario")
    p.add_argument("--variant", default="adaptive", help="adaptive | nocap | fixed:<alpha>")
    p.add_argument("--provider", help="oracle | scripted:<path> | noisy:<p>:<v>[:<sigma>[:<seed>]] | passthrough:<url>")
    p.add_argument("--latency", help=f"zero | fixed:<s> | uniform:<lo>:<hi> | lognormal:<mean>[:<sigma>] (default {DEFAULT_LATENCY})")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="riskgate_out")
    p.add_argument("--config", help="JSON with any of: scenario, alpha_cfg, provider, latency")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="run a scenario x variant x seed manifest")
    p.add_argument("--manifest", "--config", dest="manifest", help="manifest JSON (default: shipped 400-episode grid)")
    p.add_argument("--seeds", help="override seeds, e.g. 1..5")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="fixed-alpha sweep on one scenario")
    p.add_argument("--scenario", help="default: cluttered")
    p.add_argument("--alphas", help="comma list (default 0.1..0.6 step 0.1)")
    p.add_argument("--seeds", default="1..25")
    p.add_argument("--out", help="CSV path (always echoed to stdout)")
    p.add_argument("--config")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="serve the stub risk endpoint over HTTP")
    p.add_argument("--provider")
    p.add_argument("--latency", help="default zero")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, help="default $RISKGATE_PORT or 8077")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(func=cmd_serve)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
