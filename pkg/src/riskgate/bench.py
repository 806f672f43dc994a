"""Batch runs: scenario x variant x seed grids, summary tables and the fixed-alpha sweep."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .alpha import AlphaPolicyConfig
from .risk_service import MEAN_ROUND_TRIP_S, LatencySpec, RiskProviderSpec
from .simulator import EpisodeResult, Outcome, PolicyVariant, run_episode
from .world import ConfigError, RobotState, ScenarioSpec, resolve_scenario

SUMMARY_HEADER = [
    "scenario",
    "variant",
    "seeds",
    "success_rate",
    "mean_time_to_goal",
    "mean_min_margin",
    "mean_path_length",
    "collisions",
    "timeouts",
]
SWEEP_HEADER = [
    "alpha",
    "seeds",
    "success_rate",
    "mean_time_to_goal",
    "mean_min_margin",
    "mean_path_length",
    "collisions",
    "timeouts",
    "collided",
]
MISSING = "--"
DEFAULT_SWEEP_ALPHAS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)


def _fmt(x: Optional[float], digits: int = 3) -> str:
    return MISSING if x is None or not math.isfinite(x) else f"{x:.{digits}f}"


def _mean(xs: Sequence[float]) -> Optional[float]:
    return math.fsum(xs) / len(xs) if xs else None


@dataclass
class RunManifest:
    scenarios: list[ScenarioSpec]
    variants: list[PolicyVariant]
    seeds: list[int]
    alpha_cfg: AlphaPolicyConfig = field(default_factory=AlphaPolicyConfig)
    provider: RiskProviderSpec = field(default_factory=RiskProviderSpec)
    latency: LatencySpec = field(default_factory=lambda: LatencySpec.lognormal_with_mean(MEAN_ROUND_TRIP_S))
    output_dir: Optional[str] = None

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("manifest needs at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("manifest seeds must be distinct")
        if not self.scenarios or not self.variants:
            raise ConfigError("manifest needs scenarios and variants")
        self.alpha_cfg.validate()

    @classmethod
    def from_json(cls, obj: dict, base_dir: Union[str, Path, None] = None) -> "RunManifest":
        """Scenarios may be built-in names, JSON paths (relative to ``base_dir``) or inline objects."""
        known = {"scenarios", "variants", "seeds", "alpha_cfg", "provider", "latency", "output_dir"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown manifest keys: {sorted(unknown)}")
        scenarios = []
        for ref in obj.get("scenarios", []):
            if isinstance(ref, dict):
                scenarios.append(ScenarioSpec.from_json(ref))
            elif base_dir is not None and str(ref).endswith(".json") and not Path(ref).is_absolute():
                scenarios.append(resolve_scenario(str(Path(base_dir) / ref)))
            else:
                scenarios.append(resolve_scenario(str(ref)))
        kwargs = dict(
            scenarios=scenarios,
            variants=[PolicyVariant.parse(v) for v in obj.get("variants", [])],
            seeds=[int(s) for s in obj.get("seeds", [])],
            output_dir=obj.get("output_dir"),
        )
        if "alpha_cfg" in obj:
            kwargs["alpha_cfg"] = AlphaPolicyConfig.from_json(obj["alpha_cfg"])
        if "provider" in obj:
            p = obj["provider"]
            kwargs["provider"] = RiskProviderSpec.parse(p) if isinstance(p, str) else RiskProviderSpec.from_json(p)
        if "latency" in obj:
            lat = obj["latency"]
            kwargs["latency"] = LatencySpec.parse(lat) if isinstance(lat, str) else LatencySpec.from_json(lat)
        return cls(**kwargs)

    def to_json(self) -> dict:
        return {
            "scenarios": [s.to_json() for s in self.scenarios],
            "variants": [v.name for v in self.variants],
            "seeds": list(self.seeds),
            "alpha_cfg": self.alpha_cfg.to_json(),
            "provider": self.provider.to_json(),
            "latency": self.latency.to_json(),
            "output_dir": self.output_dir,
        }

    @property
    def episode_count(self) -> int:
        return len(self.scenarios) * len(self.variants) * len(self.seeds)


def load_manifest(path: Union[str, Path]) -> RunManifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    return RunManifest.from_json(obj, base_dir=path.parent)


def default_manifest() -> RunManifest:
    """The shipped 4 scenarios x 4 variants x 25 seeds grid."""
    text = (resources.files("riskgate") / "data" / "default_manifest.json").read_text()
    return RunManifest.from_json(json.loads(text))


@dataclass(frozen=True)
class SummaryRow:
    scenario: str
    variant: str
    seeds: int
    success_rate: float
    mean_time_to_goal: Optional[float]
    mean_min_margin: Optional[float]
    mean_path_length: Optional[float]
    collisions: int
    timeouts: int

    def cells(self) -> list[str]:
        return [
            self.scenario,
            self.variant,
            str(self.seeds),
            f"{self.success_rate:.2f}",
            _fmt(self.mean_time_to_goal),
            _fmt(self.mean_min_margin),
            _fmt(self.mean_path_length),
            str(self.collisions),
            str(self.timeouts),
        ]


def summarize(results: Sequence[EpisodeResult]) -> SummaryRow:
    """Aggregate one (scenario, variant) cell.

    Time and path means are taken over successful runs only; the margin mean
    covers every run, since a collision's margin is itself informative.
    """
    if not results:
        raise ValueError("no results to summarize")
    ok = [r for r in results if r.outcome is Outcome.GOAL_REACHED]
    margins = [r.min_margin for r in results if math.isfinite(r.min_margin)]
    return SummaryRow(
        scenario=results[0].scenario,
        variant=results[0].variant,
        seeds=len(results),
        success_rate=len(ok) / len(results),
        mean_time_to_goal=_mean([r.time_to_goal for r in ok]),
        mean_min_margin=_mean(margins),
        mean_path_length=_mean([r.path_length for r in ok]),
        collisions=sum(r.outcome is Outcome.COLLISION for r in results),
        timeouts=sum(r.outcome is Outcome.TIMEOUT for r in results),
    )


def summary_csv(rows: Iterable[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for row in rows:
        w.writerow(row.cells())
    return buf.getvalue()


def render_table(rows: Sequence[SummaryRow]) -> str:
    """Fixed-width text table for terminals and logs."""
    labels = ["scenario", "variant", "success", "time (s)", "min margin (m)", "path (m)", "coll", "tout"]
    body = [
        [r.scenario, r.variant, f"{round(r.success_rate * r.seeds)}/{r.seeds}"]
        + [_fmt(r.mean_time_to_goal), _fmt(r.mean_min_margin), _fmt(r.mean_path_length)]
        + [str(r.collisions), str(r.timeouts)]
        for r in rows
    ]
    widths = [max(len(x) for x in col) for col in zip(labels, *body)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(labels, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in body)
    return "\n".join(lines) + "\n"


def episode_filename(result: EpisodeResult) -> str:
    return f"{result.scenario}__{result.variant.replace(':', '-')}__seed{result.seed}.json"


@dataclass
class _Job:
    scenario: ScenarioSpec
    variant: PolicyVariant
    seed: int
    alpha_cfg: AlphaPolicyConfig
    provider: RiskProviderSpec
    latency: LatencySpec


def _run_job(job: _Job) -> EpisodeResult:
    try:
        return run_episode(job.scenario, job.variant, job.alpha_cfg, job.provider, job.latency, job.seed)
    except Exception as exc:  # a broken cell is recorded, the batch carries on
        return _failed_result(job, exc)


def _failed_result(job: _Job, exc: Exception) -> EpisodeResult:
    return EpisodeResult(
        scenario=job.scenario.name,
        variant=job.variant.name,
        seed=job.seed,
        outcome=Outcome.TIMEOUT,
        time_to_goal=None,
        min_margin=math.nan,
        path_length=0.0,
        steps=0,
        trace=[],
        latency_stats=(math.nan, math.nan, 0),
        final_state=RobotState(job.scenario.start, job.scenario.start_heading, 0.0, 0.0, 0.0),
        requests={"error": f"{type(exc).__name__}: {exc}"},
    )


def run_grid(manifest: RunManifest, jobs: int = 1) -> list[EpisodeResult]:
    """Run every episode of the manifest, in manifest order.

    Each episode seeds its own generators, so ``jobs`` only affects wall time.
    """
    work = [
        _Job(sc, var, seed, manifest.alpha_cfg, manifest.provider, manifest.latency)
        for sc in manifest.scenarios
        for var in manifest.variants
        for seed in manifest.seeds
    ]
    if jobs <= 1:
        return [_run_job(j) for j in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_job, work, chunksize=4))


def group_rows(results: Sequence[EpisodeResult]) -> list[SummaryRow]:
    cells: dict[tuple[str, str], list[EpisodeResult]] = {}
    for r in results:
        cells.setdefault((r.scenario, r.variant), []).append(r)
    return [summarize(group) for group in cells.values()]


@dataclass
class BenchOutput:
    results: list[EpisodeResult]
    rows: list[SummaryRow]

    @property
    def csv(self) -> str:
        return summary_csv(self.rows)

    @property
    def table(self) -> str:
        return render_table(self.rows)


def run_bench(manifest: RunManifest, out_dir: Union[str, Path, None] = None, jobs: int = 1) -> BenchOutput:
    """Run the grid; when ``out_dir`` is given, write ``summary.csv``,
    ``summary.txt`` and one JSON per episode under ``episodes/``."""
    results = run_grid(manifest, jobs)
    out = BenchOutput(results, group_rows(results))
    out_dir = out_dir if out_dir is not None else manifest.output_dir
    if out_dir is not None:
        write_bench(out, Path(out_dir))
    return out


def write_bench(out: BenchOutput, out_dir: Path) -> None:
    ep_dir = out_dir / "episodes"
    ep_dir.mkdir(parents=True, exist_ok=True)
    for r in out.results:
        r.write_summary(ep_dir / episode_filename(r))
    (out_dir / "summary.csv").write_text(out.csv)
    (out_dir / "summary.txt").write_text(out.table)


# -- fixed-alpha sweep ---------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    summary: SummaryRow
    results: tuple[EpisodeResult, ...]

    @property
    def collided(self) -> bool:
        return self.summary.collisions > 0

    def cells(self) -> list[str]:
        s = self.summary
        return [f"{self.alpha:g}", *s.cells()[2:], "1" if self.collided else "0"]


def run_sweep(
    scenario: ScenarioSpec,
    alphas: Sequence[float] = DEFAULT_SWEEP_ALPHAS,
    seeds: Sequence[int] = (1,),
    alpha_cfg: AlphaPolicyConfig | None = None,
    jobs: int = 1,
) -> list[SweepRow]:
    if not alphas:
        raise ConfigError("sweep needs at least one alpha")
    variants = [PolicyVariant("fixed", float(a)) for a in alphas]
    manifest = RunManifest([scenario], variants, list(seeds), alpha_cfg or AlphaPolicyConfig())
    results = run_grid(manifest, jobs)
    n = len(seeds)
    rows = []
    for i, a in enumerate(alphas):
        chunk = tuple(results[i * n : (i + 1) * n])
        rows.append(SweepRow(float(a), summarize(chunk), chunk))
    return rows


def sweep_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for row in rows:
        w.writerow(row.cells())
    return buf.getvalue()


__all__ = [
    "BenchOutput",
    "DEFAULT_SWEEP_ALPHAS",
    "MISSING",
    "RunManifest",
    "SUMMARY_HEADER",
    "SWEEP_HEADER",
    "SummaryRow",
    "SweepRow",
    "default_manifest",
    "episode_filename",
    "group_rows",
    "load_manifest",
    "render_table",
    "run_bench",
    "run_grid",
    "run_sweep",
    "summarize",
    "summary_csv",
    "sweep_csv",
    "write_bench",
]
