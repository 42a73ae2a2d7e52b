"""Run an agent configuration over a dataset, score every scenario, aggregate.

Output layout (``RunConfig.out_dir``)::

    config.json            the run configuration, verbatim
    transcripts/<id>.jsonl one transcript per scenario
    results.jsonl          one ResultRecord per scenario, dataset order
    report.json            AggregateReport
    report.csv             the same counts, one row per group
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..agents.backends import make_backend, make_role_backends
from ..agents.runtime import AgentConfig, MultiAgentConfig, run_multi_agent, run_single_agent
from ..agents.transcript import Transcript, replay
from ..conflict import SeparationStandard, classify_outcome
from ..errors import ConfigInvalid, EmptyResults, IncompleteSimulation
from ..scenarios import Scenario, load_dataset
from .ratelimit import TokenRateLimiter

log = logging.getLogger(__name__)

REPORT_VERSION = 1
SCORE_NAMES = {-1: "collision", 0: "los", 1: "resolved"}


@dataclass
class RunConfig:
    mode: str = "single"
    experience: bool = False
    backend: str = "scripted:noop"
    temperature: float = 0.3
    dataset: str | None = None
    parallelism: int = 1
    tokens_per_minute: int | None = None
    std: SeparationStandard = field(default_factory=SeparationStandard)
    out_dir: str | None = None
    max_iterations: int = 20
    replan_limit: int = 3
    library: str | None = None
    timeout_s: float = 600.0

    def __post_init__(self):
        if isinstance(self.std, dict):
            self.std = SeparationStandard(**self.std)
        if self.mode not in ("single", "multi"):
            raise ConfigInvalid(f"mode must be 'single' or 'multi', got {self.mode!r}")
        if self.parallelism < 1:
            raise ConfigInvalid("parallelism must be at least 1")
        if self.tokens_per_minute is not None and self.tokens_per_minute <= 0:
            raise ConfigInvalid("tokens_per_minute must be positive")
        if self.timeout_s <= 0:
            raise ConfigInvalid("timeout_s must be positive")
        # fails early on nonsense values
        self.agent_configs()

    def agent_configs(self):
        kw = dict(
            backend=self.backend,
            temperature=self.temperature,
            max_iterations=self.max_iterations,
            experience_enabled=self.experience,
            tokens_per_minute=self.tokens_per_minute,
        )
        if self.mode == "single":
            return AgentConfig(role="single", **kw)
        cfg = MultiAgentConfig.uniform(replan_limit=self.replan_limit, **kw)
        cfg.executor.experience_enabled = False
        return cfg

    @property
    def label(self) -> str:
        arm = "Single Agent" if self.mode == "single" else "Multiple Agent"
        return arm + (" + Exp" if self.experience else "")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["std"] = self.std.to_dict()
        return d


@dataclass
class ResultRecord:
    scenario_id: str
    conflict_type: str
    n_aircraft: int
    score: int
    commands: int = 0
    iterations: int = 0
    tokens: int = 0
    transcript: str | None = None
    status: str = "ok"
    flags: dict = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRecord":
        return cls(**d)


def _counts(records: list[ResultRecord]) -> dict:
    c = {name: sum(r.score == s for r in records) for s, name in SCORE_NAMES.items()}
    c["total"] = len(records)
    c["failed"] = sum(r.status != "ok" for r in records)
    c["success_rate"] = c["resolved"] / c["total"] if records else 0.0
    return c


@dataclass
class AggregateReport:
    label: str
    overall: dict
    by_aircraft: dict
    by_type: dict
    tokens: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"version": REPORT_VERSION, **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "total", "collision", "los", "resolved", "failed", "success_rate"])
        rows = [("overall", self.overall)]
        rows += [(f"aircraft={k}", v) for k, v in self.by_aircraft.items()]
        rows += [(f"type={k}", v) for k, v in self.by_type.items()]
        for name, c in rows:
            w.writerow([name, c["total"], c["collision"], c["los"], c["resolved"], c["failed"], f"{c['success_rate']:.4f}"])
        return buf.getvalue()

    def table_row(self) -> str:
        o = self.overall
        return f"{self.label}: Collision {o['collision']}, LoS {o['los']}, Resolved {o['resolved']}"


def aggregate(results: list[ResultRecord], config: RunConfig | dict | None = None) -> AggregateReport:
    """Collision / LoS / Resolved counts overall, by aircraft count and by conflict type."""
    if not results:
        raise EmptyResults("no results to aggregate")
    cfg = config.to_dict() if isinstance(config, RunConfig) else dict(config or {})
    cfg.pop("out_dir", None)  # where results went is not part of what was measured
    try:
        label = RunConfig(**cfg).label if cfg else "results"
    except (TypeError, ConfigInvalid, ValueError):
        label = "results"
    by_n = {str(n): _counts([r for r in results if r.n_aircraft == n]) for n in sorted({r.n_aircraft for r in results})}
    by_t = {t: _counts([r for r in results if r.conflict_type == t]) for t in sorted({r.conflict_type for r in results})}
    return AggregateReport(label, _counts(results), by_n, by_t, sum(r.tokens for r in results), cfg)


def score_scenario(transcript: Transcript, std: SeparationStandard | None = None) -> int:
    """Score a finished transcript by re-simulating it to its evaluation horizon."""
    if transcript.horizon_s is None:
        raise IncompleteSimulation(f"transcript {transcript.scenario_id} never reached its evaluation horizon")
    return replay(transcript, std, check=False).score


def _fallback_score(scn: Scenario, std: SeparationStandard) -> int:
    world = scn.build_world()
    world.run_until(scn.evaluation_horizon_s)
    return classify_outcome(world.sep_log, std)


class _Runner:
    def __init__(self, config: RunConfig, library, limiter, backend_factory):
        self.config = config
        self.library = library
        self.limiter = limiter
        self.factory = backend_factory

    def __call__(self, scn: Scenario) -> tuple[ResultRecord, Transcript | None]:
        cfg = self.config
        deadline = time.monotonic() + cfg.timeout_s
        try:
            if cfg.mode == "single":
                backend = self.factory(cfg.backend) if self.factory else make_backend(cfg.backend)
                tr = run_single_agent(scn, cfg.agent_configs(), backend, self.library, cfg.std, self.limiter, deadline=deadline)
            else:
                backends = self.factory(cfg.backend) if self.factory else make_role_backends(cfg.backend)
                tr = run_multi_agent(scn, cfg.agent_configs(), backends, self.library, cfg.std, self.limiter, deadline=deadline)
        except Exception as exc:  # crash isolation: one scenario never sinks the batch
            log.exception("scenario %s crashed", scn.id)
            rec = ResultRecord(scn.id, scn.conflict_type, scn.n_aircraft, _fallback_score(scn, cfg.std),
                               status="failed", error=f"{type(exc).__name__}: {exc}")
            return rec, None
        rec = ResultRecord(
            scn.id,
            scn.conflict_type,
            scn.n_aircraft,
            tr.score,
            commands=len(tr.commands()),
            iterations=len(tr.of_kind("backend")),
            tokens=tr.usage["total_tokens"],
            status="failed" if tr.flags.get("failure") else "ok",
            flags=dict(tr.flags),
            error=tr.flags.get("failure"),
        )
        return rec, tr


def run_batch(
    config: RunConfig,
    dataset: list[Scenario] | None = None,
    library=None,
    limiter: TokenRateLimiter | None = None,
    backend_factory=None,
) -> tuple[AggregateReport, list[ResultRecord]]:
    """Run every scenario once, in parallel, and aggregate.

    ``backend_factory(backend_id)`` overrides backend construction; in multi
    mode it must return a ``{role: backend}`` mapping. Results come back in
    dataset order regardless of completion order.
    """
    if dataset is None:
        if not config.dataset:
            raise ConfigInvalid("no dataset given")
        dataset = load_dataset(config.dataset)
    if config.experience and library is None:
        raise ConfigInvalid("experience is enabled but no library was supplied")
    if limiter is None and config.tokens_per_minute:
        limiter = TokenRateLimiter(config.tokens_per_minute)
    runner = _Runner(config, library, limiter, backend_factory)
    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        outcomes = list(pool.map(runner, dataset))

    out = Path(config.out_dir) if config.out_dir else None
    results = []
    for rec, tr in outcomes:
        if out is not None and tr is not None:
            rec.transcript = str(Path("transcripts") / f"{rec.scenario_id}.jsonl")
            tr.save(out / rec.transcript)
        results.append(rec)
    report = aggregate(results, config)
    if out is not None:
        write_outputs(out, config, results, report)
    return report, results


def write_outputs(out: Path, config: RunConfig, results: list[ResultRecord], report: AggregateReport) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "results.jsonl").write_text("".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in results))
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())


def load_results(path) -> tuple[list[ResultRecord], dict | None]:
    """Results from a run directory or a results.jsonl file, plus the run config when present."""
    p = Path(path)
    run_dir = p if p.is_dir() else p.parent
    file = p / "results.jsonl" if p.is_dir() else p
    records = [ResultRecord.from_dict(json.loads(ln)) for ln in file.read_text().splitlines() if ln.strip()]
    cfg_file = run_dir / "config.json"
    cfg = json.loads(cfg_file.read_text()) if cfg_file.exists() else None
    return records, cfg
