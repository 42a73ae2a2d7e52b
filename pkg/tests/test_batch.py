import json

import pytest

from atc_arena.agents.backends import ScriptedBackend, make_backend
from atc_arena.errors import ConfigInvalid, EmptyResults, IncompleteSimulation
from atc_arena.harness.batch import ResultRecord, RunConfig, aggregate, load_results, run_batch, score_scenario
from atc_arena.harness.ratelimit import TokenRateLimiter


def test_aggregate_counts():
    recs = [ResultRecord(f"s{i}", "HeadOn", 2 + i % 3, -1) for i in range(4)]
    recs += [ResultRecord(f"r{i}", "Parallel", 2 + i % 3, 1) for i in range(116)]
    rep = aggregate(recs, RunConfig())
    assert (rep.overall["collision"], rep.overall["los"], rep.overall["resolved"]) == (4, 0, 116)
    assert rep.label == "Single Agent"
    assert rep.table_row() == "Single Agent: Collision 4, LoS 0, Resolved 116"
    assert sum(c["total"] for c in rep.by_aircraft.values()) == 120
    assert rep.by_type["HeadOn"]["collision"] == 4
    assert rep.to_csv().splitlines()[0].startswith("group,total")
    with pytest.raises(EmptyResults):
        aggregate([])


def test_labels():
    assert RunConfig(mode="multi", experience=True).label == "Multiple Agent + Exp"
    with pytest.raises(ConfigInvalid):
        RunConfig(mode="swarm")
    with pytest.raises(ConfigInvalid):
        RunConfig(parallelism=0)


def test_layering_batch_outputs(tmp_path, dataset):
    subset = dataset[::10]
    cfg = RunConfig(backend="scripted:layering", parallelism=4, out_dir=str(tmp_path / "a"))
    report, results = run_batch(cfg, subset)
    assert [r.scenario_id for r in results] == [s.id for s in subset]
    assert report.overall["resolved"] == len(subset)
    for name in ("config.json", "results.jsonl", "report.json", "report.csv"):
        assert (tmp_path / "a" / name).exists()
    loaded, cfg_dict = load_results(tmp_path / "a")
    assert [r.to_dict() for r in loaded] == [r.to_dict() for r in results]
    assert aggregate(loaded, cfg_dict).to_json() == report.to_json()


def test_batch_idempotent(tmp_path, dataset):
    subset = dataset[:12]
    for name, par in (("a", 4), ("b", 4), ("c", 1)):
        run_batch(RunConfig(backend="scripted:layering", parallelism=par, out_dir=str(tmp_path / name)), subset)
    a, b, c = (tmp_path / n for n in "abc")
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    for other in (b, c):
        assert (a / "results.jsonl").read_bytes() == (other / "results.jsonl").read_bytes()
        for f in (a / "transcripts").iterdir():
            assert f.read_bytes() == (other / "transcripts" / f.name).read_bytes()


def test_crash_isolated(dataset):
    subset = dataset[:4]
    boom = subset[1].id

    class Exploding:
        identity = "boom"

        def complete(self, messages, tools, temperature):
            raise RuntimeError("unexpected")

    def factory(spec):
        factory.n += 1
        return Exploding() if factory.n == 2 else make_backend("scripted:layering")

    factory.n = 0
    report, results = run_batch(RunConfig(backend="scripted:layering"), subset, backend_factory=factory)
    failed = [r for r in results if r.status == "failed"]
    assert [r.scenario_id for r in failed] == [boom]
    assert failed[0].score == -1 and "RuntimeError" in failed[0].error
    assert report.overall["resolved"] == 3 and report.overall["failed"] == 1


def test_ledger_matches_usage(dataset):
    lim = TokenRateLimiter(10_000_000)
    _, results = run_batch(RunConfig(backend="scripted:layering", parallelism=3), dataset[:9], limiter=lim)
    assert lim.ledger_total == sum(r.tokens for r in results) > 0


def test_score_scenario_requires_horizon(dataset):
    from atc_arena.agents.runtime import AgentConfig, run_single_agent

    tr = run_single_agent(dataset[0], AgentConfig(), make_backend("scripted:layering"))
    assert score_scenario(tr) == tr.score == 1
    tr.events = [e for e in tr.events if e["kind"] != "horizon"]
    with pytest.raises(IncompleteSimulation):
        score_scenario(tr)


def test_experience_needs_library(dataset):
    with pytest.raises(ConfigInvalid):
        run_batch(RunConfig(experience=True), dataset[:1])


def test_multi_mode(dataset):
    report, _ = run_batch(RunConfig(mode="multi", backend="scripted:layering"), dataset[::12])
    assert report.overall["resolved"] == 10
