"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import time
from collections import Counter
from itertools import combinations

import numpy as np
import pytest

from atc_arena.agents.backends import ScriptedBackend, noop_backend
from atc_arena.agents.runtime import AgentConfig, MultiAgentConfig, run_multi_agent, run_single_agent
from atc_arena.agents.transcript import replay
from atc_arena.conflict import SeparationStandard, cpa, detect_conflicts, tlos
from atc_arena.experience.documents import build_experience_document, categorize_commands, leaked_callsigns
from atc_arena.experience.embedding import HashingEmbedder
from atc_arena.experience.hnsw import HNSWIndex
from atc_arena.experience.library import FORMATIONS, ExperienceDocument, ExperienceLibrary
from atc_arena.harness.batch import RunConfig, run_batch
from atc_arena.harness.cli import main as cli
from atc_arena.reference_cases import (
    converging_trio,
    descending_trio_world,
    four_way_crossing,
    same_level_plan_backends,
    trio_backend,
)
from atc_arena.scenarios import Scenario, load_dataset
from atc_arena.sim import AircraftState
from atc_arena.tools import CONTINUE_MONITORING, GET_ALL_AIRCRAFT_INFO, GET_CONFLICT_INFO, SEND_COMMAND, ToolBox

from .conftest import ACCEPTANCE

STD = SeparationStandard()
TRIO_STAGES = [GET_ALL_AIRCRAFT_INFO, GET_CONFLICT_INFO, SEND_COMMAND, CONTINUE_MONITORING, SEND_COMMAND, CONTINUE_MONITORING]


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


# -- 1 ---------------------------------------------------------------------------


def _simulate_pair(a, b, horizon, dt=0.1):
    """Euler-step both aircraft along their current velocity; vertical motion stops at the target."""
    steps = int(round(horizon / dt))
    ts = np.arange(steps + 1) * dt
    out = []
    for ac in (a, b):
        vx, vy = ac.velocity_nm_s
        x = ac.x_nm + np.concatenate([[0.0], np.cumsum(np.full(steps, vx * dt))])
        y = ac.y_nm + np.concatenate([[0.0], np.cumsum(np.full(steps, vy * dt))])
        z = np.empty(steps + 1)
        z[0] = ac.altitude_ft
        rate = ac.vertical_speed_fpm / 60.0 * dt
        tgt = ac.target_altitude_ft
        for i in range(steps):
            nz = z[i] + rate
            if rate and (tgt - z[i]) * rate > 0 and (tgt - nz) * rate <= 0:
                nz, rate = tgt, 0.0
            z[i + 1] = nz
        out.append((x, y, z))
    (xa, ya, za), (xb, yb, zb) = out
    return ts, np.hypot(xb - xa, yb - ya), np.abs(zb - za)


def _random_pair(rng):
    """Most pairs aim at a shared point so that many of them lose separation."""
    hdg = rng.uniform(0, 360, 2)
    spd = rng.uniform(250, 480, 2)
    vs = rng.choice([0.0, 0.0, 1500.0, -1500.0, 2500.0, -2500.0], 2)
    alts = rng.uniform(24000, 26000, 2)
    if rng.random() < 0.7:
        alts[1] = alts[0] + rng.uniform(-800, 800)
        t_meet = rng.uniform(60, 280)
        meet = rng.uniform(-3, 3, 2)
        pos = [meet - s * t_meet / 3600 * np.array([np.sin(np.radians(h)), np.cos(np.radians(h))]) for h, s in zip(hdg, spd)]
    else:
        pos = [rng.uniform(-40, 40, 2) for _ in range(2)]
    tgts = [a + np.sign(v) * rng.uniform(1000, 8000) if v else a for a, v in zip(alts, vs)]
    return tuple(
        AircraftState(cs, float(p[0]), float(p[1]), float(z), float(h), float(s), float(v), target_altitude_ft=float(t))
        for cs, p, z, h, s, v, t in zip(("AA001", "BB002"), pos, alts, hdg, spd, vs, tgts)
    )


def test_criterion_1_cpa_oracle():
    rng = np.random.default_rng(2024)
    start = time.monotonic()
    worst = {"tcpa": 0.0, "dcpa": 0.0, "tlos": 0.0}
    bad = violating = 0
    for _ in range(1000):
        a, b = _random_pair(rng)
        t_an, d_an = cpa(a, b)
        while t_an > 3000.0:
            a, b = _random_pair(rng)
            t_an, d_an = cpa(a, b)
        l_an = tlos(a, b, STD)
        horizon = max(STD.lookahead_s, t_an + 1.0)
        ts, h, v = _simulate_pair(a, b, horizon)
        i = int(np.argmin(h))
        errs = {"dcpa": abs(h[i] - d_an), "tcpa": abs(ts[i] - t_an)}
        win = ts <= STD.lookahead_s
        hits = np.nonzero(win & (h < STD.horizontal_nm) & (v < STD.vertical_ft))[0]
        l_bf = float(ts[hits[0]]) if hits.size else None
        if l_bf is not None:
            violating += 1
        if (l_bf is None) != (l_an is None):
            # both must agree unless the violation lasts less than one sample step
            grazing = l_an is not None and l_an > STD.lookahead_s - 0.1
            lo, hi = (l_an, l_an + 0.1) if l_an is not None else (0, 0)
            short = l_an is not None and not np.any((ts >= lo) & (ts <= hi) & (h < STD.horizontal_nm) & (v < STD.vertical_ft))
            if not (grazing or short):
                bad += 1
        elif l_bf is not None:
            errs["tlos"] = abs(l_bf - l_an)
        for k, e in errs.items():
            worst[k] = max(worst[k], e)
    elapsed = time.monotonic() - start
    ok = bad == 0 and worst["tcpa"] <= 0.5 and worst["dcpa"] <= 0.05 and worst["tlos"] <= 0.5 and elapsed < 60 and violating >= 200
    record(
        1, ok,
        f"1000 pairs ({violating} losing separation), max error tcpa {worst['tcpa']:.3f} s, dcpa {worst['dcpa']:.4f} NM, "
        f"tlos {worst['tlos']:.3f} s, presence disagreements {bad}, {elapsed:.1f} s",
    )


# -- 2 ---------------------------------------------------------------------------


def _gen_and_noop(root):
    start = time.monotonic()
    assert cli(["gen", "--out", str(root / "ds"), "--seed", "0"]) == 0
    ds = load_dataset(root / "ds")
    report, results = run_batch(RunConfig(backend="scripted:noop", out_dir=str(root / "noop")), ds)
    return ds, report, time.monotonic() - start


def test_criterion_2_dataset_inevitability(tmp_path):
    ds, report, elapsed = _gen_and_noop(tmp_path)
    by_n = Counter(s.n_aircraft for s in ds)
    by_t = Counter(s.conflict_type for s in ds)
    ok = (
        len(ds) == 120 and set(by_n.values()) == {40} and set(by_t.values()) == {30}
        and report.overall["collision"] == 120 and elapsed < 120
    )
    record(2, ok, f"{len(ds)} scenarios, per count {dict(by_n)}, no-op collisions {report.overall['collision']}/120, {elapsed:.1f} s")


# -- 3 ---------------------------------------------------------------------------


def _trio():
    return run_single_agent(converging_trio(), AgentConfig(backend="scripted:trio"), trio_backend())


def test_criterion_3_trio_replay():
    tr = _trio()
    seq = tr.tool_sequence()
    cmds = [c["command"] for c in tr.commands()]
    rep = replay(tr)
    ok = tr.score == 1 and seq == TRIO_STAGES and cmds == ["HDG AB112 225", "ALT AB426 22000"] and rep.score == 1
    ok = ok and tr.summary != "" and len(tr.of_kind("backend")) == len(seq) + 1
    record(3, ok, f"score {tr.score}, stages {' > '.join(seq)}, replay score {rep.score}")


# -- 4 ---------------------------------------------------------------------------


def test_criterion_4_secondary_conflict():
    tr = run_multi_agent(four_way_crossing(), MultiAgentConfig.uniform("scripted:same-level"), same_level_plan_backends())
    executed = [c["command"] for c in tr.commands()]
    seen = tr.tool_events("verifier")[0]["payload"]
    offending = ["FLIGHT2", "FLIGHT4"]
    detected = offending in seen["conflicts"] and (offending in seen["added"] or offending in seen["persisting"])
    ok = (
        executed[:3] == ["ALT FLIGHT2 36200", "ALT FLIGHT3 32200", "ALT FLIGHT4 36200"]
        and detected and tr.flags.get("replans", 0) >= 1
    )
    record(4, ok, f"verifier saw FLIGHT2-FLIGHT4 after the flawed plan: {detected}; re-plans {tr.flags.get('replans')}; final score {tr.score}")


# -- 5 ---------------------------------------------------------------------------


def _independent_helpfulness(tr):
    """Rebuild the world, apply commands at their recorded times, compare conflict sets by direct detection."""
    scn = Scenario.from_dict(tr.scenario)
    obs_times = [e["clock_s"] for e in tr.tool_events() if e["name"] != SEND_COMMAND and "conflicts" in e.get("payload", {})]
    cmds = tr.commands()
    flags = []
    for i, c in enumerate(cmds):
        t_next = next((t for t in obs_times if t > c["clock_s"]), c["clock_s"] + 60.0)
        world = scn.build_world()
        before = None
        for j, other in enumerate(cmds):
            if other["clock_s"] > t_next:
                break
            world.run_until(other["clock_s"])
            if j == i:
                before = {p.pair for p in detect_conflicts(world, STD)}
            world.apply(other["command"])
        world.run_until(t_next)
        after = {p.pair for p in detect_conflicts(world, STD)}
        flags.append((c["command"], bool(before - after)))
    return flags


def test_criterion_5_experience_pipeline(layering_transcripts):
    fixtures = [_trio(), *layering_transcripts[:20]]
    agree = all(categorize_commands(tr) == _independent_helpfulness(tr) for tr in fixtures)
    trio_flags = categorize_commands(fixtures[0])
    leaks = 0
    docs = 0
    for tr in layering_transcripts[:100]:
        doc = build_experience_document(tr, created_at="fixed")
        callsigns = [a["callsign"] for a in tr.scenario["aircraft"]]
        leaks += len(leaked_callsigns(doc.text_fields() + [doc.render()], callsigns))
        docs += 1
    ok = agree and all(h for _, h in trio_flags) and docs == 100 and leaks == 0
    record(5, ok, f"helpfulness matches replay on {len(fixtures)} transcripts: {agree}; {docs} documents, {leaks} callsign leaks")


# -- 6 ---------------------------------------------------------------------------


def _vector_search(seed=6):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((1000, 256))
    data /= np.linalg.norm(data, axis=1, keepdims=True)
    queries = rng.standard_normal((100, 256))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)
    idx = HNSWIndex(256, seed=0)
    for i, v in enumerate(data):
        idx.add(f"v{i:04d}", v)
    approx = [idx.search(q, 1)[0] for q in queries]
    exact = [max(((f"v{i:04d}", float(data[i] @ q)) for i in range(1000)), key=lambda h: (h[1], -int(h[0][1:]))) for q in queries]

    lib = ExperienceLibrary(HashingEmbedder(256), 256)
    meta = [(2 + i % 3, FORMATIONS[(i // 3) % 4]) for i in range(1000)]
    for i, (v, (n, f)) in enumerate(zip(data, meta)):
        lib.upsert(ExperienceDocument(f"d{i:04d}", f"doc {i}", n, f, embedding=v))
    filtered = []
    for j, q in enumerate(queries):
        n, f = 2 + j % 3, FORMATIONS[j % 4]
        hits = lib.search_vector(q, n, f, k=5)
        filtered.append((n, f, [(d.id, d.num_aircraft, d.conflict_formation, s) for d, s in hits]))
    return approx, exact, filtered


def test_criterion_6_vector_search():
    approx, exact, filtered = _vector_search()
    recall = sum(a[0] == e[0] for a, e in zip(approx, exact))
    sound = sum(bool(hits) and all(hn == n and hf == f for _, hn, hf, _ in hits) for n, f, hits in filtered)
    ok = recall >= 99 and sound == 100
    record(6, ok, f"top-1 recall {recall}/100 against exhaustive cosine; filter soundness {sound}/100")


# -- 7 ---------------------------------------------------------------------------


def _layering_run(root, tag):
    if not (root / "ds" / "manifest.json").exists():
        assert cli(["gen", "--out", str(root / "ds"), "--seed", "0"]) == 0
    ds = load_dataset(root / "ds")
    return run_batch(RunConfig(backend="scripted:layering", parallelism=4, out_dir=str(root / tag)), ds)


def test_criterion_7_layering_smoke(tmp_path):
    start = time.monotonic()
    report, results = _layering_run(tmp_path, "layer")
    elapsed = time.monotonic() - start
    per = {n: c["resolved"] for n, c in report.by_aircraft.items()}
    shortfalls = [r for r in results if r.score != 1]
    ok = (
        per.get("2") == 40 and per.get("3", 0) >= 36 and per.get("4", 0) >= 36
        and all(r.score == 0 for r in shortfalls) and elapsed < 300
    )
    record(7, ok, f"resolved by aircraft count {per}; shortfalls {[(r.scenario_id, r.score) for r in shortfalls]}; {elapsed:.1f} s")


# -- 8 ---------------------------------------------------------------------------


def _tree(root, skip=("config.json",)):
    """File contents under ``root``; config.json is skipped since it records the output path itself."""
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file() and p.name not in skip}


def test_criterion_8_determinism(tmp_path):
    checks = {}
    runs = [tmp_path / "r1", tmp_path / "r2"]
    for r in runs:
        _gen_and_noop(r)
        _layering_run(r, "layer")
    checks["dataset"] = _tree(runs[0] / "ds") == _tree(runs[1] / "ds")
    checks["no-op reports and transcripts"] = _tree(runs[0] / "noop") == _tree(runs[1] / "noop")
    checks["layering reports and transcripts"] = _tree(runs[0] / "layer") == _tree(runs[1] / "layer")
    checks["trio transcript"] = _trio().to_lines() == _trio().to_lines()
    checks["vector search"] = _vector_search() == _vector_search()
    failed = [k for k, v in checks.items() if not v]
    record(8, not failed, "byte-identical: " + ", ".join(checks) + (f"; differing: {failed}" if failed else ""))


# -- 9 ---------------------------------------------------------------------------


def test_criterion_9_golden_rendering():
    from pathlib import Path

    golden = (Path(__file__).parent / "fixtures" / "get_conflict_info_descending_trio.txt").read_text()
    text = ToolBox(descending_trio_world()).get_conflict_info().text + "\n"
    shapes = "Number of aircraft in conflict: 3" in text and "FLIGHT1: Altitude 22500.0 ft -> 22500.0 ft (level)" in text
    record(9, text == golden and shapes, f"get_conflict_info matches golden file ({len(golden.splitlines())} lines)")
