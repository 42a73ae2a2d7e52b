"""Command-line entry point: ``atc-arena {gen,run,replay,report,library}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..agents.transcript import Transcript, replay
from ..errors import ArenaError, QualityGateRejected
from ..scenarios import build_dataset, write_dataset
from .batch import RunConfig, aggregate, load_results, run_batch

log = logging.getLogger("atc_arena")


def _embedder(spec: str, dim: int):
    from ..experience.embedding import HashingEmbedder, RemoteEmbedder

    if spec.startswith("hashing"):
        parts = spec.split("-")
        seed = int(parts[2]) if len(parts) > 2 else 0
        return HashingEmbedder(dim, seed)
    if spec.startswith(("remote:", "openai:")):
        return RemoteEmbedder(spec.split(":", 1)[1], dim)
    raise ValueError(f"unknown embedder {spec!r}; use hashing or openai:<model>")


def _open_library(path: str):
    from ..experience.library import ExperienceLibrary

    manifest = json.loads((Path(path) / "manifest.json").read_text())
    return ExperienceLibrary.load(path, _embedder(manifest.get("embedder") or "hashing", manifest["dim"]))


def cmd_gen(args) -> int:
    scenarios = build_dataset(args.seed, args.per_cell)
    out = write_dataset(args.out, scenarios, args.seed)
    print(f"wrote {len(scenarios)} scenarios to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = RunConfig(
        mode=args.mode,
        experience=args.experience,
        backend=args.backend,
        temperature=args.temperature,
        dataset=args.dataset,
        parallelism=args.parallel,
        tokens_per_minute=args.tpm,
        out_dir=args.out,
        max_iterations=args.max_iterations,
        replan_limit=args.replan_limit,
        library=args.library,
        timeout_s=args.timeout,
    )
    library = _open_library(args.library) if args.experience else None
    report, _ = run_batch(cfg, library=library)
    print(report.table_row())
    for n, c in report.by_aircraft.items():
        print(f"  {n} aircraft: success rate {c['success_rate']:.3f} ({c['resolved']}/{c['total']})")
    if args.out:
        print(f"results in {args.out}")
    return 0


def cmd_replay(args) -> int:
    tr = Transcript.load(args.transcript)
    outcome = replay(tr, check=not args.no_check)
    for rec, res in zip(tr.tool_events(), outcome.results):
        print(f"[t={rec['clock_s']:.1f}] {rec['role']} -> {rec['name']} {json.dumps(rec['args'], sort_keys=True)}")
        if not args.quiet:
            print("    " + res.text.replace("\n", "\n    "))
    print(f"score {outcome.score} (recorded {tr.score})")
    return 0 if outcome.score == tr.score else 1


def cmd_report(args) -> int:
    results, cfg = load_results(args.results)
    report = aggregate(results, cfg)
    sys.stdout.write(report.to_csv() if args.csv else report.to_json())
    return 0


def cmd_library(args) -> int:
    from ..experience.documents import LLMSummarizer, TemplateSummarizer, build_experience_document
    from ..experience.library import ExperienceLibrary

    if args.action == "build":
        embedder = _embedder(args.embedder, args.dim)
        lib_dir = Path(args.out)
        lib = _open_library(args.out) if (lib_dir / "manifest.json").exists() else ExperienceLibrary(embedder, args.dim)
        if args.summarizer == "template":
            summarizer = TemplateSummarizer()
        else:
            from ..agents.backends import make_backend

            summarizer = LLMSummarizer(make_backend(args.summarizer))
        results, _ = load_results(args.runs)
        kept = skipped = 0
        for rec in results:
            if rec.score != 1 or not rec.transcript:
                continue
            tr = Transcript.load(Path(args.runs) / rec.transcript)
            try:
                doc = build_experience_document(tr, summarizer, embedder, args.trusted, created_at=args.created_at)
            except QualityGateRejected as exc:
                log.info("skipped %s: %s", rec.scenario_id, exc)
                skipped += 1
                continue
            lib.upsert(doc)
            kept += 1
        lib.save(lib_dir)
        print(f"stored {kept} documents ({skipped} rejected); library holds {len(lib)}")
        return 0
    lib = _open_library(args.path)
    if args.action == "inspect":
        print(f"{len(lib)} documents, dimension {lib.dim}")
        for (n, formation), count in lib.partitions().items():
            print(f"  {formation} / {n} aircraft: {count}")
        return 0
    hit = lib.search(args.description, args.num_aircraft, args.formation)
    print(hit[0].render() + f"\n(similarity {hit[1]:.4f})" if hit else "No relevant experience found.")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="atc-arena", description="Conflict-resolution scenarios, agents and scoring.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate the scenario dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    g.add_argument("--per-cell", type=int, default=10, help="scenarios per (type, aircraft count) cell (default 10)")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run an agent configuration over a dataset")
    r.add_argument("--mode", choices=("single", "multi"), default="single", help="agent arrangement")
    r.add_argument("--backend", default="scripted:noop", help="scripted:noop, scripted:layering or openai:<model>")
    r.add_argument("--dataset", required=True, help="dataset directory written by gen")
    r.add_argument("--experience", action="store_true", help="enable the experience library tool")
    r.add_argument("--library", help="experience library directory (required with --experience)")
    r.add_argument("--temperature", type=float, default=0.3, help="sampling temperature (default 0.3)")
    r.add_argument("--parallel", type=int, default=1, help="concurrent scenario runs (default 1)")
    r.add_argument("--tpm", type=int, default=None, help="tokens-per-minute budget shared by all runs")
    r.add_argument("--max-iterations", type=int, default=20, help="backend turns per agent (default 20)")
    r.add_argument("--replan-limit", type=int, default=3, help="verifier re-plans allowed (default 3)")
    r.add_argument("--timeout", type=float, default=600.0, help="wall-clock seconds per scenario (default 600)")
    r.add_argument("--out", help="results directory")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("replay", help="re-execute a transcript and re-render its tool results")
    rp.add_argument("transcript", help="transcript .jsonl file")
    rp.add_argument("--no-check", action="store_true", help="do not require byte-identical results")
    rp.add_argument("--quiet", action="store_true", help="print only the call sequence and score")
    rp.set_defaults(func=cmd_replay)

    rep = sub.add_parser("report", help="aggregate a results.jsonl (or run directory)")
    rep.add_argument("results", help="run directory or results.jsonl")
    rep.add_argument("--csv", action="store_true", help="emit CSV instead of JSON")
    rep.set_defaults(func=cmd_report)

    lb = sub.add_parser("library", help="build, inspect or query an experience library")
    lsub = lb.add_subparsers(dest="action", required=True)
    b = lsub.add_parser("build", help="turn resolved runs into experience documents")
    b.add_argument("--runs", required=True, help="run directory written by run --out")
    b.add_argument("--out", required=True, help="library directory (created or extended)")
    b.add_argument("--trusted", nargs="*", default=None, help="only keep documents from these backend ids")
    b.add_argument("--embedder", default="hashing", help="hashing or openai:<model> (default hashing)")
    b.add_argument("--dim", type=int, default=3072, help="embedding dimension (default 3072)")
    b.add_argument("--summarizer", default="template", help="template or openai:<model>")
    b.add_argument("--created-at", default=None, help="timestamp stored on new documents")
    i = lsub.add_parser("inspect", help="summarize a library")
    i.add_argument("path", help="library directory")
    s = lsub.add_parser("search", help="best match for a conflict description")
    s.add_argument("path", help="library directory")
    s.add_argument("--description", required=True, help="conflict description")
    s.add_argument("--num-aircraft", type=int, required=True, help="number of aircraft")
    s.add_argument("--formation", required=True, help="HeadOn, Parallel, TFormation or Converging")
    lb.set_defaults(func=cmd_library)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ArenaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
