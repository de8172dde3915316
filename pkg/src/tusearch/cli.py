"""Command-line front end.

Subcommands: ``synth`` (write a synthetic repository + query batch),
``build`` (train and persist an index bundle), ``search`` (query a
bundle), ``eval`` (recall against the exact oracle), ``bench`` (parameter
sweep), and ``inspect`` (bundle statistics).  All stochastic components
take their randomness from ``--seed``, so every command is deterministic
given its flags.

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal invariant
violation.  Errors print one ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bundle as bundle_io
from .errors import TuSearchError
from .evaluation import (
    BenchConfig,
    ground_truth_rankings,
    recall,
    run_bench,
)
from .pipeline import SearchParams, build_engine
from .repository import (
    MANIFEST_MAGIC,
    generate_synthetic,
    ingest_repository,
    load_query_table,
    load_query_tables,
    split_repository,
    write_repository,
)


def _add_search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("-k", type=int, default=10, help="result size (default 10)")
    p.add_argument("--tau", type=float, default=0.7,
                   help="similarity threshold in (0, 1]; always set explicitly in configs (default 0.7)")
    p.add_argument("--phi-c", type=int, default=32, help="centroid probe size (default 32)")
    p.add_argument("--phi-ref", type=int, default=None, help="refinement pool size (default 5k)")
    p.add_argument("--phi-r", type=int, default=None, help="filter pool size (default 3k)")
    p.add_argument("--pruner", choices=["bf", "base", "enhanced"], default="enhanced")
    p.add_argument("--ann", choices=["auto", "exact", "graph"], default="auto",
                   help="centroid retrieval mode (default auto)")
    p.add_argument("--ef-search", type=int, default=None,
                   help="graph beam width (default max(64, 2*phi_c))")


def _params(args) -> SearchParams:
    return SearchParams(
        k=args.k, tau=args.tau, phi_c=args.phi_c,
        phi_ref=args.phi_ref, phi_r=args.phi_r,
        pruner=args.pruner, ann_mode=args.ann, ef_search=args.ef_search,
    )


def cmd_synth(args) -> int:
    out = Path(args.out)
    data = generate_synthetic(
        args.n_sets + args.queries,
        (args.cols[0], args.cols[1]),
        args.dim, args.topics, args.noise, args.seed,
    )
    if args.queries > 0:
        repo, qrepo = split_repository(data.repository, args.n_sets)
    else:
        repo, qrepo = data.repository, None
    manifest = write_repository(repo, out, stem="repository")
    print(f"repository\t{manifest}\tsets={repo.n_sets}\tvectors={repo.total_vectors}\tdim={repo.dimension}")
    if qrepo is not None:
        qmanifest = write_repository(qrepo, out, stem="queries")
        print(f"queries\t{qmanifest}\tsets={qrepo.n_sets}")
    labels = {str(i): data.topic_labels[i].tolist() for i in range(len(data.topic_labels))}
    (out / "topic_labels.json").write_text(json.dumps(labels, sort_keys=True), encoding="utf-8")
    return 0


def cmd_build(args) -> int:
    t0 = time.perf_counter()
    repo = ingest_repository(args.manifest)
    with_graph = {"auto": None, "always": True, "never": False}[args.graph]
    engine = build_engine(
        repo,
        n_c=args.n_c,
        rho_low=args.rho_l,
        rho_high=args.rho_h,
        m_graph=args.M,
        ef_construction=args.ef_construction,
        seed=args.seed,
        single_partition=args.single_partition,
        with_graph=with_graph,
    )
    out = bundle_io.save_bundle(args.out, engine)
    elapsed = time.perf_counter() - t0
    sizes = bundle_io.component_sizes(out)
    for name, nbytes in sorted(sizes.items()):
        print(f"component\t{name}\t{nbytes}")
    raw = sizes["repository.f32"]
    quantized = sum(v for k, v in sizes.items() if k not in ("repository.f32", "repository.tsv"))
    print(f"bytes_raw_vectors\t{raw}")
    print(f"bytes_index_components\t{quantized}")
    print(f"build_seconds\t{elapsed:.3f}")
    print(f"bundle\t{out}")
    return 0


def cmd_search(args) -> int:
    engine = bundle_io.load_bundle(args.bundle)
    query = load_query_table(args.query)
    result = engine.search(query, _params(args))
    for rank, (sid, score, card) in enumerate(result.items, start=1):
        print(f"{rank}\t{sid}\t{score:.6f}\t{card}")
    if args.explain:
        for line in result.diagnostics.lines():
            print(f"# {line}")
    return 0


def cmd_eval(args) -> int:
    engine = bundle_io.load_bundle(args.bundle)
    queries = load_query_tables(args.queries)
    params = _params(args)
    truth = ground_truth_rankings(
        queries, engine.repo, args.tau,
        cache_dir=args.cache, threads=args.threads,
    )
    recalls = []
    for qi, query in enumerate(queries):
        result = engine.search(query, params)
        truth_ids = [sid for sid, _, _ in truth[qi][: args.k]]
        r = recall([sid for sid, _, _ in result.items], truth_ids)
        recalls.append(r)
        print(f"query\t{qi}\trecall\t{r:.4f}")
    print(f"mean_recall\t{float(np.mean(recalls)):.4f}")
    return 0


def cmd_bench(args) -> int:
    if args.write_default_config:
        Path(args.write_default_config).write_text(BenchConfig().to_json() + "\n", encoding="utf-8")
        print(f"wrote\t{args.write_default_config}")
        return 0
    config = BenchConfig.from_json(Path(args.config).read_text(encoding="utf-8")) if args.config else BenchConfig()
    report = run_bench(config, cache_dir=args.cache,
                       progress=(lambda row: print(
                           f"point\t{row['method']}\tphi_c={row['phi_c']}\tphi_ref={row['phi_ref']}"
                           f"\trecall={row['recall']:.4f}\tp50_ms={row['p50_ms']:.3f}",
                           file=sys.stderr)) if args.verbose else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.tsv").write_text(report.to_tsv(), encoding="utf-8")
    (out / "report.jsonl").write_text(report.to_jsonl(), encoding="utf-8")
    print(f"report\t{out / 'report.tsv'}")
    print(f"records\t{out / 'report.jsonl'}")
    print(f"rows\t{len(report.rows)}")
    return 0


def cmd_inspect(args) -> int:
    engine = bundle_io.load_bundle(args.bundle)
    repo = engine.repo
    print(f"format\t{bundle_io.FORMAT_NAME} v{bundle_io.FORMAT_VERSION}")
    print(f"sets\t{repo.n_sets}")
    print(f"vectors\t{repo.total_vectors}")
    print(f"dimension\t{repo.dimension}")
    print(f"n_c\t{engine.codebook.n_c}")
    for key in ("rho_low", "rho_high", "seed", "single_partition"):
        if key in engine.build_config:
            print(f"config\t{key}\t{engine.build_config[key]}")
    rhos = []
    group_counts = []
    capacity_total = 0
    for sid in range(repo.n_sets):
        owners = engine.assignment.set_owners(sid)
        rhos.append(len(np.unique(owners)) / len(owners))
        pset = engine.partition_index.of(sid)
        group_counts.append(len(pset.groups))
        capacity_total += sum(g.capacity for g in pset.groups)
    hist, edges = np.histogram(rhos, bins=10, range=(0.0, 1.0))
    for i, count in enumerate(hist):
        print(f"dispersion_hist\t{edges[i]:.1f}-{edges[i + 1]:.1f}\t{int(count)}")
    for count in sorted(set(group_counts)):
        print(f"partition_count_hist\t{count}\t{group_counts.count(count)}")
    distinct = sum(len(w) for w in engine.weight_index.weights.values())
    print(f"weight_index_entries\t{distinct}")
    print(f"weight_index_sparsity\t{distinct / (repo.n_sets * engine.codebook.n_c):.6f}")
    print(f"capacity_total\t{capacity_total}")
    print(f"capacity_equals_vectors\t{capacity_total == repo.total_vectors}")
    sizes = bundle_io.component_sizes(args.bundle)
    for name, nbytes in sorted(sizes.items()):
        print(f"component\t{name}\t{nbytes}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tusearch",
        description="Top-k table union search over column-embedding vector sets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic repository and query batch")
    p.add_argument("--out", required=True)
    p.add_argument("--n-sets", type=int, default=2000)
    p.add_argument("--queries", type=int, default=50)
    p.add_argument("--cols", type=int, nargs=2, default=[5, 15], metavar=("LO", "HI"))
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--topics", type=int, default=40)
    p.add_argument("--noise", type=float, default=0.12)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build", help="build an index bundle from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-c", type=int, default=None, help="codebook size (default ceil(sqrt(N)))")
    p.add_argument("--rho-l", type=float, default=0.2, help="lower dispersion threshold")
    p.add_argument("--rho-h", type=float, default=0.8, help="upper dispersion threshold")
    p.add_argument("-M", type=int, default=16, help="graph neighbors per node")
    p.add_argument("--ef-construction", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--single-partition", action="store_true",
                   help="one partition per set (disables partitioning)")
    p.add_argument("--graph", choices=["auto", "always", "never"], default="auto")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("search", help="run one query against a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--query", required=True, help=f"single-record {MANIFEST_MAGIC} manifest")
    _add_search_flags(p)
    p.add_argument("--explain", action="store_true", help="append stage diagnostics")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="recall of bundle search against the exact oracle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--queries", required=True, help="manifest with one record per query table")
    _add_search_flags(p)
    p.add_argument("--cache", default=None, help="ground-truth cache directory")
    p.add_argument("--threads", type=int, default=1, help="oracle worker cap")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="parameter sweep over a synthetic workload")
    p.add_argument("--config", default=None, help="bench config JSON (default built-in)")
    p.add_argument("--out", default="bench_out")
    p.add_argument("--cache", default=None)
    p.add_argument("--write-default-config", default=None, metavar="PATH")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="print bundle statistics")
    p.add_argument("--bundle", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except TuSearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
