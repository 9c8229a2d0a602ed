"""Command-line interface: ``noveltx <subcommand> ...``.

Exit codes: 0 success, 1 pipeline error, 2 usage error.
"""
from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import __version__
from .cohort import block_targets, build_treatment_blocks
from .config import load_study
from .embeddings import METHODS, TreatmentEmbedding, one_hot_embedding
from .evaluation import (EvalConfig, MasterData, default_jobs, read_records, read_skips,
                         run_evaluation, summarize_win_rates, win_rates, write_records,
                         write_skips, write_win_rates)
from .features import read_master_table, write_master_table
from .ingest import parse_demographics, parse_events, parse_treatment_catalog, validate_events
from .kegg import KeggError, network_enabled_by_env, NETWORK_ENV
from .meta import (DegenerateOutcomeError, build_meta_table, regressions_to_json,
                   regressions_to_text, run_meta_regressions, write_meta_table)
from .pipeline import build_embedding, master_from_events
from .synthgen import EFFECT_SHAPES, LAYOUTS, PRESETS, SynthConfig, generate_synthetic, write_synthetic

logger = logging.getLogger("noveltx")

MANIFEST_NAME = "manifest.json"


class PipelineError(Exception):
    pass


# ---------------------------------------------------------------- manifest

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_tree(path) -> str:
    """Digest of a directory: sorted relative names and file digests."""
    root = Path(path)
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(str(p.relative_to(root)).encode())
        h.update(sha256_file(p).encode())
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict
    config_hash: str
    inputs: dict[str, str]
    version: str
    seed: int | None
    started: str
    finished: str = ""
    outputs: dict[str, str] = field(default_factory=dict)

    @classmethod
    def start(cls, command: str, argv: Sequence[str], config: dict, inputs: Sequence,
              seed: int | None) -> "RunManifest":
        digests = {}
        for p in inputs:
            if p is None:
                continue
            p = Path(p)
            if p.is_dir():
                digests[str(p)] = sha256_tree(p)
            elif p.exists():
                digests[str(p)] = sha256_file(p)
        return cls(command, list(argv), config, config_hash(config), digests, __version__,
                   seed, _now())

    def finish(self, outdir, outputs: Sequence = ()) -> Path:
        self.finished = _now()
        self.outputs = {Path(p).name: sha256_file(p) for p in outputs if Path(p).is_file()}
        path = manifest_path(outdir, self.command)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def manifest_path(outdir, command: str) -> Path:
    """``manifest.json``, unless it already belongs to another command in this directory."""
    path = Path(outdir) / MANIFEST_NAME
    if path.exists():
        try:
            owner = json.loads(path.read_text()).get("command")
        except (ValueError, OSError):
            owner = None
        if owner not in (None, command):
            return Path(outdir) / f"manifest_{command}.json"
    return path


# ---------------------------------------------------------------- helpers

def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_json(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _allow_network(args) -> bool:
    if getattr(args, "allow_network", False):
        if args.offline:
            raise PipelineError("--offline and --allow-network are mutually exclusive")
        if not network_enabled_by_env():
            raise PipelineError(f"network access requested but {NETWORK_ENV}=1 is not set")
        return True
    return False


def _eval_config(args) -> EvalConfig:
    data = _load_json(args.config)
    forest = dict(data.pop("forest", {}))
    overrides = {
        "n_bootstrap": args.n_bootstrap,
        "seed": args.seed,
        "k_features": args.k_features,
        "one_hot_reference": args.one_hot_reference,
    }
    for k, v in overrides.items():
        if v is not None:
            data[k] = v
    if args.methods:
        data["methods"] = args.methods
    if args.pca_k is not None:
        data["pca_k"] = {"smiles": args.pca_k, "kegg": args.pca_k}
    if args.n_trees is not None:
        forest["n_trees"] = args.n_trees
    data["forest"] = forest
    return EvalConfig.from_dict(data)


def _load_embeddings(paths: Sequence[str]) -> dict[str, TreatmentEmbedding]:
    out = {}
    for p in paths or ():
        emb = TreatmentEmbedding.from_csv(p)
        out[emb.method] = emb
    return out


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    data = dict(PRESETS[args.preset]) if args.preset else {}
    data.update(_load_json(args.config))
    for key, val in (("n_patients", args.n_patients), ("n_treatments", args.n_treatments),
                     ("effect_strength", args.gamma), ("noise_sd", args.noise_sd),
                     ("seed", args.seed), ("effect_shape", args.shape),
                     ("layout", args.layout)):
        if val is not None:
            data[key] = val
    config = SynthConfig.from_dict(data)
    catalog = parse_treatment_catalog(args.catalog) if args.catalog else None
    out = _outdir(args.out)
    manifest = RunManifest.start("synth", args.argv, asdict(config), [args.config, args.catalog],
                                 config.seed)
    paths = write_synthetic(generate_synthetic(config, catalog), out)
    print(f"wrote synthetic cohort to {out}")
    manifest.finish(out, [p for k, p in paths.items() if k != "kegg_cache"])
    return 0


def cmd_ingest_validate(args) -> int:
    events = parse_events(args.events)
    report = validate_events(events)
    result = {"events": report.to_dict()}
    if args.catalog:
        result["catalog_entries"] = len(parse_treatment_catalog(args.catalog))
    if args.patients:
        result["patients"] = len(parse_demographics(args.patients))
    text = json.dumps(result, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = _outdir(args.out)
        (out / "validation.json").write_text(text + "\n")
        RunManifest.start("ingest-validate", args.argv, {}, [args.events, args.catalog, args.patients],
                          None).finish(out, [out / "validation.json"])
    if args.strict and not report.ok:
        raise PipelineError(f"validation failed: {report.violations}")
    return 0


def cmd_blocks(args) -> int:
    study = load_study(args.study)
    events = parse_events(args.events)
    blocks = build_treatment_blocks(events, study.treatment_codes, study.washout_days, study.onset_days)
    targets = block_targets(blocks, events, study.steroid_codes)
    frame = pd.DataFrame({
        "patient_id": [b.patient_id for b in blocks],
        "treatment": [b.treatment for b in blocks],
        "start": [b.start.isoformat() for b in blocks],
        "end": [b.end.isoformat() for b in blocks],
        "onset_end": [b.onset_end.isoformat() for b in blocks],
        "target": [np.nan if t is None else t for t in targets],
        "degenerate": [int(t is None) for t in targets],
    })
    out = _outdir(args.out)
    path = out / "blocks.csv"
    frame.to_csv(path, index=False, lineterminator="\n")
    print(f"{len(blocks)} blocks ({int(frame['degenerate'].sum())} degenerate) -> {path}")
    RunManifest.start("blocks", args.argv, study.to_dict(), [args.events, args.study],
                      None).finish(out, [path])
    return 0


def cmd_featurize(args) -> int:
    study = load_study(args.study)
    events = parse_events(args.events)
    people = parse_demographics(args.patients)
    frame = master_from_events(events, people, study)
    out = _outdir(args.out)
    path = out / "master.csv"
    write_master_table(frame, path)
    print(f"{len(frame)} master rows -> {path}")
    RunManifest.start("featurize", args.argv, study.to_dict(),
                      [args.events, args.patients, args.study], None).finish(out, [path])
    return 0


def cmd_embed(args) -> int:
    allow = _allow_network(args)
    catalog = parse_treatment_catalog(args.catalog)
    if args.method == "kegg" and args.cache_dir is None:
        raise PipelineError("--cache-dir is required for --method kegg")
    emb, model = build_embedding(args.method, catalog, args.cache_dir, allow, args.pca_k)
    out = _outdir(args.out)
    path = out / f"embedding_{args.method}.csv"
    emb.to_csv(path)
    outputs = [path]
    if model is not None:
        mpath = out / f"pca_{args.method}.json"
        mpath.write_text(model.to_json() + "\n")
        outputs.append(mpath)
    print(f"{len(emb.vectors)} {args.method} vectors (dim {emb.dim}) -> {path}")
    config = {"method": args.method, "pca_k": args.pca_k, "allow_network": allow}
    RunManifest.start("embed", args.argv, config, [args.catalog, args.cache_dir], None).finish(out, outputs)
    return 0


def _evaluation_embeddings(args, config: EvalConfig, catalog) -> dict:
    embeddings = _load_embeddings(args.embedding)
    for m in config.methods:
        if m == "one_hot" or m in embeddings:
            continue
        if catalog is None:
            raise PipelineError(f"method {m} needs --catalog or --embedding")
        if m == "kegg" and args.cache_dir is None:
            raise PipelineError("method kegg needs --cache-dir or --embedding")
        embeddings[m], _ = build_embedding(m, catalog, args.cache_dir, False, config.pca_k.get(m, 3))
    return embeddings


def cmd_evaluate(args) -> int:
    config = _eval_config(args)
    frame = read_master_table(args.master)
    catalog = parse_treatment_catalog(args.catalog) if args.catalog else None
    embeddings = _evaluation_embeddings(args, config, catalog)
    master = MasterData.from_frame(frame)
    jobs = args.jobs or default_jobs()
    out = _outdir(args.out)
    manifest = RunManifest.start("evaluate", args.argv, config.to_dict(),
                                 [args.master, args.catalog, args.cache_dir, args.config, *(args.embedding or [])],
                                 config.seed)
    result = run_evaluation(master, embeddings, config, jobs)
    treatments = result.treatments
    paths = {
        "records": out / "eval_records.csv",
        "skips": out / "skips.csv",
        "win_rates": out / "win_rates.csv",
        "audit": out / "audit.json",
    }
    write_records(result.records, paths["records"])
    write_skips(result.skips, paths["skips"])
    write_win_rates(summarize_win_rates(result.records, result.skips, treatments, config.methods),
                    paths["win_rates"])
    paths["audit"].write_text(json.dumps(result.audit.to_dict(), indent=2, sort_keys=True) + "\n")
    for m, emb in embeddings.items():
        emb.to_csv(out / f"embedding_{m}.csv")
        paths[f"emb_{m}"] = out / f"embedding_{m}.csv"
    print(f"{len(result.records)} records, {len(result.skips)} skips -> {out}")
    manifest.finish(out, list(paths.values()))
    return 0


def cmd_meta(args) -> int:
    records = read_records(args.records)
    treatments = sorted({r.unseen_treatment for r in records})
    if args.embedding:
        emb = TreatmentEmbedding.from_csv(args.embedding)
    elif args.method == "one_hot":
        emb = one_hot_embedding(treatments)
    else:
        raise PipelineError(f"--embedding is required for method {args.method}")
    table = build_meta_table(records, emb, args.method, treatments)
    out = _outdir(args.out)
    tpath = out / "meta_table.csv"
    write_meta_table(table, tpath)
    fits = run_meta_regressions(table, args.method)
    jpath = out / "regressions.json"
    xpath = out / "regressions.txt"
    jpath.write_text(regressions_to_json(fits))
    xpath.write_text(regressions_to_text(fits))
    print(regressions_to_text(fits))
    RunManifest.start("meta", args.argv, {"method": args.method}, [args.records, args.embedding],
                      None).finish(out, [tpath, jpath, xpath])
    return 0


def cmd_pca_sweep(args) -> int:
    """Mean win rate of one embedding method for each PCA dimension."""
    catalog = parse_treatment_catalog(args.catalog)
    master = MasterData.from_frame(read_master_table(args.master))
    base = _eval_config(argparse.Namespace(
        config=args.config, n_bootstrap=args.n_bootstrap, seed=args.seed, k_features=None,
        one_hot_reference=None, methods=[args.method], pca_k=None, n_trees=args.n_trees))
    rows = []
    for k in args.k:
        emb, model = build_embedding(args.method, catalog, args.cache_dir, False, k)
        config = EvalConfig.from_dict({**base.to_dict(), "pca_k": {args.method: k}})
        result = run_evaluation(master, {args.method: emb}, config, args.jobs or default_jobs())
        rates = win_rates(result.records, result.skips)
        total_var = float(np.sum(model.eigenvalues)) if model is not None else float("nan")
        rows.append({"k": k, "mean_win_rate": float(np.mean(list(rates.values()))),
                     "leading_eigenvalue_sum": total_var})
        logger.info("k=%d mean win rate %.3f", k, rows[-1]["mean_win_rate"])
    out = _outdir(args.out)
    path = out / "pca_sweep.csv"
    pd.DataFrame(rows).to_csv(path, index=False, lineterminator="\n")
    print(pd.DataFrame(rows).to_string(index=False))
    RunManifest.start("pca-sweep", args.argv, {**base.to_dict(), "k": list(args.k)},
                      [args.master, args.catalog, args.cache_dir], base.seed).finish(out, [path])
    return 0


def cmd_report(args) -> int:
    run = Path(args.run)
    lines = [f"run directory: {run}"]
    manifest = run / MANIFEST_NAME
    if manifest.exists():
        m = json.loads(manifest.read_text())
        lines.append(f"command: {m['command']}  version: {m['version']}  seed: {m['seed']}")
        lines.append(f"config hash: {m['config_hash']}")
    wr = run / "win_rates.csv"
    if wr.exists():
        lines += ["", "win rates (% of bootstraps beating the baseline):",
                  pd.read_csv(wr, dtype=str).to_string(index=False)]
    skips = run / "skips.csv"
    if skips.exists():
        sk = read_skips(skips)
        lines.append(f"skipped cells: {len(sk)}")
    audit = run / "audit.json"
    if audit.exists():
        a = json.loads(audit.read_text())
        lines.append(f"harness checks: {a['disjointness_checks']} disjointness, "
                     f"{a['baseline_fits']} baselines, {len(a['violations'])} violations")
    reg = run / "regressions.txt"
    if reg.exists():
        lines += ["", "meta-regressions:", reg.read_text().rstrip()]
    if len(lines) == 1:
        raise PipelineError(f"nothing to report in {run}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="noveltx", description=(
        "Outcome prediction for unseen treatments via treatment embeddings: "
        "synthetic data, cohort building, embeddings, bootstrapped evaluation and meta-analysis."))
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    s = sub.add_parser("synth", help="generate a synthetic cohort")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--preset", choices=sorted(PRESETS),
                   help="start from a named configuration; --config and flags override it")
    s.add_argument("--config", help="JSON file with synthetic-data settings")
    s.add_argument("--catalog", help="take treatments from this catalog instead of synthetic ones")
    s.add_argument("--n-patients", type=int)
    s.add_argument("--n-treatments", type=int)
    s.add_argument("--gamma", type=float, help="effect strength")
    s.add_argument("--noise-sd", type=float)
    s.add_argument("--shape", choices=EFFECT_SHAPES, help="effect shape")
    s.add_argument("--layout", choices=LAYOUTS, help="latent layout")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest-validate", help="parse and validate input files")
    s.add_argument("--events", required=True)
    s.add_argument("--catalog")
    s.add_argument("--patients")
    s.add_argument("--out", help="directory for validation.json")
    s.add_argument("--strict", action="store_true", help="exit 1 when any check fails")
    s.set_defaults(func=cmd_ingest_validate)

    s = sub.add_parser("blocks", help="build treatment blocks and targets")
    s.add_argument("--events", required=True)
    s.add_argument("--study", required=True, help="study configuration JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_blocks)

    s = sub.add_parser("featurize", help="build the master table")
    s.add_argument("--events", required=True)
    s.add_argument("--patients", required=True)
    s.add_argument("--study", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("embed", help="compute treatment vectors for one method")
    s.add_argument("--method", required=True, choices=METHODS)
    s.add_argument("--catalog", required=True)
    s.add_argument("--cache-dir", help="KEGG flat-file cache (kegg method)")
    s.add_argument("--pca-k", type=int, default=3)
    s.add_argument("--offline", action="store_true", help="never touch the network (default)")
    s.add_argument("--allow-network", action="store_true",
                   help=f"fetch cache misses from KEGG; also needs {NETWORK_ENV}=1")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_embed)

    def eval_flags(s):
        s.add_argument("--master", required=True, help="master table CSV")
        s.add_argument("--catalog")
        s.add_argument("--cache-dir")
        s.add_argument("--config", help="JSON evaluation config; flags override it")
        s.add_argument("--n-bootstrap", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--n-trees", type=int)
        s.add_argument("--jobs", type=int, help="worker processes (default: available cores)")
        s.add_argument("--out", required=True)

    s = sub.add_parser("evaluate", help="bootstrapped leave-one-treatment-out grid")
    eval_flags(s)
    s.add_argument("--methods", nargs="+", choices=METHODS)
    s.add_argument("--embedding", action="append", help="precomputed embedding CSV (repeatable)")
    s.add_argument("--k-features", type=int)
    s.add_argument("--pca-k", type=int)
    s.add_argument("--one-hot-reference", help="treatment encoded as all zeros in one-hot models")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("meta", help="meta table and the four logistic regressions")
    s.add_argument("--records", required=True, help="eval_records.csv")
    s.add_argument("--embedding", help="embedding CSV of the analysed method")
    s.add_argument("--method", default="kegg", choices=METHODS)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_meta)

    s = sub.add_parser("pca-sweep", help="win rate as a function of PCA dimension")
    eval_flags(s)
    s.add_argument("--method", default="kegg", choices=["smiles", "kegg"])
    s.add_argument("--k", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    s.set_defaults(func=cmd_pca_sweep)

    s = sub.add_parser("report", help="summarise a run directory")
    s.add_argument("--run", required=True)
    s.add_argument("--out", help="also write the summary to this file")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.argv = argv
    try:
        return args.func(args)
    except DegenerateOutcomeError as exc:
        print(f"error: degenerate outcome: {exc}", file=sys.stderr)
        return 1
    except (PipelineError, KeggError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
