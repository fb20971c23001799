"""Command-line interface: ``gme-detect <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every command writes its outputs atomically and drops a
``<output>.manifest.json`` describing the fully resolved run; ``replay``
re-executes a manifest and checks the output digests.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .atomic import atomic_write_bytes, atomic_write_text, sha256_bytes, sha256_file
from .featurize import DENSE, GHZ_DIAGONAL, PER_POSITION, POOLED, unfeaturize_dense, unfeaturize_ghz_diagonal
from .gmn_oracle import LABEL_THRESHOLD, gmn_analytic, label_state, noise_threshold
from .nn import CheckpointError, load_checkpoint
from .pipeline import (
    ANALYTIC,
    SDP,
    DatasetError,
    TrainConfig,
    TrainingDiverged,
    accuracy_table_csv,
    boundary_check,
    build_dataset,
    build_noisy_dataset,
    build_product_dataset,
    dataset_bytes,
    error_table_csv,
    evaluate,
    load_dataset,
    noise_sweep,
    repeat_experiment,
    split_indices,
    train,
)
from .pipeline.experiments import arm_name, eval_table_csv, noise_table_csv, pct
from .pipeline.training import DEFAULT_EPOCHS
from .sdp import SdpCapacityError, SdpConvergenceError, gmn_sdp
from .statekit import to_density_matrix

log = logging.getLogger("gme_detect")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
KIND_ALIASES = {"ghz": GHZ_DIAGONAL, "ghz_diagonal": GHZ_DIAGONAL, "dense": DENSE}
MANIFEST_SUFFIX = ".manifest.json"
# argument names holding output paths; replay redirects these
OUTPUT_ARGS = ("out", "history", "out_dir")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def worker_count(requested: int | None) -> int:
    n = requested or 1
    cap = os.environ.get("GME_DETECT_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise UsageError(f"GME_DETECT_THREADS must be an integer, got {cap!r}") from None
    return n


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _seed_list(base: int, repeats: int) -> list[int]:
    return [base + i for i in range(repeats)]


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def _resolved(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}


def write_manifest(primary: Path, args: argparse.Namespace, outputs: list[Path], inputs: list[Path], started: float, extra: dict | None = None):
    manifest = {
        "tool": "gme-detect",
        "version": __version__,
        "command": args.command,
        "config": _resolved(args),
        "inputs": [{"path": str(p), "sha256": sha256_file(p)} for p in inputs],
        "outputs": [{"path": str(p), "sha256": sha256_file(p)} for p in outputs],
        "timings": {"started_unix": started, "wall_seconds": time.time() - started},
    }
    if extra:
        manifest["summary"] = extra
    atomic_write_text(str(primary) + MANIFEST_SUFFIX, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    started = time.time()
    kind = KIND_ALIASES[args.kind]
    labeler = args.labeler or (ANALYTIC if kind == GHZ_DIAGONAL else SDP)
    workers = worker_count(args.workers)
    if args.family == "product":
        if kind != DENSE or args.count is None:
            raise UsageError("--family product needs --kind dense and --count")
        ds = build_product_dataset(args.qubits, args.count, args.seed)
    elif args.noise is not None:
        if kind != GHZ_DIAGONAL:
            raise UsageError("--noise applies to GHZ-diagonal data only")
        ds = build_noisy_dataset(args.qubits, args.noise, args.per_label, args.seed, workers=workers)
    else:
        ds = build_dataset(kind, args.qubits, args.per_label, labeler, args.seed, workers=workers)
    out = Path(args.out)
    atomic_write_bytes(out, dataset_bytes(ds))
    counts = ds.class_counts()
    summary = {
        "samples": len(ds),
        "feature_length": ds.feature_length,
        "class_counts": {f"{k:+d}": v for k, v in counts.items()},
        "generation": ds.stats,
    }
    write_manifest(out, args, [out], [], started, summary)
    print(
        f"wrote {len(ds)} samples ({counts[-1]} entangled / {counts[1]} not detected), "
        f"feature length {ds.feature_length}, marginal resamples {ds.stats.get('marginal_rejected', 0)}, "
        f"solver failures {ds.stats.get('failures', 0)} -> {out}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    data_path = Path(args.data)
    ds = load_dataset(data_path)
    epochs = args.epochs or DEFAULT_EPOCHS[ds.kind]
    config = TrainConfig(
        max_epochs=epochs,
        learning_rate=args.lr,
        l2=args.l2,
        batch_size=args.batch_size,
        seed=args.seed,
        se_enabled=args.se,
        reduction=args.reduction,
        normalization=args.normalization,
    )
    args.epochs = epochs
    tr_idx, _ = split_indices(ds.labels, args.train_fraction, args.seed)
    out = Path(args.out)
    history_path = Path(args.history or str(out) + ".history.csv")
    args.history = str(history_path)
    try:
        res = train(ds.subset(tr_idx), config, diagnostic_path=str(out) + ".diverged")
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}; diagnostic checkpoint at {out}.diverged", file=sys.stderr)
        return EXIT_NUMERICAL
    meta = {
        "data_sha256": sha256_file(data_path),
        "split_seed": args.seed,
        "train_fraction": args.train_fraction,
        "kind": ds.kind,
        "qubits": ds.n_qubits,
    }
    atomic_write_bytes(out, res.checkpoint(meta))
    atomic_write_text(history_path, res.history.to_csv())
    write_manifest(out, args, [out, history_path], [data_path], started,
                   {"final_loss": res.history.loss[-1], "final_train_accuracy": res.history.accuracy[-1]})
    print(
        f"trained {arm_name(args.se)} for {epochs} epochs on {tr_idx.size} samples: "
        f"loss {res.history.loss[-1]:.4f}, train accuracy {pct(res.history.accuracy[-1])}% -> {out}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    started = time.time()
    ckpt = load_checkpoint(args.checkpoint)
    data_path = Path(args.data)
    ds = load_dataset(data_path)
    meta = ckpt.meta
    same_data = meta.get("data_sha256") == sha256_file(data_path)
    if same_data:
        tr_idx, te_idx = split_indices(ds.labels, meta["train_fraction"], meta["split_seed"])
        if args.split != "test" and not args.allow_train_eval:
            raise UsageError("refusing to evaluate on the checkpoint's own training samples (pass --allow-train-eval)")
        idx = {"test": te_idx, "train": tr_idx, "all": np.arange(len(ds))}[args.split]
        subset = ds.subset(idx)
    else:
        subset = ds
    if ckpt.norm is None:
        raise CheckpointError("checkpoint has no normalization statistics")
    try:
        report = evaluate(ckpt.model, ckpt.norm, subset)
    except ValueError as exc:
        raise DatasetError(str(exc)) from None
    arm = arm_name(ckpt.model.spec.se_enabled)
    out = Path(args.out)
    csv_path = Path(str(out.with_suffix("")) + ".csv") if out.suffix == ".json" else Path(str(out) + ".csv")
    body = {"qubits": ds.n_qubits, "arm": arm, "split": args.split if same_data else "external", **report.to_dict()}
    atomic_write_text(out, json.dumps(body, indent=2, sort_keys=True) + "\n")
    atomic_write_text(csv_path, eval_table_csv(ds.n_qubits, arm, report))
    write_manifest(out, args, [out, csv_path], [Path(args.checkpoint), data_path], started)
    print(f"{arm} n={ds.n_qubits}: accuracy {pct(report.accuracy)}% on {report.total} samples (fn {report.fn_count}, fp {report.fp_count})")
    return EXIT_OK


def cmd_noise(args) -> int:
    started = time.time()
    if args.boundary_self_test:
        chk = boundary_check(3)
        ok = abs(chk.closed_form - 3.0 / 7.0) < 1e-15 and chk.error <= 1e-9
        print(f"boundary self-test n=3: p* = {chk.closed_form!r}, bisected {chk.bisected!r}, |diff| {chk.error:.2e} -> {'ok' if ok else 'FAILED'}")
        if not ok:
            return EXIT_NUMERICAL
        if args.out is None:
            return EXIT_OK
    if args.out is None:
        raise UsageError("--out is required")
    if any(not 0.0 <= p <= 1.0 for p in args.p_grid):
        raise UsageError("--p-grid values must lie in [0, 1]")
    config = TrainConfig(max_epochs=args.epochs, seed=args.seed, se_enabled=args.se)
    res = noise_sweep(args.qubits, args.p_grid, args.per_label, config, _seed_list(args.seed, args.repeats),
                      args.seed, workers=worker_count(args.workers))
    out = Path(args.out)
    csv_path = Path(str(out) + ".csv")
    atomic_write_text(out, json.dumps(res.to_dict(), indent=2, sort_keys=True) + "\n")
    atomic_write_text(csv_path, noise_table_csv(res))
    write_manifest(out, args, [out, csv_path], [], started)
    for pt in res.points:
        if pt.summary is None:
            print(f"p={pt.p:g}: degenerate (no entangled states exist below p*={noise_threshold(args.qubits):.6f})")
        else:
            print(f"p={pt.p:g}: accuracy {pct(pt.summary.mean)}% +- {pct(pt.summary.std)}")
    return EXIT_OK


def _dense_states(ds):
    """Dense matrices (and GHZ specs when available) for every sample."""
    for i in range(len(ds)):
        if ds.kind == DENSE:
            yield i, unfeaturize_dense(ds.features[i]), None
        else:
            spec = unfeaturize_ghz_diagonal(ds.features[i])
            yield i, to_density_matrix(spec) if spec.n <= 4 else None, spec


def cmd_sdp(args) -> int:
    started = time.time()
    data_path = Path(args.data)
    ds = load_dataset(data_path)
    if ds.n_qubits > 4:
        raise SdpCapacityError(f"SDP labeling is limited to n <= 4, file has n={ds.n_qubits}")
    if args.cross_check and ds.kind != GHZ_DIAGONAL:
        raise UsageError("--cross-check needs a GHZ-diagonal input file")
    records, failures = [], []
    max_delta = 0.0
    for i, rho, spec in _dense_states(ds):
        try:
            sol = gmn_sdp(rho, tol=args.tol)
        except SdpConvergenceError as exc:
            failures.append({"state_id": i, "error": str(exc), "gap": exc.best.gap if exc.best else None})
            continue
        value = sol.gmn_value if sol.gmn_value > args.tol else 0.0
        rec = {
            "state_id": i,
            "gmn_value": sol.gmn_value,
            "gap": sol.duality_gap,
            "iterations": sol.iterations,
            "label": label_state(value, LABEL_THRESHOLD),
        }
        if args.cross_check:
            exact = gmn_analytic(spec).value
            rec["analytic"] = exact
            max_delta = max(max_delta, abs(exact - sol.gmn_value))
        records.append(rec)
    out = Path(args.out)
    lines = [json.dumps(r, sort_keys=True) for r in records]
    lines.append(json.dumps({"summary": {"states": len(ds), "solved": len(records), "failures": failures,
                                         **({"max_abs_delta": max_delta} if args.cross_check else {})}}, sort_keys=True))
    atomic_write_text(out, "\n".join(lines) + "\n")
    write_manifest(out, args, [out], [data_path], started)
    msg = f"solved {len(records)}/{len(ds)} states"
    if args.cross_check:
        msg += f", max |sdp - analytic| = {max_delta:.2e}"
    if failures:
        msg += f", {len(failures)} failures: " + ", ".join(str(f["state_id"]) for f in failures)
    print(msg)
    return EXIT_NUMERICAL if failures else EXIT_OK


def cmd_label(args) -> int:
    started = time.time()
    data_path = Path(args.data)
    ds = load_dataset(data_path)
    if ds.kind != GHZ_DIAGONAL:
        raise UsageError("analytic labeling needs a GHZ-diagonal input file (use `sdp` for dense data)")
    lines, mismatches = [], 0
    for i in range(len(ds)):
        res = gmn_analytic(unfeaturize_ghz_diagonal(ds.features[i]))
        mismatches += int(res.label != ds.labels[i])
        lines.append(json.dumps({
            "state_id": i, "gmn_value": res.value, "argmax_index": res.argmax_index,
            "witness_margin": res.witness_margin, "label": res.label, "marginal": res.marginal,
            "stored_label": int(ds.labels[i]),
        }, sort_keys=True))
    out = Path(args.out)
    atomic_write_text(out, "\n".join(lines) + "\n")
    write_manifest(out, args, [out], [data_path], started, {"label_mismatches": mismatches})
    print(f"labeled {len(ds)} states, {mismatches} disagree with stored labels")
    return EXIT_OK if mismatches == 0 else EXIT_DATA


def cmd_experiment(args) -> int:
    started = time.time()
    kind = KIND_ALIASES[args.kind]
    labeler = ANALYTIC if kind == GHZ_DIAGONAL else SDP
    epochs = args.epochs or DEFAULT_EPOCHS[kind]
    args.epochs = epochs
    out_dir = Path(args.out_dir)
    results = []
    for n in args.qubits:
        ds = build_dataset(kind, n, args.per_label, labeler, args.seed, workers=worker_count(args.workers))
        config = TrainConfig(max_epochs=epochs, seed=args.seed)
        arms = {"both": (False, True), "cnn": (False,), "se": (True,)}[args.arms]
        res = repeat_experiment(ds, config, _seed_list(args.seed, args.repeats), arms)
        results.append(res)
        for arm, summ in res.arms.items():
            print(f"n={n} {arm}: {pct(summ.mean)}% +- {pct(summ.std)} over {len(summ.reports)} runs")
    paths = [out_dir / "accuracy.csv", out_dir / "errors.csv", out_dir / "results.json"]
    atomic_write_text(paths[0], accuracy_table_csv(results))
    atomic_write_text(paths[1], error_table_csv(results))
    atomic_write_text(paths[2], json.dumps([r.to_dict() for r in results], indent=2, sort_keys=True) + "\n")
    write_manifest(paths[2], args, paths, [], started)
    return EXIT_OK


def cmd_replay(args) -> int:
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    for item in manifest["inputs"]:
        if sha256_file(item["path"]) != item["sha256"]:
            raise DatasetError(f"input {item['path']} changed since the recorded run")
    config = dict(manifest["config"])
    recorded = {item["path"]: item["sha256"] for item in manifest["outputs"]}
    with tempfile.TemporaryDirectory(prefix="gme-replay-") as tmp:
        # each output argument gets its own directory; derived files keep
        # their position relative to it
        files, dirs = {}, {}
        for key in OUTPUT_ARGS:
            if config.get(key):
                old = Path(config[key]).resolve()
                new_dir = Path(tmp) / key
                new_dir.mkdir()
                if key == "out_dir":
                    dirs[old] = new_dir
                    config[key] = str(new_dir)
                else:
                    dirs.setdefault(old.parent, new_dir)
                    files[old] = new_dir / old.name
                    config[key] = str(files[old])
        code = main(_argv_from_config(config), _quiet=True)
        if code != EXIT_OK:
            print(f"replay of {manifest['command']} exited with {code}", file=sys.stderr)
            return code
        bad = []
        for path, digest in recorded.items():
            old = Path(path).resolve()
            new = files.get(old) or _remapped_path(old, dirs)
            if new is None or not new.exists() or sha256_file(new) != digest:
                bad.append(path)
    if bad:
        print("replay MISMATCH: " + ", ".join(bad))
        return EXIT_DATA
    print(f"replay ok: {len(recorded)} outputs byte-identical")
    return EXIT_OK


def _remapped_path(path: Path, dirs: dict[Path, Path]) -> Path | None:
    # deepest matching directory wins
    for old in sorted(dirs, key=lambda d: len(d.parts), reverse=True):
        if path.is_relative_to(old):
            return dirs[old] / path.relative_to(old)
    return None


def _argv_from_config(config: dict) -> list[str]:
    argv = [config["command"]]
    for key, val in config.items():
        if key == "command" or val is None or val is False:
            continue
        flag = "--" + key.replace("_", "-")
        if val is True:
            argv.append(flag)
        elif isinstance(val, list):
            if key == "qubits":
                argv += [flag, *map(str, val)]
            else:
                argv += [flag, ",".join(repr(v) for v in val)]
        else:
            argv += [flag, str(val)]
    return argv


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gme-detect", description="GME datasets, SDP/analytic labels, and 1-D CNN detectors.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a labeled dataset")
    g.add_argument("--kind", choices=sorted(KIND_ALIASES), required=True)
    g.add_argument("--qubits", type=int, required=True)
    g.add_argument("--per-label", type=int, default=500)
    g.add_argument("--labeler", choices=(ANALYTIC, SDP))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, help="white-noise weight p (GHZ-diagonal only)")
    g.add_argument("--family", choices=("random", "product"), default="random")
    g.add_argument("--count", type=int, help="sample count for unbalanced families")
    g.add_argument("--workers", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a classifier on a dataset's training split")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--history", help="per-epoch CSV (default <out>.history.csv)")
    t.add_argument("--epochs", type=int, help="default 200 (dense) / 50 (GHZ-diagonal)")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--l2", type=float, default=1e-4)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--se", action="store_true", help="insert the squeeze-and-excitation block")
    t.add_argument("--reduction", type=int, default=4)
    t.add_argument("--normalization", choices=(PER_POSITION, POOLED), help="default: pooled for GHZ-diagonal, per-position for dense")
    t.add_argument("--train-fraction", type=float, default=0.7)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="JSON report; a CSV is written beside it")
    e.add_argument("--split", choices=("test", "train", "all"), default="test")
    e.add_argument("--allow-train-eval", action="store_true")
    e.set_defaults(func=cmd_eval)

    nz = sub.add_parser("noise", help="white-noise robustness sweep")
    nz.add_argument("--qubits", type=int, default=8)
    nz.add_argument("--p-grid", type=_float_list, default=[0.2, 0.4, 0.6, 0.8, 1.0])
    nz.add_argument("--per-label", type=int, default=500)
    nz.add_argument("--repeats", type=int, default=5)
    nz.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS[GHZ_DIAGONAL])
    nz.add_argument("--se", action="store_true")
    nz.add_argument("--seed", type=int, default=0)
    nz.add_argument("--workers", type=int)
    nz.add_argument("--boundary-self-test", action="store_true", help="check the n=3 label boundary p* = 3/7")
    nz.add_argument("--out")
    nz.set_defaults(func=cmd_noise)

    s = sub.add_parser("sdp", help="GMN of every state in a file via the witness SDP")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="JSON lines output")
    s.add_argument("--tol", type=float, default=1e-7)
    s.add_argument("--cross-check", action="store_true", help="compare with the closed form (GHZ-diagonal input)")
    s.set_defaults(func=cmd_sdp)

    lb = sub.add_parser("label", help="closed-form GMN labels for a GHZ-diagonal file")
    lb.add_argument("--data", required=True)
    lb.add_argument("--out", required=True)
    lb.set_defaults(func=cmd_label)

    x = sub.add_parser("experiment", help="repeated CNN / CNN-SE runs with table output")
    x.add_argument("--kind", choices=sorted(KIND_ALIASES), default="ghz")
    x.add_argument("--qubits", type=int, nargs="+", required=True)
    x.add_argument("--per-label", type=int, default=500)
    x.add_argument("--repeats", type=int, default=5)
    x.add_argument("--epochs", type=int)
    x.add_argument("--arms", choices=("both", "cnn", "se"), default="both")
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--workers", type=int)
    x.add_argument("--out-dir", required=True)
    x.set_defaults(func=cmd_experiment)

    r = sub.add_parser("replay", help="re-run a manifest and verify its outputs")
    r.add_argument("manifest")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv: list[str] | None = None, _quiet: bool = False) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"gme-detect: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    for key in ("data", "checkpoint", *OUTPUT_ARGS):
        if getattr(args, key, None):
            setattr(args, key, os.path.abspath(getattr(args, key)))
    if not _quiet:
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gme-detect: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SdpConvergenceError, TrainingDiverged, ArithmeticError) as exc:
        print(f"gme-detect: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DatasetError, CheckpointError, SdpCapacityError, OSError, ValueError, KeyError) as exc:
        print(f"gme-detect: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
