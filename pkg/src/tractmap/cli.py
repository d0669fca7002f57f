"""``tractmap`` command-line interface.

Subcommands: ``synth`` (synthetic subject pair), ``filter`` (superset of a
target tract), ``map`` (superset filter, distances, initialization,
annealing), ``eval`` (voxel overlap and recovery) and ``convert``
(.trk <-> JSON).

Exit codes: 0 success, 1 runtime or domain error, 2 input or parse error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import eval as ev
from .geometry import GeometryError, Tractography, as_voxel_size, resample
from .graph import as_mapping, cross_distance, distance_matrix, mapping_loss, normalized_loss
from .io import (SchemaError, TrkParseError, apply_affine, dump_tractography, load_affine,
                 load_tractography)
from .optim import AnnealSchedule, BudgetExceeded, anneal, nn_init, random_init, superset
from .rng import make_rng
from .synth import BundleSpec, generate_subject_pair

log = logging.getLogger("tractmap")


class InputError(Exception):
    """Bad or missing input; maps to exit code 2."""


# -- argument types ------------------------------------------------------------

def _int_at_least(lo):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
        if v < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}, got {v}")
        return v
    return parse


def _float_checked(positive=False, nonneg=False):
    def parse(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
        if not np.isfinite(v):
            raise argparse.ArgumentTypeError(f"must be finite, got {text!r}")
        if positive and v <= 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
        if nonneg and v < 0:
            raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
        return v
    return parse


# -- file helpers --------------------------------------------------------------

def write_atomic(path: Path, data: bytes | str) -> Path:
    """Write via a temporary file in the same directory, then rename."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _check_ext(path: Path):
    if path.suffix.lower() not in (".trk", ".json"):
        raise InputError(f"{path}: unsupported extension {path.suffix!r} (use .trk or .json)")


def _load(path) -> Tractography:
    path = Path(path)
    _check_ext(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    return load_tractography(path)


def _load_json(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None


def _load_indices(path, keys) -> np.ndarray:
    """Integer list from a JSON file: a bare list or the first of ``keys``."""
    obj = _load_json(path)
    if isinstance(obj, dict):
        for k in keys:
            if k in obj:
                obj = obj[k]
                break
        else:
            raise InputError(f"{path}: expected one of the keys {list(keys)}")
    if not isinstance(obj, list) or not all(isinstance(x, int) and not isinstance(x, bool)
                                            for x in obj):
        raise InputError(f"{path}: expected a list of integers")
    if not obj:
        raise InputError(f"{path}: index list is empty")
    return np.asarray(obj, dtype=np.int64)


def _resampled(t: Tractography, n_points: int) -> Tractography:
    if n_points == 0:
        return t
    return t.replace_streamlines([resample(s, n_points) for s in t])


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = BundleSpec(
        n_streamlines=args.n_streamlines, jitter_sigma=args.jitter, seed=args.seed,
        offset=tuple(args.offset), spread=args.spread,
    )
    pair = generate_subject_pair(spec, distractors=args.distractors,
                                 displacement=tuple(args.displacement))
    out = Path(args.output_dir)
    ext = args.format
    vs = as_voxel_size(args.voxel_size)
    src = Tractography(pair.source.streamlines, voxel_size=vs, name="source_tract")
    tgt = Tractography(pair.target.streamlines, voxel_size=vs, name="target_full")
    p_src = write_atomic(out / f"source_tract.{ext}", dump_tractography(src, f"x.{ext}"))
    p_tgt = write_atomic(out / f"target_full.{ext}", dump_tractography(tgt, f"x.{ext}"))
    truth = {
        "seed": args.seed,
        "n_source": len(src),
        "n_target": len(tgt),
        "truth": pair.truth.tolist(),
        "target_tract": pair.target_tract.tolist(),
    }
    p_truth = write_atomic(out / "truth.json", _dumps(truth))
    for p in (p_src, p_tgt, p_truth):
        print(p)
    return 0


def cmd_filter(args) -> int:
    full = _load(args.target_full)
    tract = _load_indices(args.target_tract, ("target_tract", "indices"))
    ss = superset(_resampled(full, args.resample), tract, args.alpha, threads=args.threads)
    out = Path(args.output_dir)
    doc = {"alpha": args.alpha, "medoid": ss.medoid_index, "radius": ss.radius,
           "threshold": ss.threshold, "indices": ss.indices.tolist()}
    print(write_atomic(out / "superset.json", _dumps(doc)))
    print(f"superset: {len(ss.indices)} of {len(full)} streamlines "
          f"(medoid {ss.medoid_index}, radius {ss.radius:.4g})")
    return 0


def _method_metrics(t_a, t_b, q_full, vs, target_tract, truth, loss, n):
    mapped = t_b.subset(np.unique(q_full))
    ov = ev.jaccard_overlap(t_a, mapped, vs)
    m = {"normalized_loss": normalized_loss(loss, n), "jaccard": ov.jaccard,
         "union_jaccard": ov.union_jaccard}
    if target_tract is not None:
        seg = ev.jaccard_overlap(t_b.subset(target_tract), mapped, vs)
        m["tract_b_jaccard"] = seg.jaccard
        m["tract_b_union_jaccard"] = seg.union_jaccard
    if truth is not None:
        m["recovery"] = ev.recovery_rate(q_full, truth)
    return m


def cmd_map(args) -> int:
    vs = as_voxel_size(args.voxel_size)
    t_a = _load(args.source_tract)
    t_b = _load(args.target_full)
    if args.affine:
        if not Path(args.affine).is_file():
            raise InputError(f"{args.affine}: no such file")
        t_a = apply_affine(t_a, load_affine(args.affine))
    target_tract = None
    if args.target_tract:
        target_tract = _load_indices(args.target_tract, ("target_tract", "indices"))
    truth = None
    if args.truth:
        truth = _load_indices(args.truth, ("truth", "mapping"))
        if truth.size != len(t_a):
            raise InputError(f"{args.truth}: {truth.size} entries for {len(t_a)} source streamlines")

    ra = _resampled(t_a, args.resample)
    rb = _resampled(t_b, args.resample)
    if target_tract is not None:
        ss = superset(rb, target_tract, args.alpha, threads=args.threads)
        cand = ss.indices
        log.info("superset: %d of %d (radius %.4g)", len(cand), len(t_b), ss.radius)
    else:
        cand = np.arange(len(t_b))
    sub = rb.subset(cand)

    a = distance_matrix(ra, threads=args.threads)
    b = distance_matrix(sub, threads=args.threads)
    if args.init == "nn":
        q0 = nn_init(cross_distance(ra, sub, threads=args.threads))
    else:
        q0 = random_init(len(ra), len(sub), make_rng(args.seed, "init"))
    sched = AnnealSchedule(iterations=args.iterations, rng_seed=args.seed,
                           greedy_only=args.greedy_only)
    trace = anneal(a, b, q0, sched)

    n = len(t_a)
    loss0 = mapping_loss(a, b, q0)
    q0_full, q_full = cand[q0], cand[trace.mapping]
    method = f"SA-{args.iterations}"
    metrics = {
        "init": _method_metrics(t_a, t_b, q0_full, vs, target_tract, truth, loss0, n),
        method: _method_metrics(t_a, t_b, q_full, vs, target_tract, truth, trace.loss, n),
    }
    doc = {
        "seed": args.seed,
        "init": args.init,
        "alpha": args.alpha,
        "iterations": args.iterations,
        "greedy_only": args.greedy_only,
        "resample": args.resample,
        "n_source": n,
        "n_target": len(t_b),
        "superset_indices": cand.tolist(),
        "initial_mapping": q0_full.tolist(),
        "mapping": q_full.tolist(),
        "initial_loss": loss0,
        "final_loss": trace.loss,
        "initial_normalized_loss": normalized_loss(loss0, n),
        "final_normalized_loss": normalized_loss(trace.loss, n),
        "metrics": metrics,
    }
    report = ev.build_report([ev.PairResult(
        source=Path(args.source_tract).name, target=Path(args.target_full).name,
        n_tract_a=n, n_tract_b=len(target_tract) if target_tract is not None else len(t_b),
        n_superset_b=len(cand), metrics=metrics)])

    out = Path(args.output_dir)
    ext = Path(args.target_full).suffix.lower()
    mapped = ev.mapped_tract(t_b, trace.mapping, cand)
    paths = [
        write_atomic(out / "mapping.json", _dumps(doc)),
        write_atomic(out / "trace.csv", ev.trace_csv(trace)),
        write_atomic(out / f"mapped_tract{ext}", dump_tractography(mapped, f"x{ext}")),
        write_atomic(out / "report.csv", report.to_csv()),
        write_atomic(out / "report.json", report.to_json() + "\n"),
    ]
    for p in paths:
        print(p)
    for name, m in metrics.items():
        parts = " ".join(f"{k}={v:.4f}" for k, v in m.items())
        print(f"{name}: {parts}")
    return 0


def cmd_eval(args) -> int:
    vs = as_voxel_size(args.voxel_size)
    t_a = _load(args.tract_a)
    t_b = _load(args.mapped_b)
    ov = ev.jaccard_overlap(t_a, t_b, vs)
    doc = ov.as_dict()
    if args.truth:
        if not args.mapping:
            raise InputError("--truth needs --mapping (the mapping.json written by 'map')")
        q = _load_indices(args.mapping, ("mapping",))
        truth = _load_indices(args.truth, ("truth", "mapping"))
        if q.size != truth.size:
            raise InputError(f"mapping has {q.size} entries, truth {truth.size}")
        doc["recovery"] = ev.recovery_rate(q, truth)
    if ov.empty:
        log.warning("empty voxel set; overlap reported as 0")
    out = Path(args.output_dir)
    cols = list(doc)
    csv_text = ",".join(cols) + "\n" + ",".join(
        " ".join(map(repr, v)) if isinstance(v, list) else repr(v) if isinstance(v, float)
        else str(v) for v in doc.values()) + "\n"
    print(write_atomic(out / "eval.json", _dumps(doc)))
    print(write_atomic(out / "eval.csv", csv_text))
    print(" ".join(f"{k}={v}" for k, v in doc.items()))
    return 0


def cmd_convert(args) -> int:
    t = _load(getattr(args, "in"))
    out = Path(args.out)
    _check_ext(out)
    print(write_atomic(out, dump_tractography(t, out)))
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=_int_at_least(0), default=42,
                   help="master seed; stages draw named sub-streams (default 42)")
    g.add_argument("--voxel-size", type=_float_checked(positive=True), nargs=3, default=[2.0, 2.0, 2.0],
                   metavar=("X", "Y", "Z"), help="voxel size in mm (default 2 2 2)")
    g.add_argument("--resample", type=_int_at_least(0), default=20,
                   help="points per streamline for distances, 0 to disable (default 20)")
    g.add_argument("--output-dir", default=".", help="directory for output files")
    g.add_argument("--threads", type=_int_at_least(1), default=None,
                   help="worker threads for distance matrices (default: all cores)")
    g.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tractmap", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[g], help="generate a synthetic subject pair")
    s.add_argument("--n-streamlines", type=_int_at_least(1), default=60)
    s.add_argument("--jitter", type=_float_checked(nonneg=True), default=1.0,
                   help="per-vertex Gaussian jitter sigma in mm (default 1.0)")
    s.add_argument("--spread", type=_float_checked(nonneg=True), default=4.0,
                   help="scale of per-streamline shape variation in mm (default 4.0)")
    s.add_argument("--distractors", type=_int_at_least(0), default=300)
    s.add_argument("--displacement", type=_float_checked(), nargs=3, default=[5.0, 5.0, 0.0],
                   metavar=("X", "Y", "Z"))
    s.add_argument("--offset", type=_float_checked(), nargs=3, default=[0.0, 0.0, 0.0],
                   metavar=("X", "Y", "Z"))
    s.add_argument("--format", choices=("json", "trk"), default="json")
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("filter", parents=[g], help="superset of a tract inside a tractography")
    f.add_argument("--target-full", required=True)
    f.add_argument("--target-tract", required=True, help="JSON list of tract indices")
    f.add_argument("--alpha", type=_float_checked(positive=True), default=3.0)
    f.set_defaults(func=cmd_filter)

    m = sub.add_parser("map", parents=[g], help="map a source tract onto a target tractography")
    m.add_argument("--source-tract", required=True)
    m.add_argument("--target-full", required=True)
    m.add_argument("--target-tract", help="JSON list of target tract indices (enables the superset filter)")
    m.add_argument("--truth", help="ground-truth JSON, adds a recovery metric")
    m.add_argument("--alpha", type=_float_checked(positive=True), default=3.0)
    m.add_argument("--iterations", type=_int_at_least(0), default=1000)
    m.add_argument("--init", choices=("nn", "random"), default="nn")
    m.add_argument("--affine", help="4x4 affine applied to the source (JSON or text)")
    m.add_argument("--greedy-only", action="store_true",
                   help="accept only improving greedy re-mappings")
    m.set_defaults(func=cmd_map)

    e = sub.add_parser("eval", parents=[g], help="voxel overlap and recovery")
    e.add_argument("--tract-a", required=True)
    e.add_argument("--mapped-b", required=True)
    e.add_argument("--mapping", help="mapping.json written by 'map'")
    e.add_argument("--truth", help="ground-truth JSON")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("convert", parents=[g], help="convert between .trk and .json")
    c.add_argument("--in", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_convert)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, TrkParseError, SchemaError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"tractmap: error: {exc}", file=sys.stderr)
        return 2
    except (GeometryError, BudgetExceeded, ValueError, IndexError, OSError) as exc:
        print(f"tractmap: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
