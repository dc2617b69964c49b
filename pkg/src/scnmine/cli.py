"""Command-line entry point: ``scnmine <subcommand> ...``.

Subcommands compose the library operations::

    gen     write a scripted recording (tracks, map, ground truth, script)
    ingest  normalize a raw tracks CSV
    slice   cut every ego's lifetime into atom scenarios (JSON lines)
    stats   interactive-count / duration histograms and filtering totals
    dist    Graph-DTW distance between two scenarios
    matrix  pairwise distance matrix for one interaction type
    label   DBSCAN / MDS / KDE labeling with TTC and vector-DTW references
    venn    the seven Venn region counts of a label report
    export  plot-ready CSV files

Errors go to stderr as one JSON object; usage errors exit with 2, every
other failure with 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import synthgen
from .config import PipelineConfig
from .errors import IoError, ScnError, UsageError
from .graph_dtw import dtw, frame_distance_matrix
from .ingest import IngestConfig, load_tracks, validate, write_tracks
from .labeling import NOISE, DistanceMatrix, compare_sets, label_matrix, pairwise_distances, reference_flags
from .roadmap import parse_road_map, write_road_map
from .slicing import InteractionType, read_atoms, segment_stats, slice_all, write_atoms


def _dumps(obj):
    return json.dumps(_finite(obj), sort_keys=True, separators=(",", ":"))


def _finite(obj):
    """Replace non-finite floats by ``None`` so the output is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def _write_text(path, text):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from None


def _emit(obj, out=None):
    text = _dumps(obj) + "\n"
    if out:
        _write_text(out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def _gen_spec(args):
    t, seed = args.template, args.seed
    if t == "follow":
        return synthgen.follow_script(seed, noise=args.noise)
    if t == "three_phase":
        return synthgen.concat_specs([synthgen.three_phase_script(seed + i, noise=args.noise) for i in range(args.n)],
                                     label="three_phase")
    if t == "merge":
        return synthgen.merge_script(seed, noise=args.noise)
    if t == "crossing":
        return synthgen.crossing_script(seed, noise=args.noise)
    if t == "cut_in":
        return synthgen.cut_in_script(seed, args.kind, noise=args.noise)
    if t == "stream":
        return synthgen.stream_script(n_vehicles=args.vehicles, n_frames=args.frames, seed=seed)
    if t == "filter":
        return synthgen.concat_specs(synthgen.filter_corpus(args.n, seed), label="filter")
    if t == "risk":
        specs, _ = synthgen.risk_corpus(args.n_normal, args.n_low_ttc, args.n_right_of_way, seed)
        return synthgen.concat_specs(specs, label="risk")
    raise UsageError(f"unknown template {t!r}")  # pragma: no cover - argparse restricts choices


def cmd_gen(args, cfg):
    spec = _gen_spec(args)
    ts, rm, gt = synthgen.generate(spec)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_tracks(ts, out / "tracks.csv", IngestConfig(dt=ts.dt))
        write_road_map(rm, out / "map.json")
    except OSError as exc:
        raise IoError(f"cannot write to {out}: {exc.strerror}") from None
    _write_text(out / "truth.json", json.dumps(gt.to_dict(), sort_keys=True, indent=1) + "\n")
    _write_text(out / "spec.json", spec.to_json() + "\n")
    _emit({"out": str(out), "vehicles": len(ts), "egos": gt.egos, "planted": gt.planted, "dt": ts.dt})
    return 0


# ---------------------------------------------------------------------------
# ingest / slice / stats
# ---------------------------------------------------------------------------

def _read_tracks(path, cfg):
    if not Path(path).exists():
        raise IoError(f"no such file: {path}")
    return load_tracks(path, cfg)


def _read_map(path, cfg):
    if not Path(path).exists():
        raise IoError(f"no such file: {path}")
    return parse_road_map(path, cfg.ingest.node_interval)


def cmd_ingest(args, cfg):
    ts = _read_tracks(args.tracks, cfg.ingest)
    try:
        write_tracks(ts, args.out, IngestConfig(dt=ts.dt))
    except OSError as exc:
        raise IoError(f"cannot write {args.out}: {exc.strerror}") from None
    summary = {"out": args.out, "vehicles": len(ts), "dt": ts.dt}
    if args.map:
        report = validate(ts, _read_map(args.map, cfg))
        kinds = {}
        for f in report.findings:
            kinds[f.kind] = kinds.get(f.kind, 0) + 1
        summary["findings"] = kinds
    _emit(summary)
    return 0


def cmd_slice(args, cfg):
    ts = _read_tracks(args.tracks, cfg.ingest)
    rm = _read_map(args.map, cfg)
    egos = args.egos.split(",") if args.egos else None
    atoms = slice_all(ts, rm, cfg.slice, egos=egos, threads=cfg.worker_count())
    norm = f"{args.out}.tracks.csv"
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_tracks(ts, norm, IngestConfig(dt=ts.dt))
        write_atoms(atoms, args.out, norm, args.map)
    except OSError as exc:
        raise IoError(f"cannot write {args.out}: {exc.strerror}") from None
    _emit({"out": args.out, "segments": len(atoms), "egos": len({a.ego_id for a in atoms})})
    return 0


def _load_atoms(path, load_source=True):
    if not Path(path).exists():
        raise IoError(f"no such file: {path}")
    return read_atoms(path, load_source=load_source)


def cmd_stats(args, cfg):
    atoms = _load_atoms(args.atoms, load_source=False)
    _emit(segment_stats(atoms, args.bin_width).to_dict(), args.out)
    return 0


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def _by_id(atoms, sid):
    for a in atoms:
        if str(a.scenario_id) == str(sid):
            return a
    raise UsageError(f"no scenario with id {sid}")


def cmd_dist(args, cfg):
    atoms = _load_atoms(args.atoms)
    a, b = _by_id(atoms, args.a), _by_id(atoms, args.b)
    dcfg = cfg.dtw_config
    fm = frame_distance_matrix(a, b, dcfg)
    res = dtw(fm)
    _emit({"a_id": a.scenario_id, "b_id": b.scenario_id, "normalized": res.normalized, "M": fm.M, "N": fm.N,
           "W": fm.window, "a_type": a.itype.snake, "b_type": b.itype.snake})
    return 0


def _select(atoms, itype):
    t = InteractionType.parse(itype)
    return [a for a in atoms if a.itype == t]


def cmd_matrix(args, cfg):
    atoms = _select(_load_atoms(args.atoms), args.type)
    m = pairwise_distances(atoms, cfg.dtw_config, cfg.worker_count())
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        m.to_csv(args.out)
    except OSError as exc:
        raise IoError(f"cannot write {args.out}: {exc.strerror}") from None
    base = Path(args.out).resolve().parent
    meta = {"atoms": os.path.relpath(Path(args.atoms).resolve(), base), "itype": InteractionType.parse(args.type).snake,
            "ids": m.ids, "dtw": cfg.to_dict()["dtw"], "metric": cfg.to_dict()["metric"]}
    _write_text(f"{args.out}.meta.json", json.dumps(meta, sort_keys=True, indent=1) + "\n")
    _emit({"out": args.out, "n": len(m), "itype": meta["itype"]})
    return 0


# ---------------------------------------------------------------------------
# labeling
# ---------------------------------------------------------------------------

def _reference_flags(meta_path, ids, cfg):
    """TTC and vector-DTW flags for the matrix scenarios, if the sidecar names the atom store."""
    if not Path(meta_path).exists():
        return None, None
    meta = json.loads(Path(meta_path).read_text(encoding="utf-8"))
    atoms_path = Path(meta_path).resolve().parent / meta["atoms"]
    atoms = _load_atoms(atoms_path)
    index = {a.scenario_id: a for a in atoms}
    try:
        sel = [index[i] for i in ids]
    except KeyError as exc:
        raise IoError(f"scenario {exc.args[0]} of the matrix is missing from {atoms_path}") from None
    extra, ttcs, _ = reference_flags(sel, cfg.label, cfg.dtw_config, cfg.worker_count())
    return extra, ttcs


def cmd_label(args, cfg):
    if not Path(args.matrix).exists():
        raise IoError(f"no such file: {args.matrix}")
    m = DistanceMatrix.from_csv(args.matrix)
    meta_path = f"{args.matrix}.meta.json"
    extra, ttcs = (None, None) if args.no_reference else _reference_flags(meta_path, m.ids, cfg)
    report = label_matrix(m, cfg.label, extra)
    report.min_ttc = ttcs
    if Path(meta_path).exists():
        report.itype = json.loads(Path(meta_path).read_text(encoding="utf-8")).get("itype")
    text = _dumps(report.to_dict()) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    if args.coords:
        _write_text(args.coords, report.coords_csv())
    return 0


def _read_report(path):
    if not Path(path).exists():
        raise IoError(f"no such file: {path}")
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IoError(f"{path}: invalid JSON ({exc})") from None


def cmd_venn(args, cfg):
    rep = _read_report(args.report)
    flags = {k: {} for k in ("graph_dtw", "ttc", "vector_dtw")}
    for s in rep["scenarios"]:
        for k in flags:
            flags[k][s["id"]] = bool(s["metric_flags"].get(f"{k}_extreme", False))
    v = compare_sets(flags)
    _emit({"regions": v["regions"], "union": v["union"], "graph_dtw_only_fraction": v["graph_dtw_only_fraction"]})
    return 0


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def _csv_text(header, rows):
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(repr(x) if isinstance(x, float) else str(x) for x in r))
    return "\n".join(lines) + "\n"


def export_plotdata(report, out_dir, atoms=None, bin_width=1.0):
    """Write plot-ready CSV files and return their paths.

    ``report`` is a label-report dict (or ``None``); ``atoms`` supplies the
    segment statistics. Files: ``scatter.csv``, ``count_hist.csv``,
    ``duration_hist.csv``, ``durations.csv`` and ``filtering.csv``.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc.strerror}") from None
    scen = report.get("scenarios", []) if report else []
    scatter = [(s["id"], float(s["x"]), float(s["y"]), float(s["density"]),
                NOISE if s["cluster"] == "NOISE" else s["cluster"],
                int(s["metric_flags"].get("graph_dtw_extreme", False)),
                int(s["metric_flags"].get("ttc_extreme", False)),
                int(s["metric_flags"].get("vector_dtw_extreme", False))) for s in scen]
    atoms = list(atoms or [])
    st = segment_stats(atoms, bin_width)
    files = {
        "scatter.csv": _csv_text(["id", "x", "y", "density", "cluster", "graph_dtw_extreme", "ttc_extreme",
                                  "vector_dtw_extreme"], scatter),
        "count_hist.csv": _csv_text(["interactive_count", "segments"], list(st.count_hist.items())),
        "duration_hist.csv": _csv_text(["duration_bin_s", "segments"],
                                       [(float(k), v) for k, v in st.duration_hist.items()]),
        "durations.csv": _csv_text(["scenario_id", "ego_id", "itype", "duration_s", "interactive"],
                                   [(a.scenario_id, a.ego_id, a.itype.snake, float(a.duration), len(a.records))
                                    for a in atoms]),
        "filtering.csv": _csv_text(["searched", "interactive", "filtered", "filtered_proportion"],
                                   [(st.searched, st.interactive, st.filtered, float(st.filtered_proportion))]
                                   if atoms else []),
    }
    paths = []
    for name, text in files.items():
        _write_text(out / name, text)
        paths.append(str(out / name))
    return paths


def cmd_export(args, cfg):
    report = _read_report(args.report) if args.report else None
    atoms = _load_atoms(args.atoms, load_source=False) if args.atoms else []
    paths = export_plotdata(report, args.out, atoms, args.bin_width)
    _emit({"files": paths})
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="scnmine", description="Interaction scenario mining pipeline.")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    p.add_argument("-v", "--verbose", action="store_true", help="log skipped pairs and other warnings to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", dest="sub_config", help="pipeline config JSON")
        return sp

    g = add("gen", "write a scripted recording")
    g.add_argument("--template", required=True,
                   choices=["follow", "three_phase", "merge", "crossing", "cut_in", "stream", "filter", "risk"])
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--n", type=int, default=20, help="scripts in a corpus template")
    g.add_argument("--kind", default="normal", choices=["normal", "low_ttc", "right_of_way"])
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--vehicles", type=int, default=30)
    g.add_argument("--frames", type=int, default=10000)
    g.add_argument("--n-normal", type=int, default=50)
    g.add_argument("--n-low-ttc", type=int, default=5)
    g.add_argument("--n-right-of-way", type=int, default=5)

    i = add("ingest", "normalize a raw tracks CSV")
    i.add_argument("--tracks", required=True)
    i.add_argument("--map")
    i.add_argument("--out", required=True)

    s = add("slice", "slice tracks into atom scenarios")
    s.add_argument("--tracks", required=True)
    s.add_argument("--map", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--egos", help="comma-separated ego ids (default: all)")

    st = add("stats", "segment statistics")
    st.add_argument("--atoms", required=True)
    st.add_argument("--bin-width", type=float, default=1.0)
    st.add_argument("--out")

    d = add("dist", "distance between two scenarios")
    d.add_argument("--atoms", required=True)
    d.add_argument("--a", required=True)
    d.add_argument("--b", required=True)

    m = add("matrix", "pairwise distances for one interaction type")
    m.add_argument("--atoms", required=True)
    m.add_argument("--type", required=True)
    m.add_argument("--out", required=True)

    lb = add("label", "label extreme scenarios from a distance matrix")
    lb.add_argument("--matrix", required=True)
    lb.add_argument("--out")
    lb.add_argument("--coords", help="coordinates CSV")
    lb.add_argument("--no-reference", action="store_true", help="skip the TTC and vector-DTW references")

    v = add("venn", "Venn region counts of a label report")
    v.add_argument("--report", required=True)

    e = add("export", "plot-ready CSV files")
    e.add_argument("--report")
    e.add_argument("--atoms")
    e.add_argument("--out", required=True)
    e.add_argument("--bin-width", type=float, default=1.0)
    return p


COMMANDS = {
    "gen": cmd_gen, "ingest": cmd_ingest, "slice": cmd_slice, "stats": cmd_stats, "dist": cmd_dist,
    "matrix": cmd_matrix, "label": cmd_label, "venn": cmd_venn, "export": cmd_export,
}


def run(argv=None):
    """Run one command; returns the exit code (0 ok, 1 failure, 2 usage)."""
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
        cfg = PipelineConfig.load(getattr(args, "sub_config", None) or args.config)
        if args.print_config:
            sys.stdout.write(cfg.to_json())
            return 0
        if not args.command:
            raise UsageError("a subcommand is required")
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        sys.stderr.write(_dumps(exc.to_json()) + "\n")
        return 2
    except ScnError as exc:
        sys.stderr.write(_dumps(exc.to_json()) + "\n")
        return 1
    except (OSError, ValueError, KeyError) as exc:
        sys.stderr.write(_dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
