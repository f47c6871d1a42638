"""Command line entry point.

Every subcommand validates its inputs, writes its outputs plus a run
manifest, and exits 0 on success, 2 on a validation error and 1 on a
runtime error. A manifest stores the fully resolved arguments and the
SHA-256 of each input and output, so ``porodiff replay`` can re-run the
command and confirm that the outputs are reproduced bit for bit.

Lengths are in voxels and permeability in voxel^2; multiply ``K`` by the
squared voxel size to obtain physical units.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .boundary import BoundaryGraph, BoundaryParams, boundary_graph_from_volume
from .decoder import DecoderConfig, decode
from .denoiser import AblationFlags, DenoiserConfig, Denoiser, load_checkpoint, save_checkpoint
from .diffusion import LossWeights, estimate_priors
from .errors import ConfigError, EmptyInput, FormatError, InsufficientVolume, IoFailure, PorodiffError
from .flow import permeability
from .pipeline import evaluate_set, parallel_map, reconstruct, sample_graphs, scaled_schedule
from .pore_graph import ExtractionConfig, PoreGraph, extract_pore_graph
from .sampler import SamplerConfig, graph_digest, masked_entry_count, sample_manifest, violation_count
from .synth import SynthConfig, extract_crop, generate, partition_blocks
from .training import TrainConfig, build_example, trace_csv, train
from .voxel import VoxelVolume, load_volume, save_volume

log = logging.getLogger("porodiff")

SCHEMA_VERSION = 1
RUN_MANIFEST = "run_manifest.json"
SPLITS = ("train", "val", "test")


class ValidationError(PorodiffError):
    """Bad command-line input; maps to exit status 2."""


# --- helpers -----------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"input file not found: {p}")
    return p


def _need_dir(path) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ValidationError(f"input directory not found: {p}")
    return p


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _outputs_of(out: Path) -> dict:
    """``{relative name: sha256}`` of a file output or of every file under a directory output."""
    if out.is_dir():
        return {
            str(p.relative_to(out)): _sha256(p)
            for p in sorted(out.rglob("*"))
            if p.is_file() and p.name != RUN_MANIFEST and not p.name.endswith(".run.json")
        }
    return {".": _sha256(out)}


def _manifest_path(out: Path) -> Path:
    return out / RUN_MANIFEST if out.is_dir() else out.with_name(out.name + ".run.json")


def _input_hashes(paths: dict) -> dict:
    out = {}
    for key, p in paths.items():
        p = Path(p)
        out[key] = _outputs_of(p) if p.is_dir() else _sha256(p)
    return out


def _parse_int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected a comma-separated list of integers, got {text!r}") from exc
    if not vals:
        raise ValidationError("empty integer list")
    return vals


def _load_graph(path) -> PoreGraph:
    try:
        return PoreGraph.from_json(_need_file(path).read_text())
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path} is not a pore-graph JSON: {exc}") from exc


def _load_gb(path) -> BoundaryGraph:
    try:
        return BoundaryGraph.from_json(_need_file(path).read_text())
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path} is not a boundary-graph JSON: {exc}") from exc


def _load_json(path) -> dict:
    try:
        return json.loads(_need_file(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc


def _volumes_in(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    files = sorted(_need_dir(path).glob("*.gtpv"))
    if not files:
        raise ValidationError(f"no .gtpv files in {path}")
    return files


# --- gen-data ------------------------------------------------------------------

DEFAULT_DATA = {
    "synth": SynthConfig(dims=(160, 160, 128)).to_dict(),
    "crop": 32,
    "counts": [64, 0, 16],
    "split_seed": 0,
}


def _data_config(args) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_DATA))
    if args.config:
        user = _load_json(args.config)
        unknown = set(user) - set(cfg)
        if unknown:
            raise ValidationError(f"unknown data-config keys {sorted(unknown)}")
        synth = dict(cfg["synth"])
        synth.update(user.pop("synth", {}))
        cfg.update(user)
        cfg["synth"] = synth
    if args.seed is not None:
        cfg["synth"]["seed"] = args.seed
    return cfg


def cmd_gen_data(args) -> dict:
    cfg = _data_config(args)
    synth = SynthConfig.from_dict(cfg["synth"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    parent = generate(synth)
    split = partition_blocks(parent.dims, cfg["crop"], cfg["counts"], cfg["split_seed"])
    save_volume(parent, out / "parent.gtpv")
    _write_text(out / "split.json", split.to_json() + "\n")
    _write_json(out / "data_config.json", cfg)
    jobs = [(name, k, origin) for name in SPLITS for k, origin in enumerate(getattr(split, name))]
    for name in SPLITS:
        (out / name).mkdir(exist_ok=True)

    def write(job):
        name, k, origin = job
        save_volume(extract_crop(parent, origin, split.crop_size), out / name / f"{k:04d}.gtpv")

    parallel_map(write, jobs, args.workers)
    return {"resolved": cfg, "inputs": {"config": args.config} if args.config else {}}


# --- extract / boundary --------------------------------------------------------

def cmd_extract(args) -> dict:
    v = load_volume(_need_file(args.input))
    cfg = ExtractionConfig(args.v_min, args.connectivity, args.n_max)
    g, _ = extract_pore_graph(v, cfg)
    _write_text(Path(args.out), g.to_json() + "\n")
    return {"resolved": {"v_min": cfg.v_min, "connectivity": cfg.connectivity, "n_max": cfg.n_max},
            "inputs": {"in": args.input}}


def _boundary_params(args) -> BoundaryParams:
    return BoundaryParams(tau_seg=args.tau_seg, tau_bt=args.tau_bt, k=args.k)


def cmd_boundary(args) -> dict:
    v = load_volume(_need_file(args.input))
    params = _boundary_params(args)
    gb = boundary_graph_from_volume(v, args.n_max, params)
    _write_text(Path(args.out), gb.to_json() + "\n")
    return {"resolved": {"n_max": args.n_max, "params": params.to_dict()}, "inputs": {"in": args.input}}


# --- train -------------------------------------------------------------------------

def cmd_train(args) -> dict:
    data = _need_dir(args.data)
    if args.T < 1 or args.epochs < 0 or args.n_max < 64 or args.n_max % 64:
        raise ValidationError("need T >= 1, epochs >= 0 and n_max a positive multiple of 64")
    files = sorted((data / "train").glob("*.gtpv")) if (data / "train").is_dir() else sorted(data.glob("*.gtpv"))
    if not files:
        raise ValidationError(f"no training volumes under {data}")
    if args.limit:
        files = files[: args.limit]
    extraction = ExtractionConfig(args.v_min, 6, args.n_max)
    boundary = BoundaryParams()
    examples = [build_example(load_volume(f), args.n_max, extraction, boundary) for f in files]
    pi_c, pi_e = estimate_priors([ex.target for ex in examples])
    schedule = scaled_schedule(args.T, pi_c, pi_e)
    dcfg = DenoiserConfig(d=args.d, n_blocks=args.n_blocks, n_heads=args.n_heads, n_freq=args.n_freq, seed=args.seed)
    flags = AblationFlags.ablation(args.ablate)
    model = Denoiser.create(dcfg, flags, schedule)
    tcfg = TrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed, n_vox=args.n_vox)
    result = train(examples, model, schedule, LossWeights(), tcfg,
                   log=lambda row: log.info("epoch %d total %.4f", row["epoch"], row["total"]))
    out = Path(args.out)
    extra = {"n_max": args.n_max, "extraction": {"v_min": args.v_min, "connectivity": 6}, "boundary": boundary.to_dict(),
             "train": tcfg.to_dict(), "n_examples": len(examples), "steps": result.steps}
    save_checkpoint(result.model, out, extra)
    _write_text(out / "loss_trace.csv", trace_csv(result.trace))
    return {"resolved": {**extra, "ablate": args.ablate, "T": args.T, "denoiser": dcfg.to_dict()},
            "inputs": {"data": args.data}}


# --- sample / decode -----------------------------------------------------------------

def _checkpoint(path) -> tuple[Denoiser, dict]:
    p = _need_dir(path)
    model = load_checkpoint(p)
    extra = json.loads((p / "manifest.json").read_text()).get("extra", {})
    return model, extra


def cmd_sample(args) -> dict:
    model, _ = _checkpoint(args.ckpt)
    gb = _load_gb(args.gb)
    if gb.n_max % 64:
        raise ValidationError("boundary graph n_max must be a multiple of 64")
    cfg = SamplerConfig(seed=args.seed, K=args.K, clamp=not args.no_clamp)
    graphs = sample_graphs(gb, model, cfg, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, g in enumerate(graphs):
        _write_text(out / f"sample_{k:03d}.json", g.to_json() + "\n")
    summary = sample_manifest(cfg, model.schedule, model.flags)
    summary["digests"] = [graph_digest(g) for g in graphs]
    _write_json(out / "samples.json", summary)
    return {"resolved": cfg.to_dict(), "inputs": {"ckpt": args.ckpt, "gb": args.gb}}


def _decoder_cfg(args) -> DecoderConfig:
    return DecoderConfig(w=args.w, c=args.c, theta=args.theta)


def cmd_decode(args) -> dict:
    g = _load_graph(args.graph)
    obs = load_volume(_need_file(args.obs))
    if tuple(g.dims) != obs.dims:
        raise ValidationError(f"graph dims {tuple(g.dims)} differ from observation dims {obs.dims}")
    cfg = _decoder_cfg(args)
    save_volume(decode(g, obs.bottom, obs.top, cfg, obs.dims), Path(args.out))
    return {"resolved": cfg.to_dict(), "inputs": {"graph": args.graph, "obs": args.obs}}


# --- eval / flow -------------------------------------------------------------------------

def cmd_eval(args) -> dict:
    ref = load_volume(_need_file(args.ref))
    rec_path = Path(args.rec)
    if not rec_path.exists():
        raise ValidationError(f"input not found: {rec_path}")
    recs = [load_volume(p) for p in _volumes_in(rec_path)]
    for r in recs:
        if r.dims != ref.dims:
            raise ValidationError(f"reconstruction dims {r.dims} differ from reference {ref.dims}")
    gb = _load_gb(args.gb) if args.gb else None
    graphs = None
    if gb is not None and rec_path.is_dir():
        files = sorted(rec_path.glob("sample_*.json"))
        graphs = [_load_graph(p) for p in files] or None
    report = evaluate_set(recs, ref, graphs, gb)
    report["files"] = [p.name for p in _volumes_in(rec_path)]
    _write_json(Path(args.out), report)
    inputs = {"rec": args.rec, "ref": args.ref}
    if args.gb:
        inputs["gb"] = args.gb
    return {"resolved": {}, "inputs": inputs}


def cmd_flow(args) -> dict:
    v = load_volume(_need_file(args.input))
    report = permeability(v, args.axis, c=args.c, mu=args.mu, dP=args.dp)
    _write_json(Path(args.out), report.to_dict())
    return {"resolved": {"axis": args.axis, "c": args.c, "mu": args.mu, "dp": args.dp}, "inputs": {"in": args.input}}


# --- gap sweep -------------------------------------------------------------------------

GAP_COLUMNS = ["M", "depth", "n_observed", "tpcf_kl", "tpcf_error", "psd_jsd", "gte", "K_rel_error",
               "disconnected_rate", "violation_rate"]


def cmd_gap_sweep(args) -> dict:
    ms = _parse_int_list(args.M)
    if min(ms) < 1:
        raise ValidationError("every M must be >= 1")
    model, extra = _checkpoint(args.ckpt)
    n_max = int(extra.get("n_max", 64))
    synth = dict(SynthConfig().to_dict())
    if args.config:
        synth.update(_load_json(args.config).get("synth", {}))
    synth["dims"] = [args.size, args.size, max(max(ms) + 2, 16)]
    if args.seed is not None:
        synth["seed"] = args.seed
    parent = generate(SynthConfig.from_dict(synth))
    cfg = SamplerConfig(seed=args.sample_seed, K=args.K)
    rows = []
    for M in ms:
        obs = VoxelVolume(parent.data[:, :, : M + 2])
        gb, graphs, vols = reconstruct(obs, model, n_max, cfg, workers=args.workers)
        rep = evaluate_set(vols, obs, graphs, gb)
        total = masked_entry_count(gb)
        viol = float(np.mean([violation_count(g, gb) / total if total else 0.0 for g in graphs]))
        m = rep["mean"]
        rows.append([M, M + 2, gb.n_observed, m["tpcf_kl"], m["tpcf_error"], m["psd_jsd"], m["gte"], m["K_rel_error"],
                     m["disconnected_rate"], viol])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GAP_COLUMNS)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    _write_text(out / "gap_sweep.csv", buf.getvalue())
    resolved = {"M": ms, "synth": synth, "n_max": n_max, "sampler": cfg.to_dict()}
    inputs = {"ckpt": args.ckpt}
    if args.config:
        inputs["config"] = args.config
    return {"resolved": resolved, "inputs": inputs}


# --- replay ----------------------------------------------------------------------------------

def cmd_replay(args) -> dict:
    manifest = _load_json(args.manifest)
    if manifest.get("schema_version") != SCHEMA_VERSION or "argv" not in manifest:
        raise ValidationError(f"{args.manifest} is not a run manifest")
    for key, recorded in manifest.get("input_hashes", {}).items():
        path = manifest["inputs"][key]
        if not Path(path).exists() or _input_hashes({key: path})[key] != recorded:
            raise ValidationError(f"input {key} ({path}) changed since the recorded run")
    argv = list(manifest["argv"])
    tmp = None
    if args.out:
        target = Path(args.out)
    else:
        tmp = Path(tempfile.mkdtemp(prefix="porodiff-replay-"))
        target = tmp / (Path(manifest["out"]).name or "out")
    idx = argv.index("--out")
    argv[idx + 1] = str(target)
    try:
        status = main(argv)
        if status != 0:
            raise RuntimeError(f"replayed command exited with status {status}")
        got = _outputs_of(target)
        want = manifest["outputs"]
        diff = sorted(k for k in set(got) | set(want) if got.get(k) != want.get(k))
    finally:
        if tmp is not None:
            shutil.rmtree(tmp, ignore_errors=True)
    if diff:
        print(f"replay MISMATCH in {len(diff)} output(s): {', '.join(diff)}")
        raise RuntimeError("replay did not reproduce the recorded outputs")
    print(f"replay OK: {len(want)} output(s) bit-identical")
    return {}


# --- parser ----------------------------------------------------------------------------------

def _decoder_flags(p):
    p.add_argument("--w", type=float, default=1.0, help="kernel softness (voxels)")
    p.add_argument("--c", type=float, default=0.7, help="throat radius factor")
    p.add_argument("--theta", type=float, default=0.5, help="binarization threshold")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="porodiff", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"porodiff {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthetic volumes and a block split")
    p.add_argument("--config", help="JSON with synth/crop/counts/split_seed")
    p.add_argument("--seed", type=int, help="override the synth seed")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("extract", help="pore-graph extraction")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--n-max", type=int, default=128)
    p.add_argument("--v-min", type=int, default=16)
    p.add_argument("--connectivity", type=int, choices=(6, 26), default=6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("boundary", help="boundary graph from the first and last z slices")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--n-max", type=int, default=64)
    p.add_argument("--tau-seg", type=float, default=0.5)
    p.add_argument("--tau-bt", type=float, default=0.5)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_boundary)

    p = sub.add_parser("train", help="train the denoiser")
    p.add_argument("--data", required=True)
    p.add_argument("--ablate", choices=("m1", "m2", "m3", "m4"))
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=int, default=50)
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--n-blocks", type=int, default=2)
    p.add_argument("--n-heads", type=int, default=2)
    p.add_argument("--n-freq", type=int, default=16)
    p.add_argument("--n-max", type=int, default=64)
    p.add_argument("--v-min", type=int, default=16)
    p.add_argument("--n-vox", type=int, default=1024)
    p.add_argument("--limit", type=int, default=0, help="use only the first N training crops")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="posterior pore graphs for a boundary graph")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--gb", required=True)
    p.add_argument("-K", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-clamp", action="store_true")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("decode", help="decode a graph and project the observed slices")
    p.add_argument("--graph", required=True)
    p.add_argument("--obs", required=True)
    _decoder_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="metrics and posterior diagnostics")
    p.add_argument("--rec", required=True, help="a .gtpv file or a directory of them")
    p.add_argument("--ref", required=True)
    p.add_argument("--gb", help="boundary graph, enables the violation rate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flow", help="pore-network permeability")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--c", type=float, default=0.7)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--dp", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("gap-sweep", help="reconstruction quality against interior thickness")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--M", required=True, help="comma-separated interior thicknesses")
    p.add_argument("--config", help="data config whose synth block is used")
    p.add_argument("--size", type=int, default=32, help="in-plane extent")
    p.add_argument("--seed", type=int)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("-K", type=int, default=1)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gap_sweep)

    p = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    p.add_argument("manifest")
    p.add_argument("--out", help="where to write the replayed outputs (default: a temporary directory)")
    p.set_defaults(func=cmd_replay)
    return ap


VALIDATION_ERRORS = (ValidationError, ConfigError, FormatError, InsufficientVolume, EmptyInput, ValueError)


def _resolve(path: str) -> str:
    return str(Path(path).resolve())


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        info = args.func(args)
        if args.command != "replay":
            _record(args, argv, info)
    except IoFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except VALIDATION_ERRORS as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def _record(args, argv, info: dict) -> None:
    out = Path(args.out)
    inputs = {k: _resolve(v) for k, v in info.get("inputs", {}).items()}
    # absolute paths keep the manifest valid wherever replay is invoked from
    abs_argv = list(argv)
    for flag in ("--in", "--data", "--ckpt", "--gb", "--graph", "--obs", "--rec", "--ref", "--config"):
        if flag in abs_argv:
            i = abs_argv.index(flag)
            abs_argv[i + 1] = _resolve(abs_argv[i + 1])
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "porodiff_version": __version__,
        "command": args.command,
        "argv": abs_argv,
        "out": _resolve(args.out),
        "resolved": info.get("resolved", {}),
        "inputs": inputs,
        "input_hashes": _input_hashes(inputs),
        "outputs": _outputs_of(out),
    }
    _write_json(_manifest_path(out), manifest)


if __name__ == "__main__":
    sys.exit(main())
