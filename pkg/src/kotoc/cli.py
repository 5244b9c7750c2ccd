"""Command-line orchestration: lattice, channel, steady, otoc, scan, export-mps and figure recipes.

Every output embeds a provenance block with the full resolved configuration. Passing such an
output file back through ``--config`` re-runs the same computation; explicit flags override
values from the file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .channel import build_channel, diagnose, gate_library, parse_gate_spec
from .errors import DegeneracyError, KotocError, SizeLimitError
from .freeprob import steady_state_prediction, steady_state_terms
from .markov import export_influence_mps, kotoc_transfer, kotoc_transfer_deflated, steady_state
from .montecarlo import McConfig, estimate, scan
from .multichain import kotoc_multichain
from .ncpart import kreweras, lattice
from .observables import MODES, from_files, generate
from .replica import Gate

EXIT_OK, EXIT_TOLERANCE, EXIT_INPUT = 0, 1, 2
HEADER_PREFIX = "# kotoc "
DEFAULT_GATE = "lib:haar_random?d_a=2&d_c=2&seed=0"
CROSS_TOL = 1e-10

DEFAULTS = {
    "lattice": {"k": 4},
    "channel": {"gate": DEFAULT_GATE, "validate": False},
    "steady": {"gate": DEFAULT_GATE, "k": 2, "obs": "random", "seed": 0, "eps": 1e-4, "identical": False,
               "a_file": None, "b_file": None, "validate": False},
    "otoc": {"gate": DEFAULT_GATE, "k": 2, "t_max": 10, "method": "multichain,transfer", "obs": "random-traceless",
             "seed": 0, "eps": 1e-4, "identical": False, "a_file": None, "b_file": None, "d_e": 16,
             "samples": 100, "mc_seed": 0, "validate": False},
    "scan": {"gate": DEFAULT_GATE, "k": 2, "t": 3, "obs": "random-traceless", "seed": 0, "eps": 1e-4,
             "identical": False, "a_file": None, "b_file": None, "d_e_list": "8,16,32,64", "samples": 200,
             "mc_seed": 0},
    "export-mps": {"k": 2, "t": 4, "d_c": 2},
    "recipe": {"name": "fig1", "d": None, "seed": 0, "t_max": 16, "k_max": None},
}


# ---------------------------------------------------------------------------
# config and provenance

def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def provenance(cfg: dict, **extra) -> dict:
    return {"tool": "kotoc", "version": __version__, "config_hash": config_hash(cfg), **extra}


def read_config(path) -> dict:
    """Config from a JSON document, a JSON output, or the header line of a CSV output."""
    text = Path(path).read_text()
    if text.startswith(HEADER_PREFIX):
        return json.loads(text.splitlines()[0][len(HEADER_PREFIX):])["config"]
    doc = json.loads(text)
    return doc["config"] if "config" in doc and "provenance" in doc else doc


def resolve(args: argparse.Namespace) -> dict:
    cmd = args.cmd
    cfg = dict(DEFAULTS[cmd])
    if getattr(args, "config", None):
        loaded = read_config(args.config)
        if loaded.get("cmd", cmd) != cmd:
            raise KotocError(f"config is for '{loaded.get('cmd')}', not '{cmd}'")
        cfg.update({k: v for k, v in loaded.items() if k in cfg})
    cfg.update({k: v for k, v in vars(args).items() if k in cfg})
    cfg["cmd"] = cmd
    return cfg


def threads_from(args) -> int:
    if getattr(args, "threads", None):
        return int(args.threads)
    env = os.environ.get("OTOC_THREADS")
    return int(env) if env else 1


def fmt(x: float) -> str:
    return repr(float(x))


def write_csv(path, cfg: dict, prov: dict, header: list, rows: list) -> str:
    buf = io.StringIO()
    buf.write(HEADER_PREFIX + json.dumps({"provenance": prov, "config": cfg}, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return _emit(path, buf.getvalue())


def write_json(path, cfg: dict, prov: dict, body: dict) -> str:
    doc = {"provenance": prov, "config": cfg, **body}
    return _emit(path, json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"not serializable: {type(x)}")


def _emit(path, text: str) -> str:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)
    return text


def read_csv(path) -> tuple[dict, list[dict]]:
    """Parse a CSV output into (header block, rows as dicts of strings)."""
    lines = Path(path).read_text().splitlines()
    head = json.loads(lines[0][len(HEADER_PREFIX):])
    return head, list(csv.DictReader(lines[1:]))


# ---------------------------------------------------------------------------
# shared pieces

def load_gate_spec(spec: str) -> Gate:
    return parse_gate_spec(spec)


def observables_for(cfg: dict, gate: Gate, k: int):
    if cfg.get("a_file") or cfg.get("b_file"):
        if not (cfg.get("a_file") and cfg.get("b_file")):
            raise KotocError("--a-file and --b-file must be given together")
        return from_files(cfg["a_file"].split(","), cfg["b_file"].split(","), k)
    return generate(cfg["obs"], gate, k, seed=int(cfg["seed"]), eps=float(cfg["eps"]),
                    identical=bool(cfg["identical"]))


def series(method: str, gate: Gate, a, b, k: int, t_max: int, threads: int):
    if method == "multichain":
        return kotoc_multichain(gate, a, b, k, t_max, threads=threads).values
    if method == "transfer":
        return kotoc_transfer(gate, a, b, k, t_max, threads=threads).values
    if method == "deflated":
        return kotoc_transfer_deflated(gate, a, b, k, t_max, threads=threads).values
    raise KotocError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# subcommands

def cmd_lattice(cfg, args) -> int:
    k = int(cfg["k"])
    lat = lattice(k)
    parts = [{"blocks": p.to_json(), "text": str(p), "rank": p.rank, "kreweras": str(kreweras(p))}
             for p in lat.elements]
    body = {"k": k, "size": len(lat), "partitions": parts, "comparable_pairs": len(lat.pairs())}
    write_json(args.out, cfg, provenance(cfg), body)
    return EXIT_OK


def cmd_channel(cfg, args) -> int:
    gate = load_gate_spec(cfg["gate"])
    dg = diagnose(gate)
    checks = build_channel(gate).check()
    body = {"diagnostics": dg.to_json(), "checks": checks}
    write_json(args.out, cfg, provenance(cfg, gate_hash=gate.fingerprint), body)
    if cfg["validate"] and not checks["ok"]:
        print("channel checks exceed tolerance", file=sys.stderr)
        return EXIT_TOLERANCE
    return EXIT_OK


def cmd_steady(cfg, args) -> int:
    gate = load_gate_spec(cfg["gate"])
    k = int(cfg["k"])
    a, b = observables_for(cfg, gate, k)
    proj = steady_state(gate, a, b, k)
    pred = steady_state_prediction(k, a, b)
    terms = {str(s): v for s, v in steady_state_terms(k, a, b).items()}
    diff = abs(proj - pred)
    body = {"projector": proj, "free_probability": pred, "difference": diff, "terms": terms}
    write_json(args.out, cfg, provenance(cfg, gate_hash=gate.fingerprint), body)
    if cfg["validate"] and diff > 1e-12 * max(1.0, abs(pred)):
        print(f"steady-state mismatch {diff:.3e}", file=sys.stderr)
        return EXIT_TOLERANCE
    return EXIT_OK


def cmd_otoc(cfg, args) -> int:
    gate = load_gate_spec(cfg["gate"])
    k, t_max = int(cfg["k"]), int(cfg["t_max"])
    a, b = observables_for(cfg, gate, k)
    methods = [m.strip() for m in cfg["method"].split(",") if m.strip()]
    threads = threads_from(args)
    if "montecarlo" in methods:
        if len(methods) > 1:
            raise KotocError("montecarlo cannot be combined with other methods in one table")
        mc = McConfig(gate.d_a, gate.d_c, int(cfg["d_e"]), k, t_max, int(cfg["samples"]), int(cfg["mc_seed"]))
        est = estimate(mc, gate, a, b, threads=threads)
        rows = [[t, est.mean[t].real, est.mean[t].imag, float(est.stderr[t]), float(est.variance[t]),
                 mc.d_e, mc.n_samples, mc.base_seed] for t in range(t_max + 1)]
        header = ["t", "mean_re", "mean_im", "stderr", "variance", "d_e", "samples", "seed"]
        write_csv(args.out, cfg, provenance(cfg, gate_hash=gate.fingerprint), header, rows)
        return EXIT_OK
    vals = {m: series(m, gate, a, b, k, t_max, threads) for m in methods}
    header = ["t"] + [f"{m}_{part}" for m in methods for part in ("re", "im")]
    rows = [[t] + [x for m in methods for x in (vals[m][t].real, vals[m][t].imag)] for t in range(t_max + 1)]
    lam = diagnose(gate).lambda_sub
    write_csv(args.out, cfg, provenance(cfg, gate_hash=gate.fingerprint, lambda_abs=abs(lam)), header, rows)
    if cfg["validate"] and len(methods) > 1:
        ref = vals[methods[0]]
        scale = max(np.max(np.abs(ref)), 1e-300)
        worst = max(np.max(np.abs(vals[m] - ref)) / scale for m in methods[1:])
        if worst > CROSS_TOL:
            print(f"methods disagree: relative deviation {worst:.3e}", file=sys.stderr)
            return EXIT_TOLERANCE
    return EXIT_OK


def cmd_scan(cfg, args) -> int:
    gate = load_gate_spec(cfg["gate"])
    k, t = int(cfg["k"]), int(cfg["t"])
    a, b = observables_for(cfg, gate, k)
    d_e_list = [int(x) for x in str(cfg["d_e_list"]).split(",")]
    ref = kotoc_multichain(gate, a, b, k, t).values[t]
    base = McConfig(gate.d_a, gate.d_c, d_e_list[0], k, t, int(cfg["samples"]), int(cfg["mc_seed"]))
    res = scan(base, d_e_list, gate, a, b, ref, t, threads=threads_from(args))
    prov = provenance(cfg, gate_hash=gate.fingerprint, reference=[ref.real, ref.imag],
                      deviation_slope=res.deviation_slope, variance_slope=res.variance_slope,
                      variance_prefactor=res.variance_prefactor)
    header = ["d_e", "mean_re", "mean_im", "stderr", "variance", "deviation"]
    rows = [[r[h] for h in header] for r in res.rows()]
    write_csv(args.out, cfg, prov, header, rows)
    return EXIT_OK


def cmd_export_mps(cfg, args) -> int:
    if not args.out or args.out == "-":
        raise KotocError("export-mps needs --out FILE")
    export_influence_mps(int(cfg["k"]), int(cfg["d_c"]), int(cfg["t"]), args.out)
    return EXIT_OK


def _recipe_gate(d: int, seed: int) -> tuple[Gate, int]:
    """First Haar gate from ``seed`` on with a real, nondegenerate subleading eigenvalue."""
    for s in range(seed, seed + 200):
        g = gate_library("haar_random", {"d_a": d, "d_c": d, "seed": s})
        dg = diagnose(g)
        lam = dg.lambda_sub
        if dg.ergodicity_class != "ergodic-mixing" or abs(lam.imag) > 1e-9:
            continue
        if np.sum(np.abs(np.array(dg.eigenvalues) - lam) < 1e-8) == 1:
            return g, s
    raise DegeneracyError("no gate with a real nondegenerate subleading eigenvalue in 200 seeds")


def _deep_series(gate, a, b, k, t_max, threads) -> tuple[np.ndarray, str]:
    """Deflated evolution when the spectral basis fits in memory, plain transfer otherwise."""
    try:
        return kotoc_transfer_deflated(gate, a, b, k, t_max, threads=threads).values, "deflated"
    except (SizeLimitError, DegeneracyError):
        return kotoc_transfer(gate, a, b, k, t_max, threads=threads).values, "transfer"


def cmd_recipe(cfg, args) -> int:
    name = cfg["name"]
    d = int(cfg["d"] or (2 if name == "fig2" else 3))
    gate, gseed = _recipe_gate(d, int(cfg["seed"]))
    lam = diagnose(gate).lambda_sub.real
    t_max = int(cfg["t_max"])
    threads = threads_from(args)
    cols, used = {}, {}
    if name in ("fig1", "fig2"):
        k_max = int(cfg["k_max"] or 4)
        for k in range(1, k_max + 1):
            for mode in ("eigenoperator", "random-traceless"):
                a, b = generate(mode, gate, k, seed=int(cfg["seed"]), identical=(name == "fig2"))
                key = f"k{k}_{mode}"
                cols[key], used[key] = _deep_series(gate, a, b, k, t_max, threads)
    elif name == "fig3":
        for k, eps in ((2, 1e-4), (3, 1e-5)):
            for e in (eps, 0.0):
                a, b = generate("eigen-plus-identity", gate, k, eps=e)
                key = f"k{k}_eps{e:g}"
                cols[key], used[key] = _deep_series(gate, a, b, k, t_max, threads)
    else:
        raise KotocError(f"unknown recipe {name!r}")
    header = ["t"] + [f"{c}_{p}" for c in cols for p in ("re", "im")]
    rows = [[t] + [x for c in cols for x in (cols[c][t].real, cols[c][t].imag)] for t in range(t_max + 1)]
    prov = provenance(cfg, gate_hash=gate.fingerprint, gate_seed=gseed, d=d, **{"lambda": lam},
                      methods=used)
    write_csv(args.out, cfg, prov, header, rows)
    return EXIT_OK


COMMANDS = {"lattice": cmd_lattice, "channel": cmd_channel, "steady": cmd_steady, "otoc": cmd_otoc,
            "scan": cmd_scan, "export-mps": cmd_export_mps, "recipe": cmd_recipe}


# ---------------------------------------------------------------------------
# parser

def _bool(parser, *names, help=None):
    parser.add_argument(*names, action="store_true", default=argparse.SUPPRESS, help=help)


def _observable_args(p):
    p.add_argument("--obs", choices=MODES, default=argparse.SUPPRESS, help="observable generation mode")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for random observables")
    p.add_argument("--eps", type=float, default=argparse.SUPPRESS, help="identity shift for eigen-plus-identity")
    _bool(p, "--identical", help="repeat one random a and one random b on every replica")
    p.add_argument("--a-file", dest="a_file", default=argparse.SUPPRESS, help="comma-separated observable JSON files")
    p.add_argument("--b-file", dest="b_file", default=argparse.SUPPRESS, help="comma-separated observable JSON files")


def build_parser() -> argparse.ArgumentParser:
    sup = argparse.SUPPRESS
    top = argparse.ArgumentParser(prog="kotoc", description="Averaged k-OTOCs in a minimal chaotic circuit model.")
    top.add_argument("--version", action="version", version=f"kotoc {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config or a previous output file")
    common.add_argument("--out", default=None, help="output path (default: stdout)")
    common.add_argument("--threads", type=int, default=None, help="worker threads (fallback: OTOC_THREADS)")
    sub = top.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("lattice", parents=[common], help="noncrossing partition lattice NC(k)")
    p.add_argument("--k", type=int, default=sup)

    p = sub.add_parser("channel", parents=[common], help="channel diagnostics of a gate")
    p.add_argument("--gate", default=sup, help="file:<path> or lib:<name>?key=value&...")
    _bool(p, "--validate", help="exit 1 if channel checks fail")

    p = sub.add_parser("steady", parents=[common], help="steady-state value from projector and free cumulants")
    p.add_argument("--gate", default=sup)
    p.add_argument("--k", type=int, default=sup)
    _observable_args(p)
    _bool(p, "--validate", help="exit 1 if the two formulas disagree")

    p = sub.add_parser("otoc", parents=[common], help="k-OTOC time series")
    p.add_argument("--gate", default=sup)
    p.add_argument("--k", type=int, default=sup)
    p.add_argument("--t-max", dest="t_max", type=int, default=sup)
    p.add_argument("--method", default=sup, help="comma list of multichain, transfer, deflated, montecarlo")
    _observable_args(p)
    p.add_argument("--d-e", dest="d_e", type=int, default=sup, help="bath dimension for montecarlo")
    p.add_argument("--samples", type=int, default=sup)
    p.add_argument("--mc-seed", dest="mc_seed", type=int, default=sup)
    _bool(p, "--validate", help="exit 1 if methods disagree beyond 1e-10 relative")

    p = sub.add_parser("scan", parents=[common], help="Monte Carlo convergence scan over bath dimensions")
    p.add_argument("--gate", default=sup)
    p.add_argument("--k", type=int, default=sup)
    p.add_argument("--t", type=int, default=sup)
    _observable_args(p)
    p.add_argument("--d-e-list", dest="d_e_list", default=sup)
    p.add_argument("--samples", type=int, default=sup)
    p.add_argument("--mc-seed", dest="mc_seed", type=int, default=sup)

    p = sub.add_parser("export-mps", parents=[common], help="influence-matrix MPS tensors")
    p.add_argument("--k", type=int, default=sup)
    p.add_argument("--t", type=int, default=sup)
    p.add_argument("--d-c", dest="d_c", type=int, default=sup)

    p = sub.add_parser("recipe", parents=[common], help="figure data: fig1, fig2 or fig3")
    p.add_argument("name", choices=["fig1", "fig2", "fig3"])
    p.add_argument("--d", type=int, default=sup)
    p.add_argument("--seed", type=int, default=sup)
    p.add_argument("--t-max", dest="t_max", type=int, default=sup)
    p.add_argument("--k-max", dest="k_max", type=int, default=sup)
    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        return COMMANDS[args.cmd](cfg, args)
    except (KotocError, ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
