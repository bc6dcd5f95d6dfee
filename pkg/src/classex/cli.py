"""Command-line interface: ``classex {ata,extrapolate,kde,simulate,moments}``.

Options can also come from a ``key = value`` config file given with
``--config``; explicit flags win.  Every output file starts with a comment
header recording the tool version, a hash of the resolved configuration
and the seed.  Exit codes: 0 success, 1 numerical failure, 2 input or
configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .basis import DEFAULT_H_GRID, QuadratureError, candidate_bases, moments, monomial_basis, write_moments
from .extrapolator import ExtrapolationConfig, extrapolate_pipeline
from .kde import BandwidthError, KdeConfig, kde_curve
from .ranks import ScoreFormatError, TieBreakConfig, compute_ranks, histogram, ingest_scores, read_rank_file
from .simulator import METHODS, StudyConfig, run_study
from .subsample import AccuracyCurve, CurvePoint, ata_curve, format_float, write_curve

EXIT_OK, EXIT_NUMERICAL, EXIT_INPUT = 0, 1, 2

# options that never influence results and so stay out of the config hash
_UNHASHED = {"threads", "out_dir", "config", "command"}


class ConfigError(ValueError):
    pass


def parse_int_list(text) -> list:
    """``"2,5,10"``, ``"2-10"`` or a mix of both."""
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def parse_float_list(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(p) for p in str(text).split(",") if p.strip()]


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split(sep, 1))
        out[key.replace("-", "_")] = value
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out-dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="classex", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"classex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ata", help="average test accuracy curve from a score or rank file")
    _common(p)
    p.add_argument("--scores")
    p.add_argument("--ranks")
    p.add_argument("--ks", help="subset sizes, e.g. 2-10 or 2,5,10 (default 2..k1)")
    p.add_argument("--tie-eps", type=float)

    p = sub.add_parser("extrapolate", help="ClassExReg extrapolation to larger label sets")
    _common(p)
    p.add_argument("--scores")
    p.add_argument("--k2", help="target sizes, e.g. 1000,2000")
    p.add_argument("--h-grid", help="radial bandwidths, e.g. 0.1,0.2,0.5")
    p.add_argument("--resamples", type=int)
    p.add_argument("--with-replacement", action="store_const", const="true")
    p.add_argument("--tie-eps", type=float)

    p = sub.add_parser("kde", help="kernel-density extrapolation baseline")
    _common(p)
    p.add_argument("--scores")
    p.add_argument("--k2")
    p.add_argument("--rule", choices=["ucv", "bcv", "fixed"])
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--pool", choices=["observation", "class"])
    p.add_argument("--tie-eps", type=float)

    p = sub.add_parser("simulate", help="Gaussian-mixture simulation study")
    _common(p)
    p.add_argument("--k1", type=int)
    p.add_argument("--k2")
    p.add_argument("--sigmas")
    p.add_argument("--replicates", type=int)
    p.add_argument("--methods")
    p.add_argument("--dim", type=int)
    p.add_argument("--r-test", type=int)
    p.add_argument("--score", choices=["sqdist", "dist"])
    p.add_argument("--h-grid")
    p.add_argument("--resamples", type=int)
    p.add_argument("--bootstrap", type=int)

    p = sub.add_parser("moments", help="export basis moment constants for audit")
    _common(p)
    p.add_argument("--basis", choices=["radial", "monomial"])
    p.add_argument("--h-grid")
    p.add_argument("--powers")
    p.add_argument("--r", type=int)
    p.add_argument("--k1", type=int)
    p.add_argument("--ks")
    return parser


DEFAULTS = {
    "common": {"seed": 0, "threads": 1, "out_dir": "."},
    "ata": {"tie_eps": 1e-9},
    "extrapolate": {"h_grid": ",".join(str(h) for h in DEFAULT_H_GRID), "resamples": 20,
                    "with_replacement": "false", "tie_eps": 1e-9, "k2": ""},
    "kde": {"rule": "ucv", "pool": "observation", "tie_eps": 1e-9},
    "simulate": {"dim": 10, "r_test": 1, "score": "sqdist", "resamples": 20, "bootstrap": 1000,
                 "methods": ",".join(METHODS), "h_grid": ",".join(str(h) for h in DEFAULT_H_GRID)},
    "moments": {"basis": "radial", "h_grid": "0.5", "r": 1, "powers": "1,2"},
}


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags, in increasing precedence."""
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS.get(args.command, {}))
    if args.config:
        cfg.update(read_config_file(args.config))
    for key, value in vars(args).items():
        if value is not None and key not in ("config",):
            cfg[key] = value
    cfg["command"] = args.command
    return cfg


def _truthy(v) -> bool:
    return str(v).strip().lower() in ("1", "true", "yes", "on")


def header_lines(cfg: dict) -> list:
    hashed = {k: str(v) for k, v in sorted(cfg.items()) if k not in _UNHASHED}
    blob = json.dumps({"command": cfg["command"], **hashed}, sort_keys=True)
    digest = hashlib.sha256(blob.encode()).hexdigest()[:16]
    return [f"classex {__version__}", f"command={cfg['command']}", f"config_sha256={digest}",
            f"seed={cfg['seed']}", f"config={blob}"]


def _header_dict(cfg: dict) -> dict:
    lines = header_lines(cfg)
    return {"tool": lines[0], "command": cfg["command"], "config_sha256": lines[2].split("=", 1)[1],
            "seed": int(cfg["seed"]), "config": json.loads(lines[4].split("=", 1)[1])}


def _out_dir(cfg) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_scores(cfg):
    if not cfg.get("scores"):
        raise ConfigError("--scores is required")
    return ingest_scores(cfg["scores"], TieBreakConfig(float(cfg["tie_eps"]), int(cfg["seed"])))


def cmd_ata(cfg) -> int:
    if cfg.get("ranks"):
        rt = read_rank_file(cfg["ranks"])
    else:
        rt = compute_ranks(_load_scores(cfg))
    h = histogram(rt)
    ks = parse_int_list(cfg["ks"]) if cfg.get("ks") else None
    if ks is not None and (not ks or min(ks) < 2 or max(ks) > h.k1):
        raise ConfigError(f"--ks values must lie in [2, {h.k1}]")
    curve = ata_curve(h, ks)
    path = _out_dir(cfg) / "ata.csv"
    write_curve(path, curve, header_lines(cfg))
    print(path)
    return EXIT_OK


def cmd_extrapolate(cfg) -> int:
    st = _load_scores(cfg)
    k2 = parse_int_list(cfg["k2"])
    if any(k < 2 for k in k2):
        raise ConfigError(f"--k2 values must be >= 2, got {k2}")
    h_grid = tuple(parse_float_list(cfg["h_grid"]))
    if not h_grid or min(h_grid) <= 0:
        raise ConfigError("--h-grid needs positive bandwidths")
    if int(cfg["resamples"]) < 1:
        raise ConfigError("--resamples must be >= 1")
    ecfg = ExtrapolationConfig(h_grid=h_grid, resamples=int(cfg["resamples"]), seed=int(cfg["seed"]),
                               with_replacement=_truthy(cfg["with_replacement"]),
                               threads=int(cfg["threads"]))
    curve, report, fit, _ = extrapolate_pipeline(st, k2, ecfg)
    out = _out_dir(cfg)
    lines = header_lines(cfg)
    write_curve(out / "predictions.csv", curve, lines)
    doc = {"header": _header_dict(cfg), "fit": fit.to_dict(), "selection": report.to_dict(),
           "perturbed_rows": st.perturbed_rows}
    (out / "fit.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(out / "predictions.csv")
    print(out / "fit.json")
    return EXIT_OK


def cmd_kde(cfg) -> int:
    st = _load_scores(cfg)
    k2 = parse_int_list(cfg.get("k2") or "")
    if not k2 or min(k2) < 2:
        raise ConfigError("--k2 needs one or more target sizes >= 2")
    bw = cfg.get("bandwidth")
    kcfg = KdeConfig(rule=cfg["rule"], bandwidth=float(bw) if bw is not None else None, pool=cfg["pool"])
    res = kde_curve(st, k2, kcfg, threads=int(cfg["threads"]))
    pts = tuple(CurvePoint(int(k), float(v), kcfg.name) for k, v in zip(res.Ks, res.accuracy))
    path = _out_dir(cfg) / "kde.csv"
    write_curve(path, AccuracyCurve(pts, st.k1, st.r), header_lines(cfg))
    if res.fallbacks:
        print(f"warning: {res.fallbacks} bandwidth selections fell back to the normal reference rule", file=sys.stderr)
    print(path)
    return EXIT_OK


def cmd_simulate(cfg) -> int:
    for key in ("k1", "k2", "sigmas", "replicates"):
        if cfg.get(key) in (None, ""):
            raise ConfigError(f"study needs '{key}' (flag or config file)")
    study = StudyConfig(
        k1=int(cfg["k1"]), k2=tuple(parse_int_list(cfg["k2"])), sigmas=tuple(parse_float_list(cfg["sigmas"])),
        replicates=int(cfg["replicates"]), seed=int(cfg["seed"]), dim=int(cfg["dim"]),
        r_test=int(cfg["r_test"]), h_grid=tuple(parse_float_list(cfg["h_grid"])),
        resamples=int(cfg["resamples"]), bootstrap=int(cfg["bootstrap"]),
        methods=tuple(m.strip() for m in str(cfg["methods"]).split(",") if m.strip()), score=cfg["score"],
    )
    out = _out_dir(cfg)
    report = run_study(study, out_dir=out, threads=int(cfg["threads"]), header_lines=header_lines(cfg))
    for s in report.summary:
        print(f"k1={s['k1']} k2={s['k2']} {s['method']}: max RMSE {format_float(s['max_rmse'])} "
              f"(se {format_float(s['se'])})")
    return EXIT_OK


def cmd_moments(cfg) -> int:
    if not cfg.get("ks"):
        raise ConfigError("--ks is required")
    ks = parse_int_list(cfg["ks"])
    if not ks or min(ks) < 2:
        raise ConfigError("--ks values must be >= 2")
    out = _out_dir(cfg)
    lines = header_lines(cfg)
    if cfg["basis"] == "monomial":
        targets = [("moments_monomial.csv", monomial_basis(parse_float_list(cfg["powers"])))]
    else:
        if cfg.get("k1") in (None, ""):
            raise ConfigError("radial moments need --k1 (and --r) for the knot range")
        bases = candidate_bases(int(cfg["r"]), int(cfg["k1"]), parse_float_list(cfg["h_grid"]))
        targets = [(f"moments_h{b.bandwidth:g}.csv", b) for b in bases]
    for name, b in targets:
        write_moments(out / name, moments(b, ks), lines)
        print(out / name)
    return EXIT_OK


COMMANDS = {"ata": cmd_ata, "extrapolate": cmd_extrapolate, "kde": cmd_kde,
            "simulate": cmd_simulate, "moments": cmd_moments}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        if int(cfg["threads"]) < 1:
            raise ConfigError("--threads must be >= 1")
        return COMMANDS[args.command](cfg)
    except (QuadratureError, BandwidthError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"classex: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ScoreFormatError, ValueError, KeyError, OSError) as exc:
        print(f"classex: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
