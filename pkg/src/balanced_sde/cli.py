"""Command-line front end.

    balanced-sde convergence --config run.json --out results/
    balanced-sde moments     --config run.json --out results/
    balanced-sde compare     --config run.json --out results/
    balanced-sde list-problems
    balanced-sde list-schemes

A run configuration is one JSON document::

    {
      "problem": "three-halves", "params": {"lam": 4, "theta": 1, "mu": 1},
      "scheme": "balanced-euler",            # or "schemes": [...] for compare
      "levels": [4, 5, 6, 7, 8, 9],          # or {"min": 4, "max": 9}
      "fine_level": 14, "paths": 4000, "seed": 7,
      "t0": 0.0, "T": 1.0, "x0": [1.0],
      "p": [1, 2]                            # moments only
    }

A scheme entry is a name or an object ``{"name": ..., "beta": ...,
"rational_drift": ...}``.  Exit status: 0 success, 1 usage error, 2 unstable
or failed study.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .core import CapabilityError, SchemeKind, SchemeSpec, SimConfig, StudyError
from .harness import LEVEL_GAP, compare_study, moment_study
from .problems import PROBLEMS, default_initial_state, make_problem

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_UNSTABLE = 2


class UsageError(Exception):
    pass


def _levels(raw):
    if isinstance(raw, dict):
        try:
            return list(range(int(raw["min"]), int(raw["max"]) + 1))
        except KeyError as exc:
            raise UsageError(f"levels object needs 'min' and 'max' (missing {exc})") from None
    if isinstance(raw, list) and all(isinstance(v, int) for v in raw):
        return sorted(set(raw))
    raise UsageError("levels must be a list of integers or {'min': ..., 'max': ...}")


def _scheme(entry, default_beta=0.5, default_rational=False):
    if isinstance(entry, str):
        entry = {"name": entry}
    if not isinstance(entry, dict) or "name" not in entry:
        raise UsageError(f"bad scheme entry {entry!r}")
    names = [k.value for k in SchemeKind]
    if entry["name"] not in names:
        raise UsageError(f"unknown scheme {entry['name']!r}; valid schemes: {', '.join(names)}")
    try:
        return SchemeSpec(
            SchemeKind(entry["name"]),
            beta=float(entry.get("beta", default_beta)),
            rational_drift=bool(entry.get("rational_drift", default_rational)),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return cfg


def build_run(cfg: dict, need_three_levels: bool = True):
    """Problem, SimConfig and the scheme list described by ``cfg``."""
    name = cfg.get("problem")
    if name not in PROBLEMS:
        raise UsageError(f"unknown problem {name!r}; valid problems: {', '.join(PROBLEMS)}")
    try:
        system = make_problem(name, **cfg.get("params", {}))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None

    if "levels" not in cfg:
        raise UsageError("config needs 'levels'")
    levels = _levels(cfg["levels"])
    if need_three_levels and len(levels) < 3:
        raise UsageError("need >= 3 levels")
    if not levels:
        raise UsageError("need at least one level")
    default_gap = LEVEL_GAP + 1 if need_three_levels else 0
    fine = int(cfg.get("fine_level", max(levels) + default_gap))

    beta = float(cfg.get("beta", 0.5))
    rational = bool(cfg.get("rational_drift", False))
    if "schemes" in cfg:
        entries = cfg["schemes"]
        if not isinstance(entries, list):
            raise UsageError("'schemes' must be a list")
    elif "scheme" in cfg:
        entries = [cfg["scheme"]]
    else:
        raise UsageError("config needs 'scheme' or 'schemes'")
    if not entries:
        raise UsageError("scheme list is empty")
    schemes = [_scheme(e, beta, rational) for e in entries]

    x0 = cfg.get("x0", default_initial_state(name))
    try:
        config = SimConfig(
            t0=float(cfg.get("t0", 0.0)),
            T=float(cfg.get("T", 1.0)),
            initial_state=[float(v) for v in x0],
            fine_levels=fine,
            coarse_levels=tuple(levels),
            num_paths=int(cfg.get("paths", 1000)),
            seed=int(cfg.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if len(config.initial_state) != system.dim_state:
        raise UsageError(f"x0 must have {system.dim_state} entries for problem {name!r}")
    if need_three_levels and max(levels) > fine - LEVEL_GAP:
        raise UsageError(f"fine_level must exceed the largest level by at least {LEVEL_GAP}")
    return system, config, schemes


def _dump_json(obj, path: Path):
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])


def _fmt(v):
    # shortest round-trip decimal; empty for undefined values
    if v is None:
        return None
    if isinstance(v, float):
        return repr(v) if v == v else None
    return v


def _provenance(cfg, config, command):
    return {
        "command": command,
        "problem": cfg["problem"],
        "params": {**PROBLEMS[cfg["problem"]][1], **cfg.get("params", {})},
        "seed": config.seed,
        "M": config.num_paths,
        "levels": list(config.coarse_levels),
        "fine_level": config.fine_levels,
        "t0": config.t0,
        "T": config.T,
        "x0": list(config.initial_state),
        "version": __version__,
    }


def cmd_convergence(args) -> int:
    cfg = load_config(args.config)
    system, config, schemes = build_run(cfg)
    if len(schemes) != 1:
        raise UsageError("convergence takes exactly one scheme; use compare for several")
    report = compare_study(system, schemes, config, threads=args.threads)[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format in ("json", "both"):
        _dump_json({"provenance": _provenance(cfg, config, "convergence"), "report": report.to_dict()},
                   out / "report.json")
    if args.format in ("csv", "both"):
        _write_csv(
            out / "errors.csv",
            ["level", "h", "rms_error", "stderr", "diverged_fraction"],
            [[lvl, _fmt(h), _fmt(e), _fmt(s), _fmt(f)] for lvl, h, e, s, f in report.rows()],
        )
    print(report.to_text())
    return EXIT_UNSTABLE if report.unstable else EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    system, config, schemes = build_run(cfg)
    reports = compare_study(system, schemes, config, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format in ("json", "both"):
        _dump_json(
            {"provenance": _provenance(cfg, config, "compare"), "reports": [r.to_dict() for r in reports]},
            out / "compare.json",
        )
    header = ["level", "h"]
    for r in reports:
        header += [f"rms_error[{r.scheme}]", f"stderr[{r.scheme}]", f"diverged_fraction[{r.scheme}]"]
    rows = []
    for b, level in enumerate(config.coarse_levels):
        row = [level, _fmt(reports[0].h[b])]
        for r in reports:
            row += [_fmt(r.rms_error[b]), _fmt(r.rms_stderr[b]), _fmt(r.diverged_fraction[b])]
        rows.append(row)
    if args.format in ("csv", "both"):
        _write_csv(out / "compare.csv", header, rows)

    width = max(len(r.scheme) for r in reports)
    print(f"{'level':>5} {'h':>12} " + " ".join(f"{r.scheme:>{max(width, 14)}}" for r in reports))
    for b, level in enumerate(config.coarse_levels):
        cells = " ".join(f"{r.rms_error[b]:>{max(width, 14)}.6e}" for r in reports)
        print(f"{level:>5d} {reports[0].h[b]:>12.6g} {cells}")
    for r in reports:
        order = "n/a" if r.fitted_order is None else f"{r.fitted_order:.4f} +/- {r.slope_stderr:.4f}"
        flag = "  UNSTABLE" if r.unstable else ""
        print(f"fitted order [{r.scheme}]: {order}{flag}")
    return EXIT_UNSTABLE if any(r.unstable for r in reports) else EXIT_OK


def cmd_moments(args) -> int:
    cfg = load_config(args.config)
    system, config, schemes = build_run(cfg, need_three_levels=False)
    if len(schemes) != 1:
        raise UsageError("moments takes exactly one scheme")
    p_list = cfg.get("p", [1])
    if not isinstance(p_list, list) or not p_list:
        raise UsageError("'p' must be a non-empty list")
    try:
        report = moment_study(system, schemes[0], config, p_list, threads=args.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format in ("json", "both"):
        _dump_json({"provenance": _provenance(cfg, config, "moments"), "report": report.to_dict()},
                   out / "moments.json")
    if args.format in ("csv", "both"):
        rows = []
        for entry in report.levels:
            for p in report.p_list:
                for k, t in enumerate(entry.times):
                    rows.append([entry.level, _fmt(entry.h), _fmt(t), _fmt(p),
                                 _fmt(entry.estimates[p][k]), _fmt(entry.stderr[p][k]), entry.counts[k]])
        _write_csv(out / "moments.csv", ["level", "h", "time", "p", "estimate", "stderr", "count"], rows)
    print(report.to_text())
    return EXIT_OK


def cmd_list_problems(args) -> int:
    for name, (_, defaults, x0) in PROBLEMS.items():
        params = ", ".join(f"{k}={v}" for k, v in defaults.items())
        print(f"{name:<20} {params}  (default x0={x0})")
    return EXIT_OK


def cmd_list_schemes(args) -> int:
    for kind in SchemeKind:
        print(kind.value)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="balanced-sde", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("convergence", cmd_convergence), ("moments", cmd_moments), ("compare", cmd_compare)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        p.add_argument("--format", choices=("csv", "json", "both"), default="both")
        p.set_defaults(func=fn)
    sub.add_parser("list-problems").set_defaults(func=cmd_list_problems)
    sub.add_parser("list-schemes").set_defaults(func=cmd_list_schemes)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, CapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StudyError as exc:
        print(f"study failed: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE


if __name__ == "__main__":
    sys.exit(main())
