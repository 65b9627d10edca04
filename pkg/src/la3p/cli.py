"""Command-line entry point: ``la3p-run`` / ``python -m la3p``.

Precedence of settings, highest first: explicit flags, the ``--config``
file, the ``--paper-scale`` preset, desk-scale defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import diagnostics
from .agent import Scheme
from .envs import ENV_KINDS
from .experiment import (
    PAPER_SCALE, RunConfig, format_rows, format_timing, lambda_sweep, run, timing_report,
)

# flag name -> RunConfig field
FIELDS = {
    "env": "env", "scheme": "scheme", "lambda": "lam", "alpha": "alpha", "beta": "beta",
    "gamma": "gamma", "zeta": "zeta", "actor-lr": "actor_lr", "critic-lr": "critic_lr",
    "batch": "batch", "hidden": "hidden", "capacity": "capacity",
    "start-steps": "start_steps", "steps": "steps", "eval-every": "eval_every",
    "eval-episodes": "eval_episodes", "out": "out",
}
CONFIG_ONLY = {"seed", "seeds", "workers", "smooth"}


def _hidden(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).replace(",", " ").split())


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="la3p-run",
        description="Train actor-critic agents with uniform, PER, LAP or LA3P replay.")
    p.add_argument("--env", choices=ENV_KINDS)
    p.add_argument("--scheme", choices=[s.value for s in Scheme])
    p.add_argument("--lambda", dest="lambda_", type=float, metavar="LAM",
                   help="uniform fraction of each LA3P batch")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--zeta", type=float)
    p.add_argument("--actor-lr", type=float)
    p.add_argument("--critic-lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--hidden", type=_hidden, help="hidden widths, e.g. 64,64")
    p.add_argument("--capacity", type=int)
    p.add_argument("--seed", type=int, help="first seed")
    p.add_argument("--seeds", type=int, metavar="N", help="number of consecutive seeds")
    p.add_argument("--steps", type=int)
    p.add_argument("--start-steps", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--config", metavar="FILE", help="flat 'key = value' file, keys as flag names")
    p.add_argument("--paper-scale", action="store_true", help="full-scale benchmark defaults")
    p.add_argument("--workers", type=int, help="parallel seeds")
    p.add_argument("--smooth", type=int, metavar="W",
                   help="also write curves smoothed over a window of W evaluations")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--probe", choices=("lemma1", "theorem1"))
    mode.add_argument("--timing", action="store_true",
                      help="run uniform, per and la3p and report run times")
    mode.add_argument("--lambda-sweep", type=_floats, metavar="LAMS",
                      help="comma-separated lambda values")
    return p


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lstrip("-").replace("_", "-")
        if key not in FIELDS and key not in CONFIG_ONLY:
            raise ValueError(f"{path}:{n}: unknown key {key!r}")
        values[key] = value
    return values


_CASTS = {"hidden": _hidden, "env": str, "scheme": str, "out": str}


def _cast(flag: str, value: str):
    if flag in _CASTS:
        return _CASTS[flag](value)
    if flag in ("batch", "capacity", "start-steps", "steps", "eval-every", "eval-episodes",
                "seed", "seeds", "workers", "smooth"):
        return int(value)
    return float(value)


def resolve(args: argparse.Namespace) -> tuple[RunConfig, dict]:
    """Merge flags, config file and presets into a :class:`RunConfig` and run options."""
    settings: dict = {}
    if args.paper_scale:
        settings.update({k.replace("_", "-"): v for k, v in PAPER_SCALE.items()})
    if args.config:
        settings.update({k: _cast(k, v) for k, v in read_config_file(args.config).items()})
    for flag in (*FIELDS, *CONFIG_ONLY):
        value = getattr(args, "lambda_" if flag == "lambda" else flag.replace("-", "_"))
        if value is not None:
            settings[flag] = value
    first = settings.pop("seed", 0)
    count = settings.pop("seeds", 1)
    if count < 1:
        raise ValueError("--seeds must be >= 1")
    opts = {"workers": settings.pop("workers", 1), "smooth": settings.pop("smooth", None)}
    fields = {FIELDS[k]: v for k, v in settings.items()}
    cfg = RunConfig(seeds=tuple(range(first, first + count)), **fields)
    return cfg, opts


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg, opts = resolve(args)
    except (OSError, ValueError) as exc:
        parser.error(str(exc))

    if args.probe:
        summary = diagnostics.run_probe(args.probe, seed=cfg.seeds[0], out_dir=cfg.out)
        print(json.dumps(summary, indent=2))
        return 0

    try:
        if args.lambda_sweep:
            rows = lambda_sweep(cfg, args.lambda_sweep, workers=opts["workers"])
            print(format_rows(rows, "lambda"))
        elif args.timing:
            timings = {}
            for scheme in ("uniform", "per", "la3p"):
                res = run(cfg.with_(scheme=scheme), workers=opts["workers"], smoothing=opts["smooth"])
                timings[scheme] = [s.wall_clock_ms / 1e3 for s in res.seeds]
            print(format_timing(timing_report(timings)))
        else:
            res = run(cfg, workers=opts["workers"], smoothing=opts["smooth"])
            mean, half = res.statistic()
            ci = "n/a" if half is None else f"{half:.3f}"
            print(f"{cfg.run_name()}: last-{len(res.seeds[0].records[-10:])} mean {mean:.3f} "
                  f"(95% CI +- {ci}) over {len(res.seeds)} seed(s); results in {cfg.out}")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
