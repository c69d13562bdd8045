"""Command-line experiment runner.

    python -m mdgan_sim run --config base.cfg --freeriders 3 --defense dfg --out runs/a
    python -m mdgan_sim sweep --config base.cfg --freeriders 0..5 --seeds 3 --out runs/sweep

Config files are either ``key = value`` lines (``#`` starts a comment) or a JSON
object. Precedence: command-line flags, then the file, then built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import DEFENSES, FIELD_NOTES, PROTOCOLS, ConfigError, ExperimentConfig, coerce
from .data import sample_latent, stream
from .nn import Mlp, forward
from .sim import ExperimentResult, run_experiment

log = logging.getLogger(__name__)

_SAMPLES = 11  # stream tag for samples.csv latents, distinct from the simulator's tags

SUMMARY_COLUMNS = [
    "protocol", "defense", "n_freeriders", "n_runs", "n_failed", "mean_final_fd",
    "mean_precision", "mean_recall", "mean_correct_frac", "mean_wrong_prevention_frac",
    "mean_wrong_permission_frac", "errors",
]


def read_config_file(path: str | Path) -> dict:
    """Raw key/value pairs from a config document. Values are coerced later."""
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return data
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def parse_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then file values, then ``overrides`` (None entries are ignored)."""
    values = {}
    if path is not None:
        for key, raw in read_config_file(path).items():
            values[key] = coerce(key, raw)
    for key, raw in (overrides or {}).items():
        if raw is not None:
            values[key] = coerce(key, raw)
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:  # pragma: no cover - coerce already rejects unknown keys
        raise ConfigError(str(exc)) from None


def parse_counts(text: str) -> list[int]:
    """``"0..5"`` or ``"0,2,4"`` or ``"3"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            counts = list(range(int(lo), int(hi) + 1))
        else:
            counts = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"freeriders: cannot parse {text!r}; use A..B or a comma list") from None
    if not counts or min(counts) < 0:
        raise ConfigError(f"freeriders: need a nonempty list of counts >= 0, got {text!r}")
    return counts


def emit_samples(g: Mlp, n: int, path: str | Path, seed: int = 0) -> np.ndarray:
    """Write ``n`` generator samples as ``x,y`` rows."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pts = forward(g, sample_latent(n, g.in_dim, stream(seed, _SAMPLES)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        w.writerows([repr(float(a)), repr(float(b))] for a, b in pts)
    return pts


@dataclass
class RunManifest:
    config: dict
    seeds: list[int]
    out_dir: str
    runs: list[dict] = field(default_factory=list)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")


def write_run(result: ExperimentResult, out: Path, timing: bool = False, samples: int = 0) -> None:
    out.mkdir(parents=True, exist_ok=True)
    result.write_metrics(out / "metrics.csv")
    result.write_roundlog(out / "roundlog.jsonl")
    result.write_timing(out / "timing.csv")
    if samples:
        emit_samples(result.generator, samples, out / "samples.csv", result.config.seed)


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def summarize_run(result: ExperimentResult) -> dict:
    """Final fd, mean precision/recall over probe rounds, final swap fractions."""
    probes = [m for m in result.metrics if m.round in result.detections]
    last = result.metrics[-1]
    return {
        "final_fd": result.final_fd,
        "precision": _mean(m.precision for m in probes),
        "recall": _mean(m.recall for m in probes),
        "correct_frac": last.correct_frac,
        "wrong_prevention_frac": last.wrong_prevention_frac,
        "wrong_permission_frac": last.wrong_permission_frac,
    }


def _run_cell(cfg: ExperimentConfig, out: Path) -> tuple[dict | None, str | None]:
    try:
        res = run_experiment(cfg)
        write_run(res, out)
        return summarize_run(res), None
    except Exception as exc:  # a failed run is recorded, the sweep goes on
        log.error("run %s failed: %s", out, exc)
        return None, f"seed {cfg.seed}: {type(exc).__name__}: {exc}"


def run_sweep(
    base: ExperimentConfig,
    counts: Sequence[int],
    seeds: Sequence[int],
    out_dir: str | Path,
    defenses: Sequence[str] | None = None,
) -> list[dict]:
    """Run every (defense, count, seed) cell; write per-run files and sweep_summary.csv."""
    if not counts or not seeds:
        raise ConfigError("sweep: counts and seeds must be nonempty")
    defenses = list(defenses or [base.defense])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = []
    manifest = RunManifest(base.to_dict(), list(seeds), str(out_dir))
    for defense in defenses:
        for k in counts:
            for s in seeds:
                cfg = base.replace(defense=defense, n_freeriders=k, seed=s)
                rel = Path(f"{base.protocol}_{defense}") / f"fr{k}" / f"seed{s}"
                cells.append((cfg, rel))
                manifest.runs.append({
                    "defense": defense, "n_freeriders": k, "seed": s,
                    "metrics": str(rel / "metrics.csv"), "roundlog": str(rel / "roundlog.jsonl"),
                })
    manifest.write(out_dir / "manifest.json")

    rows = []
    for defense in defenses:
        for k in counts:
            outcomes = [_run_cell(cfg, out_dir / rel) for cfg, rel in cells
                        if cfg.defense == defense and cfg.n_freeriders == k]
            ok = [o for o, _ in outcomes if o is not None]
            errors = [e for _, e in outcomes if e is not None]
            rows.append({
                "protocol": base.protocol, "defense": defense, "n_freeriders": k,
                "n_runs": len(outcomes), "n_failed": len(errors),
                "mean_final_fd": _mean(o["final_fd"] for o in ok),
                "mean_precision": _mean(o["precision"] for o in ok),
                "mean_recall": _mean(o["recall"] for o in ok),
                "mean_correct_frac": _mean(o["correct_frac"] for o in ok),
                "mean_wrong_prevention_frac": _mean(o["wrong_prevention_frac"] for o in ok),
                "mean_wrong_permission_frac": _mean(o["wrong_permission_frac"] for o in ok),
                "errors": " | ".join(errors),
            })
    with open(out_dir / "sweep_summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    return rows


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdgan-sim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    defaults = "; ".join(f"{k}: {v}" for k, v in FIELD_NOTES.items())
    run = sub.add_parser("run", help="one experiment", epilog=f"defaults -- {defaults}")
    run.add_argument("--config", help="key = value or JSON config file")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", default="run_out", help="output directory")
    run.add_argument("--protocol", choices=PROTOCOLS)
    run.add_argument("--defense", choices=DEFENSES)
    run.add_argument("--freeriders", type=int, help="number of free-rider clients")
    run.add_argument("--rounds", type=int)
    run.add_argument("--samples", type=int, default=10_000, help="rows in samples.csv (0 to skip)")
    run.add_argument("--timing", action="store_true",
                     help="also put wall-clock columns in metrics.csv (breaks byte-reproducibility)")

    sw = sub.add_parser("sweep", help="cross product of free-rider counts and seeds",
                        epilog=f"defaults -- {defaults}")
    sw.add_argument("--config")
    sw.add_argument("--freeriders", default="0..5", help="A..B or comma list")
    sw.add_argument("--seeds", type=int, default=3, help="seeds 0..N-1")
    sw.add_argument("--defenses", help="comma list; default is the config's defense")
    sw.add_argument("--protocol", choices=PROTOCOLS)
    sw.add_argument("--rounds", type=int)
    sw.add_argument("--out", default="sweep_out")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = parse_config(args.config, {
                "seed": args.seed, "protocol": args.protocol, "defense": args.defense,
                "n_freeriders": args.freeriders, "rounds": args.rounds,
            })
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            RunManifest(cfg.to_dict(), [cfg.seed], str(out), [{
                "metrics": "metrics.csv", "roundlog": "roundlog.jsonl", "timing": "timing.csv",
                "samples": "samples.csv" if args.samples else None,
            }]).write(out / "manifest.json")
            res = run_experiment(cfg, out / "roundlog.jsonl")
            res.write_metrics(out / "metrics.csv", timing=args.timing)
            res.write_timing(out / "timing.csv")
            if args.samples:
                emit_samples(res.generator, args.samples, out / "samples.csv", cfg.seed)
            print(f"final fd {res.final_fd:.4f}; files in {out}")
        else:
            base = parse_config(args.config, {"protocol": args.protocol, "rounds": args.rounds})
            defenses = args.defenses.split(",") if args.defenses else None
            for d in defenses or []:
                if d not in DEFENSES:
                    raise ConfigError(f"defenses: unknown defense {d!r}")
                base.replace(defense=d)  # rejects dfg_plus under simple up front
            rows = run_sweep(base, parse_counts(args.freeriders), list(range(args.seeds)), args.out, defenses)
            failed = sum(r["n_failed"] for r in rows)
            print(f"{len(rows)} summary rows, {failed} failed runs; files in {args.out}")
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
