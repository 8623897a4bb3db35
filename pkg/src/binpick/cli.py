"""Command-line front end: TAM dataset and training, scenario runs and variant matrices.

Per-trial randomness is derived from ``(--seed, trial index)`` through
``numpy.random.SeedSequence``, so a trial can be replayed on its own.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from binpick.kinematics import default_chain, load_chain
from binpick.mlp import default_model, load_model, save_model, train_tamn
from binpick.sim.metrics import Summary, run_batch, summarize, write_traces
from binpick.sim.scenario import load_scenario
from binpick.sim.trial import VARIANTS, StackConfig
from binpick.tam import DEFAULT_WORKSPACE, Workspace, generate_dataset, load_dataset, save_dataset
from binpick.textfmt import FormatError

log = logging.getLogger("binpick")

EXPORT_FIELDS = ("scenario", "variant", "trials", "sr", "tt_mean", "tt_std", "cr", "seed")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunSpec:
    scenario: Path
    variant: str
    trials: int
    seed: int
    out: Path | None

    def __post_init__(self):
        if not self.scenario.exists():
            raise ConfigError(f"scenario file not found: {self.scenario}")
        if self.trials < 1:
            raise ConfigError("--trials must be at least 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")


@dataclass
class Row:
    scenario: str
    variant: str
    trials: int
    seed: int
    summary: Summary | None = None
    error: str = ""

    def export(self) -> str:
        if self.summary is None:
            return f"{self.scenario} {self.variant} {self.trials} failed - - - {self.seed}"
        s = self.summary
        return (f"{self.scenario} {self.variant} {s.trials} {s.sr:.1f} {_num(s.tt_mean)} "
                f"{_num(s.tt_std)} {s.cr:.1f} {self.seed}")


def _num(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.3f}"


def format_table(rows: list[Row]) -> str:
    header = ("scenario", "variant", "trials", "SR %", "TT s", "CR %")
    body = []
    for r in rows:
        if r.summary is None:
            body.append((r.scenario, r.variant, str(r.trials), "FAILED", r.error, ""))
            continue
        s = r.summary
        tt = "-" if math.isnan(s.tt_mean) else f"{s.tt_mean:.2f} ± {s.tt_std:.2f}"
        body.append((r.scenario, r.variant, str(s.trials), f"{s.sr:.1f}", tt, f"{s.cr:.1f}"))
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
             for row in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def write_export(rows: list[Row], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join([" ".join(EXPORT_FIELDS), *(r.export() for r in rows)]) + "\n")


def _assets(args):
    chain = load_chain(args.chain) if args.chain else default_chain()
    model = load_model(args.model) if args.model else default_model()
    return chain, model


def _run_cell(scn_path: Path, variant: str, args, chain, model) -> Row:
    scenario = load_scenario(scn_path)
    trials = args.trials if args.trials is not None else scenario.trials
    if trials < 1:
        raise ConfigError("--trials must be at least 1")
    row = Row(scenario.name, variant, trials, args.seed)
    results = run_batch(scenario, StackConfig.for_variant(variant), trials, args.seed,
                        args.workers, chain=chain, model=model)
    row.summary = summarize(results)
    if args.out is not None:
        write_traces(results, Path(args.out) / "traces")
    return row


# ---------------------------------------------------------------------------
# commands


def cmd_dataset(args) -> int:
    chain = load_chain(args.chain) if args.chain else default_chain()
    ws = DEFAULT_WORKSPACE if args.workspace is None else Workspace(args.workspace[:3],
                                                                     args.workspace[3:])
    t0 = time.perf_counter()
    ds = generate_dataset(chain, ws, args.poses, args.dirs, args.seed)
    save_dataset(ds, args.out, {"chain": chain.name})
    print(f"wrote {ds.n_samples} samples to {args.out} in {time.perf_counter() - t0:.1f} s")
    return 0


def cmd_train(args) -> int:
    if args.resume:
        raise ConfigError("training is single-shot; --resume is not supported")
    ds = load_dataset(args.dataset)
    X, y = ds.features()
    model, history = train_tamn(X, y, lr=args.lr, epochs=args.epochs, seed=args.seed,
                                batch_size=args.batch_size)
    save_model(model, args.out)
    loss_path = Path(args.log) if args.log else Path(str(args.out) + ".loss")
    loss_path.write_text("\n".join(history.lines()) + "\n")
    print(f"final validation MSE {history.final_val_mse:.6g}")
    print(f"model: {args.out}  loss log: {loss_path}")
    return 0


def cmd_run(args) -> int:
    path = Path(args.scenario)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    trials = args.trials if args.trials is not None else load_scenario(path).trials
    spec = RunSpec(path, args.variant, trials, args.seed, Path(args.out) if args.out else None)
    chain, model = _assets(args)
    row = _run_cell(spec.scenario, spec.variant, args, chain, model)
    print(format_table([row]))
    if spec.out is not None:
        write_export([row], spec.out / "summary.txt")
    return 0


def cmd_matrix(args) -> int:
    root = Path(args.scenario_dir)
    if not root.is_dir():
        raise ConfigError(f"scenario directory not found: {root}")
    files = sorted(root.rglob("*.scn"))
    if not files:
        raise ConfigError(f"no .scn files under {root}")
    variants = args.variants.split(",") if args.variants else [args.variant]
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    if args.trials is not None and args.trials < 1:
        raise ConfigError("--trials must be at least 1")
    chain, model = _assets(args)
    rows = []
    for path in files:
        for v in variants:
            try:
                rows.append(_run_cell(path, v, args, chain, model))
            except (FormatError, ValueError, RuntimeError) as exc:
                log.error("%s/%s failed: %s", path.name, v, exc)
                rows.append(Row(path.stem, v, args.trials or 0, args.seed, error=str(exc)))
    print(format_table(rows))
    if args.out is not None:
        write_export(rows, Path(args.out) / "summary.txt")
    return 0 if all(r.summary is not None for r in rows) else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="binpick", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("dataset", help="sample poses and label them with analytic TAM")
    d.add_argument("--chain")
    d.add_argument("--workspace", type=float, nargs=6, metavar=("XLO", "YLO", "ZLO", "XHI", "YHI", "ZHI"))
    d.add_argument("--poses", type=int, default=5000)
    d.add_argument("--dirs", type=int, default=32)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dataset)

    t = sub.add_parser("train", help="fit the TAM network to a dataset")
    t.add_argument("dataset")
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="loss log path (default: <out>.loss)")
    t.add_argument("--resume", action="store_true", help=argparse.SUPPRESS)
    t.set_defaults(func=cmd_train)

    def sim_flags(sp):
        sp.add_argument("--trials", type=int, help="default: the scenario file's count")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="directory for summary.txt and traces/")
        sp.add_argument("--model", help="TAM network file (default: bundled)")
        sp.add_argument("--chain", help="robot chain file (default: bundled)")
        sp.add_argument("--workers", type=int, default=1)

    r = sub.add_parser("run", help="run one scenario with one stack variant")
    r.add_argument("--scenario", required=True)
    r.add_argument("--variant", default="full", choices=VARIANTS)
    sim_flags(r)
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("matrix", help="run every scenario file under a directory")
    m.add_argument("scenario_dir")
    m.add_argument("--variant", default="full", choices=VARIANTS)
    m.add_argument("--variants", help="comma-separated list, overrides --variant")
    sim_flags(m)
    m.set_defaults(func=cmd_matrix)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
