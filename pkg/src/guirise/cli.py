"""guirise command line: gen-data, label, sft, grpo, eval, curves, ablate.

Every stage reads and writes under one run directory (``--out``) and
records itself in ``manifest.json`` (seed, resolved config, input and
output digests). Exit codes: 0 ok, 2 configuration error, 3 stage failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import statistics
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, dump_config, load_config, override
from .grpo import GrpoLogs
from .labeler import LabelParseFailure, MockLabelerClient, RemoteLabelerClient
from .metrics import EmptyReport, aggregate, report_csv, report_table
from .pipeline import (evaluate_policy, generate_splits, load_params, make_policy, run_grpo, run_label, run_sft,
                       save_params)
from .policy.base import MalformedResponse, PolicyUnavailable
from .policy.remote import RemotePolicy
from .policy.scripted import ScriptedCorruptPolicy, ScriptedOraclePolicy
from .sft import read_labels, write_labels
from .trajectory import read_episodes, write_episodes

log = logging.getLogger("guirise")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


class StageFailure(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise StageFailure(f"missing {path} (run `guirise {hint}` first)")
    return path


def parse_policy_spec(spec: str) -> tuple[str, Optional[str]]:
    if spec in ("toy", "scripted-oracle"):
        return spec, None
    if spec.startswith("scripted-corrupt:"):
        p = spec.split(":", 1)[1]
        try:
            pv = float(p)
        except ValueError:
            raise ConfigError(f"bad corruption probability {p!r}", field_name="--policy", source="command line") from None
        if not 0 <= pv <= 1:
            raise ConfigError(f"corruption probability {pv} outside [0,1]", field_name="--policy", source="command line")
        return "scripted-corrupt", p
    if spec.startswith("remote:") and len(spec) > len("remote:"):
        return "remote", spec.split(":", 1)[1]
    raise ConfigError(f"unknown policy {spec!r} (toy | scripted-oracle | scripted-corrupt:p | remote:URL)",
                      field_name="--policy", source="command line")


class Run:
    """One run directory plus the resolved config for the current stage."""

    def __init__(self, out: str, cfg: RunConfig, seed: int, argv: list[str]):
        self.dir = Path(out)
        self.cfg = cfg
        self.seed = seed
        self.argv = argv
        self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, *parts) -> Path:
        p = self.dir.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, stage: str, inputs: list[Path], outputs: list[Path]) -> None:
        """Merge this stage into manifest.json (no timestamps: reruns are byte-identical)."""
        text = dump_config(self.cfg)
        self.path("config.resolved").write_text(text, encoding="utf-8")
        mpath = self.dir / "manifest.json"
        manifest = json.loads(mpath.read_text(encoding="utf-8")) if mpath.exists() else {}
        manifest["version"] = __version__
        stages = manifest.setdefault("stages", {})
        rel = lambda p: p.relative_to(self.dir).as_posix()  # noqa: E731
        stages[stage] = {
            "argv": self.argv,
            "seed": self.seed,
            "config": text.splitlines(),
            "inputs": {rel(p): _sha256(p) for p in inputs},
            "outputs": {rel(p): _sha256(p) for p in outputs},
        }
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _data_paths(run: Run) -> tuple[Path, Path]:
    return run.path("data", "train.jsonl"), run.path("data", "test.jsonl")


def _load_labels(run: Run):
    return read_labels(_require(run.path("labels", "labels.jsonl"), "label"))


# ---------------------------------------------------------------- stages

def cmd_gen_data(run: Run, args) -> int:
    cfg = run.cfg
    if args.episodes is not None:
        cfg = run.cfg = override(cfg, "data", rl_episodes=args.episodes,
                                 sft_episodes=min(cfg.data.sft_episodes, args.episodes))
    train, test = generate_splits(cfg, run.seed)
    tr, te = _data_paths(run)
    write_episodes(tr, train)
    write_episodes(te, test)
    run.record("gen-data", [], [tr, te])
    print(f"wrote {len(train)} train and {len(test)} test episodes to {tr.parent}")
    return EXIT_OK


def cmd_label(run: Run, args) -> int:
    tr, _ = _data_paths(run)
    episodes = read_episodes(_require(tr, "gen-data"))
    if args.labeler == "mock":
        client = MockLabelerClient()
        audit = None
    else:
        audit = run.path("labels", "audit.jsonl")
        audit.write_text("", encoding="utf-8")
        client = RemoteLabelerClient(args.labeler, run.cfg.labeler.timeout, str(audit))
    labels, rejected = run_label(episodes, run.cfg, client, args.workers)
    out = run.path("labels", "labels.jsonl")
    write_labels(out, [lb for ep in episodes if ep.episode_id in labels for lb in labels[ep.episode_id]])
    rej = run.path("labels", "rejected.txt")
    rej.write_text("".join(f"{r}\n" for r in rejected), encoding="utf-8")
    if not labels:
        raise StageFailure("every trajectory was rejected by the labeler")
    run.record("label", [tr], [out, rej] + ([audit] if audit else []))
    print(f"labeled {len(labels)} trajectories, rejected {len(rejected)}")
    return EXIT_OK


def cmd_sft(run: Run, args) -> int:
    tr, _ = _data_paths(run)
    episodes = read_episodes(_require(tr, "gen-data"))
    labels = _load_labels(run)
    policy = make_policy(run.cfg)
    loss = run_sft(policy, episodes, labels, run.cfg, run.seed)
    params = run.path("sft", "params.npy")
    save_params(params, policy.theta)
    lpath = run.path("sft", "loss.csv")
    with open(lpath, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        w.writerows(enumerate(loss))
    run.record("sft", [tr, run.path("labels", "labels.jsonl")], [params, lpath])
    if loss:
        print(f"sft: {len(loss)} steps, loss {loss[0]:.3f} -> {loss[-1]:.3f}")
    return EXIT_OK


def cmd_grpo(run: Run, args) -> int:
    cfg = run.cfg
    if args.init is not None:
        cfg = run.cfg = override(cfg, "policy", init=args.init)
    tr, _ = _data_paths(run)
    episodes = read_episodes(_require(tr, "gen-data"))
    labels = _load_labels(run)
    inputs = [tr, run.path("labels", "labels.jsonl")]
    theta = None
    if cfg.policy.init == "sft":
        sp = _require(run.path("sft", "params.npy"), "sft")
        theta = load_params(sp)
        inputs.append(sp)
    policy = make_policy(cfg, theta)
    step_log, iter_log = run.path("grpo", "step_log.csv"), run.path("grpo", "iter_log.csv")
    with GrpoLogs(str(step_log), str(iter_log)) as logs:
        stats = run_grpo(policy, episodes, labels, cfg, run.seed, logs)
    params = run.path("grpo", "params.npy")
    save_params(params, policy.theta)
    run.record("grpo", inputs, [params, step_log, iter_log])
    if stats:
        print(f"grpo: {len(stats)} iterations, final mean reward {stats[-1].mean_reward:.3f}")
    return EXIT_OK


def _eval_policy(run: Run, args, episodes):
    kind, arg = parse_policy_spec(args.policy)
    space = run.cfg.sim.action_space
    if kind == "scripted-oracle":
        return ScriptedOraclePolicy(episodes, space), []
    if kind == "scripted-corrupt":
        return ScriptedCorruptPolicy(episodes, float(arg), run.seed, space), []
    if kind == "remote":
        return RemotePolicy(arg, run.cfg.labeler.timeout, space), []
    params = Path(args.params) if args.params else None
    if params is None:
        for cand in (run.path("grpo", "params.npy"), run.path("sft", "params.npy")):
            if cand.exists():
                params = cand
                break
    if params is None or not params.exists():
        raise StageFailure("no trained parameters found (run sft or grpo, or pass --params)")
    return make_policy(run.cfg, load_params(params)), [params]


def cmd_eval(run: Run, args) -> int:
    _, te = _data_paths(run)
    episodes = read_episodes(_require(te, "gen-data"))
    policy, inputs = _eval_policy(run, args, episodes)
    result = evaluate_policy(policy, episodes, split=run.cfg.sim.task_family)
    summary = aggregate(result.rows)
    name = args.policy.replace(":", "_").replace("/", "_")
    rpath, tpath, spath = (run.path("eval", name, f) for f in ("report.csv", "report.txt", "steps.csv"))
    rpath.write_text(report_csv(summary), encoding="utf-8")
    table = report_table(summary)
    tpath.write_text(table + "\n", encoding="utf-8")
    with open(spath, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "episode_id", "t", "Ele.Acc", "Op.F1", "Step SR", "Action Acc"])
        for r in result.rows:
            w.writerow([r.split, r.episode_id, r.t, r.ele_acc, r.op_f1, r.step_sr, r.action_acc])
    run.record(f"eval:{args.policy}", [te] + inputs, [rpath, tpath, spath])
    print(table)
    return EXIT_OK


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    c = np.cumsum(np.insert(np.asarray(x, dtype=float), 0, 0.0))
    n = np.arange(1, len(x) + 1)
    lo = np.maximum(n - window, 0)
    return (c[n] - c[lo]) / (n - lo)


def cmd_curves(run: Run, args) -> int:
    src = _require(run.path("grpo", "iter_log.csv"), "grpo")
    with open(src, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise StageFailure(f"{src} has no iterations")
    cols = ["mean_reward", "mean_r_f", "mean_r_a", "mean_r_h", "objective", "kl"]
    data = {c: np.array([float(r[c]) for r in rows]) for c in cols}
    out = run.path("curves", "curves.csv")
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter"] + [f"{c}_ma{args.window}" for c in cols])
        smoothed = [moving_average(data[c], args.window) for c in cols]
        for i, r in enumerate(rows):
            w.writerow([r["iter"]] + [f"{s[i]:.6f}" for s in smoothed])
    run.record("curves", [src], [out])
    print(f"wrote {out}")
    return EXIT_OK


def cmd_ablate(run: Run, args) -> int:
    """Full pipeline per (lambda_h, seed); compares final-step accuracy and Step SR."""
    from .pipeline import train_and_eval

    lambdas = [float(x) for x in args.lambdas.split(",")]
    seeds = [int(x) for x in args.seeds.split(",")]
    rows = []
    outputs = []
    for lh in lambdas:
        cfg = override(run.cfg, "reward", lambda_h=lh)
        for seed in seeds:
            sub = run.path("ablate", f"lh{lh:g}-s{seed}", "iter_log.csv")
            with GrpoLogs(None, str(sub)) as logs:
                res = train_and_eval(cfg, seed, logs=logs)
            outputs.append(sub)
            summ = aggregate(res.eval.rows)["Overall"]
            rows.append((lh, seed, float(np.mean(res.eval.final_step_acc)), summ["Step SR"]))
            log.info("ablate lambda_h=%g seed=%d final=%.3f", lh, seed, rows[-1][2])
    out = run.path("ablate", "comparison.csv")
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda_h", "seed", "final_step_acc", "Step SR"])
        for lh, seed, fa, sr in rows:
            w.writerow([f"{lh:g}", seed, f"{fa:.6f}", f"{sr:.6f}"])
    lines = [f"{'lambda_h':>9}{'median final acc':>18}{'median Step SR':>16}  per-seed final acc"]
    for lh in lambdas:
        mine = [r for r in rows if r[0] == lh]
        lines.append(f"{lh:>9g}{statistics.median(r[2] for r in mine):>18.3f}"
                     f"{statistics.median(r[3] for r in mine):>16.3f}  " + " ".join(f"{r[2]:.2f}" for r in mine))
    table = "\n".join(lines)
    tpath = run.path("ablate", "comparison.txt")
    tpath.write_text(table + "\n", encoding="utf-8")
    run.record("ablate", [], outputs + [out, tpath])
    print(table)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data, "label": cmd_label, "sft": cmd_sft, "grpo": cmd_grpo,
    "eval": cmd_eval, "curves": cmd_curves, "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    common.add_argument("--out", default="runs/default", help="run directory")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker pool size")
    common.add_argument("--policy", default="toy", help="toy | scripted-oracle | scripted-corrupt:p | remote:URL")

    parser = argparse.ArgumentParser(prog="guirise", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gen-data", parents=[common], help="generate simulator episodes")
    p.add_argument("--episodes", type=int, help="training episodes to generate")
    p = sub.add_parser("label", parents=[common], help="pseudo-label training trajectories")
    p.add_argument("--labeler", default="mock", help="'mock' or the base URL of a remote labeler")
    sub.add_parser("sft", parents=[common], help="cold-start supervised training")
    p = sub.add_parser("grpo", parents=[common], help="GRPO training")
    p.add_argument("--init", choices=("sft", "zero"), help="start from SFT parameters or from zero")
    p = sub.add_parser("eval", parents=[common], help="evaluate a policy on the test split")
    p.add_argument("--params", help="parameter file for the toy policy")
    p = sub.add_parser("curves", parents=[common], help="plot-ready training curves")
    p.add_argument("--window", type=int, default=50, help="moving-average window")
    p = sub.add_parser("ablate", parents=[common], help="history-reward ablation")
    p.add_argument("--lambdas", default="0.5,0", help="comma-separated lambda_h values")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("GUIRISE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.workers < 1:
            raise ConfigError("must be >= 1", field_name="--workers", source="command line")
        parse_policy_spec(args.policy)
        run = Run(args.out, cfg, args.seed, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](run, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageFailure, LabelParseFailure, PolicyUnavailable, MalformedResponse, EmptyReport,
            ValueError, OSError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
