import argparse
import hashlib
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from .config import POLICIES, TrainingConfig, parse_config, parse_config_text
from .errors import ComparisonError, Fermi6GError, RunDirectoryError
from .log import configure_logging
from .metrics import METRIC_COLUMNS, format_table, read_csv, summarize, write_csv
from .network import load_checkpoint, save_checkpoint
from .orchestrator import Federation

logger = logging.getLogger("fermi6g.app")

COMPARE_WINDOWS = 5


def load_config(args) -> TrainingConfig:
    config = parse_config(args.config) if args.config else TrainingConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.policy is not None:
        overrides["policy"] = args.policy
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    return config.replace(**overrides) if overrides else config


def prepare_out_dir(path) -> Path:
    """Create ``path``; an existing non-empty directory is never reused."""
    out = Path(path)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise RunDirectoryError(f"refusing to overwrite existing run directory '{out}'")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise RunDirectoryError(f"cannot create run directory '{out}': {e}") from e
    return out


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, config: TrainingConfig, started: str, outputs, extra=None) -> Path:
    lines = [
        f"started={started}",
        f"finished={datetime.now(timezone.utc).isoformat()}",
        f"seed={config.seed}",
        f"policy={config.policy}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key}={value}")
    for key, value in config.to_mapping().items():
        lines.append(f"config.{key}={value}")
    for path in outputs:
        rel = path.relative_to(out).as_posix()
        lines.append(f"output.{rel}=sha256:{sha256_file(path)}")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def run_experiment(config: TrainingConfig, out_dir, model=None, evaluate_episodes=None):
    """Train (or, with ``evaluate_episodes``, only evaluate) and write the run directory."""
    out = prepare_out_dir(out_dir)
    started = datetime.now(timezone.utc).isoformat()
    federation = Federation(config)
    if model is not None:
        params, H, k = load_checkpoint(model)
        if (H, k) != (config.hidden_size, config.num_channels):
            raise RunDirectoryError(f"checkpoint '{model}' is for H={H} k={k}, config wants "
                                    f"H={config.hidden_size} k={config.num_channels}")
        federation.load_params(params)

    outputs = []
    config_path = out / "config.txt"
    config_path.write_text(config.to_text(), encoding="utf-8")
    outputs.append(config_path)
    extra = {}

    if evaluate_episodes is None:
        rows = federation.train()
        outputs.append(write_csv(out / "metrics.csv", rows))
        if federation.learning:
            ckpt_dir = out / "checkpoints"
            ckpt_dir.mkdir()
            for round_number, params in federation.checkpoints:
                outputs.append(save_checkpoint(ckpt_dir / f"round_{round_number:05d}.f6gm", params,
                                               config.hidden_size, config.num_channels))
            outputs.append(save_checkpoint(out / "model.f6gm", federation.global_params,
                                           config.hidden_size, config.num_channels))
            outputs.append(write_rounds(out / "rounds.csv", federation.rounds))
    else:
        summary = federation.evaluate(evaluate_episodes, config.seed)
        rows = summary.rows
        outputs.append(write_csv(out / "metrics.csv", rows))
        text = format_table(METRIC_COLUMNS, [config.policy], [summary.metrics])
        text += "".join(f"reliability.{kind} {value:.4f}\n" for kind, value in summary.class_reliability.items())
        summary_path = out / "summary.txt"
        summary_path.write_text(text, encoding="utf-8")
        outputs.append(summary_path)
        extra["mode"] = "eval"
        if model is not None:
            extra["model"] = f"sha256:{sha256_file(Path(model))}"
    write_manifest(out, config, started, outputs, extra)
    logger.info("wrote %s", out)
    return rows


def write_rounds(path: Path, rounds) -> Path:
    lines = ["round,episode,participants,bytes,aborted,skipped"]
    for r in rounds:
        ids = " ".join(str(i) for i in r.participants)
        lines.append(f"{r.round_number},{r.episode},{ids},{r.bytes_on_wire},{int(r.aborted)},{int(r.skipped)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def scaled_channels(num_agents: int) -> int:
    return max(1, math.ceil(3 * num_agents / 5))


def _sweep_entry(job):
    config, out_dir = job
    configure_logging()
    rows = run_experiment(config, out_dir)
    window = config.smoothing_window * COMPARE_WINDOWS
    return config.num_agents, config.num_channels, summarize(rows, METRIC_COLUMNS, last=window)


def scalability_sweep(config: TrainingConfig, agent_counts, out_dir, jobs: int = 1):
    """One run per agent count, channels scaled with the population; returns the summary rows."""
    if not agent_counts:
        raise RunDirectoryError("sweep needs at least one agent count")
    out = prepare_out_dir(out_dir)
    work = [(config.replace(num_agents=n, num_channels=scaled_channels(n)), out / f"agents_{n}")
            for n in agent_counts]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_entry, work))
    else:
        results = [_sweep_entry(job) for job in work]

    header = ["agents", "channels"] + [f"{c}_{s}" for c in METRIC_COLUMNS for s in ("mean", "std")]
    lines = [",".join(header)]
    for n, k, summary in results:
        cells = [str(n), str(k)] + [repr(v) for c in METRIC_COLUMNS for v in summary[c]]
        lines.append(",".join(cells))
    (out / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return results


def _run_window(run: Path) -> int:
    config_path = run / "config.txt"
    if config_path.exists():
        return parse_config_text(config_path.read_text(encoding="utf-8")).smoothing_window * COMPARE_WINDOWS
    return TrainingConfig().smoothing_window * COMPARE_WINDOWS


def compare_report(run_dirs, out_dir=None) -> str:
    """Mean +- std of every metric over each run's trailing window, with deltas against the first run."""
    if len(run_dirs) < 2:
        raise ComparisonError("compare needs at least two run directories")
    runs = [Path(d) for d in run_dirs]
    summaries = []
    for run in runs:
        rows = read_csv(run / "metrics.csv")
        if not rows:
            raise ComparisonError(f"{run}: metrics.csv has no episodes")
        summaries.append(summarize(rows, METRIC_COLUMNS, last=_run_window(run)))
    labels = [run.name or str(run) for run in runs]
    text = format_table(METRIC_COLUMNS, labels, summaries)

    base = summaries[0]
    header = ["metric"] + [f"{l}_{s}" for l in labels for s in ("mean", "std", "delta")]
    lines = [",".join(header)]
    for c in METRIC_COLUMNS:
        cells = [c]
        for s in summaries:
            mean, std = s[c]
            cells += [repr(mean), repr(std), repr(mean - base[c][0])]
        lines.append(",".join(cells))
    if out_dir is not None:
        out = prepare_out_dir(out_dir)
        (out / "comparison.txt").write_text(text, encoding="utf-8")
        (out / "comparison.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return text


def parse_agent_list(text: str):
    try:
        counts = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got '{text}'")
    if not counts or any(n < 1 for n in counts):
        raise argparse.ArgumentTypeError("agent counts must be positive")
    return counts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fermi6g", description="Federated multi-agent edge offloading simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config file")
        p.add_argument("--seed", type=int, help="run seed (unsigned 64-bit)")
        p.add_argument("--policy", choices=POLICIES)
        p.add_argument("--episodes", type=int, help="override EPISODES")
        p.add_argument("--out", required=True, help="output directory (must not hold a previous run)")

    common(sub.add_parser("train", help="train and write metrics, checkpoints and a manifest"))
    ev = sub.add_parser("eval", help="greedy rollouts of a baseline or a trained model")
    common(ev)
    ev.add_argument("--model", help="checkpoint to evaluate (learning policies)")
    sw = sub.add_parser("sweep", help="repeat training for several population sizes")
    common(sw)
    sw.add_argument("--agents", type=parse_agent_list, required=True, help="e.g. 5,10,50")
    sw.add_argument("--jobs", type=int, default=1, help="parallel processes")
    cmp = sub.add_parser("compare", help="tabulate several runs side by side")
    cmp.add_argument("runs", nargs="+", help="run directories")
    cmp.add_argument("--out", help="directory for comparison.txt and comparison.csv")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        if args.command == "compare":
            sys.stdout.write(compare_report(args.runs, args.out))
        elif args.command == "sweep":
            scalability_sweep(load_config(args), args.agents, args.out, args.jobs)
        elif args.command == "eval":
            config = load_config(args)
            run_experiment(config, args.out, model=args.model, evaluate_episodes=config.episodes)
        else:
            run_experiment(load_config(args), args.out)
    except Fermi6GError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
