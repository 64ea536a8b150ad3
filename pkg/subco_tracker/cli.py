"""Command-line entry point: generate, train, grad-check, track, eval, ablate, stats.

Every command that writes outputs also writes ``resolved_config.yaml`` next
to them. Exit codes: 0 on success, 1 on a failed gradient check or an
unexpected error, 2 on invalid input (missing file, bad config, shape
mismatch).
"""

import argparse
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml

from subco_tracker.core.config import CostMode, RunConfig
from subco_tracker.core.embedder import EmbedderParams, init_params, load_checkpoint, save_checkpoint
from subco_tracker.core.exceptions import ConfigError, SubcoError
from subco_tracker.core.metrics import (
    evaluate,
    format_table,
    merge_clear_reports,
    merge_hota_reports,
    merge_identity_reports,
    report_to_dict,
    summary_row,
)
from subco_tracker.core.tracker import track_sequence
from subco_tracker.core.training import TrainingHistory, train
from subco_tracker.data.dataset import (
    generate_dataset,
    list_sequences,
    load_dataset,
    sequence_statistics,
    training_windows,
)
from subco_tracker.data.mot_io import parse_mot_file, write_mot_file

logger = logging.getLogger(__name__)

CONFIG_NAME = "resolved_config.yaml"
CHECKPOINT_NAME = "embedder.json"
TRAIN_LOG_NAME = "train_log.jsonl"


def load_config(args) -> RunConfig:
    cfg = RunConfig.import_yaml(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _split_dir(data_dir, split: str) -> Path:
    data_dir = Path(data_dir)
    return data_dir / split if (data_dir / split).is_dir() else data_dir


def training_samples(cfg: RunConfig, data_dir) -> list:
    sequences = (load_dataset(seq_dir)[0] for seq_dir in list_sequences(_split_dir(data_dir, "train")))
    samples = training_windows(sequences, cfg)
    if not samples:
        raise ValueError(f"No training windows of {cfg.loss.sequence_length} frames found in {data_dir}")
    logger.info(f"Loaded {len(samples)} training windows from {data_dir}")
    return samples


def train_run(cfg: RunConfig, data_dir, out_dir, checkpoint: Optional[Path] = None) -> Tuple[EmbedderParams, TrainingHistory]:
    out_dir = _out_dir(out_dir)
    samples = training_samples(cfg, data_dir)
    params = init_params(cfg.embedder, seed=cfg.seed)
    params, history = train(samples, params, cfg.loss, cfg.optimizer, log_path=out_dir / TRAIN_LOG_NAME)
    save_checkpoint(params, checkpoint or out_dir / CHECKPOINT_NAME)
    return params, history


def track_run(cfg: RunConfig, params: EmbedderParams, data_dir, out_dir) -> Dict[str, Path]:
    """Tracks every sequence of the val split (or a single sequence dir); one result file per sequence."""
    out_dir = _out_dir(out_dir)
    written = {}
    for seq_dir in list_sequences(_split_dir(data_dir, "val")):
        sample, _ = load_dataset(seq_dir)
        results = track_sequence(sample.frames, sample.images, params, cfg.tracker)
        path = out_dir / f"{seq_dir.name}.txt"
        write_mot_file(results, path)
        written[seq_dir.name] = path
        logger.info(f"Tracked {seq_dir.name}: {len({r.track_id for r in results})} tracks, {len(results)} rows")
    return written


def evaluate_pairs(pairs: Sequence[Tuple[str, Path, Path]]):
    """Per-sequence and merged reports for (name, gt file, results file) triples."""
    per_sequence = {}
    for name, gt_path, res_path in pairs:
        per_sequence[name] = evaluate(parse_mot_file(gt_path), parse_mot_file(res_path))
    merged = (
        merge_clear_reports(r[0] for r in per_sequence.values()),
        merge_identity_reports(r[1] for r in per_sequence.values()),
        merge_hota_reports(r[2] for r in per_sequence.values()),
    )
    return per_sequence, merged


def _eval_pairs(gt, results) -> List[Tuple[str, Path, Path]]:
    gt, results = Path(gt), Path(results)
    if gt.is_file():
        if not results.is_file():
            raise FileNotFoundError(f"Results file not found: {results}")
        return [(gt.stem if gt.stem != "gt" else gt.parent.name, gt, results)]
    pairs = []
    for seq_dir in list_sequences(_split_dir(gt, "val")):
        res_path = results / f"{seq_dir.name}.txt"
        if not res_path.exists():
            raise FileNotFoundError(f"No results for {seq_dir.name}: {res_path}")
        pairs.append((seq_dir.name, seq_dir / "gt.txt", res_path))
    return pairs


def cmd_generate(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args.out or cfg.paths.data)
    written = generate_dataset(cfg, out)
    cfg.export_yaml(out / CONFIG_NAME)
    print(f"Wrote {sum(len(v) for v in written.values())} sequences to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args.out or cfg.paths.out)
    checkpoint = Path(args.checkpoint) if args.checkpoint else None
    _, history = train_run(cfg, args.data or cfg.paths.data, out, checkpoint)
    cfg.export_yaml(out / CONFIG_NAME)
    last = history.records[-1] if history.records else None
    if last is not None and last.mean_total is not None:
        print(f"Trained {len(history.records)} epochs, final loss {last.mean_total:.4f}")
    return 0


def cmd_grad_check(args) -> int:
    from subco_tracker.utils.gradcheck import TINY_LOSS, gradient_check_loss, run_gradient_suite

    cfg = load_config(args)
    loss_cfg = gradient_check_loss(cfg.loss) if args.config else TINY_LOSS
    report = run_gradient_suite(num_seeds=args.seeds, loss_cfg=loss_cfg, first_seed=cfg.seed)
    print(report.summary())
    return 0 if report.ok else 1


def cmd_track(args) -> int:
    cfg = load_config(args)
    if not args.checkpoint:
        raise ConfigError("track needs --checkpoint")
    params = load_checkpoint(args.checkpoint, expected=cfg.embedder)
    out = _out_dir(args.out or cfg.paths.out)
    written = track_run(cfg, params, args.data or cfg.paths.data, out)
    cfg.export_yaml(out / CONFIG_NAME)
    print(f"Wrote {len(written)} result files to {out}")
    return 0


def cmd_eval(args) -> int:
    if not args.gt or not args.results:
        raise ConfigError("eval needs --gt and --results")
    per_sequence, merged = evaluate_pairs(_eval_pairs(args.gt, args.results))
    rows = {name: summary_row(*reports) for name, reports in per_sequence.items()}
    if len(rows) > 1:
        rows["all"] = summary_row(*merged)
    table = format_table(rows)
    print(table)
    if args.out:
        out = _out_dir(args.out)
        (out / "metrics.txt").write_text(table + "\n", encoding="utf-8")
        document = {name: report_to_dict(*reports) for name, reports in per_sequence.items()}
        document["all"] = report_to_dict(*merged)
        (out / "metrics.json").write_text(json.dumps(document, indent=2), encoding="utf-8")
    return 0


@dataclass(frozen=True)
class AblationCell:
    sequence_length: int  # 1 means intra-frame loss only
    intra: bool
    stage_costs: Tuple[str, str]
    omega_reid: float

    @property
    def name(self) -> str:
        return (f"T{self.sequence_length}_intra-{'on' if self.intra else 'off'}_"
                f"{'-'.join(self.stage_costs)}_w{self.omega_reid:g}")

    @property
    def valid(self) -> bool:
        return self.sequence_length >= 2 or self.intra

    def apply(self, cfg: RunConfig) -> RunConfig:
        """Config of this cell; T=1 trains on 2-frame windows with the inter-frame term off."""
        loss = replace(cfg.loss,
                       sequence_length=max(self.sequence_length, 2),
                       use_inter=self.sequence_length >= 2,
                       intra_weight=cfg.loss.intra_weight if self.intra else 0.0)
        tracker = replace(cfg.tracker, stage_costs=self.stage_costs, omega_reid=self.omega_reid)
        return replace(cfg, loss=loss, tracker=tracker)


_GRID_AXES = ("sequence_length", "intra", "stage_costs", "omega_reid")


def load_grid(path, cfg: RunConfig) -> List[AblationCell]:
    """Reads explicit value lists per axis; missing axes take the config value."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Grid file not found: {path}")
    grid = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(grid, dict):
        raise ConfigError(f"{path}: the grid must be a mapping of axis -> list of values")
    unknown = sorted(set(grid) - set(_GRID_AXES))
    if unknown:
        raise ConfigError("Unknown grid axis: " + ", ".join(unknown))
    axes = {
        "sequence_length": grid.get("sequence_length", [cfg.loss.sequence_length]),
        "intra": grid.get("intra", [cfg.loss.intra_weight > 0]),
        "stage_costs": grid.get("stage_costs", [[c.value for c in cfg.tracker.stage_costs]]),
        "omega_reid": grid.get("omega_reid", [cfg.tracker.omega_reid]),
    }
    for name, values in axes.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid.{name} must be a non-empty list")
    cells = []
    for length, intra, costs, omega in itertools.product(*axes.values()):
        try:
            costs = tuple(CostMode(c).value for c in costs)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"grid.stage_costs: {e}") from e
        if len(costs) != 2 or int(length) < 1:
            raise ConfigError(f"Invalid grid cell: T={length}, stage_costs={costs}")
        cells.append(AblationCell(int(length), bool(intra), costs, float(omega)))
    return cells


def run_ablation_cell(cell: AblationCell, cfg_dict: Dict[str, Any], data_dir: str, out_dir: str) -> Dict[str, Any]:
    """Trains, tracks and evaluates one cell inside its own directory."""
    row: Dict[str, Any] = {"cell": cell.name, **asdict(cell), "valid": cell.valid}
    if not cell.valid:
        return row
    cfg = cell.apply(RunConfig.from_dict(cfg_dict))
    cell_dir = _out_dir(Path(out_dir) / cell.name)
    cfg.export_yaml(cell_dir / CONFIG_NAME)
    params, _ = train_run(cfg, data_dir, cell_dir)
    written = track_run(cfg, params, data_dir, cell_dir / "results")
    val_dir = _split_dir(data_dir, "val")
    pairs = [(name, val_dir / name / "gt.txt", path) for name, path in written.items()]
    _, merged = evaluate_pairs(pairs)
    (cell_dir / "metrics.json").write_text(json.dumps(report_to_dict(*merged), indent=2), encoding="utf-8")
    row.update(summary_row(*merged))
    return row


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    if not args.grid:
        raise ConfigError("ablate needs --grid")
    cells = load_grid(args.grid, cfg)
    out = _out_dir(args.out or cfg.paths.out)
    cfg.export_yaml(out / CONFIG_NAME)
    data_dir = Path(args.data) if args.data else out / "data"
    if not (data_dir / "train").is_dir():
        logger.info(f"No dataset in {data_dir}, generating one")
        generate_dataset(cfg, data_dir)

    cfg_dict = cfg.to_dict()
    jobs = [(cell, cfg_dict, str(data_dir), str(out)) for cell in cells]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(run_ablation_cell, *zip(*jobs)))
    else:
        rows = [run_ablation_cell(*job) for job in jobs]

    table = pd.DataFrame(rows).set_index("cell")
    text = table.to_string(float_format=lambda v: f"{v:.3f}", na_rep="-")
    (out / "ablation.txt").write_text(text + "\n", encoding="utf-8")
    (out / "ablation.json").write_text(json.dumps(rows, indent=2), encoding="utf-8")
    print(text)
    return 0


def cmd_stats(args) -> int:
    cfg = load_config(args)
    data_dir = Path(args.data or cfg.paths.data)
    rows = {}
    for split in ("train", "val"):
        split_dir = data_dir / split
        if not split_dir.is_dir():
            continue
        stats = [sequence_statistics(load_dataset(seq, with_images=False)[1]) for seq in list_sequences(split_dir)]
        if not stats:
            continue
        lengths = sorted({length for s in stats for length in s.nonempty_overlap})
        row = {"sequences": len(stats),
               "mean_track_length": float(np.mean([np.mean(list(s.track_lengths.values())) for s in stats]))}
        for length in lengths:
            row[f"nonempty_T{length}"] = float(np.mean([s.nonempty_overlap[length] for s in stats
                                                        if length in s.nonempty_overlap]))
            row[f"id_iou_T{length}"] = float(np.mean([s.mean_id_iou[length] for s in stats
                                                      if length in s.mean_id_iou]))
        rows[split] = row
    if not rows:
        raise FileNotFoundError(f"No train/val sequences under {data_dir}")
    print(pd.DataFrame.from_dict(rows, orient="index").to_string(float_format=lambda v: f"{v:.3f}"))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "grad-check": cmd_grad_check,
    "track": cmd_track,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subco_tracker",
                                     description="Self-supervised ReID training and tracking on synthetic MOT data.")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, *flags):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        for flag in flags:
            if flag == "--seeds":
                p.add_argument("--seeds", type=int, default=20, help="number of checked random instances")
            elif flag == "--workers":
                p.add_argument("--workers", type=int, default=1, help="parallel ablation cells")
            else:
                p.add_argument(flag)
        return p

    add("generate", "write a synthetic train/val dataset", "--out")
    add("train", "train the ReID embedder", "--data", "--out", "--checkpoint")
    add("grad-check", "finite-difference gradient checks", "--seeds")
    add("track", "track the val sequences with a trained embedder", "--data", "--out", "--checkpoint")
    add("eval", "evaluate results against ground truth", "--gt", "--results", "--out")
    add("ablate", "train/track/evaluate a grid of settings", "--grid", "--data", "--out", "--workers")
    add("stats", "identity-overlap statistics of a dataset", "--data")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s')
    try:
        return COMMANDS[args.command](args)
    except (SubcoError, FileNotFoundError, ValueError) as e:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.critical(f"Unexpected error in {args.command}: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
