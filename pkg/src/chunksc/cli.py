"""Command-line surface: corpus evaluation, SC distribution reporting,
toy training and loss-scheme comparison.

Exit codes: 0 success, 2 input error, 3 numerical divergence. Config
precedence is flags > config file > defaults; the effective config is echoed
as a comment header into every output file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys

import numpy as np

from .errors import ChunkscError, DivergenceDetected
from .extractor import (
    LossSetup,
    TrainConfig,
    history_to_csv,
    init_params,
    save_checkpoint,
    train,
)
from .losses import LossKind, ScaleLossConfig, WeightLossConfig, WeightMode
from .metrics import (
    BinEdges,
    SiSdrConfig,
    distribution_report,
    sc_statistics,
    si_sdr,
    si_sdr_improvement,
)
from .signal_core import ActivityConfig, ChunkingConfig, ChunkMode, make_chunks
from .synth import make_corpus
from .wav_io import read_wav


def _add_metric_flags(p: argparse.ArgumentParser):
    p.add_argument("--chunk-ms", type=float, default=250.0, help="chunk length in ms")
    p.add_argument("--hop-ms", type=float, default=125.0, help="training-mode hop in ms")
    p.add_argument(
        "--eval-hop",
        choices=["overlap", "none"],
        default="none",
        help="chunk hop for evaluation: overlapping or non-overlapping",
    )
    p.add_argument("--eta", type=float, default=15.0, help="chunk activity threshold in dB")
    p.add_argument("--clamp-db", type=float, default=60.0, help="symmetric SI-SDR clamp in dB")
    p.add_argument("--bins", default="-5,0,5", help="class bin edges e1,e2,e3 in dB")


def _add_loss_flags(p: argparse.ArgumentParser):
    p.add_argument("--gamma1", type=float, default=1.0)
    p.add_argument("--gamma2", type=float, default=1.0)
    p.add_argument("--weights", default="5,5,1,1", help="class weights w0,w1,w2,w3")
    p.add_argument("--weight-mode", choices=["sum", "count"], default="sum")


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--finetune-lr", type=float, default=0.0002,
                   help="learning rate for the fine-tune stage")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--train-size", type=int, default=200)
    p.add_argument("--val-size", type=int, default=50)
    p.add_argument("--duration", type=float, default=2.0, help="utterance length in seconds")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chunksc",
        description="Chunk-level speaker-confusion metrics and SC-aware training losses",
    )
    parser.add_argument("--config", help="JSON file with flag defaults", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="evaluate a manifest of (estimate, target, mixture) WAV triples")
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--out", required=True, help="report path (.csv or .json)")
    p_eval.add_argument("--format", choices=["csv", "json"], default=None)
    _add_metric_flags(p_eval)

    p_dist = sub.add_parser("distribution", help="aggregate 4-class chunk distribution over a manifest")
    p_dist.add_argument("--manifest", required=True)
    p_dist.add_argument("--out", required=True)
    p_dist.add_argument("--format", choices=["csv", "json"], default=None)
    _add_metric_flags(p_dist)

    p_train = sub.add_parser("train", help="train the toy extractor on synthetic mixtures")
    p_train.add_argument("--loss", choices=["plain", "scale", "weight"], default="plain")
    p_train.add_argument("--epochs", type=int, default=20)
    p_train.add_argument("--warmup-epochs", type=int, default=0,
                         help="plain-loss warm-up epochs before the configured loss")
    _add_train_flags(p_train)
    _add_metric_flags(p_train)
    _add_loss_flags(p_train)

    p_cmp = sub.add_parser("compare", help="one warm-up, three fine-tunes (plain/scale/weight)")
    p_cmp.add_argument("--warmup-epochs", type=int, default=20,
                       help="plain-loss warm-up epochs shared by all fine-tunes")
    p_cmp.add_argument("--finetune-epochs", type=int, default=10)
    _add_train_flags(p_cmp)
    _add_metric_flags(p_cmp)
    _add_loss_flags(p_cmp)

    # Config-file overrides must be applied per subparser: a subcommand's own
    # defaults overwrite anything set on the top-level namespace.
    parser.subparsers = [parser, p_eval, p_dist, p_train, p_cmp]
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    # Two-pass parse so a config file can supply defaults below the flags.
    pre, _ = parser.parse_known_args(argv)
    if pre.config:
        with open(pre.config) as fh:
            overrides = json.load(fh)
        overrides = {k.replace("-", "_"): v for k, v in overrides.items()}
        for sub in parser.subparsers:
            dests = {a.dest for a in sub._actions}
            applicable = {k: v for k, v in overrides.items() if k in dests}
            if applicable:
                sub.set_defaults(**applicable)
    return parser.parse_args(argv)


def _effective_config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "config"}
    return cfg


def _parse_floats(text: str, name: str, n: int) -> tuple[float, ...]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != n:
        raise ValueError(f"{name} needs {n} comma-separated values")
    return tuple(parts)


def _metric_configs(args):
    mode = ChunkMode.TRAINING if args.eval_hop == "overlap" else ChunkMode.INFERENCE
    chunking = ChunkingConfig(chunk_len_ms=args.chunk_ms, hop_ms=args.hop_ms, mode=mode)
    activity = ActivityConfig(eta_db=args.eta)
    sisdr_cfg = SiSdrConfig(clamp_db=args.clamp_db)
    bins = BinEdges(_parse_floats(args.bins, "--bins", 3))
    return chunking, activity, sisdr_cfg, bins


def _read_manifest(path: str) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for i, row in enumerate(reader):
            if not row or row[0].startswith("#"):
                continue
            if i == 0 and row == ["estimate", "target", "mixture"]:
                continue
            if len(row) != 3:
                raise ValueError(f"manifest row {i + 1}: expected 3 paths, got {len(row)}")
            rows.append((row[0].strip(), row[1].strip(), row[2].strip()))
    if not rows:
        raise ValueError("manifest is empty")
    return rows


def _load_triple(row, row_num):
    est, tgt, mix = (read_wav(p) for p in row)
    if not (len(est) == len(tgt) == len(mix)):
        raise ValueError(f"manifest row {row_num}: sample counts differ")
    if not (est.sample_rate == tgt.sample_rate == mix.sample_rate):
        raise ValueError(f"manifest row {row_num}: sample rates differ")
    return est, tgt, mix


def _evaluate_manifest(args):
    chunking, activity, sisdr_cfg, bins = _metric_configs(args)
    rows = _read_manifest(args.manifest)
    report = []
    for n, row in enumerate(rows, start=1):
        try:
            est, tgt, mix = _load_triple(row, n)
            chunks = make_chunks(len(est), chunking, est.sample_rate)
            stats = sc_statistics(est, tgt, mix, chunks, activity, sisdr_cfg, bins)
            report.append(
                {
                    "id": os.path.splitext(os.path.basename(row[0]))[0],
                    "si_sdr": si_sdr(est, tgt, sisdr_cfg),
                    "si_sdri": si_sdr_improvement(est, tgt, mix, sisdr_cfg),
                    "stats": stats,
                }
            )
        except (OSError, ValueError, ChunkscError) as exc:
            raise ValueError(f"manifest row {n} ({row[0]}): {exc}") from exc
    return report


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _write_report(path, fmt, config, columns, rows, summary=None):
    fmt = fmt or ("json" if path.endswith(".json") else "csv")
    if fmt == "csv":
        lines = ["# config: " + json.dumps(config, sort_keys=True)]
        lines.append(",".join(columns))
        for row in rows:
            lines.append(",".join(str(v) if not isinstance(v, float) else _fmt(v) for v in row))
        if summary:
            lines.append(",".join(str(v) if not isinstance(v, float) else _fmt(v) for v in summary))
        text = "\n".join(lines) + "\n"
    else:
        def cell(v):
            # non-finite floats have no JSON literal; use null
            if isinstance(v, float):
                return round(v, 6) if math.isfinite(v) else None
            return v

        payload = {
            "config": config,
            "columns": columns,
            "rows": [[cell(v) for v in row] for row in rows],
        }
        if summary:
            payload["summary"] = [cell(v) for v in summary]
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    with open(path, "w") as fh:
        fh.write(text)


def cmd_eval(args) -> int:
    report = _evaluate_manifest(args)
    columns = ["id", "si_sdr", "si_sdri", "r_scr", "s0", "s1", "s2", "s3", "degenerate"]
    rows = []
    n_sc = n_valid = 0
    for r in report:
        s = r["stats"]
        rows.append(
            [r["id"], r["si_sdr"], r["si_sdri"], s.r_scr, *s.class_freq, int(s.degenerate)]
        )
        n_sc += s.n_sc
        n_valid += s.n_valid
    mean_sisdri = float(np.mean([r["si_sdri"] for r in report]))
    # Corpus r_scr pools counts across utterances (not a mean of ratios).
    pooled_rscr = 100.0 * n_sc / n_valid if n_valid else 0.0
    summary = ["summary", float("nan"), mean_sisdri, pooled_rscr, "", "", "", "", ""]
    _write_report(args.out, args.format, _effective_config(args), columns, rows, summary)
    return 0


def cmd_distribution(args) -> int:
    report = _evaluate_manifest(args)
    agg = distribution_report([r["stats"] for r in report])
    columns = ["s0", "s1", "s2", "s3", "sc_s0", "sc_s1", "n_valid", "n_sc"]
    rows = [[*agg.class_freq, *agg.sc_class_freq, agg.n_valid, agg.n_sc]]
    _write_report(args.out, args.format, _effective_config(args), columns, rows)
    return 0


def _train_setup(args, loss_kind: LossKind) -> LossSetup:
    chunking = ChunkingConfig(chunk_len_ms=args.chunk_ms, hop_ms=args.hop_ms)
    return LossSetup(
        loss_kind=loss_kind,
        chunking=chunking,
        activity=ActivityConfig(eta_db=args.eta),
        sisdr_cfg=SiSdrConfig(clamp_db=args.clamp_db),
        scale_cfg=ScaleLossConfig(gamma1=args.gamma1, gamma2=args.gamma2),
        weight_cfg=WeightLossConfig(
            weights=_parse_floats(args.weights, "--weights", 4),
            mode=WeightMode.SUM_PER_CLASS if args.weight_mode == "sum" else WeightMode.COUNT_PER_CLASS,
        ),
        bins=BinEdges(_parse_floats(args.bins, "--bins", 3)),
    )


def _make_datasets(args):
    corpus = make_corpus(args.train_size, seed=args.seed, duration_s=args.duration)
    validation = make_corpus(args.val_size, seed=args.seed + 1000, duration_s=args.duration)
    return corpus, validation


def _renumber(history, offset):
    for row in history:
        row.epoch += offset
    return history


def cmd_train(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    loss_kind = LossKind(args.loss)
    corpus, validation = _make_datasets(args)
    params = init_params(args.seed)
    history = []
    try:
        if args.warmup_epochs > 0:
            cfg = TrainConfig(
                loss_kind=LossKind.PLAIN,
                learning_rate=args.lr,
                epochs=args.warmup_epochs,
                batch=args.batch,
                seed=args.seed,
            )
            params, history = train(cfg, corpus, validation, _train_setup(args, LossKind.PLAIN), params)
        cfg = TrainConfig(
            loss_kind=loss_kind,
            learning_rate=args.finetune_lr if args.warmup_epochs > 0 else args.lr,
            epochs=args.epochs,
            batch=args.batch,
            seed=args.seed,
        )
        params, fine = train(cfg, corpus, validation, _train_setup(args, loss_kind), params)
        history += _renumber(fine, args.warmup_epochs)
    except DivergenceDetected as exc:
        history += _renumber(getattr(exc, "history", []), args.warmup_epochs)
        _write_train_outputs(args, None, history)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    _write_train_outputs(args, params, history)
    return 0


def _write_train_outputs(args, params, history):
    header = "# config: " + json.dumps(_effective_config(args), sort_keys=True) + "\n"
    with open(os.path.join(args.out, "history.csv"), "w") as fh:
        fh.write(header + history_to_csv(history))
    if params is not None:
        save_checkpoint(os.path.join(args.out, "checkpoint.json"), params)


def cmd_compare(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    corpus, validation = _make_datasets(args)

    warm_cfg = TrainConfig(
        loss_kind=LossKind.PLAIN,
        learning_rate=args.lr,
        epochs=args.warmup_epochs,
        batch=args.batch,
        seed=args.seed,
    )
    base_params, _ = train(
        warm_cfg, corpus, validation, _train_setup(args, LossKind.PLAIN), init_params(args.seed)
    )
    warm_path = os.path.join(args.out, "warmup_checkpoint.json")
    save_checkpoint(warm_path, base_params)
    with open(warm_path, "rb") as fh:
        warm_hash = hashlib.sha256(fh.read()).hexdigest()

    rows = []
    try:
        for kind in (LossKind.PLAIN, LossKind.SCALE, LossKind.WEIGHT):
            cfg = TrainConfig(
                loss_kind=kind,
                learning_rate=args.finetune_lr,
                epochs=args.finetune_epochs,
                batch=args.batch,
                seed=args.seed,
            )
            params, history = train(
                cfg, corpus, validation, _train_setup(args, kind), base_params
            )
            final = history[-1]
            rows.append([kind.value, warm_hash, final.val_sisdri, final.val_rscr])
            save_checkpoint(os.path.join(args.out, f"{kind.value}_checkpoint.json"), params)
            with open(os.path.join(args.out, f"{kind.value}_history.csv"), "w") as fh:
                fh.write(history_to_csv(history))
    except DivergenceDetected as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    columns = ["loss", "warmup_sha256", "final_val_sisdri", "final_val_rscr"]
    _write_report(
        os.path.join(args.out, "comparison.csv"),
        "csv",
        _effective_config(args),
        columns,
        rows,
    )
    return 0


def main(argv=None) -> int:
    try:
        args = parse_args(argv if argv is not None else sys.argv[1:])
    except json.JSONDecodeError as exc:
        print(f"error: bad config file: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "distribution":
            return cmd_distribution(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "compare":
            return cmd_compare(args)
    except (OSError, ValueError, ChunkscError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
