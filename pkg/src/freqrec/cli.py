"""Command-line interface.

Subcommands: prepare, stats, gen-synth, audit-aug, train, eval, sweep,
report, checkpoint inspect. Runs live in per-run directories named by
config hash and seed under --out-dir, the FREQREC_OUT environment variable,
or ./runs. Every error exits nonzero with a single-line `E_CODE: message`
prefix on stderr.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import corpus as C
from . import evaluation as E
from . import model as M
from .augment import build_correlation_index
from .autodiff import NumericalError
from .config import ConfigError, RunConfig
from .reweight import batch_weights, weight_histogram
from .rng import DOMAIN_INIT, RngStream
from .synth import SyntheticSpec, generate_synthetic
from .trainer import OptimizerState, Trainer

logger = logging.getLogger(__name__)


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _out_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get("FREQREC_OUT", "runs"))


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CliError("E_MISSING", f"{what} not found: {path}")
    return path


# --- dataset loading shared by train / eval / audit ---


class Dataset:
    """Dense-indexed training split plus labeled pairs and statistics."""

    def __init__(self, data_dir: Path):
        train_corpus = C.read_corpus(_require(data_dir / "train.txt", "training split"))
        valid_pairs = C.read_pairs(_require(data_dir / "valid.txt", "validation split"))
        test_pairs = C.read_pairs(_require(data_dir / "test.txt", "test split"))
        all_items: set[int] = set()
        for s in train_corpus.sequences:
            all_items.update(s.items)
        for p in list(valid_pairs) + list(test_pairs):
            all_items.update(p.inputs)
            all_items.add(p.target)
        self.vocab = C.ItemVocab(all_items)
        self.train = C.Corpus.build(
            C.InteractionSequence(s.user, self.vocab.encode(s.items))
            for s in train_corpus.sequences
        )
        self.valid = [
            (p.user, self.vocab.encode(p.inputs), self.vocab.index[p.target])
            for p in valid_pairs
        ]
        self.test = [
            (p.user, self.vocab.encode(p.inputs), self.vocab.index[p.target])
            for p in test_pairs
        ]
        self.freq = C.build_frequency_table(self.train)
        self.stats = C.corpus_stats(self.train, self.freq)
        self.user_index = {s.user: i for i, s in enumerate(self.train.sequences)}
        self.user_lengths = {s.user: len(s.items) for s in self.train.sequences}

    def item_bins(self) -> C.FrequencyBins:
        edges = C.tercile_edges(self.freq.counts.values())
        return C.assign_frequency_bins(self.freq, edges)

    def user_bins(self) -> C.FrequencyBins:
        edges = C.tercile_edges(self.user_lengths.values())
        labels = ("low", "medium", "high")[: len(edges) + 1]
        return C.FrequencyBins(edges=edges, labels=labels)


# --- subcommands ---


def cmd_prepare(args) -> int:
    raw = C.read_corpus(_require(Path(args.input), "input interactions"))
    filtered = C.apply_five_core_filter(raw, args.min_count)
    truncated = C.truncate_sequences(filtered, args.max_len)
    split = C.leave_one_out_split(truncated)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    C.write_corpus(split.train, out / "train.txt")
    C.write_pairs(split.valid, out / "valid.txt")
    C.write_pairs(split.test, out / "test.txt")
    freq = C.build_frequency_table(split.train)
    stats = C.corpus_stats(split.train, freq)
    C.write_stats_json(
        stats, split.train.num_users, split.train.num_items, split.excluded_users,
        out / "stats.json",
    )
    print(
        f"prepared {split.train.num_users} users, {split.train.num_items} items "
        f"({split.excluded_users} users excluded) -> {out}"
    )
    return 0


def cmd_stats(args) -> int:
    ds = Dataset(Path(args.data))
    payload = {
        "num_users": ds.train.num_users,
        "num_items": len(ds.vocab),
        "global_avg_frequency": ds.stats.global_avg_frequency,
        "global_avg_length": ds.stats.global_avg_length,
        "total_interactions": ds.train.total_interactions(),
    }
    print(json.dumps(payload, indent=2))
    if args.lambda_hist:
        cfg = RunConfig.from_overrides({"beta": str(args.beta)} if args.beta is not None else {})
        rcfg = cfg.reweight_config()
        weights = batch_weights(
            [s.items for s in ds.train.sequences], ds.freq, ds.stats, rcfg
        )
        with open(args.lambda_hist, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["weight_bucket", "count"])
            for label, count in weight_histogram(weights):
                w.writerow([label, count])
        print(f"lambda histogram -> {args.lambda_hist}")
    return 0


def cmd_gen_synth(args) -> int:
    spec = SyntheticSpec(
        num_users=args.num_users,
        num_items=args.num_items,
        zipf_exponent=args.zipf_exponent,
        min_len=args.min_len,
        max_len=args.max_len,
        seed=args.seed,
    )
    corpus = generate_synthetic(spec)
    C.write_corpus(corpus, args.out)
    print(f"wrote {corpus.num_users} users over {corpus.num_items} items -> {args.out}")
    return 0


def cmd_audit_aug(args) -> int:
    ds = Dataset(Path(args.data))
    cfg = _load_config(args).augmentation_config()
    bins = ds.item_bins()
    rows = E.drop_audit(
        ds.train, ds.freq, bins, cfg, policy=args.policy, trials=args.trials,
        seed=args.seed if args.seed is not None else 0,
    )
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["bin_label", "operator", "expected_perturb_rate", "observed_perturb_rate", "trials"]
        )
        for r in rows:
            w.writerow([r.bin_label, r.operator, f"{r.expected_rate:.6f}", f"{r.observed_rate:.6f}", r.trials])
    for r in rows:
        print(f"{r.bin_label}: observed {r.observed_rate:.4f} expected {r.expected_rate:.4f}")
    print(f"audit ({args.policy}) -> {args.out}")
    return 0


def _load_config(args) -> RunConfig:
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise CliError("E_CONFIG", f"--set expects key=value, got {item!r}")
        k, _, v = item.partition("=")
        overrides[k.strip()] = v.strip()
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    try:
        if getattr(args, "config", None):
            return RunConfig.from_file(_require(Path(args.config), "config file"), overrides)
        return RunConfig.from_overrides(overrides)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise CliError("E_CONFIG", str(exc)) from exc


def run_training(data_dir: Path, cfg: RunConfig, run_dir: Path) -> dict:
    """Train one configuration and write all run artifacts."""
    ds = Dataset(data_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.write(run_dir / "effective.cfg")
    (run_dir / "vocab.json").write_text(ds.vocab.to_json(), encoding="utf-8")

    model_cfg = cfg.model_config()
    loss_cfg = cfg.loss_config()
    contrastive = loss_cfg.cl_weight > 0.0
    corr = build_correlation_index(ds.train, cfg.augmentation_config()) if contrastive else None
    trainer = Trainer(
        train=ds.train,
        freq=ds.freq,
        stats=ds.stats,
        item_index={i: i for i in range(len(ds.vocab))},
        model_cfg=model_cfg,
        train_cfg=cfg.train_config(),
        loss_cfg=loss_cfg,
        aug_cfg=cfg.augmentation_config() if contrastive else None,
        corr=corr,
        reweight_cfg=cfg.reweight_config(),
    )
    params = M.init_params(model_cfg, len(ds.vocab), RngStream(cfg.seed, DOMAIN_INIT))
    valid_dense = [(p[1], p[2]) for p in ds.valid]
    result = trainer.fit(params, valid_dense)

    with open(run_dir / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for entry in result.history:
            fh.write(json.dumps(entry) + "\n")
    M.save_checkpoint(result.best_params, run_dir / "best.ckpt")
    M.save_checkpoint(params, run_dir / "last.ckpt")
    marker = {
        "best_epoch": result.best_epoch,
        "valid_ndcg10": result.best_metric,
        "epochs_run": len(result.history),
    }
    (run_dir / "best.json").write_text(json.dumps(marker, indent=2) + "\n", encoding="utf-8")
    return marker


def cmd_train(args) -> int:
    cfg = _load_config(args)
    run_dir = _out_root(args.out_dir) / f"run_{cfg.config_hash()}_s{cfg.seed}"
    marker = run_training(Path(args.data), cfg, run_dir)
    print(
        f"run {run_dir}: best epoch {marker['best_epoch']} "
        f"valid NDCG@10 {marker['valid_ndcg10']:.4f}"
    )
    return 0


def run_evaluation(data_dir: Path, run_dir: Path) -> dict:
    ds = Dataset(data_dir)
    params = M.load_checkpoint(_require(run_dir / "best.ckpt", "checkpoint"))
    vocab = C.ItemVocab.from_json(
        _require(run_dir / "vocab.json", "vocabulary sidecar").read_text(encoding="utf-8")
    )
    if vocab.items != ds.vocab.items:
        raise CliError("E_VOCAB", "run vocabulary does not match the dataset")
    results = E.evaluate_pairs(params, params.config, ds.test)
    report = E.binned_metrics(
        results, ds.item_bins(), ds.user_bins(), ds.freq, ds.user_lengths
    )
    payload = {"overall": dict(report.overall), "num_instances": len(results)}
    (run_dir / "eval.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    with open(run_dir / "bins.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_kind", "bin_label", "metric", "value", "count"])
        for kind, rows in (("item", report.item_bins), ("user", report.user_bins)):
            for r in rows:
                for metric, value in (("hr@10", r.hr10), ("ndcg@10", r.ndcg10)):
                    w.writerow(
                        [kind, r.label, metric, "" if value is None else f"{value:.6f}", r.count]
                    )
    return payload


def cmd_eval(args) -> int:
    payload = run_evaluation(Path(args.data), Path(args.run_dir))
    print(json.dumps(payload, indent=2))
    return 0


def cmd_sweep(args) -> int:
    base = _load_config(args)
    grid: list[tuple[str, list[str]]] = []
    for spec in args.vary or []:
        if "=" not in spec:
            raise CliError("E_CONFIG", f"--vary expects key=v1,v2,..., got {spec!r}")
        key, _, vals = spec.partition("=")
        grid.append((key.strip(), [v.strip() for v in vals.split(",") if v.strip()]))
    if not grid:
        grid = [("seed", [str(base.seed)])]
    out_root = _out_root(args.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    sweep_csv = out_root / "sweep.csv"
    keys = [k for k, _ in grid]
    done: set[tuple[str, ...]] = set()
    if sweep_csv.exists():
        with open(sweep_csv, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                done.add(tuple(row[k] for k in keys))
    new_file = not sweep_csv.exists()
    with open(sweep_csv, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if new_file:
            w.writerow(keys + ["hr@10", "ndcg@10", "status", "run_dir"])
        for combo in itertools.product(*(vals for _, vals in grid)):
            if tuple(combo) in done:
                print(f"skip completed cell {dict(zip(keys, combo))}")
                continue
            cfg = base.replace(
                **{k: RunConfig.parse_value(k, v) for k, v in zip(keys, combo)}
            )
            run_dir = out_root / f"run_{cfg.config_hash()}_s{cfg.seed}"
            try:
                run_training(Path(args.data), cfg, run_dir)
                payload = run_evaluation(Path(args.data), run_dir)
                w.writerow(
                    list(combo)
                    + [
                        repr(payload["overall"]["hr@10"]),
                        repr(payload["overall"]["ndcg@10"]),
                        "ok",
                        str(run_dir),
                    ]
                )
            except Exception as exc:  # record the failure, keep sweeping
                logger.warning("sweep cell %s failed: %s", combo, exc)
                w.writerow(list(combo) + ["", "", f"error:{exc}", str(run_dir)])
            fh.flush()
    print(f"sweep table -> {sweep_csv}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    expected = ["effective.cfg", "best.json", "train_log.jsonl", "eval.json", "bins.csv"]
    missing = [name for name in expected if not (run_dir / name).exists()]
    if missing:
        raise CliError("E_MISSING", f"run artifacts absent in {run_dir}: {', '.join(missing)}")
    marker = json.loads((run_dir / "best.json").read_text(encoding="utf-8"))
    eval_payload = json.loads((run_dir / "eval.json").read_text(encoding="utf-8"))
    history = [
        json.loads(line)
        for line in (run_dir / "train_log.jsonl").read_text(encoding="utf-8").splitlines()
        if line
    ]
    print(f"run directory: {run_dir}")
    print(f"epochs run: {len(history)}, best epoch: {marker['best_epoch']}")
    print(f"validation NDCG@10: {marker['valid_ndcg10']:.4f}")
    for k, v in eval_payload["overall"].items():
        print(f"test {k}: {v:.4f}")
    if history:
        last = history[-1]
        print(
            f"final losses: rec {last['rec_loss']:.4f} cl {last['cl_loss']:.4f} "
            f"total {last['total']:.4f} mean lambda {last['mean_lambda']:.3f}"
        )
    print("per-bin metrics:")
    with open(run_dir / "bins.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            value = row["value"] or "absent"
            print(
                f"  {row['bin_kind']:>4} {row['bin_label']:>8} {row['metric']:>7}: "
                f"{value} (n={row['count']})"
            )
    out_csv = run_dir / "report.csv"
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["section", "key", "value"])
        for k, v in eval_payload["overall"].items():
            w.writerow(["overall", k, f"{v:.6f}"])
        for entry in history:
            w.writerow(["epoch", entry["epoch"], f"{entry['total']:.6f}"])
    print(f"consolidated report -> {out_csv}")
    return 0


def cmd_checkpoint_inspect(args) -> int:
    rows = M.inspect_checkpoint(_require(Path(args.path), "checkpoint"))
    for name, shape, norm in rows:
        print(f"{name:<24} {str(shape):<16} |x| = {norm:.6g}")
    return 0


# --- argument parsing ---


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freqrec", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="filter, truncate, and split raw interactions")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--min-count", type=int, default=5)
    sp.add_argument("--max-len", type=int, default=50)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("stats", help="corpus statistics and weight histogram")
    sp.add_argument("--data", required=True)
    sp.add_argument("--lambda-hist")
    sp.add_argument("--beta", type=float, default=None)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("gen-synth", help="generate a synthetic long-tail corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--num-users", type=int, required=True)
    sp.add_argument("--num-items", type=int, required=True)
    sp.add_argument("--zipf-exponent", type=float, default=1.2)
    sp.add_argument("--min-len", type=int, default=20)
    sp.add_argument("--max-len", type=int, default=40)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gen_synth)

    sp = sub.add_parser("audit-aug", help="drop-operator audit across frequency bins")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--set", action="append")
    sp.add_argument("--policy", choices=["adaptive", "uniform"], default="adaptive")
    sp.add_argument("--trials", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_audit_aug)

    sp = sub.add_parser("train", help="train one configuration")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config")
    sp.add_argument("--set", action="append")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a trained run on the test split")
    sp.add_argument("--run-dir", required=True)
    sp.add_argument("--data", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="grid sweep over configuration values")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config")
    sp.add_argument("--set", action="append")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--vary", action="append", help="key=v1,v2,... (repeatable)")
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="summarize a completed run directory")
    sp.add_argument("--run-dir", required=True)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("checkpoint", help="checkpoint utilities")
    csub = sp.add_subparsers(dest="ckpt_command", required=True)
    ci = csub.add_parser("inspect", help="print tensor shapes and norms")
    ci.add_argument("--path", required=True)
    ci.set_defaults(func=cmd_checkpoint_inspect)

    return p


_ERROR_CODES = [
    (CliError, None),
    (C.ParseError, "E_PARSE"),
    (C.EmptyCorpusError, "E_EMPTY"),
    (ConfigError, "E_CONFIG"),
    (M.OutOfVocabularyError, "E_VOCAB"),
    (NumericalError, "E_NUMERIC"),
    (FileNotFoundError, "E_MISSING"),
    (KeyError, "E_VOCAB"),
    (ValueError, "E_INVALID"),
]


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        for klass, code in _ERROR_CODES:
            if isinstance(exc, klass):
                actual = exc.code if isinstance(exc, CliError) else code
                print(f"{actual}: {exc}", file=sys.stderr)
                return 2
        print(f"E_INTERNAL: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
