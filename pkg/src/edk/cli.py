"""Command line entry point: ``edk <command> ...``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric/training error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import checkpoint
from .backbones import KINDS
from .config import config_from_dict, load_config, shift_experiment
from .data import (
    DatasetSchema,
    SyntheticConfig,
    encode_records,
    generate_synthetic,
    load_dataset,
    load_schema,
    save_schema,
    write_dataset,
)
from .errors import ConfigError, DataError, EDKError
from .pipeline import (
    KnowledgeBaseParams,
    TrainedBackbone,
    ablate,
    compress,
    evaluate,
    pattern_stats,
    prepare_splits,
    train_backbone,
)

log = logging.getLogger("edk")


def _schema_path(out: Path) -> Path:
    return out.with_name(out.stem + ".schema.json")


def cmd_synth_data(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {args.config}: {e}") from e
    if "vocab_sizes" in raw:
        synth = SyntheticConfig.from_dict(raw)
    else:
        synth = config_from_dict(raw).data.synthetic
        if synth is None:
            raise ConfigError("config has no data.synthetic section")
    records = generate_synthetic(synth)
    out = Path(args.out)
    write_dataset(records, synth.schema(), out)
    save_schema(synth.schema(), _schema_path(out))
    print(json.dumps({"records": len(records), "data": str(out), "schema": str(_schema_path(out))}))
    return 0


def cmd_config(args) -> int:
    print(json.dumps(load_config(args.config).to_dict(), indent=2))
    return 0


def cmd_bench_config(args) -> int:
    cfg = shift_experiment(args.seed)
    cfg.save(args.out)
    print(json.dumps({"config": args.out, "seed": args.seed}))
    return 0


def cmd_compress(args) -> int:
    cfg = load_config(args.config)
    splits = prepare_splits(cfg)
    kb = compress(splits.old, splits.schema, cfg.compression, log_path=args.log)
    kb.save(args.out, splits.schema)
    Path(args.out + ".config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    print(json.dumps({"kb": args.out, "version": kb.version, "epochs": len(kb.history)}))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.backbone:
        cfg = dataclasses.replace(cfg, backbone=dataclasses.replace(cfg.backbone, kind=args.backbone))
    splits = prepare_splits(cfg)
    kb = KnowledgeBaseParams.load(args.kb, splits.schema) if args.kb else None
    if kb is None and cfg.train.baseline_data == "before_t1":
        train_data = splits.before_t1()
    else:
        train_data = splits.train
    trained = train_backbone(train_data, splits.valid, splits.schema, kb, cfg.backbone, cfg.train)
    trained.save(args.out, {"experiment": cfg.to_dict()})
    print(json.dumps({"model": args.out, "best_valid_auc": trained.best_valid_auc}))
    return 0


def cmd_eval(args) -> int:
    if args.config:
        cfg = load_config(args.config)
    else:
        _, meta = checkpoint.load_arrays(args.model)
        if "experiment" not in meta:
            raise ConfigError("model checkpoint has no experiment snapshot; pass --config")
        cfg = config_from_dict(meta["experiment"])
    splits = prepare_splits(cfg)
    trained, _ = TrainedBackbone.load(args.model, splits.schema.vocab_sizes)
    kb = KnowledgeBaseParams.load(args.kb, splits.schema) if args.kb else None
    data = {"valid": splits.valid, "test": splits.test, "train": splits.train, "old": splits.old}[args.split]
    report = evaluate(trained, data, kb, cfg.to_dict())
    out = report.to_dict()
    out.pop("config")
    out["split"] = args.split
    print(json.dumps(out))
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    result = ablate(cfg, out_dir=args.out)
    print(json.dumps(result["table"], indent=2))
    return 0


def cmd_pattern_stats(args) -> int:
    if args.schema:
        schema = load_schema(args.schema)
    else:
        _, meta = checkpoint.load_arrays(args.kb)
        if meta.get("schema") is None:
            raise DataError("knowledge base has no embedded schema; pass --schema")
        schema = DatasetSchema.from_dict(meta["schema"])
    kb = KnowledgeBaseParams.load(args.kb, schema)
    data = encode_records(load_dataset(args.data, schema), schema)
    hist, export = pattern_stats(kb, data, args.out)
    print(json.dumps({"instances": len(data), "histogram_total": int(hist.sum()), "export_rows": len(export)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edk", description="Essential & disentangled knowledge base for CTR models")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="generate a synthetic shift dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("config", help="print the resolved config with all defaults")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_config)

    s = sub.add_parser("bench-config", help="write the reference shift-benchmark config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench_config)

    s = sub.add_parser("compress", help="build a knowledge base from logs before T0")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--log", help="per-step JSONL loss log")
    s.set_defaults(func=cmd_compress)

    s = sub.add_parser("train", help="train a backbone, optionally with a frozen knowledge base")
    s.add_argument("--config", required=True)
    s.add_argument("--kb")
    s.add_argument("--backbone", choices=KINDS)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="AUC / LogLoss of a trained backbone")
    s.add_argument("--model", required=True)
    s.add_argument("--kb")
    s.add_argument("--config")
    s.add_argument("--split", choices=("valid", "test", "train", "old"), default="test")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="principle ablation and K-sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("pattern-stats", help="mask cardinality histogram and vector export")
    s.add_argument("--kb", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--schema")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pattern_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except EDKError as e:
        print(f"edk: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
