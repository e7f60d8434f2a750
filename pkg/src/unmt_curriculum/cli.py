"""Command-line entry points.

Typical pipeline on the synthetic pair::

    unmt-cl gen-data --out data/
    unmt-cl align --data data/
    unmt-cl score --data data/
    unmt-cl train --data data/ --run-dir runs/base --curriculum=off --ae-est=none --bt-est=none
    unmt-cl analyze accel --baseline-log runs/base/metrics.jsonl --cl-log runs/cl/metrics.jsonl --target-bleu 20

Exit status: 0 on success, 1 for invalid configuration or missing inputs,
2 when a run fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import experiments as ex
from .bleu import bucket_analysis, corpus_bleu
from .corpus import SyntheticPairSpec
from .difficulty import CRITERIA
from .trainer import TrainConfig, load_log, measure_acceleration, train

logger = logging.getLogger("unmt_curriculum")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

# short spellings for the estimator placement flags
FLAG_ALIASES = {"ae_estimator": ["--ae-est"], "bt_estimator": ["--bt-est"]}


class ConfigError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("on", "true", "yes", "1"):
        return True
    if low in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def add_train_flags(p: argparse.ArgumentParser, exclude=()) -> None:
    """One flag per TrainConfig field; unset flags keep the base config's value."""
    g = p.add_argument_group("training configuration")
    g.add_argument("--config", type=Path, help="JSON file with TrainConfig keys (flags override it)")
    for f in dataclasses.fields(TrainConfig):
        if f.name in exclude:
            continue
        names = ["--" + f.name.replace("_", "-")] + FLAG_ALIASES.get(f.name, [])
        kind = type(f.default)
        if kind is bool:
            g.add_argument(*names, dest=f.name, type=parse_bool, metavar="on|off", default=None)
        else:
            g.add_argument(*names, dest=f.name, type=kind, default=None,
                           help=f"default {f.default}")
    g.add_argument("--valid-size", type=int, default=None,
                   help="use only the first N validation pairs")


def build_config(args) -> TrainConfig:
    base: Dict = {}
    if getattr(args, "config", None) is not None:
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    for f in dataclasses.fields(TrainConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            base[f.name] = val
    return TrainConfig.from_dict(base)


def _workspace(args) -> ex.Workspace:
    return ex.load_workspace(args.data)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, default=str))


# -- subcommands -------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    spec = SyntheticPairSpec.from_config(args.spec) if args.spec else SyntheticPairSpec()
    overrides = {k: getattr(args, k) for k in ("vocab_size", "num_sentences", "num_gold",
                                               "zipf_exponent", "seed", "word_order")
                 if getattr(args, k) is not None}
    if args.length_range is not None:
        overrides["sentence_length_range"] = tuple(args.length_range)
    spec = dataclasses.replace(spec, **overrides)
    pair = ex.write_synthetic(spec, args.out, args.emb_dim, args.seed_pairs)
    _print({"out": str(args.out), "source_sentences": len(pair.source),
            "target_sentences": len(pair.target), "gold_pairs": len(pair.gold),
            "vocab_size": len(pair.vocab)})
    return EXIT_OK


def cmd_align(args) -> int:
    aligned = ex.align_dir(args.data)
    _print({"dim": aligned.source.dim, "source_rows": int(aligned.source.present.sum()),
            "target_rows": int(aligned.target.present.sum())})
    return EXIT_OK


def cmd_score(args) -> int:
    tables = ex.score_dir(args.data, args.criteria)
    _print({crit: [len(a.normalized), len(b.normalized)] for crit, (a, b) in tables.items()})
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_config(args)
    ws = _workspace(args)
    criterion = cfg.criterion if cfg.curriculum else None
    if criterion is not None and criterion not in ws.tables:
        raise ConfigError(f"no difficulty tables for {criterion!r}; run 'score' first")
    trainer = train(cfg, ws.train_data(criterion, args.valid_size), args.run_dir)
    _print(ex.summarize(Path(args.run_dir).name, cfg, trainer.log))
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.hyp is not None:
        if args.ref is None:
            raise ConfigError("--hyp needs --ref")
        hyps = [line.split() for line in Path(args.hyp).read_text(encoding="utf-8").splitlines()]
        refs = [line.split() for line in Path(args.ref).read_text(encoding="utf-8").splitlines()]
        rep = corpus_bleu(hyps, refs)
    else:
        if args.checkpoint is None or args.data is None:
            raise ConfigError("give --hyp/--ref or --checkpoint/--data")
        ws = _workspace(args)
        trainer = ex.load_trained(args.checkpoint, ws.train_data(None))
        pairs = ws.test if args.split == "test" else ws.valid
        hyps, refs = ex.translate_split(trainer, pairs, args.direction)
        rep = corpus_bleu(hyps, refs)
        if args.out is not None:
            Path(args.out).write_text("".join(" ".join(ws.vocab.decode(h)) + "\n" for h in hyps),
                                      encoding="utf-8")
    _print(dataclasses.asdict(rep))
    return EXIT_OK


def cmd_accel(args) -> int:
    acc = measure_acceleration(load_log(args.baseline_log), load_log(args.cl_log),
                               args.target_bleu, args.key)
    result = dataclasses.asdict(acc)
    result.update(step_ratio=acc.step_ratio, time_ratio=acc.time_ratio, reached=acc.reached,
                  summary=acc.describe())
    _print(result)
    return EXIT_OK


def cmd_buckets(args) -> int:
    ws = _workspace(args)
    data = ws.train_data(None)
    out_a, refs = ex.translate_split(ex.load_trained(args.run_a, data), ws.test, "fwd")
    out_b, _ = ex.translate_split(ex.load_trained(args.run_b, data), ws.test, "fwd")
    rep = bucket_analysis(ws.test_difficulty(), refs, out_a, out_b, args.buckets)
    rep.to_csv(args.out)
    _print({"counts": rep.counts, "bleu_a": rep.bleu_a, "bleu_b": rep.bleu_b,
            "deltas": rep.deltas, "merged": rep.merged})
    return EXIT_OK


def _driver(arms_fn, report_name):
    def run(args) -> int:
        cfg = build_config(args)
        ws = _workspace(args)
        if report_name == "k_sweep":
            arms = ex.k_arms(cfg, args.k_values)
        else:
            arms = arms_fn(cfg)
        missing = {a.criterion for a in arms.values() if a.curriculum} - set(ws.tables)
        if missing:
            raise ConfigError(f"no difficulty tables for {sorted(missing)}; run 'score' first")
        rows = ex.run_arms(arms, ws, args.out, report_name, args.valid_size)
        _print(rows)
        return EXIT_OK
    return run


def cmd_convergence(args) -> int:
    cfg = build_config(args)
    ws = _workspace(args)
    summary = ex.convergence(cfg, ws, args.out, args.seeds, args.fraction, args.valid_size)
    _print(summary)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def make_parser() -> Parser:
    p = Parser(prog="unmt-cl", description="Curriculum-learning UNMT harness on a synthetic language pair.")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    g = sub.add_parser("gen-data", help="write a synthetic language pair and its embeddings")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--spec", type=Path, help="INI file with a [synthetic] section")
    g.add_argument("--vocab-size", type=int)
    g.add_argument("--num-sentences", type=int)
    g.add_argument("--num-gold", type=int)
    g.add_argument("--zipf-exponent", type=float)
    g.add_argument("--length-range", type=int, nargs=2, metavar=("MIN", "MAX"))
    g.add_argument("--word-order", choices=["phrase", "iid"])
    g.add_argument("--seed", type=int)
    g.add_argument("--emb-dim", type=int, default=64)
    g.add_argument("--seed-pairs", type=int, default=100)
    g.set_defaults(func=cmd_gen_data)

    a = sub.add_parser("align", help="Procrustes alignment from the seed dictionary")
    a.add_argument("--data", type=Path, required=True)
    a.set_defaults(func=cmd_align)

    s = sub.add_parser("score", help="difficulty tables for the training corpora")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--criteria", nargs="+", choices=CRITERIA, default=list(CRITERIA))
    s.set_defaults(func=cmd_score)

    t = sub.add_parser("train", help="train one arm")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--run-dir", type=Path, required=True)
    add_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="corpus BLEU of a hypothesis file or a trained run")
    e.add_argument("--hyp", type=Path)
    e.add_argument("--ref", type=Path)
    e.add_argument("--checkpoint", type=Path)
    e.add_argument("--data", type=Path)
    e.add_argument("--split", choices=["valid", "test"], default="test")
    e.add_argument("--direction", choices=["fwd", "bwd"], default="fwd")
    e.add_argument("--out", type=Path, help="write decoded hypotheses here")
    e.set_defaults(func=cmd_eval)

    an = sub.add_parser("analyze", help="comparisons and reports")
    asub = an.add_subparsers(dest="analysis", required=True, parser_class=Parser)

    acc = asub.add_parser("accel", help="step and time acceleration at a BLEU target")
    acc.add_argument("--baseline-log", type=Path, required=True)
    acc.add_argument("--cl-log", type=Path, required=True)
    acc.add_argument("--target-bleu", type=float, required=True)
    acc.add_argument("--key", default="bleu", choices=["bleu", "bleu_fwd", "bleu_bwd"])
    acc.set_defaults(func=cmd_accel)

    b = asub.add_parser("buckets", help="test BLEU per difficulty bucket for two runs")
    b.add_argument("--data", type=Path, required=True)
    b.add_argument("--run-a", type=Path, required=True, help="checkpoint of the reference system")
    b.add_argument("--run-b", type=Path, required=True, help="checkpoint of the compared system")
    b.add_argument("--buckets", type=int, default=5)
    b.add_argument("--out", type=Path, required=True)
    b.set_defaults(func=cmd_buckets)

    drivers = {"k-sweep": (None, "k_sweep", "full method for each k"),
               "criteria": (ex.criteria_arms, "criteria", "curriculum with each difficulty criterion"),
               "estimators": (ex.estimator_arms, "estimators", "quality estimator placements"),
               "ttq-stq": (ex.ttq_stq_arms, "ttq_stq", "token and sentence weight ablations")}
    for name, (fn, report, help_text) in drivers.items():
        d = asub.add_parser(name, help=help_text)
        d.add_argument("--data", type=Path, required=True)
        d.add_argument("--out", type=Path, required=True)
        if name == "k-sweep":
            d.add_argument("--k", type=int, nargs="+", default=[1, 2, 3, 4], dest="k_values")
            add_train_flags(d, exclude=("k",))
        else:
            add_train_flags(d)
        d.set_defaults(func=_driver(fn, report))

    c = asub.add_parser("convergence", help="baseline vs full method over seeds")
    c.add_argument("--data", type=Path, required=True)
    c.add_argument("--out", type=Path, required=True)
    c.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    c.add_argument("--fraction", type=float, default=0.9)
    add_train_flags(c)
    c.set_defaults(func=cmd_convergence)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = make_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"unmt-cl: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"unmt-cl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure during a run
        logger.debug("run failed", exc_info=True)
        print(f"unmt-cl: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
