"""Synthetic-pair workspace and the comparison drivers (criteria, estimators, k, convergence)."""

from __future__ import annotations

import csv
import json
import logging
import statistics
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import (
    CorpusError,
    MonoCorpus,
    SyntheticPair,
    SyntheticPairSpec,
    Vocabulary,
    load_corpus,
    write_sentences,
)
from .difficulty import CRITERIA, DifficultyTable, TfidfModel, build_table
from .trainer import TrainConfig, TrainData, Trainer, measure_acceleration, train
from .xlembed import (
    AlignedEmbeddings,
    load_embeddings,
    matrix_from_vectors,
    procrustes_align,
    read_seed_dict,
    seed_ids,
    write_seed_dict,
    write_vec,
)

logger = logging.getLogger(__name__)


@dataclass
class Workspace:
    """A language pair ready for training: corpora, alignment, held-out pairs, difficulty tables."""

    vocab: Vocabulary
    source: MonoCorpus
    target: MonoCorpus
    aligned: AlignedEmbeddings
    valid: List[Tuple[tuple, tuple]]
    test: List[Tuple[tuple, tuple]]
    tables: Dict[str, Tuple[DifficultyTable, DifficultyTable]]
    pair: Optional[SyntheticPair] = None

    def train_data(self, criterion: Optional[str] = "xling", valid_size: Optional[int] = None) -> TrainData:
        valid = self.valid if valid_size is None else self.valid[:valid_size]
        tables = None if criterion is None else self.tables[criterion]
        return TrainData(self.vocab, (self.source, self.target), valid, tables,
                         self.aligned.joint_rows())

    def test_difficulty(self) -> np.ndarray:
        """xling difficulty of the test sources, idf taken from the training corpus."""
        tfidf = TfidfModel(self.source.sentences)
        corpus = MonoCorpus(self.source.language, [s for s, _ in self.test], self.vocab)
        return build_table(corpus, "xling", self.aligned, "source", tfidf=tfidf).normalized


def score_tables(source: MonoCorpus, target: MonoCorpus, aligned: AlignedEmbeddings,
                 criteria: Sequence[str] = CRITERIA) -> Dict[str, Tuple[DifficultyTable, DifficultyTable]]:
    return {crit: (build_table(source, crit, aligned, "source"),
                   build_table(target, crit, aligned, "target")) for crit in criteria}


def prepare_synthetic(spec: SyntheticPairSpec, emb_dim: int = 64, seed_pairs: int = 100,
                      noise_min: float = 0.1, noise_max: float = 0.5) -> Workspace:
    """Generate the pair, its monolingual embeddings, the Procrustes alignment and all difficulty tables.

    The seed dictionary is the gold lexicon restricted to the ``seed_pairs``
    most frequent source words.
    """
    pair = SyntheticPair(spec)
    src_vecs, tgt_vecs = pair.embeddings(emb_dim, noise_min, noise_max)
    vocab = pair.vocab
    src = matrix_from_vectors(src_vecs, vocab, spec.src_lang, seed=1)
    tgt = matrix_from_vectors(tgt_vecs, vocab, spec.tgt_lang, seed=2)
    aligned = procrustes_align(src, tgt, seed_ids(seed_dictionary(pair, seed_pairs, emb_dim), vocab))
    half = len(pair.gold) // 2
    return Workspace(vocab, pair.source, pair.target, aligned, pair.gold[:half], pair.gold[half:],
                     score_tables(pair.source, pair.target, aligned), pair)


def seed_dictionary(pair: SyntheticPair, seed_pairs: int, emb_dim: int) -> List[Tuple[str, str]]:
    # at least emb_dim pairs so the Procrustes problem is well posed
    return pair.lexicon_pairs()[:max(seed_pairs, emb_dim)]


# ---------------------------------------------------------------------------
# Data directories: gen-data -> align -> score -> train
# ---------------------------------------------------------------------------

VOCAB_FILE = "vocab.txt"
SEED_DICT_FILE = "seed_dict.tsv"


def _write_pairs(data_dir: Path, name: str, pairs, vocab: Vocabulary) -> None:
    write_sentences(data_dir / f"{name}.src", (vocab.decode(a) for a, _ in pairs))
    write_sentences(data_dir / f"{name}.tgt", (vocab.decode(b) for _, b in pairs))


def _read_pairs(data_dir: Path, name: str, vocab: Vocabulary) -> List[Tuple[tuple, tuple]]:
    src = load_corpus(data_dir / f"{name}.src", vocab, "src").sentences
    tgt = load_corpus(data_dir / f"{name}.tgt", vocab, "tgt").sentences
    if len(src) != len(tgt):
        raise CorpusError(f"{name}: {len(src)} source vs {len(tgt)} target lines")
    return list(zip(src, tgt))


def write_synthetic(spec: SyntheticPairSpec, data_dir, emb_dim: int = 64, seed_pairs: int = 100,
                    noise_min: float = 0.1, noise_max: float = 0.5) -> SyntheticPair:
    """Write corpora, held-out pairs, monolingual embeddings and the seed dictionary."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    pair = SyntheticPair(spec)
    pair.vocab.save(data_dir / VOCAB_FILE)
    pair.source.save(data_dir / "train.src")
    pair.target.save(data_dir / "train.tgt")
    half = len(pair.gold) // 2
    _write_pairs(data_dir, "valid", pair.gold[:half], pair.vocab)
    _write_pairs(data_dir, "test", pair.gold[half:], pair.vocab)
    src_vecs, tgt_vecs = pair.embeddings(emb_dim, noise_min, noise_max)
    write_vec(data_dir / "emb.src.vec", src_vecs)
    write_vec(data_dir / "emb.tgt.vec", tgt_vecs)
    write_seed_dict(data_dir / SEED_DICT_FILE, seed_dictionary(pair, seed_pairs, emb_dim))
    write_seed_dict(data_dir / "lexicon.tsv", pair.lexicon_pairs())
    (data_dir / "spec.json").write_text(json.dumps(asdict(spec), indent=2) + "\n")
    return pair


def align_dir(data_dir) -> AlignedEmbeddings:
    """Procrustes-map the source embeddings onto the target space; writes ``aligned.*.vec``."""
    data_dir = Path(data_dir)
    vocab = Vocabulary.load(data_dir / VOCAB_FILE)
    src = load_embeddings(data_dir / "emb.src.vec", vocab, "src", seed=1)
    tgt = load_embeddings(data_dir / "emb.tgt.vec", vocab, "tgt", seed=2)
    aligned = procrustes_align(src, tgt, seed_ids(read_seed_dict(data_dir / SEED_DICT_FILE), vocab))
    for side, m in (("src", aligned.source), ("tgt", aligned.target)):
        write_vec(data_dir / f"aligned.{side}.vec",
                  {vocab.tokens[i]: m.rows[i] for i in np.flatnonzero(m.present)})
    np.savetxt(data_dir / "mapping.txt", aligned.mapping, fmt="%.17g")
    return aligned


def _load_aligned(data_dir: Path, vocab: Vocabulary) -> AlignedEmbeddings:
    if not (data_dir / "aligned.src.vec").exists():
        raise FileNotFoundError(f"{data_dir}: no aligned embeddings; run 'align' first")
    src = load_embeddings(data_dir / "aligned.src.vec", vocab, "src", seed=1)
    tgt = load_embeddings(data_dir / "aligned.tgt.vec", vocab, "tgt", seed=2)
    return AlignedEmbeddings(src, tgt, np.loadtxt(data_dir / "mapping.txt", ndmin=2))


def score_dir(data_dir, criteria: Sequence[str] = CRITERIA):
    """Difficulty tables for both training corpora; writes ``difficulty.<criterion>.<side>.csv``."""
    data_dir = Path(data_dir)
    vocab = Vocabulary.load(data_dir / VOCAB_FILE)
    source = load_corpus(data_dir / "train.src", vocab, "src")
    target = load_corpus(data_dir / "train.tgt", vocab, "tgt")
    tables = score_tables(source, target, _load_aligned(data_dir, vocab), criteria)
    for crit, (a, b) in tables.items():
        a.to_csv(data_dir / f"difficulty.{crit}.src.csv")
        b.to_csv(data_dir / f"difficulty.{crit}.tgt.csv")
    return tables


def load_workspace(data_dir, max_len: int = 100) -> Workspace:
    data_dir = Path(data_dir)
    vocab = Vocabulary.load(data_dir / VOCAB_FILE)
    source = load_corpus(data_dir / "train.src", vocab, "src", max_len)
    target = load_corpus(data_dir / "train.tgt", vocab, "tgt", max_len)
    aligned = _load_aligned(data_dir, vocab)
    tables = {}
    for crit in CRITERIA:
        paths = [data_dir / f"difficulty.{crit}.{side}.csv" for side in ("src", "tgt")]
        if all(p.exists() for p in paths):
            tables[crit] = tuple(DifficultyTable.from_csv(p, crit) for p in paths)
    for crit, (a, b) in tables.items():
        if len(a.normalized) != len(source) or len(b.normalized) != len(target):
            raise CorpusError(f"difficulty.{crit} tables do not match the corpora; rerun 'score'")
    return Workspace(vocab, source, target, aligned, _read_pairs(data_dir, "valid", vocab),
                     _read_pairs(data_dir, "test", vocab), tables)


# ---------------------------------------------------------------------------
# Arms and drivers
# ---------------------------------------------------------------------------

def full_method(base: TrainConfig, **overrides) -> TrainConfig:
    """Batch curriculum + JS on denoising + CP on back-translation."""
    return replace(base, curriculum=True, ae_estimator="js", bt_estimator="cp", **overrides)


def baseline(base: TrainConfig, **overrides) -> TrainConfig:
    return replace(base, curriculum=False, ae_estimator="none", bt_estimator="none", **overrides)


def eval_records(log: Sequence[dict]) -> List[dict]:
    return [r for r in log if r["type"] == "eval"]


def summarize(name: str, config: TrainConfig, log: Sequence[dict]) -> dict:
    evals = eval_records(log)
    final = evals[-1]
    best = max(evals, key=lambda r: r["bleu"])
    train_recs = [r for r in log if r["type"] == "train"]
    return {"arm": name, "seed": config.seed, "steps": final["t"],
            "final_bleu_fwd": round(final["bleu_fwd"], 4), "final_bleu_bwd": round(final["bleu_bwd"], 4),
            "final_bleu": round(final["bleu"], 4), "best_bleu": round(best["bleu"], 4),
            "best_step": best["t"],
            "final_loss": round(train_recs[-1]["loss"], 6) if train_recs else None}


def deterministic_view(log: Sequence[dict]) -> List[dict]:
    """The log without wall-clock fields."""
    return [{k: v for k, v in r.items() if k != "wall_seconds"} for r in log]


def run_arms(arms: Dict[str, TrainConfig], ws: Workspace, out_dir, report_name: str,
             valid_size: Optional[int] = None) -> List[dict]:
    """Train each arm into ``out_dir/<arm>/`` and write ``out_dir/<report_name>.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, cfg in arms.items():
        criterion = cfg.criterion if cfg.curriculum else None
        trainer = train(cfg, ws.train_data(criterion, valid_size), out_dir / name)
        rows.append(summarize(name, cfg, trainer.log))
    write_report(out_dir / f"{report_name}.csv", rows)
    return rows


def write_report(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def criteria_arms(base: TrainConfig) -> Dict[str, TrainConfig]:
    arms = {"baseline": baseline(base)}
    for crit in CRITERIA:
        arms[f"bt_{crit}"] = replace(baseline(base), curriculum=True, criterion=crit)
    return arms


ESTIMATOR_GRID = (("none", "none"), ("js", "js"), ("var", "var"), ("none", "cp"), ("js", "cp"))


def estimator_arms(base: TrainConfig) -> Dict[str, TrainConfig]:
    return {f"ae_{ae}+bt_{bt}": replace(base, curriculum=False, ae_estimator=ae, bt_estimator=bt)
            for ae, bt in ESTIMATOR_GRID}


def ttq_stq_arms(base: TrainConfig) -> Dict[str, TrainConfig]:
    cfg = replace(base, curriculum=False, ae_estimator="js", bt_estimator="cp")
    return {"baseline": baseline(base), "ae_js+bt_cp": cfg,
            "without_stq": replace(cfg, use_stq=False), "without_ttq": replace(cfg, use_ttq=False)}


def k_arms(base: TrainConfig, ks: Sequence[int] = (1, 2, 3, 4)) -> Dict[str, TrainConfig]:
    return {f"k{k}": full_method(base, k=k) for k in ks}


def convergence(base: TrainConfig, ws: Workspace, out_dir, seeds: Sequence[int] = (0, 1, 2),
                fraction: float = 0.9, valid_size: Optional[int] = None) -> dict:
    """Baseline vs full method over several seeds; steps to reach ``fraction`` of baseline's final BLEU."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in seeds:
        arms = {"baseline": baseline(base, seed=seed), "full": full_method(base, seed=seed)}
        logs = {}
        for name, cfg in arms.items():
            criterion = cfg.criterion if cfg.curriculum else None
            trainer = train(cfg, ws.train_data(criterion, valid_size), out_dir / f"{name}_seed{seed}")
            logs[name] = trainer.log
        final = eval_records(logs["baseline"])[-1]["bleu"]
        target = fraction * final
        acc = measure_acceleration(logs["baseline"], logs["full"], target)
        per_dir = {}
        for key in ("bleu_fwd", "bleu_bwd"):
            d_target = fraction * eval_records(logs["baseline"])[-1][key]
            per_dir[key] = measure_acceleration(logs["baseline"], logs["full"], d_target, key).step_ratio
        rows.append({"seed": seed, "baseline_final_bleu": round(final, 4),
                     "full_final_bleu": round(eval_records(logs["full"])[-1]["bleu"], 4),
                     "target_bleu": round(target, 4), "baseline_step": acc.baseline_step,
                     "full_step": acc.cl_step, "step_ratio": acc.step_ratio,
                     "time_ratio": None if acc.time_ratio is None else round(acc.time_ratio, 3),
                     "step_ratio_fwd": per_dir["bleu_fwd"], "step_ratio_bwd": per_dir["bleu_bwd"]})
    write_report(out_dir / "convergence.csv", rows)
    inf = float("inf")
    base_steps = [r["baseline_step"] if r["baseline_step"] is not None else inf for r in rows]
    full_steps = [r["full_step"] if r["full_step"] is not None else inf for r in rows]
    summary = {"median_baseline_step": statistics.median(base_steps),
               "median_full_step": statistics.median(full_steps),
               "per_seed": rows}
    m_full = summary["median_full_step"]
    summary["median_step_ratio"] = (summary["median_baseline_step"] / m_full
                                    if m_full not in (0, inf) else None)
    (out_dir / "convergence_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


# ---------------------------------------------------------------------------
# Decoding held-out pairs with a finished run
# ---------------------------------------------------------------------------

def load_trained(checkpoint, data: TrainData) -> Trainer:
    """Trainer restored from a run checkpoint (no run directory side effects)."""
    return Trainer.restore(checkpoint, data)


def translate_split(trainer: Trainer, pairs: Sequence[Tuple[tuple, tuple]],
                    direction: str = "fwd") -> Tuple[List[List[int]], List[List[int]]]:
    """Beam-search outputs and references for held-out pairs in one direction."""
    if direction not in ("fwd", "bwd"):
        raise ValueError("direction must be 'fwd' or 'bwd'")
    src = [list(a) if direction == "fwd" else list(b) for a, b in pairs]
    ref = [list(b) if direction == "fwd" else list(a) for a, b in pairs]
    langs = (0, 1) if direction == "fwd" else (1, 0)
    return trainer.translate(src, *langs), ref
