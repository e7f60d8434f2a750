"""UNMT training loop: denoising and on-the-fly back-translation in both directions,
with optional batch-level curriculum and quality-weighted losses."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .bleu import corpus_bleu
from .corpus import EOS_ID, MonoCorpus, Vocabulary
from .difficulty import DifficultyTable
from .quality import (
    ESTIMATORS,
    gold_probs,
    js_scores,
    normalize_weights,
    stq_batch,
    ttq_batch,
    var_scores,
)
from .scheduler import CompetenceSchedule, CurriculumScheduler
from .seq2seq.model import (
    ModelConfig,
    Seq2Seq,
    decode_loss,
    forward_distributions,
    init_from_embeddings,
    source_batch,
    target_batch,
)
from .seq2seq.noise import NoiseConfig, corrupt
from .seq2seq.search import beam_translate, greedy_translate

logger = logging.getLogger(__name__)

_PURPOSE = {"noise": 1, "dropout": 2, "pass": 3}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    # optimisation
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.998
    batch_tokens: int = 2000
    max_len: int = 100
    total_steps: int = 20000
    eval_every: int = 1000
    seed: int = 0
    # batch-level curriculum
    curriculum: bool = False
    c0: float = 0.01
    p: float = 2.0
    T: int = 10000
    criterion: str = "xling"
    separate_streams: bool = False
    # sentence/token-level weighting
    ae_estimator: str = "none"
    bt_estimator: str = "none"
    k: int = 2
    q_passes: int = 5
    use_ttq: bool = True
    use_stq: bool = True
    js_polarity: str = "confidence"
    # decoding
    beam_size: int = 4
    length_penalty: float = 1.0
    # model
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    feedforward_dim: int = 256
    dropout_rate: float = 0.1
    # denoising noise
    drop_prob: float = 0.1
    blank_prob: float = 0.1
    shuffle_window: int = 3
    dump_weights: bool = False

    def __post_init__(self):
        if self.ae_estimator not in ("none", "js", "var"):
            raise ValueError(f"ae_estimator must be none, js or var; got {self.ae_estimator!r}")
        if self.bt_estimator not in ESTIMATORS:
            raise ValueError(f"bt_estimator must be one of {ESTIMATORS}; got {self.bt_estimator!r}")
        if self.curriculum and self.total_steps < self.T:
            raise ValueError("total_steps must be >= T so the curriculum completes")
        if self.eval_every < 1 or self.total_steps < 1:
            raise ValueError("eval_every and total_steps must be positive")
        CompetenceSchedule(self.c0, self.p, self.T)

    def schedule(self) -> Optional[CompetenceSchedule]:
        return CompetenceSchedule(self.c0, self.p, self.T) if self.curriculum else None

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, layers=self.layers, heads=self.heads,
                           model_dim=self.model_dim, feedforward_dim=self.feedforward_dim,
                           dropout_rate=self.dropout_rate, max_len=self.max_len, seed=self.seed)

    def noise_config(self) -> NoiseConfig:
        return NoiseConfig(self.drop_prob, self.blank_prob, self.shuffle_window, self.seed)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainData:
    """Everything the loop consumes. ``valid`` pairs a language-0 sentence with its language-1 reference."""

    vocab: Vocabulary
    corpora: Tuple[MonoCorpus, MonoCorpus]
    valid: List[Tuple[Sequence[int], Sequence[int]]]
    tables: Optional[Tuple[DifficultyTable, DifficultyTable]] = None
    embeddings: Optional[np.ndarray] = None

    def language_masks(self) -> List[torch.Tensor]:
        """Tokens each language's decoder may emit: those seen in its corpus, plus the end symbol."""
        masks = []
        for corpus in self.corpora:
            m = torch.zeros(len(self.vocab), dtype=torch.bool)
            for s in corpus.sentences:
                m[list(s)] = True
            m[EOS_ID] = True
            masks.append(m)
        return masks

    def fingerprint(self) -> Dict[str, str]:
        def digest(obj) -> str:
            return hashlib.sha256(json.dumps(obj).encode()).hexdigest()[:16]
        out = {"vocab": digest(self.vocab.tokens)}
        for i, c in enumerate(self.corpora):
            out[f"corpus{i}"] = digest([list(s) for s in c.sentences])
        out["valid"] = digest([[list(a), list(b)] for a, b in self.valid])
        if self.tables is not None:
            for i, t in enumerate(self.tables):
                out[f"table{i}"] = digest([repr(float(x)) for x in t.normalized])
        if self.embeddings is not None:
            out["embeddings"] = hashlib.sha256(np.ascontiguousarray(self.embeddings).tobytes()).hexdigest()[:16]
        return out


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


class Trainer:
    """Owns the model, optimiser and per-language schedulers.

    ``t`` counts optimiser updates (AE and BT alike). Every random draw is
    seeded from (config seed, t, purpose), so a run restored from a
    checkpoint replays the uninterrupted run exactly.
    """

    def __init__(self, config: TrainConfig, data: TrainData, run_dir=None):
        self.config = config
        self.data = data
        self.run_dir = Path(run_dir) if run_dir is not None else None
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
        self.model = Seq2Seq(config.model_config(len(data.vocab)))
        if data.embeddings is not None:
            init_from_embeddings(self.model, data.embeddings, first_id=data.vocab.num_specials)
        self.opt = torch.optim.Adam(self.model.parameters(), lr=config.lr,
                                    betas=(config.beta1, config.beta2))
        self.noise = config.noise_config()
        self.allowed = data.language_masks()
        self.t = 0
        self.rounds = 0
        self.wall = 0.0
        self.log: List[dict] = []
        self.phase_log: List[dict] = []
        self.schedulers = self._make_schedulers()
        self._weights_fh = None

    # -- setup -----------------------------------------------------------------

    def _make_schedulers(self) -> Dict[Tuple[int, str], CurriculumScheduler]:
        cfg = self.config
        schedule = cfg.schedule()
        streams = ("ae", "bt") if cfg.separate_streams else ("shared",)
        out = {}
        for lang, corpus in enumerate(self.data.corpora):
            if self.data.tables is not None:
                table = self.data.tables[lang]
            elif schedule is None:
                table = DifficultyTable.from_raw("none", np.zeros(len(corpus)))
            else:
                raise ValueError("curriculum needs difficulty tables")
            for si, stream in enumerate(streams):
                name = f"{corpus.language}:{stream}"
                out[(lang, stream)] = CurriculumScheduler(
                    table, corpus.lengths(), schedule, cfg.batch_tokens,
                    seed=_seed(cfg.seed, 17, lang, si), name=name, on_phase=self._on_phase)
        return out

    def _on_phase(self, event: dict) -> None:
        self.phase_log.append(event)
        self._append("phases.jsonl", event)

    def _append(self, fname: str, record: dict) -> None:
        if self.run_dir is not None:
            with open(self.run_dir / fname, "a", encoding="utf-8") as f:
                f.write(json.dumps(record) + "\n")

    def _scheduler(self, lang: int, kind: str) -> CurriculumScheduler:
        key = (lang, kind) if self.config.separate_streams else (lang, "shared")
        return self.schedulers[key]

    def _generator(self, purpose: str, extra: int = 0) -> torch.Generator:
        return torch.Generator().manual_seed(_seed(self.config.seed, self.t, _PURPOSE[purpose], extra))

    def _rng(self, purpose: str, extra: int = 0) -> np.random.Generator:
        return np.random.default_rng(_seed(self.config.seed, self.t, _PURPOSE[purpose], extra))

    # -- weights ---------------------------------------------------------------

    def _dropout_passes(self, sources, src_lang, targets, tgt_lang, count):
        seeds = [_seed(self.config.seed, self.t, _PURPOSE["pass"], i) for i in range(count)]
        return [forward_distributions(self.model, sources, src_lang, targets, tgt_lang, True, s)
                for s in seeds]

    def _confidence_weights(self, estimator, sources, src_lang, targets, tgt_lang):
        cfg = self.config
        if estimator == "js":
            (p1, mask), (p2, _) = self._dropout_passes(sources, src_lang, targets, tgt_lang, 2)
            tok, sent = js_scores(p1, p2, cfg.k, mask, cfg.js_polarity)
        else:
            passes = self._dropout_passes(sources, src_lang, targets, tgt_lang, cfg.q_passes)
            _, gold, mask = target_batch(targets)
            probs = torch.stack([gold_probs(d, gold) for d, _ in passes])
            tok, sent = var_scores(probs, cfg.k, mask)
        return normalize_weights(tok, sent, mask, cfg.use_ttq, cfg.use_stq, estimator, cfg.k)

    def _cp_weights(self, sentences, lang, hyps, hyp_lang):
        cfg = self.config
        with torch.no_grad():
            hx, pad_x = self.model.encode(source_batch(sentences), lang)
            hy, pad_y = self.model.encode(source_batch(hyps), hyp_lang)
        tok = ttq_batch(hx, ~pad_x, hy, ~pad_y, cfg.k)
        sent = stq_batch(hx, ~pad_x, hy, ~pad_y, cfg.k)
        return normalize_weights(tok, sent, ~pad_x, cfg.use_ttq, cfg.use_stq, "cp", cfg.k)

    # -- steps -----------------------------------------------------------------

    def _update(self, sources, src_lang, targets, tgt_lang, weights, batch) -> float:
        gen = self._generator("dropout")
        memory, pad = self.model.encode(source_batch(sources), src_lang, gen)
        alpha = beta = None
        if weights is not None:
            alpha, beta = weights.alpha, weights.beta
            if self.config.dump_weights:
                _, _, mask = target_batch(targets)
                for rec in weights.records(self.t, mask, batch):
                    self._append("weights.jsonl", rec)
        loss = decode_loss(self.model, memory, pad, targets, tgt_lang, alpha, beta, gen)
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {self.t}; batch indices {list(batch)[:20]}...")
        self.opt.zero_grad(set_to_none=True)
        loss.backward()
        self.opt.step()
        self.t += 1
        return loss.item()

    def ae_step(self, batch: Sequence[int], lang: int) -> float:
        """Denoising auto-encoder update on one batch of language ``lang``."""
        sentences = [self.data.corpora[lang].sentences[i] for i in batch]
        rng = self._rng("noise")
        noisy = [corrupt(s, self.noise, rng) for s in sentences]
        weights = None
        est = self.config.ae_estimator
        if est in ("js", "var"):
            weights = self._confidence_weights(est, noisy, lang, sentences, lang)
        return self._update(noisy, lang, sentences, lang, weights, batch)

    def bt_step(self, batch: Sequence[int], lang: int) -> float:
        """Back-translate a ``lang`` batch and train the reverse direction to restore it."""
        other = 1 - lang
        sentences = [self.data.corpora[lang].sentences[i] for i in batch]
        hyps = greedy_translate(self.model, sentences, lang, other, allowed=self.allowed[other])
        est = self.config.bt_estimator
        weights = None
        if est == "cp":
            weights = self._cp_weights(sentences, lang, hyps, other)
        elif est in ("js", "var"):
            weights = self._confidence_weights(est, hyps, other, sentences, lang)
        return self._update(hyps, other, sentences, lang, weights, batch)

    def train_round(self) -> dict:
        start = time.perf_counter()
        ae, bt, comp = [], [], []
        for lang in range(2):
            sched = self._scheduler(lang, "ae")
            batch = sched.next_batch(self.t)
            comp.append(sched.competence)
            ae.append(self.ae_step(batch, lang))
            batch = self._scheduler(lang, "bt").next_batch(self.t)
            bt.append(self.bt_step(batch, lang))
        self.rounds += 1
        self.wall += time.perf_counter() - start
        loss_ae, loss_bt = ae[0] + ae[1], bt[0] + bt[1]
        record = {"type": "train", "t": self.t, "round": self.rounds,
                  "competence": min(comp), "loss_ae": loss_ae, "loss_bt": loss_bt,
                  "loss": loss_ae + loss_bt, "loss_ae_by_lang": ae, "loss_bt_by_lang": bt,
                  "lr": self.opt.param_groups[0]["lr"]}
        self.log.append(record)
        self._append("metrics.jsonl", record)
        return record

    # -- evaluation ------------------------------------------------------------

    def translate(self, sentences, src_lang: int, tgt_lang: int) -> List[List[int]]:
        return beam_translate(self.model, sentences, src_lang, tgt_lang, self.config.beam_size,
                              self.config.length_penalty, allowed=self.allowed[tgt_lang])

    def evaluate(self) -> dict:
        src = [list(a) for a, _ in self.data.valid]
        ref = [list(b) for _, b in self.data.valid]
        fwd = corpus_bleu(self.translate(src, 0, 1), ref).bleu
        bwd = corpus_bleu(self.translate(ref, 1, 0), src).bleu
        record = {"type": "eval", "t": self.t, "round": self.rounds, "bleu_fwd": fwd,
                  "bleu_bwd": bwd, "bleu": (fwd + bwd) / 2, "wall_seconds": self.wall}
        self.log.append(record)
        self._append("metrics.jsonl", record)
        logger.info("t=%d bleu fwd %.2f bwd %.2f", self.t, fwd, bwd)
        return record

    # -- persistence -----------------------------------------------------------

    def state_dict(self) -> dict:
        return {"format_version": 1, "config": asdict(self.config),
                "model_config": asdict(self.model.cfg),
                "model": self.model.state_dict(), "optimizer": self.opt.state_dict(),
                "t": self.t, "rounds": self.rounds, "wall": self.wall,
                "log": self.log, "phase_log": self.phase_log,
                "schedulers": {f"{k[0]}:{k[1]}": s.state_dict() for k, s in self.schedulers.items()}}

    def save(self, path) -> None:
        torch.save(self.state_dict(), path)

    @classmethod
    def restore(cls, path, data: TrainData, run_dir=None) -> "Trainer":
        blob = torch.load(path, weights_only=False)
        trainer = cls(TrainConfig.from_dict(blob["config"]), data, run_dir)
        trainer.model.load_state_dict(blob["model"])
        trainer.opt.load_state_dict(blob["optimizer"])
        trainer.t, trainer.rounds, trainer.wall = blob["t"], blob["rounds"], blob["wall"]
        trainer.log, trainer.phase_log = list(blob["log"]), list(blob["phase_log"])
        for key, sched in trainer.schedulers.items():
            sched.load_state_dict(blob["schedulers"][f"{key[0]}:{key[1]}"])
        if trainer.run_dir is not None:
            _rewrite_jsonl(trainer.run_dir / "metrics.jsonl", trainer.log)
            _rewrite_jsonl(trainer.run_dir / "phases.jsonl", trainer.phase_log)
        return trainer

    def write_manifest(self) -> None:
        if self.run_dir is None:
            return
        manifest = {"config": asdict(self.config), "model_config": asdict(self.model.cfg),
                    "seed": self.config.seed, "data": self.data.fingerprint(),
                    "num_parameters": self.model.num_parameters(),
                    "torch_version": torch.__version__}
        (self.run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    # -- loop ------------------------------------------------------------------

    def run(self, stop_at: Optional[int] = None) -> List[dict]:
        """Train until ``total_steps`` (or ``stop_at``) updates, evaluating every ``eval_every``."""
        cfg = self.config
        stop = cfg.total_steps if stop_at is None else min(stop_at, cfg.total_steps)
        if self.t == 0 and not any(r["type"] == "eval" for r in self.log):
            self.evaluate()
        next_eval = (self.t // cfg.eval_every + 1) * cfg.eval_every
        while self.t < stop:
            self.train_round()
            if self.t >= next_eval or self.t >= cfg.total_steps:
                self.evaluate()
                next_eval = (self.t // cfg.eval_every + 1) * cfg.eval_every
                if self.run_dir is not None:
                    self.save(self.run_dir / "checkpoint.pt")
        return self.log


def _rewrite_jsonl(path: Path, records: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def train(config: TrainConfig, data: TrainData, run_dir=None) -> Trainer:
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        for name in ("metrics.jsonl", "phases.jsonl", "weights.jsonl"):
            (run_dir / name).unlink(missing_ok=True)
    trainer = Trainer(config, data, run_dir)
    trainer.write_manifest()
    trainer.run()
    return trainer


# ---------------------------------------------------------------------------
# Convergence speed
# ---------------------------------------------------------------------------

@dataclass
class Acceleration:
    target_bleu: float
    baseline_step: Optional[int]
    cl_step: Optional[int]
    baseline_time: Optional[float]
    cl_time: Optional[float]

    @property
    def reached(self) -> bool:
        return self.baseline_step is not None and self.cl_step is not None

    @staticmethod
    def _ratio(a, b) -> Optional[float]:
        if a is None or b is None:
            return None
        if b == 0:
            return 1.0 if a == 0 else math.inf
        return a / b

    @property
    def step_ratio(self) -> Optional[float]:
        return self._ratio(self.baseline_step, self.cl_step)

    @property
    def time_ratio(self) -> Optional[float]:
        return self._ratio(self.baseline_time, self.cl_time)

    def describe(self) -> str:
        if not self.reached:
            who = "baseline" if self.baseline_step is None else "curriculum"
            return f"target {self.target_bleu:.2f} not reached by {who}"
        return (f"target {self.target_bleu:.2f}: steps {self.baseline_step}/{self.cl_step} "
                f"= {self.step_ratio:.2f}x, time {self.time_ratio:.2f}x")


def first_reaching(log: Sequence[dict], target: float, key: str = "bleu") -> Optional[dict]:
    for rec in log:
        if rec.get("type") == "eval" and rec[key] >= target:
            return rec
    return None


def measure_acceleration(baseline_log: Sequence[dict], cl_log: Sequence[dict],
                         target_bleu: float, key: str = "bleu") -> Acceleration:
    """Steps (and training seconds) each arm needs to first reach ``target_bleu``."""
    base = first_reaching(baseline_log, target_bleu, key)
    cl = first_reaching(cl_log, target_bleu, key)
    return Acceleration(target_bleu,
                        None if base is None else base["t"], None if cl is None else cl["t"],
                        None if base is None else base["wall_seconds"],
                        None if cl is None else cl["wall_seconds"])


def load_log(path) -> List[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
