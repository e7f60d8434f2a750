from .model import (
    ModelConfig,
    Seq2Seq,
    decode_loss,
    forward_distributions,
    init_from_embeddings,
    load_checkpoint,
    save_checkpoint,
    source_batch,
    target_batch,
    token_nll,
)
from .noise import NoiseConfig, corrupt
from .search import beam_search, beam_translate, greedy_translate

__all__ = [
    "ModelConfig", "Seq2Seq", "decode_loss", "forward_distributions", "init_from_embeddings",
    "load_checkpoint", "save_checkpoint", "source_batch", "target_batch", "token_nll",
    "NoiseConfig", "corrupt", "beam_search", "beam_translate", "greedy_translate",
]
