from sssbench.models.attn import AttnRec, attn_backward, attn_forward
from sssbench.models.base import ForwardCache, ModelConfig, NeuralModel, left_pad
from sssbench.models.checkpoint import load_checkpoint, read_meta, save_checkpoint
from sssbench.models.counting import MarkovModel, PopularityModel, RandomScorer, fit_counting_model
from sssbench.models.gru import GruRec, gru_backward, gru_forward

NEURAL_KINDS = ("attn", "gru")
COUNTING_KINDS = ("pop", "markov")
MODEL_KINDS = COUNTING_KINDS + NEURAL_KINDS


def build_model(config: ModelConfig) -> NeuralModel:
    if config.kind == "attn":
        return AttnRec(config)
    if config.kind == "gru":
        return GruRec(config)
    raise ValueError(f"unknown neural model {config.kind!r}")


__all__ = [
    "AttnRec",
    "GruRec",
    "ForwardCache",
    "MarkovModel",
    "ModelConfig",
    "NeuralModel",
    "PopularityModel",
    "RandomScorer",
    "attn_backward",
    "attn_forward",
    "build_model",
    "fit_counting_model",
    "gru_backward",
    "gru_forward",
    "left_pad",
    "load_checkpoint",
    "read_meta",
    "save_checkpoint",
]
