"""Prototypical networks with fine-grained features and a triplet objective
for few-shot relation classification, built on a small numpy autodiff core."""
from .config import TrainConfig
from .data import RelationDataset, TokenizedInstance, Vocab, build_vocab, load_fewrel
from .encoders import EncoderConfig, FewShotEncoder
from .fewshot import EpisodeSpec, LossConfig, combined_loss, sample_episode
from .tensor import Tensor, no_grad

__all__ = [
    "EncoderConfig", "EpisodeSpec", "FewShotEncoder", "LossConfig", "RelationDataset",
    "Tensor", "TokenizedInstance", "TrainConfig", "Vocab", "build_vocab", "combined_loss",
    "load_fewrel", "no_grad", "sample_episode",
]
__version__ = "0.1.0"
