from .multispeaker import (
    MultiSpeakerModel,
    GenerativeLoss,
    generative_loss,
    train_multispeaker,
    extract_embeddings,
)
from .encoder import SpeakerEncoderModel, train_encoder, joint_finetune, MelCache
from .classifier import SpeakerClassifier, train_classifier
from .verifier import VerificationModel, train_verifier, evaluate_verifier

__all__ = [
    "MultiSpeakerModel", "GenerativeLoss", "generative_loss",
    "train_multispeaker", "extract_embeddings",
    "SpeakerEncoderModel", "train_encoder", "joint_finetune", "MelCache",
    "SpeakerClassifier", "train_classifier",
    "VerificationModel", "train_verifier", "evaluate_verifier",
]
