from .eer import EerReport, compute_eer, export_score_distribution
from .plda import PldaParams, plda_score, plda_score_batch, plda_logits

__all__ = [
    "EerReport", "compute_eer", "export_score_distribution",
    "PldaParams", "plda_score", "plda_score_batch", "plda_logits",
]
