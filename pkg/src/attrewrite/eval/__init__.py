"""Automatic metrics: attribute accuracy, KN perplexity, BLEU / self-BLEU."""
from .bleu import bleu, bleu_stats, self_bleu
from .classifier import AttributeClassifiers, NgramClassifier, attribute_accuracy
from .lm import KneserNeyLM, lm_ppl, lm_train
from .report import EvalReport, TradeoffPoint, evaluate_model, tradeoff_csv, tradeoff_curve

__all__ = [
    "bleu", "bleu_stats", "self_bleu", "NgramClassifier", "AttributeClassifiers",
    "attribute_accuracy", "KneserNeyLM", "lm_train", "lm_ppl", "EvalReport",
    "TradeoffPoint", "evaluate_model", "tradeoff_curve", "tradeoff_csv",
]
