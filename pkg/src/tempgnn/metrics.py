"""Link-prediction metrics."""
import numpy as np
from sklearn.metrics import average_precision_score


def average_precision(pos_scores, neg_scores) -> float:
    """AP over positives (label 1) and sampled negatives (label 0)."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if not len(pos):
        raise ValueError("average precision needs at least one positive")
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return float(average_precision_score(y, np.concatenate([pos, neg])))
