"""Masked next-token negative log-likelihood."""
from __future__ import annotations

from .. import tensor as T
from ..reasoner.tokenizer import TokenSequence
from ..tensor import Tensor


def lm_loss(logits: Tensor, targets: TokenSequence) -> Tensor:
    """Mean cross-entropy over the positions flagged in ``targets.loss_mask``.

    ``logits[i]`` must already be the prediction for ``targets.ids[i]``.
    """
    if logits.shape[0] != len(targets.ids):
        raise T.ShapeError(f"{logits.shape[0]} logit rows for {len(targets.ids)} targets")
    return T.cross_entropy_rows(logits, targets.ids, mask=targets.loss_mask)
