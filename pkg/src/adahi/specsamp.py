"""Per-codebook speculative sampling.

A draft index is kept with probability ``min(1, p/q)``; otherwise a
replacement is drawn from the positive part of ``p - q``.  The result is
distributed exactly as ``p`` regardless of ``q``.

Every call to :func:`verify_one` consumes exactly two uniforms (accept test,
resample) so random streams stay aligned whether or not a rejection happens.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .policy import CategoricalBundle, inverse_cdf
from .quantizer import CodeTuple


@dataclass(frozen=True)
class VerifyOutcome:
    final: CodeTuple
    accepted_mask: tuple[bool, ...]

    @property
    def primary_rejected(self) -> bool:
        return not self.accepted_mask[0]


def _as_dist(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or np.any(x < 0) or abs(x.sum() - 1.0) > 1e-9:
        raise ContractViolation(f"{name} is not a probability vector")
    return x


def adjust(q, p, paper_literal: bool = False) -> np.ndarray:
    """Normalized positive residual ``max(p - q, 0)``.

    ``paper_literal`` flips the residual to ``max(q - p, 0)`` for comparison
    runs; that variant does not reproduce ``p``.
    """
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    resid = np.maximum(q - p, 0.0) if paper_literal else np.maximum(p - q, 0.0)
    total = resid.sum()
    if total <= 0:
        raise ContractViolation("adjusted distribution is empty (p == q); nothing to resample")
    return resid / total


def acceptance_prob(q, p, draft_idx: int) -> float:
    qk = q[draft_idx]
    if qk <= 0:
        raise ContractViolation(f"draft index {draft_idx} has zero draft probability")
    return min(1.0, p[draft_idx] / qk)


def verify_one(q, p, draft_idx: int, rng: np.random.Generator, paper_literal: bool = False) -> tuple[int, bool]:
    q = _as_dist(q, "q")
    p = _as_dist(p, "p")
    if q.shape != p.shape:
        raise ContractViolation(f"q has {q.size} entries, p has {p.size}")
    if not 0 <= draft_idx < q.size:
        raise ContractViolation(f"draft index {draft_idx} outside 0..{q.size - 1}")
    ratio = acceptance_prob(q, p, draft_idx)
    u_accept, u_resample = rng.random(2)
    if u_accept <= ratio:
        return int(draft_idx), True
    return inverse_cdf(adjust(q, p, paper_literal), u_resample), False


def verify_tuple(
    qb: CategoricalBundle,
    pb: CategoricalBundle,
    draft: CodeTuple,
    rng: np.random.Generator,
    paper_literal: bool = False,
) -> VerifyOutcome:
    """Verify each codebook independently; codebook ``l`` uses draws ``2l`` and ``2l+1``."""
    if qb.probs.shape != pb.probs.shape:
        raise ContractViolation(f"bundle shapes differ: {qb.probs.shape} vs {pb.probs.shape}")
    if len(draft) != qb.n:
        raise ContractViolation(f"draft has {len(draft)} indices, bundles have {qb.n} codebooks")
    final, mask = [], []
    for stage, idx in enumerate(draft):
        k, ok = verify_one(qb.probs[stage], pb.probs[stage], int(idx), rng, paper_literal)
        final.append(k)
        mask.append(ok)
    return VerifyOutcome(tuple(final), tuple(mask))


def expected_rejection(q, p) -> float:
    """Rejection probability averaged over draft sampling: ``1 - sum(min(p, q))``."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    return float(min(1.0, max(0.0, 1.0 - np.minimum(p, q).sum())))

