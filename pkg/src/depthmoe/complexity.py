"""Input-complexity indicators and the learned scalar score.

Three deterministic features are read off a marked token sequence:

* ``d_syn`` — maximum open-nest depth (a structural proxy for parse depth;
  the generators emit the nest markers, free text gets a bracket heuristic),
* ``c_sem`` — unique content tokens per sentence (sentences are counted by
  SEP tokens, minimum one),
* ``r``     — number of connective-marked tokens (reasoning-step estimate).

The score is the exact weighted sum ``alpha*d_syn + beta*c_sem + gamma*r``
with trainable scalar weights initialized to 1.0; it is differentiable with
respect to the weights, so the end-to-end loss can tune them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import vocab
from .autograd import Tensor, add_scalars, cmul
from .errors import FeatureExtractionError, NumericError


@dataclass
class TokenSequence:
    """Token ids plus per-token structural marker tags."""

    tokens: list[int]
    markers: list[int]

    def __post_init__(self):
        if len(self.tokens) != len(self.markers):
            raise FeatureExtractionError(
                f"tokens ({len(self.tokens)}) and markers ({len(self.markers)}) differ in length"
            )

    @classmethod
    def from_tokens(cls, tokens: list[int]) -> "TokenSequence":
        return cls(list(tokens), vocab.markers_for(tokens))

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class ComplexityFeatures:
    d_syn: int
    c_sem: float
    r: int

    def as_tuple(self) -> tuple[int, float, int]:
        return (self.d_syn, self.c_sem, self.r)


class ComplexityWeights:
    """Trainable scalar weights for the three indicators."""

    def __init__(self, alpha: float = 1.0, beta: float = 1.0, gamma: float = 1.0):
        self.alpha = Tensor(np.asarray(float(alpha)), requires_grad=True, name="complexity.alpha")
        self.beta = Tensor(np.asarray(float(beta)), requires_grad=True, name="complexity.beta")
        self.gamma = Tensor(np.asarray(float(gamma)), requires_grad=True, name="complexity.gamma")

    def params(self) -> list[Tensor]:
        return [self.alpha, self.beta, self.gamma]

    def values(self) -> tuple[float, float, float]:
        return (float(self.alpha.data), float(self.beta.data), float(self.gamma.data))


def extract_features(seq: TokenSequence) -> ComplexityFeatures:
    """Compute (d_syn, c_sem, r) from the marker stream. Deterministic.

    Scoring sequences must have balanced nest markers; anything else is a
    feature-extraction error (free text is pre-marked by `vocab.mark_free_text`).
    """
    if len(seq) < 1:
        raise FeatureExtractionError("empty token sequence")
    depth = 0
    max_depth = 0
    connectives = 0
    content: set[int] = set()
    sentences = 0
    for token, marker in zip(seq.tokens, seq.markers):
        if marker == vocab.OPEN_NEST:
            depth += 1
            max_depth = max(max_depth, depth)
        elif marker == vocab.CLOSE_NEST:
            depth -= 1
            if depth < 0:
                raise FeatureExtractionError("unbalanced nest markers: close before open")
        elif marker == vocab.CONNECTIVE:
            connectives += 1
        elif marker == vocab.CONTENT:
            content.add(token)
        if token == vocab.SEP:
            sentences += 1
    if depth != 0:
        raise FeatureExtractionError(f"unbalanced nest markers: {depth} left open")
    c_sem = len(content) / max(1, sentences)
    return ComplexityFeatures(d_syn=max_depth, c_sem=c_sem, r=connectives)


def complexity_score(f: ComplexityFeatures, w: ComplexityWeights) -> Tensor:
    """Exact weighted sum as a scalar tensor; gradient w.r.t. each weight is
    the corresponding feature value."""
    for v in w.values():
        if not np.isfinite(v):
            raise NumericError("complexity weights must be finite")
    return add_scalars([
        cmul(w.alpha, float(f.d_syn)),
        cmul(w.beta, float(f.c_sem)),
        cmul(w.gamma, float(f.r)),
    ])


def score_value(f: ComplexityFeatures, weights: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> float:
    """Plain-float score for calibration and reporting (no tape involvement)."""
    a, b, g = weights
    return a * f.d_syn + b * f.c_sem + g * f.r


FEATURE_CSV_HEADER = "id,n,d_syn,c_sem,r,C,tier"


def feature_csv_row(uid: str, seq: TokenSequence, f: ComplexityFeatures, score: float, tier) -> str:
    return f"{uid},{len(seq)},{f.d_syn},{f.c_sem!r},{f.r},{score!r},{tier}"
