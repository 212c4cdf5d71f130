"""Reward and evaluation scoring functions.

All sequence rewards map into [0, 1]; corpus BLEU reports the usual
[0, 100] scale. Tokens are compared lowercased (whitespace tokenization
happens upstream, tokens never contain spaces).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field


def normalize_token(w):
    return w.lower()


def match(w, query):
    """1 iff token w occurs in the query (exact equality after lowercasing)."""
    if not w:
        raise ValueError("empty token")
    w = normalize_token(w)
    return 1 if any(w == normalize_token(q) for q in query) else 0


def edit_distance(a, b):
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def soft_match(w, query):
    """Monotone extension of `match`: close-by-edit-distance tokens also count.

    A token matches if it equals a query token or lies within edit
    distance max(3, 0.3 * len(w)) (strict) of one.
    """
    if match(w, query):
        return 1
    w = normalize_token(w)
    threshold = max(3.0, 0.3 * len(w))
    for q in query:
        if edit_distance(w, normalize_token(q)) < threshold:
            return 1
    return 0


def recall(y, query, matcher=match):
    """Fraction of translation tokens that match the query."""
    if not y:
        raise ValueError("empty translation")
    return sum(matcher(w, query) for w in y) / len(y)


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(hyp, ref, max_n=4, smooth_add=1.0):
    """Smoothed sentence-level BLEU in [0, 1].

    Geometric mean of modified n-gram precisions for n = 1..max_n;
    numerator and denominator get +smooth_add for n >= 2 (n = 1 stays
    raw), times the brevity penalty min(1, exp(1 - |ref|/|hyp|)).
    """
    if not hyp or not ref:
        raise ValueError("empty sequence")
    hyp = [normalize_token(w) for w in hyp]
    ref = [normalize_token(w) for w in ref]
    log_prec_sum = 0.0
    for n in range(1, max_n + 1):
        hyp_counts = _ngram_counts(hyp, n)
        ref_counts = _ngram_counts(ref, n)
        matched = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
        total = max(len(hyp) - n + 1, 0)
        if n >= 2:
            num, den = matched + smooth_add, total + smooth_add
        else:
            num, den = float(matched), float(total)
        if num == 0.0:
            return 0.0
        log_prec_sum += math.log(num / den)
    bp = min(1.0, math.exp(1.0 - len(ref) / len(hyp)))
    return bp * math.exp(log_prec_sum / max_n)


def corpus_bleu(hyps, refs, max_n=4):
    """Standard corpus BLEU in [0, 100]: pooled counts, no smoothing."""
    if len(hyps) != len(refs):
        raise ValueError("hypothesis/reference count mismatch")
    if not hyps:
        raise ValueError("empty corpus")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hyps, refs):
        if not hyp or not ref:
            raise ValueError("empty sentence in corpus")
        hyp = [normalize_token(w) for w in hyp]
        ref = [normalize_token(w) for w in ref]
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = _ngram_counts(hyp, n)
            ref_counts = _ngram_counts(ref, n)
            matched[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
            total[n - 1] += max(len(hyp) - n + 1, 0)
    log_prec_sum = 0.0
    for m, t in zip(matched, total):
        if m == 0 or t == 0:
            return 0.0
        log_prec_sum += math.log(m / t)
    bp = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    return 100.0 * bp * math.exp(log_prec_sum / max_n)


def rescale_rating(avg_rating):
    """Map an averaged star rating in [1, 5] onto the reward scale [0, 1]."""
    if not 1.0 <= avg_rating <= 5.0:
        raise ValueError(f"rating {avg_rating} outside [1, 5]")
    return (avg_rating - 1.0) / 4.0


DIRECT = "direct-logged"
SBLEU = "sbleu-vs-reference"
RECALL = "recall-vs-query"
ESTIMATED = "estimated"


@dataclass
class RewardSpec:
    """Which reward function applies, plus its payload.

    variant: one of DIRECT, SBLEU, RECALL, ESTIMATED.
    For RECALL the matcher is "exact" or "soft"; `floor` lifts zero
    token-level matches to a small positive value for product-form
    word-level objectives.
    """

    variant: str
    matcher: str = "soft"
    floor: float = 0.0
    estimator: object = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in (DIRECT, SBLEU, RECALL, ESTIMATED):
            raise ValueError(f"unknown reward variant {self.variant!r}")
        if self.variant == ESTIMATED and self.estimator is None:
            raise ValueError("estimated reward needs an estimator handle")

    @property
    def scores_samples(self):
        """True when arbitrary (non-logged) translations can be scored."""
        return self.variant != DIRECT

    def matcher_fn(self):
        return match if self.matcher == "exact" else soft_match

    def sequence_reward(self, src_tokens, y_tokens, reference=None, query=None):
        if self.variant == SBLEU:
            if reference is None:
                raise ValueError("sbleu reward needs a reference")
            if not y_tokens:
                return 0.0
            return sentence_bleu(y_tokens, reference)
        if self.variant == RECALL:
            if query is None:
                raise ValueError("recall reward needs a query")
            if not y_tokens:
                return 0.0
            return recall(y_tokens, query, matcher=self.matcher_fn())
        if self.variant == ESTIMATED:
            return self.estimator.predict(src_tokens, y_tokens)
        raise ValueError("direct-logged rewards cannot score new translations")

    def token_reward(self, token, query):
        """Word-level matching reward with the configured floor."""
        if query is None:
            raise ValueError("word-level reward needs a query")
        m = self.matcher_fn()(token, query)
        return max(float(m), self.floor)
