"""CTC loss and decoders.

The loss runs the forward-backward recursions in the log domain over
the blank-augmented label lattice (2U+1 states for a U-label target)
and returns the analytic gradient with respect to the log-probability
matrix itself, so the log-softmax layer upstream needs no special
casing. ``beam_search`` is a prefix beam search that keeps separate
blank/non-blank path masses per prefix and, when a language model is
supplied, adds alpha * ln P_LM(word | previous 3 words) + beta each
time a space completes a word; the final partial word is scored the
same way before the best hypothesis is picked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleTargetError, ShapeError
from . import lm as lm_mod

NEG_INF = -np.inf
_LN10 = math.log(10.0)


def _validate(log_probs, target):
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2:
        raise ShapeError(f"log_probs must be (T, classes), got {log_probs.shape}")
    t_len, classes = log_probs.shape
    if t_len < 1 or classes < 2:
        raise ShapeError(f"log_probs needs at least 1 frame and 2 classes, got {log_probs.shape}")
    target = [int(u) for u in target]
    for u in target:
        if not 1 <= u <= classes - 1:
            raise ShapeError(f"target label {u} outside 1..{classes - 1}")
    return log_probs, target


def _augment(target):
    """Blank-augmented label sequence: blank, l1, blank, l2, ..., blank."""
    aug = np.zeros(2 * len(target) + 1, dtype=np.int64)
    aug[1::2] = target
    return aug


def _shift(v, k):
    out = np.full_like(v, NEG_INF)
    out[k:] = v[:-k]
    return out


def ctc_loss(log_probs, target):
    """Negative log total path probability and its gradient.

    log_probs: (T, classes) with blank in column 0; rows are taken as
    given (they need not be normalized, which keeps the loss
    differentiable off the simplex for finite-difference checks).
    target: label sequence, possibly empty (all-blank supervision).

    Returns (loss, grad) with grad of the same shape as log_probs.
    Raises InfeasibleTargetError when no alignment path exists, e.g.
    when the target (plus blanks forced between repeats) cannot fit
    into T frames.
    """
    log_probs, target = _validate(log_probs, target)
    t_len = log_probs.shape[0]
    labels = _augment(target)
    s_len = labels.size

    emit = log_probs[:, labels]  # (T, S)
    prev2 = np.full(s_len, -1, dtype=np.int64)
    prev2[2:] = labels[:-2]
    allow_skip = (labels != 0) & (labels != prev2)

    alpha = np.full((t_len, s_len), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        acc = np.logaddexp(prev, _shift(prev, 1))
        acc = np.where(allow_skip, np.logaddexp(acc, _shift(prev, 2)), acc)
        alpha[t] = acc + emit[t]

    log_p = alpha[t_len - 1, s_len - 1]
    if s_len > 1:
        log_p = np.logaddexp(log_p, alpha[t_len - 1, s_len - 2])
    if not np.isfinite(log_p):
        raise InfeasibleTargetError(
            f"no CTC path for a {len(target)}-label target in {t_len} frames"
        )

    beta = np.full((t_len, s_len), NEG_INF)
    beta[t_len - 1, s_len - 1] = emit[t_len - 1, s_len - 1]
    if s_len > 1:
        beta[t_len - 1, s_len - 2] = emit[t_len - 1, s_len - 2]
    next2 = np.full(s_len, -1, dtype=np.int64)
    next2[: s_len - 2] = labels[2:]
    allow_skip_fwd = (labels != 0) & (labels != next2)
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1]
        acc = np.logaddexp(nxt, _shift(nxt[::-1], 1)[::-1])
        acc = np.where(allow_skip_fwd, np.logaddexp(acc, _shift(nxt[::-1], 2)[::-1]), acc)
        beta[t] = acc + emit[t]

    # alpha * beta double-counts the emission at t, hence the -emit term
    ab = alpha + beta
    grad = np.zeros_like(log_probs)
    for k in set(labels.tolist()):
        cols = ab[:, labels == k]
        total = np.logaddexp.reduce(cols, axis=1)
        with np.errstate(invalid="ignore"):
            grad[:, k] = -np.exp(total - emit[:, labels == k][:, 0] - log_p)
    # emit columns for equal labels are identical, so using the first is safe
    grad[~np.isfinite(grad)] = 0.0
    return float(-log_p), grad


def greedy_decode(log_probs):
    """Best label per frame, repeats collapsed, blanks removed.

    Ties go to the lowest label index (argmax convention)."""
    log_probs = np.asarray(log_probs)
    if log_probs.ndim != 2:
        raise ShapeError(f"log_probs must be (T, classes), got {log_probs.shape}")
    best = np.argmax(log_probs, axis=1)
    out = []
    prev = -1
    for label in best:
        if label != prev and label != 0:
            out.append(int(label))
        prev = label
    return out


@dataclass
class Hypothesis:
    """One prefix under consideration during beam search."""

    prefix: tuple[int, ...]
    log_p_blank: float = NEG_INF
    log_p_nonblank: float = NEG_INF
    lm_state: tuple[str, ...] = ()
    lm_score: float = 0.0  # accumulated alpha * ln P_LM + beta over completed words

    @property
    def log_p_total(self) -> float:
        return np.logaddexp(self.log_p_blank, self.log_p_nonblank)

    @property
    def score(self) -> float:
        return self.log_p_total + self.lm_score


def _partial_word(prefix, alphabet, space_label):
    chars = []
    for label in reversed(prefix):
        if label == space_label:
            break
        chars.append(alphabet.symbols[label - 1])
    return "".join(reversed(chars))


def beam_search(log_probs, alphabet, beam_width=100, lm=None, alpha=0.75, beta=1.0):
    """Prefix beam search; returns the decoded transcript.

    With lm=None the search ranks prefixes purely by CTC probability
    (alpha and beta are ignored). Ties are broken toward the
    lexicographically smaller label prefix.
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2 or log_probs.shape[1] != alphabet.classes:
        raise ShapeError(
            f"log_probs {log_probs.shape} does not match alphabet with {alphabet.classes} classes"
        )
    if beam_width < 1:
        raise ShapeError(f"beam width must be positive, got {beam_width}")
    space_label = alphabet.label_of(" ") if " " in alphabet else None
    use_lm = lm is not None and space_label is not None

    def word_bonus(state, word):
        return alpha * _LN10 * lm_mod.score(lm, state, word) + beta

    def extend_lm(hyp, label):
        if not use_lm or label != space_label:
            return hyp.lm_state, hyp.lm_score
        word = _partial_word(hyp.prefix, alphabet, space_label)
        if not word:
            return hyp.lm_state, hyp.lm_score
        new_state = (hyp.lm_state + (word,))[-(lm.order - 1) :]
        return new_state, hyp.lm_score + word_bonus(hyp.lm_state, word)

    beams = {(): Hypothesis(prefix=(), log_p_blank=0.0)}
    for row in log_probs:
        new_beams: dict[tuple[int, ...], Hypothesis] = {}

        def bucket(prefix, parent, label):
            hyp = new_beams.get(prefix)
            if hyp is None:
                state, score = extend_lm(parent, label) if label else (parent.lm_state, parent.lm_score)
                hyp = Hypothesis(prefix=prefix, lm_state=state, lm_score=score)
                new_beams[prefix] = hyp
            return hyp

        for prefix, hyp in beams.items():
            total = hyp.log_p_total
            # stay on this prefix via blank
            stay = bucket(prefix, hyp, None)
            stay.log_p_blank = np.logaddexp(stay.log_p_blank, total + row[0])
            last = prefix[-1] if prefix else None
            if last is not None and hyp.log_p_nonblank > NEG_INF:
                # repeat emission collapses into the same prefix
                stay.log_p_nonblank = np.logaddexp(stay.log_p_nonblank, hyp.log_p_nonblank + row[last])
            for label in range(1, log_probs.shape[1]):
                source = hyp.log_p_blank if label == last else total
                if source == NEG_INF:
                    continue
                ext = bucket(prefix + (label,), hyp, label)
                ext.log_p_nonblank = np.logaddexp(ext.log_p_nonblank, source + row[label])

        ranked = sorted(new_beams.values(), key=lambda h: (-h.score, h.prefix))
        beams = {h.prefix: h for h in ranked[:beam_width]}

    def final_score(hyp):
        if use_lm:
            word = _partial_word(hyp.prefix, alphabet, space_label)
            if word:
                return hyp.score + word_bonus(hyp.lm_state, word)
        return hyp.score

    best = min(beams.values(), key=lambda h: (-final_score(h), h.prefix))
    from .alphabet import decode as alpha_decode

    return alpha_decode(alphabet, best.prefix)
