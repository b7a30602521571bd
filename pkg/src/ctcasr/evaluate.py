"""Edit-distance scoring: WER over whitespace tokens, CER over codepoints.

Alignment uses unit costs. When several alignments share the minimal
cost, the backtrace prefers substitution over deletion over insertion.
Corpus rates aggregate the summed counts: 100 * (S + D + I) / N_ref,
so utterance order cannot change the result.
"""

from __future__ import annotations

from dataclasses import dataclass

from .alphabet import drop_unknown
from .errors import DataError

_MATCH, _SUB, _DEL, _INS = range(4)


def edit_distance(ref, hyp):
    """(substitutions, deletions, insertions) of a minimal-cost alignment."""
    ref = list(ref)
    hyp = list(hyp)
    m, n = len(ref), len(hyp)
    cost = [[0] * (n + 1) for _ in range(m + 1)]
    op = [[_MATCH] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        cost[i][0] = i
        op[i][0] = _DEL
    for j in range(1, n + 1):
        cost[0][j] = j
        op[0][j] = _INS
    for i in range(1, m + 1):
        row = cost[i]
        prev = cost[i - 1]
        for j in range(1, n + 1):
            if ref[i - 1] == hyp[j - 1]:
                best, choice = prev[j - 1], _MATCH
            else:
                best, choice = prev[j - 1] + 1, _SUB
            if prev[j] + 1 < best:
                best, choice = prev[j] + 1, _DEL
            if row[j - 1] + 1 < best:
                best, choice = row[j - 1] + 1, _INS
            row[j] = best
            op[i][j] = choice

    subs = dels = ins = 0
    i, j = m, n
    while i > 0 or j > 0:
        choice = op[i][j]
        if choice == _MATCH:
            i, j = i - 1, j - 1
        elif choice == _SUB:
            subs += 1
            i, j = i - 1, j - 1
        elif choice == _DEL:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return subs, dels, ins


@dataclass
class UtteranceResult:
    path: str
    reference: str
    hypothesis: str
    wer: float


@dataclass
class EvalResult:
    substitutions: int
    deletions: int
    insertions: int
    ref_tokens: int
    wer: float
    cer: float
    per_utterance: list[UtteranceResult]


def _rate(subs, dels, ins, n_ref) -> float:
    if n_ref == 0:
        raise DataError("error rate undefined: reference contains no tokens")
    return 100.0 * (subs + dels + ins) / n_ref


def wer(references, hypotheses) -> float:
    """Corpus word error rate in percent over whitespace-split tokens."""
    subs = dels = ins = n_ref = 0
    for ref, hyp in zip(references, hypotheses, strict=True):
        s, d, i = edit_distance(ref.split(), hyp.split())
        subs, dels, ins = subs + s, dels + d, ins + i
        n_ref += len(ref.split())
    return _rate(subs, dels, ins, n_ref)


def cer(references, hypotheses) -> float:
    """Corpus character error rate in percent over codepoints, spaces included."""
    subs = dels = ins = n_ref = 0
    for ref, hyp in zip(references, hypotheses, strict=True):
        s, d, i = edit_distance(list(ref), list(hyp))
        subs, dels, ins = subs + s, dels + d, ins + i
        n_ref += len(ref)
    return _rate(subs, dels, ins, n_ref)


def score_pairs(items) -> EvalResult:
    """items: iterable of (path, reference, hypothesis)."""
    subs = dels = ins = n_ref = 0
    per_utt = []
    refs = []
    hyps = []
    for path, ref, hyp in items:
        s, d, i = edit_distance(ref.split(), hyp.split())
        n = len(ref.split())
        utt_wer = _rate(s, d, i, n) if n else 0.0
        per_utt.append(UtteranceResult(path, ref, hyp, utt_wer))
        subs, dels, ins, n_ref = subs + s, dels + d, ins + i, n_ref + n
        refs.append(ref)
        hyps.append(hyp)
    if not per_utt:
        raise DataError("nothing to score")
    return EvalResult(
        substitutions=subs,
        deletions=dels,
        insertions=ins,
        ref_tokens=n_ref,
        wer=_rate(subs, dels, ins, n_ref),
        cer=cer(refs, hyps),
        per_utterance=per_utt,
    )


def evaluate(predict_fn, alphabet, manifest, decode_fns, cache_dir=None):
    """Decode every utterance and score each decoder.

    predict_fn: spectrogram values -> log-probability matrix.
    decode_fns: {mode_name: log_probs -> transcript}. References are
    filtered to the alphabet (with a warning) rather than crashing.
    Returns {mode_name: EvalResult}.
    """
    from . import features as features_mod

    decoded = {mode: [] for mode in decode_fns}
    for rec in manifest:
        spec = features_mod.extract_features(rec.path, cache_dir=cache_dir)
        log_probs = predict_fn(spec.values)
        ref = drop_unknown(alphabet, rec.transcript, context=rec.path)
        for mode, decode_fn in decode_fns.items():
            decoded[mode].append((rec.path, ref, decode_fn(log_probs)))
    return {mode: score_pairs(items) for mode, items in decoded.items()}


def write_per_utterance_tsv(result: EvalResult, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for utt in result.per_utterance:
            f.write(f"{utt.path}\t{utt.reference}\t{utt.hypothesis}\t{utt.wer:.2f}\n")


def format_summary(results: dict) -> str:
    """Summary block, one line per decoding mode."""
    width = max(len(mode) for mode in results)
    lines = [f"{'mode'.ljust(width)}  {'WER%':>7}  {'CER%':>7}  {'S':>6} {'D':>6} {'I':>6} {'N':>7}"]
    for mode, res in results.items():
        lines.append(
            f"{mode.ljust(width)}  {res.wer:7.2f}  {res.cer:7.2f}  "
            f"{res.substitutions:6d} {res.deletions:6d} {res.insertions:6d} {res.ref_tokens:7d}"
        )
    return "\n".join(lines)
