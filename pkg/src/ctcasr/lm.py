"""Interpolated Kneser-Ney n-gram language model with a fixed discount.

Training uses a single absolute discount D at every order (no
count-of-count estimation). The highest order discounts raw counts;
lower orders discount continuation counts (number of distinct left
extensions), falling back to raw counts for contexts that start with
the sentence marker and therefore have no left extensions. The
recursion terminates in a uniform distribution over the prediction
vocabulary, which is how ``<unk>`` ends up with the unigram
continuation floor. Stored probabilities are fully interpolated, so
with backoff weight lambda(context) the model normalizes exactly over
the prediction vocabulary at every context.

Probabilities and backoff weights are kept as log10 values, matching
the ARPA text format the model is serialized to.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError, FormatError

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

_BOS_LOG10 = -99.0  # conventional placeholder; <s> is never predicted


@dataclass
class NGramModel:
    order: int
    vocab: dict[str, int]  # prediction vocabulary, word -> id (includes </s> and <unk>)
    probs: list[dict[tuple[str, ...], float]]  # probs[n][ngram] = log10 P
    bows: list[dict[tuple[str, ...], float]]  # bows[k][context] = log10 backoff weight

    def counts(self) -> list[int]:
        return [len(self.probs[n]) for n in range(1, self.order + 1)]


def train_kn(lines, order: int = 4, discount: float = 0.75) -> NGramModel:
    """Estimate an interpolated Kneser-Ney model from an iterable of lines.

    Identical corpus bytes always produce the identical model: counting
    follows corpus order and every table is materialized exactly once.
    """
    if not 0.0 < discount < 1.0:
        raise DataError(f"discount must lie in (0, 1), got {discount}")
    if order < 1:
        raise DataError(f"order must be at least 1, got {order}")
    sentences = [line.split() for line in lines if line.strip()]
    if not sentences:
        raise DataError("cannot train a language model on an empty corpus")
    for sent in sentences:
        for w in sent:
            if w in (BOS, EOS, UNK):
                raise DataError(f"corpus uses the reserved token {w!r}")

    counts: list[Counter] = [Counter() for _ in range(order + 1)]
    for sent in sentences:
        toks = [BOS] + sent + [EOS]
        for n in range(1, order + 1):
            for i in range(len(toks) - n + 1):
                counts[n][tuple(toks[i : i + n])] += 1

    # continuation counts: cont[n][g] = number of distinct left extensions of g
    cont: list[dict] = [defaultdict(int) for _ in range(order)]
    for n in range(2, order + 1):
        for g in counts[n]:
            cont[n - 1][g[1:]] += 1

    pred_vocab = sorted({w for sent in sentences for w in sent} | {EOS, UNK})
    vocab_size = len(pred_vocab)
    probs: list[dict] = [dict() for _ in range(order + 1)]
    bows: list[dict] = [dict() for _ in range(order + 1)]

    if order == 1:
        # degenerate case: plain absolute discounting against the uniform floor
        total = sum(counts[1][g] for g in counts[1] if g != (BOS,))
        lam = discount * sum(1 for g in counts[1] if g != (BOS,)) / total
        for w in pred_vocab:
            p = max(counts[1].get((w,), 0) - discount, 0.0) / total + lam / vocab_size
            probs[1][(w,)] = math.log10(p)
        probs[1][(BOS,)] = _BOS_LOG10
        return NGramModel(order, {w: i for i, w in enumerate(pred_vocab)}, probs, bows)

    bigram_types = len(counts[2])
    observed = sum(1 for w in pred_vocab if cont[1].get((w,), 0) > 0)
    gamma1 = discount * observed / bigram_types
    for w in pred_vocab:
        p = max(cont[1].get((w,), 0) - discount, 0.0) / bigram_types + gamma1 / vocab_size
        probs[1][(w,)] = math.log10(p)
    probs[1][(BOS,)] = _BOS_LOG10

    for n in range(2, order + 1):
        followers: dict = defaultdict(set)
        by_context: dict = defaultdict(list)
        for g in counts[n]:
            followers[g[:-1]].add(g[-1])
            by_context[g[:-1]].append(g)
        for ctx, grams in by_context.items():
            if n == order:
                nums = {g: counts[n][g] for g in grams}
            else:
                nums = {g: cont[n][g] for g in grams}
                if sum(nums.values()) == 0:
                    # context starts with <s>: no left extensions exist
                    nums = {g: counts[n][g] for g in grams}
            denom = sum(nums.values())
            lam = discount * len(followers[ctx]) / denom
            bows[n - 1][ctx] = math.log10(lam)
            for g in grams:
                lower = 10.0 ** probs[n - 1][g[1:]]
                p = max(nums[g] - discount, 0.0) / denom + lam * lower
                probs[n][g] = math.log10(p)

    return NGramModel(order, {w: i for i, w in enumerate(pred_vocab)}, probs, bows)


def _normalize_token(model: NGramModel, word: str) -> str:
    if word == BOS or word in model.vocab:
        return word
    return UNK


def score(model: NGramModel, context, word: str) -> float:
    """log10 P(word | context) under standard backoff evaluation.

    Out-of-vocabulary tokens (in the word or the context) are mapped to
    <unk>, so the result is finite for every input.
    """
    w = _normalize_token(model, word)
    ctx = tuple(_normalize_token(model, c) for c in context)[-(model.order - 1) :] if model.order > 1 else ()
    acc = 0.0
    while True:
        gram = ctx + (w,)
        stored = model.probs[len(gram)].get(gram)
        if stored is not None:
            return acc + stored
        if not ctx:
            raise DataError(f"word {w!r} missing from the unigram table; model is corrupt")
        acc += model.bows[len(ctx)].get(ctx, 0.0)
        ctx = ctx[1:]


def sentence_logprob(model: NGramModel, words) -> float:
    """log10 probability of a sentence including the </s> transition."""
    ctx: tuple[str, ...] = (BOS,)
    total = 0.0
    for w in list(words) + [EOS]:
        total += score(model, ctx, w)
        ctx = (ctx + (w,))[-(model.order - 1) :] if model.order > 1 else ()
    return total


def perplexity(model: NGramModel, lines) -> float:
    total = 0.0
    tokens = 0
    for line in lines:
        words = line.split()
        if not words:
            continue
        total += sentence_logprob(model, words)
        tokens += len(words) + 1  # </s> is a predicted event
    if tokens == 0:
        raise DataError("perplexity over an empty corpus is undefined")
    return 10.0 ** (-total / tokens)


def write_arpa(model: NGramModel, path) -> None:
    """Serialize in the ARPA text format (log10 probabilities and backoffs)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("\\data\\\n")
        for n in range(1, model.order + 1):
            f.write(f"ngram {n}={len(model.probs[n])}\n")
        f.write("\n")
        for n in range(1, model.order + 1):
            f.write(f"\\{n}-grams:\n")
            for gram in sorted(model.probs[n]):
                line = f"{model.probs[n][gram]:.7f}\t{' '.join(gram)}"
                bow = model.bows[n].get(gram) if n < model.order else None
                if bow is not None:
                    line += f"\t{bow:.7f}"
                f.write(line + "\n")
            f.write("\n")
        f.write("\\end\\\n")


def read_arpa(path) -> NGramModel:
    """Parse an ARPA file, tolerating the variants common toolkits emit
    (space or tab separated fields, missing backoff columns)."""
    declared: dict[int, int] = {}
    probs: list[dict] = []
    bows: list[dict] = []
    state = "preamble"
    current = 0
    saw_end = False
    lineno = 0

    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if state == "preamble":
                if line == "\\data\\":
                    state = "counts"
                continue
            if line == "\\end\\":
                saw_end = True
                break
            if state == "counts":
                if line.startswith("ngram"):
                    body = line[len("ngram") :].strip()
                    if "=" not in body:
                        raise FormatError(f"{path}: malformed count declaration {line!r}", line=lineno)
                    n_str, count_str = body.split("=", 1)
                    try:
                        declared[int(n_str)] = int(count_str)
                    except ValueError:
                        raise FormatError(f"{path}: malformed count declaration {line!r}", line=lineno) from None
                    continue
                state = "sections"
            if line.endswith("-grams:") and line.startswith("\\"):
                try:
                    current = int(line[1:].split("-")[0])
                except ValueError:
                    raise FormatError(f"{path}: malformed section header {line!r}", line=lineno) from None
                if current not in declared:
                    raise FormatError(f"{path}: section {line!r} was not declared in \\data\\", line=lineno)
                while len(probs) <= current:
                    probs.append(dict())
                    bows.append(dict())
                continue
            if current == 0:
                raise FormatError(f"{path}: entry before any n-gram section", line=lineno)
            parts = line.split("\t") if "\t" in line else line.split()
            if "\t" in line:
                # tab layout: prob <TAB> words <TAB> [bow]; words are space separated
                words = parts[1].split() if len(parts) > 1 else []
                rest = parts[2:]
            else:
                words = parts[1 : 1 + current]
                rest = parts[1 + current :]
            if len(words) != current or not parts:
                raise FormatError(f"{path}: expected a {current}-gram entry, got {line!r}", line=lineno)
            try:
                prob = float(parts[0])
                bow = float(rest[0]) if rest else None
            except ValueError:
                raise FormatError(f"{path}: non-numeric field in {line!r}", line=lineno) from None
            gram = tuple(words)
            probs[current][gram] = prob
            if bow is not None:
                bows[current][gram] = bow

    if not saw_end:
        raise FormatError(f"{path}: missing \\end\\ marker", line=max(lineno, 1))
    if not declared:
        raise FormatError(f"{path}: no \\data\\ section found", line=1)
    order = max(declared)
    while len(probs) <= order:
        probs.append(dict())
        bows.append(dict())
    for n, count in declared.items():
        if len(probs[n]) != count:
            raise FormatError(
                f"{path}: \\data\\ declares {count} {n}-grams but {len(probs[n])} were read",
                line=1,
            )
    vocab = {g[0]: i for i, g in enumerate(sorted(probs[1]))}
    vocab.pop(BOS, None)
    if UNK not in vocab:
        vocab[UNK] = len(vocab)
        probs[1][(UNK,)] = -99.0
    return NGramModel(order, vocab, probs, bows)
