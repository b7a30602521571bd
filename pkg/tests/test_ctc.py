"""CTC loss and decoders against exhaustive path-enumeration oracles.

Instances are kept small enough ((L+1)^T paths) that every raw label
path can be scored explicitly; the sequence probabilities that fall
out are ground truth for both the loss and the beam search.
"""

import itertools
import math

import numpy as np
import pytest

from ctcasr.alphabet import build_alphabet, decode
from ctcasr.ctc import Hypothesis, beam_search, ctc_loss, greedy_decode
from ctcasr.errors import InfeasibleTargetError, ShapeError
from ctcasr.lm import train_kn

NEG_INF = -np.inf


def collapse(path):
    out = []
    prev = -1
    for label in path:
        if label != prev and label != 0:
            out.append(label)
        prev = label
    return tuple(out)


def enumerate_log_prob(log_probs, target):
    """Log total probability over raw paths that collapse to target."""
    t_len, classes = log_probs.shape
    target = tuple(int(u) for u in target)
    total = NEG_INF
    for path in itertools.product(range(classes), repeat=t_len):
        if collapse(path) != target:
            continue
        total = np.logaddexp(total, sum(log_probs[t, k] for t, k in enumerate(path)))
    return total


def sequence_masses(log_probs):
    """Exact posterior over every collapsed sequence."""
    t_len, classes = log_probs.shape
    mass = {}
    for path in itertools.product(range(classes), repeat=t_len):
        lp = sum(log_probs[t, k] for t, k in enumerate(path))
        seq = collapse(path)
        mass[seq] = np.logaddexp(mass.get(seq, NEG_INF), lp)
    return mass


def normalized_rows(rng, t_len, classes):
    lp = rng.standard_normal((t_len, classes))
    return lp - np.logaddexp.reduce(lp, axis=1, keepdims=True)


class TestCtcLoss:
    def test_single_frame_single_label(self):
        lp = np.log([[0.3, 0.7]])
        loss, grad = ctc_loss(lp, [1])
        assert loss == pytest.approx(-math.log(0.7), abs=1e-12)
        assert grad.shape == lp.shape

    def test_two_frames_uniform(self):
        # paths aa, -a, a- each carry 0.25
        lp = np.log(np.full((2, 2), 0.5))
        loss, _ = ctc_loss(lp, [1])
        assert loss == pytest.approx(-math.log(0.75), abs=1e-12)

    def test_empty_target(self):
        lp = np.log(np.full((2, 2), 0.5))
        loss, grad = ctc_loss(lp, [])
        assert loss == pytest.approx(-math.log(0.25), abs=1e-12)
        assert grad.shape == lp.shape

    def test_matches_path_enumeration(self, rng):
        checked = 0
        while checked < 40:
            t_len = int(rng.integers(1, 7))
            classes = int(rng.integers(2, 5))
            lp = normalized_rows(rng, t_len, classes)
            u_len = int(rng.integers(0, 3))
            target = rng.integers(1, classes, size=u_len).tolist()
            try:
                loss, _ = ctc_loss(lp, target)
            except InfeasibleTargetError:
                assert enumerate_log_prob(lp, target) == NEG_INF
                continue
            assert loss == pytest.approx(-enumerate_log_prob(lp, target), abs=1e-6)
            checked += 1

    def test_total_probability_is_one(self, rng):
        """Loss over every feasible sequence exhausts the posterior."""
        lp = normalized_rows(rng, 3, 3)
        total = 0.0
        for u_len in range(0, 4):
            for target in itertools.product((1, 2), repeat=u_len):
                try:
                    loss, _ = ctc_loss(lp, list(target))
                except InfeasibleTargetError:
                    continue
                p = math.exp(-loss)
                assert 0.0 < p <= 1.0
                total += p
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_gradient_matches_finite_differences(self, rng):
        eps = 1e-5
        for _ in range(20):
            t_len = int(rng.integers(2, 6))
            classes = int(rng.integers(2, 5))
            lp = normalized_rows(rng, t_len, classes)
            target = rng.integers(1, classes, size=1).tolist()
            loss, grad = ctc_loss(lp, target)
            fd = np.zeros_like(lp)
            for t in range(t_len):
                for k in range(classes):
                    bump = lp.copy()
                    bump[t, k] += eps
                    hi, _ = ctc_loss(bump, target)
                    bump[t, k] -= 2 * eps
                    lo, _ = ctc_loss(bump, target)
                    fd[t, k] = (hi - lo) / (2 * eps)
            scale = max(1.0, float(np.abs(grad).max()))
            assert np.abs(grad - fd).max() / scale <= 1e-4

    def test_posterior_rows_sum_to_one(self, rng):
        # -grad[t] is the per-frame label posterior, normalized by construction
        lp = normalized_rows(rng, 5, 4)
        _, grad = ctc_loss(lp, [1, 2])
        np.testing.assert_allclose((-grad).sum(axis=1), np.ones(5), atol=1e-9)

    def test_relabeling_is_exact(self, rng):
        lp = normalized_rows(rng, 4, 4)
        target = [2, 1, 3]
        perm = [0, 3, 1, 2]  # blank stays put
        loss_a, _ = ctc_loss(lp, target)
        loss_b, _ = ctc_loss(lp[:, np.argsort(perm)], [perm[u] for u in target])
        assert loss_a == loss_b

    def test_infeasible_targets_raise(self):
        lp = np.log(np.full((1, 3), 1 / 3))
        with pytest.raises(InfeasibleTargetError):
            ctc_loss(lp, [1, 2])
        # a repeat forces a separating blank, needing 3 frames
        lp2 = np.log(np.full((2, 3), 1 / 3))
        with pytest.raises(InfeasibleTargetError):
            ctc_loss(lp2, [1, 1])

    def test_input_validation(self):
        with pytest.raises(ShapeError):
            ctc_loss(np.zeros(4), [1])
        lp = np.log(np.full((3, 3), 1 / 3))
        with pytest.raises(ShapeError):
            ctc_loss(lp, [0])  # blank is not a target label
        with pytest.raises(ShapeError):
            ctc_loss(lp, [3])  # outside the alphabet


def peaked(rows, classes, hot=0.9):
    """Log-prob matrix with one dominant class per frame."""
    out = np.full((len(rows), classes), (1 - hot) / (classes - 1))
    for t, k in enumerate(rows):
        out[t] = (1 - hot) / (classes - 1)
        out[t, k] = hot
    return np.log(out)


class TestGreedyDecode:
    def test_collapses_repeats_around_blank(self):
        assert greedy_decode(peaked([1, 1, 0, 1], 3)) == [1, 1]

    def test_all_blank_is_empty(self):
        assert greedy_decode(peaked([0, 0, 0], 3)) == []

    def test_blank_separates_distinct_labels(self):
        assert greedy_decode(peaked([1, 0, 0, 2], 3)) == [1, 2]

    def test_tie_goes_to_lowest_label(self):
        row = np.log([[0.05, 0.475, 0.475]])
        assert greedy_decode(row) == [1]

    def test_rejects_bad_shape(self):
        with pytest.raises(ShapeError):
            greedy_decode(np.zeros(5))


class TestHypothesis:
    def test_total_and_score(self):
        hyp = Hypothesis(prefix=(1,), log_p_blank=math.log(0.25), log_p_nonblank=math.log(0.25))
        assert hyp.log_p_total == pytest.approx(math.log(0.5))
        assert hyp.log_p_total <= 0.0
        assert hyp.score == hyp.log_p_total + hyp.lm_score


class TestBeamSearch:
    @pytest.fixture()
    def abc(self):
        return build_alphabet(["ab"])  # labels: a=1, b=2, classes=3

    def test_prefix_mass_never_grows_with_extension(self, rng, abc):
        """Extending a prefix can only shed probability mass.

        The monotone quantity is the mass of the prefix *set* (all
        outputs starting with the prefix), not the per-sequence mass:
        with one frame of log([0.3, 0.7]) the sequence (1,) outweighs
        the shorter (). Pruning on per-prefix scores stays admissible
        because of the set-mass bound.
        """
        for _ in range(10):
            t_len = int(rng.integers(1, 6))
            lp = normalized_rows(rng, t_len, abc.classes)
            mass = sequence_masses(lp)

            def set_mass(prefix):
                hits = [m for seq, m in mass.items() if seq[: len(prefix)] == prefix]
                return np.logaddexp.reduce(hits) if hits else NEG_INF

            for seq in mass:
                for k in range(len(seq)):
                    assert set_mass(seq[: k + 1]) <= set_mass(seq[:k]) + 1e-12

    def test_matches_exhaustive_search(self, rng, abc):
        for _ in range(25):
            t_len = int(rng.integers(1, 6))
            lp = normalized_rows(rng, t_len, abc.classes)
            mass = sequence_masses(lp)
            want = min(mass.items(), key=lambda kv: (-kv[1], kv[0]))[0]
            got = beam_search(lp, abc, beam_width=abc.classes**t_len)
            assert got == decode(abc, want)

    def test_width_one_follows_greedy_on_peaked_input(self, abc):
        lp = peaked([1, 1, 0, 2], abc.classes)
        assert beam_search(lp, abc, beam_width=1) == decode(abc, greedy_decode(lp))

    def test_alpha_beta_zero_ignores_lm(self, rng):
        alphabet = build_alphabet(["ab "])
        lm_a = train_kn(["a a a a"], order=2)
        lm_b = train_kn(["b b b b"], order=2)
        for _ in range(10):
            lp = normalized_rows(rng, 4, alphabet.classes)
            plain = beam_search(lp, alphabet, beam_width=30)
            for lm in (lm_a, lm_b):
                assert beam_search(lp, alphabet, beam_width=30, lm=lm, alpha=0.0, beta=0.0) == plain

    def test_lm_breaks_acoustic_tie(self):
        alphabet = build_alphabet(["ab "])  # space=1, a=2, b=3
        # Kneser-Ney favors the word seen after more distinct contexts;
        # raw repetitions alone would leave the unigrams tied
        lm = train_kn(["x b", "y b", "z b", "x a"], order=2)
        # frames: equal mass on a and b, then a clean space
        row_tie = np.log([0.02, 0.01, 0.485, 0.485])
        row_space = np.log([0.02, 0.94, 0.02, 0.02])
        lp = np.vstack([row_tie, row_space])
        # without an LM the lexicographically smaller prefix wins the tie
        assert beam_search(lp, alphabet, beam_width=30) == "a "
        assert beam_search(lp, alphabet, beam_width=30, lm=lm, alpha=0.75, beta=1.0) == "b "

    def test_final_partial_word_is_scored(self):
        alphabet = build_alphabet(["ab "])
        lm = train_kn(["x b", "y b", "z b", "x a"], order=2)
        lp = np.log([[0.02, 0.01, 0.485, 0.485]])  # one ambiguous frame, no space
        assert beam_search(lp, alphabet, beam_width=30) == "a"
        assert beam_search(lp, alphabet, beam_width=30, lm=lm) == "b"

    def test_decoded_sequence_has_positive_mass(self, rng, abc):
        lp = normalized_rows(rng, 4, abc.classes)
        text = beam_search(lp, abc, beam_width=50)
        labels = tuple(abc.label_of(ch) for ch in text)
        mass = sequence_masses(lp)
        assert NEG_INF < mass[labels] <= 0.0

    def test_rejects_bad_width_and_shape(self, abc):
        lp = np.log(np.full((2, abc.classes), 1 / 3))
        with pytest.raises(ShapeError):
            beam_search(lp, abc, beam_width=0)
        with pytest.raises(ShapeError):
            beam_search(np.zeros((2, 7)), abc)
