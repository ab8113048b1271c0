import math

import numpy as np
import pytest

from longiflow.services.metrics import DECISION_THRESHOLD, accuracy, auc, bce_loss, confusion
from longiflow.utils.errors import DataError
from longiflow.utils.tensor import Tensor


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


class TestBCE:
    def test_zero_logit_is_ln2(self):
        assert bce_loss(Tensor(np.array(0.0)), 1).item() == pytest.approx(math.log(2.0), abs=1e-12)
        assert bce_loss(Tensor(np.array(0.0)), 0).item() == pytest.approx(math.log(2.0), abs=1e-12)

    def test_large_logits_stay_finite(self):
        assert bce_loss(Tensor(np.array(40.0)), 1).item() == pytest.approx(0.0, abs=1e-15)
        assert bce_loss(Tensor(np.array(40.0)), 0).item() == pytest.approx(40.0)
        assert bce_loss(Tensor(np.array(-1000.0)), 1).item() == pytest.approx(1000.0)

    def test_gradient_is_sigmoid_minus_label(self):
        logit = Tensor(np.array(0.7), requires_grad=True)
        bce_loss(logit, 1).backward()
        assert float(logit.grad) == pytest.approx(1.0 / (1.0 + math.exp(-0.7)) - 1.0)


class TestAUC:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_pairwise_count(self, seed):
        rng = np.random.default_rng(seed)
        labels = rng.permutation([0] * 7 + [1] * 5)
        # 离散分数保证出现平局
        scores = rng.integers(0, 4, size=12) / 4.0
        assert auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)

    def test_all_ties(self):
        assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_perfect_and_inverted(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0

    def test_invariant_under_monotone_transform(self, rng):
        scores = rng.normal(size=30)
        labels = np.arange(30) % 2
        assert auc(np.exp(3 * scores), labels) == pytest.approx(auc(scores, labels), abs=1e-12)

    def test_single_class(self):
        with pytest.raises(DataError, match="both classes"):
            auc([0.1, 0.9], [1, 1])

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            auc([0.1, 0.9, 0.5], [0, 1])


class TestConfusion:
    def test_threshold_tie_is_positive(self):
        assert DECISION_THRESHOLD == 0.5
        assert confusion([0.5, 0.5], [1, 0]) == (1, 1, 0, 0)

    def test_counts(self):
        assert confusion([0.9, 0.2, 0.7, 0.1, 0.4], [1, 1, 0, 0, 0]) == (1, 1, 2, 1)

    def test_accuracy(self):
        assert accuracy([0.9, 0.2, 0.7, 0.1], [1, 1, 0, 0]) == 0.5
        assert accuracy([], []) == 0.0
