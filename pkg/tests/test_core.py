import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latefuse.core import (
    ClassVector,
    ContractError,
    DatasetSplit,
    FusedFeature,
    Polarity,
    accuracy,
    argmax_class,
    check_fit_ready,
    confusion,
    to_arrays,
)


class TestClassVector:
    def test_valid(self):
        v = ClassVector((0.2, 0.3, 0.5))
        assert v.argmax() is Polarity.POSITIVE

    @pytest.mark.parametrize("probs", [(0.5, 0.5), (0.5, 0.6, 0.0), (-0.1, 0.6, 0.5),
                                       (np.nan, 0.5, 0.5)])
    def test_invalid(self, probs):
        with pytest.raises(ContractError):
            ClassVector(probs)

    def test_sum_tolerance(self):
        ClassVector((0.2, 0.3, 0.5 + 5e-7))
        with pytest.raises(ContractError):
            ClassVector((0.2, 0.3, 0.5 + 5e-6))

    def test_ties_go_to_lowest_index(self):
        assert argmax_class((0.4, 0.4, 0.2)) is Polarity.NEGATIVE
        assert argmax_class((0.2, 0.4, 0.4)) is Polarity.NEUTRAL
        assert argmax_class(ClassVector((1 / 3, 1 / 3, 1 / 3))) is Polarity.NEGATIVE


class TestFusedFeature:
    def test_blocks_checked(self):
        FusedFeature("a", (0.2, 0.3, 0.5, 0.1, 0.8, 0.1), 1)
        with pytest.raises(ContractError):
            FusedFeature("a", (0.2, 0.3, 0.5, 0.1, 0.8))
        with pytest.raises(ContractError):
            FusedFeature("a", (0.2, 0.3, 0.6, 0.1, 0.8, 0.1))

    def test_to_arrays_marks_unlabeled(self):
        X, y = to_arrays([FusedFeature("a", (1, 0, 0, 0, 1, 0), 2),
                          FusedFeature("b", (1, 0, 0, 0, 1, 0))])
        assert X.shape == (2, 6)
        assert y.tolist() == [2, -1]


class TestDatasetSplit:
    def test_disjoint(self):
        f = FusedFeature("a", (1, 0, 0, 0, 1, 0), 0)
        with pytest.raises(ContractError, match="'a'"):
            DatasetSplit((f,), (f,), ())

    def test_fit_ready(self):
        check_fit_ready(np.array([0, 1, 2]))
        with pytest.raises(ContractError, match="POSITIVE"):
            check_fit_ready(np.array([0, 1, 1]))
        with pytest.raises(ContractError):
            check_fit_ready(np.array([], dtype=int))


class TestMetrics:
    def test_confusion_layout(self):
        cm = confusion([0, 1, 2, 2], [0, 2, 2, 1])
        # rows are gold, columns predictions
        assert cm.to_list() == [[1, 0, 0], [0, 0, 1], [0, 1, 1]]
        assert cm.accuracy() == 0.5

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            accuracy([0, 1], [0])
        with pytest.raises(ContractError):
            accuracy([], [])

    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=200))
    @settings(max_examples=200, deadline=None)
    def test_accuracy_equals_confusion_trace(self, pairs):
        pred, gold = zip(*pairs)
        cm = confusion(pred, gold)
        assert cm.total == len(pairs)
        assert accuracy(pred, gold) == cm.trace / cm.total
