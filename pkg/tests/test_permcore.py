import itertools
import math

import pytest

from app.core.errors import CapacityError, IndexRangeError, InvalidArgumentError, InvalidPermutationError
from app.services.permcore import (
    ItemSequence,
    SequenceSpec,
    all_permutations,
    factorial_count,
    rank,
    seq_distance,
    swap_neighbors,
    unrank,
)


class TestRank:
    def test_identity_is_zero(self):
        assert rank([0, 1, 2, 3]) == 0

    def test_reverse_is_last(self):
        assert rank([2, 1, 0]) == 5

    def test_unrank_example(self):
        assert unrank(2, 3) == [1, 0, 2]

    @pytest.mark.parametrize("l_o", [1, 2, 3, 4, 5, 6])
    def test_bijection(self, l_o):
        seen = {tuple(unrank(i, l_o)) for i in range(math.factorial(l_o))}
        assert len(seen) == math.factorial(l_o)
        for i in range(math.factorial(l_o)):
            assert rank(unrank(i, l_o)) == i
        for perm in itertools.permutations(range(l_o)):
            assert tuple(unrank(rank(perm), l_o)) == perm

    def test_matches_lexicographic_enumeration(self):
        for i, perm in enumerate(all_permutations(4)):
            assert rank(perm) == i

    def test_rejects_non_permutation(self):
        with pytest.raises(InvalidPermutationError):
            rank([0, 0, 2])

    def test_unrank_out_of_range(self):
        with pytest.raises(IndexRangeError):
            unrank(6, 3)
        with pytest.raises(IndexRangeError):
            unrank(-1, 3)


class TestNeighbors:
    @pytest.mark.parametrize("l_o", [2, 3, 5])
    def test_count_and_distance(self, l_o):
        perm = unrank(factorial_count(l_o) - 1, l_o)
        nbs = swap_neighbors(perm)
        assert len(nbs) == l_o * (l_o - 1) // 2
        assert len({tuple(n) for n in nbs}) == len(nbs)
        assert all(seq_distance(perm, n) == 2 for n in nbs)

    def test_single_item_has_none(self):
        assert swap_neighbors([0]) == []

    def test_neighbor_order(self):
        assert swap_neighbors([0, 1, 2]) == [[1, 0, 2], [2, 1, 0], [0, 2, 1]]

    @pytest.mark.parametrize(
        "a, b, expected",
        [
            ([0, 1, 2], [0, 2, 1], 2),
            ([0, 1, 2], [0, 1, 2], 0),
            ([0, 1, 2], [1, 2, 0], 3),
        ],
    )
    def test_distance_examples(self, a, b, expected):
        assert seq_distance(a, b) == expected

    @pytest.mark.parametrize("l_o", [2, 3, 4])
    def test_distance_symmetric_and_never_one(self, l_o):
        perms = all_permutations(l_o)
        for a, b in itertools.product(perms, repeat=2):
            d = seq_distance(a, b)
            assert d == seq_distance(b, a)
            assert d != 1

    def test_distance_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            seq_distance([0, 1], [0, 1, 2])


class TestSpec:
    def test_capacity(self):
        with pytest.raises(CapacityError):
            SequenceSpec(l_s=9, l_o=9)

    def test_lengths(self):
        with pytest.raises(InvalidArgumentError):
            SequenceSpec(l_s=3, l_o=4)
        assert SequenceSpec(l_s=6, l_o=4).n_permutations == 24


class TestItemSequence:
    def test_from_items(self):
        seq = ItemSequence.from_items([30, 10, 20], [10, 20, 30])
        assert seq.positions == (2, 0, 1)
        assert seq.items == (30, 10, 20)
        assert seq.is_permutation
        assert seq.rank_index == rank([2, 0, 1])

    def test_prefix_of_pool_is_permutation(self):
        seq = ItemSequence.from_items([20, 10], [10, 20, 30])
        assert seq.is_permutation
        assert seq.rank_index == 1

    def test_pool_item_beyond_prefix_is_not_permutation(self):
        seq = ItemSequence.from_items([10, 30], [10, 20, 30])
        assert not seq.is_permutation
        assert seq.rank_index is None

    def test_duplicates(self):
        seq = ItemSequence((0, 0, 1), (10, 20, 30))
        assert seq.has_duplicates

    def test_unknown_item(self):
        with pytest.raises(InvalidArgumentError):
            ItemSequence.from_items([99], [10, 20])

    def test_position_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            ItemSequence((0, 3), (10, 20, 30))
