"""Chain storage, re-ordering, batching, and persistence checks."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from margpost.chainstore import (
    BLOCK_INDEPENDENT,
    JOINT,
    BatchPartition,
    BlockLayout,
    ChainSample,
    export_csv,
    label_permute_mixture,
    load_chain,
    random_permute,
    save_chain,
    systematic_reorder,
)


def toy_chain(n=12, seed=0):
    rng = np.random.default_rng(seed)
    layout = BlockLayout([("beta", 2), ("sigma2", 1)])
    return ChainSample(rng.normal(size=(n, 3)), layout, seed=seed)


class TestBlockLayout:
    def test_offsets_are_contiguous(self):
        layout = BlockLayout([("a", 2), ("b", 3), ("c", 1)])
        assert layout.total_dim == 6
        assert layout.slice_of("b") == slice(2, 5)
        assert layout.names == ["a", "b", "c"]

    def test_rejects_duplicates_and_bad_widths(self):
        with pytest.raises(ValueError):
            BlockLayout([("a", 1), ("a", 2)])
        with pytest.raises(ValueError):
            BlockLayout([("a", 0)])
        with pytest.raises(KeyError):
            BlockLayout([("a", 1)]).block("b")


class TestChainSample:
    def test_draws_are_immutable(self):
        chain = toy_chain()
        with pytest.raises(ValueError):
            chain.draws[0, 0] = 99.0

    def test_block_view_and_row_state(self):
        chain = toy_chain()
        assert chain.block("beta").shape == (12, 2)
        state = chain.row_state(3)
        assert_array_equal(state["sigma2"], chain.draws[3, 2:3])

    def test_select_keeps_named_blocks(self):
        chain = toy_chain()
        sub = chain.select(["sigma2"])
        assert sub.layout.names == ["sigma2"]
        assert_array_equal(sub.draws[:, 0], chain.draws[:, 2])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ChainSample(np.zeros((5, 4)), BlockLayout([("a", 3)]))


class TestSystematicReorder:
    def test_two_block_shift_is_half_cycle(self):
        """With B=2 and N=6, block 1's rows are the originals shifted by 3."""
        layout = BlockLayout([("a", 1), ("b", 1)])
        draws = np.column_stack([np.arange(6.0), np.arange(6.0) * 10.0])
        out = systematic_reorder(ChainSample(draws, layout))
        assert_array_equal(out.block("a")[:, 0], np.arange(6.0))
        assert_array_equal(out.block("b")[:, 0], np.array([30.0, 40, 50, 0, 10, 20]))
        assert out.independence == BLOCK_INDEPENDENT

    def test_three_block_shifts(self):
        layout = BlockLayout([("a", 1), ("b", 1), ("c", 1)])
        draws = np.column_stack([np.arange(6.0)] * 3)
        out = systematic_reorder(ChainSample(draws, layout))
        assert_array_equal(out.block("b")[:, 0], np.array([2.0, 3, 4, 5, 0, 1]))
        assert_array_equal(out.block("c")[:, 0], np.array([4.0, 5, 0, 1, 2, 3]))

    def test_marginals_preserved_exactly(self):
        chain = toy_chain(n=30, seed=5)
        out = systematic_reorder(chain)
        for name in ("beta", "sigma2"):
            assert_array_equal(
                np.sort(out.block(name), axis=0), np.sort(chain.block(name), axis=0)
            )

    def test_truncates_with_warning_when_not_divisible(self):
        chain = toy_chain(n=13)
        with pytest.warns(UserWarning):
            out = systematic_reorder(chain)
        assert out.n_draws == 12

    def test_single_block_passes_through_with_flag(self):
        layout = BlockLayout([("theta", 3)])
        chain = ChainSample(np.random.default_rng(1).normal(size=(8, 3)), layout)
        out = systematic_reorder(chain)
        assert_array_equal(out.draws, chain.draws)
        assert out.independence == BLOCK_INDEPENDENT

    def test_rejects_already_reordered_chain(self):
        out = systematic_reorder(toy_chain())
        with pytest.raises(ValueError):
            systematic_reorder(out)


class TestRandomPermute:
    def test_marginals_preserved_and_anchor_fixed(self):
        chain = toy_chain(n=40, seed=9)
        out = random_permute(chain, np.random.default_rng(2))
        assert_array_equal(out.block("beta"), chain.block("beta"))
        assert_array_equal(
            np.sort(out.block("sigma2"), axis=0), np.sort(chain.block("sigma2"), axis=0)
        )
        assert out.independence == BLOCK_INDEPENDENT

    def test_seed_reproducibility(self):
        chain = toy_chain(n=40, seed=9)
        a = random_permute(chain, np.random.default_rng(7))
        b = random_permute(chain, np.random.default_rng(7))
        assert_array_equal(a.draws, b.draws)


class TestLabelPermute:
    def mixture_chain(self, n=200, k=3, seed=4):
        rng = np.random.default_rng(seed)
        layout = BlockLayout([("mu", k), ("sigma2", k), ("w", k), ("z", 10)])
        mu = rng.normal(size=(n, k))
        s2 = rng.random((n, k)) + 0.5
        w = rng.dirichlet(np.ones(k), size=n)
        z = rng.integers(0, k, size=(n, 10)).astype(float)
        return ChainSample(np.hstack([mu, s2, w, z]), layout)

    def test_rows_are_relabelings(self):
        chain = self.mixture_chain()
        out = label_permute_mixture(chain, 3, np.random.default_rng(0))
        assert_array_equal(np.sort(out.block("mu"), axis=1), np.sort(chain.block("mu"), axis=1))
        assert_array_equal(np.sort(out.block("w"), axis=1), np.sort(chain.block("w"), axis=1))

    def test_allocations_still_point_at_same_parameters(self):
        """Observation i's component mean must be unchanged by relabeling."""
        chain = self.mixture_chain()
        out = label_permute_mixture(chain, 3, np.random.default_rng(1))
        old_mu = np.take_along_axis(chain.block("mu"), chain.block("z").astype(int), axis=1)
        new_mu = np.take_along_axis(out.block("mu"), out.block("z").astype(int), axis=1)
        assert_allclose(new_mu, old_mu)
        old_s2 = np.take_along_axis(chain.block("sigma2"), chain.block("z").astype(int), axis=1)
        new_s2 = np.take_along_axis(out.block("sigma2"), out.block("z").astype(int), axis=1)
        assert_allclose(new_s2, old_s2)

    def test_shared_variance_block_left_alone(self):
        rng = np.random.default_rng(3)
        layout = BlockLayout([("mu", 2), ("sigma2", 1), ("w", 2)])
        draws = np.hstack([
            rng.normal(size=(50, 2)), rng.random((50, 1)) + 0.5,
            rng.dirichlet(np.ones(2), size=50),
        ])
        chain = ChainSample(draws, layout)
        out = label_permute_mixture(chain, 2, np.random.default_rng(8))
        assert_array_equal(out.block("sigma2"), chain.block("sigma2"))

    def test_k_one_is_identity(self):
        chain = toy_chain()
        assert label_permute_mixture(chain, 1, np.random.default_rng(0)) is chain

    def test_missing_blocks_rejected(self):
        with pytest.raises(KeyError):
            label_permute_mixture(toy_chain(), 2, np.random.default_rng(0))


class TestBatchPartition:
    def test_slices_cover_contiguously(self):
        part = BatchPartition(12, 3)
        assert part.batch_size == 4
        assert part.slices() == [slice(0, 4), slice(4, 8), slice(8, 12)]

    def test_rejects_uneven_split(self):
        with pytest.raises(ValueError):
            BatchPartition(10, 3)


class TestPersistence:
    def test_binary_round_trip_bit_exact(self, tmp_path):
        chain = systematic_reorder(toy_chain(n=20, seed=12))
        path = tmp_path / "chain.evch"
        save_chain(path, chain)
        back = load_chain(path)
        assert_array_equal(back.draws, chain.draws)
        assert back.layout == chain.layout
        assert back.independence == chain.independence
        assert back.seed == chain.seed

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.evch"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_chain(path)

    def test_truncated_payload_rejected(self, tmp_path):
        chain = toy_chain()
        path = tmp_path / "chain.evch"
        save_chain(path, chain)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(ValueError):
            load_chain(path)

    def test_csv_export_header_and_values(self, tmp_path):
        chain = toy_chain(n=5)
        path = tmp_path / "chain.csv"
        export_csv(path, chain)
        lines = path.read_text().splitlines()
        assert lines[0] == "beta[0],beta[1],sigma2[0]"
        parsed = np.loadtxt(path, delimiter=",", skiprows=1)
        assert_allclose(parsed, chain.draws, rtol=0, atol=0)
