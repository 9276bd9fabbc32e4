"""Storage and manipulation of MCMC output organized in named parameter blocks.

A chain is an N x total_dim float matrix plus a layout mapping block names to
contiguous column ranges. The importance-sampling estimators require draws
whose blocks are mutually independent; the re-ordering functions here produce
such samples from an ordinary joint chain while leaving every block's marginal
distribution untouched (each block's rows are a permutation of the originals).
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "JOINT",
    "BLOCK_INDEPENDENT",
    "Block",
    "BlockLayout",
    "ChainSample",
    "BatchPartition",
    "systematic_reorder",
    "random_permute",
    "label_permute_mixture",
    "save_chain",
    "load_chain",
    "export_csv",
]

JOINT = "joint"
BLOCK_INDEPENDENT = "block-independent"

_MAGIC = b"EVCH"
_VERSION = 1


@dataclass(frozen=True)
class Block:
    name: str
    offset: int
    width: int

    @property
    def slice(self):
        return slice(self.offset, self.offset + self.width)


class BlockLayout:
    """Ordered, contiguous, named column ranges covering a draw vector."""

    def __init__(self, spec):
        blocks = []
        offset = 0
        for name, width in spec:
            if not name:
                raise ValueError("block name must be non-empty")
            if width < 1:
                raise ValueError(f"block {name!r} must have width >= 1")
            blocks.append(Block(str(name), offset, int(width)))
            offset += int(width)
        names = [b.name for b in blocks]
        if len(set(names)) != len(names):
            raise ValueError("duplicate block names")
        if not blocks:
            raise ValueError("layout needs at least one block")
        self._blocks = tuple(blocks)
        self._by_name = {b.name: b for b in blocks}
        self.total_dim = offset

    @property
    def names(self):
        return [b.name for b in self._blocks]

    def block(self, name):
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"no block named {name!r}; have {self.names}") from None

    def slice_of(self, name):
        return self.block(name).slice

    def width_of(self, name):
        return self.block(name).width

    def subset(self, names):
        return BlockLayout([(n, self.block(n).width) for n in names])

    def __iter__(self):
        return iter(self._blocks)

    def __len__(self):
        return len(self._blocks)

    def __eq__(self, other):
        if not isinstance(other, BlockLayout):
            return NotImplemented
        return self._blocks == other._blocks

    def __repr__(self):
        inner = ", ".join(f"{b.name}:{b.width}" for b in self._blocks)
        return f"BlockLayout({inner})"


@dataclass(frozen=True)
class ChainSample:
    """Immutable matrix of posterior draws with a block layout.

    ``independence`` records whether rows are original joint MCMC iterations
    (``JOINT``) or have been re-ordered per block (``BLOCK_INDEPENDENT``).
    """

    draws: np.ndarray
    layout: BlockLayout
    independence: str = JOINT
    burn_in_discarded: int = 0
    seed: int | None = None

    def __post_init__(self):
        draws = np.ascontiguousarray(self.draws, dtype=np.float64)
        if draws.ndim != 2:
            raise ValueError("draws must be a 2-D array")
        if draws.shape[0] < 1:
            raise ValueError("chain must contain at least one draw")
        if draws.shape[1] != self.layout.total_dim:
            raise ValueError(
                f"draws have {draws.shape[1]} columns, layout expects {self.layout.total_dim}"
            )
        if self.independence not in (JOINT, BLOCK_INDEPENDENT):
            raise ValueError(f"unknown independence flag {self.independence!r}")
        draws = draws.copy()
        draws.flags.writeable = False
        object.__setattr__(self, "draws", draws)

    @property
    def n_draws(self):
        return self.draws.shape[0]

    def block(self, name):
        """Read-only (N, width) view of one block's columns."""
        return self.draws[:, self.layout.slice_of(name)]

    def row_state(self, i):
        """One draw as a dict of block name -> 1-D values."""
        row = self.draws[i]
        return {b.name: row[b.slice] for b in self.layout}

    def select(self, names):
        """New chain holding only the named blocks, in the given order."""
        cols = np.hstack([self.block(n) for n in names])
        return ChainSample(
            cols,
            self.layout.subset(names),
            independence=self.independence,
            burn_in_discarded=self.burn_in_discarded,
            seed=self.seed,
        )


def _truncate_to_multiple(chain, b):
    n = chain.n_draws
    keep = n - n % b
    if keep == n:
        return chain.draws, n
    warnings.warn(
        f"dropping last {n - keep} of {n} draws so the draw count divides "
        f"the {b} blocks",
        stacklevel=3,
    )
    return chain.draws[:keep], keep


def systematic_reorder(chain):
    """Decorrelate blocks by cyclically shifting block i's rows by i*N/B.

    Block 0 keeps its original order. Each block's rows remain exactly the
    original multiset, so marginal distributions are preserved while the
    systematic offsets break the within-iteration coupling. A single-block
    chain passes through with only the independence flag changed (one block is
    trivially block-independent).
    """
    if chain.independence != JOINT:
        raise ValueError("re-ordering expects a joint chain")
    b = len(chain.layout)
    if b == 1:
        return replace(chain, independence=BLOCK_INDEPENDENT)
    draws, n = _truncate_to_multiple(chain, b)
    out = np.empty_like(draws)
    base = np.arange(n)
    for i, blk in enumerate(chain.layout):
        shift = i * (n // b)
        out[:, blk.slice] = draws[(base + shift) % n][:, blk.slice]
    return ChainSample(
        out, chain.layout, independence=BLOCK_INDEPENDENT,
        burn_in_discarded=chain.burn_in_discarded, seed=chain.seed,
    )


def random_permute(chain, rng):
    """Decorrelate blocks by independently permuting every block after the first."""
    if chain.independence != JOINT:
        raise ValueError("re-ordering expects a joint chain")
    b = len(chain.layout)
    if b == 1:
        return replace(chain, independence=BLOCK_INDEPENDENT)
    draws, n = _truncate_to_multiple(chain, b)
    out = np.empty_like(draws)
    for i, blk in enumerate(chain.layout):
        rows = np.arange(n) if i == 0 else rng.permutation(n)
        out[:, blk.slice] = draws[rows][:, blk.slice]
    return ChainSample(
        out, chain.layout, independence=BLOCK_INDEPENDENT,
        burn_in_discarded=chain.burn_in_discarded, seed=chain.seed,
    )


def label_permute_mixture(chain, k, rng):
    """Apply an independent uniform label permutation to every draw.

    Component labels of the ``mu``, ``w``, and (when component-specific)
    ``sigma2`` blocks are permuted jointly within each draw; an allocation
    block ``z``, when present, is relabeled consistently so each observation
    still points at the same component parameters. The result targets the
    label-symmetrized posterior, as a random permutation sampler would.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if k == 1:
        return chain
    names = chain.layout.names
    for required in ("mu", "w"):
        if required not in names:
            raise KeyError(f"mixture chain needs a {required!r} block")
    if chain.layout.width_of("mu") != k or chain.layout.width_of("w") != k:
        raise ValueError("mu and w blocks must have width k")
    n = chain.n_draws
    perm = np.argsort(rng.random((n, k)), axis=1)
    out = np.array(chain.draws)
    for name in ("mu", "sigma2", "w"):
        if name not in names:
            continue
        sl = chain.layout.slice_of(name)
        if sl.stop - sl.start == k:
            out[:, sl] = np.take_along_axis(chain.draws[:, sl], perm, axis=1)
    if "z" in names:
        sl = chain.layout.slice_of("z")
        z = chain.draws[:, sl].astype(np.intp)
        if z.min() < 0 or z.max() >= k:
            raise ValueError("z block holds labels outside 0..k-1")
        inverse = np.argsort(perm, axis=1)
        out[:, sl] = np.take_along_axis(inverse, z, axis=1)
    return ChainSample(
        out, chain.layout, independence=chain.independence,
        burn_in_discarded=chain.burn_in_discarded, seed=chain.seed,
    )


@dataclass(frozen=True)
class BatchPartition:
    """K contiguous equal batches of N draws; N must divide evenly."""

    n_draws: int
    n_batches: int
    batch_size: int = field(init=False)

    def __post_init__(self):
        if self.n_batches < 2:
            raise ValueError("need at least 2 batches")
        if self.n_draws % self.n_batches != 0:
            raise ValueError(
                f"{self.n_draws} draws do not split into {self.n_batches} equal batches"
            )
        object.__setattr__(self, "batch_size", self.n_draws // self.n_batches)

    def slices(self):
        s = self.batch_size
        return [slice(i * s, (i + 1) * s) for i in range(self.n_batches)]


def save_chain(path, chain):
    """Write a chain to the columnar binary format (magic ``EVCH``, version 1)."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<QQ", chain.n_draws, chain.layout.total_dim))
        f.write(struct.pack("<Q", chain.burn_in_discarded))
        f.write(struct.pack("<B", 1 if chain.independence == BLOCK_INDEPENDENT else 0))
        f.write(struct.pack("<Bq", 1 if chain.seed is not None else 0,
                            chain.seed if chain.seed is not None else 0))
        f.write(struct.pack("<I", len(chain.layout)))
        for blk in chain.layout:
            raw = blk.name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<Q", blk.width))
        f.write(np.ascontiguousarray(chain.draws, dtype="<f8").tobytes())


def load_chain(path):
    """Read a chain written by :func:`save_chain`."""
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError("not a chain file (bad magic bytes)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _VERSION:
            raise ValueError(f"unsupported chain file version {version}")
        n, total_dim = struct.unpack("<QQ", f.read(16))
        (burn,) = struct.unpack("<Q", f.read(8))
        (flag,) = struct.unpack("<B", f.read(1))
        has_seed, seed = struct.unpack("<Bq", f.read(9))
        (n_blocks,) = struct.unpack("<I", f.read(4))
        spec = []
        for _ in range(n_blocks):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (width,) = struct.unpack("<Q", f.read(8))
            spec.append((name, width))
        payload = f.read(n * total_dim * 8)
        if len(payload) != n * total_dim * 8:
            raise ValueError("truncated chain file")
        draws = np.frombuffer(payload, dtype="<f8").reshape(n, total_dim)
    return ChainSample(
        draws, BlockLayout(spec),
        independence=BLOCK_INDEPENDENT if flag else JOINT,
        burn_in_discarded=burn,
        seed=seed if has_seed else None,
    )


def export_csv(path, chain):
    """Write draws as CSV with one ``name[index]`` column per dimension."""
    header = []
    for blk in chain.layout:
        header.extend(f"{blk.name}[{j}]" for j in range(blk.width))
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        np.savetxt(f, chain.draws, delimiter=",", fmt="%.17g")
