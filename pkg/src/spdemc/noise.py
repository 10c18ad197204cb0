"""Wiener path generation with reproducible independent substreams.

Increments are the stored primitive: every integrator consumes increments,
and restriction/concatenation is exact on increments. Streams follow a
counter-based discipline — one logical stream per (purpose, index, attempt)
triple derived from the master seed via SeedSequence spawn keys feeding a
Philox generator — so adding Monte Carlo replicates never perturbs existing
ones.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .scenario import TimeGrid

_MAGIC = b"WPTH"
_VERSION = 1


@dataclass(frozen=True)
class WienerPath:
    """One realization of the adapted components w and/or auxiliary ones w_hat.

    dw: (n_steps, m) increments of the adapted Wiener sequence, or None.
    dw_hat: (n_steps, d) increments of the auxiliary d-dim Wiener process,
        or None. Entry (i, k) is w^k_{t_{i+1}} - w^k_{t_i}.
    """

    grid: TimeGrid
    dw: Optional[np.ndarray] = None
    dw_hat: Optional[np.ndarray] = None

    def __post_init__(self):
        for name, arr in (("dw", self.dw), ("dw_hat", self.dw_hat)):
            if arr is not None and arr.shape[0] != self.grid.n_steps:
                raise ValueError(f"{name} must have n_steps rows")

    @property
    def m(self) -> int:
        return 0 if self.dw is None else self.dw.shape[1]

    @property
    def d_hat(self) -> int:
        return 0 if self.dw_hat is None else self.dw_hat.shape[1]

    def cumulative_w(self) -> np.ndarray:
        """Path values at nodes, (n_steps+1, m), first row exactly 0."""
        if self.dw is None:
            raise ValueError("path has no w part")
        return _cumulative(self.dw)

    def cumulative_w_hat(self) -> np.ndarray:
        if self.dw_hat is None:
            raise ValueError("path has no w_hat part")
        return _cumulative(self.dw_hat)

    def with_hat(self, other: "WienerPath") -> "WienerPath":
        """Merge this path's w part with another path's w_hat part."""
        if other.grid.n_steps != self.grid.n_steps:
            raise ValueError("grids disagree")
        return replace(self, dw_hat=other.dw_hat)

    def restrict(self, i: int, j: int) -> "WienerPath":
        """Sub-path over nodes [i, j], re-indexed to start at 0.

        The cumulative sub-path equals the original cumulative minus its
        value at t_i; on increments the restriction is exact.
        """
        n = self.grid.n_steps
        if not (0 <= i < j <= n):
            raise IndexError(f"restrict indices must satisfy 0 <= i < j <= {n}")
        sub = TimeGrid(T=(j - i) * self.grid.dt, n_steps=j - i,
                       dt_override=self.grid.dt)
        return WienerPath(
            grid=sub,
            dw=None if self.dw is None else self.dw[i:j].copy(),
            dw_hat=None if self.dw_hat is None else self.dw_hat[i:j].copy(),
        )

    def checksum(self) -> str:
        """Stable content hash used by reports to assert path coupling."""
        h = zlib.crc32(np.float64(self.grid.dt).tobytes())
        for arr in (self.dw, self.dw_hat):
            if arr is not None:
                h = zlib.crc32(np.ascontiguousarray(arr).tobytes(), h)
        return f"{h:08x}"

    def dump(self, path: str) -> None:
        """Write the documented little-endian binary layout.

        Header: magic 'WPTH', uint32 version, uint32 n_steps, uint32 m,
        uint32 d, uint32 flags (bit0 = w present, bit1 = w_hat present),
        float64 T, float64 dt. Body: the dw matrix then the dw_hat matrix,
        row-major float64, only the parts flagged present.
        """
        flags = (1 if self.dw is not None else 0) | (2 if self.dw_hat is not None else 0)
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IIIII", _VERSION, self.grid.n_steps,
                                 self.m, self.d_hat, flags))
            fh.write(struct.pack("<dd", self.grid.T, self.grid.dt))
            if self.dw is not None:
                fh.write(np.ascontiguousarray(self.dw, dtype="<f8").tobytes())
            if self.dw_hat is not None:
                fh.write(np.ascontiguousarray(self.dw_hat, dtype="<f8").tobytes())


def load_path(path: str) -> WienerPath:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a WienerPath dump")
        version, n, m, d, flags = struct.unpack("<IIIII", fh.read(20))
        if version != _VERSION:
            raise ValueError(f"unsupported dump version {version}")
        T, dt = struct.unpack("<dd", fh.read(16))
        dw = dw_hat = None
        if flags & 1:
            dw = np.frombuffer(fh.read(8 * n * m), dtype="<f8").reshape(n, m).copy()
        if flags & 2:
            dw_hat = np.frombuffer(fh.read(8 * n * d), dtype="<f8").reshape(n, d).copy()
    grid = TimeGrid(T=T, n_steps=n, dt_override=dt if dt != T / n else None)
    return WienerPath(grid=grid, dw=dw, dw_hat=dw_hat)


def _cumulative(increments: np.ndarray) -> np.ndarray:
    out = np.zeros((increments.shape[0] + 1,) + increments.shape[1:])
    np.cumsum(increments, axis=0, out=out[1:])
    return out


def concatenate(first: WienerPath, second: WienerPath) -> WienerPath:
    """Glue two sub-paths; inverse of a two-piece restriction."""
    if first.grid.dt != second.grid.dt:
        raise ValueError("dt mismatch")
    n = first.grid.n_steps + second.grid.n_steps
    grid = TimeGrid(T=n * first.grid.dt, n_steps=n, dt_override=first.grid.dt)

    def _cat(a, b):
        if a is None and b is None:
            return None
        if a is None or b is None:
            raise ValueError("cannot concatenate mismatched parts")
        return np.concatenate([a, b], axis=0)

    return WienerPath(grid=grid, dw=_cat(first.dw, second.dw),
                      dw_hat=_cat(first.dw_hat, second.dw_hat))


# Stream purposes get stable small codes via crc32 so that stream identity
# is a pure function of (master seed, purpose, index, attempt).
def _purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


@dataclass(frozen=True)
class NoisePlan:
    """Stream bookkeeping for one scenario run.

    Distinct (seed, stream) pairs yield statistically independent paths;
    identical pairs yield bit-identical ones.
    """

    master_seed: int
    m: int = 0
    d: int = 1

    def rng(self, purpose: str, index: int = 0, attempt: int = 0) -> np.random.Generator:
        seq = np.random.SeedSequence(
            entropy=self.master_seed,
            spawn_key=(_purpose_code(purpose), index, attempt),
        )
        return np.random.Generator(np.random.Philox(seq))

    def sample_w(self, grid: TimeGrid, m: Optional[int] = None,
                 stream: int = 0) -> WienerPath:
        """Adapted components: (n_steps x m) N(0, dt) increments."""
        m = self.m if m is None else m
        if m < 0:
            raise ValueError("m must be >= 0")
        rng = self.rng("w", stream)
        dw = rng.normal(0.0, np.sqrt(grid.dt), size=(grid.n_steps, m))
        return WienerPath(grid=grid, dw=dw)

    def sample_w_hat(self, grid: TimeGrid, replicate: int,
                     d: Optional[int] = None, attempt: int = 0) -> WienerPath:
        """Auxiliary components for one Monte Carlo replicate."""
        if replicate < 0:
            raise ValueError("replicate index must be >= 0")
        d = self.d if d is None else d
        rng = self.rng("what", replicate, attempt)
        dw_hat = rng.normal(0.0, np.sqrt(grid.dt), size=(grid.n_steps, d))
        return WienerPath(grid=grid, dw_hat=dw_hat)

    def sample_w_hat_block(self, grid: TimeGrid, replicates, d: Optional[int] = None,
                           attempts=None) -> np.ndarray:
        """Stacked dw_hat for many replicates, shape (len(replicates), n, d).

        Each replicate keeps its own stream, so the block is bit-identical
        to stacking sample_w_hat calls.
        """
        d = self.d if d is None else d
        replicates = list(replicates)
        if attempts is None:
            attempts = [0] * len(replicates)
        out = np.empty((len(replicates), grid.n_steps, d))
        s = np.sqrt(grid.dt)
        for row, (j, a) in enumerate(zip(replicates, attempts)):
            out[row] = self.rng("what", j, a).normal(0.0, s, size=(grid.n_steps, d))
        return out
