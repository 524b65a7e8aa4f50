"""Time-Adapter: a recurrent low-rank branch added to the key and value projections."""

from __future__ import annotations

from .numerics import LSTM, Linear, Module, ShapeError, as_tensor

TOPOLOGIES = ("sequential", "parallel")


class TimeAdapter(Module):
    """down (D_llm -> r), long-term LSTM (r -> h), short-term LSTM (h -> r), up (r -> 2 D_llm).

    ``up`` starts at zero so a fresh adapter leaves its host layer unchanged. In the
    parallel topology both recurrent paths read the down-projection; the long path's
    h-wide state is read out to width r and the two r-wide outputs are summed.
    Recurrence runs forward along the segment axis, so outputs at segment j depend
    only on inputs at segments <= j.
    """

    def __init__(self, d_llm, rng, rank=None, hidden=None, scale=1.0, topology="sequential"):
        rank = rank or max(1, d_llm // 8)
        hidden = hidden or max(rank + 1, d_llm // 2)
        if not rank < d_llm:
            raise ValueError(f"adapter rank {rank} must be below width {d_llm}")
        if not hidden > rank:
            raise ValueError(f"adapter hidden width {hidden} must exceed rank {rank}")
        if topology not in TOPOLOGIES:
            raise ValueError(f"unknown adapter topology {topology!r}")
        self.d_llm = d_llm
        self.scale = float(scale)
        self.topology = topology
        self.down = Linear(d_llm, rank, rng)
        self.long_path = LSTM(rank, hidden, rng)
        if topology == "sequential":
            self.short_path = LSTM(hidden, rank, rng)
            self.readout = None
        else:
            self.short_path = LSTM(rank, rank, rng)
            self.readout = Linear(hidden, rank, rng)
        self.up = Linear(rank, 2 * d_llm, bias=False, init="zeros")

    def __call__(self, x):
        x = as_tensor(x)
        if x.ndim != 3 or x.shape[-1] != self.d_llm:
            raise ShapeError(f"adapter: expected [B, N, {self.d_llm}], got {x.shape}")
        if x.shape[1] == 0:
            raise ValueError("adapter: empty segment axis")
        u = self.down(x)
        if self.topology == "sequential":
            b = self.short_path(self.long_path(u))
        else:
            b = self.readout(self.long_path(u)) + self.short_path(u)
        delta = self.up(b) * self.scale
        return delta[..., :self.d_llm], delta[..., self.d_llm:]
