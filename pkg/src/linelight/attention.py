"""Line-windowed, softmax-free attention.

For a query pixel on row r, the keys and values come from every pixel whose
row lies within ``window_rows`` rows centered on r (truncated at the image
borders, no padding).  Because the attention has no softmax, the key/value
contribution of a whole window collapses into a single CxC matrix

    M_r = sum over rows r' in the window of A_{r'},   A_{r'} = K_{r'}^T V_{r'}

and every query on row r is just ``q @ M_r``.  Three executions of the same
math are provided:

* ``line_attention_naive``    -- direct per-pixel scores, O(H * W^2 * h * C)
* ``line_attention_linear``   -- row aggregates + sliding window, O(H * W * C^2)
* ``LineBufferState``         -- the sliding window run as a row-by-row
  streaming executor holding at most ``min(h, H)`` aggregates plus one
  running-sum accumulator, the way a line-based imaging pipeline would.

The linear and streaming paths share the same helpers in the same order, so
their outputs are bitwise equal in f64.  All internal accumulation is f64;
results are cast back to the input dtype on emission.
"""

from __future__ import annotations

from collections import deque
from typing import Iterable, Iterator

import numpy as np

from .autodiff import Tensor, check_same_dtype, record_op
from .errors import ConfigurationError, DimensionError, StreamProtocolError


def _check_window(window_rows: int) -> int:
    if window_rows < 1 or window_rows % 2 == 0:
        raise ConfigurationError(
            f"window_rows must be a positive odd integer, got {window_rows}")
    return (window_rows - 1) // 2


def _check_qkv(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> tuple:
    if not (q.shape == k.shape == v.shape):
        raise DimensionError(f"q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    if q.ndim != 4:
        raise DimensionError(f"expected NCHW tensors, got {q.ndim}D")
    return q.shape


def _row_outer(k_row: np.ndarray, v_row: np.ndarray) -> np.ndarray:
    # A[c, d] = sum_w k[c, w] * v[d, w]
    return np.einsum("cw,dw->cd", k_row, v_row)


def _apply_row(q_row: np.ndarray, m: np.ndarray) -> np.ndarray:
    # out[d, w] = sum_c q[c, w] * m[c, d]
    return np.einsum("cw,cd->dw", q_row, m)


def line_attention_naive(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                         window_rows: int) -> np.ndarray:
    """Direct evaluation: per-pixel key scores, no aggregate factorization."""
    half = _check_window(window_rows)
    n, c, h, w = _check_qkv(q, k, v)
    out = np.empty_like(q)
    q64 = q.astype(np.float64, copy=False)
    k64 = k.astype(np.float64, copy=False)
    v64 = v.astype(np.float64, copy=False)
    for i in range(n):
        for r in range(h):
            lo, hi = max(0, r - half), min(h - 1, r + half)
            keys = k64[i, :, lo:hi + 1, :].reshape(c, -1)
            vals = v64[i, :, lo:hi + 1, :].reshape(c, -1)
            scores = np.einsum("cw,cm->wm", q64[i, :, r, :], keys)
            out[i, :, r, :] = np.einsum("wm,dm->dw", scores, vals).astype(q.dtype)
    return out


def line_attention_linear(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                          window_rows: int) -> np.ndarray:
    """Row-aggregate factorization with an add/evict sliding window sum."""
    half = _check_window(window_rows)
    n, c, h, w = _check_qkv(q, k, v)
    out = np.empty_like(q)
    for i in range(n):
        q64 = q[i].astype(np.float64, copy=False)
        k64 = k[i].astype(np.float64, copy=False)
        v64 = v[i].astype(np.float64, copy=False)
        aggs: deque[np.ndarray] = deque()
        m = np.zeros((c, c), dtype=np.float64)
        for j in range(h):
            if len(aggs) == window_rows:
                m -= aggs.popleft()
            a = _row_outer(k64[:, j, :], v64[:, j, :])
            aggs.append(a)
            m += a
            r = j - half
            if r >= 0:
                out[i, :, r, :] = _apply_row(q64[:, r, :], m).astype(q.dtype)
        for r in range(max(h - half, 0), h):
            if r - half - 1 >= 0 and aggs:
                m -= aggs.popleft()
            out[i, :, r, :] = _apply_row(q64[:, r, :], m).astype(q.dtype)
    return out


class LineBufferState:
    """Sliding-window state for one image, fed one row at a time.

    Persistent state between rows is a ring buffer of at most
    ``min(window_rows, H)`` CxC row aggregates plus one CxC running sum; the
    query rows awaiting emission pass through a short matched delay line that
    is not part of the key/value state.
    """

    def __init__(self, channels: int, window_rows: int, dtype=np.float32):
        self.half = _check_window(window_rows)
        self.window_rows = window_rows
        self.channels = channels
        self.dtype = dtype
        self._aggs: deque[np.ndarray] = deque()
        self._sum = np.zeros((channels, channels), dtype=np.float64)
        self._pending_q: deque[tuple[int, np.ndarray]] = deque()
        self._next_row = 0
        self._next_out = 0
        self._finished = False
        self.peak_occupancy = 0

    @property
    def occupancy(self) -> int:
        return len(self._aggs)

    @property
    def peak_state_numbers(self) -> int:
        """Peak persistent scalars held: aggregates plus the accumulator."""
        c2 = self.channels * self.channels
        return self.peak_occupancy * c2 + c2

    def _emit(self, r: int) -> tuple[int, np.ndarray]:
        row, q_row = self._pending_q.popleft()
        assert row == r == self._next_out, "emitting before window is ready"
        self._next_out += 1
        return r, _apply_row(q_row, self._sum).astype(self.dtype)

    def push(self, row_index: int, q_row: np.ndarray, k_row: np.ndarray,
             v_row: np.ndarray) -> list[tuple[int, np.ndarray]]:
        """Consume input row ``row_index``; returns any rows now computable."""
        if self._finished:
            raise StreamProtocolError("push() after finish()")
        if row_index != self._next_row:
            raise StreamProtocolError(
                f"rows must arrive top-to-bottom: expected {self._next_row}, got {row_index}")
        if q_row.shape[0] != self.channels:
            raise DimensionError(
                f"row has {q_row.shape[0]} channels, state built for {self.channels}")
        self._next_row += 1
        if len(self._aggs) == self.window_rows:
            self._sum -= self._aggs.popleft()
        a = _row_outer(k_row.astype(np.float64, copy=False),
                       v_row.astype(np.float64, copy=False))
        self._aggs.append(a)
        self._sum += a
        self.peak_occupancy = max(self.peak_occupancy, len(self._aggs))
        self._pending_q.append((row_index, q_row.astype(np.float64, copy=False)))
        if row_index - self.half >= 0:
            return [self._emit(row_index - self.half)]
        return []

    def finish(self) -> list[tuple[int, np.ndarray]]:
        """Signal end of image; flushes the bottom-border rows."""
        if self._finished:
            raise StreamProtocolError("finish() called twice")
        self._finished = True
        height = self._next_row
        rows = []
        for r in range(max(height - self.half, 0), height):
            if r - self.half - 1 >= 0 and self._aggs:
                self._sum -= self._aggs.popleft()
            rows.append(self._emit(r))
        return rows


def line_attention_streaming(rows: Iterable[tuple[np.ndarray, np.ndarray, np.ndarray]],
                             window_rows: int,
                             state: LineBufferState | None = None,
                             ) -> Iterator[tuple[int, np.ndarray]]:
    """Drive a LineBufferState from an iterator of (q, k, v) rows, each (C, W).

    Yields ``(row_index, out_row)`` as soon as each output row's window has
    been fully consumed: latency is (window_rows - 1) / 2 input rows.
    """
    it = iter(rows)
    try:
        first = next(it)
    except StopIteration:
        return
    if state is None:
        state = LineBufferState(first[0].shape[0], window_rows, dtype=first[0].dtype)
    yield from state.push(0, *first)
    for j, (q_row, k_row, v_row) in enumerate(it, start=1):
        yield from state.push(j, q_row, k_row, v_row)
    yield from state.finish()


def streaming_attention_image(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                              window_rows: int,
                              state_out: list | None = None) -> np.ndarray:
    """Run the streaming executor over a full (C, H, W) image and reassemble."""
    c, h, w = q.shape
    state = LineBufferState(c, window_rows, dtype=q.dtype)
    if state_out is not None:
        state_out.append(state)
    out = np.empty_like(q)
    rows = ((q[:, j, :], k[:, j, :], v[:, j, :]) for j in range(h))
    for r, row in line_attention_streaming(rows, window_rows, state):
        out[:, r, :] = row
    return out


def _window_sum(a: np.ndarray, half: int) -> np.ndarray:
    """Truncated sliding sum over axis 1 of (N, H, C, C)."""
    n, h = a.shape[0], a.shape[1]
    cum = np.concatenate([np.zeros_like(a[:, :1]), np.cumsum(a, axis=1)], axis=1)
    his = np.minimum(np.arange(h) + half, h - 1)
    los = np.maximum(np.arange(h) - half, 0)
    return cum[:, his + 1] - cum[:, los]


def line_attention(q: Tensor, k: Tensor, v: Tensor, window_rows: int) -> Tensor:
    """Taped line attention; forward runs the linear kernel."""
    check_same_dtype(q, k, v)
    half = _check_window(window_rows)
    out = line_attention_linear(q.data, k.data, v.data, window_rows)

    def bwd(g, _):
        q64 = q.data.astype(np.float64, copy=False)
        k64 = k.data.astype(np.float64, copy=False)
        v64 = v.data.astype(np.float64, copy=False)
        g64 = g.astype(np.float64, copy=False)
        aggs = np.einsum("nchw,ndhw->nhcd", k64, v64, optimize=True)
        m = _window_sum(aggs, half)
        dm = np.einsum("nchw,ndhw->nhcd", q64, g64, optimize=True)
        da = _window_sum(dm, half)
        if q.requires_grad:
            q.ensure_grad()
            q.grad += np.einsum("ndhw,nhcd->nchw", g64, m, optimize=True).astype(q.dtype)
        if k.requires_grad:
            k.ensure_grad()
            k.grad += np.einsum("ndhw,nhcd->nchw", v64, da, optimize=True).astype(k.dtype)
        if v.requires_grad:
            v.ensure_grad()
            v.grad += np.einsum("nchw,nhcd->ndhw", k64, da, optimize=True).astype(v.dtype)

    return record_op([q, k, v], out, bwd)
