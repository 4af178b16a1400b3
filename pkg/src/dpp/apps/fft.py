"""Radix-2 FFT with platform-offloaded leaf transforms.

The transform bit-reverses the input on the host, ships every group of
``2**k`` consecutive samples to a one-node program that computes a dense
``2**k``-point DFT per work-item (complex values interleaved in a
``float{2**(k+1)}`` vector), then finishes the remaining butterfly stages on
the host in binary64.  ``naive_dft`` is the quadratic oracle everything is
checked against.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from ..client import LocalBackend, RemoteBackend, run
from ..engine import chunk_arrays, plan, run_stream
from ..model import Instance, Node, Program
from ..types import DataType, Direction, IOPoint
from ..wire import StreamFile

__all__ = [
    "naive_dft", "fft", "leaf_kernel", "leaf_program", "bit_reverse_indices",
    "FftPlan", "fft_bench", "BenchRow",
]

MAX_LEAF_ORDER = 3  # float16 ceiling: 8 complex values per work-item


def naive_dft(signal: np.ndarray) -> np.ndarray:
    """Direct O(N^2) DFT, accumulated in binary64 and rounded to binary32."""
    x = np.asarray(signal).astype(np.complex128)
    n = len(x)
    if n < 1:
        raise ValueError("signal must have at least one sample")
    out = np.empty(n, np.complex128)
    idx = np.arange(n)
    for k in range(n):
        out[k] = (x * np.exp((-2j * np.pi * k / n) * idx)).sum()
    return out.astype(np.complex64)


def bit_reverse_indices(n: int) -> np.ndarray:
    """Permutation sending index ``i`` to its bit-reversed position."""
    bits = int(n).bit_length() - 1
    idx = np.arange(n, dtype=np.int64)
    rev = np.zeros_like(idx)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _leaf_coeff(t: int, size: int) -> tuple[float, float]:
    """cos/sin of ``-2*pi*t/size`` with exact zeros and units snapped."""
    angle = -2.0 * np.pi * (t % size) / size
    c, s = float(np.cos(angle)), float(np.sin(angle))
    for exact in (-1.0, 0.0, 1.0):
        if abs(c - exact) < 1e-12:
            c = exact
        if abs(s - exact) < 1e-12:
            s = exact
    return c, s


def _term(coeff: float, operand: str) -> str:
    if coeff == 0.0:
        return ""
    if coeff == 1.0:
        return f"+ {operand}"
    if coeff == -1.0:
        return f"- {operand}"
    sign = "-" if coeff < 0 else "+"
    literal = np.format_float_positional(np.float32(abs(coeff)), unique=True)
    return f"{sign} {literal}f*{operand}"


def _sum_terms(terms: list[str]) -> str:
    parts = [t for t in terms if t]
    joined = " ".join(parts)
    return joined[2:] if joined.startswith("+ ") else joined


def leaf_kernel(k: int) -> Node:
    """A node computing one dense ``2**k``-point DFT per work-item.

    Work-items arrive as blocks cut from the bit-reversed host signal, so
    logical sample ``t`` sits at block offset ``bitrev_k(t)``; the generated
    coefficients index components accordingly.
    """
    if not 1 <= k <= MAX_LEAF_ORDER:
        raise ValueError(f"leaf order must be 1..{MAX_LEAF_ORDER}, got {k}")
    size = 2 ** k
    width = 2 * size
    offset = bit_reverse_indices(size)
    lines = ["int i = get_global_id(0);", f"float{width} v = x[i];"]
    exprs: list[str] = []
    for j in range(size):
        re_terms: list[str] = []
        im_terms: list[str] = []
        for n in range(size):
            c, s = _leaf_coeff(j * n, size)
            at = int(offset[n])
            re_n, im_n = f"v.s{2 * at:x}", f"v.s{2 * at + 1:x}"
            re_terms += [_term(c, re_n), _term(-s, im_n)]
            im_terms += [_term(s, re_n), _term(c, im_n)]
        exprs += [_sum_terms(re_terms), _sum_terms(im_terms)]
    ctor = ",\n    ".join(exprs)
    lines.append(f"y[i] = (float{width})(\n    {ctor});")
    dtype = DataType("float", width)
    return Node(
        name=f"dft{size}",
        body="\n".join(lines) + "\n",
        io=(IOPoint("x", dtype, Direction.INPUT),
            IOPoint("y", dtype, Direction.OUTPUT)))


def leaf_program(k: int) -> Program:
    node = leaf_kernel(k)
    return Program(kernels={node.name: node},
                   nodes=(Instance(0, node.name),), arrows=())


@dataclass(frozen=True)
class FftPlan:
    """Transform size plus the leaf order shipped to the platform."""

    n: int
    k: int = MAX_LEAF_ORDER

    def __post_init__(self) -> None:
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError(f"transform size must be a power of two, got {self.n}")
        if not 1 <= self.k <= MAX_LEAF_ORDER:
            raise ValueError(f"leaf order must be 1..{MAX_LEAF_ORDER}")
        if 2 ** self.k > self.n:
            raise ValueError(f"leaf size {2 ** self.k} exceeds transform size {self.n}")

    @property
    def leaf_size(self) -> int:
        return 2 ** self.k

    @property
    def vector_width(self) -> int:
        return 2 * self.leaf_size


def fft(signal: np.ndarray, fft_plan: FftPlan | None = None,
        backend: LocalBackend | RemoteBackend | None = None) -> np.ndarray:
    """Transform a complex64 signal; leaves run on ``backend``."""
    x = np.ascontiguousarray(signal, np.complex64)
    fft_plan = fft_plan or FftPlan(len(x))
    if fft_plan.n != len(x):
        raise ValueError(f"plan is for {fft_plan.n} samples, got {len(x)}")
    backend = backend or LocalBackend()

    permuted = x[bit_reverse_indices(fft_plan.n)]
    stream = StreamFile(DataType("float", fft_plan.vector_width),
                        permuted.view(np.float32))
    out = run(backend, leaf_program(fft_plan.k), {"0.x": stream})["0.y"]
    data = out.values.view(np.complex64).astype(np.complex128)

    m = fft_plan.n.bit_length() - 1
    for stage in range(fft_plan.k + 1, m + 1):
        span = 2 ** stage
        half = span // 2
        block = data.reshape(-1, span)
        twiddle = np.exp(-2j * np.pi * np.arange(half) / span)
        lower = block[:, :half]
        upper = block[:, half:] * twiddle
        block[:, :half], block[:, half:] = lower + upper, lower - upper
    return data.astype(np.complex64)


# ---------------------------------------------------------------------------
# benchmarking

@dataclass(frozen=True)
class BenchRow:
    nbytes: int
    k: int
    seconds: float
    backend: str

    def csv(self) -> str:
        return f"{self.nbytes},{self.k},{self.seconds:.6f},{self.backend}"


def fft_bench(sizes: list[int], ks=(1, 2, 3), *,
              backend: LocalBackend | RemoteBackend | None = None,
              seed: int = 1234, warmup: bool = True,
              repeats: int = 1) -> list[BenchRow]:
    """Time leaf-DFT streams of the given byte sizes through the platform.

    Local backends are timed around the engine's ``run_stream`` only (plans
    are built once per leaf order); remote backends time the full client
    call, network included.  With ``repeats > 1`` each row reports the best
    of that many runs, which damps scheduler noise.
    """
    backend = backend or LocalBackend()
    rng = np.random.default_rng(seed)
    rows: list[BenchRow] = []
    for k in ks:
        program = leaf_program(k)
        width = 2 ** (k + 1)
        label = "local" if isinstance(backend, LocalBackend) else "server"
        plan_ = None
        if isinstance(backend, LocalBackend):
            # Cap the chunk size so even the smallest stream is measured
            # over full chunks; partial chunks would distort the scaling.
            min_items = max(1, min(sizes) // (4 * width))
            plan_ = plan(program, min(backend.chunk_size, min_items))
        if warmup:
            small = rng.standard_normal(width * 16, dtype=np.float32)
            _bench_once(backend, program, plan_, k, small)
        for nbytes in sizes:
            items = max(1, nbytes // (4 * width))
            values = rng.standard_normal(items * width, dtype=np.float32)
            elapsed = min(_bench_once(backend, program, plan_, k, values)
                          for _ in range(max(1, repeats)))
            rows.append(BenchRow(items * width * 4, k, elapsed, label))
    return rows


def _bench_once(backend, program, plan_, k, values: np.ndarray) -> float:
    width = 2 ** (k + 1)
    if plan_ is not None:
        start = time.perf_counter()
        run_stream(plan_, chunk_arrays(plan_, {"0.x": values}),
                   writer=lambda chunk: None,
                   workers=backend.parallelism, pool=backend.pool)
        return time.perf_counter() - start
    stream = StreamFile(DataType("float", width), values)
    start = time.perf_counter()
    run(backend, program, {"0.x": stream})
    return time.perf_counter() - start


def parse_sizes(spec: str) -> list[int]:
    """Parse ``"20K..10M"`` (doubling ladder) or ``"64K,1M,10M"`` lists."""
    def one(text: str) -> int:
        text = text.strip().upper()
        mult = 1
        if text.endswith("K"):
            mult, text = 1024, text[:-1]
        elif text.endswith("M"):
            mult, text = 1024 * 1024, text[:-1]
        return int(float(text) * mult)

    if ".." in spec:
        lo_text, hi_text = spec.split("..", 1)
        lo, hi = one(lo_text), one(hi_text)
        sizes = []
        size = lo
        while size < hi:
            sizes.append(size)
            size *= 2
        sizes.append(hi)
        return sizes
    return [one(part) for part in spec.split(",")]
