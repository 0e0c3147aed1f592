"""Timing harness for the greedy solvers.

Inputs are standard-normal "gradient" matrices drawn before the clock
starts. Each repetition times kernel construction and selection
separately; one warm-up repetition is run first and discarded.
"""
import csv
import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._random import make_rng
from .submod import GreedyConfig, batched_greedy, build_kernel

CSV_COLUMNS = ["case", "N", "k", "B", "strategy", "mean_s", "std_s", "objective", "checksum"]


@dataclass
class BenchCase:
    N: int
    k: int
    B: int = 1
    strategy: str = "stochastic"
    epsilon: float = 0.01
    dim: int = 100
    repetitions: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    @property
    def name(self):
        return f"{self.strategy}-k{self.k}-N{self.N}-B{self.B}"


@dataclass
class BenchReport:
    case: BenchCase
    kernel_times: list = field(default_factory=list)
    select_times: list = field(default_factory=list)
    objective: float = float("nan")
    checksum: str = ""
    error: str = ""

    @property
    def total_times(self):
        return [a + b for a, b in zip(self.kernel_times, self.select_times)]

    @property
    def mean_s(self):
        return float(np.mean(self.total_times)) if self.kernel_times else float("nan")

    @property
    def std_s(self):
        return float(np.std(self.total_times)) if self.kernel_times else float("nan")

    @property
    def kernel_s(self):
        return float(np.mean(self.kernel_times)) if self.kernel_times else float("nan")

    @property
    def select_s(self):
        return float(np.mean(self.select_times)) if self.select_times else float("nan")

    def row(self):
        c = self.case
        return [c.name, c.N, c.k, c.B, c.strategy, f"{self.mean_s:.6f}", f"{self.std_s:.6f}",
                f"{self.objective:.6f}", self.checksum]


def _checksum(results):
    h = hashlib.sha256()
    for r in results:
        h.update(np.asarray(r.selected, dtype="<i8").tobytes())
    return h.hexdigest()[:16]


def make_inputs(case):
    return make_rng(case.seed, "bench", case.N, case.dim, case.B).standard_normal((case.B, case.N, case.dim))


def _run_once(grads, case, threads):
    t0 = time.perf_counter()
    kernels = [build_kernel(g, batch_id=b, threads=threads) for b, g in enumerate(grads)]
    t1 = time.perf_counter()
    results = batched_greedy(kernels, GreedyConfig(case.k, case.strategy, case.epsilon, case.seed), threads)
    t2 = time.perf_counter()
    return t1 - t0, t2 - t1, results


def bench_greedy(case, threads=None, warmup=True):
    """Time ``case.repetitions`` solves; failures are reported, not raised."""
    report = BenchReport(case)
    try:
        grads = make_inputs(case)
        if warmup:
            _run_once(grads, case, threads)
        sums = set()
        for _ in range(case.repetitions):
            tk, ts, results = _run_once(grads, case, threads)
            report.kernel_times.append(tk)
            report.select_times.append(ts)
            sums.add(_checksum(results))
        report.objective = float(np.mean([r.value for r in results]))
        report.checksum = sums.pop() if len(sums) == 1 else "MISMATCH"
    except MemoryError:
        report.error = f"allocation failed for B={case.B} N={case.N}"
    return report


def scaling_report(strategy, Ns, k, epsilon=0.01, dim=100, repetitions=5, seed=0, threads=None):
    """Kernel and selection time per ``N`` (ascending) at a fixed budget."""
    Ns = list(Ns)
    if Ns != sorted(Ns):
        raise ValueError("N grid must be ascending")
    rows = []
    for n in Ns:
        rep = bench_greedy(BenchCase(n, min(k, n), 1, strategy, epsilon, dim, repetitions, seed), threads)
        rows.append({"N": n, "k": min(k, n), "kernel_s": rep.kernel_s, "select_s": rep.select_s,
                     "objective": rep.objective, "report": rep})
    return rows


def write_csv(reports, path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rep in reports:
            writer.writerow(rep.row())


def format_table(reports):
    lines = [f"{'case':<28}{'mean_s':>11}{'std_s':>11}{'kernel_s':>11}{'select_s':>11}{'objective':>14}  checksum"]
    for rep in reports:
        if rep.error:
            lines.append(f"{rep.case.name:<28}  {rep.error}")
            continue
        lines.append(f"{rep.case.name:<28}{rep.mean_s:>11.4f}{rep.std_s:>11.4f}{rep.kernel_s:>11.4f}"
                     f"{rep.select_s:>11.4f}{rep.objective:>14.4f}  {rep.checksum}")
    return "\n".join(lines)
