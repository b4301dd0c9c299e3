"""Chronométrage de scan_sequential et scan_chunked, ajustement linéaire temps ~ L"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from voxmamba.autodiff import tensor as T
from voxmamba.autodiff.tensor import Tensor
from voxmamba.errors import ConfigurationError
from voxmamba.ssm.discretize import discretize_zoh
from voxmamba.ssm.scan import DEFAULT_CHUNK, scan_chunked, scan_sequential

logger = logging.getLogger(__name__)


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    slope: float = 0.0
    intercept: float = 0.0
    r_squared: float = 0.0
    chunked_slope: float = 0.0
    chunked_r_squared: float = 0.0
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "sequential_fit": {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared},
            "chunked_fit": {"slope": self.chunked_slope, "r_squared": self.chunked_r_squared},
            "settings": self.settings,
        }


def _median_time(fn, repeats: int) -> float:
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        timings.append(time.perf_counter() - start)
    return float(np.median(timings))


def _scan_inputs(rng, length: int, channels: int, n_state: int):
    x = Tensor(rng.standard_normal(size=(1, length, channels)))
    a = Tensor(-rng.uniform(0.5, 2.0, size=(channels, n_state)))
    b = Tensor(rng.standard_normal(size=(1, length, n_state)))
    delta = Tensor(rng.uniform(1e-3, 1e-1, size=(1, length, channels)))
    c = Tensor(rng.standard_normal(size=(1, length, n_state)))
    with T.no_grad():
        params = discretize_zoh(a, b, delta)
    return x, params, c


def benchmark_scans(lengths, repeats: int = 10, channels: int = 4, n_state: int = 4,
                    chunk: int = DEFAULT_CHUNK, workers: int = 1, seed: int = 0) -> BenchReport:
    """Médianes par longueur, écart max à l'oracle séquentiel et régression linéaire.

    Les deux opérations sont chronométrées telles quelles (produit B̄·x, états et
    projection de sortie C·h) sur des paramètres déjà discrétisés.
    """
    lengths = sorted(int(n) for n in lengths)
    if len(lengths) < 2:
        raise ConfigurationError("au moins deux longueurs sont nécessaires pour l'ajustement")
    if repeats < 1 or chunk < 1 or workers < 1:
        raise ConfigurationError(f"repeats, chunk et workers ≥ 1 (reçu {repeats}, {chunk}, {workers})")
    rng = np.random.default_rng(seed)
    rows = []
    for length in lengths:
        x, params, c = _scan_inputs(rng, length, channels, n_state)
        with T.no_grad():
            sequential = scan_sequential(x, params, c).data
            chunked = scan_chunked(x, params, c, chunk=chunk, workers=workers).data
            rows.append({
                "length": length,
                "sequential_s": _median_time(lambda: scan_sequential(x, params, c), repeats),
                "chunked_s": _median_time(lambda: scan_chunked(x, params, c, chunk=chunk, workers=workers), repeats),
                "max_abs_diff": float(np.max(np.abs(sequential - chunked))),
            })
        logger.debug("L=%d: %s", length, rows[-1])

    sizes = np.array([r["length"] for r in rows], dtype=np.float64)
    seq_fit = stats.linregress(sizes, [r["sequential_s"] for r in rows])
    chunk_fit = stats.linregress(sizes, [r["chunked_s"] for r in rows])
    return BenchReport(
        rows=rows,
        slope=float(seq_fit.slope),
        intercept=float(seq_fit.intercept),
        r_squared=float(seq_fit.rvalue ** 2),
        chunked_slope=float(chunk_fit.slope),
        chunked_r_squared=float(chunk_fit.rvalue ** 2),
        settings={"repeats": repeats, "channels": channels, "n_state": n_state,
                  "chunk": chunk, "workers": workers, "seed": seed},
    )
