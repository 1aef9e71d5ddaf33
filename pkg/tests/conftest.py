import io
import math
from contextlib import redirect_stderr, redirect_stdout

import numpy as np
import pytest

from probprune.cli import main
from probprune.network import ConvNetModel


def tiny_conv_net(rng: np.random.Generator, dtype=np.float64) -> ConvNetModel:
    """2 conv + 1 fc toy network on 3x8x8 inputs, 360 parameters."""
    spec = [
        ("conv", {"out": 4, "kernel": 3, "pad": 1}),
        ("relu", {}),
        ("pool", {"size": 2}),
        ("conv", {"out": 5, "kernel": 3, "pad": 1}),
        ("relu", {}),
        ("pool", {"size": 2}),
        ("fc", {"out": 3}),
    ]
    return ConvNetModel.build(spec, (3, 8, 8), rng, dtype)


def random_batch(rng: np.random.Generator, n: int, dims=(3, 8, 8), classes: int = 3):
    x = rng.standard_normal((n, *dims))
    y = rng.integers(0, classes, size=n)
    return x, y


def run_cli(*argv):
    """Invoke the command-line entry point in-process, capturing its output."""
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


def cli_pairs(stdout: str) -> dict[str, str]:
    pairs = {}
    for line in stdout.splitlines():
        key, sep, value = line.partition("=")
        if sep:
            pairs[key] = value
    return pairs


def pca_errors_eigh_oracle(matrix, fractions):
    """Eigendecomposition-of-covariance oracle for the sensitivity curve."""
    w = np.asarray(matrix, dtype=np.float64)
    centered = w - w.mean(axis=0)
    cov = centered @ centered.T
    eigvals = np.linalg.eigvalsh(cov)[::-1]
    eigvals = np.clip(eigvals, 0.0, None)
    # numerical-rank rule applied in the eigenvalue domain: the Gram matrix
    # cannot resolve singular values below sqrt(eps), so the cutoff lives here
    tol = eigvals[0] * max(centered.shape) * np.finfo(np.float64).eps
    eigvals = np.where(eigvals > tol, eigvals, 0.0)
    rank = int(np.count_nonzero(eigvals))
    total = eigvals.sum()
    out = []
    for f in fractions:
        kept = math.ceil(f * rank)
        out.append(math.sqrt(eigvals[kept:].sum() / total))
    return np.array(out)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
