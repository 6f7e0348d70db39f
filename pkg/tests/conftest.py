import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def naive_matmul(a, b):
    """Triple loop, ascending k, one rounding per multiply and per add."""
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.result_type(a, b))
    for i in range(m):
        for j in range(n):
            s = out.dtype.type(0)
            for kk in range(k):
                s = out.dtype.type(s + a[i, kk] * b[kk, j])
            out[i, j] = s
    return out


def naive_conv(x, kernels, bias):
    """Direct six-loop valid convolution on a single [h, w, cin] image."""
    h, w, cin = x.shape
    cout = kernels.shape[3]
    out = np.zeros((h - 2, w - 2, cout))
    for y in range(h - 2):
        for xx in range(w - 2):
            for o in range(cout):
                s = bias[o]
                for dy in range(3):
                    for dx in range(3):
                        for c in range(cin):
                            s += x[y + dy, xx + dx, c] * kernels[dy, dx, c, o]
                out[y, xx, o] = s
    return out


def ulp_distance(a, b):
    """Units in the last place between float32 arrays (monotone integer mapping)."""
    def ordered(x):
        i = np.asarray(x, dtype=np.float32).view(np.int32).astype(np.int64)
        return np.where(i < 0, -(i & 0x7FFFFFFF), i)

    return np.abs(ordered(a) - ordered(b))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
