"""Shared test helpers."""

import numpy as np

from tost.coding_rate import ProjectionBank
from tost.linalg import haar_orthonormal, softmax

ACCEPTANCE_LINES: list[str] = []


def make_bank(rng, K, d, p):
    return ProjectionBank(np.stack([haar_orthonormal(rng, d, p) for _ in range(K)]))


def make_membership(rng, n, K):
    return softmax(rng.normal(scale=2.0, size=(n, K)), axis=1)


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line
