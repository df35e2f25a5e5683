"""
(mu/mu_w, lambda)-CMA-ES with the standard default strategy parameters.

Minimisation only; the caller ranks candidates and hands back the fitness.
"""

import math
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InvariantViolation


def default_population(dim: int) -> int:
    return 4 + int(math.floor(3 * math.log(dim)))


class CMAES:
    """Ask/tell evolution strategy over R^n."""

    def __init__(self, mean: Sequence[float], sigma: float,
                 population: Optional[int] = None, seed: int = 0):
        mean = np.asarray(mean, dtype=np.float64)
        if mean.ndim != 1 or mean.size < 1:
            raise ConfigError("CMA-ES needs a non-empty start vector")
        if not (sigma > 0 and math.isfinite(sigma)):
            raise ConfigError(f"initial step size must be positive, got {sigma}")
        n = mean.size
        lam = population or default_population(n)
        if lam < 4:
            raise ConfigError(f"population must be >= 4, got {lam}")

        self.dim = n
        self.population = lam
        self.mean = mean.copy()
        self.sigma = float(sigma)
        self.generation = 0
        self.rng = np.random.default_rng(seed)

        mu = lam // 2
        w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
        self.weights = w / w.sum()
        self.mu = mu
        self.mueff = 1.0 / float(np.sum(self.weights ** 2))

        mueff = self.mueff
        self.cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
        self.cs = (mueff + 2) / (n + mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + mueff)
        self.cmu = min(1 - self.c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
        self.damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + self.cs
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

        self.pc = np.zeros(n)
        self.ps = np.zeros(n)
        self.C = np.eye(n)
        self.B = np.eye(n)
        self.D = np.ones(n)

    def ask(self) -> np.ndarray:
        """Sample lambda candidates (rows)."""
        z = self.rng.standard_normal((self.population, self.dim))
        y = z @ (self.B * self.D).T
        return self.mean + self.sigma * y

    def tell(self, solutions: np.ndarray, fitness: Sequence[float]) -> None:
        """Update the distribution from evaluated candidates (lower fitness is better)."""
        solutions = np.asarray(solutions, dtype=np.float64)
        if solutions.shape != (self.population, self.dim) or len(fitness) != self.population:
            raise ConfigError("tell() needs one fitness per asked candidate")
        order = np.argsort(np.asarray(fitness, dtype=np.float64), kind="stable")
        n = self.dim
        old_mean = self.mean
        y = (solutions[order[: self.mu]] - old_mean) / self.sigma
        y_w = self.weights @ y
        self.mean = old_mean + self.sigma * y_w

        inv_sqrt_c = self.B @ np.diag(1.0 / self.D) @ self.B.T
        self.ps = (1 - self.cs) * self.ps + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * (inv_sqrt_c @ y_w)
        self.generation += 1
        ps_norm = float(np.linalg.norm(self.ps))
        hsig = ps_norm / math.sqrt(1 - (1 - self.cs) ** (2 * self.generation)) / self.chi_n < 1.4 + 2 / (n + 1)
        self.pc = (1 - self.cc) * self.pc + hsig * math.sqrt(self.cc * (2 - self.cc) * self.mueff) * y_w

        rank_mu = (self.weights[:, None] * y).T @ y
        self.C = (
            (1 - self.c1 - self.cmu + (1 - hsig) * self.c1 * self.cc * (2 - self.cc)) * self.C
            + self.c1 * np.outer(self.pc, self.pc)
            + self.cmu * rank_mu
        )
        self.sigma *= math.exp((self.cs / self.damps) * (ps_norm / self.chi_n - 1))
        self._decompose()

    def _decompose(self) -> None:
        self.C = (self.C + self.C.T) / 2
        try:
            np.linalg.cholesky(self.C)
        except np.linalg.LinAlgError:
            raise InvariantViolation(
                f"covariance lost positive definiteness at generation {self.generation}"
            ) from None
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise InvariantViolation(f"step size became {self.sigma} at generation {self.generation}")
        eigvals, self.B = np.linalg.eigh(self.C)
        self.D = np.sqrt(np.maximum(eigvals, 1e-300))
