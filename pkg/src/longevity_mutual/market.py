from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class MarketParams:
    """Black-Scholes market: risk-free rate, risky drift and volatility (per year)."""

    r: float = 0.027
    mu: float = 0.062
    sigma: float = 0.15

    def __post_init__(self) -> None:
        if not self.sigma > 0.0:
            raise ValueError("sigma must be > 0")

    def merton_fraction(self, alpha: float) -> float:
        """Optimal risky wealth fraction (mu - r) / ((1 - alpha) sigma^2)."""
        return (self.mu - self.r) / ((1.0 - alpha) * self.sigma**2)

    def growth_term(self, alpha: float) -> float:
        """alpha r + alpha (mu - r)^2 / (2 (1 - alpha) sigma^2), the market part of the HJB source."""
        return alpha * self.r + alpha * (self.mu - self.r) ** 2 / (2.0 * (1.0 - alpha) * self.sigma**2)


DEFAULT_MARKET = MarketParams(0.027, 0.062, 0.15)
ZERO_MARKET = MarketParams(0.0, 0.0, 0.15)
