"""Token-bucket rate limiting and jittered exponential backoff, shared by
the page fetcher and the caption client."""

from __future__ import annotations

import random
import threading
import time
from typing import Callable


class TokenBucket:
    """Blocking token bucket: at most `capacity` tokens accumulate, refilled
    at `rate` per second. With the default capacity of one token, acquire
    spacing never lets the observed rate exceed `rate` by more than one
    token."""

    def __init__(
        self,
        rate: float,
        capacity: float = 1.0,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if rate <= 0:
            raise ValueError(f"rate must be positive, got {rate}")
        self.rate = rate
        self.capacity = capacity
        self._clock = clock
        self._sleep = sleep
        self._tokens = capacity
        self._updated = clock()
        self._lock = threading.Lock()

    def _refill(self) -> None:
        now = self._clock()
        self._tokens = min(self.capacity, self._tokens + (now - self._updated) * self.rate)
        self._updated = now

    def acquire(self, tokens: float = 1.0) -> None:
        while True:
            with self._lock:
                self._refill()
                if self._tokens >= tokens:
                    self._tokens -= tokens
                    return
                wait = (tokens - self._tokens) / self.rate
            self._sleep(wait)


def backoff_delay(
    attempt: int,
    base: float = 0.5,
    factor: float = 2.0,
    cap: float = 8.0,
    rng: random.Random | None = None,
) -> float:
    """Delay before retry number `attempt` (1-based): exponential with a
    cap plus up to 25% additive jitter."""
    delay = min(cap, base * factor ** (attempt - 1))
    jitter = (rng.random() if rng is not None else random.random()) * 0.25 * delay
    return delay + jitter
