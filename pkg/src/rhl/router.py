"""Request routing across service endpoints.

Three policies. Random draws endpoints iid uniform from a seeded
generator. RoundRobin cycles from the first registered endpoint.
TokenBalanced is greedy longest-processing-time: requests sorted by
token count descending (ties by id ascending) each go to the endpoint
with the least assigned token total (ties: fewer requests, then
registration order).

The Router object is stateful so requests can also be routed one at a
time as they arrive; totals persist across calls and endpoints are
identified by key, which keeps decisions stable when the live endpoint
set changes between calls.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Hashable, Sequence


class NoEndpoints(RuntimeError):
    pass


@dataclass(frozen=True)
class RouteRequest:
    id: str
    tokens: int


@dataclass(frozen=True)
class Assignment:
    """Endpoint index per request, parallel to the input order."""

    requests: tuple[RouteRequest, ...]
    n_endpoints: int
    by_request: tuple[int, ...]

    def per_endpoint_tokens(self) -> list[int]:
        out = [0] * self.n_endpoints
        for req, ep in zip(self.requests, self.by_request):
            out[ep] += req.tokens
        return out

    def per_endpoint_counts(self) -> list[int]:
        out = [0] * self.n_endpoints
        for ep in self.by_request:
            out[ep] += 1
        return out


@dataclass(frozen=True)
class ImbalanceReport:
    count_cv: float
    token_cv: float
    max_over_mean_tokens: float


def _as_requests(requests) -> tuple[RouteRequest, ...]:
    out = []
    for r in requests:
        if isinstance(r, RouteRequest):
            out.append(r)
        else:
            rid, tokens = r
            out.append(RouteRequest(str(rid), int(tokens)))
    return tuple(out)


class Router:
    def __init__(self, mode: str, rng: random.Random | None = None):
        if mode not in ("Random", "RoundRobin", "TokenBalanced"):
            raise ValueError(f"unknown routing mode {mode!r}")
        self.mode = mode
        self._rng = rng if rng is not None else random.Random(0)
        self._rr_next = 0
        self._tokens: dict[Hashable, int] = {}
        self._counts: dict[Hashable, int] = {}

    def route_one(self, tokens: int, keys: Sequence[Hashable]) -> Hashable:
        if not keys:
            raise NoEndpoints("no endpoints registered")
        if self.mode == "Random":
            key = keys[self._rng.randrange(len(keys))]
        elif self.mode == "RoundRobin":
            key = keys[self._rr_next % len(keys)]
            self._rr_next += 1
        else:  # TokenBalanced: least tokens, then least count, then order
            key = min(
                range(len(keys)),
                key=lambda i: (
                    self._tokens.get(keys[i], 0),
                    self._counts.get(keys[i], 0),
                    i,
                ),
            )
            key = keys[key]
        self._tokens[key] = self._tokens.get(key, 0) + tokens
        self._counts[key] = self._counts.get(key, 0) + 1
        return key

    def route_batch(self, requests, keys: Sequence[Hashable]) -> tuple[Hashable, ...]:
        requests = _as_requests(requests)
        if self.mode == "TokenBalanced":
            order = sorted(
                range(len(requests)),
                key=lambda i: (-requests[i].tokens, requests[i].id),
            )
        else:
            order = list(range(len(requests)))
        out: list[Hashable] = [None] * len(requests)
        for i in order:
            out[i] = self.route_one(requests[i].tokens, keys)
        return tuple(out)


def _route(mode: str, requests, n_endpoints: int, rng: random.Random | None) -> Assignment:
    requests = _as_requests(requests)
    if n_endpoints < 1:
        raise NoEndpoints("no endpoints registered")
    router = Router(mode, rng)
    by_request = router.route_batch(requests, tuple(range(n_endpoints)))
    return Assignment(requests, n_endpoints, tuple(int(i) for i in by_request))


def route_random(requests, n_endpoints: int, seed: int = 0) -> Assignment:
    return _route("Random", requests, n_endpoints, random.Random(seed))


def route_round_robin(requests, n_endpoints: int) -> Assignment:
    return _route("RoundRobin", requests, n_endpoints, None)


def route_token_balanced(requests, n_endpoints: int) -> Assignment:
    return _route("TokenBalanced", requests, n_endpoints, None)


def imbalance(assignment: Assignment) -> ImbalanceReport:
    """Distribution quality of an assignment; all zeros when empty."""
    counts = assignment.per_endpoint_counts()
    tokens = assignment.per_endpoint_tokens()
    return ImbalanceReport(
        count_cv=_cv(counts),
        token_cv=_cv(tokens),
        max_over_mean_tokens=_max_over_mean(tokens),
    )


def _cv(xs: list[int]) -> float:
    if not xs:
        return 0.0
    mean = sum(xs) / len(xs)
    if mean == 0:
        return 0.0
    var = sum((x - mean) ** 2 for x in xs) / len(xs)
    return var**0.5 / mean


def _max_over_mean(xs: list[int]) -> float:
    if not xs:
        return 0.0
    mean = sum(xs) / len(xs)
    if mean == 0:
        return 0.0
    return max(xs) / mean
