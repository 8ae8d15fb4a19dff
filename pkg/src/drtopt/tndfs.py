"""Transit route design and frequency setting for one deterministic demand.

A problem instance fixes demand nodes, bus stops, ride times, and fleet
parameters.  Candidate routes are all closed loops over up to L distinct
stops, identified up to rotation.  Solving picks at most (or exactly) nu
routes with one bus count each, maximizing total passenger time savings:
per-passenger ride savings minus passenger-weighted average waiting, with
hourly route capacity limiting assigned flow and a walking alternative
absorbing the rest.

The discrete part (route set + bus counts) is enumerated exhaustively; for a
fixed allocation the remaining flow assignment is a small transportation
problem.  Assigning every pair to its best positive-utility route is optimal
whenever no capacity binds; otherwise the assignment LP is solved exactly.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .data import Location, ODPair

log = logging.getLogger(__name__)

WALK_ROUTE = -1  # route id of the always-available walking alternative
_TIE_TOL = 1e-12


def walk_time(a: Location, b: Location, speed: float) -> float:
    """Manhattan walking time in minutes between two located nodes."""
    if speed <= 0:
        raise ValueError("walk speed must be positive")
    (xa, ya), (xb, yb) = a.coord, b.coord
    return (abs(xa - xb) + abs(ya - yb)) / speed


@dataclass(frozen=True)
class CandidateRoute:
    """A closed loop over distinct stops, canonical under rotation."""

    id: int
    stops: tuple[int, ...]
    cycle_time: float  # minutes around the loop

    def itinerary(self) -> str:
        return "-".join(str(s) for s in self.stops + (self.stops[0],))


def canonical_rotation(stops: tuple[int, ...]) -> tuple[int, ...]:
    rotations = [stops[i:] + stops[:i] for i in range(len(stops))]
    return min(rotations)


def route_cycle_time(stops: tuple[int, ...], ride_time: np.ndarray, dwell: float = 0.0) -> float:
    if len(stops) == 1:
        return float(ride_time[stops[0], stops[0]]) + dwell
    legs = sum(ride_time[a, b] for a, b in zip(stops, stops[1:] + (stops[0],)))
    return float(legs) + dwell * len(stops)


def enumerate_routes(n_stops: int, max_stops: int, ride_time: np.ndarray, dwell: float = 0.0) -> list[CandidateRoute]:
    """All loops over 1..max_stops distinct stops, deduplicated by rotation."""
    if max_stops < 1:
        raise ValueError("max_stops must be >= 1")
    seen = set()
    loops = []
    for m in range(1, min(max_stops, n_stops) + 1):
        for perm in itertools.permutations(range(n_stops), m):
            canon = canonical_rotation(perm)
            if canon not in seen:
                seen.add(canon)
                loops.append(canon)
    loops.sort(key=lambda s: (len(s), s))
    return [
        CandidateRoute(i, stops, route_cycle_time(stops, ride_time, dwell))
        for i, stops in enumerate(loops)
    ]


@dataclass
class NetworkInstance:
    demand_nodes: list[Location]
    bus_stops: list[Location]
    walk_speed: float  # meters per minute
    ride_time: np.ndarray  # minutes, stop x stop; diagonal = single-stop turnaround
    fleet_size: int  # K
    capacity: float  # passengers per vehicle trip
    max_routes: int  # nu
    max_route_stops: int  # L
    dwell_time: float = 0.0
    half_headway: bool = False
    exact_route_count: bool = False
    _candidates: list[CandidateRoute] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.ride_time = np.asarray(self.ride_time, dtype=np.float64)
        if self.fleet_size < 1:
            raise ValueError("fleet size must be >= 1")
        if self.capacity <= 0:
            raise ValueError("bus capacity must be positive")
        if not 1 <= self.max_routes <= self.fleet_size:
            raise ValueError("max_routes must satisfy 1 <= nu <= K")
        if self.walk_speed <= 0:
            raise ValueError("walk speed must be positive")
        if self.ride_time.shape != (len(self.bus_stops), len(self.bus_stops)):
            raise ValueError("ride_time must be square over bus stops")
        if np.any(self.ride_time <= 0):
            raise ValueError("ride times must be positive")

    @property
    def candidate_routes(self) -> list[CandidateRoute]:
        if self._candidates is None:
            self._candidates = enumerate_routes(
                len(self.bus_stops), self.max_route_stops, self.ride_time, self.dwell_time
            )
        return self._candidates

    def od_pairs(self) -> list[ODPair]:
        ids = [n.id for n in self.demand_nodes]
        return [ODPair(o, d) for o in ids for d in ids if o != d]

    def demand_node(self, node_id: int) -> Location:
        for n in self.demand_nodes:
            if n.id == node_id:
                return n
        raise KeyError(f"unknown demand node {node_id}")


@dataclass
class DemandVector:
    """Non-negative demand per OD pair; absent pairs mean zero."""

    rates: dict[ODPair, float]

    def __post_init__(self):
        for pair, v in self.rates.items():
            if v < 0:
                raise ValueError(f"negative demand {v} for {pair}")

    def get(self, pair: ODPair) -> float:
        return self.rates.get(pair, 0.0)


# ---------------------------------------------------------------------------
# Edge utilities
# ---------------------------------------------------------------------------


def stage1_utility(pair: ODPair, route: CandidateRoute, instance: NetworkInstance) -> float:
    """Per-passenger time savings of riding `route` versus walking directly.

    The boarding/alighting stops are chosen to minimize ride plus access/egress
    walking; negative values are kept (those passengers will prefer walking).
    """
    origin = instance.demand_node(pair.origin)
    destination = instance.demand_node(pair.destination)
    w_direct = walk_time(origin, destination, instance.walk_speed)
    stops = route.stops
    m = len(stops)
    best = np.inf
    if m == 1:
        s = instance.bus_stops[stops[0]]
        best = walk_time(origin, s, instance.walk_speed) + walk_time(s, destination, instance.walk_speed)
    else:
        leg = [
            float(instance.ride_time[a, b]) + instance.dwell_time
            for a, b in zip(stops, stops[1:] + (stops[0],))
        ]
        access = [walk_time(origin, instance.bus_stops[s], instance.walk_speed) for s in stops]
        egress = [walk_time(instance.bus_stops[s], destination, instance.walk_speed) for s in stops]
        for b in range(m):
            ride = 0.0
            pos = b
            for _ in range(m - 1):
                ride += leg[pos]
                pos = (pos + 1) % m
                cost = ride + access[b] + egress[pos]
                if cost < best:
                    best = cost
    return w_direct - best


def stage2_utility(route: CandidateRoute, k: int, half_headway: bool = False) -> float:
    """Negated average waiting time with k buses on the route."""
    if k < 1:
        raise ValueError("bus count must be >= 1")
    wait = route.cycle_time / k
    return -(wait / 2.0) if half_headway else -wait


def route_capacity(route: CandidateRoute, k: int, capacity: float) -> float:
    """Hourly passenger capacity: 60k/tau cycles per hour times bus capacity."""
    if k < 1:
        raise ValueError("bus count must be >= 1")
    return 60.0 * k / route.cycle_time * capacity


# ---------------------------------------------------------------------------
# Solutions
# ---------------------------------------------------------------------------


@dataclass
class RouteDesign:
    """One solved design: allocated routes/buses, flow assignment, objective."""

    allocation: tuple[tuple[CandidateRoute, int], ...]  # sorted by canonical stops
    flows_stage1: dict[tuple[ODPair, int], float]  # (pair, route id | WALK_ROUTE) -> flow
    flows_stage2: dict[tuple[int, int], float]  # (route id, k) -> flow
    objective: float

    def key(self) -> tuple[tuple[tuple[int, ...], int], ...]:
        """Canonical identity: the allocation only (flows vary per sample)."""
        return tuple(sorted((r.stops, k) for r, k in self.allocation))

    def indicators(self) -> dict[tuple[int, int], int]:
        return {(rid, k): int(flow > 0) for (rid, k), flow in self.flows_stage2.items()}

    def itinerary(self) -> str:
        if not self.allocation:
            return "(walking only)"
        return ", ".join(r.itinerary() for r, _ in self.allocation)

    def buses_used(self) -> int:
        return sum(k for _, k in self.allocation)

    def to_json_dict(self) -> dict:
        return {
            "allocation": [
                {"stops": list(r.stops), "buses": k, "cycle_time": r.cycle_time}
                for r, k in self.allocation
            ],
            "itinerary": self.itinerary(),
            "objective": self.objective,
            "flows": [
                {
                    "origin": pair.origin,
                    "destination": pair.destination,
                    "route": "walk" if rid == WALK_ROUTE else rid,
                    "flow": flow,
                }
                for (pair, rid), flow in sorted(
                    self.flows_stage1.items(), key=lambda kv: (kv[0][0], kv[0][1])
                )
                if flow > 0
            ],
        }


def _assignment_key(stops_k: list[tuple[tuple[int, ...], int]]):
    return tuple(sorted(stops_k))


# ---------------------------------------------------------------------------
# Fixed-allocation flow assignment (continuous transportation problem)
# ---------------------------------------------------------------------------


def assign_flows(weights: np.ndarray, demands: np.ndarray, caps: np.ndarray) -> tuple[np.ndarray, float]:
    """Maximize sum(w*x) with per-pair supplies and per-route capacities.

    weights: (m, r) net per-passenger utilities; demands: (m,); caps: (r,).
    Unassigned demand walks at zero utility.  Returns (x, objective) with x of
    shape (m, r).  Fast path assigns each pair fully to its best positive
    utility route; when that violates a capacity the LP is solved exactly.
    """
    m, r = weights.shape
    x = np.zeros((m, r))
    if m == 0 or r == 0:
        return x, 0.0
    best = np.argmax(weights, axis=1)
    best_w = weights[np.arange(m), best]
    riders = best_w > 0
    x[np.arange(m)[riders], best[riders]] = demands[riders]
    inflow = x.sum(axis=0)
    if np.all(inflow <= caps):
        return x, float(np.sum(demands[riders] * best_w[riders]))

    if r == 1:
        # single shared capacity: fill in decreasing utility order (exact)
        x = np.zeros((m, r))
        order = np.argsort(-weights[:, 0], kind="stable")
        remaining = float(caps[0])
        total = 0.0
        for i in order:
            w = weights[i, 0]
            if w <= 0 or remaining <= 0:
                break
            take = min(demands[i], remaining)
            x[i, 0] = take
            remaining -= take
            total += w * take
        return x, total

    c = -weights.ravel()
    A_ub = sparse.vstack(
        [
            sparse.kron(sparse.identity(m, format="csr"), np.ones((1, r))),
            sparse.kron(np.ones((1, m)), sparse.identity(r, format="csr")),
        ],
        format="csc",
    )
    b_ub = np.concatenate([demands, caps])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=(0, None), method="highs")
    if res.status != 0 or res.x is None:
        raise RuntimeError(f"flow assignment LP failed: {res.message}")
    x = res.x.reshape(m, r)
    # zero out numerically irrelevant flow on non-positive-utility arcs
    x[weights <= 0] = 0.0
    return x, float(np.sum(weights * x))


def _unconstrained_bound(weights: np.ndarray, demands: np.ndarray) -> float:
    return float(np.sum(demands * np.maximum(weights.max(axis=1), 0.0)))


@dataclass
class _Prepared:
    """Per-instance precomputation shared across demand vectors."""

    instance: NetworkInstance
    pairs: list[ODPair]
    beta1: np.ndarray  # (n_pairs, C)
    beta2: np.ndarray  # (C, K) stage-2 utilities, k = col + 1
    caps: np.ndarray  # (C, K)


def prepare_instance(instance: NetworkInstance) -> _Prepared:
    routes = instance.candidate_routes
    if not routes:
        raise ValueError("empty candidate route set")
    pairs = instance.od_pairs()
    beta1 = np.array([[stage1_utility(p, r, instance) for r in routes] for p in pairs])
    ks = np.arange(1, instance.fleet_size + 1)
    taus = np.array([r.cycle_time for r in routes])
    beta2 = -taus[:, None] / ks[None, :]
    if instance.half_headway:
        beta2 = beta2 / 2.0
    caps = 60.0 * ks[None, :] / taus[:, None] * instance.capacity
    return _Prepared(instance, pairs, beta1, beta2, caps)


def _allocation_sizes(instance: NetworkInstance) -> range:
    if instance.exact_route_count:
        return range(instance.max_routes, instance.max_routes + 1)
    return range(0, instance.max_routes + 1)


def _bus_splits(r: int, fleet: int) -> list[tuple[int, ...]]:
    """All per-route bus counts (each >= 1) summing to at most the fleet size."""
    if r == 0:
        return [()]
    out = []
    for combo in itertools.product(range(1, fleet + 1), repeat=r):
        if sum(combo) <= fleet:
            out.append(combo)
    return out


def solve_instance(instance: NetworkInstance, demand: DemandVector, prepared: _Prepared | None = None) -> RouteDesign:
    """Exact optimum over all feasible allocations and flow assignments.

    Ties in objective (within 1e-12) break toward the lexicographically
    smallest allocation key, so zero-flow routes are never reported unless
    the exact-route-count mode forces them.
    """
    prep = prepared if prepared is not None else prepare_instance(instance)
    routes = instance.candidate_routes
    C = len(routes)
    K = instance.fleet_size

    all_pairs = prep.pairs
    lam_all = np.array([demand.get(p) for p in all_pairs])
    active = lam_all > 0
    lam = lam_all[active]
    beta1 = prep.beta1[active]

    best_obj = -np.inf
    best_key = None
    best_alloc: tuple[tuple[int, int], ...] | None = None  # ((route_id, k), ...)

    def consider(obj: float, alloc: tuple[tuple[int, int], ...]):
        nonlocal best_obj, best_key, best_alloc
        key = _assignment_key([(routes[rid].stops, k) for rid, k in alloc])
        if obj > best_obj + _TIE_TOL or (abs(obj - best_obj) <= _TIE_TOL and (best_key is None or key < best_key)):
            best_obj, best_key, best_alloc = obj, key, alloc

    sizes = _allocation_sizes(instance)

    if len(lam) == 0:
        # every allocation carries zero flow: the canonical tie-break picks
        # the smallest key, which is all-walking or (in exact mode) the
        # stops-minimal routes with one bus each
        if 0 in sizes:
            return _design_for_allocation(prep, all_pairs, lam_all, (), routes)
        size = instance.max_routes
        if size > C:
            raise ValueError("no feasible allocation (check max_routes vs candidate count)")
        by_stops = sorted(range(C), key=lambda cid: routes[cid].stops)
        alloc = tuple((cid, 1) for cid in sorted(by_stops[:size]))
        return _design_for_allocation(prep, all_pairs, lam_all, alloc, routes)

    if 1 in sizes and C > 0:
        # (n_active, C, K) net utilities, vectorized over single-route allocations
        W = beta1[:, :, None] + prep.beta2[None, :, :]
        pos = np.maximum(W, 0.0)
        obj_uncap = np.einsum("i,ick->ck", lam, pos)
        inflow = np.einsum("i,ick->ck", lam, (W > 0).astype(np.float64))
        feasible = inflow <= prep.caps
        for cid in range(C):
            for kk in range(1, K + 1):
                alloc = ((cid, kk),)
                if feasible[cid, kk - 1]:
                    consider(float(obj_uncap[cid, kk - 1]), alloc)
                else:
                    if obj_uncap[cid, kk - 1] < best_obj - _TIE_TOL:
                        continue  # capped objective is below this bound already
                    w = (beta1[:, cid] + prep.beta2[cid, kk - 1])[:, None]
                    _, obj = assign_flows(w, lam, prep.caps[cid : cid + 1, kk - 1])
                    consider(float(obj), alloc)

    if 0 in sizes:
        consider(0.0, ())

    for size in sizes:
        if size < 2 or size > C:
            continue
        splits = _bus_splits(size, K)
        if not splits:
            continue
        if size == 2:
            _scan_route_pairs(prep, lam, beta1, splits, consider, lambda: best_obj)
            continue
        for combo in itertools.combinations(range(C), size):
            cols = beta1[:, combo]
            for split in splits:
                alloc = tuple(zip(combo, split))
                w = cols + np.array([prep.beta2[cid, k - 1] for cid, k in alloc])[None, :]
                ub = _unconstrained_bound(w, lam)
                if ub < best_obj - _TIE_TOL:
                    continue
                caps = np.array([prep.caps[cid, k - 1] for cid, k in alloc])
                take = np.argmax(w, axis=1)
                take_w = w[np.arange(len(lam)), take]
                inflow = np.zeros(size)
                np.add.at(inflow, take[take_w > 0], lam[take_w > 0])
                if np.all(inflow <= caps):
                    consider(ub, alloc)
                else:
                    _, obj = assign_flows(w, lam, caps)
                    consider(float(obj), alloc)

    if best_alloc is None:
        raise ValueError("no feasible allocation (check max_routes vs candidate count)")

    return _design_for_allocation(prep, all_pairs, lam_all, best_alloc, routes)


_PAIR_CHUNK = 50_000


def _scan_route_pairs(prep: _Prepared, lam, beta1, splits, consider, current_best):
    """Vectorized sweep of all two-route allocations.

    Per chunk of route pairs and bus split, the best-route assignment and
    capacity check run as array ops.  Only allocations that can tie or beat
    the incumbent drop to scalar handling: for capacity-feasible ones that is
    the chunk maximum and its ties; capacity-bound ones are solved exactly in
    decreasing upper-bound order so the incumbent prunes fast.
    """
    C = beta1.shape[1]
    combos = np.array(list(itertools.combinations(range(C), 2)))
    for start in range(0, len(combos), _PAIR_CHUNK):
        chunk = combos[start : start + _PAIR_CHUNK]
        i_idx, j_idx = chunk[:, 0], chunk[:, 1]
        for k1, k2 in splits:
            w1 = beta1[:, i_idx] + prep.beta2[i_idx, k1 - 1][None, :]
            w2 = beta1[:, j_idx] + prep.beta2[j_idx, k2 - 1][None, :]
            best_w = np.maximum(w1, w2)
            ub = lam @ np.maximum(best_w, 0.0)
            take1 = (w1 >= w2) & (w1 > 0)  # ties go to the first route
            take2 = (w2 > w1) & (w2 > 0)
            feasible = (lam @ take1 <= prep.caps[i_idx, k1 - 1]) & (
                lam @ take2 <= prep.caps[j_idx, k2 - 1]
            )

            cand = np.flatnonzero(feasible)
            if len(cand):
                # anything below both the chunk maximum and the incumbent can
                # neither win nor tie the final optimum
                bar = max(float(ub[cand].max()), current_best()) - _TIE_TOL
                for pos in cand[ub[cand] >= bar]:
                    consider(float(ub[pos]), ((int(i_idx[pos]), k1), (int(j_idx[pos]), k2)))
            blocked = np.flatnonzero(~feasible & (ub >= current_best() - _TIE_TOL))
            for pos in blocked[np.argsort(-ub[blocked], kind="stable")]:
                if ub[pos] < current_best() - _TIE_TOL:
                    continue
                cid_i, cid_j = int(i_idx[pos]), int(j_idx[pos])
                w = np.column_stack([w1[:, pos], w2[:, pos]])
                caps = np.array([prep.caps[cid_i, k1 - 1], prep.caps[cid_j, k2 - 1]])
                _, obj = assign_flows(w, lam, caps)
                consider(float(obj), ((cid_i, k1), (cid_j, k2)))


def _design_for_allocation(
    prep: _Prepared,
    all_pairs: list[ODPair],
    lam_all: np.ndarray,
    alloc: tuple[tuple[int, int], ...],
    routes: list[CandidateRoute],
) -> RouteDesign:
    """Re-derive flows and the objective for a chosen allocation."""
    r = len(alloc)
    flows1: dict[tuple[ODPair, int], float] = {}
    flows2: dict[tuple[int, int], float] = {}
    if r == 0:
        for pair, lam in zip(all_pairs, lam_all):
            flows1[(pair, WALK_ROUTE)] = float(lam)
        return RouteDesign((), flows1, flows2, 0.0)

    w = np.column_stack([prep.beta1[:, cid] + prep.beta2[cid, k - 1] for cid, k in alloc])
    caps = np.array([prep.caps[cid, k - 1] for cid, k in alloc])
    x, obj = assign_flows(w, lam_all, caps)
    for i, pair in enumerate(all_pairs):
        routed = 0.0
        for j, (cid, _) in enumerate(alloc):
            if x[i, j] > 0:
                flows1[(pair, cid)] = float(x[i, j])
            routed += x[i, j]
        flows1[(pair, WALK_ROUTE)] = float(max(lam_all[i] - routed, 0.0))
    for j, (cid, k) in enumerate(alloc):
        flows2[(cid, k)] = float(x[:, j].sum())
    ordered = tuple(sorted(((routes[cid], k) for cid, k in alloc), key=lambda rk: rk[0].stops))
    return RouteDesign(ordered, flows1, flows2, float(obj))


def evaluate_allocation(instance: NetworkInstance, allocation, demand: DemandVector, prepared: _Prepared | None = None) -> RouteDesign:
    """Optimal flows for a fixed allocation of (route, buses) pairs."""
    prep = prepared if prepared is not None else prepare_instance(instance)
    routes = instance.candidate_routes
    by_stops = {r.stops: r.id for r in routes}
    alloc = tuple((by_stops[r.stops] if isinstance(r, CandidateRoute) else by_stops[tuple(r)], k) for r, k in allocation)
    lam_all = np.array([demand.get(p) for p in prep.pairs])
    return _design_for_allocation(prep, prep.pairs, lam_all, alloc, routes)


# ---------------------------------------------------------------------------
# Exhaustive oracle for tiny instances (test-only reference)
# ---------------------------------------------------------------------------


def _integer_splits(total: int, parts: int, step: int):
    """All ways to split `total` into `parts` non-negative multiples of step."""
    if parts == 1:
        yield (total,)
        return
    for first in range(0, total + 1, step):
        for rest in _integer_splits(total - first, parts - 1, step):
            yield (first,) + rest


def oracle_solve(instance: NetworkInstance, demand: DemandVector, grid_step: int = 1) -> RouteDesign:
    """Brute force over allocations and integer-grid flow splits.

    Guarded to tiny instances; demands must be integers.  Flow assignments are
    enumerated directly, so this shares no search logic with solve_instance.
    """
    if len(instance.bus_stops) > 3 or instance.fleet_size > 2:
        raise ValueError("oracle_solve is guarded to <= 3 stops and K <= 2")
    nonzero = [(p, v) for p, v in sorted(demand.rates.items()) if v > 0]
    if len(nonzero) > 2:
        raise ValueError("oracle_solve is guarded to <= 2 OD pairs with demand")
    if any(abs(v - round(v)) > 1e-9 for _, v in nonzero):
        raise ValueError("oracle_solve needs integer demands")

    routes = instance.candidate_routes
    prep = prepare_instance(instance)
    pair_index = {p: i for i, p in enumerate(prep.pairs)}

    best_obj = -np.inf
    best_key = None
    best = None

    sizes = _allocation_sizes(instance)
    for size in sizes:
        if size > len(routes):
            continue
        for combo in itertools.combinations(range(len(routes)), size):
            for split in _bus_splits(size, instance.fleet_size):
                caps = [prep.caps[cid, k - 1] for cid, k in zip(combo, split)]
                ws = {
                    p: [prep.beta1[pair_index[p], cid] + prep.beta2[cid, k - 1] for cid, k in zip(combo, split)]
                    for p, _ in nonzero
                }
                per_pair_options = [
                    list(_integer_splits(int(round(v)), size + 1, grid_step)) for _, v in nonzero
                ]
                for assignment in itertools.product(*per_pair_options):
                    inflow = [0.0] * size
                    obj = 0.0
                    for (p, _), flows in zip(nonzero, assignment):
                        for j in range(size):
                            inflow[j] += flows[j]
                            obj += ws[p][j] * flows[j]
                    if any(inflow[j] > caps[j] + 1e-9 for j in range(size)):
                        continue
                    key = _assignment_key([(routes[cid].stops, k) for cid, k in zip(combo, split)])
                    if obj > best_obj + 1e-9 or (abs(obj - best_obj) <= 1e-9 and (best_key is None or key < best_key)):
                        best_obj = obj
                        best_key = key
                        best = (tuple(zip(combo, split)), assignment)

    if best is None:
        raise ValueError("oracle found no feasible allocation")
    alloc, assignment = best
    flows1: dict[tuple[ODPair, int], float] = {}
    flows2: dict[tuple[int, int], float] = {}
    for (p, v), flows in zip(nonzero, assignment):
        for j, (cid, _) in enumerate(alloc):
            if flows[j] > 0:
                flows1[(p, cid)] = float(flows[j])
        flows1[(p, WALK_ROUTE)] = float(flows[-1])
    for j, (cid, k) in enumerate(alloc):
        flows2[(cid, k)] = float(sum(flows[j] for flows in assignment))
    ordered = tuple(sorted(((routes[cid], k) for cid, k in alloc), key=lambda rk: rk[0].stops))
    return RouteDesign(ordered, flows1, flows2, float(best_obj))


# ---------------------------------------------------------------------------
# Instance (de)serialization
# ---------------------------------------------------------------------------

INSTANCE_SCHEMA_VERSION = 1


def instance_to_json_dict(instance: NetworkInstance) -> dict:
    return {
        "schema_version": INSTANCE_SCHEMA_VERSION,
        "locations": [
            {"id": n.id, "label": n.label, "x": n.coord[0], "y": n.coord[1]}
            for n in instance.demand_nodes
        ],
        "bus_stops": [
            {"id": s.id, "label": s.label, "x": s.coord[0], "y": s.coord[1]}
            for s in instance.bus_stops
        ],
        "walk_speed": instance.walk_speed,
        "ride_time": instance.ride_time.tolist(),
        "fleet_size": instance.fleet_size,
        "capacity": instance.capacity,
        "max_routes": instance.max_routes,
        "max_route_stops": instance.max_route_stops,
        "dwell_time": instance.dwell_time,
        "half_headway": instance.half_headway,
        "exact_route_count": instance.exact_route_count,
    }


def _location_from(d: dict, where: str) -> Location:
    try:
        return Location(int(d["id"]), str(d["label"]), (float(d["x"]), float(d["y"])))
    except KeyError as exc:
        raise ValueError(f"{where}: missing field {exc}") from None


def instance_from_json_dict(doc: dict) -> NetworkInstance:
    for key in ("locations", "bus_stops", "walk_speed", "ride_time", "fleet_size", "capacity", "max_routes", "max_route_stops"):
        if key not in doc:
            raise ValueError(f"network: missing field {key!r}")
    return NetworkInstance(
        demand_nodes=[_location_from(d, f"network.locations[{i}]") for i, d in enumerate(doc["locations"])],
        bus_stops=[_location_from(d, f"network.bus_stops[{i}]") for i, d in enumerate(doc["bus_stops"])],
        walk_speed=float(doc["walk_speed"]),
        ride_time=np.asarray(doc["ride_time"], dtype=np.float64),
        fleet_size=int(doc["fleet_size"]),
        capacity=float(doc["capacity"]),
        max_routes=int(doc["max_routes"]),
        max_route_stops=int(doc["max_route_stops"]),
        dwell_time=float(doc.get("dwell_time", 0.0)),
        half_headway=bool(doc.get("half_headway", False)),
        exact_route_count=bool(doc.get("exact_route_count", False)),
    )


def load_instance(path) -> NetworkInstance:
    with open(path, encoding="utf-8") as fh:
        return instance_from_json_dict(json.load(fh))


def save_instance(instance: NetworkInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_json_dict(instance), fh, indent=2, sort_keys=True)
        fh.write("\n")
