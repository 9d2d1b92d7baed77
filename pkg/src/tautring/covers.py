"""Arithmetic of admissible G-cover spaces.

Riemann-Hurwitz target genus, nonemptiness, and the degree of the target
map delta, both by the cyclic closed form and by exhaustive counting of
surface-group representations.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from math import gcd

from .graphs import BudgetExceeded
from .groups import GroupSpec, MonodromyDatum, cyclic_identification


class EmptyCover(Exception):
    """Signals an empty Hurwitz space (bad Riemann-Hurwitz data)."""


def target_genus(g, group: GroupSpec, xi):
    """Genus of the quotient curve, or None when no cover can exist.

    Solves 2g - 2 = |G|(2g' - 2) + sum_i (|G| - |G|/ord(h_i)) for g'.
    """
    N = group.order
    ram = sum(N - N // group.element_order(h) for h in xi)
    num = 2 * g - 2 - ram
    if num % (2 * N) != 0:
        return None
    gprime = num // (2 * N) + 1
    if gprime < 0:
        return None
    return gprime


class HurwitzSpec:
    """A space of pointed admissible G-covers: (g, G, xi).

    Derived data: target genus gprime, branch count b, marking count r,
    and the ordered marking layout p_{i,a}.
    """

    def __init__(self, g, group: GroupSpec, xi):
        self.g = int(g)
        self.group = group
        self.xi = xi if isinstance(xi, MonodromyDatum) else \
            MonodromyDatum(group, xi)
        gp = target_genus(self.g, group, self.xi)
        if gp is None:
            raise EmptyCover(
                f"Riemann-Hurwitz fails for g={g}, |G|={group.order}, "
                f"xi={tuple(self.xi)}")
        self.gprime = gp
        self.b = len(self.xi)
        self.r = sum(group.order // group.element_order(h) for h in self.xi)

    def marking_layout(self):
        """Ordered markings p_{i,a}: branch-major, canonical coset order.

        Returns a list of (branch index i (1-based), coset representative a,
        stabilizer order).  Marking number k (1-based) is position k-1.
        """
        out = []
        for i, h in enumerate(self.xi, start=1):
            e = self.group.element_order(h)
            stab = set(self.group.cyclic_subgroup(h))
            seen = set()
            for a in self.group.elements():
                coset = frozenset(self.group.mul(a, s) for s in stab)
                if coset in seen:
                    continue
                seen.add(coset)
                out.append((i, a, e))
        return out

    def dim(self):
        return 3 * self.gprime - 3 + self.b

    def key(self):
        return (self.g, self.group.key(), tuple(self.xi))

    def __repr__(self):
        return (f"HurwitzSpec(g={self.g}, {self.group.kind}, "
                f"xi={tuple(self.xi)}, g'={self.gprime}, r={self.r})")


def degree_delta_cyclic(gprime, m, xi):
    """Degree of delta for G = Z/m, by the closed product formula."""
    if m < 1:
        raise ValueError("m must be >= 1")
    entries = [h % m for h in xi]
    if sum(entries) % m != 0:
        return Fraction(0)
    m0 = m
    for h in entries:
        m0 = gcd(m0, h)
    # gcd(m, 0) = m by convention, handled since gcd starts at m
    primes = _prime_factors(m0)
    if gprime == 0 and m0 > 1:
        return Fraction(0)
    deg = Fraction(m) ** (2 * gprime - 1)
    for p in primes:
        deg *= 1 - Fraction(1, p ** (2 * gprime))
    for h in entries:
        deg *= gcd(m, h) if h else m
    return deg


def _prime_factors(n):
    out = []
    d = 2
    while d * d <= n:
        if n % d == 0:
            out.append(d)
            while n % d == 0:
                n //= d
        d += 1
    if n > 1:
        out.append(n)
    return out


class HomCountProblem:
    """Count homomorphisms from the punctured-surface group to G.

    Generators: a_j, b_j (j <= gprime) and one sigma_k per entry of xi,
    subject to prod [a_j, b_j] sigma_1 ... sigma_b = e, with sigma_k in
    the conjugacy class of xi_k and the images generating G.
    """

    def __init__(self, gprime, group: GroupSpec, xi):
        self.gprime = int(gprime)
        self.group = group
        self.xi = xi if isinstance(xi, MonodromyDatum) else \
            MonodromyDatum(group, xi)

    def slots(self):
        return 2 * self.gprime + len(self.xi)

    def solutions(self, budget=None):
        """All tuples (a_1..a_g', b_1..b_g', sigma_1..sigma_b) solving the
        relation, before the surjectivity and conjugation reductions."""
        G = self.group
        sigma_choices = [G.conjugacy_class(h) for h in self.xi]
        total = (G.order ** (2 * self.gprime)) * \
            _prod(len(c) for c in sigma_choices)
        if budget is not None and total > budget:
            raise BudgetExceeded(
                f"Hom enumeration needs {total} candidates > budget {budget}")
        out = []
        for ab in itertools.product(G.elements(), repeat=2 * self.gprime):
            comm = 0
            for j in range(self.gprime):
                comm = G.mul(comm, G.commutator(ab[2 * j], ab[2 * j + 1]))
            for sigmas in itertools.product(*sigma_choices):
                prod = comm
                for s in sigmas:
                    prod = G.mul(prod, s)
                if prod != 0:
                    continue
                out.append(tuple(ab) + tuple(sigmas))
        return out


def _prod(it):
    out = 1
    for x in it:
        out *= x
    return out


def degree_delta_bruteforce(gprime, group: GroupSpec, xi, budget=2_000_000):
    """Degree of delta by exhaustive Hom counting (Thm-style formula).

    deg = |Hom_xi(Xi,G)/G| * prod_i (|C_G(h_i)| / ord(h_i)) / |C(G)|.
    """
    problem = HomCountProblem(gprime, group, xi)
    G = group
    solutions = problem.solutions(budget=budget)
    # keep surjective ones, then count conjugation orbits
    orbits = set()
    for sol in solutions:
        if len(G.subgroup_closure(set(sol))) != G.order:
            continue
        orbit_key = min(tuple(G.conj(x, t) for x in sol)
                        for t in G.elements())
        orbits.add(orbit_key)
    deg = Fraction(len(orbits))
    for h in xi:
        deg *= Fraction(len(G.centralizer(h)), G.element_order(h))
    deg /= len(G.center())
    return deg


def degree_delta(spec_or_gprime, group=None, xi=None, budget=2_000_000):
    """Degree of delta; cyclic closed form when available, else brute force."""
    if isinstance(spec_or_gprime, HurwitzSpec):
        spec = spec_or_gprime
        gprime, group, xi = spec.gprime, spec.group, spec.xi
    else:
        gprime = spec_or_gprime
    if group.kind.startswith("cyclic:"):
        return degree_delta_cyclic(gprime, group.order, tuple(xi))
    if group.is_cyclic():
        ident = cyclic_identification(group)
        return degree_delta_cyclic(gprime, group.order,
                                   tuple(ident[h] for h in xi))
    return degree_delta_bruteforce(gprime, group, xi, budget=budget)


def space_nonempty(g, group, xi, budget=2_000_000):
    """Whether H_{g,G,xi} is nonempty."""
    gp = target_genus(g, group, xi)
    if gp is None:
        return False
    return degree_delta(gp, group=group, xi=tuple(xi), budget=budget) > 0
