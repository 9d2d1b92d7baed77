"""Exact psi and kappa intersection numbers on moduli of stable curves.

psi numbers come from the Virasoro (DVV) recursion with the two seeds
<tau_0^3>_0 = 1 and <tau_1>_1 = 1/24.  kappa classes are reduced to psi
classes by adding a marking at a time: kappa_b integrates as psi^{b+1} at
the new point, with inclusion-exclusion corrections merging the remaining
kappa indices.
"""

from __future__ import annotations

import json
import os
from fractions import Fraction
from pathlib import Path

from .rational import format_rat, parse_rat


class UnstableError(ValueError):
    """Raised for (g, n) outside the stable range."""


def _double_fact(k):
    # (2k+1)!! with the convention (-1)!! = 1
    out = 1
    while k >= 0:
        out *= 2 * k + 1
        k -= 1
    return out


def _stable(g, n):
    return g >= 0 and n >= 0 and 2 * g - 2 + n > 0


class WittenCache:
    """Memo table for psi and kappa-psi numbers, optionally persisted."""

    def __init__(self, directory=None):
        self.psi = {}
        self.kappa = {}
        self.directory = Path(directory) if directory else None
        if self.directory:
            self._load()

    def _file(self):
        return self.directory / "witten_cache.json"

    def _load(self):
        f = self._file()
        if not f.exists():
            return
        try:
            raw = json.loads(f.read_text())
        except (OSError, json.JSONDecodeError):
            return
        for key, val in raw.items():
            gpart, apart, bpart = key.split("|")
            g = int(gpart)
            aa = tuple(int(x) for x in apart.split(",") if x != "")
            bb = tuple(int(x) for x in bpart.split(",") if x != "")
            if bb:
                self.kappa[(g, aa, bb)] = parse_rat(val)
            else:
                self.psi[(g, aa)] = parse_rat(val)

    def save(self):
        if not self.directory:
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        out = {}
        for (g, aa), val in self.psi.items():
            out[f"{g}|{','.join(map(str, aa))}|"] = format_rat(val)
        for (g, aa, bb), val in self.kappa.items():
            key = f"{g}|{','.join(map(str, aa))}|{','.join(map(str, bb))}"
            out[key] = format_rat(val)
        self._file().write_text(json.dumps(out, sort_keys=True, indent=0))

    def cached_psi_keys(self):
        return list(self.psi)


_GLOBAL = WittenCache(os.environ.get("TAUTRING_CACHE"))


def psi_integral(g, exponents, cache=None):
    """<tau_{a_1} ... tau_{a_n}>_g, exactly.

    Zero when the degree condition sum(a) = 3g-3+n fails; raises on
    unstable (g, n).
    """
    cache = cache or _GLOBAL
    n = len(exponents)
    if not _stable(g, n):
        raise UnstableError(f"({g},{n}) is not stable")
    key = (g, tuple(sorted(exponents)))
    if any(a < 0 for a in key[1]):
        return Fraction(0)
    if sum(key[1]) != 3 * g - 3 + n:
        return Fraction(0)
    return _psi_rec(key, cache)


def _psi_rec(key, cache):
    if key in cache.psi:
        return cache.psi[key]
    g, d = key
    n = len(d)
    if g == 0 and n == 3:
        val = Fraction(1)
    elif g == 1 and n == 1:
        val = Fraction(1, 24)
    else:
        val = _dvv(g, d, cache)
    cache.psi[key] = val
    return val


def _corr(g, exps, cache):
    """Stability- and degree-guarded correlator used inside the recursion."""
    n = len(exps)
    if not _stable(g, n):
        return Fraction(0)
    if any(a < 0 for a in exps):
        return Fraction(0)
    if sum(exps) != 3 * g - 3 + n:
        return Fraction(0)
    return _psi_rec((g, tuple(sorted(exps))), cache)


def _dvv(g, d, cache):
    """One application of the DVV recursion to the largest index."""
    d = list(d)
    m = max(d)
    if m == 0:
        # degree forces 3g-3+n = 0 with all indices zero: only (0,3),
        # handled by the seed; anything else cannot satisfy the degree
        return Fraction(0)
    i = d.index(m)
    rest = d[:i] + d[i + 1:]
    k = m - 1
    total = Fraction(0)
    for j, dj in enumerate(rest):
        new = rest[:j] + [k + dj] + rest[j + 1:]
        coeff = Fraction(_double_fact(k + dj), _double_fact(dj - 1))
        total += coeff * _corr(g, new, cache)
    half = Fraction(0)
    for a in range(0, k):
        b = k - 1 - a
        co = Fraction(_double_fact(a) * _double_fact(b))
        half += co * _corr(g - 1, rest + [a, b], cache)
        for g1 in range(0, g + 1):
            g2 = g - g1
            for subset in _subsets(len(rest)):
                i1 = [rest[t] for t in range(len(rest)) if t in subset]
                i2 = [rest[t] for t in range(len(rest)) if t not in subset]
                half += co * _corr(g1, [a] + i1, cache) * _corr(g2, [b] + i2, cache)
    total += Fraction(1, 2) * half
    return total / _double_fact(m)


def _subsets(n):
    for mask in range(1 << n):
        yield {t for t in range(n) if mask & (1 << t)}


def kappa_psi_integral(g, psi_exponents, kappa_exponents, cache=None):
    """Integral of prod psi_i^{a_i} * prod kappa_{b_j} over Mbar_{g,n}.

    kappa_exponents lists the kappa indices with multiplicity, e.g.
    (1, 1, 2) for kappa_1^2 kappa_2.
    """
    cache = cache or _GLOBAL
    n = len(psi_exponents)
    if not _stable(g, n):
        raise UnstableError(f"({g},{n}) is not stable")
    aa = tuple(sorted(psi_exponents))
    bb = tuple(sorted(kappa_exponents))
    if any(a < 0 for a in aa) or any(b < 1 for b in bb):
        raise ValueError("psi exponents must be >= 0, kappa indices >= 1")
    if sum(aa) + sum(bb) != 3 * g - 3 + n:
        return Fraction(0)
    return _kappa_rec(g, aa, bb, cache)


def _kappa_rec(g, aa, bb, cache):
    if not bb:
        return _corr(g, list(aa), cache)
    key = (g, aa, bb)
    if key in cache.kappa:
        return cache.kappa[key]
    rest = list(bb[:-1])
    last = bb[-1]
    # add a marking carrying psi^{last+1}; remaining kappas either persist
    # or merge into the new psi power with a sign (pi^* kappa = kappa - psi^b)
    total = Fraction(0)
    for subset in _subsets(len(rest)):
        merged = last + sum(rest[t] for t in subset)
        kept = tuple(sorted(rest[t] for t in range(len(rest))
                            if t not in subset))
        sign = (-1) ** len(subset)
        total += sign * _kappa_rec(g, tuple(sorted(aa + (merged + 1,))),
                                   kept, cache)
    cache.kappa[key] = total
    return total


def vertex_integral(g, n, psi_by_slot, kappa_exponents, cache=None):
    """Integral over Mbar_{g,n} of a decoration monomial.

    psi_by_slot: sequence of n psi exponents (one per marking slot).
    Returns 0 on degree mismatch of a factor inside a 0-dimensional
    product; callers check overall homogeneity.
    """
    if len(psi_by_slot) != n:
        raise ValueError("psi exponent list must have one entry per marking")
    return kappa_psi_integral(g, tuple(psi_by_slot), tuple(kappa_exponents),
                              cache=cache)


def global_cache():
    return _GLOBAL
