"""Decorated stratum classes and the tautological ring operations.

A class on Mbar_{g,n} is a rational combination of terms xi_{A*}(theta),
where A is a stable graph and theta a monomial in kappa classes (per
vertex) and psi classes (per leg or half-edge).  Terms are stored
UNNORMALIZED: a coefficient c stands for c * xi_{A*}(theta).  The
geometric class [A_theta] carries an extra 1/|Aut A|, applied only when
parsing or printing in normalized mode.

Classes on product spaces Mbar_A (one factor per vertex of a graph A) are
handled by ProductClass, whose factor legs are the legs of A together with
("h", h) markers for the half-edges of A.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from math import comb, factorial

from . import witten
from .graphs import (StableGraph, GraphMorphism, ValidationError,
                     automorphisms_cached, enumerate_generic_AB,
                     morphism_pieces, smooth_graph, enumerate_graphs)


class DegreeError(ValueError):
    """Raised when an operation needs a top-degree homogeneous class."""


class SpaceMismatch(ValueError):
    """Raised when operands live on different moduli spaces."""


# -- decorations -----------------------------------------------------------
#
# kappa: dict vertex -> dict index a -> exponent b  (a >= 1, b >= 1)
# psi:   dict key -> exponent, key = ("l", label) or ("h", half_id)

def dec_degree(kappa, psi):
    d = sum(e for e in psi.values())
    d += sum(a * b for per_v in kappa.values() for a, b in per_v.items())
    return d


def dec_multiply(k1, p1, k2, p2):
    kappa = {v: dict(d) for v, d in k1.items()}
    for v, d in k2.items():
        tgt = kappa.setdefault(v, {})
        for a, b in d.items():
            tgt[a] = tgt.get(a, 0) + b
    psi = dict(p1)
    for key, e in p2.items():
        psi[key] = psi.get(key, 0) + e
    return kappa, psi


def dec_encode(kappa, psi):
    kk = tuple(sorted((v, tuple(sorted(d.items())))
                      for v, d in kappa.items() if d))
    pp = tuple(sorted(((key, e) for key, e in psi.items() if e),
                      key=lambda t: (repr(t[0]), t[1])))
    return kk, pp


def dec_transport(kappa, psi, vmap, hmap):
    """Transport a decoration along a graph relabeling."""
    nk = {}
    for v, d in kappa.items():
        if d:
            nk[vmap[v] if isinstance(vmap, dict) else vmap[v]] = dict(d)
    np_ = {}
    for key, e in psi.items():
        if not e:
            continue
        if key[0] == "h":
            np_[("h", hmap[key[1]])] = e
        else:
            np_[key] = e
    return nk, np_


_automorphisms = automorphisms_cached


def canonical_term(graph, kappa, psi):
    """Canonical representative of a decorated stratum term.

    Relabels the graph canonically and minimizes the transported
    decoration over the automorphism group, so equal classes get equal
    keys.  Returns (key, graph, kappa, psi).
    """
    gc, vmap, hmap = graph.canonical_relabel()
    kk, pp = dec_transport(kappa, psi, vmap, hmap)
    if kk or pp:
        best = dec_encode(kk, pp)
        best_dec = (kk, pp)
        auts = _automorphisms(gc)
        if len(auts) > 1:
            for avmap, ahmap in auts:
                k2, p2 = dec_transport(kk, pp, avmap, ahmap)
                enc = dec_encode(k2, p2)
                if repr(enc) < repr(best):
                    best = enc
                    best_dec = (k2, p2)
        kk, pp = best_dec
    key = (gc.genera, gc.legs, gc.edges, dec_encode(kk, pp))
    return key, gc, kk, pp


# -- TautClass ---------------------------------------------------------------

class TautClass:
    """Formal rational combination of decorated strata on Mbar_{g,n}.

    Legs are labeled 1..n.  Internal terms are unnormalized pushforwards.
    """

    __slots__ = ("g", "n", "terms")

    def __init__(self, g, n, terms=None):
        self.g = g
        self.n = n
        self.terms = {}  # key -> [coeff, graph, kappa, psi]
        if terms:
            for coeff, graph, kappa, psi in terms:
                self.add_term(coeff, graph, kappa, psi)

    # construction helpers

    @classmethod
    def zero(cls, g, n):
        return cls(g, n)

    @classmethod
    def fundamental(cls, g, n):
        return cls(g, n, [(Fraction(1), smooth_graph(g, n), {}, {})])

    @classmethod
    def psi(cls, g, n, i):
        return cls(g, n, [(Fraction(1), smooth_graph(g, n), {},
                           {("l", i): 1})])

    @classmethod
    def kappa(cls, g, n, a, power=1):
        return cls(g, n, [(Fraction(1), smooth_graph(g, n),
                           {0: {a: power}}, {})])

    @classmethod
    def stratum(cls, graph, kappa=None, psi=None, coeff=1, normalized=False):
        """A single decorated stratum; normalized=True divides by |Aut|."""
        graph.validate()
        c = Fraction(coeff)
        if normalized:
            c = c / graph.automorphism_count()
        g, n = graph.space()
        return cls(g, n, [(c, graph, kappa or {}, psi or {})])

    def add_term(self, coeff, graph, kappa, psi):
        coeff = Fraction(coeff)
        if coeff == 0:
            return
        key, gc, kk, pp = canonical_term(graph, kappa, psi)
        entry = self.terms.get(key)
        if entry is None:
            self.terms[key] = [coeff, gc, kk, pp]
        else:
            entry[0] += coeff
            if entry[0] == 0:
                del self.terms[key]

    def iter_terms(self):
        for key in sorted(self.terms, key=repr):
            coeff, graph, kappa, psi = self.terms[key]
            yield coeff, graph, kappa, psi

    # ring structure

    def _check_space(self, other):
        if (self.g, self.n) != (other.g, other.n):
            raise SpaceMismatch(
                f"classes live on ({self.g},{self.n}) vs ({other.g},{other.n})")

    def __add__(self, other):
        self._check_space(other)
        out = TautClass(self.g, self.n)
        for coeff, graph, kappa, psi in itertools.chain(
                self.iter_terms(), other.iter_terms()):
            out.add_term(coeff, graph, kappa, psi)
        return out

    def __sub__(self, other):
        return self + other.scale(-1)

    def scale(self, c):
        c = Fraction(c)
        out = TautClass(self.g, self.n)
        for coeff, graph, kappa, psi in self.iter_terms():
            out.add_term(coeff * c, graph, kappa, psi)
        return out

    def __mul__(self, other):
        if isinstance(other, TautClass):
            return product(self, other)
        return self.scale(other)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, TautClass):
            return NotImplemented
        if (self.g, self.n) != (other.g, other.n):
            return False
        if set(self.terms) != set(other.terms):
            return False
        return all(self.terms[k][0] == other.terms[k][0] for k in self.terms)

    def is_zero(self):
        return not self.terms

    def term_degree(self, key):
        coeff, graph, kappa, psi = self.terms[key]
        return graph.num_edges + dec_degree(kappa, psi)

    def degrees(self):
        return sorted({self.term_degree(k) for k in self.terms})

    def homogeneous_degree(self):
        degs = self.degrees()
        if len(degs) > 1:
            raise DegreeError(f"class is inhomogeneous: degrees {degs}")
        return degs[0] if degs else None

    def graded_part(self, d):
        out = TautClass(self.g, self.n)
        for key, (coeff, graph, kappa, psi) in self.terms.items():
            if self.term_degree(key) == d:
                out.add_term(coeff, graph, kappa, psi)
        return out

    def evaluate(self, cache=None):
        """Integrate a top-degree class over Mbar_{g,n}."""
        top = 3 * self.g - 3 + self.n
        for key in self.terms:
            if self.term_degree(key) != top:
                raise DegreeError(
                    f"term of degree {self.term_degree(key)} is not top "
                    f"degree {top}")
        total = Fraction(0)
        for coeff, graph, kappa, psi in self.iter_terms():
            total += coeff * _integrate_term(graph, kappa, psi, cache)
        return total

    def symmetrize(self, labels):
        """Sum over all relabelings permuting the given leg labels."""
        labels = list(labels)
        out = TautClass(self.g, self.n)
        for perm in itertools.permutations(labels):
            mapping = dict(zip(labels, perm))
            for coeff, graph, kappa, psi in self.iter_terms():
                g2 = graph.relabel_legs(mapping)
                psi2 = {}
                for key, e in psi.items():
                    if key[0] == "l":
                        psi2[("l", mapping.get(key[1], key[1]))] = e
                    else:
                        psi2[key] = e
                out.add_term(coeff, g2, kappa, psi2)
        return out

    def __repr__(self):
        parts = []
        for coeff, graph, kappa, psi in self.iter_terms():
            parts.append(f"{coeff}*[{graph.genera};E{graph.num_edges};"
                         f"k{dict(kappa)};p{dict(psi)}]")
        body = " + ".join(parts) if parts else "0"
        return f"TautClass({self.g},{self.n}: {body})"


def _integrate_term(graph, kappa, psi, cache=None):
    total = Fraction(1)
    hv = graph.half_vertex()
    for v in range(graph.num_vertices):
        slots = [("l", lab) for lab in graph.legs_at(v)]
        slots += [("h", h) for h in graph.halves_at(v)]
        exps = [psi.get(s, 0) for s in slots]
        kap = []
        for a, b in sorted(kappa.get(v, {}).items()):
            kap.extend([a] * b)
        gv = graph.genera[v]
        val = witten.vertex_integral(gv, len(slots), exps, kap, cache=cache)
        if val == 0:
            return Fraction(0)
        total *= val
    return total


# -- decoration pullback along morphisms ------------------------------------

def pull_decoration(mor: GraphMorphism, kappa, psi):
    """Pull a decoration on the target back to the source of mor.

    psi transports along beta; each kappa_{v,a} becomes the sum over the
    alpha-preimage vertices, expanded multinomially.  Returns a list of
    (coeff, kappa, psi) on the source.
    """
    psi_s = {}
    for key, e in psi.items():
        if key[0] == "l":
            psi_s[key] = psi_s.get(key, 0) + e
        else:
            hs = mor.beta[key[1]]
            psi_s[("h", hs)] = psi_s.get(("h", hs), 0) + e
    factors = []  # list of lists of (coeff, kappa-dict)
    for v, d in kappa.items():
        pre = [w for w in range(mor.source.num_vertices) if mor.alpha[w] == v]
        for a, b in d.items():
            options = []
            for split in _compositions(b, len(pre)):
                coeff = Fraction(factorial(b))
                kap = {}
                for w, c in zip(pre, split):
                    coeff /= factorial(c)
                    if c:
                        kap.setdefault(w, {})[a] = c
                options.append((coeff, kap))
            factors.append(options)
    out = []
    for combo in itertools.product(*factors) if factors else [()]:
        coeff = Fraction(1)
        kap = {}
        for c, kpart in combo:
            coeff *= c
            for w, d in kpart.items():
                tgt = kap.setdefault(w, {})
                for a, b in d.items():
                    tgt[a] = tgt.get(a, 0) + b
        out.append((coeff, kap, dict(psi_s)))
    return out


def _compositions(total, parts):
    if parts == 0:
        if total == 0:
            yield ()
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _excess_terms(graph, f_mor, g_mor):
    """Expansion of prod (-psi_h - psi_h') over edges shared by both betas."""
    f_img = set(f_mor.beta.values())
    g_img = set(g_mor.beta.values())
    shared = []
    for (h1, _), (h2, _) in graph.edges:
        if h1 in f_img and h1 in g_img:
            shared.append((h1, h2))
    out = [(Fraction(1), {})]
    for h1, h2 in shared:
        new = []
        for coeff, psi in out:
            for h in (h1, h2):
                p2 = dict(psi)
                p2[("h", h)] = p2.get(("h", h), 0) + 1
                new.append((-coeff, p2))
        out = new
    return out


# -- product ----------------------------------------------------------------

def product(x: TautClass, y: TautClass, budget=None) -> TautClass:
    """Intersection product of tautological classes on Mbar_{g,n}."""
    if (x.g, x.n) != (y.g, y.n):
        raise SpaceMismatch("product needs both factors on the same space")
    out = TautClass(x.g, x.n)
    struct_cache = {}
    for cx, gx, kx, px in x.iter_terms():
        for cy, gy, ky, py in y.iter_terms():
            ckey = (gx.canonical_key(), gy.canonical_key())
            rkey = repr(ckey)
            if rkey not in struct_cache:
                struct_cache[rkey] = enumerate_generic_AB(gx, gy,
                                                          budget=budget)
            for gamma, f_mor, g_mor in struct_cache[rkey]:
                for cf, kf, pf in pull_decoration(f_mor, kx, px):
                    for cg, kg, pg in pull_decoration(g_mor, ky, py):
                        kk, pp = dec_multiply(kf, pf, kg, pg)
                        for ce, pe in _excess_terms(gamma, f_mor, g_mor):
                            k3, p3 = dec_multiply(kk, pp, {}, pe)
                            out.add_term(cx * cy * cf * cg * ce,
                                         gamma, k3, p3)
    return out


# -- forgetful pullback ------------------------------------------------------

def pullback_forgetful(x: TautClass, new_label=None) -> TautClass:
    """Pull back along the map forgetting one extra marking.

    psi_i maps to psi_i - D_{i,new}; kappa_a to kappa_a - psi_new^a;
    strata pull back by distributing the new leg over the vertices.
    """
    if new_label is None:
        new_label = x.n + 1
    out = TautClass(x.g, x.n + 1)
    for coeff, graph, kappa, psi in x.iter_terms():
        for v in range(graph.num_vertices):
            _pullback_term_at_vertex(out, coeff, graph, kappa, psi, v,
                                     new_label)
    return out


def _pullback_term_at_vertex(out, coeff, graph, kappa, psi, v, new_label):
    items = [("l", lab) for lab in graph.legs_at(v)]
    items += [("h", h) for h in graph.halves_at(v)]
    kap_v = kappa.get(v, {})
    # main terms: leg on v, kappa corrections kappa_a -> kappa_a - psi_new^a
    base = graph.add_leg(new_label, v)
    choices = []
    for a, b in sorted(kap_v.items()):
        opts = [(Fraction(comb(b, t)) * (-1) ** t, a, b - t, a * t)
                for t in range(b + 1)]
        choices.append(opts)
    for combo in itertools.product(*choices) if choices else [()]:
        c = coeff
        kap2 = {w: dict(d) for w, d in kappa.items() if w != v}
        kv = {}
        extra_psi = 0
        for cc, a, rem, psi_pow in combo:
            c *= cc
            if rem:
                kv[a] = rem
            extra_psi += psi_pow
        if kv:
            kap2[v] = kv
        psi2 = dict(psi)
        if extra_psi:
            psi2[("l", new_label)] = psi2.get(("l", new_label), 0) + extra_psi
        out.add_term(c, base, kap2, psi2)
    # bubble terms: -D_{i,new} * psi_x^{a_i-1} for each item with psi power
    for key in items:
        a_i = psi.get(key, 0)
        if a_i < 1:
            continue
        bub = graph.num_vertices
        h1 = graph.fresh_half()
        h2 = h1 + 1
        genera = list(graph.genera) + [0]
        legs = [(new_label, bub)]
        for lab, w in graph.legs:
            if key == ("l", lab):
                legs.append((lab, bub))
            else:
                legs.append((lab, w))
        edges = []
        for (e1, w1), (e2, w2) in graph.edges:
            nw1, nw2 = w1, w2
            if key == ("h", e1):
                nw1 = bub
            if key == ("h", e2):
                nw2 = bub
            edges.append(((e1, nw1), (e2, nw2)))
        edges.append(((h1, v), (h2, bub)))
        g2 = StableGraph(genera, legs, edges, check=False)
        psi2 = {k: e for k, e in psi.items() if k != key}
        if a_i - 1:
            psi2[("h", h1)] = psi2.get(("h", h1), 0) + (a_i - 1)
        out.add_term(-coeff, g2, kappa, psi2)


# -- forgetful pushforward ----------------------------------------------------

def pushforward_forgetful(x: TautClass, label=None) -> TautClass:
    """Push forward along the map forgetting the given leg (default: n).

    Remaining legs are relabeled 1..n-1 preserving order.
    """
    if label is None:
        label = x.n
    out_raw = []
    for coeff, graph, kappa, psi in x.iter_terms():
        out_raw.extend(_pushforward_term(coeff, graph, kappa, psi, label))
    remaining = sorted(set(range(1, x.n + 1)) - {label})
    relabel = {lab: i + 1 for i, lab in enumerate(remaining)}
    out = TautClass(x.g, x.n - 1)
    for coeff, graph, kappa, psi in out_raw:
        g2 = graph.relabel_legs(relabel)
        psi2 = {}
        for key, e in psi.items():
            if key[0] == "l" and key[1] in relabel:
                psi2[("l", relabel[key[1]])] = e
            else:
                psi2[key] = e
        out.add_term(coeff, g2, kappa, psi2)
    return out


def forget_leg_raw(coeff, graph, kappa, psi, label):
    """Pushforward of one term forgetting `label`, labels left as-is."""
    return _pushforward_term(coeff, graph, kappa, psi, label)


def _pushforward_term(coeff, graph, kappa, psi, label):
    v = graph.leg_vertex(label)
    n_after = graph.valence(v) - 1
    if 2 * graph.genera[v] - 2 + n_after > 0:
        return _pushforward_stable(coeff, graph, kappa, psi, label, v)
    return _pushforward_contract(coeff, graph, kappa, psi, label, v)


def _pushforward_stable(coeff, graph, kappa, psi, label, v):
    """pi_* on a vertex that stays stable: kappa/string calculus."""
    key_m = ("l", label)
    a = psi.get(key_m, 0)
    items = [("l", lab) for lab in graph.legs_at(v) if lab != label]
    items += [("h", h) for h in graph.halves_at(v)]
    kap_v = kappa.get(v, {})
    base_graph = graph.without_leg(label)
    out = []
    # kappa expansion: upstairs kappa_a = pi^* kappa_a + psi_m^a
    choices = []
    for ka, kb in sorted(kap_v.items()):
        choices.append([(Fraction(comb(kb, t)), ka, kb - t, ka * t)
                        for t in range(kb + 1)])
    for combo in itertools.product(*choices) if choices else [()]:
        c = coeff
        kv = {}
        s = a
        for cc, ka, rem, extra in combo:
            c *= cc
            if rem:
                kv[ka] = rem
            s += extra
        kap2 = {w: dict(d) for w, d in kappa.items() if w != v}
        if s >= 1:
            # pi_*(pi^*X psi_m^s) = X kappa_{s-1}; kappa_0 is the scalar
            # 2g-2+n of the downstairs vertex
            if s == 1:
                gv = graph.genera[v]
                c *= (2 * gv - 2 + len(items))
            else:
                kv[s - 1] = kv.get(s - 1, 0) + 1
            if kv:
                kap2[v] = kv
            psi2 = {k: e for k, e in psi.items() if k != key_m}
            out.append((c, base_graph, kap2, psi2))
        else:
            # string-equation terms: lower one psi exponent at v
            if kv:
                kap2[v] = kv
            for key in items:
                ai = psi.get(key, 0)
                if ai < 1:
                    continue
                psi2 = {k: e for k, e in psi.items() if k != key_m}
                if ai - 1:
                    psi2[key] = ai - 1
                else:
                    del psi2[key]
                out.append((c, base_graph, kap2, dict(psi2)))
    return out


def _pushforward_contract(coeff, graph, kappa, psi, label, v):
    """pi_* when removing the leg destabilizes its genus-0 vertex."""
    items = [("l", lab) for lab in graph.legs_at(v) if lab != label]
    items += [("h", h) for h in graph.halves_at(v)]
    if graph.genera[v] != 0 or len(items) != 2:
        raise DegreeError(
            f"forgetting leg {label!r} destabilizes the moduli space")
    # decorations on the bubble vertex integrate to zero on Mbar_{0,3}
    if psi.get(("l", label), 0) or kappa.get(v):
        return []
    if any(psi.get(k, 0) for k in items):
        return []
    kinds = sorted(k[0] for k in items)
    partner = graph.partner()
    if kinds == ["l", "l"]:
        raise DegreeError("cannot forget down to an unstable space")
    if kinds == ["h", "l"]:
        h = next(k[1] for k in items if k[0] == "h")
        lab = next(k[1] for k in items if k[0] == "l")
        h_other = partner[h]
        target_v = graph.half_vertex()[h_other]
        if target_v == v:
            raise DegreeError("cannot forget down to an unstable space")
        # delete v and the edge, re-attach the leg at the far vertex
        keep = [w for w in range(graph.num_vertices) if w != v]
        vmap = {w: i for i, w in enumerate(keep)}
        genera = [graph.genera[w] for w in keep]
        legs = [(l2, vmap[w]) for l2, w in graph.legs
                if w != v and l2 != label]
        legs.append((lab, vmap[target_v]))
        edges = [((e1, vmap[w1]), (e2, vmap[w2]))
                 for (e1, w1), (e2, w2) in graph.edges
                 if w1 != v and w2 != v]
        g2 = StableGraph(genera, legs, edges, check=False)
        # psi on the far half becomes psi at the re-attached leg
        psi2 = {}
        for k, e in psi.items():
            if k == ("h", h_other):
                psi2[("l", lab)] = e
            elif k != ("l", label):
                psi2[k] = e
        kap2 = {vmap[w]: dict(d) for w, d in kappa.items() if w != v and d}
        return [(coeff, g2, kap2, psi2)]
    # two half-edges at the bubble
    h1 = items[0][1] if items[0][0] == "h" else items[1][1]
    h2 = items[1][1] if items[1][0] == "h" else items[0][1]
    ha, hb = partner[h1], partner[h2]
    if ha == h2:
        raise DegreeError("cannot forget down to an unstable space")
    keep = [w for w in range(graph.num_vertices) if w != v]
    vmap = {w: i for i, w in enumerate(keep)}
    genera = [graph.genera[w] for w in keep]
    legs = [(l2, vmap[w]) for l2, w in graph.legs
            if w != v and l2 != label]
    edges = []
    for (e1, w1), (e2, w2) in graph.edges:
        if v in (w1, w2):
            continue
        edges.append(((e1, vmap[w1]), (e2, vmap[w2])))
    edges.append(((ha, vmap[graph.half_vertex()[ha]]),
                  (hb, vmap[graph.half_vertex()[hb]])))
    g2 = StableGraph(genera, legs, edges, check=False)
    psi2 = {k: e for k, e in psi.items() if k != ("l", label)}
    kap2 = {vmap[w]: dict(d) for w, d in kappa.items() if w != v and d}
    return [(coeff, g2, kap2, psi2)]


# -- lambda_1 ----------------------------------------------------------------

def lambda1(g) -> TautClass:
    """The Hodge class via 12*lambda = kappa_1 + delta_irr + sum delta_i."""
    if g < 2:
        raise ValidationError("lambda1 needs g >= 2 with no markings")
    out = TautClass.kappa(g, 0, 1)
    irr = StableGraph([g - 1], [], [((0, 0), (1, 0))])
    out = out + TautClass.stratum(irr, normalized=True)
    for i in range(1, g // 2 + 1):
        sep = StableGraph([i, g - i], [], [((0, 0), (1, 1))])
        out = out + TautClass.stratum(sep, normalized=True)
    return out.scale(Fraction(1, 12))


# -- product spaces -----------------------------------------------------------

class Factor:
    """One factor Mbar_{g, legs} of a product space."""

    __slots__ = ("g", "legs")

    def __init__(self, g, legs):
        self.g = g
        self.legs = tuple(legs)

    def dim(self):
        return 3 * self.g - 3 + len(self.legs)

    def key(self):
        return (self.g, tuple(sorted(self.legs, key=repr)))

    def __eq__(self, other):
        return isinstance(other, Factor) and self.key() == other.key()

    def __repr__(self):
        return f"Factor(g={self.g}, legs={self.legs})"


def factors_of_graph(a_graph):
    """The factors of Mbar_A: one per vertex, legs plus half-edge markers."""
    out = []
    for v in range(a_graph.num_vertices):
        legs = list(a_graph.legs_at(v))
        legs += [("h", h) for h in a_graph.halves_at(v)]
        out.append(Factor(a_graph.genera[v], legs))
    return out


class ProductClass:
    """Rational combination of products of decorated strata, one factor
    per vertex of a fixed ambient graph."""

    __slots__ = ("factors", "terms")

    def __init__(self, factors, terms=None):
        self.factors = tuple(factors)
        self.terms = {}  # key -> [coeff, tuple of (graph, kappa, psi)]
        if terms:
            for coeff, fterms in terms:
                self.add_term(coeff, fterms)

    @classmethod
    def zero(cls, factors):
        return cls(factors)

    @classmethod
    def fundamental(cls, factors):
        fterms = tuple((smooth_graph(f.g, len(f.legs), labels=f.legs), {}, {})
                       for f in factors)
        return cls(factors, [(Fraction(1), fterms)])

    @classmethod
    def tensor(cls, classes, leg_maps=None):
        """External product of TautClasses; leg_maps[i] renames the i-th
        class's legs 1..n_i to the factor's leg labels."""
        factors = []
        rel = []
        for i, tc in enumerate(classes):
            mapping = (leg_maps[i] if leg_maps else
                       {j: j for j in range(1, tc.n + 1)})
            factors.append(Factor(tc.g, [mapping[j]
                                         for j in range(1, tc.n + 1)]))
            rel.append(mapping)
        out = cls(factors)
        for combo in itertools.product(*[list(tc.iter_terms())
                                         for tc in classes]):
            coeff = Fraction(1)
            fterms = []
            for (c, graph, kappa, psi), mapping in zip(combo, rel):
                coeff *= c
                g2 = graph.relabel_legs(mapping)
                psi2 = {}
                for key, e in psi.items():
                    if key[0] == "l":
                        psi2[("l", mapping[key[1]])] = e
                    else:
                        psi2[key] = e
                fterms.append((g2, kappa, psi2))
            out.add_term(coeff, tuple(fterms))
        return out

    def add_term(self, coeff, fterms):
        coeff = Fraction(coeff)
        if coeff == 0:
            return
        canon = []
        keys = []
        for graph, kappa, psi in fterms:
            key, gc, kk, pp = canonical_term(graph, kappa, psi)
            canon.append((gc, kk, pp))
            keys.append(key)
        key = tuple(keys)
        entry = self.terms.get(key)
        if entry is None:
            self.terms[key] = [coeff, tuple(canon)]
        else:
            entry[0] += coeff
            if entry[0] == 0:
                del self.terms[key]

    def iter_terms(self):
        for key in sorted(self.terms, key=repr):
            coeff, fterms = self.terms[key]
            yield coeff, fterms

    def _check_space(self, other):
        if len(self.factors) != len(other.factors) or any(
                f1.key() != f2.key() for f1, f2 in
                zip(self.factors, other.factors)):
            raise SpaceMismatch("product spaces differ")

    def __add__(self, other):
        self._check_space(other)
        out = ProductClass(self.factors)
        for coeff, fterms in itertools.chain(self.iter_terms(),
                                             other.iter_terms()):
            out.add_term(coeff, fterms)
        return out

    def __sub__(self, other):
        return self + other.scale(-1)

    def scale(self, c):
        out = ProductClass(self.factors)
        for coeff, fterms in self.iter_terms():
            out.add_term(Fraction(c) * coeff, fterms)
        return out

    def __eq__(self, other):
        if not isinstance(other, ProductClass):
            return NotImplemented
        if len(self.factors) != len(other.factors):
            return False
        if set(self.terms) != set(other.terms):
            return False
        return all(self.terms[k][0] == other.terms[k][0] for k in self.terms)

    def is_zero(self):
        return not self.terms

    def multiply(self, other, budget=None):
        """Factorwise intersection product of two product classes."""
        self._check_space(other)
        out = ProductClass(self.factors)
        for c1, ft1 in self.iter_terms():
            for c2, ft2 in other.iter_terms():
                partials = [(Fraction(1), ())]
                for (ga, ka, pa), (gb, kb, pb), factor in zip(
                        ft1, ft2, self.factors):
                    results = _factor_product(ga, ka, pa, gb, kb, pb, budget)
                    new_partials = []
                    for cp, acc in partials:
                        for cr, gr, kr, pr in results:
                            new_partials.append((cp * cr,
                                                 acc + ((gr, kr, pr),)))
                    partials = new_partials
                for cp, acc in partials:
                    out.add_term(c1 * c2 * cp, acc)
        return out

    def total_degree_check(self):
        dims = sum(f.dim() for f in self.factors)
        for coeff, fterms in self.iter_terms():
            d = sum(g.num_edges + dec_degree(k, p) for g, k, p in fterms)
            if d != dims:
                raise DegreeError("product-class term is not top degree")

    def evaluate(self, cache=None):
        """Integrate over the product; factor degree mismatches give 0."""
        self.total_degree_check()
        total = Fraction(0)
        for coeff, fterms in self.iter_terms():
            val = coeff
            for (graph, kappa, psi), factor in zip(fterms, self.factors):
                d = graph.num_edges + dec_degree(kappa, psi)
                if d != factor.dim():
                    val = Fraction(0)
                    break
                val *= _integrate_term(graph, kappa, psi, cache)
                if val == 0:
                    break
            total += val
        return total

    def forget_factor_legs(self, forget_by_factor):
        """Push forward forgetting the named legs on each factor."""
        new_factors = []
        for f, drop in zip(self.factors, forget_by_factor):
            new_factors.append(Factor(f.g, [l for l in f.legs
                                            if l not in set(drop)]))
        out = ProductClass(new_factors)
        for coeff, fterms in self.iter_terms():
            partials = [(coeff, ())]
            for (graph, kappa, psi), drop in zip(fterms, forget_by_factor):
                expanded = [(Fraction(1), graph, kappa, psi)]
                for lab in drop:
                    nxt = []
                    for c, g2, k2, p2 in expanded:
                        nxt.extend((c * cc, g3, k3, p3) for cc, g3, k3, p3
                                   in [(t[0], t[1], t[2], t[3])
                                       for t in forget_leg_raw(
                                           Fraction(1), g2, k2, p2, lab)])
                    expanded = nxt
                new_partials = []
                for cp, acc in partials:
                    for c, g2, k2, p2 in expanded:
                        new_partials.append((cp * c, acc + ((g2, k2, p2),)))
                partials = new_partials
            for cp, acc in partials:
                out.add_term(cp, acc)
        return out

    def __repr__(self):
        return (f"ProductClass({len(self.factors)} factors, "
                f"{len(self.terms)} terms)")


def _factor_product(ga, ka, pa, gb, kb, pb, budget=None):
    """Product of two decorated strata on one factor space."""
    out = []
    for gamma, f_mor, g_mor in enumerate_generic_AB(ga, gb, budget=budget):
        for cf, kf, pf in pull_decoration(f_mor, ka, pa):
            for cg, kg, pg in pull_decoration(g_mor, kb, pb):
                kk, pp = dec_multiply(kf, pf, kg, pg)
                for ce, pe in _excess_terms(gamma, f_mor, g_mor):
                    k3, p3 = dec_multiply(kk, pp, {}, pe)
                    out.append((cf * cg * ce, gamma, k3, p3))
    return out


# -- boundary pullback and pushforward ---------------------------------------

def pullback_boundary(a_graph: StableGraph, x: TautClass,
                      budget=None) -> ProductClass:
    """xi_A^* x as a class on the product space Mbar_A."""
    if (x.g, x.n) != a_graph.space():
        raise SpaceMismatch("graph type does not match the class's space")
    factors = factors_of_graph(a_graph)
    out = ProductClass(factors)
    for coeff, graph, kappa, psi in x.iter_terms():
        for gamma, f_mor, g_mor in enumerate_generic_AB(a_graph, graph,
                                                        budget=budget):
            pieces = morphism_pieces(f_mor)
            for cg, kg, pg in pull_decoration(g_mor, kappa, psi):
                for ce, pe in _excess_terms(gamma, f_mor, g_mor):
                    kk, pp = dec_multiply(kg, pg, {}, pe)
                    fterms = _split_term_to_pieces(gamma, f_mor, pieces,
                                                   kk, pp)
                    out.add_term(coeff * cg * ce, fterms)
    return out


def _split_term_to_pieces(gamma, f_mor, pieces, kappa, psi):
    """Distribute a decorated term on Gamma over the pieces of f."""
    from .graphs import cut_edges
    image = set(f_mor.beta.values())
    inv_beta = {hs: ht for ht, hs in f_mor.beta.items()}
    # vertex -> (piece, local vertex): recompute like morphism_pieces
    cut_idx = {i for i, ((h1, _), (h2, _)) in enumerate(gamma.edges)
               if h1 in image}
    raw_pieces, vmap = cut_edges(gamma, cut_idx,
                                 leg_namer=lambda h: ("h", inv_beta[h]))
    # map the raw piece list onto the target-vertex indexed pieces
    piece_for_target = {}
    for v in range(gamma.num_vertices):
        piece_for_target[f_mor.alpha[v]] = vmap[v][0]
    fterms = []
    for a in range(f_mor.target.num_vertices):
        pi = piece_for_target[a]
        graph = raw_pieces[pi]
        kap = {}
        for v, d in kappa.items():
            if vmap[v][0] == pi and d:
                kap[vmap[v][1]] = dict(d)
        ps = {}
        hv = gamma.half_vertex()
        for key, e in psi.items():
            if not e:
                continue
            if key[0] == "l":
                lab_vertex = gamma.leg_vertex(key[1])
                if vmap[lab_vertex][0] == pi:
                    ps[key] = e
            else:
                h = key[1]
                if h in image:
                    # cut half-edge: psi lives on the new boundary leg
                    if vmap[hv[h]][0] == pi:
                        ps[("l", ("h", inv_beta[h]))] = e
                else:
                    if vmap[hv[h]][0] == pi:
                        ps[key] = e
        fterms.append((graph, kap, ps))
    return tuple(fterms)


def pushforward_boundary(a_graph: StableGraph, pc: ProductClass) -> TautClass:
    """xi_{A*}: graft per-factor strata into A along its edges."""
    expected = factors_of_graph(a_graph)
    if len(pc.factors) != len(expected) or any(
            f1.key() != f2.key() for f1, f2 in zip(pc.factors, expected)):
        raise SpaceMismatch("product class does not match the graph")
    g_total, n_total = a_graph.space()
    out = TautClass(g_total, n_total)
    for coeff, fterms in pc.iter_terms():
        genera = []
        legs = []
        edges = []
        kappa = {}
        psi = {}
        marker_vertex = {}  # ("h", A-half) -> grafted vertex index
        marker_exp = {}     # ("h", A-half) -> psi exponent carried by it
        offset_v = 0
        next_h = 0
        for (graph, kap, ps) in fterms:
            hmap = {}
            for h in graph.half_vertex():
                hmap[h] = next_h
                next_h += 1
            genera.extend(graph.genera)
            for (h1, v1), (h2, v2) in graph.edges:
                edges.append(((hmap[h1], v1 + offset_v),
                              (hmap[h2], v2 + offset_v)))
            for lab, v in graph.legs:
                if isinstance(lab, tuple) and lab[0] == "h":
                    marker_vertex[lab] = v + offset_v
                else:
                    legs.append((lab, v + offset_v))
            for v, d in kap.items():
                if d:
                    kappa[v + offset_v] = dict(d)
            for key, e in ps.items():
                if not e:
                    continue
                if key[0] == "l" and isinstance(key[1], tuple) \
                        and key[1][0] == "h":
                    marker_exp[key[1]] = e
                elif key[0] == "h":
                    psi[("h", hmap[key[1]])] = e
                else:
                    psi[key] = e
            offset_v += graph.num_vertices
        for (h1, _), (h2, _) in a_graph.edges:
            m1, m2 = ("h", h1), ("h", h2)
            if m1 not in marker_vertex or m2 not in marker_vertex:
                raise ValidationError(
                    f"factor classes miss boundary marker {m1} or {m2}")
            edges.append(((next_h, marker_vertex[m1]),
                          (next_h + 1, marker_vertex[m2])))
            if marker_exp.get(m1):
                psi[("h", next_h)] = marker_exp[m1]
            if marker_exp.get(m2):
                psi[("h", next_h + 1)] = marker_exp[m2]
            next_h += 2
        graft = StableGraph(genera, legs, edges, check=False)
        out.add_term(coeff, graft, kappa, psi)
    return out
