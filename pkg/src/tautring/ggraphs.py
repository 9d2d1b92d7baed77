"""Admissible G-graphs: group actions on stable graphs with stabilizer
data, their quotients, and the enumeration of generic contraction
structures onto a fixed stable graph.

Enumeration runs quotient-first: candidate quotient shapes are stable
graphs of the target type; each vertex gets a stabilizer subgroup, each
branch leg a placement coset, each quotient edge a monodromy element and
a gluing coset.  The induced-orbit construction assembles the covering
graph, which is then checked (Riemann-Hurwitz integrality, stability,
local nonemptiness, connectivity) and equipped with contraction
structures, deduplicated modulo equivariant isomorphism.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

from .covers import HurwitzSpec, degree_delta, target_genus
from .graphs import (BudgetExceeded, StableGraph, ValidationError,
                     automorphisms_cached, enumerate_A_structures,
                     enumerate_graphs, graph_isomorphisms)
from .groups import GroupSpec


class GGraphError(ValidationError):
    """Raised when admissible G-graph data is inconsistent."""


class GroupActionOnGraph:
    """A G-action: per element, permutations of vertices, halves, legs."""

    def __init__(self, group: GroupSpec, vperm, hperm, lperm):
        # vperm: dict elem -> tuple (vertex -> vertex)
        # hperm: dict elem -> dict (half id -> half id)
        # lperm: dict elem -> dict (leg label -> leg label)
        self.group = group
        self.vperm = {t: tuple(p) for t, p in vperm.items()}
        self.hperm = {t: dict(p) for t, p in hperm.items()}
        self.lperm = {t: dict(p) for t, p in lperm.items()}

    def on_vertex(self, t, v):
        return self.vperm[t][v]

    def on_half(self, t, h):
        return self.hperm[t][h]

    def on_leg(self, t, lab):
        return self.lperm[t][lab]

    def validate(self, graph: StableGraph):
        G = self.group
        hv = graph.half_vertex()
        partner = graph.partner()
        for t in G.elements():
            if t not in self.vperm:
                raise GGraphError(f"action missing element {t}")
            for v in range(graph.num_vertices):
                if graph.genera[self.on_vertex(t, v)] != graph.genera[v]:
                    raise GGraphError("action does not preserve genus")
            for lab, v in graph.legs:
                if graph.leg_vertex(self.on_leg(t, lab)) != \
                        self.on_vertex(t, v):
                    raise GGraphError("action incompatible with legs")
            for h, v in hv.items():
                if hv[self.on_half(t, h)] != self.on_vertex(t, v):
                    raise GGraphError("action incompatible with attachment")
                if self.on_half(t, partner[h]) != partner[self.on_half(t, h)]:
                    raise GGraphError("action incompatible with involution")
        for s in G.elements():
            for t in G.elements():
                st = G.mul(s, t)
                for v in range(graph.num_vertices):
                    if self.on_vertex(s, self.on_vertex(t, v)) != \
                            self.on_vertex(st, v):
                        raise GGraphError("vertex action not a homomorphism")
        return self

    def vertex_orbit(self, v):
        return sorted({self.on_vertex(t, v) for t in self.group.elements()})

    def vertex_stabilizer(self, v):
        return [t for t in self.group.elements() if self.on_vertex(t, v) == v]

    def half_stabilizer(self, h):
        return [t for t in self.group.elements() if self.on_half(t, h) == h]

    def leg_stabilizer(self, lab):
        return [t for t in self.group.elements() if self.on_leg(t, lab) == lab]


class AdmissibleGGraph:
    """Stable graph with a G-action and stabilizer generators h_l."""

    def __init__(self, graph: StableGraph, action: GroupActionOnGraph, stab):
        self.graph = graph
        self.action = action
        self.group = action.group
        # stab: dict ("l", label) or ("h", half_id) -> group element
        self.stab = dict(stab)

    def stab_of(self, key):
        return self.stab[key]

    def validate(self, check_nonempty=True, budget=2_000_000):
        g = self.graph
        g.validate()
        self.action.validate(g)
        G = self.group
        partner = g.partner()
        for lab, _ in g.legs:
            self._check_stab(("l", lab), self.action.leg_stabilizer(lab))
        for h in g.half_vertex():
            self._check_stab(("h", h), self.action.half_stabilizer(h))
            if self.stab[("h", partner[h])] != G.inv(self.stab[("h", h)]):
                raise GGraphError(
                    f"edge condition h_iota = h^-1 fails at half {h}")
        # no element may flip an edge
        for (h1, _), (h2, _) in g.edges:
            for t in G.elements():
                if self.action.on_half(t, h1) == h2:
                    raise GGraphError(
                        f"element {t} flips the edge ({h1},{h2})")
        if check_nonempty:
            for v in self.vertex_orbit_reps():
                gv, sub, xi, _keys = self.local_monodromy(v)
                if target_genus(gv, sub, xi) is None or \
                        degree_delta(target_genus(gv, sub, xi), group=sub,
                                     xi=xi, budget=budget) <= 0:
                    raise GGraphError(
                        f"local space at vertex {v} is empty: "
                        f"({gv}, {sub.kind}, {xi})")
        return self

    def _check_stab(self, key, stab_elements):
        if key not in self.stab:
            raise GGraphError(f"missing stabilizer datum for {key}")
        h = self.stab[key]
        if sorted(self.group.cyclic_subgroup(h)) != sorted(stab_elements):
            raise GGraphError(
                f"stabilizer datum {h} does not generate the stabilizer "
                f"of {key}")

    # -- orbits ----------------------------------------------------------

    def vertex_orbit_reps(self):
        seen = set()
        reps = []
        for v in range(self.graph.num_vertices):
            if v in seen:
                continue
            orb = self.action.vertex_orbit(v)
            seen.update(orb)
            reps.append(min(orb))
        return reps

    def leg_orbits(self):
        seen = set()
        orbits = []
        for lab, _ in sorted(self.graph.legs, key=lambda t: repr(t[0])):
            if lab in seen:
                continue
            orb = sorted({self.action.on_leg(t, lab)
                          for t in self.group.elements()}, key=repr)
            seen.update(orb)
            orbits.append(orb)
        return orbits

    def half_orbits(self):
        seen = set()
        orbits = []
        for h in sorted(self.graph.half_vertex(), key=repr):
            if h in seen:
                continue
            orb = sorted({self.action.on_half(t, h)
                          for t in self.group.elements()}, key=repr)
            seen.update(orb)
            orbits.append(orb)
        return orbits

    def local_monodromy(self, v):
        """(genus, stabilizer GroupSpec, xi tuple, marking keys).

        Markings of the local cover at v are the legs and half-edges
        incident to v, one representative per orbit of the vertex
        stabilizer, legs first (sorted by label) then halves; xi lists
        the stabilizer generators expressed in the subgroup.
        """
        g = self.graph
        G = self.group
        stab_elems = self.action.vertex_stabilizer(v)
        sub, incl = G.subgroup_spec(stab_elems)
        to_sub = {old: new for new, old in enumerate(incl)}
        keys = []
        seen = set()
        for lab in sorted(g.legs_at(v), key=repr):
            if ("l", lab) in seen:
                continue
            orb = {("l", self.action.on_leg(t, lab)) for t in stab_elems}
            seen.update(orb)
            keys.append(("l", lab))
        for h in sorted(g.halves_at(v), key=repr):
            if ("h", h) in seen:
                continue
            orb = {("h", self.action.on_half(t, h)) for t in stab_elems}
            seen.update(orb)
            keys.append(("h", h))
        xi = tuple(to_sub[self.stab[k]] for k in keys)
        return g.genera[v], sub, xi, keys

    def quotient(self):
        """(quotient graph, vertex/ leg/ half projection dicts).

        Quotient legs are labeled 1..(number of leg orbits) in the order
        of increasing minimal member; quotient vertex genera are the
        local target genera.
        """
        g = self.graph
        vreps = self.vertex_orbit_reps()
        vproj = {}
        for i, rep in enumerate(vreps):
            for v in self.action.vertex_orbit(rep):
                vproj[v] = i
        genera = []
        for rep in vreps:
            gv, sub, xi, _ = self.local_monodromy(rep)
            gq = target_genus(gv, sub, xi)
            if gq is None:
                raise GGraphError(f"no target genus at vertex {rep}")
            genera.append(gq)
        lorbits = self.leg_orbits()
        lproj = {}
        legs = []
        for i, orb in enumerate(lorbits, start=1):
            for lab in orb:
                lproj[lab] = i
            legs.append((i, vproj[g.leg_vertex(orb[0])]))
        horbit = self.half_orbits()
        hproj = {}
        for orb in horbit:
            for h in orb:
                hproj[h] = orb[0]
        partner = g.partner()
        hv = g.half_vertex()
        edges = []
        seen = set()
        for orb in horbit:
            h = orb[0]
            if h in seen:
                continue
            h2 = hproj[partner[h]]
            if h2 == h:
                raise GGraphError("involution has a fixed point on H/G")
            seen.add(h)
            seen.add(h2)
            edges.append(((h, vproj[hv[h]]), (h2, vproj[hv[hproj[partner[h]]]])))
        quotient = StableGraph(genera, legs, edges)
        return quotient, vproj, lproj, hproj

    def aut_count_equivariant(self):
        return len(self.equivariant_automorphisms())

    def equivariant_automorphisms(self):
        """All graph automorphisms commuting with the action and
        preserving the stabilizer data."""
        out = []
        for vmap, hmap in graph_isomorphisms(self.graph, self.graph):
            if self._compatible_iso(self, vmap, hmap):
                out.append((vmap, hmap))
        return out

    def _compatible_iso(self, other, vmap, hmap):
        """Does (vmap, hmap): self -> other intertwine actions and stab?"""
        G = self.group
        for t in G.elements():
            for v in range(self.graph.num_vertices):
                if vmap[self.action.on_vertex(t, v)] != \
                        other.action.on_vertex(t, vmap[v]):
                    return False
            for h in self.graph.half_vertex():
                if hmap[self.action.on_half(t, h)] != \
                        other.action.on_half(t, hmap[h]):
                    return False
            for lab, _ in self.graph.legs:
                if self.action.on_leg(t, lab) != other.action.on_leg(t, lab):
                    return False
        for (key, h_el) in self.stab.items():
            if key[0] == "h":
                if other.stab[("h", hmap[key[1]])] != h_el:
                    return False
            else:
                if other.stab[key] != h_el:
                    return False
        return True

    def degree_delta(self, budget=2_000_000):
        """Degree of the target map: product of the local degrees."""
        deg = Fraction(1)
        for v in self.vertex_orbit_reps():
            gv, sub, xi, _ = self.local_monodromy(v)
            gq = target_genus(gv, sub, xi)
            if gq is None:
                return Fraction(0)
            deg *= degree_delta(gq, group=sub, xi=xi, budget=budget)
        return deg

    def __repr__(self):
        return (f"AdmissibleGGraph({self.graph!r}, G={self.group.kind})")


class EquivAStructure:
    """A generic contraction structure on an admissible G-graph."""

    def __init__(self, ggraph: AdmissibleGGraph, mor):
        self.ggraph = ggraph
        self.mor = mor  # GraphMorphism: ggraph.graph -> target

    def is_generic(self):
        image = set(self.mor.beta.values())
        halves = set(self.ggraph.graph.half_vertex())
        hit = set()
        for h in image:
            for t in self.ggraph.group.elements():
                hit.add(self.ggraph.action.on_half(t, h))
        return hit == halves

    def orbit_edge_counts(self):
        """Per edge orbit: (representative edge in the image, k) where k is
        the number of target edges mapping into the orbit."""
        gg = self.ggraph
        partner = gg.graph.partner()
        image_halves = set(self.mor.beta.values())
        orbit_of = {}
        for orb in gg.half_orbits():
            for h in orb:
                orbit_of[h] = orb[0]
        # edges grouped by the orbit of their smaller half
        edge_orbits = {}
        for (h1, _), (h2, _) in gg.graph.edges:
            key = min(orbit_of[h1], orbit_of[h2], key=repr)
            edge_orbits.setdefault(key, []).append((h1, h2))
        out = []
        for key, edges in sorted(edge_orbits.items(), key=lambda kv: repr(kv[0])):
            in_image = [e for e in edges if e[0] in image_halves
                        or e[1] in image_halves]
            if not in_image:
                raise GGraphError("structure is not generic")
            out.append((in_image, len(in_image)))
        return out

    def excess_terms(self):
        """Expansion of prod over extra image edges of (-psi_h - psi_h').

        Returns a list of (coefficient, psi dict on the source graph).
        """
        out = [(Fraction(1), {})]
        for in_image, k in self.orbit_edge_counts():
            for h1, h2 in in_image[1:]:
                new = []
                for coeff, psi in out:
                    for h in (h1, h2):
                        p2 = dict(psi)
                        p2[("h", h)] = p2.get(("h", h), 0) + 1
                        new.append((-coeff, p2))
                out = new
        return out

    def excess_degree(self):
        return sum(k - 1 for _, k in self.orbit_edge_counts())


# -- quotient-first enumeration ---------------------------------------------

_QPOOL_CACHE = {}


def _quotient_pool(gprime, b, max_edges):
    key = (gprime, b, max_edges)
    if key not in _QPOOL_CACHE:
        _QPOOL_CACHE[key] = enumerate_graphs(gprime, b, max_edges)
    return _QPOOL_CACHE[key]


_COSET_CACHE = {}


def _coset_table(group, subgroup_elems):
    """Map element -> minimal representative of its left coset a*H."""
    key = (group.key(), tuple(subgroup_elems))
    tab = _COSET_CACHE.get(key)
    if tab is None:
        tab = {}
        for a in group.elements():
            coset = [group.mul(a, s) for s in subgroup_elems]
            tab[a] = min(coset)
        _COSET_CACHE[key] = tab
    return tab


def _coset_reps(group, subgroup_elems):
    """Deterministic left-coset representatives of a subgroup."""
    tab = _coset_table(group, subgroup_elems)
    return sorted(set(tab.values()))


def _coset_rep_of(group, subgroup_elems, a):
    return _coset_table(group, subgroup_elems)[a]


_SUBSPEC_CACHE = {}


def _subgroup_spec_cached(group, subgroup_elems):
    key = (group.key(), tuple(subgroup_elems))
    out = _SUBSPEC_CACHE.get(key)
    if out is None:
        out = group.subgroup_spec(list(subgroup_elems))
        _SUBSPEC_CACHE[key] = out
    return out


def enumerate_generic_A_structures(spec: HurwitzSpec, b_graph: StableGraph,
                                   budget=None):
    """The set of isomorphism classes of generic structures (Gamma, G, f)
    over the spec whose contraction target is b_graph.

    b_graph must be a stable graph of type (spec.g, spec.r) with legs
    labeled 1..r matching spec.marking_layout() order.

    Deduplication factorizes: equivariant isomorphism classes of the
    G-graphs first (by a canonical key), then orbit reduction of the raw
    contraction structures under each G-graph's equivariant automorphisms.
    """
    g_total, r = b_graph.space()
    if g_total != spec.g or r != spec.r:
        raise ValidationError(
            f"graph type ({g_total},{r}) does not match spec "
            f"({spec.g},{spec.r})")
    if sorted(b_graph.leg_labels()) != list(range(1, spec.r + 1)):
        raise ValidationError("legs must be labeled 1..r")
    seen_gg = {}
    count = 0
    for gg in _candidate_ggraphs(spec, b_graph, budget):
        count += 1
        if budget is not None and count > budget:
            raise BudgetExceeded("generic structure enumeration budget")
        key = _gg_canonical_key(gg)
        if key not in seen_gg:
            seen_gg[key] = gg
    out = []
    for key in sorted(seen_gg, key=repr):
        gg = seen_gg[key]
        halves = set(gg.graph.half_vertex())
        auts = gg.equivariant_automorphisms()
        seen_f = set()
        for mor in enumerate_A_structures(gg.graph, b_graph):
            hit = set()
            for h in mor.beta.values():
                for t in spec.group.elements():
                    hit.add(gg.action.on_half(t, h))
            if hit != halves:
                continue
            orbit_key = min(repr(mor.precompose(vmap, hmap, gg.graph).key())
                            for vmap, hmap in auts)
            if orbit_key in seen_f:
                continue
            seen_f.add(orbit_key)
            out.append(EquivAStructure(gg, mor))
    return out


def _gg_canonical_key(gg: AdmissibleGGraph):
    """Canonical key identifying an admissible G-graph up to equivariant
    isomorphism fixing the legs."""
    graph = gg.graph
    G = gg.group
    gc, vmap, hmap = graph.canonical_relabel()
    best = None
    for avm, ahm in automorphisms_cached(gc):
        total_v = {old: avm[vmap[old]] for old in vmap}
        total_h = {old: ahm[hmap[old]] for old in hmap}
        inv_tv = {new: old for old, new in total_v.items()}
        inv_th = {new: old for old, new in total_h.items()}
        act_enc = []
        for t in G.elements():
            vp = tuple(total_v[gg.action.on_vertex(t, inv_tv[i])]
                       for i in range(graph.num_vertices))
            hp = tuple(sorted((i, total_h[gg.action.on_half(t, inv_th[i])])
                              for i in inv_th))
            lp = tuple(sorted((repr(lab),
                               repr(gg.action.on_leg(t, lab)))
                              for lab, _ in graph.legs))
            act_enc.append((vp, hp, lp))
        stab_enc = []
        for key, el in gg.stab.items():
            if key[0] == "h":
                stab_enc.append((("h", total_h[key[1]]), el))
            else:
                stab_enc.append(((key[0], repr(key[1])), el))
        cand = (tuple(act_enc), tuple(sorted(stab_enc, key=repr)))
        if best is None or repr(cand) < repr(best):
            best = cand
    return ((gc.genera, gc.legs, gc.edges), best)


def _equiv_structure_iso(s1: EquivAStructure, s2: EquivAStructure):
    """Equivariant isomorphism intertwining the contraction structures."""
    g1, g2 = s1.ggraph.graph, s2.ggraph.graph
    for vmap, hmap in graph_isomorphisms(g1, g2):
        if not s1.ggraph._compatible_iso(s2.ggraph, vmap, hmap):
            continue
        if s2.mor.precompose(vmap, hmap, g1).key() == s1.mor.key():
            return True
    return False


def _candidate_ggraphs(spec: HurwitzSpec, b_graph: StableGraph, budget=None):
    """Yield admissible G-graph candidates compatible with b_graph."""
    G = spec.group
    layout = spec.marking_layout()
    eb = b_graph.num_edges
    if eb == 0:
        min_edges, max_edges = 0, 0
    else:
        min_edges = 1
        max_edges = eb
    # markings grouped by branch index
    branch_markings = {}
    for k, (i, a, e) in enumerate(layout, start=1):
        branch_markings.setdefault(i, []).append((k, a, e))
    b_leg_vertex = {lab: v for lab, v in b_graph.legs}
    b_vertex_legs = [set(b_graph.legs_at(v))
                     for v in range(b_graph.num_vertices)]
    full_order = G.order
    for quotient in _quotient_pool(spec.gprime, spec.b, max_edges):
        if quotient.num_edges < min_edges and eb > 0:
            continue
        # orbit count cannot exceed the number of b_graph edges, and the
        # total number of covering edges must reach it
        if quotient.num_edges > eb:
            continue
        if quotient.num_edges * full_order < eb:
            continue
        if not _leg_refinement_ok(spec, quotient, branch_markings,
                                  b_vertex_legs):
            continue
        yield from _lift_quotient(spec, quotient, branch_markings, budget)


def _leg_refinement_ok(spec, quotient, branch_markings, b_vertex_legs):
    """Quotient vertices carrying a full-stabilizer branch are covered by a
    single vertex, so all their markings must fit inside one b-vertex."""
    G = spec.group
    for v in range(quotient.num_vertices):
        branches = quotient.legs_at(v)
        if not any(spec.group.element_order(spec.xi[i - 1]) == G.order
                   for i in branches):
            continue
        markings = set()
        for i in branches:
            markings.update(k for k, _a, _e in branch_markings[i])
        if not any(markings <= legs for legs in b_vertex_legs):
            return False
    return True


_LOCAL_OK_CACHE = {}


def _local_feasible(group, sub, gq, entries):
    """Is the local space over a genus-gq vertex with these stabilizer
    entries (elements of the ambient group lying in sub) nonempty with an
    integral source genus, and what is that genus?  Returns g or None."""
    key = (group.key(), tuple(sub), gq, tuple(sorted(entries)))
    if key in _LOCAL_OK_CACHE:
        return _LOCAL_OK_CACHE[key]
    spec_sub, incl = _subgroup_spec_cached(group, tuple(sub))
    to_sub = {old: new for new, old in enumerate(incl)}
    result = None
    if all(e in to_sub for e in entries):
        xi_sub = tuple(to_sub[e] for e in entries)
        order = len(sub)
        ram = sum(order - order // spec_sub.element_order(h) for h in xi_sub)
        num = order * (2 * gq - 2) + ram + 2
        if num >= 0 and num % 2 == 0:
            gw = num // 2
            n_w = sum(order // spec_sub.element_order(h) for h in xi_sub)
            if gw >= 0 and 2 * gw - 2 + n_w > 0 and \
                    target_genus(gw, spec_sub, xi_sub) == gq and \
                    degree_delta(gq, group=spec_sub, xi=xi_sub) > 0:
                result = gw
    _LOCAL_OK_CACHE[key] = result
    return result


def _lift_quotient(spec, quotient, branch_markings, budget=None):
    """All admissible G-graphs over one quotient shape.

    Backtracks over quotient edges, checking each vertex's local
    Riemann-Hurwitz integrality, stability and nonemptiness as soon as all
    its incidences are fixed.
    """
    G = spec.group
    subs = _subgroups_cached(G)
    nv = quotient.num_vertices
    vertex_options = []
    for w in range(nv):
        opts = []
        for sub in subs:
            sub_set = set(sub)
            leg_choices = []
            ok = True
            for i in quotient.legs_at(w):
                h_i = spec.xi[i - 1]
                stab_i = set(G.cyclic_subgroup(h_i))
                cosets = []
                for c in _coset_reps(G, sub):
                    ci = G.inv(c)
                    if all(G.mul(G.mul(ci, s), c) in sub_set for s in stab_i):
                        cosets.append(c)
                if not cosets:
                    ok = False
                    break
                leg_choices.append((i, cosets))
            if ok:
                opts.append((sub, leg_choices))
        vertex_options.append(opts)

    edges = list(quotient.edges)
    # process edges so that low-index vertices complete early
    edge_order = sorted(range(len(edges)),
                        key=lambda i: (max(edges[i][0][1], edges[i][1][1]),
                                       i))
    incident = [[] for _ in range(nv)]
    for i, ((h1, w1), (h2, w2)) in enumerate(edges):
        incident[w1].append(i)
        if w2 != w1:
            incident[w2].append(i)
    complete_after = [None] * len(edge_order)
    for pos in range(len(edge_order)):
        done = set(edge_order[:pos + 1])
        newly = [w for w in range(nv)
                 if set(incident[w]) <= done
                 and (pos == 0 or not set(incident[w]) <=
                      set(edge_order[:pos]))]
        complete_after[pos] = newly

    def edge_options(sub1, sub2):
        out = []
        sub2_set = set(sub2)
        for mu in sub1:
            mu_inv = G.inv(mu)
            seen_d = set()
            for d in G.elements():
                mu2 = G.mul(G.mul(G.inv(d), mu_inv), d)
                if mu2 not in sub2_set:
                    continue
                coset = frozenset(G.mul(d, s)
                                  for s in G.cyclic_subgroup(mu2))
                if coset in seen_d:
                    continue
                seen_d.add(coset)
                out.append((mu, d, mu2))
        return out

    for combo in itertools.product(*vertex_options):
        sub_of = [c[0] for c in combo]
        leg_coset_lists = [c[1] for c in combo]
        per_edge = {}
        feasible = True
        for i, ((h1, w1), (h2, w2)) in enumerate(edges):
            opts = edge_options(sub_of[w1], sub_of[w2])
            if not opts:
                feasible = False
                break
            per_edge[i] = opts
        if not feasible:
            continue
        leg_products = [list(itertools.product(*[cs for _, cs in choices]))
                        if choices else [()]
                        for choices in leg_coset_lists]
        for leg_combo in itertools.product(*leg_products):
            base_entries = [[] for _ in range(nv)]
            ok = True
            for w, choices in enumerate(leg_coset_lists):
                for (i, _cs), c in zip(choices, leg_combo[w]):
                    h_i = spec.xi[i - 1]
                    base_entries[w].append(
                        G.mul(G.mul(G.inv(c), h_i), c))
            if not edges:
                for w in range(nv):
                    if _local_feasible(G, sub_of[w], quotient.genera[w],
                                       base_entries[w]) is None:
                        ok = False
                        break
                if ok:
                    gg = _assemble(spec, quotient, sub_of, leg_coset_lists,
                                   leg_combo, (), branch_markings)
                    if gg is not None:
                        yield gg
                continue

            chosen = [None] * len(edges)
            entries = [list(b) for b in base_entries]

            def backtrack(pos):
                if pos == len(edge_order):
                    gg = _assemble(spec, quotient, sub_of, leg_coset_lists,
                                   leg_combo, tuple(chosen), branch_markings)
                    if gg is not None:
                        yield gg
                    return
                eidx = edge_order[pos]
                (h1, w1), (h2, w2) = edges[eidx]
                for mu, d, mu2 in per_edge[eidx]:
                    chosen[eidx] = (mu, d, mu2)
                    entries[w1].append(mu)
                    entries[w2].append(mu2)
                    good = True
                    for w in complete_after[pos]:
                        if _local_feasible(G, sub_of[w], quotient.genera[w],
                                           entries[w]) is None:
                            good = False
                            break
                    if good:
                        yield from backtrack(pos + 1)
                    entries[w1].pop()
                    entries[w2].pop()
                    chosen[eidx] = None

            yield from backtrack(0)


_SUBGROUPS_CACHE = {}


def _subgroups_cached(G):
    key = G.key()
    if key not in _SUBGROUPS_CACHE:
        _SUBGROUPS_CACHE[key] = G.all_subgroups()
    return _SUBGROUPS_CACHE[key]


def _assemble(spec, quotient, sub_of, leg_coset_lists, leg_combo,
              edge_combo, branch_markings):
    """Build the covering admissible G-graph; None when any check fails."""
    G = spec.group
    nv = quotient.num_vertices
    # vertices: (w, coset rep)
    vertex_index = {}
    genera_slots = []
    vert_list = []
    for w in range(nv):
        for rep in _coset_reps(G, sub_of[w]):
            vertex_index[(w, rep)] = len(vert_list)
            vert_list.append((w, rep))
            genera_slots.append(None)

    def vert_of(w, a):
        return vertex_index[(w, _coset_rep_of(G, sub_of[w], a))]

    # legs: markings attach via their branch's placement coset
    legs = []
    leg_vertex_map = {}
    stab = {}
    placement = {}
    for w, choices in enumerate(leg_coset_lists):
        for (i, _cosets), c in zip(choices, leg_combo[w]):
            placement[i] = (w, c)
    for i, markings in branch_markings.items():
        if i not in placement:
            return None
        w, c = placement[i]
        h_i = spec.xi[i - 1]
        for (k, a, e) in markings:
            v = vert_of(w, G.mul(a, c))
            legs.append((k, v))
            leg_vertex_map[k] = v
            stab[("l", k)] = G.conj(h_i, a)

    # half-edge orbits per quotient half
    half_ids = {}
    half_attach = {}
    mu_of_half = {}
    hv = quotient.half_vertex()
    for eidx, ((h1, w1), (h2, w2)) in enumerate(quotient.edges):
        mu1, d, mu2 = edge_combo[eidx]
        for (hq, w, mu) in ((h1, w1, mu1), (h2, w2, mu2)):
            stab_mu = G.cyclic_subgroup(mu)
            reps = _coset_reps(G, stab_mu)
            for a in reps:
                hid = ("ge", eidx, hq, a)
                half_ids[(hq, a)] = hid
                half_attach[hid] = vert_of(w, a)
                stab[("h", hid)] = G.conj(mu, a)
            mu_of_half[hq] = (mu, stab_mu, reps)

    edges = []
    for eidx, ((h1, w1), (h2, w2)) in enumerate(quotient.edges):
        mu1, d, mu2 = edge_combo[eidx]
        stab2 = G.cyclic_subgroup(mu2)
        for a in mu_of_half[h1][2]:
            b = _coset_rep_of(G, stab2, G.mul(a, d))
            x = half_ids[(h1, a)]
            y = half_ids[(h2, b)]
            edges.append(((x, half_attach[x]), (y, half_attach[y])))
    # each y must occur exactly once
    used = [h for (x, _), (y, _) in edges for h in (x, y)]
    if len(used) != len(set(used)) or len(used) != len(half_attach):
        return None

    genera = [None] * len(vert_list)
    for w in range(nv):
        sub, incl = _subgroup_spec_cached(G, tuple(sub_of[w]))
        to_sub = {old: new for new, old in enumerate(incl)}
        # local monodromy at the base vertex (w, min coset = identity coset)
        base = vertex_index[(w, _coset_rep_of(G, sub_of[w], 0))]
        xi_loc = []
        sub_set = set(sub_of[w])
        seen = set()
        for k, v in legs:
            if v != base or ("l", k) in seen:
                continue
            orb_keys = _marking_orbit(spec, G, k, sub_of[w], branch_markings)
            seen.update(("l", kk) for kk in orb_keys)
            xi_loc.append(stab[("l", k)])
        for hid, v in half_attach.items():
            if v != base or ("h", hid) in seen:
                continue
            orb_keys = _half_orbit_at(G, hid, sub_of[w], half_ids, mu_of_half)
            seen.update(("h", kk) for kk in orb_keys)
            xi_loc.append(stab[("h", hid)])
        if any(h not in sub_set for h in xi_loc):
            return None
        xi_sub = tuple(to_sub[h] for h in xi_loc)
        # Riemann-Hurwitz for the local genus
        order = len(sub_of[w])
        ram = sum(order - order // sub.element_order(h) for h in xi_sub)
        num = order * (2 * quotient.genera[w] - 2) + ram + 2
        if num % 2 or num < 0:
            return None
        gw = num // 2
        if gw < 0:
            return None
        if target_genus(gw, sub, xi_sub) != quotient.genera[w]:
            return None
        if degree_delta(quotient.genera[w], group=sub, xi=xi_sub) <= 0:
            return None
        for rep in _coset_reps(G, sub_of[w]):
            genera[vertex_index[(w, rep)]] = gw

    graph = StableGraph(genera, legs, edges, check=False)
    if graph.violations():
        return None
    if graph.genus() != spec.g:
        return None
    # action
    vperm = {}
    hperm = {}
    lperm = {}
    for t in G.elements():
        vp = [None] * len(vert_list)
        for (w, rep), idx in vertex_index.items():
            vp[idx] = vert_of(w, G.mul(t, rep))
        hp = {}
        for (hq, a), hid in half_ids.items():
            mu, stab_mu, reps = mu_of_half[hq]
            a2 = _coset_rep_of(G, stab_mu, G.mul(t, a))
            hp[hid] = half_ids[(hq, a2)]
        lp = {}
        for i, markings in branch_markings.items():
            h_i = spec.xi[i - 1]
            stab_i = G.cyclic_subgroup(h_i)
            rep_to_k = {aa: kk for kk, aa, _e in markings}
            for (k, a, e) in markings:
                a2 = _coset_rep_of(G, stab_i, G.mul(t, a))
                lp[k] = rep_to_k[a2]
        vperm[t] = vp
        hperm[t] = hp
        lperm[t] = lp
    action = GroupActionOnGraph(G, vperm, hperm, lperm)
    gg = AdmissibleGGraph(graph, action, stab)
    try:
        gg.validate(check_nonempty=False)
    except ValidationError:
        return None
    return gg


def _marking_orbit(spec, G, k, sub_elems, branch_markings):
    """Marking labels in the sub_elems-orbit of marking k."""
    for i, markings in branch_markings.items():
        for (kk, a, e) in markings:
            if kk == k:
                h_i = spec.xi[i - 1]
                stab_i = G.cyclic_subgroup(h_i)
                rep_to_k = {aa: mk for mk, aa, _e in markings}
                return {rep_to_k[_coset_rep_of(G, stab_i, G.mul(t, a))]
                        for t in sub_elems}
    raise KeyError(k)


def _half_orbit_at(G, hid, sub_elems, half_ids, mu_of_half):
    _tag, eidx, hq, a = hid
    mu, stab_mu, reps = mu_of_half[hq]
    return {half_ids[(hq, _coset_rep_of(G, stab_mu, G.mul(t, a)))]
            for t in sub_elems}
