"""Stable graphs: validation, canonical labeling, enumeration, morphisms.

A stable graph is the dual graph of a nodal curve: vertices carry genera,
legs carry marking labels, edges are unordered pairs of half-edges.  The
morphisms implemented here are contraction structures ("A-structures"): a
surjection on vertices together with an injection of half-edges, witnessing
that one graph degenerates onto another.
"""

from __future__ import annotations

import itertools


class ValidationError(ValueError):
    """Raised when raw graph data violates a stable-graph axiom."""


class BudgetExceeded(RuntimeError):
    """Raised when an enumeration exceeds its candidate budget."""


def _fact(n):
    out = 1
    for k in range(2, n + 1):
        out *= k
    return out


def _as_edge(e):
    (h1, v1), (h2, v2) = e
    return ((h1, int(v1)), (h2, int(v2)))


class StableGraph:
    """Immutable stable graph.

    genera: sequence of vertex genera.
    legs: sequence of (label, vertex) pairs; labels must be distinct.
    edges: sequence of ((h1, v1), (h2, v2)) half-edge pairs; half-edge ids
    must be distinct across the graph.
    """

    __slots__ = ("genera", "legs", "edges", "_canon", "_half_vertex", "_hash")

    def __init__(self, genera, legs, edges, check=True):
        self.genera = tuple(int(g) for g in genera)
        self.legs = tuple((lab, int(v)) for lab, v in legs)
        self.edges = tuple(_as_edge(e) for e in edges)
        self._canon = None
        self._half_vertex = None
        self._hash = None
        if check:
            self.validate()

    # -- basic accessors -------------------------------------------------

    @property
    def num_vertices(self):
        return len(self.genera)

    @property
    def num_edges(self):
        return len(self.edges)

    def half_vertex(self):
        """Map half-edge id -> incident vertex."""
        if self._half_vertex is None:
            hv = {}
            for (h1, v1), (h2, v2) in self.edges:
                hv[h1] = v1
                hv[h2] = v2
            self._half_vertex = hv
        return self._half_vertex

    def partner(self):
        p = {}
        for (h1, _), (h2, _) in self.edges:
            p[h1] = h2
            p[h2] = h1
        return p

    def leg_labels(self):
        return tuple(lab for lab, _ in self.legs)

    def leg_vertex(self, label):
        for lab, v in self.legs:
            if lab == label:
                return v
        raise KeyError(label)

    def legs_at(self, v):
        return tuple(lab for lab, w in self.legs if w == v)

    def halves_at(self, v):
        out = []
        for (h1, v1), (h2, v2) in self.edges:
            if v1 == v:
                out.append(h1)
            if v2 == v:
                out.append(h2)
        return tuple(out)

    def valence(self, v):
        return len(self.legs_at(v)) + len(self.halves_at(v))

    def genus(self):
        """Total genus: sum of vertex genera plus first Betti number."""
        h1 = self.num_edges - self.num_vertices + 1
        return sum(self.genera) + h1

    def space(self):
        return (self.genus(), len(self.legs))

    # -- validation ------------------------------------------------------

    def violations(self):
        problems = []
        nv = self.num_vertices
        if nv == 0:
            return ["graph has no vertices"]
        for g in self.genera:
            if g < 0:
                problems.append("negative genus")
        seen_labels = set()
        for lab, v in self.legs:
            if not (0 <= v < nv):
                problems.append(f"leg {lab!r} attached to missing vertex {v}")
            if lab in seen_labels:
                problems.append(f"duplicate leg label {lab!r}")
            seen_labels.add(lab)
        seen_halves = set()
        for (h1, v1), (h2, v2) in self.edges:
            for h, v in ((h1, v1), (h2, v2)):
                if not (0 <= v < nv):
                    problems.append(f"half-edge {h} attached to missing vertex {v}")
                if h in seen_halves:
                    problems.append(f"half-edge id {h} reused")
                seen_halves.add(h)
            if h1 == h2:
                problems.append(f"edge pairs half-edge {h1} with itself")
        if problems:
            return problems
        adj = {v: set() for v in range(nv)}
        for (h1, v1), (h2, v2) in self.edges:
            adj[v1].add(v2)
            adj[v2].add(v1)
        seen = {0}
        stack = [0]
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) != nv:
            problems.append("graph is disconnected")
        for v in range(nv):
            if 2 * self.genera[v] - 2 + self.valence(v) <= 0:
                problems.append(
                    f"unstable vertex {v}: genus {self.genera[v]}, "
                    f"valence {self.valence(v)}")
        return problems

    def validate(self):
        problems = self.violations()
        if problems:
            raise ValidationError("; ".join(problems))
        return self

    # -- canonical form ---------------------------------------------------

    def _vertex_invariant(self, v):
        loops = sum(1 for (h1, v1), (h2, v2) in self.edges if v1 == v2 == v)
        return (self.genera[v], tuple(sorted(self.legs_at(v), key=repr)),
                len(self.halves_at(v)), loops)

    def _canonical_data(self):
        """(key, vertex position map, #optimal orders, |Aut|), cached."""
        if self._canon is not None:
            return self._canon
        nv = self.num_vertices
        invs = [self._vertex_invariant(v) for v in range(nv)]
        classes = {}
        for v in range(nv):
            classes.setdefault(invs[v], []).append(v)
        class_list = sorted(classes.items(), key=lambda kv: repr(kv[0]))
        best_key = None
        best_orders = []
        for perm_parts in itertools.product(
                *[itertools.permutations(vs) for _, vs in class_list]):
            order = [v for part in perm_parts for v in part]
            pos = {v: i for i, v in enumerate(order)}
            edge_enc = tuple(sorted(
                (min(pos[v1], pos[v2]), max(pos[v1], pos[v2]))
                for (h1, v1), (h2, v2) in self.edges))
            if best_key is None or edge_enc < best_key:
                best_key = edge_enc
                best_orders = [order]
            elif edge_enc == best_key:
                best_orders.append(order)
        order = best_orders[0]
        pos = {v: i for i, v in enumerate(order)}
        inv_seq = tuple(invs[v] for v in order)
        key = (inv_seq, best_key)
        mult = {}
        loops = [0] * nv
        for (h1, v1), (h2, v2) in self.edges:
            if v1 == v2:
                loops[v1] += 1
            else:
                pair = (min(v1, v2), max(v1, v2))
                mult[pair] = mult.get(pair, 0) + 1
        factor = 1
        for m in mult.values():
            factor *= _fact(m)
        for l in loops:
            factor *= _fact(l) * (2 ** l)
        aut = len(best_orders) * factor
        self._canon = (key, pos, len(best_orders), aut)
        return self._canon

    def canonical_key(self):
        return self._canonical_data()[0]

    def automorphism_count(self):
        return self._canonical_data()[3]

    def canonical_relabel(self):
        """Canonically relabeled copy plus the vertex and half-edge maps.

        Vertices are sorted canonically and half-edge ids renumbered
        0..2E-1; two graphs are isomorphic iff the relabeled copies are
        equal as data.
        """
        _, pos, _, _ = self._canonical_data()
        genera = [0] * self.num_vertices
        for v, g in enumerate(self.genera):
            genera[pos[v]] = g
        legs = tuple(sorted(((lab, pos[v]) for lab, v in self.legs),
                            key=lambda t: repr(t[0])))
        decorated = []
        for (h1, v1), (h2, v2) in self.edges:
            a, b = pos[v1], pos[v2]
            if (a, repr(h1)) <= (b, repr(h2)):
                first = (h1, a)
                second = (h2, b)
            else:
                first = (h2, b)
                second = (h1, a)
            decorated.append((first[1], second[1], repr(first[0]),
                              repr(second[0]), first[0], second[0]))
        decorated.sort(key=lambda t: t[:4])
        hmap = {}
        edges = []
        for k, (a, b, _r1, _r2, hfirst, hsecond) in enumerate(decorated):
            hmap[hfirst] = 2 * k
            hmap[hsecond] = 2 * k + 1
            edges.append(((2 * k, a), (2 * k + 1, b)))
        g = StableGraph(genera, legs, edges, check=False)
        return g, pos, hmap

    def __eq__(self, other):
        return (isinstance(other, StableGraph)
                and self.genera == other.genera
                and self.legs == other.legs
                and self.edges == other.edges)

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.genera, self.legs, self.edges))
        return self._hash

    def __repr__(self):
        return (f"StableGraph(genera={self.genera}, legs={self.legs}, "
                f"edges={self.edges})")

    # -- surgery ----------------------------------------------------------

    def fresh_half(self):
        used = [abs(hash(h)) % (1 << 30) if not isinstance(h, int) else h
                for h in self.half_vertex()]
        ints = [h for h in self.half_vertex() if isinstance(h, int)]
        return (max(ints) + 1) if ints else (max(used) + 1 if used else 0)

    def relabel_legs(self, mapping):
        legs = tuple((mapping.get(lab, lab), v) for lab, v in self.legs)
        return StableGraph(self.genera, legs, self.edges, check=False)

    def add_leg(self, label, v):
        return StableGraph(self.genera, self.legs + ((label, v),),
                           self.edges, check=False)

    def without_leg(self, label):
        legs = tuple((lab, v) for lab, v in self.legs if lab != label)
        return StableGraph(self.genera, legs, self.edges, check=False)


# -- building blocks -----------------------------------------------------

def smooth_graph(g, n, labels=None):
    labels = list(labels) if labels is not None else list(range(1, n + 1))
    return StableGraph([g], [(lab, 0) for lab in labels], [])


def one_edge_graphs(g, n):
    """All one-edge stable graphs of type (g, n), up to isomorphism."""
    out = []
    for gr in enumerate_graphs(g, n, 1):
        if gr.num_edges == 1:
            out.append(gr)
    return out


def contract_edge(graph, edge_index):
    """Contract one edge.  Returns (new graph, vertex map old->new)."""
    (h1, v1), (h2, v2) = graph.edges[edge_index]
    nv = graph.num_vertices
    if v1 == v2:
        vmap = list(range(nv))
        genera = list(graph.genera)
        genera[v1] += 1
        new_edges = [e for i, e in enumerate(graph.edges) if i != edge_index]
        return (StableGraph(genera, graph.legs, new_edges, check=False),
                vmap)
    a, b = min(v1, v2), max(v1, v2)
    vmap = []
    for v in range(nv):
        if v < b:
            vmap.append(v)
        elif v == b:
            vmap.append(a)
        else:
            vmap.append(v - 1)
    genera = []
    for v in range(nv):
        if v == a:
            genera.append(graph.genera[a] + graph.genera[b])
        elif v != b:
            genera.append(graph.genera[v])
    legs = [(lab, vmap[v]) for lab, v in graph.legs]
    edges = [((e1, vmap[w1]), (e2, vmap[w2]))
             for i, ((e1, w1), (e2, w2)) in enumerate(graph.edges)
             if i != edge_index]
    return StableGraph(genera, legs, edges, check=False), vmap


def contract_edges(graph, edge_indices):
    """Contract a set of edges; returns (graph, composed vertex map)."""
    g = graph
    vmap = list(range(graph.num_vertices))
    remaining = sorted(edge_indices)
    while remaining:
        idx = remaining[0]
        g2, step = contract_edge(g, idx)
        vmap = [step[x] for x in vmap]
        # removing edge idx shifts later indices down by one
        remaining = [i - 1 if i > idx else i for i in remaining[1:]]
        g = g2
    return g, vmap


def cut_edges(graph, edge_indices, leg_namer=None):
    """Cut edges open: each half-edge becomes a leg.

    leg_namer(half_id) names the new leg; defaults to ("h", half_id).
    Returns a possibly-disconnected graph as a list of connected pieces,
    each a StableGraph, plus a map vertex -> (piece index, piece vertex).
    """
    if leg_namer is None:
        leg_namer = lambda h: ("h", h)
    legs = list(graph.legs)
    edges = []
    for i, ((h1, v1), (h2, v2)) in enumerate(graph.edges):
        if i in edge_indices:
            legs.append((leg_namer(h1), v1))
            legs.append((leg_namer(h2), v2))
        else:
            edges.append(((h1, v1), (h2, v2)))
    nv = graph.num_vertices
    adj = {v: set() for v in range(nv)}
    for (h1, v1), (h2, v2) in edges:
        adj[v1].add(v2)
        adj[v2].add(v1)
    piece_of = [-1] * nv
    pieces = []
    for v0 in range(nv):
        if piece_of[v0] >= 0:
            continue
        comp = [v0]
        piece_of[v0] = len(pieces)
        stack = [v0]
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if piece_of[w] < 0:
                    piece_of[w] = len(pieces)
                    comp.append(w)
                    stack.append(w)
        pieces.append(sorted(comp))
    out = []
    vmap = {}
    for pi, comp in enumerate(pieces):
        local = {v: i for i, v in enumerate(comp)}
        for v in comp:
            vmap[v] = (pi, local[v])
        pg = StableGraph(
            [graph.genera[v] for v in comp],
            [(lab, local[v]) for lab, v in legs if v in local],
            [((h1, local[v1]), (h2, local[v2]))
             for (h1, v1), (h2, v2) in edges if v1 in local],
            check=False)
        out.append(pg)
    return out, vmap


def vertex_splits(graph, v):
    """All one-edge degenerations splitting vertex v, plus loop insertion.

    Yields (new graph, new edge info) where the new edge is appended last
    and its half-edge ids are fresh.  Splits are yielded once per ordered
    (side1, side2) assignment; callers deduplicate by canonical form.
    """
    gv = graph.genera[v]
    legs_v = graph.legs_at(v)
    halves_v = graph.halves_at(v)
    items = [("l", lab) for lab in legs_v] + [("h", h) for h in halves_v]
    h_new1 = graph.fresh_half()
    h_new2 = h_new1 + 1
    nv = graph.num_vertices

    # genus-reducing loop
    if gv >= 1:
        genera = list(graph.genera)
        genera[v] -= 1
        edges = list(graph.edges) + [((h_new1, v), (h_new2, v))]
        yield StableGraph(genera, graph.legs, edges, check=False)

    # separating-type splits: v -> (g1, side) + (g2, complement); the new
    # vertex is appended at index nv
    for g1 in range(gv + 1):
        g2 = gv - g1
        for r in range(len(items) + 1):
            for side in itertools.combinations(items, r):
                side_set = set(side)
                n1 = len(side) + 1
                n2 = len(items) - len(side) + 1
                if 2 * g1 - 2 + n1 <= 0 or 2 * g2 - 2 + n2 <= 0:
                    continue
                genera = list(graph.genera) + [g2]
                genera[v] = g1
                legs = []
                for lab, w in graph.legs:
                    if w == v and ("l", lab) not in side_set:
                        legs.append((lab, nv))
                    else:
                        legs.append((lab, w))
                edges = []
                for (h1, w1), (h2, w2) in graph.edges:
                    nw1 = nv if (w1 == v and ("h", h1) not in side_set) else w1
                    nw2 = nv if (w2 == v and ("h", h2) not in side_set) else w2
                    edges.append(((h1, nw1), (h2, nw2)))
                edges.append(((h_new1, v), (h_new2, nv)))
                yield StableGraph(genera, legs, edges, check=False)


def degenerations(graph):
    """All one-edge degenerations of a stable graph (with repetitions)."""
    for v in range(graph.num_vertices):
        yield from vertex_splits(graph, v)


def enumerate_graphs(g, n, max_edges, labels=None, budget=None):
    """All isomorphism classes of stable graphs of type (g, n) with at
    most max_edges edges, generated by iterated one-edge degeneration.
    """
    if 3 * g - 3 + n < 0:
        raise ValidationError(f"no stable curves of type ({g},{n})")
    if 2 * g - 2 + n <= 0:
        raise ValidationError(f"unstable type ({g},{n})")
    start = smooth_graph(g, n, labels)
    seen = {start.canonical_key(): start.canonical_relabel()[0]}
    frontier = [seen[start.canonical_key()]]
    count = 1
    for _ in range(max_edges):
        new_frontier = []
        for gr in frontier:
            for cand in degenerations(gr):
                key = cand.canonical_key()
                if key in seen:
                    continue
                canon = cand.canonical_relabel()[0]
                seen[key] = canon
                new_frontier.append(canon)
                count += 1
                if budget is not None and count > budget:
                    raise BudgetExceeded(
                        f"enumerate_graphs({g},{n}) exceeded budget {budget}")
        frontier = new_frontier
        if not frontier:
            break
    return sorted(seen.values(), key=lambda gr: repr(gr.canonical_key()))


# -- isomorphisms ----------------------------------------------------------

def graph_isomorphisms(g1, g2):
    """Yield all isomorphisms g1 -> g2 as (vertex map, half-edge map).

    Isomorphisms fix leg labels (legs are named points).  The vertex map is
    a list indexed by g1's vertices; the half-edge map a dict.
    """
    n = g1.num_vertices
    if n != g2.num_vertices or g1.num_edges != g2.num_edges:
        return
    inv1 = [g1._vertex_invariant(v) for v in range(n)]
    inv2 = [g2._vertex_invariant(v) for v in range(n)]
    if sorted(map(repr, inv1)) != sorted(map(repr, inv2)):
        return
    candidates = [[w for w in range(n) if inv2[w] == inv1[v]]
                  for v in range(n)]

    def edge_mult(g):
        mult = {}
        for (h1, v1), (h2, v2) in g.edges:
            pair = (min(v1, v2), max(v1, v2))
            mult.setdefault(pair, []).append(((h1, v1), (h2, v2)))
        return mult

    m1 = edge_mult(g1)
    m2 = edge_mult(g2)

    def extend(vmap, used, v):
        if v == n:
            yield list(vmap)
            return
        for w in candidates[v]:
            if w in used:
                continue
            ok = True
            for (a, b), bundle in m1.items():
                if a > v or b > v:
                    continue
                pa, pb = vmap[a] if a < v else w, vmap[b] if b < v else w
                if a == v:
                    pa = w
                if b == v:
                    pb = w
                pair = (min(pa, pb), max(pa, pb))
                if len(m2.get(pair, [])) != len(bundle):
                    ok = False
                    break
            if not ok:
                continue
            vmap.append(w)
            yield from extend(vmap, used | {w}, v + 1)
            vmap.pop()

    for vmap in extend([], set(), 0):
        # check full multiset of edges agrees under vmap
        ok = True
        for (a, b), bundle in m1.items():
            pair = (min(vmap[a], vmap[b]), max(vmap[a], vmap[b]))
            if len(m2.get(pair, [])) != len(bundle):
                ok = False
                break
        if not ok:
            continue
        # enumerate half-edge level maps bundle by bundle
        bundle_maps = []
        for (a, b), bundle in sorted(m1.items()):
            target = m2[(min(vmap[a], vmap[b]), max(vmap[a], vmap[b]))]
            options = []
            if a == b:
                # loops: bijections of loops x orientation per loop
                for perm in itertools.permutations(target):
                    for orient in itertools.product((0, 1), repeat=len(bundle)):
                        assign = []
                        for ((h1, _), (h2, _)), ((k1, _), (k2, _)), o in zip(
                                bundle, perm, orient):
                            if o:
                                assign.extend([(h1, k2), (h2, k1)])
                            else:
                                assign.extend([(h1, k1), (h2, k2)])
                        options.append(assign)
            else:
                for perm in itertools.permutations(target):
                    assign = []
                    good = True
                    for ((h1, v1), (h2, v2)), ((k1, w1), (k2, w2)) in zip(
                            bundle, perm):
                        # orient so that vertices correspond under vmap
                        if vmap[v1] == w1:
                            assign.extend([(h1, k1), (h2, k2)])
                        elif vmap[v1] == w2:
                            assign.extend([(h1, k2), (h2, k1)])
                        else:
                            good = False
                            break
                    if good:
                        options.append(assign)
            bundle_maps.append(options)
        for combo in itertools.product(*bundle_maps):
            hmap = {}
            for assign in combo:
                for (h_src, h_dst) in assign:
                    hmap[h_src] = h_dst
            yield vmap, hmap


def is_isomorphic(g1, g2):
    return g1.canonical_key() == g2.canonical_key()


_AUTS_CACHE: dict = {}


def automorphisms_cached(graph):
    """All (vmap, hmap) automorphisms, cached on the graph's data."""
    key = (graph.genera, graph.legs, graph.edges)
    hkey = repr(key)
    if hkey not in _AUTS_CACHE:
        if len(_AUTS_CACHE) > 50000:
            _AUTS_CACHE.clear()
        _AUTS_CACHE[hkey] = list(graph_isomorphisms(graph, graph))
    return _AUTS_CACHE[hkey]


# -- morphisms of stable graphs (A-structures) -----------------------------

class GraphMorphism:
    """An A-structure on source: (alpha, beta) with gamma derived.

    alpha: tuple, source vertex -> target vertex (surjective).
    beta: dict, target half-edge -> source half-edge (injective,
    commuting with the edge involutions).
    """

    __slots__ = ("source", "target", "alpha", "beta")

    def __init__(self, source, target, alpha, beta):
        self.source = source
        self.target = target
        self.alpha = tuple(alpha)
        self.beta = dict(beta)

    def gamma(self):
        """Map from non-image source half-edges to target vertices."""
        image = set(self.beta.values())
        hv = self.source.half_vertex()
        return {h: self.alpha[v] for h, v in hv.items() if h not in image}

    def key(self):
        return (self.alpha, tuple(sorted(self.beta.items(), key=repr)))

    def __eq__(self, other):
        return (isinstance(other, GraphMorphism) and self.key() == other.key()
                and self.source == other.source and self.target == other.target)

    def __hash__(self):
        return hash(self.key())

    def precompose(self, vmap, hmap, new_source):
        """Morphism new_source -> target given iso (vmap, hmap):
        new_source -> source."""
        inv_h = {dst: src for src, dst in hmap.items()}
        alpha = tuple(self.alpha[vmap[v]] for v in range(new_source.num_vertices))
        beta = {ht: inv_h[hs] for ht, hs in self.beta.items()}
        return GraphMorphism(new_source, self.target, alpha, beta)

    def is_generic_with(self, other):
        """Generic pair: every source edge is hit by one of the betas."""
        hit = set(self.beta.values()) | set(other.beta.values())
        return all(h in hit for h in self.source.half_vertex())

    def validate(self):
        src, tgt = self.source, self.target
        if sorted(map(repr, src.leg_labels())) != sorted(map(repr, tgt.leg_labels())):
            raise ValidationError("leg sets differ")
        if set(self.alpha) != set(range(tgt.num_vertices)):
            raise ValidationError("alpha not surjective")
        p_src, p_tgt = src.partner(), tgt.partner()
        hv_src, hv_tgt = src.half_vertex(), tgt.half_vertex()
        seen = set()
        for ht, hs in self.beta.items():
            if hs in seen:
                raise ValidationError("beta not injective")
            seen.add(hs)
            if self.beta.get(p_tgt[ht]) != p_src[hs]:
                raise ValidationError("beta does not commute with involutions")
            if self.alpha[hv_src[hs]] != hv_tgt[ht]:
                raise ValidationError("beta incompatible with attachment")
        for lab, v in src.legs:
            if self.alpha[v] != tgt.leg_vertex(lab):
                raise ValidationError(f"leg {lab!r} lands on wrong vertex")
        # condition (v): vertex preimages with internal edges are connected
        # stable graphs of the right genus
        pieces = morphism_pieces(self)
        for a, piece in enumerate(pieces):
            if piece.genus() != tgt.genera[a]:
                raise ValidationError(
                    f"preimage of vertex {a} has genus {piece.genus()} "
                    f"!= {tgt.genera[a]}")
        return self


def morphism_pieces(mor):
    """Per target-vertex preimage subgraphs, with beta-halves as legs.

    Piece legs are the source legs plus ("h", target half-edge id) markers
    for the cut beta-image half-edges.
    """
    src, tgt = mor.source, mor.target
    image = set(mor.beta.values())
    inv_beta = {hs: ht for ht, hs in mor.beta.items()}
    cut_idx = {i for i, ((h1, _), (h2, _)) in enumerate(src.edges)
               if h1 in image}
    pieces, vmap = cut_edges(src, cut_idx, leg_namer=lambda h: ("h", inv_beta[h]))
    out = []
    for a in range(tgt.num_vertices):
        vs = [v for v in range(src.num_vertices) if mor.alpha[v] == a]
        if not vs:
            raise ValidationError("alpha misses a target vertex")
        pis = {vmap[v][0] for v in vs}
        if len(pis) != 1:
            raise ValidationError(
                f"preimage of vertex {a} is disconnected")
        pi = pis.pop()
        piece = pieces[pi]
        expected = {vmap[v][1] for v in vs}
        if set(range(piece.num_vertices)) != expected:
            raise ValidationError(
                f"preimage of vertex {a} mixes with another preimage")
        out.append(piece)
    if len({vmap[v][0] for v in range(src.num_vertices)}) != tgt.num_vertices:
        raise ValidationError("pieces do not match target vertices")
    return out


def identity_morphism(graph):
    beta = {h: h for h in graph.half_vertex()}
    return GraphMorphism(graph, graph, tuple(range(graph.num_vertices)), beta)


def trivial_morphism(graph, target=None):
    """Morphism onto the smooth graph of the same type."""
    if target is None:
        target = smooth_graph(graph.genus(), len(graph.legs),
                              labels=graph.leg_labels())
    if target.num_edges:
        raise ValidationError("trivial morphism needs smooth target")
    return GraphMorphism(graph, target, (0,) * graph.num_vertices, {})


def enumerate_A_structures(source, target, budget=None):
    """All A-structures on `source` over `target` (raw, not iso classes).

    Backtracks over injective half-edge-level matchings of target edges
    into source edges, pruning with vertex pins induced by legs and by
    already-matched edges, then validates by contraction.
    """
    src, tgt = source, target
    if src.genus() != tgt.genus():
        return []
    if sorted(map(repr, src.leg_labels())) != sorted(map(repr, tgt.leg_labels())):
        return []
    if tgt.num_edges > src.num_edges:
        return []
    tgt_leg_vertex = {lab: v for lab, v in tgt.legs}
    pin = {}
    for lab, v in src.legs:
        a = tgt_leg_vertex[lab]
        if pin.get(v, a) != a:
            return []
        pin[v] = a
    results = []
    n_t = tgt.num_edges
    used = set()
    beta = {}
    count = 0

    def rec(i):
        nonlocal count
        if i == n_t:
            mor = _match_to_morphism(src, tgt, dict(beta))
            if mor is not None:
                results.append(mor)
            return
        (a1h, a1v), (a2h, a2v) = tgt.edges[i]
        t_loop = a1v == a2v
        for j, ((s1, u1), (s2, u2)) in enumerate(src.edges):
            if j in used:
                continue
            if (u1 == u2) and not t_loop:
                continue
            for b1, b2, w1, w2 in ((s1, s2, u1, u2), (s2, s1, u2, u1)):
                if pin.get(w1, a1v) != a1v or pin.get(w2, a2v) != a2v:
                    continue
                count += 1
                if budget is not None and count > budget:
                    raise BudgetExceeded(
                        "A-structure enumeration budget exceeded")
                saved = (w1 in pin, w2 in pin)
                used.add(j)
                beta[a1h], beta[a2h] = b1, b2
                pin[w1] = a1v
                pin[w2] = a2v
                rec(i + 1)
                used.discard(j)
                del beta[a1h], beta[a2h]
                if not saved[0]:
                    pin.pop(w1, None)
                if not saved[1] and w2 != w1:
                    pin.pop(w2, None)
        return

    rec(0)
    return results


def _match_to_morphism(src, tgt, beta):
    """Build the A-structure determined by an edge matching, or None."""
    image = set(beta.values())
    non_image = [i for i, ((h1, _), (h2, _)) in enumerate(src.edges)
                 if h1 not in image and h2 not in image]
    contracted, vmap = contract_edges(src, non_image)
    # identify contracted graph with target using the matching
    hv_src = src.half_vertex()
    hv_tgt = tgt.half_vertex()
    lam = {}

    def assign(cv, tv):
        if cv in lam and lam[cv] != tv:
            return False
        lam[cv] = tv
        return True

    for ht, hs in beta.items():
        if not assign(vmap[hv_src[hs]], hv_tgt[ht]):
            return None
    for lab, v in src.legs:
        if not assign(vmap[v], tgt.leg_vertex(lab)):
            return None
    if not lam and contracted.num_vertices == 1 and tgt.num_vertices == 1:
        lam[0] = 0
    if len(lam) != contracted.num_vertices or len(set(lam.values())) != len(lam):
        return None
    if len(lam) != tgt.num_vertices:
        return None
    for cv, tv in lam.items():
        if contracted.genera[cv] != tgt.genera[tv]:
            return None
    alpha = tuple(lam[vmap[v]] for v in range(src.num_vertices))
    mor = GraphMorphism(src, tgt, alpha, beta)
    try:
        mor.validate()
    except ValidationError:
        return None
    return mor


# -- generic (A,B)-structures ----------------------------------------------

def _structure_key(mor, hmap_to_canon, vmap_to_canon):
    alpha = [None] * len(vmap_to_canon)
    for v, cv in enumerate(vmap_to_canon):
        alpha[cv] = mor.alpha[v]
    beta = sorted(((repr(ht), hmap_to_canon[hs]) for ht, hs in mor.beta.items()))
    return (tuple(alpha), tuple(beta))


def _dedupe_structures(cands):
    """Reduce a list of (graph, morphisms...) to isomorphism classes.

    cands: list of (graph, tuple of GraphMorphism).  Two entries are
    isomorphic if some graph isomorphism intertwines all morphisms in the
    tuple simultaneously.
    """
    out = []
    buckets = {}
    for graph, mors in cands:
        bucket_key = (graph.canonical_key(),
                      tuple(m.target.canonical_key() for m in mors))
        buckets.setdefault(repr(bucket_key), []).append((graph, mors))
    for bucket in buckets.values():
        kept = []
        for graph, mors in bucket:
            duplicate = False
            for kgraph, kmors in kept:
                for vmap, hmap in graph_isomorphisms(graph, kgraph):
                    if all(km.precompose(vmap, hmap, graph).key() == m.key()
                           for km, m in zip(kmors, mors)):
                        duplicate = True
                        break
                if duplicate:
                    break
            if not duplicate:
                kept.append((graph, mors))
        out.extend(kept)
    return out


def degenerations_tracked(graph, mor):
    """One-edge degenerations of `graph` with `mor`-style structure lifted.

    mor is a B-structure on graph (graph -> B).  Each degeneration g' of
    graph carries the contraction g' -> graph composed with mor, i.e. a
    B-structure on g' whose image misses the new edge.  Contracting the
    fresh edge restores `graph` with identical labels, so the composed
    structure reuses mor's data through the contraction vertex map.
    """
    for v in range(graph.num_vertices):
        for cand in vertex_splits(graph, v):
            new_idx = cand.num_edges - 1
            contracted, vmap = contract_edge(cand, new_idx)
            if contracted != graph:
                raise RuntimeError("contraction lost the graph structure")
            comp_alpha = tuple(mor.alpha[vmap[w]]
                               for w in range(cand.num_vertices))
            yield cand, GraphMorphism(cand, mor.target, comp_alpha,
                                      dict(mor.beta))


def enumerate_generic_AB(a_graph, b_graph, budget=None):
    """Isomorphism classes of generic (A,B)-structures (Γ, f, g).

    f: Γ -> A and g: Γ -> B with every edge of Γ in the image of f or g.
    """
    if a_graph.genus() != b_graph.genus():
        return []
    if sorted(map(repr, a_graph.leg_labels())) != \
       sorted(map(repr, b_graph.leg_labels())):
        return []
    frontier = [(b_graph, identity_morphism(b_graph))]
    layers = [frontier]
    for _ in range(a_graph.num_edges):
        new_frontier = []
        for graph, mor in frontier:
            for cand, cmor in degenerations_tracked(graph, mor):
                new_frontier.append((cand, cmor))
                if budget is not None and len(new_frontier) > budget:
                    raise BudgetExceeded("generic (A,B) enumeration budget")
        frontier = new_frontier
        layers.append(frontier)
    cands = []
    for layer in layers:
        for graph, g_mor in layer:
            new_halves = {h for h in graph.half_vertex()
                          if h not in set(g_mor.beta.values())}
            for f_mor in enumerate_A_structures(graph, a_graph, budget=budget):
                if not new_halves <= set(f_mor.beta.values()):
                    continue
                cands.append((graph, (f_mor, g_mor)))
    deduped = _dedupe_structures(cands)
    return [(graph, mors[0], mors[1]) for graph, mors in deduped]


def enumerate_leg_additions(graph, extra_labels, budget=None):
    """The set of graphs whose leg-forgetting equals `graph`.

    Distributes the extra leg labels over the vertices in all ways, up to
    isomorphism.  Removing the added legs (no stabilization needed: the
    original graph is stable) recovers the input.
    """
    extra = list(extra_labels)
    out = {}
    count = 0
    for assignment in itertools.product(range(graph.num_vertices),
                                        repeat=len(extra)):
        count += 1
        if budget is not None and count > budget:
            raise BudgetExceeded("leg addition budget exceeded")
        g = graph
        for lab, v in zip(extra, assignment):
            g = g.add_leg(lab, v)
        key = g.canonical_key()
        if key not in out:
            out[key] = g.canonical_relabel()[0]
    return sorted(out.values(), key=lambda gr: repr(gr.canonical_key()))
