"""Intersections of admissible-cover cycles with tautological classes.

Implements, for a cycle pushed forward from a space of pointed admissible
G-covers (with some markings forgotten):

  * boundary_pullback -- the double sum over leg completions B of a stable
    graph A and generic covering structures over B, with excess psi data;
  * resolve_terms -- substitution of known cycle classes (from a database)
    for the covering pieces, inserting Kunneth diagonals for repeated
    factors, producing a class on the product space Mbar_A;
  * pullpush_delta -- the pull-push through the target map, dividing psi
    and kappa classes down to the quotient curve's moduli space;
  * pairing_vector / solve_by_pairing -- the perfect-pairing method.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from fractions import Fraction
from math import factorial
from pathlib import Path

from .covers import HurwitzSpec
from .graphs import (BudgetExceeded, StableGraph, ValidationError,
                     cut_edges, enumerate_graphs)
from .groups import GroupSpec, parse_group_token
from .ggraphs import EquivAStructure, enumerate_generic_A_structures
from .rational import RatMatrix, format_rat, parse_rat, rank, solve_linear
from .tautclass import (DegreeError, Factor, ProductClass, SpaceMismatch,
                        TautClass, canonical_term, dec_multiply,
                        factors_of_graph, forget_leg_raw, product,
                        pull_decoration, pullback_forgetful,
                        pushforward_boundary)


class MissingCycleError(KeyError):
    """A needed cycle is not in the database; carries the needed key."""

    def __init__(self, g, group_key, xi, kept):
        self.needed = (g, group_key, tuple(xi), tuple(sorted(kept)))
        super().__init__(
            f"cycle database is missing (g={g}, group={group_key}, "
            f"xi={tuple(xi)}, kept markings={sorted(kept)})")


class PairingDegenerateError(ValueError):
    """The generated pairing matrix cannot certify a diagonal."""


class HurwitzCycleRef:
    """A named admissible-cover cycle: spec, kept markings, normalization.

    The geometric class is normalization * (pi . phi)_* [H_{g,G,xi}] where
    pi forgets the markings outside `kept` (indices 1..r in layout order).
    The default normalization is 1/k! for k the number of fully forgotten
    branch orbits, the number of orderings of the forgotten points.
    """

    def __init__(self, spec: HurwitzSpec, kept=None, normalization=None,
                 name=None):
        self.spec = spec
        layout = spec.marking_layout()
        all_markings = tuple(range(1, spec.r + 1))
        self.kept = tuple(sorted(kept)) if kept is not None else all_markings
        for k in self.kept:
            if not 1 <= k <= spec.r:
                raise ValidationError(f"marking {k} outside 1..{spec.r}")
        self.forgotten = tuple(m for m in all_markings if m not in self.kept)
        branch_of = {m: layout[m - 1][0] for m in all_markings}
        forgotten_branches = {branch_of[m] for m in self.forgotten}
        partial = [i for i in forgotten_branches
                   if any(branch_of[m] == i for m in self.kept)]
        if normalization is None:
            if partial:
                raise ValidationError(
                    "default normalization needs whole forgotten branch "
                    f"orbits; branches {partial} are split")
            normalization = Fraction(1, factorial(len(forgotten_branches)))
        self.normalization = Fraction(normalization)
        self.name = name or f"H:{spec.g}:{spec.group.kind}"

    def n_kept(self):
        return len(self.kept)

    def codim(self):
        return (3 * self.spec.g - 3 + self.n_kept()) - self.spec.dim()

    def key(self):
        return (self.spec.g, self.spec.group.key(), tuple(self.spec.xi),
                self.kept)

    def __repr__(self):
        return (f"HurwitzCycleRef({self.name}, kept={self.kept}, "
                f"norm={self.normalization})")


def parse_cycle_token(token) -> HurwitzCycleRef:
    """Compact grammar: NAME:<g>:<group>:<xi>[:keep=...][:norm=p/q]."""
    parts = token.split(":")
    if len(parts) < 4:
        raise ValidationError(f"bad cycle token {token!r}")
    name = parts[0]
    g = int(parts[1])
    rest = parts[2:]
    if rest[0] in ("cyclic", "table", "sym"):
        group = parse_group_token(rest[0] + ":" + rest[1])
        rest = rest[2:]
    else:
        group = parse_group_token(rest[0])
        rest = rest[1:]
    xi = []
    for piece in rest[0].split(","):
        piece = piece.strip()
        if not piece:
            continue
        if "^" in piece:
            val, pow_ = piece.split("^")
            xi.extend([int(val)] * int(pow_))
        else:
            xi.append(int(piece))
    kept = None
    norm = None
    for extra in rest[1:]:
        if extra.startswith("keep="):
            kept = [int(x) for x in extra[5:].split(",") if x]
        elif extra.startswith("norm="):
            norm = parse_rat(extra[5:])
        else:
            raise ValidationError(f"unknown cycle option {extra!r}")
    spec = HurwitzSpec(g, group, xi)
    return HurwitzCycleRef(spec, kept=kept, normalization=norm, name=name)


# -- cycle database -----------------------------------------------------------

class CycleDB:
    """Directory-backed store of known cycle classes."""

    def __init__(self, directory=None):
        self.records = {}
        self.directory = Path(directory) if directory else None
        if self.directory and self.directory.is_dir():
            for f in sorted(self.directory.glob("*.json")):
                data = json.loads(f.read_text())
                rec = record_from_json(data)
                self.records[rec["ref"].key()] = rec

    def add(self, ref: HurwitzCycleRef, tclass: TautClass, provenance=""):
        expected = (ref.spec.g, ref.n_kept())
        if (tclass.g, tclass.n) != expected:
            raise SpaceMismatch(
                f"class lives on ({tclass.g},{tclass.n}), record needs "
                f"{expected}")
        deg = tclass.homogeneous_degree()
        if deg is not None and deg != ref.codim():
            raise DegreeError(
                f"stored class degree {deg} != expected codimension "
                f"{ref.codim()}")
        rec = {"ref": ref, "class": tclass, "provenance": provenance}
        self.records[ref.key()] = rec
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)
            path = self.directory / (self._hash(ref) + ".json")
            path.write_text(json.dumps(record_to_json(rec), indent=1))
        return rec

    @staticmethod
    def _hash(ref):
        return hashlib.sha256(repr(ref.key()).encode()).hexdigest()[:16]

    def list_records(self):
        return [self.records[k] for k in sorted(self.records, key=repr)]

    def lookup(self, g, group: GroupSpec, xi, kept):
        """Find a record matching up to permutation of equal-monodromy
        branches; kept markings must form whole branch orbits.

        Returns (record, map: record branch -> query branch)."""
        xi = tuple(xi)
        q_spec = HurwitzSpec(g, group, xi)
        q_layout = q_spec.marking_layout()
        kept = set(kept)
        q_branch_kept = {}
        for m, (i, a, e) in enumerate(q_layout, start=1):
            q_branch_kept.setdefault(i, []).append(m in kept)
        if any(len(set(f)) != 1 for f in q_branch_kept.values()):
            raise MissingCycleError(g, group.key(), xi, kept)
        for rec in self.records.values():
            ref = rec["ref"]
            if ref.spec.g != g or ref.spec.group.key() != group.key():
                continue
            if len(ref.spec.xi) != len(xi):
                continue
            r_layout = ref.spec.marking_layout()
            r_kept = set(ref.kept)
            r_branch_kept = {}
            for m, (i, a, e) in enumerate(r_layout, start=1):
                r_branch_kept.setdefault(i, []).append(m in r_kept)
            if any(len(set(f)) != 1 for f in r_branch_kept.values()):
                continue
            match = _match_branches(
                [(ref.spec.xi[i - 1], r_branch_kept[i][0])
                 for i in sorted(r_branch_kept)],
                [(xi[i - 1], q_branch_kept[i][0])
                 for i in sorted(q_branch_kept)])
            if match is not None:
                return rec, {i + 1: j + 1 for i, j in enumerate(match)}
        raise MissingCycleError(g, group.key(), xi, kept)


def _match_branches(record_branches, query_branches):
    if len(record_branches) != len(query_branches):
        return None
    unused = list(range(len(query_branches)))
    out = []
    for h, k in record_branches:
        found = None
        for j in unused:
            if query_branches[j] == (h, k):
                found = j
                break
        if found is None:
            return None
        unused.remove(found)
        out.append(found)
    return out


def record_to_json(rec):
    from .jsonio import class_to_json
    ref = rec["ref"]
    group = ref.spec.group
    return {
        "g": ref.spec.g,
        "group": group.kind if group.kind.startswith("cyclic:")
        else {"order": group.order, "table": [list(r) for r in group.table]},
        "xi": list(ref.spec.xi),
        "kept": list(ref.kept),
        "normalization": format_rat(ref.normalization),
        "name": ref.name,
        "class": class_to_json(rec["class"]),
        "provenance": rec.get("provenance", ""),
    }


def record_from_json(data):
    from .jsonio import class_from_json
    if isinstance(data["group"], str):
        group = parse_group_token(data["group"])
    else:
        group = GroupSpec(data["group"]["table"])
    spec = HurwitzSpec(data["g"], group, data["xi"])
    ref = HurwitzCycleRef(spec, kept=data["kept"],
                          normalization=parse_rat(data["normalization"]),
                          name=data.get("name"))
    return {"ref": ref, "class": class_from_json(data["class"]),
            "provenance": data.get("provenance", "")}


def seed_database(db: CycleDB):
    """Load the paper-quoted cycle classes shipped with the package."""
    import importlib.resources as res
    count = 0
    for name in ("wp_2_1.json", "h_2_0_2.json", "h_3_1_0.json",
                 "h_1_1_0.json"):
        data = json.loads(
            res.files("tautring").joinpath("data", name).read_text())
        rec = record_from_json(data)
        db.add(rec["ref"], rec["class"], rec["provenance"])
        count += 1
    return count


# -- boundary pullback ---------------------------------------------------------

class HurwitzTerm:
    """One summand of a boundary pullback.

    b_graph has legs labeled by marking indices 1..r; kept_to_a maps kept
    marking labels back to the original legs of the pulled-back graph.
    """

    def __init__(self, b_graph, structure: EquivAStructure, multiplicity,
                 kept_to_a):
        self.b_graph = b_graph
        self.structure = structure
        self.multiplicity = Fraction(multiplicity)
        self.kept_to_a = dict(kept_to_a)

    def __repr__(self):
        gg = self.structure.ggraph
        return (f"HurwitzTerm(B edges={self.b_graph.num_edges}, Gamma genera="
                f"{gg.graph.genera}, mult={self.multiplicity})")


def leg_completions(a_graph, cycle: HurwitzCycleRef):
    """Graphs obtained by renaming a_graph's legs to the kept markings and
    distributing the forgotten markings over the vertices, one
    representative per isomorphism class.  Half-edge ids are preserved."""
    mapping = {lab: m for lab, m in
               zip(sorted(a_graph.leg_labels(), key=repr), cycle.kept)}
    base = a_graph.relabel_legs(mapping)
    seen = {}
    for assignment in itertools.product(range(a_graph.num_vertices),
                                        repeat=len(cycle.forgotten)):
        g = base
        for m, v in zip(cycle.forgotten, assignment):
            g = g.add_leg(m, v)
        key = g.canonical_key()
        if key not in seen:
            seen[key] = g
    inv = {m: lab for lab, m in mapping.items()}
    return ([seen[k] for k in sorted(seen, key=repr)], inv)


def boundary_pullback(cycle: HurwitzCycleRef, a_graph: StableGraph,
                      budget=None):
    """xi_A^* of the cycle as a list of HurwitzTerms."""
    g, n = a_graph.space()
    if (g, n) != (cycle.spec.g, cycle.n_kept()):
        raise SpaceMismatch(
            f"graph type ({g},{n}) vs cycle on ({cycle.spec.g},"
            f"{cycle.n_kept()})")
    completions, kept_to_a = leg_completions(a_graph, cycle)
    terms = []
    for b_graph in completions:
        for s in enumerate_generic_A_structures(cycle.spec, b_graph,
                                                budget=budget):
            terms.append(HurwitzTerm(b_graph, s, cycle.normalization,
                                     kept_to_a))
    return terms


# -- pairing data and diagonals -------------------------------------------------

def decorated_strata(g, n, degree, budget=None):
    """All decorated strata (graph, kappa, psi) of the given degree."""
    out = []
    top = 3 * g - 3 + n
    if degree > top or degree < 0:
        return out
    for graph in enumerate_graphs(g, n, min(degree, top), budget=budget):
        rem = degree - graph.num_edges
        if rem < 0:
            continue
        for kappa, psi in _decorations_of_degree(graph, rem):
            out.append((graph, kappa, psi))
    return out


def _decorations_of_degree(graph, degree):
    slots = []
    for v in range(graph.num_vertices):
        for lab in graph.legs_at(v):
            slots.append(("l", lab))
        for h in graph.halves_at(v):
            slots.append(("h", h))
    nv = graph.num_vertices

    def kappa_monomials(d):
        if d == 0:
            yield {}
            return

        def parts(remaining, max_part):
            if remaining == 0:
                yield []
                return
            for p in range(min(remaining, max_part), 0, -1):
                for rest in parts(remaining - p, p):
                    yield [p] + rest

        for plist in parts(d, d):
            mono = {}
            for a in plist:
                mono[a] = mono.get(a, 0) + 1
            yield mono

    def psi_assignments(i, remaining, acc):
        if i == len(slots):
            yield dict(acc), remaining
            return
        for e in range(remaining + 1):
            if e:
                acc[slots[i]] = e
            yield from psi_assignments(i + 1, remaining - e, acc)
            acc.pop(slots[i], None)

    seen = set()
    for psi, rest in psi_assignments(0, degree, {}):
        for split in _distribute(rest, nv):
            options = [list(kappa_monomials(d)) for d in split]
            for combo in itertools.product(*options):
                kappa = {v: dict(m) for v, m in enumerate(combo) if m}
                key, _, kk, pp = canonical_term(graph, kappa, psi)
                if key in seen:
                    continue
                seen.add(key)
                yield kk, pp


def _distribute(total, parts):
    if parts == 0:
        if total == 0:
            yield ()
        return
    for first in range(total + 1):
        for rest in _distribute(total - first, parts - 1):
            yield (first,) + rest


_PAIRING_CACHE = {}


def pairing_data(g, n, degree):
    """Bases in complementary degrees with inverted pairing matrix.

    Raises PairingDegenerateError when the generated pairing cannot be
    certified (the inverse must reproduce every generated pairing)."""
    key = (g, n, degree)
    if key in _PAIRING_CACHE:
        return _PAIRING_CACHE[key]
    top = 3 * g - 3 + n
    S1 = [TautClass(g, n, [(Fraction(1), gr, kk, pp)])
          for gr, kk, pp in decorated_strata(g, n, degree)]
    S2 = [TautClass(g, n, [(Fraction(1), gr, kk, pp)])
          for gr, kk, pp in decorated_strata(g, n, top - degree)]
    if not S1 or not S2:
        raise PairingDegenerateError(
            f"no strata in degree {degree} on Mbar_{{{g},{n}}}")
    M = RatMatrix(len(S1), len(S2),
                  [[product(a, b).evaluate() for b in S2] for a in S1])
    r = rank(M)
    rows = _independent_rows(M, r)
    cols = _independent_rows(M.transpose(), r)
    sub = RatMatrix(r, r, [[M[i, j] for j in cols] for i in rows])
    inv = _invert(sub)
    for i in range(len(S1)):
        for j in range(len(S2)):
            acc = Fraction(0)
            for a in range(r):
                for b in range(r):
                    acc += M[i, cols[b]] * inv[b, a] * M[rows[a], j]
            if acc != M[i, j]:
                raise PairingDegenerateError(
                    "pairing matrix inconsistent with the selected basis; "
                    "refusing to build a diagonal")
    data = ([S1[i] for i in rows], [S2[j] for j in cols], inv)
    _PAIRING_CACHE[key] = data
    return data


def _independent_rows(M, target_rank):
    rows = []
    for i in range(M.rows):
        cand = rows + [i]
        sub = RatMatrix(len(cand), M.cols, [M.row(r) for r in cand])
        if rank(sub) == len(cand):
            rows.append(i)
        if len(rows) == target_rank:
            break
    return rows


def _invert(M):
    n = M.rows
    out = RatMatrix(n, n)
    for j in range(n):
        res = solve_linear(M, [Fraction(i == j) for i in range(n)])
        if res.status != "unique":
            raise PairingDegenerateError("pairing minor is singular")
        for i in range(n):
            out[i, j] = res.solution[i]
    return out


def diagonal_push(x: TautClass, copies, budget=None):
    """Pushforward of x along the multi-diagonal into `copies` factors,
    each a copy of Mbar_{g,n} with legs 1..n."""
    g, n = x.g, x.n
    top = 3 * g - 3 + n
    factors = [Factor(g, tuple(range(1, n + 1))) for _ in range(copies)]
    out = ProductClass(factors)
    if copies == 1:
        for c, gr, kk, pp in x.iter_terms():
            out.add_term(c, ((gr, kk, pp),))
        return out
    for d in range(top + 1):
        if not decorated_strata(g, n, d) or \
                not decorated_strata(g, n, top - d):
            continue
        E, F, inv = pairing_data(g, n, top - d)
        for a, e_cl in enumerate(E):
            xe = product(x, e_cl, budget=budget)
            if xe.is_zero():
                continue
            for b, f_cl in enumerate(F):
                coeff = inv[b, a]
                if coeff == 0:
                    continue
                rest = diagonal_push(f_cl.scale(coeff), copies - 1,
                                     budget=budget)
                for c1, ft1 in _as_product(xe).iter_terms():
                    for c2, fterms in rest.iter_terms():
                        out.add_term(c1 * c2, ft1 + fterms)
    return out


def _as_product(x: TautClass):
    pc = ProductClass([Factor(x.g, tuple(range(1, x.n + 1)))])
    for c, gr, kk, pp in x.iter_terms():
        pc.add_term(c, ((gr, kk, pp),))
    return pc


def diagonal_class(g, n, copies=2, budget=None):
    """The multi-diagonal on the product of `copies` factors."""
    return diagonal_push(TautClass.fundamental(g, n), copies, budget=budget)


# -- resolution ----------------------------------------------------------------

def relabel_class(tc: TautClass, mapping):
    """Rename the legs of every term by `mapping` (missing keys fixed)."""
    out = TautClass(tc.g, tc.n)
    for c, graph, kappa, psi in tc.iter_terms():
        g2 = graph.relabel_legs(mapping)
        p2 = {}
        for key, e in psi.items():
            if key[0] == "l":
                p2[("l", mapping.get(key[1], key[1]))] = e
            else:
                p2[key] = e
        out.add_term(c, g2, kappa, p2)
    return out


def resolve_terms(a_graph: StableGraph, terms, db: CycleDB, budget=None):
    """Substitute database classes into boundary-pullback terms.

    Returns the class of the pullback on the product space Mbar_A.
    Raises MissingCycleError naming the first absent record."""
    factors = factors_of_graph(a_graph)
    out = ProductClass(factors)
    for term in terms:
        for coeff, fterms in _resolve_one(a_graph, term, db, budget):
            out.add_term(coeff, fterms)
    return out


def _resolve_one(a_graph, term: HurwitzTerm, db, budget=None):
    gg = term.structure.ggraph
    graph = gg.graph
    mor = term.structure.mor          # Gamma -> B
    kept_set = set(term.kept_to_a)
    image = set(mor.beta.values())
    inv_beta = {hs: ht for ht, hs in mor.beta.items()}
    hv = graph.half_vertex()

    def class_label(key):
        """Local marking key on Gamma -> leg label used by factor classes."""
        if key[0] == "l":
            return key[1]
        h = key[1]
        if h in image:
            return ("h", inv_beta[h])
        return ("h", h)

    # vertex orbits with translating elements
    orbits = []
    for v in gg.vertex_orbit_reps():
        members = []
        done = set()
        for t in gg.group.elements():
            w = gg.action.on_vertex(t, v)
            if w not in done:
                done.add(w)
                members.append((w, t))
        orbits.append((v, members))

    # piece decomposition of Gamma along the beta-image edges
    cut_idx = {i for i, ((h1, _), (h2, _)) in enumerate(graph.edges)
               if h1 in image}
    pieces, vmap = cut_edges(graph, cut_idx,
                             leg_namer=lambda h: ("h", inv_beta[h]))

    results = []
    for ce, pe in term.structure.excess_terms():
        psi_by_vertex = {}
        for key, e in pe.items():
            h = key[1]
            v = hv[h]
            d = psi_by_vertex.setdefault(v, {})
            lab = class_label(key)
            d[lab] = d.get(lab, 0) + e
        try:
            orbit_opts = [
                _orbit_options(gg, v, members, db, kept_set, psi_by_vertex,
                               class_label, budget)
                for v, members in orbits]
        except MissingCycleError:
            raise
        for combo in itertools.product(*orbit_opts):
            coeff = ce * term.multiplicity
            assign = {}
            for c0, part in combo:
                coeff *= c0
                assign.update(part)
            factor_lists = []
            for w in range(term.b_graph.num_vertices):
                lst = _graft_vertex_factor(gg, mor, w, assign, kept_set,
                                           term, pieces, vmap)
                factor_lists.append(lst)
            for picks in itertools.product(*factor_lists):
                c_all = coeff
                fterms = []
                for c1, g1, k1, p1 in picks:
                    c_all *= c1
                    fterms.append((g1, k1, p1))
                if c_all:
                    results.append((c_all, tuple(fterms)))
    return results


def _local_layout_labels(gg, v):
    """Map local marking index (1..n_v) -> Gamma marking key for vertex v."""
    gv, sub, xi, keys = gg.local_monodromy(v)
    local_spec = HurwitzSpec(gv, sub, xi)
    _, incl = gg.group.subgroup_spec(gg.action.vertex_stabilizer(v))
    out = {}
    for m, (j, a, e) in enumerate(local_spec.marking_layout(), start=1):
        key = keys[j - 1]
        t = incl[a]
        if key[0] == "l":
            out[m] = ("l", gg.action.on_leg(t, key[1]))
        else:
            out[m] = ("h", gg.action.on_half(t, key[1]))
    return out, local_spec


def _orbit_options(gg, v, members, db, kept_set, psi_by_vertex, class_label,
                   budget):
    """Joint resolution options for one vertex orbit.

    Returns a list of (coeff, {Gamma vertex: (graph, kappa, psi)}), the
    factor classes carrying exactly the legs present at that level."""
    keymap, local_spec = _local_layout_labels(gg, v)
    n_v = local_spec.r
    kept_local = [m for m in range(1, n_v + 1)
                  if keymap[m][0] == "h" or keymap[m][1] in kept_set]
    forgotten_here = len(kept_local) < n_v
    dec_at = {w: psi_by_vertex.get(w, {}) for w, _t in members}
    any_dec = any(dec_at[w] for w, _t in members)

    def bump(cls_terms, dec):
        if not dec:
            return cls_terms
        out = []
        for c, g2, k2, p2 in cls_terms:
            p3 = dict(p2)
            for lab, e in dec.items():
                p3[("l", lab)] = p3.get(("l", lab), 0) + e
            out.append((c, g2, k2, p3))
        return out

    if len(members) == 1 and forgotten_here and not any_dec:
        rec, branch_map = db.lookup(local_spec.g, local_spec.group,
                                    tuple(local_spec.xi), kept_local)
        relab = _record_relabel(rec, branch_map, local_spec, keymap,
                                kept_local, class_label)
        cls = relabel_class(
            rec["class"].scale(Fraction(1) / rec["ref"].normalization),
            relab)
        return [(c, {v: (g2, k2, p2)}) for c, g2, k2, p2 in cls.iter_terms()]

    all_local = list(range(1, n_v + 1))
    rec, branch_map = db.lookup(local_spec.g, local_spec.group,
                                tuple(local_spec.xi), all_local)
    base_cls = rec["class"].scale(Fraction(1) / rec["ref"].normalization)
    relab_base = _record_relabel(rec, branch_map, local_spec, keymap,
                                 all_local, class_label)
    if len(members) == 1:
        cls = relabel_class(base_cls, relab_base)
        terms = bump(list(cls.iter_terms()), dec_at[v])
        return [(c, {v: (g2, k2, p2)}) for c, g2, k2, p2 in terms]

    # repeated orbit: push along the multi-diagonal, then translate each
    # factor's labels to its member vertex and apply its decorations
    pushed = diagonal_push(base_cls, len(members), budget=budget)
    options = []
    for coeff, fterms in pushed.iter_terms():
        assign = {}
        c_extra = Fraction(1)
        for (w, t), (gr, kk, pp) in zip(members, fterms):
            mapping = {}
            for m in range(1, n_v + 1):
                base_lab = relab_base[m]
                mapping[m] = _translate_class_label(gg, base_lab, t,
                                                    class_label)
            g2 = gr.relabel_legs(mapping)
            p2 = {}
            for key, e in pp.items():
                if key[0] == "l":
                    p2[("l", mapping[key[1]])] = e
                else:
                    p2[key] = e
            for lab, e in dec_at[w].items():
                p2[("l", lab)] = p2.get(("l", lab), 0) + e
            assign[w] = (g2, kk, p2)
        options.append((coeff * c_extra, assign))
    return options


def _translate_class_label(gg, lab, t, class_label):
    """Translate a factor leg label by the group element t."""
    if isinstance(lab, tuple) and lab[0] == "h":
        h = lab[1]
        # labels of cut halves reference b-graph halves; translate the
        # underlying Gamma half instead
        gamma_halves = [hh for hh in gg.graph.half_vertex()
                        if class_label(("h", hh)) == lab]
        h0 = gamma_halves[0]
        return class_label(("h", gg.action.on_half(t, h0)))
    return gg.action.on_leg(t, lab)


def _record_relabel(rec, branch_map, local_spec, keymap, kept_local,
                    class_label):
    """Record leg label (1..n_kept of the record) -> factor leg label."""
    r_layout = rec["ref"].spec.marking_layout()
    r_kept = list(rec["ref"].kept)
    rec_by_branch = {}
    for pos, m in enumerate(r_kept, start=1):
        i = r_layout[m - 1][0]
        rec_by_branch.setdefault(i, []).append(pos)
    q_layout = local_spec.marking_layout()
    loc_by_branch = {}
    for m in kept_local:
        i = q_layout[m - 1][0]
        loc_by_branch.setdefault(i, []).append(m)
    relabel = {}
    for i, positions in rec_by_branch.items():
        target = branch_map[i]
        local_marks = loc_by_branch.get(target, [])
        if len(local_marks) != len(positions):
            raise MissingCycleError(local_spec.g, local_spec.group.key(),
                                    tuple(local_spec.xi), kept_local)
        for pos, m in zip(positions, local_marks):
            relabel[pos] = class_label(keymap[m])
    return relabel


def _graft_vertex_factor(gg, mor, w, assign, kept_set, term, pieces, vmap):
    """Glue the assigned classes of the Gamma vertices over b-vertex w and
    push down to the a-graph factor.  Returns (coeff, graph, kappa, psi)
    tuples on the factor with a-graph leg labels."""
    graph = gg.graph
    members_here = [v for v in range(graph.num_vertices)
                    if mor.alpha[v] == w]
    pi = {vmap[v][0] for v in members_here}
    piece = pieces[pi.pop()]
    local_of = {v: vmap[v][1] for v in members_here}
    slot_class = [None] * piece.num_vertices
    for v in members_here:
        slot_class[local_of[v]] = assign[v]
    # template: the piece, with each vertex's legs restricted to the labels
    # its class actually carries (internal halves stay edges)
    internal = {("h", h) for h in piece.half_vertex()}
    legs = []
    factors = []
    for li in range(piece.num_vertices):
        g2, k2, p2 = slot_class[li]
        labs = [l for l in g2.leg_labels() if l not in internal]
        for l in labs:
            legs.append((l, li))
        factors.append(Factor(piece.genera[li], tuple(g2.leg_labels())))
    template = StableGraph(piece.genera, legs, piece.edges, check=False)
    pc = ProductClass(factors, [(Fraction(1),
                                 tuple((g2, k2, p2)
                                       for g2, k2, p2 in slot_class))])
    glued = pushforward_boundary(template, pc)
    raw = list(glued.iter_terms())
    for lab in sorted({l for l, _vv in template.legs
                       if isinstance(l, int) and l not in kept_set}):
        nxt = []
        for c, g2, k2, p2 in raw:
            nxt.extend(forget_leg_raw(c, g2, k2, p2, lab))
        raw = nxt
    out = []
    for c, g2, k2, p2 in raw:
        g3 = g2.relabel_legs(term.kept_to_a)
        p3 = {}
        for key, e in p2.items():
            if key[0] == "l" and key[1] in term.kept_to_a:
                p3[("l", term.kept_to_a[key[1]])] = e
            else:
                p3[key] = e
        out.append((c, g3, k2, p3))
    return out


# -- pull-push through the target map ------------------------------------------

def _f_map(gg, vproj, lproj, hproj, kappa, psi):
    """Divide a decoration monomial on Gamma down to the quotient graph.

    psi at a marking with stabilizer of order e contributes 1/e per power;
    kappa at a vertex with stabilizer of order k contributes k per power
    (the comparison lemma reads kappa = |G_v| * delta^* kappa')."""
    G = gg.group
    coeff = Fraction(1)
    psi_q = {}
    for key, e in psi.items():
        if not e:
            continue
        if key[0] == "l":
            h_el = gg.stab[("l", key[1])]
            target = ("l", lproj[key[1]])
        else:
            h_el = gg.stab[("h", key[1])]
            target = ("h", hproj[key[1]])
        order = G.element_order(h_el)
        coeff *= Fraction(1, order ** e)
        psi_q[target] = psi_q.get(target, 0) + e
    kappa_q = {}
    for v, d in kappa.items():
        stab_order = len(gg.action.vertex_stabilizer(v))
        for a, b in d.items():
            if not b:
                continue
            coeff *= Fraction(stab_order) ** b
            kq = kappa_q.setdefault(vproj[v], {})
            kq[a] = kq.get(a, 0) + b
    return coeff, kappa_q, psi_q


class _StructureData:
    """Preprocessed data of one generic structure for pull-push use."""

    def __init__(self, s: EquivAStructure, budget=None):
        self.mor = s.mor
        self.gg = s.ggraph
        self.deg = s.ggraph.degree_delta(budget=budget or 2_000_000)
        q, vproj, lproj, hproj = s.ggraph.quotient()
        self.quotient = q
        self.vproj = vproj
        self.lproj = lproj
        self.hproj = hproj
        self.excess = s.excess_terms()


def _is_fully_symmetric(spec: HurwitzSpec):
    return (spec.b > 0
            and len(set(spec.xi)) == 1
            and all(spec.group.element_order(h) == spec.group.order
                    for h in spec.xi))


def _symmetric_canonical(graph):
    """Canonical representative of the S_r-orbit of a legged graph.

    Returns (rep graph with legs renamed 1..r, leg relabel map old->new).
    Vertex ordering ignores leg label values (only counts)."""
    nv = graph.num_vertices
    loops = [0] * nv
    for (h1, v1), (h2, v2) in graph.edges:
        if v1 == v2:
            loops[v1] += 1
    invs = [(graph.genera[v], len(graph.legs_at(v)),
             len(graph.halves_at(v)), loops[v]) for v in range(nv)]
    classes = {}
    for v in range(nv):
        classes.setdefault(invs[v], []).append(v)
    class_list = sorted(classes.items())
    best = None
    best_order = None
    for perm_parts in itertools.product(
            *[itertools.permutations(vs) for _, vs in class_list]):
        order = [v for part in perm_parts for v in part]
        pos = {v: i for i, v in enumerate(order)}
        enc = tuple(sorted((min(pos[v1], pos[v2]), max(pos[v1], pos[v2]))
                           for (h1, v1), (h2, v2) in graph.edges))
        if best is None or enc < best:
            best = enc
            best_order = order
    pos = {v: i for i, v in enumerate(best_order)}
    legs_sorted = sorted(graph.legs, key=lambda t: (pos[t[1]], repr(t[0])))
    relabel = {lab: i + 1 for i, (lab, _v) in enumerate(legs_sorted)}
    genera = [graph.genera[best_order[i]] for i in range(nv)]
    legs = [(relabel[lab], pos[v]) for lab, v in graph.legs]
    decorated = []
    for (h1, v1), (h2, v2) in graph.edges:
        a, b = pos[v1], pos[v2]
        if a <= b:
            decorated.append((a, b))
        else:
            decorated.append((b, a))
    decorated.sort()
    edges = [((2 * k, a), (2 * k + 1, b))
             for k, (a, b) in enumerate(decorated)]
    rep = StableGraph(genera, sorted(legs), edges, check=False)
    return rep, relabel


_STRUCT_CACHE: dict = {}


def pullpush_delta(cycle: HurwitzCycleRef, x: TautClass, budget=None):
    """delta_* phi^* pi^* x: the pull-push of a tautological class through
    the cycle's space of admissible covers, landing on Mbar_{g', b}."""
    spec = cycle.spec
    if (x.g, x.n) != (spec.g, cycle.n_kept()):
        raise SpaceMismatch(
            f"class on ({x.g},{x.n}) vs cycle markings "
            f"({spec.g},{cycle.n_kept()})")
    mapping = {j: m for j, m in enumerate(cycle.kept, start=1)}
    big = relabel_class(x, mapping)
    for m in cycle.forgotten:
        big = pullback_forgetful(big, m)
    out = TautClass(spec.gprime, spec.b)
    symmetric = _is_fully_symmetric(spec)
    for c, b_graph, kappa, psi in big.iter_terms():
        if sorted(b_graph.leg_labels()) != list(range(1, spec.r + 1)):
            raise ValidationError("internal: marking labels scrambled")
        if symmetric:
            rep, relabel = _symmetric_canonical(b_graph)
            # transport the decoration: psi legs by relabel, halves via the
            # graph identification; recompute by re-running on rep after
            # relabeling the term data
            iso = _find_leg_iso(b_graph, rep, relabel)
            if iso is None:
                raise ValidationError("internal: symmetric transport failed")
            vmap_t, hmap_t = iso
            kk = {vmap_t[v]: dict(d) for v, d in kappa.items() if d}
            pp = {}
            for key, e in psi.items():
                if key[0] == "l":
                    pp[("l", relabel[key[1]])] = e
                else:
                    pp[("h", hmap_t[key[1]])] = e
            cache_key = repr(("pp", spec.key(), rep.canonical_key()))
            if cache_key not in _STRUCT_CACHE:
                _STRUCT_CACHE[cache_key] = [
                    _StructureData(s, budget)
                    for s in enumerate_generic_A_structures(spec, rep,
                                                            budget=budget)]
            datas = _STRUCT_CACHE[cache_key]
            back = {new: old for old, new in relabel.items()}
            _accumulate_pullpush(out, c, datas, kk, pp, back)
        else:
            datas = [_StructureData(s, budget)
                     for s in enumerate_generic_A_structures(
                         spec, b_graph, budget=budget)]
            _accumulate_pullpush(out, c, datas, kappa, psi, None)
    return out


def _find_leg_iso(graph, rep, relabel):
    """An isomorphism graph -> rep compatible with the leg relabeling."""
    renamed = graph.relabel_legs(relabel)
    from .graphs import graph_isomorphisms
    for vmap, hmap in graph_isomorphisms(renamed, rep):
        return vmap, hmap
    return None


def _accumulate_pullpush(out, c, datas, kappa, psi, leg_back):
    for data in datas:
        if data.deg == 0:
            continue
        for ce, pe in data.excess:
            for cp, kp, pp in pull_decoration(data.mor, kappa, psi):
                kk, pq = dec_multiply(kp, pp, {}, pe)
                cf, kq, pq2 = _f_map(data.gg, data.vproj, data.lproj,
                                     data.hproj, kk, pq)
                coeff = c * data.deg * ce * cp * cf
                quotient = data.quotient
                if leg_back is not None:
                    quotient = quotient.relabel_legs(leg_back)
                    pq2 = {(k[0], leg_back[k[1]]) if k[0] == "l" else k: e
                           for k, e in pq2.items()}
                out.add_term(coeff, quotient, kq, pq2)


def pairing_vector(cycle: HurwitzCycleRef, strata, budget=None):
    """Intersection numbers of the cycle against complementary classes."""
    out = []
    for cls in strata:
        val = pullpush_delta(cycle, cls, budget=budget)
        out.append(val.evaluate())
    return out


def solve_by_pairing(cycle: HurwitzCycleRef, degree, generating,
                     complementary, budget=None):
    """Express the cycle in the generating strata via perfect pairing.

    Returns (coefficients list, TautClass, status); status "unique" when
    the pairing pins the class, else "underdetermined" with the kernel
    attached to the result tuple."""
    if degree != cycle.codim():
        raise DegreeError(
            f"cycle has codimension {cycle.codim()}, not {degree}")
    M = RatMatrix(len(complementary), len(generating),
                  [[product(gen, comp).evaluate() for gen in generating]
                   for comp in complementary])
    v = pairing_vector(cycle, complementary, budget=budget)
    res = solve_linear(M, v)
    if res.status == "inconsistent":
        raise ValidationError(
            "pairing system inconsistent; upstream values disagree")
    coeffs = res.solution
    g, n = cycle.spec.g, cycle.n_kept()
    total = TautClass(g, n)
    for a, gen in zip(coeffs, generating):
        total = total + gen.scale(a)
    return coeffs, total, res


def injectivity_range(g, n):
    """Largest degree where restriction to one-edge boundaries is
    injective: n-4 for g=0; 2g-2 for n=0; else 2g-3+n."""
    if g == 0:
        return n - 4
    if n == 0:
        return 2 * g - 2
    return 2 * g - 3 + n


class BoundaryConstraints:
    """Linear constraints on coordinates in a generating set, produced by
    comparing boundary pullbacks with resolved cycle pullbacks."""

    def __init__(self, generating):
        self.generating = list(generating)
        self.rows = []
        self.rhs = []
        self.blocks = []   # (a_graph, row span) bookkeeping

    def add_block(self, a_graph, pullbacks, resolved):
        keys = set()
        for pc in pullbacks:
            keys.update(pc.terms)
        keys.update(resolved.terms)
        start = len(self.rows)
        for key in sorted(keys, key=repr):
            row = [pc.terms[key][0] if key in pc.terms else Fraction(0)
                   for pc in pullbacks]
            self.rows.append(row)
            self.rhs.append(resolved.terms[key][0]
                            if key in resolved.terms else Fraction(0))
        self.blocks.append((a_graph, (start, len(self.rows))))

    def solve(self):
        M = RatMatrix(len(self.rows), len(self.generating), self.rows)
        return solve_linear(M, self.rhs)


def boundary_constraints(cycle: HurwitzCycleRef, degree, a_graphs,
                         db: CycleDB, generating=None, budget=None):
    """Assemble the linear system xi_A^*(sum a_i D_i) = resolved pullback
    over the supplied graphs A."""
    from .tautclass import pullback_boundary
    g, n = cycle.spec.g, cycle.n_kept()
    if generating is None:
        generating = [TautClass(g, n, [(Fraction(1), gr, kk, pp)])
                      for gr, kk, pp in decorated_strata(g, n, degree)]
    system = BoundaryConstraints(generating)
    for a_graph in a_graphs:
        pullbacks = [pullback_boundary(a_graph, gen, budget=budget)
                     for gen in generating]
        terms = boundary_pullback(cycle, a_graph, budget=budget)
        resolved = resolve_terms(a_graph, terms, db, budget=budget)
        system.add_block(a_graph, pullbacks, resolved)
    return system
