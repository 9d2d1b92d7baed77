"""Finite groups given by multiplication tables, and cyclic groups.

Elements are integers 0..order-1 with 0 the identity (cyclic groups use
residues directly).  Only small groups appear (|G| <= a few dozen), so
everything is computed from the table.
"""

from __future__ import annotations

import itertools
from math import gcd


class GroupError(ValueError):
    """Raised when a multiplication table is not a group."""


class GroupSpec:
    """A finite group: cyclic(m) or an explicit multiplication table."""

    def __init__(self, table, names=None, kind=None):
        self.table = tuple(tuple(row) for row in table)
        self.order = len(self.table)
        self.names = tuple(names) if names else tuple(
            str(i) for i in range(self.order))
        self.kind = kind or f"table:{self.order}"
        self._check()
        self._inverse = [None] * self.order
        for a in range(self.order):
            for b in range(self.order):
                if self.table[a][b] == 0:
                    self._inverse[a] = b
        self._orders = [self._element_order(a) for a in range(self.order)]

    @classmethod
    def cyclic(cls, m):
        if m < 1:
            raise GroupError("cyclic group needs m >= 1")
        table = [[(a + b) % m for b in range(m)] for a in range(m)]
        g = cls(table, names=[str(i) for i in range(m)], kind=f"cyclic:{m}")
        return g

    @classmethod
    def trivial(cls):
        return cls.cyclic(1)

    @classmethod
    def symmetric(cls, n):
        """S_n from permutation composition; elements sorted with id first."""
        perms = sorted(itertools.permutations(range(n)))
        index = {p: i for i, p in enumerate(perms)}
        table = [[index[tuple(p[q[i]] for i in range(n))] for q in perms]
                 for p in perms]
        names = ["".join(map(str, p)) for p in perms]
        return cls(table, names=names, kind=f"sym:{n}")

    def _check(self):
        n = self.order
        if n == 0:
            raise GroupError("empty table")
        rng = set(range(n))
        for row in self.table:
            if len(row) != n or set(row) != rng:
                raise GroupError("table rows must be permutations of 0..n-1")
        for a in range(n):
            if self.table[a][0] != a or self.table[0][a] != a:
                raise GroupError("element 0 must be the identity")
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    if self.table[self.table[a][b]][c] != \
                            self.table[a][self.table[b][c]]:
                        raise GroupError("table is not associative")

    # -- arithmetic ------------------------------------------------------

    def mul(self, a, b):
        return self.table[a][b]

    def inv(self, a):
        return self._inverse[a]

    def conj(self, a, t):
        """t a t^{-1}."""
        return self.mul(self.mul(t, a), self.inv(t))

    def commutator(self, a, b):
        return self.mul(self.mul(a, b), self.mul(self.inv(a), self.inv(b)))

    def element_order(self, a):
        return self._orders[a]

    def _element_order(self, a):
        k, x = 1, a
        while x != 0:
            x = self.table[x][a]
            k += 1
        return k

    def elements(self):
        return range(self.order)

    def is_abelian(self):
        return all(self.table[a][b] == self.table[b][a]
                   for a in range(self.order) for b in range(self.order))

    def centralizer(self, a):
        return [t for t in range(self.order)
                if self.table[t][a] == self.table[a][t]]

    def center(self):
        return [t for t in range(self.order)
                if all(self.table[t][a] == self.table[a][t]
                       for a in range(self.order))]

    def conjugacy_class(self, a):
        return sorted({self.conj(a, t) for t in range(self.order)})

    def cyclic_subgroup(self, a):
        out = [0]
        x = a
        while x != 0:
            out.append(x)
            x = self.mul(x, a)
        return sorted(out)

    def subgroup_closure(self, gens):
        out = {0}
        frontier = set(gens) | {0}
        while frontier:
            new = set()
            for a in frontier:
                for b in list(out) + list(frontier):
                    for c in (self.mul(a, b), self.mul(b, a), self.inv(a)):
                        if c not in out and c not in frontier:
                            new.add(c)
            out |= frontier
            frontier = new
        return sorted(out)

    def all_subgroups(self):
        """All subgroups as sorted element tuples (small groups only)."""
        found = {(0,)}
        frontier = {(0,)}
        while frontier:
            new = set()
            for sub in frontier:
                for a in range(1, self.order):
                    if a in sub:
                        continue
                    bigger = tuple(self.subgroup_closure(set(sub) | {a}))
                    if bigger not in found:
                        new.add(bigger)
            found |= new
            frontier = new
        return sorted(found, key=lambda s: (len(s), s))

    def subgroup_spec(self, elements):
        """GroupSpec of a subgroup plus the inclusion map (new -> old)."""
        elements = sorted(elements)
        if elements[0] != 0:
            raise GroupError("subgroup must contain the identity")
        index = {e: i for i, e in enumerate(elements)}
        try:
            table = [[index[self.mul(a, b)] for b in elements]
                     for a in elements]
        except KeyError:
            raise GroupError("set is not closed under multiplication")
        sub = GroupSpec(table, names=[self.names[e] for e in elements])
        sub = _canonical_cyclic(sub) or sub
        return sub, list(elements)

    def is_cyclic(self):
        return any(self._orders[a] == self.order for a in self.elements())

    def name(self, a):
        return self.names[a]

    def key(self):
        """Stable identity for caching and database keys."""
        if getattr(self, "_key", None) is None:
            if self.kind.startswith("cyclic:"):
                self._key = self.kind
            else:
                self._key = f"table:{self.order}:" + ",".join(
                    str(x) for row in self.table for x in row)
        return self._key

    def __repr__(self):
        return f"GroupSpec({self.kind}, order={self.order})"


def _canonical_cyclic(group):
    """Rewrite a cyclic table group as GroupSpec.cyclic with matching order.

    Returns None when the group is not cyclic.  The relabeling sends the
    smallest generator to 1; callers needing the map should use
    cyclic_identification.
    """
    if not group.is_cyclic():
        return None
    return GroupSpec.cyclic(group.order)


def cyclic_identification(group):
    """For a cyclic group: map element -> residue mod order.

    Picks the smallest-index generator and sends it to 1; deterministic.
    """
    n = group.order
    gen = min(a for a in group.elements() if group.element_order(a) == n)
    mapping = {0: 0}
    x = gen
    k = 1
    while x != 0:
        mapping[x] = k
        x = group.mul(x, gen)
        k += 1
    return mapping


class MonodromyDatum:
    """Ordered tuple of group elements (identity entries allowed)."""

    def __init__(self, group: GroupSpec, entries):
        self.group = group
        self.entries = tuple(int(e) for e in entries)
        for e in self.entries:
            if not (0 <= e < group.order):
                raise GroupError(f"element {e} outside group of order "
                                 f"{group.order}")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __eq__(self, other):
        return (isinstance(other, MonodromyDatum)
                and self.group.key() == other.group.key()
                and self.entries == other.entries)

    def __repr__(self):
        return f"MonodromyDatum({self.entries})"


def group_from_json(data) -> GroupSpec:
    """{"order": k, "names": [...], "table": [[...]]}."""
    table = data["table"]
    if len(table) != data.get("order", len(table)):
        raise GroupError("order field disagrees with table size")
    return GroupSpec(table, names=data.get("names"))


def group_to_json(group: GroupSpec):
    return {"order": group.order, "names": list(group.names),
            "table": [list(row) for row in group.table]}


def parse_group_token(token) -> GroupSpec:
    """Parse CLI group tokens: cyclic:m, Zm, Z/m, sym:n, table:<file>."""
    import json as _json
    token = token.strip()
    if token.startswith("cyclic:"):
        return GroupSpec.cyclic(int(token.split(":", 1)[1]))
    if token.startswith("Z/"):
        return GroupSpec.cyclic(int(token[2:]))
    if token.startswith("Z") and token[1:].isdigit():
        return GroupSpec.cyclic(int(token[1:]))
    if token.startswith("sym:"):
        return GroupSpec.symmetric(int(token.split(":", 1)[1]))
    if token.startswith("table:"):
        path = token.split(":", 1)[1]
        with open(path) as fh:
            return group_from_json(_json.load(fh))
    raise GroupError(f"unrecognized group token {token!r}")
