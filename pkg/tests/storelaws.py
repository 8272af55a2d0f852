"""Randomized store programs and the mutable-store law checks.

Shared between the module tests and the acceptance suite.
"""

import random

from machforge.dialect import normalize, parse_source
from machforge.dialect.syntax import (AssignMut, Call, Conj, Disj, InitMut,
                                      ReadMut, True_, Unify)
from machforge.mutsem import Interp, MutStore, store_assign, store_new, store_read
from machforge.terms import Atom, Int, Var

TYPES_SRC = ":- regtype flag/1 + low(int32).\nflag := off | on.\n"


def base_program():
    decls, clauses = parse_source(TYPES_SRC)
    return normalize(decls, clauses)


def _rand_value(rng, tau):
    if tau == "flag":
        return Atom(rng.choice(["off", "on"]))
    return Int(rng.randrange(-50, 50))


def random_store_goal(rng, n_muts=3, depth=2):
    """A goal that creates ``n_muts`` mutables then exercises them."""
    muts = [(f"M{i}", rng.choice(["flag", "int"])) for i in range(n_muts)]
    prelude = [InitMut(Var(m), tau, _rand_value(rng, tau)) for m, tau in muts]
    fresh = [0]

    def body(d):
        kind = rng.choice(["assign", "read", "conj", "disj", "true"]
                          if d > 0 else ["assign", "read", "true"])
        if kind == "assign":
            m, tau = rng.choice(muts)
            return AssignMut(Var(m), _rand_value(rng, tau))
        if kind == "read":
            m, _ = rng.choice(muts)
            fresh[0] += 1
            return ReadMut(Var(f"R{fresh[0]}"), Var(m))
        if kind == "conj":
            return Conj([body(d - 1), body(d - 1)])
        if kind == "disj":
            return Disj([body(d - 1), body(d - 1)])
        return True_()

    return Conj(prelude + [body(depth)]), muts


def _store_key(store, bindings, muts):
    out = []
    for m, _tau in muts:
        from machforge.mutsem import walk
        mid = walk(Var(m), bindings)
        out.append(store_read(store, mid))
    return tuple(out)


def check_laws_once(rng, interp) -> None:
    """Run every mutable-store law against one random program."""
    regtypes = interp.regtypes

    # read-after-write and frame property on a concrete random store
    store = MutStore()
    mids = []
    for _ in range(rng.randrange(1, 5)):
        tau = rng.choice(["flag", "int"])
        store, mid = store_new(store, tau, _rand_value(rng, tau), regtypes)
        mids.append(mid)
    target = rng.choice(mids)
    val = _rand_value(rng, target.type)
    before = {m: store_read(store, m) for m in mids}
    store2 = store_assign(store, target, val, regtypes)
    assert store_read(store2, target) == val, "read-after-write"
    for m in mids:
        if m != target:
            assert store_read(store2, m) == before[m], "frame property"
    # the original store is untouched (persistence)
    assert store_read(store, target) == before[target]

    # branch isolation + weakening + typing over a random store program
    goal, muts = random_store_goal(rng)
    sols = list(interp.solve(goal, {}, MutStore()))
    assert sols, "store programs built here cannot fail"

    # disjunction: solutions must equal branch-wise solutions from the
    # same input store, in order (M-Disj-1 then M-Disj-2)
    prelude, tail = goal.goals[:-1], goal.goals[-1]
    if isinstance(tail, Disj):
        entry = list(interp.solve(Conj(prelude) if prelude else True_(), {}, MutStore()))
        b0, s0 = entry[0]
        got = [_store_key(s, b, muts) for b, s in interp.solve(tail, b0, s0)]
        want = []
        for br in tail.branches:
            want += [_store_key(s, b, muts) for b, s in interp.solve(br, b0, s0)]
        assert got == want, "branch isolation"

    # weakening: a goal with no mutable operations leaves the store alone
    b1, s1 = sols[0]
    for b2, s2 in interp.solve(True_(), b1, s1):
        assert s2 is s1, "weakening"
