"""Brute-force evaluation of the two lemmas, written directly from their
quantifier form and sharing no code with the checkers under test."""

from itertools import permutations


def _exempt(events, who):
    has1 = any(e.label == "CompromiseDev1" and (e.initiator, e.server) == who for e in events)
    has2 = any(e.label == "CompromiseDev2" and (e.initiator, e.server) == who for e in events)
    return has1 and has2


def lemma1(events, ordered=False):
    # forall i. Complete(u,s,d)@i ==> (exists j. Begin(u,s,d)@j) | (exists k l. Dev1(u,s)@k & Dev2(u,s)@l)
    for i, c in enumerate(events):
        if c.label != "TransactionComplete":
            continue
        begun = any(
            b.label == "TransactionBegin"
            and (b.initiator, b.server, b.transaction) == (c.initiator, c.server, c.transaction)
            and (not ordered or j < i)
            for j, b in enumerate(events)
        )
        if not begun and not _exempt(events, (c.initiator, c.server)):
            return False
    return True


def lemma2(events, ordered=False):
    # exists an injective f from non-exempt Completes to Begins with equal
    # (u, s, d), and (ordered) f(i) < i
    completes = [
        i for i, e in enumerate(events)
        if e.label == "TransactionComplete" and not _exempt(events, (e.initiator, e.server))
    ]
    begins = [j for j, e in enumerate(events) if e.label == "TransactionBegin"]
    if len(completes) > len(begins):
        return False

    def key(e):
        return (e.initiator, e.server, e.transaction)

    for chosen in permutations(begins, len(completes)):
        if all(
            key(events[j]) == key(events[i]) and (not ordered or j < i)
            for i, j in zip(completes, chosen)
        ):
            return True
    return False
