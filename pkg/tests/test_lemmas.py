import pytest
from hypothesis import given, settings, strategies as st

from fido2d.harness.lemmas import LEMMA1, LEMMA2, Verdict, check_all, check_lemma1, check_lemma2
from fido2d.trace import LABELS, TraceEvent

from . import oracle


def ev(label, user="u", server="s", data="", step=0):
    return TraceEvent(label, user, server, data, step)


BEGIN = lambda d="d", u="u", s="s": ev("TransactionBegin", u, s, d)  # noqa: E731
DONE = lambda d="d", u="u", s="s": ev("TransactionComplete", u, s, d)  # noqa: E731
DEV1 = lambda u="u", s="s": ev("CompromiseDev1", u, s)  # noqa: E731
DEV2 = lambda u="u", s="s": ev("CompromiseDev2", u, s)  # noqa: E731


def test_honest_trace_holds():
    trace = [ev("NewServer", "", "s"), ev("Registered"), BEGIN(), DONE()]
    assert all(v.holds for v in check_all(trace))


def test_empty_trace_holds():
    assert all(v.holds for v in check_all([]))


def test_manipulated_completion_violates_lemma1():
    trace = [ev("Registered"), BEGIN("d"), DONE("d2")]
    verdict = check_lemma1(trace)
    assert not verdict.holds and verdict.counterexample[-1] == DONE("d2")


def test_dual_compromise_escape():
    trace = [DEV1(), DEV2(), DONE("d2"), DONE("d2")]
    assert all(v.holds for v in check_all(trace))


def test_escape_is_per_user_and_server():
    assert not check_lemma1([DEV1("u", "s"), DEV2("u", "t"), DONE("d", "u", "s")]).holds
    assert not check_lemma1([DEV1("u", "s"), DEV2("v", "s"), DONE("d", "u", "s")]).holds
    assert not check_lemma1([DEV1(), DONE("x")]).holds


def test_duplicate_completion_violates_lemma2_only():
    trace = [BEGIN(), DONE(), DONE()]
    assert check_lemma1(trace).holds
    assert not check_lemma2(trace).holds


def test_two_begins_two_completes_hold():
    assert check_lemma2([BEGIN(), BEGIN(), DONE(), DONE()]).holds


def test_phish_begin_does_not_justify():
    assert not check_lemma1([ev("PhishBegin", "u", "s", "d"), DONE()]).holds


def test_unordered_versus_ordered():
    trace = [DONE(), BEGIN()]
    assert check_lemma1(trace).holds and check_lemma2(trace).holds
    assert not check_lemma1(trace, ordered=True).holds
    assert not check_lemma2(trace, ordered=True).holds


def test_verdict_invariant():
    with pytest.raises(ValueError):
        Verdict(LEMMA1, True, (DONE(),))
    with pytest.raises(ValueError):
        Verdict(LEMMA2, False, None)


def test_counterexample_is_a_slice_of_culprit_pair():
    trace = [BEGIN("d", "v"), ev("Registered"), DONE("x")]
    verdict = check_lemma1(trace)
    assert verdict.counterexample == (ev("Registered"), DONE("x"))


events = st.builds(
    TraceEvent,
    st.sampled_from(LABELS),
    st.sampled_from(["u", "v"]),
    st.sampled_from(["s", "t"]),
    st.sampled_from(["d", "e"]),
    st.just(0),
)
# Bias toward the labels the lemmas talk about so violations and escapes both occur.
relevant = st.builds(
    TraceEvent,
    st.sampled_from(["TransactionBegin", "TransactionComplete", "CompromiseDev1", "CompromiseDev2"]),
    st.sampled_from(["u", "v"]),
    st.just("s"),
    st.sampled_from(["d", "e"]),
    st.just(0),
)
traces = st.lists(events | relevant, max_size=12)


@settings(max_examples=1000)
@given(traces, st.booleans())
def test_checkers_match_brute_force(trace, ordered):
    assert check_lemma1(trace, ordered).holds == oracle.lemma1(trace, ordered)
    assert check_lemma2(trace, ordered).holds == oracle.lemma2(trace, ordered)


@settings(max_examples=300)
@given(traces)
def test_ordered_is_stricter(trace):
    for strict, loose in zip(check_all(trace, True), check_all(trace, False)):
        assert loose.holds or not strict.holds


@settings(max_examples=300)
@given(traces)
def test_lemma2_implies_lemma1(trace):
    l1, l2 = check_all(trace)
    assert l1.holds or not l2.holds


@settings(max_examples=300)
@given(traces, traces)
def test_adding_begins_never_hurts(trace, extra):
    begins = [e for e in extra if e.label == "TransactionBegin"]
    before = check_all(trace)
    after = check_all(trace + begins)
    for b, a in zip(before, after):
        assert a.holds or not b.holds
