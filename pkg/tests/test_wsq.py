import collections
import threading

import pytest
from hypothesis import given, strategies as st

from forkline.wsq import ABORT, EMPTY, Steal, StealResult, WorkStealingDeque


def test_new_deque_is_empty():
    q = WorkStealingDeque()
    assert q.empty() and len(q) == 0
    assert q.pop() is None
    assert q.steal() == EMPTY


def test_capacity_must_be_power_of_two():
    with pytest.raises(ValueError):
        WorkStealingDeque(12)
    assert WorkStealingDeque(8).capacity == 8


def test_push_pop_is_lifo():
    q = WorkStealingDeque()
    for i in range(5):
        q.push(i)
    assert [q.pop() for _ in range(5)] == [4, 3, 2, 1, 0]
    assert q.pop() is None


def test_steal_is_fifo():
    q = WorkStealingDeque()
    for i in "abc":
        q.push(i)
    got = [q.steal() for _ in range(3)]
    assert all(got) and [g.item for g in got] == ["a", "b", "c"]
    assert q.steal().tag is Steal.EMPTY


def test_last_element_goes_to_exactly_one_side():
    q = WorkStealingDeque()
    q.push("x")
    assert q.steal().item == "x"
    assert q.pop() is None
    q.push("y")
    assert q.pop() == "y"
    assert not q.steal()


def test_growth_keeps_order():
    q = WorkStealingDeque(2)
    for i in range(100):
        q.push(i)
    assert q.capacity >= 100
    assert q.steal().item == 0
    assert q.pop() == 99
    assert len(q) == 98


def test_steal_result_truthiness():
    assert not EMPTY and not ABORT
    assert StealResult(Steal.SUCCESS, 0)


def test_steal_aborts_when_top_moved_underneath():
    q = WorkStealingDeque()
    q.push(1)
    q.push(2)
    # a competing thief wins the slot between our read and our exchange
    q._cas_top(0)
    assert q._cas_top(0) is False


@given(st.lists(st.sampled_from(["push", "pop", "steal"]), max_size=300))
def test_single_thread_matches_reference(ops):
    q = WorkStealingDeque(2)
    ref = collections.deque()
    counter = 0
    for op in ops:
        if op == "push":
            q.push(counter)
            ref.append(counter)
            counter += 1
        elif op == "pop":
            assert q.pop() == (ref.pop() if ref else None)
        else:
            got = q.steal()
            if ref:
                assert got.tag is Steal.SUCCESS and got.item == ref.popleft()
            else:
                assert got.tag is Steal.EMPTY
        assert len(q) == len(ref)


def run_stress(items, thieves=3, capacity=64):
    q = WorkStealingDeque(capacity)
    taken = [[] for _ in range(thieves + 1)]
    done = threading.Event()

    def thief(k):
        out = taken[k]
        while True:
            r = q.steal()
            if r.tag is Steal.SUCCESS:
                out.append(r.item)
            elif r.tag is Steal.EMPTY and done.is_set() and q.empty():
                return

    threads = [threading.Thread(target=thief, args=(k + 1,)) for k in range(thieves)]
    for t in threads:
        t.start()
    mine = taken[0]
    for i in range(items):
        q.push(i)
        if i % 3 == 0:
            x = q.pop()
            if x is not None:
                mine.append(x)
    while True:
        x = q.pop()
        if x is None:
            break
        mine.append(x)
    done.set()
    for t in threads:
        t.join()
    return taken


def test_concurrent_conservation_small():
    taken = run_stress(20_000)
    flat = [x for part in taken for x in part]
    assert len(flat) == 20_000
    assert sorted(flat) == list(range(20_000))


def test_each_thief_sees_increasing_items():
    # steals take from the top, which only moves forward
    taken = run_stress(20_000, capacity=4)
    for part in taken[1:]:
        assert part == sorted(part)
