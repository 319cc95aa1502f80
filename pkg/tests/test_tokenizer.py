from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from musicsim.errors import IncompatibleVocabulary, TargetTooSmall, UnknownId
from musicsim.midi import Note, Piece
from musicsim.tokenizer import (
    NoteOff,
    NoteOn,
    PerformanceEvent,
    TimeShift,
    TokenizerConfig,
    Velocity,
    Vocabulary,
    build_vocabulary,
    detokenize,
    encode_events,
    events_from_notes,
    tokenize,
)

CFG = TokenizerConfig()
BASE = CFG.base_size


def reference_bpe(seqs, base, target, max_len):
    """Brute-force merge learner on Python lists."""
    seqs = [list(s) for s in seqs]
    length = {i: 1 for i in range(base)}
    merges = []
    while base + len(merges) < target:
        counts = Counter()
        for s in seqs:
            for a, b in zip(s, s[1:]):
                if length[a] + length[b] <= max_len:
                    counts[(a, b)] += 1
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        if counts[best] < 2:
            break
        new = base + len(merges)
        length[new] = length[best[0]] + length[best[1]]
        merges.append(best)
        out = []
        for s in seqs:
            r, i = [], 0
            while i < len(s):
                if i + 1 < len(s) and (s[i], s[i + 1]) == best:
                    r.append(new)
                    i += 2
                else:
                    r.append(s[i])
                    i += 1
            out.append(r)
        seqs = out
    return merges, seqs


class TestEvents:
    def test_single_note(self):
        piece = Piece((Note(0.0, 0.5, 60, 64),))
        assert events_from_notes(piece, CFG) == [Velocity(16), NoteOn(60), TimeShift(50), NoteOff(60)]

    def test_empty(self):
        assert events_from_notes(Piece(), CFG) == []

    def test_long_gap_greedy(self):
        piece = Piece((Note(0.0, 0.01, 60, 64), Note(1.24, 0.01, 60, 64)))
        ev = events_from_notes(piece, CFG)
        # off at 0.01 s, next on at 1.24 s: gap of 123 bins
        gap = ev[ev.index(NoteOff(60)) + 1:ev.index(NoteOn(60), 2)]
        assert gap == [TimeShift(100), TimeShift(23)]

    def test_velocity_only_on_change(self):
        piece = Piece((Note(0.0, 0.1, 60, 64), Note(0.2, 0.1, 62, 63), Note(0.4, 0.1, 64, 100)))
        vels = [e for e in events_from_notes(piece, CFG) if e.kind.value == "VEL"]
        assert vels == [Velocity(16), Velocity(25)]  # 63 and 64 share a bin

    def test_velocity_quantisation_range(self):
        assert CFG.quantize_velocity(1) == 1
        assert CFG.quantize_velocity(127) == 32
        assert CFG.quantize_velocity(64) == 16

    def test_offs_before_ons_at_same_time(self):
        piece = Piece((Note(0.0, 0.5, 60, 64), Note(0.5, 0.5, 60, 64)))
        ev = events_from_notes(piece, CFG)
        assert ev == [Velocity(16), NoteOn(60), TimeShift(50), NoteOff(60), NoteOn(60),
                      TimeShift(50), NoteOff(60)]

    def test_sub_bin_note_kept_one_bin(self):
        ev = events_from_notes(Piece((Note(0.0, 0.001, 60, 64),)), CFG)
        assert ev[-2:] == [TimeShift(1), NoteOff(60)]

    def test_codes(self):
        for e in (NoteOn(60), NoteOff(60), TimeShift(50), Velocity(16)):
            assert PerformanceEvent.from_code(e.code) == e
        assert [e.code for e in (NoteOn(60), NoteOff(60), TimeShift(50), Velocity(16))] == [
            "ON_60", "OFF_60", "TS_50", "VEL_16"]

    def test_id_layout(self):
        assert BASE == 388
        ids = [CFG.event_id(e) for e in (NoteOn(0), NoteOff(0), TimeShift(1), Velocity(1),
                                         Velocity(32))]
        assert ids == [0, 128, 256, 356, 387]
        assert [CFG.event_from_id(i) for i in ids] == [NoteOn(0), NoteOff(0), TimeShift(1),
                                                        Velocity(1), Velocity(32)]

    def test_configurable_308(self):
        # 128 on + 128 off + 32 shifts + 20 velocities
        assert TokenizerConfig(max_time_shift_bins=32, velocity_bins=20).base_size == 308


class TestBuildVocabulary:
    def test_abab(self):
        a, b = 5, 7
        v = build_vocabulary([np.array([a, b, a, b, a, b])], CFG, BASE + 1, 4)
        assert v.merges == ((a, b),)
        assert [e.code for e in v.word(BASE)] == ["ON_5", "ON_7"]

    def test_target_equals_base(self):
        v = build_vocabulary([np.array([1, 2, 1, 2, 1, 2])], CFG, BASE, 4)
        assert v.merges == () and v.size == BASE

    def test_all_pairs_once(self):
        v = build_vocabulary([np.array([1, 2, 3, 4, 5])], CFG, BASE + 50, 4)
        assert v.merges == ()

    def test_target_too_small(self):
        with pytest.raises(TargetTooSmall):
            build_vocabulary([], CFG, BASE - 1, 4)

    def test_pairs_do_not_cross_sequences(self):
        v = build_vocabulary([np.array([1, 2]), np.array([1, 2]), np.array([3])], CFG, BASE + 5, 4)
        assert v.merges == ((1, 2),)
        v = build_vocabulary([np.array([1]), np.array([2]), np.array([1]), np.array([2])],
                             CFG, BASE + 5, 4)
        assert v.merges == ()

    def test_max_word_events(self):
        seq = np.array([1, 2, 3, 4] * 10)
        v = build_vocabulary([seq], CFG, BASE + 100, 2)
        assert max(v.word_lengths) <= 2

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.lists(st.integers(0, 5), max_size=40), max_size=5),
           st.integers(0, 30), st.integers(1, 6))
    def test_matches_reference(self, seqs, extra, max_len):
        arrays = [np.array(s, dtype=np.int64) for s in seqs]
        v = build_vocabulary(arrays, CFG, BASE + extra, max_len)
        merges, merged = reference_bpe(seqs, BASE, BASE + extra, max_len)
        assert list(v.merges) == merges
        assert [tokenize(a, v).tolist() for a in arrays] == merged
        assert all(n <= max_len for n in v.word_lengths[BASE:])

    def test_deterministic_serialisation(self, rng):
        seqs = [rng.integers(0, 12, 300) for _ in range(6)]
        a = build_vocabulary(seqs, CFG, BASE + 40, 6).to_json()
        b = build_vocabulary([s.copy() for s in seqs], CFG, BASE + 40, 6).to_json()
        assert a == b

    def test_json_round_trip(self, rng):
        v = build_vocabulary([rng.integers(0, 8, 200)], CFG, BASE + 20, 5)
        w = Vocabulary.from_json(v.to_json())
        assert w == v and w.to_json() == v.to_json()

    def test_json_rejects_inconsistent_words(self, rng):
        import json

        v = build_vocabulary([rng.integers(0, 8, 200)], CFG, BASE + 5, 5)
        doc = json.loads(v.to_json())
        doc["words"][BASE] = ["ON_1"]
        with pytest.raises(IncompatibleVocabulary):
            Vocabulary.from_json(json.dumps(doc))


def _vocab_ab():
    return Vocabulary(CFG, ((5, 7),), 4)


class TestTokenize:
    def test_merge_replay(self):
        ev = [NoteOn(5), NoteOn(7), NoteOn(5), NoteOn(7)]
        assert tokenize(ev, _vocab_ab()).tolist() == [BASE, BASE]

    def test_empty(self):
        assert tokenize([], _vocab_ab()).tolist() == []
        assert detokenize([], _vocab_ab()) == []

    def test_identity_without_merges(self):
        ev = [Velocity(3), NoteOn(60), TimeShift(10), NoteOff(60)]
        v = Vocabulary(CFG)
        assert tokenize(ev, v).tolist() == encode_events(ev, CFG).tolist()

    def test_detokenize_expansion(self):
        assert detokenize([BASE], _vocab_ab()) == [NoteOn(5), NoteOn(7)]

    def test_unknown_id(self):
        with pytest.raises(UnknownId):
            detokenize([BASE + 1], _vocab_ab())

    def test_incompatible_event(self):
        with pytest.raises(IncompatibleVocabulary):
            tokenize([TimeShift(101)], _vocab_ab())

    def test_round_trip_1000_random(self, rng):
        corpus = [rng.integers(0, 20, 500) for _ in range(4)]
        v = build_vocabulary(corpus, CFG, BASE + 60, 6)
        for _ in range(1000):
            ids = rng.integers(0, BASE, int(rng.integers(0, 60)))
            ids[: len(ids) // 2] = rng.integers(0, 20, len(ids) // 2)
            events = [CFG.event_from_id(int(i)) for i in ids]
            toks = tokenize(events, v)
            assert detokenize(toks, v) == events
            assert len(toks) <= len(events)
