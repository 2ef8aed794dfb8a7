"""Tests for protocol transcripts."""

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.errors import InputError
from src.transcript import ProtocolTranscript, dumps


def sample_transcript():
    transcript = ProtocolTranscript("vv", iteration=2, cluster=0, devices=("D1", "D2"))
    transcript.header = {"seed": "8:a5", "mode": "test"}
    for test, x, y, a, b in [(1, 1, 1, 0, 1), (0, 0, 0, 1, 1), (1, 0, 1, 1, 0), (1, 1, 1, 1, 0)]:
        transcript.record_round(test, x, y, a, b)
    transcript.summary = {"decision": "pass", "test_wins": 2}
    return transcript


class TestTranscript:
    def test_win_count_only_scores_test_rounds(self):
        assert sample_transcript().win_count() == 2

    def test_running_wins(self):
        wins = [r["wins"] for r in sample_transcript().rounds()]
        assert wins == [1, 1, 1, 2]

    def test_lines_shape(self):
        lines = sample_transcript().to_lines()
        assert len(lines) == 6
        assert json.loads(lines[0])["record"] == "header"
        assert json.loads(lines[-1])["record"] == "summary"

    def test_round_trip_is_byte_identical(self, tmp_path):
        original = sample_transcript()
        path = original.write_jsonl(tmp_path / "t.jsonl")
        again = ProtocolTranscript.read_jsonl(path)
        assert again.to_lines() == original.to_lines()
        assert again.devices == ("D1", "D2")
        assert again.iteration == 2

    def test_rounds_must_be_in_order(self):
        lines = sample_transcript().to_lines()
        lines[1], lines[2] = lines[2], lines[1]
        with pytest.raises(InputError):
            ProtocolTranscript.from_lines(lines)

    def test_header_required(self):
        with pytest.raises(InputError):
            ProtocolTranscript.from_lines(sample_transcript().to_lines()[1:])

    def test_empty_transcript(self):
        transcript = ProtocolTranscript("ruv")
        assert transcript.win_count() == 0
        assert list(transcript.rounds()) == []


def test_dumps_sorts_keys():
    assert dumps({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
