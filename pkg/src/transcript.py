"""Round-by-round protocol transcripts and their JSON-lines form.

A transcript file has one JSON object per line:

    {"record": "header", "protocol": "ruv", "iteration": 1, ...}
    {"record": "round", "round": 0, "test": 1, "x": 0, "y": 1, "a": 1, "b": 1, "wins": 1}
    ...
    {"record": "summary", "decision": "pass", ...}

``test`` marks rounds that count toward the win statistic (every round in
RUV, only the seeded test rounds in VV); ``wins`` is the running count over
those rounds. The header holds parameters and the seed material, so a
transcript alone is enough to recompute every referee decision.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Tuple, Union

import numpy as np

from src.devices import AuditLog
from src.errors import InputError


def dumps(obj: Any) -> str:
    """Canonical JSON: sorted keys, no spaces, so reruns are byte-identical."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class ProtocolTranscript:
    """Columnar record of one sub-protocol run."""

    protocol: str
    iteration: int = 0
    cluster: int = 0
    devices: Tuple[str, str] = ("", "")
    header: Dict[str, Any] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)
    audit: AuditLog = field(default_factory=AuditLog)
    _columns: List[List[int]] = field(default_factory=lambda: [[], [], [], [], []])

    def record_round(self, test: bool, x: int, y: int, a: int, b: int) -> None:
        for column, value in zip(self._columns, (int(test), x, y, a, b)):
            column.append(int(value))

    @property
    def num_rounds(self) -> int:
        return len(self._columns[0])

    def arrays(self) -> Dict[str, np.ndarray]:
        """Columns as uint8 arrays keyed test, x, y, a, b."""
        names = ("test", "x", "y", "a", "b")
        return {name: np.asarray(col, dtype=np.uint8) for name, col in zip(names, self._columns)}

    def wins_per_round(self) -> np.ndarray:
        cols = self.arrays()
        won = (cols["a"] ^ cols["b"]) == (cols["x"] & cols["y"])
        return won & (cols["test"] == 1)

    def win_count(self) -> int:
        return int(self.wins_per_round().sum())

    def outputs(self, side: str) -> np.ndarray:
        return self.arrays()[side]

    def rounds(self) -> Iterator[Dict[str, int]]:
        running = np.cumsum(self.wins_per_round()) if self.num_rounds else []
        for k in range(self.num_rounds):
            test, x, y, a, b = (col[k] for col in self._columns)
            yield {"record": "round", "round": k, "test": test, "x": x, "y": y, "a": a, "b": b, "wins": int(running[k])}

    def head(self) -> Dict[str, Any]:
        return {
            "record": "header",
            "protocol": self.protocol,
            "iteration": self.iteration,
            "cluster": self.cluster,
            "devices": list(self.devices),
            **self.header,
        }

    def to_lines(self) -> List[str]:
        lines = [dumps(self.head())]
        lines.extend(dumps(r) for r in self.rounds())
        lines.append(dumps({"record": "summary", **self.summary}))
        return lines

    def write_jsonl(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")
        return path

    @classmethod
    def from_lines(cls, lines: List[str]) -> "ProtocolTranscript":
        records = [json.loads(line) for line in lines if line.strip()]
        if not records or records[0].get("record") != "header":
            raise InputError("Transcript does not start with a header record")
        head = dict(records[0])
        head.pop("record")
        transcript = cls(
            protocol=head.pop("protocol"),
            iteration=head.pop("iteration", 0),
            cluster=head.pop("cluster", 0),
            devices=tuple(head.pop("devices", ("", ""))),
            header=head,
        )
        last_round = -1
        for record in records[1:]:
            kind = record.get("record")
            if kind == "round":
                if record["round"] != last_round + 1:
                    raise InputError(f"Round {record['round']} out of order after {last_round}")
                last_round = record["round"]
                transcript.record_round(record["test"], record["x"], record["y"], record["a"], record["b"])
            elif kind == "summary":
                summary = dict(record)
                summary.pop("record")
                transcript.summary = summary
            else:
                raise InputError(f"Unknown transcript record {kind!r}")
        return transcript

    @classmethod
    def read_jsonl(cls, path: Union[str, Path]) -> "ProtocolTranscript":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_lines(f.readlines())
