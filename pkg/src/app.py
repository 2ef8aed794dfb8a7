"""
Streamlit explorer for persisted expansion runs.

Browse the run directories written by ``run-infinite``:
- Run list with outcome and planned seed lengths
- Per-iteration table (VV test wins, RUV win count, chosen sub-block)
- Error ledger and the final bounds
- Running win fractions of every transcript
- Replay check of the selected run

Run with:
    streamlit run src/app.py

The data shaping lives in plain functions (``list_runs``,
``iteration_table``, ``ledger_table``, ``win_fractions``) that do not
touch streamlit.
"""

import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import streamlit as st

# Add src to path for imports when run from the repository root
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.config import config
from src.orchestrator import read_run, replay, transcript_name
from src.utils.logging_setup import get_logger, setup_logging

logger = get_logger(__name__)


def list_runs(root: Union[str, Path]) -> List[Dict[str, Any]]:
    """
    Run directories under ``root``, newest first.

    Args:
        root: Directory holding ``<run-id>/`` subdirectories

    Returns:
        One dict per run with run_id, path, k, m, outcome and planned lengths
    """
    root = Path(root)
    if not root.is_dir():
        return []
    runs = []
    for run_dir in root.iterdir():
        config_path = run_dir / "config.json"
        if not config_path.is_file():
            continue
        snapshot = json.loads(config_path.read_text(encoding="utf-8"))
        summary = load_summary(run_dir)
        runs.append({
            "run_id": snapshot["run_id"],
            "path": str(run_dir),
            "k": snapshot["k"],
            "m": int(snapshot["seed"].split(":", 1)[0]),
            "outcome": summary.get("outcome", "unknown"),
            "planned": " -> ".join(str(m) for m in snapshot.get("planned_lengths", [])),
            "mtime": config_path.stat().st_mtime,
        })
    return sorted(runs, key=lambda r: (-r["mtime"], r["run_id"]))


def load_summary(run_dir: Union[str, Path]) -> Dict[str, Any]:
    path = Path(run_dir) / "summary.json"
    return json.loads(path.read_text(encoding="utf-8")) if path.is_file() else {}


def iteration_table(summary: Dict[str, Any]) -> List[Dict[str, Any]]:
    """Display rows for the iterations of a summary.json report."""
    rows = []
    for it in summary.get("iterations", []):
        rows.append({
            "iteration": it["iteration"],
            "cluster": it["cluster"],
            "m": it["m"],
            "VV tests": f"{it['test_wins']}/{it['test_rounds']}",
            "VV": it["vv_decision"],
            "w / N": f"{it['w']}/{it['n_games']}" if it.get("w") is not None else "-",
            "threshold": round(it["ruv_threshold"], 2) if it.get("ruv_threshold") is not None else None,
            "RUV": it["ruv_decision"],
            "(i, j)": f"({it['i']}, {it['j']})" if it.get("i") is not None else "-",
            "out": it["output_len"],
            "p": it.get("p"),
            "flags": ", ".join(sorted(set(it.get("flags", [])))),
        })
    return rows


def ledger_table(summary: Dict[str, Any]) -> List[Dict[str, Any]]:
    ledger = summary.get("ledger") or {}
    keys = ("iteration", "m", "p", "eps_vv", "eps_ruv", "eps_ec", "delta")
    return [{key: entry[key] for key in keys} for entry in ledger.get("entries", [])]


def win_fractions(run_dir: Union[str, Path], points: int = 200) -> Dict[str, List[float]]:
    """
    Running win fraction over the test rounds of each transcript.

    VV transcripts count only their test rounds; RUV games are all tests.
    Each curve is thinned to at most ``points`` evenly spaced samples.

    Returns:
        Transcript file name -> win fractions in round order
    """
    _, transcripts = read_run(run_dir)
    curves = {}
    for transcript in transcripts:
        tests = np.cumsum(transcript.arrays()["test"])
        if transcript.num_rounds == 0 or tests[-1] == 0:
            continue
        wins = np.cumsum(transcript.wins_per_round())
        tested = tests > 0
        fraction = wins[tested] / tests[tested]
        step = max(1, len(fraction) // points)
        curves[transcript_name(transcript)] = [float(f) for f in fraction[::step]]
    return curves


def render_sidebar(runs: List[Dict[str, Any]]) -> Union[Dict[str, Any], None]:
    """Run picker; returns the selected run."""
    with st.sidebar:
        st.title("certirand runs")
        st.markdown("*Simulated devices only; outputs are not certified randomness.*")
        st.divider()
        st.text(f"Directory: {config.out_dir}")
        if not runs:
            st.info("No runs found")
            return None
        labels = [f"{r['run_id']} ({r['outcome']})" for r in runs]
        choice = st.selectbox("Run", labels, key="run_select")
        return runs[labels.index(choice)]


def render_run(run: Dict[str, Any]) -> None:
    summary = load_summary(run["path"])
    st.title(run["run_id"])

    col1, col2, col3 = st.columns(3)
    with col1:
        st.metric("Seed bits", run["m"])
    with col2:
        st.metric("Iterations", f"{len(summary.get('iterations', []))} / {run['k']}")
    with col3:
        st.metric("Outcome", summary.get("outcome", "unknown"))
    if summary.get("cause"):
        st.warning(f"{summary['cause']}: {summary.get('detail', '')}")
    st.caption(f"Planned lengths: {run['planned']}")

    st.subheader("Iterations")
    st.dataframe(iteration_table(summary), use_container_width=True)

    st.subheader("Error ledger")
    ledger = ledger_table(summary)
    if ledger:
        st.dataframe(ledger, use_container_width=True)
        col1, col2, col3 = st.columns(3)
        with col1:
            st.metric("2 delta(k)", f"{summary['final_bound']:.3e}")
        with col2:
            st.metric("Closed bound", f"{summary['closed_bound']:.3e}")
        with col3:
            st.metric("Tower bound", f"{summary['tower_bound']:.3e}")
    else:
        st.info("No iteration passed; the ledger is empty")

    st.subheader("Win fractions")
    curves = win_fractions(run["path"])
    for name, curve in curves.items():
        st.caption(name)
        st.line_chart(curve)

    with st.expander("Replay"):
        if st.button("Replay this run", key="replay_button"):
            with st.spinner("Recomputing..."):
                result = replay(run["path"])
            if result.ok:
                st.success("Decisions, seed chain and summaries reproduce")
            else:
                st.error("Replay mismatch")
            st.json({"checks": result.checks, "chain_ok": result.chain_ok,
                     "summary_json": result.summary_json_match, "summary_txt": result.summary_txt_match})


def main():
    """Main app function."""
    st.set_page_config(page_title="certirand runs", layout="wide", initial_sidebar_state="expanded")
    setup_logging(level=config.log_level)
    run = render_sidebar(list_runs(config.out_dir))
    if run is None:
        st.title("certirand runs")
        st.markdown("Write a run first:")
        st.code("python -m src.cli run-infinite --seed-bits 242 --rounds 2 --consts configs/quick.consts")
        return
    try:
        render_run(run)
    except Exception as e:
        logger.error(f"Could not render {run['path']}: {e}")
        st.error(f"Error: {e}")


if __name__ == "__main__":
    main()
