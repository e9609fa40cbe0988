import json
import logging
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from models.agent import AgentTranscript
from models.run import RunReport

logger = logging.getLogger(__name__)

EVENT_FIELDS = ("run_id", "physician_id", "patient_id", "task", "attempt", "stage", "duration_ms", "outcome", "error")


class RunLog:
    """
    JSON-lines sink for one run, `<root>/<run_id>.jsonl`. Every event has
    the same key set; transcript events also carry the transcript.
    """

    def __init__(self, root: Path, run_id: str):
        self.root = Path(root)
        self.run_id = run_id
        self.path = self.root / f"{run_id}.jsonl"
        self._lock = threading.Lock()
        self.root.mkdir(parents=True, exist_ok=True)

    def event(
        self,
        stage: str,
        physician_id: Optional[str] = None,
        patient_id: Optional[str] = None,
        task: Optional[str] = None,
        attempt: Optional[int] = None,
        duration_ms: Optional[int] = None,
        outcome: Optional[str] = None,
        error: Optional[str] = None,
        transcript: Optional[AgentTranscript] = None,
    ):
        record: Dict[str, Any] = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "run_id": self.run_id,
            "physician_id": physician_id,
            "patient_id": patient_id,
            "task": task,
            "attempt": attempt,
            "stage": stage,
            "duration_ms": duration_ms,
            "outcome": outcome,
            "error": error,
        }
        if transcript is not None:
            record["transcript"] = transcript.model_dump(mode="json")
        line = json.dumps(record, ensure_ascii=False)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as file:
                file.write(line + "\n")

    def events(self) -> List[Dict[str, Any]]:
        if not self.path.exists():
            return []
        with open(self.path, "r", encoding="utf-8") as file:
            return [json.loads(line) for line in file if line.strip()]

    def save_report(self, report: RunReport) -> Path:
        path = self.root / f"{self.run_id}.report.json"
        with open(path, "w", encoding="utf-8") as file:
            file.write(report.model_dump_json(indent=2))
        logger.info("Run report written to %s", path)
        return path


def load_report(root: Path, run_id: str) -> Optional[RunReport]:
    path = Path(root) / f"{run_id}.report.json"
    if not path.exists():
        return None
    return RunReport.model_validate_json(path.read_text(encoding="utf-8"))
