"""
Run metadata for pipeline stages

Records parameters, package versions, seed, timings, inputs, outputs and the
WARNING log records emitted while a stage runs, and writes them to
<output_dir>/<stage>.meta.json.
"""
from contextlib import contextmanager
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional
from amenity_space import __version__
from amenity_space.config import PipelineConfig
from amenity_space.schemas import RunMetadata
from amenity_space.utils.io import write_json
import logging
import time

logger = logging.getLogger(__name__)

TRACKED_PACKAGES = ["numpy", "pandas", "scipy", "scikit-learn", "networkx", "pydantic", "pydantic-settings", "PyYAML"]


def package_versions() -> Dict[str, str]:
    versions = {"amenity-space": __version__}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


class WarningCollector(logging.Handler):
    """Keeps the formatted message of every WARNING-or-worse record."""

    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(f"{record.name}: {record.getMessage()}")


class StageRecorder:
    def __init__(self, stage: str, config: PipelineConfig, output_dir: Path):
        self.stage = stage
        self.config = config
        self.output_dir = Path(output_dir)
        self.inputs: Dict[str, str] = {}
        self.outputs: List[str] = []
        self.report: Dict[str, Any] = {}
        self.collector = WarningCollector()
        self.started_at = datetime.now(timezone.utc)
        self._clock = time.perf_counter()

    def input(self, name: str, path: Optional[str]) -> None:
        if path:
            self.inputs[name] = str(path)

    def output(self, path: Path) -> Path:
        self.outputs.append(Path(path).name)
        return path

    def metadata(self) -> RunMetadata:
        return RunMetadata(
            stage=self.stage,
            started_at=self.started_at.isoformat(),
            finished_at=datetime.now(timezone.utc).isoformat(),
            duration_s=round(time.perf_counter() - self._clock, 6),
            versions=package_versions(),
            seed=self.config.seed,
            config=self.config.model_dump(mode="json"),
            inputs=self.inputs,
            outputs=sorted(self.outputs),
            warnings=list(self.collector.messages),
            report=self.report
        )

    def write(self) -> Path:
        path = self.output_dir / f"{self.stage}.meta.json"
        write_json(self.metadata(), path)
        return path


@contextmanager
def record_stage(stage: str, config: PipelineConfig, output_dir: Path) -> Iterator[StageRecorder]:
    """
    Collect warnings during the stage and write <stage>.meta.json once it succeeds.
    """
    recorder = StageRecorder(stage, config, output_dir)
    root = logging.getLogger()
    root.addHandler(recorder.collector)
    try:
        logger.info(f"Stage {stage} started")
        yield recorder
        path = recorder.write()
        logger.info(f"Stage {stage} finished in {time.perf_counter() - recorder._clock:.2f}s ({path})")
    finally:
        root.removeHandler(recorder.collector)
