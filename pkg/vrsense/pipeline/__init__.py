from vrsense.pipeline.config import EngineConfig  # noqa: F401
from vrsense.pipeline.metrics import EngineMetrics, StageTimer  # noqa: F401
from vrsense.pipeline.engine import Engine, ReportSink, ShardWorker, read_reports, run, write_reports  # noqa: F401
from vrsense.pipeline.evaluation import EvaluationResult, evaluate  # noqa: F401
from vrsense.pipeline.latency import ASMap, report_latency_by_as  # noqa: F401
