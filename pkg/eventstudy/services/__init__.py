from .abnormal import AbnormalReturnService
from .calibration import CalibrationService
from .inference import InferenceService
from .ingest import IngestService
from .pipeline import PipelineService, RunConfigService
from .power import PowerService
from .registry import EventRegistryService
from .reporting import ReportingService, atomic_write_text, write_outputs
from .robustness import RobustnessService

__all__ = [
    "AbnormalReturnService",
    "CalibrationService",
    "EventRegistryService",
    "InferenceService",
    "IngestService",
    "PipelineService",
    "PowerService",
    "ReportingService",
    "RobustnessService",
    "RunConfigService",
    "atomic_write_text",
    "write_outputs",
]
