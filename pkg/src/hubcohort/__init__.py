"""hubcohort: model-hub mining, stratified sampling, and cohort statistics."""

from .errors import (
    CommitImportError,
    CrawlError,
    DegenerateInput,
    HubCohortError,
    NotFound,
    ParseError,
    PluginError,
    StoreError,
    UsageError,
)
from .hub_client import CrawlConfig, CrawlReport, HubClient, RawModelPage
from .records import CommitRecord, ModelRecord, extract_carbon, extract_metrics, parse_model_record
from .store import Snapshot, SnapshotDelta, SnapshotStore, import_commit_files
from .stratify import SamplePlan, SampleSizeSpec, Stratum, allocate, draw_sample, form_strata, sample_size
from .stats import (
    CohortDefinition,
    CohortSeries,
    StatResult,
    mann_whitney,
    pooled_correlation,
    spearman,
    stratified_compare,
    track_cohort,
)

__version__ = "0.1.0"
