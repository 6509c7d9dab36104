"""Impostor-trace synthesis toolkit for location privacy.

Offline: build semantic and mobility models from seed traces. Online:
synthesize plausible fake traces around real location queries. Evaluation:
measure how often a Markov inference attacker fails to spot the real trace.
"""

from .config import RunConfig, load_config, parse_config_text
from .core import (
    GridMap,
    ImpostorError,
    RawFix,
    Record,
    TimeScheme,
    Trace,
    fix_to_region,
    region_distance,
    second_to_interval,
)
from .ingest import (
    DatasetDescriptor,
    SyntheticCitySpec,
    generate_synthetic_city,
    parse_dataset,
    read_traces,
    write_traces,
)
from .matching import kuhn_munkres
from .mobility import (
    MobilityModel,
    RankDistribution,
    build_mobility,
    estimate_rank_distribution,
    k_shortest_paths,
)
from .offline import OfflineModels, build_offline_models, load_offline_models, save_offline_models
from .semantics import (
    SemanticModel,
    build_semantic_model,
    cluster_regions,
    kl,
    normalize_flows,
    skl,
)
from .stations import (
    Section,
    SpeedTable,
    Station,
    build_speed_table,
    extract_sections,
    extract_stations_occupancy,
    extract_stations_parking,
)
from .synthesizer import (
    FakeRecordStore,
    ImpostorTrace,
    QueryContext,
    SynthesisResult,
    make_query_context,
    synthesize,
)
from .adversary import (
    EfficacyReport,
    ObservationSet,
    UserProfile,
    baseline_random_walk,
    build_profiles,
    evaluate_efficacy,
    infer_real,
    run_efficacy_experiment,
)

__version__ = "0.1.0"
