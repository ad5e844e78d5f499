"""LOD2 building reconstruction from airborne lidar points and footprint polygons."""

import logging
import os

from .config import PipelineConfig, load_config
from .errors import Lod2Error
from .fixtures import ARCHETYPES, EXPECTED_COUNTS, FixtureSpec, generate
from .geom import Plane3, PointCloud, Polygon2
from .io import export_mesh, load_footprints, load_mesh, load_point_cloud
from .mesh import BuildingMesh, Facet, validate_mesh
from .pipeline import BuildingJob, PipelineResult, Status, run_batch, run_pipeline

__version__ = "0.1.0"

_level = os.environ.get("LOD2KIT_LOG_LEVEL")
if _level:
    logging.getLogger(__name__).setLevel(_level.upper())
logging.getLogger(__name__).addHandler(logging.NullHandler())
