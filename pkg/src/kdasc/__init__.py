"""Teacher-student distillation of low-complexity acoustic scene classifiers.

Three spectrogram front-ends (mel, gammatone, constant-Q) each feed a large
teacher and a ~7k-parameter student; students learn from the teacher's
64-d embedding and are combined by a product-of-posteriors late fusion.
"""

from .audit import ComplexityReport, MacConvention, audit
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset import CLASS_NAMES, DatasetManifest, generate_synthetic_dataset, load_manifest, load_wav
from .estimators import StudentClassifier, TeacherClassifier, TrainConfig, TrainReport
from .frontend import KINDS, Kind, SpectrogramFeaturizer, featurize
from .fusion import ProdFusionClassifier, compare_systems, evaluate, prod_fuse
from .zoo import ModelSpec, TeacherConfig, build_student, build_teacher

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES",
    "Checkpoint",
    "ComplexityReport",
    "DatasetManifest",
    "KINDS",
    "Kind",
    "MacConvention",
    "ModelSpec",
    "ProdFusionClassifier",
    "SpectrogramFeaturizer",
    "StudentClassifier",
    "TeacherClassifier",
    "TeacherConfig",
    "TrainConfig",
    "TrainReport",
    "audit",
    "build_student",
    "build_teacher",
    "compare_systems",
    "evaluate",
    "featurize",
    "generate_synthetic_dataset",
    "load_checkpoint",
    "load_manifest",
    "load_wav",
    "prod_fuse",
    "save_checkpoint",
]
