"""Feature-space uncertainty scoring, filtering, and loss weighting for detection datasets."""

from .dataset import (CategoryTable, DatasetIndex, DatasetStats, ImageRecord,
                      ObjectAnnotation, dataset_stats, parse_dataset, write_dataset)
from .errors import (CorruptionError, DatasetParseError, DegenerateClassWarning,
                     DegenerateRegionError, DimensionError, FormatError,
                     IntegrityError, MissingFeatureMapsError, SingularModelError,
                     UnknownCategoryError, UqdetError)
from .features import (DirectoryMapSource, FeatureArchive, FeatureMap,
                       PooledFeature, PoolMode, PoolReport, build_archive,
                       pool_box, pool_mask, rasterize_mask, read_archive,
                       read_feature_map, write_archive, write_feature_map)
from .filtering import (FilterResult, apply_filter, empirical_quantile,
                        filter_noise_global, filter_noise_per_class,
                        filter_redundant, read_filter_result, write_filter_result)
from .gaussian import (ClassConditionalGaussian, fit_density_model, load_model,
                       model_checksum, save_model)
from .losses import (LossBatch, bernoulli_entropy, constant_entropy_loss,
                     focal_loss, loss_gradient, mean_bce, ua_entropy_loss)
from .scoring import (HistogramReport, ScoreRecord, ScoreTable, histogram,
                      normalize, read_scores, score_dataset, write_histogram_csv,
                      write_histogram_svg, write_scores)
from .synth import (RecoveryReport, SynthConfig, SynthTruth, evaluate_auroc,
                    generate, recovery_experiment, write_recovery_csv)

__version__ = "0.1.0"
