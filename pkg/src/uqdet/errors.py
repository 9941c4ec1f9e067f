"""Exception types shared across the toolkit."""


class UqdetError(Exception):
    """Base class for all toolkit errors."""


class DatasetParseError(UqdetError):
    """Annotation file is not parseable as COCO-style JSON."""


class IntegrityError(UqdetError):
    """Referential or uniqueness violation in a dataset."""


class FormatError(UqdetError):
    """A container or text file does not match its declared format."""


class CorruptionError(FormatError):
    """A container file is truncated, inconsistent, or fails its checksum."""


class DimensionError(UqdetError):
    """Feature dimensions of two artifacts do not agree."""


class DegenerateRegionError(UqdetError):
    """A pooling region has no usable area (empty mask or zero-area box)."""


class MissingFeatureMapsError(UqdetError):
    """One or more images referenced by scoreable annotations have no feature map."""

    def __init__(self, image_ids):
        self.image_ids = sorted(image_ids)
        super().__init__(f"no feature map for image ids {self.image_ids}")


class UnknownCategoryError(UqdetError):
    """A category id was queried that the model was not fitted on."""


class SingularModelError(UqdetError):
    """Covariance factorization failed even after regularization."""


class DegenerateClassWarning(UserWarning):
    """A class whose score range collapsed to a single value."""
