"""Exception types shared across the toolkit."""


class TopologyOutOfTemplate(ValueError):
    """Design tree falls outside the enumerable template (wing/arm counts)."""


class MaskMismatch(ValueError):
    """Flat parameter vector disagrees with the presence mask of a topology."""


class DegenerateSection(ValueError):
    """A geometric section has collapsed (zero chord, zero radius, ...)."""


class NonPhysical(ValueError):
    """Simulator input produces non-physical intermediate values."""


class EmptyDataset(ValueError):
    """No rows survived filtering, or a dataset file holds no rows."""


class DegenerateGeodesic(ValueError):
    """Antipodal or coincident endpoints: the connecting geodesic is not unique."""


class SingularTime(ValueError):
    """Drift evaluated at a time where the interpolant coefficients blow up."""


class NonFiniteLoss(RuntimeError):
    """Training loss became NaN/Inf; carries the offending batch seed."""

    def __init__(self, message: str, batch_seed=None):
        super().__init__(message)
        self.batch_seed = batch_seed


class StatsMismatch(ValueError):
    """Artifacts built against different dataset statistics or config hashes."""


class DegenerateInput(ValueError):
    """Metric input is degenerate (constant dimension, empty sample, ...)."""
