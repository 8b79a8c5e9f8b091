"""Exception types raised across the library."""


class CurlestError(Exception):
    """Base class for all library errors."""


# mesh
class NonConforming(CurlestError):
    """Mesh is not a valid conforming simplicial complex."""


class DegenerateTet(CurlestError):
    """Tetrahedron with (near-)zero volume."""


class ClosureOverflow(CurlestError):
    """Refinement closure loop exceeded its iteration cap."""


class NotAdjacent(CurlestError):
    """Queried entities are not adjacent."""


# polynomial spaces
class UnsupportedDegree(CurlestError):
    """Polynomial degree outside the implemented range."""


class WrongKind(CurlestError):
    """Operation not defined for this reference-space kind."""


class SingularJacobian(CurlestError):
    """Element mapping with non-positive Jacobian determinant."""


# linear algebra / solving
class ProjectionSolveFailure(CurlestError):
    """Gradient-projection system could not be solved."""


class NoConvergence(CurlestError):
    """Iterative solver hit its iteration cap before reaching tolerance."""


# equilibration
class LocalSolveSingular(CurlestError):
    """Per-element saddle system is rank deficient beyond the known redundancy."""


class DataIncompatible(CurlestError):
    """Element residual current violates the divergence compatibility in strict mode."""


class FaceSolveSingular(CurlestError):
    """Per-face multiplier system is singular."""


class FaceIncompatible(CurlestError):
    """Face residual current has nonzero in-plane divergence in strict mode."""


class InconsistentPatch(CurlestError):
    """Nodal least-squares system has residual above tolerance."""


class OrphanNode(CurlestError):
    """Node registry mismatch; indicates an internal bug."""


class EquilibriumViolated(CurlestError):
    """Corrected field fails the equilibrium checks."""
