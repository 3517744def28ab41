"""defotrack: topology-consistent 3D keypoint tracking for deformable objects."""

__version__ = "0.1.0"
