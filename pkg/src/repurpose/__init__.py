"""Detection pipeline for misleading social-media account repurposing.

Reconstructs profile-snapshot timelines from archived tweet streams,
extracts screen-name-change events, computes similarity/metadata/style
features over each event, and classifies events with a fixed baseline rule
or a trained random forest.  A human-in-the-loop annotation service builds
ground truth and drives active-learning retraining.
"""

from .models import ChangeEvent, ProfileSnapshot, TweetObservation, ValidationError

__version__ = "0.1.0"

__all__ = [
    "ChangeEvent",
    "ProfileSnapshot",
    "TweetObservation",
    "ValidationError",
    "__version__",
]
