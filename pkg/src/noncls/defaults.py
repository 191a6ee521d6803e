"""Bundled default configuration.

Source and detector values fitted to the reference iCCD twin-beam
measurement this package ships with, plus the default classifier layouts.
The reported mean dark counts are per frame per region of interest; the
per-pixel probability used by the detector model is that value divided by
the pixel count.
"""

from .ann import ClassScheme
from .photostats import DetectorParams, TwinBeamParams

DEFAULT_TWIN_BEAM = TwinBeamParams(m_p=270.0, m_s=0.01, m_i=0.026,
                                   b_p=0.032, b_s=7.6, b_i=5.3)

SIGNAL_DARK_PER_ROI = 0.206
IDLER_DARK_PER_ROI = 0.214

DEFAULT_SIGNAL_DETECTOR = DetectorParams(eta=0.228,
                                         d=SIGNAL_DARK_PER_ROI / 6528,
                                         n_pix=6528)
DEFAULT_IDLER_DETECTOR = DetectorParams(eta=0.223,
                                        d=IDLER_DARK_PER_ROI / 6784,
                                        n_pix=6784)

# post-selection slices the bundled configuration covers
DEFAULT_CS_RANGE = tuple(range(2, 10))

INTENSITY_SCHEME = ClassScheme(tau_min=0.0, tau_max=0.2, n_classes=8)
PROBABILITY_SCHEME = ClassScheme(tau_min=0.0, tau_max=0.5, n_classes=10)

INTENSITY_HIDDEN = (20, 20)
PROBABILITY_HIDDEN = (50, 50, 50)

INTENSITY_MAX_ORDER = 3
PROBABILITY_MAX_ORDER = 9

DEFAULT_FRAMES = 1_200_000
