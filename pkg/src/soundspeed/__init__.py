"""Single-sided longitudinal sound-speed inversion from raw ultrasound channel data.

Pipeline: random tissue phantoms -> 2D time-domain acoustic simulation of
plane-wave transmits -> raw per-element channel data -> preprocessing ->
fully convolutional encoder-decoder regression of the 2D sound-speed map ->
evaluation with RMSE / absolute-error / windowed-minimum metrics.
"""

__version__ = "0.1.0"
