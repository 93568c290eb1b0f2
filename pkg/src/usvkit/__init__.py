"""usvkit: detection, classification and synthetic augmentation of rat
ultrasonic vocalizations, with a procedural simulator for ground truth."""

__version__ = "0.1.0"
