"""CO2 plume workbench: field generation, two-phase rz simulation, RU-Net
surrogate training, and a prediction service."""

__version__ = "0.1.0"
